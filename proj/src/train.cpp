#include "strmac/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "strmac/parallel.hpp"
#include "strmac/prng.hpp"

namespace strmac {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: bad learning_rate");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: bad weight_decay");
    if (!(w_alt > 0.0)) throw std::invalid_argument("TrainConfig: w_alt must be positive");
    if (optimizer != "sgd" && optimizer != "adam")
        throw std::invalid_argument("TrainConfig: optimizer must be sgd or adam");
    if (threads < 0) throw std::invalid_argument("TrainConfig: threads must be >= 0");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"weight_decay", cfg.weight_decay},
            {"seed", cfg.seed},
            {"w_alt", cfg.w_alt},
            {"optimizer", cfg.optimizer},
            {"threads", cfg.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("w_alt")) cfg.w_alt = j.at("w_alt").get<double>();
    if (j.contains("optimizer")) cfg.optimizer = j.at("optimizer").get<std::string>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    cfg.validate();
    return cfg;
}

GradBuffer GradBuffer::zeros(const RouterModel& model) {
    GradBuffer g;
    g.w1.assign(model.encoder.w1.size(), 0.0);
    g.b1.assign(model.encoder.b1.size(), 0.0);
    g.w2.assign(model.encoder.w2.size(), 0.0);
    g.b2.assign(model.encoder.b2.size(), 0.0);
    g.stop.assign(model.stop_embedding.size(), 0.0);
    return g;
}

namespace {

struct Forward {
    EncodeTrace trace;
    std::vector<double> stop_dir; // normalized stop embedding
    double stop_norm = 0.0;
    std::vector<double> scores;   // n_agents (+1 with STOP)
    int target_index = 0;
};

void check_example(const RouterModel& model, const TaskInstance& task,
                   const TrainingExample& example, bool include_stop) {
    if (!(example.weight > 0.0))
        throw std::invalid_argument("TrainingExample: weight must be positive");
    if (example.target == kStopTarget) {
        if (!include_stop)
            throw std::invalid_argument("TrainingExample: STOP target with STOP excluded");
        if (example.history.empty())
            throw std::invalid_argument("TrainingExample: STOP target on empty history");
    } else {
        if (example.target < 0 || example.target >= model.n_agents)
            throw std::invalid_argument("TrainingExample: target agent out of range");
        for (const StepRecord& rec : example.history)
            if (rec.agent_id == example.target)
                throw std::invalid_argument("TrainingExample: target already in history");
    }
    if (task.task_id != example.task_id)
        throw std::invalid_argument("TrainingExample: task mismatch");
}

Forward forward_scores(const RouterModel& model, const TaskInstance& task,
                       const TrainingExample& example, bool include_stop) {
    check_example(model, task, example, include_stop);
    Forward fw;
    const SystemState state{task, example.history};
    const std::vector<double> x = featurize_state(state, model.n_agents, model.n_classes);
    fw.trace = encode_with_trace(model.encoder, x);
    const int n_actions = model.n_agents + (include_stop ? 1 : 0);
    fw.scores.resize(n_actions);
    for (int i = 0; i < model.n_agents; ++i)
        fw.scores[i] = dot(fw.trace.z, model.agent_embedding(i));
    if (include_stop) {
        fw.stop_dir = model.stop_embedding;
        fw.stop_norm = norm(fw.stop_dir);
        normalize(fw.stop_dir);
        fw.scores[model.n_agents] = dot(fw.trace.z, fw.stop_dir);
    }
    fw.target_index = example.target == kStopTarget ? model.n_agents : example.target;
    return fw;
}

// loss = weight * (log sum exp(s_j) - s_target), max-subtracted.
double loss_from_scores(std::span<const double> scores, int target, double weight) {
    const double m = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - m);
    return weight * (std::log(z) - (scores[target] - m));
}

const TaskInstance& find_task(std::span<const TaskInstance> tasks, std::uint64_t task_id) {
    for (const TaskInstance& t : tasks)
        if (t.task_id == task_id) return t;
    throw std::invalid_argument("no task with id " + std::to_string(task_id));
}

void accumulate(GradBuffer& acc, const GradBuffer& g) {
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(acc.w1, g.w1);
    add(acc.b1, g.b1);
    add(acc.w2, g.w2);
    add(acc.b2, g.b2);
    add(acc.stop, g.stop);
    acc.loss += g.loss;
}

void scale(GradBuffer& g, double s) {
    for (std::vector<double>* v : {&g.w1, &g.b1, &g.w2, &g.b2, &g.stop})
        for (double& x : *v) x *= s;
    g.loss *= s;
}

} // namespace

double contrastive_loss(const RouterModel& model, const TaskInstance& task,
                        const TrainingExample& example, bool include_stop) {
    const Forward fw = forward_scores(model, task, example, include_stop);
    return loss_from_scores(fw.scores, fw.target_index, example.weight);
}

GradBuffer loss_gradient(const RouterModel& model, const TaskInstance& task,
                         const TrainingExample& example, bool include_stop) {
    const Forward fw = forward_scores(model, task, example, include_stop);
    const int n_actions = static_cast<int>(fw.scores.size());
    const EncodeTrace& tr = fw.trace;
    const EncoderParams& enc = model.encoder;

    GradBuffer g = GradBuffer::zeros(model);
    g.loss = loss_from_scores(fw.scores, fw.target_index, example.weight);

    // dL/ds_j = weight * (softmax_j - [j == target])
    std::vector<double> gs(n_actions);
    {
        const double m = *std::max_element(fw.scores.begin(), fw.scores.end());
        double z = 0.0;
        for (int j = 0; j < n_actions; ++j) {
            gs[j] = std::exp(fw.scores[j] - m);
            z += gs[j];
        }
        for (int j = 0; j < n_actions; ++j) {
            gs[j] /= z;
            if (j == fw.target_index) gs[j] -= 1.0;
            gs[j] *= example.weight;
        }
    }

    // dL/dz: scores are dot products against fixed directions.
    std::vector<double> gz(enc.embed_dim, 0.0);
    for (int j = 0; j < model.n_agents; ++j) {
        const std::span<const double> e = model.agent_embedding(j);
        for (int k = 0; k < enc.embed_dim; ++k) gz[k] += gs[j] * e[k];
    }
    if (include_stop)
        for (int k = 0; k < enc.embed_dim; ++k) gz[k] += gs[model.n_agents] * fw.stop_dir[k];

    // Through z = u/||u||: du = (gz - (z . gz) z) / ||u||.
    std::vector<double> gu(enc.embed_dim);
    const double zdot = dot(tr.z, gz);
    for (int k = 0; k < enc.embed_dim; ++k)
        gu[k] = (gz[k] - zdot * tr.z[k]) / tr.pre_norm_norm;

    // u = W2 h + b2.
    std::vector<double> gh(enc.hidden_dim, 0.0);
    for (int i = 0; i < enc.embed_dim; ++i) {
        g.b2[i] = gu[i];
        const std::size_t row = static_cast<std::size_t>(i) * enc.hidden_dim;
        for (int j = 0; j < enc.hidden_dim; ++j) {
            g.w2[row + j] = gu[i] * tr.hidden[j];
            gh[j] += gu[i] * enc.w2[row + j];
        }
    }

    // h = tanh(W1 x + b1).
    for (int j = 0; j < enc.hidden_dim; ++j) {
        const double ga = gh[j] * (1.0 - tr.hidden[j] * tr.hidden[j]);
        g.b1[j] = ga;
        const std::size_t row = static_cast<std::size_t>(j) * enc.input_dim;
        for (int k = 0; k < enc.input_dim; ++k) g.w1[row + k] = ga * tr.input[k];
    }

    // STOP score differentiates through its own normalization:
    // d(z . v/||v||)/dv = (z - (v_hat . z) v_hat) / ||v||.
    if (include_stop) {
        const double sdot = dot(fw.stop_dir, tr.z);
        for (int k = 0; k < enc.embed_dim; ++k)
            g.stop[k] = gs[model.n_agents] * (tr.z[k] - sdot * fw.stop_dir[k]) / fw.stop_norm;
    }
    return g;
}

GradBuffer finite_difference_gradient(const RouterModel& model, const TaskInstance& task,
                                      const TrainingExample& example, double step,
                                      bool include_stop) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be > 0");
    GradBuffer g = GradBuffer::zeros(model);
    g.loss = contrastive_loss(model, task, example, include_stop);
    RouterModel probe = model;
    auto central = [&](std::vector<double>& params, std::vector<double>& out) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = params[i];
            params[i] = saved + step;
            const double lp = contrastive_loss(probe, task, example, include_stop);
            params[i] = saved - step;
            const double lm = contrastive_loss(probe, task, example, include_stop);
            params[i] = saved;
            out[i] = (lp - lm) / (2.0 * step);
        }
    };
    central(probe.encoder.w1, g.w1);
    central(probe.encoder.b1, g.b1);
    central(probe.encoder.w2, g.w2);
    central(probe.encoder.b2, g.b2);
    central(probe.stop_embedding, g.stop);
    return g;
}

GradBuffer batch_gradient_serial(const RouterModel& model, std::span<const TaskInstance> tasks,
                                 std::span<const TrainingExample> examples) {
    if (examples.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    GradBuffer acc = GradBuffer::zeros(model);
    for (const TrainingExample& ex : examples)
        accumulate(acc, loss_gradient(model, find_task(tasks, ex.task_id), ex));
    scale(acc, 1.0 / static_cast<double>(examples.size()));
    return acc;
}

GradBuffer batch_gradient(const RouterModel& model, std::span<const TaskInstance> tasks,
                          std::span<const TrainingExample> examples, int threads) {
    if (examples.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    const int n = static_cast<int>(examples.size());
    std::vector<GradBuffer> slots(n);
    for_each_index(n, threads, [&](int i) {
        slots[i] = loss_gradient(model, find_task(tasks, examples[i].task_id), examples[i]);
    });
    GradBuffer acc = GradBuffer::zeros(model);
    for (const GradBuffer& g : slots) accumulate(acc, g);
    scale(acc, 1.0 / static_cast<double>(n));
    return acc;
}

namespace {

// Adam moments for one parameter block.
struct AdamState {
    std::vector<double> m, v;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& st,
               double lr, double decay, long t) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] + decay * params[i];
        st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * g;
        st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * g * g;
        params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + kEps);
    }
}

void sgd_step(std::vector<double>& params, const std::vector<double>& grad, double lr,
              double decay) {
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= lr * (grad[i] + decay * params[i]);
}

} // namespace

TrainResult train(const RouterModel& model, std::span<const TaskInstance> tasks,
                  std::span<const TrainingExample> examples, const TrainConfig& cfg) {
    cfg.validate();
    if (examples.empty()) throw std::invalid_argument("train: no examples");
    TrainResult result{model, {}};
    RouterModel& m = result.model;

    const int n = static_cast<int>(examples.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<TrainingExample> shuffled(examples.begin(), examples.end());

    AdamState aw1(m.encoder.w1.size()), ab1(m.encoder.b1.size());
    AdamState aw2(m.encoder.w2.size()), ab2(m.encoder.b2.size());
    AdamState astop(m.stop_embedding.size());
    const bool adam = cfg.optimizer == "adam";
    long step_count = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        SplitMix64 rng(substream(cfg.seed, "shuffle", epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[rng.next_int(0, i)]);
        for (int i = 0; i < n; ++i) shuffled[i] = examples[order[i]];

        double loss_sum = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - start);
            const GradBuffer g = batch_gradient(
                m, tasks, std::span<const TrainingExample>(shuffled).subspan(start, count),
                cfg.threads);
            loss_sum += g.loss * count;
            ++step_count;
            if (adam) {
                adam_step(m.encoder.w1, g.w1, aw1, cfg.learning_rate, cfg.weight_decay, step_count);
                adam_step(m.encoder.b1, g.b1, ab1, cfg.learning_rate, 0.0, step_count);
                adam_step(m.encoder.w2, g.w2, aw2, cfg.learning_rate, cfg.weight_decay, step_count);
                adam_step(m.encoder.b2, g.b2, ab2, cfg.learning_rate, 0.0, step_count);
                adam_step(m.stop_embedding, g.stop, astop, cfg.learning_rate, 0.0, step_count);
            } else {
                sgd_step(m.encoder.w1, g.w1, cfg.learning_rate, cfg.weight_decay);
                sgd_step(m.encoder.b1, g.b1, cfg.learning_rate, 0.0);
                sgd_step(m.encoder.w2, g.w2, cfg.learning_rate, cfg.weight_decay);
                sgd_step(m.encoder.b2, g.b2, cfg.learning_rate, 0.0);
                sgd_step(m.stop_embedding, g.stop, cfg.learning_rate, 0.0);
            }
        }
        result.epoch_mean_loss.push_back(loss_sum / n);
    }
    return result;
}

double GradCheckReport::max_error() const {
    return std::max({w1, b1, w2, b2, stop});
}

GradCheckReport compare_gradients(const GradBuffer& analytic, const GradBuffer& fd,
                                  double tolerance) {
    auto rel = [](const std::vector<double>& a, const std::vector<double>& b) {
        double diff = 0.0, ref = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            diff += (a[i] - b[i]) * (a[i] - b[i]);
            ref += b[i] * b[i];
        }
        return std::sqrt(diff) / (std::sqrt(ref) + 1e-12);
    };
    GradCheckReport r;
    r.w1 = rel(analytic.w1, fd.w1);
    r.b1 = rel(analytic.b1, fd.b1);
    r.w2 = rel(analytic.w2, fd.w2);
    r.b2 = rel(analytic.b2, fd.b2);
    r.stop = rel(analytic.stop, fd.stop);
    r.tolerance = tolerance;
    r.pass = r.max_error() < tolerance;
    return r;
}

GradCheckReport gradient_check(const RouterModel& model, std::span<const TaskInstance> tasks,
                               std::span<const TrainingExample> examples, double step,
                               double tolerance) {
    if (examples.empty()) throw std::invalid_argument("gradient_check: no examples");
    GradCheckReport worst;
    worst.tolerance = tolerance;
    worst.pass = true;
    for (const TrainingExample& ex : examples) {
        const TaskInstance& task = find_task(tasks, ex.task_id);
        const GradBuffer ga = loss_gradient(model, task, ex);
        const GradBuffer gfd = finite_difference_gradient(model, task, ex, step);
        const GradCheckReport r = compare_gradients(ga, gfd, tolerance);
        worst.w1 = std::max(worst.w1, r.w1);
        worst.b1 = std::max(worst.b1, r.b1);
        worst.w2 = std::max(worst.w2, r.w2);
        worst.b2 = std::max(worst.b2, r.b2);
        worst.stop = std::max(worst.stop, r.stop);
    }
    worst.pass = worst.max_error() < tolerance;
    return worst;
}

nlohmann::json gradcheck_report_to_json(const GradCheckReport& r) {
    return {{"w1", r.w1},   {"b1", r.b1},
            {"w2", r.w2},   {"b2", r.b2},
            {"stop", r.stop}, {"tolerance", r.tolerance},
            {"pass", r.pass}};
}

nlohmann::json example_to_json(const TrainingExample& ex) {
    nlohmann::json steps = nlohmann::json::array();
    for (const StepRecord& rec : ex.history)
        steps.push_back(
            {{"agent_id", rec.agent_id}, {"answer", rec.answer}, {"tokens", rec.tokens}});
    nlohmann::json j{{"task_id", ex.task_id}, {"history", std::move(steps)},
                     {"weight", ex.weight}};
    if (ex.target == kStopTarget)
        j["target"] = "stop";
    else
        j["target"] = ex.target;
    return j;
}

TrainingExample example_from_json(const nlohmann::json& j) {
    TrainingExample ex;
    ex.task_id = j.at("task_id").get<std::uint64_t>();
    for (const auto& s : j.at("history"))
        ex.history.push_back({s.at("agent_id").get<AgentId>(), s.at("answer").get<int>(),
                              s.at("tokens").get<std::int64_t>()});
    const nlohmann::json& t = j.at("target");
    ex.target = t.is_string() ? kStopTarget : t.get<int>();
    if (t.is_string() && t.get<std::string>() != "stop")
        throw std::invalid_argument("TrainingExample: unknown target string");
    ex.weight = j.at("weight").get<double>();
    return ex;
}

void save_examples(std::span<const TrainingExample> examples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_examples: cannot open " + path);
    for (const TrainingExample& ex : examples) out << example_to_json(ex).dump() << '\n';
    if (!out) throw std::runtime_error("save_examples: write failed for " + path);
}

std::vector<TrainingExample> load_examples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("load_examples: cannot open " + path);
    std::vector<TrainingExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(example_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void save_loss_csv(std::span<const double> epoch_mean_loss, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_loss_csv: cannot open " + path);
    out << "epoch,mean_loss\n";
    for (std::size_t i = 0; i < epoch_mean_loss.size(); ++i)
        out << i << ',' << format_double(epoch_mean_loss[i]) << '\n';
    if (!out) throw std::runtime_error("save_loss_csv: write failed for " + path);
}

} // namespace strmac
