#include "strmac/route.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "strmac/prng.hpp"

namespace strmac {

void RouterModel::validate() const {
    encoder.validate();
    if (n_agents < 1 || feature_dim < 1 || n_classes < 2 || embed_dim < 1)
        throw std::invalid_argument("RouterModel: bad dimensions");
    if (encoder.input_dim != state_feature_dim(feature_dim, n_agents, n_classes))
        throw std::invalid_argument("RouterModel: encoder input_dim does not match featurization");
    if (encoder.embed_dim != embed_dim)
        throw std::invalid_argument("RouterModel: encoder embed_dim mismatch");
    if (agent_embeddings.size() != static_cast<std::size_t>(n_agents) * embed_dim)
        throw std::invalid_argument("RouterModel: agent embedding matrix has wrong shape");
    if (stop_embedding.size() != static_cast<std::size_t>(embed_dim))
        throw std::invalid_argument("RouterModel: stop embedding has wrong shape");
    if (!(temperature > 0.0))
        throw std::invalid_argument("RouterModel: temperature must be positive");
    for (int i = 0; i < n_agents; ++i)
        if (std::abs(norm(agent_embedding(i)) - 1.0) > 1e-9)
            throw std::invalid_argument("RouterModel: agent embedding row not unit norm");
}

RouterModel init_router(const Dataset& ds, int embed_dim, int hidden_dim, std::uint64_t seed) {
    if (ds.profiles.empty()) throw std::invalid_argument("init_router: empty agent population");
    RouterModel m;
    m.n_agents = static_cast<int>(ds.profiles.size());
    m.feature_dim = static_cast<int>(ds.profiles.front().expertise.size());
    m.n_classes = ds.n_classes;
    m.embed_dim = embed_dim;
    m.encoder = init_encoder(state_feature_dim(m.feature_dim, m.n_agents, m.n_classes),
                             hidden_dim, embed_dim, substream(seed, "encoder"));
    m.agent_embeddings.reserve(static_cast<std::size_t>(m.n_agents) * embed_dim);
    for (const AgentProfile& p : ds.profiles) {
        std::vector<double> e = embed_agent(p, embed_dim, seed);
        m.agent_embeddings.insert(m.agent_embeddings.end(), e.begin(), e.end());
    }
    SplitMix64 rng(substream(seed, "stop_embed"));
    m.stop_embedding.resize(embed_dim);
    for (double& x : m.stop_embedding) x = rng.next_gaussian();
    normalize(m.stop_embedding);
    m.validate();
    return m;
}

RoutingDecision finalize_decision(std::vector<double> scores, std::vector<bool> masked,
                                  double temperature) {
    if (scores.size() != masked.size() || scores.empty())
        throw std::invalid_argument("finalize_decision: shape mismatch");
    RoutingDecision d;
    d.scores = std::move(scores);
    d.masked = std::move(masked);
    const int n = static_cast<int>(d.scores.size());
    double max_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        if (!d.masked[i]) max_score = std::max(max_score, d.scores[i]);
    if (!std::isfinite(max_score)) throw NoActionError("finalize_decision: all actions masked");
    d.probabilities.assign(n, 0.0);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
        if (d.masked[i]) continue;
        d.probabilities[i] = std::exp((d.scores[i] - max_score) / temperature);
        z += d.probabilities[i];
    }
    d.chosen = -1;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
        if (d.masked[i]) continue;
        d.probabilities[i] /= z;
        if (d.probabilities[i] > best) {
            best = d.probabilities[i];
            d.chosen = i;
        }
    }
    return d;
}

RoutingDecision score_agents(const RouterModel& model, const SystemState& state) {
    const std::vector<double> x =
        featurize_state(state, model.n_agents, model.n_classes);
    const std::vector<double> z = encode(model.encoder, x);
    std::vector<double> scores(model.n_agents + 1);
    for (int i = 0; i < model.n_agents; ++i) scores[i] = dot(z, model.agent_embedding(i));
    std::vector<double> stop_dir = model.stop_embedding;
    normalize(stop_dir);
    scores[model.n_agents] = dot(z, stop_dir);
    std::vector<bool> masked(model.n_agents + 1, true);
    for (AgentId id : state.task.agent_ids) masked[id] = false;
    for (const StepRecord& rec : state.history) masked[rec.agent_id] = true;
    masked[model.n_agents] = state.history.empty();
    return finalize_decision(std::move(scores), std::move(masked), model.temperature);
}

InferenceResult run_inference(const RouterModel& model, const SimContext& ctx,
                              const TaskInstance& task, int max_steps) {
    if (max_steps < 1) throw std::invalid_argument("run_inference: max_steps must be >= 1");
    InferenceResult result;
    SystemState state{task, {}};
    for (;;) {
        if (static_cast<int>(state.history.size()) >= max_steps) break;
        RoutingDecision d = score_agents(model, state);
        const int chosen = d.chosen;
        result.decisions.push_back(std::move(d));
        if (chosen == model.n_agents) break;
        const AgentProfile& agent = ctx.profile(chosen);
        const SimOutcome out = run_agent(ctx, agent, state);
        state.history.push_back({agent.agent_id, out.answer, out.tokens});
    }
    result.path = make_path(task.task_id, std::move(state.history), task.label);
    return result;
}

nlohmann::json decision_to_json(const RoutingDecision& d, std::uint64_t task_id, int step) {
    nlohmann::json j{{"task_id", task_id},
                     {"step", step},
                     {"scores", d.scores},
                     {"probabilities", d.probabilities},
                     {"masked", d.masked}};
    if (d.chosen == static_cast<int>(d.scores.size()) - 1)
        j["chosen"] = "stop";
    else
        j["chosen"] = d.chosen;
    return j;
}

nlohmann::json router_to_json(const RouterModel& model) {
    return {{"encoder", encoder_to_json(model.encoder)},
            {"agent_embeddings", model.agent_embeddings},
            {"stop_embedding", model.stop_embedding},
            {"temperature", model.temperature},
            {"n_agents", model.n_agents},
            {"feature_dim", model.feature_dim},
            {"n_classes", model.n_classes},
            {"embed_dim", model.embed_dim}};
}

RouterModel router_from_json(const nlohmann::json& j) {
    RouterModel m;
    m.encoder = encoder_from_json(j.at("encoder"));
    m.agent_embeddings = j.at("agent_embeddings").get<std::vector<double>>();
    m.stop_embedding = j.at("stop_embedding").get<std::vector<double>>();
    m.temperature = j.at("temperature").get<double>();
    m.n_agents = j.at("n_agents").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.n_classes = j.at("n_classes").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();
    m.validate();
    return m;
}

void save_router(const RouterModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_router: cannot open " + path);
    out << router_to_json(model).dump(2) << '\n';
    if (!out) throw std::runtime_error("save_router: write failed for " + path);
}

RouterModel load_router(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("load_router: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return router_from_json(j);
}

} // namespace strmac
