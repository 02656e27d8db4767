#include "strmac/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "strmac/prng.hpp"

namespace strmac {

void EnvConfig::validate() const {
    if (n_agents < 1) throw std::invalid_argument("EnvConfig: n_agents must be >= 1");
    if (feature_dim < 1) throw std::invalid_argument("EnvConfig: feature_dim must be >= 1");
    if (n_classes < 2) throw std::invalid_argument("EnvConfig: n_classes must be >= 2");
    if (!(evidence_threshold > 0.0) || evidence_threshold > 1.0)
        throw std::invalid_argument("EnvConfig: evidence_threshold must be in (0, 1]");
    if (distractor_fraction < 0.0 || distractor_fraction > 1.0)
        throw std::invalid_argument("EnvConfig: distractor_fraction must be in [0, 1]");
    if (min_token_cost < 1 || max_token_cost < min_token_cost)
        throw std::invalid_argument("EnvConfig: need 1 <= min_token_cost <= max_token_cost");
}

nlohmann::json env_config_to_json(const EnvConfig& cfg) {
    return {{"n_agents", cfg.n_agents},
            {"feature_dim", cfg.feature_dim},
            {"n_classes", cfg.n_classes},
            {"evidence_threshold", cfg.evidence_threshold},
            {"distractor_fraction", cfg.distractor_fraction},
            {"min_token_cost", cfg.min_token_cost},
            {"max_token_cost", cfg.max_token_cost},
            {"seed", cfg.seed}};
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
    EnvConfig cfg;
    cfg.n_agents = j.value("n_agents", cfg.n_agents);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    cfg.evidence_threshold = j.value("evidence_threshold", cfg.evidence_threshold);
    cfg.distractor_fraction = j.value("distractor_fraction", cfg.distractor_fraction);
    cfg.min_token_cost = j.value("min_token_cost", cfg.min_token_cost);
    cfg.max_token_cost = j.value("max_token_cost", cfg.max_token_cost);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

const AgentProfile& SimContext::profile(AgentId id) const {
    if (id >= 0 && static_cast<std::size_t>(id) < profiles.size() &&
        profiles[static_cast<std::size_t>(id)].agent_id == id)
        return profiles[static_cast<std::size_t>(id)];
    for (const AgentProfile& p : profiles)
        if (p.agent_id == id) return p;
    throw std::invalid_argument("SimContext: unknown agent_id " + std::to_string(id));
}

namespace {

std::vector<double> draw_unit_vector(SplitMix64& rng, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (double& x : v) x = rng.next_gaussian();
    normalize(v);
    return v;
}

// Class prototypes: C fixed unit vectors from the dataset seed. The task
// label is the prototype nearest to the query, so labels are a learnable
// function of query geometry rather than independent noise.
std::vector<std::vector<double>> class_prototypes(const EnvConfig& cfg) {
    std::vector<std::vector<double>> protos;
    protos.reserve(static_cast<std::size_t>(cfg.n_classes));
    for (int c = 0; c < cfg.n_classes; ++c) {
        SplitMix64 rng(substream(cfg.seed, "class_proto", c));
        protos.push_back(draw_unit_vector(rng, cfg.feature_dim));
    }
    return protos;
}

std::vector<AgentProfile> draw_population(const EnvConfig& cfg) {
    std::vector<AgentProfile> agents(static_cast<std::size_t>(cfg.n_agents));
    for (int i = 0; i < cfg.n_agents; ++i) {
        AgentProfile& a = agents[static_cast<std::size_t>(i)];
        a.agent_id = i;
        SplitMix64 rng(substream(cfg.seed, "agent", i));
        a.expertise = draw_unit_vector(rng, cfg.feature_dim);
        a.base_token_cost = rng.next_int(cfg.min_token_cost, cfg.max_token_cost);
        a.per_history_token_cost = rng.next_int(0, (cfg.min_token_cost + cfg.max_token_cost) / 10);
    }
    // Distractor flags: round(fraction * N) agents picked by a seeded shuffle.
    const int n_distr = static_cast<int>(
        std::llround(cfg.distractor_fraction * static_cast<double>(cfg.n_agents)));
    std::vector<int> order(static_cast<std::size_t>(cfg.n_agents));
    for (int i = 0; i < cfg.n_agents; ++i) order[static_cast<std::size_t>(i)] = i;
    SplitMix64 rng(substream(cfg.seed, "distractor_flags"));
    for (int i = cfg.n_agents - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng.next_int(0, i));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
    for (int i = 0; i < n_distr; ++i)
        agents[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].distractor = true;
    return agents;
}

int nearest_prototype(std::span<const double> q, const std::vector<std::vector<double>>& protos) {
    int best = 0;
    double best_dot = -2.0;
    for (int c = 0; c < static_cast<int>(protos.size()); ++c) {
        const double d = dot(q, protos[static_cast<std::size_t>(c)]);
        if (d > best_dot) {
            best_dot = d;
            best = c;
        }
    }
    return best;
}

} // namespace

std::vector<std::pair<TaskInstance, std::vector<AgentProfile>>>
generate_tasks(const EnvConfig& cfg, int n_tasks, int task_offset) {
    cfg.validate();
    if (n_tasks < 1) throw std::invalid_argument("generate_tasks: n_tasks must be >= 1");
    if (task_offset < 0) throw std::invalid_argument("generate_tasks: task_offset must be >= 0");

    const std::vector<AgentProfile> population = draw_population(cfg);
    const std::vector<std::vector<double>> protos = class_prototypes(cfg);
    std::vector<AgentId> ids(static_cast<std::size_t>(cfg.n_agents));
    for (int i = 0; i < cfg.n_agents; ++i) ids[static_cast<std::size_t>(i)] = i;

    std::vector<std::pair<TaskInstance, std::vector<AgentProfile>>> out;
    out.reserve(static_cast<std::size_t>(n_tasks));
    for (int i = 0; i < n_tasks; ++i) {
        const int t = task_offset + i;
        TaskInstance task;
        task.task_id = static_cast<std::uint64_t>(t);
        SplitMix64 rng(substream(cfg.seed, "task_query", t));
        task.query_features = draw_unit_vector(rng, cfg.feature_dim);
        task.label = nearest_prototype(task.query_features, protos);
        task.agent_ids = ids;
        out.emplace_back(std::move(task), population);
    }
    return out;
}

Dataset make_dataset(const EnvConfig& cfg, int n_tasks, int task_offset) {
    auto pairs = generate_tasks(cfg, n_tasks, task_offset);
    Dataset ds;
    ds.n_classes = cfg.n_classes;
    ds.evidence_threshold = cfg.evidence_threshold;
    ds.env_seed = cfg.seed;
    ds.profiles = pairs.front().second;
    ds.tasks.reserve(pairs.size());
    for (auto& [task, profiles] : pairs) ds.tasks.push_back(std::move(task));
    return ds;
}

double evidence_sum(const SimContext& ctx, const TaskInstance& task,
                    std::span<const StepRecord> history, AgentId current) {
    double sum = 0.0;
    auto contribution = [&](AgentId id) {
        const AgentProfile& p = ctx.profile(id);
        const double rel = std::max(0.0, dot(p.expertise, task.query_features));
        sum += p.distractor ? -rel : rel;
    };
    for (const StepRecord& s : history) contribution(s.agent_id);
    if (current >= 0) contribution(current);
    return sum;
}

SimOutcome run_agent(const SimContext& ctx, const AgentProfile& agent, const SystemState& state) {
    for (const StepRecord& s : state.history)
        if (s.agent_id == agent.agent_id)
            throw std::invalid_argument("run_agent: agent already executed in this state");
    if (ctx.call_counter) ++*ctx.call_counter;

    const TaskInstance& task = state.task;
    SimOutcome out;
    out.tokens = agent.base_token_cost +
                 agent.per_history_token_cost * static_cast<std::int64_t>(state.history.size());

    // Threshold rule: enough accumulated evidence yields the label; otherwise
    // a wrong class derived by hashing the executed sequence, so the answer
    // is stable under any evaluation order of the search tree.
    const double sum = evidence_sum(ctx, task, state.history, agent.agent_id);
    if (sum >= ctx.evidence_threshold || ctx.n_classes < 2) {
        out.answer = task.label;
        return out;
    }
    std::uint64_t h = substream(ctx.seed, "wrong_answer", task.task_id);
    for (const StepRecord& s : state.history)
        h = hash_combine(h, static_cast<std::uint64_t>(s.agent_id));
    h = hash_combine(h, static_cast<std::uint64_t>(agent.agent_id));
    const int wrong = static_cast<int>(h % static_cast<std::uint64_t>(ctx.n_classes - 1));
    out.answer = wrong >= task.label ? wrong + 1 : wrong;
    return out;
}

ExecutionPath rollout(const SimContext& ctx, const TaskInstance& task,
                      std::span<const AgentId> sequence) {
    if (sequence.empty()) throw std::invalid_argument("rollout: empty sequence");
    SystemState state{task, {}};
    state.history.reserve(sequence.size());
    for (AgentId id : sequence) {
        const AgentProfile& agent = ctx.profile(id);
        const SimOutcome out = run_agent(ctx, agent, state);
        state.history.push_back({id, out.answer, out.tokens});
    }
    return make_path(task.task_id, std::move(state.history), task.label);
}

nlohmann::json task_line_to_json(const TaskInstance& task, std::span<const AgentProfile> profiles,
                                 int n_classes, double evidence_threshold, std::uint64_t env_seed) {
    nlohmann::json agents = nlohmann::json::array();
    for (const AgentProfile& p : profiles) {
        agents.push_back({{"agent_id", p.agent_id},
                          {"expertise", p.expertise},
                          {"base_token_cost", p.base_token_cost},
                          {"per_history_token_cost", p.per_history_token_cost},
                          {"distractor", p.distractor}});
    }
    return {{"task_id", task.task_id},
            {"query_features", task.query_features},
            {"label", task.label},
            {"agent_ids", task.agent_ids},
            {"agents", std::move(agents)},
            {"n_classes", n_classes},
            {"evidence_threshold", evidence_threshold},
            {"env_seed", env_seed}};
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    for (const TaskInstance& task : ds.tasks) {
        out << task_line_to_json(task, ds.profiles, ds.n_classes, ds.evidence_threshold,
                                 ds.env_seed)
                   .dump()
            << '\n';
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

namespace {

AgentProfile profile_from_json(const nlohmann::json& j) {
    AgentProfile p;
    p.agent_id = j.at("agent_id").get<AgentId>();
    p.expertise = j.at("expertise").get<std::vector<double>>();
    p.base_token_cost = j.at("base_token_cost").get<std::int64_t>();
    p.per_history_token_cost = j.at("per_history_token_cost").get<std::int64_t>();
    p.distractor = j.at("distractor").get<bool>();
    return p;
}

} // namespace

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("load_dataset: cannot open " + path);
    Dataset ds;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        TaskInstance task;
        task.task_id = j.at("task_id").get<std::uint64_t>();
        task.query_features = j.at("query_features").get<std::vector<double>>();
        task.label = j.at("label").get<int>();
        task.agent_ids = j.at("agent_ids").get<std::vector<AgentId>>();
        std::vector<AgentProfile> agents;
        for (const auto& a : j.at("agents")) agents.push_back(profile_from_json(a));
        if (first) {
            ds.profiles = std::move(agents);
            ds.n_classes = j.at("n_classes").get<int>();
            ds.evidence_threshold = j.at("evidence_threshold").get<double>();
            ds.env_seed = j.at("env_seed").get<std::uint64_t>();
            for (std::size_t i = 0; i < ds.profiles.size(); ++i)
                if (ds.profiles[i].agent_id != static_cast<AgentId>(i))
                    throw std::invalid_argument(
                        "load_dataset: agent ids must be contiguous from 0");
            first = false;
        } else {
            // Routing against one fixed embedding matrix requires every task
            // to share the same agent population.
            if (agents.size() != ds.profiles.size())
                throw std::invalid_argument("load_dataset: tasks disagree on agent population");
            for (std::size_t i = 0; i < agents.size(); ++i)
                if (agents[i].agent_id != ds.profiles[i].agent_id ||
                    agents[i].expertise != ds.profiles[i].expertise ||
                    agents[i].distractor != ds.profiles[i].distractor)
                    throw std::invalid_argument("load_dataset: tasks disagree on agent population");
        }
        if (task.label < 0 || task.label >= ds.n_classes)
            throw std::invalid_argument("load_dataset: label out of range");
        ds.tasks.push_back(std::move(task));
    }
    if (ds.tasks.empty()) throw std::invalid_argument("load_dataset: no tasks in " + path);
    return ds;
}

} // namespace strmac
