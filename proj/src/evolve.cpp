#include "strmac/evolve.hpp"

#include <algorithm>
#include <cmath>

#include "strmac/parallel.hpp"

namespace strmac {

namespace {

// Shared DFS walker. Guided mode restricts each node's children to the
// router's top-k picks; pruning stops descent below correct nodes.
struct SearchDriver {
    const SimContext& ctx;
    const TaskInstance& task;
    bool prune_solved;
    const RouterModel* model; // nullptr outside guided mode
    int k;                    // 0 means no restriction

    HarvestResult result;
    SystemState state;

    SearchDriver(const SimContext& c, const TaskInstance& t, bool prune, const RouterModel* m,
                 int top_k)
        : ctx(c), task(t), prune_solved(prune), model(m), k(top_k), state{t, {}} {}

    std::vector<AgentId> children() const {
        std::vector<AgentId> unused;
        for (AgentId id : task.agent_ids) {
            bool used = false;
            for (const StepRecord& rec : state.history)
                if (rec.agent_id == id) used = true;
            if (!used) unused.push_back(id);
        }
        std::sort(unused.begin(), unused.end());
        if (model == nullptr || static_cast<int>(unused.size()) <= k) return unused;
        const RoutingDecision d = score_agents(*model, state);
        std::sort(unused.begin(), unused.end(), [&](AgentId a, AgentId b) {
            if (d.probabilities[a] != d.probabilities[b])
                return d.probabilities[a] > d.probabilities[b];
            return a < b;
        });
        unused.resize(k);
        std::sort(unused.begin(), unused.end());
        return unused;
    }

    void walk() {
        const std::vector<AgentId> kids = children();
        if (kids.empty()) return;
        ++result.nodes_expanded;
        for (AgentId id : kids) {
            const AgentProfile& agent = ctx.profile(id);
            const SimOutcome out = run_agent(ctx, agent, state);
            ++result.paths_evaluated;
            state.history.push_back({id, out.answer, out.tokens});
            const bool correct = out.answer == task.label;
            if (correct)
                result.valid_paths.push_back(
                    make_path(task.task_id, state.history, task.label));
            if (!correct || !prune_solved) walk();
            state.history.pop_back();
        }
    }
};

HarvestResult run_search(const SimContext& ctx, const TaskInstance& task,
                         const SearchLimits& limits, bool prune, const RouterModel* model,
                         int k) {
    const int n = static_cast<int>(task.agent_ids.size());
    if (n > limits.max_agents)
        throw std::invalid_argument("search: task has " + std::to_string(n) +
                                    " agents, above the cap of " +
                                    std::to_string(limits.max_agents));
    if (model != nullptr && (k < 1 || k > n))
        throw std::invalid_argument("router_guided_search: k must be in [1, n_agents]");
    SearchDriver driver(ctx, task, prune, model, model != nullptr ? k : 0);
    driver.result.task_id = task.task_id;
    driver.result.full_space = count_paths(n);
    driver.walk();
    std::sort(driver.result.valid_paths.begin(), driver.result.valid_paths.end(), path_precedes);
    if (!driver.result.valid_paths.empty()) driver.result.best_path = driver.result.valid_paths.front();
    return driver.result;
}

} // namespace

HarvestResult exhaustive_search(const SimContext& ctx, const TaskInstance& task,
                                const SearchLimits& limits) {
    return run_search(ctx, task, limits, false, nullptr, 0);
}

HarvestResult pruned_search(const SimContext& ctx, const TaskInstance& task,
                            const SearchLimits& limits) {
    return run_search(ctx, task, limits, true, nullptr, 0);
}

HarvestResult router_guided_search(const SimContext& ctx, const TaskInstance& task,
                                   const RouterModel& model, int k, const SearchLimits& limits) {
    return run_search(ctx, task, limits, true, &model, k);
}

nlohmann::json harvest_to_json(const HarvestResult& h) {
    nlohmann::json paths = nlohmann::json::array();
    for (const ExecutionPath& p : h.valid_paths) paths.push_back(path_to_json(p));
    nlohmann::json j{{"task_id", h.task_id},
                     {"valid_paths", std::move(paths)},
                     {"nodes_expanded", h.nodes_expanded},
                     {"paths_evaluated", h.paths_evaluated},
                     {"full_space", count_to_string(h.full_space)}};
    if (h.best_path) j["best_path"] = path_to_json(*h.best_path);
    return j;
}

std::vector<TrainingExample> extract_examples(const HarvestResult& harvest, double w_alt) {
    if (!(w_alt > 0.0)) throw std::invalid_argument("extract_examples: w_alt must be positive");
    std::vector<TrainingExample> out;
    if (!harvest.best_path) return out;
    const ExecutionPath& best = *harvest.best_path;

    // Canonically best extension of every state prefix seen in a valid path.
    std::map<std::vector<AgentId>, const ExecutionPath*> extensions;
    for (const ExecutionPath& p : harvest.valid_paths) {
        std::vector<AgentId> prefix;
        for (std::size_t len = 0; len <= p.steps.size(); ++len) {
            if (len > 0) prefix.push_back(p.steps[len - 1].agent_id);
            auto [it, inserted] = extensions.try_emplace(prefix, &p);
            if (!inserted && path_precedes(p, *it->second)) it->second = &p;
        }
    }

    for (const auto& [prefix, path] : extensions) {
        TrainingExample ex;
        ex.task_id = harvest.task_id;
        ex.history.assign(path->steps.begin(), path->steps.begin() + prefix.size());
        ex.target = path->steps.size() == prefix.size() ? kStopTarget
                                                        : path->steps[prefix.size()].agent_id;
        const bool on_best =
            prefix.size() <= best.steps.size() &&
            std::equal(prefix.begin(), prefix.end(), best.steps.begin(),
                       [](AgentId id, const StepRecord& rec) { return id == rec.agent_id; });
        ex.weight = on_best ? 1.0 : w_alt;
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

// Exceptions cannot cross the OpenMP region, so every per-task precondition
// that run_search would reject is checked up front.
void validate_harvest_args(std::span<const TaskInstance> tasks, SearchMode mode,
                           const RouterModel* model, int k, const SearchLimits& limits) {
    if (mode == SearchMode::guided && model == nullptr)
        throw std::invalid_argument("harvest_dataset: guided mode needs a model");
    for (const TaskInstance& task : tasks) {
        const int n = static_cast<int>(task.agent_ids.size());
        if (n > limits.max_agents)
            throw std::invalid_argument("harvest_dataset: task " +
                                        std::to_string(task.task_id) + " has " +
                                        std::to_string(n) + " agents, cap is " +
                                        std::to_string(limits.max_agents));
        if (mode == SearchMode::guided && (k < 1 || k > n))
            throw std::invalid_argument("harvest_dataset: k must be in [1, n_agents]");
    }
}

} // namespace

std::vector<HarvestResult> harvest_dataset_serial(const SimContext& ctx,
                                                  std::span<const TaskInstance> tasks,
                                                  SearchMode mode, const RouterModel* model,
                                                  int k, const SearchLimits& limits) {
    validate_harvest_args(tasks, mode, model, k, limits);
    std::vector<HarvestResult> out;
    out.reserve(tasks.size());
    for (const TaskInstance& task : tasks) {
        switch (mode) {
        case SearchMode::exhaustive: out.push_back(exhaustive_search(ctx, task, limits)); break;
        case SearchMode::pruned: out.push_back(pruned_search(ctx, task, limits)); break;
        case SearchMode::guided:
            out.push_back(router_guided_search(ctx, task, *model, k, limits));
            break;
        }
    }
    return out;
}

std::vector<HarvestResult> harvest_dataset(const SimContext& ctx,
                                           std::span<const TaskInstance> tasks, SearchMode mode,
                                           const RouterModel* model, int k, int threads,
                                           const SearchLimits& limits) {
    validate_harvest_args(tasks, mode, model, k, limits);
    std::vector<HarvestResult> out(tasks.size());
    for_each_index(static_cast<int>(tasks.size()), threads, [&](int i) {
        switch (mode) {
        case SearchMode::exhaustive: out[i] = exhaustive_search(ctx, tasks[i], limits); break;
        case SearchMode::pruned: out[i] = pruned_search(ctx, tasks[i], limits); break;
        case SearchMode::guided:
            out[i] = router_guided_search(ctx, tasks[i], *model, k, limits);
            break;
        }
    });
    return out;
}

void PipelineConfig::validate() const {
    if (!(bootstrap_fraction > 0.0) || bootstrap_fraction > 1.0)
        throw std::invalid_argument("PipelineConfig: bootstrap_fraction must be in (0, 1]");
    if (rounds < 1) throw std::invalid_argument("PipelineConfig: rounds must be >= 1");
    if (k < 1) throw std::invalid_argument("PipelineConfig: k must be >= 1");
    if (embed_dim < 1 || hidden_dim < 1)
        throw std::invalid_argument("PipelineConfig: model dimensions must be >= 1");
    if (threads < 0) throw std::invalid_argument("PipelineConfig: threads must be >= 0");
    if (limits.max_agents < 1) throw std::invalid_argument("PipelineConfig: bad search cap");
    train.validate();
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg) {
    return {{"bootstrap_fraction", cfg.bootstrap_fraction},
            {"rounds", cfg.rounds},
            {"k", cfg.k},
            {"train", train_config_to_json(cfg.train)},
            {"embed_dim", cfg.embed_dim},
            {"hidden_dim", cfg.hidden_dim},
            {"model_seed", cfg.model_seed},
            {"warm_start", cfg.warm_start},
            {"threads", cfg.threads},
            {"max_agents", cfg.limits.max_agents}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    if (j.contains("bootstrap_fraction"))
        cfg.bootstrap_fraction = j.at("bootstrap_fraction").get<double>();
    if (j.contains("rounds")) cfg.rounds = j.at("rounds").get<int>();
    if (j.contains("k")) cfg.k = j.at("k").get<int>();
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("embed_dim")) cfg.embed_dim = j.at("embed_dim").get<int>();
    if (j.contains("hidden_dim")) cfg.hidden_dim = j.at("hidden_dim").get<int>();
    if (j.contains("model_seed")) cfg.model_seed = j.at("model_seed").get<std::uint64_t>();
    if (j.contains("warm_start")) cfg.warm_start = j.at("warm_start").get<bool>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    if (j.contains("max_agents")) cfg.limits.max_agents = j.at("max_agents").get<int>();
    cfg.validate();
    return cfg;
}

nlohmann::json round_report_to_json(const RoundReport& r) {
    return {{"round", r.round},
            {"new_examples", r.new_examples},
            {"cumulative_examples", r.cumulative_examples},
            {"mean_paths_evaluated", r.mean_paths_evaluated},
            {"sampled_fraction", r.sampled_fraction},
            {"heldout_accuracy", r.heldout_accuracy},
            {"heldout_mean_tokens", r.heldout_mean_tokens}};
}

namespace {

struct HeldoutMetrics {
    double accuracy = 0.0;
    double mean_tokens = 0.0;
};

HeldoutMetrics heldout_eval(const RouterModel& model, const Dataset& ds, int threads) {
    const SimContext ctx = ds.sim_context();
    const int n = static_cast<int>(ds.tasks.size());
    std::vector<ExecutionPath> paths(n);
    for_each_index(n, threads, [&](int i) {
        paths[i] = run_inference(model, ctx, ds.tasks[i], model.n_agents).path;
    });
    HeldoutMetrics m;
    std::int64_t correct = 0, tokens = 0;
    for (int i = 0; i < n; ++i) {
        correct += paths[i].prediction == ds.tasks[i].label ? 1 : 0;
        tokens += paths[i].total_tokens;
    }
    m.accuracy = 100.0 * static_cast<double>(correct) / n;
    m.mean_tokens = static_cast<double>(tokens) / n;
    return m;
}

} // namespace

PipelineResult evolve_pipeline(const Dataset& train_ds, const Dataset& heldout_ds,
                               const PipelineConfig& cfg) {
    cfg.validate();
    const int total = static_cast<int>(train_ds.tasks.size());
    if (total == 0) throw std::invalid_argument("evolve_pipeline: empty task list");
    if (heldout_ds.tasks.empty()) throw std::invalid_argument("evolve_pipeline: empty heldout set");

    const int bootstrap = static_cast<int>(std::clamp<long long>(
        std::llround(cfg.bootstrap_fraction * total), 1, total));
    const SimContext ctx = train_ds.sim_context();
    std::span<const TaskInstance> all_tasks(train_ds.tasks);

    PipelineResult result;
    std::vector<TrainingExample> examples;
    std::int64_t paths_total = 0;
    std::int64_t tasks_searched = 0;
    double full_space = 0.0;

    RouterModel current = init_router(train_ds, cfg.embed_dim, cfg.hidden_dim, cfg.model_seed);

    int consumed = bootstrap;
    for (int round = 1; round <= cfg.rounds; ++round) {
        std::span<const TaskInstance> shard;
        if (round == 1) {
            shard = all_tasks.subspan(0, bootstrap);
        } else {
            const int remaining = total - bootstrap;
            const int base = remaining / (cfg.rounds - 1);
            const int extra = remaining % (cfg.rounds - 1);
            const int size = base + (round - 2 < extra ? 1 : 0);
            shard = all_tasks.subspan(consumed, size);
            consumed += size;
        }

        std::vector<HarvestResult> harvests =
            round == 1 ? harvest_dataset(ctx, shard, SearchMode::pruned, nullptr, 0,
                                         cfg.threads, cfg.limits)
                       : harvest_dataset(ctx, shard, SearchMode::guided, &current, cfg.k,
                                         cfg.threads, cfg.limits);

        RoundReport report;
        report.round = round;
        std::int64_t shard_paths = 0;
        for (const HarvestResult& h : harvests) {
            shard_paths += h.paths_evaluated;
            full_space = static_cast<double>(h.full_space);
            std::vector<TrainingExample> fresh = extract_examples(h, cfg.train.w_alt);
            report.new_examples += static_cast<std::int64_t>(fresh.size());
            examples.insert(examples.end(), std::make_move_iterator(fresh.begin()),
                            std::make_move_iterator(fresh.end()));
        }
        paths_total += shard_paths;
        tasks_searched += static_cast<std::int64_t>(harvests.size());
        report.cumulative_examples = static_cast<std::int64_t>(examples.size());
        report.mean_paths_evaluated =
            harvests.empty() ? 0.0 : static_cast<double>(shard_paths) / harvests.size();
        report.sampled_fraction =
            full_space > 0.0 ? report.mean_paths_evaluated / full_space : 0.0;

        if (examples.empty())
            throw std::runtime_error("evolve_pipeline: no training examples harvested");
        const RouterModel base_model =
            cfg.warm_start ? current
                           : init_router(train_ds, cfg.embed_dim, cfg.hidden_dim, cfg.model_seed);
        TrainResult trained = train(base_model, all_tasks, examples, cfg.train);
        current = std::move(trained.model);

        const HeldoutMetrics hm = heldout_eval(current, heldout_ds, cfg.threads);
        report.heldout_accuracy = hm.accuracy;
        report.heldout_mean_tokens = hm.mean_tokens;
        result.rounds.push_back(report);
    }

    result.model = std::move(current);
    result.overall_mean_paths_evaluated =
        tasks_searched > 0 ? static_cast<double>(paths_total) / tasks_searched : 0.0;
    result.overall_sampled_fraction =
        full_space > 0.0 ? result.overall_mean_paths_evaluated / full_space : 0.0;
    return result;
}

} // namespace strmac
