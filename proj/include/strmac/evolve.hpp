#pragma once
// Self-evolving data generation: the execution-path tree, exhaustive
// enumeration, solution-aware early pruning, router-guided top-k
// expansion, and the iterative retraining pipeline.
//
// Pruning is optimal because token costs are strictly positive: any
// descendant of a correct node answers at best equally and always costs
// strictly more tokens, so the token-minimal correct path is never below
// a correct prefix.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "train.hpp"

namespace strmac {

struct SearchLimits {
    int max_agents = 7; // exhaustive enumeration cap; 7 means 13699 paths
};

enum class NodeStatus { unexplored, solved, pruned, exhausted };

// One node of the (lazily walked) path tree; surfaced for tests and
// trace tooling rather than stored globally.
struct PathTreeNode {
    std::vector<AgentId> prefix;
    NodeStatus status = NodeStatus::unexplored;
};

struct HarvestResult {
    std::uint64_t task_id = 0;
    std::vector<ExecutionPath> valid_paths; // finite score, canonical order
    std::optional<ExecutionPath> best_path; // first of valid_paths
    std::int64_t nodes_expanded = 0;        // nodes whose children were generated
    std::int64_t paths_evaluated = 0;       // nonempty prefixes scored, = run_agent calls
    PathCount full_space = 0;               // count_paths(N)
};

// Scores every nonempty permutation prefix. paths_evaluated equals
// count_paths(N) exactly.
HarvestResult exhaustive_search(const SimContext& ctx, const TaskInstance& task,
                                const SearchLimits& limits = {});

// Depth-first in ascending agent-id order; a correct node is recorded and
// its whole subtree skipped, siblings continue. Same best score as
// exhaustive_search on every task.
HarvestResult pruned_search(const SimContext& ctx, const TaskInstance& task,
                            const SearchLimits& limits = {});

// Pruned search that expands only the router's top-k unmasked agents per
// node (probability ties break to the lowest index; the chosen set is
// walked in ascending id order). k = N reproduces pruned_search exactly.
HarvestResult router_guided_search(const SimContext& ctx, const TaskInstance& task,
                                   const RouterModel& model, int k,
                                   const SearchLimits& limits = {});

nlohmann::json harvest_to_json(const HarvestResult& h);

// One example per distinct state prefix across the valid paths: the
// target is the next action of the canonically best path extending that
// prefix (STOP when that path ends there), weighted 1.0 on the overall
// best path and w_alt elsewhere.
std::vector<TrainingExample> extract_examples(const HarvestResult& harvest, double w_alt);

enum class SearchMode { exhaustive, pruned, guided };

// Searches every task; results in task order. model is required by
// guided mode and ignored otherwise. The parallel variant is
// bit-identical to the serial one (independent tasks, ordered results).
std::vector<HarvestResult> harvest_dataset_serial(const SimContext& ctx,
                                                  std::span<const TaskInstance> tasks,
                                                  SearchMode mode, const RouterModel* model,
                                                  int k, const SearchLimits& limits = {});
std::vector<HarvestResult> harvest_dataset(const SimContext& ctx,
                                           std::span<const TaskInstance> tasks, SearchMode mode,
                                           const RouterModel* model, int k, int threads,
                                           const SearchLimits& limits = {});

struct PipelineConfig {
    double bootstrap_fraction = 0.2; // share of tasks searched by pruning in round 1
    int rounds = 4;
    int k = 2;                       // guided expansion width
    TrainConfig train;
    int embed_dim = 16;
    int hidden_dim = 32;
    std::uint64_t model_seed = 0;
    bool warm_start = false;         // false retrains from scratch each round
    int threads = 0;
    SearchLimits limits;

    void validate() const;
};

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

struct RoundReport {
    int round = 0;
    std::int64_t new_examples = 0;
    std::int64_t cumulative_examples = 0;
    double mean_paths_evaluated = 0.0; // over this round's task shard
    double sampled_fraction = 0.0;     // mean_paths_evaluated / count_paths(N)
    double heldout_accuracy = 0.0;     // percent
    double heldout_mean_tokens = 0.0;
};

nlohmann::json round_report_to_json(const RoundReport& r);

struct PipelineResult {
    RouterModel model;
    std::vector<RoundReport> rounds;
    double overall_mean_paths_evaluated = 0.0; // across every harvested task
    double overall_sampled_fraction = 0.0;
};

// Round 1: pruned search on the bootstrap shard, train from scratch.
// Rounds 2..R: router-guided search on the next shard (remaining tasks
// split evenly, dataset order), then retrain on the cumulative examples.
// Heldout accuracy and tokens are measured with run_inference per round.
PipelineResult evolve_pipeline(const Dataset& train_ds, const Dataset& heldout_ds,
                               const PipelineConfig& cfg);

} // namespace strmac
