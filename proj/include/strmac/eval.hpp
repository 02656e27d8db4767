#pragma once
// Metrics and baselines: accuracy, mean tokens, the cost-adjusted score,
// per-method evaluation with path-distribution analysis, and report
// rendering (JSON, aligned text table, SVG chart).

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evolve.hpp"

namespace strmac {

// accuracy * exp(-mu * mean_tokens / c). Rejects c <= 0.
double cas(double accuracy, double mean_tokens, double mu = 0.1, double c = 1000.0);

enum class MethodKind { strmac, random_chain, fixed_chain, single_agent, exhaustive_oracle };

std::string method_name(MethodKind kind);
MethodKind method_from_name(const std::string& name);

struct MethodSpec {
    MethodKind kind = MethodKind::strmac;
    const RouterModel* model = nullptr; // strmac only
    std::uint64_t seed = 0;             // random_chain only
    std::vector<AgentId> order;         // fixed_chain only
    AgentId agent = 0;                  // single_agent only
    int max_steps = 0;                  // strmac budget; 0 means n_agents
    SearchLimits limits;                // exhaustive_oracle cap
};

struct TaskEvalRecord {
    std::uint64_t task_id = 0;
    std::vector<AgentId> sequence;
    int prediction = 0;
    int label = 0;
    bool correct = false;
    std::int64_t tokens = 0;
};

struct PathStat {
    std::int64_t count = 0;
    std::int64_t correct = 0;
};

struct EvalReport {
    std::string method;
    double accuracy = 0.0; // percent
    double mean_tokens = 0.0;
    double cas = 0.0;
    std::vector<TaskEvalRecord> per_task;
    std::map<std::vector<AgentId>, PathStat> path_distribution;
};

// Runs every task through the method. random_chain draws one full-length
// permutation per task from substream(seed, "random_chain", task_id);
// exhaustive_oracle plays the best path, falling back to the first agent
// when the task is unsolvable. Parallel over tasks, aggregated in task
// order; bit-identical to evaluate_serial.
EvalReport evaluate_serial(const SimContext& ctx, std::span<const TaskInstance> tasks,
                           const MethodSpec& spec, double mu = 0.1, double c = 1000.0);
EvalReport evaluate(const SimContext& ctx, std::span<const TaskInstance> tasks,
                    const MethodSpec& spec, int threads, double mu = 0.1, double c = 1000.0);

// Sequences by descending count, ties lexicographically.
struct PathFrequency {
    std::vector<AgentId> sequence;
    std::int64_t count = 0;
    double accuracy = 0.0; // percent, within this sequence
};

std::vector<PathFrequency> top_paths(const EvalReport& report, int top_n);

nlohmann::json report_to_json(const EvalReport& report);

// Aligned columns: Method | Acc | Token | CAS, then the top paths.
std::string report_table(const EvalReport& report, int top_n = 3);

// Bar chart of path counts with an accuracy line overlay.
std::string report_svg(const EvalReport& report, int top_n = 8);

} // namespace strmac
