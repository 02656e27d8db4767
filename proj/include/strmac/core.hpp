#pragma once
// Domain types shared by every module, plus the closed-form path counting
// and path scoring primitives.

#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace strmac {

using AgentId = int;

struct TaskInstance {
    std::uint64_t task_id = 0;
    std::vector<double> query_features; // unit norm
    int label = 0;
    std::vector<AgentId> agent_ids;     // agents available for this task, ordered
};

struct AgentProfile {
    AgentId agent_id = 0;
    std::vector<double> expertise;      // unit norm; drives behavior and embedding
    std::int64_t base_token_cost = 1;   // >= 1
    std::int64_t per_history_token_cost = 0;
    bool distractor = false;
};

struct StepRecord {
    AgentId agent_id = 0;
    int answer = 0;
    std::int64_t tokens = 1;

    bool operator==(const StepRecord&) const = default;
};

// Query plus the ordered execution history. Holds a reference to the task;
// immutable task data is shared, history is owned.
struct SystemState {
    const TaskInstance& task;
    std::vector<StepRecord> history;
};

// Extended-real path score: finite (= -total_tokens) iff the prediction is
// correct, otherwise the -infinity sentinel. A dedicated flag rather than a
// floating-point infinity so path sets serialize losslessly.
struct PathScore {
    bool correct = false;
    std::int64_t value = 0; // meaningful only when correct

    bool operator==(const PathScore&) const = default;
};

// True when a strictly outranks b (finite beats sentinel, larger finite wins).
bool score_greater(const PathScore& a, const PathScore& b);

struct ExecutionPath {
    std::uint64_t task_id = 0;
    std::vector<StepRecord> steps; // nonempty, no repeated agent
    int prediction = 0;            // answer of the final step
    std::int64_t total_tokens = 0;
    PathScore score;
};

// Assembles prediction/total_tokens/score from steps.
ExecutionPath make_path(std::uint64_t task_id, std::vector<StepRecord> steps, int label);

PathScore score_path(const ExecutionPath& path, int label);

// Total order used everywhere a "best path" must be unique: higher score
// first, then fewer steps, then lexicographically smaller agent sequence.
// `less` means a ranks ahead of b.
std::strong_ordering canonical_path_order(const ExecutionPath& a, const ExecutionPath& b);

inline bool path_precedes(const ExecutionPath& a, const ExecutionPath& b) {
    return canonical_path_order(a, b) == std::strong_ordering::less;
}

// Sum over K=1..N of N!/(N-K)!; exact 128-bit arithmetic.
using PathCount = unsigned __int128;

PathCount count_paths(int n_agents);

std::string count_to_string(PathCount n);

// JSONL record: {task_id, steps:[{agent_id, answer, tokens}], prediction,
// total_tokens, score} with the sentinel encoded as "neg_inf".
nlohmann::json path_to_json(const ExecutionPath& path);
ExecutionPath path_from_json(const nlohmann::json& j);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

// In-place scale to unit norm; throws DegenerateEmbedding below 1e-12.
void normalize(std::span<double> v);

struct DegenerateEmbedding : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace strmac
