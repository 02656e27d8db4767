#pragma once
// Deterministic synthetic environment: fragmented-information tasks plus
// simulated expert agents with token accounting. Everything is a pure
// function of (EnvConfig, inputs); parallel rollouts need no locks.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "core.hpp"

namespace strmac {

struct EnvConfig {
    int n_agents = 5;
    int feature_dim = 6;
    int n_classes = 4;
    double evidence_threshold = 0.35; // theta in (0, 1]
    double distractor_fraction = 0.4;
    std::int64_t min_token_cost = 50;
    std::int64_t max_token_cost = 150;
    std::uint64_t seed = 42;

    void validate() const;
};

nlohmann::json env_config_to_json(const EnvConfig& cfg);
EnvConfig env_config_from_json(const nlohmann::json& j);

struct SimOutcome {
    int answer = 0;
    std::int64_t tokens = 1; // base + per_history * history length
};

// Everything a simulation step needs besides the task: the shared agent
// population (indexed by agent_id), the class count, the evidence threshold,
// and the environment seed driving wrong-answer hashing.
struct SimContext {
    std::span<const AgentProfile> profiles;
    int n_classes = 2;
    double evidence_threshold = 0.35;
    std::uint64_t seed = 0;
    std::int64_t* call_counter = nullptr; // when set, run_agent increments it

    const AgentProfile& profile(AgentId id) const;
};

// A loaded/generated benchmark: tasks share one agent population.
struct Dataset {
    std::vector<TaskInstance> tasks;
    std::vector<AgentProfile> profiles;
    int n_classes = 2;
    double evidence_threshold = 0.35;
    std::uint64_t env_seed = 0;

    SimContext sim_context() const {
        return {profiles, n_classes, evidence_threshold, env_seed};
    }
};

// Deterministic task generation. All tasks share one agent population drawn
// from the config seed (expertise vectors and distractor flags), so a single
// fixed agent-embedding matrix covers the whole dataset; per-task draws are
// the query and label. task_offset shifts the task-id range, giving
// disjoint splits (train vs heldout) over the same population.
std::vector<std::pair<TaskInstance, std::vector<AgentProfile>>>
generate_tasks(const EnvConfig& cfg, int n_tasks, int task_offset = 0);

Dataset make_dataset(const EnvConfig& cfg, int n_tasks, int task_offset = 0);

// Evidence accumulated by the executed agents (history plus `current` when
// nonnegative): non-distractors add max(0, dot(expertise, query)),
// distractors subtract it.
double evidence_sum(const SimContext& ctx, const TaskInstance& task,
                    std::span<const StepRecord> history, AgentId current);

// One simulated agent invocation. Precondition: agent not already in history.
SimOutcome run_agent(const SimContext& ctx, const AgentProfile& agent, const SystemState& state);

// Executes the sequence step by step and assembles the scored path.
ExecutionPath rollout(const SimContext& ctx, const TaskInstance& task,
                      std::span<const AgentId> sequence);

// Dataset JSONL: one task per line with embedded agent profiles.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

nlohmann::json task_line_to_json(const TaskInstance& task, std::span<const AgentProfile> profiles,
                                 int n_classes, double evidence_threshold, std::uint64_t env_seed);

} // namespace strmac
