#pragma once
// The routing decision and the inference loop: score agents against the
// state embedding, mask used agents, select, execute, repeat until STOP.
//
// STOP is a pseudo-action with its own trainable embedding, scored like an
// agent at index n_agents. It is masked while the history is empty (every
// path must be nonempty) and loses every tie, so a degenerate model still
// acts. Inference-time termination is an extension of the routed system,
// and traces label it "stop" accordingly.

#include <cstdint>
#include <string>
#include <vector>

#include "encode.hpp"
#include "simenv.hpp"

namespace strmac {

struct RouterModel {
    EncoderParams encoder;
    std::vector<double> agent_embeddings; // n_agents x embed_dim, row-major, unit rows, fixed
    std::vector<double> stop_embedding;   // embed_dim, trainable
    double temperature = 1.0;
    int n_agents = 0;
    int feature_dim = 0;
    int n_classes = 0;
    int embed_dim = 0;

    void validate() const;
    std::span<const double> agent_embedding(int i) const {
        return {agent_embeddings.data() + static_cast<std::size_t>(i) * embed_dim,
                static_cast<std::size_t>(embed_dim)};
    }
};

// Encoder from the model seed, agent embeddings from the dataset's
// population, stop embedding a random unit vector.
RouterModel init_router(const Dataset& ds, int embed_dim, int hidden_dim, std::uint64_t seed);

struct NoActionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// scores and probabilities have length n_agents + 1; the last entry is
// STOP. Masked entries carry probability exactly 0. chosen indexes the
// vectors; chosen == n_agents means STOP.
struct RoutingDecision {
    std::vector<double> scores;
    std::vector<double> probabilities;
    std::vector<bool> masked;
    int chosen = 0;
};

// Softmax of scores/temperature over unmasked entries plus the argmax
// tie-break (lowest index wins). Factored out of score_agents so the
// selection rules are testable on raw score vectors.
RoutingDecision finalize_decision(std::vector<double> scores, std::vector<bool> masked,
                                  double temperature);

// Cosine scores of every agent plus STOP against the encoded state.
// Executed agents are masked; STOP is masked on empty history. Throws
// NoActionError when nothing remains.
RoutingDecision score_agents(const RouterModel& model, const SystemState& state);

struct InferenceResult {
    ExecutionPath path;
    std::vector<RoutingDecision> decisions; // one per scored step
};

// Score, pick, execute until STOP is chosen or max_steps records exist.
// Once all agents are used, the next decision can only pick STOP, so the
// trace always ends with an explicit termination except on budget cutoff.
InferenceResult run_inference(const RouterModel& model, const SimContext& ctx,
                              const TaskInstance& task, int max_steps);

// Trace record: {task_id, step, scores, probabilities, masked, chosen}
// with STOP rendered as "stop".
nlohmann::json decision_to_json(const RoutingDecision& d, std::uint64_t task_id, int step);

nlohmann::json router_to_json(const RouterModel& model);
RouterModel router_from_json(const nlohmann::json& j);

void save_router(const RouterModel& model, const std::string& path);
RouterModel load_router(const std::string& path);

} // namespace strmac
