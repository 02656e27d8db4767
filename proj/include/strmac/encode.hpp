#pragma once
// Feature extraction and embeddings: the state featurizer, the fixed
// agent-embedding constructor, and the trainable two-layer router encoder.

#include <cstdint>
#include <span>
#include <vector>

#include "core.hpp"

namespace strmac {

// Dimension of the featurized state: query features plus one
// (executed flag, normalized position, answer one-hot) block per agent.
inline int state_feature_dim(int feature_dim, int n_agents, int n_classes) {
    return feature_dim + n_agents * (2 + n_classes);
}

// Layout: [query | per-agent blocks]. Block of agent i starts at
// f + i*(2+C): executed flag in {0,1}, position (step+1)/N, one-hot of
// the agent's answer (zeros when not executed). Agent ids index blocks
// directly, so they must be contiguous from 0.
void featurize_state_into(const SystemState& state, int n_agents, int n_classes,
                          std::span<double> out);

std::vector<double> featurize_state(const SystemState& state, int n_agents, int n_classes);

// Fixed agent embedding e_i: expertise in the first f coordinates, the
// remaining d-f filled from a hash of (seed, agent_id) scaled by 0.01 to
// break symmetry, then unit-normalized. d = f returns the expertise
// vector unchanged. Rejects d < f.
std::vector<double> embed_agent(const AgentProfile& profile, int embed_dim, std::uint64_t seed);

// Two-layer perceptron z = normalize(W2 tanh(W1 x + b1) + b2).
// Weights row-major: w1 is hidden_dim x input_dim, w2 is embed_dim x hidden_dim.
struct EncoderParams {
    int input_dim = 0;
    int hidden_dim = 0;
    int embed_dim = 0;
    std::uint64_t seed = 0; // provenance of the init draw
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    std::vector<double> b2;

    void validate() const;
};

// Xavier-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
EncoderParams init_encoder(int input_dim, int hidden_dim, int embed_dim, std::uint64_t seed);

// Intermediates kept for backprop.
struct EncodeTrace {
    std::vector<double> input;
    std::vector<double> hidden;   // tanh(W1 x + b1)
    std::vector<double> pre_norm; // u = W2 hidden + b2
    double pre_norm_norm = 0.0;   // ||u||
    std::vector<double> z;        // u / ||u||
};

// Unit-normalized state embedding. Throws DegenerateEmbedding when
// ||u|| < 1e-12.
std::vector<double> encode(const EncoderParams& params, std::span<const double> features);

EncodeTrace encode_with_trace(const EncoderParams& params, std::span<const double> features);

nlohmann::json encoder_to_json(const EncoderParams& params);
EncoderParams encoder_from_json(const nlohmann::json& j);

} // namespace strmac
