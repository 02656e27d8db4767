#include "strmac/encode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "strmac/prng.hpp"

namespace strmac {

void featurize_state_into(const SystemState& state, int n_agents, int n_classes,
                          std::span<double> out) {
    const std::vector<double>& q = state.task.query_features;
    const int f = static_cast<int>(q.size());
    const int dim = state_feature_dim(f, n_agents, n_classes);
    if (static_cast<int>(out.size()) != dim)
        throw std::invalid_argument("featurize_state: output span has wrong dimension");
    std::fill(out.begin(), out.end(), 0.0);
    std::copy(q.begin(), q.end(), out.begin());
    const int block = 2 + n_classes;
    for (std::size_t step = 0; step < state.history.size(); ++step) {
        const StepRecord& rec = state.history[step];
        if (rec.agent_id < 0 || rec.agent_id >= n_agents)
            throw std::invalid_argument("featurize_state: agent id out of range");
        if (rec.answer < 0 || rec.answer >= n_classes)
            throw std::invalid_argument("featurize_state: answer out of range");
        double* b = out.data() + f + rec.agent_id * block;
        b[0] = 1.0;
        b[1] = static_cast<double>(step + 1) / n_agents;
        b[2 + rec.answer] = 1.0;
    }
}

std::vector<double> featurize_state(const SystemState& state, int n_agents, int n_classes) {
    const int f = static_cast<int>(state.task.query_features.size());
    std::vector<double> out(state_feature_dim(f, n_agents, n_classes));
    featurize_state_into(state, n_agents, n_classes, out);
    return out;
}

std::vector<double> embed_agent(const AgentProfile& profile, int embed_dim, std::uint64_t seed) {
    const int f = static_cast<int>(profile.expertise.size());
    if (embed_dim < f)
        throw std::invalid_argument("embed_agent: embed_dim must be >= expertise dimension");
    if (embed_dim == f) return profile.expertise;
    std::vector<double> e(embed_dim, 0.0);
    std::copy(profile.expertise.begin(), profile.expertise.end(), e.begin());
    SplitMix64 rng(substream(seed, "agent_embed", profile.agent_id));
    for (int i = f; i < embed_dim; ++i) e[i] = 0.01 * (2.0 * rng.next_double() - 1.0);
    normalize(e);
    return e;
}

void EncoderParams::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1)
        throw std::invalid_argument("EncoderParams: dimensions must be >= 1");
    if (w1.size() != static_cast<std::size_t>(hidden_dim) * input_dim ||
        b1.size() != static_cast<std::size_t>(hidden_dim) ||
        w2.size() != static_cast<std::size_t>(embed_dim) * hidden_dim ||
        b2.size() != static_cast<std::size_t>(embed_dim))
        throw std::invalid_argument("EncoderParams: weight shapes inconsistent with dimensions");
    for (const std::vector<double>* v : {&w1, &b1, &w2, &b2})
        for (double x : *v)
            if (!std::isfinite(x))
                throw std::invalid_argument("EncoderParams: non-finite entry");
}

EncoderParams init_encoder(int input_dim, int hidden_dim, int embed_dim, std::uint64_t seed) {
    if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1)
        throw std::invalid_argument("init_encoder: dimensions must be >= 1");
    EncoderParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.embed_dim = embed_dim;
    p.seed = seed;
    p.w1.resize(static_cast<std::size_t>(hidden_dim) * input_dim);
    p.b1.assign(hidden_dim, 0.0);
    p.w2.resize(static_cast<std::size_t>(embed_dim) * hidden_dim);
    p.b2.assign(embed_dim, 0.0);
    SplitMix64 rng1(substream(seed, "init_w1"));
    const double s1 = std::sqrt(6.0 / (input_dim + hidden_dim));
    for (double& w : p.w1) w = s1 * (2.0 * rng1.next_double() - 1.0);
    SplitMix64 rng2(substream(seed, "init_w2"));
    const double s2 = std::sqrt(6.0 / (hidden_dim + embed_dim));
    for (double& w : p.w2) w = s2 * (2.0 * rng2.next_double() - 1.0);
    return p;
}

EncodeTrace encode_with_trace(const EncoderParams& params, std::span<const double> features) {
    if (static_cast<int>(features.size()) != params.input_dim)
        throw std::invalid_argument("encode: feature dimension mismatch");
    EncodeTrace t;
    t.input.assign(features.begin(), features.end());
    t.hidden.resize(params.hidden_dim);
    for (int i = 0; i < params.hidden_dim; ++i) {
        const double* row = params.w1.data() + static_cast<std::size_t>(i) * params.input_dim;
        double a = params.b1[i];
        for (int j = 0; j < params.input_dim; ++j) a += row[j] * features[j];
        t.hidden[i] = std::tanh(a);
    }
    t.pre_norm.resize(params.embed_dim);
    for (int i = 0; i < params.embed_dim; ++i) {
        const double* row = params.w2.data() + static_cast<std::size_t>(i) * params.hidden_dim;
        double a = params.b2[i];
        for (int j = 0; j < params.hidden_dim; ++j) a += row[j] * t.hidden[j];
        t.pre_norm[i] = a;
    }
    t.pre_norm_norm = norm(t.pre_norm);
    if (t.pre_norm_norm < 1e-12)
        throw DegenerateEmbedding("encode: pre-normalization norm below 1e-12");
    t.z.resize(params.embed_dim);
    for (int i = 0; i < params.embed_dim; ++i) t.z[i] = t.pre_norm[i] / t.pre_norm_norm;
    return t;
}

std::vector<double> encode(const EncoderParams& params, std::span<const double> features) {
    return encode_with_trace(params, features).z;
}

nlohmann::json encoder_to_json(const EncoderParams& params) {
    return {{"input_dim", params.input_dim}, {"hidden_dim", params.hidden_dim},
            {"embed_dim", params.embed_dim}, {"seed", params.seed},
            {"w1", params.w1},               {"b1", params.b1},
            {"w2", params.w2},               {"b2", params.b2}};
}

EncoderParams encoder_from_json(const nlohmann::json& j) {
    EncoderParams p;
    p.input_dim = j.at("input_dim").get<int>();
    p.hidden_dim = j.at("hidden_dim").get<int>();
    p.embed_dim = j.at("embed_dim").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.w1 = j.at("w1").get<std::vector<double>>();
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w2 = j.at("w2").get<std::vector<double>>();
    p.b2 = j.at("b2").get<std::vector<double>>();
    p.validate();
    return p;
}

} // namespace strmac
