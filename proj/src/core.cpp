#include "strmac/core.hpp"

#include <cmath>
#include <limits>

namespace strmac {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void normalize(std::span<double> v) {
    const double n = norm(v);
    if (n < 1e-12)
        throw DegenerateEmbedding("normalize: vector norm below 1e-12");
    for (double& x : v) x /= n;
}

bool score_greater(const PathScore& a, const PathScore& b) {
    if (a.correct != b.correct) return a.correct;
    if (!a.correct) return false; // both sentinels, tied
    return a.value > b.value;
}

PathScore score_path(const ExecutionPath& path, int label) {
    if (path.prediction == label) return {true, -path.total_tokens};
    return {false, 0};
}

ExecutionPath make_path(std::uint64_t task_id, std::vector<StepRecord> steps, int label) {
    if (steps.empty())
        throw std::invalid_argument("make_path: empty step list");
    for (std::size_t i = 0; i < steps.size(); ++i)
        for (std::size_t j = i + 1; j < steps.size(); ++j)
            if (steps[i].agent_id == steps[j].agent_id)
                throw std::invalid_argument("make_path: repeated agent in step list");
    ExecutionPath p;
    p.task_id = task_id;
    p.steps = std::move(steps);
    p.prediction = p.steps.back().answer;
    p.total_tokens = 0;
    for (const StepRecord& s : p.steps) p.total_tokens += s.tokens;
    p.score = score_path(p, label);
    return p;
}

std::strong_ordering canonical_path_order(const ExecutionPath& a, const ExecutionPath& b) {
    if (score_greater(a.score, b.score)) return std::strong_ordering::less;
    if (score_greater(b.score, a.score)) return std::strong_ordering::greater;
    if (a.steps.size() != b.steps.size())
        return a.steps.size() < b.steps.size() ? std::strong_ordering::less
                                               : std::strong_ordering::greater;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        if (a.steps[i].agent_id != b.steps[i].agent_id)
            return a.steps[i].agent_id < b.steps[i].agent_id ? std::strong_ordering::less
                                                             : std::strong_ordering::greater;
    }
    return std::strong_ordering::equal;
}

PathCount count_paths(int n_agents) {
    if (n_agents < 0)
        throw std::invalid_argument("count_paths: n_agents must be nonnegative");
    // count(N) = N * (1 + count(N-1)): each first choice is a length-1 path
    // plus the full subtree over the N-1 remaining agents.
    constexpr PathCount kMax = ~PathCount{0};
    PathCount total = 0;
    for (int n = 1; n <= n_agents; ++n) {
        const PathCount factor = static_cast<PathCount>(n);
        if (total > (kMax - 1) / factor - 1)
            throw std::overflow_error("count_paths: 128-bit overflow");
        total = factor * (1 + total);
    }
    return total;
}

std::string count_to_string(PathCount n) {
    if (n == 0) return "0";
    std::string out;
    while (n > 0) {
        out.push_back(static_cast<char>('0' + static_cast<int>(n % 10)));
        n /= 10;
    }
    return {out.rbegin(), out.rend()};
}

nlohmann::json path_to_json(const ExecutionPath& path) {
    nlohmann::json steps = nlohmann::json::array();
    for (const StepRecord& s : path.steps)
        steps.push_back({{"agent_id", s.agent_id}, {"answer", s.answer}, {"tokens", s.tokens}});
    nlohmann::json j{{"task_id", path.task_id},
                     {"steps", std::move(steps)},
                     {"prediction", path.prediction},
                     {"total_tokens", path.total_tokens}};
    if (path.score.correct)
        j["score"] = path.score.value;
    else
        j["score"] = "neg_inf";
    return j;
}

ExecutionPath path_from_json(const nlohmann::json& j) {
    ExecutionPath p;
    p.task_id = j.at("task_id").get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
        p.steps.push_back({s.at("agent_id").get<AgentId>(), s.at("answer").get<int>(),
                           s.at("tokens").get<std::int64_t>()});
    }
    if (p.steps.empty())
        throw std::invalid_argument("path_from_json: empty step list");
    p.prediction = j.at("prediction").get<int>();
    p.total_tokens = j.at("total_tokens").get<std::int64_t>();
    const auto& score = j.at("score");
    if (score.is_string()) {
        if (score.get<std::string>() != "neg_inf")
            throw std::invalid_argument("path_from_json: unknown score sentinel");
        p.score = {false, 0};
    } else {
        p.score = {true, score.get<std::int64_t>()};
    }
    return p;
}

} // namespace strmac
