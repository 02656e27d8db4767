#include "strmac/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "strmac/parallel.hpp"
#include "strmac/prng.hpp"

namespace strmac {

double cas(double accuracy, double mean_tokens, double mu, double c) {
    if (!(c > 0.0)) throw std::invalid_argument("cas: c must be positive");
    if (!(accuracy >= 0.0)) throw std::invalid_argument("cas: accuracy must be >= 0");
    if (!(mean_tokens >= 0.0)) throw std::invalid_argument("cas: mean_tokens must be >= 0");
    return accuracy * std::exp(-mu * mean_tokens / c);
}

std::string method_name(MethodKind kind) {
    switch (kind) {
    case MethodKind::strmac: return "strmac";
    case MethodKind::random_chain: return "random_chain";
    case MethodKind::fixed_chain: return "fixed_chain";
    case MethodKind::single_agent: return "single_agent";
    case MethodKind::exhaustive_oracle: return "exhaustive_oracle";
    }
    throw std::invalid_argument("method_name: unknown method");
}

MethodKind method_from_name(const std::string& name) {
    if (name == "strmac") return MethodKind::strmac;
    if (name == "random_chain") return MethodKind::random_chain;
    if (name == "fixed_chain") return MethodKind::fixed_chain;
    if (name == "single_agent") return MethodKind::single_agent;
    if (name == "exhaustive_oracle") return MethodKind::exhaustive_oracle;
    throw std::invalid_argument("unknown method: " + name);
}

namespace {

ExecutionPath play_task(const SimContext& ctx, const TaskInstance& task, const MethodSpec& spec) {
    switch (spec.kind) {
    case MethodKind::strmac: {
        if (spec.model == nullptr)
            throw std::invalid_argument("evaluate: strmac method needs a model");
        const int budget = spec.max_steps > 0 ? spec.max_steps : spec.model->n_agents;
        return run_inference(*spec.model, ctx, task, budget).path;
    }
    case MethodKind::random_chain: {
        std::vector<AgentId> perm = task.agent_ids;
        SplitMix64 rng(substream(spec.seed, "random_chain", task.task_id));
        for (int i = static_cast<int>(perm.size()) - 1; i > 0; --i)
            std::swap(perm[i], perm[rng.next_int(0, i)]);
        return rollout(ctx, task, perm);
    }
    case MethodKind::fixed_chain:
        if (spec.order.empty())
            throw std::invalid_argument("evaluate: fixed_chain needs a nonempty order");
        return rollout(ctx, task, spec.order);
    case MethodKind::single_agent: {
        const AgentId ids[] = {spec.agent};
        return rollout(ctx, task, ids);
    }
    case MethodKind::exhaustive_oracle: {
        HarvestResult h = exhaustive_search(ctx, task, spec.limits);
        if (h.best_path) return *h.best_path;
        const AgentId ids[] = {task.agent_ids.front()};
        return rollout(ctx, task, ids);
    }
    }
    throw std::invalid_argument("evaluate: unknown method");
}

TaskEvalRecord record_of(const TaskInstance& task, const ExecutionPath& path) {
    TaskEvalRecord r;
    r.task_id = task.task_id;
    for (const StepRecord& s : path.steps) r.sequence.push_back(s.agent_id);
    r.prediction = path.prediction;
    r.label = task.label;
    r.correct = path.prediction == task.label;
    r.tokens = path.total_tokens;
    return r;
}

EvalReport aggregate(std::vector<TaskEvalRecord> records, const MethodSpec& spec, double mu,
                     double c) {
    EvalReport report;
    report.method = method_name(spec.kind);
    std::int64_t correct = 0, tokens = 0;
    for (const TaskEvalRecord& r : records) {
        correct += r.correct ? 1 : 0;
        tokens += r.tokens;
        PathStat& stat = report.path_distribution[r.sequence];
        ++stat.count;
        stat.correct += r.correct ? 1 : 0;
    }
    const double n = static_cast<double>(records.size());
    report.accuracy = 100.0 * static_cast<double>(correct) / n;
    report.mean_tokens = static_cast<double>(tokens) / n;
    report.cas = cas(report.accuracy, report.mean_tokens, mu, c);
    report.per_task = std::move(records);
    return report;
}

} // namespace

EvalReport evaluate_serial(const SimContext& ctx, std::span<const TaskInstance> tasks,
                           const MethodSpec& spec, double mu, double c) {
    if (tasks.empty()) throw std::invalid_argument("evaluate: empty task set");
    std::vector<TaskEvalRecord> records;
    records.reserve(tasks.size());
    for (const TaskInstance& task : tasks)
        records.push_back(record_of(task, play_task(ctx, task, spec)));
    return aggregate(std::move(records), spec, mu, c);
}

EvalReport evaluate(const SimContext& ctx, std::span<const TaskInstance> tasks,
                    const MethodSpec& spec, int threads, double mu, double c) {
    if (tasks.empty()) throw std::invalid_argument("evaluate: empty task set");
    std::vector<TaskEvalRecord> records(tasks.size());
    for_each_index(static_cast<int>(tasks.size()), threads, [&](int i) {
        records[i] = record_of(tasks[i], play_task(ctx, tasks[i], spec));
    });
    return aggregate(std::move(records), spec, mu, c);
}

std::vector<PathFrequency> top_paths(const EvalReport& report, int top_n) {
    if (top_n < 1) throw std::invalid_argument("top_paths: top_n must be >= 1");
    std::vector<PathFrequency> out;
    for (const auto& [seq, stat] : report.path_distribution)
        out.push_back({seq, stat.count,
                       100.0 * static_cast<double>(stat.correct) / static_cast<double>(stat.count)});
    std::stable_sort(out.begin(), out.end(),
                     [](const PathFrequency& a, const PathFrequency& b) { return a.count > b.count; });
    if (static_cast<int>(out.size()) > top_n) out.resize(top_n);
    return out;
}

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json per_task = nlohmann::json::array();
    for (const TaskEvalRecord& r : report.per_task)
        per_task.push_back({{"task_id", r.task_id},
                            {"sequence", r.sequence},
                            {"prediction", r.prediction},
                            {"label", r.label},
                            {"correct", r.correct},
                            {"tokens", r.tokens}});
    nlohmann::json dist = nlohmann::json::array();
    for (const auto& [seq, stat] : report.path_distribution)
        dist.push_back({{"sequence", seq}, {"count", stat.count}, {"correct", stat.correct}});
    return {{"method", report.method},
            {"accuracy", report.accuracy},
            {"mean_tokens", report.mean_tokens},
            {"cas", report.cas},
            {"per_task", std::move(per_task)},
            {"path_distribution", std::move(dist)}};
}

namespace {

std::string fixed1(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 1);
    return std::string(buf, res.ptr);
}

std::string sequence_label(const std::vector<AgentId>& seq) {
    std::string s;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i > 0) s += '-';
        s += std::to_string(seq[i]);
    }
    return s;
}

void pad_to(std::string& line, std::size_t width) {
    if (line.size() < width) line.append(width - line.size(), ' ');
}

} // namespace

std::string report_table(const EvalReport& report, int top_n) {
    std::string out;
    std::string header = "Method";
    pad_to(header, 20);
    out += header + "   Acc  Token    CAS\n";
    std::string row = report.method;
    pad_to(row, 20);
    std::string acc = fixed1(report.accuracy), tok = fixed1(report.mean_tokens),
                cs = fixed1(report.cas);
    out += row;
    out += std::string(6 - std::min<std::size_t>(6, acc.size()), ' ') + acc;
    out += std::string(7 - std::min<std::size_t>(7, tok.size()), ' ') + tok;
    out += std::string(7 - std::min<std::size_t>(7, cs.size()), ' ') + cs;
    out += '\n';
    const std::vector<PathFrequency> tops = top_paths(report, top_n);
    out += "\npath        count   acc\n";
    for (const PathFrequency& p : tops) {
        std::string label = sequence_label(p.sequence);
        pad_to(label, 12);
        std::string count = std::to_string(p.count), acc_s = fixed1(p.accuracy);
        out += label;
        out += std::string(5 - std::min<std::size_t>(5, count.size()), ' ') + count;
        out += std::string(6 - std::min<std::size_t>(6, acc_s.size()), ' ') + acc_s;
        out += '\n';
    }
    return out;
}

std::string report_svg(const EvalReport& report, int top_n) {
    const std::vector<PathFrequency> tops = top_paths(report, top_n);
    const double width = 640.0, height = 360.0, left = 60.0, right = 60.0, top = 30.0,
                 bottom = 60.0;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    std::int64_t max_count = 1;
    for (const PathFrequency& p : tops) max_count = std::max(max_count, p.count);

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed1(width) + "\" height=\"" +
           fixed1(height) + "\" viewBox=\"0 0 " + fixed1(width) + " " + fixed1(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fixed1(width / 2) + "\" y=\"18\" text-anchor=\"middle\" "
           "font-family=\"monospace\" font-size=\"13\">path distribution (" +
           report.method + ")</text>\n";

    const int n = static_cast<int>(tops.size());
    const double slot = n > 0 ? plot_w / n : plot_w;
    std::string line_points;
    for (int i = 0; i < n; ++i) {
        const PathFrequency& p = tops[i];
        const double bar_h = plot_h * static_cast<double>(p.count) / static_cast<double>(max_count);
        const double x = left + i * slot + slot * 0.15;
        const double y = top + plot_h - bar_h;
        svg += "<rect x=\"" + fixed1(x) + "\" y=\"" + fixed1(y) + "\" width=\"" +
               fixed1(slot * 0.7) + "\" height=\"" + fixed1(bar_h) +
               "\" fill=\"#4878a8\"/>\n";
        svg += "<text x=\"" + fixed1(left + i * slot + slot / 2) + "\" y=\"" +
               fixed1(top + plot_h + 16) +
               "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">" +
               sequence_label(p.sequence) + "</text>\n";
        const double ly = top + plot_h * (1.0 - p.accuracy / 100.0);
        if (!line_points.empty()) line_points += ' ';
        line_points += fixed1(left + i * slot + slot / 2) + "," + fixed1(ly);
    }
    if (n > 1)
        svg += "<polyline points=\"" + line_points +
               "\" fill=\"none\" stroke=\"#c05040\" stroke-width=\"2\"/>\n";
    for (int i = 0; i < n; ++i) {
        const double ly = top + plot_h * (1.0 - tops[i].accuracy / 100.0);
        svg += "<circle cx=\"" + fixed1(left + i * slot + slot / 2) + "\" cy=\"" + fixed1(ly) +
               "\" r=\"3\" fill=\"#c05040\"/>\n";
    }
    svg += "<line x1=\"" + fixed1(left) + "\" y1=\"" + fixed1(top + plot_h) + "\" x2=\"" +
           fixed1(left + plot_w) + "\" y2=\"" + fixed1(top + plot_h) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"14\" y=\"" + fixed1(top + plot_h / 2) +
           "\" font-family=\"monospace\" font-size=\"11\" transform=\"rotate(-90 14 " +
           fixed1(top + plot_h / 2) + ")\" text-anchor=\"middle\">count (bar), acc% (line)</text>\n";
    svg += "<text x=\"" + fixed1(left) + "\" y=\"" + fixed1(top + plot_h + 34) +
           "\" font-family=\"monospace\" font-size=\"11\">max count " +
           std::to_string(max_count) + ", accuracy axis 0-100</text>\n";
    svg += "</svg>\n";
    return svg;
}

} // namespace strmac
