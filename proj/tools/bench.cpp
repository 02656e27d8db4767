// Times the OpenMP kernels against their serial references on a seeded
// fixture and verifies the outputs are identical before reporting.

#include <charconv>
#include <chrono>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "strmac/eval.hpp"
#include "strmac/parallel.hpp"

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto start = Clock::now();
        f();
        const std::chrono::duration<double, std::milli> elapsed = Clock::now() - start;
        best = std::min(best, elapsed.count());
    }
    return best;
}

std::string ms(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

void report_row(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
    std::cout << name;
    for (std::size_t i = name.size(); i < 18; ++i) std::cout << ' ';
    std::cout << ms(serial_ms) << " ms   " << ms(parallel_ms) << " ms   x"
              << ms(parallel_ms > 0.0 ? serial_ms / parallel_ms : 0.0) << "   "
              << (identical ? "identical" : "MISMATCH") << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel benchmark"};
    int threads = 0, n_tasks = 100, reps = 3;
    app.add_option("--threads", threads, "0 = all");
    app.add_option("--tasks", n_tasks, "benchmark task count");
    app.add_option("--reps", reps, "repetitions, best-of");
    CLI11_PARSE(app, argc, argv);

    using namespace strmac;
    EnvConfig env;
    const Dataset ds = make_dataset(env, n_tasks);
    const SimContext ctx = ds.sim_context();
    std::cout << "tasks " << n_tasks << ", threads " << resolve_threads(threads) << ", best of "
              << reps << "\n\n";
    std::cout << "kernel            serial      parallel    speedup  check\n";

    // Harvest: pruned tree search per task.
    std::vector<HarvestResult> hs, hp;
    const double h_serial = time_best_of(reps, [&] {
        hs = harvest_dataset_serial(ctx, ds.tasks, SearchMode::pruned, nullptr, 0);
    });
    const double h_parallel = time_best_of(reps, [&] {
        hp = harvest_dataset(ctx, ds.tasks, SearchMode::pruned, nullptr, 0, threads);
    });
    bool h_same = hs.size() == hp.size();
    for (std::size_t i = 0; h_same && i < hs.size(); ++i)
        h_same = harvest_to_json(hs[i]) == harvest_to_json(hp[i]);
    report_row("harvest", h_serial, h_parallel, h_same);

    // Batch gradient over the harvested examples.
    std::vector<TrainingExample> examples;
    for (const HarvestResult& h : hs) {
        const std::vector<TrainingExample> fresh = extract_examples(h, 0.5);
        examples.insert(examples.end(), fresh.begin(), fresh.end());
    }
    const RouterModel model = init_router(ds, 16, 32, env.seed);
    GradBuffer gs, gp;
    const double g_serial =
        time_best_of(reps, [&] { gs = batch_gradient_serial(model, ds.tasks, examples); });
    const double g_parallel =
        time_best_of(reps, [&] { gp = batch_gradient(model, ds.tasks, examples, threads); });
    const bool g_same = gs.w1 == gp.w1 && gs.b1 == gp.b1 && gs.w2 == gp.w2 && gs.b2 == gp.b2 &&
                        gs.stop == gp.stop && gs.loss == gp.loss;
    report_row("batch_gradient", g_serial, g_parallel, g_same);

    // Evaluation: random-chain rollouts per task.
    MethodSpec spec;
    spec.kind = MethodKind::random_chain;
    spec.seed = env.seed;
    EvalReport es, ep;
    const double e_serial = time_best_of(reps, [&] { es = evaluate_serial(ctx, ds.tasks, spec); });
    const double e_parallel =
        time_best_of(reps, [&] { ep = evaluate(ctx, ds.tasks, spec, threads); });
    report_row("evaluate", e_serial, e_parallel, report_to_json(es) == report_to_json(ep));

    std::cout << "\nexamples " << examples.size() << ", harvested paths "
              << [&] {
                     std::int64_t total = 0;
                     for (const HarvestResult& h : hs) total += h.paths_evaluated;
                     return total;
                 }()
              << "\n";
    return 0;
}
