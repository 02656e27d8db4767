#include "strmac/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "strmac/eval.hpp"
#include "strmac/prng.hpp"

namespace strmac::cli {

namespace {

namespace fs = std::filesystem;

nlohmann::json load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open config " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json_doc(const fs::path& path, const nlohmann::json& j) {
    write_file(path, j.dump(2) + "\n");
}

struct GlobalArgs {
    std::uint64_t seed = 42;
    bool seed_given = false;
    std::string config;
    std::string out = ".";

    fs::path out_path(const char* name) const {
        fs::create_directories(out);
        return fs::path(out) / name;
    }
};

void cmd_gen(const GlobalArgs& g, int n_tasks, int task_offset) {
    EnvConfig cfg;
    if (!g.config.empty()) cfg = env_config_from_json(load_config(g.config));
    if (g.seed_given) cfg.seed = g.seed;
    cfg.validate();
    if (n_tasks < 1) throw std::invalid_argument("gen: --tasks must be >= 1");
    const Dataset ds = make_dataset(cfg, n_tasks, task_offset);
    const fs::path out = g.out_path("dataset.jsonl");
    save_dataset(ds, out.string());
    std::cout << "wrote " << out.string() << " (" << ds.tasks.size() << " tasks)\n";
}

void cmd_enumerate(int n_agents) {
    std::cout << count_to_string(count_paths(n_agents)) << "\n";
}

void cmd_search(const GlobalArgs& g, const std::string& data, const std::string& mode_name,
                const std::string& model_path, int k, int max_agents, int threads,
                double w_alt) {
    const Dataset ds = load_dataset(data);
    SearchLimits limits{max_agents};
    SearchMode mode;
    if (mode_name == "exhaustive")
        mode = SearchMode::exhaustive;
    else if (mode_name == "pruned")
        mode = SearchMode::pruned;
    else if (mode_name == "guided")
        mode = SearchMode::guided;
    else
        throw std::invalid_argument("search: unknown mode " + mode_name);
    RouterModel model;
    if (mode == SearchMode::guided) {
        if (model_path.empty()) throw std::invalid_argument("search: guided mode needs --model");
        model = load_router(model_path);
    }
    const std::vector<HarvestResult> harvests =
        harvest_dataset(ds.sim_context(), ds.tasks, mode,
                        mode == SearchMode::guided ? &model : nullptr, k, threads, limits);

    std::string lines, example_lines;
    std::int64_t total_paths = 0, solvable = 0, n_examples = 0;
    for (const HarvestResult& h : harvests) {
        lines += harvest_to_json(h).dump() + "\n";
        total_paths += h.paths_evaluated;
        solvable += h.best_path ? 1 : 0;
        for (const TrainingExample& e : extract_examples(h, w_alt)) {
            example_lines += example_to_json(e).dump() + "\n";
            ++n_examples;
        }
    }
    const fs::path harvest_path = g.out_path("harvest.jsonl");
    write_file(harvest_path, lines);
    const fs::path examples_path = g.out_path("examples.jsonl");
    write_file(examples_path, example_lines);

    const double mean_paths = static_cast<double>(total_paths) / harvests.size();
    const double full_space =
        harvests.empty() ? 0.0 : static_cast<double>(harvests.front().full_space);
    nlohmann::json stats{{"mode", mode_name},
                         {"n_tasks", harvests.size()},
                         {"total_paths_evaluated", total_paths},
                         {"mean_paths_evaluated", mean_paths},
                         {"sampled_fraction", full_space > 0.0 ? mean_paths / full_space : 0.0},
                         {"solvable_tasks", solvable},
                         {"n_examples", n_examples}};
    if (mode == SearchMode::guided) stats["k"] = k;
    const fs::path stats_path = g.out_path("search_stats.json");
    write_json_doc(stats_path, stats);
    std::cout << "wrote " << harvest_path.string() << ", " << examples_path.string() << " ("
              << n_examples << " examples), and " << stats_path.string() << "\n";
}

void cmd_train(const GlobalArgs& g, const std::string& data, const std::string& examples_path,
               const std::string& model_in, int embed_dim, int hidden_dim,
               std::uint64_t model_seed, bool model_seed_given) {
    const Dataset ds = load_dataset(data);
    const std::vector<TrainingExample> examples = load_examples(examples_path);
    TrainConfig cfg;
    if (!g.config.empty()) cfg = train_config_from_json(load_config(g.config));
    if (g.seed_given) cfg.seed = g.seed;
    const std::uint64_t mseed = model_seed_given ? model_seed : g.seed;
    const RouterModel base = model_in.empty() ? init_router(ds, embed_dim, hidden_dim, mseed)
                                              : load_router(model_in);
    const TrainResult result = train(base, ds.tasks, examples, cfg);
    const fs::path model_path = g.out_path("model.json");
    save_router(result.model, model_path.string());
    const fs::path loss_path = g.out_path("loss.csv");
    save_loss_csv(result.epoch_mean_loss, loss_path.string());
    std::cout << "wrote " << model_path.string() << " and " << loss_path.string() << " ("
              << examples.size() << " examples, final loss "
              << result.epoch_mean_loss.back() << ")\n";
}

void cmd_evolve(const GlobalArgs& g, const std::string& train_data,
                const std::string& heldout_data) {
    const Dataset train_ds = load_dataset(train_data);
    const Dataset heldout_ds = load_dataset(heldout_data);
    PipelineConfig cfg;
    if (!g.config.empty()) cfg = pipeline_config_from_json(load_config(g.config));
    if (g.seed_given) {
        cfg.model_seed = g.seed;
        cfg.train.seed = g.seed;
    }
    const PipelineResult result = evolve_pipeline(train_ds, heldout_ds, cfg);
    const fs::path model_path = g.out_path("model.json");
    save_router(result.model, model_path.string());
    nlohmann::json rounds = nlohmann::json::array();
    for (const RoundReport& r : result.rounds) rounds.push_back(round_report_to_json(r));
    nlohmann::json report{{"rounds", std::move(rounds)},
                          {"overall_mean_paths_evaluated", result.overall_mean_paths_evaluated},
                          {"overall_sampled_fraction", result.overall_sampled_fraction}};
    const fs::path rounds_path = g.out_path("rounds.json");
    write_json_doc(rounds_path, report);
    std::cout << "wrote " << model_path.string() << " and " << rounds_path.string() << "\n";
    for (const RoundReport& r : result.rounds)
        std::cout << "round " << r.round << ": examples " << r.cumulative_examples
                  << ", mean paths " << r.mean_paths_evaluated << ", heldout acc "
                  << r.heldout_accuracy << "%, heldout tokens " << r.heldout_mean_tokens << "\n";
}

void cmd_infer(const GlobalArgs& g, const std::string& model_path, const std::string& data,
               int max_steps) {
    const RouterModel model = load_router(model_path);
    const Dataset ds = load_dataset(data);
    const SimContext ctx = ds.sim_context();
    const int budget = max_steps > 0 ? max_steps : model.n_agents;
    std::string path_lines, trace_lines;
    for (const TaskInstance& task : ds.tasks) {
        const InferenceResult result = run_inference(model, ctx, task, budget);
        path_lines += path_to_json(result.path).dump() + "\n";
        for (std::size_t step = 0; step < result.decisions.size(); ++step)
            trace_lines += decision_to_json(result.decisions[step], task.task_id,
                                            static_cast<int>(step))
                               .dump() +
                           "\n";
    }
    const fs::path paths_path = g.out_path("paths.jsonl");
    write_file(paths_path, path_lines);
    const fs::path trace_path = g.out_path("trace.jsonl");
    write_file(trace_path, trace_lines);
    std::cout << "wrote " << paths_path.string() << " and " << trace_path.string() << "\n";
}

void cmd_eval(const GlobalArgs& g, const std::string& method, const std::string& data,
              const std::string& model_path, const std::vector<int>& order, int agent,
              int max_steps, double mu, double c, int top_n, int threads) {
    const Dataset ds = load_dataset(data);
    MethodSpec spec;
    spec.kind = method_from_name(method);
    spec.seed = g.seed;
    spec.order.assign(order.begin(), order.end());
    spec.agent = agent;
    spec.max_steps = max_steps;
    RouterModel model;
    if (spec.kind == MethodKind::strmac) {
        if (model_path.empty()) throw std::invalid_argument("eval: strmac method needs --model");
        model = load_router(model_path);
        spec.model = &model;
    }
    if (spec.kind == MethodKind::fixed_chain && spec.order.empty())
        throw std::invalid_argument("eval: fixed_chain needs --order");
    const EvalReport report = evaluate(ds.sim_context(), ds.tasks, spec, threads, mu, c);
    const fs::path json_path = g.out_path("report.json");
    write_json_doc(json_path, report_to_json(report));
    const std::string table = report_table(report, top_n);
    const fs::path table_path = g.out_path("report.txt");
    write_file(table_path, table);
    const fs::path svg_path = g.out_path("paths.svg");
    write_file(svg_path, report_svg(report, std::max(top_n, 8)));
    std::cout << table;
    std::cout << "wrote " << json_path.string() << ", " << table_path.string() << ", "
              << svg_path.string() << "\n";
}

void cmd_gradcheck(const GlobalArgs& g, int pairs, double step, double tolerance) {
    if (pairs < 1) throw std::invalid_argument("gradcheck: --pairs must be >= 1");
    EnvConfig env;
    env.n_agents = 4;
    env.seed = substream(g.seed, "gradcheck_env");
    const Dataset ds = make_dataset(env, 12);
    const SimContext ctx = ds.sim_context();
    std::vector<TrainingExample> examples;
    for (const TaskInstance& task : ds.tasks) {
        const std::vector<TrainingExample> fresh =
            extract_examples(pruned_search(ctx, task), 0.5);
        examples.insert(examples.end(), fresh.begin(), fresh.end());
    }
    if (examples.empty()) throw std::runtime_error("gradcheck: fixture produced no examples");

    GradCheckReport worst;
    worst.tolerance = tolerance;
    for (int i = 0; i < pairs; ++i) {
        const RouterModel model =
            init_router(ds, 16, 32, substream(g.seed, "gradcheck_model", i));
        const TrainingExample& ex = examples[i % examples.size()];
        const TaskInstance* task = nullptr;
        for (const TaskInstance& t : ds.tasks)
            if (t.task_id == ex.task_id) task = &t;
        const GradBuffer ga = loss_gradient(model, *task, ex);
        const GradBuffer gfd = finite_difference_gradient(model, *task, ex, step);
        const GradCheckReport r = compare_gradients(ga, gfd, tolerance);
        worst.w1 = std::max(worst.w1, r.w1);
        worst.b1 = std::max(worst.b1, r.b1);
        worst.w2 = std::max(worst.w2, r.w2);
        worst.b2 = std::max(worst.b2, r.b2);
        worst.stop = std::max(worst.stop, r.stop);
    }
    worst.pass = worst.max_error() < tolerance;
    const fs::path report_path = g.out_path("gradcheck.json");
    write_json_doc(report_path, gradcheck_report_to_json(worst));
    std::cout << "max relative error per block: w1 " << worst.w1 << ", b1 " << worst.b1
              << ", w2 " << worst.w2 << ", b2 " << worst.b2 << ", stop " << worst.stop << "\n"
              << (worst.pass ? "PASS" : "FAIL") << " (tolerance " << tolerance << ", " << pairs
              << " pairs)\n";
    if (!worst.pass) throw std::runtime_error("gradcheck: analytic gradient mismatch");
}

} // namespace

int run(std::vector<std::string> args) {
    CLI::App app{"state-aware multi-agent routing engine"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    auto* seed_opt = app.add_option("--seed", g.seed, "base seed for all randomness");
    app.add_option("--config", g.config, "JSON config file for the subcommand");
    app.add_option("--out", g.out, "output directory");

    auto* gen = app.add_subcommand("gen", "generate a dataset JSONL");
    int gen_tasks = 200, gen_offset = 0;
    gen->add_option("--tasks", gen_tasks, "number of tasks");
    gen->add_option("--task-offset", gen_offset, "first task id, for disjoint splits");

    auto* enumerate = app.add_subcommand("enumerate", "print the path count for N agents");
    int enum_agents = 0;
    enumerate->add_option("n_agents", enum_agents, "agent count")->required();

    auto* search = app.add_subcommand("search", "harvest execution paths from a dataset");
    std::string search_data, search_mode = "pruned", search_model;
    int search_k = 2, search_cap = 7, search_threads = 0;
    double search_w_alt = 0.5;
    search->add_option("--data", search_data, "dataset JSONL")->required();
    search->add_option("--mode", search_mode, "exhaustive | pruned | guided");
    search->add_option("--model", search_model, "router model JSON (guided mode)");
    search->add_option("--k", search_k, "guided expansion width");
    search->add_option("--max-agents", search_cap, "search cap");
    search->add_option("--threads", search_threads, "0 = all");
    search->add_option("--w-alt", search_w_alt, "alternative-path example weight");

    auto* train_cmd = app.add_subcommand("train", "train a router on harvested examples");
    std::string train_data, train_examples, train_model_in;
    int train_embed = 16, train_hidden = 32;
    std::uint64_t train_model_seed = 0;
    train_cmd->add_option("--data", train_data, "dataset JSONL")->required();
    train_cmd->add_option("--examples", train_examples, "examples JSONL")->required();
    train_cmd->add_option("--model-in", train_model_in, "warm-start model JSON");
    train_cmd->add_option("--embed-dim", train_embed, "embedding dimension");
    train_cmd->add_option("--hidden-dim", train_hidden, "encoder hidden width");
    auto* mseed_opt = train_cmd->add_option("--model-seed", train_model_seed, "router init seed");

    auto* evolve = app.add_subcommand("evolve", "run the self-evolving pipeline");
    std::string evolve_train, evolve_heldout;
    evolve->add_option("--train-data", evolve_train, "training dataset JSONL")->required();
    evolve->add_option("--heldout-data", evolve_heldout, "heldout dataset JSONL")->required();

    auto* infer = app.add_subcommand("infer", "run router inference over a dataset");
    std::string infer_model, infer_data;
    int infer_max_steps = 0;
    infer->add_option("--model", infer_model, "router model JSON")->required();
    infer->add_option("--data", infer_data, "dataset JSONL")->required();
    infer->add_option("--max-steps", infer_max_steps, "step budget, 0 = n_agents");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a method on a dataset");
    std::string eval_method, eval_data, eval_model;
    std::vector<int> eval_order;
    int eval_agent = 0, eval_max_steps = 0, eval_top = 3, eval_threads = 0;
    double eval_mu = 0.1, eval_c = 1000.0;
    eval_cmd
        ->add_option("--method", eval_method,
                     "strmac | random_chain | fixed_chain | single_agent | exhaustive_oracle")
        ->required();
    eval_cmd->add_option("--data", eval_data, "dataset JSONL")->required();
    eval_cmd->add_option("--model", eval_model, "router model JSON (strmac)");
    eval_cmd->add_option("--order", eval_order, "fixed_chain agent order")->delimiter(',');
    eval_cmd->add_option("--agent", eval_agent, "single_agent id");
    eval_cmd->add_option("--max-steps", eval_max_steps, "strmac budget, 0 = n_agents");
    eval_cmd->add_option("--mu", eval_mu, "CAS token penalty");
    eval_cmd->add_option("--c", eval_c, "CAS token scale");
    eval_cmd->add_option("--top", eval_top, "paths shown in table");
    eval_cmd->add_option("--threads", eval_threads, "0 = all");

    auto* gradcheck = app.add_subcommand("gradcheck", "check analytic gradients");
    int gc_pairs = 20;
    double gc_step = 1e-5, gc_tol = 1e-4;
    gradcheck->add_option("--pairs", gc_pairs, "model/example pairs");
    gradcheck->add_option("--step", gc_step, "finite-difference step");
    gradcheck->add_option("--tol", gc_tol, "max relative error");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
        g.seed_given = seed_opt->count() > 0;

        if (gen->parsed()) cmd_gen(g, gen_tasks, gen_offset);
        if (enumerate->parsed()) cmd_enumerate(enum_agents);
        if (search->parsed())
            cmd_search(g, search_data, search_mode, search_model, search_k, search_cap,
                       search_threads, search_w_alt);
        if (train_cmd->parsed())
            cmd_train(g, train_data, train_examples, train_model_in, train_embed, train_hidden,
                      train_model_seed, mseed_opt->count() > 0);
        if (evolve->parsed()) cmd_evolve(g, evolve_train, evolve_heldout);
        if (infer->parsed()) cmd_infer(g, infer_model, infer_data, infer_max_steps);
        if (eval_cmd->parsed())
            cmd_eval(g, eval_method, eval_data, eval_model, eval_order, eval_agent,
                     eval_max_steps, eval_mu, eval_c, eval_top, eval_threads);
        if (gradcheck->parsed()) cmd_gradcheck(g, gc_pairs, gc_step, gc_tol);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::overflow_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace strmac::cli
