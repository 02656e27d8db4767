#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "strmac/prng.hpp"
#include "strmac/train.hpp"

using namespace strmac;

namespace {

// Hand-built two-agent model over a 3-d embedding space with orthogonal
// unit embeddings and an encoder pinned to output e_0 for every state.
struct TwoAgentFixture {
    RouterModel model;
    TaskInstance task;

    TwoAgentFixture() {
        model.n_agents = 2;
        model.feature_dim = 2;
        model.n_classes = 2;
        model.embed_dim = 3;
        model.encoder.input_dim = state_feature_dim(2, 2, 2);
        model.encoder.hidden_dim = 2;
        model.encoder.embed_dim = 3;
        model.encoder.w1.assign(2 * model.encoder.input_dim, 0.0);
        model.encoder.b1.assign(2, 0.0);
        model.encoder.w2.assign(3 * 2, 0.0);
        model.encoder.b2 = {1.0, 0.0, 0.0};
        model.agent_embeddings = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
        model.stop_embedding = {0.0, 0.0, 1.0};
        model.validate();

        task.task_id = 11;
        task.query_features = {1.0, 0.0};
        task.label = 0;
        task.agent_ids = {0, 1};
    }
};

TrainingExample example_for(std::uint64_t task_id, std::vector<StepRecord> history, int target,
                            double weight = 1.0) {
    TrainingExample ex;
    ex.task_id = task_id;
    ex.history = std::move(history);
    ex.target = target;
    ex.weight = weight;
    return ex;
}

// Separable benchmark: agent expertise = standard basis, every query a
// small perturbation of one basis direction. The right first pick is the
// nearest-expertise agent and the right second action is STOP.
struct SeparableFixture {
    Dataset ds;
    std::vector<TrainingExample> examples;

    explicit SeparableFixture(int tasks_per_agent = 25) {
        const int n = 4;
        ds.n_classes = 2;
        ds.evidence_threshold = 0.3;
        ds.env_seed = 5;
        for (int i = 0; i < n; ++i) {
            AgentProfile p;
            p.agent_id = i;
            p.expertise.assign(n, 0.0);
            p.expertise[static_cast<std::size_t>(i)] = 1.0;
            p.base_token_cost = 10 + i;
            p.per_history_token_cost = 1;
            ds.profiles.push_back(std::move(p));
        }
        SplitMix64 rng(99);
        std::uint64_t id = 0;
        for (int i = 0; i < n; ++i) {
            for (int t = 0; t < tasks_per_agent; ++t) {
                TaskInstance task;
                task.task_id = id++;
                task.query_features.assign(n, 0.0);
                for (double& x : task.query_features) x = 0.05 * rng.next_gaussian();
                task.query_features[static_cast<std::size_t>(i)] += 1.0;
                normalize(task.query_features);
                task.label = i % ds.n_classes;
                task.agent_ids = {0, 1, 2, 3};
                examples.push_back(example_for(task.task_id, {}, i));
                examples.push_back(example_for(
                    task.task_id, {{i, task.label, 10 + i}}, kStopTarget));
                ds.tasks.push_back(std::move(task));
            }
        }
    }
};

int argmax_action(const RouterModel& model, const TaskInstance& task,
                  const TrainingExample& ex) {
    const SystemState state{task, ex.history};
    const std::vector<double> x = featurize_state(state, model.n_agents, model.n_classes);
    const std::vector<double> z = encode(model.encoder, x);
    std::vector<double> stop_dir = model.stop_embedding;
    normalize(stop_dir);
    int best = 0;
    double best_score = dot(z, model.agent_embedding(0));
    for (int i = 1; i < model.n_agents; ++i) {
        const double s = dot(z, model.agent_embedding(i));
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    if (dot(z, stop_dir) > best_score) best = model.n_agents;
    return best;
}

} // namespace

TEST_CASE("TrainConfig validates and round-trips through JSON") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.optimizer = "newton";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = TrainConfig{};
    cfg.epochs = 12;
    cfg.optimizer = "adam";
    const TrainConfig rt = train_config_from_json(train_config_to_json(cfg));
    CHECK(train_config_to_json(rt) == train_config_to_json(cfg));

    // Partial JSON keeps defaults for missing keys.
    const TrainConfig partial = train_config_from_json(nlohmann::json{{"epochs", 3}});
    CHECK(partial.epochs == 3);
    CHECK(partial.learning_rate == TrainConfig{}.learning_rate);
    CHECK(partial.optimizer == "sgd");
}

TEST_CASE("a single-action softmax has exactly zero loss") {
    EnvConfig cfg;
    cfg.n_agents = 1;
    cfg.feature_dim = 2;
    const Dataset ds = make_dataset(cfg, 3);
    const RouterModel model = init_router(ds, 4, 8, 1);
    const TrainingExample ex = example_for(ds.tasks[0].task_id, {}, 0);
    CHECK(contrastive_loss(model, ds.tasks[0], ex, false) == 0.0);
}

TEST_CASE("identical scores for M actions give loss log M") {
    // All agent embeddings equal and the stop embedding equal too, so every
    // score coincides no matter where the encoder lands.
    TwoAgentFixture f;
    f.model.agent_embeddings = {0.0, 0.0, 1.0, 0.0, 0.0, 1.0};
    f.model.stop_embedding = {0.0, 0.0, 1.0};
    const TrainingExample ex = example_for(11, {}, 1);
    CHECK(std::abs(contrastive_loss(f.model, f.task, ex, true) - std::log(3.0)) <= 1e-9);
    CHECK(std::abs(contrastive_loss(f.model, f.task, ex, false) - std::log(2.0)) <= 1e-9);
}

TEST_CASE("the aligned-vs-orthogonal two-action case hits log(1 + exp(-1))") {
    const TwoAgentFixture f; // z = e_0, scores (1, 0)
    const TrainingExample ex = example_for(11, {}, 0);
    const double loss = contrastive_loss(f.model, f.task, ex, false);
    CHECK(std::abs(loss - std::log(1.0 + std::exp(-1.0))) <= 1e-6);
    CHECK(loss == doctest::Approx(0.313262).epsilon(1e-5));
}

TEST_CASE("loss and gradient scale linearly in the example weight") {
    const TwoAgentFixture f;
    const TrainingExample w1 = example_for(11, {}, 1, 1.0);
    const TrainingExample w2 = example_for(11, {}, 1, 2.0);
    CHECK(contrastive_loss(f.model, f.task, w2) ==
          doctest::Approx(2.0 * contrastive_loss(f.model, f.task, w1)).epsilon(1e-15));

    // Gradient of the pinned encoder is zero in w1/w2 rows only through the
    // trace, so compare the nonzero blocks.
    const GradBuffer g1 = loss_gradient(f.model, f.task, w1);
    const GradBuffer g2 = loss_gradient(f.model, f.task, w2);
    for (std::size_t i = 0; i < g1.b2.size(); ++i)
        CHECK(g2.b2[i] == doctest::Approx(2.0 * g1.b2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < g1.stop.size(); ++i)
        CHECK(g2.stop[i] == doctest::Approx(2.0 * g1.stop[i]).epsilon(1e-12));
}

TEST_CASE("fresh models keep the loss under log M + 2") {
    const Dataset ds = make_dataset(EnvConfig{}, 20);
    const SimContext ctx = ds.sim_context();
    const double ceiling = std::log(6.0) + 2.0; // five agents plus stop
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RouterModel model = init_router(ds, 16, 32, seed);
        for (const TaskInstance& task : ds.tasks) {
            const ExecutionPath p = rollout(ctx, task, task.agent_ids);
            // One example per prefix depth, target = the next agent.
            for (std::size_t depth = 0; depth + 1 < p.steps.size(); ++depth) {
                const TrainingExample ex = example_for(
                    task.task_id,
                    std::vector<StepRecord>(p.steps.begin(),
                                            p.steps.begin() + static_cast<std::ptrdiff_t>(depth)),
                    p.steps[depth].agent_id);
                CHECK(contrastive_loss(model, task, ex) <= ceiling);
            }
        }
    }
}

TEST_CASE("example validation rejects malformed training rows") {
    const TwoAgentFixture f;
    CHECK_THROWS_AS(contrastive_loss(f.model, f.task, example_for(11, {}, 0, 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(f.model, f.task, example_for(11, {}, 5)),
                    std::invalid_argument);
    CHECK_THROWS_AS(contrastive_loss(f.model, f.task, example_for(11, {}, kStopTarget)),
                    std::invalid_argument); // STOP on empty history
    CHECK_THROWS_AS(
        contrastive_loss(f.model, f.task, example_for(11, {{0, 0, 5}}, kStopTarget), false),
        std::invalid_argument); // STOP target while STOP is excluded
    CHECK_THROWS_AS(contrastive_loss(f.model, f.task, example_for(11, {{1, 0, 5}}, 1)),
                    std::invalid_argument); // target already executed
    CHECK_THROWS_AS(contrastive_loss(f.model, f.task, example_for(12, {}, 0)),
                    std::invalid_argument); // task id mismatch
}

TEST_CASE("analytic gradients match central differences on 20 random pairs") {
    const Dataset ds = make_dataset(EnvConfig{}, 8);
    const SimContext ctx = ds.sim_context();
    SplitMix64 rng(31);
    for (int pair = 0; pair < 20; ++pair) {
        const RouterModel model = init_router(ds, 16, 32, static_cast<std::uint64_t>(100 + pair));
        const TaskInstance& task =
            ds.tasks[static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(ds.tasks.size()) - 1))];

        // Random prefix of a random rollout, with an agent or STOP target.
        std::vector<AgentId> seq = task.agent_ids;
        for (std::size_t i = seq.size() - 1; i > 0; --i)
            std::swap(seq[i], seq[static_cast<std::size_t>(rng.next_int(0, static_cast<std::int64_t>(i)))]);
        const ExecutionPath p = rollout(ctx, task, seq);
        const auto depth = static_cast<std::size_t>(rng.next_int(1, static_cast<std::int64_t>(p.steps.size()) - 1));
        std::vector<StepRecord> hist(p.steps.begin(),
                                     p.steps.begin() + static_cast<std::ptrdiff_t>(depth));
        const bool use_stop = rng.next_int(0, 2) == 0;
        const int target = use_stop ? kStopTarget : p.steps[depth].agent_id;
        const TrainingExample ex =
            example_for(task.task_id, std::move(hist), target, use_stop ? 1.0 : 0.5);

        const GradBuffer ga = loss_gradient(model, task, ex);
        const GradBuffer gfd = finite_difference_gradient(model, task, ex, 1e-5);
        const GradCheckReport r = compare_gradients(ga, gfd, 1e-4);
        CHECK(r.pass);
        CHECK(r.max_error() < 1e-4);
    }
}

TEST_CASE("gradient_check aggregates the worst block error") {
    const Dataset ds = make_dataset(EnvConfig{}, 4);
    const RouterModel model = init_router(ds, 16, 32, 3);
    std::vector<TrainingExample> exs = {example_for(0, {}, 2), example_for(1, {}, 0),
                                        example_for(2, {{1, 0, 60}}, kStopTarget)};
    const GradCheckReport r = gradient_check(model, ds.tasks, exs, 1e-5, 1e-4);
    CHECK(r.pass);
    CHECK(r.max_error() == std::max({r.w1, r.b1, r.w2, r.b2, r.stop}));
    const nlohmann::json j = gradcheck_report_to_json(r);
    CHECK(j["pass"] == true);
    CHECK(j["tolerance"] == 1e-4);
}

TEST_CASE("compare_gradients flags a corrupted analytic gradient") {
    const Dataset ds = make_dataset(EnvConfig{}, 2);
    const RouterModel model = init_router(ds, 16, 32, 5);
    const TrainingExample ex = example_for(0, {}, 1);
    GradBuffer ga = loss_gradient(model, ds.tasks[0], ex);
    const GradBuffer gfd = finite_difference_gradient(model, ds.tasks[0], ex, 1e-5);
    ga.w1[7] += 0.1 * (std::abs(ga.w1[7]) + 1.0);
    const GradCheckReport r = compare_gradients(ga, gfd, 1e-4);
    CHECK_FALSE(r.pass);
    CHECK(r.w1 > 1e-4);
}

TEST_CASE("batch gradients are the mean and match across serial and parallel") {
    const Dataset ds = make_dataset(EnvConfig{}, 6);
    const RouterModel model = init_router(ds, 16, 32, 9);
    std::vector<TrainingExample> exs;
    for (std::uint64_t t = 0; t < 6; ++t)
        exs.push_back(example_for(t, {}, static_cast<int>(t % 5)));

    const GradBuffer serial = batch_gradient_serial(model, ds.tasks, exs);
    for (int threads : {1, 2, 4, 0}) {
        const GradBuffer par = batch_gradient(model, ds.tasks, exs, threads);
        CHECK(par.w1 == serial.w1);
        CHECK(par.b1 == serial.b1);
        CHECK(par.w2 == serial.w2);
        CHECK(par.b2 == serial.b2);
        CHECK(par.stop == serial.stop);
        CHECK(par.loss == serial.loss);
    }

    // Mean of per-example losses.
    double mean = 0.0;
    for (const TrainingExample& ex : exs)
        mean += contrastive_loss(model, ds.tasks[ex.task_id], ex);
    mean /= static_cast<double>(exs.size());
    CHECK(serial.loss == doctest::Approx(mean).epsilon(1e-12));

    CHECK_THROWS_AS(batch_gradient_serial(model, ds.tasks, {}), std::invalid_argument);
}

TEST_CASE("learning_rate zero returns bit-identical parameters") {
    const Dataset ds = make_dataset(EnvConfig{}, 5);
    const RouterModel model = init_router(ds, 16, 32, 2);
    std::vector<TrainingExample> exs;
    for (std::uint64_t t = 0; t < 5; ++t) exs.push_back(example_for(t, {}, static_cast<int>(t)));
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    const TrainResult r = train(model, ds.tasks, exs, cfg);
    CHECK(router_to_json(r.model) == router_to_json(model));
    CHECK(r.epoch_mean_loss.size() == 3);
    CHECK(r.epoch_mean_loss[0] == r.epoch_mean_loss[2]);
}

TEST_CASE("training moves the encoder but never the agent embeddings") {
    const Dataset ds = make_dataset(EnvConfig{}, 10);
    const RouterModel model = init_router(ds, 16, 32, 4);
    std::vector<TrainingExample> exs;
    for (std::uint64_t t = 0; t < 10; ++t)
        exs.push_back(example_for(t, {}, static_cast<int>(t % 5)));
    TrainConfig cfg;
    cfg.epochs = 5;
    const TrainResult r = train(model, ds.tasks, exs, cfg);
    CHECK(r.model.agent_embeddings == model.agent_embeddings);
    CHECK(r.model.temperature == model.temperature);
    CHECK(r.model.encoder.w1 != model.encoder.w1);
    CHECK(r.model.stop_embedding != model.stop_embedding);

    // Same seed, same result, bit for bit.
    const TrainResult again = train(model, ds.tasks, exs, cfg);
    CHECK(router_to_json(again.model) == router_to_json(r.model));
    CHECK(again.epoch_mean_loss == r.epoch_mean_loss);

    // Mean loss over the last epoch never exceeds the first.
    CHECK(r.epoch_mean_loss.back() <= r.epoch_mean_loss.front() + 1e-6);
}

TEST_CASE("adam also drives the loss down and differs from sgd") {
    const Dataset ds = make_dataset(EnvConfig{}, 10);
    const RouterModel model = init_router(ds, 16, 32, 4);
    std::vector<TrainingExample> exs;
    for (std::uint64_t t = 0; t < 10; ++t)
        exs.push_back(example_for(t, {}, static_cast<int>(t % 5)));
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.optimizer = "adam";
    const TrainResult adam = train(model, ds.tasks, exs, cfg);
    CHECK(adam.epoch_mean_loss.back() < adam.epoch_mean_loss.front());
    cfg.optimizer = "sgd";
    const TrainResult sgd = train(model, ds.tasks, exs, cfg);
    CHECK(router_to_json(adam.model) != router_to_json(sgd.model));
}

TEST_CASE("the separable fixture trains to at least 95 percent argmax accuracy") {
    const SeparableFixture f;
    const RouterModel model = init_router(f.ds, 16, 32, 21);
    TrainConfig cfg;
    cfg.optimizer = "adam";
    cfg.learning_rate = 0.005;
    cfg.epochs = 40;
    cfg.seed = 13;
    const TrainResult r = train(model, f.ds.tasks, f.examples, cfg);

    int hits = 0;
    for (const TrainingExample& ex : f.examples) {
        const int want = ex.target == kStopTarget ? r.model.n_agents : ex.target;
        hits += argmax_action(r.model, f.ds.tasks[ex.task_id], ex) == want ? 1 : 0;
    }
    const double accuracy =
        100.0 * static_cast<double>(hits) / static_cast<double>(f.examples.size());
    CHECK(accuracy >= 95.0);
}

TEST_CASE("training examples round-trip through JSONL") {
    std::vector<TrainingExample> exs = {
        example_for(3, {{1, 2, 70}, {0, 1, 55}}, 4, 0.5),
        example_for(8, {{2, 0, 90}}, kStopTarget, 1.0),
    };
    const nlohmann::json j = example_to_json(exs[1]);
    CHECK(j["target"] == "stop");
    CHECK(example_to_json(exs[0])["target"] == 4);

    const auto path = std::filesystem::temp_directory_path() / "strmac_test_examples.jsonl";
    save_examples(exs, path.string());
    const std::vector<TrainingExample> rt = load_examples(path.string());
    REQUIRE(rt.size() == exs.size());
    for (std::size_t i = 0; i < exs.size(); ++i)
        CHECK(example_to_json(rt[i]) == example_to_json(exs[i]));
    std::remove(path.string().c_str());

    CHECK_THROWS_AS(load_examples("/nonexistent/examples.jsonl"), std::invalid_argument);
    CHECK_THROWS_AS(example_from_json(nlohmann::json{{"task_id", 0},
                                                     {"history", nlohmann::json::array()},
                                                     {"target", "halt"},
                                                     {"weight", 1.0}}),
                    std::invalid_argument);
}

TEST_CASE("loss CSV uses the documented header and round-trip doubles") {
    const std::vector<double> losses = {1.7912347, 1.25, 0.03125};
    const auto path = std::filesystem::temp_directory_path() / "strmac_test_loss.csv";
    save_loss_csv(losses, path.string());
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "epoch,mean_loss");
    int row = 0;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        REQUIRE(comma != std::string::npos);
        CHECK(std::stoi(line.substr(0, comma)) == row);
        CHECK(std::stod(line.substr(comma + 1)) == losses[static_cast<std::size_t>(row)]);
        ++row;
    }
    CHECK(row == 3);
    std::remove(path.string().c_str());
}
