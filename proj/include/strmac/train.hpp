#pragma once
// Contrastive training of the router: Eq.-3-style loss over the N+1
// actions, hand-derived analytic gradients, SGD/Adam loop, and a central
// finite-difference gradient checker.
//
// The loss sums over ALL agents (executed ones included) plus STOP:
// masking applies only at inference, negatives at training time follow
// the full contrastive sum. Agent embeddings stay frozen; only encoder
// parameters and the stop embedding receive gradients.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "route.hpp"

namespace strmac {

// target value meaning "the correct action is STOP".
inline constexpr int kStopTarget = -1;

struct TrainingExample {
    std::uint64_t task_id = 0;
    std::vector<StepRecord> history;
    int target = 0;      // agent id, or kStopTarget
    double weight = 1.0; // 1.0 on the optimal path, w_alt on alternatives
};

struct TrainConfig {
    double learning_rate = 0.01;
    int epochs = 30;
    int batch_size = 32;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    double w_alt = 0.5;
    std::string optimizer = "sgd"; // or "adam"
    int threads = 1;               // 0 = all available

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Gradient (or accumulator) with the same shape as the trainable blocks.
struct GradBuffer {
    std::vector<double> w1, b1, w2, b2, stop;
    double loss = 0.0;

    static GradBuffer zeros(const RouterModel& model);
};

// Weighted cross entropy of the target action under softmax of the cosine
// scores. include_stop drops the STOP action from the score vector (used
// by singleton fixtures); it must stay true whenever target is STOP.
double contrastive_loss(const RouterModel& model, const TaskInstance& task,
                        const TrainingExample& example, bool include_stop = true);

// Analytic gradient of contrastive_loss wrt encoder params and the stop
// embedding. Agent embeddings are frozen by contract and get no gradient.
GradBuffer loss_gradient(const RouterModel& model, const TaskInstance& task,
                         const TrainingExample& example, bool include_stop = true);

// Central-difference gradient of the same loss; the oracle the analytic
// version is checked against.
GradBuffer finite_difference_gradient(const RouterModel& model, const TaskInstance& task,
                                      const TrainingExample& example, double step,
                                      bool include_stop = true);

// Mean gradient and mean loss over the examples. The parallel version
// computes per-example gradients concurrently and reduces them serially
// in example order, so its output is bit-identical to the serial one.
GradBuffer batch_gradient_serial(const RouterModel& model, std::span<const TaskInstance> tasks,
                                 std::span<const TrainingExample> examples);
GradBuffer batch_gradient(const RouterModel& model, std::span<const TaskInstance> tasks,
                          std::span<const TrainingExample> examples, int threads);

struct TrainResult {
    RouterModel model;
    std::vector<double> epoch_mean_loss;
};

// Minibatch descent with per-epoch deterministic shuffling. Weight decay
// applies to w1/w2 only. tasks must cover every example's task_id.
TrainResult train(const RouterModel& model, std::span<const TaskInstance> tasks,
                  std::span<const TrainingExample> examples, const TrainConfig& cfg);

struct GradCheckReport {
    double w1 = 0.0, b1 = 0.0, w2 = 0.0, b2 = 0.0, stop = 0.0; // max rel error per block
    double tolerance = 0.0;
    bool pass = false;

    double max_error() const;
};

// Per-block relative error ||ga - gfd|| / (||gfd|| + 1e-12).
GradCheckReport compare_gradients(const GradBuffer& analytic, const GradBuffer& fd,
                                  double tolerance);

// Runs analytic-vs-central-difference comparison over the examples and
// reports the worst relative error seen per parameter block.
GradCheckReport gradient_check(const RouterModel& model, std::span<const TaskInstance> tasks,
                               std::span<const TrainingExample> examples, double step,
                               double tolerance);

nlohmann::json gradcheck_report_to_json(const GradCheckReport& r);

// Examples JSONL: {task_id, history:[{agent_id, answer, tokens}], target,
// weight} with STOP targets encoded as the string "stop".
nlohmann::json example_to_json(const TrainingExample& ex);
TrainingExample example_from_json(const nlohmann::json& j);
void save_examples(std::span<const TrainingExample> examples, const std::string& path);
std::vector<TrainingExample> load_examples(const std::string& path);

// Loss history CSV: header "epoch,mean_loss", shortest-roundtrip doubles.
void save_loss_csv(std::span<const double> epoch_mean_loss, const std::string& path);

} // namespace strmac
