#pragma once

#include "zsml/base_learner.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace zsml {

// toward_adapted: theta + eps * (adapted - theta)
// away_from_adapted: theta + eps * (theta - adapted)
enum class UpdateDirection { toward_adapted, away_from_adapted };

std::string to_string(UpdateDirection d);
UpdateDirection update_direction_from_string(const std::string& s);

struct MetaConfig {
    int meta_iterations = 50;
    double epsilon0 = 0.5;
    int k = 10; // rows sampled per group
    int tasks_per_iteration = 1;
    UpdateDirection direction = UpdateDirection::toward_adapted;

    void validate() const;
    std::vector<std::string> off_grid() const;
};

nlohmann::json to_json(const MetaConfig& c);
MetaConfig meta_config_from_json(const nlohmann::json& j);

struct MetaState {
    BaseLearnerWeights theta;
    int t = 0;
    Rng rng;
};

/// eps0 * (1 - t / T): linear anneal from eps0 at t = 0 to eps0 / T at t = T - 1.
double epsilon_schedule(int t, int total, double eps0);

/// One sampled task with its training-group batch and held-out-group batch.
struct TaskSample {
    TaskSpec task;
    TaskBatch train;
    TaskBatch finetune;
};

/// Everything the meta-learner needs about one fold. The test table carries
/// only rows of the held-out group and must not contain its target values.
struct FoldData {
    const DatasetTable* train = nullptr;
    const DatasetTable* test = nullptr;
    std::vector<Index> input_cols;
};

/// Draws a training task uniformly, then k rows per training group (from the
/// train table) and k rows per held-out group (from the test table) with an
/// observed value for that task. Groups with fewer than k such rows are sampled
/// with replacement and `warnings` gets one note per (task, group).
TaskSample sample_task_batch(const TaskSet& tasks, const FoldData& fold, int k, Rng& rng,
                             std::vector<std::string>* warnings = nullptr);

/// Train on each sample's training batch then fine-tune on its held-out batch,
/// chaining across samples, then move theta by the annealed meta step.
MetaState meta_step(const MetaState& state, const std::vector<TaskSample>& samples,
                    const BaseLearnerConfig& base, const MetaConfig& meta);

struct MetaTrainResult {
    BaseLearnerWeights initial;
    BaseLearnerWeights theta;
    std::vector<std::string> warnings;
};

MetaState initial_meta_state(const FoldData& fold, const BaseLearnerConfig& base, std::uint64_t seed);

/// Runs meta-iterations from `state` until state.t == meta.meta_iterations.
MetaState continue_meta_train(MetaState state, const TaskSet& tasks, const FoldData& fold,
                              const BaseLearnerConfig& base, const MetaConfig& meta,
                              std::vector<std::string>* warnings = nullptr);

MetaTrainResult meta_train(const TaskSet& tasks, const FoldData& fold, const BaseLearnerConfig& base,
                           const MetaConfig& meta, std::uint64_t seed);

struct MetaTestResult {
    BaseLearnerWeights adapted;
    VectorXd test_predictions;  // one per row of the test table
    VectorXd train_predictions; // rows of the target batch built from the train table
    VectorXd train_labels;
};

/// Adapts theta on every training row with an observed target value, then
/// predicts the held-out rows in eval mode. Never reads target values of the
/// test table.
MetaTestResult meta_test(const BaseLearnerWeights& theta, const TaskSpec& target, const FoldData& fold,
                         const BaseLearnerConfig& base, Rng& rng);

void save_meta_state(const std::filesystem::path& path, const MetaState& state, const BaseLearnerConfig& base);
MetaState load_meta_state(const std::filesystem::path& path, BaseLearnerConfig* base = nullptr);

} // namespace zsml
