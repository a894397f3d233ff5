#pragma once

#include "zsml/data.hpp"
#include "zsml/nn.hpp"
#include "zsml/tasks.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace zsml {

enum class HeadKind { linear, sigmoid };
enum class RegKind { l1, l2, both };

std::string to_string(HeadKind k);
std::string to_string(RegKind k);
HeadKind head_kind_from_string(const std::string& s);
RegKind reg_kind_from_string(const std::string& s);

struct BaseLearnerConfig {
    int n_layers = 2;      // feature-extractor layers
    int hidden_dim = 32;
    int embedding_dim = 16;
    Activation activation = Activation::relu;
    double dropout_rate = 0.1;
    bool dropout_every_layer = true; // false: only after the last extractor layer
    RegKind reg_kind = RegKind::l2;
    double reg_strength = 1e-4;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0.01;
    double momentum = 0.0; // sgd only
    int inner_iterations = 5;
    /// Output used for classification tasks; regression always uses a linear output.
    HeadKind head_kind = HeadKind::sigmoid;
    double embedding_init_scale = 0.05;

    Regularization regularization() const;
    void validate() const;
    /// Settings that fall outside the tuning grids of the reference study.
    std::vector<std::string> off_grid() const;
};

nlohmann::json to_json(const BaseLearnerConfig& c);
BaseLearnerConfig base_config_from_json(const nlohmann::json& j);

/// Feature extractor + per-group treatment embedding, concatenated into a
/// single weight-normalized output unit.
struct BaseLearnerWeights {
    std::vector<DenseLayer<double>> extractor;
    std::vector<double> dropout; // after each extractor layer
    MatrixXd embeddings;         // group_count x embedding_dim, one row per group
    DenseLayer<double> head;

    Index input_dim() const { return extractor.empty() ? 0 : extractor.front().in_dim(); }
    int group_count() const { return static_cast<int>(embeddings.rows()); }
};

BaseLearnerWeights init_base_learner(Index input_dim, int group_count, const BaseLearnerConfig& config,
                                     Rng& rng);

FlatParams<double> flatten(const BaseLearnerWeights& w);
void unflatten(const FlatParams<double>& flat, BaseLearnerWeights& w);

/// Rows for one task: model inputs, group ids and task values. Classification
/// values are already binarized to {0,1}.
struct TaskBatch {
    MatrixXd x;
    VectorXi groups;
    VectorXd y;
    TaskKind kind = TaskKind::regression;

    Index size() const { return x.rows(); }
};

/// Binarization used for classification targets: y > 0 -> 1, otherwise 0.
inline double binarize(double y) { return y > 0.0 ? 1.0 : 0.0; }

/// Builds a batch from `rows` of `table` for `task`, skipping rows whose task
/// value is missing or imputed. Inputs are `input_cols`.
TaskBatch make_batch(const DatasetTable& table, const std::vector<Index>& input_cols, const TaskSpec& task,
                     const std::vector<Index>& rows);
/// Same, over every row of the table.
TaskBatch make_batch(const DatasetTable& table, const std::vector<Index>& input_cols, const TaskSpec& task);
/// Inputs and groups only (no task values), for prediction.
TaskBatch make_inputs(const DatasetTable& table, const std::vector<Index>& input_cols);

bool uses_sigmoid(TaskKind kind, const BaseLearnerConfig& config);

/// Predictions for each row. Classification with a sigmoid head yields
/// probabilities in (0,1); otherwise raw outputs.
VectorXd forward(const BaseLearnerWeights& w, const MatrixXd& x, const VectorXi& groups, Mode mode,
                 bool sigmoid_output, Rng& rng);
/// Eval-mode convenience overload.
VectorXd predict(const BaseLearnerWeights& w, const MatrixXd& x, const VectorXi& groups, bool sigmoid_output);

/// Mean task loss plus regularization and its exact gradient. Regularization
/// covers extractor/head directions and the embedding rows present in the batch.
BackpropResult<double> base_backprop(const BaseLearnerWeights& w, const TaskBatch& batch,
                                     const BaseLearnerConfig& config, Mode mode, Rng& rng);

/// The k-shot update operator: inner_iterations full-batch optimizer steps on
/// `batch`, starting from fresh optimizer state. The input weights are not modified.
BaseLearnerWeights inner_update(const BaseLearnerWeights& w, const TaskBatch& batch,
                                const BaseLearnerConfig& config, Rng& rng);

/// Mean task loss (no regularization) in eval mode.
double task_loss(const BaseLearnerWeights& w, const TaskBatch& batch, const BaseLearnerConfig& config);

struct Checkpoint {
    BaseLearnerWeights weights;
    BaseLearnerConfig config;
    long iteration = 0;
    std::string config_hash;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

} // namespace zsml
