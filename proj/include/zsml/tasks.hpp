#pragma once

#include "zsml/data.hpp"

#include <optional>
#include <string>
#include <vector>

namespace zsml {

enum class TaskRole { training_task, target_task };

struct TaskSpec {
    std::string column;
    TaskKind kind = TaskKind::regression;
    TaskRole role = TaskRole::training_task;
};

struct TaskSet {
    std::vector<TaskSpec> training;
    std::vector<TaskSpec> target;
    /// Relevance score of each training task, parallel to `training`
    /// (1.0 for every task under all_post).
    std::vector<double> relevance;
};

enum class SelectionMethod { all_post, pearson, mutual_info };
std::string to_string(SelectionMethod m);
SelectionMethod selection_from_string(const std::string& s);

struct SelectionConfig {
    SelectionMethod method = SelectionMethod::all_post;
    double keep_fraction = 1.0;
    int mi_bins = 10;
};

nlohmann::json to_json(const SelectionConfig& c);
SelectionConfig selection_config_from_json(const nlohmann::json& j);

/// Sample Pearson correlation; nullopt when either input has zero variance.
std::optional<double> pearson(const VectorXd& x, const VectorXd& y);

/// Plug-in mutual information (nats) of the bins x bins equal-width histogram.
double mutual_information(const VectorXd& x, const VectorXd& y, int bins = 10);

/// Plug-in mutual information of an explicit joint count table.
double mutual_information_from_counts(const MatrixXd& counts);

/// Target tasks are the table's target-role columns, in column order.
std::vector<TaskSpec> target_tasks(const DatasetTable& table);

/// Chooses training tasks among post-timing feature columns. Relevance is
/// computed on the rows of `train_table` only; ties keep column order.
TaskSet select_training_tasks(const DatasetTable& train_table, const std::vector<TaskSpec>& targets,
                              const SelectionConfig& config);

} // namespace zsml
