#pragma once

#include "zsml/base_learner.hpp"
#include "zsml/data.hpp"
#include "zsml/meta.hpp"
#include "zsml/tasks.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zsml {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Rank-sum (Mann-Whitney) AUC with midranks for ties: the probability that a
/// random positive outscores a random negative, ties counting one half.
/// nullopt when only one class is present.
std::optional<double> auc(const VectorXd& scores, const VectorXd& labels);

double mse(const VectorXd& pred, const VectorXd& y);

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

enum class BaselineKind { mean, median, knn, ridge, logistic };
std::string to_string(BaselineKind k);
BaselineKind baseline_from_string(const std::string& s);

struct BaselineConfig {
    int knn_k = 5;
    double ridge_lambda = 1e-3;
    double logistic_lambda = 1e-3;
    int max_iterations = 20000;
    double tolerance = 1e-12; // on the squared gradient norm
};

nlohmann::json to_json(const BaselineConfig& c);
BaselineConfig baseline_config_from_json(const nlohmann::json& j);

/// Linear model fitted by gradient descent; `slope` is in raw feature units.
struct LinearFit {
    VectorXd slope;
    double intercept = 0.0;
    int iterations = 0;
};

/// Minimizes mean squared error + lambda * ||slope||^2.
LinearFit fit_ridge(const MatrixXd& x, const VectorXd& y, double lambda, const BaselineConfig& config = {});
/// Minimizes mean binary cross-entropy + lambda * ||slope||^2 for labels in {0,1}.
LinearFit fit_logistic(const MatrixXd& x, const VectorXd& y, double lambda, const BaselineConfig& config = {});

struct BaselineOutput {
    VectorXd predictions;
    std::vector<std::string> warnings;
};

/// Fits on (train_x, train_y) and predicts test_x. For classification,
/// train_y holds {0,1} labels and knn returns the positive fraction.
BaselineOutput baseline_predict(BaselineKind kind, const MatrixXd& train_x, const VectorXd& train_y,
                                const MatrixXd& test_x, TaskKind task, const BaselineConfig& config = {});

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct ModelConfig {
    PreprocessConfig preprocess;
    SelectionConfig selection;
    BaseLearnerConfig base;
    MetaConfig meta;
    BaselineConfig baselines;
};

nlohmann::json to_json(const ModelConfig& c);
/// Reads the "preprocess", "selection", "base", "meta" and "baselines" sections
/// of `j`; absent sections keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CvConfig {
    std::vector<std::string> excluded_holdout_groups; // merged with the manifest's list
    std::vector<std::string> holdout_groups;          // empty: every eligible group
    std::uint64_t seed = 0;
    int jobs = 1;
    bool baselines = true;
    bool base_learner = true;
};

struct MetricRow {
    std::string held_out_group;
    std::string task;
    std::string model;
    std::string metric; // "mse" or "auc"
    std::optional<double> value;
    std::optional<double> train_value;
    Index n_test = 0;
    std::string note;
};

struct SummaryRow {
    std::string model;
    std::string task; // "*" for the across-task aggregate
    std::string metric;
    double mean = 0.0;
    double stderr_ = 0.0; // sample sd / sqrt(n)
    int n = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    std::vector<std::string> warnings;

    std::vector<std::string> models() const;
    std::vector<SummaryRow> summary() const;
};

/// Test predictions of one model on one fold, kept for inspection.
struct FoldPredictions {
    std::string held_out_group;
    std::string task;
    std::string model;
    VectorXd predictions;
};

struct CvOutput {
    MetricReport report;
    std::vector<FoldPredictions> predictions;
};

/// Replaces every target value of the held-out group with a missing cell.
DatasetTable withhold_targets(const DatasetTable& raw, int held_out);

/// Groups that become test folds under the manifest and cv exclusions.
std::vector<int> holdout_folds(const DatasetTable& raw, const Manifest& manifest, const CvConfig& cv);

/// Group-holdout cross-validation of the meta-learner, the plain base-learner
/// (same initial weights, no meta-training) and the baselines.
CvOutput run_cv_detailed(const DatasetTable& raw, const Manifest& manifest, const ModelConfig& model,
                         const CvConfig& cv);
MetricReport run_cv(const DatasetTable& raw, const Manifest& manifest, const ModelConfig& model, const CvConfig& cv);

struct GapStats {
    std::string model;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    int n = 0;
};

/// Linear-interpolation quantile of an ascending-sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q);

/// Per-model distribution of (test metric - train metric).
std::vector<GapStats> overfit_gap(const MetricReport& report);

// ---------------------------------------------------------------------------
// Randomized grid search
// ---------------------------------------------------------------------------

struct SearchSpace {
    std::vector<std::string> selection_method{"all_post", "pearson", "mutual_info"};
    std::vector<double> keep_fraction{0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99};
    std::vector<std::string> scaling{"none", "normalize", "standardize"};
    std::vector<double> missing_threshold{0.25, 0.5, 0.75};
    std::vector<int> n_layers{2, 4, 6, 8};
    std::vector<int> hidden_dim{8, 16, 32, 64, 128};
    std::vector<int> embedding_dim{8, 16, 32, 64, 128};
    std::vector<std::string> activation{"relu", "tanh"};
    std::vector<std::string> optimizer{"adam", "sgd"};
    std::vector<double> learning_rate{0.001, 0.01, 0.05};
    std::vector<double> dropout_rate{0.05, 0.1, 0.2};
    std::vector<std::string> reg_kind{"l1", "l2", "both"};
    std::vector<double> reg_strength{1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
    std::vector<int> inner_iterations{1, 2, 5};
    std::vector<int> meta_iterations{20, 30, 40, 50, 60, 70, 80, 90, 100};
    std::vector<double> epsilon0{0.25, 0.5, 0.75};
    std::vector<int> k{5, 10, 15};
    std::vector<int> tasks_per_iteration{1, 2, 5};

    void validate() const;
    /// Draws one configuration; fields outside the space come from `base`.
    ModelConfig sample(const ModelConfig& base, Rng& rng) const;
    /// True when every searched field of `c` lies in its grid.
    bool contains(const ModelConfig& c) const;
};

nlohmann::json to_json(const SearchSpace& s);
SearchSpace search_space_from_json(const nlohmann::json& j);

struct Candidate {
    int index = 0;
    ModelConfig config;
    std::optional<double> score;
    std::string metric;
    std::string error;
};

struct SearchResult {
    Candidate best;
    std::vector<Candidate> leaderboard; // best first; failed candidates last
};

/// Samples `budget` candidates, scores each by the mean meta-learner metric
/// over every fold and target task, and ranks them (AUC descending, MSE ascending).
SearchResult grid_search(const SearchSpace& space, const DatasetTable& raw, const Manifest& manifest,
                         const ModelConfig& defaults, const CvConfig& cv, int budget, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// Identifies the run in every artifact.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string tool_version;
};

std::string report_csv(const MetricReport& report, const Provenance& prov);
nlohmann::json report_summary_json(const MetricReport& report, const Provenance& prov);
std::string summary_plot_csv(const MetricReport& report, const Provenance& prov);
std::string gap_plot_csv(const MetricReport& report, const Provenance& prov);
MetricReport parse_report_csv(std::string_view text);

std::string leaderboard_csv(const SearchResult& result, const Provenance& prov);

void write_text(const std::filesystem::path& path, const std::string& content);

} // namespace zsml
