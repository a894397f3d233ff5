#pragma once

#include "zsml/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zsml {

enum class Timing { pre, during, post };
enum class ColumnKind { numeric, categorical };
enum class ColumnRole { feature, group, target, stratifier };
enum class TaskKind { regression, classification };

std::string to_string(Timing t);
std::string to_string(ColumnKind k);
std::string to_string(ColumnRole r);
std::string to_string(TaskKind k);
Timing timing_from_string(const std::string& s);
ColumnKind column_kind_from_string(const std::string& s);
ColumnRole column_role_from_string(const std::string& s);
TaskKind task_kind_from_string(const std::string& s);

struct ColumnMeta {
    std::string name;
    Timing timing = Timing::pre;
    ColumnKind kind = ColumnKind::numeric;
    ColumnRole role = ColumnRole::feature;
    TaskKind task = TaskKind::regression; // meaningful for targets only
};

struct DifferentialPair {
    std::string post;
    std::string pre;
    std::string name; // output column; defaults to "<post>_diff"
};

/// Column declarations and study-level options that accompany a CSV file.
struct Manifest {
    std::vector<ColumnMeta> columns;
    std::vector<DifferentialPair> differential_pairs;
    bool auto_pair_suffix = false; // pair "<x>_post" with "<x>_pre"
    std::optional<std::string> stratifier;
    std::optional<std::string> reference_group;
    std::vector<std::string> excluded_holdout_groups;
    std::vector<std::string> na_values{"NA"};

    const ColumnMeta* find(const std::string& name) const;
    void validate() const;
    /// Explicit pairs plus suffix-derived pairs, with output names filled in.
    std::vector<DifferentialPair> resolved_pairs() const;
};

Manifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);

/// Numeric study table. The group column is held as dense ids rather than a
/// value column; categorical features are expanded one-hot ("name=level") and a
/// categorical stratifier is coded by level index. Missing cells hold NaN and
/// are flagged in `missing`; `imputed` remembers cells filled by imputation.
struct DatasetTable {
    std::vector<ColumnMeta> columns;
    MatrixXd values;
    MaskMatrix missing;
    MaskMatrix imputed;
    VectorXi group_ids;
    std::vector<std::string> group_names;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
    int group_count() const { return static_cast<int>(group_names.size()); }

    std::optional<Index> find(const std::string& name) const;
    Index index_of(const std::string& name) const;
    int group_id(const std::string& name) const;
    bool observed(Index row, Index col) const { return !missing(row, col) && !imputed(row, col); }

    std::vector<Index> columns_where(ColumnRole role) const;
    /// Feature columns used as model inputs (pre- and during-treatment).
    std::vector<Index> input_columns() const;
    std::vector<Index> rows_in_group(int g) const;

    DatasetTable select_rows(const std::vector<Index>& rows) const;
    DatasetTable select_columns(const std::vector<Index>& cols) const;
    void set_missing(Index row, Index col);
    void validate() const;
};

DatasetTable load_csv(const std::filesystem::path& manifest_path,
                      const std::filesystem::path& data_path);
DatasetTable parse_table(const Manifest& manifest, std::string_view csv_text);

/// Row mask helper: true where group != held_out.
std::vector<bool> rows_not_in_group(const DatasetTable& t, int held_out);

struct DropResult {
    DatasetTable table;
    std::vector<std::string> dropped;
};

/// Removes feature columns whose missing fraction (over `fit_rows`, or all rows
/// when empty) exceeds threshold. Group, target and stratifier columns stay.
DropResult drop_sparse_features(const DatasetTable& table, double threshold,
                                const std::vector<bool>& fit_rows = {});

struct ImputeResult {
    DatasetTable table;
    std::vector<std::pair<std::string, double>> means;
};

/// Fills missing feature cells in all rows with the mean over training rows.
ImputeResult impute_means(const DatasetTable& table, const std::vector<bool>& train_rows);

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;
    bool degenerate = false; // zero variance in both samples
};

/// Two-sided Welch (unequal-variance) two-sample t-test.
TTestResult two_sample_t_test(const VectorXd& a, const VectorXd& b);

struct ResidualStat {
    std::string column;
    double mean0 = 0.0; // stratum coded 0
    double mean1 = 0.0; // stratum coded 1
    double p_value = 1.0;
};

struct ResidualResult {
    DatasetTable table;
    std::vector<ResidualStat> stats; // only the residualized columns
};

/// Feature columns whose strata differ at level alpha (on training rows) are
/// replaced by value minus the training mean of the row's stratum. With
/// keep_original the residual is appended as "<name>_resid" instead.
ResidualResult residualize(const DatasetTable& table, const std::string& stratifier, double alpha,
                           const std::vector<bool>& train_rows, bool keep_original = false);

/// Appends post-minus-pre columns (timing=post). Rejects pairs that touch a target.
DatasetTable differential_features(const DatasetTable& table,
                                   const std::vector<DifferentialPair>& pairs);

enum class ScalingMode { none, normalize, standardize, standardize_vs_reference_group };
std::string to_string(ScalingMode m);
ScalingMode scaling_from_string(const std::string& s);

/// x -> (x - offset) / scale
struct ColumnScale {
    std::string column;
    double offset = 0.0;
    double scale = 1.0;
};

struct ScalingPlan {
    ScalingMode mode = ScalingMode::none;
    std::optional<int> reference_group;
    std::vector<ColumnScale> features;
    std::vector<ColumnScale> targets;
    std::vector<std::string> warnings;
};

/// Fits feature scaling on training rows; in reference-group mode the target
/// columns are additionally standardized with the reference group's statistics.
ScalingPlan fit_scaling(const DatasetTable& table, ScalingMode mode,
                        const std::vector<bool>& train_rows,
                        std::optional<int> reference_group = std::nullopt);
DatasetTable scale_features(const DatasetTable& table, const ScalingPlan& plan);

struct SplitSpec {
    int held_out_group = 0;
    std::vector<int> excluded_holdout_groups;
};

struct Split {
    DatasetTable train;
    DatasetTable test;
    std::vector<Index> train_rows;
    std::vector<Index> test_rows;
};

Split group_holdout_split(const DatasetTable& table, const SplitSpec& spec);

struct PreprocessConfig {
    double missing_threshold = 0.5;
    ScalingMode scaling = ScalingMode::none;
    bool residualize = true; // only when the manifest names a stratifier
    double residual_alpha = 0.05;
    bool residual_keep_original = false;
    bool differential = true;
};

nlohmann::json to_json(const PreprocessConfig& c);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);

/// Everything fitted on training rows, replayable on any table with the same
/// raw columns.
struct PreprocessPlan {
    PreprocessConfig config;
    std::vector<DifferentialPair> differential_pairs;
    std::vector<std::string> dropped_columns;
    std::vector<std::pair<std::string, double>> imputation_means;
    std::optional<std::string> stratifier;
    std::vector<ResidualStat> residuals;
    ScalingPlan scaling;
};

nlohmann::json to_json(const PreprocessPlan& p);
PreprocessPlan preprocess_plan_from_json(const nlohmann::json& j);

/// Order: differential features, sparse-column removal, mean imputation,
/// residualization, scaling. No statistic reads rows outside train_rows.
PreprocessPlan fit_preprocess(const DatasetTable& raw, const Manifest& manifest,
                              const std::vector<bool>& train_rows, const PreprocessConfig& config);
DatasetTable apply_preprocess(const DatasetTable& raw, const PreprocessPlan& plan);

} // namespace zsml
