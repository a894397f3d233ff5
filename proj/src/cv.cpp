#include "zsml/eval.hpp"

#include "parallel.hpp"
#include "zsml/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>

namespace zsml {

nlohmann::json to_json(const ModelConfig& c) {
    return {{"preprocess", to_json(c.preprocess)},
            {"selection", to_json(c.selection)},
            {"base", to_json(c.base)},
            {"meta", to_json(c.meta)},
            {"baselines", to_json(c.baselines)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (j.contains("preprocess")) c.preprocess = preprocess_config_from_json(j.at("preprocess"));
    if (j.contains("selection")) c.selection = selection_config_from_json(j.at("selection"));
    if (j.contains("base")) c.base = base_config_from_json(j.at("base"));
    if (j.contains("meta")) c.meta = meta_config_from_json(j.at("meta"));
    if (j.contains("baselines")) c.baselines = baseline_config_from_json(j.at("baselines"));
    return c;
}

std::vector<std::string> MetricReport::models() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (std::find(out.begin(), out.end(), r.model) == out.end()) out.push_back(r.model);
    return out;
}

namespace {

SummaryRow summarize(const std::string& model, const std::string& task, const std::string& metric,
                     const std::vector<double>& values) {
    SummaryRow s{model, task, metric, 0.0, 0.0, static_cast<int>(values.size())};
    if (values.empty()) {
        s.mean = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stderr_ = std::sqrt(ss / static_cast<double>(values.size() - 1)) / std::sqrt(static_cast<double>(values.size()));
    }
    return s;
}

} // namespace

std::vector<SummaryRow> MetricReport::summary() const {
    std::vector<SummaryRow> out;
    std::vector<std::string> tasks;
    for (const auto& r : rows)
        if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    for (const auto& model : models()) {
        std::map<std::string, std::vector<double>> all;
        for (const auto& task : tasks) {
            std::map<std::string, std::vector<double>> per;
            for (const auto& r : rows)
                if (r.model == model && r.task == task && r.value) per[r.metric].push_back(*r.value);
            for (const auto& [metric, values] : per) {
                out.push_back(summarize(model, task, metric, values));
                all[metric].insert(all[metric].end(), values.begin(), values.end());
            }
        }
        for (const auto& [metric, values] : all) out.push_back(summarize(model, "*", metric, values));
    }
    return out;
}

DatasetTable withhold_targets(const DatasetTable& raw, int held_out) {
    DatasetTable out = raw;
    const auto targets = out.columns_where(ColumnRole::target);
    for (Index i = 0; i < out.rows(); ++i)
        if (out.group_ids(i) == held_out)
            for (Index c : targets) out.set_missing(i, c);
    return out;
}

std::vector<int> holdout_folds(const DatasetTable& raw, const Manifest& manifest, const CvConfig& cv) {
    if (raw.group_count() < 2) throw DataError("cross-validation needs at least two groups");
    std::set<int> excluded;
    for (const auto& name : manifest.excluded_holdout_groups) excluded.insert(raw.group_id(name));
    for (const auto& name : cv.excluded_holdout_groups) excluded.insert(raw.group_id(name));
    std::set<int> only;
    for (const auto& name : cv.holdout_groups) only.insert(raw.group_id(name));
    std::vector<int> folds;
    for (int g = 0; g < raw.group_count(); ++g) {
        if (excluded.count(g)) continue;
        if (!only.empty() && !only.count(g)) continue;
        if (raw.rows_in_group(g).empty()) continue;
        folds.push_back(g);
    }
    if (folds.empty()) throw ConfigError("no eligible hold-out groups");
    return folds;
}

namespace {

struct FoldOutput {
    std::vector<MetricRow> rows;
    std::vector<FoldPredictions> predictions;
    std::vector<std::string> warnings;
};

std::optional<double> score(TaskKind kind, const VectorXd& pred, const VectorXd& truth) {
    if (pred.size() == 0) return std::nullopt;
    if (kind == TaskKind::regression) return mse(pred, truth);
    return auc(pred, truth);
}

FoldOutput run_fold(const DatasetTable& raw, const Manifest& manifest, const ModelConfig& model, const CvConfig& cv,
                    int held_out) {
    FoldOutput out;
    const std::string fold_name = raw.group_names[static_cast<std::size_t>(held_out)];
    const std::vector<bool> train_mask = rows_not_in_group(raw, held_out);

    // Everything the models see comes from `visible`; `truth` is read only for scoring.
    const DatasetTable visible = withhold_targets(raw, held_out);
    const PreprocessPlan plan = fit_preprocess(visible, manifest, train_mask, model.preprocess);
    for (const auto& w : plan.scaling.warnings) out.warnings.push_back(fold_name + ": " + w);
    const DatasetTable processed = apply_preprocess(visible, plan);
    const DatasetTable truth = apply_preprocess(raw, plan);

    const Split split = group_holdout_split(processed, SplitSpec{held_out, {}});
    const DatasetTable truth_test = truth.select_rows(split.test_rows);

    const std::vector<TaskSpec> targets = target_tasks(split.train);
    const TaskSet tasks = select_training_tasks(split.train, targets, model.selection);
    const FoldData fold{&split.train, &split.test, processed.input_columns()};
    if (fold.input_cols.empty()) throw DataError("no pre- or during-treatment input features remain");

    const std::uint64_t fold_seed = derive_seed(cv.seed, static_cast<std::uint64_t>(held_out));
    const MetaTrainResult trained = meta_train(tasks, fold, model.base, model.meta, fold_seed);
    for (const auto& w : trained.warnings) out.warnings.push_back(fold_name + ": " + w);

    const TaskBatch test_inputs = make_inputs(split.test, fold.input_cols);
    for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        const TaskSpec& target = targets[ti];
        const Index tcol = truth_test.index_of(target.column);
        std::vector<Index> scored;
        for (Index i = 0; i < truth_test.rows(); ++i)
            if (!truth_test.missing(i, tcol)) scored.push_back(i);
        VectorXd y_test(static_cast<Index>(scored.size()));
        for (std::size_t i = 0; i < scored.size(); ++i) {
            const double v = truth_test.values(scored[i], tcol);
            y_test(static_cast<Index>(i)) = target.kind == TaskKind::classification ? binarize(v) : v;
        }
        auto pick = [&](const VectorXd& all) {
            VectorXd v(static_cast<Index>(scored.size()));
            for (std::size_t i = 0; i < scored.size(); ++i) v(static_cast<Index>(i)) = all(scored[i]);
            return v;
        };
        const std::string metric = target.kind == TaskKind::regression ? "mse" : "auc";

        auto record = [&](const std::string& name, const VectorXd& test_pred, const VectorXd& train_pred,
                          const VectorXd& train_y) {
            MetricRow row{fold_name, target.column, name, metric, std::nullopt, std::nullopt,
                          static_cast<Index>(scored.size()), {}};
            row.value = score(target.kind, pick(test_pred), y_test);
            row.train_value = score(target.kind, train_pred, train_y);
            if (!row.value) row.note = scored.empty() ? "no observed test labels" : "undefined: single-class test labels";
            else if (!row.train_value) row.note = "undefined: single-class training labels";
            out.rows.push_back(std::move(row));
            out.predictions.push_back({fold_name, target.column, name, test_pred});
        };

        Rng meta_rng(derive_seed(fold_seed, 100 + ti));
        const MetaTestResult meta = meta_test(trained.theta, target, fold, model.base, meta_rng);
        record("meta_learner", meta.test_predictions, meta.train_predictions, meta.train_labels);

        if (cv.base_learner) {
            Rng base_rng(derive_seed(fold_seed, 200 + ti));
            const MetaTestResult plain = meta_test(trained.initial, target, fold, model.base, base_rng);
            record("base_learner", plain.test_predictions, plain.train_predictions, plain.train_labels);
        }

        if (!cv.baselines) continue;
        const TaskBatch train_batch = make_batch(split.train, fold.input_cols, target);
        std::vector<BaselineKind> kinds;
        if (target.kind == TaskKind::regression)
            kinds = {BaselineKind::mean, BaselineKind::median, BaselineKind::knn, BaselineKind::ridge};
        else
            kinds = {BaselineKind::knn, BaselineKind::logistic};
        for (BaselineKind kind : kinds) {
            const BaselineOutput test =
                baseline_predict(kind, train_batch.x, train_batch.y, test_inputs.x, target.kind, model.baselines);
            const BaselineOutput train =
                baseline_predict(kind, train_batch.x, train_batch.y, train_batch.x, target.kind, model.baselines);
            for (const auto& w : test.warnings) out.warnings.push_back(fold_name + ": " + w);
            record(to_string(kind), test.predictions, train.predictions, train_batch.y);
        }
    }
    return out;
}

} // namespace

CvOutput run_cv_detailed(const DatasetTable& raw, const Manifest& manifest, const ModelConfig& model,
                         const CvConfig& cv) {
    raw.validate();
    const std::vector<int> folds = holdout_folds(raw, manifest, cv);
    auto results = detail::parallel_map<FoldOutput>(folds.size(), cv.jobs, [&](std::size_t i) {
        return run_fold(raw, manifest, model, cv, folds[i]);
    });
    CvOutput out;
    for (auto& r : results) {
        for (auto& row : r.rows) out.report.rows.push_back(std::move(row));
        for (auto& p : r.predictions) out.predictions.push_back(std::move(p));
        for (auto& w : r.warnings) out.report.warnings.push_back(std::move(w));
    }
    auto key = [](const auto& x) { return std::tie(x.held_out_group, x.task, x.model); };
    std::stable_sort(out.report.rows.begin(), out.report.rows.end(),
                     [&](const MetricRow& a, const MetricRow& b) { return key(a) < key(b); });
    std::stable_sort(out.predictions.begin(), out.predictions.end(),
                     [&](const FoldPredictions& a, const FoldPredictions& b) { return key(a) < key(b); });
    return out;
}

MetricReport run_cv(const DatasetTable& raw, const Manifest& manifest, const ModelConfig& model, const CvConfig& cv) {
    return run_cv_detailed(raw, manifest, model, cv).report;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<GapStats> overfit_gap(const MetricReport& report) {
    std::vector<GapStats> out;
    for (const auto& model : report.models()) {
        std::vector<double> gaps;
        for (const auto& r : report.rows)
            if (r.model == model && r.value && r.train_value) gaps.push_back(*r.value - *r.train_value);
        std::sort(gaps.begin(), gaps.end());
        GapStats s;
        s.model = model;
        s.n = static_cast<int>(gaps.size());
        s.min = quantile_sorted(gaps, 0.0);
        s.q1 = quantile_sorted(gaps, 0.25);
        s.median = quantile_sorted(gaps, 0.5);
        s.q3 = quantile_sorted(gaps, 0.75);
        s.max = quantile_sorted(gaps, 1.0);
        out.push_back(s);
    }
    return out;
}

} // namespace zsml
