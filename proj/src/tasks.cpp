#include "zsml/tasks.hpp"

#include "zsml/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace zsml {

std::string to_string(SelectionMethod m) {
    switch (m) {
    case SelectionMethod::all_post: return "all_post";
    case SelectionMethod::pearson: return "pearson";
    case SelectionMethod::mutual_info: return "mutual_info";
    }
    return "?";
}

SelectionMethod selection_from_string(const std::string& s) {
    if (s == "all_post") return SelectionMethod::all_post;
    if (s == "pearson") return SelectionMethod::pearson;
    if (s == "mutual_info") return SelectionMethod::mutual_info;
    throw ConfigError("unknown selection method '" + s + "'");
}

nlohmann::json to_json(const SelectionConfig& c) {
    return {{"method", to_string(c.method)}, {"keep_fraction", c.keep_fraction}, {"mi_bins", c.mi_bins}};
}

SelectionConfig selection_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("selection: expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (key != "method" && key != "keep_fraction" && key != "mi_bins")
            throw ConfigError("selection: unknown key '" + key + "'");
    SelectionConfig c;
    try {
        c.method = selection_from_string(j.value("method", to_string(c.method)));
        c.keep_fraction = j.value("keep_fraction", c.keep_fraction);
        c.mi_bins = j.value("mi_bins", c.mi_bins);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("selection: ") + e.what());
    }
    if (!(c.keep_fraction > 0.0 && c.keep_fraction <= 1.0))
        throw ConfigError("selection: keep_fraction must lie in (0, 1]");
    if (c.mi_bins < 2) throw ConfigError("selection: mi_bins must be at least 2");
    return c;
}

std::optional<double> pearson(const VectorXd& x, const VectorXd& y) {
    if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
    if (x.size() < 2) throw ConfigError("pearson: need at least two observations");
    const VectorXd dx = x.array() - x.mean();
    const VectorXd dy = y.array() - y.mean();
    const double sxx = dx.squaredNorm(), syy = dy.squaredNorm();
    if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
    const double r = dx.dot(dy) / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double mutual_information_from_counts(const MatrixXd& counts) {
    const double total = counts.sum();
    if (!(total > 0.0)) return 0.0;
    const VectorXd px = counts.rowwise().sum() / total;
    const VectorXd py = counts.colwise().sum().transpose() / total;
    double mi = 0.0;
    for (Index i = 0; i < counts.rows(); ++i)
        for (Index j = 0; j < counts.cols(); ++j) {
            const double pxy = counts(i, j) / total;
            if (pxy > 0.0) mi += pxy * std::log(pxy / (px(i) * py(j)));
        }
    return std::max(0.0, mi);
}

namespace {

std::optional<std::vector<int>> equal_width_bins(const VectorXd& v, int bins) {
    const double lo = v.minCoeff(), hi = v.maxCoeff();
    if (!(hi > lo)) return std::nullopt;
    std::vector<int> out(static_cast<std::size_t>(v.size()));
    const double width = (hi - lo) / bins;
    for (Index i = 0; i < v.size(); ++i) {
        const int b = static_cast<int>(std::floor((v(i) - lo) / width));
        out[static_cast<std::size_t>(i)] = std::clamp(b, 0, bins - 1);
    }
    return out;
}

} // namespace

double mutual_information(const VectorXd& x, const VectorXd& y, int bins) {
    if (x.size() != y.size()) throw ShapeError("mutual_information: length mismatch");
    if (x.size() < 2) throw ConfigError("mutual_information: need at least two observations");
    if (bins < 2) throw ConfigError("mutual_information: need at least two bins");
    const auto bx = equal_width_bins(x, bins);
    const auto by = equal_width_bins(y, bins);
    if (!bx || !by) return 0.0;
    MatrixXd counts = MatrixXd::Zero(bins, bins);
    for (std::size_t i = 0; i < bx->size(); ++i) counts((*bx)[i], (*by)[i]) += 1.0;
    return mutual_information_from_counts(counts);
}

std::vector<TaskSpec> target_tasks(const DatasetTable& table) {
    std::vector<TaskSpec> out;
    for (Index c : table.columns_where(ColumnRole::target)) {
        const auto& meta = table.columns[static_cast<std::size_t>(c)];
        out.push_back({meta.name, meta.task, TaskRole::target_task});
    }
    return out;
}

TaskSet select_training_tasks(const DatasetTable& train, const std::vector<TaskSpec>& targets,
                              const SelectionConfig& config) {
    if (!(config.keep_fraction > 0.0 && config.keep_fraction <= 1.0))
        throw ConfigError("keep_fraction must lie in (0, 1]");

    struct Candidate {
        Index column;
        double relevance;
    };
    std::vector<Candidate> candidates;
    for (Index c = 0; c < train.cols(); ++c) {
        const auto& meta = train.columns[static_cast<std::size_t>(c)];
        if (meta.role != ColumnRole::feature || meta.timing != Timing::post) continue;
        std::vector<double> observed;
        for (Index i = 0; i < train.rows(); ++i)
            if (train.observed(i, c)) observed.push_back(train.values(i, c));
        if (observed.size() < 2) continue;
        const auto [lo, hi] = std::minmax_element(observed.begin(), observed.end());
        if (!(*hi > *lo)) continue;
        candidates.push_back({c, 1.0});
    }
    if (candidates.empty()) throw DataError("no training tasks available");

    if (config.method != SelectionMethod::all_post) {
        std::vector<Index> target_cols;
        for (const auto& t : targets) {
            if (t.role != TaskRole::target_task) throw ConfigError("target list contains a training task");
            target_cols.push_back(train.index_of(t.column));
        }
        for (auto& cand : candidates) {
            double best = 0.0;
            for (Index tc : target_cols) {
                std::vector<double> xs, ys;
                for (Index i = 0; i < train.rows(); ++i)
                    if (train.observed(i, cand.column) && !train.missing(i, tc)) {
                        xs.push_back(train.values(i, cand.column));
                        ys.push_back(train.values(i, tc));
                    }
                if (xs.size() < 2) continue;
                const VectorXd x = Eigen::Map<const VectorXd>(xs.data(), static_cast<Index>(xs.size()));
                const VectorXd y = Eigen::Map<const VectorXd>(ys.data(), static_cast<Index>(ys.size()));
                double score = 0.0;
                if (config.method == SelectionMethod::pearson)
                    score = std::abs(pearson(x, y).value_or(0.0));
                else
                    score = mutual_information(x, y, config.mi_bins);
                best = std::max(best, score);
            }
            cand.relevance = best;
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) { return a.relevance > b.relevance; });
        const double raw = config.keep_fraction * static_cast<double>(candidates.size());
        auto keep = static_cast<std::size_t>(std::ceil(raw - 1e-9));
        keep = std::clamp<std::size_t>(keep, 1, candidates.size());
        candidates.resize(keep);
    }

    TaskSet set;
    set.target = targets;
    for (const auto& cand : candidates) {
        const auto& meta = train.columns[static_cast<std::size_t>(cand.column)];
        set.training.push_back({meta.name, TaskKind::regression, TaskRole::training_task});
        set.relevance.push_back(cand.relevance);
    }
    return set;
}

} // namespace zsml
