#include "zsml/eval.hpp"

#include "zsml/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace zsml {

std::string to_string(BaselineKind k) {
    switch (k) {
    case BaselineKind::mean: return "mean";
    case BaselineKind::median: return "median";
    case BaselineKind::knn: return "knn";
    case BaselineKind::ridge: return "ridge";
    case BaselineKind::logistic: return "logistic";
    }
    return "?";
}

BaselineKind baseline_from_string(const std::string& s) {
    for (auto k : {BaselineKind::mean, BaselineKind::median, BaselineKind::knn, BaselineKind::ridge,
                   BaselineKind::logistic})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown baseline '" + s + "'");
}

nlohmann::json to_json(const BaselineConfig& c) {
    return {{"knn_k", c.knn_k},
            {"ridge_lambda", c.ridge_lambda},
            {"logistic_lambda", c.logistic_lambda},
            {"max_iterations", c.max_iterations},
            {"tolerance", c.tolerance}};
}

BaselineConfig baseline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("baselines: expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (key != "knn_k" && key != "ridge_lambda" && key != "logistic_lambda" && key != "max_iterations" &&
            key != "tolerance")
            throw ConfigError("baselines: unknown key '" + key + "'");
    BaselineConfig c;
    try {
        c.knn_k = j.value("knn_k", c.knn_k);
        c.ridge_lambda = j.value("ridge_lambda", c.ridge_lambda);
        c.logistic_lambda = j.value("logistic_lambda", c.logistic_lambda);
        c.max_iterations = j.value("max_iterations", c.max_iterations);
        c.tolerance = j.value("tolerance", c.tolerance);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("baselines: ") + e.what());
    }
    if (c.knn_k < 1) throw ConfigError("baselines: knn_k must be at least 1");
    if (!(c.ridge_lambda >= 0.0) || !(c.logistic_lambda >= 0.0))
        throw ConfigError("baselines: regularization must be non-negative");
    if (c.max_iterations < 1) throw ConfigError("baselines: max_iterations must be at least 1");
    return c;
}

namespace {

enum class Objective { squared, logistic };

// Gradient descent with step 1/L on the standardized problem. The penalty is
// expressed on raw-unit slopes, so the minimizer is that of the raw objective.
LinearFit fit_linear(const MatrixXd& x, const VectorXd& y, double lambda, Objective obj, const BaselineConfig& cfg) {
    const Index n = x.rows(), d = x.cols();
    if (n == 0) throw DataError("linear baseline: empty training set");
    if (y.size() != n) throw ShapeError("linear baseline: x and y differ in rows");
    const RowVectorX<double> mu = x.colwise().mean();
    VectorXd sd(d);
    for (Index j = 0; j < d; ++j) {
        const double s = std::sqrt((x.col(j).array() - mu(j)).square().sum() / static_cast<double>(n));
        sd(j) = s > 0.0 ? s : 1.0;
    }
    MatrixXd z = x;
    z.rowwise() -= mu;
    z = z * sd.cwiseInverse().asDiagonal();

    // Lipschitz constant of the gradient.
    MatrixXd aug(n, d + 1);
    aug << z, VectorXd::Ones(n);
    const MatrixXd gram = aug.transpose() * aug / static_cast<double>(n);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    const double curvature = obj == Objective::squared ? 2.0 : 0.25;
    const double pen = d > 0 ? 2.0 * lambda / sd.cwiseAbs2().minCoeff() : 0.0;
    const double step = 1.0 / (curvature * top + pen);

    const VectorXd pen_scale = sd.cwiseAbs2().cwiseInverse() * (2.0 * lambda);
    VectorXd beta = VectorXd::Zero(d);
    double b = obj == Objective::squared ? y.mean() : 0.0;
    LinearFit fit;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const VectorXd eta = (z * beta).array() + b;
        VectorXd r;
        if (obj == Objective::squared)
            r = 2.0 * (eta - y);
        else
            r = eta.unaryExpr([](double v) { return sigmoid(v); }) - y;
        r /= static_cast<double>(n);
        const VectorXd g_beta = z.transpose() * r + pen_scale.cwiseProduct(beta);
        const double g_b = r.sum();
        fit.iterations = it + 1;
        if (g_beta.squaredNorm() + g_b * g_b < cfg.tolerance) break;
        beta -= step * g_beta;
        b -= step * g_b;
    }
    if (!beta.allFinite() || !std::isfinite(b)) throw NumericError("linear baseline diverged");
    fit.slope = beta.cwiseQuotient(sd);
    fit.intercept = b - fit.slope.dot(mu.transpose());
    return fit;
}

double median_of(VectorXd v) {
    std::sort(v.data(), v.data() + v.size());
    const Index n = v.size();
    return n % 2 ? v(n / 2) : 0.5 * (v(n / 2 - 1) + v(n / 2));
}

} // namespace

LinearFit fit_ridge(const MatrixXd& x, const VectorXd& y, double lambda, const BaselineConfig& config) {
    return fit_linear(x, y, lambda, Objective::squared, config);
}

LinearFit fit_logistic(const MatrixXd& x, const VectorXd& y, double lambda, const BaselineConfig& config) {
    return fit_linear(x, y, lambda, Objective::logistic, config);
}

BaselineOutput baseline_predict(BaselineKind kind, const MatrixXd& train_x, const VectorXd& train_y,
                                const MatrixXd& test_x, TaskKind task, const BaselineConfig& config) {
    if (train_y.size() == 0) throw DataError("baseline: empty training set");
    if (train_x.rows() != train_y.size()) throw ShapeError("baseline: x and y differ in rows");
    if (test_x.cols() != train_x.cols()) throw ShapeError("baseline: train and test feature counts differ");
    BaselineOutput out;
    const Index m = test_x.rows();
    switch (kind) {
    case BaselineKind::mean:
    case BaselineKind::median:
        if (task != TaskKind::regression) throw ConfigError(to_string(kind) + " baseline applies to regression only");
        out.predictions = VectorXd::Constant(m, kind == BaselineKind::mean ? train_y.mean() : median_of(train_y));
        break;
    case BaselineKind::knn: {
        Index k = config.knn_k;
        if (k > train_y.size()) {
            out.warnings.push_back("knn: k=" + std::to_string(k) + " exceeds training size " +
                                   std::to_string(train_y.size()) + "; clipped");
            k = train_y.size();
        }
        out.predictions.resize(m);
        std::vector<Index> order(static_cast<std::size_t>(train_x.rows()));
        VectorXd dist(train_x.rows());
        for (Index i = 0; i < m; ++i) {
            dist = (train_x.rowwise() - test_x.row(i)).rowwise().squaredNorm();
            std::iota(order.begin(), order.end(), Index{0});
            std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return dist(a) < dist(b); });
            double acc = 0.0;
            for (Index j = 0; j < k; ++j) acc += train_y(order[static_cast<std::size_t>(j)]);
            out.predictions(i) = acc / static_cast<double>(k);
        }
        break;
    }
    case BaselineKind::ridge: {
        if (task != TaskKind::regression) throw ConfigError("ridge baseline applies to regression only");
        const LinearFit fit = fit_ridge(train_x, train_y, config.ridge_lambda, config);
        out.predictions = (test_x * fit.slope).array() + fit.intercept;
        break;
    }
    case BaselineKind::logistic: {
        if (task != TaskKind::classification) throw ConfigError("logistic baseline applies to classification only");
        const LinearFit fit = fit_logistic(train_x, train_y, config.logistic_lambda, config);
        const VectorXd eta = (test_x * fit.slope).array() + fit.intercept;
        out.predictions = eta.unaryExpr([](double v) { return sigmoid(v); });
        break;
    }
    }
    return out;
}

} // namespace zsml
