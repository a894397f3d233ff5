#include "zsml/eval.hpp"

#include "zsml/errors.hpp"

#include <algorithm>
#include <numeric>

namespace zsml {

std::optional<double> auc(const VectorXd& scores, const VectorXd& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
    const Index n = scores.size();
    Index positives = 0;
    for (Index i = 0; i < n; ++i) {
        if (labels(i) != 0.0 && labels(i) != 1.0) throw ConfigError("auc: labels must be 0 or 1");
        positives += labels(i) == 1.0;
    }
    const Index negatives = n - positives;
    if (positives == 0 || negatives == 0) return std::nullopt;

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) < scores(b); });

    // Sum of midranks (1-based) of the positives.
    double rank_sum = 0.0;
    for (Index lo = 0; lo < n;) {
        Index hi = lo;
        while (hi + 1 < n && scores(order[static_cast<std::size_t>(hi + 1)]) == scores(order[static_cast<std::size_t>(lo)])) ++hi;
        const double midrank = 0.5 * static_cast<double>(lo + hi) + 1.0;
        for (Index i = lo; i <= hi; ++i)
            if (labels(order[static_cast<std::size_t>(i)]) == 1.0) rank_sum += midrank;
        lo = hi + 1;
    }
    const double p = static_cast<double>(positives);
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(negatives));
}

double mse(const VectorXd& pred, const VectorXd& y) {
    if (pred.size() != y.size()) throw ShapeError("mse: prediction and target lengths differ");
    if (pred.size() == 0) throw ShapeError("mse: empty input");
    return (pred - y).squaredNorm() / static_cast<double>(pred.size());
}

} // namespace zsml
