#include "zsml/eval.hpp"

#include "parallel.hpp"
#include "zsml/errors.hpp"

#include <algorithm>
#include <set>

namespace zsml {

namespace {

template <typename T>
void require_nonempty(const std::vector<T>& grid, const char* name) {
    if (grid.empty()) throw ConfigError(std::string("search space: grid '") + name + "' is empty");
}

template <typename T>
const T& pick(const std::vector<T>& grid, Rng& rng) {
    std::uniform_int_distribution<std::size_t> d(0, grid.size() - 1);
    return grid[d(rng)];
}

template <typename T>
bool in(const std::vector<T>& grid, const T& v) {
    return std::find(grid.begin(), grid.end(), v) != grid.end();
}

} // namespace

void SearchSpace::validate() const {
    require_nonempty(selection_method, "selection_method");
    require_nonempty(keep_fraction, "keep_fraction");
    require_nonempty(scaling, "scaling");
    require_nonempty(missing_threshold, "missing_threshold");
    require_nonempty(n_layers, "n_layers");
    require_nonempty(hidden_dim, "hidden_dim");
    require_nonempty(embedding_dim, "embedding_dim");
    require_nonempty(activation, "activation");
    require_nonempty(optimizer, "optimizer");
    require_nonempty(learning_rate, "learning_rate");
    require_nonempty(dropout_rate, "dropout_rate");
    require_nonempty(reg_kind, "reg_kind");
    require_nonempty(reg_strength, "reg_strength");
    require_nonempty(inner_iterations, "inner_iterations");
    require_nonempty(meta_iterations, "meta_iterations");
    require_nonempty(epsilon0, "epsilon0");
    require_nonempty(k, "k");
    require_nonempty(tasks_per_iteration, "tasks_per_iteration");
    // Parse every string entry once so a typo fails before any training.
    for (const auto& s : selection_method) selection_from_string(s);
    for (const auto& s : scaling) scaling_from_string(s);
    for (const auto& s : activation) activation_from_string(s);
    for (const auto& s : optimizer) optimizer_from_string(s);
    for (const auto& s : reg_kind) reg_kind_from_string(s);
    for (double f : keep_fraction)
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("search space: keep_fraction entries must lie in (0, 1]");
    ModelConfig probe;
    for (int v : n_layers) { probe.base.n_layers = v; probe.base.validate(); }
    probe = {};
    for (int v : hidden_dim) { probe.base.hidden_dim = v; probe.base.validate(); }
    probe = {};
    for (int v : embedding_dim) { probe.base.embedding_dim = v; probe.base.validate(); }
    probe = {};
    for (double v : learning_rate) { probe.base.learning_rate = v; probe.base.validate(); }
    probe = {};
    for (double v : dropout_rate) { probe.base.dropout_rate = v; probe.base.validate(); }
    probe = {};
    for (double v : reg_strength) { probe.base.reg_strength = v; probe.base.validate(); }
    probe = {};
    for (int v : inner_iterations) { probe.base.inner_iterations = v; probe.base.validate(); }
    for (int v : meta_iterations) { probe.meta = {}; probe.meta.meta_iterations = v; probe.meta.validate(); }
    for (double v : epsilon0) { probe.meta = {}; probe.meta.epsilon0 = v; probe.meta.validate(); }
    for (int v : k) { probe.meta = {}; probe.meta.k = v; probe.meta.validate(); }
    for (int v : tasks_per_iteration) { probe.meta = {}; probe.meta.tasks_per_iteration = v; probe.meta.validate(); }
    for (double v : missing_threshold)
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("search space: missing_threshold entries must lie in [0, 1]");
}

ModelConfig SearchSpace::sample(const ModelConfig& base, Rng& rng) const {
    ModelConfig c = base;
    c.selection.method = selection_from_string(pick(selection_method, rng));
    c.selection.keep_fraction = pick(keep_fraction, rng);
    c.preprocess.scaling = scaling_from_string(pick(scaling, rng));
    c.preprocess.missing_threshold = pick(missing_threshold, rng);
    c.base.n_layers = pick(n_layers, rng);
    c.base.hidden_dim = pick(hidden_dim, rng);
    c.base.embedding_dim = pick(embedding_dim, rng);
    c.base.activation = activation_from_string(pick(activation, rng));
    c.base.optimizer = optimizer_from_string(pick(optimizer, rng));
    c.base.learning_rate = pick(learning_rate, rng);
    c.base.dropout_rate = pick(dropout_rate, rng);
    c.base.reg_kind = reg_kind_from_string(pick(reg_kind, rng));
    c.base.reg_strength = pick(reg_strength, rng);
    c.base.inner_iterations = pick(inner_iterations, rng);
    c.meta.meta_iterations = pick(meta_iterations, rng);
    c.meta.epsilon0 = pick(epsilon0, rng);
    c.meta.k = pick(k, rng);
    c.meta.tasks_per_iteration = pick(tasks_per_iteration, rng);
    return c;
}

bool SearchSpace::contains(const ModelConfig& c) const {
    return in(selection_method, to_string(c.selection.method)) && in(keep_fraction, c.selection.keep_fraction) &&
           in(scaling, to_string(c.preprocess.scaling)) && in(missing_threshold, c.preprocess.missing_threshold) &&
           in(n_layers, c.base.n_layers) && in(hidden_dim, c.base.hidden_dim) &&
           in(embedding_dim, c.base.embedding_dim) && in(activation, to_string(c.base.activation)) &&
           in(optimizer, to_string(c.base.optimizer)) && in(learning_rate, c.base.learning_rate) &&
           in(dropout_rate, c.base.dropout_rate) && in(reg_kind, to_string(c.base.reg_kind)) &&
           in(reg_strength, c.base.reg_strength) && in(inner_iterations, c.base.inner_iterations) &&
           in(meta_iterations, c.meta.meta_iterations) && in(epsilon0, c.meta.epsilon0) && in(k, c.meta.k) &&
           in(tasks_per_iteration, c.meta.tasks_per_iteration);
}

nlohmann::json to_json(const SearchSpace& s) {
    return {{"selection_method", s.selection_method},
            {"keep_fraction", s.keep_fraction},
            {"scaling", s.scaling},
            {"missing_threshold", s.missing_threshold},
            {"n_layers", s.n_layers},
            {"hidden_dim", s.hidden_dim},
            {"embedding_dim", s.embedding_dim},
            {"activation", s.activation},
            {"optimizer", s.optimizer},
            {"learning_rate", s.learning_rate},
            {"dropout_rate", s.dropout_rate},
            {"reg_kind", s.reg_kind},
            {"reg_strength", s.reg_strength},
            {"inner_iterations", s.inner_iterations},
            {"meta_iterations", s.meta_iterations},
            {"epsilon0", s.epsilon0},
            {"k", s.k},
            {"tasks_per_iteration", s.tasks_per_iteration}};
}

SearchSpace search_space_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("search: expected a JSON object");
    SearchSpace s;
    const nlohmann::json known = to_json(s);
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw ConfigError("search: unknown key '" + key + "'");
    try {
        auto read = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        read("selection_method", s.selection_method);
        read("keep_fraction", s.keep_fraction);
        read("scaling", s.scaling);
        read("missing_threshold", s.missing_threshold);
        read("n_layers", s.n_layers);
        read("hidden_dim", s.hidden_dim);
        read("embedding_dim", s.embedding_dim);
        read("activation", s.activation);
        read("optimizer", s.optimizer);
        read("learning_rate", s.learning_rate);
        read("dropout_rate", s.dropout_rate);
        read("reg_kind", s.reg_kind);
        read("reg_strength", s.reg_strength);
        read("inner_iterations", s.inner_iterations);
        read("meta_iterations", s.meta_iterations);
        read("epsilon0", s.epsilon0);
        read("k", s.k);
        read("tasks_per_iteration", s.tasks_per_iteration);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("search: ") + e.what());
    }
    s.validate();
    return s;
}

SearchResult grid_search(const SearchSpace& space, const DatasetTable& raw, const Manifest& manifest,
                         const ModelConfig& defaults, const CvConfig& cv, int budget, std::uint64_t seed) {
    if (budget < 1) throw ConfigError("grid search: budget must be at least 1");
    space.validate();

    // Draw every candidate up front so the set does not depend on scheduling.
    Rng rng(derive_seed(seed, 0x6E1D));
    std::vector<ModelConfig> configs;
    for (int i = 0; i < budget; ++i) configs.push_back(space.sample(defaults, rng));

    CvConfig inner = cv;
    inner.jobs = 1;
    inner.baselines = false;
    inner.base_learner = false;
    auto candidates = detail::parallel_map<Candidate>(configs.size(), cv.jobs, [&](std::size_t i) {
        Candidate c;
        c.index = static_cast<int>(i);
        c.config = configs[i];
        CvConfig run = inner;
        run.seed = derive_seed(seed, 0xCA11, i);
        try {
            const MetricReport report = run_cv(raw, manifest, c.config, run);
            double sum = 0.0;
            int n = 0;
            std::set<std::string> metrics;
            for (const auto& r : report.rows) {
                if (r.model != "meta_learner" || !r.value) continue;
                sum += *r.value;
                ++n;
                metrics.insert(r.metric);
            }
            if (metrics.size() > 1) throw ConfigError("grid search: targets mix AUC and MSE tasks");
            if (n == 0) throw DataError("grid search: no defined scores");
            c.metric = *metrics.begin();
            c.score = sum / n;
        } catch (const std::exception& e) {
            c.error = e.what();
        }
        return c;
    });

    SearchResult result;
    result.leaderboard = candidates;
    std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score.has_value() != b.score.has_value()) return a.score.has_value();
        if (!a.score) return a.index < b.index;
        if (*a.score != *b.score) return a.metric == "auc" ? *a.score > *b.score : *a.score < *b.score;
        return a.index < b.index;
    });
    if (!result.leaderboard.front().score) {
        std::string msg = "grid search: all candidates failed";
        for (const auto& c : result.leaderboard) msg += "\n  candidate " + std::to_string(c.index) + ": " + c.error;
        throw DataError(msg);
    }
    result.best = result.leaderboard.front();
    return result;
}

} // namespace zsml
