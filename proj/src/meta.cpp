#include "zsml/meta.hpp"

#include "zsml/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace zsml {

std::string to_string(UpdateDirection d) {
    return d == UpdateDirection::toward_adapted ? "toward_adapted" : "away_from_adapted";
}

UpdateDirection update_direction_from_string(const std::string& s) {
    if (s == "toward_adapted") return UpdateDirection::toward_adapted;
    if (s == "away_from_adapted") return UpdateDirection::away_from_adapted;
    throw ConfigError("unknown update direction '" + s + "'");
}

void MetaConfig::validate() const {
    if (meta_iterations < 0) throw ConfigError("meta: meta_iterations must be non-negative");
    if (!(epsilon0 > 0.0 && epsilon0 <= 1.0)) throw ConfigError("meta: epsilon0 must lie in (0, 1]");
    if (k < 1) throw ConfigError("meta: k must be at least 1");
    if (tasks_per_iteration < 1) throw ConfigError("meta: tasks_per_iteration must be at least 1");
}

std::vector<std::string> MetaConfig::off_grid() const {
    std::vector<std::string> out;
    if (meta_iterations < 20 || meta_iterations > 100 || meta_iterations % 10 != 0) out.push_back("meta_iterations");
    if (epsilon0 != 0.25 && epsilon0 != 0.5 && epsilon0 != 0.75) out.push_back("epsilon0");
    if (k != 5 && k != 10 && k != 15) out.push_back("k");
    if (tasks_per_iteration != 1 && tasks_per_iteration != 2 && tasks_per_iteration != 5)
        out.push_back("tasks_per_iteration");
    return out;
}

nlohmann::json to_json(const MetaConfig& c) {
    return {{"meta_iterations", c.meta_iterations},
            {"epsilon0", c.epsilon0},
            {"k", c.k},
            {"tasks_per_iteration", c.tasks_per_iteration},
            {"update_direction", to_string(c.direction)}};
}

MetaConfig meta_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("meta: expected a JSON object");
    static const std::set<std::string> keys{"meta_iterations", "epsilon0", "k", "tasks_per_iteration",
                                            "update_direction"};
    for (const auto& [key, _] : j.items())
        if (!keys.count(key)) throw ConfigError("meta: unknown key '" + key + "'");
    MetaConfig c;
    try {
        c.meta_iterations = j.value("meta_iterations", c.meta_iterations);
        c.epsilon0 = j.value("epsilon0", c.epsilon0);
        c.k = j.value("k", c.k);
        c.tasks_per_iteration = j.value("tasks_per_iteration", c.tasks_per_iteration);
        c.direction = update_direction_from_string(j.value("update_direction", to_string(c.direction)));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("meta: ") + e.what());
    }
    c.validate();
    return c;
}

double epsilon_schedule(int t, int total, double eps0) {
    if (total < 1 || t < 0 || t >= total)
        throw ConfigError("epsilon_schedule: need 0 <= t < T, got t=" + std::to_string(t) +
                          ", T=" + std::to_string(total));
    return eps0 * static_cast<double>(total - t) / static_cast<double>(total);
}

namespace {

// k distinct positions out of n when n >= k, otherwise k draws with replacement.
std::vector<Index> draw(Index n, int k, Rng& rng) {
    std::vector<Index> out;
    if (n >= k) {
        std::vector<Index> pool(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            std::uniform_int_distribution<Index> pick(i, n - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
        }
        out.assign(pool.begin(), pool.begin() + k);
    } else {
        std::uniform_int_distribution<Index> pick(0, n - 1);
        for (int i = 0; i < k; ++i) out.push_back(pick(rng));
    }
    return out;
}

TaskBatch sample_per_group(const DatasetTable& table, const std::vector<Index>& input_cols, const TaskSpec& task,
                           int k, Rng& rng, std::vector<std::string>* warnings) {
    const Index col = table.index_of(task.column);
    std::vector<Index> rows;
    for (int g = 0; g < table.group_count(); ++g) {
        std::vector<Index> candidates;
        bool present = false;
        for (Index i = 0; i < table.rows(); ++i) {
            if (table.group_ids(i) != g) continue;
            present = true;
            if (table.observed(i, col)) candidates.push_back(i);
        }
        if (!present) continue;
        if (candidates.empty())
            throw DataError("group '" + table.group_names[static_cast<std::size_t>(g)] +
                            "' has no observed values for task '" + task.column + "'");
        const auto n = static_cast<Index>(candidates.size());
        if (n < k && warnings)
            warnings->push_back("group '" + table.group_names[static_cast<std::size_t>(g)] + "' has " +
                                std::to_string(n) + " observed rows for task '" + task.column +
                                "' (< k); sampling with replacement");
        for (Index p : draw(n, k, rng)) rows.push_back(candidates[static_cast<std::size_t>(p)]);
    }
    return make_batch(table, input_cols, task, rows);
}

} // namespace

TaskSample sample_task_batch(const TaskSet& tasks, const FoldData& fold, int k, Rng& rng,
                             std::vector<std::string>* warnings) {
    if (tasks.training.empty()) throw ConfigError("sample_task_batch: no training tasks");
    if (!fold.train || !fold.test) throw ConfigError("sample_task_batch: fold tables not set");
    std::uniform_int_distribution<std::size_t> pick(0, tasks.training.size() - 1);
    TaskSample s;
    s.task = tasks.training[pick(rng)];
    s.train = sample_per_group(*fold.train, fold.input_cols, s.task, k, rng, warnings);
    s.finetune = sample_per_group(*fold.test, fold.input_cols, s.task, k, rng, warnings);
    return s;
}

MetaState meta_step(const MetaState& state, const std::vector<TaskSample>& samples, const BaseLearnerConfig& base,
                    const MetaConfig& meta) {
    if (state.t >= meta.meta_iterations) throw ConfigError("meta_step: iteration budget exhausted");
    if (samples.empty()) throw ConfigError("meta_step: no task samples");
    MetaState next = state;
    BaseLearnerWeights adapted = state.theta;
    for (const auto& s : samples) {
        adapted = inner_update(adapted, s.train, base, next.rng);
        adapted = inner_update(adapted, s.finetune, base, next.rng);
    }
    const double eps = epsilon_schedule(state.t, meta.meta_iterations, meta.epsilon0);
    const double scale = meta.direction == UpdateDirection::toward_adapted ? eps : -eps;
    unflatten(param_axpy(flatten(state.theta), flatten(adapted), scale), next.theta);
    next.t = state.t + 1;
    return next;
}

MetaState initial_meta_state(const FoldData& fold, const BaseLearnerConfig& base, std::uint64_t seed) {
    if (!fold.train) throw ConfigError("meta_train: fold tables not set");
    Rng init_rng(derive_seed(seed, 1));
    MetaState state{init_base_learner(static_cast<Index>(fold.input_cols.size()), fold.train->group_count(), base,
                                      init_rng),
                    0, Rng(derive_seed(seed, 2))};
    return state;
}

MetaState continue_meta_train(MetaState state, const TaskSet& tasks, const FoldData& fold,
                              const BaseLearnerConfig& base, const MetaConfig& meta,
                              std::vector<std::string>* warnings) {
    meta.validate();
    std::set<std::string> seen;
    std::vector<std::string> local;
    while (state.t < meta.meta_iterations) {
        std::vector<TaskSample> samples;
        for (int i = 0; i < meta.tasks_per_iteration; ++i)
            samples.push_back(sample_task_batch(tasks, fold, meta.k, state.rng, &local));
        state = meta_step(state, samples, base, meta);
    }
    if (warnings)
        for (auto& w : local)
            if (seen.insert(w).second) warnings->push_back(std::move(w));
    return state;
}

MetaTrainResult meta_train(const TaskSet& tasks, const FoldData& fold, const BaseLearnerConfig& base,
                           const MetaConfig& meta, std::uint64_t seed) {
    MetaState state = initial_meta_state(fold, base, seed);
    MetaTrainResult result;
    result.initial = state.theta;
    state = continue_meta_train(std::move(state), tasks, fold, base, meta, &result.warnings);
    result.theta = std::move(state.theta);
    return result;
}

MetaTestResult meta_test(const BaseLearnerWeights& theta, const TaskSpec& target, const FoldData& fold,
                         const BaseLearnerConfig& base, Rng& rng) {
    if (!fold.train || !fold.test) throw ConfigError("meta_test: fold tables not set");
    const TaskBatch train_batch = make_batch(*fold.train, fold.input_cols, target);
    if (train_batch.size() == 0)
        throw DataError("meta_test: no training rows with observed '" + target.column + "'");
    MetaTestResult r;
    r.adapted = inner_update(theta, train_batch, base, rng);
    const bool sig = uses_sigmoid(target.kind, base);
    const TaskBatch test_inputs = make_inputs(*fold.test, fold.input_cols);
    r.test_predictions = predict(r.adapted, test_inputs.x, test_inputs.groups, sig);
    r.train_predictions = predict(r.adapted, train_batch.x, train_batch.groups, sig);
    r.train_labels = train_batch.y;
    return r;
}

void save_meta_state(const std::filesystem::path& path, const MetaState& state, const BaseLearnerConfig& base) {
    Checkpoint ckpt{state.theta, base, state.t, {}};
    nlohmann::json j = checkpoint_to_json(ckpt);
    std::ostringstream rng_text;
    rng_text << state.rng;
    j["rng_state"] = rng_text.str();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

MetaState load_meta_state(const std::filesystem::path& path, BaseLearnerConfig* base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("meta state " + path.string() + ": " + e.what());
    }
    Checkpoint ckpt = checkpoint_from_json(j);
    MetaState state{std::move(ckpt.weights), static_cast<int>(ckpt.iteration), Rng()};
    if (j.contains("rng_state")) {
        std::istringstream rng_text(j.at("rng_state").get<std::string>());
        rng_text >> state.rng;
    }
    if (base) *base = ckpt.config;
    return state;
}

} // namespace zsml
