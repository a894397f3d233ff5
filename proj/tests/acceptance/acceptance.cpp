// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include "../unit/fixtures.hpp"

#include "zsml/meta.hpp"
#include "zsml/nn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <sys/wait.h>

using namespace zsml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

double max_relative_error(const VectorXd& a, const VectorXd& b) {
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a(i) - b(i)) / std::max({std::abs(a(i)), std::abs(b(i)), 1e-4}));
    return worst;
}

MatrixXd random_matrix(Index r, Index c, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    MatrixXd m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

Mlp<long double> widen(const Mlp<double>& net) {
    Mlp<long double> out;
    out.dropout = net.dropout;
    for (const auto& l : net.layers)
        out.layers.push_back({l.direction.cast<long double>(), l.gain.cast<long double>(),
                              l.bias.cast<long double>(), l.activation});
    return out;
}

// 1. Analytic gradients against central differences.
Outcome gradient_oracle() {
    const auto start = Clock::now();
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(derive_seed(0xC1, static_cast<std::uint64_t>(trial)));
        std::uniform_int_distribution<int> depth(1, 3), width(1, 32);
        std::normal_distribution<double> n(0.0, 0.5);
        const Activation acts[] = {Activation::relu, Activation::tanh, Activation::identity};
        std::vector<Index> widths;
        const int d = depth(rng);
        for (int i = 0; i + 1 < d; ++i) widths.push_back(width(rng));
        widths.push_back(1);
        const Index in = width(rng);
        auto net = Mlp<double>::init(in, widths, acts[trial % 3], Activation::identity, 0.0, rng);
        for (auto& layer : net.layers)
            for (Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = n(rng);
        const bool bce = trial % 2 == 1;
        const MatrixXd x = random_matrix(8, in, rng);
        MatrixXd y = random_matrix(8, 1, rng);
        if (bce) y = (y.array() > 0.0).cast<double>().matrix();
        const Regularization reg{trial % 4 == 0 ? 1e-3 : 0.0, 1e-3};
        const LossKind kind = bce ? LossKind::binary_cross_entropy : LossKind::mse;

        Rng r0(1);
        const auto analytic = backprop(net, x, y, kind, reg, Mode::eval, r0);
        // The oracle runs in extended precision so that cancellation in
        // L(w+h) - L(w-h) stays far below the tolerance for small gradients.
        const Mlp<long double> wide = widen(net);
        const MatrixX<long double> xw = x.cast<long double>(), yw = y.cast<long double>();
        FlatParams<long double> flat = flatten(wide);
        Mlp<long double> probe = wide;
        VectorXd numeric(flat.values.size());
        for (Index i = 0; i < flat.values.size(); ++i) {
            const long double keep = flat.values(i);
            auto loss_at = [&](long double v) {
                flat.values(i) = v;
                unflatten(flat, probe);
                Rng r(1);
                return backprop(probe, xw, yw, kind, reg, Mode::eval, r).loss;
            };
            numeric(i) = static_cast<double>((loss_at(keep + 1e-6L) - loss_at(keep - 1e-6L)) / 2e-6L);
            flat.values(i) = keep;
        }
        worst = std::max(worst, max_relative_error(analytic.grads.values, numeric));
    }
    const double secs = seconds_since(start);
    return {worst <= 1e-5 && secs < 30.0,
            "max relative error " + fmt(worst) + " over 100 networks in " + fmt(secs, 3) + " s"};
}

// 2. AUC against pairwise counting and MSE against the direct sum.
Outcome metric_oracles() {
    Rng rng(0xC2);
    std::uniform_int_distribution<int> len(2, 80), level(0, 9);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> n(0.0, 1.0);
    double auc_err = 0.0, mse_err = 0.0;
    int instances = 0;
    while (instances < 500) {
        const Index m = len(rng);
        VectorXd s(m), l(m), p(m), y(m);
        for (Index i = 0; i < m; ++i) {
            s(i) = coin(rng) ? level(rng) * 0.1 : n(rng); // mix of tied and continuous scores
            l(i) = coin(rng) ? 1.0 : 0.0;
            p(i) = n(rng);
            y(i) = n(rng);
        }
        const auto a = auc(s, l);
        if (!a) continue;
        double wins = 0.0, pairs = 0.0;
        for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < m; ++j)
                if (l(i) == 1.0 && l(j) == 0.0) {
                    pairs += 1.0;
                    wins += s(i) > s(j) ? 1.0 : s(i) == s(j) ? 0.5 : 0.0;
                }
        auc_err = std::max(auc_err, std::abs(*a - wins / pairs));
        double sum = 0.0;
        for (Index i = 0; i < m; ++i) sum += (p(i) - y(i)) * (p(i) - y(i));
        mse_err = std::max(mse_err, std::abs(mse(p, y) - sum / static_cast<double>(m)));
        ++instances;
    }
    return {auc_err <= 1e-12 && mse_err <= 1e-12,
            "max |AUC - pairwise| " + fmt(auc_err) + ", max |MSE - direct| " + fmt(mse_err) + " over 500 instances"};
}

// 3. Reptile algebra.
Outcome reptile_algebra() {
    auto p = testing::prepare_fold(testing::small_generator(3));
    BaseLearnerConfig base;

    MetaConfig unit;
    unit.epsilon0 = 1.0;
    unit.meta_iterations = 10;
    const MetaState state = initial_meta_state(p->fold, base, 31);
    Rng sampler = state.rng;
    const TaskSample s = sample_task_batch(p->tasks, p->fold, unit.k, sampler);
    MetaState from = state;
    from.rng = sampler;
    Rng replay = sampler;
    BaseLearnerWeights adapted = inner_update(from.theta, s.train, base, replay);
    adapted = inner_update(adapted, s.finetune, base, replay);
    const bool bitwise = flatten(meta_step(from, {s}, base, unit).theta).values == flatten(adapted).values;

    const double eps0 = 0.5;
    const int total = 40;
    const bool endpoints =
        epsilon_schedule(0, total, eps0) == eps0 && epsilon_schedule(total - 1, total, eps0) == eps0 / total;

    BaseLearnerConfig frozen = base;
    frozen.learning_rate = 0.0;
    MetaConfig meta;
    meta.meta_iterations = total;
    MetaState run = initial_meta_state(p->fold, frozen, 32);
    const VectorXd theta0 = flatten(run.theta).values;
    bool constant = true;
    while (run.t < total) {
        run = meta_step(run, {sample_task_batch(p->tasks, p->fold, meta.k, run.rng)}, frozen, meta);
        constant = constant && flatten(run.theta).values == theta0;
    }

    return {bitwise && endpoints && constant, std::string("eps=1 step equals adapted weights: ") +
                                                  (bitwise ? "yes" : "no") + "; schedule endpoints: " +
                                                  (endpoints ? "yes" : "no") + "; lr=0 constant over " +
                                                  std::to_string(total) + " iterations: " + (constant ? "yes" : "no")};
}

// 4. Held-out labels never influence held-out predictions.
Outcome zero_shot_firewall() {
    ModelConfig model;
    model.meta.meta_iterations = 20;
    int changed = 0;
    for (int run = 0; run < 20; ++run) {
        GeneratorConfig g;
        g.n_per_group = {30};
        g.seed = 400 + static_cast<std::uint64_t>(run);
        const SyntheticStudy study = generate(g);
        CvConfig cv;
        cv.seed = 900 + static_cast<std::uint64_t>(run);
        const int held_out = run % 3;
        cv.holdout_groups = {study.table.group_names[static_cast<std::size_t>(held_out)]};
        const CvOutput a = run_cv_detailed(study.table, study.manifest, model, cv);

        DatasetTable perturbed = study.table;
        const Index y = perturbed.index_of("y");
        Rng rng(derive_seed(cv.seed, 7));
        std::normal_distribution<double> n(0.0, 25.0);
        for (Index i : perturbed.rows_in_group(held_out)) perturbed.values(i, y) = n(rng);
        const CvOutput b = run_cv_detailed(perturbed, study.manifest, model, cv);

        bool same = a.predictions.size() == b.predictions.size();
        for (std::size_t i = 0; same && i < a.predictions.size(); ++i)
            same = a.predictions[i].model == b.predictions[i].model &&
                   a.predictions[i].predictions == b.predictions[i].predictions;
        changed += same ? 0 : 1;
    }
    return {changed == 0, std::to_string(changed) + "/20 runs with any changed prediction bit"};
}

double row_value(const MetricReport& r, const std::string& model) {
    for (const auto& row : r.rows)
        if (row.model == model && row.value) return *row.value;
    throw DataError("no value for model " + model);
}

// 5. Synthetic benchmark: hold out the +2 sigma group.
Outcome synthetic_benchmark() {
    const auto start = Clock::now();
    int beats_ridge = 0, near_bayes = 0;
    std::string values;
    for (int seed = 0; seed < 10; ++seed) {
        GeneratorConfig g;
        g.seed = static_cast<std::uint64_t>(seed);
        const SyntheticStudy study = generate(g);
        CvConfig cv;
        cv.seed = static_cast<std::uint64_t>(seed);
        cv.holdout_groups = {"g2"};
        const MetricReport r = run_cv(study.table, study.manifest, ModelConfig{}, cv);
        const double meta = row_value(r, "meta_learner"), ridge = row_value(r, "ridge");
        beats_ridge += meta <= 0.8 * ridge;
        near_bayes += meta <= 1.5 * study.truth.bayes_mse;
        values += (seed ? " " : "") + fmt(meta, 3) + "/" + fmt(ridge, 3);
    }
    const double secs = seconds_since(start);
    return {beats_ridge >= 8 && near_bayes >= 7 && secs < 300.0,
            "meta <= 0.8 ridge in " + std::to_string(beats_ridge) + "/10, meta <= 1.5 sigma^2 in " +
                std::to_string(near_bayes) + "/10, " + fmt(secs, 3) + " s (meta/ridge MSE: " + values + ")"};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

// 6. Classification variant: train/test AUC gap.
Outcome overfit_resistance() {
    std::vector<double> meta_gaps, knn_gaps;
    for (int seed = 0; seed < 10; ++seed) {
        GeneratorConfig g;
        g.seed = static_cast<std::uint64_t>(seed);
        g.target_task = TaskKind::classification;
        const SyntheticStudy study = generate(g);
        CvConfig cv;
        cv.seed = static_cast<std::uint64_t>(seed);
        cv.holdout_groups = {"g2"};
        const MetricReport r = run_cv(study.table, study.manifest, ModelConfig{}, cv);
        for (const auto& row : r.rows) {
            if (!row.value || !row.train_value) continue;
            const double gap = std::abs(*row.value - *row.train_value);
            if (row.model == "meta_learner") meta_gaps.push_back(gap);
            if (row.model == "knn") knn_gaps.push_back(gap);
        }
    }
    if (meta_gaps.empty() || knn_gaps.empty()) return {false, "no defined AUC values"};
    const double m = median(meta_gaps), k = median(knn_gaps);
    return {m <= k, "median |test - train| AUC gap: meta " + fmt(m) + " (n=" + std::to_string(meta_gaps.size()) +
                        "), knn " + fmt(k) + " (n=" + std::to_string(knn_gaps.size()) + ")"};
}

// 7. No group signal: the meta-learner cannot do better than the mean.
Outcome no_effect_sanity() {
    int agree = 0;
    std::string values;
    for (int seed = 0; seed < 5; ++seed) {
        GeneratorConfig g;
        g.seed = 100 + static_cast<std::uint64_t>(seed);
        g.target_shift = {0.0, 0.0, 0.0};
        const SyntheticStudy study = generate(g);
        CvConfig cv;
        cv.seed = static_cast<std::uint64_t>(seed);
        cv.holdout_groups = {"g2"};
        const MetricReport r = run_cv(study.table, study.manifest, ModelConfig{}, cv);
        const double meta = row_value(r, "meta_learner"), mean = row_value(r, "mean");
        agree += std::abs(meta - mean) <= 0.1 * mean;
        values += (seed ? " " : "") + fmt(meta, 3) + "/" + fmt(mean, 3);
    }
    return {agree == 5, std::to_string(agree) + "/5 seeds within 10% (meta/mean MSE: " + values + ")"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = "\"" ZSML_CLI_PATH "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 8. The cv command is byte-for-byte reproducible.
Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "zsml_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    if (run_cli("generate --seed 5 --out " + (root / "data").string()) != 0) return {false, "generate failed"};
    const std::string data =
        "--data " + (root / "data/data.csv").string() + " --manifest " + (root / "data/manifest.json").string();
    if (run_cli("cv " + data + " --seed 11 --out " + (root / "a").string()) != 0 ||
        run_cli("cv " + data + " --seed 11 --out " + (root / "b").string()) != 0)
        return {false, "cv failed"};
    int identical = 0, files = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        ++files;
        const fs::path other = root / "b" / entry.path().filename();
        identical += fs::exists(other) && slurp(entry.path()) == slurp(other);
    }
    fs::remove_all(root);
    return {files >= 4 && identical == files,
            std::to_string(identical) + "/" + std::to_string(files) + " report files byte-identical"};
}

DatasetTable random_table(Rng& rng, int groups, Index rows, Index features) {
    DatasetTable t;
    for (int g = 0; g < groups; ++g) t.group_names.push_back("g" + std::to_string(g));
    std::uniform_int_distribution<int> pick(0, groups - 1);
    std::normal_distribution<double> n(0.0, 1.0);
    t.values.resize(rows, features);
    t.group_ids.resize(rows);
    for (Index i = 0; i < rows; ++i) {
        t.group_ids(i) = i < groups ? static_cast<int>(i) : pick(rng);
        for (Index c = 0; c < features; ++c) t.values(i, c) = n(rng);
    }
    for (Index c = 0; c < features; ++c)
        t.columns.push_back({"f" + std::to_string(c), Timing::pre, ColumnKind::numeric, ColumnRole::feature});
    t.missing = MaskMatrix::Constant(rows, features, false);
    t.imputed = MaskMatrix::Constant(rows, features, false);
    return t;
}

// 9. Preprocessing properties.
Outcome preprocessing_properties() {
    Rng rng(0xC9);
    std::bernoulli_distribution coin(0.5);

    double worst_mean = 0.0;
    int residualized = 0;
    for (int trial = 0; trial < 50; ++trial) {
        DatasetTable t = random_table(rng, 3, 90, 4);
        VectorXd sex(t.rows());
        for (Index i = 0; i < t.rows(); ++i) {
            sex(i) = coin(rng) ? 1.0 : 0.0;
            t.values(i, 0) += 2.0 * sex(i) + 50.0;
            t.values(i, 1) -= 1.5 * sex(i);
        }
        t.values.conservativeResize(Eigen::NoChange, 5);
        t.values.col(4) = sex;
        t.columns.push_back({"sex", Timing::pre, ColumnKind::numeric, ColumnRole::stratifier});
        t.missing = MaskMatrix::Constant(t.rows(), 5, false);
        t.imputed = MaskMatrix::Constant(t.rows(), 5, false);
        const auto train = rows_not_in_group(t, trial % 3);
        const auto r = residualize(t, "sex", 0.05, train);
        for (const auto& stat : r.stats) {
            ++residualized;
            const Index c = r.table.index_of(stat.column);
            for (double s : {0.0, 1.0}) {
                double sum = 0.0;
                int n = 0;
                for (Index i = 0; i < t.rows(); ++i)
                    if (train[static_cast<std::size_t>(i)] && sex(i) == s) {
                        sum += r.table.values(i, c);
                        ++n;
                    }
                worst_mean = std::max(worst_mean, std::abs(sum / n));
            }
        }
    }
    const bool residual_ok = residualized > 0 && worst_mean <= 1e-12;

    bool impute_ok = true;
    for (int trial = 0; trial < 50; ++trial) {
        DatasetTable t = random_table(rng, 3, 40, 3);
        for (Index i = 0; i < t.rows(); ++i)
            for (Index c = 0; c < 3; ++c)
                if (i >= 3 && coin(rng) && coin(rng)) t.set_missing(i, c);
        const int held_out = trial % 3;
        const auto train = rows_not_in_group(t, held_out);
        const auto before = impute_means(t, train);
        DatasetTable perturbed = t;
        for (Index i : t.rows_in_group(held_out))
            for (Index c = 0; c < 3; ++c)
                if (!t.missing(i, c)) perturbed.values(i, c) += 1e3;
        const auto after = impute_means(perturbed, train);
        impute_ok = impute_ok && before.means == after.means;
        for (Index i = 0; i < t.rows(); ++i)
            for (Index c = 0; c < 3; ++c)
                if (t.missing(i, c)) impute_ok = impute_ok && before.table.values(i, c) == after.table.values(i, c);
    }

    bool partition_ok = true;
    std::uniform_int_distribution<int> gcount(2, 8), rows(8, 60);
    for (int trial = 0; trial < 1000 && partition_ok; ++trial) {
        const int groups = gcount(rng);
        const DatasetTable t = random_table(rng, groups, rows(rng), 2);
        const int g = trial % groups;
        const Split s = group_holdout_split(t, SplitSpec{g, {}});
        std::vector<int> seen(static_cast<std::size_t>(t.rows()), 0);
        for (Index i : s.train_rows) {
            ++seen[static_cast<std::size_t>(i)];
            partition_ok = partition_ok && t.group_ids(i) != g;
        }
        for (Index i : s.test_rows) {
            ++seen[static_cast<std::size_t>(i)];
            partition_ok = partition_ok && t.group_ids(i) == g;
        }
        partition_ok = partition_ok && std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }) &&
                       s.train.rows() == static_cast<Index>(s.train_rows.size()) &&
                       s.test.rows() == static_cast<Index>(s.test_rows.size());
    }

    return {residual_ok && impute_ok && partition_ok,
            "max within-stratum residual mean " + fmt(worst_mean) + " over " + std::to_string(residualized) +
                " columns; train-only imputation: " + (impute_ok ? "yes" : "no") + "; exact partition on 1000 tables: " +
                (partition_ok ? "yes" : "no")};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient oracle", gradient_oracle},
        {"metric oracles", metric_oracles},
        {"reptile algebra", reptile_algebra},
        {"zero-shot firewall", zero_shot_firewall},
        {"synthetic benchmark", synthetic_benchmark},
        {"overfit resistance", overfit_resistance},
        {"no-effect sanity", no_effect_sanity},
        {"determinism", determinism},
        {"preprocessing properties", preprocessing_properties},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
