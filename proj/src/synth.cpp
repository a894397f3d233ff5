#include "zsml/synth.hpp"

#include "zsml/csv.hpp"
#include "zsml/errors.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace zsml {

int GeneratorConfig::rows_in_group(int g) const {
    return n_per_group.size() == 1 ? n_per_group.front() : n_per_group.at(static_cast<std::size_t>(g));
}

void GeneratorConfig::validate() const {
    if (groups < 2) throw ConfigError("generator: groups must be at least 2");
    if (n_per_group.size() != 1 && static_cast<int>(n_per_group.size()) != groups)
        throw ConfigError("generator: n_per_group must have 1 or `groups` entries");
    for (int n : n_per_group)
        if (n < 1) throw ConfigError("generator: n_per_group entries must be positive");
    if (d_pre < 1) throw ConfigError("generator: d_pre must be at least 1");
    if (d_aux < 0) throw ConfigError("generator: d_aux must be non-negative");
    if (static_cast<int>(target_shift.size()) != groups)
        throw ConfigError("generator: target_shift must have one entry per group");
    if (!(noise_sigma > 0.0)) throw ConfigError("generator: noise_sigma must be positive");
    if (!(aux_noise_sigma > 0.0)) throw ConfigError("generator: aux_noise_sigma must be positive");
    if (!(signal_scale >= 0.0)) throw ConfigError("generator: signal_scale must be non-negative");
    if (!(aux_share >= 0.0 && aux_share <= 1.0)) throw ConfigError("generator: aux_share must lie in [0, 1]");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("generator: missing_rate must lie in [0, 1)");
}

nlohmann::json to_json(const GeneratorConfig& c) {
    return {{"groups", c.groups},
            {"n_per_group", c.n_per_group},
            {"d_pre", c.d_pre},
            {"d_aux", c.d_aux},
            {"target_shift", c.target_shift},
            {"aux_scale", c.aux_scale},
            {"noise_sigma", c.noise_sigma},
            {"aux_noise_sigma", c.aux_noise_sigma},
            {"signal_scale", c.signal_scale},
            {"aux_share", c.aux_share},
            {"coupling", c.coupling == Coupling::linear ? "linear" : "mild_nonlinear"},
            {"missing_rate", c.missing_rate},
            {"target_task", to_string(c.target_task)},
            {"stratifier", c.stratifier},
            {"seed", c.seed}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("generator: expected a JSON object");
    static const std::set<std::string> keys{"groups",      "n_per_group",  "d_pre",        "d_aux",
                                            "target_shift", "aux_scale",   "noise_sigma",  "aux_noise_sigma",
                                            "signal_scale", "aux_share",   "coupling",     "missing_rate",
                                            "target_task", "stratifier",   "seed"};
    for (const auto& [key, _] : j.items())
        if (!keys.count(key)) throw ConfigError("generator: unknown key '" + key + "'");
    GeneratorConfig c;
    try {
        c.groups = j.value("groups", c.groups);
        if (j.contains("n_per_group")) {
            const auto& n = j.at("n_per_group");
            c.n_per_group = n.is_array() ? n.get<std::vector<int>>() : std::vector<int>{n.get<int>()};
        }
        c.d_pre = j.value("d_pre", c.d_pre);
        c.d_aux = j.value("d_aux", c.d_aux);
        if (j.contains("target_shift")) c.target_shift = j.at("target_shift").get<std::vector<double>>();
        c.aux_scale = j.value("aux_scale", c.aux_scale);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        c.aux_noise_sigma = j.value("aux_noise_sigma", c.aux_noise_sigma);
        c.signal_scale = j.value("signal_scale", c.signal_scale);
        c.aux_share = j.value("aux_share", c.aux_share);
        const std::string coupling = j.value("coupling", std::string("linear"));
        if (coupling == "linear")
            c.coupling = Coupling::linear;
        else if (coupling == "mild_nonlinear")
            c.coupling = Coupling::mild_nonlinear;
        else
            throw ConfigError("generator: unknown coupling '" + coupling + "'");
        c.missing_rate = j.value("missing_rate", c.missing_rate);
        c.target_task = task_kind_from_string(j.value("target_task", to_string(c.target_task)));
        c.stratifier = j.value("stratifier", c.stratifier);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const GroundTruth& t) {
    nlohmann::json aux = nlohmann::json::array();
    for (Index g = 0; g < t.aux_shift.rows(); ++g) {
        std::vector<double> row(static_cast<std::size_t>(t.aux_shift.cols()));
        for (Index j = 0; j < t.aux_shift.cols(); ++j) row[static_cast<std::size_t>(j)] = t.aux_shift(g, j);
        aux.push_back(row);
    }
    return {{"target_shift", t.target_shift},
            {"aux_shift", aux},
            {"bayes_mse", t.bayes_mse},
            {"noiseless_target",
             std::vector<double>(t.noiseless_target.data(), t.noiseless_target.data() + t.noiseless_target.size())}};
}

double bayes_optimal_mse(const GeneratorConfig& config) { return config.noise_sigma * config.noise_sigma; }

namespace {

VectorXd unit_normal(int d, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = n(rng);
    const double norm = v.norm();
    return norm > 0.0 ? VectorXd(v / norm) : VectorXd(VectorXd::Unit(d, 0));
}

} // namespace

SyntheticStudy generate(const GeneratorConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, 0x5E17));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::bernoulli_distribution drop(config.missing_rate);

    const VectorXd w = unit_normal(config.d_pre, rng);
    const VectorXd v = unit_normal(config.d_pre, rng);
    std::vector<VectorXd> own;
    for (int j = 0; j < config.d_aux; ++j) own.push_back(unit_normal(config.d_pre, rng));

    auto f = [&](const VectorXd& x) {
        double out = config.signal_scale * w.dot(x);
        if (config.coupling == Coupling::mild_nonlinear) out += config.signal_scale * std::tanh(2.0 * v.dot(x));
        return out;
    };

    SyntheticStudy study;
    GroundTruth& truth = study.truth;
    truth.target_shift = config.target_shift;
    truth.aux_shift.resize(config.groups, config.d_aux);
    for (int g = 0; g < config.groups; ++g)
        for (int j = 0; j < config.d_aux; ++j)
            truth.aux_shift(g, j) = config.aux_scale * config.target_shift[static_cast<std::size_t>(g)];
    truth.bayes_mse = bayes_optimal_mse(config);

    Manifest& m = study.manifest;
    m.columns.push_back({"group", Timing::pre, ColumnKind::categorical, ColumnRole::group, TaskKind::regression});
    if (config.stratifier)
        m.columns.push_back({"sex", Timing::pre, ColumnKind::categorical, ColumnRole::stratifier, TaskKind::regression});
    for (int i = 0; i < config.d_pre; ++i)
        m.columns.push_back({"x" + std::to_string(i + 1), Timing::pre, ColumnKind::numeric, ColumnRole::feature,
                             TaskKind::regression});
    for (int j = 0; j < config.d_aux; ++j)
        m.columns.push_back({"aux" + std::to_string(j + 1), Timing::post, ColumnKind::numeric, ColumnRole::feature,
                             TaskKind::regression});
    m.columns.push_back({"y", Timing::post, ColumnKind::numeric, ColumnRole::target, config.target_task});
    if (config.stratifier) m.stratifier = "sex";

    csv::Row header;
    for (const auto& c : m.columns) header.push_back(c.name);
    std::string text = csv::join(header) + "\n";

    std::vector<double> noiseless;
    for (int g = 0; g < config.groups; ++g) {
        const double shift = config.target_shift[static_cast<std::size_t>(g)];
        for (int r = 0; r < config.rows_in_group(g); ++r) {
            csv::Row row{"g" + std::to_string(g)};
            VectorXd x(config.d_pre);
            for (int i = 0; i < config.d_pre; ++i) x(i) = normal(rng);
            if (config.stratifier) {
                const bool male = coin(rng);
                row.push_back(male ? "M" : "F");
                if (male) x(0) += 1.0;
            }
            const double fx = f(x);
            const double own_scale = (1.0 - config.aux_share) * config.signal_scale;
            auto feature_cell = [&](double value) {
                return config.missing_rate > 0.0 && drop(rng) ? std::string() : csv::format_double(value);
            };
            for (int i = 0; i < config.d_pre; ++i) row.push_back(feature_cell(x(i)));
            for (int j = 0; j < config.d_aux; ++j) {
                const double a = config.aux_share * fx + own_scale * own[static_cast<std::size_t>(j)].dot(x) +
                                 truth.aux_shift(g, j) + config.aux_noise_sigma * normal(rng);
                row.push_back(feature_cell(a));
            }
            noiseless.push_back(fx + shift);
            row.push_back(csv::format_double(fx + shift + config.noise_sigma * normal(rng)));
            text += csv::join(row) + "\n";
        }
    }
    truth.noiseless_target = Eigen::Map<const VectorXd>(noiseless.data(), static_cast<Index>(noiseless.size()));
    study.csv = std::move(text);
    study.table = parse_table(m, study.csv);
    return study;
}

std::vector<std::filesystem::path> write_study(const SyntheticStudy& study, const std::filesystem::path& dir,
                                               const nlohmann::json& provenance) {
    std::filesystem::create_directories(dir);
    auto write = [](const std::filesystem::path& p, const std::string& content) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw DataError("cannot write " + p.string());
        out << content;
    };
    const auto data = dir / "data.csv";
    const auto manifest = dir / "manifest.json";
    const auto truth = dir / "ground_truth.json";
    write(data, study.csv);
    write(manifest, to_json(study.manifest).dump(2) + "\n");
    nlohmann::json t = to_json(study.truth);
    if (!provenance.is_null()) t["provenance"] = provenance;
    write(truth, t.dump(2) + "\n");
    return {data, manifest, truth};
}

} // namespace zsml
