// zsml: command-line driver for synthetic data generation, group-holdout
// cross-validation, randomized grid search and report regeneration.

#include "zsml/csv.hpp"
#include "zsml/errors.hpp"
#include "zsml/eval.hpp"
#include "zsml/hash.hpp"
#include "zsml/synth.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace zsml;

namespace {

constexpr const char* kToolVersion = "zsml " ZSML_VERSION;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Contents of a --config file. Every section is optional.
struct RunConfig {
    nlohmann::json generator = nlohmann::json::object();
    ModelConfig model;
    CvConfig cv;
    SearchSpace search;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
};

CvConfig cv_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("cv: expected a JSON object");
    static const std::set<std::string> keys{"excluded_holdout_groups", "holdout_groups", "jobs", "baselines",
                                            "base_learner"};
    for (const auto& [key, _] : j.items())
        if (!keys.count(key)) throw ConfigError("cv: unknown key '" + key + "'");
    CvConfig c;
    try {
        c.excluded_holdout_groups = j.value("excluded_holdout_groups", c.excluded_holdout_groups);
        c.holdout_groups = j.value("holdout_groups", c.holdout_groups);
        c.jobs = j.value("jobs", c.jobs);
        c.baselines = j.value("baselines", c.baselines);
        c.base_learner = j.value("base_learner", c.base_learner);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cv: ") + e.what());
    }
    if (c.jobs < 1) throw ConfigError("cv: jobs must be at least 1");
    return c;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config " + path + ": expected a JSON object");
    static const std::set<std::string> keys{"generator", "preprocess", "selection", "base",     "meta",
                                            "baselines", "cv",         "search",    "seed",     "output_dir"};
    for (const auto& [key, _] : j.items())
        if (!keys.count(key)) throw ConfigError("config " + path + ": unknown key '" + key + "'");
    if (j.contains("generator")) {
        generator_config_from_json(j.at("generator")); // validate now, apply later
        rc.generator = j.at("generator");
    }
    rc.model = model_config_from_json(j);
    if (j.contains("cv")) rc.cv = cv_config_from_json(j.at("cv"));
    if (j.contains("search")) rc.search = search_space_from_json(j.at("search"));
    try {
        if (j.contains("seed")) rc.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("output_dir")) rc.output_dir = j.at("output_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return rc;
}

// Precedence: flag > ZSML_OUTPUT_DIR > config file > default.
fs::path output_dir(const std::string& flag, const RunConfig& rc) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("ZSML_OUTPUT_DIR"); env && *env) return env;
    if (rc.output_dir) return *rc.output_dir;
    return "zsml_out";
}

// Hash of everything that determines the results: the effective configuration
// and the bytes of the input files. Output location and job count are excluded.
std::string run_hash(const std::string& command, const nlohmann::json& effective,
                     const std::vector<fs::path>& inputs) {
    nlohmann::json h{{"command", command}, {"config", effective}};
    nlohmann::json files = nlohmann::json::array();
    for (const auto& p : inputs) files.push_back(hex64(fnv1a64(read_file(p))));
    h["inputs"] = files;
    return config_hash(h);
}

nlohmann::json cv_json(const CvConfig& c) {
    return {{"excluded_holdout_groups", c.excluded_holdout_groups},
            {"holdout_groups", c.holdout_groups},
            {"baselines", c.baselines},
            {"base_learner", c.base_learner}};
}

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string data;
    std::string manifest;
    std::vector<std::string> holdout_exclude;
};

void add_io(CLI::App* cmd, Common& c) {
    cmd->add_option("--data", c.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--manifest", c.manifest, "Column manifest JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--jobs", c.jobs, "Parallel folds / candidates")->check(CLI::PositiveNumber);
    cmd->add_option("--holdout-exclude", c.holdout_exclude, "Group never used as a test fold (repeatable)");
}

int cmd_generate(const Common& c) {
    const RunConfig rc = load_run_config(c.config);
    nlohmann::json gj = rc.generator;
    if (c.seed)
        gj["seed"] = *c.seed;
    else if (rc.seed)
        gj["seed"] = *rc.seed;
    const GeneratorConfig g = generator_config_from_json(gj);
    const nlohmann::json effective = to_json(g);
    const Provenance prov{run_hash("generate", effective, {}), g.seed, kToolVersion};
    const fs::path dir = output_dir(c.out, rc);
    const SyntheticStudy study = generate(g);
    nlohmann::json p{{"config_hash", prov.config_hash}, {"seed", prov.seed}, {"tool_version", prov.tool_version},
                     {"generator", effective}};
    for (const auto& f : write_study(study, dir, p)) std::cout << f.string() << "\n";
    return 0;
}

struct Loaded {
    RunConfig rc;
    Manifest manifest;
    DatasetTable table;
    std::uint64_t seed = 0;
};

Loaded load_inputs(const Common& c) {
    Loaded l;
    l.rc = load_run_config(c.config);
    if (c.jobs) l.rc.cv.jobs = *c.jobs;
    for (const auto& g : c.holdout_exclude) l.rc.cv.excluded_holdout_groups.push_back(g);
    l.seed = c.seed ? *c.seed : l.rc.seed.value_or(0);
    l.rc.cv.seed = l.seed;
    l.manifest = load_manifest(c.manifest);
    l.table = parse_table(l.manifest, read_file(c.data));
    for (const auto& g : l.rc.cv.excluded_holdout_groups) l.table.group_id(g); // unknown names fail early
    return l;
}

void note_off_grid(const ModelConfig& m) {
    std::vector<std::string> off = m.base.off_grid();
    for (auto& s : m.meta.off_grid()) off.push_back(s);
    if (!off.empty()) {
        std::cerr << "note: settings outside the reference tuning grids:";
        for (const auto& s : off) std::cerr << ' ' << s;
        std::cerr << "\n";
    }
}

int cmd_cv(const Common& c) {
    const Loaded l = load_inputs(c);
    note_off_grid(l.rc.model);
    const nlohmann::json effective{{"model", to_json(l.rc.model)}, {"cv", cv_json(l.rc.cv)}, {"seed", l.seed}};
    const Provenance prov{run_hash("cv", effective, {c.data, c.manifest}), l.seed, kToolVersion};
    const CvOutput out = run_cv_detailed(l.table, l.manifest, l.rc.model, l.rc.cv);
    const fs::path dir = output_dir(c.out, l.rc);
    write_text(dir / "report.csv", report_csv(out.report, prov));
    nlohmann::json summary = report_summary_json(out.report, prov);
    summary["config"] = effective;
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_text(dir / "plot_summary.csv", summary_plot_csv(out.report, prov));
    write_text(dir / "plot_gap.csv", gap_plot_csv(out.report, prov));
    for (const auto& w : out.report.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& s : out.report.summary())
        if (s.task == "*")
            std::cout << s.model << ' ' << s.metric << ' ' << csv::format_double(s.mean) << " +/- "
                      << csv::format_double(s.stderr_) << " (n=" << s.n << ")\n";
    std::cout << "wrote " << (dir / "report.csv").string() << "\n";
    return 0;
}

int cmd_grid_search(const Common& c, int budget) {
    if (budget < 1) throw ConfigError("--budget must be at least 1");
    const Loaded l = load_inputs(c);
    const nlohmann::json effective{{"defaults", to_json(l.rc.model)},
                                   {"cv", cv_json(l.rc.cv)},
                                   {"search", to_json(l.rc.search)},
                                   {"budget", budget},
                                   {"seed", l.seed}};
    const Provenance prov{run_hash("grid-search", effective, {c.data, c.manifest}), l.seed, kToolVersion};
    const SearchResult result = grid_search(l.rc.search, l.table, l.manifest, l.rc.model, l.rc.cv, budget, l.seed);
    const fs::path dir = output_dir(c.out, l.rc);
    write_text(dir / "leaderboard.csv", leaderboard_csv(result, prov));
    nlohmann::json best = to_json(result.best.config);
    best["seed"] = l.seed;
    nlohmann::json doc{{"provenance",
                        {{"config_hash", prov.config_hash}, {"seed", prov.seed}, {"tool_version", prov.tool_version}}},
                       {"candidate", result.best.index},
                       {"metric", result.best.metric},
                       {"score", *result.best.score},
                       {"config", best}};
    write_text(dir / "best_config.json", doc.dump(2) + "\n");
    for (const auto& cand : result.leaderboard)
        if (!cand.error.empty()) std::cerr << "candidate " << cand.index << " failed: " << cand.error << "\n";
    std::cout << "best candidate " << result.best.index << ": " << result.best.metric << ' '
              << csv::format_double(*result.best.score) << "\n";
    return 0;
}

// Rebuilds the summary and plot files from an existing report.csv.
int cmd_report(const std::string& report_path, const std::string& out_flag) {
    const std::string text = read_file(report_path);
    const MetricReport report = parse_report_csv(text);
    const auto rows = csv::parse(text);
    Provenance prov{"", 0, kToolVersion};
    if (rows.size() > 1) {
        prov.config_hash = rows[1][0];
        prov.seed = std::stoull(rows[1][1]);
        prov.tool_version = rows[1][2];
    }
    const fs::path dir = out_flag.empty() ? fs::path(report_path).parent_path() : fs::path(out_flag);
    write_text(dir / "summary.json", report_summary_json(report, prov).dump(2) + "\n");
    write_text(dir / "plot_summary.csv", summary_plot_csv(report, prov));
    write_text(dir / "plot_gap.csv", gap_plot_csv(report, prov));
    std::cout << "wrote " << (dir / "summary.json").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot meta-learning for treatment-group outcome prediction"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    Common gen, cv, gs;
    std::string report_path, report_out;
    int budget = 0;

    auto* g = app.add_subcommand("generate", "Write a synthetic study (data.csv, manifest.json, ground_truth.json)");
    g->add_option("--config", gen.config, "Run config JSON")->check(CLI::ExistingFile);
    g->add_option("--out", gen.out, "Output directory");
    g->add_option("--seed", gen.seed, "Random seed");

    auto* c = app.add_subcommand("cv", "Group-holdout cross-validation");
    c->add_option("--config", cv.config, "Run config JSON")->check(CLI::ExistingFile);
    c->add_option("--out", cv.out, "Output directory");
    c->add_option("--seed", cv.seed, "Random seed");
    add_io(c, cv);

    auto* s = app.add_subcommand("grid-search", "Randomized grid search over the hyperparameter space");
    s->add_option("--config", gs.config, "Run config JSON")->check(CLI::ExistingFile);
    s->add_option("--out", gs.out, "Output directory");
    s->add_option("--seed", gs.seed, "Random seed");
    s->add_option("--budget", budget, "Number of sampled candidates")->required();
    add_io(s, gs);

    auto* r = app.add_subcommand("report", "Regenerate summary and plot files from report.csv");
    r->add_option("--report", report_path, "report.csv from a cv run")->required()->check(CLI::ExistingFile);
    r->add_option("--out", report_out, "Output directory (default: alongside the report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*g) return cmd_generate(gen);
        if (*c) return cmd_cv(cv);
        if (*s) return cmd_grid_search(gs, budget);
        if (*r) return cmd_report(report_path, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
