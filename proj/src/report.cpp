#include "zsml/eval.hpp"

#include "zsml/csv.hpp"
#include "zsml/errors.hpp"

#include <fstream>
#include <map>

namespace zsml {

namespace {

std::string opt(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); }

csv::Row prov_cells(const Provenance& p) { return {p.config_hash, std::to_string(p.seed), p.tool_version}; }

csv::Row with_prov(const Provenance& p, const csv::Row& rest) {
    csv::Row row = prov_cells(p);
    row.insert(row.end(), rest.begin(), rest.end());
    return row;
}

nlohmann::json prov_json(const Provenance& p) {
    return {{"config_hash", p.config_hash}, {"seed", p.seed}, {"tool_version", p.tool_version}};
}

const csv::Row report_header{"config_hash", "seed",  "tool_version", "held_out_group", "task", "model",
                             "metric",      "value", "train_value",  "gap",            "n_test", "note"};

std::optional<double> parse_opt(const std::string& s, std::size_t line) {
    if (s.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("report line " + std::to_string(line) + ": bad number '" + s + "'");
    }
}

} // namespace

std::string report_csv(const MetricReport& report, const Provenance& prov) {
    std::string out = csv::join(report_header) + "\n";
    for (const auto& r : report.rows) {
        std::optional<double> gap;
        if (r.value && r.train_value) gap = *r.value - *r.train_value;
        out += csv::join(with_prov(prov, {r.held_out_group, r.task, r.model, r.metric, opt(r.value),
                                          opt(r.train_value), opt(gap), std::to_string(r.n_test), r.note})) +
               "\n";
    }
    return out;
}

MetricReport parse_report_csv(std::string_view text) {
    const auto rows = csv::parse(text);
    if (rows.empty() || rows.front() != report_header) throw DataError("report: unexpected header");
    MetricReport report;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& c = rows[i];
        if (c.size() != report_header.size())
            throw DataError("report line " + std::to_string(i + 1) + ": expected " +
                            std::to_string(report_header.size()) + " fields");
        MetricRow r;
        r.held_out_group = c[3];
        r.task = c[4];
        r.model = c[5];
        r.metric = c[6];
        r.value = parse_opt(c[7], i + 1);
        r.train_value = parse_opt(c[8], i + 1);
        r.n_test = static_cast<Index>(parse_opt(c[10], i + 1).value_or(0.0));
        r.note = c[11];
        report.rows.push_back(std::move(r));
    }
    return report;
}

nlohmann::json report_summary_json(const MetricReport& report, const Provenance& prov) {
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& s : report.summary())
        summary.push_back({{"model", s.model},
                           {"task", s.task},
                           {"metric", s.metric},
                           {"mean", s.mean},
                           {"stderr", s.stderr_},
                           {"n", s.n}});
    nlohmann::json gaps = nlohmann::json::array();
    for (const auto& g : overfit_gap(report)) {
        nlohmann::json e{{"model", g.model}, {"n", g.n}};
        if (g.n > 0) {
            e["min"] = g.min;
            e["q1"] = g.q1;
            e["median"] = g.median;
            e["q3"] = g.q3;
            e["max"] = g.max;
        }
        gaps.push_back(e);
    }
    std::vector<std::string> folds;
    for (const auto& r : report.rows)
        if (std::find(folds.begin(), folds.end(), r.held_out_group) == folds.end()) folds.push_back(r.held_out_group);
    nlohmann::json undefined = nlohmann::json::array();
    for (const auto& r : report.rows)
        if (!r.note.empty())
            undefined.push_back({{"held_out_group", r.held_out_group}, {"task", r.task}, {"model", r.model},
                                 {"note", r.note}});
    return {{"provenance", prov_json(prov)},
            {"folds", folds},
            {"models", report.models()},
            {"summary", summary},
            {"overfit_gap", gaps},
            {"notes", undefined},
            {"warnings", report.warnings}};
}

std::string summary_plot_csv(const MetricReport& report, const Provenance& prov) {
    std::string out =
        csv::join({"config_hash", "seed", "tool_version", "model", "task", "metric", "mean", "stderr", "n"}) + "\n";
    for (const auto& s : report.summary())
        out += csv::join(with_prov(prov, {s.model, s.task, s.metric, csv::format_double(s.mean),
                                          csv::format_double(s.stderr_), std::to_string(s.n)})) +
               "\n";
    return out;
}

std::string gap_plot_csv(const MetricReport& report, const Provenance& prov) {
    std::string out = csv::join({"config_hash", "seed", "tool_version", "model", "min", "q1", "median", "q3", "max",
                                 "n"}) +
                      "\n";
    for (const auto& g : overfit_gap(report))
        out += csv::join(with_prov(prov, {g.model, csv::format_double(g.min), csv::format_double(g.q1),
                                          csv::format_double(g.median), csv::format_double(g.q3),
                                          csv::format_double(g.max), std::to_string(g.n)})) +
               "\n";
    return out;
}

std::string leaderboard_csv(const SearchResult& result, const Provenance& prov) {
    std::string out = csv::join({"config_hash", "seed", "tool_version", "rank", "candidate", "metric", "score",
                                 "error", "config"}) +
                      "\n";
    int rank = 1;
    for (const auto& c : result.leaderboard)
        out += csv::join(with_prov(prov, {std::to_string(rank++), std::to_string(c.index), c.metric, opt(c.score),
                                          c.error, to_json(c.config).dump()})) +
               "\n";
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
    if (!out) throw DataError("failed writing " + path.string());
}

} // namespace zsml
