#include "zsml/data.hpp"

#include "zsml/csv.hpp"
#include "zsml/errors.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace zsml {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<std::pair<const char*, E>, N>& table,
             const char* what) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<std::pair<const char*, Timing>, 3> kTimings{
    {{"pre", Timing::pre}, {"during", Timing::during}, {"post", Timing::post}}};
constexpr std::array<std::pair<const char*, ColumnKind>, 2> kKinds{
    {{"numeric", ColumnKind::numeric}, {"categorical", ColumnKind::categorical}}};
constexpr std::array<std::pair<const char*, ColumnRole>, 4> kRoles{{{"feature", ColumnRole::feature},
                                                                    {"group", ColumnRole::group},
                                                                    {"target", ColumnRole::target},
                                                                    {"stratifier", ColumnRole::stratifier}}};
constexpr std::array<std::pair<const char*, TaskKind>, 2> kTasks{
    {{"regression", TaskKind::regression}, {"classification", TaskKind::classification}}};
constexpr std::array<std::pair<const char*, ScalingMode>, 4> kScalings{
    {{"none", ScalingMode::none},
     {"normalize", ScalingMode::normalize},
     {"standardize", ScalingMode::standardize},
     {"standardize_vs_reference_group", ScalingMode::standardize_vs_reference_group}}};

template <typename E, std::size_t N>
std::string enum_name(E value, const std::array<std::pair<const char*, E>, N>& table) {
    for (const auto& [name, v] : table)
        if (v == value) return name;
    return "?";
}

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

bool in_rows(const std::vector<bool>& rows, Index i) {
    return rows.empty() || rows[static_cast<std::size_t>(i)];
}

void check_row_mask(const DatasetTable& t, const std::vector<bool>& rows) {
    if (!rows.empty() && static_cast<Index>(rows.size()) != t.rows())
        throw ShapeError("row mask length does not match table rows");
}

bool is_feature(const ColumnMeta& c) { return c.role == ColumnRole::feature; }

DatasetTable append_column(const DatasetTable& t, ColumnMeta meta, const VectorXd& col,
                           const std::vector<bool>& missing) {
    DatasetTable out;
    out.columns = t.columns;
    out.columns.push_back(std::move(meta));
    out.values.resize(t.rows(), t.cols() + 1);
    out.missing.resize(t.rows(), t.cols() + 1);
    out.imputed.resize(t.rows(), t.cols() + 1);
    if (t.cols() > 0) {
        out.values.leftCols(t.cols()) = t.values;
        out.missing.leftCols(t.cols()) = t.missing;
        out.imputed.leftCols(t.cols()) = t.imputed;
    }
    out.values.col(t.cols()) = col;
    for (Index i = 0; i < t.rows(); ++i) {
        out.missing(i, t.cols()) = missing[static_cast<std::size_t>(i)];
        out.imputed(i, t.cols()) = false;
    }
    out.group_ids = t.group_ids;
    out.group_names = t.group_names;
    return out;
}

} // namespace

std::string to_string(Timing t) { return enum_name(t, kTimings); }
std::string to_string(ColumnKind k) { return enum_name(k, kKinds); }
std::string to_string(ColumnRole r) { return enum_name(r, kRoles); }
std::string to_string(TaskKind k) { return enum_name(k, kTasks); }
std::string to_string(ScalingMode m) { return enum_name(m, kScalings); }
Timing timing_from_string(const std::string& s) { return parse_enum(s, kTimings, "timing"); }
ColumnKind column_kind_from_string(const std::string& s) { return parse_enum(s, kKinds, "column kind"); }
ColumnRole column_role_from_string(const std::string& s) { return parse_enum(s, kRoles, "column role"); }
TaskKind task_kind_from_string(const std::string& s) { return parse_enum(s, kTasks, "task kind"); }
ScalingMode scaling_from_string(const std::string& s) { return parse_enum(s, kScalings, "scaling mode"); }

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

const ColumnMeta* Manifest::find(const std::string& name) const {
    for (const auto& c : columns)
        if (c.name == name) return &c;
    return nullptr;
}

void Manifest::validate() const {
    std::set<std::string> names;
    int groups = 0, targets = 0;
    for (const auto& c : columns) {
        if (c.name.empty()) throw ConfigError("manifest: empty column name");
        if (!names.insert(c.name).second) throw ConfigError("manifest: duplicate column '" + c.name + "'");
        groups += c.role == ColumnRole::group;
        targets += c.role == ColumnRole::target;
        if (c.role == ColumnRole::target && c.kind != ColumnKind::numeric)
            throw ConfigError("manifest: target column '" + c.name + "' must be numeric");
    }
    if (groups != 1) throw ConfigError("manifest: exactly one column must have role 'group'");
    if (targets < 1) throw ConfigError("manifest: at least one column must have role 'target'");
    if (stratifier) {
        const ColumnMeta* s = find(*stratifier);
        if (!s || s->role != ColumnRole::stratifier)
            throw ConfigError("manifest: stratifier '" + *stratifier + "' is not a stratifier column");
    }
    for (const auto& p : resolved_pairs()) {
        const ColumnMeta* post = find(p.post);
        const ColumnMeta* pre = find(p.pre);
        if (!post) throw ConfigError("manifest: differential pair names unknown column '" + p.post + "'");
        if (!pre) throw ConfigError("manifest: differential pair names unknown column '" + p.pre + "'");
        if (post->role == ColumnRole::target || pre->role == ColumnRole::target)
            throw ConfigError("manifest: differential pair (" + p.post + ", " + p.pre +
                              ") involves a target column");
    }
}

std::vector<DifferentialPair> Manifest::resolved_pairs() const {
    std::vector<DifferentialPair> out;
    std::set<std::string> seen;
    for (auto p : differential_pairs) {
        if (p.name.empty()) p.name = p.post + "_diff";
        seen.insert(p.post);
        out.push_back(std::move(p));
    }
    if (auto_pair_suffix) {
        const std::string post_suffix = "_post", pre_suffix = "_pre";
        for (const auto& c : columns) {
            if (c.role != ColumnRole::feature || c.kind != ColumnKind::numeric) continue;
            if (c.name.size() <= post_suffix.size() || !c.name.ends_with(post_suffix)) continue;
            if (seen.count(c.name)) continue;
            const std::string stem = c.name.substr(0, c.name.size() - post_suffix.size());
            const ColumnMeta* pre = find(stem + pre_suffix);
            if (!pre || pre->role != ColumnRole::feature) continue;
            out.push_back({c.name, pre->name, stem + "_diff"});
        }
    }
    return out;
}

Manifest manifest_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"columns", "differential_pairs", "auto_pair_suffix", "stratifier",
                         "reference_group", "excluded_holdout_groups", "na_values"},
                        "manifest");
    Manifest m;
    try {
        for (const auto& c : j.at("columns")) {
            reject_unknown_keys(c, {"name", "timing", "kind", "role", "task"}, "manifest column");
            ColumnMeta meta;
            meta.name = c.at("name").get<std::string>();
            meta.timing = timing_from_string(c.value("timing", std::string("pre")));
            meta.kind = column_kind_from_string(c.value("kind", std::string("numeric")));
            meta.role = column_role_from_string(c.value("role", std::string("feature")));
            meta.task = task_kind_from_string(c.value("task", std::string("regression")));
            m.columns.push_back(std::move(meta));
        }
        if (j.contains("differential_pairs"))
            for (const auto& p : j.at("differential_pairs")) {
                reject_unknown_keys(p, {"post", "pre", "name"}, "differential pair");
                m.differential_pairs.push_back(
                    {p.at("post").get<std::string>(), p.at("pre").get<std::string>(), p.value("name", std::string())});
            }
        m.auto_pair_suffix = j.value("auto_pair_suffix", false);
        if (j.contains("stratifier") && !j.at("stratifier").is_null())
            m.stratifier = j.at("stratifier").get<std::string>();
        if (j.contains("reference_group") && !j.at("reference_group").is_null())
            m.reference_group = j.at("reference_group").get<std::string>();
        if (j.contains("excluded_holdout_groups"))
            m.excluded_holdout_groups = j.at("excluded_holdout_groups").get<std::vector<std::string>>();
        if (j.contains("na_values")) m.na_values = j.at("na_values").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    m.validate();
    return m;
}

nlohmann::json to_json(const Manifest& m) {
    nlohmann::json j;
    j["columns"] = nlohmann::json::array();
    for (const auto& c : m.columns) {
        nlohmann::json col{{"name", c.name},
                           {"timing", to_string(c.timing)},
                           {"kind", to_string(c.kind)},
                           {"role", to_string(c.role)}};
        if (c.role == ColumnRole::target) col["task"] = to_string(c.task);
        j["columns"].push_back(std::move(col));
    }
    j["differential_pairs"] = nlohmann::json::array();
    for (const auto& p : m.differential_pairs)
        j["differential_pairs"].push_back({{"post", p.post}, {"pre", p.pre}, {"name", p.name}});
    j["auto_pair_suffix"] = m.auto_pair_suffix;
    j["stratifier"] = m.stratifier ? nlohmann::json(*m.stratifier) : nlohmann::json();
    j["reference_group"] = m.reference_group ? nlohmann::json(*m.reference_group) : nlohmann::json();
    j["excluded_holdout_groups"] = m.excluded_holdout_groups;
    j["na_values"] = m.na_values;
    return j;
}

namespace {
std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}
} // namespace

Manifest load_manifest(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("manifest " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// DatasetTable
// ---------------------------------------------------------------------------

std::optional<Index> DatasetTable::find(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == name) return static_cast<Index>(i);
    return std::nullopt;
}

Index DatasetTable::index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw DataError("unknown column '" + name + "'");
}

int DatasetTable::group_id(const std::string& name) const {
    for (std::size_t g = 0; g < group_names.size(); ++g)
        if (group_names[g] == name) return static_cast<int>(g);
    throw DataError("unknown group '" + name + "'");
}

std::vector<Index> DatasetTable::columns_where(ColumnRole role) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i].role == role) out.push_back(static_cast<Index>(i));
    return out;
}

std::vector<Index> DatasetTable::input_columns() const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (is_feature(columns[i]) && columns[i].timing != Timing::post) out.push_back(static_cast<Index>(i));
    return out;
}

std::vector<Index> DatasetTable::rows_in_group(int g) const {
    std::vector<Index> out;
    for (Index i = 0; i < rows(); ++i)
        if (group_ids(i) == g) out.push_back(i);
    return out;
}

DatasetTable DatasetTable::select_rows(const std::vector<Index>& idx) const {
    DatasetTable out;
    out.columns = columns;
    out.group_names = group_names;
    const auto n = static_cast<Index>(idx.size());
    out.values.resize(n, cols());
    out.missing.resize(n, cols());
    out.imputed.resize(n, cols());
    out.group_ids.resize(n);
    for (Index r = 0; r < n; ++r) {
        const Index src = idx[static_cast<std::size_t>(r)];
        if (src < 0 || src >= rows()) throw ShapeError("select_rows: row index out of range");
        out.values.row(r) = values.row(src);
        out.missing.row(r) = missing.row(src);
        out.imputed.row(r) = imputed.row(src);
        out.group_ids(r) = group_ids(src);
    }
    return out;
}

DatasetTable DatasetTable::select_columns(const std::vector<Index>& idx) const {
    DatasetTable out;
    out.group_ids = group_ids;
    out.group_names = group_names;
    const auto n = static_cast<Index>(idx.size());
    out.values.resize(rows(), n);
    out.missing.resize(rows(), n);
    out.imputed.resize(rows(), n);
    for (Index c = 0; c < n; ++c) {
        const Index src = idx[static_cast<std::size_t>(c)];
        out.columns.push_back(columns[static_cast<std::size_t>(src)]);
        out.values.col(c) = values.col(src);
        out.missing.col(c) = missing.col(src);
        out.imputed.col(c) = imputed.col(src);
    }
    return out;
}

void DatasetTable::set_missing(Index row, Index col) {
    values(row, col) = kNaN;
    missing(row, col) = true;
    imputed(row, col) = false;
}

void DatasetTable::validate() const {
    if (static_cast<Index>(columns.size()) != cols()) throw ShapeError("table: column metadata count mismatch");
    if (missing.rows() != rows() || missing.cols() != cols() || imputed.rows() != rows() ||
        imputed.cols() != cols())
        throw ShapeError("table: mask shape mismatch");
    if (group_ids.size() != rows()) throw ShapeError("table: group id count mismatch");
    for (Index i = 0; i < rows(); ++i)
        if (group_ids(i) < 0 || group_ids(i) >= group_count())
            throw DataError("table: group id out of range at row " + std::to_string(i));
}

namespace {

std::optional<double> parse_number(const std::string& s) {
    std::string_view v = s;
    while (!v.empty() && (v.front() == ' ' || v.front() == '\t')) v.remove_prefix(1);
    while (!v.empty() && (v.back() == ' ' || v.back() == '\t')) v.remove_suffix(1);
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out))
        return std::nullopt;
    return out;
}

} // namespace

DatasetTable parse_table(const Manifest& manifest, std::string_view csv_text) {
    manifest.validate();
    const auto records = csv::parse(csv_text);
    if (records.empty()) throw DataError("csv: missing header row");
    const csv::Row& header = records.front();

    std::map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (!manifest.find(header[i]))
            throw DataError("csv header column '" + header[i] + "' is not declared in the manifest");
        if (!position.emplace(header[i], i).second)
            throw DataError("csv header repeats column '" + header[i] + "'");
    }
    for (const auto& c : manifest.columns)
        if (!position.count(c.name))
            throw DataError("manifest column '" + c.name + "' is missing from the csv header");

    const std::set<std::string> na(manifest.na_values.begin(), manifest.na_values.end());
    auto is_missing = [&](const std::string& cell) { return cell.empty() || na.count(cell) > 0; };
    const std::size_t n = records.size() - 1;
    for (std::size_t r = 1; r < records.size(); ++r)
        if (records[r].size() != header.size())
            throw DataError("csv row " + std::to_string(r + 1) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(records[r].size()));

    DatasetTable t;
    t.group_ids.resize(static_cast<Index>(n));

    struct OutCol {
        ColumnMeta meta;
        std::vector<double> values;
        std::vector<bool> missing;
    };
    std::vector<OutCol> out;

    for (const auto& meta : manifest.columns) {
        const std::size_t src = position.at(meta.name);
        auto cell = [&](std::size_t r) -> const std::string& { return records[r + 1][src]; };
        auto where = [&](std::size_t r) {
            return "row " + std::to_string(r + 2) + ", column '" + meta.name + "'";
        };

        if (meta.role == ColumnRole::group) {
            std::map<std::string, int> ids;
            for (std::size_t r = 0; r < n; ++r) {
                if (is_missing(cell(r))) throw DataError("missing group value at " + where(r));
                auto [it, inserted] = ids.emplace(cell(r), static_cast<int>(t.group_names.size()));
                if (inserted) t.group_names.push_back(cell(r));
                t.group_ids(static_cast<Index>(r)) = it->second;
            }
            continue;
        }

        if (meta.kind == ColumnKind::numeric) {
            OutCol col{meta, std::vector<double>(n, kNaN), std::vector<bool>(n, false)};
            for (std::size_t r = 0; r < n; ++r) {
                if (is_missing(cell(r))) {
                    col.missing[r] = true;
                    continue;
                }
                auto v = parse_number(cell(r));
                if (!v) throw DataError("non-numeric value '" + cell(r) + "' at " + where(r));
                col.values[r] = *v;
            }
            out.push_back(std::move(col));
            continue;
        }

        std::set<std::string> level_set;
        for (std::size_t r = 0; r < n; ++r)
            if (!is_missing(cell(r))) level_set.insert(cell(r));
        const std::vector<std::string> levels(level_set.begin(), level_set.end());

        if (meta.role == ColumnRole::stratifier) {
            OutCol col{meta, std::vector<double>(n, kNaN), std::vector<bool>(n, false)};
            col.meta.kind = ColumnKind::numeric;
            for (std::size_t r = 0; r < n; ++r) {
                if (is_missing(cell(r))) {
                    col.missing[r] = true;
                    continue;
                }
                col.values[r] = static_cast<double>(
                    std::lower_bound(levels.begin(), levels.end(), cell(r)) - levels.begin());
            }
            out.push_back(std::move(col));
            continue;
        }

        for (const auto& level : levels) {
            OutCol col{meta, std::vector<double>(n, kNaN), std::vector<bool>(n, false)};
            col.meta.name = meta.name + "=" + level;
            col.meta.kind = ColumnKind::numeric;
            for (std::size_t r = 0; r < n; ++r) {
                if (is_missing(cell(r))) {
                    col.missing[r] = true;
                    continue;
                }
                col.values[r] = cell(r) == level ? 1.0 : 0.0;
            }
            out.push_back(std::move(col));
        }
    }

    const auto cols = static_cast<Index>(out.size());
    t.values.resize(static_cast<Index>(n), cols);
    t.missing.resize(static_cast<Index>(n), cols);
    t.imputed = MaskMatrix::Constant(static_cast<Index>(n), cols, false);
    for (Index c = 0; c < cols; ++c) {
        auto& col = out[static_cast<std::size_t>(c)];
        t.columns.push_back(col.meta);
        for (Index r = 0; r < static_cast<Index>(n); ++r) {
            t.values(r, c) = col.values[static_cast<std::size_t>(r)];
            t.missing(r, c) = col.missing[static_cast<std::size_t>(r)];
        }
    }
    t.validate();
    return t;
}

DatasetTable load_csv(const std::filesystem::path& manifest_path, const std::filesystem::path& data_path) {
    const Manifest m = load_manifest(manifest_path);
    return parse_table(m, read_file(data_path));
}

std::vector<bool> rows_not_in_group(const DatasetTable& t, int held_out) {
    std::vector<bool> out(static_cast<std::size_t>(t.rows()));
    for (Index i = 0; i < t.rows(); ++i) out[static_cast<std::size_t>(i)] = t.group_ids(i) != held_out;
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessing operations
// ---------------------------------------------------------------------------

DropResult drop_sparse_features(const DatasetTable& table, double threshold,
                                const std::vector<bool>& fit_rows) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ConfigError("missing threshold must lie in [0, 1]");
    check_row_mask(table, fit_rows);
    std::vector<Index> keep;
    DropResult result;
    Index counted = 0;
    for (Index i = 0; i < table.rows(); ++i) counted += in_rows(fit_rows, i);
    for (Index c = 0; c < table.cols(); ++c) {
        const auto& meta = table.columns[static_cast<std::size_t>(c)];
        if (!is_feature(meta) || counted == 0) {
            keep.push_back(c);
            continue;
        }
        Index miss = 0;
        for (Index i = 0; i < table.rows(); ++i) miss += in_rows(fit_rows, i) && table.missing(i, c);
        const double frac = static_cast<double>(miss) / static_cast<double>(counted);
        if (frac > threshold)
            result.dropped.push_back(meta.name);
        else
            keep.push_back(c);
    }
    result.table = table.select_columns(keep);
    return result;
}

ImputeResult impute_means(const DatasetTable& table, const std::vector<bool>& train_rows) {
    check_row_mask(table, train_rows);
    ImputeResult result{table, {}};
    DatasetTable& t = result.table;
    for (Index c = 0; c < t.cols(); ++c) {
        const auto& meta = t.columns[static_cast<std::size_t>(c)];
        if (!is_feature(meta)) continue;
        double sum = 0.0;
        Index count = 0;
        bool any_missing = false;
        for (Index i = 0; i < t.rows(); ++i) {
            any_missing = any_missing || t.missing(i, c);
            if (in_rows(train_rows, i) && !t.missing(i, c)) {
                sum += t.values(i, c);
                ++count;
            }
        }
        if (count == 0)
            throw DataError("impute_means: column '" + meta.name + "' has no observed training value");
        const double mean = sum / static_cast<double>(count);
        result.means.emplace_back(meta.name, mean);
        if (!any_missing) continue;
        for (Index i = 0; i < t.rows(); ++i)
            if (t.missing(i, c)) {
                t.values(i, c) = mean;
                t.missing(i, c) = false;
                t.imputed(i, c) = true;
            }
    }
    return result;
}

TTestResult two_sample_t_test(const VectorXd& a, const VectorXd& b) {
    if (a.size() < 2 || b.size() < 2) throw ConfigError("t-test needs at least two values per sample");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = a.mean(), mb = b.mean();
    const double va = (a.array() - ma).square().sum() / (na - 1.0);
    const double vb = (b.array() - mb).square().sum() / (nb - 1.0);
    const double sa = va / na, sb = vb / nb;
    TTestResult r;
    if (!(sa + sb > 0.0)) {
        r.degenerate = true;
        r.p_value = 1.0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    const boost::math::students_t dist(r.df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    r.p_value = std::min(1.0, r.p_value);
    return r;
}

ResidualResult residualize(const DatasetTable& table, const std::string& stratifier, double alpha,
                           const std::vector<bool>& train_rows, bool keep_original) {
    check_row_mask(table, train_rows);
    const Index s = table.index_of(stratifier);
    for (Index i = 0; i < table.rows(); ++i) {
        if (table.missing(i, s)) throw DataError("residualize: missing stratifier value at row " + std::to_string(i));
        const double v = table.values(i, s);
        if (v != 0.0 && v != 1.0) throw ConfigError("residualize: stratifier '" + stratifier + "' is not binary");
    }

    ResidualResult result{table, {}};
    const Index original_cols = table.cols();
    for (Index c = 0; c < original_cols; ++c) {
        const auto& meta = table.columns[static_cast<std::size_t>(c)];
        if (!is_feature(meta)) continue;
        std::vector<double> s0, s1;
        for (Index i = 0; i < table.rows(); ++i) {
            if (!in_rows(train_rows, i) || table.missing(i, c)) continue;
            (table.values(i, s) == 0.0 ? s0 : s1).push_back(table.values(i, c));
        }
        if (s0.size() < 2 || s1.size() < 2) continue;
        const VectorXd a = Eigen::Map<const VectorXd>(s0.data(), static_cast<Index>(s0.size()));
        const VectorXd b = Eigen::Map<const VectorXd>(s1.data(), static_cast<Index>(s1.size()));
        const TTestResult tt = two_sample_t_test(a, b);
        if (tt.degenerate || !(tt.p_value < alpha)) continue;

        ResidualStat stat{meta.name, a.mean(), b.mean(), tt.p_value};
        VectorXd resid = table.values.col(c);
        for (Index i = 0; i < table.rows(); ++i)
            resid(i) -= table.values(i, s) == 0.0 ? stat.mean0 : stat.mean1;
        if (keep_original) {
            ColumnMeta m = meta;
            m.name = meta.name + "_resid";
            std::vector<bool> miss(static_cast<std::size_t>(table.rows()));
            for (Index i = 0; i < table.rows(); ++i) miss[static_cast<std::size_t>(i)] = result.table.missing(i, c);
            result.table = append_column(result.table, std::move(m), resid, miss);
        } else {
            for (Index i = 0; i < table.rows(); ++i)
                if (!result.table.missing(i, c)) result.table.values(i, c) = resid(i);
        }
        result.stats.push_back(std::move(stat));
    }
    return result;
}

DatasetTable differential_features(const DatasetTable& table, const std::vector<DifferentialPair>& pairs) {
    DatasetTable out = table;
    for (const auto& p : pairs) {
        const Index post = out.index_of(p.post);
        const Index pre = out.index_of(p.pre);
        const auto& mpost = out.columns[static_cast<std::size_t>(post)];
        const auto& mpre = out.columns[static_cast<std::size_t>(pre)];
        if (mpost.role == ColumnRole::target || mpre.role == ColumnRole::target)
            throw ConfigError("differential pair (" + p.post + ", " + p.pre + ") involves a target column");
        if (mpost.role != ColumnRole::feature || mpre.role != ColumnRole::feature)
            throw ConfigError("differential pair (" + p.post + ", " + p.pre + ") must pair feature columns");
        const std::string name = p.name.empty() ? p.post + "_diff" : p.name;
        if (out.find(name)) throw ConfigError("differential column '" + name + "' already exists");
        VectorXd diff(out.rows());
        std::vector<bool> miss(static_cast<std::size_t>(out.rows()));
        for (Index i = 0; i < out.rows(); ++i) {
            const bool m = out.missing(i, post) || out.missing(i, pre);
            miss[static_cast<std::size_t>(i)] = m;
            diff(i) = m ? kNaN : out.values(i, post) - out.values(i, pre);
        }
        ColumnMeta meta{name, Timing::post, ColumnKind::numeric, ColumnRole::feature, TaskKind::regression};
        out = append_column(out, std::move(meta), diff, miss);
    }
    return out;
}

ScalingPlan fit_scaling(const DatasetTable& table, ScalingMode mode, const std::vector<bool>& train_rows,
                        std::optional<int> reference_group) {
    check_row_mask(table, train_rows);
    ScalingPlan plan;
    plan.mode = mode;
    plan.reference_group = reference_group;
    if (mode == ScalingMode::none) return plan;
    if (mode == ScalingMode::standardize_vs_reference_group) {
        if (!reference_group) throw ConfigError("reference-group scaling needs a reference group");
        if (*reference_group < 0 || *reference_group >= table.group_count())
            throw ConfigError("reference group id out of range");
    }

    auto fit_column = [&](Index c, auto&& use_row, bool minmax) -> std::optional<ColumnScale> {
        const auto& name = table.columns[static_cast<std::size_t>(c)].name;
        std::vector<double> vals;
        for (Index i = 0; i < table.rows(); ++i)
            if (use_row(i) && !table.missing(i, c)) vals.push_back(table.values(i, c));
        if (vals.empty()) {
            plan.warnings.push_back("column '" + name + "' has no fitting rows; left unscaled");
            return std::nullopt;
        }
        if (minmax) {
            const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
            if (!(*hi > *lo)) {
                plan.warnings.push_back("column '" + name + "' is constant; left unscaled");
                return std::nullopt;
            }
            return ColumnScale{name, *lo, *hi - *lo};
        }
        const VectorXd v = Eigen::Map<const VectorXd>(vals.data(), static_cast<Index>(vals.size()));
        const double mean = v.mean();
        const double var = vals.size() > 1 ? (v.array() - mean).square().sum() / static_cast<double>(vals.size() - 1) : 0.0;
        if (!(var > 0.0)) {
            plan.warnings.push_back("column '" + name + "' has zero variance; left unscaled");
            return std::nullopt;
        }
        return ColumnScale{name, mean, std::sqrt(var)};
    };

    const bool minmax = mode == ScalingMode::normalize;
    for (Index c = 0; c < table.cols(); ++c) {
        const auto& meta = table.columns[static_cast<std::size_t>(c)];
        if (is_feature(meta)) {
            if (auto s = fit_column(c, [&](Index i) { return in_rows(train_rows, i); }, minmax))
                plan.features.push_back(*s);
        } else if (meta.role == ColumnRole::target && mode == ScalingMode::standardize_vs_reference_group) {
            auto use = [&](Index i) { return in_rows(train_rows, i) && table.group_ids(i) == *reference_group; };
            if (auto s = fit_column(c, use, false)) plan.targets.push_back(*s);
        }
    }
    return plan;
}

DatasetTable scale_features(const DatasetTable& table, const ScalingPlan& plan) {
    DatasetTable out = table;
    auto apply = [&](const ColumnScale& s) {
        const Index c = out.index_of(s.column);
        out.values.col(c) = (out.values.col(c).array() - s.offset) / s.scale;
    };
    for (const auto& s : plan.features) apply(s);
    for (const auto& s : plan.targets) apply(s);
    return out;
}

Split group_holdout_split(const DatasetTable& table, const SplitSpec& spec) {
    if (std::find(spec.excluded_holdout_groups.begin(), spec.excluded_holdout_groups.end(),
                  spec.held_out_group) != spec.excluded_holdout_groups.end())
        throw ConfigError("held-out group is listed as excluded from holdout");
    if (spec.held_out_group < 0 || spec.held_out_group >= table.group_count())
        throw ConfigError("held-out group id out of range");
    Split s;
    for (Index i = 0; i < table.rows(); ++i)
        (table.group_ids(i) == spec.held_out_group ? s.test_rows : s.train_rows).push_back(i);
    if (s.test_rows.empty())
        throw DataError("held-out group '" + table.group_names[static_cast<std::size_t>(spec.held_out_group)] +
                        "' has no rows");
    s.train = table.select_rows(s.train_rows);
    s.test = table.select_rows(s.test_rows);
    return s;
}

// ---------------------------------------------------------------------------
// Preprocess plan
// ---------------------------------------------------------------------------

nlohmann::json to_json(const PreprocessConfig& c) {
    return {{"missing_threshold", c.missing_threshold},
            {"scaling", to_string(c.scaling)},
            {"residualize", c.residualize},
            {"residual_alpha", c.residual_alpha},
            {"residual_keep_original", c.residual_keep_original},
            {"differential", c.differential}};
}

PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"missing_threshold", "scaling", "residualize", "residual_alpha",
                         "residual_keep_original", "differential"},
                        "preprocess");
    PreprocessConfig c;
    try {
        c.missing_threshold = j.value("missing_threshold", c.missing_threshold);
        c.scaling = scaling_from_string(j.value("scaling", to_string(c.scaling)));
        c.residualize = j.value("residualize", c.residualize);
        c.residual_alpha = j.value("residual_alpha", c.residual_alpha);
        c.residual_keep_original = j.value("residual_keep_original", c.residual_keep_original);
        c.differential = j.value("differential", c.differential);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("preprocess: ") + e.what());
    }
    if (!(c.missing_threshold >= 0.0 && c.missing_threshold <= 1.0))
        throw ConfigError("preprocess: missing_threshold must lie in [0, 1]");
    if (!(c.residual_alpha > 0.0 && c.residual_alpha < 1.0))
        throw ConfigError("preprocess: residual_alpha must lie in (0, 1)");
    return c;
}

nlohmann::json to_json(const PreprocessPlan& p) {
    nlohmann::json j;
    j["config"] = to_json(p.config);
    j["differential_pairs"] = nlohmann::json::array();
    for (const auto& d : p.differential_pairs)
        j["differential_pairs"].push_back({{"post", d.post}, {"pre", d.pre}, {"name", d.name}});
    j["dropped_columns"] = p.dropped_columns;
    j["imputation_means"] = nlohmann::json::array();
    for (const auto& [name, mean] : p.imputation_means) j["imputation_means"].push_back({name, mean});
    j["stratifier"] = p.stratifier ? nlohmann::json(*p.stratifier) : nlohmann::json();
    j["residuals"] = nlohmann::json::array();
    for (const auto& r : p.residuals)
        j["residuals"].push_back({{"column", r.column}, {"mean0", r.mean0}, {"mean1", r.mean1}, {"p_value", r.p_value}});
    auto scales = [](const std::vector<ColumnScale>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& s : v) a.push_back({{"column", s.column}, {"offset", s.offset}, {"scale", s.scale}});
        return a;
    };
    j["scaling"] = {{"mode", to_string(p.scaling.mode)},
                    {"reference_group", p.scaling.reference_group ? nlohmann::json(*p.scaling.reference_group)
                                                                  : nlohmann::json()},
                    {"features", scales(p.scaling.features)},
                    {"targets", scales(p.scaling.targets)},
                    {"warnings", p.scaling.warnings}};
    return j;
}

PreprocessPlan preprocess_plan_from_json(const nlohmann::json& j) {
    PreprocessPlan p;
    try {
        p.config = preprocess_config_from_json(j.at("config"));
        for (const auto& d : j.at("differential_pairs"))
            p.differential_pairs.push_back({d.at("post"), d.at("pre"), d.at("name")});
        p.dropped_columns = j.at("dropped_columns").get<std::vector<std::string>>();
        for (const auto& m : j.at("imputation_means"))
            p.imputation_means.emplace_back(m.at(0).get<std::string>(), m.at(1).get<double>());
        if (!j.at("stratifier").is_null()) p.stratifier = j.at("stratifier").get<std::string>();
        for (const auto& r : j.at("residuals"))
            p.residuals.push_back({r.at("column"), r.at("mean0"), r.at("mean1"), r.at("p_value")});
        const auto& s = j.at("scaling");
        p.scaling.mode = scaling_from_string(s.at("mode"));
        if (!s.at("reference_group").is_null()) p.scaling.reference_group = s.at("reference_group").get<int>();
        for (const auto& c : s.at("features")) p.scaling.features.push_back({c.at("column"), c.at("offset"), c.at("scale")});
        for (const auto& c : s.at("targets")) p.scaling.targets.push_back({c.at("column"), c.at("offset"), c.at("scale")});
        p.scaling.warnings = s.at("warnings").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("preprocess plan: ") + e.what());
    }
    return p;
}

namespace {

DatasetTable apply_residuals(const DatasetTable& table, const PreprocessPlan& plan) {
    if (!plan.stratifier || plan.residuals.empty()) return table;
    DatasetTable out = table;
    const Index s = out.index_of(*plan.stratifier);
    for (const auto& r : plan.residuals) {
        const Index c = out.index_of(r.column);
        VectorXd resid(out.rows());
        std::vector<bool> miss(static_cast<std::size_t>(out.rows()));
        for (Index i = 0; i < out.rows(); ++i) {
            miss[static_cast<std::size_t>(i)] = out.missing(i, c);
            resid(i) = out.values(i, c) - (out.values(i, s) == 0.0 ? r.mean0 : r.mean1);
        }
        if (plan.config.residual_keep_original) {
            ColumnMeta m = out.columns[static_cast<std::size_t>(c)];
            m.name = r.column + "_resid";
            out = append_column(out, std::move(m), resid, miss);
        } else {
            for (Index i = 0; i < out.rows(); ++i)
                if (!out.missing(i, c)) out.values(i, c) = resid(i);
        }
    }
    return out;
}

DatasetTable apply_imputation(const DatasetTable& table, const PreprocessPlan& plan) {
    DatasetTable out = table;
    for (const auto& [name, mean] : plan.imputation_means) {
        const Index c = out.index_of(name);
        for (Index i = 0; i < out.rows(); ++i)
            if (out.missing(i, c)) {
                out.values(i, c) = mean;
                out.missing(i, c) = false;
                out.imputed(i, c) = true;
            }
    }
    return out;
}

DatasetTable drop_named(const DatasetTable& table, const std::vector<std::string>& names) {
    std::vector<Index> keep;
    for (Index c = 0; c < table.cols(); ++c)
        if (std::find(names.begin(), names.end(), table.columns[static_cast<std::size_t>(c)].name) == names.end())
            keep.push_back(c);
    return table.select_columns(keep);
}

} // namespace

PreprocessPlan fit_preprocess(const DatasetTable& raw, const Manifest& manifest,
                              const std::vector<bool>& train_rows, const PreprocessConfig& config) {
    check_row_mask(raw, train_rows);
    PreprocessPlan plan;
    plan.config = config;

    DatasetTable t = raw;
    if (config.differential) {
        plan.differential_pairs = manifest.resolved_pairs();
        t = differential_features(t, plan.differential_pairs);
    }

    auto dropped = drop_sparse_features(t, config.missing_threshold, train_rows);
    plan.dropped_columns = dropped.dropped;
    t = std::move(dropped.table);

    auto imputed = impute_means(t, train_rows);
    plan.imputation_means = imputed.means;
    t = std::move(imputed.table);

    if (config.residualize && manifest.stratifier) {
        plan.stratifier = manifest.stratifier;
        auto res = residualize(t, *manifest.stratifier, config.residual_alpha, train_rows,
                               config.residual_keep_original);
        plan.residuals = res.stats;
        t = std::move(res.table);
    }

    std::optional<int> reference;
    if (config.scaling == ScalingMode::standardize_vs_reference_group) {
        if (!manifest.reference_group)
            throw ConfigError("reference-group scaling requires 'reference_group' in the manifest");
        reference = t.group_id(*manifest.reference_group);
    }
    plan.scaling = fit_scaling(t, config.scaling, train_rows, reference);
    return plan;
}

DatasetTable apply_preprocess(const DatasetTable& raw, const PreprocessPlan& plan) {
    DatasetTable t = raw;
    if (plan.config.differential) t = differential_features(t, plan.differential_pairs);
    t = drop_named(t, plan.dropped_columns);
    t = apply_imputation(t, plan);
    t = apply_residuals(t, plan);
    return scale_features(t, plan.scaling);
}

} // namespace zsml
