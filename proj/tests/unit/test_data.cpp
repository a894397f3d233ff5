#include "zsml/csv.hpp"
#include "zsml/data.hpp"
#include "zsml/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace zsml;

namespace {

Manifest small_manifest() {
    Manifest m;
    m.columns = {{"group", Timing::pre, ColumnKind::categorical, ColumnRole::group},
                 {"sex", Timing::pre, ColumnKind::categorical, ColumnRole::stratifier},
                 {"age", Timing::pre, ColumnKind::numeric, ColumnRole::feature},
                 {"site", Timing::pre, ColumnKind::categorical, ColumnRole::feature},
                 {"mood_pre", Timing::pre, ColumnKind::numeric, ColumnRole::feature},
                 {"mood_post", Timing::post, ColumnKind::numeric, ColumnRole::feature},
                 {"y", Timing::post, ColumnKind::numeric, ColumnRole::target}};
    m.stratifier = "sex";
    return m;
}

const char* kSmallCsv =
    "group,sex,age,site,mood_pre,mood_post,y\n"
    "b,F,30,north,1,2,0.5\n"
    "a,M,NA,south,2,,1.5\n"
    "b,M,40,north,3,5,-1\n"
    "c,F,50,,4,4,2\n";

std::vector<bool> all_rows(Index n) { return std::vector<bool>(static_cast<std::size_t>(n), true); }

// Random table with `groups` groups and a few numeric features.
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

} // namespace

TEST(Csv, QuotesAndLineEndings) {
    const auto rows = csv::parse("a,\"b,c\",\"say \"\"hi\"\"\"\r\n1,,3\n");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0][1], "b,c");
    EXPECT_EQ(rows[0][2], "say \"hi\"");
    EXPECT_EQ(rows[1][1], "");
    EXPECT_EQ(csv::join({"x", "a,b", "q\""}), "x,\"a,b\",\"q\"\"\"");
    EXPECT_THROW(csv::parse("a,\"unterminated\n"), DataError);
}

TEST(Csv, FormatDoubleRoundTrips) {
    const double v = 0.1 + 0.2;
    EXPECT_EQ(std::stod(csv::format_double(v)), v);
    EXPECT_EQ(csv::format_double(std::nan("")), "");
}

TEST(Manifest, JsonRoundTripAndUnknownKeys) {
    const Manifest m = small_manifest();
    const Manifest back = manifest_from_json(to_json(m));
    EXPECT_EQ(to_json(back), to_json(m));
    auto j = to_json(m);
    j["colums"] = 1;
    try {
        manifest_from_json(j);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("colums"), std::string::npos);
    }
}

TEST(Manifest, ValidationRules) {
    Manifest m = small_manifest();
    m.columns.push_back(m.columns.back());
    EXPECT_THROW(m.validate(), ConfigError); // duplicate name
    m = small_manifest();
    m.columns.erase(m.columns.begin());
    EXPECT_THROW(m.validate(), ConfigError); // no group column
    m = small_manifest();
    m.columns.pop_back();
    EXPECT_THROW(m.validate(), ConfigError); // no target
    m = small_manifest();
    m.differential_pairs.push_back({"y", "mood_pre", ""});
    EXPECT_THROW(m.validate(), ConfigError); // pair touches a target
}

TEST(Manifest, AutoPairSuffix) {
    Manifest m = small_manifest();
    m.auto_pair_suffix = true;
    const auto pairs = m.resolved_pairs();
    ASSERT_EQ(pairs.size(), 1u);
    EXPECT_EQ(pairs[0].post, "mood_post");
    EXPECT_EQ(pairs[0].pre, "mood_pre");
    EXPECT_EQ(pairs[0].name, "mood_diff");
}

TEST(ParseTable, GroupsCategoriesAndMissing) {
    const DatasetTable t = parse_table(small_manifest(), kSmallCsv);
    EXPECT_EQ(t.rows(), 4);
    EXPECT_EQ(t.group_names, (std::vector<std::string>{"b", "a", "c"}));
    EXPECT_EQ(t.group_ids(3), 2);
    const Index sex = t.index_of("sex");
    EXPECT_EQ(t.values(0, sex), 0.0); // F < M
    EXPECT_EQ(t.values(1, sex), 1.0);
    EXPECT_TRUE(t.missing(1, t.index_of("age")));
    EXPECT_TRUE(t.missing(1, t.index_of("mood_post")));
    EXPECT_EQ(t.values(0, t.index_of("site=north")), 1.0);
    EXPECT_EQ(t.values(1, t.index_of("site=south")), 1.0);
    EXPECT_TRUE(t.missing(3, t.index_of("site=north")));
    EXPECT_FALSE(t.find("group").has_value());
}

TEST(ParseTable, ErrorsNameTheCell) {
    const std::string bad = "group,sex,age,site,mood_pre,mood_post,y\nb,F,abc,north,1,2,0.5\n";
    try {
        parse_table(small_manifest(), bad);
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos);
        EXPECT_NE(msg.find("'age'"), std::string::npos);
    }
    EXPECT_THROW(parse_table(small_manifest(), "group,sex,age\n"), DataError);
    EXPECT_THROW(parse_table(small_manifest(), "group,sex,age,site,mood_pre,mood_post,y,extra\n"), DataError);
}

TEST(WelchTest, MatchesReferenceValues) {
    // scipy.stats.ttest_ind(equal_var=False)
    const auto r = two_sample_t_test((VectorXd(5) << 1, 2, 3, 4, 5).finished(), (VectorXd(5) << 2, 3, 4, 5, 6).finished());
    EXPECT_NEAR(r.t, -1.0, 1e-12);
    EXPECT_NEAR(r.p_value, 0.34659350708733416, 1e-10);
    const auto s = two_sample_t_test((VectorXd(4) << 1, 2, 4, 7).finished(), (VectorXd(5) << 3, 5, 9, 10, 12).finished());
    EXPECT_NEAR(s.t, -2.0292954661869373, 1e-10);
    EXPECT_NEAR(s.p_value, 0.08224709984368299, 1e-10);
    const auto d = two_sample_t_test(VectorXd::Ones(3), VectorXd::Ones(3));
    EXPECT_TRUE(d.degenerate);
    EXPECT_EQ(d.p_value, 1.0);
}

TEST(Residualize, StratumMeansBecomeZero) {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        DatasetTable t = random_table(rng, 3, 80, 3);
        VectorXd sex(t.rows());
        std::bernoulli_distribution coin(0.5);
        for (Index i = 0; i < t.rows(); ++i) {
            sex(i) = coin(rng) ? 1.0 : 0.0;
            t.values(i, 0) += 3.0 * sex(i); // strongly stratified
        }
        t.values.conservativeResize(Eigen::NoChange, 4);
        t.values.col(3) = sex;
        t.columns.push_back({"sex", Timing::pre, ColumnKind::numeric, ColumnRole::stratifier});
        t.missing = MaskMatrix::Constant(t.rows(), 4, false);
        t.imputed = MaskMatrix::Constant(t.rows(), 4, false);
        const auto train = rows_not_in_group(t, 2);
        const auto r = residualize(t, "sex", 0.05, train);
        ASSERT_FALSE(r.stats.empty());
        EXPECT_EQ(r.stats.front().column, "f0");
        for (const auto& stat : r.stats) {
            const Index c = r.table.index_of(stat.column);
            for (double s : {0.0, 1.0}) {
                double sum = 0.0;
                int n = 0;
                for (Index i = 0; i < t.rows(); ++i)
                    if (train[static_cast<std::size_t>(i)] && sex(i) == s) {
                        sum += r.table.values(i, c);
                        ++n;
                    }
                EXPECT_NEAR(sum / n, 0.0, 1e-12);
            }
        }
    }
}

TEST(Residualize, KeepOriginalAppendsColumnAndRejectsNonBinary) {
    DatasetTable t = parse_table(small_manifest(), kSmallCsv);
    const auto r = residualize(t, "sex", 1.0, all_rows(t.rows()), true);
    for (const auto& s : r.stats) EXPECT_TRUE(r.table.find(s.column + "_resid").has_value());
    t.values(0, t.index_of("sex")) = 2.0;
    EXPECT_THROW(residualize(t, "sex", 0.05, all_rows(t.rows())), ConfigError);
}

TEST(Impute, UsesTrainingRowsOnly) {
    Rng rng(22);
    DatasetTable t = random_table(rng, 3, 30, 2);
    t.set_missing(0, 0);
    const auto train = rows_not_in_group(t, 1);
    const auto base = impute_means(t, train);
    // Perturbing held-out rows leaves every imputed value unchanged.
    DatasetTable perturbed = t;
    for (Index i = 0; i < t.rows(); ++i)
        if (!train[static_cast<std::size_t>(i)]) perturbed.values(i, 0) += 100.0;
    const auto again = impute_means(perturbed, train);
    EXPECT_EQ(base.means, again.means);
    EXPECT_EQ(base.table.values(0, 0), again.table.values(0, 0));
    EXPECT_TRUE(base.table.imputed(0, 0));
    EXPECT_FALSE(base.table.observed(0, 0));
    double sum = 0.0;
    int n = 0;
    for (Index i = 1; i < t.rows(); ++i)
        if (train[static_cast<std::size_t>(i)]) {
            sum += t.values(i, 0);
            ++n;
        }
    EXPECT_NEAR(base.table.values(0, 0), sum / n, 1e-14);
}

TEST(DropSparse, ThresholdOnFitRows) {
    const DatasetTable t = parse_table(small_manifest(), kSmallCsv);
    const auto r = drop_sparse_features(t, 0.2, {});
    // age, site=*, mood_post each have 1 of 4 missing.
    EXPECT_EQ(r.dropped.size(), 4u);
    EXPECT_TRUE(r.table.find("y").has_value());
    EXPECT_TRUE(drop_sparse_features(t, 0.25, {}).dropped.empty());
    EXPECT_THROW(drop_sparse_features(t, 1.5, {}), ConfigError);
}

TEST(Differential, PostMinusPre) {
    const DatasetTable t = parse_table(small_manifest(), kSmallCsv);
    const DatasetTable d = differential_features(t, {{"mood_post", "mood_pre", ""}});
    const Index c = d.index_of("mood_post_diff");
    EXPECT_EQ(d.values(0, c), 1.0);
    EXPECT_TRUE(d.missing(1, c));
    EXPECT_EQ(d.columns[static_cast<std::size_t>(c)].timing, Timing::post);
    EXPECT_THROW(differential_features(t, {{"y", "mood_pre", ""}}), ConfigError);
}

TEST(Scaling, StandardizeAndNormalize) {
    Rng rng(23);
    const DatasetTable t = random_table(rng, 2, 50, 2);
    const auto train = all_rows(t.rows());
    const DatasetTable s = scale_features(t, fit_scaling(t, ScalingMode::standardize, train));
    for (Index c = 0; c < 2; ++c) {
        const VectorXd v = s.values.col(c);
        EXPECT_NEAR(v.mean(), 0.0, 1e-12);
        EXPECT_NEAR(std::sqrt((v.array() - v.mean()).square().sum() / 49.0), 1.0, 1e-12);
    }
    const DatasetTable n = scale_features(t, fit_scaling(t, ScalingMode::normalize, train));
    EXPECT_NEAR(n.values.col(0).minCoeff(), 0.0, 1e-15);
    EXPECT_NEAR(n.values.col(0).maxCoeff(), 1.0, 1e-15);
}

TEST(Scaling, ZeroVarianceWarnsAndReferenceModeScalesTargets) {
    DatasetTable t = parse_table(small_manifest(), kSmallCsv);
    t.values.col(t.index_of("mood_pre")).setConstant(2.0);
    const auto plan = fit_scaling(t, ScalingMode::standardize, all_rows(t.rows()));
    EXPECT_FALSE(plan.warnings.empty());
    EXPECT_THROW(fit_scaling(t, ScalingMode::standardize_vs_reference_group, all_rows(t.rows())), ConfigError);
    const auto ref = fit_scaling(t, ScalingMode::standardize_vs_reference_group, all_rows(t.rows()), 0);
    ASSERT_EQ(ref.targets.size(), 1u);
    EXPECT_NEAR(ref.targets[0].offset, -0.25, 1e-15); // group "b" rows: 0.5, -1
}

TEST(Split, ExactPartitionOnRandomTables) {
    Rng rng(24);
    std::uniform_int_distribution<int> gcount(2, 6), rows(6, 40);
    for (int trial = 0; trial < 1000; ++trial) {
        const int groups = gcount(rng);
        const DatasetTable t = random_table(rng, groups, rows(rng), 2);
        const int g = trial % groups;
        const Split s = group_holdout_split(t, SplitSpec{g, {}});
        std::vector<int> seen(static_cast<std::size_t>(t.rows()), 0);
        for (Index i : s.train_rows) {
            ++seen[static_cast<std::size_t>(i)];
            ASSERT_NE(t.group_ids(i), g);
        }
        for (Index i : s.test_rows) {
            ++seen[static_cast<std::size_t>(i)];
            ASSERT_EQ(t.group_ids(i), g);
        }
        for (int v : seen) ASSERT_EQ(v, 1);
        ASSERT_EQ(s.train.rows() + s.test.rows(), t.rows());
    }
}

TEST(Split, ExcludedGroupRejected) {
    Rng rng(25);
    const DatasetTable t = random_table(rng, 3, 10, 1);
    EXPECT_THROW(group_holdout_split(t, SplitSpec{1, {1}}), ConfigError);
    EXPECT_THROW(group_holdout_split(t, SplitSpec{5, {}}), ConfigError);
}

TEST(PreprocessPlan, ReplayIsBitExactAfterJsonRoundTrip) {
    const Manifest m = small_manifest();
    const DatasetTable raw = parse_table(m, kSmallCsv);
    PreprocessConfig cfg;
    cfg.scaling = ScalingMode::standardize;
    cfg.missing_threshold = 0.3;
    const auto train = rows_not_in_group(raw, 2);
    const PreprocessPlan plan = fit_preprocess(raw, m, train, cfg);
    const PreprocessPlan back = preprocess_plan_from_json(nlohmann::json::parse(to_json(plan).dump()));
    const DatasetTable a = apply_preprocess(raw, plan);
    const DatasetTable b = apply_preprocess(raw, back);
    ASSERT_EQ(a.cols(), b.cols());
    for (Index i = 0; i < a.values.size(); ++i) {
        const double x = a.values.data()[i], y = b.values.data()[i];
        EXPECT_TRUE((std::isnan(x) && std::isnan(y)) || x == y);
    }
}

TEST(PreprocessPlan, FitIgnoresRowsOutsideTraining) {
    const Manifest m = small_manifest();
    const DatasetTable raw = parse_table(m, kSmallCsv);
    PreprocessConfig cfg;
    cfg.scaling = ScalingMode::standardize;
    cfg.residualize = false;
    const auto train = rows_not_in_group(raw, 2);
    DatasetTable changed = raw;
    changed.values(3, changed.index_of("age")) = 1e6;
    changed.values(3, changed.index_of("mood_pre")) = -1e6;
    EXPECT_EQ(to_json(fit_preprocess(raw, m, train, cfg)), to_json(fit_preprocess(changed, m, train, cfg)));
}

TEST(PreprocessConfig, UnknownKeyRejected) {
    EXPECT_THROW(preprocess_config_from_json({{"scalling", "none"}}), ConfigError);
    EXPECT_EQ(to_json(preprocess_config_from_json(to_json(PreprocessConfig{}))), to_json(PreprocessConfig{}));
}
