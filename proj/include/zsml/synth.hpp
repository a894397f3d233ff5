#pragma once

#include "zsml/data.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace zsml {

enum class Coupling { linear, mild_nonlinear };

/// Grouped randomized-study simulator. Pre-treatment features are standard
/// normal; the target is y = f(x) + shift[g] + noise and each auxiliary
/// post-treatment column is a_j = f_j(x) + aux_scale * shift[g] + noise, where
/// f_j shares `aux_share` of f.
struct GeneratorConfig {
    int groups = 3;
    std::vector<int> n_per_group{60}; // one entry, or one per group
    int d_pre = 4;
    int d_aux = 8;
    std::vector<double> target_shift{-2.0, 0.0, 2.0}; // per group, in target units
    double aux_scale = 1.0;
    double noise_sigma = 1.0;     // target noise sd
    double aux_noise_sigma = 1.0; // auxiliary-column noise sd
    double signal_scale = 0.3;    // sd of the linear part of f
    double aux_share = 0.8;
    Coupling coupling = Coupling::linear;
    double missing_rate = 0.0; // MCAR over feature cells
    TaskKind target_task = TaskKind::regression;
    bool stratifier = false;   // add a binary "sex" column with a shift on x1
    std::uint64_t seed = 0;

    int rows_in_group(int g) const;
    void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

struct GroundTruth {
    VectorXd noiseless_target; // f(x) + shift[g], per row
    std::vector<double> target_shift;
    MatrixXd aux_shift;        // groups x d_aux
    double bayes_mse = 0.0;
};

nlohmann::json to_json(const GroundTruth& t);

struct SyntheticStudy {
    DatasetTable table;
    Manifest manifest;
    GroundTruth truth;
    std::string csv; // same content as `table`, as written to disk
};

SyntheticStudy generate(const GeneratorConfig& config);

/// Irreducible error of the additive Gaussian target model: noise_sigma^2.
double bayes_optimal_mse(const GeneratorConfig& config);

/// Writes data.csv, manifest.json and ground_truth.json into `dir`.
std::vector<std::filesystem::path> write_study(const SyntheticStudy& study, const std::filesystem::path& dir,
                                               const nlohmann::json& provenance = {});

} // namespace zsml
