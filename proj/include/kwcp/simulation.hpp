#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kwcp/cp_model.hpp"
#include "kwcp/dataset.hpp"

namespace kwcp {

using Rng = std::mt19937_64;

struct SimConfig {
    double spots_mean = 5000.0;
    double section_um = 1000.0;  // side of the square section
    double grid_jitter = 0.35;   // fraction of the grid pitch
    int groups = 3;              // C
    int times = 2;               // T, one sample per time point
    int genes = 50;              // p
    int active_genes = 5;
    int true_rank = 4;
    int plaques = 100;  // M_i per sample
    double sigma2 = 1.0;
    double phi = 100.0;  // exponential covariance range, um
    // Expression: log x = shift(group) + field_sd * f(s) + noise_sd * eps,
    // f a unit-variance smooth random field of length scale field_scale_um.
    double shifted_gene_frac = 0.2;
    double group_shift_sd = 0.5;
    double field_sd = 0.5;
    double noise_sd = 0.3;
    double field_scale_um = 40.0;
    int field_features = 64;
    int kmeans_iters = 25;
    std::uint64_t seed = 1;

    void validate() const;
};

/// A simulated section before plaque selection: every spot with its group
/// and expression.
struct SimSpots {
    std::vector<Point> locations;
    std::vector<int> groups;
    RowMatrix expression;  // spots x p
};

struct SimTruth {
    Dataset dataset;  // plaque spots removed from the predictor cells
    Tensor3 true_beta;
    CPModel true_model;  // raw, unnormalized factors
    std::vector<Eigen::VectorXd> noise;  // per sample, per plaque
    std::vector<std::vector<int>> plaque_spots;  // per sample, spot indices
    SimConfig config;
};

/// Spot layout, spatial groups and expression for one section. Per-gene
/// shifts and fields are drawn from `rng`.
SimSpots generate_sample(const SimConfig& config, int sample_index, Rng& rng);

/// Greedy max-min selection with per-group quotas differing by at most one;
/// groups pick in turn, each against all plaques chosen so far.
/// Throws Error(Infeasible) when a group is too small.
std::vector<int> select_plaques(const SimSpots& spots, int M, int groups, Rng& rng);

struct TrueBeta {
    CPModel model;
    Tensor3 tensor;
};

/// Sparse CP truth: `active_genes` shared nonzero rows in q1 ~ N(0, 2^2),
/// q2 ~ N(5, 2^2), q3 ~ N(0, 0.5^2), w = 1.
TrueBeta generate_true_beta(const SimConfig& config, Rng& rng);

/// Outcomes at the chosen spots: x^T beta_{c,t} plus N(0, sigma2 exp(-d/phi))
/// noise. `noise_out` receives the draw when non-null.
Eigen::VectorXd generate_outcomes(const SimSpots& spots, const std::vector<int>& plaques, const Tensor3& beta,
                                  int time_index, double sigma2, double phi, Rng& rng,
                                  Eigen::VectorXd* noise_out = nullptr);

/// Draw from N(0, sigma2 K) with K(j,j') = exp(-d/phi) via Cholesky with
/// escalating diagonal jitter (1e-10 up to 1e-6).
Eigen::VectorXd correlated_noise(const std::vector<Point>& locations, double sigma2, double phi, Rng& rng);

/// Two (or T) sections, one per time point, composed into a SimTruth.
SimTruth generate_replicate(const SimConfig& config);

/// Writes the dataset CSVs plus truth.json into `dir`.
void write_replicate(const SimTruth& truth, const std::string& dir);

/// Reads truth.json written by write_replicate.
Tensor3 read_truth_tensor(const std::string& truth_path);

} // namespace kwcp
