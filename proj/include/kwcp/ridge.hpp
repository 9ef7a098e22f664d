#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kwcp/cp_model.hpp"
#include "kwcp/design.hpp"

namespace kwcp {

struct RidgeConfig {
    /// Multipliers of the mean diagonal of X^T W X; empty means the default
    /// 20 values log-spaced over [1e-4, 1e4].
    std::vector<double> grid;
    int folds = 5;
    std::uint64_t seed = 20240601;

    std::vector<double> effective_grid() const;
};

/// Exact minimizer of sum K (y - x^T b)^2 + lambda ||b||^2 over the triples
/// of stratum (c, t). Throws Error(EmptyStratum) when the stratum has no
/// triples, Error(Domain) when lambda <= 0.
Eigen::VectorXd ridge_fit_slice(const KernelDesign& design, const StratumStats& stats, int c, int t,
                                double lambda);

struct RidgeInit {
    Tensor3 tensor;
    std::vector<double> chosen_lambda;  // per stratum, 0 for empty strata
    std::vector<std::string> warnings;
};

/// Dense p x C x T tensor of per-stratum ridge fits, each penalty chosen by
/// plaque-grouped K-fold cross-validation. Strata are solved in parallel.
RidgeInit ridge_init(const KernelDesign& design, const StratumStats& stats, const RidgeConfig& config);

} // namespace kwcp
