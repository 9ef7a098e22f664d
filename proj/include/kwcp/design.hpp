#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "kwcp/cp_model.hpp"
#include "kwcp/dataset.hpp"
#include "kwcp/kernel.hpp"

namespace kwcp {

/// The kernel-weighted regression laid out for fitting.
///
/// Cells carrying at least one positive weight ("active cells") are sorted
/// by stratum s = c * T + t, then by (sample, cell); each stratum is a
/// contiguous row range of `x`. Every active cell owns a contiguous range
/// of weight triples (CSR). Per cell, kappa = sum_j K_ijk and
/// g = sum_j K_ijk y_ij.
struct KernelDesign {
    int p = 0, C = 0, T = 0;

    std::vector<std::int32_t> cell_sample;
    std::vector<std::int32_t> cell_index;
    std::vector<std::int32_t> cell_stratum;
    Eigen::MatrixXd x;  // n_active x p
    Eigen::VectorXd kappa;
    Eigen::VectorXd g;

    std::vector<std::int64_t> triple_offsets;  // n_active + 1
    std::vector<double> triple_weight;
    std::vector<double> triple_outcome;
    std::vector<std::int32_t> triple_plaque;  // global plaque id

    std::vector<std::int64_t> stratum_offsets;  // S + 1, into active cells
    std::vector<std::int64_t> plaque_offsets;   // per sample, into global plaque ids

    int strata() const { return C * T; }
    int stratum_of(int c, int t) const { return c * T + t; }
    int stratum_cell_type(int s) const { return s / T; }
    int stratum_time(int s) const { return s % T; }
    std::int64_t active_cells() const { return static_cast<std::int64_t>(cell_sample.size()); }
    std::int64_t nstar() const { return static_cast<std::int64_t>(triple_weight.size()); }
    int total_plaques() const { return static_cast<int>(plaque_offsets.back()); }
};

KernelDesign build_design(const Dataset& dataset, const KernelWeightSet& weights);

/// Per-stratum weighted Gram statistics: H_s = sum K x x^T, d_s = sum K y x,
/// yy_s = sum K y^2, summed over the stratum's triples.
struct StratumStats {
    std::vector<Eigen::MatrixXd> gram;
    std::vector<Eigen::VectorXd> xy;
    std::vector<double> yy;
    std::vector<std::int64_t> nstar;
};

/// OpenMP over (stratum, gene column).
StratumStats stratum_stats(const KernelDesign& design);

/// Reference: plain loops over cells.
StratumStats stratum_stats_serial(const KernelDesign& design);

/// Fitted value x_ik^T beta_{c,t} for every active cell.
Eigen::VectorXd fitted_values(const KernelDesign& design, const CPModel& model);

/// sum over triples of K (y - x^T beta)^2, blockwise deterministic reduction.
double weighted_loss(const KernelDesign& design, const CPModel& model);

/// Reference for weighted_loss: one left-to-right loop.
double weighted_loss_serial(const KernelDesign& design, const CPModel& model);

/// Residual y_ij - x_ik^T beta for every triple, in design order.
Eigen::VectorXd triple_residuals(const KernelDesign& design, const CPModel& model);

} // namespace kwcp
