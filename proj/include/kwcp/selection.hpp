#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kwcp/dataset.hpp"
#include "kwcp/design.hpp"
#include "kwcp/ridge.hpp"
#include "kwcp/solver.hpp"

namespace kwcp {

struct SelectionConfig {
    /// Start of the penalty path; nullopt derives it from the data.
    std::optional<double> lambda_max;
    double decay = 0.9;
    int path_max_steps = 60;
    /// Stop once this many penalties have been evaluated past the current
    /// BIC minimizer (counted from the first non-zero fit).
    int path_patience = 5;
    int max_doublings = 64;
    std::vector<int> neighbor_counts{5, 10, 12, 15, 20, 25, 30, 35, 40, 45, 50, 70};
    /// 0 selects C*T capped by the CP rank bound.
    int r_max = 0;
    SolverConfig solver;
    RidgeConfig ridge;
};

int default_r_max(int p, int C, int T);

struct BicValue {
    double value = 0.0;
    int nu = 0;
    bool perfect_fit = false;  // zero weighted loss, value = -inf
};

/// Nonzero (|.| > 1e-12) factor entries across q1, q2, q3.
int count_nonzero_factors(const CPModel& model);

/// N* log(loss / N*) + nu log N*, loss = sum K (y - x^T beta)^2.
BicValue bic_criterion(const CPModel& model, double weighted_loss, std::int64_t nstar);
BicValue bic_criterion(const FitResult& fit, const KernelDesign& design);

/// (1/N*) sum K (y - x^T beta)^2.
double normalized_loss(const CPModel& model, const KernelDesign& design);

/// lambda_max, lambda_max*decay, ... by repeated multiplication.
std::vector<double> lambda_sequence(double lambda_max, double decay, int count);

/// Penalty large enough to zero every gene loading on the first sweep from
/// the rank-R starting point, estimated from the starting sufficient stats.
double estimate_lambda_max(const KernelDesign& design, const StratumStats& stats, const CPModel& start);

struct PathPoint {
    double lambda = 0.0;
    FitResult fit;
    BicValue bic;
    double normalized_loss = 0.0;
};

struct LambdaPath {
    std::vector<PathPoint> points;
    int selected = -1;
    double lambda_max = 0.0;
    std::vector<std::string> warnings;
};

/// Fits along lambda_max * decay^k until the BIC minimizer is interior or the
/// step cap is reached. lambda_max is doubled until its fit is all-zero.
LambdaPath lambda_path(const KernelDesign& design, const StratumStats& stats, InitCache& init,
                       const SelectionConfig& config);

/// Knee of a decreasing curve: both axes rescaled to [0, 1], largest
/// perpendicular distance to the chord through the endpoints, ties to the
/// smaller L. Throws Error(DegenerateCurve) for fewer than 3 points.
int elbow_select(const std::vector<std::pair<int, double>>& points);

/// Chord distances used by elbow_select, parallel to the input.
std::vector<double> elbow_distances(const std::vector<std::pair<int, double>>& points);

struct BandwidthRun {
    int L = 0;
    std::vector<double> bandwidths;
    std::int64_t nstar = 0;
    bool excluded = false;
    LambdaPath path;
    std::vector<std::string> warnings;

    const PathPoint* selected() const
    {
        return path.selected >= 0 ? &path.points[static_cast<std::size_t>(path.selected)] : nullptr;
    }
};

struct PathResult {
    std::vector<BandwidthRun> runs;  // one per L, in grid order
    int selected_run = -1;
    int r_max = 0;
    CPModel final_model;
    std::vector<std::string> warnings;

    const BandwidthRun& selected() const { return runs.at(static_cast<std::size_t>(selected_run)); }
};

/// The whole procedure: for every L compute H_i(L), weights, the penalty path
/// and its BIC choice; then pick L by the elbow of the normalized losses.
/// L values run in parallel.
PathResult run_full(const Dataset& dataset, const SelectionConfig& config);

/// Everything run_full needs for one L. Throws Error(NoOverlap) when N* = 0.
BandwidthRun run_bandwidth(const Dataset& dataset, const BandwidthTable& table, std::size_t l_index,
                           const SelectionConfig& config, int r_max);

} // namespace kwcp
