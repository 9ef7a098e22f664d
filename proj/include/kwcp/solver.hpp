#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kwcp/cp_model.hpp"
#include "kwcp/design.hpp"

namespace kwcp {

/// Which bookkeeping backs the coordinate updates. Both produce the same
/// iterates up to rounding.
///  - Residual: keeps one residual per weight triple and s_{ik,r} per
///    (cell, rank), updated incrementally.
///  - Gram: keeps per-stratum beta and X^T W r, so every update costs
///    O(C T p) independent of the number of triples.
enum class Engine { Gram, Residual };

struct SolverConfig {
    int r_max = 6;
    int max_outer_iters = 5000;
    int rank_drop_window = 500;
    double tol_beta = 1e-6;
    double tol_factor = 1e-4;
    double drop_rel_weight = 1e-5;
    double drop_q1_inf = 0.99;
    int residual_refresh = 50;
    Engine engine = Engine::Gram;
    AlsOptions als;
};

/// Sums required by the closed-form block updates.
struct GeneStats {
    double a = 0.0;
    double b = 0.0;
};

struct RatioStats {
    double num = 0.0;
    double den = 0.0;
};

/// Incrementally maintained quantities behind the coordinate updates. Shift
/// methods are called after the model coordinate has been changed by delta.
class SufficientStats {
public:
    virtual ~SufficientStats() = default;

    virtual void reset(const CPModel& model) = 0;

    virtual GeneStats gene(const CPModel& model, int l, int r) const = 0;
    virtual void shift_gene(const CPModel& model, int l, int r, double delta) = 0;

    /// Called once q1_r is final for the current block.
    virtual void prepare_component(const CPModel& model, int r) = 0;

    virtual RatioStats cell_type(const CPModel& model, int c, int r) const = 0;
    virtual void shift_cell_type(const CPModel& model, int c, int r, double delta) = 0;

    virtual RatioStats time(const CPModel& model, int t, int r) const = 0;
    virtual void shift_time(const CPModel& model, int t, int r, double delta) = 0;

    virtual RatioStats weight(const CPModel& model, int r) const = 0;
    virtual void shift_weight(const CPModel& model, int r, double delta) = 0;

    /// q1_r was divided by alpha (renormalization).
    virtual void rescale_gene_factor(int r, double alpha) = 0;

    /// sum K R^2 from the maintained state.
    virtual double loss() const = 0;

    /// Maintained residual y_ij - x_ik^T beta for every triple.
    virtual Eigen::VectorXd maintained_residuals() const = 0;
};

std::unique_ptr<SufficientStats> make_stats(Engine engine, const KernelDesign& design, const StratumStats& stats,
                                            const CPModel& model);

struct SolverState {
    SolverState(const KernelDesign& design, const StratumStats& stats, CPModel model, double lambda,
                Engine engine = Engine::Gram);

    const KernelDesign* design;
    const StratumStats* stratum_stats;
    CPModel model;
    double lambda;
    Engine engine;
    std::unique_ptr<SufficientStats> stats;
    int iteration = 0;

    /// Penalty per gene coordinate, lambda / (R p) at the current rank.
    double tau() const;

    /// 0.5 * sum K R^2 + tau * sum |q1| from the maintained state.
    double objective() const;

    void refresh() { stats->reset(model); }
};

double soft_threshold(double u, double tau);

/// Closed-form lasso update of q1(l, r); returns the new value.
double update_gene_loading(SolverState& state, int l, int r, double lambda);

/// Weighted least-squares update of q2(c, r); unchanged when the
/// denominator vanishes.
double update_celltype_loading(SolverState& state, int c, int r);

/// Weighted least-squares update of q3(t, r); unchanged when the
/// denominator vanishes.
double update_time_loading(SolverState& state, int t, int r);

/// Nonnegative least-squares update of w_r; 0 when the denominator vanishes.
double update_weight(SolverState& state, int r);

/// Rescales component r to unit factors and tells the stats.
void normalize_component(SolverState& state, int r);

/// Removes every component with w_r / sum w < rel, w_r = 0 or
/// ||q1_r||_inf > q1_inf, then rebuilds the stats. Returns the count removed.
int prune_ranks(SolverState& state, const SolverConfig& config);

struct ConvergenceMetrics {
    double max_beta_change = 0.0;    // max over slices of ||dB||_inf^2 / ||B_old||_inf^2
    double max_factor_change = 0.0;  // max over (r, m) of ||q_new - q_old||_2
    bool beta_ok = false;
    bool factor_ok = false;
    bool comparable = false;
};

/// Both stopping rules; false whenever the ranks differ.
bool check_convergence(const CPModel& previous, const CPModel& current, const SolverConfig& config,
                       ConvergenceMetrics* metrics = nullptr);

struct TraceRow {
    int outer_iter = 0;
    int rank = 0;
    double objective = 0.0;
    double max_beta_change = 0.0;
    double max_factor_change = 0.0;
};

struct FitResult {
    CPModel model;  // oriented, normalized, zero components stripped
    double lambda = 0.0;
    int final_rank = 0;
    int iterations = 0;  // outer iterations of the accepted attempt
    int attempts = 0;    // fit attempts; each restart lowers R_max by one
    bool converged = false;
    double loss = 0.0;       // sum K R^2, recomputed from scratch
    double objective = 0.0;  // penalized objective at the final rank
    std::uint64_t seed = 0;
    std::vector<TraceRow> trace;
    std::vector<std::string> warnings;
};

enum class UpdateKind { Gene, CellType, Time, Weight, Normalize, Prune };

using UpdateObserver = std::function<void(const SolverState&, UpdateKind)>;

/// Memoized CP-ALS starting points for one ridge tensor, keyed by rank.
class InitCache {
public:
    InitCache(Tensor3 ridge, AlsOptions options) : ridge_(std::move(ridge)), options_(options) {}

    const CPModel& at_rank(int R);
    const Tensor3& ridge() const { return ridge_; }

private:
    Tensor3 ridge_;
    AlsOptions options_;
    std::map<int, CPModel> cache_;
};

/// Blocked coordinate descent at rank R starting from `state.model` until
/// the stopping rules hold, the iteration cap is hit, or the rank reaches 0.
/// Returns true on convergence.
bool run_descent(SolverState& state, const SolverConfig& config, std::vector<TraceRow>* trace,
                 const UpdateObserver& observer = {});

/// Full single-(lambda, L) fit including restarts at R_max - 1 whenever all
/// components are pruned. Throws Error(NoOverlap) when N* = 0.
FitResult fit(const KernelDesign& design, const StratumStats& stats, InitCache& init, double lambda,
              const SolverConfig& config, const UpdateObserver& observer = {});

} // namespace kwcp
