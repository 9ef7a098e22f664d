#include "kwcp/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kwcp/error.hpp"
#include "kwcp/parallel.hpp"

namespace kwcp {

namespace {

std::size_t idx(std::int64_t i) { return static_cast<std::size_t>(i); }

// Per-stratum beta_s and corr_s = d_s - H_s beta_s. Every block update is a
// quadratic in one coordinate whose coefficients follow from these.
class GramStats final : public SufficientStats {
public:
    GramStats(const KernelDesign& design, const StratumStats& stats, const CPModel& model)
        : design_(design), stats_(stats)
    {
        reset(model);
    }

    void reset(const CPModel& model) override
    {
        const int S = design_.strata();
        beta_.resize(idx(S));
        corr_.resize(idx(S));
        v_.assign(idx(S), Eigen::VectorXd::Zero(design_.p));
        quad_.assign(idx(S), 0.0);
        lin_.assign(idx(S), 0.0);
        prepared_ = -1;
        for (int s = 0; s < S; ++s) {
            beta_[idx(s)] = beta_slice(model, design_.stratum_cell_type(s), design_.stratum_time(s));
            corr_[idx(s)] = stats_.xy[idx(s)] - stats_.gram[idx(s)] * beta_[idx(s)];
        }
    }

    GeneStats gene(const CPModel& model, int l, int r) const override
    {
        GeneStats out;
        double lin = 0.0;
        for (int s = 0; s < design_.strata(); ++s) {
            const double z = coef(model, s, r);
            if (z == 0.0) continue;
            out.b += z * z * stats_.gram[idx(s)](l, l);
            lin += z * corr_[idx(s)](l);
        }
        out.a = lin + out.b * model.q1(l, r);
        return out;
    }

    void shift_gene(const CPModel& model, int l, int r, double delta) override
    {
        for (int s = 0; s < design_.strata(); ++s) {
            const double k = coef(model, s, r) * delta;
            if (k == 0.0) continue;
            corr_[idx(s)] -= k * stats_.gram[idx(s)].col(l);
            beta_[idx(s)](l) += k;
        }
        prepared_ = -1;
    }

    void prepare_component(const CPModel& model, int r) override { prepare(model, r); }

    // Cached H_s q1_r, q1_r^T H_s q1_r and q1_r^T corr_s; rebuilt lazily once
    // any gene loading has moved.
    void prepare(const CPModel& model, int r) const
    {
        if (prepared_ == r) return;
        prepared_ = r;
        for (int s = 0; s < design_.strata(); ++s) {
            v_[idx(s)].noalias() = stats_.gram[idx(s)] * model.q1.col(r);
            quad_[idx(s)] = model.q1.col(r).dot(v_[idx(s)]);
            lin_[idx(s)] = model.q1.col(r).dot(corr_[idx(s)]);
        }
    }

    RatioStats cell_type(const CPModel& model, int c, int r) const override
    {
        prepare(model, r);
        RatioStats out;
        for (int t = 0; t < design_.T; ++t) {
            const int s = design_.stratum_of(c, t);
            ratio_term(out, model.w(r) * model.q3(t, r), model.q2(c, r), s);
        }
        return out;
    }

    void shift_cell_type(const CPModel& model, int c, int r, double delta) override
    {
        for (int t = 0; t < design_.T; ++t)
            shift_component(model, design_.stratum_of(c, t), r, model.w(r) * model.q3(t, r) * delta);
    }

    RatioStats time(const CPModel& model, int t, int r) const override
    {
        prepare(model, r);
        RatioStats out;
        for (int c = 0; c < design_.C; ++c) {
            const int s = design_.stratum_of(c, t);
            ratio_term(out, model.w(r) * model.q2(c, r), model.q3(t, r), s);
        }
        return out;
    }

    void shift_time(const CPModel& model, int t, int r, double delta) override
    {
        for (int c = 0; c < design_.C; ++c)
            shift_component(model, design_.stratum_of(c, t), r, model.w(r) * model.q2(c, r) * delta);
    }

    RatioStats weight(const CPModel& model, int r) const override
    {
        prepare(model, r);
        RatioStats out;
        for (int s = 0; s < design_.strata(); ++s) {
            const double u = model.q2(design_.stratum_cell_type(s), r) * model.q3(design_.stratum_time(s), r);
            ratio_term(out, u, model.w(r), s);
        }
        return out;
    }

    void shift_weight(const CPModel& model, int r, double delta) override
    {
        for (int s = 0; s < design_.strata(); ++s) {
            const double u = model.q2(design_.stratum_cell_type(s), r) * model.q3(design_.stratum_time(s), r);
            shift_component(model, s, r, u * delta);
        }
    }

    void rescale_gene_factor(int r, double alpha) override
    {
        if (r != prepared_) return;
        for (int s = 0; s < design_.strata(); ++s) {
            v_[idx(s)] /= alpha;
            quad_[idx(s)] /= alpha * alpha;
            lin_[idx(s)] /= alpha;
        }
    }

    double loss() const override
    {
        double total = 0.0;
        for (int s = 0; s < design_.strata(); ++s)
            total += stats_.yy[idx(s)] - beta_[idx(s)].dot(stats_.xy[idx(s)] + corr_[idx(s)]);
        return std::max(total, 0.0);
    }

    Eigen::VectorXd maintained_residuals() const override
    {
        Eigen::VectorXd out(design_.nstar());
        for (std::int64_t a = 0; a < design_.active_cells(); ++a) {
            const double f = design_.x.row(a).dot(beta_[idx(design_.cell_stratum[idx(a)])]);
            for (auto n = design_.triple_offsets[idx(a)]; n < design_.triple_offsets[idx(a) + 1]; ++n)
                out(n) = design_.triple_outcome[idx(n)] - f;
        }
        return out;
    }

private:
    double coef(const CPModel& model, int s, int r) const
    {
        return model.w(r) * model.q2(design_.stratum_cell_type(s), r) * model.q3(design_.stratum_time(s), r);
    }

    // beta_s moves along u * q1_r when the coordinate moves; current value x.
    void ratio_term(RatioStats& out, double u, double x, int s) const
    {
        const double uu = u * u * quad_[idx(s)];
        out.num += u * lin_[idx(s)] + x * uu;
        out.den += uu;
    }

    void shift_component(const CPModel& model, int s, int r, double k)
    {
        if (k == 0.0) return;
        prepare(model, r);
        corr_[idx(s)] -= k * v_[idx(s)];
        lin_[idx(s)] -= k * quad_[idx(s)];
        beta_[idx(s)] += k * model.q1.col(r);
    }

    const KernelDesign& design_;
    const StratumStats& stats_;
    std::vector<Eigen::VectorXd> beta_, corr_;
    mutable std::vector<Eigen::VectorXd> v_;
    mutable std::vector<double> quad_, lin_;
    mutable int prepared_ = -1;
};

// One residual per weight triple and s(a, r) = x_a^T q1_r per active cell.
class ResidualStats final : public SufficientStats {
public:
    ResidualStats(const KernelDesign& design, const CPModel& model) : design_(design) { reset(model); }

    void reset(const CPModel& model) override
    {
        resid_ = triple_residuals(design_, model);
        proj_ = design_.x * model.q1;
    }

    GeneStats gene(const CPModel& model, int l, int r) const override
    {
        GeneStats out;
        double lin = 0.0;
        for (std::int64_t a = 0; a < design_.active_cells(); ++a) {
            const double zx = coef(model, a, r) * design_.x(a, l);
            if (zx == 0.0) continue;
            for (auto n = design_.triple_offsets[idx(a)]; n < design_.triple_offsets[idx(a) + 1]; ++n) {
                const double K = design_.triple_weight[idx(n)];
                out.b += K * zx * zx;
                lin += K * zx * resid_(n);
            }
        }
        out.a = lin + out.b * model.q1(l, r);
        return out;
    }

    void shift_gene(const CPModel& model, int l, int r, double delta) override
    {
        for (std::int64_t a = 0; a < design_.active_cells(); ++a) {
            const double xl = design_.x(a, l);
            proj_(a, r) += delta * xl;
            const double k = coef(model, a, r) * xl * delta;
            if (k == 0.0) continue;
            for (auto n = design_.triple_offsets[idx(a)]; n < design_.triple_offsets[idx(a) + 1]; ++n) resid_(n) -= k;
        }
    }

    void prepare_component(const CPModel&, int) override {}

    RatioStats cell_type(const CPModel& model, int c, int r) const override
    {
        return ratio(model.q2(c, r), [&](std::int64_t a) -> double {
            const int s = design_.cell_stratum[idx(a)];
            if (design_.stratum_cell_type(s) != c) return 0.0;
            return model.w(r) * model.q3(design_.stratum_time(s), r) * proj_(a, r);
        });
    }

    void shift_cell_type(const CPModel& model, int c, int r, double delta) override
    {
        shift([&](std::int64_t a) -> double {
            const int s = design_.cell_stratum[idx(a)];
            if (design_.stratum_cell_type(s) != c) return 0.0;
            return model.w(r) * model.q3(design_.stratum_time(s), r) * proj_(a, r) * delta;
        });
    }

    RatioStats time(const CPModel& model, int t, int r) const override
    {
        return ratio(model.q3(t, r), [&](std::int64_t a) -> double {
            const int s = design_.cell_stratum[idx(a)];
            if (design_.stratum_time(s) != t) return 0.0;
            return model.w(r) * model.q2(design_.stratum_cell_type(s), r) * proj_(a, r);
        });
    }

    void shift_time(const CPModel& model, int t, int r, double delta) override
    {
        shift([&](std::int64_t a) -> double {
            const int s = design_.cell_stratum[idx(a)];
            if (design_.stratum_time(s) != t) return 0.0;
            return model.w(r) * model.q2(design_.stratum_cell_type(s), r) * proj_(a, r) * delta;
        });
    }

    RatioStats weight(const CPModel& model, int r) const override
    {
        return ratio(model.w(r), [&](std::int64_t a) -> double {
            const int s = design_.cell_stratum[idx(a)];
            return model.q2(design_.stratum_cell_type(s), r) * model.q3(design_.stratum_time(s), r) * proj_(a, r);
        });
    }

    void shift_weight(const CPModel& model, int r, double delta) override
    {
        shift([&](std::int64_t a) -> double {
            const int s = design_.cell_stratum[idx(a)];
            return model.q2(design_.stratum_cell_type(s), r) * model.q3(design_.stratum_time(s), r) * proj_(a, r) *
                   delta;
        });
    }

    void rescale_gene_factor(int r, double alpha) override { proj_.col(r) /= alpha; }

    double loss() const override
    {
        double total = 0.0;
        for (std::int64_t n = 0; n < design_.nstar(); ++n)
            total += design_.triple_weight[idx(n)] * resid_(n) * resid_(n);
        return total;
    }

    Eigen::VectorXd maintained_residuals() const override { return resid_; }

private:
    double coef(const CPModel& model, std::int64_t a, int r) const
    {
        const int s = design_.cell_stratum[idx(a)];
        return model.w(r) * model.q2(design_.stratum_cell_type(s), r) * model.q3(design_.stratum_time(s), r);
    }

    template <class U>
    RatioStats ratio(double current, U&& u_of) const
    {
        RatioStats out;
        for (std::int64_t a = 0; a < design_.active_cells(); ++a) {
            const double u = u_of(a);
            if (u == 0.0) continue;
            for (auto n = design_.triple_offsets[idx(a)]; n < design_.triple_offsets[idx(a) + 1]; ++n) {
                const double K = design_.triple_weight[idx(n)];
                out.num += K * u * (resid_(n) + current * u);
                out.den += K * u * u;
            }
        }
        return out;
    }

    template <class K>
    void shift(K&& k_of)
    {
        for (std::int64_t a = 0; a < design_.active_cells(); ++a) {
            const double k = k_of(a);
            if (k == 0.0) continue;
            for (auto n = design_.triple_offsets[idx(a)]; n < design_.triple_offsets[idx(a) + 1]; ++n) resid_(n) -= k;
        }
    }

    const KernelDesign& design_;
    Eigen::VectorXd resid_;
    Eigen::MatrixXd proj_;
};

void notify(const UpdateObserver& observer, const SolverState& state, UpdateKind kind)
{
    if (observer) observer(state, kind);
}

} // namespace

std::unique_ptr<SufficientStats> make_stats(Engine engine, const KernelDesign& design, const StratumStats& stats,
                                            const CPModel& model)
{
    if (engine == Engine::Residual) return std::make_unique<ResidualStats>(design, model);
    return std::make_unique<GramStats>(design, stats, model);
}

SolverState::SolverState(const KernelDesign& d, const StratumStats& s, CPModel m, double lam, Engine e)
    : design(&d), stratum_stats(&s), model(std::move(m)), lambda(lam), engine(e),
      stats(make_stats(e, d, s, model))
{
}

double SolverState::tau() const
{
    if (model.rank() == 0 || design->p == 0) return 0.0;
    return lambda / (static_cast<double>(model.rank()) * design->p);
}

double SolverState::objective() const
{
    return 0.5 * stats->loss() + tau() * model.q1.cwiseAbs().sum();
}

double soft_threshold(double u, double tau)
{
    if (u > tau) return u - tau;
    if (u < -tau) return u + tau;
    return 0.0;
}

double update_gene_loading(SolverState& state, int l, int r, double lambda)
{
    auto& m = state.model;
    const auto st = state.stats->gene(m, l, r);
    const double tau = lambda / (static_cast<double>(m.rank()) * state.design->p);
    const double next = st.b > 0.0 ? soft_threshold(st.a, tau) / st.b : 0.0;
    const double delta = next - m.q1(l, r);
    m.q1(l, r) = next;
    if (delta != 0.0) state.stats->shift_gene(m, l, r, delta);
    return next;
}

double update_celltype_loading(SolverState& state, int c, int r)
{
    auto& m = state.model;
    const auto st = state.stats->cell_type(m, c, r);
    if (!(st.den > 0.0)) return m.q2(c, r);
    const double next = st.num / st.den;
    const double delta = next - m.q2(c, r);
    m.q2(c, r) = next;
    if (delta != 0.0) state.stats->shift_cell_type(m, c, r, delta);
    return next;
}

double update_time_loading(SolverState& state, int t, int r)
{
    auto& m = state.model;
    const auto st = state.stats->time(m, t, r);
    if (!(st.den > 0.0)) return m.q3(t, r);
    const double next = st.num / st.den;
    const double delta = next - m.q3(t, r);
    m.q3(t, r) = next;
    if (delta != 0.0) state.stats->shift_time(m, t, r, delta);
    return next;
}

double update_weight(SolverState& state, int r)
{
    auto& m = state.model;
    const auto st = state.stats->weight(m, r);
    const double next = st.den > 0.0 ? std::max(0.0, st.num / st.den) : 0.0;
    const double delta = next - m.w(r);
    m.w(r) = next;
    if (delta != 0.0) state.stats->shift_weight(m, r, delta);
    return next;
}

void normalize_component(SolverState& state, int r)
{
    const auto alpha = renormalize_component(state.model, r);
    if (alpha[0] > 0.0 && alpha[1] > 0.0 && alpha[2] > 0.0) state.stats->rescale_gene_factor(r, alpha[0]);
}

int prune_ranks(SolverState& state, const SolverConfig& config)
{
    const auto& m = state.model;
    const double total = m.w.sum();
    std::vector<int> keep;
    for (int r = 0; r < m.rank(); ++r) {
        const double w = m.w(r);
        if (w == 0.0 || !(total > 0.0) || w / total < config.drop_rel_weight) continue;
        if (m.q1.col(r).cwiseAbs().maxCoeff() > config.drop_q1_inf) continue;
        keep.push_back(r);
    }
    const int removed = m.rank() - static_cast<int>(keep.size());
    if (removed > 0) {
        state.model = m.select(keep);
        state.refresh();
    }
    return removed;
}

bool check_convergence(const CPModel& previous, const CPModel& current, const SolverConfig& config,
                       ConvergenceMetrics* metrics)
{
    ConvergenceMetrics out;
    out.comparable = previous.rank() == current.rank() && previous.genes() == current.genes() &&
                     previous.cell_types() == current.cell_types() && previous.times() == current.times();
    if (out.comparable) {
        for (int t = 0; t < current.times(); ++t)
            for (int c = 0; c < current.cell_types(); ++c) {
                const auto old = beta_slice(previous, c, t);
                const auto now = beta_slice(current, c, t);
                const double base = old.size() ? old.cwiseAbs().maxCoeff() : 0.0;
                const double diff = old.size() ? (now - old).cwiseAbs().maxCoeff() : 0.0;
                if (base == 0.0) {
                    if (diff != 0.0) out.max_beta_change = std::numeric_limits<double>::infinity();
                    continue;
                }
                out.max_beta_change = std::max(out.max_beta_change, diff * diff / (base * base));
            }
        for (int r = 0; r < current.rank(); ++r) {
            out.max_factor_change = std::max({out.max_factor_change, (current.q1.col(r) - previous.q1.col(r)).norm(),
                                              (current.q2.col(r) - previous.q2.col(r)).norm(),
                                              (current.q3.col(r) - previous.q3.col(r)).norm()});
        }
        out.beta_ok = out.max_beta_change < config.tol_beta;
        out.factor_ok = out.max_factor_change <= config.tol_factor;
    } else {
        out.max_beta_change = std::numeric_limits<double>::infinity();
        out.max_factor_change = std::numeric_limits<double>::infinity();
    }
    if (metrics) *metrics = out;
    return out.comparable && out.beta_ok && out.factor_ok;
}

const CPModel& InitCache::at_rank(int R)
{
    auto it = cache_.find(R);
    if (it == cache_.end()) it = cache_.emplace(R, cp_als_fit(ridge_, R, options_)).first;
    return it->second;
}

namespace {

void sweep(SolverState& state, const UpdateObserver& observer)
{
    auto& m = state.model;
    for (int r = 0; r < m.rank(); ++r) {
        for (int l = 0; l < m.genes(); ++l) {
            update_gene_loading(state, l, r, state.lambda);
            notify(observer, state, UpdateKind::Gene);
        }
        state.stats->prepare_component(m, r);
        for (int c = 0; c < m.cell_types(); ++c) {
            update_celltype_loading(state, c, r);
            notify(observer, state, UpdateKind::CellType);
        }
        for (int t = 0; t < m.times(); ++t) {
            update_time_loading(state, t, r);
            notify(observer, state, UpdateKind::Time);
        }
        update_weight(state, r);
        notify(observer, state, UpdateKind::Weight);
        normalize_component(state, r);
        notify(observer, state, UpdateKind::Normalize);
    }
}

} // namespace

bool run_descent(SolverState& state, const SolverConfig& config, std::vector<TraceRow>* trace,
                 const UpdateObserver& observer)
{
    while (state.iteration < config.max_outer_iters) {
        if (state.model.rank() == 0) return false;
        const CPModel previous = state.model;
        sweep(state, observer);
        ++state.iteration;
        if (state.iteration <= config.rank_drop_window && prune_ranks(state, config) > 0)
            notify(observer, state, UpdateKind::Prune);
        if (config.residual_refresh > 0 && state.iteration % config.residual_refresh == 0) state.refresh();

        ConvergenceMetrics metrics;
        const bool done = check_convergence(previous, state.model, config, &metrics);
        const double objective = state.objective();
        if (!std::isfinite(objective))
            throw Error(ErrorKind::Numerical, "objective became non-finite at iteration " +
                                                  std::to_string(state.iteration));
        if (trace)
            trace->push_back({state.iteration, state.model.rank(), objective, metrics.max_beta_change,
                              metrics.max_factor_change});
        if (done) return true;
    }
    return false;
}

FitResult fit(const KernelDesign& design, const StratumStats& stats, InitCache& init, double lambda,
              const SolverConfig& config, const UpdateObserver& observer)
{
    if (design.nstar() == 0) throw Error(ErrorKind::NoOverlap, "no cell lies within the bandwidth of any plaque");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorKind::Domain, "lambda must be finite and >= 0");
    if (config.r_max < 1) throw Error(ErrorKind::Domain, "R_max must be >= 1");

    FitResult out;
    out.lambda = lambda;
    out.seed = config.als.seed;
    CPModel final_model(design.p, design.C, design.T, 0);
    bool converged = false;
    int iterations = 0;
    for (int R = config.r_max; R >= 1; --R) {
        ++out.attempts;
        SolverState state(design, stats, init.at_rank(R), lambda, config.engine);
        std::vector<TraceRow> trace;
        converged = run_descent(state, config, &trace, observer);
        iterations = state.iteration;
        out.trace = std::move(trace);
        if (state.model.rank() > 0) {
            final_model = state.model;
            break;
        }
        // every component was pruned: the empty model is optimal for this start
        converged = true;
    }
    if (!converged)
        out.warnings.push_back("lambda " + std::to_string(lambda) + ": no convergence after " +
                               std::to_string(iterations) + " iterations");

    out.model = orient_signs(strip_zero_components(final_model));
    out.final_rank = out.model.rank();
    out.iterations = iterations;
    out.converged = converged;
    out.loss = weighted_loss(design, out.model);
    const double tau = out.final_rank > 0 ? lambda / (static_cast<double>(out.final_rank) * design.p) : 0.0;
    out.objective = 0.5 * out.loss + tau * out.model.q1.cwiseAbs().sum();
    if (!std::isfinite(out.loss)) throw Error(ErrorKind::Numerical, "non-finite loss in final fit");
    return out;
}

} // namespace kwcp
