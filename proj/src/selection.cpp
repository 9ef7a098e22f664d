#include "kwcp/selection.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <sstream>

#include "kwcp/error.hpp"
#include "kwcp/kernel.hpp"
#include "kwcp/parallel.hpp"

namespace kwcp {

int default_r_max(int p, int C, int T) { return std::max(1, std::min(C * T, cp_rank_bound(p, C, T))); }

int count_nonzero_factors(const CPModel& model)
{
    auto count = [](const Eigen::MatrixXd& m) { return static_cast<int>((m.array().abs() > 1e-12).count()); };
    return count(model.q1) + count(model.q2) + count(model.q3);
}

BicValue bic_criterion(const CPModel& model, double weighted_loss, std::int64_t nstar)
{
    if (nstar <= 0) throw Error(ErrorKind::Domain, "BIC needs N* > 0");
    BicValue out;
    out.nu = count_nonzero_factors(model);
    const double n = static_cast<double>(nstar);
    if (!(weighted_loss > 0.0)) {
        out.perfect_fit = true;
        out.value = -std::numeric_limits<double>::infinity();
        return out;
    }
    out.value = n * std::log(weighted_loss / n) + out.nu * std::log(n);
    return out;
}

BicValue bic_criterion(const FitResult& fit, const KernelDesign& design)
{
    return bic_criterion(fit.model, fit.loss, design.nstar());
}

double normalized_loss(const CPModel& model, const KernelDesign& design)
{
    if (design.nstar() == 0) throw Error(ErrorKind::Domain, "normalized loss needs N* > 0");
    return weighted_loss(design, model) / static_cast<double>(design.nstar());
}

std::vector<double> lambda_sequence(double lambda_max, double decay, int count)
{
    std::vector<double> out;
    double lam = lambda_max;
    for (int k = 0; k < count; ++k) {
        out.push_back(lam);
        lam *= decay;
    }
    return out;
}

double estimate_lambda_max(const KernelDesign& design, const StratumStats& stats, const CPModel& start)
{
    const int R = start.rank();
    if (R == 0 || design.p == 0) return 1.0;
    // bound |a_{l,r}| both at the starting residuals and at beta = 0, the two
    // ends of the first sweep
    double amax = 0.0;
    for (int r = 0; r < R; ++r) {
        for (int l = 0; l < design.p; ++l) {
            double from_start = 0.0, from_zero = 0.0, b = 0.0;
            for (int s = 0; s < design.strata(); ++s) {
                const auto si = static_cast<std::size_t>(s);
                const double z = start.w(r) * start.q2(design.stratum_cell_type(s), r) *
                                 start.q3(design.stratum_time(s), r);
                if (z == 0.0) continue;
                const Eigen::VectorXd beta = beta_slice(start, design.stratum_cell_type(s), design.stratum_time(s));
                const double corr = stats.xy[si](l) - stats.gram[si].row(l).dot(beta);
                from_start += std::abs(z * corr);
                from_zero += std::abs(z * stats.xy[si](l));
                b += z * z * stats.gram[si](l, l);
            }
            const double tail = b * std::abs(start.q1(l, r));
            amax = std::max({amax, from_start + tail, from_zero + tail});
        }
    }
    if (!(amax > 0.0)) return 1.0;
    return 1.1 * amax * R * design.p;
}

namespace {

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

PathPoint evaluate(const KernelDesign& design, const StratumStats& stats, InitCache& init, double lambda,
                   const SolverConfig& solver)
{
    PathPoint pt;
    pt.lambda = lambda;
    try {
        pt.fit = fit(design, stats, init, lambda, solver);
    } catch (const Error& e) {
        throw Error(e.kind(), "lambda " + fmt(lambda) + ": " + e.what());
    }
    pt.bic = bic_criterion(pt.fit, design);
    pt.normalized_loss = pt.fit.loss / static_cast<double>(design.nstar());
    return pt;
}

void check_config(const SelectionConfig& config)
{
    if (!(config.decay > 0.0 && config.decay < 1.0)) throw Error(ErrorKind::Validation, "decay must lie in (0, 1)");
    if (config.lambda_max && !(*config.lambda_max > 0.0 && std::isfinite(*config.lambda_max)))
        throw Error(ErrorKind::Validation, "lambda_max must be positive");
    if (config.path_max_steps < 1) throw Error(ErrorKind::Validation, "path length must be >= 1");
    if (config.path_patience < 1) throw Error(ErrorKind::Validation, "path patience must be >= 1");
    if (config.neighbor_counts.empty()) throw Error(ErrorKind::Validation, "L grid is empty");
    for (std::size_t i = 1; i < config.neighbor_counts.size(); ++i)
        if (config.neighbor_counts[i] <= config.neighbor_counts[i - 1])
            throw Error(ErrorKind::Validation, "L grid must be strictly ascending");
}

} // namespace

LambdaPath lambda_path(const KernelDesign& design, const StratumStats& stats, InitCache& init,
                       const SelectionConfig& config)
{
    check_config(config);
    LambdaPath path;
    const auto& solver = config.solver;
    double lambda_max =
        config.lambda_max ? *config.lambda_max : estimate_lambda_max(design, stats, init.at_rank(solver.r_max));

    PathPoint first = evaluate(design, stats, init, lambda_max, solver);
    for (int k = 0; first.fit.final_rank > 0; ++k) {
        if (k == config.max_doublings) {
            path.warnings.push_back("lambda_max " + fmt(lambda_max) + " still gives a non-zero fit after " +
                                    std::to_string(k) + " doublings");
            break;
        }
        const double next = 2.0 * lambda_max;
        path.warnings.push_back("lambda_max " + fmt(lambda_max) + " gives a non-zero fit; doubled to " + fmt(next));
        lambda_max = next;
        first = evaluate(design, stats, init, lambda_max, solver);
    }
    if (!config.lambda_max) {
        // the estimate is an upper bound; halve towards the smallest penalty
        // that still gives the all-zero fit
        for (int k = 0; k < config.max_doublings && first.fit.final_rank == 0; ++k) {
            PathPoint half = evaluate(design, stats, init, 0.5 * lambda_max, solver);
            if (half.fit.final_rank > 0) break;
            lambda_max *= 0.5;
            first = std::move(half);
        }
    }
    path.lambda_max = lambda_max;

    int best = -1;
    int first_nonzero = -1;
    double lambda = lambda_max;
    for (int k = 0; k < config.path_max_steps; ++k) {
        PathPoint pt = k == 0 ? std::move(first) : evaluate(design, stats, init, lambda, solver);
        pt.lambda = lambda;
        if (best < 0 || pt.bic.value < path.points[static_cast<std::size_t>(best)].bic.value) best = k;
        if (first_nonzero < 0 && pt.fit.final_rank > 0) first_nonzero = k;
        for (const auto& w : pt.fit.warnings) path.warnings.push_back(w);
        path.points.push_back(std::move(pt));
        if (first_nonzero >= 0 && k - std::max(best, first_nonzero) >= config.path_patience) break;
        lambda *= config.decay;
    }
    path.selected = best;
    // traces are only reported for the selected fit
    for (std::size_t i = 0; i < path.points.size(); ++i)
        if (static_cast<int>(i) != best) path.points[i].fit.trace.clear();
    return path;
}

std::vector<double> elbow_distances(const std::vector<std::pair<int, double>>& points)
{
    const auto n = points.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    double xmin = points[0].first, xmax = points[0].first;
    double ymin = points[0].second, ymax = points[0].second;
    for (const auto& [L, loss] : points) {
        xmin = std::min<double>(xmin, L);
        xmax = std::max<double>(xmax, L);
        ymin = std::min(ymin, loss);
        ymax = std::max(ymax, loss);
    }
    auto sx = [&](double v) { return xmax > xmin ? (v - xmin) / (xmax - xmin) : 0.0; };
    auto sy = [&](double v) { return ymax > ymin ? (v - ymin) / (ymax - ymin) : 0.0; };
    const double x0 = sx(points.front().first), y0 = sy(points.front().second);
    const double x1 = sx(points.back().first), y1 = sy(points.back().second);
    const double dx = x1 - x0, dy = y1 - y0;
    const double len = std::hypot(dx, dy);
    if (len == 0.0) return out;
    for (std::size_t i = 0; i < n; ++i) {
        const double px = sx(points[i].first) - x0, py = sy(points[i].second) - y0;
        out[i] = std::abs(dx * py - dy * px) / len;
    }
    return out;
}

int elbow_select(const std::vector<std::pair<int, double>>& points)
{
    if (points.size() < 3) throw Error(ErrorKind::DegenerateCurve, "elbow rule needs at least 3 points");
    const auto d = elbow_distances(points);
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i)
        if (d[i] > d[best] + 1e-12) best = i;
    return points[best].first;
}

BandwidthRun run_bandwidth(const Dataset& dataset, const BandwidthTable& table, std::size_t l_index,
                           const SelectionConfig& config, int r_max)
{
    BandwidthRun run;
    run.L = table.neighbor_counts.at(l_index);
    run.bandwidths = table.values.at(l_index);
    const auto weights = compute_weights(dataset, run.bandwidths);
    run.nstar = weights.positive_count();
    if (run.nstar == 0)
        throw Error(ErrorKind::NoOverlap, "L = " + std::to_string(run.L) + ": no cell within the bandwidth of any plaque");
    const auto design = build_design(dataset, weights);
    const auto stats = stratum_stats(design);
    auto ridge = ridge_init(design, stats, config.ridge);
    for (auto& w : ridge.warnings) run.warnings.push_back("L = " + std::to_string(run.L) + ": " + w);

    SelectionConfig local = config;
    local.solver.r_max = r_max;
    InitCache init(std::move(ridge.tensor), local.solver.als);
    run.path = lambda_path(design, stats, init, local);
    for (const auto& w : run.path.warnings) run.warnings.push_back("L = " + std::to_string(run.L) + ": " + w);
    return run;
}

PathResult run_full(const Dataset& dataset, const SelectionConfig& config)
{
    check_config(config);
    dataset.validate();
    const int p = dataset.num_genes(), C = dataset.num_cell_types(), T = dataset.num_times();
    if (config.r_max < 0) throw Error(ErrorKind::Validation, "R_max must be >= 1");

    PathResult out;
    const int bound = cp_rank_bound(p, C, T);
    out.r_max = config.r_max > 0 ? std::min(config.r_max, bound) : default_r_max(p, C, T);
    if (config.r_max > bound)
        out.warnings.push_back("R_max " + std::to_string(config.r_max) + " capped at the CP rank bound " +
                               std::to_string(bound));

    const auto table = bandwidth_candidates(dataset, config.neighbor_counts);
    const auto n = config.neighbor_counts.size();
    out.runs.resize(n);
    std::vector<std::exception_ptr> failures(n);
    par::parallel_for<par::Schedule::Dynamic>(0, static_cast<std::ptrdiff_t>(n), [&](std::ptrdiff_t i) {
        const auto u = static_cast<std::size_t>(i);
        try {
            out.runs[u] = run_bandwidth(dataset, table, u, config, out.r_max);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoOverlap) {
                failures[u] = std::current_exception();
                return;
            }
            auto& run = out.runs[u];
            run.L = table.neighbor_counts[u];
            run.bandwidths = table.values[u];
            run.excluded = true;
            run.warnings.push_back(std::string(e.what()) + "; excluded from the elbow curve");
        } catch (...) {
            failures[u] = std::current_exception();
        }
    });
    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);

    std::vector<std::pair<int, double>> curve;
    std::vector<int> curve_run;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& run = out.runs[i];
        for (const auto& w : run.warnings) out.warnings.push_back(w);
        if (run.excluded || !run.selected()) continue;
        curve.emplace_back(run.L, run.selected()->normalized_loss);
        curve_run.push_back(static_cast<int>(i));
    }
    if (curve.empty()) throw Error(ErrorKind::NoOverlap, "every L in the grid has N* = 0");

    std::size_t pick = 0;
    if (curve.size() < 3) {
        out.warnings.push_back("fewer than 3 usable L values; elbow rule bypassed, taking L = " +
                               std::to_string(curve.front().first));
    } else {
        const int L = elbow_select(curve);
        while (curve[pick].first != L) ++pick;
    }
    out.selected_run = curve_run[pick];
    out.final_model = out.selected().selected()->fit.model;
    return out;
}

} // namespace kwcp
