#pragma once

#include <cmath>
#include <cstdint>
#include <functional>

#include "kwcp/cp_model.hpp"
#include "kwcp/design.hpp"

namespace oracles {

/// 0.5 * sum K (y - x^T beta)^2 + lambda/(R p) * sum |q1|, recomputed from
/// scratch with the plain serial loss.
inline double objective(const kwcp::KernelDesign& design, const kwcp::CPModel& model, double lambda)
{
    const double loss = kwcp::weighted_loss_serial(design, model);
    if (model.rank() == 0) return 0.5 * loss;
    const double tau = lambda / (static_cast<double>(model.rank()) * design.p);
    return 0.5 * loss + tau * model.q1.cwiseAbs().sum();
}

/// Same objective with every step in long double, straight from the CP
/// factors. Flat minima need the extra digits for a golden-section search to
/// resolve the minimizer to 1e-6.
inline long double objective_ld(const kwcp::KernelDesign& design, const kwcp::CPModel& model, double lambda)
{
    const int R = model.rank();
    long double loss = 0.0L;
    for (std::int64_t a = 0; a < design.active_cells(); ++a) {
        const int s = design.cell_stratum[static_cast<std::size_t>(a)];
        const int c = design.stratum_cell_type(s), t = design.stratum_time(s);
        long double f = 0.0L;
        for (int l = 0; l < design.p; ++l) {
            long double b = 0.0L;
            for (int r = 0; r < R; ++r)
                b += static_cast<long double>(model.w(r)) * model.q1(l, r) * model.q2(c, r) * model.q3(t, r);
            f += static_cast<long double>(design.x(a, l)) * b;
        }
        for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
             n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n) {
            const long double e = design.triple_outcome[static_cast<std::size_t>(n)] - f;
            loss += design.triple_weight[static_cast<std::size_t>(n)] * e * e;
        }
    }
    if (R == 0) return 0.5L * loss;
    long double l1 = 0.0L;
    for (int r = 0; r < R; ++r)
        for (int l = 0; l < design.p; ++l) l1 += std::abs(static_cast<long double>(model.q1(l, r)));
    return 0.5L * loss + static_cast<long double>(lambda) / (static_cast<long double>(R) * design.p) * l1;
}

/// Golden-section minimizer of a convex scalar function on [lo, hi].
inline double golden_min(const std::function<long double(double)>& f, double lo, double hi, int iters = 400)
{
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    long double fc = f(c), fd = f(d);
    for (int i = 0; i < iters && b - a > 1e-14 * (1.0 + std::abs(a) + std::abs(b)); ++i) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

enum class Block { Gene, CellType, Time, Weight };

/// Argmin of F over one coordinate of `model` with everything else fixed.
/// The loss is quadratic in any single coordinate, so the scalar objective
/// is convex; the weight is restricted to [0, inf).
inline double coordinate_argmin(const kwcp::KernelDesign& design, const kwcp::CPModel& model, double lambda,
                                Block block, int index, int r)
{
    kwcp::CPModel trial = model;
    double* slot = nullptr;
    switch (block) {
    case Block::Gene: slot = &trial.q1(index, r); break;
    case Block::CellType: slot = &trial.q2(index, r); break;
    case Block::Time: slot = &trial.q3(index, r); break;
    case Block::Weight: slot = &trial.w(r); break;
    }
    const double current = *slot;
    auto f = [&](double v) {
        *slot = v;
        return objective_ld(design, trial, lambda);
    };
    const double span = 1e3 * (1.0 + std::abs(current));
    const double lo = block == Block::Weight ? 0.0 : current - span;
    return golden_min(f, lo, current + span);
}

} // namespace oracles
