#include "kwcp/design.hpp"

#include <algorithm>
#include <numeric>

#include "kwcp/error.hpp"
#include "kwcp/parallel.hpp"

namespace kwcp {

KernelDesign build_design(const Dataset& dataset, const KernelWeightSet& weights)
{
    KernelDesign d;
    d.p = dataset.num_genes();
    d.C = dataset.num_cell_types();
    d.T = dataset.num_times();

    d.plaque_offsets.assign(dataset.samples.size() + 1, 0);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        d.plaque_offsets[i + 1] = d.plaque_offsets[i] + static_cast<std::int64_t>(dataset.samples[i].num_plaques());

    // group triples by (sample, cell)
    std::vector<std::vector<std::int32_t>> slot(dataset.samples.size());
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) slot[i].assign(dataset.samples[i].num_cells(), -1);
    struct Cell {
        std::int32_t sample, cell, stratum;
        std::vector<std::size_t> triples;
    };
    std::vector<Cell> cells;
    for (std::size_t n = 0; n < weights.triples.size(); ++n) {
        const auto& tr = weights.triples[n];
        if (tr.sample < 0 || static_cast<std::size_t>(tr.sample) >= dataset.samples.size())
            throw Error(ErrorKind::Validation, "weight triple references an unknown sample");
        const auto& s = dataset.samples[static_cast<std::size_t>(tr.sample)];
        if (tr.cell < 0 || static_cast<std::size_t>(tr.cell) >= s.num_cells() || tr.plaque < 0 ||
            static_cast<std::size_t>(tr.plaque) >= s.num_plaques())
            throw Error(ErrorKind::Validation, "weight triple index out of range");
        auto& id = slot[static_cast<std::size_t>(tr.sample)][static_cast<std::size_t>(tr.cell)];
        if (id < 0) {
            id = static_cast<std::int32_t>(cells.size());
            const int stratum = s.cell_types[static_cast<std::size_t>(tr.cell)] * d.T + s.time_index;
            cells.push_back({tr.sample, tr.cell, stratum, {}});
        }
        cells[static_cast<std::size_t>(id)].triples.push_back(n);
    }
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        if (a.stratum != b.stratum) return a.stratum < b.stratum;
        if (a.sample != b.sample) return a.sample < b.sample;
        return a.cell < b.cell;
    });

    const auto n_active = static_cast<Eigen::Index>(cells.size());
    d.x.resize(n_active, d.p);
    d.kappa.resize(n_active);
    d.g.resize(n_active);
    d.triple_offsets.assign(cells.size() + 1, 0);
    d.stratum_offsets.assign(static_cast<std::size_t>(d.strata()) + 1, 0);
    for (Eigen::Index a = 0; a < n_active; ++a) {
        const auto& cell = cells[static_cast<std::size_t>(a)];
        const auto& s = dataset.samples[static_cast<std::size_t>(cell.sample)];
        d.cell_sample.push_back(cell.sample);
        d.cell_index.push_back(cell.cell);
        d.cell_stratum.push_back(cell.stratum);
        d.x.row(a) = s.expression.row(cell.cell);
        double kappa = 0.0, g = 0.0;
        for (auto n : cell.triples) {
            const auto& tr = weights.triples[n];
            const double y = s.plaques[static_cast<std::size_t>(tr.plaque)].outcome;
            d.triple_weight.push_back(tr.weight);
            d.triple_outcome.push_back(y);
            d.triple_plaque.push_back(
                static_cast<std::int32_t>(d.plaque_offsets[static_cast<std::size_t>(cell.sample)] + tr.plaque));
            kappa += tr.weight;
            g += tr.weight * y;
        }
        d.kappa(a) = kappa;
        d.g(a) = g;
        d.triple_offsets[static_cast<std::size_t>(a) + 1] = static_cast<std::int64_t>(d.triple_weight.size());
        ++d.stratum_offsets[static_cast<std::size_t>(cell.stratum) + 1];
    }
    for (std::size_t s = 1; s < d.stratum_offsets.size(); ++s) d.stratum_offsets[s] += d.stratum_offsets[s - 1];
    return d;
}

namespace {

void fill_scalar_stats(const KernelDesign& design, StratumStats& out)
{
    const int S = design.strata();
    out.xy.assign(static_cast<std::size_t>(S), Eigen::VectorXd::Zero(design.p));
    out.yy.assign(static_cast<std::size_t>(S), 0.0);
    out.nstar.assign(static_cast<std::size_t>(S), 0);
    for (int s = 0; s < S; ++s) {
        for (auto a = design.stratum_offsets[static_cast<std::size_t>(s)];
             a < design.stratum_offsets[static_cast<std::size_t>(s) + 1]; ++a) {
            out.xy[static_cast<std::size_t>(s)] += design.g(a) * design.x.row(a).transpose();
            for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
                 n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n) {
                const double y = design.triple_outcome[static_cast<std::size_t>(n)];
                out.yy[static_cast<std::size_t>(s)] += design.triple_weight[static_cast<std::size_t>(n)] * y * y;
                ++out.nstar[static_cast<std::size_t>(s)];
            }
        }
    }
}

} // namespace

StratumStats stratum_stats(const KernelDesign& design)
{
    StratumStats out;
    const int S = design.strata();
    const int p = design.p;
    out.gram.assign(static_cast<std::size_t>(S), Eigen::MatrixXd::Zero(p, p));
    par::parallel_for<par::Schedule::Dynamic>(0, static_cast<std::ptrdiff_t>(S) * p, [&](std::ptrdiff_t task) {
        const auto s = static_cast<std::size_t>(task / p);
        const auto l = static_cast<Eigen::Index>(task % p);
        const auto lo = design.stratum_offsets[s];
        const auto n = design.stratum_offsets[s + 1] - lo;
        if (n == 0) return;
        const auto X = design.x.middleRows(lo, n);
        const Eigen::VectorXd v = design.kappa.segment(lo, n).cwiseProduct(X.col(l));
        out.gram[s].col(l).noalias() = X.transpose() * v;
    });
    fill_scalar_stats(design, out);
    return out;
}

StratumStats stratum_stats_serial(const KernelDesign& design)
{
    StratumStats out;
    const int S = design.strata();
    const int p = design.p;
    out.gram.assign(static_cast<std::size_t>(S), Eigen::MatrixXd::Zero(p, p));
    for (int s = 0; s < S; ++s) {
        auto& H = out.gram[static_cast<std::size_t>(s)];
        for (auto a = design.stratum_offsets[static_cast<std::size_t>(s)];
             a < design.stratum_offsets[static_cast<std::size_t>(s) + 1]; ++a)
            for (int l = 0; l < p; ++l)
                for (int m = 0; m < p; ++m) H(l, m) += design.kappa(a) * design.x(a, l) * design.x(a, m);
    }
    fill_scalar_stats(design, out);
    return out;
}

namespace {

std::vector<Eigen::VectorXd> slices_of(const KernelDesign& design, const CPModel& model)
{
    std::vector<Eigen::VectorXd> beta(static_cast<std::size_t>(design.strata()));
    for (int s = 0; s < design.strata(); ++s)
        beta[static_cast<std::size_t>(s)] = beta_slice(model, design.stratum_cell_type(s), design.stratum_time(s));
    return beta;
}

double cell_loss(const KernelDesign& design, Eigen::Index a, double fitted)
{
    double acc = 0.0;
    for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
         n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n) {
        const double r = design.triple_outcome[static_cast<std::size_t>(n)] - fitted;
        acc += design.triple_weight[static_cast<std::size_t>(n)] * r * r;
    }
    return acc;
}

} // namespace

Eigen::VectorXd fitted_values(const KernelDesign& design, const CPModel& model)
{
    const auto beta = slices_of(design, model);
    Eigen::VectorXd f(design.active_cells());
    par::parallel_for(0, static_cast<std::ptrdiff_t>(design.active_cells()), [&](std::ptrdiff_t a) {
        f(a) = design.x.row(a).dot(beta[static_cast<std::size_t>(design.cell_stratum[static_cast<std::size_t>(a)])]);
    });
    return f;
}

double weighted_loss(const KernelDesign& design, const CPModel& model)
{
    const auto f = fitted_values(design, model);
    return par::deterministic_sum(design.active_cells(), [&](std::ptrdiff_t a) { return cell_loss(design, a, f(a)); });
}

double weighted_loss_serial(const KernelDesign& design, const CPModel& model)
{
    const auto beta = slices_of(design, model);
    double total = 0.0;
    for (Eigen::Index a = 0; a < design.active_cells(); ++a) {
        const auto& b = beta[static_cast<std::size_t>(design.cell_stratum[static_cast<std::size_t>(a)])];
        double fitted = 0.0;
        for (int l = 0; l < design.p; ++l) fitted += design.x(a, l) * b(l);
        for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
             n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n) {
            const double r = design.triple_outcome[static_cast<std::size_t>(n)] - fitted;
            total += design.triple_weight[static_cast<std::size_t>(n)] * r * r;
        }
    }
    return total;
}

Eigen::VectorXd triple_residuals(const KernelDesign& design, const CPModel& model)
{
    const auto f = fitted_values(design, model);
    Eigen::VectorXd r(design.nstar());
    for (Eigen::Index a = 0; a < design.active_cells(); ++a)
        for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
             n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n)
            r(n) = design.triple_outcome[static_cast<std::size_t>(n)] - f(a);
    return r;
}

} // namespace kwcp
