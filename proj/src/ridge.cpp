#include "kwcp/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "kwcp/error.hpp"
#include "kwcp/parallel.hpp"

namespace kwcp {

std::vector<double> RidgeConfig::effective_grid() const
{
    if (!grid.empty()) return grid;
    std::vector<double> out;
    constexpr int n = 20;
    for (int i = 0; i < n; ++i) out.push_back(std::pow(10.0, -4.0 + 8.0 * i / (n - 1)));
    return out;
}

namespace {

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
{
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) return llt.solve(b);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::Numerical, "ridge normal equations are singular");
    return ldlt.solve(b);
}

std::string stratum_name(int c, int t) { return "(cell type " + std::to_string(c) + ", time " + std::to_string(t) + ")"; }

} // namespace

Eigen::VectorXd ridge_fit_slice(const KernelDesign& design, const StratumStats& stats, int c, int t, double lambda)
{
    if (!(lambda > 0.0)) throw Error(ErrorKind::Domain, "ridge penalty must be positive");
    const auto s = static_cast<std::size_t>(design.stratum_of(c, t));
    if (stats.nstar[s] == 0) throw Error(ErrorKind::EmptyStratum, "no weight triples in stratum " + stratum_name(c, t));
    Eigen::MatrixXd A = stats.gram[s];
    A.diagonal().array() += lambda;
    return solve_spd(A, stats.xy[s]);
}

namespace {

struct FoldStats {
    Eigen::MatrixXd gram;
    Eigen::VectorXd xy;
    double yy = 0.0;
};

// Cross-validated penalty for one stratum; folds partition the plaques that
// contribute triples to it.
double choose_lambda(const KernelDesign& design, const StratumStats& stats, int s, const RidgeConfig& config,
                     double scale, std::vector<std::string>& warnings)
{
    const auto grid = config.effective_grid();
    const auto lo = design.stratum_offsets[static_cast<std::size_t>(s)];
    const auto hi = design.stratum_offsets[static_cast<std::size_t>(s) + 1];

    std::vector<std::int32_t> plaques;
    for (auto a = lo; a < hi; ++a)
        for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
             n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n)
            plaques.push_back(design.triple_plaque[static_cast<std::size_t>(n)]);
    std::sort(plaques.begin(), plaques.end());
    plaques.erase(std::unique(plaques.begin(), plaques.end()), plaques.end());

    const int folds = std::min<int>(config.folds, static_cast<int>(plaques.size()));
    const int c = design.stratum_cell_type(s), t = design.stratum_time(s);
    if (folds < 2) {
        warnings.push_back("stratum " + stratum_name(c, t) +
                           ": fewer than two plaques, ridge penalty set to the mean Gram diagonal");
        return scale;
    }

    std::seed_seq seq{static_cast<std::uint64_t>(config.seed), static_cast<std::uint64_t>(s)};
    std::mt19937_64 rng(seq);
    std::vector<std::int32_t> order = plaques;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> fold_of(static_cast<std::size_t>(design.total_plaques()), -1);
    for (std::size_t i = 0; i < order.size(); ++i) fold_of[static_cast<std::size_t>(order[i])] = static_cast<int>(i % folds);

    const int p = design.p;
    std::vector<FoldStats> fs(static_cast<std::size_t>(folds));
    for (auto& f : fs) {
        f.gram = Eigen::MatrixXd::Zero(p, p);
        f.xy = Eigen::VectorXd::Zero(p);
    }
    std::vector<double> kappa(static_cast<std::size_t>(folds)), g(static_cast<std::size_t>(folds));
    for (auto a = lo; a < hi; ++a) {
        std::fill(kappa.begin(), kappa.end(), 0.0);
        std::fill(g.begin(), g.end(), 0.0);
        for (auto n = design.triple_offsets[static_cast<std::size_t>(a)];
             n < design.triple_offsets[static_cast<std::size_t>(a) + 1]; ++n) {
            const auto f = static_cast<std::size_t>(fold_of[static_cast<std::size_t>(design.triple_plaque[static_cast<std::size_t>(n)])]);
            const double K = design.triple_weight[static_cast<std::size_t>(n)];
            const double y = design.triple_outcome[static_cast<std::size_t>(n)];
            kappa[f] += K;
            g[f] += K * y;
            fs[f].yy += K * y * y;
        }
        const Eigen::VectorXd xa = design.x.row(a).transpose();
        for (std::size_t f = 0; f < fs.size(); ++f) {
            if (kappa[f] == 0.0) continue;
            fs[f].gram.selfadjointView<Eigen::Lower>().rankUpdate(xa, kappa[f]);
            fs[f].xy += g[f] * xa;
        }
    }
    for (auto& f : fs) f.gram = f.gram.selfadjointView<Eigen::Lower>();

    std::vector<double> cv_error(grid.size(), 0.0);
    const auto& H = stats.gram[static_cast<std::size_t>(s)];
    const auto& d = stats.xy[static_cast<std::size_t>(s)];
    for (const auto& f : fs) {
        const Eigen::MatrixXd Htr = H - f.gram;
        const Eigen::VectorXd dtr = d - f.xy;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Htr);
        const Eigen::VectorXd proj = eig.eigenvectors().transpose() * dtr;
        for (std::size_t g_i = 0; g_i < grid.size(); ++g_i) {
            const double lam = grid[g_i] * scale;
            const Eigen::VectorXd coef = proj.array() / (eig.eigenvalues().array() + lam);
            const Eigen::VectorXd beta = eig.eigenvectors() * coef;
            cv_error[g_i] += f.yy - 2.0 * beta.dot(f.xy) + beta.dot(f.gram * beta);
        }
    }
    // ties go to the larger penalty
    std::size_t best = grid.size() - 1;
    for (std::size_t g_i = grid.size(); g_i-- > 0;)
        if (cv_error[g_i] < cv_error[best]) best = g_i;
    return grid[best] * scale;
}

} // namespace

RidgeInit ridge_init(const KernelDesign& design, const StratumStats& stats, const RidgeConfig& config)
{
    if (config.folds < 2) throw Error(ErrorKind::Validation, "ridge cross-validation needs at least 2 folds");
    for (double v : config.effective_grid())
        if (!(v > 0.0)) throw Error(ErrorKind::Validation, "ridge penalty grid must be strictly positive");

    RidgeInit out;
    out.tensor = Tensor3(design.p, design.C, design.T);
    const int S = design.strata();
    out.chosen_lambda.assign(static_cast<std::size_t>(S), 0.0);
    std::vector<std::vector<std::string>> warnings(static_cast<std::size_t>(S));
    std::vector<Eigen::VectorXd> slices(static_cast<std::size_t>(S));

    par::parallel_for<par::Schedule::Dynamic>(0, S, [&](std::ptrdiff_t si) {
        const int s = static_cast<int>(si);
        const int c = design.stratum_cell_type(s), t = design.stratum_time(s);
        auto& warn = warnings[static_cast<std::size_t>(s)];
        if (stats.nstar[static_cast<std::size_t>(s)] == 0) {
            warn.push_back("empty stratum " + stratum_name(c, t) + ": ridge slice set to zero");
            slices[static_cast<std::size_t>(s)] = Eigen::VectorXd::Zero(design.p);
            return;
        }
        double scale = stats.gram[static_cast<std::size_t>(s)].diagonal().mean();
        if (!(scale > 0.0)) scale = 1.0;
        const double lambda = choose_lambda(design, stats, s, config, scale, warn);
        out.chosen_lambda[static_cast<std::size_t>(s)] = lambda;
        slices[static_cast<std::size_t>(s)] = ridge_fit_slice(design, stats, c, t, lambda);
    });

    for (int s = 0; s < S; ++s) {
        out.tensor.set_slice(design.stratum_cell_type(s), design.stratum_time(s), slices[static_cast<std::size_t>(s)]);
        for (auto& w : warnings[static_cast<std::size_t>(s)]) out.warnings.push_back(std::move(w));
    }
    return out;
}

} // namespace kwcp
