#include "kwcp/cp_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kwcp/error.hpp"

namespace kwcp {

Eigen::VectorXd Tensor3::slice(int c, int t) const
{
    Eigen::VectorXd out(p_);
    for (int l = 0; l < p_; ++l) out(l) = (*this)(l, c, t);
    return out;
}

void Tensor3::set_slice(int c, int t, const Eigen::VectorXd& beta)
{
    for (int l = 0; l < p_; ++l) (*this)(l, c, t) = beta(l);
}

CPModel::CPModel(int p, int C, int T, int R)
    : w(Eigen::VectorXd::Zero(R)), q1(Eigen::MatrixXd::Zero(p, R)), q2(Eigen::MatrixXd::Zero(C, R)),
      q3(Eigen::MatrixXd::Zero(T, R))
{
}

CPModel CPModel::select(const std::vector<int>& components) const
{
    CPModel out(genes(), cell_types(), times(), static_cast<int>(components.size()));
    for (std::size_t i = 0; i < components.size(); ++i) {
        const auto r = components[i];
        const auto j = static_cast<Eigen::Index>(i);
        out.w(j) = w(r);
        out.q1.col(j) = q1.col(r);
        out.q2.col(j) = q2.col(r);
        out.q3.col(j) = q3.col(r);
    }
    return out;
}

Eigen::VectorXd beta_slice(const CPModel& model, int c, int t)
{
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(model.genes());
    for (int r = 0; r < model.rank(); ++r) beta += (model.w(r) * model.q2(c, r) * model.q3(t, r)) * model.q1.col(r);
    return beta;
}

Tensor3 reconstruct(const CPModel& model)
{
    Tensor3 out(model.genes(), model.cell_types(), model.times());
    for (int t = 0; t < model.times(); ++t)
        for (int c = 0; c < model.cell_types(); ++c) out.set_slice(c, t, beta_slice(model, c, t));
    return out;
}

std::array<double, 3> renormalize_component(CPModel& model, int r)
{
    const double a1 = model.q1.col(r).norm();
    const double a2 = model.q2.col(r).norm();
    const double a3 = model.q3.col(r).norm();
    if (a1 == 0.0 || a2 == 0.0 || a3 == 0.0) {
        model.w(r) = 0.0;
        return {a1, a2, a3};
    }
    model.q1.col(r) /= a1;
    model.q2.col(r) /= a2;
    model.q3.col(r) /= a3;
    model.w(r) *= a1 * a2 * a3;
    return {a1, a2, a3};
}

CPModel renormalize(CPModel model)
{
    for (int r = 0; r < model.rank(); ++r) renormalize_component(model, r);
    return model;
}

CPModel orient_signs(CPModel model)
{
    for (int r = 0; r < model.rank(); ++r) {
        int top = 0;
        double best = -1.0;
        for (int l = 0; l < model.genes(); ++l) {
            const double v = std::abs(model.q1(l, r));
            if (v > best) {
                best = v;
                top = l;
            }
        }
        if (model.genes() > 0 && model.q1(top, r) < 0.0) {
            model.q1.col(r) = -model.q1.col(r);
            model.q3.col(r) = -model.q3.col(r);
        }
    }
    return model;
}

CPModel strip_zero_components(const CPModel& model)
{
    std::vector<int> keep;
    for (int r = 0; r < model.rank(); ++r)
        if (model.w(r) != 0.0) keep.push_back(r);
    return model.select(keep);
}

int cp_rank_bound(int p, int C, int T) { return std::min({p * C, p * T, C * T}); }

namespace {

// M(l, r) = sum_{c,t} X(l,c,t) B(c,r) D(t,r) and its analogues for the
// other two modes.
Eigen::MatrixXd mttkrp(const Tensor3& X, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                       const Eigen::MatrixXd& D, int mode)
{
    const int p = X.genes(), C = X.cell_types(), T = X.times();
    const auto R = A.cols();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(mode == 0 ? p : mode == 1 ? C : T, R);
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            for (int l = 0; l < p; ++l) {
                const double x = X(l, c, t);
                if (x == 0.0) continue;
                for (Eigen::Index r = 0; r < R; ++r) {
                    if (mode == 0) M(l, r) += x * B(c, r) * D(t, r);
                    else if (mode == 1) M(c, r) += x * A(l, r) * D(t, r);
                    else M(t, r) += x * A(l, r) * B(c, r);
                }
            }
    return M;
}

double residual_norm(const Tensor3& X, const CPModel& model)
{
    const auto Xhat = reconstruct(model);
    double acc = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double d = X.data()[i] - Xhat.data()[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

} // namespace

CPModel cp_als_fit(const Tensor3& tensor, int R, const AlsOptions& options)
{
    if (R < 1) throw Error(ErrorKind::Domain, "CP rank must be >= 1");
    for (double v : tensor.data())
        if (!std::isfinite(v)) throw Error(ErrorKind::Domain, "CP-ALS input tensor has non-finite entries");

    const int p = tensor.genes(), C = tensor.cell_types(), T = tensor.times();
    CPModel model(p, C, T, R);
    double xnorm = 0.0;
    for (double v : tensor.data()) xnorm += v * v;
    xnorm = std::sqrt(xnorm);
    if (xnorm == 0.0) {
        // zero tensor: unit factors with zero weights
        model.q1.setZero();
        model.q2.setZero();
        model.q3.setZero();
        for (int r = 0; r < R; ++r) {
            model.q1(r % p, r) = 1.0;
            model.q2(r % C, r) = 1.0;
            model.q3(r % T, r) = 1.0;
        }
        return model;
    }

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd A(p, R), B(C, R), D(T, R);
    for (Eigen::Index j = 0; j < R; ++j) {
        for (Eigen::Index i = 0; i < p; ++i) A(i, j) = normal(rng);
        for (Eigen::Index i = 0; i < C; ++i) B(i, j) = normal(rng);
        for (Eigen::Index i = 0; i < T; ++i) D(i, j) = normal(rng);
    }
    for (Eigen::Index j = 0; j < R; ++j) {
        A.col(j).normalize();
        B.col(j).normalize();
        D.col(j).normalize();
    }
    Eigen::VectorXd lambda = Eigen::VectorXd::Ones(R);

    auto solve_mode = [](const Eigen::MatrixXd& M, const Eigen::MatrixXd& V) -> Eigen::MatrixXd {
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(V);
        return cod.solve(M.transpose()).transpose();
    };
    auto normalize_columns = [&](Eigen::MatrixXd& F) {
        for (Eigen::Index j = 0; j < F.cols(); ++j) {
            const double n = F.col(j).norm();
            lambda(j) = n;
            if (n > 0.0) F.col(j) /= n;
        }
    };
    auto snapshot = [&]() {
        model.w = lambda;
        model.q1 = A;
        model.q2 = B;
        model.q3 = D;
    };

    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < options.max_iters; ++it) {
        A = solve_mode(mttkrp(tensor, A, B, D, 0), (B.transpose() * B).cwiseProduct(D.transpose() * D));
        normalize_columns(A);
        B = solve_mode(mttkrp(tensor, A, B, D, 1), (A.transpose() * A).cwiseProduct(D.transpose() * D));
        normalize_columns(B);
        D = solve_mode(mttkrp(tensor, A, B, D, 2), (A.transpose() * A).cwiseProduct(B.transpose() * B));
        normalize_columns(D);
        snapshot();
        const double err = residual_norm(tensor, model);
        if (err <= 1e-14 * xnorm || std::abs(prev - err) <= options.tol * xnorm) break;
        prev = err;
    }
    // weights from ALS may come out negative; move the sign into q3
    for (int r = 0; r < R; ++r) {
        if (model.w(r) < 0.0) {
            model.w(r) = -model.w(r);
            model.q3.col(r) = -model.q3.col(r);
        }
    }
    return renormalize(model);
}

} // namespace kwcp
