#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kwcp {

/// Dense p x C x T coefficient tensor; entry (l, c, t).
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int p, int C, int T) : p_(p), C_(C), T_(T), data_(static_cast<std::size_t>(p) * C * T, 0.0) {}

    int genes() const { return p_; }
    int cell_types() const { return C_; }
    int times() const { return T_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int l, int c, int t) { return data_[index(l, c, t)]; }
    double operator()(int l, int c, int t) const { return data_[index(l, c, t)]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Eigen::VectorXd slice(int c, int t) const;
    void set_slice(int c, int t, const Eigen::VectorXd& beta);

    bool same_shape(const Tensor3& other) const
    {
        return p_ == other.p_ && C_ == other.C_ && T_ == other.T_;
    }

private:
    std::size_t index(int l, int c, int t) const
    {
        return (static_cast<std::size_t>(t) * C_ + c) * p_ + l;
    }

    int p_ = 0, C_ = 0, T_ = 0;
    std::vector<double> data_;
};

/// Rank-R CP factorization: beta(l,c,t) = sum_r w_r q1(l,r) q2(c,r) q3(t,r).
/// Rank 0 is the all-zero tensor.
struct CPModel {
    Eigen::VectorXd w;   // R
    Eigen::MatrixXd q1;  // p x R (genes)
    Eigen::MatrixXd q2;  // C x R (cell types)
    Eigen::MatrixXd q3;  // T x R (times)

    CPModel() = default;
    CPModel(int p, int C, int T, int R);

    int rank() const { return static_cast<int>(w.size()); }
    int genes() const { return static_cast<int>(q1.rows()); }
    int cell_types() const { return static_cast<int>(q2.rows()); }
    int times() const { return static_cast<int>(q3.rows()); }

    /// Keeps only the listed components, in the given order.
    CPModel select(const std::vector<int>& components) const;
};

Eigen::VectorXd beta_slice(const CPModel& model, int c, int t);

Tensor3 reconstruct(const CPModel& model);

/// Unit l2 norm for every factor column, scale absorbed into w. A component
/// with a zero factor column gets w = 0 and is otherwise left untouched.
CPModel renormalize(CPModel model);

/// Normalizes one component in place; returns {alpha1, alpha2, alpha3}.
std::array<double, 3> renormalize_component(CPModel& model, int r);

/// Makes the largest-|.| gene loading of each component positive, flipping
/// q1 and q3 together. Ties pick the smallest gene index.
CPModel orient_signs(CPModel model);

/// Drops components with w_r == 0.
CPModel strip_zero_components(const CPModel& model);

struct AlsOptions {
    int max_iters = 5000;
    double tol = 1e-12;  // relative change of the fit residual
    std::uint64_t seed = 20240601;
};

/// Plain CP alternating least squares on a dense tensor with seeded random
/// starting factors. Returns a normalized model of exactly rank R (zero
/// components retained with w = 0).
CPModel cp_als_fit(const Tensor3& tensor, int R, const AlsOptions& options = {});

/// Upper bound on CP rank of a p x C x T tensor: min{pC, pT, CT}.
int cp_rank_bound(int p, int C, int T);

} // namespace kwcp
