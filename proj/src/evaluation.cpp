#include "kwcp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "kwcp/error.hpp"
#include "kwcp/geometry.hpp"

namespace kwcp {

double coefficient_mse(const Tensor3& estimate, const Tensor3& truth)
{
    if (!estimate.same_shape(truth)) throw Error(ErrorKind::Validation, "estimate and truth tensors differ in shape");
    if (truth.size() == 0) throw Error(ErrorKind::Validation, "empty coefficient tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = estimate.data()[i] - truth.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(truth.size());
}

RocResult roc_auc(const Tensor3& estimate, const Tensor3& truth)
{
    if (!estimate.same_shape(truth)) throw Error(ErrorKind::Validation, "estimate and truth tensors differ in shape");
    std::vector<double> score(truth.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        score[i] = std::abs(estimate.data()[i]);
        if (truth.data()[i] != 0.0) ++positives;
    }
    const std::size_t negatives = truth.size() - positives;
    if (positives == 0 || negatives == 0)
        throw Error(ErrorKind::Domain, "TPR/FPR undefined: truth needs both zero and nonzero entries");

    std::vector<double> thresholds = score;
    thresholds.push_back(0.0);
    thresholds.push_back(std::numeric_limits<double>::infinity());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    // sweep from the top: an entry is selected when |estimate| >= tau
    std::vector<std::size_t> order(truth.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    RocResult out;
    out.points.push_back({0.0, 0.0});
    std::size_t tp = 0, fp = 0, next = 0;
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        while (next < order.size() && score[order[next]] >= *it) {
            if (truth.data()[order[next]] != 0.0) ++tp;
            else ++fp;
            ++next;
        }
        out.points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                              static_cast<double>(tp) / static_cast<double>(positives)});
    }
    out.points.push_back({1.0, 1.0});
    std::sort(out.points.begin(), out.points.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
    });
    out.points.erase(std::unique(out.points.begin(), out.points.end(),
                                 [](const RocPoint& a, const RocPoint& b) { return a.fpr == b.fpr && a.tpr == b.tpr; }),
                     out.points.end());
    for (std::size_t i = 1; i < out.points.size(); ++i)
        out.auc += (out.points[i].fpr - out.points[i - 1].fpr) * 0.5 * (out.points[i].tpr + out.points[i - 1].tpr);
    return out;
}

namespace {

struct Standardized {
    Eigen::MatrixXd x;  // centered, unit population variance; constant columns zeroed
    Eigen::VectorXd y;  // centered
    Eigen::VectorXd mean, scale;
    double y_mean = 0.0;
    std::vector<char> usable;
};

Standardized standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& y)
{
    Standardized s;
    const auto n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.scale = Eigen::VectorXd::Ones(x.cols());
    s.usable.assign(static_cast<std::size_t>(x.cols()), 0);
    s.x = x.rowwise() - s.mean.transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double sd = std::sqrt(s.x.col(j).squaredNorm() / n);
        if (sd > 1e-12 * (1.0 + std::abs(s.mean(j)))) {
            s.scale(j) = sd;
            s.x.col(j) /= sd;
            s.usable[static_cast<std::size_t>(j)] = 1;
        } else {
            s.x.col(j).setZero();
        }
    }
    s.y_mean = y.mean();
    s.y = y.array() - s.y_mean;
    return s;
}

// Coordinate descent on (1/2n)||y - Xb||^2 + lambda ||b||_1 over standardized
// columns, warm-started from b.
void lasso_cd(const Standardized& s, double lambda, Eigen::VectorXd& b, const LassoConfig& config)
{
    const auto n = static_cast<double>(s.x.rows());
    Eigen::VectorXd r = s.y - s.x * b;
    for (int it = 0; it < config.max_iters; ++it) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < s.x.cols(); ++j) {
            if (!s.usable[static_cast<std::size_t>(j)]) continue;
            const double old = b(j);
            const double rho = s.x.col(j).dot(r) / n + old;
            const double next = rho > lambda ? rho - lambda : rho < -lambda ? rho + lambda : 0.0;
            if (next != old) {
                r -= (next - old) * s.x.col(j);
                b(j) = next;
                max_change = std::max(max_change, std::abs(next - old));
            }
        }
        if (max_change < config.tol) return;
    }
}

std::vector<double> lasso_lambdas(const Standardized& s, const LassoConfig& config)
{
    const auto n = static_cast<double>(s.x.rows());
    const double lmax = (s.x.transpose() * s.y).cwiseAbs().maxCoeff() / n;
    const double ratio = config.min_ratio > 0.0 ? config.min_ratio : (s.x.rows() < s.x.cols() ? 1e-2 : 1e-4);
    std::vector<double> out;
    if (!(lmax > 0.0)) return out;
    const int m = std::max(1, config.path_length);
    for (int k = 0; k < m; ++k) out.push_back(lmax * std::pow(ratio, m > 1 ? static_cast<double>(k) / (m - 1) : 0.0));
    return out;
}

LassoFit to_original(const Standardized& s, const Eigen::VectorXd& b, double lambda)
{
    LassoFit fit;
    fit.lambda = lambda;
    fit.beta = b.cwiseQuotient(s.scale);
    fit.intercept = s.y_mean - s.mean.dot(fit.beta);
    return fit;
}

} // namespace

LassoFit lasso_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoConfig& config,
                  std::vector<std::string>* warnings)
{
    if (x.rows() != y.size()) throw Error(ErrorKind::Validation, "lasso: x and y row counts differ");
    const auto n = x.rows();
    const auto p = x.cols();
    auto warn = [&](const std::string& w) {
        if (warnings) warnings->push_back(w);
    };
    if (n < 3) {
        warn("lasso: fewer than 3 observations, intercept-only fit");
        LassoFit fit;
        fit.beta = Eigen::VectorXd::Zero(p);
        fit.intercept = n > 0 ? y.mean() : 0.0;
        fit.lambda = std::numeric_limits<double>::infinity();
        return fit;
    }
    const auto full = standardize(x, y);
    const auto lambdas = lasso_lambdas(full, config);
    if (lambdas.empty()) {
        warn("lasso: no predictor correlates with the response, intercept-only fit");
        return to_original(full, Eigen::VectorXd::Zero(p), std::numeric_limits<double>::infinity());
    }

    const int folds = static_cast<int>(std::min<Eigen::Index>(std::max(2, config.folds), n));
    std::vector<int> fold_of(static_cast<std::size_t>(n));
    {
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        std::mt19937_64 rng(config.seed);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < perm.size(); ++i) fold_of[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % folds);
    }

    const auto m = lambdas.size();
    std::vector<std::vector<double>> fold_mse(static_cast<std::size_t>(folds), std::vector<double>(m, 0.0));
    for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        const auto s = standardize(x(train, Eigen::all), y(train));
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        for (std::size_t k = 0; k < m; ++k) {
            lasso_cd(s, lambdas[k], b, config);
            const auto fit = to_original(s, b, lambdas[k]);
            const Eigen::VectorXd pred = (x(test, Eigen::all) * fit.beta).array() + fit.intercept;
            fold_mse[static_cast<std::size_t>(f)][k] = (y(test) - pred).squaredNorm() / static_cast<double>(test.size());
        }
    }

    std::vector<double> cvm(m, 0.0), cvse(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        for (int f = 0; f < folds; ++f) cvm[k] += fold_mse[static_cast<std::size_t>(f)][k];
        cvm[k] /= folds;
        double var = 0.0;
        for (int f = 0; f < folds; ++f) {
            const double d = fold_mse[static_cast<std::size_t>(f)][k] - cvm[k];
            var += d * d;
        }
        cvse[k] = std::sqrt(var / (folds - 1) / folds);
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < m; ++k)
        if (cvm[k] < cvm[best]) best = k;
    std::size_t chosen = best;
    if (config.one_se_rule) {
        const double limit = cvm[best] + cvse[best];
        for (std::size_t k = 0; k <= best; ++k)
            if (cvm[k] <= limit) {
                chosen = k;
                break;
            }
    }

    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (std::size_t k = 0; k <= chosen; ++k) lasso_cd(full, lambdas[k], b, config);
    return to_original(full, b, lambdas[chosen]);
}

PairedLassoResult paired_lasso(const Dataset& dataset, const LassoConfig& config)
{
    const int p = dataset.num_genes(), C = dataset.num_cell_types(), T = dataset.num_times();
    PairedLassoResult out;
    out.estimate = Tensor3(p, C, T);

    // rows grouped by stratum (cell type of the paired cell, time)
    std::map<std::pair<int, int>, std::vector<std::pair<Eigen::VectorXd, double>>> rows;
    for (const auto& s : dataset.samples) {
        if (s.num_plaques() == 0) continue;
        if (s.num_cells() == 0)
            throw Error(ErrorKind::Validation, "sample '" + s.id + "' has plaques but no cells to pair with");
        double lo_x = s.cell_locations[0].x, hi_x = lo_x, lo_y = s.cell_locations[0].y, hi_y = lo_y;
        for (const auto& q : s.cell_locations) {
            lo_x = std::min(lo_x, q.x);
            hi_x = std::max(hi_x, q.x);
            lo_y = std::min(lo_y, q.y);
            hi_y = std::max(hi_y, q.y);
        }
        const double area = std::max((hi_x - lo_x) * (hi_y - lo_y), 1e-12);
        const double cell = std::max(std::sqrt(area / static_cast<double>(s.num_cells())) * 2.0, 1e-9);
        SpatialGrid grid(s.cell_locations, cell);
        for (const auto& pl : s.plaques) {
            const auto k = static_cast<std::size_t>(grid.nearest(pl.location));
            const int c = config.stratified ? s.cell_types[k] : 0;
            const int t = config.stratified ? s.time_index : 0;
            rows[{c, t}].emplace_back(s.expression.row(static_cast<Eigen::Index>(k)).transpose(), pl.outcome);
        }
    }

    auto fit_rows = [&](const std::vector<std::pair<Eigen::VectorXd, double>>& r, const std::string& label) {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(r.size()), p);
        Eigen::VectorXd y(static_cast<Eigen::Index>(r.size()));
        for (std::size_t i = 0; i < r.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = r[i].first.transpose();
            y(static_cast<Eigen::Index>(i)) = r[i].second;
        }
        std::vector<std::string> w;
        auto fit = lasso_cv(x, y, config, &w);
        for (auto& m : w) out.warnings.push_back(label + ": " + m);
        return fit.beta;
    };

    if (!config.stratified) {
        const auto it = rows.find({0, 0});
        const Eigen::VectorXd beta =
            it == rows.end() ? Eigen::VectorXd::Zero(p) : fit_rows(it->second, "pooled paired lasso");
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) out.estimate.set_slice(c, t, beta);
        return out;
    }
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
            const std::string label = "paired lasso stratum (" + dataset.cell_types[static_cast<std::size_t>(c)] +
                                      ", time " + std::to_string(t) + ")";
            const auto it = rows.find({c, t});
            if (it == rows.end()) {
                out.warnings.push_back(label + ": no paired plaques, zero slice");
                continue;
            }
            out.estimate.set_slice(c, t, fit_rows(it->second, label));
        }
    return out;
}

StrengthSummary summarize_strength(const CPModel& model)
{
    StrengthSummary out;
    const int C = model.cell_types(), T = model.times();
    out.strength.assign(static_cast<std::size_t>(C), std::vector<double>(static_cast<std::size_t>(T), 0.0));
    out.mean_effect = out.strength;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t) {
            const auto b = beta_slice(model, c, t);
            out.strength[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] = b.norm();
            out.mean_effect[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] = b.size() ? b.mean() : 0.0;
        }
    return out;
}

double net_direction(const CPModel& model, int r)
{
    if (r < 0 || r >= model.rank()) throw Error(ErrorKind::Domain, "component index out of range");
    double out = 1.0;
    for (const Eigen::MatrixXd* q : {&model.q1, &model.q2, &model.q3}) {
        const double abs_sum = q->col(r).cwiseAbs().sum();
        if (abs_sum == 0.0)
            throw Error(ErrorKind::Domain, "component " + std::to_string(r + 1) + " has an all-zero mode");
        out *= q->col(r).sum() / abs_sum;
    }
    return out;
}

namespace {

std::vector<Loading> top_loadings(const Eigen::VectorXd& v, int top_k)
{
    std::vector<Loading> all;
    for (Eigen::Index i = 0; i < v.size(); ++i) all.push_back({static_cast<int>(i), v(i)});
    std::stable_sort(all.begin(), all.end(),
                     [](const Loading& a, const Loading& b) { return std::abs(a.value) > std::abs(b.value); });
    if (top_k >= 0 && static_cast<std::size_t>(top_k) < all.size()) all.resize(static_cast<std::size_t>(top_k));
    return all;
}

} // namespace

ComponentSummary component_table(const CPModel& model, int top_k)
{
    ComponentSummary out;
    std::vector<int> order(static_cast<std::size_t>(model.rank()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return model.w(a) > model.w(b); });
    for (int r : order) {
        ComponentRow row;
        row.component = r;
        row.weight = model.w(r);
        try {
            row.net_direction = net_direction(model, r);
        } catch (const Error&) {
            row.net_direction = std::numeric_limits<double>::quiet_NaN();
        }
        row.top_cells = top_loadings(model.q2.col(r), top_k);
        row.top_times = top_loadings(model.q3.col(r), top_k);
        row.top_genes = top_loadings(model.q1.col(r), top_k);
        out.rows.push_back(std::move(row));
    }
    out.strength = summarize_strength(model);
    return out;
}

} // namespace kwcp
