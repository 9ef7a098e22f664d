#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kwcp/cp_model.hpp"
#include "kwcp/dataset.hpp"

namespace kwcp {

double coefficient_mse(const Tensor3& estimate, const Tensor3& truth);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    double auc = 0.0;
    std::vector<RocPoint> points;  // sorted by fpr, then tpr
};

/// Exact ROC over every distinct |estimate| threshold plus 0 and +inf,
/// augmented with (0,0) and (1,1); trapezoidal AUC.
RocResult roc_auc(const Tensor3& estimate, const Tensor3& truth);

struct LassoConfig {
    int folds = 5;
    int path_length = 100;
    double min_ratio = 0.0;  // 0: 1e-2 when n < p else 1e-4
    bool one_se_rule = true;
    bool stratified = true;
    double tol = 1e-7;
    int max_iters = 100000;
    std::uint64_t seed = 20240601;
};

struct LassoFit {
    double intercept = 0.0;
    Eigen::VectorXd beta;  // original predictor scale
    double lambda = 0.0;
};

/// Gaussian lasso with unpenalized intercept and standardized predictors,
/// penalty by K-fold CV (minimum or one-standard-error rule).
LassoFit lasso_cv(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LassoConfig& config,
                  std::vector<std::string>* warnings = nullptr);

struct PairedLassoResult {
    Tensor3 estimate;
    std::vector<std::string> warnings;
};

/// Each plaque paired with its nearest cell, then a lasso per (cell type of
/// the paired cell, time) stratum, or one pooled lasso when unstratified.
PairedLassoResult paired_lasso(const Dataset& dataset, const LassoConfig& config);

struct StrengthSummary {
    std::vector<std::vector<double>> strength;  // A[c][t] = ||beta_{.ct}||_2
    std::vector<std::vector<double>> mean_effect;
};

StrengthSummary summarize_strength(const CPModel& model);

/// Product over modes of (sum q) / (sum |q|). Throws Error(Domain) when a
/// mode of component r is entirely zero.
double net_direction(const CPModel& model, int r);

struct Loading {
    int index = 0;
    double value = 0.0;
};

struct ComponentRow {
    int component = 0;  // index into the model
    double weight = 0.0;
    double net_direction = 0.0;
    std::vector<Loading> top_cells;
    std::vector<Loading> top_times;
    std::vector<Loading> top_genes;
};

struct ComponentSummary {
    std::vector<ComponentRow> rows;  // by weight, descending
    StrengthSummary strength;
};

ComponentSummary component_table(const CPModel& model, int top_k);

} // namespace kwcp
