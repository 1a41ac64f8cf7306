#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "textdemand/panel_table.hpp"

namespace textdemand {

enum class Family { poisson_fe, poisson_gamma_re, linear_fe };

std::string_view to_string(Family f);
Family family_from_string(std::string_view s);

struct RegressionSpec {
    std::string label;
    Family family = Family::poisson_fe;
    std::string dependent = "sales";
    std::vector<std::string> regressors;
    std::string group_key = "item_id";  // fixed or random effect grouping
    std::string cluster_key = "item_id";
    bool time_dummies = false;

    std::string to_json() const;
    static RegressionSpec from_json(std::string_view text);
};

/// Numeric form of a spec over a panel. Grouping and cluster keys may name a
/// key column (item_id, vendor_id, week, snapshot_id) or a data column.
struct Design {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;  // regressors, week dummies, then _cons for the RE family
    std::vector<std::string> names;
    std::vector<int> group;  // per row, index into group_ids
    std::vector<std::string> group_ids;
    std::vector<int> cluster;  // per row, index into cluster_ids
    std::vector<std::string> cluster_ids;
    std::vector<std::size_t> rows;  // panel rows kept
    std::size_t n_input_rows = 0;
    std::size_t n_dropped = 0;       // rows of all-zero groups (Poisson FE only)
    std::size_t n_dropped_groups = 0;
};

/// Throws InvalidInput for unknown columns, non-finite values, or (count
/// families) a dependent that is not a nonnegative integer.
Design build_design(const PanelTable& panel, const RegressionSpec& spec);

/// Log-likelihood with derivatives. Unit scores are per row for the FE
/// families and per group for the RE family; unit_cluster maps each unit to
/// its cluster.
struct Evaluation {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd hessian;
    Eigen::MatrixXd unit_scores;
    std::vector<int> unit_cluster;
};

/// Poisson with group effects profiled out in closed form.
Evaluation poisson_fe_eval(const Design& d, const Eigen::VectorXd& beta);
/// Poisson-gamma marginal likelihood per group. params = (beta, ln alpha).
Evaluation poisson_gamma_eval(const Design& d, const Eigen::VectorXd& params);
/// Pooled Poisson (the alpha -> 0 limit of the above), beta only.
Evaluation poisson_pooled_eval(const Design& d, const Eigen::VectorXd& beta);
/// Gaussian log-likelihood of the within-transformed model with the error
/// variance concentrated out.
Evaluation linear_fe_eval(const Design& d, const Eigen::VectorXd& beta);

struct FitResult {
    RegressionSpec spec;
    std::vector<std::string> names;
    Eigen::VectorXd beta;
    Eigen::MatrixXd vcov;        // cluster-robust
    Eigen::MatrixXd vcov_model;  // inverse negative Hessian
    double loglik = 0.0;
    std::size_t n_obs = 0;
    std::size_t n_dropped = 0;
    std::size_t n_groups = 0;
    std::size_t n_clusters = 0;

    // RE family
    std::optional<double> alpha;
    std::optional<double> alpha_se;
    bool boundary = false;
    std::optional<double> loglik_poisson;
    std::optional<double> lr_alpha;

    int iterations = 0;
    double gradient_norm = 0.0;  // max abs score at the solution

    // FE families: estimated group effects
    std::vector<std::string> group_ids;
    Eigen::VectorXd group_effects;

    std::size_t index(std::string_view name) const;  // throws InvalidInput
    double coef(std::string_view name) const { return beta(static_cast<Eigen::Index>(index(name))); }
    double se(std::string_view name) const;

    std::string to_json() const;
    static FitResult from_json(std::string_view text);
};

struct OptimizerOptions {
    double gradient_tol = 1e-8;
    double relative_tol = 1e-10;
    int max_iterations = 200;
};

/// Throws SeparationError naming a column whose coefficient diverges,
/// CollinearityError naming dependent columns, ConvergenceError otherwise.
FitResult fit_poisson_fe(const PanelTable& panel, const RegressionSpec& spec, const OptimizerOptions& opt = {});

/// Falls back to pooled Poisson (alpha = 0, boundary = true) when the
/// likelihood-ratio statistic for alpha is below the 5% critical value of
/// the boundary mixture (2.706).
FitResult fit_poisson_gamma_re(const PanelTable& panel, const RegressionSpec& spec, const OptimizerOptions& opt = {});

FitResult fit_linear_fe(const PanelTable& panel, const RegressionSpec& spec);

/// Dispatches on spec.family.
FitResult fit(const PanelTable& panel, const RegressionSpec& spec);

/// A^-1 B A^-1 * G/(G-1) with B = sum over clusters of outer products of
/// summed unit scores. Throws InvalidInput with fewer than two clusters.
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread_inv, const Eigen::MatrixXd& unit_scores,
                         const std::vector<int>& unit_cluster);

/// Recomputes the cluster-robust covariance of a fit under another cluster key.
Eigen::MatrixXd cluster_robust_vcov(const FitResult& fit, const PanelTable& panel, const std::string& cluster_key);

struct ExpCoef {
    std::string name;
    double estimate = 0.0;  // exp(beta)
    double se = 0.0;        // exp(beta) * se(beta)
    double z = 0.0;         // beta / se(beta)
    double p = 1.0;         // two-sided normal p-value for beta = 0
};

std::pair<double, double> exp_delta(double beta, double se);
/// Every coefficient except lnalpha.
std::vector<ExpCoef> exponentiate(const FitResult& fit);

struct WaldResult {
    double chi2 = 0.0;
    double p = 1.0;
};

/// (b_i - b_j)^2 / (v_ii + v_jj - 2 v_ij), chi-squared with 1 df. Throws
/// InvalidInput when the variance of the difference is not positive.
WaldResult wald_equality_test(const FitResult& fit, std::string_view coef_i, std::string_view coef_j);
WaldResult wald_equality_test(double bi, double bj, double vii, double vjj, double vij);

double two_sided_p(double z);
std::string stars(double p);  // "***" < 0.01, "**" < 0.05, "*" < 0.10

}  // namespace textdemand
