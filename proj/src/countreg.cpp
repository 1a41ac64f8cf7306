#include "textdemand/countreg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <json.hpp>

#include "textdemand/errors.hpp"

namespace textdemand {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

std::string_view to_string(Family f) {
    switch (f) {
        case Family::poisson_fe: return "poisson_fe";
        case Family::poisson_gamma_re: return "poisson_gamma_re";
        case Family::linear_fe: return "linear_fe";
    }
    return "?";
}

Family family_from_string(std::string_view s) {
    if (s == "poisson_fe") return Family::poisson_fe;
    if (s == "poisson_gamma_re") return Family::poisson_gamma_re;
    if (s == "linear_fe") return Family::linear_fe;
    throw InvalidInput("unknown regression family '" + std::string(s) + "'");
}

namespace {

json spec_json(const RegressionSpec& s) {
    return {{"label", s.label},         {"family", std::string(to_string(s.family))},
            {"dependent", s.dependent}, {"regressors", s.regressors},
            {"group_key", s.group_key}, {"cluster_key", s.cluster_key},
            {"time_dummies", s.time_dummies}};
}

RegressionSpec spec_from(const json& j) {
    RegressionSpec s;
    s.label = j.value("label", "");
    s.family = family_from_string(j.value("family", "poisson_fe"));
    s.dependent = j.value("dependent", "sales");
    s.regressors = j.value("regressors", std::vector<std::string>{});
    s.group_key = j.value("group_key", "item_id");
    s.cluster_key = j.value("cluster_key", "item_id");
    s.time_dummies = j.value("time_dummies", false);
    return s;
}

}  // namespace

std::string RegressionSpec::to_json() const { return spec_json(*this).dump(); }

RegressionSpec RegressionSpec::from_json(std::string_view text) {
    try {
        return spec_from(json::parse(text));
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("regression spec: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// design

namespace {

std::vector<std::string> key_values(const PanelTable& panel, const std::string& name) {
    if (name == "item_id" || name == "vendor_id" || name == "week" || name == "snapshot_id") return panel.key(name);
    if (!panel.has_column(name)) throw InvalidInput("unknown key column '" + name + "'");
    std::vector<std::string> out;
    for (double v : panel.column(name)) out.push_back(format_double(v));
    return out;
}

bool is_count_family(Family f) { return f != Family::linear_fe; }

// Dense ids in sorted order of the distinct values.
std::pair<std::vector<int>, std::vector<std::string>> index_values(const std::vector<std::string>& values) {
    std::map<std::string, int> ids;
    for (const auto& v : values) ids.emplace(v, 0);
    std::vector<std::string> names;
    int next = 0;
    for (auto& [k, id] : ids) {
        id = next++;
        names.push_back(k);
    }
    std::vector<int> out;
    out.reserve(values.size());
    for (const auto& v : values) out.push_back(ids.at(v));
    return {out, names};
}

}  // namespace

Design build_design(const PanelTable& panel, const RegressionSpec& spec) {
    const auto n = panel.n_rows();
    Design d;
    d.n_input_rows = n;
    if (spec.regressors.empty() && !spec.time_dummies && spec.family != Family::poisson_gamma_re) {
        throw InvalidInput("regression '" + spec.label + "' has no regressors");
    }
    std::set<std::string> seen;
    for (const auto& r : spec.regressors) {
        if (!seen.insert(r).second) throw InvalidInput("regressor '" + r + "' listed twice");
        if (r == spec.dependent) throw InvalidInput("regressor '" + r + "' is the dependent variable");
    }

    const auto& y = panel.column(spec.dependent);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(y[i])) throw InvalidInput("non-finite value in '" + spec.dependent + "'");
        if (is_count_family(spec.family) && (y[i] < 0.0 || y[i] != std::floor(y[i]))) {
            throw InvalidInput("dependent '" + spec.dependent + "' must hold nonnegative integers for " +
                               std::string(to_string(spec.family)));
        }
    }
    std::vector<const std::vector<double>*> cols;
    for (const auto& r : spec.regressors) {
        cols.push_back(&panel.column(r));
        for (double v : *cols.back()) {
            if (!std::isfinite(v)) throw InvalidInput("non-finite value in '" + r + "'");
        }
    }

    const auto group_raw = key_values(panel, spec.group_key);
    const auto cluster_raw = key_values(panel, spec.cluster_key);

    // Poisson FE: groups with no positive outcome have an effect at -inf.
    std::vector<bool> keep(n, true);
    if (spec.family == Family::poisson_fe) {
        std::map<std::string, double> totals;
        for (std::size_t i = 0; i < n; ++i) totals[group_raw[i]] += y[i];
        for (std::size_t i = 0; i < n; ++i) keep[i] = totals[group_raw[i]] > 0.0;
        for (const auto& [g, t] : totals) d.n_dropped_groups += t > 0.0 ? 0 : 1;
    }
    std::vector<std::string> g_kept, c_kept;
    for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) {
            ++d.n_dropped;
            continue;
        }
        d.rows.push_back(i);
        g_kept.push_back(group_raw[i]);
        c_kept.push_back(cluster_raw[i]);
    }
    if (d.rows.empty()) throw InvalidInput("no rows left to fit (every group has zero outcome)");
    std::tie(d.group, d.group_ids) = index_values(g_kept);
    std::tie(d.cluster, d.cluster_ids) = index_values(c_kept);

    std::vector<int> week_levels;
    if (spec.time_dummies) {
        std::set<int> ws;
        for (auto r : d.rows) ws.insert(panel.weeks[r]);
        week_levels.assign(std::next(ws.begin()), ws.end());  // first week is the base
    }
    const bool cons = spec.family == Family::poisson_gamma_re;
    const auto m = d.rows.size();
    const auto p = spec.regressors.size() + week_levels.size() + (cons ? 1 : 0);
    d.y.resize(static_cast<Index>(m));
    d.x.setZero(static_cast<Index>(m), static_cast<Index>(p));
    d.names = spec.regressors;
    for (int w : week_levels) d.names.push_back("week_" + std::to_string(w));
    if (cons) d.names.push_back("_cons");
    for (std::size_t i = 0; i < m; ++i) {
        const auto r = d.rows[i];
        const auto ii = static_cast<Index>(i);
        d.y(ii) = y[r];
        for (std::size_t k = 0; k < cols.size(); ++k) d.x(ii, static_cast<Index>(k)) = (*cols[k])[r];
        if (spec.time_dummies) {
            auto it = std::lower_bound(week_levels.begin(), week_levels.end(), panel.weeks[r]);
            if (it != week_levels.end() && *it == panel.weeks[r]) {
                d.x(ii, static_cast<Index>(cols.size() + static_cast<std::size_t>(it - week_levels.begin()))) = 1.0;
            }
        }
        if (cons) d.x(ii, static_cast<Index>(p - 1)) = 1.0;
    }
    return d;
}

// ---------------------------------------------------------------------------
// likelihoods

namespace {

std::vector<std::vector<Index>> members(const Design& d) {
    std::vector<std::vector<Index>> out(d.group_ids.size());
    for (std::size_t i = 0; i < d.group.size(); ++i) out[static_cast<std::size_t>(d.group[i])].push_back(static_cast<Index>(i));
    return out;
}

double log_factorial_sum(const VectorXd& y) {
    double s = 0.0;
    for (Index i = 0; i < y.size(); ++i) s += std::lgamma(y(i) + 1.0);
    return s;
}

// Group means of the columns of x (or of y).
MatrixXd within(const Design& d, const MatrixXd& x) {
    const auto g = static_cast<Index>(d.group_ids.size());
    MatrixXd sums = MatrixXd::Zero(g, x.cols());
    VectorXd counts = VectorXd::Zero(g);
    for (Index i = 0; i < x.rows(); ++i) {
        sums.row(d.group[static_cast<std::size_t>(i)]) += x.row(i);
        counts(d.group[static_cast<std::size_t>(i)]) += 1.0;
    }
    MatrixXd out = x;
    for (Index i = 0; i < x.rows(); ++i) {
        const auto gi = d.group[static_cast<std::size_t>(i)];
        out.row(i) -= sums.row(gi) / counts(gi);
    }
    return out;
}

}  // namespace

Evaluation poisson_fe_eval(const Design& d, const VectorXd& beta) {
    const auto p = d.x.cols();
    const VectorXd eta = d.x * beta;
    Evaluation ev;
    ev.score = VectorXd::Zero(p);
    ev.hessian = MatrixXd::Zero(p, p);
    ev.unit_scores.resize(d.x.rows(), p);
    ev.unit_cluster = d.cluster;
    VectorXd lambda(d.x.rows());
    double ll = 0.0;
    for (const auto& rows : members(d)) {
        double ytot = 0.0, top = -std::numeric_limits<double>::infinity();
        for (auto i : rows) {
            ytot += d.y(i);
            top = std::max(top, eta(i));
        }
        double s = 0.0;
        for (auto i : rows) s += std::exp(eta(i) - top);
        const double mu = std::log(ytot) - top - std::log(s);
        VectorXd a = VectorXd::Zero(p);
        for (auto i : rows) {
            lambda(i) = ytot * std::exp(eta(i) - top) / s;
            ll += d.y(i) * (eta(i) + mu) - lambda(i);
            a += lambda(i) * d.x.row(i).transpose();
        }
        ev.hessian += a * a.transpose() / ytot;
    }
    ev.loglik = ll - log_factorial_sum(d.y);
    const VectorXd resid = d.y - lambda;
    ev.unit_scores = d.x.array().colwise() * resid.array();
    ev.score = ev.unit_scores.colwise().sum().transpose();
    ev.hessian -= d.x.transpose() * lambda.asDiagonal() * d.x;
    return ev;
}

Evaluation poisson_pooled_eval(const Design& d, const VectorXd& beta) {
    const VectorXd eta = d.x * beta;
    const VectorXd lambda = eta.array().exp();
    Evaluation ev;
    ev.loglik = (d.y.array() * eta.array() - lambda.array()).sum() - log_factorial_sum(d.y);
    ev.unit_scores = d.x.array().colwise() * (d.y - lambda).array();
    ev.score = ev.unit_scores.colwise().sum().transpose();
    ev.hessian = -(d.x.transpose() * lambda.asDiagonal() * d.x);
    ev.unit_cluster = d.cluster;
    return ev;
}

namespace {

// Sums over k < Y of 1/(theta+k), 1/(theta+k)^2 and log(theta+k) - log(theta+lam),
// i.e. the digamma, trigamma and log-gamma differences for integer Y.
struct GammaSums {
    double psi = 0.0;
    double tri = 0.0;
    double lg = 0.0;
};

GammaSums gamma_sums(double theta, double ytot, double lam) {
    GammaSums s;
    if (ytot <= 1e5) {
        const auto n = static_cast<long>(ytot);
        const double denom = theta + lam;
        for (long k = 0; k < n; ++k) {
            const double t = theta + static_cast<double>(k);
            s.psi += 1.0 / t;
            s.tri += 1.0 / (t * t);
            s.lg += std::log(t / denom);
        }
    } else {
        s.psi = boost::math::digamma(theta + ytot) - boost::math::digamma(theta);
        s.tri = boost::math::trigamma(theta) - boost::math::trigamma(theta + ytot);
        s.lg = std::lgamma(theta + ytot) - std::lgamma(theta) - ytot * std::log(theta + lam);
    }
    return s;
}

}  // namespace

Evaluation poisson_gamma_eval(const Design& d, const VectorXd& params) {
    const auto p = d.x.cols();
    if (params.size() != p + 1) throw InvalidInput("poisson_gamma_eval: expected beta and ln alpha");
    const VectorXd beta = params.head(p);
    const double u = params(p);
    const double theta = std::exp(-u);
    const VectorXd eta = d.x * beta;
    const VectorXd lambda = eta.array().exp();

    Evaluation ev;
    ev.score = VectorXd::Zero(p + 1);
    ev.hessian = MatrixXd::Zero(p + 1, p + 1);
    const auto groups = members(d);
    ev.unit_scores = MatrixXd::Zero(static_cast<Index>(groups.size()), p + 1);
    ev.unit_cluster.assign(groups.size(), 0);
    double ll = (d.y.array() * eta.array()).sum() - log_factorial_sum(d.y);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& rows = groups[g];
        ev.unit_cluster[g] = d.cluster[static_cast<std::size_t>(rows.front())];
        double ytot = 0.0, lam = 0.0;
        VectorXd sy = VectorXd::Zero(p), a = VectorXd::Zero(p);
        MatrixXd lxx = MatrixXd::Zero(p, p);
        for (auto i : rows) {
            if (d.cluster[static_cast<std::size_t>(i)] != ev.unit_cluster[g]) {
                throw InvalidInput("cluster key must be constant within each random-effect group");
            }
            ytot += d.y(i);
            lam += lambda(i);
            const auto xi = d.x.row(i).transpose();
            sy += d.y(i) * xi;
            a += lambda(i) * xi;
            lxx += lambda(i) * xi * xi.transpose();
        }
        const auto gs = gamma_sums(theta, ytot, lam);
        const double tl = theta + lam;
        const double ratio = (theta + ytot) / tl;
        ll += gs.lg - theta * std::log1p(lam / theta);

        const double d_theta = gs.psi - std::log1p(lam / theta) + (lam - ytot) / tl;
        const double d_theta2 = lam / (theta * tl) - gs.tri - (lam - ytot) / (tl * tl);

        VectorXd unit(p + 1);
        unit.head(p) = sy - ratio * a;
        unit(p) = -theta * d_theta;
        ev.unit_scores.row(static_cast<Index>(g)) = unit.transpose();
        ev.score += unit;

        ev.hessian.topLeftCorner(p, p) += -ratio * lxx + (theta + ytot) / (tl * tl) * a * a.transpose();
        const VectorXd cross = theta * (lam - ytot) / (tl * tl) * a;
        ev.hessian.topRightCorner(p, 1) += cross;
        ev.hessian.bottomLeftCorner(1, p) += cross.transpose();
        ev.hessian(p, p) += theta * theta * d_theta2 + theta * d_theta;
    }
    ev.loglik = ll;
    return ev;
}

Evaluation linear_fe_eval(const Design& d, const VectorXd& beta) {
    const MatrixXd xw = within(d, d.x);
    const VectorXd yw = within(d, d.y);
    const VectorXd e = yw - xw * beta;
    const double n = static_cast<double>(d.y.size());
    const double ssr = e.squaredNorm();
    if (!(ssr > 0.0)) throw InvalidInput("linear_fe_eval: zero residual sum of squares");
    const double s2 = ssr / n;
    Evaluation ev;
    ev.loglik = -0.5 * n * (std::log(2.0 * M_PI * s2) + 1.0);
    ev.unit_scores = xw.array().colwise() * (e / s2).array();
    ev.score = ev.unit_scores.colwise().sum().transpose();
    const VectorXd xe = xw.transpose() * e;
    ev.hessian = -(xw.transpose() * xw) / s2 + (2.0 * n / (ssr * ssr)) * xe * xe.transpose();
    ev.unit_cluster = d.cluster;
    return ev;
}

// ---------------------------------------------------------------------------
// fitting

namespace {

// Columns that are linear combinations of earlier ones (after unit scaling).
std::vector<std::string> dependent_columns(const MatrixXd& x, const std::vector<std::string>& names) {
    std::vector<std::string> bad;
    if (x.cols() == 0) return bad;
    MatrixXd z = x;
    for (Index c = 0; c < z.cols(); ++c) {
        const double nrm = z.col(c).norm();
        if (nrm <= 1e-12 * std::sqrt(static_cast<double>(z.rows()))) {
            bad.push_back(names[static_cast<std::size_t>(c)]);
            z.col(c).setZero();
        } else {
            z.col(c) /= nrm;
        }
    }
    if (!bad.empty()) return bad;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(z);
    qr.setThreshold(1e-9);
    const auto rank = qr.rank();
    for (Index k = rank; k < z.cols(); ++k) bad.push_back(names[static_cast<std::size_t>(qr.colsPermutation().indices()(k))]);
    std::sort(bad.begin(), bad.end());
    return bad;
}

void check_collinear(const MatrixXd& x, const std::vector<std::string>& names, const std::string& what) {
    const auto bad = dependent_columns(x, names);
    if (bad.empty()) return;
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : ", ") + b;
    throw CollinearityError("collinear regressors" + what + ": " + list + " (drop one or check for no variation)", bad);
}

struct Optimum {
    VectorXd x;
    Evaluation ev;
    int iterations = 0;
};

using EvalFn = std::function<Evaluation(const VectorXd&)>;

// Newton with step halving; gradient ascent when the Hessian is not negative definite.
Optimum maximize(const EvalFn& eval, VectorXd x, const OptimizerOptions& opt, bool& hit_cap) {
    hit_cap = false;
    Evaluation ev = eval(x);
    if (!std::isfinite(ev.loglik)) throw InvalidInput("log-likelihood is not finite at the starting values");
    double rel = std::numeric_limits<double>::infinity();
    int it = 0;
    for (;; ++it) {
        const double gmax = ev.score.cwiseAbs().maxCoeff();
        // Roundoff floor of the summed score on large panels.
        const double noise = 1e-13 * ev.unit_scores.cwiseAbs().colwise().sum().maxCoeff();
        if (gmax < std::max(opt.gradient_tol, noise) && rel < opt.relative_tol) break;
        if (it >= opt.max_iterations) {
            hit_cap = true;
            break;
        }
        Eigen::LDLT<MatrixXd> ldlt(-ev.hessian);
        VectorXd dir;
        bool newton = ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all();
        if (newton) {
            dir = ldlt.solve(ev.score);
            newton = dir.allFinite();
        }
        if (!newton) dir = ev.score / std::max(1.0, ev.score.norm());
        const double scale = std::max(1.0, std::abs(ev.loglik));

        // Near the optimum the predicted gain drops below the roundoff in the
        // log-likelihood; comparing values then rejects good Newton steps.
        const double gain = 0.5 * dir.dot(ev.score);
        if (newton && gain < 1e-11 * scale) {
            Evaluation ec = eval(x + dir);
            if (std::isfinite(ec.loglik) && ec.score.cwiseAbs().maxCoeff() <= gmax) {
                rel = gain / scale;
                x += dir;
                ev = std::move(ec);
                continue;
            }
        }
        double step = 1.0;
        bool moved = false;
        for (int h = 0; h < 60; ++h, step *= 0.5) {
            const VectorXd cand = x + step * dir;
            Evaluation ec;
            try {
                ec = eval(cand);
            } catch (const InvalidInput&) {
                continue;
            }
            if (std::isfinite(ec.loglik) && ec.loglik >= ev.loglik) {
                rel = std::abs(ec.loglik - ev.loglik) / scale;
                x = cand;
                ev = std::move(ec);
                moved = true;
                break;
            }
        }
        if (!moved) {
            if (gmax < 1e-6 * scale) break;
            std::vector<std::size_t> idx;
            std::vector<double> r;
            for (Index k = 0; k < ev.score.size(); ++k) {
                idx.push_back(static_cast<std::size_t>(k));
                r.push_back(ev.score(k));
            }
            throw ConvergenceError("line search failed to improve the log-likelihood", idx, r);
        }
    }
    return {x, ev, it};
}

// Largest |beta_j| * range(x_j) over the regressor columns.
std::pair<double, std::size_t> largest_effect(const MatrixXd& x, const VectorXd& beta, std::size_t n_cols) {
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
        const auto col = x.col(static_cast<Index>(c));
        const double range = col.maxCoeff() - col.minCoeff();
        const double eff = std::abs(beta(static_cast<Index>(c))) * range;
        if (eff > best) {
            best = eff;
            arg = c;
        }
    }
    return {best, arg};
}

// Fitted means: profiled group effects for FE, exp(eta) otherwise.
VectorXd fitted_means(const Design& d, const VectorXd& beta, bool profiled) {
    const VectorXd eta = d.x * beta;
    if (!profiled) return eta.array().exp();
    VectorXd out(eta.size());
    for (const auto& rows : members(d)) {
        double ytot = 0.0, top = -std::numeric_limits<double>::infinity(), s = 0.0;
        for (auto i : rows) {
            ytot += d.y(i);
            top = std::max(top, eta(i));
        }
        for (auto i : rows) s += std::exp(eta(i) - top);
        for (auto i : rows) out(i) = ytot * std::exp(eta(i) - top) / s;
    }
    return out;
}

// A coefficient running off to infinity shows up either as an absurd effect
// size or as zero-outcome rows fitted with a vanishing mean.
void check_separation(const Design& d, const VectorXd& beta, const VectorXd& lambda, bool hit_cap) {
    std::size_t n = d.names.size();
    if (!d.names.empty() && d.names.back() == "_cons") --n;
    const double floor = 1e-9 * std::max(d.y.mean(), 1e-300);
    std::vector<Index> vanishing;
    for (Index i = 0; i < lambda.size(); ++i) {
        if (d.y(i) == 0.0 && lambda(i) < floor) vanishing.push_back(i);
    }
    double best = 0.0;
    std::size_t col = 0;
    if (!vanishing.empty()) {
        // The culprit dominates the linear predictor on those rows.
        for (std::size_t c = 0; c < n; ++c) {
            double eff = 0.0;
            for (auto i : vanishing) eff = std::max(eff, -beta(static_cast<Index>(c)) * d.x(i, static_cast<Index>(c)));
            const auto column = d.x.col(static_cast<Index>(c));
            eff = std::max(eff, std::abs(beta(static_cast<Index>(c))) * (column.maxCoeff() - column.minCoeff()));
            if (eff > best) {
                best = eff;
                col = c;
            }
        }
    } else {
        std::tie(best, col) = largest_effect(d.x, beta, n);
    }
    if (!vanishing.empty() || best > 25.0 || (hit_cap && best > 10.0)) {
        throw SeparationError("coefficient on '" + d.names[col] +
                                  "' diverges (perfect separation: the regressor predicts zero outcomes)",
                              d.names[col]);
    }
    if (hit_cap) throw ConvergenceError("Newton iterations hit the cap", {}, {});
}

MatrixXd invert_negative(const MatrixXd& h, const std::vector<std::string>& names) {
    Eigen::LDLT<MatrixXd> ldlt(-h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any()) {
        throw CollinearityError("working Hessian is singular; regressors may be collinear", names);
    }
    MatrixXd inv = ldlt.solve(MatrixXd::Identity(h.rows(), h.cols()));
    return 0.5 * (inv + inv.transpose());
}

FitResult base_result(const Design& d, const RegressionSpec& spec) {
    FitResult f;
    f.spec = spec;
    f.names = d.names;
    f.n_obs = d.rows.size();
    f.n_dropped = d.n_dropped;
    f.n_groups = d.group_ids.size();
    f.n_clusters = d.cluster_ids.size();
    return f;
}

}  // namespace

Eigen::MatrixXd sandwich(const MatrixXd& bread_inv, const MatrixXd& unit_scores, const std::vector<int>& unit_cluster) {
    if (static_cast<Index>(unit_cluster.size()) != unit_scores.rows()) throw InvalidInput("sandwich: cluster map size");
    const int g = unit_cluster.empty() ? 0 : *std::max_element(unit_cluster.begin(), unit_cluster.end()) + 1;
    MatrixXd sums = MatrixXd::Zero(g, unit_scores.cols());
    std::vector<bool> used(static_cast<std::size_t>(g), false);
    for (std::size_t i = 0; i < unit_cluster.size(); ++i) {
        sums.row(unit_cluster[i]) += unit_scores.row(static_cast<Index>(i));
        used[static_cast<std::size_t>(unit_cluster[i])] = true;
    }
    const auto n_used = static_cast<double>(std::count(used.begin(), used.end(), true));
    if (n_used < 2) throw InvalidInput("cluster-robust covariance needs at least two clusters");
    const MatrixXd meat = sums.transpose() * sums;
    MatrixXd v = bread_inv * meat * bread_inv * (n_used / (n_used - 1.0));
    return 0.5 * (v + v.transpose());
}

FitResult fit_poisson_fe(const PanelTable& panel, const RegressionSpec& spec, const OptimizerOptions& opt) {
    if (spec.family != Family::poisson_fe) throw InvalidInput("fit_poisson_fe needs family poisson_fe");
    const auto d = build_design(panel, spec);
    check_collinear(within(d, d.x), d.names, " within fixed-effect groups");
    bool cap = false;
    auto o = maximize([&](const VectorXd& b) { return poisson_fe_eval(d, b); }, VectorXd::Zero(d.x.cols()), opt, cap);
    check_separation(d, o.x, fitted_means(d, o.x, true), cap);

    auto f = base_result(d, spec);
    f.beta = o.x;
    f.loglik = o.ev.loglik;
    f.iterations = o.iterations;
    f.gradient_norm = o.ev.score.cwiseAbs().maxCoeff();
    f.vcov_model = invert_negative(o.ev.hessian, d.names);
    f.vcov = sandwich(f.vcov_model, o.ev.unit_scores, o.ev.unit_cluster);

    const VectorXd eta = d.x * f.beta;
    f.group_ids = d.group_ids;
    f.group_effects.resize(static_cast<Index>(d.group_ids.size()));
    for (std::size_t g = 0; g < d.group_ids.size(); ++g) {
        double ytot = 0.0, s = 0.0;
        for (std::size_t i = 0; i < d.group.size(); ++i) {
            if (d.group[i] != static_cast<int>(g)) continue;
            ytot += d.y(static_cast<Index>(i));
            s += std::exp(eta(static_cast<Index>(i)));
        }
        f.group_effects(static_cast<Index>(g)) = std::log(ytot) - std::log(s);
    }
    return f;
}

FitResult fit_poisson_gamma_re(const PanelTable& panel, const RegressionSpec& spec, const OptimizerOptions& opt) {
    if (spec.family != Family::poisson_gamma_re) throw InvalidInput("fit_poisson_gamma_re needs family poisson_gamma_re");
    const auto d = build_design(panel, spec);
    check_collinear(d.x, d.names, "");
    const auto p = d.x.cols();

    VectorXd start = VectorXd::Zero(p);
    const double ybar = d.y.mean();
    if (ybar <= 0.0) throw InvalidInput("dependent '" + spec.dependent + "' is zero in every row");
    start(p - 1) = std::log(ybar);
    bool cap = false;
    auto pois = maximize([&](const VectorXd& b) { return poisson_pooled_eval(d, b); }, start, opt, cap);
    check_separation(d, pois.x, fitted_means(d, pois.x, false), cap);

    auto fallback = [&](std::optional<double> lr) {
        auto f = base_result(d, spec);
        f.beta = pois.x;
        f.loglik = pois.ev.loglik;
        f.loglik_poisson = pois.ev.loglik;
        f.iterations = pois.iterations;
        f.gradient_norm = pois.ev.score.cwiseAbs().maxCoeff();
        f.vcov_model = invert_negative(pois.ev.hessian, d.names);
        f.vcov = sandwich(f.vcov_model, pois.ev.unit_scores, pois.ev.unit_cluster);
        f.alpha = 0.0;
        f.boundary = true;
        f.lr_alpha = lr;
        return f;
    };

    // Moment start for alpha; a nonpositive value means the score at alpha = 0
    // points into the boundary.
    const VectorXd lambda = (d.x * pois.x).array().exp();
    std::vector<double> ysum(d.group_ids.size(), 0.0), lsum(d.group_ids.size(), 0.0);
    for (std::size_t i = 0; i < d.group.size(); ++i) {
        ysum[static_cast<std::size_t>(d.group[i])] += d.y(static_cast<Index>(i));
        lsum[static_cast<std::size_t>(d.group[i])] += lambda(static_cast<Index>(i));
    }
    double num = 0.0, den = 0.0;
    for (std::size_t g = 0; g < ysum.size(); ++g) {
        num += (ysum[g] - lsum[g]) * (ysum[g] - lsum[g]) - ysum[g];
        den += lsum[g] * lsum[g];
    }
    if (!(num > 0.0)) return fallback(0.0);

    VectorXd x0(p + 1);
    x0.head(p) = pois.x;
    x0(p) = std::log(std::clamp(num / den, 1e-3, 10.0));
    Optimum nb;
    try {
        nb = maximize([&](const VectorXd& th) { return poisson_gamma_eval(d, th); }, x0, opt, cap);
    } catch (const ConvergenceError&) {
        return fallback(std::nullopt);
    }
    if (cap || nb.x(p) < -15.0) return fallback(std::nullopt);
    check_separation(d, nb.x.head(p), VectorXd::Ones(d.y.size()), false);
    const double lr = 2.0 * (nb.ev.loglik - pois.ev.loglik);
    if (lr < 2.705543454095404) return fallback(std::max(lr, 0.0));

    auto f = base_result(d, spec);
    f.names.push_back("lnalpha");
    f.beta = nb.x;
    f.loglik = nb.ev.loglik;
    f.loglik_poisson = pois.ev.loglik;
    f.lr_alpha = lr;
    f.iterations = nb.iterations;
    f.gradient_norm = nb.ev.score.cwiseAbs().maxCoeff();
    f.vcov_model = invert_negative(nb.ev.hessian, f.names);
    f.vcov = sandwich(f.vcov_model, nb.ev.unit_scores, nb.ev.unit_cluster);
    f.alpha = std::exp(nb.x(p));
    f.alpha_se = *f.alpha * std::sqrt(f.vcov(p, p));
    return f;
}

FitResult fit_linear_fe(const PanelTable& panel, const RegressionSpec& spec) {
    if (spec.family != Family::linear_fe) throw InvalidInput("fit_linear_fe needs family linear_fe");
    const auto d = build_design(panel, spec);
    const MatrixXd xw = within(d, d.x);
    const VectorXd yw = within(d, d.y);
    check_collinear(xw, d.names, " within fixed-effect groups");
    Eigen::ColPivHouseholderQR<MatrixXd> qr(xw);
    const VectorXd beta = qr.solve(yw);
    const VectorXd e = yw - xw * beta;
    const double n = static_cast<double>(d.y.size());
    const double ssr = e.squaredNorm();

    auto f = base_result(d, spec);
    f.beta = beta;
    f.loglik = ssr > 0.0 ? -0.5 * n * (std::log(2.0 * M_PI * ssr / n) + 1.0) : std::numeric_limits<double>::infinity();
    const MatrixXd xtx_inv = invert_negative(-(xw.transpose() * xw), d.names);
    f.vcov_model = xtx_inv * (ssr / n);
    const MatrixXd units = xw.array().colwise() * e.array();
    f.vcov = sandwich(xtx_inv, units, d.cluster);
    f.gradient_norm = (xw.transpose() * e).cwiseAbs().maxCoeff();

    f.group_ids = d.group_ids;
    const VectorXd resid_level = d.y - d.x * beta;
    VectorXd sums = VectorXd::Zero(static_cast<Index>(d.group_ids.size()));
    VectorXd counts = VectorXd::Zero(sums.size());
    for (std::size_t i = 0; i < d.group.size(); ++i) {
        sums(d.group[i]) += resid_level(static_cast<Index>(i));
        counts(d.group[i]) += 1.0;
    }
    f.group_effects = sums.cwiseQuotient(counts);
    return f;
}

FitResult fit(const PanelTable& panel, const RegressionSpec& spec) {
    switch (spec.family) {
        case Family::poisson_fe: return fit_poisson_fe(panel, spec);
        case Family::poisson_gamma_re: return fit_poisson_gamma_re(panel, spec);
        case Family::linear_fe: return fit_linear_fe(panel, spec);
    }
    throw InvalidInput("unknown family");
}

Eigen::MatrixXd cluster_robust_vcov(const FitResult& fit, const PanelTable& panel, const std::string& cluster_key) {
    auto spec = fit.spec;
    spec.cluster_key = cluster_key;
    const auto d = build_design(panel, spec);
    if (fit.spec.family == Family::linear_fe) {
        const MatrixXd xw = within(d, d.x);
        const VectorXd e = within(d, d.y) - xw * fit.beta;
        const MatrixXd xtx_inv = invert_negative(-(xw.transpose() * xw), d.names);
        return sandwich(xtx_inv, xw.array().colwise() * e.array(), d.cluster);
    }
    Evaluation ev;
    if (fit.spec.family == Family::poisson_fe) {
        ev = poisson_fe_eval(d, fit.beta);
    } else if (fit.boundary) {
        ev = poisson_pooled_eval(d, fit.beta);
    } else {
        ev = poisson_gamma_eval(d, fit.beta);
    }
    return sandwich(invert_negative(ev.hessian, fit.names), ev.unit_scores, ev.unit_cluster);
}

// ---------------------------------------------------------------------------
// inference helpers

std::size_t FitResult::index(std::string_view name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw InvalidInput("no coefficient named '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names.begin());
}

double FitResult::se(std::string_view name) const {
    const auto i = static_cast<Index>(index(name));
    return std::sqrt(std::max(vcov(i, i), 0.0));
}

double two_sided_p(double z) {
    if (!std::isfinite(z)) return std::isnan(z) ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

std::string stars(double p) {
    if (!(p < 0.10)) return "";
    if (p < 0.01) return "***";
    if (p < 0.05) return "**";
    return "*";
}

std::pair<double, double> exp_delta(double beta, double se) {
    const double e = std::exp(beta);
    return {e, e * se};
}

std::vector<ExpCoef> exponentiate(const FitResult& fit) {
    std::vector<ExpCoef> out;
    for (std::size_t k = 0; k < fit.names.size(); ++k) {
        if (fit.names[k] == "lnalpha") continue;
        ExpCoef c;
        c.name = fit.names[k];
        const double b = fit.beta(static_cast<Index>(k));
        const double s = fit.se(c.name);
        std::tie(c.estimate, c.se) = exp_delta(b, s);
        c.z = s > 0.0 ? b / s : std::numeric_limits<double>::quiet_NaN();
        c.p = two_sided_p(c.z);
        out.push_back(c);
    }
    return out;
}

WaldResult wald_equality_test(double bi, double bj, double vii, double vjj, double vij) {
    const double var = vii + vjj - 2.0 * vij;
    if (!(var > 0.0)) throw InvalidInput("variance of the coefficient difference is not positive");
    WaldResult w;
    w.chi2 = (bi - bj) * (bi - bj) / var;
    w.p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), w.chi2));
    return w;
}

WaldResult wald_equality_test(const FitResult& fit, std::string_view coef_i, std::string_view coef_j) {
    const auto i = static_cast<Index>(fit.index(coef_i));
    const auto j = static_cast<Index>(fit.index(coef_j));
    return wald_equality_test(fit.beta(i), fit.beta(j), fit.vcov(i, i), fit.vcov(j, j), fit.vcov(i, j));
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json matrix_json(const MatrixXd& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(number(m(r, c)));
        rows.push_back(row);
    }
    return rows;
}

MatrixXd matrix_from(const json& j, Index n) {
    MatrixXd m(n, n);
    if (static_cast<Index>(j.size()) != n) throw InvalidInput("fit result: matrix has wrong size");
    for (Index r = 0; r < n; ++r) {
        if (static_cast<Index>(j[static_cast<std::size_t>(r)].size()) != n) throw InvalidInput("fit result: ragged matrix");
        for (Index c = 0; c < n; ++c) m(r, c) = number_from(j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
    return m;
}

template <class T>
json optional_json(const std::optional<T>& v) {
    if (!v) return nullptr;
    return number(*v);
}

std::optional<double> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace

std::string FitResult::to_json() const {
    json j;
    j["format"] = "textdemand.fit";
    j["version"] = 1;
    j["spec"] = spec_json(spec);
    j["names"] = names;
    json b = json::array();
    for (Index i = 0; i < beta.size(); ++i) b.push_back(number(beta(i)));
    j["beta"] = b;
    j["vcov"] = matrix_json(vcov);
    j["vcov_model"] = matrix_json(vcov_model);
    j["loglik"] = number(loglik);
    j["n_obs"] = n_obs;
    j["n_dropped"] = n_dropped;
    j["n_groups"] = n_groups;
    j["n_clusters"] = n_clusters;
    j["alpha"] = optional_json(alpha);
    j["alpha_se"] = optional_json(alpha_se);
    j["boundary"] = boundary;
    j["loglik_poisson"] = optional_json(loglik_poisson);
    j["lr_alpha"] = optional_json(lr_alpha);
    j["iterations"] = iterations;
    j["gradient_norm"] = number(gradient_norm);
    j["group_ids"] = group_ids;
    json ge = json::array();
    for (Index i = 0; i < group_effects.size(); ++i) ge.push_back(number(group_effects(i)));
    j["group_effects"] = ge;
    return j.dump();
}

FitResult FitResult::from_json(std::string_view text) {
    try {
        const auto j = json::parse(text);
        if (j.value("format", "") != "textdemand.fit") throw InvalidInput("not a fit result artifact");
        FitResult f;
        f.spec = spec_from(j.at("spec"));
        f.names = j.at("names").get<std::vector<std::string>>();
        const auto n = static_cast<Index>(f.names.size());
        f.beta.resize(n);
        for (Index i = 0; i < n; ++i) f.beta(i) = number_from(j.at("beta").at(static_cast<std::size_t>(i)));
        f.vcov = matrix_from(j.at("vcov"), n);
        f.vcov_model = matrix_from(j.at("vcov_model"), n);
        f.loglik = number_from(j.at("loglik"));
        f.n_obs = j.at("n_obs").get<std::size_t>();
        f.n_dropped = j.at("n_dropped").get<std::size_t>();
        f.n_groups = j.at("n_groups").get<std::size_t>();
        f.n_clusters = j.at("n_clusters").get<std::size_t>();
        f.alpha = optional_from(j, "alpha");
        f.alpha_se = optional_from(j, "alpha_se");
        f.boundary = j.at("boundary").get<bool>();
        f.loglik_poisson = optional_from(j, "loglik_poisson");
        f.lr_alpha = optional_from(j, "lr_alpha");
        f.iterations = j.at("iterations").get<int>();
        f.gradient_norm = number_from(j.at("gradient_norm"));
        f.group_ids = j.at("group_ids").get<std::vector<std::string>>();
        const auto& ge = j.at("group_effects");
        f.group_effects.resize(static_cast<Index>(ge.size()));
        for (std::size_t i = 0; i < ge.size(); ++i) f.group_effects(static_cast<Index>(i)) = number_from(ge[i]);
        return f;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("fit result: ") + e.what());
    }
}

}  // namespace textdemand
