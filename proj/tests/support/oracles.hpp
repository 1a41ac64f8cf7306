#pragma once
// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <Eigen/LU>
#include <Eigen/QR>

#include "textdemand/countreg.hpp"
#include "textdemand/decomp.hpp"
#include "textdemand/panel.hpp"

namespace textdemand::testing {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Explicit-dummy design [X | D] over the groups of a design.
inline MatrixXd dummy_design(const Design& d) {
    MatrixXd z = MatrixXd::Zero(d.x.rows(), d.x.cols() + static_cast<Index>(d.group_ids.size()));
    z.leftCols(d.x.cols()) = d.x;
    for (Index i = 0; i < d.x.rows(); ++i) z(i, d.x.cols() + d.group[static_cast<std::size_t>(i)]) = 1.0;
    return z;
}

struct DummyFit {
    VectorXd theta;
    double loglik;
};

// Full Poisson MLE with one dummy per group, plain Newton from log group means.
inline DummyFit dummy_poisson(const Design& d) {
    const MatrixXd z = dummy_design(d);
    VectorXd th = VectorXd::Zero(z.cols());
    for (std::size_t g = 0; g < d.group_ids.size(); ++g) {
        double s = 0, n = 0;
        for (std::size_t i = 0; i < d.group.size(); ++i)
            if (d.group[i] == static_cast<int>(g)) {
                s += d.y(static_cast<Index>(i));
                ++n;
            }
        th(d.x.cols() + static_cast<Index>(g)) = std::log(s / n);
    }
    auto ll = [&](const VectorXd& t) {
        const VectorXd eta = z * t;
        double v = 0;
        for (Index i = 0; i < eta.size(); ++i) v += d.y(i) * eta(i) - std::exp(eta(i)) - std::lgamma(d.y(i) + 1);
        return v;
    };
    for (int it = 0; it < 100; ++it) {
        const VectorXd mu = (z * th).array().exp();
        const VectorXd g = z.transpose() * (d.y - mu);
        const MatrixXd h = z.transpose() * mu.asDiagonal() * z;
        VectorXd step = h.fullPivLu().solve(g);
        double t = 1;
        while (ll(th + t * step) < ll(th) - 1e-12 && t > 1e-8) t /= 2;
        th += t * step;
        if (step.cwiseAbs().maxCoeff() < 1e-13) break;
    }
    return {th, ll(th)};
}

inline DummyFit dummy_ols(const Design& d) {
    const MatrixXd z = dummy_design(d);
    const VectorXd th = z.colPivHouseholderQr().solve(d.y);
    const double n = static_cast<double>(d.y.size());
    const double ssr = (d.y - z * th).squaredNorm();
    return {th, -0.5 * n * (std::log(2 * M_PI * ssr / n) + 1)};
}

// Marginal log-likelihood of the Poisson-gamma model by trapezoid quadrature
// over u = log(nu). params = (beta, log alpha).
inline double quadrature_loglik(const Design& d, const VectorXd& params) {
    const auto p = d.x.cols();
    const double theta = std::exp(-params(p));
    const VectorXd eta = d.x * params.head(p);
    double total = 0;
    for (std::size_t g = 0; g < d.group_ids.size(); ++g) {
        std::vector<Index> rows;
        for (std::size_t i = 0; i < d.group.size(); ++i)
            if (d.group[i] == static_cast<int>(g)) rows.push_back(static_cast<Index>(i));
        const double lo = -30, hi = 8, h = 0.01;
        std::vector<double> logs;
        for (double u = lo; u <= hi; u += h) {
            const double nu = std::exp(u);
            double v = theta * std::log(theta) - std::lgamma(theta) + theta * u - theta * nu;
            for (auto i : rows) {
                const double lam = nu * std::exp(eta(i));
                v += d.y(i) * std::log(lam) - lam - std::lgamma(d.y(i) + 1);
            }
            logs.push_back(v);
        }
        const double top = *std::max_element(logs.begin(), logs.end());
        double s = 0;
        for (std::size_t k = 0; k < logs.size(); ++k) {
            const double w = (k == 0 || k + 1 == logs.size()) ? 0.5 : 1.0;
            s += w * std::exp(logs[k] - top);
        }
        total += top + std::log(s * h);
    }
    return total;
}

inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
    VectorXd g(x.size());
    for (Index k = 0; k < x.size(); ++k) {
        VectorXd a = x, b = x;
        const double step = h * std::max(1.0, std::abs(x(k)));
        a(k) += step;
        b(k) -= step;
        g(k) = (f(a) - f(b)) / (2 * step);
    }
    return g;
}

// Newton on finite-difference derivatives of the quadrature likelihood.
inline VectorXd quadrature_mle(const Design& d, VectorXd th) {
    const auto n = th.size();
    auto ll = [&](const VectorXd& t) { return quadrature_loglik(d, t); };
    for (int it = 0; it < 40; ++it) {
        const VectorXd g = fd_gradient(ll, th, 1e-4);
        MatrixXd h(n, n);
        for (Index k = 0; k < n; ++k) {
            VectorXd a = th, b = th;
            a(k) += 1e-3;
            b(k) -= 1e-3;
            h.col(k) = (fd_gradient(ll, a, 1e-4) - fd_gradient(ll, b, 1e-4)) / 2e-3;
        }
        h = 0.5 * (h + h.transpose());
        const VectorXd step = -h.fullPivLu().solve(g);
        th += step;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return th;
}

// Dense cluster-robust sandwich for Poisson FE built from explicit
// per-row fitted means: bread = profiled information, meat from row scores
// (y - lambda) x summed within clusters, times G/(G-1).
inline MatrixXd dense_fe_sandwich(const Design& d, const FitResult& f) {
    const Index p = d.x.cols();
    MatrixXd a = MatrixXd::Zero(p, p);
    const int n_clusters = static_cast<int>(d.cluster_ids.size());
    std::vector<VectorXd> csum(static_cast<std::size_t>(n_clusters), VectorXd::Zero(p));
    for (std::size_t g = 0; g < f.group_ids.size(); ++g) {
        VectorXd lx = VectorXd::Zero(p);
        double ytot = 0;
        for (Index i = 0; i < d.x.rows(); ++i) {
            if (d.group[static_cast<std::size_t>(i)] != static_cast<int>(g)) continue;
            const double lam = std::exp(d.x.row(i).dot(f.beta) + f.group_effects(static_cast<Index>(g)));
            a += lam * d.x.row(i).transpose() * d.x.row(i);
            lx += lam * d.x.row(i).transpose();
            ytot += d.y(i);
            csum[static_cast<std::size_t>(d.cluster[static_cast<std::size_t>(i)])] +=
                (d.y(i) - lam) * d.x.row(i).transpose();
        }
        a -= lx * lx.transpose() / ytot;
    }
    MatrixXd b = MatrixXd::Zero(p, p);
    for (auto& s : csum) b += s * s.transpose();
    const MatrixXd ai = a.fullPivLu().inverse();
    const double g = n_clusters;
    return ai * b * ai * (g / (g - 1.0));
}

inline JointTextMatrix from_dense(const Eigen::MatrixXd& d, std::string hash = "h") {
    JointTextMatrix j;
    j.matrix = d.sparseView();
    j.title_cols = static_cast<std::size_t>(d.cols());
    j.column_hash = std::move(hash);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        j.row_ids.push_back("r" + std::to_string(i));
        j.missing_block.push_back(false);
    }
    return j;
}

inline Eigen::MatrixXd random_sparse_dense(int rows, int cols, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            if (u(rng) < density) d(i, j) = u(rng);
    return d;
}

// ---- panel fixtures ----

inline const Date kPanelStart = parse_date("2014-01-01");

inline Date day(int d) { return kPanelStart + std::chrono::days(d); }

inline ReviewEvent review(std::string item, std::string vendor, int d, double score, std::optional<int> deals = {}) {
    static int counter = 0;
    return {"r" + std::to_string(counter++), std::move(item), std::move(vendor), day(d), score, deals};
}

inline MentionEvent mention(std::string vendor, int d, double score, std::optional<int> posts = {}) {
    static std::int64_t counter = 0;
    return {counter++, std::move(vendor), day(d), score, posts};
}

inline ListingSnapshot snap(std::string id, std::string item, std::string vendor, int d, double price, bool nfe = false,
                            std::optional<double> item_rating = {}, std::optional<double> vendor_rating = 4.5,
                            std::string cat = "0") {
    ListingSnapshot s;
    s.snapshot_id = std::move(id);
    s.item_id = std::move(item);
    s.vendor_id = std::move(vendor);
    s.timestamp = day(d);
    s.price_btc = price;
    s.nfe = nfe;
    s.item_rating = item_rating;
    s.vendor_rating = vendor_rating;
    s.volume_category = std::move(cat);
    return s;
}

// Random market: items, vendors, reviews, mentions, snapshots over 10 weeks.
inline PanelInputs random_inputs(std::mt19937_64& rng, int n_items = 8, int n_vendors = 3) {
    PanelInputs in;
    std::uniform_int_distribution<int> d(-5, 74);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < n_items; ++i) {
        const auto item = "i" + std::to_string(i);
        const auto vendor = "v" + std::to_string(i % n_vendors);
        const int n_snaps = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < n_snaps; ++k) {
            in.listings.push_back(snap(item + "s" + std::to_string(k), item, vendor, static_cast<int>(rng() % 60),
                                       0.01 + 0.1 * static_cast<double>(rng() % 10), rng() % 2 == 0,
                                       rng() % 3 ? std::optional<double>(4.0) : std::nullopt, 4.8,
                                       std::to_string(rng() % 3)));
        }
        const int n_rev = static_cast<int>(rng() % 15);
        for (int k = 0; k < n_rev; ++k)
            in.reviews.push_back(review(item, vendor, d(rng), rng() % 5 ? z(rng) : 0.0, static_cast<int>(rng() % 20)));
    }
    in.reviews.push_back(review("orphan", "v0", 3, 1.0));  // item never listed
    for (int k = 0; k < 25; ++k) {
        in.mentions.push_back(mention("v" + std::to_string(rng() % n_vendors), d(rng), z(rng),
                                      rng() % 4 ? std::optional<int>(static_cast<int>(rng() % 400)) : std::nullopt));
    }
    return in;
}

struct LookAheadResult {
    std::size_t rows_compared = 0;
    std::size_t mismatches = 0;
    std::string first_mismatch;
};

// One metamorphic trial: perturb every review and mention at week >= t (and
// add new ones), then compare the covariates of week-t rows present in both
// panels. Outcomes are excluded.
inline LookAheadResult look_ahead_trial(std::mt19937_64& rng) {
    LookAheadResult out;
    auto in = random_inputs(rng);
    PanelConfig cfg;
    cfg.window = {kPanelStart, day(69)};
    const int t = static_cast<int>(rng() % 10);
    auto before = assemble_panel(in, cfg).table;

    auto mutated = in;
    std::normal_distribution<double> z(0.0, 3.0);
    for (auto& r : mutated.reviews) {
        if (week_index(r.timestamp, kPanelStart) >= t) {
            r.score = z(rng);
            r.buyer_deals = static_cast<int>(rng() % 30);
            if (rng() % 3 == 0 && r.timestamp + std::chrono::days(6) <= cfg.window.end)
                r.timestamp += std::chrono::days(rng() % 7);
        }
    }
    for (auto& m : mutated.mentions)
        if (week_index(m.timestamp, kPanelStart) >= t) m.score = z(rng);
    mutated.reviews.push_back(review("i0", "v0", 7 * t + 1, 5.0));
    mutated.mentions.push_back(mention("v1", 7 * t, -5.0));
    auto after = assemble_panel(mutated, cfg).table;

    InteractionSpec spec;
    spec.experience_split = spec.own_other = spec.finalize_split = true;
    attach_interactions(before, spec, in, cfg);
    attach_interactions(after, spec, mutated, cfg);

    for (std::size_t r = 0; r < before.n_rows(); ++r) {
        if (before.weeks[r] != t) continue;
        std::size_t ra = after.n_rows();
        for (std::size_t k = 0; k < after.n_rows(); ++k)
            if (after.item_ids[k] == before.item_ids[r] && after.weeks[k] == t) ra = k;
        if (ra == after.n_rows()) continue;
        ++out.rows_compared;
        for (const auto& info : before.columns()) {
            if (info.role == ColumnRole::outcome) continue;
            if (after.column(info.name)[ra] != before.column(info.name)[r]) {
                if (out.mismatches++ == 0) out.first_mismatch = info.name + " at " + before.item_ids[r];
            }
        }
    }
    return out;
}

}  // namespace textdemand::testing
