#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include <Eigen/LU>
#include <Eigen/QR>

#include "textdemand/countreg.hpp"
#include "textdemand/errors.hpp"
#include "textdemand/synth.hpp"
#include "support/oracles.hpp"

using namespace textdemand;
using namespace textdemand::testing;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PanelTable make_panel(const std::vector<int>& items, const std::vector<int>& weeks, const std::vector<double>& y,
                      const std::vector<std::vector<double>>& xs) {
    PanelTable t;
    for (std::size_t i = 0; i < items.size(); ++i) {
        t.item_ids.push_back("i" + std::to_string(items[i]));
        t.vendor_ids.push_back("v" + std::to_string(items[i] % 3));
        t.weeks.push_back(weeks[i]);
        t.snapshot_ids.emplace_back();
    }
    t.set_column({"sales", ColumnRole::outcome, ""}, y);
    for (std::size_t k = 0; k < xs.size(); ++k) t.set_column({"x" + std::to_string(k + 1), ColumnRole::covariate, ""}, xs[k]);
    return t;
}

RegressionSpec spec_for(Family f, std::size_t p, bool time = false) {
    RegressionSpec s;
    s.family = f;
    for (std::size_t k = 0; k < p; ++k) s.regressors.push_back("x" + std::to_string(k + 1));
    s.time_dummies = time;
    return s;
}

PanelTable small_panel(std::uint64_t seed, int items, int weeks, std::vector<double> beta, double fe = 0.5,
                       std::optional<double> gamma = {}, double intercept = 0.5) {
    PoissonPanelConfig c;
    c.n_items = items;
    c.n_weeks = weeks;
    c.beta = std::move(beta);
    c.fe_spread = fe;
    c.gamma_var = gamma;
    c.intercept = intercept;
    c.seed = seed;
    return gen_poisson_panel(c).first;
}

void check_gradient(const std::function<Evaluation(const VectorXd&)>& eval, const VectorXd& at) {
    const auto ev = eval(at);
    const VectorXd fd = fd_gradient([&](const VectorXd& v) { return eval(v).loglik; }, at, 1e-5);
    for (Index k = 0; k < at.size(); ++k) {
        CHECK(std::abs(ev.score(k) - fd(k)) <= 1e-6 * std::max(1.0, std::abs(fd(k))));
    }
    // Hessian against differences of the analytic score.
    for (Index k = 0; k < at.size(); ++k) {
        VectorXd a = at, b = at;
        const double step = 1e-6 * std::max(1.0, std::abs(at(k)));
        a(k) += step;
        b(k) -= step;
        const VectorXd col = (eval(a).score - eval(b).score) / (2 * step);
        for (Index r = 0; r < at.size(); ++r) {
            CHECK(std::abs(ev.hessian(r, k) - col(r)) <= 1e-5 * std::max(1.0, std::abs(col(r))));
        }
    }
}

}  // namespace

TEST_CASE("profiled Poisson FE equals explicit-dummy MLE") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto panel = seed % 2 ? small_panel(seed, 5, 8, {0.4, -0.3}) : small_panel(seed, 40, 6, {0.2, 0.1, -0.5});
        auto spec = spec_for(Family::poisson_fe, seed % 2 ? 2 : 3, seed == 3);
        const auto f = fit_poisson_fe(panel, spec);
        const auto d = build_design(panel, spec);
        const auto o = dummy_poisson(d);
        for (Index k = 0; k < f.beta.size(); ++k) CHECK(std::abs(f.beta(k) - o.theta(k)) <= 1e-6);
        CHECK(std::abs(f.loglik - o.loglik) <= 1e-6 * std::abs(o.loglik));
        for (Index g = 0; g < f.group_effects.size(); ++g) {
            CHECK(std::abs(f.group_effects(g) - o.theta(f.beta.size() + g)) <= 1e-6);
        }
        CHECK(f.n_obs + f.n_dropped == panel.n_rows());
        CHECK(f.gradient_norm < 1e-6);
    }
}

TEST_CASE("Poisson FE drops all-zero items") {
    auto panel = small_panel(4, 10, 5, {0.3}, 0.5, {}, -1.0);
    auto& y = panel.column("sales");
    for (std::size_t i = 0; i < 5; ++i) y[i] = 0;  // item 0
    const auto f = fit_poisson_fe(panel, spec_for(Family::poisson_fe, 1));
    CHECK(f.n_dropped >= 5);
    CHECK(f.n_obs + f.n_dropped == 50);
    CHECK(std::find(f.group_ids.begin(), f.group_ids.end(), panel.item_ids[0]) == f.group_ids.end());
}

TEST_CASE("Poisson FE recovers beta") {
    const auto panel = small_panel(11, 200, 30, {0.5});
    const auto f = fit_poisson_fe(panel, spec_for(Family::poisson_fe, 1));
    CHECK(std::abs(f.coef("x1") - 0.5) <= 3 * f.se("x1"));
}

TEST_CASE("Poisson FE invariances") {
    const auto panel = small_panel(21, 12, 10, {0.3, -0.2}, 0.5, {}, 0.3);
    const auto spec = spec_for(Family::poisson_fe, 2);
    const auto base = fit_poisson_fe(panel, spec);

    SUBCASE("scaling one item's outcome shifts only its effect") {
        // Counts exactly proportional to exp(x'beta) within every item, so each
        // item's score contribution vanishes at the estimate.
        std::vector<int> items, weeks;
        std::vector<double> y, x1, x2;
        for (int i = 0; i < 8; ++i)
            for (int t = 0; t < 6; ++t) {
                items.push_back(i);
                weeks.push_back(t);
                x1.push_back((t + i) % 3);
                x2.push_back((t / 2 + i) % 2);
                y.push_back((1 + i % 4) * std::pow(2.0, x1.back()) * std::pow(3.0, x2.back()));
            }
        const auto exact = make_panel(items, weeks, y, {x1, x2});
        const auto b0 = fit_poisson_fe(exact, spec);
        CHECK(std::abs(b0.coef("x1") - std::log(2.0)) <= 1e-8);
        CHECK(std::abs(b0.coef("x2") - std::log(3.0)) <= 1e-8);
        auto scaled = exact;
        for (std::size_t i = 0; i < scaled.n_rows(); ++i)
            if (scaled.item_ids[i] == b0.group_ids[2]) scaled.column("sales")[i] *= 5;
        const auto f = fit_poisson_fe(scaled, spec);
        CHECK((f.beta - b0.beta).cwiseAbs().maxCoeff() <= 1e-8);
        for (Index g = 0; g < f.group_effects.size(); ++g) {
            const double shift = g == 2 ? std::log(5.0) : 0.0;
            CHECK(std::abs(f.group_effects(g) - b0.group_effects(g) - shift) <= 1e-8);
        }
    }
    SUBCASE("row order does not matter") {
        std::vector<std::size_t> order(panel.n_rows());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(3);
        std::shuffle(order.begin(), order.end(), rng);
        const auto f = fit_poisson_fe(panel.select_rows(order), spec);
        CHECK((f.beta - base.beta).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((f.vcov - base.vcov).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("collinearity and separation errors") {
    SUBCASE("no within variation") {
        std::vector<int> items, weeks;
        std::vector<double> y, x;
        for (int i = 0; i < 4; ++i)
            for (int t = 0; t < 5; ++t) {
                items.push_back(i);
                weeks.push_back(t);
                y.push_back(i + 1);
                x.push_back(0.5 * i);
            }
        const auto panel = make_panel(items, weeks, y, {x});
        try {
            fit_poisson_fe(panel, spec_for(Family::poisson_fe, 1));
            FAIL("expected CollinearityError");
        } catch (const CollinearityError& e) {
            CHECK(e.columns == std::vector<std::string>{"x1"});
        }
        CHECK_THROWS_AS(fit_linear_fe(panel, spec_for(Family::linear_fe, 1)), CollinearityError);
    }
    SUBCASE("duplicate column") {
        auto panel = small_panel(2, 10, 6, {0.2, 0.1});
        auto x1 = panel.column("x1");
        for (auto& v : x1) v *= 2;
        panel.set_column({"x3", ColumnRole::covariate, ""}, x1);
        try {
            fit_poisson_fe(panel, spec_for(Family::poisson_fe, 3));
            FAIL("expected CollinearityError");
        } catch (const CollinearityError& e) {
            REQUIRE(e.columns.size() == 1);
            CHECK((e.columns[0] == "x1" || e.columns[0] == "x3"));
        }
    }
    SUBCASE("separation") {
        auto panel = small_panel(5, 20, 8, {0.3});
        std::vector<double> flag(panel.n_rows(), 0.0);
        auto& y = panel.column("sales");
        std::mt19937_64 rng(1);
        for (std::size_t i = 0; i < flag.size(); ++i) {
            if (rng() % 4 == 0) {
                flag[i] = 1.0;
                y[i] = 0.0;
            }
        }
        panel.set_column({"x2", ColumnRole::covariate, ""}, flag);
        try {
            fit_poisson_fe(panel, spec_for(Family::poisson_fe, 2));
            FAIL("expected SeparationError");
        } catch (const SeparationError& e) {
            CHECK(e.column == "x2");
        }
    }
    SUBCASE("bad dependent") {
        auto panel = small_panel(5, 4, 4, {0.3});
        panel.column("sales")[0] = 1.5;
        CHECK_THROWS_AS(fit_poisson_fe(panel, spec_for(Family::poisson_fe, 1)), InvalidInput);
        auto spec = spec_for(Family::poisson_fe, 1);
        spec.regressors.push_back("nope");
        CHECK_THROWS_AS(fit_poisson_fe(small_panel(5, 4, 4, {0.3}), spec), InvalidInput);
    }
}

TEST_CASE("linear FE") {
    SUBCASE("noiseless") {
        std::vector<int> items, weeks;
        std::vector<double> y, x;
        std::mt19937_64 rng(9);
        std::normal_distribution<double> n(0, 1);
        for (int i = 0; i < 6; ++i)
            for (int t = 0; t < 7; ++t) {
                items.push_back(i);
                weeks.push_back(t);
                x.push_back(n(rng));
                y.push_back(2.0 * x.back() + 10.0 * i);
            }
        const auto f = fit_linear_fe(make_panel(items, weeks, y, {x}), spec_for(Family::linear_fe, 1));
        CHECK(std::abs(f.coef("x1") - 2.0) <= 1e-10);
        for (Index g = 0; g < 6; ++g) CHECK(std::abs(f.group_effects(g) - 10.0 * static_cast<double>(g)) <= 1e-9);
    }
    SUBCASE("dummy OLS oracle") {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto panel = small_panel(seed, 8 + static_cast<int>(seed) * 7, 6, {0.3, -0.2});
            auto& y = panel.column("sales");
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> n(0, 1);
            for (auto& v : y) v = std::log1p(v) + 0.1 * n(rng);
            const auto spec = spec_for(Family::linear_fe, 2, seed % 2 == 0);
            const auto f = fit_linear_fe(panel, spec);
            const auto o = dummy_ols(build_design(panel, spec));
            for (Index k = 0; k < f.beta.size(); ++k) CHECK(std::abs(f.beta(k) - o.theta(k)) <= 1e-10);
            CHECK(std::abs(f.loglik - o.loglik) <= 1e-10 * std::abs(o.loglik));
        }
    }
    SUBCASE("pure-noise regressor") {
        auto panel = small_panel(8, 100, 10, {0.0});
        auto& y = panel.column("sales");
        for (auto& v : y) v = std::log1p(v);
        const auto f = fit_linear_fe(panel, spec_for(Family::linear_fe, 1));
        CHECK(std::abs(f.coef("x1")) <= 3 * f.se("x1"));
    }
    SUBCASE("time dummies absorb a week shift") {
        auto panel = small_panel(6, 15, 6, {0.4});
        auto& y = panel.column("sales");
        for (auto& v : y) v = std::log1p(v);
        const auto spec = spec_for(Family::linear_fe, 1, true);
        const auto base = fit_linear_fe(panel, spec);
        auto shifted = panel;
        for (std::size_t i = 0; i < shifted.n_rows(); ++i)
            if (shifted.weeks[i] == 3) shifted.column("sales")[i] += 1.7;
        const auto f = fit_linear_fe(shifted, spec);
        for (std::size_t k = 0; k < f.names.size(); ++k) {
            const double expect = f.names[k] == "week_3" ? 1.7 : 0.0;
            CHECK(std::abs(f.beta(static_cast<Index>(k)) - base.beta(static_cast<Index>(k)) - expect) <= 1e-10);
        }
    }
}

TEST_CASE("Poisson-gamma marginal likelihood matches quadrature") {
    const auto panel = small_panel(3, 6, 5, {0.3, -0.4}, 0.0, 1.0, 0.8);
    RegressionSpec spec = spec_for(Family::poisson_gamma_re, 2);
    const auto d = build_design(panel, spec);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 10; ++trial) {
        VectorXd th(4);
        th << 0.3 * u(rng), 0.3 * u(rng), 0.8 + 0.3 * u(rng), 1.2 * u(rng);
        const double exact = poisson_gamma_eval(d, th).loglik;
        CHECK(std::abs(exact - quadrature_loglik(d, th)) <= 1e-6 * std::abs(exact));
    }
    // alpha -> 0 reaches the pooled Poisson likelihood.
    VectorXd b(3);
    b << 0.2, -0.1, 0.7;
    VectorXd th(4);
    th << b, -30.0;
    CHECK(std::abs(poisson_gamma_eval(d, th).loglik - poisson_pooled_eval(d, b).loglik) <= 1e-8);
}

TEST_CASE("Poisson-gamma fit equals quadrature MLE on a tiny instance") {
    const auto panel = small_panel(7, 8, 5, {0.3, -0.4}, 0.0, 1.0, 0.8);
    RegressionSpec spec = spec_for(Family::poisson_gamma_re, 2);
    const auto f = fit_poisson_gamma_re(panel, spec);
    REQUIRE_FALSE(f.boundary);
    const auto d = build_design(panel, spec);
    auto ll = [&](const VectorXd& t) { return quadrature_loglik(d, t); };
    VectorXd th = VectorXd::Zero(4);
    th(2) = std::log(d.y.mean());
    th = quadrature_mle(d, th);
    for (Index k = 0; k < 4; ++k) CHECK(std::abs(f.beta(k) - th(k)) <= 1e-6);
    CHECK(std::abs(f.loglik - ll(th)) <= 1e-6 * std::abs(f.loglik));
    CHECK(f.loglik >= *f.loglik_poisson);
}

TEST_CASE("Poisson-gamma: boundary and overdispersion") {
    SUBCASE("pure Poisson data") {
        int flagged = 0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto f = fit_poisson_gamma_re(small_panel(seed, 100, 10, {0.3}, 0.0, {}, 0.5),
                                                spec_for(Family::poisson_gamma_re, 1));
            CHECK(f.loglik >= *f.loglik_poisson);
            if (f.boundary) {
                ++flagged;
                CHECK(*f.alpha == 0.0);
                CHECK(f.loglik == *f.loglik_poisson);
                CHECK(std::find(f.names.begin(), f.names.end(), "lnalpha") == f.names.end());
            }
        }
        CHECK(flagged >= 4);
    }
    SUBCASE("gamma heterogeneity 2.5") {
        const auto f = fit_poisson_gamma_re(small_panel(17, 200, 30, {0.3, -0.2}, 0.0, 2.5, 0.5),
                                            spec_for(Family::poisson_gamma_re, 2));
        REQUIRE_FALSE(f.boundary);
        CHECK(std::abs(*f.alpha - 2.5) <= 0.3 * 2.5);
        CHECK(f.loglik > *f.loglik_poisson);
        CHECK(*f.alpha / *f.alpha_se > 2.576);
        CHECK(std::abs(f.coef("x1") - 0.3) <= 3 * f.se("x1"));
    }
}

TEST_CASE("analytic scores match central differences") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    const auto panel = small_panel(9, 10, 6, {0.3, -0.2}, 0.4, 1.0, 0.5);
    auto fe = build_design(panel, spec_for(Family::poisson_fe, 2, true));
    auto re = build_design(panel, spec_for(Family::poisson_gamma_re, 2));
    auto lin_panel = panel;
    for (auto& v : lin_panel.column("sales")) v = std::log1p(v);
    auto lin = build_design(lin_panel, spec_for(Family::linear_fe, 2));
    for (int point = 0; point < 20; ++point) {
        VectorXd b = VectorXd::Zero(fe.x.cols());
        for (Index k = 0; k < b.size(); ++k) b(k) = 0.5 * u(rng);
        check_gradient([&](const VectorXd& v) { return poisson_fe_eval(fe, v); }, b);

        VectorXd th(re.x.cols() + 1);
        for (Index k = 0; k < th.size(); ++k) th(k) = 0.5 * u(rng);
        th(re.x.cols()) = 1.5 * u(rng);
        check_gradient([&](const VectorXd& v) { return poisson_gamma_eval(re, v); }, th);
        check_gradient([&](const VectorXd& v) { return poisson_pooled_eval(re, v); }, th.head(re.x.cols()));

        VectorXd bl(2);
        bl << u(rng), u(rng);
        check_gradient([&](const VectorXd& v) { return linear_fe_eval(lin, v); }, bl);
    }
}

TEST_CASE("sandwich against dense hand computation") {
    // 30 rows: 6 items x 5 weeks, clustered by vendor (3 clusters of 2 items).
    const auto panel = small_panel(13, 6, 5, {0.4, -0.3}, 0.3, {}, 0.8);
    REQUIRE(panel.n_rows() == 30);

    SUBCASE("Poisson FE") {
        auto spec = spec_for(Family::poisson_fe, 2);
        spec.cluster_key = "vendor_id";
        // Vendor clusters come from make_panel-style ids; gen_poisson_panel gives one vendor per item.
        auto p2 = panel;
        for (std::size_t i = 0; i < p2.n_rows(); ++i) p2.vendor_ids[i] = "v" + std::to_string(i / 10);
        const auto f = fit_poisson_fe(p2, spec);
        const MatrixXd v = dense_fe_sandwich(build_design(p2, spec), f);
        CHECK((f.vcov - v).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("linear FE with dummy OLS") {
        auto p2 = panel;
        for (auto& v : p2.column("sales")) v = std::log1p(v);
        for (std::size_t i = 0; i < p2.n_rows(); ++i) p2.vendor_ids[i] = "v" + std::to_string(i / 10);
        auto spec = spec_for(Family::linear_fe, 2);
        spec.cluster_key = "vendor_id";
        const auto f = fit_linear_fe(p2, spec);
        const auto d = build_design(p2, spec);
        const MatrixXd z = dummy_design(d);
        const VectorXd th = z.colPivHouseholderQr().solve(d.y);
        const VectorXd e = d.y - z * th;
        const MatrixXd zi = (z.transpose() * z).fullPivLu().inverse();
        MatrixXd meat = MatrixXd::Zero(z.cols(), z.cols());
        for (int c = 0; c < 3; ++c) {
            VectorXd s = VectorXd::Zero(z.cols());
            for (Index i = 0; i < z.rows(); ++i)
                if (d.cluster[static_cast<std::size_t>(i)] == c) s += e(i) * z.row(i).transpose();
            meat += s * s.transpose();
        }
        const MatrixXd v = (zi * meat * zi * 1.5).topLeftCorner(2, 2);
        CHECK((f.vcov - v).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("cluster size 1 equals the heteroskedasticity-robust sandwich") {
        auto p2 = panel;
        std::vector<double> rowid(p2.n_rows());
        std::iota(rowid.begin(), rowid.end(), 0.0);
        p2.set_column({"row", ColumnRole::control, ""}, rowid);
        auto spec = spec_for(Family::poisson_fe, 2);
        spec.cluster_key = "row";
        const auto f = fit_poisson_fe(p2, spec);
        const auto d = build_design(p2, spec);
        const auto ev = poisson_fe_eval(d, f.beta);
        const MatrixXd ai = (-ev.hessian).fullPivLu().inverse();
        MatrixXd b = MatrixXd::Zero(2, 2);
        for (Index i = 0; i < d.x.rows(); ++i) b += ev.unit_scores.row(i).transpose() * ev.unit_scores.row(i);
        const double n = static_cast<double>(d.x.rows());
        const MatrixXd hc = ai * b * ai * (n / (n - 1));
        CHECK((f.vcov - hc).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("single cluster") {
        auto spec = spec_for(Family::poisson_fe, 2);
        auto p2 = panel;
        for (auto& v : p2.vendor_ids) v = "one";
        spec.cluster_key = "vendor_id";
        CHECK_THROWS_AS(fit_poisson_fe(p2, spec), InvalidInput);
    }
}

TEST_CASE("duplicated rows leave cluster SEs unchanged") {
    const auto panel = small_panel(31, 30, 8, {0.4, -0.3});
    std::vector<std::size_t> twice;
    for (std::size_t i = 0; i < panel.n_rows(); ++i) {
        twice.push_back(i);
        twice.push_back(i);
    }
    const auto dup = panel.select_rows(twice);
    for (auto fam : {Family::poisson_fe, Family::linear_fe}) {
        auto p1 = panel, p2 = dup;
        if (fam == Family::linear_fe) {
            for (auto& v : p1.column("sales")) v = std::log1p(v);
            for (auto& v : p2.column("sales")) v = std::log1p(v);
        }
        const auto a = fit(p1, spec_for(fam, 2));
        const auto b = fit(p2, spec_for(fam, 2));
        CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() <= 1e-8);
        for (const auto& name : {"x1", "x2"}) {
            CHECK(std::abs(a.se(name) - b.se(name)) <= 1e-8);
            const auto k = static_cast<Index>(a.index(name));
            CHECK(std::sqrt(b.vcov_model(k, k)) < std::sqrt(a.vcov_model(k, k)));
        }
    }
}

TEST_CASE("vcov is symmetric PSD") {
    for (auto fam : {Family::poisson_fe, Family::poisson_gamma_re}) {
        const auto f = fit(small_panel(41, 50, 10, {0.2, 0.1, -0.3}, 0.0, 1.0), spec_for(fam, 3));
        CHECK((f.vcov - f.vcov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(f.vcov);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * f.vcov.norm());
    }
}

TEST_CASE("exponentiation, Wald tests and stars") {
    auto [e0, s0] = exp_delta(0.0, 0.1);
    CHECK(e0 == doctest::Approx(1.0));
    CHECK(s0 == doctest::Approx(0.1));
    auto [e1, s1] = exp_delta(std::log(2.0), 0.05);
    CHECK(std::abs(e1 - 2.0) <= 1e-12);
    CHECK(std::abs(s1 - 0.1) <= 1e-12);

    CHECK(wald_equality_test(0.3, 0.3, 0.01, 0.02, 0.001).p == 1.0);
    // chi2 = (0.5-0.2)^2 / (0.04 + 0.01 - 2*0.005) = 2.25; P(chi2_1 > 2.25) = erfc(sqrt(1.125)).
    const auto w = wald_equality_test(0.5, 0.2, 0.04, 0.01, 0.005);
    CHECK(std::abs(w.chi2 - 2.25) <= 1e-12);
    CHECK(std::abs(w.p - std::erfc(std::sqrt(1.125))) <= 1e-10);
    CHECK_THROWS_AS(wald_equality_test(0.5, 0.2, 0.01, 0.01, 0.01), InvalidInput);

    CHECK(stars(0.005) == "***");
    CHECK(stars(0.01) == "**");
    CHECK(stars(0.049) == "**");
    CHECK(stars(0.05) == "*");
    CHECK(stars(0.0999) == "*");
    CHECK(stars(0.1) == "");
    CHECK(std::abs(two_sided_p(1.959963984540054) - 0.05) <= 1e-12);

    const auto f = fit_poisson_fe(small_panel(3, 30, 8, {0.4, -0.3}), spec_for(Family::poisson_fe, 2));
    const auto ex = exponentiate(f);
    REQUIRE(ex.size() == 2);
    CHECK(ex[0].estimate == doctest::Approx(std::exp(f.coef("x1"))));
    CHECK(ex[0].se == doctest::Approx(std::exp(f.coef("x1")) * f.se("x1")));
    const auto wf = wald_equality_test(f, "x1", "x2");
    CHECK(wf.p < 0.05);
}

TEST_CASE("fit result and spec serialization") {
    const auto panel = small_panel(5, 40, 8, {0.2, 0.1}, 0.0, 1.5);
    auto spec = spec_for(Family::poisson_gamma_re, 2, true);
    spec.label = "(3)";
    const auto f = fit(panel, spec);
    const auto back = FitResult::from_json(f.to_json());
    CHECK(back.names == f.names);
    CHECK((back.beta - f.beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.vcov - f.vcov).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.loglik == f.loglik);
    CHECK(back.alpha == f.alpha);
    CHECK(back.spec.label == "(3)");
    CHECK(back.spec.time_dummies);
    CHECK(RegressionSpec::from_json(spec.to_json()).regressors == spec.regressors);
    CHECK_THROWS_AS(RegressionSpec::from_json(R"({"family":"ols"})"), InvalidInput);
}
