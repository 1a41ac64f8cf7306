#include <filesystem>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "textdemand/errors.hpp"
#include "textdemand/io.hpp"
#include "textdemand/pipeline.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace textdemand;

namespace {

PipelineConfig load_config(const std::string& path, const std::string& output_dir) {
    const auto parsed = parse_config(read_file(path), fs::absolute(path).parent_path().string(), output_dir);
    if (!parsed.config) {
        std::string msg = "invalid config " + path;
        for (const auto& d : parsed.diagnostics) msg += "\n" + d.code + ": " + d.message;
        throw InvalidInput(msg);
    }
    return *parsed.config;
}

py::dict fit_to_dict(const FitResult& f) {
    py::dict out;
    out["names"] = f.names;
    out["beta"] = f.beta;
    out["vcov"] = f.vcov;
    out["se"] = Eigen::VectorXd(f.vcov.diagonal().cwiseSqrt());
    out["loglik"] = f.loglik;
    out["n_obs"] = f.n_obs;
    out["n_dropped"] = f.n_dropped;
    out["n_groups"] = f.n_groups;
    out["alpha"] = f.alpha;
    out["alpha_se"] = f.alpha_se;
    out["boundary"] = f.boundary;
    out["loglik_poisson"] = f.loglik_poisson;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Text sentiment and demand estimation";

    // Translators run newest first, so the subclass is registered last.
    auto& error = py::register_exception<Error>(m, "Error");
    py::register_exception<StaleDependency>(m, "StaleDependency", error.ptr());

    m.def(
        "preprocess", [](const std::string& text) { return preprocess(text, default_stopwords()); }, py::arg("text"),
        "Tokenize, drop stopwords and stem with the shipped stopword list.");

    m.def(
        "validate",
        [](const std::string& config_path, const std::string& output_dir) {
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& d : validate_config(read_file(config_path),
                                                 fs::absolute(config_path).parent_path().string(), output_dir))
                out.emplace_back(d.code, d.message);
            return out;
        },
        py::arg("config_path"), py::arg("output_dir") = "",
        "Diagnostics as (code, message) pairs; empty when the config is runnable.");

    m.def(
        "run_stage",
        [](const std::string& config_path, const std::string& stage, const std::string& output_dir) {
            const auto config = load_config(config_path, output_dir);
            const auto s = stage_from_string(stage);
            if (!s) throw InvalidInput("unknown stage: " + stage);
            StageOutcome outcome;
            {
                py::gil_scoped_release release;
                OutputLock lock(config.resolve(config.output_dir));
                outcome = run_stage(config, *s);
            }
            std::vector<std::string> auto_ran;
            for (auto a : outcome.auto_ran) auto_ran.emplace_back(to_string(a));
            py::dict out;
            out["ran"] = outcome.ran;
            out["auto_ran"] = auto_ran;
            out["message"] = outcome.message;
            return out;
        },
        py::arg("config_path"), py::arg("stage"), py::arg("output_dir") = "",
        "Run one pipeline stage from its upstream artifacts.");

    m.def(
        "run_in_memory",
        [](const std::string& config_path) {
            const auto config = load_config(config_path, {});
            PipelineResult r;
            {
                py::gil_scoped_release release;
                r = run_in_memory(config.synth ? inputs_from_market(gen_market(*config.synth)) : load_inputs(config),
                                  config);
            }
            py::list fits;
            for (const auto& f : r.fits) fits.append(fit_to_dict(f));
            py::dict out;
            out["report"] = r.report.to_text();
            out["report_json"] = r.report.to_json();
            out["fits"] = fits;
            return out;
        },
        py::arg("config_path"), "Every stage without writing files; returns the report and fits.");

    m.def(
        "gen_poisson_panel",
        [](int n_items, int n_weeks, std::vector<double> beta, std::uint64_t seed, double fe_spread,
           std::optional<double> gamma_var, double intercept) {
            PoissonPanelConfig c;
            c.n_items = n_items;
            c.n_weeks = n_weeks;
            c.beta = std::move(beta);
            c.seed = seed;
            c.fe_spread = fe_spread;
            c.gamma_var = gamma_var;
            c.intercept = intercept;
            const auto [panel, truth] = gen_poisson_panel(c);
            Eigen::MatrixXd x(static_cast<Eigen::Index>(panel.n_rows()), static_cast<Eigen::Index>(c.beta.size()));
            for (std::size_t k = 0; k < c.beta.size(); ++k) {
                const auto& col = panel.column("x" + std::to_string(k + 1));
                for (std::size_t i = 0; i < col.size(); ++i)
                    x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = col[i];
            }
            const auto& sales = panel.column("sales");
            py::dict out;
            out["y"] = Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(sales.data(), static_cast<Eigen::Index>(sales.size())));
            out["x"] = x;
            out["item_ids"] = panel.item_ids;
            out["weeks"] = panel.weeks;
            return out;
        },
        py::arg("n_items"), py::arg("n_weeks"), py::arg("beta"), py::arg("seed") = 1, py::arg("fe_spread") = 0.5,
        py::arg("gamma_var") = py::none(), py::arg("intercept") = 0.0, "Synthetic Poisson panel with item effects.");

    m.def(
        "fit_counts",
        [](const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const std::vector<std::string>& item_ids,
           std::optional<std::vector<int>> weeks, std::optional<std::vector<std::string>> names,
           const std::string& family, bool time_dummies, std::optional<std::vector<std::string>> clusters) {
            const auto n = static_cast<std::size_t>(y.size());
            if (static_cast<std::size_t>(x.rows()) != n || item_ids.size() != n || (weeks && weeks->size() != n) ||
                (clusters && clusters->size() != n))
                throw InvalidInput("y, x, item_ids, weeks and clusters must have one entry per row");
            if (names && names->size() != static_cast<std::size_t>(x.cols()))
                throw InvalidInput("names must have one entry per column of x");
            PanelTable t;
            t.item_ids = item_ids;
            t.vendor_ids = clusters ? *clusters : item_ids;
            t.snapshot_ids.assign(n, "");
            if (weeks) {
                t.weeks = *weeks;
            } else {
                t.weeks.assign(n, 0);
            }
            t.set_column({"sales", ColumnRole::outcome, ""}, std::vector<double>(y.data(), y.data() + y.size()));
            RegressionSpec spec;
            spec.family = family_from_string(family);
            spec.time_dummies = time_dummies;
            if (clusters) spec.cluster_key = "vendor_id";
            for (Eigen::Index k = 0; k < x.cols(); ++k) {
                const auto name = names ? (*names)[static_cast<std::size_t>(k)] : "x" + std::to_string(k + 1);
                std::vector<double> col(n);
                for (std::size_t i = 0; i < n; ++i) col[i] = x(static_cast<Eigen::Index>(i), k);
                t.set_column({name, ColumnRole::covariate, ""}, std::move(col));
                spec.regressors.push_back(name);
            }
            FitResult f;
            {
                py::gil_scoped_release release;
                f = fit(t, spec);
            }
            return fit_to_dict(f);
        },
        py::arg("y"), py::arg("x"), py::arg("item_ids"), py::arg("weeks") = py::none(), py::arg("names") = py::none(),
        py::arg("family") = "poisson_fe", py::arg("time_dummies") = false, py::arg("clusters") = py::none(),
        "Fit a panel count model. family: poisson_fe, poisson_gamma_re or linear_fe. Standard errors are "
        "cluster-robust by item, or by `clusters` when given.");
}
