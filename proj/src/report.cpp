#include "textdemand/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <json.hpp>

#include "textdemand/errors.hpp"

namespace textdemand {

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left) {
    if (s.size() >= width) return s;
    const std::string fill(width - s.size(), ' ');
    return left ? s + fill : fill + s;
}

nlohmann::json cell_json(const std::optional<TableCell>& c) {
    if (!c) return nullptr;
    return {{"estimate", c->estimate}, {"se", c->se}, {"p", c->p}, {"stars", stars(c->p)}};
}

}  // namespace

std::string column_label(const std::string& name) {
    static const std::map<std::string, std::string> labels = {
        {"item_rating", "Average Item Rating"},
        {"avg_vendor_review_sent", "Avg. Vendor Review Sentiment"},
        {"log_n_reviews", "log(Number of Vendor Reviews)"},
        {"avg_vendor_forum_sent", "Avg. Vendor Forum Sentiment"},
        {"log_n_mentions", "log(Number of Forum Mentions)"},
        {"log_price", "log(Price) (BTC)"},
        {"nfe_flag", "1{No Finalize Early on Product}"},
        {"vendor_rating", "Vendor Rating"},
        {"avg_review_sent_experienced", "Avg. Review Sentiment (Experienced Buyers)"},
        {"avg_review_sent_inexperienced", "Avg. Review Sentiment (Inexperienced Buyers)"},
        {"avg_forum_sent_experienced", "Avg. Forum Sentiment (Experienced Users)"},
        {"avg_forum_sent_inexperienced", "Avg. Forum Sentiment (Inexperienced Users)"},
        {"avg_own_review_sent", "Avg. Review Sentiment (This Product)"},
        {"avg_other_review_sent", "Avg. Review Sentiment (Other Products)"},
        {"_cons", "Constant"},
    };
    auto it = labels.find(name);
    return it == labels.end() ? name : it->second;
}

RegressionTable build_table(const std::vector<FitResult>& fits, const std::vector<std::vector<std::string>>& displayed,
                            const std::vector<ColumnToggles>& toggles, const std::vector<EqualityTest>& tests,
                            std::string title) {
    const auto n = fits.size();
    if (displayed.size() != n || toggles.size() != n) {
        throw InvalidInput("table needs one displayed list and one toggle set per fit");
    }
    RegressionTable t;
    t.title = std::move(title);
    t.dependent_label = "Number of Sales per Week";
    t.toggles = toggles;

    bool any_linear = false, any_count = false;
    for (std::size_t c = 0; c < n; ++c) {
        const auto& fit = fits[c];
        t.column_labels.push_back("(" + std::to_string(c + 1) + ")");
        t.observations.push_back(fit.n_obs);
        t.loglik.push_back(fit.loglik);
        (fit.spec.family == Family::linear_fe ? any_linear : any_count) = true;
        for (const auto& name : displayed[c]) {
            auto it = std::find_if(t.rows.begin(), t.rows.end(), [&](const TableRow& r) { return r.name == name; });
            if (it == t.rows.end()) {
                t.rows.push_back({name, column_label(name), std::vector<std::optional<TableCell>>(n)});
                it = t.rows.end() - 1;
            }
            const auto k = static_cast<Eigen::Index>(fit.index(name));
            const double b = fit.beta(k);
            const double s = std::sqrt(std::max(fit.vcov(k, k), 0.0));
            TableCell cell;
            cell.p = s > 0.0 ? two_sided_p(b / s) : std::numeric_limits<double>::quiet_NaN();
            if (fit.spec.family == Family::linear_fe) {
                cell.estimate = b;
                cell.se = s;
            } else {
                std::tie(cell.estimate, cell.se) = exp_delta(b, s);
            }
            it->cells[c] = cell;
        }
        if (fit.spec.family == Family::poisson_gamma_re) {
            t.alpha_boundary.push_back(fit.boundary);
            if (fit.alpha) {
                TableCell a;
                a.estimate = *fit.alpha;
                a.se = fit.alpha_se.value_or(0.0);
                a.p = a.se > 0.0 ? two_sided_p(a.estimate / a.se) : std::numeric_limits<double>::quiet_NaN();
                t.alpha.push_back(a);
            } else {
                t.alpha.emplace_back();
            }
        } else {
            t.alpha.emplace_back();
            t.alpha_boundary.push_back(false);
        }
    }

    for (const auto& test : tests) {
        std::vector<std::optional<double>> ps(n);
        for (std::size_t c = 0; c < n; ++c) {
            const auto& names = fits[c].names;
            const bool both = std::count(names.begin(), names.end(), test.coef_a) &&
                              std::count(names.begin(), names.end(), test.coef_b);
            if (!both) continue;
            try {
                ps[c] = wald_equality_test(fits[c], test.coef_a, test.coef_b).p;
            } catch (const InvalidInput&) {
            }
        }
        t.equality.emplace_back(test.label, std::move(ps));
    }

    if (any_count) {
        t.notes = "Exponentiated coefficients e^b reported; standard errors by the delta method.";
    }
    if (any_linear) {
        if (!t.notes.empty()) t.notes += ' ';
        t.notes += "Linear columns report untransformed coefficients.";
    }
    t.notes += " Cluster-robust standard errors in parentheses. *, **, *** denote significance at the 10, 5 and 1% levels.";
    if (t.notes.front() == ' ') t.notes.erase(0, 1);
    return t;
}

std::string RegressionTable::to_text() const {
    const auto n = column_labels.size();
    std::vector<std::vector<std::string>> lines;  // label then one entry per column
    auto add = [&](std::string label, std::vector<std::string> cells) {
        cells.insert(cells.begin(), std::move(label));
        lines.push_back(std::move(cells));
    };
    std::vector<std::size_t> rules;  // line indices preceded by a rule

    add("", column_labels);
    rules.push_back(lines.size());
    for (const auto& row : rows) {
        std::vector<std::string> est(n), se(n);
        for (std::size_t c = 0; c < n; ++c) {
            if (!row.cells[c]) continue;
            est[c] = fixed(row.cells[c]->estimate, 4) + stars(row.cells[c]->p);
            se[c] = "(" + fixed(row.cells[c]->se, 4) + ")";
        }
        add(row.label, std::move(est));
        add("", std::move(se));
    }
    const bool any_alpha = std::any_of(alpha_boundary.begin(), alpha_boundary.end(), [](bool b) { return b; }) ||
                           std::any_of(alpha.begin(), alpha.end(), [](const auto& a) { return a.has_value(); });
    if (any_alpha) {
        rules.push_back(lines.size());
        std::vector<std::string> est(n), se(n);
        for (std::size_t c = 0; c < n; ++c) {
            if (alpha[c]) {
                est[c] = fixed(alpha[c]->estimate, 4) + stars(alpha[c]->p);
                se[c] = "(" + fixed(alpha[c]->se, 4) + ")";
            } else if (alpha_boundary[c]) {
                est[c] = "0 (boundary)";
            }
        }
        add("alpha (Dispersion Parameter)", std::move(est));
        add("", std::move(se));
    }
    rules.push_back(lines.size());
    std::vector<std::string> obs(n), ll(n), item(n), vendor(n), time(n);
    for (std::size_t c = 0; c < n; ++c) {
        obs[c] = std::to_string(observations[c]);
        ll[c] = fixed(loglik[c], 1);
        item[c] = toggles[c].item_controls ? "True" : "False";
        vendor[c] = toggles[c].vendor_controls ? "True" : "False";
        time[c] = toggles[c].time_fe ? "True" : "False";
    }
    add("Observations", std::move(obs));
    add("Log-likelihood", std::move(ll));
    add("Item Controls", std::move(item));
    add("Vendor Controls", std::move(vendor));
    add("Time FE", std::move(time));
    for (const auto& [label, ps] : equality) {
        std::vector<std::string> cells(n);
        for (std::size_t c = 0; c < n; ++c) cells[c] = ps[c] ? fixed(*ps[c], 4) : "N/A";
        add(label, std::move(cells));
    }

    std::vector<std::size_t> width(n + 1, 0);
    for (const auto& l : lines)
        for (std::size_t i = 0; i < l.size(); ++i) width[i] = std::max(width[i], l[i].size());
    std::size_t total = width[0];
    for (std::size_t i = 1; i <= n; ++i) total += 2 + width[i];

    std::string out = title + "\n";
    const std::string rule(total, '-');
    out += rule + "\nDependent Variable: " + dependent_label + "\n" + rule + "\n";
    for (std::size_t li = 0; li < lines.size(); ++li) {
        if (std::count(rules.begin(), rules.end(), li)) out += rule + "\n";
        std::string line = pad(lines[li][0], width[0], true);
        for (std::size_t i = 1; i <= n; ++i) line += "  " + pad(lines[li][i], width[i], false);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    out += rule + "\n" + notes + "\n";
    return out;
}

std::string RegressionTable::to_json() const {
    nlohmann::json j;
    j["format"] = "textdemand.report";
    j["version"] = 1;
    j["title"] = title;
    j["dependent"] = dependent_label;
    j["columns"] = column_labels;
    auto& rj = j["rows"] = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : row.cells) cells.push_back(cell_json(c));
        rj.push_back({{"name", row.name}, {"label", row.label}, {"cells", cells}});
    }
    nlohmann::json a = nlohmann::json::array();
    for (std::size_t c = 0; c < alpha.size(); ++c) {
        auto v = cell_json(alpha[c]);
        if (v.is_null() && alpha_boundary[c]) v = {{"estimate", 0.0}, {"boundary", true}};
        a.push_back(v);
    }
    j["alpha"] = a;
    j["observations"] = observations;
    j["loglik"] = loglik;
    nlohmann::json tg = nlohmann::json::array();
    for (const auto& t : toggles) {
        tg.push_back({{"item_controls", t.item_controls}, {"vendor_controls", t.vendor_controls}, {"time_fe", t.time_fe}});
    }
    j["toggles"] = tg;
    nlohmann::json eq = nlohmann::json::array();
    for (const auto& [label, ps] : equality) {
        nlohmann::json v = nlohmann::json::array();
        for (const auto& p : ps) v.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
        eq.push_back({{"label", label}, {"p_values", v}});
    }
    j["equality"] = eq;
    j["notes"] = notes;
    return j.dump(1);
}

}  // namespace textdemand
