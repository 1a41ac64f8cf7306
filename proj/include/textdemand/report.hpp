#pragma once

#include <optional>
#include <string>
#include <vector>

#include "textdemand/countreg.hpp"

namespace textdemand {

/// Footer switches shown under a regression column.
struct ColumnToggles {
    bool item_controls = false;
    bool vendor_controls = false;
    bool time_fe = false;
};

/// "P-value of Equality" row: Wald test of coef_a = coef_b in every column
/// holding both, N/A elsewhere.
struct EqualityTest {
    std::string label;
    std::string coef_a;
    std::string coef_b;
};

struct TableCell {
    double estimate = 0.0;  // exp(beta)
    double se = 0.0;        // delta method
    double p = 1.0;
};

struct TableRow {
    std::string name;
    std::string label;
    std::vector<std::optional<TableCell>> cells;
};

/// Regression table: exponentiated coefficients with stars and standard
/// errors in parentheses. Below them come the dispersion parameter (RE
/// columns), observations and log-likelihood, then control toggles and
/// equality p-values.
struct RegressionTable {
    std::string title;
    std::string dependent_label;
    std::vector<std::string> column_labels;
    std::vector<TableRow> rows;
    std::vector<std::optional<TableCell>> alpha;  // estimate and se of alpha itself
    std::vector<bool> alpha_boundary;
    std::vector<std::size_t> observations;
    std::vector<double> loglik;
    std::vector<ColumnToggles> toggles;
    std::vector<std::pair<std::string, std::vector<std::optional<double>>>> equality;
    std::string notes;

    std::string to_text() const;
    std::string to_json() const;
};

/// Display label for a panel column ("avg_vendor_review_sent" ->
/// "Avg. Vendor Review Sentiment"); unknown names are returned unchanged.
std::string column_label(const std::string& name);

/// Rows are the displayed coefficients of every column in order of first
/// appearance. Throws InvalidInput when the argument lengths differ.
RegressionTable build_table(const std::vector<FitResult>& fits, const std::vector<std::vector<std::string>>& displayed,
                            const std::vector<ColumnToggles>& toggles, const std::vector<EqualityTest>& tests,
                            std::string title);

}  // namespace textdemand
