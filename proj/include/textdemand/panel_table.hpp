#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace textdemand {

/// Role of a panel column, recorded in the sidecar schema.
enum class ColumnRole { outcome, covariate, flag, control, text_pc, interaction };

std::string_view to_string(ColumnRole role);
ColumnRole column_role_from_string(std::string_view s);

struct ColumnInfo {
    std::string name;
    ColumnRole role = ColumnRole::covariate;
    std::string units;
};

/// Item-week table: key columns plus named numeric columns stored columnwise.
class PanelTable {
public:
    std::vector<std::string> item_ids;
    std::vector<std::string> vendor_ids;
    std::vector<int> weeks;
    std::vector<std::string> snapshot_ids;  // listing snapshot supplying the row's attributes

    std::size_t n_rows() const { return item_ids.size(); }
    std::size_t n_columns() const { return info_.size(); }
    const std::vector<ColumnInfo>& columns() const { return info_; }

    bool has_column(std::string_view name) const;
    /// Throws InvalidInput for an unknown column.
    const std::vector<double>& column(std::string_view name) const;
    std::vector<double>& column(std::string_view name);
    const ColumnInfo& info(std::string_view name) const;

    /// Adds a column (or replaces one of the same name). Throws InvalidInput
    /// if the length differs from n_rows().
    void set_column(ColumnInfo info, std::vector<double> values);
    void drop_column(std::string_view name);

    /// Key column by name: "item_id", "vendor_id", "week" or "snapshot_id".
    std::vector<std::string> key(std::string_view name) const;

    /// Sorts rows by (item_id, week).
    void sort_canonical();

    /// Keeps the rows whose index is listed, in that order.
    PanelTable select_rows(const std::vector<std::size_t>& rows) const;

    /// item_id,vendor_id,week,snapshot_id followed by data columns.
    std::string to_csv() const;
    /// name,role,units per data column.
    std::string schema_csv() const;
    static PanelTable from_csv(std::string_view data_csv, std::string_view schema_csv);

private:
    std::size_t index_of(std::string_view name) const;

    std::vector<ColumnInfo> info_;
    std::vector<std::vector<double>> data_;
};

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

}  // namespace textdemand
