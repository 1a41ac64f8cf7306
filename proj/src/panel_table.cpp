#include "textdemand/panel_table.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "textdemand/errors.hpp"

namespace textdemand {

std::string_view to_string(ColumnRole role) {
    switch (role) {
        case ColumnRole::outcome:
            return "outcome";
        case ColumnRole::covariate:
            return "covariate";
        case ColumnRole::flag:
            return "flag";
        case ColumnRole::control:
            return "control";
        case ColumnRole::text_pc:
            return "text_pc";
        case ColumnRole::interaction:
            return "interaction";
    }
    return "covariate";
}

ColumnRole column_role_from_string(std::string_view s) {
    for (auto r : {ColumnRole::outcome, ColumnRole::covariate, ColumnRole::flag, ColumnRole::control,
                   ColumnRole::text_pc, ColumnRole::interaction}) {
        if (to_string(r) == s) return r;
    }
    throw InvalidInput("unknown column role '" + std::string(s) + "'");
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw Error("cannot format double");
    return std::string(buf, ptr);
}

std::size_t PanelTable::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < info_.size(); ++i) {
        if (info_[i].name == name) return i;
    }
    return info_.size();
}

bool PanelTable::has_column(std::string_view name) const { return index_of(name) < info_.size(); }

const std::vector<double>& PanelTable::column(std::string_view name) const {
    const auto i = index_of(name);
    if (i == info_.size()) throw InvalidInput("unknown panel column '" + std::string(name) + "'");
    return data_[i];
}

std::vector<double>& PanelTable::column(std::string_view name) {
    const auto i = index_of(name);
    if (i == info_.size()) throw InvalidInput("unknown panel column '" + std::string(name) + "'");
    return data_[i];
}

const ColumnInfo& PanelTable::info(std::string_view name) const {
    const auto i = index_of(name);
    if (i == info_.size()) throw InvalidInput("unknown panel column '" + std::string(name) + "'");
    return info_[i];
}

void PanelTable::set_column(ColumnInfo info, std::vector<double> values) {
    if (values.size() != n_rows()) {
        throw InvalidInput("column '" + info.name + "' has " + std::to_string(values.size()) + " rows, panel has " +
                           std::to_string(n_rows()));
    }
    if (info.name.find(',') != std::string::npos) throw InvalidInput("column names may not contain commas");
    const auto i = index_of(info.name);
    if (i < info_.size()) {
        info_[i] = std::move(info);
        data_[i] = std::move(values);
    } else {
        info_.push_back(std::move(info));
        data_.push_back(std::move(values));
    }
}

void PanelTable::drop_column(std::string_view name) {
    const auto i = index_of(name);
    if (i == info_.size()) return;
    info_.erase(info_.begin() + static_cast<std::ptrdiff_t>(i));
    data_.erase(data_.begin() + static_cast<std::ptrdiff_t>(i));
}

std::vector<std::string> PanelTable::key(std::string_view name) const {
    if (name == "item_id") return item_ids;
    if (name == "vendor_id") return vendor_ids;
    if (name == "snapshot_id") return snapshot_ids;
    if (name == "week") {
        std::vector<std::string> out;
        out.reserve(weeks.size());
        for (int w : weeks) out.push_back(std::to_string(w));
        return out;
    }
    throw InvalidInput("unknown key column '" + std::string(name) + "'");
}

PanelTable PanelTable::select_rows(const std::vector<std::size_t>& rows) const {
    PanelTable out;
    out.info_ = info_;
    out.data_.assign(data_.size(), {});
    const bool has_snap = snapshot_ids.size() == n_rows();
    for (auto r : rows) {
        out.item_ids.push_back(item_ids.at(r));
        out.vendor_ids.push_back(vendor_ids.at(r));
        out.weeks.push_back(weeks.at(r));
        out.snapshot_ids.push_back(has_snap ? snapshot_ids[r] : std::string());
        for (std::size_t c = 0; c < data_.size(); ++c) out.data_[c].push_back(data_[c][r]);
    }
    return out;
}

void PanelTable::sort_canonical() {
    std::vector<std::size_t> order(n_rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (item_ids[a] != item_ids[b]) return item_ids[a] < item_ids[b];
        return weeks[a] < weeks[b];
    });
    *this = select_rows(order);
}

std::string PanelTable::to_csv() const {
    std::ostringstream out;
    out << "item_id,vendor_id,week,snapshot_id";
    for (const auto& c : info_) out << ',' << c.name;
    out << '\n';
    const bool has_snap = snapshot_ids.size() == n_rows();
    for (std::size_t r = 0; r < n_rows(); ++r) {
        out << item_ids[r] << ',' << vendor_ids[r] << ',' << weeks[r] << ',' << (has_snap ? snapshot_ids[r] : "");
        for (const auto& col : data_) out << ',' << format_double(col[r]);
        out << '\n';
    }
    return out.str();
}

std::string PanelTable::schema_csv() const {
    std::ostringstream out;
    out << "name,role,units\n";
    for (const auto& c : info_) out << c.name << ',' << to_string(c.role) << ',' << c.units << '\n';
    return out.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw InvalidInput("panel CSV: bad number '" + s + "'");
    return v;
}

}  // namespace

PanelTable PanelTable::from_csv(std::string_view data_csv, std::string_view schema_csv) {
    std::istringstream schema{std::string(schema_csv)};
    std::string line;
    std::getline(schema, line);
    if (line != "name,role,units") throw InvalidInput("panel schema: unexpected header");
    std::vector<ColumnInfo> info;
    while (std::getline(schema, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() < 2) throw InvalidInput("panel schema: bad line '" + line + "'");
        info.push_back({f[0], column_role_from_string(f[1]), f.size() > 2 ? f[2] : ""});
    }

    std::istringstream data{std::string(data_csv)};
    std::getline(data, line);
    const auto header = split_csv_line(line);
    if (header.size() != 4 + info.size()) throw InvalidInput("panel CSV: header does not match schema");
    for (std::size_t c = 0; c < info.size(); ++c) {
        if (header[4 + c] != info[c].name) throw InvalidInput("panel CSV: column order differs from schema");
    }
    PanelTable t;
    std::vector<std::vector<double>> cols(info.size());
    while (std::getline(data, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != header.size()) throw InvalidInput("panel CSV: ragged row");
        t.item_ids.push_back(f[0]);
        t.vendor_ids.push_back(f[1]);
        t.weeks.push_back(static_cast<int>(parse_double(f[2])));
        t.snapshot_ids.push_back(f[3]);
        for (std::size_t c = 0; c < info.size(); ++c) cols[c].push_back(parse_double(f[4 + c]));
    }
    for (std::size_t c = 0; c < info.size(); ++c) t.set_column(info[c], std::move(cols[c]));
    return t;
}

}  // namespace textdemand
