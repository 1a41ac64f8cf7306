#include "textdemand/panel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "textdemand/errors.hpp"

namespace textdemand {

int WeeklySales::at(const std::string& item, int week) const {
    auto it = counts.find({item, week});
    return it == counts.end() ? 0 : it->second;
}

WeeklySales weekly_sales(std::span<const ReviewEvent> reviews, const SampleWindow& window) {
    WeeklySales out;
    for (const auto& r : reviews) {
        if (!window.contains(r.timestamp)) {
            ++out.outside_window;
            continue;
        }
        ++out.in_window;
        ++out.counts[{r.item_id, week_index(r.timestamp, window.start)}];
    }
    return out;
}

RollingIndex::RollingIndex(std::span<const KeyedEvent> events) {
    std::unordered_map<std::string, std::vector<std::pair<int, double>>> grouped;
    for (const auto& e : events) grouped[e.key].emplace_back(e.week, e.score);
    for (auto& [key, list] : grouped) {
        std::sort(list.begin(), list.end());
        Series s;
        s.prefix.push_back(0.0);
        for (const auto& [w, v] : list) {
            s.weeks.push_back(w);
            s.prefix.push_back(s.prefix.back() + v);
        }
        series_.emplace(key, std::move(s));
    }
}

std::pair<double, std::size_t> RollingIndex::totals(const std::string& key, int t) const {
    auto it = series_.find(key);
    if (it == series_.end()) return {0.0, 0};
    const auto& s = it->second;
    const auto n = static_cast<std::size_t>(std::lower_bound(s.weeks.begin(), s.weeks.end(), t) - s.weeks.begin());
    return {s.prefix[n], n};
}

RollingValue RollingIndex::at(const std::string& key, int t) const {
    const auto [sum, n] = totals(key, t);
    if (n == 0) return {};
    return {sum / static_cast<double>(n), n};
}

RollingValue rolling_vendor_stats(std::span<const KeyedEvent> events, const std::string& vendor, int t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& e : events) {
        if (e.key == vendor && e.week < t) {
            sum += e.score;
            ++n;
        }
    }
    if (n == 0) return {};
    return {sum / static_cast<double>(n), n};
}

namespace {

struct RollingColumns {
    std::string avg;
    std::string log_n;
    std::string flag;
};

// Mean as 0 with a flag when there is no history; log count as 0 when zero.
void add_rolling(PanelTable& table, const RollingColumns& names, const std::vector<RollingValue>& values) {
    std::vector<double> avg, log_n, flag;
    for (const auto& v : values) {
        avg.push_back(v.mean.value_or(0.0));
        log_n.push_back(v.count > 0 ? std::log(static_cast<double>(v.count)) : 0.0);
        flag.push_back(v.count == 0 ? 1.0 : 0.0);
    }
    table.set_column({names.avg, ColumnRole::covariate, "sd"}, std::move(avg));
    table.set_column({names.log_n, ColumnRole::covariate, "log count"}, std::move(log_n));
    table.set_column({names.flag, ColumnRole::flag, "indicator"}, std::move(flag));
}

std::vector<RollingValue> lookup(const PanelTable& table, const RollingIndex& index,
                                 const std::function<std::string(std::size_t)>& key_of) {
    std::vector<RollingValue> out;
    out.reserve(table.n_rows());
    for (std::size_t r = 0; r < table.n_rows(); ++r) out.push_back(index.at(key_of(r), table.weeks[r]));
    return out;
}

std::string category_column(const std::string& cat) {
    std::string out = "vol_";
    for (char c : cat) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    return out;
}

struct FilteredEvents {
    std::vector<const ReviewEvent*> reviews;  // in window, vendor kept
    std::vector<const MentionEvent*> mentions;
    std::size_t reviews_outside = 0;
    std::size_t reviews_excluded = 0;
    std::size_t mentions_outside = 0;
    std::size_t mentions_excluded = 0;
};

FilteredEvents filter_events(const PanelInputs& inputs, const PanelConfig& config) {
    FilteredEvents f;
    for (const auto& r : inputs.reviews) {
        if (config.excluded_vendors.count(r.vendor_id)) {
            ++f.reviews_excluded;
        } else if (!config.window.contains(r.timestamp)) {
            ++f.reviews_outside;
        } else {
            f.reviews.push_back(&r);
        }
    }
    for (const auto& m : inputs.mentions) {
        if (config.excluded_vendors.count(m.vendor_id)) {
            ++f.mentions_excluded;
        } else if (!config.window.contains(m.timestamp)) {
            ++f.mentions_outside;
        } else {
            f.mentions.push_back(&m);
        }
    }
    return f;
}

template <typename Event, typename Pred>
RollingIndex vendor_index(const std::vector<const Event*>& events, const SampleWindow& window, Pred keep) {
    std::vector<KeyedEvent> keyed;
    for (const auto* e : events) {
        if (keep(*e)) keyed.push_back({e->vendor_id, week_index(e->timestamp, window.start), e->score});
    }
    return RollingIndex(keyed);
}

}  // namespace

PanelBuild assemble_panel(const PanelInputs& inputs, const PanelConfig& config) {
    if (config.window.end < config.window.start) throw InvalidInput("sample window ends before it starts");
    const auto& window = config.window;
    const int n_weeks = window.n_weeks();
    PanelBuild build;
    auto& summary = build.summary;

    const auto events = filter_events(inputs, config);
    summary.reviews_outside_window = events.reviews_outside;
    summary.reviews_excluded_vendor = events.reviews_excluded;
    summary.mentions_outside_window = events.mentions_outside;
    summary.mentions_excluded_vendor = events.mentions_excluded;

    // Snapshots per item in time order; the last one in a week wins.
    std::map<std::string, std::vector<const ListingSnapshot*>> snaps;
    for (const auto& s : inputs.listings) {
        if (config.excluded_vendors.count(s.vendor_id)) {
            ++summary.listings_excluded_vendor;
            continue;
        }
        snaps[s.item_id].push_back(&s);
    }
    for (auto& [item, list] : snaps) {
        std::sort(list.begin(), list.end(), [](const ListingSnapshot* a, const ListingSnapshot* b) {
            return std::tie(a->timestamp, a->snapshot_id) < std::tie(b->timestamp, b->snapshot_id);
        });
    }

    std::vector<ReviewEvent> in_window;
    for (const auto* r : events.reviews) in_window.push_back(*r);
    const auto sales = weekly_sales(in_window, window);

    std::map<std::string, std::pair<int, int>> review_span;
    for (const auto* r : events.reviews) {
        const int w = week_index(r->timestamp, window.start);
        auto [it, fresh] = review_span.emplace(r->item_id, std::make_pair(w, w));
        if (!fresh) {
            it->second.first = std::min(it->second.first, w);
            it->second.second = std::max(it->second.second, w);
        }
    }
    for (const auto& [item, span] : review_span) {
        if (!snaps.count(item)) ++summary.items_without_snapshots;
    }

    std::set<std::string> categories;
    for (const auto& [item, list] : snaps)
        for (const auto* s : list) categories.insert(s->volume_category);
    const std::string baseline = categories.empty() ? std::string() : *categories.begin();

    PanelTable& table = build.table;
    std::vector<const ListingSnapshot*> row_snap;
    std::vector<double> sales_col;
    for (const auto& [item, list] : snaps) {
        int lo = week_index(list.front()->timestamp, window.start);
        int hi = week_index(list.back()->timestamp, window.start);
        if (auto it = review_span.find(item); it != review_span.end()) {
            lo = std::min(lo, it->second.first);
            hi = std::max(hi, it->second.second);
        }
        lo = std::max(lo, 0);
        hi = std::min(hi, n_weeks - 1);
        std::size_t k = 0;
        for (int t = lo; t <= hi; ++t) {
            while (k + 1 < list.size() && week_index(list[k + 1]->timestamp, window.start) <= t) ++k;
            const auto* s = list[k];
            table.item_ids.push_back(item);
            table.vendor_ids.push_back(s->vendor_id);
            table.weeks.push_back(t);
            table.snapshot_ids.push_back(s->snapshot_id);
            row_snap.push_back(s);
            sales_col.push_back(static_cast<double>(sales.at(item, t)));
        }
    }
    table.set_column({"sales", ColumnRole::outcome, "count"}, std::move(sales_col));

    const auto reviews_idx = vendor_index(events.reviews, window, [](const ReviewEvent&) { return true; });
    const auto mentions_idx = vendor_index(events.mentions, window, [](const MentionEvent&) { return true; });
    auto by_vendor = [&](std::size_t r) { return table.vendor_ids[r]; };
    add_rolling(table, {"avg_vendor_review_sent", "log_n_reviews", "zero_reviews_flag"},
                lookup(table, reviews_idx, by_vendor));
    add_rolling(table, {"avg_vendor_forum_sent", "log_n_mentions", "zero_mentions_flag"},
                lookup(table, mentions_idx, by_vendor));

    const auto n = table.n_rows();
    std::vector<double> item_rating(n), item_missing(n), log_price(n), nfe(n), vendor_rating(n), vendor_missing(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto* s = row_snap[r];
        item_rating[r] = s->item_rating.value_or(0.0);
        item_missing[r] = s->item_rating ? 0.0 : 1.0;
        log_price[r] = std::log(s->price_btc);
        nfe[r] = s->nfe ? 1.0 : 0.0;
        vendor_rating[r] = s->vendor_rating.value_or(0.0);
        vendor_missing[r] = s->vendor_rating ? 0.0 : 1.0;
    }
    table.set_column({"item_rating", ColumnRole::control, "stars"}, std::move(item_rating));
    table.set_column({"item_rating_missing", ColumnRole::flag, "indicator"}, std::move(item_missing));
    table.set_column({"log_price", ColumnRole::control, "log BTC"}, std::move(log_price));
    table.set_column({"nfe_flag", ColumnRole::control, "indicator"}, std::move(nfe));
    table.set_column({"vendor_rating", ColumnRole::control, "stars"}, std::move(vendor_rating));
    table.set_column({"vendor_rating_missing", ColumnRole::flag, "indicator"}, std::move(vendor_missing));
    for (const auto& cat : categories) {
        if (cat == baseline) continue;
        std::vector<double> col(n);
        for (std::size_t r = 0; r < n; ++r) col[r] = row_snap[r]->volume_category == cat ? 1.0 : 0.0;
        table.set_column({category_column(cat), ColumnRole::control, "indicator"}, std::move(col));
    }

    if (!inputs.text_pcs.empty()) {
        const auto k = inputs.text_pcs.begin()->second.size();
        std::vector<std::vector<double>> pcs(k, std::vector<double>(n));
        for (std::size_t r = 0; r < n; ++r) {
            auto it = inputs.text_pcs.find(table.snapshot_ids[r]);
            if (it == inputs.text_pcs.end() || it->second.size() != k) {
                throw InvalidInput("no text components of length " + std::to_string(k) + " for snapshot " +
                                   table.snapshot_ids[r]);
            }
            for (std::size_t c = 0; c < k; ++c) pcs[c][r] = it->second[c];
        }
        for (std::size_t c = 0; c < k; ++c) {
            table.set_column({"pc_" + std::to_string(c + 1), ColumnRole::text_pc, ""}, std::move(pcs[c]));
        }
    }

    auto stats = summarize_panel(table);
    stats.n_weeks = n_weeks;
    stats.items_without_snapshots = summary.items_without_snapshots;
    stats.reviews_outside_window = summary.reviews_outside_window;
    stats.reviews_excluded_vendor = summary.reviews_excluded_vendor;
    stats.mentions_outside_window = summary.mentions_outside_window;
    stats.mentions_excluded_vendor = summary.mentions_excluded_vendor;
    stats.listings_excluded_vendor = summary.listings_excluded_vendor;
    summary = std::move(stats);
    return build;
}

PanelSummary summarize_panel(const PanelTable& table) {
    PanelSummary s;
    s.n_observations = table.n_rows();
    s.n_items = std::set<std::string>(table.item_ids.begin(), table.item_ids.end()).size();
    s.n_vendors = std::set<std::string>(table.vendor_ids.begin(), table.vendor_ids.end()).size();
    if (!table.weeks.empty()) {
        const auto [lo, hi] = std::minmax_element(table.weeks.begin(), table.weeks.end());
        s.n_weeks = *hi - *lo + 1;
    }
    for (const auto& info : table.columns()) {
        const auto& col = table.column(info.name);
        ColumnSummary c;
        c.name = info.name;
        if (!col.empty()) {
            const double m = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
            double ss = 0.0;
            for (double v : col) ss += (v - m) * (v - m);
            c.mean = m;
            c.sd = col.size() > 1 ? std::sqrt(ss / static_cast<double>(col.size() - 1)) : 0.0;
            const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
            c.min = *lo;
            c.max = *hi;
        }
        s.columns.push_back(std::move(c));
    }
    return s;
}

std::string PanelSummary::to_text() const {
    std::ostringstream out;
    char buf[160];
    out << "Number of Observations  " << n_observations << '\n';
    out << "Number of Items         " << n_items << '\n';
    out << "Number of Vendors       " << n_vendors << '\n';
    out << "Number of Weeks         " << n_weeks << '\n';
    out << '\n';
    std::snprintf(buf, sizeof buf, "%-28s %12s %12s %12s %12s\n", "Variable", "Mean", "SD", "Min", "Max");
    out << buf;
    for (const auto& c : columns) {
        if (c.name.rfind("pc_", 0) == 0) continue;  // text components are not tabulated
        std::snprintf(buf, sizeof buf, "%-28s %12.4f %12.4f %12.4f %12.4f\n", c.name.c_str(), c.mean, c.sd, c.min,
                      c.max);
        out << buf;
    }
    out << '\n';
    out << "items without snapshots (excluded): " << items_without_snapshots << '\n';
    out << "reviews outside window: " << reviews_outside_window << '\n';
    out << "mentions outside window: " << mentions_outside_window << '\n';
    out << "reviews / mentions / listings of excluded vendors: " << reviews_excluded_vendor << " / "
        << mentions_excluded_vendor << " / " << listings_excluded_vendor << '\n';
    return out.str();
}

std::string PanelSummary::to_json() const {
    nlohmann::json j;
    j["n_observations"] = n_observations;
    j["n_items"] = n_items;
    j["n_vendors"] = n_vendors;
    j["n_weeks"] = n_weeks;
    j["items_without_snapshots"] = items_without_snapshots;
    j["reviews_outside_window"] = reviews_outside_window;
    j["reviews_excluded_vendor"] = reviews_excluded_vendor;
    j["mentions_outside_window"] = mentions_outside_window;
    j["mentions_excluded_vendor"] = mentions_excluded_vendor;
    j["listings_excluded_vendor"] = listings_excluded_vendor;
    auto cols = nlohmann::json::array();
    for (const auto& c : columns) {
        cols.push_back({{"name", c.name}, {"mean", c.mean}, {"sd", c.sd}, {"min", c.min}, {"max", c.max}});
    }
    j["columns"] = cols;
    return j.dump(1);
}

void attach_interactions(PanelTable& panel, const InteractionSpec& spec, const PanelInputs& inputs,
                         const PanelConfig& config) {
    for (const auto& [a, b] : spec.products) {
        const auto& x = panel.column(a);
        const auto& y = panel.column(b);
        std::vector<double> p(x.size());
        for (std::size_t r = 0; r < x.size(); ++r) p[r] = x[r] * y[r];
        panel.set_column({a + ":" + b, ColumnRole::interaction, ""}, std::move(p));
    }

    const auto events = filter_events(inputs, config);
    const auto& window = config.window;
    auto by_vendor = [&](std::size_t r) { return panel.vendor_ids[r]; };

    if (spec.experience_split) {
        auto buyer_exp = [&](const ReviewEvent& e) { return e.buyer_deals && *e.buyer_deals >= spec.buyer_threshold; };
        auto author_exp = [&](const MentionEvent& e) {
            return e.author_post_count && *e.author_post_count >= spec.author_threshold;
        };
        const auto rev_exp = vendor_index(events.reviews, window, buyer_exp);
        const auto rev_inexp = vendor_index(events.reviews, window, [&](const ReviewEvent& e) { return !buyer_exp(e); });
        const auto for_exp = vendor_index(events.mentions, window, author_exp);
        const auto for_inexp =
            vendor_index(events.mentions, window, [&](const MentionEvent& e) { return !author_exp(e); });
        add_rolling(panel, {"avg_review_sent_experienced", "log_n_reviews_experienced", "zero_reviews_experienced_flag"},
                    lookup(panel, rev_exp, by_vendor));
        add_rolling(panel,
                    {"avg_review_sent_inexperienced", "log_n_reviews_inexperienced", "zero_reviews_inexperienced_flag"},
                    lookup(panel, rev_inexp, by_vendor));
        add_rolling(panel, {"avg_forum_sent_experienced", "log_n_mentions_experienced", "zero_mentions_experienced_flag"},
                    lookup(panel, for_exp, by_vendor));
        add_rolling(panel,
                    {"avg_forum_sent_inexperienced", "log_n_mentions_inexperienced", "zero_mentions_inexperienced_flag"},
                    lookup(panel, for_inexp, by_vendor));
    }

    if (spec.finalize_split) {
        const auto& nfe = panel.column("nfe_flag");
        for (const char* base : {"avg_vendor_review_sent", "avg_vendor_forum_sent"}) {
            const auto& s = panel.column(base);
            std::vector<double> with(s.size()), without(s.size());
            for (std::size_t r = 0; r < s.size(); ++r) {
                with[r] = s[r] * nfe[r];
                without[r] = s[r] * (1.0 - nfe[r]);
            }
            panel.set_column({std::string(base) + ":nfe", ColumnRole::interaction, ""}, std::move(with));
            panel.set_column({std::string(base) + ":fe", ColumnRole::interaction, ""}, std::move(without));
        }
    }

    if (spec.own_other) {
        // Key own-item events by vendor and item; other = vendor total minus own.
        std::vector<KeyedEvent> own_events;
        for (const auto* e : events.reviews) {
            own_events.push_back({e->vendor_id + '\x1f' + e->item_id, week_index(e->timestamp, window.start), e->score});
        }
        const RollingIndex own(own_events);
        const auto all = vendor_index(events.reviews, window, [](const ReviewEvent&) { return true; });
        std::vector<RollingValue> own_vals, other_vals;
        for (std::size_t r = 0; r < panel.n_rows(); ++r) {
            const auto t = panel.weeks[r];
            const auto [own_sum, own_n] = own.totals(panel.vendor_ids[r] + '\x1f' + panel.item_ids[r], t);
            const auto [all_sum, all_n] = all.totals(panel.vendor_ids[r], t);
            RollingValue o{own_n ? std::optional<double>(own_sum / static_cast<double>(own_n)) : std::nullopt, own_n};
            const auto other_n = all_n - own_n;
            RollingValue x{other_n ? std::optional<double>((all_sum - own_sum) / static_cast<double>(other_n))
                                   : std::nullopt,
                           other_n};
            own_vals.push_back(o);
            other_vals.push_back(x);
        }
        add_rolling(panel, {"avg_own_review_sent", "log_n_own_reviews", "zero_own_reviews_flag"}, own_vals);
        add_rolling(panel, {"avg_other_review_sent", "log_n_other_reviews", "zero_other_reviews_flag"}, other_vals);
    }
}

}  // namespace textdemand
