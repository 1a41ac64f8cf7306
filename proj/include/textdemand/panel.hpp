#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "textdemand/dates.hpp"
#include "textdemand/io.hpp"
#include "textdemand/panel_table.hpp"

namespace textdemand {

/// A scored review as the panel sees it.
struct ReviewEvent {
    std::string doc_id;
    std::string item_id;
    std::string vendor_id;
    Date timestamp{};
    double score = 0.0;  // standardized sentiment, 0 if uninformative
    std::optional<int> buyer_deals;  // buyer's past purchases
};

/// A scored vendor mention.
struct MentionEvent {
    std::int64_t post_id = 0;
    std::string vendor_id;
    Date timestamp{};
    double score = 0.0;
    std::optional<int> author_post_count;
};

struct WeeklySales {
    std::map<std::pair<std::string, int>, int> counts;  // (item, week) -> reviews
    std::size_t in_window = 0;
    std::size_t outside_window = 0;

    int at(const std::string& item, int week) const;
};

/// Review counts per item per 7-day bin from the window start.
WeeklySales weekly_sales(std::span<const ReviewEvent> reviews, const SampleWindow& window);

struct RollingValue {
    std::optional<double> mean;  // missing when count == 0
    std::size_t count = 0;
};

/// A week-stamped score stream grouped by key (vendor, or vendor and item).
struct KeyedEvent {
    std::string key;
    int week = 0;
    double score = 0.0;
};

/// Prefix sums per key over weeks, answering "mean and count of the events
/// strictly before week t" in O(log n).
class RollingIndex {
public:
    RollingIndex() = default;
    explicit RollingIndex(std::span<const KeyedEvent> events);

    RollingValue at(const std::string& key, int t) const;
    /// Raw (sum, count) strictly before t.
    std::pair<double, std::size_t> totals(const std::string& key, int t) const;

private:
    struct Series {
        std::vector<int> weeks;      // sorted
        std::vector<double> prefix;  // prefix[i] = sum of the first i scores
    };
    std::unordered_map<std::string, Series> series_;
};

/// Direct form for a single vendor: mean and count of events with week < t.
RollingValue rolling_vendor_stats(std::span<const KeyedEvent> events, const std::string& vendor, int t);

struct PanelConfig {
    SampleWindow window;
    std::unordered_set<std::string> excluded_vendors;  // e.g. vendors named like English words
};

struct PanelInputs {
    std::vector<ReviewEvent> reviews;
    std::vector<MentionEvent> mentions;
    std::vector<ListingSnapshot> listings;
    std::map<std::string, std::vector<double>> text_pcs;  // snapshot_id -> component scores
};

struct ColumnSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Counts and moments in the layout of a descriptive-statistics table.
struct PanelSummary {
    std::size_t n_observations = 0;
    std::size_t n_items = 0;
    std::size_t n_vendors = 0;
    int n_weeks = 0;
    std::size_t items_without_snapshots = 0;
    std::size_t reviews_outside_window = 0;
    std::size_t reviews_excluded_vendor = 0;
    std::size_t mentions_outside_window = 0;
    std::size_t mentions_excluded_vendor = 0;
    std::size_t listings_excluded_vendor = 0;
    std::vector<ColumnSummary> columns;

    std::string to_text() const;
    std::string to_json() const;
};

struct PanelBuild {
    PanelTable table;
    PanelSummary summary;
};

/// One row per observed item-week. An item is observed from the earlier of
/// its first snapshot and first review to the later of its last snapshot
/// and last review, inside the window. Listing attributes come from the
/// latest snapshot at or before the week (latest timestamp wins within a
/// week); weeks before the first snapshot use the first snapshot.
/// Rolling vendor covariates use in-window events strictly before the week.
PanelBuild assemble_panel(const PanelInputs& inputs, const PanelConfig& config);

/// Summary statistics over the current columns of a table.
PanelSummary summarize_panel(const PanelTable& table);

struct InteractionSpec {
    std::vector<std::pair<std::string, std::string>> products;  // adds column "a:b"
    bool experience_split = false;  // buyers >= buyer_threshold deals, authors >= author_threshold posts
    int buyer_threshold = 10;
    int author_threshold = 200;
    bool finalize_split = false;  // sentiment x nfe_flag and x (1 - nfe_flag)
    bool own_other = false;       // own-item vs other-items review sentiment
};

/// Adds derived columns. Event-based splits need the same inputs the panel
/// was assembled from. Throws InvalidInput for unknown column names.
void attach_interactions(PanelTable& panel, const InteractionSpec& spec, const PanelInputs& inputs,
                         const PanelConfig& config);

}  // namespace textdemand
