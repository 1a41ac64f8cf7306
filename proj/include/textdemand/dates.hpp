#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace textdemand {

using Date = std::chrono::sys_days;

/// Parses "YYYY-MM-DD", optionally followed by a time part ("T..." or " ..."),
/// which is discarded. Throws InvalidInput on malformed or impossible dates.
Date parse_date(std::string_view text);

std::string format_date(Date d);

/// Index of the 7-day bin containing `d`, counted from `start` (bin 0).
/// Negative for dates before `start`.
int week_index(Date d, Date start);

/// Half-open-by-day sample window [start, end]; both ends inclusive.
struct SampleWindow {
    Date start{};
    Date end{};

    bool contains(Date d) const { return d >= start && d <= end; }
    int n_weeks() const { return week_index(end, start) + 1; }
};

}  // namespace textdemand
