#include "textdemand/dates.hpp"

#include <charconv>
#include <cstdio>

#include "textdemand/errors.hpp"

namespace textdemand {

namespace {

int parse_int(std::string_view s, std::string_view whole) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw InvalidInput("malformed date '" + std::string(whole) + "'");
    }
    return v;
}

}  // namespace

Date parse_date(std::string_view text) {
    if (text.size() < 10 || text[4] != '-' || text[7] != '-' ||
        (text.size() > 10 && text[10] != 'T' && text[10] != ' ')) {
        throw InvalidInput("malformed date '" + std::string(text) + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{parse_int(text.substr(0, 4), text)},
                                          std::chrono::month{static_cast<unsigned>(parse_int(text.substr(5, 2), text))},
                                          std::chrono::day{static_cast<unsigned>(parse_int(text.substr(8, 2), text))}};
    if (!ymd.ok()) throw InvalidInput("invalid calendar date '" + std::string(text) + "'");
    return Date{ymd};
}

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int week_index(Date d, Date start) {
    const auto days = (d - start).count();
    return static_cast<int>(days >= 0 ? days / 7 : -((-days + 6) / 7));
}

}  // namespace textdemand
