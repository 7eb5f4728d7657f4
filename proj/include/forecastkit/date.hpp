#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "forecastkit/common.hpp"

namespace fk {

/// Timezone-free calendar date stored as days since 1970-01-01.
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(long days_since_epoch) : days_(days_since_epoch) {}

    static Date from_ymd(int y, unsigned m, unsigned d) {
        const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                              std::chrono::day{d}};
        if (!ymd.ok())
            fail("invalid calendar date " + std::to_string(y) + "-" + std::to_string(m) + "-" +
                 std::to_string(d));
        return Date(std::chrono::sys_days{ymd}.time_since_epoch().count());
    }

    /// Accepts "YYYY-MM-DD", optionally followed by a time part ("T..." or " ...")
    /// which is ignored.
    static Date parse(std::string_view s) {
        if (s.size() < 10 || s[4] != '-' || s[7] != '-' ||
            (s.size() > 10 && s[10] != 'T' && s[10] != ' '))
            fail("malformed ISO date '" + std::string(s) + "'");
        int y = 0;
        unsigned m = 0, d = 0;
        for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
            if (s[i] < '0' || s[i] > '9') fail("malformed ISO date '" + std::string(s) + "'");
        y = std::stoi(std::string(s.substr(0, 4)));
        m = static_cast<unsigned>(std::stoi(std::string(s.substr(5, 2))));
        d = static_cast<unsigned>(std::stoi(std::string(s.substr(8, 2))));
        return from_ymd(y, m, d);
    }

    constexpr long days() const { return days_; }

    std::chrono::year_month_day ymd() const {
        return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days_}}};
    }

    std::string iso() const {
        const auto v = ymd();
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(v.year()),
                      static_cast<unsigned>(v.month()), static_cast<unsigned>(v.day()));
        return buf;
    }

    /// Ordinal day of year in 1..365; Dec 31 of a leap year (366) folds onto 365.
    int day_of_year() const {
        const auto v = ymd();
        const std::chrono::sys_days jan1{v.year() / std::chrono::January / 1};
        const long ordinal = days_ - jan1.time_since_epoch().count() + 1;
        return static_cast<int>(ordinal > 365 ? 365 : ordinal);
    }

    constexpr Date operator+(long n) const { return Date(days_ + n); }
    constexpr Date operator-(long n) const { return Date(days_ - n); }
    constexpr long operator-(Date o) const { return days_ - o.days_; }

    constexpr auto operator<=>(const Date&) const = default;

private:
    long days_ = 0;
};

}  // namespace fk
