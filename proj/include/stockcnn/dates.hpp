#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>

#include "stockcnn/errors.hpp"

namespace stockcnn {

// Calendar date. Thin wrapper over std::chrono's civil calendar that adds
// ISO-8601 parsing/formatting and the couple of queries the pipeline needs
// (weekday index, calendar-day gaps).
class Date {
  public:
    Date() : days_(0) {}
    Date(int year, int month, int day) {
        namespace chr = std::chrono;
        chr::year_month_day ymd{chr::year{year}, chr::month{unsigned(month)},
                                chr::day{unsigned(day)}};
        if (!ymd.ok())
            throw ValidationError("invalid calendar date: " + format_ymd(year, month, day));
        days_ = chr::sys_days{ymd}.time_since_epoch().count();
    }

    // Parses strict ISO-8601 YYYY-MM-DD.
    static Date parse(const std::string& text) {
        int y = 0, m = 0, d = 0;
        char trailing = 0;
        if (std::sscanf(text.c_str(), "%4d-%2d-%2d%c", &y, &m, &d, &trailing) != 3 ||
            text.size() != 10)
            throw ParseError("unparseable date '" + text + "' (expected YYYY-MM-DD)");
        return Date(y, m, d);
    }

    std::string to_string() const {
        auto ymd = ymd_();
        return format_ymd(int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
    }

    int year() const { return int(ymd_().year()); }
    int month() const { return int(unsigned(ymd_().month())); }
    int day() const { return int(unsigned(ymd_().day())); }

    // Monday=1 .. Sunday=7.
    int iso_weekday() const {
        std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{days_}}};
        return int(wd.iso_encoding());
    }
    bool is_weekend() const { return iso_weekday() >= 6; }

    Date plus_days(int n) const {
        Date r;
        r.days_ = days_ + n;
        return r;
    }
    // Calendar days from *this to other (positive when other is later).
    int days_until(const Date& other) const { return int(other.days_ - days_); }

    auto operator<=>(const Date&) const = default;

  private:
    std::chrono::year_month_day ymd_() const {
        return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days_}}};
    }
    static std::string format_ymd(int y, int m, int d) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
        return buf;
    }

    long days_;  // days since 1970-01-01
};

// Next weekday strictly after d (skips Saturday/Sunday).
inline Date next_trading_day(Date d) {
    do {
        d = d.plus_days(1);
    } while (d.is_weekend());
    return d;
}

}  // namespace stockcnn
