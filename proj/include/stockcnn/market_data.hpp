#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stockcnn/dates.hpp"
#include "stockcnn/errors.hpp"
#include "stockcnn/rng.hpp"

namespace stockcnn {

// One trading day of a single symbol. Prices are assumed pre-adjusted.
struct DailyBar {
    Date date;
    double open = 0;
    double high = 0;
    double low = 0;
    double close = 0;
    double volume = 0;
    double turnover_rate = 0;
    std::optional<double> ma5;  // mean of this and the prior 4 closes

    void validate() const {
        if (!(open > 0 && high > 0 && low > 0 && close > 0))
            throw ValidationError("non-positive price on " + date.to_string());
        if (low > std::min(open, close) || high < std::max(open, close))
            throw ValidationError("OHLC invariant violated on " + date.to_string());
        if (volume < 0)
            throw ValidationError("negative volume on " + date.to_string());
        if (turnover_rate < 0)
            throw ValidationError("negative turnover_rate on " + date.to_string());
    }
};

// A labeled window: the n most recent bars for the image branch, the 30-bar
// sequence window for the sequence branch, and the 5-day-forward labels.
struct Sample {
    std::string symbol;
    std::vector<DailyBar> window;      // n bars, ascending dates, ends at day t
    std::vector<DailyBar> seq_window;  // 30 bars ending at day t
    double seq_prev_close = 0;         // close of the bar before seq_window[0]
    int y = 0;                         // 1 iff r > 0
    double r = 0;                      // close-to-close return over the horizon
    Date label_date;                   // date of the bar at t + horizon

    const Date& end_date() const { return window.back().date; }
};

struct DatasetSplit {
    std::vector<Sample> train, validation, test;
    Date train_end, val_end;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "symbol,date,open,high,low,close,volume,turnover_rate";

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_number(const std::string& s, const char* field, int line_no) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        if (!std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad " + std::string(field) +
                         " value '" + s + "'");
    }
}

}  // namespace detail

// Computes the 5-close rolling mean in place; bars before the 5th keep ma5 absent.
inline void compute_ma5(std::vector<DailyBar>& bars) {
    for (size_t i = 0; i < bars.size(); ++i) {
        if (i + 1 >= 5) {
            double s = 0;
            for (size_t k = i + 1 - 5; k <= i; ++k) s += bars[k].close;
            bars[i].ma5 = s / 5.0;
        } else {
            bars[i].ma5.reset();
        }
    }
}

// Parses the pipeline's CSV schema (see kCsvHeader) into per-symbol bar series,
// sorted ascending by date with ma5 filled in. Rows may arrive in any order;
// a duplicate date within one symbol is an error.
inline std::map<std::string, std::vector<DailyBar>> parse_bars(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;

    if (!std::getline(in, line)) throw ParseError("empty CSV input");
    ++line_no;
    {
        auto fields = detail::split_fields(line);
        auto expect = detail::split_fields(kCsvHeader);
        if (fields != expect)
            throw ParseError("line 1: header mismatch, expected '" + std::string(kCsvHeader) +
                             "'");
    }

    std::map<std::string, std::vector<DailyBar>> by_symbol;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto f = detail::split_fields(line);
        if (f.size() != 8)
            throw ParseError("line " + std::to_string(line_no) + ": expected 8 fields, got " +
                             std::to_string(f.size()));
        DailyBar bar;
        try {
            bar.date = Date::parse(f[1]);
        } catch (const Error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        bar.open = detail::parse_number(f[2], "open", line_no);
        bar.high = detail::parse_number(f[3], "high", line_no);
        bar.low = detail::parse_number(f[4], "low", line_no);
        bar.close = detail::parse_number(f[5], "close", line_no);
        bar.volume = detail::parse_number(f[6], "volume", line_no);
        bar.turnover_rate = detail::parse_number(f[7], "turnover_rate", line_no);
        bar.validate();
        by_symbol[f[0]].push_back(bar);
    }

    for (auto& [symbol, bars] : by_symbol) {
        std::stable_sort(bars.begin(), bars.end(),
                         [](const DailyBar& a, const DailyBar& b) { return a.date < b.date; });
        for (size_t i = 1; i < bars.size(); ++i)
            if (bars[i].date == bars[i - 1].date)
                throw ValidationError("duplicate date " + bars[i].date.to_string() +
                                      " for symbol " + symbol);
        compute_ma5(bars);
    }
    return by_symbol;
}

inline std::string bars_to_csv(const std::map<std::string, std::vector<DailyBar>>& by_symbol) {
    std::ostringstream out;
    out << kCsvHeader << '\n';
    char buf[256];
    for (const auto& [symbol, bars] : by_symbol) {
        for (const DailyBar& b : bars) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.2f,%.8f",
                          symbol.c_str(), b.date.to_string().c_str(), b.open, b.high, b.low,
                          b.close, b.volume, b.turnover_rate);
            out << buf << '\n';
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Labeling
// ---------------------------------------------------------------------------

// A-share price ceiling test: the exchange rounds the limit price to the cent.
inline bool is_limit_up(double prev_close, double close, double limit = 0.10) {
    if (!(prev_close > 0) || !(close > 0))
        throw DomainError("is_limit_up requires positive prices");
    if (!(limit > 0 && limit < 1)) throw DomainError("limit ratio must lie in (0,1)");
    double limit_price = double(std::llround(prev_close * (1.0 + limit) * 100.0)) / 100.0;
    return close >= limit_price;
}

struct SampleOptions {
    int horizon = 5;          // trading days ahead for the label
    double limit_ratio = 0.10;
    int seq_len = 30;
    int stride = 1;           // keep every stride-th eligible end day
};

// Builds one sample per eligible end day t. A day is eligible when the full
// n-day window, the 30-day sequence window plus its leading reference bar, and
// the label bar all exist, every bar involved carries ma5, and the final bar
// is not limit-up.
inline std::vector<Sample> make_samples(const std::string& symbol,
                                        const std::vector<DailyBar>& bars, int n,
                                        const SampleOptions& opt = {}) {
    if (n <= 0 || n % 5 != 0) throw DomainError("window length must be a positive multiple of 5");
    if (opt.horizon < 1) throw DomainError("horizon must be >= 1");
    if (opt.stride < 1) throw DomainError("stride must be >= 1");

    std::vector<Sample> out;
    const int N = int(bars.size());
    int emitted_index = 0;
    for (int t = 0; t + opt.horizon < N; ++t) {
        if (t - n + 1 < 0 || t - opt.seq_len < 0) continue;

        bool ok = true;
        for (int k = t - std::max(n, opt.seq_len) + 1; k <= t && ok; ++k)
            if (!bars[k].ma5) ok = false;
        if (!ok) continue;

        if (t >= 1 && is_limit_up(bars[t - 1].close, bars[t].close, opt.limit_ratio)) continue;

        if (emitted_index++ % opt.stride != 0) continue;

        Sample s;
        s.symbol = symbol;
        s.window.assign(bars.begin() + (t - n + 1), bars.begin() + t + 1);
        s.seq_window.assign(bars.begin() + (t - opt.seq_len + 1), bars.begin() + t + 1);
        s.seq_prev_close = bars[t - opt.seq_len].close;
        s.r = (bars[t + opt.horizon].close - bars[t].close) / bars[t].close;
        s.y = s.r > 0 ? 1 : 0;
        s.label_date = bars[t + opt.horizon].date;
        out.push_back(std::move(s));
    }
    return out;
}

// Chronological split by each sample's final window date. A sample whose label
// date crosses its split's boundary is dropped entirely, never reassigned.
inline DatasetSplit split_by_date(std::vector<Sample> samples, Date train_end, Date val_end) {
    if (!(train_end < val_end)) throw DomainError("train_end must precede val_end");
    DatasetSplit split;
    split.train_end = train_end;
    split.val_end = val_end;
    for (auto& s : samples) {
        const Date end = s.end_date();
        if (end <= train_end) {
            if (s.label_date <= train_end) split.train.push_back(std::move(s));
        } else if (end <= val_end) {
            if (s.label_date <= val_end) split.validation.push_back(std::move(s));
        } else {
            split.test.push_back(std::move(s));
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Synthetic series
// ---------------------------------------------------------------------------

struct DriftSegment {
    int days = 0;          // segment length in trading days
    double drift = 0.0;    // per-day multiplicative drift
};

struct SynthParams {
    std::uint64_t seed = 1;
    int days = 600;
    Date start = Date(2020, 1, 6);
    double init_price = 50.0;

    // "walk": geometric random walk over the drift segments.
    // "planted": 5-day momentum rule, sign(r_t) == sign(close_t - ma5_t).
    std::string mode = "walk";

    std::vector<DriftSegment> segments;  // walk mode; empty = one zero-drift segment
    double volatility = 0.01;            // walk mode daily log-return sigma

    double momentum = 0.03;    // planted mode 5-day move magnitude
    double band = 0.03;        // planted mode cap on |close/ma5 - 1| before damping
    double damped_momentum = 0.002;
    double noise = 0.0;        // planted mode extra sigma on the 5-day move
    double day_cap = 0.08;     // planted mode adjacent-day ratio cap; below the
                               //   limit ratio so up-state days stay tradable
    double spike_lo = 0.0;     // optional occasional large-move range; keep below
    double spike_hi = 0.0;     //   the limit ratio or the landing days get excluded

    double intraday_range = 0.004;  // high/low extension sigma (|N| draws)
    double open_gap = 0.002;        // open-vs-prior-close gap sigma
    double turnover_base = 0.05;
    double turnover_amp = 0.03;
    double float_shares = 1e8;      // volume = turnover_rate * float_shares
    double holiday_prob = 0.0;      // chance a weekday is skipped (mid-week gap)
};

// Deterministic synthetic daily series. The planted mode builds the close path
// so that the 5-day forward return is momentum * sign(close_t - ma5_t) exactly
// when noise = 0 (magnitude damped once the price strays from its ma5 band, so
// interleaved 5-day chains cannot run away from each other).
inline std::vector<DailyBar> synth_series(const SynthParams& p) {
    if (p.days < 80) throw DomainError("synthetic series needs days >= 80");
    if (p.mode != "walk" && p.mode != "planted")
        throw DomainError("unknown synth mode '" + p.mode + "'");

    Rng rng(p.seed);

    std::vector<Date> calendar;
    calendar.reserve(p.days);
    Date d = p.start;
    while (d.is_weekend()) d = d.plus_days(1);
    while (int(calendar.size()) < p.days) {
        if (p.holiday_prob > 0 && rng.uniform() < p.holiday_prob && !calendar.empty()) {
            d = next_trading_day(d);
            continue;
        }
        calendar.push_back(d);
        d = next_trading_day(d);
    }

    // Close path.
    std::vector<double> close(p.days);
    if (p.mode == "walk") {
        std::vector<double> drift(p.days, 0.0);
        int t = 0;
        for (const auto& seg : p.segments)
            for (int k = 0; k < seg.days && t < p.days; ++k) drift[t++] = seg.drift;
        close[0] = p.init_price;
        for (int i = 1; i < p.days; ++i) {
            double step = drift[i] + p.volatility * rng.gaussian();
            close[i] = close[i - 1] * std::exp(step);
        }
    } else {
        // Seed the first 10 days with a mild walk, then apply the 5-day rule:
        // close[t] = close[t-5] * (1 + sign * mag), sign taken from day t-5's
        // close-vs-ma5 state. The sign is pinned; the magnitude is free, so it
        // is randomized per step and periodically spiked. The spikes keep the
        // five interleaved day-offset chains dispersed, which is what makes the
        // close-vs-ma5 state keep flipping instead of locking into one regime.
        close[0] = p.init_price;
        for (int i = 1; i < std::min(10, p.days); ++i)
            close[i] = close[i - 1] * (1.0 + 0.005 * rng.gaussian());
        auto ma5_at = [&](int t) {
            double s = 0;
            for (int k = t - 4; k <= t; ++k) s += close[k];
            return s / 5.0;
        };
        int next_spike = 15 + int(rng.below(15));
        for (int t = 10; t < p.days; ++t) {
            int base = t - 5;
            double ma = ma5_at(base);
            double sign = close[base] > ma ? 1.0 : -1.0;
            double dev = close[base] / ma;
            bool outside = (sign > 0 && dev > 1.0 + p.band) || (sign < 0 && dev < 1.0 - p.band);
            double mag =
                outside ? p.damped_momentum : p.momentum * rng.uniform(0.6, 1.4);
            if (p.spike_hi > 0 && t >= next_spike) {
                mag = std::max(mag, rng.uniform(p.spike_lo, p.spike_hi));
                next_spike = t + 15 + int(rng.below(15));
            }
            if (p.noise > 0) {
                // Noise may shrink or grow the move but never flips its sign.
                double eps = p.noise * rng.gaussian();
                mag = std::max(mag * 0.05, mag + eps);
            }
            double v = close[base] * (1.0 + sign * mag);
            // Clamp toward yesterday's close so the interleaved chains cannot
            // disperse past the day cap, but never let the clamp flip the
            // mandated sign of the 5-day move.
            v = std::clamp(v, close[t - 1] * (1.0 - p.day_cap),
                           close[t - 1] * (1.0 + p.day_cap));
            if (sign > 0 && v <= close[base]) v = close[base] * (1.0 + 1e-4);
            if (sign < 0 && v >= close[base]) v = close[base] * (1.0 - 1e-4);
            close[t] = v;
        }
    }

    bool deterministic_path = (p.mode == "walk" && p.volatility == 0.0);
    std::vector<DailyBar> bars(p.days);
    for (int i = 0; i < p.days; ++i) {
        DailyBar& b = bars[i];
        b.date = calendar[i];
        b.close = close[i];
        double prev = i > 0 ? close[i - 1] : close[0];
        double gap = (p.mode == "planted" && p.noise == 0.0) || deterministic_path
                         ? 0.0
                         : p.open_gap * rng.gaussian();
        b.open = i > 0 ? prev * (1.0 + gap) : close[0];
        double hi_ext = 0.0, lo_ext = 0.0;
        if (!((p.mode == "planted" && p.noise == 0.0) || deterministic_path)) {
            hi_ext = p.intraday_range * std::abs(rng.gaussian());
            lo_ext = p.intraday_range * std::abs(rng.gaussian());
        }
        b.high = std::max(b.open, b.close) * (1.0 + hi_ext);
        b.low = std::min(b.open, b.close) * (1.0 - lo_ext);
        b.turnover_rate = p.turnover_base + p.turnover_amp * rng.uniform();
        b.volume = b.turnover_rate * p.float_shares;
        b.validate();
    }
    compute_ma5(bars);
    return bars;
}

// Convenience universe generator: `count` symbols named S000, S001, ... with
// per-symbol seeds derived from the base seed.
inline std::map<std::string, std::vector<DailyBar>> synth_universe(const SynthParams& base,
                                                                   int count) {
    std::map<std::string, std::vector<DailyBar>> out;
    for (int i = 0; i < count; ++i) {
        SynthParams p = base;
        p.seed = base.seed * 1000003ull + std::uint64_t(i);
        char name[16];
        std::snprintf(name, sizeof(name), "S%03d", i);
        out[name] = synth_series(p);
    }
    return out;
}

}  // namespace stockcnn
