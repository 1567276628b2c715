#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "stockcnn/errors.hpp"
#include "stockcnn/market_data.hpp"

namespace stockcnn {

inline constexpr int kSeqDays = 30;
inline constexpr int kSeqFeatures = 12;

// Column order of the sequence matrix.
enum SeqColumn : int {
    kColClose = 0,
    kColOpen,
    kColHigh,
    kColLow,
    kColMa5,
    kColTurnover,
    kColMonth,
    kColWeek,
    kColCloseRatio,
    kColOpenRatio,
    kColHighRatio,
    kColLowRatio,
};

struct SequenceMatrix {
    std::array<double, kSeqDays * kSeqFeatures> values{};
    double anchor_close = 0;  // last day's raw close, the price normalizer

    double at(int day, int col) const { return values[size_t(day) * kSeqFeatures + col]; }
    double& at(int day, int col) { return values[size_t(day) * kSeqFeatures + col]; }
};

// Day-over-day price ratios relative to the prior close.
struct PriceRatios {
    double close_ratio, open_ratio, high_ratio, low_ratio;
};

inline PriceRatios compute_ratios(double prev_close, double open, double high, double low,
                                  double close) {
    if (!(prev_close > 0)) throw DomainError("prev_close must be positive");
    return PriceRatios{(close - prev_close) / prev_close, (open - prev_close) / prev_close,
                       (high - prev_close) / prev_close, (low - prev_close) / prev_close};
}

// Builds the 30x12 matrix for one sample: prices self-normalized by the final
// close, calendar features scaled into (0,1], turnover passed through, and
// ratio features against each day's prior close (prev_close covers day 0).
inline SequenceMatrix build_matrix(const std::vector<DailyBar>& seq_window, double prev_close) {
    if (int(seq_window.size()) != kSeqDays)
        throw FeatureError("sequence window must be exactly " + std::to_string(kSeqDays) +
                           " bars, got " + std::to_string(seq_window.size()));
    if (!(prev_close > 0)) throw DomainError("prev_close must be positive");

    const double anchor = seq_window.back().close;
    if (!(anchor > 0)) throw FeatureError("final close must be positive");

    SequenceMatrix m;
    m.anchor_close = anchor;
    for (int d = 0; d < kSeqDays; ++d) {
        const DailyBar& bar = seq_window[size_t(d)];
        if (!bar.ma5)
            throw FeatureError("bar " + bar.date.to_string() + " lacks ma5");
        if (bar.date.is_weekend())
            throw ValidationError("non-trading weekday in data: " + bar.date.to_string());

        m.at(d, kColClose) = bar.close / anchor;
        m.at(d, kColOpen) = bar.open / anchor;
        m.at(d, kColHigh) = bar.high / anchor;
        m.at(d, kColLow) = bar.low / anchor;
        m.at(d, kColMa5) = *bar.ma5 / anchor;
        m.at(d, kColTurnover) = bar.turnover_rate;
        m.at(d, kColMonth) = bar.date.month() / 12.0;
        m.at(d, kColWeek) = bar.date.iso_weekday() / 5.0;

        const double pc = d == 0 ? prev_close : seq_window[size_t(d - 1)].close;
        PriceRatios r = compute_ratios(pc, bar.open, bar.high, bar.low, bar.close);
        m.at(d, kColCloseRatio) = r.close_ratio;
        m.at(d, kColOpenRatio) = r.open_ratio;
        m.at(d, kColHighRatio) = r.high_ratio;
        m.at(d, kColLowRatio) = r.low_ratio;
    }
    for (double v : m.values)
        if (!std::isfinite(v)) throw FeatureError("non-finite sequence feature");
    return m;
}

inline SequenceMatrix build_matrix(const Sample& sample) {
    return build_matrix(sample.seq_window, sample.seq_prev_close);
}

}  // namespace stockcnn
