#pragma once

#include <cmath>
#include <vector>

#include "stockcnn/chart.hpp"
#include "stockcnn/errors.hpp"
#include "stockcnn/market_data.hpp"

namespace stockcnn {

// Sub-map count for an n-day window: smallest C with 5^C >= n. Computed in
// integer arithmetic; floating log would wobble at exact powers.
inline int num_submaps(int n) {
    if (n <= 0 || n % 5 != 0) throw DomainError("window length must be a positive multiple of 5");
    int c = 1;
    long long power = 5;
    while (power < n) {
        power *= 5;
        ++c;
    }
    return c;
}

// Days merged per unit of sub-map i (1-based): min(5^(i-1), n/5).
inline int resolution(int i, int n) {
    const int c = num_submaps(n);
    if (i < 1 || i > c)
        throw DomainError("sub-map index " + std::to_string(i) + " out of range 1.." +
                          std::to_string(c));
    long long power = 1;
    for (int k = 1; k < i; ++k) power *= 5;
    return int(std::min<long long>(power, n / 5));
}

// Per-sub-map feature weights: 0.5 for the most recent map, halving for each
// coarser map, with the last map repeating the previous weight so the total is
// exactly 1 (e.g. [0.5, 0.25, 0.25] for three maps). The degenerate single-map
// case takes the whole weight.
inline std::vector<double> feature_weights(int c) {
    if (c < 1) throw DomainError("sub-map count must be >= 1");
    if (c == 1) return {1.0};
    std::vector<double> w(static_cast<std::size_t>(c));
    w[0] = 0.5;
    for (int i = 2; i <= c - 1; ++i) w[size_t(i - 1)] = 0.5 / std::pow(2.0, i - 1);
    w[size_t(c - 1)] = 0.5 / std::pow(2.0, c - 2);
    return w;
}

// Splits an integer total into per-map feature dimensions proportional to the
// weights, exactly: floor first, then distribute the remainder by largest
// fractional part (ties to the earlier map).
inline std::vector<int> weighted_dims(const std::vector<double>& weights, int total) {
    std::vector<int> dims(weights.size());
    std::vector<std::pair<double, size_t>> frac;
    int used = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        double exact = weights[i] * total;
        dims[i] = int(std::floor(exact));
        used += dims[i];
        frac.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
    });
    for (int k = 0; k < total - used; ++k) dims[frac[size_t(k)].second] += 1;
    return dims;
}

// One aggregated 5-unit window plus its resolution.
struct SubMap {
    int resolution = 1;
    std::vector<OhlctUnit> units;  // exactly 5; dated only when resolution == 1
};

struct SubMapSet {
    int n = 0;
    int C = 0;
    std::vector<SubMap> maps;
    std::vector<double> weights;
};

// Decomposes the most recent n days into C sub-maps. Sub-map i covers the most
// recent 5*M_i days in 5 consecutive blocks of M_i days: open of the block's
// first day, max high, min low, close of the last day, summed turnover, and
// the last day's ma5. The resolution-1 map keeps its dates for separators.
inline SubMapSet decompose(const std::vector<DailyBar>& window, int n) {
    if (int(window.size()) != n)
        throw DomainError("decompose expects exactly " + std::to_string(n) + " days, got " +
                          std::to_string(window.size()));
    const int c = num_submaps(n);

    SubMapSet set;
    set.n = n;
    set.C = c;
    set.weights = feature_weights(c);
    for (int i = 1; i <= c; ++i) {
        const int m = resolution(i, n);
        SubMap sub;
        sub.resolution = m;
        const int start = n - 5 * m;  // right-aligned coverage
        for (int j = 0; j < 5; ++j) {
            const int b0 = start + j * m;
            const int b1 = b0 + m - 1;
            const DailyBar& first = window[size_t(b0)];
            const DailyBar& last = window[size_t(b1)];
            if (!last.ma5) throw DomainError("bar " + last.date.to_string() + " lacks ma5");
            OhlctUnit u;
            u.open = first.open;
            u.close = last.close;
            u.high = first.high;
            u.low = first.low;
            u.turnover = 0;
            for (int k = b0; k <= b1; ++k) {
                u.high = std::max(u.high, window[size_t(k)].high);
                u.low = std::min(u.low, window[size_t(k)].low);
                u.turnover += window[size_t(k)].turnover_rate;
            }
            u.ma5 = *last.ma5;
            if (m == 1) u.date = last.date;
            sub.units.push_back(u);
        }
        set.maps.push_back(std::move(sub));
    }
    return set;
}

// Renders every sub-map of a sample window.
inline std::vector<ChartImage> render_submaps(const SubMapSet& set, const ChartGeometry& geom) {
    std::vector<ChartImage> images;
    images.reserve(set.maps.size());
    for (const auto& sub : set.maps) images.push_back(render_ohlct(sub.units, geom, sub.resolution));
    return images;
}

}  // namespace stockcnn
