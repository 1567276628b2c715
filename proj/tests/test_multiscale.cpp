#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "stockcnn/multiscale.hpp"
#include "stockcnn/rng.hpp"

using namespace stockcnn;

namespace {

// Independent brute-force aggregator, written directly from the block
// formulas over global day indices (1-based j over 5 blocks of M_i days,
// right-aligned to the window end).
struct BruteUnit {
    double open, high, low, close, turnover, ma5_last;
};

BruteUnit brute_block(const std::vector<DailyBar>& w, int n, int m, int j) {
    int start = (n - 5 * m) + (j - 1) * m;  // 0-based first day of block j
    BruteUnit u{};
    u.open = w[size_t(start)].open;
    u.close = w[size_t(start + m - 1)].close;
    double hi = -1e300, lo = 1e300, to = 0;
    for (int k = start; k < start + m; ++k) {
        hi = std::max(hi, w[size_t(k)].high);
        lo = std::min(lo, w[size_t(k)].low);
        to += w[size_t(k)].turnover_rate;
    }
    u.high = hi;
    u.low = lo;
    u.turnover = to;
    u.ma5_last = *w[size_t(start + m - 1)].ma5;
    return u;
}

std::vector<DailyBar> random_window(Rng& rng, int n) {
    std::vector<DailyBar> bars;
    Date d(2019, 1, 7);
    for (int i = 0; i < n + 4; ++i) {  // +4 so ma5 exists across the window
        DailyBar b;
        b.date = d;
        double lo = rng.uniform(10, 60), hi = lo + rng.uniform(0.01, 15);
        b.low = lo;
        b.high = hi;
        b.open = rng.uniform(lo, hi);
        b.close = rng.uniform(lo, hi);
        b.turnover_rate = rng.uniform(0.001, 0.5);
        b.volume = 1000;
        bars.push_back(b);
        d = next_trading_day(d);
    }
    compute_ma5(bars);
    return {bars.begin() + 4, bars.end()};
}

}  // namespace

TEST_CASE("num_submaps") {
    CHECK(num_submaps(5) == 1);
    CHECK(num_submaps(20) == 2);
    CHECK(num_submaps(25) == 2);
    CHECK(num_submaps(60) == 3);
    CHECK(num_submaps(125) == 3);
    CHECK(num_submaps(130) == 4);
    CHECK_THROWS_AS(num_submaps(7), DomainError);
    CHECK_THROWS_AS(num_submaps(0), DomainError);
    CHECK_THROWS_AS(num_submaps(-5), DomainError);
}

TEST_CASE("resolution") {
    CHECK(resolution(1, 60) == 1);
    CHECK(resolution(2, 60) == 5);
    CHECK(resolution(3, 60) == 12);  // min(25, 60/5)
    CHECK(resolution(1, 5) == 1);
    CHECK(resolution(1, 20) == 1);
    CHECK(resolution(2, 20) == 4);   // min(5, 4)
    CHECK_THROWS_AS(resolution(0, 60), DomainError);
    CHECK_THROWS_AS(resolution(4, 60), DomainError);
}

TEST_CASE("feature_weights") {
    CHECK(feature_weights(3) == std::vector<double>{0.5, 0.25, 0.25});
    CHECK(feature_weights(2) == std::vector<double>{0.5, 0.5});
    CHECK(feature_weights(4) == std::vector<double>{0.5, 0.25, 0.125, 0.125});
    CHECK(feature_weights(1) == std::vector<double>{1.0});
    for (int c = 2; c <= 6; ++c) {
        auto w = feature_weights(c);
        double sum = std::accumulate(w.begin(), w.end(), 0.0);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
        // Nonincreasing except the repeated tail weight.
        for (size_t i = 1; i + 1 < w.size(); ++i) CHECK(w[i] <= w[i - 1]);
        CHECK(w[w.size() - 1] == w[w.size() - 2]);
    }
    CHECK_THROWS_AS(feature_weights(0), DomainError);
}

TEST_CASE("weighted_dims sums to total under largest-remainder rounding") {
    CHECK(weighted_dims(feature_weights(3), 256) == std::vector<int>{128, 64, 64});
    for (int c = 1; c <= 5; ++c) {
        for (int total : {256, 128, 100, 33}) {
            auto dims = weighted_dims(feature_weights(c), total);
            CHECK(std::accumulate(dims.begin(), dims.end(), 0) == total);
            for (int d : dims) CHECK(d > 0);
        }
    }
}

TEST_CASE("decompose: structure for n=60") {
    Rng rng(5);
    auto w = random_window(rng, 60);
    auto set = decompose(w, 60);
    CHECK(set.C == 3);
    REQUIRE(set.maps.size() == 3);
    CHECK(set.maps[0].resolution == 1);
    CHECK(set.maps[1].resolution == 5);
    CHECK(set.maps[2].resolution == 12);
    for (const auto& sub : set.maps) CHECK(sub.units.size() == 5);
    // X1 keeps dates; coarser maps do not.
    for (const auto& u : set.maps[0].units) CHECK(u.date.has_value());
    for (const auto& u : set.maps[1].units) CHECK(!u.date.has_value());
    // X1 is the last 5 raw days unchanged.
    for (int j = 0; j < 5; ++j) {
        const DailyBar& b = w[size_t(55 + j)];
        const OhlctUnit& u = set.maps[0].units[size_t(j)];
        CHECK(u.open == b.open);
        CHECK(u.high == b.high);
        CHECK(u.low == b.low);
        CHECK(u.close == b.close);
        CHECK(u.turnover == b.turnover_rate);
        CHECK(u.ma5 == *b.ma5);
        CHECK(*u.date == b.date);
    }
    // X3 covers all 60 days: block 0 starts at day 0.
    CHECK(set.maps[2].units[0].open == w[0].open);
    CHECK(set.maps[2].units[4].close == w[59].close);
}

TEST_CASE("decompose: n=25 constructed highs") {
    // Highs 1..25; X2 has M=5, covers all 25 days, block j's high = 5j.
    std::vector<DailyBar> w;
    Date d(2019, 1, 7);
    for (int i = 0; i < 25; ++i) {
        DailyBar b;
        b.date = d;
        b.open = 0.5;
        b.close = 0.5;
        b.high = double(i + 1);
        b.low = 0.1;
        b.turnover_rate = 0.01;
        b.ma5 = 0.5;
        w.push_back(b);
        d = next_trading_day(d);
    }
    auto set = decompose(w, 25);
    REQUIRE(set.C == 2);
    CHECK(set.maps[1].resolution == 5);
    for (int j = 1; j <= 5; ++j)
        CHECK(set.maps[1].units[size_t(j - 1)].high == doctest::Approx(5.0 * j));
}

TEST_CASE("decompose: oracle equivalence on random windows") {
    Rng rng(12345);
    for (int trial = 0; trial < 200; ++trial) {
        int n = (trial % 2 == 0) ? 20 : 60;
        auto w = random_window(rng, n);
        auto set = decompose(w, n);
        REQUIRE(set.C == num_submaps(n));
        for (int i = 1; i <= set.C; ++i) {
            int m = resolution(i, n);
            const SubMap& sub = set.maps[size_t(i - 1)];
            REQUIRE(sub.resolution == m);
            for (int j = 1; j <= 5; ++j) {
                BruteUnit want = brute_block(w, n, m, j);
                const OhlctUnit& got = sub.units[size_t(j - 1)];
                CHECK(got.open == want.open);
                CHECK(got.high == want.high);
                CHECK(got.low == want.low);
                CHECK(got.close == want.close);
                CHECK(got.turnover == want.turnover);
                CHECK(got.ma5 == want.ma5_last);
            }
        }
    }
}

TEST_CASE("decompose: coverage and turnover conservation") {
    Rng rng(77);
    for (int n : {20, 60}) {
        auto w = random_window(rng, n);
        auto set = decompose(w, n);
        // X_C spans all n days when n = 5*M_C.
        int mc = resolution(set.C, n);
        if (n == 5 * mc) {
            double daily_sum = 0;
            for (const auto& b : w) daily_sum += b.turnover_rate;
            double block_sum = 0;
            for (const auto& u : set.maps[size_t(set.C - 1)].units) block_sum += u.turnover;
            CHECK(block_sum == doctest::Approx(daily_sum).epsilon(1e-12));
        }
        // Sub-map i spans exactly the most recent 5*M_i days.
        for (int i = 1; i <= set.C; ++i) {
            int m = resolution(i, n);
            double span_sum = 0;
            for (int k = n - 5 * m; k < n; ++k) span_sum += w[size_t(k)].turnover_rate;
            double got = 0;
            for (const auto& u : set.maps[size_t(i - 1)].units) got += u.turnover;
            CHECK(got == doctest::Approx(span_sum).epsilon(1e-12));
        }
    }
}

TEST_CASE("decompose rejects wrong window length") {
    Rng rng(3);
    auto w = random_window(rng, 20);
    CHECK_THROWS_AS(decompose(w, 25), DomainError);
    CHECK_THROWS_AS(decompose(w, 7), DomainError);
}

TEST_CASE("render_submaps produces one image per map with contract widths") {
    Rng rng(9);
    auto w = random_window(rng, 60);
    auto set = decompose(w, 60);
    ChartGeometry g;
    auto images = render_submaps(set, g);
    REQUIRE(images.size() == 3);
    CHECK(images[0].width == g.fixed_width(5, 1));  // dated, with separator slots
    CHECK(images[1].width == 15);
    CHECK(images[2].width == 15);
    for (const auto& im : images) CHECK(im.height == g.height());
    CHECK(images[0].resolution == 1);
    CHECK(images[1].resolution == 5);
    CHECK(images[2].resolution == 12);
}
