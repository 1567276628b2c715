#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stockcnn/dates.hpp"
#include "stockcnn/errors.hpp"
#include "stockcnn/market_data.hpp"

namespace stockcnn {

// Pixel layout of a TS-OHLCT chart: price region on top, a blank divider row,
// turnover bars at the bottom. Each day (or merged window) occupies a 3-column
// unit: open tick | high-low bar + ma5 + turnover bar | close tick.
struct ChartGeometry {
    int price_rows = 48;
    int divider_rows = 1;
    int turnover_rows = 15;
    static constexpr int unit_cols = 3;
    static constexpr int separator_cols = 3;

    int height() const { return price_rows + divider_rows + turnover_rows; }

    // Dated (resolution-1) charts get a separator slot per week plus two units
    // of holiday slack; merged windows have no calendar identity and no
    // separators, so their width is exactly the unit columns.
    int fixed_width(int days, int resolution) const {
        if (resolution > 1) return 5 * unit_cols;
        return unit_cols * (days + (days + 4) / 5 + 2);
    }

    void validate() const {
        if (price_rows < 1 || divider_rows < 0 || turnover_rows < 1)
            throw ConfigError("chart geometry rows must be positive");
    }
};

// One renderable unit: a raw day (date present) or a merged window (absent).
struct OhlctUnit {
    double open = 0, high = 0, low = 0, close = 0;
    double turnover = 0;
    double ma5 = 0;
    std::optional<Date> date;
};

inline OhlctUnit unit_from_bar(const DailyBar& b) {
    if (!b.ma5) throw EncodingError("bar " + b.date.to_string() + " lacks ma5");
    return OhlctUnit{b.open, b.high, b.low, b.close, b.turnover_rate, *b.ma5, b.date};
}

inline std::vector<OhlctUnit> units_from_bars(const std::vector<DailyBar>& bars) {
    std::vector<OhlctUnit> units;
    units.reserve(bars.size());
    for (const auto& b : bars) units.push_back(unit_from_bar(b));
    return units;
}

struct ChartImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // row-major, values 0/1

    int n = 0;           // days covered by the source window
    int resolution = 1;  // days per unit
    std::string symbol;
    std::string end_date;

    std::uint8_t at(int r, int c) const { return pixels[size_t(r) * width + c]; }
    std::uint8_t& at(int r, int c) { return pixels[size_t(r) * width + c]; }

    bool same_pixels(const ChartImage& o) const {
        return height == o.height && width == o.width && pixels == o.pixels;
    }
};

// Column plan: starting column of each unit after right-alignment, with
// 3-column separators at calendar gaps longer than one day.
struct ColumnPlan {
    int width = 0;
    std::vector<int> unit_col;       // leftmost column of each unit
    std::vector<int> separator_col;  // leftmost column of each separator
};

inline ColumnPlan layout_columns(const std::vector<Date>& dates, const ChartGeometry& geom) {
    geom.validate();
    for (size_t i = 1; i < dates.size(); ++i)
        if (!(dates[i - 1] < dates[i]))
            throw ValidationError("layout dates must be strictly ascending");

    ColumnPlan plan;
    plan.width = geom.fixed_width(int(dates.size()), 1);

    int used = 0;
    std::vector<bool> sep_before(dates.size(), false);
    for (size_t i = 0; i < dates.size(); ++i) {
        if (i > 0 && dates[i - 1].days_until(dates[i]) > 1) {
            sep_before[i] = true;
            used += ChartGeometry::separator_cols;
        }
        used += ChartGeometry::unit_cols;
    }
    if (used > plan.width)
        throw CapacityError("column plan needs " + std::to_string(used) + " columns but width is " +
                            std::to_string(plan.width));

    int col = plan.width - used;  // left padding
    for (size_t i = 0; i < dates.size(); ++i) {
        if (sep_before[i]) {
            plan.separator_col.push_back(col);
            col += ChartGeometry::separator_cols;
        }
        plan.unit_col.push_back(col);
        col += ChartGeometry::unit_cols;
    }
    return plan;
}

namespace detail {

inline void check_finite(double v, const char* field) {
    if (!std::isfinite(v)) throw EncodingError(std::string("non-finite ") + field);
}

}  // namespace detail

// Renders a window into the binary pixel matrix. Price scale spans the window's
// highs, lows and ma5 values; row 0 is the highest price. Dated units get the
// weekend-separator layout; undated (merged) units are packed left-to-right.
inline ChartImage render_ohlct(const std::vector<OhlctUnit>& units, const ChartGeometry& geom,
                               int resolution = 1) {
    geom.validate();
    if (units.empty()) throw EncodingError("cannot render an empty window");

    const bool dated = units.front().date.has_value();
    for (const auto& u : units) {
        detail::check_finite(u.open, "open");
        detail::check_finite(u.high, "high");
        detail::check_finite(u.low, "low");
        detail::check_finite(u.close, "close");
        detail::check_finite(u.turnover, "turnover");
        detail::check_finite(u.ma5, "ma5");
        if (u.date.has_value() != dated)
            throw EncodingError("window mixes dated and undated units");
    }

    ColumnPlan plan;
    if (dated) {
        std::vector<Date> dates;
        for (const auto& u : units) dates.push_back(*u.date);
        plan = layout_columns(dates, geom);
    } else {
        plan.width = ChartGeometry::unit_cols * int(units.size());
        for (size_t i = 0; i < units.size(); ++i)
            plan.unit_col.push_back(int(i) * ChartGeometry::unit_cols);
    }

    ChartImage img;
    img.height = geom.height();
    img.width = plan.width;
    img.pixels.assign(size_t(img.height) * img.width, 0);
    img.resolution = resolution;
    img.n = int(units.size()) * resolution;
    if (dated) img.end_date = units.back().date->to_string();

    double v_min = units.front().low, v_max = units.front().high;
    double t_max = 0;
    for (const auto& u : units) {
        v_min = std::min({v_min, u.low, u.ma5});
        v_max = std::max({v_max, u.high, u.ma5});
        t_max = std::max(t_max, u.turnover);
    }

    const int pr = geom.price_rows;
    auto price_row = [&](double v) {
        if (v_max == v_min) return pr / 2;
        return int(std::lround(double(pr - 1) * (v_max - v) / (v_max - v_min)));
    };

    const int turnover_top = geom.price_rows + geom.divider_rows;
    for (size_t i = 0; i < units.size(); ++i) {
        const OhlctUnit& u = units[i];
        const int c = plan.unit_col[i];
        img.at(price_row(u.open), c) = 1;
        img.at(price_row(u.close), c + 2) = 1;
        const int hi_row = price_row(u.high), lo_row = price_row(u.low);
        for (int r = hi_row; r <= lo_row; ++r) img.at(r, c + 1) = 1;
        img.at(price_row(u.ma5), c + 1) = 1;

        int bar = t_max > 0 ? int(std::lround(double(geom.turnover_rows - 1) * u.turnover / t_max)) + 1
                            : 1;
        for (int r = 0; r < bar; ++r) img.at(turnover_top + geom.turnover_rows - 1 - r, c + 1) = 1;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Image files: portable graymap (P5) and raw bytes with a JSON manifest
// ---------------------------------------------------------------------------

inline void write_pgm(const ChartImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (std::uint8_t p : img.pixels) out.put(char(p ? 255 : 0));
    if (!out) throw IoError("write failed: " + path);
}

inline ChartImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
        throw FormatError("not a P5/255 graymap: " + path);
    in.get();  // single whitespace after header
    ChartImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(size_t(w) * h);
    std::vector<char> buf(img.pixels.size());
    in.read(buf.data(), std::streamsize(buf.size()));
    if (in.gcount() != std::streamsize(buf.size()))
        throw FormatError("truncated graymap: " + path);
    for (size_t i = 0; i < buf.size(); ++i) {
        unsigned char v = static_cast<unsigned char>(buf[i]);
        if (v != 0 && v != 255) throw FormatError("non-binary pixel in " + path);
        img.pixels[i] = v ? 1 : 0;
    }
    return img;
}

// Raw format: height*width bytes of 0/255 plus a JSON sidecar manifest.
inline void write_raw(const ChartImage& img, const std::string& path) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open " + path + " for writing");
        for (std::uint8_t p : img.pixels) out.put(char(p ? 255 : 0));
        if (!out) throw IoError("write failed: " + path);
    }
    nlohmann::json manifest = {{"height", img.height},   {"width", img.width},
                               {"n", img.n},             {"resolution", img.resolution},
                               {"symbol", img.symbol},   {"end_date", img.end_date}};
    std::ofstream mout(path + ".json");
    if (!mout) throw IoError("cannot open " + path + ".json for writing");
    mout << manifest.dump(2) << '\n';
}

inline ChartImage read_raw(const std::string& path) {
    nlohmann::json manifest;
    {
        std::ifstream min(path + ".json");
        if (!min) throw IoError("cannot open manifest " + path + ".json");
        try {
            min >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad manifest " + path + ".json: " + e.what());
        }
    }
    ChartImage img;
    try {
        img.height = manifest.at("height").get<int>();
        img.width = manifest.at("width").get<int>();
        img.n = manifest.at("n").get<int>();
        img.resolution = manifest.at("resolution").get<int>();
        img.symbol = manifest.at("symbol").get<std::string>();
        img.end_date = manifest.at("end_date").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest missing fields: " + std::string(e.what()));
    }
    if (img.height <= 0 || img.width <= 0) throw FormatError("bad dimensions in manifest");

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    img.pixels.resize(size_t(img.height) * img.width);
    std::vector<char> buf(img.pixels.size());
    in.read(buf.data(), std::streamsize(buf.size()));
    if (in.gcount() != std::streamsize(buf.size())) throw FormatError("truncated raw image: " + path);
    char extra;
    if (in.get(extra)) throw FormatError("trailing bytes in raw image: " + path);
    for (size_t i = 0; i < buf.size(); ++i) {
        unsigned char v = static_cast<unsigned char>(buf[i]);
        if (v != 0 && v != 255) throw FormatError("non-binary pixel in " + path);
        img.pixels[i] = v ? 1 : 0;
    }
    return img;
}

inline void write_image(const ChartImage& img, const std::string& path, const std::string& format) {
    if (format == "pgm")
        write_pgm(img, path);
    else if (format == "raw")
        write_raw(img, path);
    else
        throw ConfigError("unknown image format '" + format + "' (expected pgm or raw)");
}

}  // namespace stockcnn
