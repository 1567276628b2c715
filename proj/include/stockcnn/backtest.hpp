#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stockcnn/dates.hpp"
#include "stockcnn/errors.hpp"
#include "stockcnn/market_data.hpp"

namespace stockcnn {

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

struct ConfusionRates {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> ppv, npv;  // absent when the denominator is empty
};

inline ConfusionRates ppv_npv_from_counts(long tp, long fp, long tn, long fn) {
    ConfusionRates r;
    r.tp = tp;
    r.fp = fp;
    r.tn = tn;
    r.fn = fn;
    if (tp + fp > 0) r.ppv = double(tp) / double(tp + fp);
    if (tn + fn > 0) r.npv = double(tn) / double(tn + fn);
    return r;
}

inline ConfusionRates ppv_npv(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw DomainError("predictions and labels differ in length");
    if (predictions.empty()) throw DomainError("ppv_npv needs at least one pair");
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] != 0 && predictions[i] != 1)
            throw DomainError("prediction must be 0 or 1");
        if (labels[i] != 0 && labels[i] != 1) throw DomainError("label must be 0 or 1");
        if (predictions[i] == 1)
            (labels[i] == 1 ? tp : fp)++;
        else
            (labels[i] == 0 ? tn : fn)++;
    }
    return ppv_npv_from_counts(tp, fp, tn, fn);
}

// ---------------------------------------------------------------------------
// Drawdown and index metrics
// ---------------------------------------------------------------------------

inline double max_drawdown(const std::vector<double>& equity) {
    if (equity.empty()) throw DomainError("max_drawdown needs a nonempty series");
    double peak = equity.front();
    double mdd = 0;
    for (double v : equity) {
        if (!(v > 0)) throw DomainError("max_drawdown requires positive values");
        peak = std::max(peak, v);
        mdd = std::max(mdd, (peak - v) / peak);
    }
    return mdd;
}

struct IndexMetrics {
    double idc = 0;  // total change
    double imd = 0;  // max drawdown
};

inline IndexMetrics index_metrics(const std::vector<double>& closes) {
    if (closes.empty()) throw DomainError("index_metrics needs a nonempty series");
    IndexMetrics m;
    m.idc = (closes.back() - closes.front()) / closes.front();
    m.imd = max_drawdown(closes);
    return m;
}

// ---------------------------------------------------------------------------
// Portfolio simulation
// ---------------------------------------------------------------------------

struct BacktestConfig {
    int max_positions = 5;
    double entry_threshold = 0.80;
    int hold_days = 5;           // trading days between entry and exit opens
    double cost = 0.003;         // round-trip fraction, charged at exit
    double initial_capital = 1e6;

    void validate() const {
        if (max_positions < 1) throw ConfigError("max_positions must be >= 1");
        if (!(entry_threshold > 0 && entry_threshold < 1))
            throw ConfigError("entry_threshold must lie in (0,1)");
        if (hold_days < 1) throw ConfigError("hold_days must be >= 1");
        if (!(cost >= 0 && cost < 0.1)) throw ConfigError("cost must lie in [0, 0.1)");
        if (!(initial_capital > 0)) throw ConfigError("initial_capital must be positive");
    }
};

struct Signal {
    Date date;
    std::string symbol;
    double p_up = 0;
    std::optional<double> r_hat;
};

struct Trade {
    std::string symbol;
    int slot = 0;
    Date decision_date, entry_date, exit_date;
    double entry_price = 0, exit_price = 0;
    double net_return = 0;  // exit/entry * (1-cost) - 1
    double pnl = 0;         // cash change of the slot
    std::string exit_reason;  // "horizon" or "end_of_data"
};

// One entry decision, logged when it is made (fills happen a day later); used
// by the no-lookahead replay check.
struct Decision {
    Date date;
    std::string symbol;
    int slot = 0;
};

struct BacktestReport {
    BacktestConfig config;
    std::vector<std::pair<Date, double>> equity;  // mark-to-market at close
    std::vector<Trade> trades;
    std::vector<Decision> decisions;
    std::vector<std::string> warnings;
    double pf = 0;   // equity[last]/equity[0] - 1
    double mdd = 0;

    std::vector<double> equity_values() const {
        std::vector<double> v;
        v.reserve(equity.size());
        for (const auto& [d, e] : equity) v.push_back(e);
        return v;
    }
};

namespace detail {

struct SymbolPrices {
    std::vector<Date> dates;  // ascending
    std::map<Date, std::pair<double, double>> open_close;

    const std::pair<double, double>* at(const Date& d) const {
        auto it = open_close.find(d);
        return it == open_close.end() ? nullptr : &it->second;
    }
    // Most recent close at or before d.
    std::optional<double> last_close_at_or_before(const Date& d) const {
        auto it = std::upper_bound(dates.begin(), dates.end(), d);
        if (it == dates.begin()) return std::nullopt;
        return open_close.at(*std::prev(it)).second;
    }
};

}  // namespace detail

// Deterministic daily event loop under the trading rules: at most
// max_positions slots, each funded with initial_capital/max_positions and
// compounding on its own; a day-t signal above the threshold fills at the
// t+1 open; exits fill at the open hold_days trading days after entry, with
// the round-trip cost charged once at exit. Signals for already-held or
// already-pending symbols are skipped. Positions still open when prices run
// out are closed at the last available close.
inline BacktestReport run_backtest(const std::vector<Signal>& signals,
                                   const std::map<std::string, std::vector<DailyBar>>& prices,
                                   const BacktestConfig& cfg) {
    cfg.validate();
    BacktestReport report;
    report.config = cfg;

    // Calendar: union of all price dates.
    std::set<Date> date_set;
    std::map<std::string, detail::SymbolPrices> px;
    for (const auto& [sym, bars] : prices) {
        auto& sp = px[sym];
        for (const auto& b : bars) {
            date_set.insert(b.date);
            sp.dates.push_back(b.date);
            sp.open_close[b.date] = {b.open, b.close};
        }
        std::sort(sp.dates.begin(), sp.dates.end());
    }
    if (signals.empty() || date_set.empty()) {
        report.equity.emplace_back(date_set.empty() ? Date(1970, 1, 1) : *date_set.begin(),
                                   cfg.initial_capital);
        report.pf = 0;
        report.mdd = 0;
        return report;
    }

    std::map<Date, std::vector<const Signal*>> by_day;
    Date first_signal = signals.front().date;
    for (const auto& s : signals) {
        if (!(s.p_up >= 0 && s.p_up <= 1)) throw DomainError("p_up outside [0,1]");
        by_day[s.date].push_back(&s);
        first_signal = std::min(first_signal, s.date);
    }

    std::vector<Date> calendar(date_set.begin(), date_set.end());
    size_t start_idx = size_t(std::lower_bound(calendar.begin(), calendar.end(), first_signal) -
                              calendar.begin());
    if (start_idx == calendar.size())
        throw DomainError("no price dates at or after the first signal");

    struct Position {
        std::string symbol;
        double shares = 0;
        double entry_price = 0;
        double cash_at_entry = 0;
        Date decision_date, entry_date;
        size_t exit_idx = 0;
    };
    struct PendingEntry {
        std::string symbol;
        Date decision_date;
    };
    struct Slot {
        double cash = 0;
        std::optional<Position> pos;
        std::optional<PendingEntry> pending;
    };
    std::vector<Slot> slots(size_t(cfg.max_positions));
    for (auto& s : slots) s.cash = cfg.initial_capital / cfg.max_positions;

    auto held_or_pending = [&](const std::string& sym) {
        for (const auto& s : slots)
            if ((s.pos && s.pos->symbol == sym) || (s.pending && s.pending->symbol == sym))
                return true;
        return false;
    };

    for (size_t i = start_idx; i < calendar.size(); ++i) {
        const Date today = calendar[i];

        // 1. Exits due today execute at the open; missing data defers a day.
        for (auto& slot : slots) {
            if (!slot.pos || slot.pos->exit_idx > i) continue;
            const auto* oc = px.at(slot.pos->symbol).at(today);
            if (!oc) {
                if (slot.pos->exit_idx == i)
                    report.warnings.push_back("exit deferred: no price for " + slot.pos->symbol +
                                              " on " + today.to_string());
                continue;
            }
            Trade t;
            t.symbol = slot.pos->symbol;
            t.slot = int(&slot - slots.data());
            t.decision_date = slot.pos->decision_date;
            t.entry_date = slot.pos->entry_date;
            t.exit_date = today;
            t.entry_price = slot.pos->entry_price;
            t.exit_price = oc->first;
            t.net_return = t.exit_price / t.entry_price * (1.0 - cfg.cost) - 1.0;
            const double proceeds = slot.pos->shares * t.exit_price * (1.0 - cfg.cost);
            t.pnl = proceeds - slot.pos->cash_at_entry;
            t.exit_reason = "horizon";
            slot.cash = proceeds;
            slot.pos.reset();
            report.trades.push_back(std::move(t));
        }

        // 2. Entries decided yesterday fill at today's open.
        for (auto& slot : slots) {
            if (!slot.pending) continue;
            PendingEntry pe = *slot.pending;
            slot.pending.reset();
            const auto* oc = px.at(pe.symbol).at(today);
            if (!oc || !(oc->first > 0)) {
                report.warnings.push_back("entry skipped: no price for " + pe.symbol + " on " +
                                          today.to_string());
                continue;
            }
            Position pos;
            pos.symbol = pe.symbol;
            pos.entry_price = oc->first;
            pos.shares = slot.cash / oc->first;
            pos.cash_at_entry = slot.cash;
            pos.decision_date = pe.decision_date;
            pos.entry_date = today;
            pos.exit_idx = i + size_t(cfg.hold_days);
            slot.pos = pos;
        }

        // 3. Today's signals produce tomorrow's entries: probability-descending,
        //    ties by symbol, into free slots in slot order.
        auto it = by_day.find(today);
        if (it != by_day.end()) {
            std::vector<const Signal*> candidates;
            for (const Signal* s : it->second)
                if (s->p_up > cfg.entry_threshold && !held_or_pending(s->symbol))
                    candidates.push_back(s);
            std::sort(candidates.begin(), candidates.end(), [](const Signal* a, const Signal* b) {
                if (a->p_up != b->p_up) return a->p_up > b->p_up;
                return a->symbol < b->symbol;
            });
            size_t ci = 0;
            for (auto& slot : slots) {
                if (ci >= candidates.size()) break;
                if (slot.pos || slot.pending) continue;
                // Re-check: earlier slots this day may have taken the symbol.
                while (ci < candidates.size() && held_or_pending(candidates[ci]->symbol)) ++ci;
                if (ci >= candidates.size()) break;
                slot.pending = PendingEntry{candidates[ci]->symbol, today};
                report.decisions.push_back(
                    Decision{today, candidates[ci]->symbol, int(&slot - slots.data())});
                ++ci;
            }
        }

        // 4. Mark to market at the close.
        double equity = 0;
        for (const auto& slot : slots) {
            if (slot.pos) {
                auto close = px.at(slot.pos->symbol).last_close_at_or_before(today);
                equity += slot.pos->shares * (close ? *close : slot.pos->entry_price);
            } else {
                equity += slot.cash;
            }
        }
        report.equity.emplace_back(today, equity);
    }

    // Close anything still open at the last available close.
    bool forced = false;
    for (auto& slot : slots) {
        if (!slot.pos) continue;
        const Date last = calendar.back();
        auto close = px.at(slot.pos->symbol).last_close_at_or_before(last);
        const double price = close ? *close : slot.pos->entry_price;
        Trade t;
        t.symbol = slot.pos->symbol;
        t.slot = int(&slot - slots.data());
        t.decision_date = slot.pos->decision_date;
        t.entry_date = slot.pos->entry_date;
        t.exit_date = last;
        t.entry_price = slot.pos->entry_price;
        t.exit_price = price;
        t.net_return = price / t.entry_price * (1.0 - cfg.cost) - 1.0;
        const double proceeds = slot.pos->shares * price * (1.0 - cfg.cost);
        t.pnl = proceeds - slot.pos->cash_at_entry;
        t.exit_reason = "end_of_data";
        slot.cash = proceeds;
        slot.pos.reset();
        report.trades.push_back(std::move(t));
        report.warnings.push_back("position in " + t.symbol + " closed at end of data");
        forced = true;
    }
    if (forced && !report.equity.empty()) {
        double equity = 0;
        for (const auto& slot : slots) equity += slot.cash;
        report.equity.back().second = equity;
    }

    report.pf = report.equity.back().second / cfg.initial_capital - 1.0;
    report.mdd = max_drawdown(report.equity_values());
    return report;
}

// ---------------------------------------------------------------------------
// Signal and report files
// ---------------------------------------------------------------------------

inline constexpr const char* kSignalsHeader = "date,symbol,p_up,r_hat";

inline std::vector<Signal> parse_signals(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty signals input");
    auto header = detail::split_fields(line);
    if (header.size() < 3 || header[0] != "date" || header[1] != "symbol" || header[2] != "p_up")
        throw ParseError("signals header must start with date,symbol,p_up");

    std::vector<Signal> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto f = detail::split_fields(line);
        if (f.size() != 3 && f.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 3 or 4 fields");
        Signal s;
        try {
            s.date = Date::parse(f[0]);
        } catch (const Error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        s.symbol = f[1];
        s.p_up = detail::parse_number(f[2], "p_up", line_no);
        if (f.size() == 4 && !f[3].empty())
            s.r_hat = detail::parse_number(f[3], "r_hat", line_no);
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const Signal& a, const Signal& b) {
        if (a.date != b.date) return a.date < b.date;
        return a.symbol < b.symbol;
    });
    return out;
}

inline std::string signals_to_csv(const std::vector<Signal>& signals) {
    std::ostringstream out;
    out << kSignalsHeader << '\n';
    char buf[128];
    for (const auto& s : signals) {
        if (s.r_hat)
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9f,%.9f", s.date.to_string().c_str(),
                          s.symbol.c_str(), s.p_up, *s.r_hat);
        else
            std::snprintf(buf, sizeof(buf), "%s,%s,%.9f,", s.date.to_string().c_str(),
                          s.symbol.c_str(), s.p_up);
        out << buf << '\n';
    }
    return out.str();
}

inline nlohmann::json report_to_json(const BacktestReport& r) {
    nlohmann::json trades = nlohmann::json::array();
    for (const auto& t : r.trades) {
        trades.push_back({{"symbol", t.symbol},
                          {"slot", t.slot},
                          {"decision_date", t.decision_date.to_string()},
                          {"entry_date", t.entry_date.to_string()},
                          {"exit_date", t.exit_date.to_string()},
                          {"entry_price", t.entry_price},
                          {"exit_price", t.exit_price},
                          {"net_return", t.net_return},
                          {"pnl", t.pnl},
                          {"exit_reason", t.exit_reason}});
    }
    return {{"pf", r.pf},
            {"mdd", r.mdd},
            {"initial_capital", r.config.initial_capital},
            {"final_equity", r.equity.empty() ? r.config.initial_capital : r.equity.back().second},
            {"n_trades", r.trades.size()},
            {"trades", trades},
            {"warnings", r.warnings}};
}

inline std::string equity_to_csv(const BacktestReport& r) {
    std::ostringstream out;
    out << "date,equity\n";
    char buf[64];
    for (const auto& [d, e] : r.equity) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f", d.to_string().c_str(), e);
        out << buf << '\n';
    }
    return out.str();
}

}  // namespace stockcnn
