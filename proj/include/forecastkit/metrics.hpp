#pragma once

// Proper scoring rules and calibration diagnostics. Brier-family values are
// carried on the x100 scale throughout (always-0.5 scores BS 25, BI 50).

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"

namespace fk {

enum class Metric { BS, BI, MBS, ABS, ABI, ECE };

inline std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::BS: return "BS";
        case Metric::BI: return "BI";
        case Metric::MBS: return "MBS";
        case Metric::ABS: return "ABS";
        case Metric::ABI: return "ABI";
        case Metric::ECE: return "ECE";
    }
    return "?";
}

struct ScoreReport {
    Metric metric = Metric::BS;
    std::map<EventKey, double> per_event;
    std::optional<double> market;
    std::optional<double> dataset;
    double overall = 0.0;
    std::size_t n_market = 0;
    std::size_t n_dataset = 0;
};

/// Difficulty gamma per event, x100 scale.
using DifficultyTable = std::map<EventKey, double>;

inline double brier_score(double p, int o) {
    const double e = p - static_cast<double>(o);
    return 100.0 * e * e;
}

/// Square root is taken after averaging: pass the mean BS, not per-event values.
inline double brier_index(double mean_bs_100) {
    if (mean_bs_100 < 0.0) fail("brier_index: negative mean Brier score");
    return 100.0 * (1.0 - std::sqrt(mean_bs_100 / 100.0));
}

inline constexpr double kMbsClamp = 1e-6;

/// Only p_o is floored at kMbsClamp; log2(1) is finite, so a perfect forecast keeps exactly 100.
inline double metaculus_baseline_score(double p, int o) {
    if (!(p >= 0.0 && p <= 1.0)) fail("metaculus_baseline_score: probability outside [0, 1]");
    const double p_o = std::max(o == 1 ? p : 1.0 - p, kMbsClamp);
    return 100.0 * (std::log2(p_o) + 1.0);
}

inline double adjusted_brier_index(double mean_abs_100) {
    return 100.0 * (1.0 - std::sqrt(std::max(0.0, mean_abs_100) / 100.0));
}

/// gamma_i = 100 (m_i - o_i)^2 for every resolved market event with a crowd estimate.
inline DifficultyTable crowd_difficulty(const ForecastMatrix& m) {
    DifficultyTable out;
    for (const auto& [k, ev] : m.events()) {
        if (!ev.resolved()) continue;
        const Question& q = m.question(k.question_id);
        if (q.kind == QuestionKind::market && q.crowd_estimate)
            out[k] = brier_score(*q.crowd_estimate, *ev.outcome);
    }
    return out;
}

inline ScoreReport make_report(Metric metric, std::map<EventKey, double> per_event,
                               const std::map<std::string, Question>& questions) {
    const SplitMean s = unweighted_split_mean(per_event, questions);
    return {metric, std::move(per_event), s.market, s.dataset, s.overall, s.n_market, s.n_dataset};
}

/// ABS_i = BS_i - gamma_i, plus mean(gamma) when `rescale` is set so that the
/// always-0.5 forecaster keeps its raw-BS level.
inline ScoreReport adjusted_brier(const std::map<EventKey, double>& per_event_bs,
                                  const DifficultyTable& gamma,
                                  const std::map<std::string, Question>& questions,
                                  bool rescale = false) {
    std::string missing;
    for (const auto& [k, v] : per_event_bs)
        if (!gamma.count(k)) missing += (missing.empty() ? "" : ", ") + to_string(k);
    if (!missing.empty()) fail("adjusted_brier: no difficulty for events: " + missing);

    double gbar = 0.0;
    if (rescale) {
        for (const auto& [k, v] : per_event_bs) gbar += gamma.at(k);
        gbar /= static_cast<double>(per_event_bs.size());
    }
    std::map<EventKey, double> abs;
    for (const auto& [k, v] : per_event_bs) abs[k] = v - gamma.at(k) + gbar;
    return make_report(Metric::ABS, std::move(abs), questions);
}

/// Brier index per split first, then the unweighted split average.
inline ScoreReport split_brier_index(const ScoreReport& bs) {
    ScoreReport out = bs;
    out.metric = Metric::BI;
    if (bs.market) out.market = brier_index(*bs.market);
    if (bs.dataset) out.dataset = brier_index(*bs.dataset);
    out.overall = combine_splits(out.market, out.n_market, out.dataset, out.n_dataset).overall;
    return out;
}

inline ScoreReport split_adjusted_brier_index(const ScoreReport& abs) {
    ScoreReport out = abs;
    out.metric = Metric::ABI;
    if (abs.market) out.market = adjusted_brier_index(*abs.market);
    if (abs.dataset) out.dataset = adjusted_brier_index(*abs.dataset);
    out.overall = combine_splits(out.market, out.n_market, out.dataset, out.n_dataset).overall;
    return out;
}

/// BI of the mean BS over all events, ignoring the market/dataset split.
inline double pooled_brier_index(const std::map<EventKey, double>& per_event_bs) {
    if (per_event_bs.empty()) fail("no events");
    double s = 0.0;
    for (const auto& [k, v] : per_event_bs) s += v;
    return brier_index(s / static_cast<double>(per_event_bs.size()));
}

struct ProbOutcome {
    double p = 0.5;
    int o = 0;
};

inline constexpr int kDefaultEceBins = 10;

/// Expected calibration error over equal-width bins on [0,1]. Bin b covers
/// [b/B, (b+1)/B); the last bin also takes p = 1.
inline double ece(const std::vector<ProbOutcome>& xs, int bins = kDefaultEceBins) {
    if (bins < 1) fail("ece: bins must be >= 1");
    if (xs.empty()) fail("ece: empty input");
    std::vector<double> sp(static_cast<std::size_t>(bins), 0.0), so(sp.size(), 0.0);
    std::vector<std::size_t> n(sp.size(), 0);
    for (const auto& x : xs) {
        auto b = static_cast<long>(std::floor(x.p * bins));
        b = std::clamp<long>(b, 0, bins - 1);
        sp[b] += x.p;
        so[b] += x.o;
        ++n[b];
    }
    const auto total = static_cast<double>(xs.size());
    double e = 0.0;
    for (std::size_t b = 0; b < sp.size(); ++b) {
        if (!n[b]) continue;
        const auto nb = static_cast<double>(n[b]);
        e += (nb / total) * std::abs(sp[b] / nb - so[b] / nb);
    }
    return e;
}

/// Per-event scores for one forecast per event. Unresolved events and events
/// without a forecast are skipped.
inline std::map<EventKey, double> per_event_scores(Metric metric,
                                                   const std::map<EventKey, double>& forecasts,
                                                   const ForecastMatrix& m) {
    std::map<EventKey, double> out;
    for (const auto& [k, p] : forecasts) {
        const auto& ev = m.event(k);
        if (!ev.resolved()) continue;
        out[k] = metric == Metric::MBS ? metaculus_baseline_score(p, *ev.outcome)
                                       : brier_score(p, *ev.outcome);
    }
    return out;
}

/// Row of the `score` CSV: metric, split, value, n.
struct ScoreRow {
    std::string metric;
    std::string split;
    double value = 0.0;
    std::size_t n = 0;
};

/// Full metric suite for one method's event forecasts. ABS/ABI rows are emitted
/// only when every scored event has a difficulty value.
inline std::vector<ScoreRow> score_suite(const std::map<EventKey, double>& forecasts,
                                         const ForecastMatrix& m,
                                         const DifficultyTable* gamma = nullptr,
                                         bool rescale_abs = false, int ece_bins = kDefaultEceBins) {
    std::vector<ScoreRow> rows;
    auto emit = [&](const ScoreReport& r) {
        const std::string name(to_string(r.metric));
        if (r.market) rows.push_back({name, "market", *r.market, r.n_market});
        if (r.dataset) rows.push_back({name, "dataset", *r.dataset, r.n_dataset});
        rows.push_back({name, "overall", r.overall, r.n_market + r.n_dataset});
    };
    const auto bs_events = per_event_scores(Metric::BS, forecasts, m);
    if (bs_events.empty()) fail("no resolved events to score");
    const ScoreReport bs = make_report(Metric::BS, bs_events, m.questions());
    emit(bs);
    emit(split_brier_index(bs));
    emit(make_report(Metric::MBS, per_event_scores(Metric::MBS, forecasts, m), m.questions()));
    if (gamma) {
        bool complete = true;
        for (const auto& [k, v] : bs_events) complete = complete && gamma->count(k);
        if (complete) {
            const ScoreReport abs = adjusted_brier(bs_events, *gamma, m.questions(), rescale_abs);
            emit(abs);
            emit(split_adjusted_brier_index(abs));
        }
    }
    std::vector<ProbOutcome> split_pairs[2], all;
    for (const auto& [k, v] : bs_events) {
        const ProbOutcome po{forecasts.at(k), *m.event(k).outcome};
        split_pairs[m.question(k.question_id).kind == QuestionKind::market ? 0 : 1].push_back(po);
        all.push_back(po);
    }
    if (!split_pairs[0].empty())
        rows.push_back({"ECE", "market", ece(split_pairs[0], ece_bins), split_pairs[0].size()});
    if (!split_pairs[1].empty())
        rows.push_back({"ECE", "dataset", ece(split_pairs[1], ece_bins), split_pairs[1].size()});
    rows.push_back({"ECE", "overall", ece(all, ece_bins), all.size()});
    return rows;
}

}  // namespace fk
