#pragma once

// Combining K per-trial forecasts into one forecast per event.
//
// Dead trials (recorded as missing) fall back to 0.5, i.e. logit 0, in the mean,
// logit-mean and shrinkage aggregators; the median ignores them.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/metrics.hpp"
#include "forecastkit/priors.hpp"

namespace fk {

using TrialSpan = std::span<const std::optional<double>>;

enum class AggregationMethod { mean, median, logit_mean, shrink_prior };

inline std::string_view to_string(AggregationMethod m) {
    switch (m) {
        case AggregationMethod::mean: return "mean";
        case AggregationMethod::median: return "median";
        case AggregationMethod::logit_mean: return "logit_mean";
        case AggregationMethod::shrink_prior: return "shrink_prior";
    }
    return "mean";
}

inline AggregationMethod parse_aggregation_method(std::string_view s) {
    for (auto m : {AggregationMethod::mean, AggregationMethod::median,
                   AggregationMethod::logit_mean, AggregationMethod::shrink_prior})
        if (to_string(m) == s) return m;
    if (s == "logit") return AggregationMethod::logit_mean;
    if (s == "shrink") return AggregationMethod::shrink_prior;
    fail("unknown aggregation method '" + std::string(s) + "'");
}

struct AggregationSpec {
    AggregationMethod method = AggregationMethod::logit_mean;
    std::optional<std::size_t> k_subset;  // use only the first K trials
    double floor_f = 1.0;
    double slope_c = 0.0;
};

struct Aggregated {
    double p = 0.5;
    bool all_missing = false;
};

inline double clamp_probability(double p) {
    if (!std::isfinite(p)) fail("clamp_probability: non-finite input");
    return std::min(kSubmitHigh, std::max(kSubmitLow, p));
}

inline bool all_missing(TrialSpan trials) {
    for (const auto& t : trials)
        if (t) return false;
    return true;
}

inline Aggregated aggregate_mean(TrialSpan trials) {
    if (all_missing(trials)) return {0.5, true};
    double s = 0.0;
    for (const auto& t : trials) s += t.value_or(0.5);
    return {s / static_cast<double>(trials.size()), false};
}

inline Aggregated aggregate_median(TrialSpan trials) {
    std::vector<double> present;
    for (const auto& t : trials)
        if (t) present.push_back(*t);
    if (present.empty()) return {0.5, true};
    return {median_of(std::move(present)), false};
}

namespace detail {

struct LogitStats {
    double mean = 0.0;  // over present + fallback trials
    double sd = 0.0;    // ddof=1 over present trials, 0 with fewer than two
};

inline LogitStats logit_stats(TrialSpan trials) {
    std::vector<double> present;
    double sum = 0.0;
    for (const auto& t : trials) {
        if (!t) continue;
        const double y = logit(clamp_open(*t));
        present.push_back(y);
        sum += y;
    }
    LogitStats out;
    out.mean = sum / static_cast<double>(trials.size());
    if (present.size() >= 2) {
        const double m = sum / static_cast<double>(present.size());
        double ss = 0.0;
        for (double y : present) ss += (y - m) * (y - m);
        out.sd = std::sqrt(ss / static_cast<double>(present.size() - 1));
    }
    return out;
}

}  // namespace detail

inline Aggregated aggregate_logit(TrialSpan trials) {
    if (all_missing(trials)) return {0.5, true};
    return {sigmoid(detail::logit_stats(trials).mean), false};
}

/// Shrink the trial logit mean toward the prior logit with weight
/// alpha = max(f, 1 - c * sd(trial logits)).
inline Aggregated aggregate_shrink(TrialSpan trials, const QuestionPrior& prior, double f,
                                   double c) {
    if (!(f >= 0.0 && f <= 1.0)) fail("aggregate_shrink: f must lie in [0,1]");
    if (!(c >= 0.0)) fail("aggregate_shrink: c must be >= 0");
    if (all_missing(trials)) return {0.5, true};
    const auto st = detail::logit_stats(trials);
    const double alpha = std::max(f, 1.0 - c * st.sd);
    if (alpha == 1.0) return {sigmoid(st.mean), false};
    return {sigmoid(alpha * st.mean + (1.0 - alpha) * prior_logit(prior)), false};
}

inline Aggregated aggregate(TrialSpan trials, const AggregationSpec& spec,
                            const QuestionPrior& prior = {}) {
    if (spec.k_subset) {
        if (*spec.k_subset == 0) fail("k_subset must be >= 1");
        if (*spec.k_subset > trials.size())
            fail("k_subset " + std::to_string(*spec.k_subset) + " exceeds " +
                 std::to_string(trials.size()) + " available trials");
        trials = trials.first(*spec.k_subset);
    }
    switch (spec.method) {
        case AggregationMethod::mean: return aggregate_mean(trials);
        case AggregationMethod::median: return aggregate_median(trials);
        case AggregationMethod::logit_mean: return aggregate_logit(trials);
        case AggregationMethod::shrink_prior:
            return aggregate_shrink(trials, prior, spec.floor_f, spec.slope_c);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Leave-one-question-out tuning of (f, c)

enum class LossWeighting { per_event, split_balanced };

struct ShrinkGrid {
    std::vector<double> f;
    std::vector<double> c;

    /// f in {0, 0.1, ..., 1}, c in {0, 0.2, ..., 2}.
    static ShrinkGrid standard() {
        ShrinkGrid g;
        for (int i = 0; i <= 10; ++i) g.f.push_back(i / 10.0);
        for (int j = 0; j <= 10; ++j) g.c.push_back(j / 5.0);
        return g;
    }
};

struct ShrinkPair {
    double f = 1.0;
    double c = 0.0;
    bool operator==(const ShrinkPair&) const = default;
};

struct ShrinkTuning {
    ShrinkPair best;              // minimizer of mean BS over all questions
    double best_mean_bs = 0.0;
    double loo_mean_bs = 0.0;     // each question scored with the pair tuned without it
    std::map<std::string, ShrinkPair> held_out;  // question -> pair tuned on the others
};

struct ShrinkTuneOptions {
    ShrinkGrid grid = ShrinkGrid::standard();
    std::optional<std::size_t> k_subset;
    LossWeighting weighting = LossWeighting::per_event;
    unsigned jobs = 1;
};

namespace detail {

struct QuestionLoss {
    double sum[2] = {0.0, 0.0};  // market, dataset
    std::size_t n[2] = {0, 0};
};

inline double combined_loss(const QuestionLoss& l, LossWeighting w) {
    if (w == LossWeighting::per_event) {
        const auto n = l.n[0] + l.n[1];
        return n ? (l.sum[0] + l.sum[1]) / static_cast<double>(n) : 0.0;
    }
    auto mean = [&](int s) {
        return l.n[s] ? std::optional<double>(l.sum[s] / static_cast<double>(l.n[s]))
                      : std::nullopt;
    };
    if (!l.n[0] && !l.n[1]) return 0.0;
    return combine_splits(mean(0), l.n[0], mean(1), l.n[1]).overall;
}

}  // namespace detail

/// Grid search for the shrinkage hyperparameters. Grid points are visited with
/// f descending then c ascending, and only a strictly lower loss replaces the
/// incumbent, so ties resolve to the least shrinkage.
inline ShrinkTuning tune_shrink_loo(const ForecastMatrix& matrix, const std::string& method_id,
                                    const std::map<std::string, QuestionPrior>& priors,
                                    const ShrinkTuneOptions& opt = {}) {
    struct Cell {
        std::string question;
        int split;
        std::vector<std::optional<double>> trials;
        int outcome;
    };
    std::vector<Cell> cells;
    std::vector<std::string> qids;
    for (const auto& [k, ev] : matrix.events()) {
        if (!ev.resolved()) continue;
        auto tr = matrix.trials(method_id, k);
        if (tr.empty()) continue;
        if (opt.k_subset) {
            if (*opt.k_subset > tr.size()) fail("k_subset exceeds available trials");
            tr.resize(*opt.k_subset);
        }
        if (qids.empty() || qids.back() != k.question_id) qids.push_back(k.question_id);
        const int split = matrix.question(k.question_id).kind == QuestionKind::market ? 0 : 1;
        cells.push_back({k.question_id, split, std::move(tr), *ev.outcome});
    }
    if (qids.size() < 2) fail("LOO undefined: need at least 2 questions with resolved events");

    std::map<std::string, std::size_t> qindex;
    for (std::size_t i = 0; i < qids.size(); ++i) qindex[qids[i]] = i;

    std::vector<ShrinkPair> order;
    for (auto fi = opt.grid.f.rbegin(); fi != opt.grid.f.rend(); ++fi)
        for (double c : opt.grid.c) order.push_back({*fi, c});

    // loss[g][q]
    std::vector<std::vector<detail::QuestionLoss>> loss(order.size(),
                                                        std::vector<detail::QuestionLoss>(qids.size()));
    parallel_for(order.size(), opt.jobs, [&](std::size_t g) {
        for (const auto& cell : cells) {
            auto pit = priors.find(cell.question);
            const QuestionPrior prior = pit == priors.end() ? QuestionPrior{} : pit->second;
            const double p = aggregate_shrink(cell.trials, prior, order[g].f, order[g].c).p;
            auto& l = loss[g][qindex.at(cell.question)];
            l.sum[cell.split] += brier_score(p, cell.outcome);
            ++l.n[cell.split];
        }
    });

    auto total = [&](std::size_t g, std::optional<std::size_t> skip) {
        detail::QuestionLoss acc;
        for (std::size_t q = 0; q < qids.size(); ++q) {
            if (skip && *skip == q) continue;
            for (int s = 0; s < 2; ++s) {
                acc.sum[s] += loss[g][q].sum[s];
                acc.n[s] += loss[g][q].n[s];
            }
        }
        return acc;
    };
    auto argmin = [&](std::optional<std::size_t> skip) {
        std::size_t best = 0;
        double best_loss = 0.0;
        for (std::size_t g = 0; g < order.size(); ++g) {
            const double l = detail::combined_loss(total(g, skip), opt.weighting);
            if (g == 0 || l < best_loss) {
                best = g;
                best_loss = l;
            }
        }
        return std::pair{best, best_loss};
    };

    ShrinkTuning out;
    const auto [g_best, l_best] = argmin(std::nullopt);
    out.best = order[g_best];
    out.best_mean_bs = l_best;

    std::vector<std::size_t> chosen(qids.size());
    parallel_for(qids.size(), opt.jobs, [&](std::size_t q) { chosen[q] = argmin(q).first; });
    detail::QuestionLoss loo;
    for (std::size_t q = 0; q < qids.size(); ++q) {
        out.held_out[qids[q]] = order[chosen[q]];
        for (int s = 0; s < 2; ++s) {
            loo.sum[s] += loss[chosen[q]][q].sum[s];
            loo.n[s] += loss[chosen[q]][q].n[s];
        }
    }
    out.loo_mean_bs = detail::combined_loss(loo, opt.weighting);
    return out;
}

}  // namespace fk
