#pragma once

// Analysis of scored runs: method x question ANOVA, fixed-effects fit by
// alternating least squares, paired question-resampling bootstrap, and
// Jensen-Shannon diversity between forecasters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/metrics.hpp"

namespace fk {

// ---------------------------------------------------------------------------
// Two-way ANOVA

struct AnovaObservation {
    std::string method;
    std::string question;
    int trial = 0;
    double value = 0.0;
};

struct AnovaTable {
    double ss_method = 0.0, ss_question = 0.0, ss_residual = 0.0, ss_total = 0.0;
    long df_method = 0, df_question = 0, df_residual = 0;
    double f_method = 0.0, f_question = 0.0;
    double pct_method = 0.0, pct_question = 0.0, pct_residual = 0.0;
    std::size_t n = 0;
};

/// Fills df, F and percentages from sums of squares. df_residual is taken as
/// given (N - 1 - df_method - df_question for a main-effects model).
inline AnovaTable anova_from_sums(double ss_method, double ss_question, double ss_residual,
                                  long df_method, long df_question, long df_residual) {
    AnovaTable t;
    t.ss_method = ss_method;
    t.ss_question = ss_question;
    t.ss_residual = ss_residual;
    t.ss_total = ss_method + ss_question + ss_residual;
    t.df_method = df_method;
    t.df_question = df_question;
    t.df_residual = df_residual;
    t.n = static_cast<std::size_t>(df_method + df_question + df_residual + 1);
    if (df_residual > 0 && ss_residual > 0.0) {
        const double ms_res = ss_residual / static_cast<double>(df_residual);
        t.f_method = ss_method / static_cast<double>(df_method) / ms_res;
        t.f_question = ss_question / static_cast<double>(df_question) / ms_res;
    } else {
        t.f_method = t.f_question = std::numeric_limits<double>::quiet_NaN();
    }
    if (t.ss_total > 0.0) {
        t.pct_method = 100.0 * ss_method / t.ss_total;
        t.pct_question = 100.0 * ss_question / t.ss_total;
        t.pct_residual = 100.0 * ss_residual / t.ss_total;
    }
    return t;
}

inline AnovaTable anova_two_way(const std::vector<AnovaObservation>& obs) {
    std::map<std::string, std::pair<double, std::size_t>> by_method, by_question;
    double grand = 0.0;
    for (const auto& o : obs) {
        if (!std::isfinite(o.value)) fail("anova: non-finite observation");
        auto& m = by_method[o.method];
        m.first += o.value;
        ++m.second;
        auto& q = by_question[o.question];
        q.first += o.value;
        ++q.second;
        grand += o.value;
    }
    if (by_method.size() < 2) fail("anova: need at least 2 methods");
    if (by_question.size() < 2) fail("anova: need at least 2 questions");
    const auto n = static_cast<double>(obs.size());
    grand /= n;

    auto between = [&](const auto& groups) {
        double ss = 0.0;
        for (const auto& [k, v] : groups) {
            const double d = v.first / static_cast<double>(v.second) - grand;
            ss += static_cast<double>(v.second) * d * d;
        }
        return ss;
    };
    double ss_total = 0.0;
    for (const auto& o : obs) ss_total += (o.value - grand) * (o.value - grand);
    const double ss_m = between(by_method), ss_q = between(by_question);
    const long df_m = static_cast<long>(by_method.size()) - 1;
    const long df_q = static_cast<long>(by_question.size()) - 1;
    const long df_r = static_cast<long>(obs.size()) - 1 - df_m - df_q;
    AnovaTable t = anova_from_sums(ss_m, ss_q, ss_total - ss_m - ss_q, df_m, df_q, df_r);
    t.ss_total = ss_total;
    return t;
}

// ---------------------------------------------------------------------------
// Fixed effects y_ij = mu + alpha_i + gamma_j with sum-to-zero effects

struct FixedEffectsObservation {
    std::string method;
    std::string question;
    double value = 0.0;
};

struct FixedEffects {
    double mu = 0.0;
    std::map<std::string, double> alpha;  // per method
    std::map<std::string, double> gamma;  // per question
    int sweeps = 0;
    bool converged = false;
};

struct AlsOptions {
    double tolerance = 1e-10;  // max absolute parameter change per sweep
    int max_sweeps = 1000;
};

namespace detail {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace detail

/// Alternating least squares: question effects given method effects, then method
/// effects given question effects, recentering both to sum to zero (and folding
/// the means into mu) after each sweep.
inline FixedEffects fit_fixed_effects_als(const std::vector<FixedEffectsObservation>& obs,
                                          const AlsOptions& opt = {}) {
    if (obs.empty()) fail("fixed effects: no observations");
    std::map<std::string, std::size_t> mi, qi;
    for (const auto& o : obs) {
        if (!std::isfinite(o.value)) fail("fixed effects: non-finite observation");
        mi.emplace(o.method, 0);
        qi.emplace(o.question, 0);
    }
    std::vector<std::string> mnames, qnames;
    for (auto& [k, v] : mi) {
        v = mnames.size();
        mnames.push_back(k);
    }
    for (auto& [k, v] : qi) {
        v = qnames.size();
        qnames.push_back(k);
    }
    const std::size_t M = mnames.size(), Q = qnames.size();
    struct Idx {
        std::size_t m, q;
        double y;
    };
    std::vector<Idx> data;
    data.reserve(obs.size());
    detail::UnionFind uf(M + Q);
    for (const auto& o : obs) {
        data.push_back({mi[o.method], qi[o.question], o.value});
        uf.unite(mi[o.method], M + qi[o.question]);
    }
    std::map<std::size_t, std::vector<std::string>> components;
    for (std::size_t m = 0; m < M; ++m) components[uf.find(m)].push_back("method " + mnames[m]);
    for (std::size_t q = 0; q < Q; ++q)
        components[uf.find(M + q)].push_back("question " + qnames[q]);
    if (components.size() > 1) {
        std::string msg = "fixed effects: disconnected design with " +
                          std::to_string(components.size()) + " components:";
        for (const auto& [root, members] : components) {
            msg += " {";
            for (std::size_t i = 0; i < members.size(); ++i)
                msg += (i ? ", " : "") + members[i];
            msg += "}";
        }
        fail(msg);
    }

    std::vector<double> alpha(M, 0.0), gamma(Q, 0.0), acc;
    std::vector<std::size_t> cnt;
    double mu = 0.0;
    for (const auto& d : data) mu += d.y;
    mu /= static_cast<double>(data.size());

    FixedEffects out;
    for (out.sweeps = 1; out.sweeps <= opt.max_sweeps; ++out.sweeps) {
        const std::vector<double> prev_a = alpha, prev_g = gamma;
        const double prev_mu = mu;

        acc.assign(Q, 0.0);
        cnt.assign(Q, 0);
        for (const auto& d : data) {
            acc[d.q] += d.y - mu - alpha[d.m];
            ++cnt[d.q];
        }
        for (std::size_t q = 0; q < Q; ++q) gamma[q] = acc[q] / static_cast<double>(cnt[q]);

        acc.assign(M, 0.0);
        cnt.assign(M, 0);
        for (const auto& d : data) {
            acc[d.m] += d.y - mu - gamma[d.q];
            ++cnt[d.m];
        }
        for (std::size_t m = 0; m < M; ++m) alpha[m] = acc[m] / static_cast<double>(cnt[m]);

        const double abar = mean_of(alpha), gbar = mean_of(gamma);
        for (auto& a : alpha) a -= abar;
        for (auto& g : gamma) g -= gbar;
        mu += abar + gbar;

        double change = std::abs(mu - prev_mu);
        for (std::size_t m = 0; m < M; ++m) change = std::max(change, std::abs(alpha[m] - prev_a[m]));
        for (std::size_t q = 0; q < Q; ++q) change = std::max(change, std::abs(gamma[q] - prev_g[q]));
        if (change < opt.tolerance) {
            out.converged = true;
            break;
        }
    }
    if (out.sweeps > opt.max_sweeps) out.sweeps = opt.max_sweeps;
    out.mu = mu;
    for (std::size_t m = 0; m < M; ++m) out.alpha[mnames[m]] = alpha[m];
    for (std::size_t q = 0; q < Q; ++q) out.gamma[qnames[q]] = gamma[q];
    return out;
}

// ---------------------------------------------------------------------------
// Paired bootstrap over questions

/// Counter-based generator: each (seed, stream) pair gives an independent
/// SplitMix64 sequence, so resample r draws the same indices on any thread.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : state_(mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))) {}

    std::uint64_t next() { return mix(state_ += 0x9E3779B97F4A7C15ULL); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Per-question contribution: sum and count of per-event values on one split.
struct QuestionScore {
    QuestionKind split = QuestionKind::market;
    double sum = 0.0;
    std::size_t n = 0;
};

using ScoreSummary = std::function<double(std::span<const QuestionScore>)>;

/// Pooled mean over all events.
inline double pooled_mean(std::span<const QuestionScore> xs) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : xs) {
        s += x.sum;
        n += x.n;
    }
    if (!n) fail("summary over zero events");
    return s / static_cast<double>(n);
}

namespace detail {
inline std::pair<std::optional<double>, std::optional<double>> split_means(
    std::span<const QuestionScore> xs, std::size_t (&n)[2]) {
    double s[2] = {0.0, 0.0};
    n[0] = n[1] = 0;
    for (const auto& x : xs) {
        const int k = x.split == QuestionKind::market ? 0 : 1;
        s[k] += x.sum;
        n[k] += x.n;
    }
    auto m = [&](int k) {
        return n[k] ? std::optional<double>(s[k] / static_cast<double>(n[k])) : std::nullopt;
    };
    return {m(0), m(1)};
}
}  // namespace detail

/// Unweighted average of the market and dataset event means.
inline double split_mean(std::span<const QuestionScore> xs) {
    std::size_t n[2];
    auto [mk, ds] = detail::split_means(xs, n);
    return combine_splits(mk, n[0], ds, n[1]).overall;
}

/// Brier index per split (from per-event BS sums), then the unweighted average.
inline double split_brier_index_summary(std::span<const QuestionScore> xs) {
    std::size_t n[2];
    auto [mk, ds] = detail::split_means(xs, n);
    if (mk) mk = brier_index(*mk);
    if (ds) ds = brier_index(*ds);
    return combine_splits(mk, n[0], ds, n[1]).overall;
}

enum class Stars { three, two, one, ns };

inline std::string_view to_string(Stars s) {
    switch (s) {
        case Stars::three: return "***";
        case Stars::two: return "**";
        case Stars::one: return "*";
        case Stars::ns: return "ns";
    }
    return "ns";
}

inline Stars stars_for(double p) {
    if (p < 0.001) return Stars::three;
    if (p < 0.01) return Stars::two;
    if (p < 0.05) return Stars::one;
    return Stars::ns;
}

struct PairedDelta {
    double delta = 0.0;  // treatment minus reference
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_value = 1.0;
    std::size_t n_resamples = 0;
    std::size_t n_questions = 0;
    Stars stars = Stars::ns;
};

enum class BootstrapMode { random, exhaustive };

struct BootstrapOptions {
    std::size_t n_resamples = 5000;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    BootstrapMode mode = BootstrapMode::random;
    double ci_level = 0.95;
};

inline constexpr std::size_t kMaxExhaustiveResamples = std::size_t{1} << 24;

/// Linear-interpolated percentile of sorted data, q in [0,1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) fail("percentile of empty set");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Resamples questions with replacement and recomputes `summary` for both
/// methods. For an observed improvement, p is the fraction of resamples with
/// delta <= 0; for a degradation, the fraction with delta >= 0. At an observed
/// delta of exactly 0, p is the mid-p value min(P[<0], P[>0]) + P[=0]/2.
/// The CI is the percentile interval, widened if needed to contain the point
/// estimate.
inline PairedDelta paired_bootstrap(const std::map<std::string, QuestionScore>& treatment,
                                    const std::map<std::string, QuestionScore>& reference,
                                    const ScoreSummary& summary,
                                    const BootstrapOptions& opt = {}) {
    std::string diff;
    for (const auto& [q, v] : treatment)
        if (!reference.count(q)) diff += " " + q + "(treatment only)";
    for (const auto& [q, v] : reference)
        if (!treatment.count(q)) diff += " " + q + "(reference only)";
    if (!diff.empty()) fail("paired_bootstrap: question sets differ:" + diff);
    if (treatment.empty()) fail("paired_bootstrap: no questions");

    std::vector<QuestionScore> t, r;
    for (const auto& [q, v] : treatment) {
        t.push_back(v);
        r.push_back(reference.at(q));
    }
    const std::size_t n = t.size();

    PairedDelta out;
    out.n_questions = n;
    out.delta = summary(t) - summary(r);

    std::size_t count = opt.n_resamples;
    if (opt.mode == BootstrapMode::exhaustive) {
        count = 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (count > kMaxExhaustiveResamples / n)
                fail("paired_bootstrap: exhaustive enumeration too large");
            count *= n;
        }
    }
    if (count < 1) fail("paired_bootstrap: n_resamples must be >= 1");

    std::vector<double> deltas(count);
    parallel_for(count, opt.jobs, [&](std::size_t b) {
        std::vector<QuestionScore> ts(n), rs(n);
        CounterRng rng(opt.seed, b);
        std::size_t code = b;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t j;
            if (opt.mode == BootstrapMode::exhaustive) {
                j = code % n;
                code /= n;
            } else {
                j = static_cast<std::size_t>(rng.below(n));
            }
            ts[i] = t[j];
            rs[i] = r[j];
        }
        deltas[b] = summary(ts) - summary(rs);
    });

    std::size_t below = 0, above = 0, equal = 0;
    for (double d : deltas) {
        if (d < 0.0)
            ++below;
        else if (d > 0.0)
            ++above;
        else
            ++equal;
    }
    const auto total = static_cast<double>(count);
    if (out.delta < 0.0)
        out.p_value = static_cast<double>(above + equal) / total;
    else if (out.delta > 0.0)
        out.p_value = static_cast<double>(below + equal) / total;
    else
        out.p_value = (static_cast<double>(std::min(below, above)) + 0.5 * equal) / total;

    std::sort(deltas.begin(), deltas.end());
    const double tail = 0.5 * (1.0 - opt.ci_level);
    out.ci_low = std::min(out.delta, percentile_sorted(deltas, tail));
    out.ci_high = std::max(out.delta, percentile_sorted(deltas, 1.0 - tail));
    out.n_resamples = count;
    out.stars = stars_for(out.p_value);
    return out;
}

// ---------------------------------------------------------------------------
// Jensen-Shannon divergence between Bernoulli forecasts

namespace detail {
inline double xlog2(double x, double y) { return x > 0.0 ? x * std::log2(x / y) : 0.0; }
}  // namespace detail

/// JSD in bits between Bernoulli(p) and Bernoulli(q); lies in [0, 1].
inline double bernoulli_jsd(double p, double q) {
    const double m = 0.5 * (p + q);
    const double kl_p = detail::xlog2(p, m) + detail::xlog2(1.0 - p, 1.0 - m);
    const double kl_q = detail::xlog2(q, m) + detail::xlog2(1.0 - q, 1.0 - m);
    return std::max(0.0, 0.5 * kl_p + 0.5 * kl_q);
}

/// Mean per-question JSD between two forecasters.
inline double pairwise_jsd(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail("pairwise_jsd: length mismatch");
    if (a.empty()) fail("pairwise_jsd: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += bernoulli_jsd(a[i], b[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace fk
