#pragma once

// Seeded synthetic benchmark tranche: market and dataset questions with
// outcomes and K trial forecasts per method, for demos and end-to-end tests.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "forecastkit/aggregate.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/stats.hpp"

namespace fk {

struct SyntheticMethod {
    std::string id;
    double sharpness = 1.0;    // slope on the latent logit
    double bias = 0.0;         // added on the logit scale
    double trial_noise = 0.5;  // per-trial logit noise sd
    double missing_rate = 0.0; // fraction of trials recorded as missing
    double event_noise = 0.0;  // logit noise shared by all trials of an event
};

struct SyntheticConfig {
    std::size_t market_questions = 200;
    std::size_t dataset_questions = 200;
    std::size_t horizons = 3;
    std::size_t trials = 5;
    std::uint64_t seed = 1;
    std::vector<SyntheticMethod> methods = {
        {"agent", 1.0, 0.0, 0.6, 0.02, 0.3},
        {"agent-nobel", 0.8, 0.2, 0.9, 0.05, 0.6},
        {"zero-shot", 0.5, 0.4, 0.4, 0.0, 1.2},
    };
};

namespace detail {

struct SynthRng {
    CounterRng rng;
    double normal() {
        // Box-Muller; one draw per call keeps the stream layout simple
        const double u1 = 1.0 - rng.uniform();
        const double u2 = rng.uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
};

inline constexpr std::uint64_t kStreamQuestion = 1;
inline constexpr std::uint64_t kStreamForecast = 2;

}  // namespace detail

/// Builds the tranche. Draws are keyed by (seed, question, horizon, method,
/// trial) so changing one method leaves the others untouched.
inline ForecastMatrix synthetic_tranche(const SyntheticConfig& cfg = {}) {
    static constexpr Source kMarket[] = {Source::polymarket, Source::manifold, Source::metaculus,
                                         Source::rfi};
    static constexpr Source kDataset[] = {Source::fred, Source::yfinance, Source::dbnomics,
                                          Source::wikipedia, Source::acled};
    static const char* const kAcled[] = {"10x spike", "any increase"};
    static const char* const kWiki[] = {"fide rank", "swimming wr", "vaccine"};

    if (cfg.trials < 1 || cfg.trials > 8) fail("synthetic_tranche: trials must be in [1, 8]");
    if (cfg.horizons < 1 || cfg.horizons > kMaxDatasetHorizons)
        fail("synthetic_tranche: horizons must be in [1, 8]");

    ForecastMatrix m;
    const Date due = Date::from_ymd(2025, 3, 1);
    const std::size_t total = cfg.market_questions + cfg.dataset_questions;
    std::vector<std::vector<double>> latent(total);

    for (std::size_t i = 0; i < total; ++i) {
        detail::SynthRng r{CounterRng(cfg.seed, detail::kStreamQuestion * 1000003 + i)};
        Question q;
        const bool market = i < cfg.market_questions;
        const std::size_t j = market ? i : i - cfg.market_questions;
        q.kind = market ? QuestionKind::market : QuestionKind::dataset;
        q.source = market ? kMarket[j % 4] : kDataset[j % 5];
        q.id = std::string(market ? "m" : "d") + std::to_string(j);
        q.forecast_due_date = due;
        q.question_text = "Synthetic " + std::string(to_string(q.source)) + " question " + q.id;
        const std::size_t horizons = market ? 1 : cfg.horizons;
        for (std::size_t h = 0; h < horizons; ++h)
            q.resolution_dates.push_back(due + static_cast<long>(7 * (h + 1) * (market ? 4 : 1)));

        // Base rates: ACLED and part of Wikipedia are heavily skewed toward "no".
        double base = 0.0;
        if (q.source == Source::acled) {
            q.subtype = kAcled[j % 2];
            base = -3.0;
        } else if (q.source == Source::wikipedia) {
            q.subtype = kWiki[j % 3];
            base = q.subtype == "swimming wr" ? 2.5 : (q.subtype == "vaccine" ? -3.0 : 0.5);
        } else if (q.source == Source::fred) {
            base = -0.3;
        } else if (q.source == Source::yfinance) {
            base = 0.3;
        }
        const double z = base + 1.5 * r.normal();
        for (std::size_t h = 0; h < horizons; ++h) latent[i].push_back(z + 0.3 * r.normal());
        if (market) q.crowd_estimate = std::round(1000.0 * sigmoid(z + 0.5 * r.normal())) / 1000.0;
        q.blocked_urls = {"https://example.org/resolve/" + q.id};
        m.add_question(std::move(q));

        const std::string id = market ? "m" + std::to_string(j) : "d" + std::to_string(j);
        for (std::size_t h = 0; h < horizons; ++h) {
            const int o = r.rng.uniform() < sigmoid(latent[i][h]) ? 1 : 0;
            m.set_outcome({id, static_cast<int>(h)}, o);
        }
    }

    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
        const auto& meth = cfg.methods[mi];
        for (std::size_t i = 0; i < total; ++i) {
            const bool market = i < cfg.market_questions;
            const std::size_t j = market ? i : i - cfg.market_questions;
            const std::string id = (market ? "m" : "d") + std::to_string(j);
            for (std::size_t h = 0; h < latent[i].size(); ++h) {
                detail::SynthRng er{CounterRng(
                    cfg.seed, ((detail::kStreamForecast * 1009 + mi) * 1000003 + i) * 64 + 63 - h)};
                const double shared = meth.event_noise * er.normal();
                for (std::size_t t = 0; t < cfg.trials; ++t) {
                    const std::uint64_t stream =
                        ((detail::kStreamForecast * 1009 + mi) * 1000003 + i) * 64 + h * 8 + t;
                    detail::SynthRng r{CounterRng(cfg.seed, stream)};
                    TrialForecast f{meth.id, id, static_cast<int>(h), static_cast<int>(t),
                                    std::nullopt};
                    if (r.rng.uniform() >= meth.missing_rate) {
                        const double y =
                            meth.sharpness * latent[i][h] + meth.bias + shared +
                                         meth.trial_noise * r.normal();
                        f.probability = std::round(1000.0 * clamp_probability(sigmoid(y))) / 1000.0;
                    }
                    m.add_forecast(f);
                }
            }
        }
    }
    return m;
}

}  // namespace fk
