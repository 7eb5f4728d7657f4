#pragma once

// End-to-end post-processing chain on recorded trial forecasts:
// priors -> aggregation (optionally LOO-tuned shrinkage) -> submit clamp ->
// LOO calibration -> metric suite -> paired comparison against a reference.

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "forecastkit/aggregate.hpp"
#include "forecastkit/calibrate.hpp"
#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/metrics.hpp"
#include "forecastkit/priors.hpp"
#include "forecastkit/stats.hpp"

namespace fk {

struct PipelineConfig {
    std::vector<std::string> methods;        // empty = every method in the matrix
    std::optional<std::string> reference;    // compare every other method against this one
    AggregationSpec aggregation{AggregationMethod::shrink_prior, std::nullopt, 1.0, 0.0};
    bool tune_loo = true;                    // shrink_prior only
    LossWeighting tune_weighting = LossWeighting::per_event;
    std::optional<CalibrationKind> calibration = CalibrationKind::hierarchical;
    double lambda = kDefaultCalibrationLambda;
    bool calibration_loo = true;
    bool use_crowd = true;
    bool use_emp = true;
    PriorTable priors = default_prior_table();
    bool rescale_abs = false;
    int ece_bins = kDefaultEceBins;
    std::size_t n_resamples = 5000;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

struct MethodResult {
    std::string method_id;
    std::map<EventKey, double> aggregated;  // clamped, before calibration
    std::map<EventKey, double> final;       // after calibration
    std::optional<ShrinkTuning> tuning;
    std::map<std::string, CalibrationModel> calibration_models;  // by held-out question ("*" when fitted once)
    std::vector<ScoreRow> scores;
    std::vector<std::string> warnings;
};

struct Comparison {
    std::string treatment;
    std::string reference;
    PairedDelta result;
};

struct PipelineResult {
    std::map<std::string, QuestionPrior> priors;
    std::vector<std::string> warnings;
    std::vector<MethodResult> methods;
    std::vector<Comparison> comparisons;
};

namespace detail {

template <class F>
auto in_stage(const char* stage, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(stage) + ": " + e.what());
    }
}

}  // namespace detail

inline std::map<std::string, QuestionPrior> resolve_priors(const ForecastMatrix& m,
                                                           const PipelineConfig& cfg,
                                                           std::vector<std::string>* warnings) {
    std::map<std::string, QuestionPrior> out;
    for (const auto& [id, q] : m.questions()) {
        const ResolvedPrior r = resolve_prior(q, cfg.priors, cfg.use_crowd, cfg.use_emp);
        if (r.warning && warnings)
            warnings->push_back("question '" + id + "': crowd estimate missing, using 0.5");
        out[id] = r.prior;
    }
    return out;
}

/// Aggregated, clamped probability for every event that has trials for `method_id`.
inline std::map<EventKey, double> aggregate_method(const ForecastMatrix& m,
                                                   const std::string& method_id,
                                                   const PipelineConfig& cfg,
                                                   const std::map<std::string, QuestionPrior>& priors,
                                                   const std::map<std::string, ShrinkPair>* held_out,
                                                   std::vector<std::string>* warnings) {
    std::map<EventKey, double> out;
    for (const auto& [k, ev] : m.events()) {
        const auto trials = m.trials(method_id, k);
        if (trials.empty()) continue;
        AggregationSpec spec = cfg.aggregation;
        if (held_out) {
            auto it = held_out->find(k.question_id);
            if (it != held_out->end()) {
                spec.floor_f = it->second.f;
                spec.slope_c = it->second.c;
            }
        }
        const Aggregated a = aggregate(trials, spec, priors.at(k.question_id));
        if (a.all_missing && warnings)
            warnings->push_back("method '" + method_id + "' event " + to_string(k) +
                                ": all trials missing, using 0.5");
        out[k] = clamp_probability(a.p);
    }
    return out;
}

inline std::map<std::string, QuestionScore> question_scores(const std::map<EventKey, double>& per_event,
                                                            const ForecastMatrix& m) {
    std::map<std::string, QuestionScore> out;
    for (const auto& [k, v] : per_event) {
        auto& s = out[k.question_id];
        s.split = m.question(k.question_id).kind;
        s.sum += v;
        ++s.n;
    }
    return out;
}

inline MethodResult run_method(const ForecastMatrix& m, const std::string& method_id,
                               const PipelineConfig& cfg,
                               const std::map<std::string, QuestionPrior>& priors) {
    MethodResult r;
    r.method_id = method_id;

    const bool tune = cfg.tune_loo && cfg.aggregation.method == AggregationMethod::shrink_prior;
    if (tune) {
        ShrinkTuneOptions opt;
        opt.k_subset = cfg.aggregation.k_subset;
        opt.weighting = cfg.tune_weighting;
        opt.jobs = cfg.jobs;
        r.tuning = detail::in_stage("aggregate", [&] { return tune_shrink_loo(m, method_id, priors, opt); });
    }
    r.aggregated = detail::in_stage("aggregate", [&] {
        return aggregate_method(m, method_id, cfg, priors, tune ? &r.tuning->held_out : nullptr,
                                &r.warnings);
    });

    r.final = r.aggregated;
    if (cfg.calibration) {
        std::vector<CalibrationRow> rows;
        std::vector<EventKey> keys;
        for (const auto& [k, p] : r.aggregated) {
            rows.push_back({k.question_id, p, m.event(k).outcome, m.question(k.question_id).source});
            keys.push_back(k);
        }
        detail::in_stage("calibrate", [&] {
            if (cfg.calibration_loo) {
                LooCalibration cal = loo_calibrate(rows, *cfg.calibration, cfg.lambda, cfg.jobs);
                for (std::size_t i = 0; i < keys.size(); ++i) r.final[keys[i]] = cal.calibrated[i];
                r.calibration_models = std::move(cal.fold_models);
                for (auto& w : cal.warnings) r.warnings.push_back("calibrate: " + w);
            } else {
                std::vector<CalibrationPair> pairs;
                for (const auto& row : rows)
                    if (row.o) pairs.push_back({row.p, *row.o, row.source});
                const CalibrationModel model = fit_platt(pairs, *cfg.calibration, cfg.lambda).model;
                for (std::size_t i = 0; i < keys.size(); ++i)
                    r.final[keys[i]] = apply_platt(model, rows[i].p, rows[i].source);
                r.calibration_models["*"] = model;
            }
        });
    }

    const DifficultyTable gamma = crowd_difficulty(m);
    r.scores = detail::in_stage("score", [&] {
        return score_suite(r.final, m, &gamma, cfg.rescale_abs, cfg.ece_bins);
    });
    return r;
}

inline PipelineResult run_pipeline(const ForecastMatrix& m, const PipelineConfig& cfg) {
    PipelineResult out;
    out.priors = detail::in_stage("priors", [&] { return resolve_priors(m, cfg, &out.warnings); });

    std::vector<std::string> methods = cfg.methods.empty() ? m.methods() : cfg.methods;
    if (methods.empty()) fail("pipeline: no forecasts");
    if (cfg.reference && std::find(methods.begin(), methods.end(), *cfg.reference) == methods.end())
        methods.push_back(*cfg.reference);
    const auto known = m.methods();
    for (const auto& id : methods)
        if (std::find(known.begin(), known.end(), id) == known.end())
            fail("pipeline: no forecasts for method '" + id + "'");

    for (const auto& id : methods) out.methods.push_back(run_method(m, id, cfg, out.priors));

    if (cfg.reference) {
        const MethodResult* ref = nullptr;
        for (const auto& r : out.methods)
            if (r.method_id == *cfg.reference) ref = &r;
        const auto ref_scores = question_scores(per_event_scores(Metric::BS, ref->final, m), m);
        BootstrapOptions bopt;
        bopt.n_resamples = cfg.n_resamples;
        bopt.seed = cfg.seed;
        bopt.jobs = cfg.jobs;
        for (const auto& r : out.methods) {
            if (r.method_id == *cfg.reference) continue;
            const auto t_scores = question_scores(per_event_scores(Metric::BS, r.final, m), m);
            out.comparisons.push_back(
                {r.method_id, *cfg.reference, detail::in_stage("compare", [&] {
                     return paired_bootstrap(t_scores, ref_scores, split_brier_index_summary, bopt);
                 })});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report formatting

/// Shortest representation that round-trips, so reports are byte-stable.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_score_rows(std::ostream& out, const std::string& method_id,
                             const std::vector<ScoreRow>& rows, bool header = true) {
    if (header) out << "method,metric,split,value,n\n";
    for (const auto& r : rows)
        out << method_id << ',' << r.metric << ',' << r.split << ',' << format_double(r.value)
            << ',' << r.n << '\n';
}

inline void write_compare_header(std::ostream& out) {
    out << "treatment,reference,delta,ci_low,ci_high,p,stars,n\n";
}

inline void write_compare_row(std::ostream& out, const std::string& treatment,
                              const std::string& reference, const PairedDelta& d) {
    out << treatment << ',' << reference << ',' << format_double(d.delta) << ','
        << format_double(d.ci_low) << ',' << format_double(d.ci_high) << ','
        << format_double(d.p_value) << ',' << to_string(d.stars) << ',' << d.n_questions << '\n';
}

struct PipelineReports {
    std::string forecasts;  // JSONL, calibrated per event
    std::string scores;     // CSV
    std::string compare;    // CSV, header only without a reference
    std::string tuning;     // CSV, per held-out question (f, c)
};

inline PipelineReports render_reports(const PipelineResult& r) {
    std::ostringstream fc, sc, cmp, tn;
    sc << "method,metric,split,value,n\n";
    tn << "method,question_id,f,c\n";
    for (const auto& m : r.methods) {
        write_event_forecasts(fc, m.method_id, m.final);
        write_score_rows(sc, m.method_id, m.scores, false);
        if (m.tuning)
            for (const auto& [q, pair] : m.tuning->held_out)
                tn << m.method_id << ',' << q << ',' << format_double(pair.f) << ','
                   << format_double(pair.c) << '\n';
    }
    write_compare_header(cmp);
    for (const auto& c : r.comparisons) write_compare_row(cmp, c.treatment, c.reference, c.result);
    return {fc.str(), sc.str(), cmp.str(), tn.str()};
}

/// Configuration echo for report sidecars. Thread count is left out because it
/// cannot change any output.
inline json config_to_json(const PipelineConfig& cfg) {
    json priors = json::array();
    for (const auto& [key, prior] : cfg.priors.rows())
        priors.push_back({{"source", std::string(to_string(key.first))},
                          {"subtype", key.second},
                          {"prior", prior}});
    json j{{"methods", cfg.methods},
           {"agg.method", std::string(to_string(cfg.aggregation.method))},
           {"agg.f", cfg.aggregation.floor_f},
           {"agg.c", cfg.aggregation.slope_c},
           {"agg.tune_loo", cfg.tune_loo},
           {"agg.loss", cfg.tune_weighting == LossWeighting::per_event ? "per_event" : "split_balanced"},
           {"cal.kind", cfg.calibration ? std::string(to_string(*cfg.calibration)) : "none"},
           {"cal.lambda", cfg.lambda},
           {"cal.loo", cfg.calibration_loo},
           {"priors.crowd", cfg.use_crowd},
           {"priors.emp", cfg.use_emp},
           {"priors.table", priors},
           {"score.rescale_abs", cfg.rescale_abs},
           {"score.ece_bins", cfg.ece_bins},
           {"compare.n_resamples", cfg.n_resamples},
           {"seed", cfg.seed}};
    j["agg.k"] = cfg.aggregation.k_subset ? json(*cfg.aggregation.k_subset) : json(nullptr);
    j["compare.reference"] = cfg.reference ? json(*cfg.reference) : json(nullptr);
    return j;
}

}  // namespace fk
