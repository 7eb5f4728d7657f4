#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "forecastkit/agentsim.hpp"
#include "forecastkit/aggregate.hpp"
#include "forecastkit/calibrate.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/metrics.hpp"
#include "forecastkit/pipeline.hpp"
#include "forecastkit/priors.hpp"
#include "forecastkit/stats.hpp"
#include "forecastkit/tsmodel.hpp"
#include "report_io.hpp"

namespace {

using namespace fk;
using fk::tools::ReportWriter;

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

struct Inputs {
    std::string questions;
    std::string outcomes;
    std::string forecasts;

    void add(CLI::App* app, bool need_forecasts = true) {
        app->add_option("--questions,-q", questions, "questions JSONL")->required();
        app->add_option("--outcomes,-o", outcomes, "outcomes JSONL (else inline resolved_to)");
        auto* f = app->add_option("--forecasts", forecasts, "forecasts JSONL");
        if (need_forecasts) f->required();
    }

    ForecastMatrix load(bool with_forecasts = true) const {
        ForecastMatrix m;
        {
            std::ifstream in(questions);
            if (!in) fail("cannot open '" + questions + "'");
            try {
                read_questions(in, m);
            } catch (const Error& e) {
                throw Error(e.kind(), questions + ": " + e.what());
            }
        }
        if (!outcomes.empty()) load_outcomes(outcomes, m);
        if (with_forecasts && !forecasts.empty()) m = load_forecasts(forecasts, std::move(m));
        return m;
    }

    std::vector<std::string> paths() const { return {questions, outcomes, forecasts}; }
};

struct PriorFlags {
    std::string table;
    bool no_crowd = false;
    bool no_emp = false;

    void add(CLI::App* app) {
        app->add_option("--priors.table,--priors", table, "prior table CSV (source,subtype,prior)");
        app->add_flag("--priors.no-crowd,--no-crowd", no_crowd, "ignore crowd estimates");
        app->add_flag("--priors.no-emp,--no-emp", no_emp, "ignore empirical priors");
    }

    PriorTable load_table() const { return table.empty() ? default_prior_table() : load_prior_table(table); }

    std::map<std::string, QuestionPrior> resolve(const ForecastMatrix& m) const {
        const PriorTable t = load_table();
        std::map<std::string, QuestionPrior> out;
        for (const auto& [id, q] : m.questions()) {
            const auto r = resolve_prior(q, t, !no_crowd, !no_emp);
            if (r.warning) std::cerr << "warning: question '" << id << "': no crowd estimate, prior 0.5\n";
            out[id] = r.prior;
        }
        return out;
    }
};

struct AggFlags {
    std::string method = "logit_mean";
    std::optional<std::size_t> k;
    double f = 1.0;
    double c = 0.0;
    bool tune_loo = false;
    std::string loss = "per_event";

    void add(CLI::App* app, const std::string& default_method) {
        method = default_method;
        app->add_option("--agg.method,--method", method, "mean|median|logit_mean|shrink_prior")
            ->capture_default_str();
        app->add_option("--agg.k,--k", k, "use only the first K trials");
        app->add_option("--agg.f,--f", f, "shrinkage floor f")->capture_default_str();
        app->add_option("--agg.c,--c", c, "shrinkage slope c")->capture_default_str();
        app->add_flag("--agg.tune-loo,--tune-loo", tune_loo, "tune (f, c) by leave-one-question-out");
        app->add_option("--agg.loss", loss, "LOO loss weighting: per_event|split_balanced")
            ->capture_default_str();
    }

    AggregationSpec spec() const {
        return {parse_aggregation_method(method), k, f, c};
    }

    LossWeighting weighting() const {
        if (loss == "per_event") return LossWeighting::per_event;
        if (loss == "split_balanced") return LossWeighting::split_balanced;
        fail("unknown --agg.loss '" + loss + "'");
    }
};

std::vector<std::string> select_methods(const ForecastMatrix& m, const std::vector<std::string>& wanted) {
    const auto known = m.methods();
    if (wanted.empty()) {
        if (known.empty()) fail("no forecasts loaded");
        return known;
    }
    for (const auto& id : wanted)
        if (std::find(known.begin(), known.end(), id) == known.end())
            fail("no forecasts for method '" + id + "'");
    return wanted;
}

/// One forecast per event, aggregating trials where there are several.
std::map<EventKey, double> event_forecasts(const ForecastMatrix& m, const std::string& method,
                                           const AggregationSpec& spec,
                                           const std::map<std::string, QuestionPrior>& priors) {
    std::map<EventKey, double> out;
    for (const auto& [k, ev] : m.events()) {
        const auto trials = m.trials(method, k);
        if (trials.empty()) continue;
        out[k] = aggregate(trials, spec, priors.at(k.question_id)).p;
    }
    return out;
}

json agg_json(const AggFlags& a) {
    json j{{"agg.method", a.method}, {"agg.f", a.f}, {"agg.c", a.c}, {"agg.tune_loo", a.tune_loo},
           {"agg.loss", a.loss}};
    j["agg.k"] = a.k ? json(*a.k) : json(nullptr);
    return j;
}

json prior_json(const PriorFlags& p) {
    return {{"priors.table", p.table.empty() ? "default" : p.table},
            {"priors.crowd", !p.no_crowd},
            {"priors.emp", !p.no_emp}};
}

// ---------------------------------------------------------------------------

struct ScoreCmd {
    Inputs in;
    PriorFlags priors;
    AggFlags agg;
    std::vector<std::string> methods;
    bool rescale = false;
    int bins = kDefaultEceBins;
    std::string out = "-";

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("score", "score forecasts (BS, BI, MBS, ABS, ABI, ECE)");
        in.add(app);
        priors.add(app);
        agg.add(app, "logit_mean");
        app->add_option("--methods,-m", methods, "methods to score (default: all)");
        app->add_flag("--score.rescale-abs", rescale, "add mean difficulty back to ABS");
        app->add_option("--score.ece-bins", bins, "ECE bins")->capture_default_str();
        app->add_option("--out", out, "CSV output ('-' = stdout)")->capture_default_str();
        app->callback([this] { run(); });
    }

    void run() {
        const ForecastMatrix m = in.load();
        const auto pri = priors.resolve(m);
        const DifficultyTable gamma = crowd_difficulty(m);
        std::ostringstream os;
        os << "method,metric,split,value,n\n";
        for (const auto& id : select_methods(m, methods)) {
            const auto fc = event_forecasts(m, id, agg.spec(), pri);
            write_score_rows(os, id, score_suite(fc, m, &gamma, rescale, bins), false);
        }
        json cfg = agg_json(agg);
        cfg.update(prior_json(priors));
        cfg["score.rescale_abs"] = rescale;
        cfg["score.ece_bins"] = bins;
        ReportWriter("score", cfg, in.paths()).write(out, os.str());
    }
};

struct AggregateCmd {
    Inputs in;
    PriorFlags priors;
    AggFlags agg;
    std::vector<std::string> methods;
    bool clamp = true;
    unsigned jobs = 1;
    std::string out = "-";
    std::string tuning_out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("aggregate", "combine trial forecasts per event");
        in.add(app);
        priors.add(app);
        agg.add(app, "logit_mean");
        app->add_option("--methods,-m", methods, "methods to aggregate (default: all)");
        app->add_flag("!--agg.no-clamp", clamp, "skip the [0.05, 0.95] submission clamp");
        app->add_option("--jobs,-j", jobs, "worker threads")->capture_default_str();
        app->add_option("--out", out, "JSONL output ('-' = stdout)")->capture_default_str();
        app->add_option("--tuning-out", tuning_out, "CSV of per-question tuned (f, c)");
        app->callback([this] { run(); });
    }

    void run() {
        const ForecastMatrix m = in.load();
        const auto pri = priors.resolve(m);
        std::ostringstream os, tn;
        tn << "method,question_id,f,c\n";
        for (const auto& id : select_methods(m, methods)) {
            PipelineConfig cfg;
            cfg.aggregation = agg.spec();
            std::optional<ShrinkTuning> tuning;
            if (agg.tune_loo) {
                if (cfg.aggregation.method != AggregationMethod::shrink_prior)
                    fail("--agg.tune-loo requires --agg.method shrink_prior");
                ShrinkTuneOptions opt;
                opt.k_subset = agg.k;
                opt.weighting = agg.weighting();
                opt.jobs = jobs;
                tuning = tune_shrink_loo(m, id, pri, opt);
                std::cerr << id << ": best (f, c) = (" << tuning->best.f << ", " << tuning->best.c
                          << "), in-sample BS " << tuning->best_mean_bs << ", LOO BS "
                          << tuning->loo_mean_bs << '\n';
                for (const auto& [q, pr] : tuning->held_out)
                    tn << id << ',' << q << ',' << format_double(pr.f) << ',' << format_double(pr.c) << '\n';
            }
            std::map<EventKey, double> values;
            for (const auto& [k, ev] : m.events()) {
                const auto trials = m.trials(id, k);
                if (trials.empty()) continue;
                AggregationSpec spec = cfg.aggregation;
                if (tuning) {
                    spec.floor_f = tuning->held_out.at(k.question_id).f;
                    spec.slope_c = tuning->held_out.at(k.question_id).c;
                }
                const Aggregated a = aggregate(trials, spec, pri.at(k.question_id));
                if (a.all_missing)
                    std::cerr << "warning: " << id << " " << to_string(k) << ": all trials missing\n";
                values[k] = clamp ? clamp_probability(a.p) : a.p;
            }
            write_event_forecasts(os, id, values);
        }
        json cfg = agg_json(agg);
        cfg.update(prior_json(priors));
        cfg["agg.clamp"] = clamp;
        const ReportWriter w("aggregate", cfg, in.paths());
        w.write(out, os.str());
        if (agg.tune_loo) w.write(tuning_out, tn.str());
    }
};

struct CalibrateCmd {
    Inputs in;
    std::string method;
    std::string kind = "hierarchical";
    double lambda = kDefaultCalibrationLambda;
    bool loo = true;
    unsigned jobs = 1;
    std::string out = "-";
    std::string model_out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("calibrate", "Platt calibration of event forecasts");
        in.add(app);
        app->add_option("--method,-m", method, "method to calibrate (required with several)");
        app->add_option("--cal.kind,--kind", kind, "global|hier")->capture_default_str();
        app->add_option("--cal.lambda,--lambda", lambda, "offset penalty")->capture_default_str();
        app->add_flag("--cal.loo,!--cal.no-loo", loo, "leave-one-question-out application");
        app->add_option("--jobs,-j", jobs, "worker threads")->capture_default_str();
        app->add_option("--out", out, "calibrated JSONL ('-' = stdout)")->capture_default_str();
        app->add_option("--model-out", model_out, "model fitted on all resolved events (JSON)");
        app->callback([this] { run(); });
    }

    void run() {
        const ForecastMatrix m = in.load();
        const auto methods = m.methods();
        if (method.empty()) {
            if (methods.size() != 1) fail("several methods present; pass --method");
            method = methods.front();
        }
        select_methods(m, {method});
        const CalibrationKind k = parse_calibration_kind(kind);

        std::vector<CalibrationRow> rows;
        std::vector<EventKey> keys;
        std::vector<CalibrationPair> pairs;
        for (const auto& [key, ev] : m.events()) {
            const auto trials = m.trials(method, key);
            if (trials.empty()) continue;
            if (trials.size() != 1 || !trials.front())
                fail("calibrate expects one present forecast per event; event " + to_string(key) +
                     " has " + std::to_string(trials.size()) + " (run `aggregate` first)");
            const Source s = m.question(key.question_id).source;
            rows.push_back({key.question_id, *trials.front(), ev.outcome, s});
            keys.push_back(key);
            if (ev.outcome) pairs.push_back({*trials.front(), *ev.outcome, s});
        }

        std::map<EventKey, double> calibrated;
        const PlattFit full = fit_platt(pairs, k, lambda);
        if (!full.diagnostics.converged)
            std::cerr << "warning: fit stopped after " << full.diagnostics.iterations
                      << " iterations, gradient " << full.diagnostics.gradient_norm << '\n';
        if (loo) {
            const LooCalibration cal = loo_calibrate(rows, k, lambda, jobs);
            for (const auto& w : cal.warnings) std::cerr << "warning: " << w << '\n';
            for (std::size_t i = 0; i < keys.size(); ++i) calibrated[keys[i]] = cal.calibrated[i];
        } else {
            for (std::size_t i = 0; i < keys.size(); ++i)
                calibrated[keys[i]] = apply_platt(full.model, rows[i].p, rows[i].source);
        }

        std::ostringstream os;
        write_event_forecasts(os, method, calibrated);
        json cfg{{"method", method}, {"cal.kind", std::string(to_string(k))},
                 {"cal.lambda", lambda}, {"cal.loo", loo}};
        const ReportWriter w("calibrate", cfg, in.paths());
        w.write(out, os.str());
        json model = to_json(full.model);
        model["diagnostics"] = {{"final_nll", full.diagnostics.final_nll},
                                {"iterations", full.diagnostics.iterations},
                                {"converged", full.diagnostics.converged},
                                {"gradient_norm", full.diagnostics.gradient_norm}};
        w.write(model_out, model.dump(2) + "\n");
    }
};

struct CompareCmd {
    Inputs in;
    PriorFlags priors;
    AggFlags agg;
    std::vector<std::string> treatments;
    std::string reference;
    std::string summary = "bi";
    std::size_t resamples = 5000;
    std::uint64_t seed = 0;
    bool exhaustive = false;
    unsigned jobs = 1;
    std::string out = "-";

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("compare", "paired bootstrap of method differences");
        in.add(app);
        priors.add(app);
        agg.add(app, "logit_mean");
        app->add_option("--treatment,-t", treatments, "treatment methods (default: all others)");
        app->add_option("--reference,-r", reference, "reference method")->required();
        app->add_option("--compare.summary", summary, "bi|bs|bs-pooled")->capture_default_str();
        app->add_option("--compare.resamples,--resamples", resamples, "bootstrap resamples")
            ->capture_default_str();
        app->add_flag("--compare.exhaustive", exhaustive, "enumerate every resample (small n only)");
        app->add_option("--seed", seed, "RNG seed")->capture_default_str();
        app->add_option("--jobs,-j", jobs, "worker threads")->capture_default_str();
        app->add_option("--out", out, "CSV output ('-' = stdout)")->capture_default_str();
        app->callback([this] { run(); });
    }

    void run() {
        const ForecastMatrix m = in.load();
        const auto pri = priors.resolve(m);
        ScoreSummary fn;
        if (summary == "bi") fn = split_brier_index_summary;
        else if (summary == "bs") fn = split_mean;
        else if (summary == "bs-pooled") fn = pooled_mean;
        else fail("unknown --compare.summary '" + summary + "'");

        select_methods(m, {reference});
        if (treatments.empty())
            for (const auto& id : m.methods())
                if (id != reference) treatments.push_back(id);
        select_methods(m, treatments);

        auto scores = [&](const std::string& id) {
            return question_scores(per_event_scores(Metric::BS, event_forecasts(m, id, agg.spec(), pri), m), m);
        };
        const auto ref = scores(reference);
        BootstrapOptions opt;
        opt.n_resamples = resamples;
        opt.seed = seed;
        opt.jobs = jobs;
        opt.mode = exhaustive ? BootstrapMode::exhaustive : BootstrapMode::random;
        std::ostringstream os;
        write_compare_header(os);
        for (const auto& t : treatments)
            write_compare_row(os, t, reference, paired_bootstrap(scores(t), ref, fn, opt));

        json cfg = agg_json(agg);
        cfg.update(prior_json(priors));
        cfg["compare.summary"] = summary;
        cfg["compare.resamples"] = resamples;
        cfg["compare.exhaustive"] = exhaustive;
        cfg["seed"] = seed;
        ReportWriter("compare", cfg, in.paths()).write(out, os.str());
    }
};

struct AnovaCmd {
    Inputs in;
    PriorFlags priors;
    AggFlags agg;
    std::vector<std::string> methods;
    bool per_trial = false;
    std::string out = "-";
    std::string fe_out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("anova", "two-way ANOVA and fixed effects on per-question BS");
        in.add(app);
        priors.add(app);
        agg.add(app, "mean");
        app->add_option("--methods,-m", methods, "methods (default: all)");
        app->add_flag("--anova.per-trial", per_trial,
                      "one observation per (method, question, trial) instead of aggregating");
        app->add_option("--out", out, "ANOVA CSV ('-' = stdout)")->capture_default_str();
        app->add_option("--fe-out", fe_out, "fixed-effects CSV (term,level,estimate)");
        app->callback([this] { run(); });
    }

    void run() {
        const ForecastMatrix m = in.load();
        const auto pri = priors.resolve(m);
        std::vector<AnovaObservation> obs;
        std::vector<FixedEffectsObservation> fe_obs;
        for (const auto& id : select_methods(m, methods)) {
            std::map<std::string, std::pair<double, std::size_t>> per_q;
            if (per_trial) {
                std::map<std::pair<std::string, int>, std::pair<double, std::size_t>> cells;
                for (const auto& [k, ev] : m.events()) {
                    if (!ev.resolved()) continue;
                    const auto trials = m.trials(id, k);
                    for (std::size_t t = 0; t < trials.size(); ++t) {
                        auto& c = cells[{k.question_id, static_cast<int>(t)}];
                        c.first += brier_score(trials[t].value_or(0.5), *ev.outcome);
                        ++c.second;
                    }
                }
                for (const auto& [qt, c] : cells) {
                    const double v = c.first / static_cast<double>(c.second);
                    obs.push_back({id, qt.first, qt.second, v});
                    auto& q = per_q[qt.first];
                    q.first += v;
                    ++q.second;
                }
            } else {
                for (const auto& [k, v] :
                     per_event_scores(Metric::BS, event_forecasts(m, id, agg.spec(), pri), m)) {
                    auto& q = per_q[k.question_id];
                    q.first += v;
                    ++q.second;
                }
                for (const auto& [q, c] : per_q)
                    obs.push_back({id, q, 0, c.first / static_cast<double>(c.second)});
            }
            for (const auto& [q, c] : per_q)
                fe_obs.push_back({id, q, c.first / static_cast<double>(c.second)});
        }

        const AnovaTable t = anova_two_way(obs);
        std::ostringstream os;
        os << "source,ss,df,ms,F,pct\n";
        auto row = [&](const char* name, double ss, long df, double f, double pct) {
            os << name << ',' << format_double(ss) << ',' << df << ','
               << format_double(df > 0 ? ss / static_cast<double>(df) : 0.0) << ','
               << (std::isnan(f) ? std::string() : format_double(f)) << ',' << format_double(pct) << '\n';
        };
        row("method", t.ss_method, t.df_method, t.f_method, t.pct_method);
        row("question", t.ss_question, t.df_question, t.f_question, t.pct_question);
        row("residual", t.ss_residual, t.df_residual, std::nan(""), t.pct_residual);
        row("total", t.ss_total, static_cast<long>(t.n) - 1, std::nan(""), 100.0);

        json cfg = agg_json(agg);
        cfg.update(prior_json(priors));
        cfg["anova.per_trial"] = per_trial;
        const ReportWriter w("anova", cfg, in.paths());
        w.write(out, os.str());
        if (!fe_out.empty()) {
            const FixedEffects fe = fit_fixed_effects_als(fe_obs);
            if (!fe.converged) std::cerr << "warning: ALS did not converge in " << fe.sweeps << " sweeps\n";
            std::ostringstream fs;
            fs << "term,level,estimate\n";
            fs << "mu,," << format_double(fe.mu) << '\n';
            for (const auto& [k, v] : fe.alpha) fs << "method," << k << ',' << format_double(v) << '\n';
            for (const auto& [k, v] : fe.gamma) fs << "question," << k << ',' << format_double(v) << '\n';
            w.write(fe_out, fs.str());
        }
    }
};

struct TsModelCmd {
    Inputs in;
    std::string series_dir;
    std::string series_file;
    std::string question_id;
    std::string model = "knn";
    std::string source_override;
    std::string method_id;
    std::optional<int> w;
    std::optional<long> max_age;
    std::optional<double> alpha, beta, sigma;
    std::optional<std::size_t> ols_window;
    std::string residuals;
    std::string out = "-";

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("tsmodel", "exceedance forecasts for dataset questions");
        app->add_option("--questions,-q", in.questions, "questions JSONL")->required();
        app->add_option("--series-dir", series_dir, "directory of <question_id>.csv series");
        app->add_option("--series", series_file, "single date,value CSV (with --question-id)");
        app->add_option("--question-id", question_id, "question for --series");
        app->add_option("--ts.model,--model", model, "knn|linear|hybrid")->capture_default_str();
        app->add_option("--ts.source,--source", source_override, "use this source's defaults");
        app->add_option("--ts.w", w, "KNN day-of-year window");
        app->add_option("--ts.max-age", max_age, "KNN maximum neighbor age in days");
        app->add_option("--ts.alpha", alpha, "safe-linear weight");
        app->add_option("--ts.beta", beta, "hybrid weight");
        app->add_option("--ts.ols-window", ols_window, "OLS window (points)");
        app->add_option("--ts.sigma", sigma, "residual sigma for the linear model");
        app->add_option("--ts.residuals", residuals, "file of residuals to estimate sigma from");
        app->add_option("--method-id", method_id, "method id written to the output");
        app->add_option("--out", out, "JSONL output ('-' = stdout)")->capture_default_str();
        app->callback([this] { run(); });
    }

    void run() {
        if (series_dir.empty() == series_file.empty()) fail("pass exactly one of --series-dir, --series");
        if (!series_file.empty() && question_id.empty()) fail("--series needs --question-id");
        const TsModelKind kind = parse_ts_model(model);
        if (method_id.empty()) method_id = "ts-" + model;
        const ForecastMatrix m = in.load(false);
        std::optional<double> sigma_value = sigma;
        if (!residuals.empty()) sigma_value = estimate_residual_sigma(load_residuals(residuals));

        std::map<EventKey, double> values;
        for (const auto& [id, q] : m.questions()) {
            if (q.kind != QuestionKind::dataset) continue;
            std::string path;
            if (!series_file.empty()) {
                if (id != question_id) continue;
                path = series_file;
            } else {
                path = (std::filesystem::path(series_dir) / (id + ".csv")).string();
                if (!std::filesystem::exists(path)) continue;
            }
            TsModelConfig cfg =
                TsModelConfig::for_source(source_override.empty() ? q.source : parse_source(source_override));
            if (w) cfg.knn_window_w = *w;
            if (max_age) cfg.knn_max_age_days = *max_age;
            if (alpha) cfg.alpha = *alpha;
            if (beta) cfg.beta = *beta;
            if (ols_window) cfg.ols_window = *ols_window;
            if (sigma_value) cfg.residual_sigma = sigma_value;
            try {
                const auto ps = exceedance_forecasts(q, load_series_csv(path), kind, cfg);
                for (std::size_t i = 0; i < ps.size(); ++i) values[{id, static_cast<int>(i)}] = ps[i];
            } catch (const Error& e) {
                throw Error(e.kind(), "question '" + id + "': " + e.what());
            }
        }
        if (values.empty()) fail("no dataset question had a series");
        std::ostringstream os;
        write_event_forecasts(os, method_id, values);
        json cfg{{"ts.model", model}, {"method_id", method_id}};
        cfg["ts.sigma"] = sigma_value ? json(*sigma_value) : json(nullptr);
        ReportWriter("tsmodel", cfg, {in.questions, series_file, residuals}).write(out, os.str());
    }
};

/// Script file: JSON array of {"action": code or name, "p": belief, ...args}.
std::vector<PolicyOutput> load_script(const std::string& path) {
    const json j = json::parse(tools::read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_array() || j.empty()) fail(path + ": expected a non-empty JSON array");
    std::vector<PolicyOutput> out;
    for (const auto& e : j) {
        const std::string a = e.at("action").get<std::string>();
        std::optional<ActionKind> kind;
        for (auto k : kAllActions)
            if (a == std::string(1, action_code(k)) || a == to_string(k)) kind = k;
        if (!kind) fail(path + ": unknown action '" + a + "'");
        PolicyOutput o;
        o.action = Action::of(*kind);
        o.action.query = e.value("query", "");
        o.action.url = e.value("url", "");
        o.action.section = e.value("section", "");
        if (e.contains("ids")) o.action.ids = e["ids"].get<std::vector<std::string>>();
        o.belief.p = e.value("p", 0.5);
        o.action.probability = e.value("submit", o.belief.p);
        out.push_back(std::move(o));
    }
    return out;
}

struct SimulateCmd {
    std::string questions;
    std::string policy = "threshold";
    std::string script;
    std::uint64_t seed = 0;
    int tmax = kDefaultMaxSteps;
    double epsilon = 0.01;
    std::string series_dir;
    std::vector<std::string> blocklist;
    unsigned jobs = 1;
    std::string traces_out = "-";
    std::string stats_out;

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("simulate", "run the agent loop with a scripted policy");
        app->add_option("--questions,-q", questions, "questions JSONL")->required();
        app->add_option("--policy", policy, "script|threshold|random")->capture_default_str();
        app->add_option("--script", script, "JSON script for --policy script");
        app->add_option("--seed", seed, "RNG seed for --policy random")->capture_default_str();
        app->add_option("--tmax", tmax, "step cap")->capture_default_str();
        app->add_option("--epsilon", epsilon, "threshold policy stopping tolerance")->capture_default_str();
        app->add_option("--series-dir", series_dir, "directory of <question_id>.csv series for data tools");
        app->add_option("--blocklist", blocklist, "URL substrings to block");
        app->add_option("--jobs,-j", jobs, "worker threads")->capture_default_str();
        app->add_option("--traces-out", traces_out, "traces JSONL ('-' = stdout)")->capture_default_str();
        app->add_option("--stats-out", stats_out, "trace statistics CSV");
        app->callback([this] { run(); });
    }

    void run() {
        ForecastMatrix m;
        {
            std::ifstream in(questions);
            if (!in) fail("cannot open '" + questions + "'");
            read_questions(in, m);
        }
        std::vector<PolicyOutput> script_steps;
        if (policy == "script") {
            if (script.empty()) fail("--policy script needs --script");
            script_steps = load_script(script);
        } else if (policy != "threshold" && policy != "random") {
            fail("unknown --policy '" + policy + "'");
        }

        OfflineEnvironment offline;
        if (!series_dir.empty())
            for (const auto& [id, q] : m.questions()) {
                const auto path = std::filesystem::path(series_dir) / (id + ".csv");
                if (std::filesystem::exists(path)) offline.series[id] = load_series_csv(path.string());
            }

        std::vector<const Question*> qs;
        for (const auto& [id, q] : m.questions()) qs.push_back(&q);
        std::vector<AgentTrace> traces(qs.size());
        parallel_for(qs.size(), jobs, [&](std::size_t i) {
            const Question& q = *qs[i];
            ClampedEnvironment env(offline, q.forecast_due_date, blocklist);
            std::unique_ptr<Policy> pol;
            if (policy == "script") pol = std::make_unique<ScriptedPolicy>(script_steps);
            else if (policy == "threshold") pol = std::make_unique<ThresholdPolicy>(epsilon);
            else pol = std::make_unique<RandomPolicy>(seed);
            AgentOptions opt;
            opt.t_max = tmax;
            traces[i] = run_agent(q, *pol, env, opt);
        });

        std::ostringstream os;
        for (const auto& t : traces) {
            for (const auto& w : t.warnings) std::cerr << "warning: " << t.question_id << ": " << w << '\n';
            os << to_json(t).dump() << '\n';
        }
        json cfg{{"policy", policy}, {"seed", seed}, {"tmax", tmax}, {"epsilon", epsilon},
                 {"blocklist", blocklist}};
        const ReportWriter w("simulate", cfg, {questions, script});
        w.write(traces_out, os.str());
        if (!stats_out.empty()) {
            std::ostringstream ss;
            ss << "source,n,median_steps,submit_rate,median_evidence\n";
            for (const auto& r : trace_stats(traces))
                ss << r.source << ',' << r.n << ',' << format_double(r.median_steps) << ','
                   << format_double(r.submit_rate) << ',' << format_double(r.median_evidence) << '\n';
            w.write(stats_out, ss.str());
        }
    }
};

struct PipelineCmd {
    Inputs in;
    PriorFlags priors;
    AggFlags agg;
    std::vector<std::string> methods;
    std::string reference;
    std::string cal_kind = "hierarchical";
    double lambda = kDefaultCalibrationLambda;
    bool cal_loo = true;
    bool no_tune = false;
    bool rescale = false;
    int bins = kDefaultEceBins;
    std::size_t resamples = 5000;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
    std::string out_dir = "report";

    void add(CLI::App& root) {
        auto* app = root.add_subcommand("pipeline", "priors, aggregation, calibration, scoring, comparison");
        in.add(app);
        priors.add(app);
        agg.add(app, "shrink_prior");
        app->add_flag("--agg.no-tune", no_tune, "use --agg.f/--agg.c instead of LOO tuning");
        app->add_option("--methods,-m", methods, "methods (default: all)");
        app->add_option("--compare.reference,--reference", reference, "reference method for comparisons");
        app->add_option("--compare.resamples,--resamples", resamples, "bootstrap resamples")
            ->capture_default_str();
        app->add_option("--cal.kind", cal_kind, "global|hier|none")->capture_default_str();
        app->add_option("--cal.lambda", lambda, "offset penalty")->capture_default_str();
        app->add_flag("--cal.loo,!--cal.no-loo", cal_loo, "leave-one-question-out calibration");
        app->add_flag("--score.rescale-abs", rescale, "add mean difficulty back to ABS");
        app->add_option("--score.ece-bins", bins, "ECE bins")->capture_default_str();
        app->add_option("--seed", seed, "RNG seed")->capture_default_str();
        app->add_option("--jobs,-j", jobs, "worker threads")->capture_default_str();
        app->add_option("--out-dir", out_dir, "report directory")->capture_default_str();
        app->callback([this] { run(); });
    }

    void run() {
        const ForecastMatrix m = in.load();
        PipelineConfig cfg;
        cfg.methods = methods;
        if (!reference.empty()) cfg.reference = reference;
        cfg.aggregation = agg.spec();
        // --agg.tune-loo is implied for shrink_prior unless --agg.no-tune is given.
        cfg.tune_loo = !no_tune;
        cfg.tune_weighting = agg.weighting();
        if (cal_kind == "none") cfg.calibration = std::nullopt;
        else cfg.calibration = parse_calibration_kind(cal_kind);
        cfg.lambda = lambda;
        cfg.calibration_loo = cal_loo;
        cfg.use_crowd = !priors.no_crowd;
        cfg.use_emp = !priors.no_emp;
        cfg.priors = priors.load_table();
        cfg.rescale_abs = rescale;
        cfg.ece_bins = bins;
        cfg.n_resamples = resamples;
        cfg.seed = seed;
        cfg.jobs = jobs;

        const PipelineResult r = run_pipeline(m, cfg);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
        for (const auto& mr : r.methods)
            for (const auto& w : mr.warnings) std::cerr << "warning: " << mr.method_id << ": " << w << '\n';

        const PipelineReports rep = render_reports(r);
        const ReportWriter w("pipeline", config_to_json(cfg), in.paths());
        const std::filesystem::path dir(out_dir);
        w.write((dir / "forecasts.jsonl").string(), rep.forecasts);
        w.write((dir / "scores.csv").string(), rep.scores);
        if (cfg.reference) w.write((dir / "compare.csv").string(), rep.compare);
        if (cfg.tune_loo && cfg.aggregation.method == AggregationMethod::shrink_prior)
            w.write((dir / "tuning.csv").string(), rep.tuning);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forecastkit: forecast aggregation, calibration and evaluation"};
    app.require_subcommand(1);
    ScoreCmd score;
    AggregateCmd aggregate_cmd;
    CalibrateCmd calibrate;
    CompareCmd compare;
    AnovaCmd anova;
    TsModelCmd tsmodel;
    SimulateCmd simulate;
    PipelineCmd pipeline;
    score.add(app);
    aggregate_cmd.add(app);
    calibrate.add(app);
    compare.add(app);
    anova.add(app);
    tsmodel.add(app);
    simulate.add(app);
    pipeline.add(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    } catch (const fk::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == fk::ErrorKind::numerical ? kExitNumerical : kExitValidation;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    }
    return 0;
}
