#pragma once

// Deterministic agent loop: a policy proposes (action, belief) from the message
// history, a per-(source, step) tool table decides what is legal, and an
// environment answers actions. ClampedEnvironment enforces the leakage defenses
// (date clamping on data tools, URL blocklist on lookups and search hits).

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forecastkit/aggregate.hpp"
#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/stats.hpp"
#include "forecastkit/tsmodel.hpp"

namespace fk {

enum class Confidence { low, medium, high };

inline std::string_view to_string(Confidence c) {
    switch (c) {
        case Confidence::low: return "low";
        case Confidence::medium: return "medium";
        case Confidence::high: return "high";
    }
    return "low";
}

struct Evidence {
    std::string text;
    std::string source_ref;
    bool operator==(const Evidence&) const = default;
};

/// `confidence` is recorded but has no effect on control flow.
struct BeliefState {
    double p = 0.5;
    Confidence confidence = Confidence::low;
    std::vector<Evidence> evidence_for;
    std::vector<Evidence> evidence_against;
    std::vector<std::string> open_questions;
    std::string update_reasoning;

    std::size_t evidence_count() const { return evidence_for.size() + evidence_against.size(); }
    bool operator==(const BeliefState&) const = default;
};

enum class ActionKind : std::uint8_t {
    browse_web,
    read_files,
    url_lookup,
    wikipedia_fetch,
    history_fetch,
    model_fetch,
    combo_fetch,
    submit
};

inline constexpr std::array<ActionKind, 8> kAllActions = {
    ActionKind::browse_web,  ActionKind::read_files,    ActionKind::url_lookup,
    ActionKind::wikipedia_fetch, ActionKind::history_fetch, ActionKind::model_fetch,
    ActionKind::combo_fetch, ActionKind::submit};

/// One-letter shorthand used in trace strings ("c b b x").
inline char action_code(ActionKind k) {
    switch (k) {
        case ActionKind::browse_web: return 'b';
        case ActionKind::read_files: return 'r';
        case ActionKind::url_lookup: return 'u';
        case ActionKind::wikipedia_fetch: return 'w';
        case ActionKind::history_fetch: return 'h';
        case ActionKind::model_fetch: return 'm';
        case ActionKind::combo_fetch: return 'c';
        case ActionKind::submit: return 'x';
    }
    return '?';
}

inline std::string_view to_string(ActionKind k) {
    switch (k) {
        case ActionKind::browse_web: return "browse_web";
        case ActionKind::read_files: return "read_files";
        case ActionKind::url_lookup: return "url_lookup";
        case ActionKind::wikipedia_fetch: return "wikipedia_fetch";
        case ActionKind::history_fetch: return "history_fetch";
        case ActionKind::model_fetch: return "model_fetch";
        case ActionKind::combo_fetch: return "combo_fetch";
        case ActionKind::submit: return "submit";
    }
    return "?";
}

struct Action {
    ActionKind kind = ActionKind::submit;
    std::string query;             // browse_web
    std::vector<std::string> ids;  // read_files
    std::string url;               // url_lookup, wikipedia_fetch
    std::string section;           // wikipedia_fetch, optional
    double probability = 0.5;      // submit

    static Action of(ActionKind k) {
        Action a;
        a.kind = k;
        return a;
    }
    static Action browse(std::string q) {
        Action a = of(ActionKind::browse_web);
        a.query = std::move(q);
        return a;
    }
    static Action read(std::vector<std::string> ids) {
        Action a = of(ActionKind::read_files);
        a.ids = std::move(ids);
        return a;
    }
    static Action lookup(std::string url) {
        Action a = of(ActionKind::url_lookup);
        a.url = std::move(url);
        return a;
    }
    static Action wikipedia(std::string url, std::string section = {}) {
        Action a = of(ActionKind::wikipedia_fetch);
        a.url = std::move(url);
        a.section = std::move(section);
        return a;
    }
    static Action submit(double p) {
        Action a = of(ActionKind::submit);
        a.probability = p;
        return a;
    }
    bool operator==(const Action&) const = default;
};

class ActionSet {
public:
    constexpr ActionSet() = default;
    constexpr ActionSet(std::initializer_list<ActionKind> kinds) {
        for (auto k : kinds) insert(k);
    }

    constexpr void insert(ActionKind k) { bits_ |= bit(k); }
    constexpr bool contains(ActionKind k) const { return (bits_ & bit(k)) != 0; }
    constexpr ActionSet operator|(ActionSet o) const {
        ActionSet s;
        s.bits_ = bits_ | o.bits_;
        return s;
    }
    std::size_t size() const { return static_cast<std::size_t>(__builtin_popcount(bits_)); }
    bool empty() const { return bits_ == 0; }

    std::vector<ActionKind> kinds() const {
        std::vector<ActionKind> out;
        for (auto k : kAllActions)
            if (contains(k)) out.push_back(k);
        return out;
    }

    /// Codes in table order, e.g. "bruwx".
    std::string codes() const {
        std::string s;
        for (auto k : kinds()) s += action_code(k);
        return s;
    }

    constexpr bool operator==(const ActionSet&) const = default;

private:
    static constexpr std::uint16_t bit(ActionKind k) {
        return static_cast<std::uint16_t>(1u << static_cast<unsigned>(k));
    }
    std::uint16_t bits_ = 0;
};

inline constexpr ActionSet kSearchTools{ActionKind::browse_web, ActionKind::read_files,
                                        ActionKind::url_lookup, ActionKind::submit};
inline constexpr ActionSet kBasicTools{ActionKind::url_lookup, ActionKind::submit};

/// Legal actions per (source, step). A step-specific row wins over the source's
/// default row; sources with no row get the search tools.
class ToolTable {
public:
    void set(Source s, ActionSet tools) { rows_[{s, 0}] = tools; }
    void set(Source s, int step, ActionSet tools) { rows_[{s, step}] = tools; }

    bool has_source(Source s) const {
        auto it = rows_.lower_bound({s, 0});
        return it != rows_.end() && it->first.first == s;
    }

    ActionSet allowed(Source s, int step) const {
        if (auto it = rows_.find({s, step}); it != rows_.end()) return it->second;
        if (auto it = rows_.find({s, 0}); it != rows_.end()) return it->second;
        return kSearchTools;
    }

    static ToolTable standard() {
        ToolTable t;
        const ActionSet combo{ActionKind::combo_fetch};
        t.set(Source::fred, combo | kSearchTools);
        t.set(Source::yfinance, combo | kSearchTools);
        t.set(Source::dbnomics, ActionSet{ActionKind::model_fetch} | kBasicTools);
        t.set(Source::dbnomics, 1, {ActionKind::model_fetch});
        t.set(Source::dbnomics, 2, {ActionKind::submit});
        // Nothing but submit remains once the forced two-step plan has run.
        for (int step = 3; step <= 64; ++step) t.set(Source::dbnomics, step, {ActionKind::submit});
        t.set(Source::polymarket, ActionSet{ActionKind::history_fetch} | kSearchTools);
        t.set(Source::manifold, ActionSet{ActionKind::history_fetch} | kSearchTools);
        t.set(Source::wikipedia, ActionSet{ActionKind::wikipedia_fetch} | kSearchTools);
        t.set(Source::rfi, kSearchTools);
        t.set(Source::metaculus, kSearchTools);
        t.set(Source::acled, kSearchTools);
        return t;
    }

private:
    std::map<std::pair<Source, int>, ActionSet> rows_;
};

inline ActionSet meta_controller(Source source, int step) {
    static const ToolTable table = ToolTable::standard();
    return table.allowed(source, step);
}

// ---------------------------------------------------------------------------
// Observations and message history

struct SearchHit {
    std::string id;
    std::string url;
    std::optional<Date> date;
    std::string snippet;
    bool operator==(const SearchHit&) const = default;
};

/// Plain text plus optional structured payloads (time series, model estimates,
/// search hits, snapshot date).
struct Observation {
    std::string text;
    bool error = false;
    std::vector<SeriesPoint> series;
    std::vector<double> model_estimates;  // one per resolution date
    std::vector<SearchHit> hits;
    std::optional<Date> as_of;
    bool operator==(const Observation&) const = default;

    static Observation failure(std::string msg) {
        Observation o;
        o.text = "ERROR: " + std::move(msg);
        o.error = true;
        return o;
    }
};

struct Step {
    int t = 0;
    Action action;
    Observation observation;
    BeliefState belief;
    bool legal = true;    // false: rejected by the tool table, observation holds the error
    bool coerced = false; // the only legal action at this step replaced the proposal
    bool operator==(const Step&) const = default;
};

/// m_t = (q, a_1..t, o_1..t, b_0..t)
struct MessageHistory {
    const Question* question = nullptr;
    BeliefState initial;
    std::vector<Step> steps;

    const BeliefState& belief() const { return steps.empty() ? initial : steps.back().belief; }
    int next_step() const { return static_cast<int>(steps.size()) + 1; }
};

// ---------------------------------------------------------------------------
// Policy and environment contracts

struct PolicyOutput {
    Action action;
    BeliefState belief;
    std::optional<std::string> malformed;  // set when the policy produced unusable output

    static PolicyOutput invalid(std::string why) {
        PolicyOutput o;
        o.malformed = std::move(why);
        return o;
    }
};

class Policy {
public:
    virtual ~Policy() = default;
    virtual PolicyOutput decide(const MessageHistory& history, const ActionSet& allowed) = 0;
};

class Environment {
public:
    virtual ~Environment() = default;
    /// `cutoff` is the last date whose data may be returned.
    virtual Observation execute(const Action& action, const Question& q, Date cutoff) = 0;
};

/// Raised when data dated after the cutoff reaches the clamping layer.
class LeakError : public Error {
public:
    explicit LeakError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

// ---------------------------------------------------------------------------
// Trace

enum class Terminal { submitted, forced, aborted };

inline std::string_view to_string(Terminal t) {
    switch (t) {
        case Terminal::submitted: return "submitted";
        case Terminal::forced: return "forced";
        case Terminal::aborted: return "aborted";
    }
    return "aborted";
}

struct AgentTrace {
    std::string question_id;
    Source source = Source::other;
    std::vector<Step> steps;
    Terminal terminal = Terminal::forced;
    double final_p = 0.5;
    std::string diagnostic;  // why an aborted trace stopped
    std::vector<std::string> warnings;

    std::size_t step_count() const { return steps.size(); }
    const BeliefState& last_belief(const BeliefState& fallback) const {
        return steps.empty() ? fallback : steps.back().belief;
    }
    std::string codes() const {
        std::string s;
        for (const auto& st : steps) s += action_code(st.action.kind);
        return s;
    }
};

inline constexpr int kDefaultMaxSteps = 10;

struct AgentOptions {
    int t_max = kDefaultMaxSteps;
    std::optional<Date> cutoff;  // defaults to the question's forecast due date
    const ToolTable* tools = nullptr;  // defaults to ToolTable::standard()
};

namespace detail {

inline std::optional<std::string> check_belief(const BeliefState& b) {
    if (!std::isfinite(b.p) || b.p < 0.0 || b.p > 1.0)
        return "belief probability " + std::to_string(b.p) + " outside [0,1]";
    return std::nullopt;
}

/// Replacement for an illegal proposal when exactly one action is legal.
inline std::optional<Action> forced_action(const ActionSet& allowed, const BeliefState& belief) {
    if (allowed.size() != 1) return std::nullopt;
    const ActionKind k = allowed.kinds().front();
    switch (k) {
        case ActionKind::submit: return Action::submit(belief.p);
        case ActionKind::model_fetch:
        case ActionKind::history_fetch:
        case ActionKind::combo_fetch: return Action::of(k);
        default: return std::nullopt;  // needs arguments only the policy can supply
    }
}

}  // namespace detail

/// Runs the loop for one question. Illegal proposals become error observations
/// (or the single legal action when the table allows only one); malformed policy
/// output aborts the trace. Submitted and forced probabilities are clamped to
/// the submission band.
inline AgentTrace run_agent(const Question& q, Policy& policy, Environment& env,
                            const AgentOptions& opt = {}) {
    if (opt.t_max < 1) fail("run_agent: t_max must be >= 1");
    static const ToolTable standard = ToolTable::standard();
    const ToolTable& tools = opt.tools ? *opt.tools : standard;
    const Date cutoff = opt.cutoff.value_or(q.forecast_due_date);

    AgentTrace trace;
    trace.question_id = q.id;
    trace.source = q.source;
    if (!tools.has_source(q.source))
        trace.warnings.push_back("no tool row for source '" + std::string(to_string(q.source)) +
                                 "'; using search tools");

    MessageHistory history;
    history.question = &q;

    for (int t = 1; t <= opt.t_max; ++t) {
        const ActionSet allowed = tools.allowed(q.source, t);
        PolicyOutput out = policy.decide(history, allowed);
        if (!out.malformed) out.malformed = detail::check_belief(out.belief);
        if (out.malformed) {
            trace.terminal = Terminal::aborted;
            trace.diagnostic = "step " + std::to_string(t) + ": " + *out.malformed;
            trace.final_p = clamp_probability(history.belief().p);
            trace.steps = std::move(history.steps);
            return trace;
        }

        Step step;
        step.t = t;
        step.action = std::move(out.action);
        step.belief = std::move(out.belief);
        if (!allowed.contains(step.action.kind)) {
            if (auto forced = detail::forced_action(allowed, step.belief)) {
                step.action = *forced;
                step.coerced = true;
            } else {
                step.legal = false;
            }
        }

        if (step.legal && step.action.kind == ActionKind::submit) {
            if (!std::isfinite(step.action.probability)) {
                trace.terminal = Terminal::aborted;
                trace.diagnostic = "step " + std::to_string(t) + ": non-finite submission";
                trace.final_p = clamp_probability(history.belief().p);
                trace.steps = std::move(history.steps);
                return trace;
            }
            trace.final_p = clamp_probability(step.action.probability);
            step.observation.text = "submitted " + std::to_string(trace.final_p);
            history.steps.push_back(std::move(step));
            trace.terminal = Terminal::submitted;
            trace.steps = std::move(history.steps);
            return trace;
        }

        if (step.legal) {
            step.observation = env.execute(step.action, q, cutoff);
        } else {
            step.observation = Observation::failure(
                std::string(to_string(step.action.kind)) + " is not available at step " +
                std::to_string(t) + "; allowed tools: " + allowed.codes());
        }
        history.steps.push_back(std::move(step));
    }

    trace.terminal = Terminal::forced;
    trace.final_p = clamp_probability(history.belief().p);
    trace.steps = std::move(history.steps);
    return trace;
}

// ---------------------------------------------------------------------------
// Environments

inline std::string render_series(const std::vector<SeriesPoint>& pts) {
    std::ostringstream os;
    os << "date,value\n";
    for (const auto& p : pts) os << p.date.iso() << ',' << p.value << '\n';
    return os.str();
}

inline std::string render_estimates(const Question& q, const std::vector<double>& est) {
    std::ostringstream os;
    os << "resolution_date,probability\n";
    for (std::size_t i = 0; i < est.size() && i < q.resolution_dates.size(); ++i)
        os << q.resolution_dates[i].iso() << ',' << est[i] << '\n';
    return os.str();
}

inline std::string render_hits(const std::vector<SearchHit>& hits) {
    std::ostringstream os;
    for (const auto& h : hits)
        os << '[' << h.id << "] " << h.url << (h.date ? " (" + h.date->iso() + ")" : "") << ": "
           << h.snippet << '\n';
    return os.str();
}

inline std::string render_documents(const std::vector<SearchHit>& docs) {
    std::string out;
    for (const auto& d : docs) out += d.snippet + "\n";
    return out;
}

struct Document {
    std::string id;
    std::string url;
    std::optional<Date> date;
    std::string text;
};

/// In-memory environment: a document store for search/read, a page map for URL
/// lookups, dated Wikipedia snapshots, and raw time series per question.
/// Honors the cutoff it is given.
class OfflineEnvironment : public Environment {
public:
    std::vector<Document> documents;
    std::map<std::string, std::string> pages;
    std::map<std::string, std::vector<std::pair<Date, std::string>>> wiki_snapshots;
    std::map<std::string, std::vector<SeriesPoint>> series;  // by question id
    std::size_t max_hits = 10;
    long market_history_days = 60;

    Observation execute(const Action& a, const Question& q, Date cutoff) override {
        switch (a.kind) {
            case ActionKind::browse_web: return browse(a.query, cutoff);
            case ActionKind::read_files: return read(a.ids, cutoff);
            case ActionKind::url_lookup: {
                auto it = pages.find(a.url);
                if (it == pages.end()) return Observation::failure("no page at " + a.url);
                Observation o;
                o.text = it->second;
                return o;
            }
            case ActionKind::wikipedia_fetch: return wikipedia(a.url, cutoff);
            case ActionKind::history_fetch:
            case ActionKind::model_fetch:
            case ActionKind::combo_fetch: return data_tool(a.kind, q, cutoff);
            case ActionKind::submit: return Observation::failure("submit is handled by the loop");
        }
        return Observation::failure("unknown action");
    }

private:
    Observation browse(const std::string& query, Date cutoff) const {
        std::vector<std::string> words;
        std::istringstream is(to_lower(query));
        for (std::string w; is >> w;)
            if (w.size() > 2) words.push_back(w);
        Observation o;
        for (const auto& d : documents) {
            if (o.hits.size() >= max_hits) break;
            if (d.date && *d.date > cutoff) continue;
            const std::string text = to_lower(d.text);
            const bool match = std::any_of(words.begin(), words.end(), [&](const std::string& w) {
                return text.find(w) != std::string::npos;
            });
            if (match) o.hits.push_back({d.id, d.url, d.date, d.text.substr(0, 200)});
        }
        o.text = o.hits.empty() ? "no results" : render_hits(o.hits);
        return o;
    }

    /// Each document read is also listed in `hits`, with its full text as the snippet.
    Observation read(const std::vector<std::string>& ids, Date cutoff) const {
        Observation o;
        for (const auto& id : ids) {
            auto it = std::find_if(documents.begin(), documents.end(),
                                   [&](const Document& d) { return d.id == id; });
            if (it == documents.end() || (it->date && *it->date > cutoff)) continue;
            o.hits.push_back({it->id, it->url, it->date, it->text});
        }
        if (o.hits.empty()) return Observation::failure("no files with the given ids");
        o.text = render_documents(o.hits);
        return o;
    }

    Observation wikipedia(const std::string& url, Date cutoff) const {
        auto it = wiki_snapshots.find(url);
        if (it == wiki_snapshots.end()) return Observation::failure("no snapshot for " + url);
        const std::pair<Date, std::string>* best = nullptr;
        for (const auto& snap : it->second)
            if (snap.first <= cutoff && (!best || snap.first > best->first)) best = &snap;
        if (!best) return Observation::failure("no snapshot of " + url + " at or before " + cutoff.iso());
        Observation o;
        o.as_of = best->first;
        o.text = best->second;
        return o;
    }

    Observation data_tool(ActionKind k, const Question& q, Date cutoff) const {
        auto it = series.find(q.id);
        if (it == series.end()) return Observation::failure("no series for question " + q.id);
        const bool market = q.kind == QuestionKind::market;
        const SeriesHistory h = fetch_history(
            it->second, cutoff, market ? std::optional<long>(market_history_days) : std::nullopt);
        Observation o;
        if (k != ActionKind::model_fetch) o.series = h.points();
        if (k != ActionKind::history_fetch) {
            if (h.points().empty()) return Observation::failure("empty history for " + q.id);
            const double v = reference_value(h, std::min(cutoff, q.forecast_due_date));
            const auto cfg = TsModelConfig::for_source(q.source);
            for (Date r : q.resolution_dates)
                o.model_estimates.push_back(
                    knn_exceedance(h, v, r, cfg.knn_window_w, cfg.knn_max_age_days).p);
        }
        o.text = render_series(o.series);
        if (!o.model_estimates.empty()) o.text += render_estimates(q, o.model_estimates);
        return o;
    }
};

/// Leakage-defense wrapper around any environment. Every inner call receives
/// the cutoff. Dated payloads are then checked: a series point or snapshot
/// after the cutoff is a hard LeakError, while search hits and documents dated
/// after it (or pointing at a blocklisted URL) are dropped. Observation text is
/// rebuilt from the checked payload for every tool except URL lookups, whose
/// pages carry no dates; those are guarded by the blocklist alone (substring
/// match, including the question's own blocked_urls), and blocked URLs never
/// reach the inner environment.
class ClampedEnvironment : public Environment {
public:
    ClampedEnvironment(Environment& inner, Date cutoff, std::vector<std::string> blocklist = {})
        : inner_(inner), cutoff_(cutoff), blocklist_(std::move(blocklist)) {}

    bool blocked(const std::string& url, const Question& q) const {
        auto hit = [&](const std::string& pat) {
            return !pat.empty() && url.find(pat) != std::string::npos;
        };
        return std::any_of(blocklist_.begin(), blocklist_.end(), hit) ||
               std::any_of(q.blocked_urls.begin(), q.blocked_urls.end(), hit);
    }

    Observation execute(const Action& a, const Question& q, Date cutoff) override {
        const Date eff = std::min(cutoff, cutoff_);
        if (a.kind == ActionKind::url_lookup && blocked(a.url, q))
            return Observation::failure("access to " + a.url +
                                        " is blocked (possible resolution source)");
        Observation o = inner_.execute(a, q, eff);
        if (o.error) return o;

        for (const auto& p : o.series)
            if (p.date > eff)
                throw LeakError(std::string(to_string(a.kind)) + " returned a point dated " +
                                p.date.iso() + " after cutoff " + eff.iso());
        if (a.kind == ActionKind::wikipedia_fetch && !o.as_of)
            throw LeakError("wikipedia_fetch returned an undated snapshot for " + a.url);
        if (o.as_of && *o.as_of > eff)
            throw LeakError(std::string(to_string(a.kind)) + " returned a snapshot dated " +
                            o.as_of->iso() + " after cutoff " + eff.iso());
        std::vector<SearchHit> kept;
        for (auto& h : o.hits)
            if (!blocked(h.url, q) && !(h.date && *h.date > eff)) kept.push_back(std::move(h));
        o.hits = std::move(kept);

        switch (a.kind) {
            case ActionKind::browse_web:
                o.text = o.hits.empty() ? "no results" : render_hits(o.hits);
                break;
            case ActionKind::read_files:
                if (o.hits.empty()) return Observation::failure("no files with the given ids");
                o.text = render_documents(o.hits);
                break;
            case ActionKind::history_fetch:
            case ActionKind::model_fetch:
            case ActionKind::combo_fetch:
                o.text = render_series(o.series);
                if (!o.model_estimates.empty()) o.text += render_estimates(q, o.model_estimates);
                break;
            case ActionKind::wikipedia_fetch:
            case ActionKind::url_lookup:
            case ActionKind::submit: break;
        }
        return o;
    }

private:
    Environment& inner_;
    Date cutoff_;
    std::vector<std::string> blocklist_;
};

// ---------------------------------------------------------------------------
// Shipped policies

/// Replays a fixed list of decisions; once exhausted the last one repeats.
class ScriptedPolicy : public Policy {
public:
    explicit ScriptedPolicy(std::vector<PolicyOutput> script) : script_(std::move(script)) {
        if (script_.empty()) fail("ScriptedPolicy: empty script");
    }

    /// Convenience: each entry is (action, belief p); submit entries submit that p.
    static ScriptedPolicy from_actions(const std::vector<std::pair<Action, double>>& steps) {
        std::vector<PolicyOutput> script;
        for (const auto& [a, p] : steps) {
            PolicyOutput o;
            o.action = a;
            if (o.action.kind == ActionKind::submit) o.action.probability = p;
            o.belief.p = p;
            script.push_back(std::move(o));
        }
        return ScriptedPolicy(std::move(script));
    }

    PolicyOutput decide(const MessageHistory& h, const ActionSet&) override {
        const auto i = std::min<std::size_t>(h.steps.size(), script_.size() - 1);
        return script_[i];
    }

private:
    std::vector<PolicyOutput> script_;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Preferred order: the source-specific tool first, then search, then submit.
inline Action preferred_action(const Question& q, const ActionSet& allowed,
                               const MessageHistory& h, double p) {
    std::set<ActionKind> used;
    for (const auto& s : h.steps) used.insert(s.action.kind);
    for (auto k : {ActionKind::model_fetch, ActionKind::combo_fetch, ActionKind::history_fetch,
                   ActionKind::wikipedia_fetch}) {
        if (allowed.contains(k) && !used.count(k)) {
            if (k == ActionKind::wikipedia_fetch)
                return Action::wikipedia(q.blocked_urls.empty() ? "" : q.blocked_urls.front());
            return Action::of(k);
        }
    }
    if (allowed.contains(ActionKind::browse_web)) return Action::browse(q.question_text);
    return Action::submit(p);
}

}  // namespace detail

/// Moves its belief a fixed fraction toward a signal each step (the mean of the
/// most recent model estimates seen, otherwise the question's crowd/empirical
/// anchor or 0.5) and submits once the belief has moved by less
/// than `epsilon` on two consecutive steps.
class ThresholdPolicy : public Policy {
public:
    explicit ThresholdPolicy(double epsilon = 0.01, double rate = 0.5)
        : epsilon_(epsilon), rate_(rate) {}

    PolicyOutput decide(const MessageHistory& h, const ActionSet& allowed) override {
        const Question& q = *h.question;
        double signal = q.crowd_estimate.value_or(q.empirical_prior.value_or(0.5));
        for (auto it = h.steps.rbegin(); it != h.steps.rend(); ++it)
            if (!it->observation.model_estimates.empty()) {
                signal = mean_of(it->observation.model_estimates);
                break;
            }

        PolicyOutput out;
        out.belief = h.belief();
        const double prev = out.belief.p;
        out.belief.p = prev + rate_ * (signal - prev);
        out.belief.update_reasoning = "moved toward signal " + std::to_string(signal);
        if (!h.steps.empty() && !h.steps.back().observation.hits.empty()) {
            const auto& hit = h.steps.back().observation.hits.front();
            (signal >= 0.5 ? out.belief.evidence_for : out.belief.evidence_against)
                .push_back({hit.snippet, hit.id});
        }

        const std::size_t n = h.steps.size();
        const bool settled =
            n >= 1 && std::abs(out.belief.p - prev) < epsilon_ &&
            std::abs(h.steps[n - 1].belief.p - (n >= 2 ? h.steps[n - 2].belief.p : h.initial.p)) <
                epsilon_;
        if (settled && allowed.contains(ActionKind::submit))
            out.action = Action::submit(out.belief.p);
        else
            out.action = detail::preferred_action(q, allowed, h, out.belief.p);
        if (out.action.kind == ActionKind::submit) out.action.probability = out.belief.p;
        return out;
    }

private:
    double epsilon_;
    double rate_;
};

/// Picks a uniformly random legal action and a uniformly random belief at each
/// step. Stateless: draws depend only on (seed, question id, step).
class RandomPolicy : public Policy {
public:
    explicit RandomPolicy(std::uint64_t seed) : seed_(seed) {}

    PolicyOutput decide(const MessageHistory& h, const ActionSet& allowed) override {
        const Question& q = *h.question;
        CounterRng rng(seed_ ^ detail::fnv1a(q.id), static_cast<std::uint64_t>(h.next_step()));
        const auto kinds = allowed.kinds();
        PolicyOutput out;
        out.belief = h.belief();
        out.belief.p = rng.uniform();
        out.belief.confidence = static_cast<Confidence>(rng.below(3));
        if (rng.uniform() < 0.3)
            (rng.uniform() < 0.5 ? out.belief.evidence_for : out.belief.evidence_against)
                .push_back({"observation " + std::to_string(h.steps.size()), "step"});
        const ActionKind k = kinds[static_cast<std::size_t>(rng.below(kinds.size()))];
        switch (k) {
            case ActionKind::browse_web: out.action = Action::browse(q.question_text); break;
            case ActionKind::read_files: {
                std::vector<std::string> ids;
                for (const auto& s : h.steps)
                    for (const auto& hit : s.observation.hits) ids.push_back(hit.id);
                out.action = Action::read(ids);
                break;
            }
            case ActionKind::url_lookup:
                out.action = Action::lookup(q.blocked_urls.empty()
                                                ? "https://example.org/" + q.id
                                                : q.blocked_urls[rng.below(q.blocked_urls.size())]);
                break;
            case ActionKind::wikipedia_fetch:
                out.action = Action::wikipedia(q.blocked_urls.empty() ? "" : q.blocked_urls.front());
                break;
            case ActionKind::submit: out.action = Action::submit(out.belief.p); break;
            default: out.action = Action::of(k); break;
        }
        return out;
    }

private:
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Trace statistics

struct TraceStatsRow {
    std::string source;  // source name or "all"
    std::size_t n = 0;
    double median_steps = 0.0;
    double submit_rate = 0.0;
    double median_evidence = 0.0;  // |evidence_for| + |evidence_against| of the final belief
};

inline std::vector<TraceStatsRow> trace_stats(const std::vector<AgentTrace>& traces) {
    if (traces.empty()) fail("trace_stats: no traces");
    std::map<std::string, std::vector<const AgentTrace*>> groups;
    for (const auto& t : traces) {
        groups[std::string(to_string(t.source))].push_back(&t);
        groups["all"].push_back(&t);
    }
    std::vector<TraceStatsRow> rows;
    const BeliefState none;
    for (const auto& [name, ts] : groups) {
        std::vector<double> steps, evidence;
        std::size_t submitted = 0;
        for (const auto* t : ts) {
            steps.push_back(static_cast<double>(t->step_count()));
            evidence.push_back(static_cast<double>(t->last_belief(none).evidence_count()));
            if (t->terminal == Terminal::submitted) ++submitted;
        }
        rows.push_back({name, ts.size(), median_of(steps),
                        static_cast<double>(submitted) / static_cast<double>(ts.size()),
                        median_of(evidence)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const BeliefState& b) {
    auto ev = [](const std::vector<Evidence>& xs) {
        json a = json::array();
        for (const auto& e : xs) a.push_back({{"text", e.text}, {"source_ref", e.source_ref}});
        return a;
    };
    return {{"p", b.p},
            {"confidence", std::string(to_string(b.confidence))},
            {"evidence_for", ev(b.evidence_for)},
            {"evidence_against", ev(b.evidence_against)},
            {"open_questions", b.open_questions},
            {"update_reasoning", b.update_reasoning}};
}

inline json to_json(const Action& a) {
    json j{{"kind", std::string(to_string(a.kind))}, {"code", std::string(1, action_code(a.kind))}};
    switch (a.kind) {
        case ActionKind::browse_web: j["query"] = a.query; break;
        case ActionKind::read_files: j["ids"] = a.ids; break;
        case ActionKind::url_lookup: j["url"] = a.url; break;
        case ActionKind::wikipedia_fetch:
            j["url"] = a.url;
            if (!a.section.empty()) j["section"] = a.section;
            break;
        case ActionKind::submit: j["probability"] = a.probability; break;
        default: break;
    }
    return j;
}

inline json to_json(const AgentTrace& t) {
    json steps = json::array();
    for (const auto& s : t.steps) {
        json obs{{"text", s.observation.text}, {"error", s.observation.error}};
        if (s.observation.as_of) obs["as_of"] = s.observation.as_of->iso();
        steps.push_back({{"t", s.t},
                         {"action", to_json(s.action)},
                         {"observation", obs},
                         {"belief", to_json(s.belief)},
                         {"legal", s.legal},
                         {"coerced", s.coerced}});
    }
    json j{{"question_id", t.question_id},
           {"source", std::string(to_string(t.source))},
           {"terminal", std::string(to_string(t.terminal))},
           {"final_p", t.final_p},
           {"trace", t.codes()},
           {"steps", steps}};
    if (!t.diagnostic.empty()) j["diagnostic"] = t.diagnostic;
    if (!t.warnings.empty()) j["warnings"] = t.warnings;
    return j;
}

}  // namespace fk
