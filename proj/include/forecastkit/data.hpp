#pragma once

// Domain model for binary forecasting questions, their resolution events and
// per-trial forecasts, plus JSON-lines ingestion/serialization.

#include <algorithm>
#include <array>
#include <cctype>
#include <compare>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "forecastkit/common.hpp"
#include "forecastkit/date.hpp"

namespace fk {

using json = nlohmann::json;

enum class Source {
    polymarket,
    manifold,
    metaculus,
    rfi,
    acled,
    dbnomics,
    fred,
    wikipedia,
    yfinance,
    other
};

enum class QuestionKind { market, dataset };

inline constexpr std::array<Source, 10> kAllSources = {
    Source::polymarket, Source::manifold, Source::metaculus, Source::rfi,      Source::acled,
    Source::dbnomics,   Source::fred,     Source::wikipedia, Source::yfinance, Source::other};

inline std::string_view to_string(Source s) {
    switch (s) {
        case Source::polymarket: return "polymarket";
        case Source::manifold: return "manifold";
        case Source::metaculus: return "metaculus";
        case Source::rfi: return "rfi";
        case Source::acled: return "acled";
        case Source::dbnomics: return "dbnomics";
        case Source::fred: return "fred";
        case Source::wikipedia: return "wikipedia";
        case Source::yfinance: return "yfinance";
        case Source::other: return "other";
    }
    return "other";
}

inline std::string_view to_string(QuestionKind k) {
    return k == QuestionKind::market ? "market" : "dataset";
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Case-insensitive; "infer" and "yahoo" style aliases are not accepted.
inline Source parse_source(std::string_view name) {
    const std::string lower = to_lower(name);
    for (Source s : kAllSources)
        if (to_string(s) == lower) return s;
    fail("unknown source '" + std::string(name) + "'");
}

inline QuestionKind parse_kind(std::string_view name) {
    const std::string lower = to_lower(name);
    if (lower == "market") return QuestionKind::market;
    if (lower == "dataset") return QuestionKind::dataset;
    fail("unknown question kind '" + std::string(name) + "'");
}

inline QuestionKind default_kind(Source s) {
    switch (s) {
        case Source::polymarket:
        case Source::manifold:
        case Source::metaculus:
        case Source::rfi:
        case Source::other: return QuestionKind::market;
        default: return QuestionKind::dataset;
    }
}

inline constexpr std::size_t kMaxDatasetHorizons = 8;

struct Question {
    std::string id;
    Source source = Source::other;
    QuestionKind kind = QuestionKind::market;
    std::string subtype;  // empty means the "(all)" row of the prior table
    std::string question_text;
    Date forecast_due_date;
    std::vector<Date> resolution_dates;
    std::optional<double> freeze_value;
    std::optional<double> crowd_estimate;
    std::optional<double> empirical_prior;
    std::vector<std::string> blocked_urls;

    bool operator==(const Question&) const = default;
};

inline void validate(const Question& q) {
    auto bad = [&](const std::string& rule) { fail("question '" + q.id + "': " + rule); };
    if (q.id.empty()) fail("question with empty id");
    if (q.resolution_dates.empty()) bad("needs at least one resolution date");
    for (std::size_t i = 0; i < q.resolution_dates.size(); ++i) {
        if (q.resolution_dates[i] <= q.forecast_due_date)
            bad("resolution date " + q.resolution_dates[i].iso() +
                " is not after forecast_due_date " + q.forecast_due_date.iso());
        if (i > 0 && q.resolution_dates[i] <= q.resolution_dates[i - 1])
            bad("resolution_dates must be strictly increasing");
    }
    if (q.kind == QuestionKind::market && q.resolution_dates.size() != 1)
        bad("market questions have exactly one resolution date");
    if (q.kind == QuestionKind::dataset && q.resolution_dates.size() > kMaxDatasetHorizons)
        bad("dataset questions have at most 8 resolution dates");
    auto prob = [&](const std::optional<double>& v, const char* name) {
        if (v && !(*v >= 0.0 && *v <= 1.0)) bad(std::string(name) + " outside [0,1]");
    };
    prob(q.crowd_estimate, "crowd_estimate");
    prob(q.empirical_prior, "empirical_prior");
    if (q.crowd_estimate && q.kind != QuestionKind::market)
        bad("crowd_estimate is only allowed on market questions");
    if (q.empirical_prior && q.kind != QuestionKind::dataset)
        bad("empirical_prior is only allowed on dataset questions");
}

struct EventKey {
    std::string question_id;
    int rd_index = 0;

    auto operator<=>(const EventKey&) const = default;
    bool operator==(const EventKey&) const = default;
};

inline std::string to_string(const EventKey& k) {
    return k.question_id + "#" + std::to_string(k.rd_index);
}

struct ResolutionEvent {
    std::string question_id;
    int rd_index = 0;
    Date resolution_date;
    std::optional<int> outcome;  // nullopt = unresolved, excluded from scoring

    EventKey key() const { return {question_id, rd_index}; }
    bool resolved() const { return outcome.has_value(); }
    bool operator==(const ResolutionEvent&) const = default;
};

struct ForecastKey {
    std::string method_id;
    std::string question_id;
    int rd_index = 0;
    int trial_index = 0;

    auto operator<=>(const ForecastKey&) const = default;
    bool operator==(const ForecastKey&) const = default;
};

struct TrialForecast {
    std::string method_id;
    std::string question_id;
    int rd_index = 0;
    int trial_index = 0;
    std::optional<double> probability;  // nullopt = recorded missing trial
};

/// Method x question x resolution-event x trial table plus outcomes.
class ForecastMatrix {
public:
    void add_question(Question q) {
        validate(q);
        if (questions_.count(q.id)) fail("duplicate question id '" + q.id + "'");
        for (std::size_t i = 0; i < q.resolution_dates.size(); ++i) {
            ResolutionEvent ev{q.id, static_cast<int>(i), q.resolution_dates[i], std::nullopt};
            events_.emplace(ev.key(), ev);
        }
        questions_.emplace(q.id, std::move(q));
    }

    void set_outcome(const EventKey& key, std::optional<int> outcome,
                     std::optional<Date> resolution_date = std::nullopt) {
        auto it = events_.find(key);
        if (it == events_.end()) fail("outcome for unknown event " + to_string(key));
        if (outcome && *outcome != 0 && *outcome != 1)
            fail("outcome for " + to_string(key) + " must be 0, 1 or null");
        if (resolution_date && *resolution_date != it->second.resolution_date)
            fail("outcome for " + to_string(key) + " has resolution_date " +
                 resolution_date->iso() + ", question says " +
                 it->second.resolution_date.iso());
        it->second.outcome = outcome;
    }

    void add_forecast(const TrialForecast& f) {
        const EventKey ek{f.question_id, f.rd_index};
        if (!questions_.count(f.question_id))
            fail("forecast for unknown question '" + f.question_id + "'");
        if (!events_.count(ek)) fail("forecast for unknown event " + to_string(ek));
        if (f.method_id.empty()) fail("forecast with empty method_id");
        if (f.trial_index < 0) fail("negative trial_index for " + to_string(ek));
        if (f.probability && !(std::isfinite(*f.probability) && *f.probability >= 0.0 &&
                               *f.probability <= 1.0))
            fail("probability outside [0,1] for method '" + f.method_id + "' event " +
                 to_string(ek));
        ForecastKey key{f.method_id, f.question_id, f.rd_index, f.trial_index};
        if (!forecasts_.emplace(key, f.probability).second)
            fail("duplicate forecast key (" + f.method_id + ", " + to_string(ek) + ", trial " +
                 std::to_string(f.trial_index) + ")");
    }

    const std::map<std::string, Question>& questions() const { return questions_; }
    const std::map<EventKey, ResolutionEvent>& events() const { return events_; }
    const std::map<ForecastKey, std::optional<double>>& forecasts() const { return forecasts_; }

    const Question& question(const std::string& id) const {
        auto it = questions_.find(id);
        if (it == questions_.end()) fail("unknown question '" + id + "'");
        return it->second;
    }

    const ResolutionEvent& event(const EventKey& key) const {
        auto it = events_.find(key);
        if (it == events_.end()) fail("unknown event " + to_string(key));
        return it->second;
    }

    std::vector<ResolutionEvent> resolved_events() const {
        std::vector<ResolutionEvent> out;
        for (const auto& [k, ev] : events_)
            if (ev.resolved()) out.push_back(ev);
        return out;
    }

    std::vector<std::string> methods() const {
        std::set<std::string> ids;
        for (const auto& [k, p] : forecasts_) ids.insert(k.method_id);
        return {ids.begin(), ids.end()};
    }

    /// Trials 0..K-1 for one cell; indices absent from the file read as missing.
    std::vector<std::optional<double>> trials(const std::string& method_id,
                                              const EventKey& ev) const {
        std::vector<std::optional<double>> out;
        auto it = forecasts_.lower_bound(ForecastKey{method_id, ev.question_id, ev.rd_index, 0});
        for (; it != forecasts_.end() && it->first.method_id == method_id &&
               it->first.question_id == ev.question_id && it->first.rd_index == ev.rd_index;
             ++it) {
            const auto t = static_cast<std::size_t>(it->first.trial_index);
            if (out.size() <= t) out.resize(t + 1);
            out[t] = it->second;
        }
        return out;
    }

    std::size_t trial_count(const std::string& method_id, const EventKey& ev) const {
        return trials(method_id, ev).size();
    }

    std::size_t missing_trial_count() const {
        std::size_t n = 0;
        for (const auto& [k, p] : forecasts_)
            if (!p) ++n;
        return n;
    }

    bool operator==(const ForecastMatrix&) const = default;

private:
    std::map<std::string, Question> questions_;
    std::map<EventKey, ResolutionEvent> events_;
    std::map<ForecastKey, std::optional<double>> forecasts_;
};

// ---------------------------------------------------------------------------
// JSON-lines I/O

namespace detail {

inline std::optional<double> optional_number(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (it->is_number()) return it->get<double>();
    if (it->is_string()) {
        const auto& s = it->get_ref<const std::string&>();
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) fail(std::string(field) + " is not numeric: " + s);
        return v;
    }
    fail(std::string(field) + " must be a number or numeric string");
}

template <class Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail("line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
        }
        if (!j.is_object()) fail("line " + std::to_string(lineno) + ": expected a JSON object");
        try {
            fn(j);
        } catch (const json::exception& e) {
            fail("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            fail("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    return in;
}

inline json optional_to_json(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace detail

/// Parses one question record. Field names follow the benchmark's own records
/// (`question`, `freeze_datetime_value`, `resolution_dates`, ...). An inline
/// `resolved_to` array is returned through `outcomes` when supplied.
inline Question question_from_json(const json& j,
                                   std::vector<std::optional<int>>* outcomes = nullptr) {
    Question q;
    q.id = j.at("id").get<std::string>();
    q.source = parse_source(j.at("source").get<std::string>());
    q.kind = j.contains("kind") ? parse_kind(j.at("kind").get<std::string>())
                                : default_kind(q.source);
    if (j.contains("subtype") && !j["subtype"].is_null()) q.subtype = j["subtype"];
    if (j.contains("question")) q.question_text = j["question"].get<std::string>();
    q.forecast_due_date = Date::parse(j.at("forecast_due_date").get<std::string>());
    for (const auto& d : j.at("resolution_dates"))
        q.resolution_dates.push_back(Date::parse(d.get<std::string>()));
    q.freeze_value = detail::optional_number(j, "freeze_datetime_value");
    q.crowd_estimate = detail::optional_number(j, "crowd_estimate");
    q.empirical_prior = detail::optional_number(j, "empirical_prior");
    if (j.contains("blocked_urls"))
        q.blocked_urls = j["blocked_urls"].get<std::vector<std::string>>();
    if (outcomes && j.contains("resolved_to")) {
        outcomes->clear();
        for (const auto& o : j["resolved_to"])
            outcomes->push_back(o.is_null() ? std::nullopt : std::optional<int>(o.get<int>()));
    }
    return q;
}

inline json to_json(const Question& q) {
    json j;
    j["id"] = q.id;
    j["source"] = to_string(q.source);
    j["kind"] = to_string(q.kind);
    if (!q.subtype.empty()) j["subtype"] = q.subtype;
    j["question"] = q.question_text;
    j["forecast_due_date"] = q.forecast_due_date.iso();
    json dates = json::array();
    for (auto d : q.resolution_dates) dates.push_back(d.iso());
    j["resolution_dates"] = dates;
    if (q.freeze_value) j["freeze_datetime_value"] = *q.freeze_value;
    if (q.crowd_estimate) j["crowd_estimate"] = *q.crowd_estimate;
    if (q.empirical_prior) j["empirical_prior"] = *q.empirical_prior;
    if (!q.blocked_urls.empty()) j["blocked_urls"] = q.blocked_urls;
    return j;
}

inline void read_questions(std::istream& in, ForecastMatrix& matrix) {
    detail::for_each_json_line(in, [&](const json& j) {
        std::vector<std::optional<int>> outcomes;
        Question q = question_from_json(j, &outcomes);
        const std::string id = q.id;
        const std::size_t n = q.resolution_dates.size();
        matrix.add_question(std::move(q));
        if (!outcomes.empty()) {
            if (outcomes.size() != n)
                fail("question '" + id + "': resolved_to length differs from resolution_dates");
            for (std::size_t i = 0; i < n; ++i)
                matrix.set_outcome({id, static_cast<int>(i)}, outcomes[i]);
        }
    });
}

/// Loads and validates questions; errors name the offending line and rule.
inline std::vector<Question> load_questions(const std::string& path) {
    auto in = detail::open_input(path);
    std::vector<Question> out;
    std::set<std::string> seen;
    detail::for_each_json_line(in, [&](const json& j) {
        Question q = question_from_json(j);
        validate(q);
        if (!seen.insert(q.id).second) fail("duplicate question id '" + q.id + "'");
        out.push_back(std::move(q));
    });
    return out;
}

inline ForecastMatrix matrix_from_questions(const std::vector<Question>& qs) {
    ForecastMatrix m;
    for (const auto& q : qs) m.add_question(q);
    return m;
}

inline void read_outcomes(std::istream& in, ForecastMatrix& matrix) {
    detail::for_each_json_line(in, [&](const json& j) {
        EventKey key{j.at("question_id").get<std::string>(), j.at("rd_index").get<int>()};
        std::optional<int> outcome;
        if (j.contains("outcome") && !j["outcome"].is_null()) outcome = j["outcome"].get<int>();
        std::optional<Date> rd;
        if (j.contains("resolution_date") && !j["resolution_date"].is_null())
            rd = Date::parse(j["resolution_date"].get<std::string>());
        matrix.set_outcome(key, outcome, rd);
    });
}

inline void load_outcomes(const std::string& path, ForecastMatrix& matrix) {
    auto in = detail::open_input(path);
    read_outcomes(in, matrix);
}

/// A record without `trial_index` (aggregated output) is stored as trial 0.
inline TrialForecast forecast_from_json(const json& j) {
    TrialForecast f;
    f.method_id = j.at("method_id").get<std::string>();
    f.question_id = j.at("question_id").get<std::string>();
    f.rd_index = j.at("rd_index").get<int>();
    if (j.contains("trial_index") && !j["trial_index"].is_null())
        f.trial_index = j["trial_index"].get<int>();
    if (j.contains("probability") && !j["probability"].is_null()) {
        if (!j["probability"].is_number()) fail("probability must be a number or null");
        f.probability = j["probability"].get<double>();
    }
    return f;
}

inline void read_forecasts(std::istream& in, ForecastMatrix& matrix) {
    detail::for_each_json_line(in,
                               [&](const json& j) { matrix.add_forecast(forecast_from_json(j)); });
}

inline ForecastMatrix load_forecasts(const std::string& path, ForecastMatrix matrix) {
    auto in = detail::open_input(path);
    read_forecasts(in, matrix);
    return matrix;
}

inline void write_questions(std::ostream& out, const ForecastMatrix& m) {
    for (const auto& [id, q] : m.questions()) out << to_json(q).dump() << '\n';
}

inline void write_outcomes(std::ostream& out, const ForecastMatrix& m) {
    for (const auto& [k, ev] : m.events()) {
        json j{{"question_id", ev.question_id},
               {"rd_index", ev.rd_index},
               {"resolution_date", ev.resolution_date.iso()},
               {"outcome", ev.outcome ? json(*ev.outcome) : json(nullptr)}};
        out << j.dump() << '\n';
    }
}

inline void write_forecasts(std::ostream& out, const ForecastMatrix& m) {
    for (const auto& [k, p] : m.forecasts()) {
        json j{{"method_id", k.method_id},
               {"question_id", k.question_id},
               {"rd_index", k.rd_index},
               {"trial_index", k.trial_index},
               {"probability", detail::optional_to_json(p)}};
        out << j.dump() << '\n';
    }
}

/// One aggregated forecast per event, `trial_index` omitted.
inline void write_event_forecasts(std::ostream& out, const std::string& method_id,
                                  const std::map<EventKey, double>& values) {
    for (const auto& [k, p] : values) {
        json j{{"method_id", method_id},
               {"question_id", k.question_id},
               {"rd_index", k.rd_index},
               {"probability", p}};
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------

struct SplitMean {
    std::optional<double> market;
    std::optional<double> dataset;
    double overall = 0.0;
    std::size_t n_market = 0;
    std::size_t n_dataset = 0;
};

/// Overall = unweighted average of the market and dataset means; an empty split
/// is absent and the overall falls back to the other split.
inline SplitMean combine_splits(std::optional<double> market, std::size_t n_market,
                                std::optional<double> dataset, std::size_t n_dataset) {
    SplitMean out{market, dataset, 0.0, n_market, n_dataset};
    if (market && dataset)
        out.overall = 0.5 * (*market + *dataset);
    else if (market)
        out.overall = *market;
    else if (dataset)
        out.overall = *dataset;
    else
        fail("no events");
    return out;
}

inline SplitMean unweighted_split_mean(const std::map<EventKey, double>& per_event,
                                       const std::map<std::string, Question>& questions) {
    if (per_event.empty()) fail("no events");
    double sum[2] = {0.0, 0.0};
    std::size_t n[2] = {0, 0};
    for (const auto& [k, v] : per_event) {
        auto it = questions.find(k.question_id);
        if (it == questions.end()) fail("event " + to_string(k) + " refers to unknown question");
        const int s = it->second.kind == QuestionKind::market ? 0 : 1;
        sum[s] += v;
        ++n[s];
    }
    auto mean = [&](int s) {
        return n[s] ? std::optional<double>(sum[s] / static_cast<double>(n[s])) : std::nullopt;
    };
    return combine_splits(mean(0), n[0], mean(1), n[1]);
}

}  // namespace fk
