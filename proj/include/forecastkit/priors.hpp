#pragma once

// Question-specific starting estimates: crowd price for market questions,
// empirical base rate per (source, subtype) for dataset questions, 0.5 otherwise.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"

namespace fk {

enum class PriorProvenance { crowd, empirical, uniform };

inline std::string_view to_string(PriorProvenance p) {
    switch (p) {
        case PriorProvenance::crowd: return "crowd";
        case PriorProvenance::empirical: return "empirical";
        case PriorProvenance::uniform: return "uniform";
    }
    return "uniform";
}

struct QuestionPrior {
    double pi = 0.5;
    PriorProvenance provenance = PriorProvenance::uniform;
};

// A prior of exactly 0 or 1 has an infinite logit; shrinkage targets use this band.
inline constexpr double kPriorLogitLow = 0.01;
inline constexpr double kPriorLogitHigh = 0.99;

inline double prior_logit(const QuestionPrior& prior) {
    return logit(std::clamp(prior.pi, kPriorLogitLow, kPriorLogitHigh));
}

inline const std::string kAnySubtype = "(all)";

class PriorTable {
public:
    void set(Source source, std::string subtype, double prior) {
        if (!(prior >= 0.0 && prior <= 1.0))
            fail("prior for " + std::string(to_string(source)) + "/" + subtype +
                 " outside [0,1]");
        rows_[{source, to_lower(subtype.empty() ? kAnySubtype : subtype)}] = prior;
    }

    /// (source, subtype) -> (source, "(all)") -> nullopt
    std::optional<double> find(Source source, const std::string& subtype) const {
        if (!subtype.empty()) {
            auto it = rows_.find({source, to_lower(subtype)});
            if (it != rows_.end()) return it->second;
        }
        auto it = rows_.find({source, kAnySubtype});
        if (it != rows_.end()) return it->second;
        return std::nullopt;
    }

    double lookup(Source source, const std::string& subtype) const {
        return find(source, subtype).value_or(0.5);
    }

    const std::map<std::pair<Source, std::string>, double>& rows() const { return rows_; }

private:
    std::map<std::pair<Source, std::string>, double> rows_;
};

/// Base rates per source and subtype computed over the full benchmark history.
inline PriorTable default_prior_table() {
    PriorTable t;
    t.set(Source::acled, "10x spike", 0.00);
    t.set(Source::acled, "any increase", 0.23);
    t.set(Source::wikipedia, "vaccine", 0.00);
    t.set(Source::wikipedia, "fide elo >=1%", 0.01);
    t.set(Source::wikipedia, "fide rank", 0.68);
    t.set(Source::wikipedia, "swimming wr", 0.99);
    t.set(Source::fred, kAnySubtype, 0.42);
    t.set(Source::yfinance, kAnySubtype, 0.58);
    t.set(Source::dbnomics, kAnySubtype, 0.56);
    return t;
}

/// CSV with header `source,subtype,prior`. Subtypes may not contain commas.
inline PriorTable read_prior_table(std::istream& in) {
    PriorTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && to_lower(line).rfind("source", 0) == 0) continue;
        std::stringstream ss(line);
        std::string src, sub, val;
        if (!std::getline(ss, src, ',') || !std::getline(ss, sub, ',') || !std::getline(ss, val))
            fail("priors line " + std::to_string(lineno) + ": expected source,subtype,prior");
        try {
            t.set(parse_source(src), sub, std::stod(val));
        } catch (const std::invalid_argument&) {
            fail("priors line " + std::to_string(lineno) + ": prior is not a number");
        }
    }
    return t;
}

inline PriorTable load_prior_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    return read_prior_table(in);
}

struct ResolvedPrior {
    QuestionPrior prior;
    bool warning = false;  // crowd requested but missing
};

/// The crowd flag only affects market questions and the empirical flag only
/// dataset questions. An explicit `empirical_prior` on the question wins over
/// the table.
inline ResolvedPrior resolve_prior(const Question& q, const PriorTable& table, bool use_crowd,
                                   bool use_emp) {
    if (q.kind == QuestionKind::market) {
        if (!use_crowd) return {};
        if (q.crowd_estimate) return {{*q.crowd_estimate, PriorProvenance::crowd}, false};
        return {{}, true};
    }
    if (!use_emp) return {};
    if (q.empirical_prior) return {{*q.empirical_prior, PriorProvenance::empirical}, false};
    if (auto v = table.find(q.source, q.subtype))
        return {{*v, PriorProvenance::empirical}, false};
    return {};
}

}  // namespace fk
