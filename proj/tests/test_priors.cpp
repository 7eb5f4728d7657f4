#include <gtest/gtest.h>

#include <sstream>

#include "forecastkit/metrics.hpp"
#include "forecastkit/priors.hpp"

using namespace fk;

namespace {

Question make(Source s, QuestionKind k, std::string subtype = {}) {
    Question q;
    q.id = "q";
    q.source = s;
    q.kind = k;
    q.subtype = std::move(subtype);
    q.forecast_due_date = Date::from_ymd(2025, 1, 1);
    q.resolution_dates = {Date::from_ymd(2025, 1, 8)};
    return q;
}

}  // namespace

TEST(ResolvePrior, TableExamples) {
    const PriorTable t = default_prior_table();
    const auto acled = resolve_prior(make(Source::acled, QuestionKind::dataset, "any increase"), t, true, true);
    EXPECT_DOUBLE_EQ(acled.prior.pi, 0.23);
    EXPECT_EQ(acled.prior.provenance, PriorProvenance::empirical);
    EXPECT_DOUBLE_EQ(resolve_prior(make(Source::yfinance, QuestionKind::dataset), t, true, true).prior.pi, 0.58);
    EXPECT_DOUBLE_EQ(
        resolve_prior(make(Source::yfinance, QuestionKind::dataset, "AAPL"), t, true, true).prior.pi, 0.58);
    EXPECT_DOUBLE_EQ(
        resolve_prior(make(Source::acled, QuestionKind::dataset, "Any Increase"), t, true, true).prior.pi, 0.23);
}

TEST(ResolvePrior, FlagsOnlyAffectTheirOwnKind) {
    const PriorTable t = default_prior_table();
    Question m = make(Source::polymarket, QuestionKind::market);
    m.crowd_estimate = 0.8;
    EXPECT_DOUBLE_EQ(resolve_prior(m, t, true, true).prior.pi, 0.8);
    EXPECT_EQ(resolve_prior(m, t, true, true).prior.provenance, PriorProvenance::crowd);
    EXPECT_DOUBLE_EQ(resolve_prior(m, t, false, true).prior.pi, 0.5);
    EXPECT_EQ(resolve_prior(m, t, false, true).prior.provenance, PriorProvenance::uniform);
    EXPECT_DOUBLE_EQ(resolve_prior(m, t, true, false).prior.pi, 0.8);  // emp flag has no effect on markets

    const Question d = make(Source::fred, QuestionKind::dataset);
    EXPECT_DOUBLE_EQ(resolve_prior(d, t, false, true).prior.pi, 0.42);  // crowd flag has no effect on datasets
    EXPECT_DOUBLE_EQ(resolve_prior(d, t, true, false).prior.pi, 0.5);
}

TEST(ResolvePrior, MissingCrowdFallsBackWithWarning) {
    const auto r = resolve_prior(make(Source::manifold, QuestionKind::market), default_prior_table(), true, true);
    EXPECT_TRUE(r.warning);
    EXPECT_DOUBLE_EQ(r.prior.pi, 0.5);
    EXPECT_EQ(r.prior.provenance, PriorProvenance::uniform);
}

TEST(ResolvePrior, UnknownSourceOrSubtypeIsUniform) {
    const PriorTable t = default_prior_table();
    EXPECT_DOUBLE_EQ(resolve_prior(make(Source::wikipedia, QuestionKind::dataset, "unknown"), t, true, true).prior.pi, 0.5);
    EXPECT_DOUBLE_EQ(resolve_prior(make(Source::other, QuestionKind::dataset), t, true, true).prior.pi, 0.5);
    EXPECT_DOUBLE_EQ(t.lookup(Source::acled, ""), 0.5);  // no "(all)" row for ACLED
}

TEST(ResolvePrior, QuestionEmpiricalPriorOverridesTable) {
    Question d = make(Source::fred, QuestionKind::dataset);
    d.empirical_prior = 0.9;
    EXPECT_DOUBLE_EQ(resolve_prior(d, default_prior_table(), true, true).prior.pi, 0.9);
}

TEST(PriorLogit, ClampsZeroAndOne) {
    EXPECT_DOUBLE_EQ(prior_logit({0.0, PriorProvenance::empirical}), logit(0.01));
    EXPECT_DOUBLE_EQ(prior_logit({1.0, PriorProvenance::empirical}), logit(0.99));
    EXPECT_DOUBLE_EQ(prior_logit({0.3, PriorProvenance::crowd}), logit(0.3));
    EXPECT_EQ(prior_logit({}), 0.0);
}

TEST(PriorTable, CsvRoundTripAndErrors) {
    std::istringstream in("source,subtype,prior\nacled,10x spike,0.0\nfred,,0.42\nWikipedia,FIDE rank,0.68\n");
    const PriorTable t = read_prior_table(in);
    EXPECT_DOUBLE_EQ(t.lookup(Source::acled, "10x spike"), 0.0);
    EXPECT_DOUBLE_EQ(t.lookup(Source::fred, "anything"), 0.42);
    EXPECT_DOUBLE_EQ(t.lookup(Source::wikipedia, "fide rank"), 0.68);

    std::istringstream bad_value("acled,x,abc\n");
    EXPECT_THROW(read_prior_table(bad_value), Error);
    std::istringstream out_of_range("acled,x,1.5\n");
    EXPECT_THROW(read_prior_table(out_of_range), Error);
    std::istringstream unknown("nosuch,x,0.5\n");
    EXPECT_THROW(read_prior_table(unknown), Error);
}

TEST(PriorBaseline, ZeroBaseRateSubtypeScoresPerfectly) {
    // Submitting the prior on ACLED "10x spike" (0.00) when nothing resolves true.
    ForecastMatrix m;
    std::map<EventKey, double> fc;
    for (int i = 0; i < 20; ++i) {
        Question q = make(Source::acled, QuestionKind::dataset, "10x spike");
        q.id = "a" + std::to_string(i);
        m.add_question(q);
        m.set_outcome({q.id, 0}, 0);
        fc[{q.id, 0}] = resolve_prior(q, default_prior_table(), true, true).prior.pi;
    }
    for (const auto& [k, v] : per_event_scores(Metric::BS, fc, m)) EXPECT_EQ(v, 0.0);
}
