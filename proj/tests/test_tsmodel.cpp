#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "forecastkit/tsmodel.hpp"

using namespace fk;

namespace {

// Day of year via the standard calendar, with Dec 31 of a leap year folded onto 365.
int doy_oracle(Date d) {
    namespace c = std::chrono;
    const c::sys_days sd{c::days{d.days()}};
    const c::year_month_day ymd{sd};
    const int n = (sd - c::sys_days{ymd.year() / c::January / 1}).count() + 1;
    return std::min(n, 365);
}

int cyclic_oracle(int a, int b) {
    int best = 1000;
    for (int shift : {-365, 0, 365}) best = std::min(best, std::abs(a - b + shift));
    return best;
}

double knn_oracle(const std::vector<SeriesPoint>& pts, Date f, double v, Date target, int w,
                  std::optional<long> age) {
    long n = 0, k = 0;
    for (const auto& p : pts) {
        const long delta = f.days() - p.date.days();
        const bool in_age = delta > 0 && (!age || delta < *age);
        if (in_age && cyclic_oracle(doy_oracle(p.date), doy_oracle(target)) <= w) {
            ++n;
            if (p.value > v) ++k;
        }
    }
    return (k + 1.0) / (n + 2.0);
}

std::vector<SeriesPoint> random_series(std::mt19937& rng, Date start, int days) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<SeriesPoint> out;
    double level = 10.0 * u(rng);
    for (int i = 0; i < days; ++i) {
        if (u(rng) < 0.2) continue;  // gaps
        level += z(rng);
        const double seasonal = 5.0 * std::sin(2.0 * M_PI * i / 365.0);
        out.push_back({start + i, std::round((level + seasonal) * 4.0) / 4.0});  // quarter steps create ties
    }
    return out;
}

}  // namespace

TEST(CyclicDistance, Examples) {
    EXPECT_EQ(cyclic_doy_distance(365, 2), 2);
    EXPECT_EQ(cyclic_doy_distance(100, 100), 0);
    EXPECT_EQ(cyclic_doy_distance(1, 183), 182);
    EXPECT_THROW(cyclic_doy_distance(0, 5), Error);
    EXPECT_THROW(cyclic_doy_distance(5, 366), Error);
    for (int a = 1; a <= 365; a += 7)
        for (int b = 1; b <= 365; b += 3) EXPECT_EQ(cyclic_doy_distance(a, b), cyclic_oracle(a, b));
}

TEST(Knn, Examples) {
    const Date f = Date::from_ymd(2025, 3, 1);
    const SeriesHistory empty({}, f);
    EXPECT_EQ(knn_exceedance(empty, 1.0, f + 7, 10).p, 0.5);

    const SeriesHistory three({{Date::from_ymd(2022, 3, 5), 5.0}, {Date::from_ymd(2023, 3, 6), 6.0},
                               {Date::from_ymd(2024, 3, 7), 7.0}},
                              f);
    const auto r = knn_exceedance(three, 1.0, f + 7, 10);
    EXPECT_EQ(r.neighbors, 3u);
    EXPECT_DOUBLE_EQ(r.p, 0.8);
    EXPECT_DOUBLE_EQ(knn_exceedance(three, 6.0, f + 7, 10).p, 2.0 / 5.0);  // 6.0 ties do not exceed
    EXPECT_EQ(knn_exceedance(three, 1.0, f + 7, 10, 365).neighbors, 1u);
}

TEST(Knn, ExcludesPointOnForecastDate) {
    const Date f = Date::from_ymd(2025, 3, 1);
    const SeriesHistory h({{f - 1, 5.0}, {f, 9.0}}, f);
    EXPECT_EQ(knn_exceedance(h, 1.0, f, 10).neighbors, 1u);
    EXPECT_EQ(reference_value(h, f), 9.0);
}

TEST(Knn, MatchesBruteForceOracleOnRandomSeries) {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> len(30, 2500), wpick(0, 20), apick(0, 3);
    for (int s = 0; s < 100; ++s) {
        const Date start = Date::from_ymd(2015, 1, 1) + static_cast<long>(rng() % 400);
        auto raw = random_series(rng, start, len(rng));
        const Date f = raw.back().date + static_cast<long>(rng() % 3);
        const SeriesHistory h = fetch_history(raw, f);
        const std::optional<long> age =
            apick(rng) == 0 ? std::nullopt : std::optional<long>(365L * apick(rng) + 5);
        for (int j = 0; j < 5; ++j) {
            const int w = wpick(rng);
            const Date target = f + static_cast<long>(1 + rng() % 120);
            const double v = raw[rng() % raw.size()].value;
            EXPECT_EQ(knn_exceedance(h, v, target, w, age).p, knn_oracle(raw, f, v, target, w, age))
                << "series " << s << " w " << w;
        }
    }
}

TEST(Knn, LongSeasonalSeriesHasAboutTwoHundredNeighbors) {
    std::mt19937 rng(6);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<SeriesPoint> raw;
    const Date start = Date::from_ymd(2011, 1, 1);
    for (int i = 0; i < 14 * 365; ++i) raw.push_back({start + i, 10.0 * std::sin(2.0 * M_PI * i / 365.25) + z(rng)});
    const Date f = raw.back().date + 1;
    const SeriesHistory h = fetch_history(raw, f);
    for (int dt : {7, 30, 90}) {
        const auto r = knn_exceedance(h, 0.0, f + dt, 10);
        EXPECT_GE(r.neighbors, 270u);  // 14 years x 21 days
        EXPECT_LE(r.neighbors, 300u);
        EXPECT_NEAR(r.p, knn_oracle(raw, f, 0.0, f + dt, 10, std::nullopt), 0.05);
        EXPECT_GE(r.p, 1.0 / (r.neighbors + 2.0));
        EXPECT_LE(r.p, (r.neighbors + 1.0) / (r.neighbors + 2.0));
    }
}

TEST(Linear, MatchesNormalEquationsOracle) {
    std::mt19937 rng(77);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int s = 0; s < 50; ++s) {
        std::vector<SeriesPoint> raw;
        const Date start = Date::from_ymd(2024, 1, 1) + s * 3;
        const double slope = 0.1 * z(rng), icpt = 50.0 + z(rng);
        for (int i = 0; i < 45; ++i)
            if (i % 7 != 5) raw.push_back({start + i, icpt + slope * i + 0.5 * z(rng)});
        const Date f = raw.back().date;
        const SeriesHistory h = fetch_history(raw, f);
        const std::size_t window = 30;

        // Normal equations on raw days-since-epoch, in extended precision.
        long double n = 0, st = 0, stt = 0, sy = 0, sty = 0;
        for (std::size_t i = raw.size() - window; i < raw.size(); ++i) {
            const long double t = raw[i].date.days(), y = raw[i].value;
            n += 1;
            st += t;
            stt += t * t;
            sy += y;
            sty += t * y;
        }
        const long double det = n * stt - st * st;
        const long double a = (n * sty - st * sy) / det, b = (stt * sy - st * sty) / det;
        const Date r = f + 14;
        const double yhat = static_cast<double>(a * r.days() + b);
        const double v = raw.back().value + z(rng), sigma = 1.3;
        const double expect = 0.5 * std::erfc((v - yhat) / sigma / std::sqrt(2.0));
        EXPECT_NEAR(linear_exceedance(h, v, r, window, sigma), expect, 1e-9);
        EXPECT_NEAR(fit_linear_trend(h, window).slope, static_cast<double>(a), 1e-9);
    }
}

TEST(Linear, ExamplesAndErrors) {
    const Date f = Date::from_ymd(2025, 5, 1);
    std::vector<SeriesPoint> flat;
    for (int i = 0; i < 20; ++i) flat.push_back({f - i, 3.0});
    std::reverse(flat.begin(), flat.end());
    const SeriesHistory h = fetch_history(flat, f);
    EXPECT_NEAR(linear_exceedance(h, 3.0, f + 10, 30, 1.0), 0.5, 1e-12);

    std::vector<SeriesPoint> rising;
    for (int i = 0; i < 20; ++i) rising.push_back({f - 19 + i, 10.0 * i});
    const SeriesHistory hr = fetch_history(rising, f);
    EXPECT_GT(linear_exceedance(hr, 0.0, f + 5, 30, 1e-3), 1.0 - 1e-12);

    EXPECT_THROW(linear_exceedance(SeriesHistory({{f, 1.0}}, f), 1.0, f + 1, 30, 1.0), Error);
    EXPECT_THROW(linear_exceedance(h, 3.0, f + 10, 30, 0.0), Error);
}

TEST(Linear, InvariantToDateAxisRescaling) {
    // Re-encoding days as seconds rescales the slope but leaves predictions unchanged.
    const Date f = Date::from_ymd(2025, 5, 1);
    std::vector<SeriesPoint> pts;
    for (int i = 0; i < 30; ++i) pts.push_back({f - 29 + i, 2.0 + 0.3 * i + (i % 3) * 0.1});
    const LinearTrend lt = fit_linear_trend(fetch_history(pts, f), 30);
    const double sec_slope = lt.slope / 86400.0, sec_center = lt.t_center * 86400.0;
    const Date r = f + 9;
    EXPECT_NEAR(lt.y_center + sec_slope * (r.days() * 86400.0 - sec_center), lt.predict(r), 1e-9);
}

TEST(SafeLinearHybrid, ExamplesAndWeights) {
    EXPECT_EQ(safe_linear(0.9, 0.0), 0.5);
    EXPECT_EQ(safe_linear(0.9, 1.0), 0.9);
    EXPECT_NEAR(safe_linear(0.9, 0.1), 0.54, 1e-15);
    EXPECT_THROW(safe_linear(0.5, 1.5), Error);

    EXPECT_EQ(hybrid_exceedance(0.7, 0.2, 1.0), 0.7);
    EXPECT_EQ(hybrid_exceedance(0.7, 0.2, 0.0), 0.2);
    EXPECT_EQ(hybrid_exceedance(0.7, std::nullopt, 0.3), 0.7);
    EXPECT_THROW(hybrid_exceedance(0.5, 0.5, -0.1), Error);

    // Weights on (p_linear, p_prior_year, 0.5), recovered from unit inputs.
    for (int i = 0; i <= 10; ++i) {
        for (int j = 0; j <= 10; ++j) {
            const double a = i / 10.0, b = j / 10.0;
            auto h = [&](double pl, double py, double half) {
                return hybrid_exceedance(a * pl + (1.0 - a) * half, py, b);
            };
            const double wl = h(1, 0, 0), wp = h(0, 1, 0), wh = h(0, 0, 1);
            EXPECT_NEAR(wl + wp + wh, 1.0, 1e-15);
            EXPECT_NEAR(wl, a * b, 1e-15);
            EXPECT_NEAR(wp, 1.0 - b, 1e-15);
            EXPECT_NEAR(hybrid_exceedance(safe_linear(0.5, a), 0.5, b), 0.5, 1e-15);
        }
    }
    EXPECT_NEAR(hybrid_exceedance(safe_linear(1.0, 0.5) - 0.25, 0.0, 0.5), 0.25, 1e-15);
}

TEST(ReferenceValue, PreviousCloseAndExactDay) {
    const SeriesHistory h({{Date::from_ymd(2025, 10, 23), 31.2}, {Date::from_ymd(2025, 10, 24), 30.79}},
                          Date::from_ymd(2025, 10, 26));
    EXPECT_EQ(reference_value(h, Date::from_ymd(2025, 10, 26)), 30.79);
    EXPECT_EQ(reference_value(h, Date::from_ymd(2025, 10, 23)), 31.2);
    EXPECT_THROW(reference_value(h, Date::from_ymd(2025, 10, 1)), Error);

    Question q;
    q.id = "temp";
    q.source = Source::dbnomics;
    q.kind = QuestionKind::dataset;
    q.freeze_value = 14.4;
    q.forecast_due_date = Date::from_ymd(2025, 7, 1);
    q.resolution_dates = {Date::from_ymd(2025, 7, 8)};
    const std::vector<SeriesPoint> raw{{Date::from_ymd(2025, 6, 20), 14.4}, {Date::from_ymd(2025, 7, 1), 11.7}};
    const SeriesHistory fetched = fetch_history(raw, q.forecast_due_date);
    EXPECT_EQ(reference_value(fetched, q.forecast_due_date), 11.7);
}

TEST(FetchHistory, ClampsFutureAndWindow) {
    const Date f = Date::from_ymd(2025, 1, 10);
    std::vector<SeriesPoint> raw;
    for (int i = 0; i < 20; ++i) raw.push_back({Date::from_ymd(2025, 1, 1) + i, static_cast<double>(i)});
    const SeriesHistory h = fetch_history(raw, f, 5);
    ASSERT_EQ(h.points().size(), 6u);
    EXPECT_EQ(h.points().front().date, f - 5);
    EXPECT_EQ(h.points().back().date, f);
    EXPECT_THROW(SeriesHistory({{f + 1, 1.0}}, f), Error);
    EXPECT_THROW(SeriesHistory({{f, 1.0}, {f, 2.0}}, f), Error);
}

TEST(FetchHistory, InjectedFuturePointsNeverChangeOutputs) {
    std::mt19937 rng(13);
    auto raw = random_series(rng, Date::from_ymd(2019, 1, 1), 2000);
    Question q;
    q.id = "s";
    q.source = Source::fred;
    q.kind = QuestionKind::dataset;
    q.forecast_due_date = raw[raw.size() / 2].date;
    q.resolution_dates = {q.forecast_due_date + 7, q.forecast_due_date + 30};
    TsModelConfig cfg = TsModelConfig::for_source(Source::fred);
    cfg.residual_sigma = 2.0;

    std::vector<SeriesPoint> past;
    for (const auto& p : raw)
        if (p.date <= q.forecast_due_date) past.push_back(p);
    for (auto kind : {TsModelKind::knn, TsModelKind::linear, TsModelKind::hybrid}) {
        const auto with_future = exceedance_forecasts(q, raw, kind, cfg);
        const auto without = exceedance_forecasts(q, past, kind, cfg);
        EXPECT_EQ(with_future, without);
        auto spiked = raw;
        for (auto& p : spiked)
            if (p.date > q.forecast_due_date) p.value = 1e9;
        EXPECT_EQ(exceedance_forecasts(q, spiked, kind, cfg), without);
    }
}

TEST(TsConfig, SourceDefaults) {
    const auto db = TsModelConfig::for_source(Source::dbnomics);
    EXPECT_EQ(db.knn_window_w, 10);
    EXPECT_FALSE(db.knn_max_age_days);
    const auto yf = TsModelConfig::for_source(Source::yfinance);
    EXPECT_EQ(yf.alpha, 0.1);
    EXPECT_EQ(yf.ols_window, 60u);
    EXPECT_EQ(yf.beta, 0.5);
    const auto fr = TsModelConfig::for_source(Source::fred);
    EXPECT_EQ(fr.alpha, 0.5);
    EXPECT_EQ(fr.ols_window, 30u);
    EXPECT_EQ(fr.prior_year_window_w, 7);
    EXPECT_EQ(fr.prior_year_max_age_days, 5 * 365);
    EXPECT_THROW(require_sigma(fr), Error);
    EXPECT_THROW(parse_ts_model("arima"), Error);
}

TEST(SeriesCsv, ParsesAndReportsLine) {
    std::istringstream ok("date,value\n2025-01-01,1.5\n2025-01-02,2\n");
    const auto pts = read_series_csv(ok);
    ASSERT_EQ(pts.size(), 2u);
    EXPECT_EQ(pts[1].value, 2.0);
    std::istringstream bad("2025-01-01,1.5\n2025-01-02,x\n");
    try {
        read_series_csv(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(ResidualSigma, SampleStandardDeviation) {
    EXPECT_NEAR(estimate_residual_sigma({1.0, 2.0, 3.0, 4.0}), std::sqrt(5.0 / 3.0), 1e-15);
    EXPECT_THROW(estimate_residual_sigma({1.0}), Error);
    EXPECT_THROW(estimate_residual_sigma({2.0, 2.0}), Error);
}
