#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "forecastkit/calibrate.hpp"

using namespace fk;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double lg(double p) { return std::log(p / (1.0 - p)); }

std::vector<CalibrationPair> platt_data(double a, double b, int n, unsigned seed, Source s = Source::fred) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<CalibrationPair> out;
    for (int i = 0; i < n; ++i) {
        const double p = u(rng);
        const int o = std::bernoulli_distribution(sig(a * lg(p) + b))(rng) ? 1 : 0;
        out.push_back({p, o, s});
    }
    return out;
}

// Plain per-event NLL of a model, computed without the library's objective.
double nll(const CalibrationModel& m, const std::vector<CalibrationPair>& xs) {
    double t = 0.0;
    for (const auto& x : xs) {
        const double q = sig(m.a * lg(x.p) + m.b + m.offset(x.source));
        t -= x.o ? std::log(q) : std::log(1.0 - q);
    }
    return t;
}

// Two sources: FRED forecasts are overconfident, ACLED forecasts sit at the clamp
// floor and are already right about the low base rate.
std::vector<CalibrationRow> skewed_two_source() {
    std::vector<CalibrationRow> rows;
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int i = 0; i < 200; ++i) {
        const double p = u(rng);
        const int o = std::bernoulli_distribution(sig(0.4 * lg(p)))(rng) ? 1 : 0;
        rows.push_back({"f" + std::to_string(i), p, o, Source::fred});
    }
    for (int i = 0; i < 100; ++i) rows.push_back({"a" + std::to_string(i), 0.05, i % 25 == 0 ? 1 : 0, Source::acled});
    return rows;
}

}  // namespace

TEST(ApplyPlatt, Examples) {
    for (double p : {0.05, 0.3, 0.5, 0.9}) EXPECT_NEAR(apply_platt(CalibrationModel::identity(), p), p, 1e-12);
    CalibrationModel m;
    m.a = 2.0;
    m.b = 0.5;
    EXPECT_NEAR(apply_platt(m, 0.5), sig(0.5), 1e-12);
    EXPECT_NEAR(apply_platt(m, 0.5), 0.6225, 5e-5);

    CalibrationModel h = m;
    h.kind = CalibrationKind::hierarchical;
    h.offsets = {{Source::fred, 0.0}, {Source::acled, 0.0}};
    for (double p : {0.1, 0.4, 0.8}) EXPECT_EQ(apply_platt(h, p, Source::fred), apply_platt(m, p, Source::fred));
    h.offsets[Source::acled] = -1.0;
    EXPECT_NEAR(apply_platt(h, 0.5, Source::acled), sig(-0.5), 1e-12);
    EXPECT_NEAR(apply_platt(h, 0.5, Source::wikipedia), sig(0.5), 1e-12);  // unseen source

    double prev = 0.0;
    for (int i = 1; i < 100; ++i) {
        const double cur = apply_platt(m, i / 100.0);
        EXPECT_GT(cur, prev);
        prev = cur;
    }
}

TEST(FitPlatt, RecoversGeneratingParameters) {
    const auto data = platt_data(2.0, 0.5, 5000, 7);
    const auto fit = fit_platt(data, CalibrationKind::global, 0.0);
    EXPECT_TRUE(fit.diagnostics.converged);
    EXPECT_LE(fit.diagnostics.gradient_norm, 1e-8);
    EXPECT_NEAR(fit.model.a, 2.0, 0.1);
    EXPECT_NEAR(fit.model.b, 0.5, 0.1);
    EXPECT_TRUE(fit.model.offsets.empty());
}

TEST(FitPlatt, NullRecoveryOnCalibratedData) {
    const auto fit = fit_platt(platt_data(1.0, 0.0, 5000, 8), CalibrationKind::global, 0.0);
    EXPECT_NEAR(fit.model.a, 1.0, 0.15);
    EXPECT_NEAR(fit.model.b, 0.0, 0.15);
}

TEST(FitPlatt, FittedNllNoWorseThanIdentity) {
    auto data = platt_data(0.6, -0.3, 800, 12, Source::fred);
    auto more = platt_data(1.4, 0.4, 800, 13, Source::yfinance);
    data.insert(data.end(), more.begin(), more.end());
    for (auto kind : {CalibrationKind::global, CalibrationKind::hierarchical}) {
        for (double lambda : {0.0, 1.0}) {
            const auto fit = fit_platt(data, kind, lambda);
            double penalty = 0.0;
            for (const auto& [s, d] : fit.model.offsets) penalty += lambda * d * d;
            EXPECT_LE(nll(fit.model, data) + penalty, nll(CalibrationModel::identity(), data) + 1e-9);
            EXPECT_NEAR(fit.diagnostics.final_nll, nll(fit.model, data) + penalty, 1e-8);
        }
    }
}

TEST(PlattObjective, GradientMatchesCentralDifferences) {
    auto data = platt_data(1.5, 0.2, 300, 21, Source::fred);
    for (Source s : {Source::acled, Source::dbnomics}) {
        auto more = platt_data(0.8, -0.5, 150, 22 + static_cast<unsigned>(s), s);
        data.insert(data.end(), more.begin(), more.end());
    }
    const PlattObjective obj(data, {Source::fred, Source::acled, Source::dbnomics}, 1.3);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const double h = 1e-5;
    for (int pt = 0; pt < 10; ++pt) {
        Eigen::VectorXd th(obj.dim());
        for (Eigen::Index i = 0; i < th.size(); ++i) th[i] = u(rng);
        const Eigen::VectorXd g = obj.gradient(th);
        for (Eigen::Index i = 0; i < th.size(); ++i) {
            Eigen::VectorXd up = th, dn = th;
            up[i] += h;
            dn[i] -= h;
            const double fd = (obj.value(up) - obj.value(dn)) / (2.0 * h);
            EXPECT_LE(std::abs(g[i] - fd), 1e-6 * std::max(1.0, std::abs(fd))) << "point " << pt << " coord " << i;
        }
        // Hessian columns by differencing the analytic gradient.
        const Eigen::MatrixXd H = obj.hessian(th);
        for (Eigen::Index i = 0; i < th.size(); ++i) {
            Eigen::VectorXd up = th, dn = th;
            up[i] += h;
            dn[i] -= h;
            const Eigen::VectorXd col = (obj.gradient(up) - obj.gradient(dn)) / (2.0 * h);
            EXPECT_LE((H.col(i) - col).lpNorm<Eigen::Infinity>(), 1e-5 * std::max(1.0, col.lpNorm<Eigen::Infinity>()));
        }
    }
}

TEST(FitPlatt, StrongPenaltyMatchesGlobal) {
    auto data = platt_data(1.7, 0.3, 400, 31, Source::fred);
    auto more = platt_data(1.7, 0.3, 400, 32, Source::manifold);
    data.insert(data.end(), more.begin(), more.end());
    const auto global = fit_platt(data, CalibrationKind::global, 1.0).model;
    const auto hier = fit_platt(data, CalibrationKind::hierarchical, 1e6).model;
    for (const auto& [s, d] : hier.offsets) EXPECT_LT(std::abs(d), 1e-4);
    for (const auto& x : data) EXPECT_NEAR(apply_platt(hier, x.p, x.source), apply_platt(global, x.p, x.source), 1e-6);
}

TEST(FitPlatt, SingleSourceUnpenalizedReducesToGlobal) {
    const auto data = platt_data(1.2, -0.4, 500, 41, Source::acled);
    const auto global = fit_platt(data, CalibrationKind::global, 0.0).model;
    const auto hier = fit_platt(data, CalibrationKind::hierarchical, 0.0).model;
    ASSERT_EQ(hier.offsets.size(), 1u);
    EXPECT_EQ(hier.offsets.at(Source::acled), 0.0);  // sum-to-zero with one source
    for (const auto& x : data) EXPECT_NEAR(apply_platt(hier, x.p, x.source), apply_platt(global, x.p), 1e-9);
}

TEST(FitPlatt, Errors) {
    std::vector<CalibrationPair> same{{0.3, 1, Source::fred}, {0.6, 1, Source::acled}, {0.9, 1, Source::fred}};
    try {
        fit_platt(same, CalibrationKind::hierarchical);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate labels"), std::string::npos);
    }
    EXPECT_THROW(fit_platt({{0.3, 1}}, CalibrationKind::global), Error);
    EXPECT_THROW(fit_platt({{0.3, 1}, {0.4, 0}}, CalibrationKind::global, -1.0), Error);
}

TEST(LooCalibrate, ExchangeableQuestionsShareOneModel) {
    std::vector<CalibrationRow> rows;
    for (const std::string q : {"x", "y", "z"})
        for (auto [p, o] : std::vector<std::pair<double, int>>{{0.2, 0}, {0.7, 1}, {0.6, 0}, {0.3, 1}, {0.9, 1}})
            rows.push_back({q, p, o, Source::fred});
    const auto loo = loo_calibrate(rows, CalibrationKind::global, 1.0);
    std::vector<CalibrationPair> all;
    for (const auto& r : rows) all.push_back({r.p, *r.o, r.source});
    const auto full = fit_platt(all, CalibrationKind::global, 1.0).model;
    for (const auto& [q, m] : loo.fold_models) {
        EXPECT_NEAR(m.a, full.a, 1e-9);
        EXPECT_NEAR(m.b, full.b, 1e-9);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(loo.calibrated[i], apply_platt(full, rows[i].p), 1e-9);
}

TEST(LooCalibrate, SingleClassFoldFallsBackToIdentity) {
    const std::vector<CalibrationRow> rows{
        {"pos", 0.7, 1, Source::fred}, {"neg1", 0.4, 0, Source::fred}, {"neg2", 0.2, 0, Source::fred}};
    const auto loo = loo_calibrate(rows, CalibrationKind::global);
    EXPECT_EQ(loo.calibrated[0], apply_platt(CalibrationModel::identity(), 0.7));
    ASSERT_EQ(loo.warnings.size(), 1u);
    EXPECT_NE(loo.warnings[0].find("pos"), std::string::npos);
    EXPECT_THROW(loo_calibrate({rows[0], rows[1]}, CalibrationKind::global), Error);
}

TEST(LooCalibrate, UnresolvedRowsAreCalibratedButNotFitted) {
    std::vector<CalibrationRow> rows;
    for (int i = 0; i < 12; ++i) rows.push_back({"q" + std::to_string(i), 0.1 + 0.07 * i, i % 3 == 0 ? 1 : 0, Source::fred});
    auto with_open = rows;
    with_open.push_back({"q0", 0.99, std::nullopt, Source::fred});
    const auto a = loo_calibrate(rows, CalibrationKind::global);
    const auto b = loo_calibrate(with_open, CalibrationKind::global);
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(a.calibrated[i], b.calibrated[i]);
    EXPECT_EQ(b.calibrated.back(), apply_platt(b.fold_models.at("q0"), 0.99));
}

TEST(LooCalibrate, HierarchicalBeatsGlobalOnSkewedSource) {
    const auto rows = skewed_two_source();
    const auto hier = loo_calibrate(rows, CalibrationKind::hierarchical, 1.0);
    const auto glob = loo_calibrate(rows, CalibrationKind::global, 1.0);
    double bs_h = 0.0, bs_g = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].source != Source::acled) continue;
        const double o = *rows[i].o;
        bs_h += 100.0 * (hier.calibrated[i] - o) * (hier.calibrated[i] - o);
        bs_g += 100.0 * (glob.calibrated[i] - o) * (glob.calibrated[i] - o);
        ++n;
    }
    EXPECT_LT(bs_h / n, bs_g / n);
}

TEST(LooCalibrate, ParallelFoldsAreDeterministic) {
    const auto rows = skewed_two_source();
    const auto a = loo_calibrate(rows, CalibrationKind::hierarchical, 1.0, 1);
    const auto b = loo_calibrate(rows, CalibrationKind::hierarchical, 1.0, 4);
    EXPECT_EQ(a.calibrated, b.calibrated);
}

TEST(CalibrationModelJson, RoundTrip) {
    CalibrationModel m;
    m.a = 1.25;
    m.b = -0.125;
    m.lambda = 1.0;
    m.kind = CalibrationKind::hierarchical;
    m.offsets = {{Source::acled, -0.75}, {Source::fred, 0.5}};
    const auto back = calibration_model_from_json(json::parse(to_json(m).dump()));
    EXPECT_EQ(back.a, m.a);
    EXPECT_EQ(back.b, m.b);
    EXPECT_EQ(back.lambda, m.lambda);
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(back.offsets, m.offsets);
    const auto bare = calibration_model_from_json(json::parse(R"({"a": 2, "b": 0.5})"));
    EXPECT_EQ(bare.kind, CalibrationKind::global);
}
