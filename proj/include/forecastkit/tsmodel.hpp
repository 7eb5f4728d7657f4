#pragma once

// Exceedance-probability estimators P(Y(r) > v | data up to f) for binarized
// time-series questions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"
#include "forecastkit/date.hpp"

namespace fk {

struct SeriesPoint {
    Date date;
    double value = 0.0;
    bool operator==(const SeriesPoint&) const = default;
};

/// Observations visible at `clamp_date`: every point satisfies
/// clamp_date - window_days <= date <= clamp_date, dates strictly increasing.
class SeriesHistory {
public:
    SeriesHistory(std::vector<SeriesPoint> points, Date clamp_date,
                  std::optional<long> window_days = std::nullopt)
        : points_(std::move(points)), clamp_date_(clamp_date), window_days_(window_days) {
        for (std::size_t i = 0; i < points_.size(); ++i) {
            if (points_[i].date > clamp_date_)
                fail("history point " + points_[i].date.iso() + " is after clamp date " +
                     clamp_date_.iso());
            if (window_days_ && points_[i].date < clamp_date_ - *window_days_)
                fail("history point " + points_[i].date.iso() + " is outside the window");
            if (i > 0 && points_[i].date <= points_[i - 1].date)
                fail("history dates must be strictly increasing");
            if (!std::isfinite(points_[i].value)) fail("non-finite history value");
        }
    }

    const std::vector<SeriesPoint>& points() const { return points_; }
    Date clamp_date() const { return clamp_date_; }
    std::optional<long> window_days() const { return window_days_; }

private:
    std::vector<SeriesPoint> points_;
    Date clamp_date_;
    std::optional<long> window_days_;
};

/// Date-clamped fetch: keeps raw points with t - W <= t_j <= t. Duplicate dates
/// keep the last value.
inline SeriesHistory fetch_history(std::vector<SeriesPoint> raw, Date t,
                                   std::optional<long> window_days = std::nullopt) {
    std::stable_sort(raw.begin(), raw.end(),
                     [](const SeriesPoint& a, const SeriesPoint& b) { return a.date < b.date; });
    std::vector<SeriesPoint> kept;
    for (const auto& pt : raw) {
        if (pt.date > t) continue;
        if (window_days && pt.date < t - *window_days) continue;
        if (!kept.empty() && kept.back().date == pt.date)
            kept.back() = pt;
        else
            kept.push_back(pt);
    }
    return SeriesHistory(std::move(kept), t, window_days);
}

/// CSV `date,value` with an optional header row.
inline std::vector<SeriesPoint> read_series_csv(std::istream& in) {
    std::vector<SeriesPoint> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            fail("series line " + std::to_string(lineno) + ": expected date,value");
        const std::string d = line.substr(0, comma), v = line.substr(comma + 1);
        if (lineno == 1 && !d.empty() && !std::isdigit(static_cast<unsigned char>(d[0])))
            continue;
        try {
            out.push_back({Date::parse(d), std::stod(v)});
        } catch (const std::invalid_argument&) {
            fail("series line " + std::to_string(lineno) + ": value is not a number");
        } catch (const Error& e) {
            fail("series line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<SeriesPoint> load_series_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    return read_series_csv(in);
}

inline constexpr int kDaysPerYear = 365;

/// Year-wrap-aware distance between two days of year in 1..365.
inline int cyclic_doy_distance(int a, int b) {
    if (a < 1 || a > kDaysPerYear || b < 1 || b > kDaysPerYear)
        fail("day of year out of range 1..365");
    const int d = std::abs(a - b);
    return std::min(d, kDaysPerYear - d);
}

struct KnnResult {
    double p = 0.5;
    std::size_t neighbors = 0;
    std::size_t exceedances = 0;
};

/// Laplace-smoothed exceedance frequency over points whose day of year is within
/// `w` of the target's and whose date lies in (f - max_age, f), f being the
/// history's clamp date. Ties (value == v) do not count as exceedance.
inline KnnResult knn_exceedance(const SeriesHistory& h, double threshold, Date target, int w,
                                std::optional<long> max_age_days = std::nullopt) {
    const Date f = h.clamp_date();
    const int target_doy = target.day_of_year();
    KnnResult r;
    for (const auto& pt : h.points()) {
        if (!(pt.date < f)) continue;
        if (max_age_days && !(pt.date > f - *max_age_days)) continue;
        if (cyclic_doy_distance(pt.date.day_of_year(), target_doy) > w) continue;
        ++r.neighbors;
        if (pt.value > threshold) ++r.exceedances;
    }
    r.p = (static_cast<double>(r.exceedances) + 1.0) / (static_cast<double>(r.neighbors) + 2.0);
    return r;
}

inline double normal_survival(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

struct LinearTrend {
    double slope = 0.0;     // per day
    double t_center = 0.0;  // mean fitted day (days since epoch)
    double y_center = 0.0;  // mean fitted value
    double predict(Date d) const {
        return y_center + slope * (static_cast<double>(d.days()) - t_center);
    }
};

/// OLS fit of value on days-since-epoch over the last `window` points, computed
/// in centered coordinates.
inline LinearTrend fit_linear_trend(const SeriesHistory& h, std::size_t window) {
    const auto& pts = h.points();
    const std::size_t n = std::min(window, pts.size());
    if (n < 2) fail("insufficient history: linear trend needs at least 2 points");
    const auto first = pts.end() - static_cast<std::ptrdiff_t>(n);
    double tbar = 0.0, ybar = 0.0;
    for (auto it = first; it != pts.end(); ++it) {
        tbar += static_cast<double>(it->date.days());
        ybar += it->value;
    }
    tbar /= static_cast<double>(n);
    ybar /= static_cast<double>(n);
    double stt = 0.0, sty = 0.0;
    for (auto it = first; it != pts.end(); ++it) {
        const double dt = static_cast<double>(it->date.days()) - tbar;
        stt += dt * dt;
        sty += dt * (it->value - ybar);
    }
    LinearTrend lt;
    lt.slope = sty / stt;
    lt.t_center = tbar;
    lt.y_center = ybar;
    return lt;
}

/// Survival probability of `threshold` under N(trend(target), sigma^2).
inline double linear_exceedance(const SeriesHistory& h, double threshold, Date target,
                                std::size_t ols_window, double sigma) {
    if (!(sigma > 0.0)) fail("linear_exceedance: sigma must be > 0");
    const LinearTrend lt = fit_linear_trend(h, ols_window);
    return normal_survival((threshold - lt.predict(target)) / sigma);
}

inline double safe_linear(double p_linear, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("safe_linear: alpha must lie in [0,1]");
    return alpha * p_linear + (1.0 - alpha) * 0.5;
}

/// beta * p_safe + (1 - beta) * p_prior_year; beta is forced to 1 when no
/// prior-year estimate exists.
inline double hybrid_exceedance(double p_safe, std::optional<double> p_prior_year, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) fail("hybrid_exceedance: beta must lie in [0,1]");
    if (!p_prior_year) return p_safe;
    return beta * p_safe + (1.0 - beta) * *p_prior_year;
}

/// Value at the latest observation on or before `f` (previous close on market holidays).
inline double reference_value(const SeriesHistory& h, Date f) {
    const auto& pts = h.points();
    auto it = std::upper_bound(pts.begin(), pts.end(), f,
                               [](Date d, const SeriesPoint& p) { return d < p.date; });
    if (it == pts.begin()) fail("no history on or before " + f.iso());
    return std::prev(it)->value;
}

struct TsModelConfig {
    int knn_window_w = 10;
    std::optional<long> knn_max_age_days;  // nullopt = unlimited
    double alpha = 0.5;
    double beta = 0.5;
    std::size_t ols_window = 30;
    std::optional<double> residual_sigma;  // required by the linear and hybrid models
    int prior_year_window_w = 7;
    long prior_year_max_age_days = 5 * kDaysPerYear;

    static TsModelConfig for_source(Source s) {
        TsModelConfig c;
        switch (s) {
            case Source::dbnomics:
                c.knn_window_w = 10;
                c.knn_max_age_days = std::nullopt;
                break;
            case Source::yfinance:
                c.alpha = 0.1;
                c.ols_window = 60;
                c.beta = 0.5;
                break;
            case Source::fred:
                c.alpha = 0.5;
                c.ols_window = 30;
                c.beta = 0.5;
                break;
            default: break;
        }
        return c;
    }
};

enum class TsModelKind { knn, linear, hybrid };

inline TsModelKind parse_ts_model(std::string_view s) {
    if (s == "knn") return TsModelKind::knn;
    if (s == "linear") return TsModelKind::linear;
    if (s == "hybrid") return TsModelKind::hybrid;
    fail("unknown time-series model '" + std::string(s) + "'");
}

inline double require_sigma(const TsModelConfig& cfg) {
    if (!cfg.residual_sigma) fail("residual sigma not configured for the linear model");
    return *cfg.residual_sigma;
}

/// Safe-linear estimate: the linear survival probability shrunk toward 0.5.
inline double safe_linear_exceedance(const SeriesHistory& h, double threshold, Date target,
                                     const TsModelConfig& cfg) {
    return safe_linear(linear_exceedance(h, threshold, target, cfg.ols_window, require_sigma(cfg)),
                       cfg.alpha);
}

inline double hybrid_model(const SeriesHistory& h, double threshold, Date target,
                           const TsModelConfig& cfg) {
    const double p_safe = safe_linear_exceedance(h, threshold, target, cfg);
    const KnnResult prior_year = knn_exceedance(h, threshold, target, cfg.prior_year_window_w,
                                                cfg.prior_year_max_age_days);
    return hybrid_exceedance(
        p_safe, prior_year.neighbors ? std::optional<double>(prior_year.p) : std::nullopt,
        cfg.beta);
}

/// Per-resolution-date probabilities for one dataset question whose reference
/// value is the series value on (or just before) the forecast due date.
inline std::vector<double> exceedance_forecasts(const Question& q,
                                                const std::vector<SeriesPoint>& raw,
                                                TsModelKind model, const TsModelConfig& cfg) {
    const SeriesHistory h = fetch_history(raw, q.forecast_due_date);
    const double v = reference_value(h, q.forecast_due_date);
    std::vector<double> out;
    for (Date r : q.resolution_dates) {
        switch (model) {
            case TsModelKind::knn:
                out.push_back(knn_exceedance(h, v, r, cfg.knn_window_w, cfg.knn_max_age_days).p);
                break;
            case TsModelKind::linear: out.push_back(safe_linear_exceedance(h, v, r, cfg)); break;
            case TsModelKind::hybrid: out.push_back(hybrid_model(h, v, r, cfg)); break;
        }
    }
    return out;
}

/// Sample standard deviation (ddof=1) of supplied residuals.
inline double estimate_residual_sigma(const std::vector<double>& residuals) {
    if (residuals.size() < 2) fail("need at least 2 residuals to estimate sigma");
    const double m = mean_of(residuals);
    double ss = 0.0;
    for (double r : residuals) ss += (r - m) * (r - m);
    const double s = std::sqrt(ss / static_cast<double>(residuals.size() - 1));
    if (!(s > 0.0)) fail_numeric("residual sigma is zero");
    return s;
}

/// One residual per line; blank lines and a non-numeric header are skipped.
inline std::vector<double> load_residuals(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path + "'");
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(std::stod(line));
        } catch (const std::invalid_argument&) {
            if (lineno != 1) fail("residuals line " + std::to_string(lineno) + ": not a number");
        }
    }
    return out;
}

}  // namespace fk
