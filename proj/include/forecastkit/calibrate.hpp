#pragma once

// Platt scaling, global and hierarchical (shared slope/intercept plus per-source
// intercept offsets with an L2 penalty), fitted by damped Newton, and its
// leave-one-question-out application.

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"

namespace fk {

enum class CalibrationKind { global, hierarchical };

inline std::string_view to_string(CalibrationKind k) {
    return k == CalibrationKind::global ? "global" : "hierarchical";
}

inline CalibrationKind parse_calibration_kind(std::string_view s) {
    if (s == "global") return CalibrationKind::global;
    if (s == "hier" || s == "hierarchical") return CalibrationKind::hierarchical;
    fail("unknown calibration kind '" + std::string(s) + "'");
}

inline constexpr double kDefaultCalibrationLambda = 1.0;

struct CalibrationModel {
    double a = 1.0;
    double b = 0.0;
    std::map<Source, double> offsets;  // empty for the global kind
    double lambda = 0.0;
    CalibrationKind kind = CalibrationKind::global;

    static CalibrationModel identity() { return {}; }

    double offset(Source s) const {
        auto it = offsets.find(s);
        return it == offsets.end() ? 0.0 : it->second;
    }
};

struct FitDiagnostics {
    double final_nll = 0.0;  // penalized objective at the returned parameters
    int iterations = 0;
    bool converged = false;
    double gradient_norm = 0.0;  // max-norm
};

struct CalibrationPair {
    double p = 0.5;
    int o = 0;
    Source source = Source::other;
};

/// sigma(a * logit(p) + b + delta_source); sources unseen at fit time get 0.
inline double apply_platt(const CalibrationModel& m, double p, Source source = Source::other) {
    return sigmoid(m.a * logit(clamp_open(p)) + m.b + m.offset(source));
}

struct PlattFitOptions {
    double tolerance = 1e-8;  // on the gradient max-norm
    int max_iterations = 100;
};

/// Penalized NLL over the full parameter vector (a, b, delta_1..delta_S):
///   sum_i [softplus(z_i) - o_i z_i] + lambda * sum_s delta_s^2
/// with z_i = a*logit(p_i) + b + delta_{s_i}. Sources are indexed in the order given.
class PlattObjective {
public:
    PlattObjective(const std::vector<CalibrationPair>& pairs, std::vector<Source> sources,
                   double lambda)
        : lambda_(lambda), sources_(std::move(sources)) {
        std::map<Source, int> idx;
        for (std::size_t s = 0; s < sources_.size(); ++s) idx[sources_[s]] = static_cast<int>(s);
        x_.reserve(pairs.size());
        for (const auto& pr : pairs) {
            x_.push_back(logit(clamp_open(pr.p)));
            o_.push_back(pr.o);
            auto it = idx.find(pr.source);
            src_.push_back(it == idx.end() ? -1 : it->second);
        }
    }

    Eigen::Index dim() const { return 2 + static_cast<Eigen::Index>(sources_.size()); }
    const std::vector<Source>& sources() const { return sources_; }

    double value(const Eigen::VectorXd& th) const {
        double f = 0.0;
        for (std::size_t i = 0; i < x_.size(); ++i) {
            const double z = eta(th, i);
            f += softplus(z) - o_[i] * z;
        }
        for (Eigen::Index s = 2; s < dim(); ++s) f += lambda_ * th[s] * th[s];
        return f;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& th) const {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
        for (std::size_t i = 0; i < x_.size(); ++i) {
            const double r = sigmoid(eta(th, i)) - o_[i];
            g[0] += r * x_[i];
            g[1] += r;
            if (src_[i] >= 0) g[2 + src_[i]] += r;
        }
        for (Eigen::Index s = 2; s < dim(); ++s) g[s] += 2.0 * lambda_ * th[s];
        return g;
    }

    Eigen::MatrixXd hessian(const Eigen::VectorXd& th) const {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim(), dim());
        for (std::size_t i = 0; i < x_.size(); ++i) {
            const double mu = sigmoid(eta(th, i));
            const double w = mu * (1.0 - mu);
            const double xi = x_[i];
            h(0, 0) += w * xi * xi;
            h(0, 1) += w * xi;
            h(1, 1) += w;
            if (src_[i] >= 0) {
                const Eigen::Index s = 2 + src_[i];
                h(0, s) += w * xi;
                h(1, s) += w;
                h(s, s) += w;
            }
        }
        for (Eigen::Index s = 2; s < dim(); ++s) h(s, s) += 2.0 * lambda_;
        return h.selfadjointView<Eigen::Upper>();
    }

private:
    double eta(const Eigen::VectorXd& th, std::size_t i) const {
        return th[0] * x_[i] + th[1] + (src_[i] >= 0 ? th[2 + src_[i]] : 0.0);
    }

    double lambda_;
    std::vector<Source> sources_;
    std::vector<double> x_;
    std::vector<int> o_;
    std::vector<int> src_;
};

struct PlattFit {
    CalibrationModel model;
    FitDiagnostics diagnostics;
};

/// Minimizes the penalized NLL by damped Newton. With lambda = 0 the offsets are
/// constrained to sum to zero (the last offset is eliminated) so the problem stays
/// identifiable; with lambda > 0 the penalty alone pins them.
inline PlattFit fit_platt(const std::vector<CalibrationPair>& pairs, CalibrationKind kind,
                          double lambda = kDefaultCalibrationLambda,
                          const PlattFitOptions& opt = {}) {
    if (pairs.size() < 2) fail("fit_platt: need at least 2 pairs");
    if (!(lambda >= 0.0)) fail("fit_platt: lambda must be >= 0");
    bool has0 = false, has1 = false;
    for (const auto& pr : pairs) {
        if (pr.o != 0 && pr.o != 1) fail("fit_platt: outcomes must be 0 or 1");
        (pr.o ? has1 : has0) = true;
    }
    if (!(has0 && has1)) fail_numeric("fit_platt: degenerate labels (single outcome class)");

    std::vector<Source> sources;
    if (kind == CalibrationKind::hierarchical) {
        std::set<Source> seen;
        for (const auto& pr : pairs) seen.insert(pr.source);
        sources.assign(seen.begin(), seen.end());
    }
    const PlattObjective obj(pairs, sources, lambda);
    const Eigen::Index full = obj.dim();

    // theta = T * phi; T drops the last offset when the sum-to-zero constraint applies.
    const bool constrained = !sources.empty() && lambda == 0.0;
    const Eigen::Index reduced = constrained ? full - 1 : full;
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(full, reduced);
    for (Eigen::Index i = 0; i < reduced; ++i) T(i, i) = 1.0;
    if (constrained)
        for (Eigen::Index s = 2; s < reduced; ++s) T(full - 1, s) = -1.0;

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(reduced);
    phi[0] = 1.0;  // start from the identity map
    Eigen::VectorXd theta = T * phi;
    double f = obj.value(theta);
    Eigen::VectorXd g = T.transpose() * obj.gradient(theta);

    FitDiagnostics diag;
    for (; diag.iterations < opt.max_iterations; ++diag.iterations) {
        if (g.lpNorm<Eigen::Infinity>() <= opt.tolerance) break;
        Eigen::MatrixXd H = T.transpose() * obj.hessian(theta) * T;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        Eigen::VectorXd step = ldlt.solve(-g);
        if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(g) >= 0.0)
            step = -g;  // Hessian unusable; fall back to steepest descent

        // Close to the optimum the decrease in f drops below its rounding error, so a
        // step that keeps f level within that error is also taken if it shrinks the gradient.
        const double flat = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
        double t = 1.0;
        bool moved = false;
        for (int halvings = 0; halvings < 40; ++halvings, t *= 0.5) {
            const Eigen::VectorXd cand = phi + t * step;
            const double fc = obj.value(T * cand);
            if (!std::isfinite(fc)) continue;
            if (fc < f) {
                moved = true;
            } else if (fc <= f + flat) {
                const Eigen::VectorXd gc = T.transpose() * obj.gradient(T * cand);
                moved = gc.lpNorm<Eigen::Infinity>() < g.lpNorm<Eigen::Infinity>();
            }
            if (moved) {
                phi = cand;
                f = std::min(f, fc);
                break;
            }
        }
        if (!moved) break;  // no progress possible at machine precision
        theta = T * phi;
        g = T.transpose() * obj.gradient(theta);
    }
    diag.gradient_norm = g.lpNorm<Eigen::Infinity>();
    diag.converged = diag.gradient_norm <= opt.tolerance;
    diag.final_nll = f;
    if (!theta.allFinite()) fail_numeric("fit_platt: non-finite parameters");

    PlattFit out;
    out.model.a = theta[0];
    out.model.b = theta[1];
    out.model.lambda = lambda;
    out.model.kind = kind;
    for (std::size_t s = 0; s < sources.size(); ++s)
        out.model.offsets[sources[s]] = theta[2 + static_cast<Eigen::Index>(s)];
    out.diagnostics = diag;
    return out;
}

// ---------------------------------------------------------------------------

struct CalibrationRow {
    std::string question_id;
    double p = 0.5;
    std::optional<int> o;  // unresolved rows are calibrated but never fitted on
    Source source = Source::other;
};

struct LooCalibration {
    std::vector<double> calibrated;  // aligned with the input rows
    std::map<std::string, CalibrationModel> fold_models;
    std::vector<std::string> warnings;
};

/// For each question, fit on the resolved rows of all other questions and apply
/// to every row of the held-out one. A fold whose training rows are single-class
/// falls back to the identity map.
inline LooCalibration loo_calibrate(const std::vector<CalibrationRow>& rows, CalibrationKind kind,
                                    double lambda = kDefaultCalibrationLambda, unsigned jobs = 1,
                                    const PlattFitOptions& opt = {}) {
    std::vector<std::string> qids;
    {
        std::set<std::string> seen;
        for (const auto& r : rows)
            if (seen.insert(r.question_id).second) qids.push_back(r.question_id);
    }
    if (qids.size() < 3) fail("loo_calibrate: need at least 3 questions");

    std::vector<CalibrationModel> models(qids.size());
    std::vector<std::string> fold_warning(qids.size());
    parallel_for(qids.size(), jobs, [&](std::size_t qi) {
        std::vector<CalibrationPair> train;
        for (const auto& r : rows)
            if (r.question_id != qids[qi] && r.o) train.push_back({r.p, *r.o, r.source});
        try {
            models[qi] = fit_platt(train, kind, lambda, opt).model;
        } catch (const Error& e) {
            models[qi] = CalibrationModel::identity();
            fold_warning[qi] = "fold '" + qids[qi] + "': " + e.what() + "; using identity";
        }
    });

    LooCalibration out;
    for (std::size_t qi = 0; qi < qids.size(); ++qi) {
        out.fold_models[qids[qi]] = models[qi];
        if (!fold_warning[qi].empty()) out.warnings.push_back(fold_warning[qi]);
    }
    out.calibrated.reserve(rows.size());
    for (const auto& r : rows)
        out.calibrated.push_back(apply_platt(out.fold_models.at(r.question_id), r.p, r.source));
    return out;
}

inline json to_json(const CalibrationModel& m) {
    json offsets = json::object();
    for (const auto& [s, d] : m.offsets) offsets[std::string(to_string(s))] = d;
    return {{"a", m.a},
            {"b", m.b},
            {"offsets", offsets},
            {"lambda", m.lambda},
            {"kind", std::string(to_string(m.kind))}};
}

inline CalibrationModel calibration_model_from_json(const json& j) {
    CalibrationModel m;
    m.a = j.at("a").get<double>();
    m.b = j.at("b").get<double>();
    m.lambda = j.value("lambda", 0.0);
    if (j.contains("offsets"))
        for (const auto& [name, v] : j["offsets"].items()) m.offsets[parse_source(name)] = v;
    m.kind = j.contains("kind") ? parse_calibration_kind(j["kind"].get<std::string>())
                                : (m.offsets.empty() ? CalibrationKind::global
                                                     : CalibrationKind::hierarchical);
    return m;
}

}  // namespace fk
