#pragma once

// Value-function safety filter: the space-to-time query, the naive and
// worst-case baselines, and the single-constraint barrier QP.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "s2t/dynamics.hpp"
#include "s2t/error.hpp"
#include "s2t/grid.hpp"
#include "s2t/wind.hpp"

namespace s2t {

enum class FilterMode { SpaceToTime, NaiveEnsemble, WorstCase };

inline const char* to_string(FilterMode m) {
    switch (m) {
        case FilterMode::SpaceToTime: return "space2time";
        case FilterMode::NaiveEnsemble: return "naive";
        case FilterMode::WorstCase: return "worst-case";
    }
    return "?";
}

inline FilterMode filter_mode_from_string(const std::string& s) {
    if (s == "space2time" || s == "ours") return FilterMode::SpaceToTime;
    if (s == "naive") return FilterMode::NaiveEnsemble;
    if (s == "worst-case" || s == "worst_case" || s == "worstcase") return FilterMode::WorstCase;
    throw ConfigError("unknown filter mode '" + s + "' (expected space2time, naive or worst-case)");
}

enum class QpStatus { NominalFeasible, Corrected, FallbackOptimal };

inline const char* to_string(QpStatus s) {
    switch (s) {
        case QpStatus::NominalFeasible: return "nominal";
        case QpStatus::Corrected: return "corrected";
        case QpStatus::FallbackOptimal: return "fallback";
    }
    return "?";
}

using TubeSet = std::vector<std::shared_ptr<const ValueTube>>;

struct FilterConfig {
    TubeSet tubes;  ///< sorted by member multiplier; WorstCase uses the last one
    double gamma = 1.0;
    FilterMode mode = FilterMode::SpaceToTime;
    DisturbanceSpec d_spec;
    double t_max = 0.0;

    std::vector<double> member_parameters() const {
        std::vector<double> out;
        out.reserve(tubes.size());
        for (const auto& t : tubes) out.push_back(t->meta().multiplier);
        return out;
    }

    void validate() const {
        if (!(gamma > 0.0)) throw ConfigError("filter: gamma must be positive");
        if (tubes.empty()) throw ConfigError("filter: no value tubes loaded");
        if (!(t_max > 0.0)) throw ConfigError("filter: t_max must be positive");
        for (std::size_t i = 0; i < tubes.size(); ++i) {
            if (!tubes[i]) throw ConfigError("filter: null tube");
            if (tubes[i]->max_tau() + 1e-9 < t_max) throw ConfigError("filter: tube horizon shorter than t_max");
            if (i > 0 && !(tubes[i]->meta().multiplier > tubes[i - 1]->meta().multiplier)) {
                throw ConfigError("filter: tubes must be sorted by member parameter");
            }
        }
        const Parameterization want =
            mode == FilterMode::SpaceToTime ? Parameterization::FixedRate : Parameterization::FixedBound;
        for (const auto& t : tubes) {
            if (t->meta().kind != want) {
                throw ConfigError(std::string("filter: mode ") + to_string(mode) + " needs '" + to_string(want) +
                                  "' tubes");
            }
        }
    }
};

template <int M>
struct FilterOutput {
    Eigen::Matrix<double, M, 1> u_star;
    double value = 0.0;
    double dvdt = 0.0;
    double t_return = 0.0;
    double tau_query = 0.0;
    std::size_t member_index = 0;
    bool intervened = false;
    bool clamped = false;
    QpStatus qp_status = QpStatus::NominalFeasible;
};

/// min_i (d_max_i - d_bar_i) / rate_i, clamped to [0, t_max].
inline double t_return(const Eigen::VectorXd& d_bar, const Eigen::VectorXd& rate_bar, const DisturbanceSpec& spec,
                       double t_max) {
    if (d_bar.size() != spec.size() || rate_bar.size() != spec.size()) throw Error("t_return: dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < spec.size(); ++i) {
        if (!(rate_bar[i] > 0.0)) throw Error("t_return: zero disturbance rate (estimator floor missing?)");
        best = std::min(best, (spec.d_max[i] - d_bar[i]) / rate_bar[i]);
    }
    return std::clamp(best, 0.0, t_max);
}

/// Index of the smallest parameter >= query; the last member if none is.
inline std::size_t select_member(const std::vector<double>& params, double query) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i] >= query) return i;
    }
    return params.empty() ? 0 : params.size() - 1;
}

/// max_i num_i / den_i over dimensions with den_i > 0.
inline double normalized_max(const Eigen::VectorXd& num, const Eigen::VectorXd& den) {
    double q = 0.0;
    for (Eigen::Index i = 0; i < num.size(); ++i) {
        if (den[i] > 0.0) q = std::max(q, num[i] / den[i]);
    }
    return q;
}

template <int M>
struct QpSolution {
    Eigen::Matrix<double, M, 1> u;
    double multiplier = 0.0;  ///< halfspace multiplier mu >= 0
    QpStatus status = QpStatus::NominalFeasible;
};

/// Euclidean projection of u_nom onto {lo <= u <= hi, a^T u >= b}.
/// The minimiser is u(mu) = clamp(u_nom + mu a) for the smallest mu >= 0 with
/// a^T u(mu) >= b. a^T u(mu) is non-decreasing and piecewise linear in mu with
/// kinks where a coordinate enters or leaves the box, so mu is found exactly by
/// interpolating between consecutive kinks.
template <int M>
QpSolution<M> project_box_halfspace(const Eigen::Matrix<double, M, 1>& u_nom, const ControlBox<M>& box,
                                    const Eigen::Matrix<double, M, 1>& a, double b) {
    using Vec = Eigen::Matrix<double, M, 1>;
    QpSolution<M> sol;
    sol.u = box.clamp(u_nom);
    if (a.dot(sol.u) >= b) return sol;
    double reach = 0.0;
    for (int j = 0; j < M; ++j) reach += std::max(a[j] * box.lo[j], a[j] * box.hi[j]);
    if (reach < b) {
        sol.status = QpStatus::FallbackOptimal;
        return sol;
    }
    auto at = [&](double mu) -> Vec { return box.clamp(u_nom + mu * a); };
    std::array<double, 2 * M + 1> kinks{};
    int nk = 0;
    kinks[nk++] = 0.0;
    for (int j = 0; j < M; ++j) {
        if (a[j] == 0.0) continue;
        for (double edge : {box.lo[j], box.hi[j]}) {
            const double mu = (edge - u_nom[j]) / a[j];
            if (mu > 0.0) kinks[nk++] = mu;
        }
    }
    std::sort(kinks.begin(), kinks.begin() + nk);
    double mu = kinks[nk - 1];
    double m0 = 0.0, p0 = a.dot(at(0.0));
    for (int k = 1; k < nk; ++k) {
        const double p1 = a.dot(at(kinks[k]));
        if (p1 >= b) {
            mu = p1 > p0 ? m0 + (b - p0) * (kinks[k] - m0) / (p1 - p0) : kinks[k];
            break;
        }
        m0 = kinks[k];
        p0 = p1;
    }
    sol.u = at(mu);
    sol.multiplier = mu;
    sol.status = QpStatus::Corrected;
    // Rounding can leave a^T u a few ulps short of b; nudge along the free coordinates.
    const double short_by = b - a.dot(sol.u);
    if (short_by > 0.0) {
        double free_norm = 0.0;
        for (int j = 0; j < M; ++j) {
            if (sol.u[j] > box.lo[j] && sol.u[j] < box.hi[j]) free_norm += a[j] * a[j];
        }
        if (free_norm > 0.0) {
            for (int j = 0; j < M; ++j) {
                if (sol.u[j] > box.lo[j] && sol.u[j] < box.hi[j]) sol.u[j] += short_by * a[j] / free_norm;
            }
            sol.u = box.clamp(sol.u);
        }
    }
    return sol;
}

/// Halfspace a^T u >= b of the barrier condition
///   dV/dt + grad V . (f + G u) - sum_i |grad V_i| eta_i >= -gamma V
/// (the min over the 0-centred eta box taken in closed form).
template <ControlAffineModel Model>
std::pair<ControlOf<Model>, double> barrier_halfspace(const Model& model, const StateOf<Model>& x, double value,
                                                       double dvdt, const StateOf<Model>& grad,
                                                       const StateOf<Model>& eta_bound, double gamma) {
    const ControlOf<Model> a = model.input_matrix(x).transpose() * grad;
    const double b = -gamma * value - dvdt - grad.dot(model.drift(x)) + grad.cwiseAbs().dot(eta_bound);
    return {a, b};
}

template <ControlAffineModel Model>
FilterOutput<Model::kControlDim> cbf_qp(const Model& model, const ControlOf<Model>& u_nom, double value, double dvdt,
                                        const StateOf<Model>& grad, const StateOf<Model>& x,
                                        const StateOf<Model>& eta_bound, double gamma) {
    constexpr int M = Model::kControlDim;
    if (!std::isfinite(value) || !std::isfinite(dvdt) || !grad.allFinite() || !u_nom.allFinite()) {
        throw NumericalError("cbf_qp: non-finite input");
    }
    const auto [a, b] = barrier_halfspace(model, x, value, dvdt, grad, eta_bound, gamma);
    const auto& box = model.control_box();
    QpSolution<M> sol = project_box_halfspace<M>(u_nom, box, a, b);
    if (sol.status == QpStatus::FallbackOptimal) {
        sol.u = optimal_control(model, grad, x);
        // Channels the value gradient cannot see are payoff-neutral; keep the nominal there.
        const ControlOf<Model> nominal = box.clamp(u_nom);
        for (int j = 0; j < M; ++j) {
            if (a[j] == 0.0) sol.u[j] = nominal[j];
        }
    }
    FilterOutput<M> out;
    out.u_star = sol.u;
    out.value = value;
    out.dvdt = dvdt;
    out.qp_status = sol.status;
    const ControlOf<Model> width = box.width();
    for (int j = 0; j < M; ++j) {
        if (std::abs(out.u_star[j] - u_nom[j]) > 1e-6 * width[j]) out.intervened = true;
    }
    return out;
}

/// Which tube, time-to-go and disturbance box a filter mode queries.
struct FilterQuery {
    std::size_t member = 0;
    double t_return = 0.0;
    double tau = 0.0;
    Eigen::VectorXd eta_bound;
};

/// d_bar is the magnitude estimate the mode works with: the latest sample for
/// SpaceToTime, the recent maximum for the baselines.
inline FilterQuery plan_query(const FilterConfig& cfg, const DisturbanceEstimator::Estimate& est) {
    if (cfg.tubes.empty()) throw Error("filter: no value tubes loaded");
    const auto& spec = cfg.d_spec;
    if (est.d_bar.size() != spec.size() || est.rate_bar.size() != spec.size()) {
        throw Error("filter: estimate dimension mismatch");
    }
    const std::vector<double> params = cfg.member_parameters();
    FilterQuery q;
    q.member = cfg.tubes.size() - 1;
    q.t_return = cfg.t_max;
    switch (cfg.mode) {
        case FilterMode::SpaceToTime:
            q.t_return = t_return(est.d_bar, est.rate_bar, spec, cfg.t_max);
            q.member = select_member(params, normalized_max(est.rate_bar, spec.ddot_max));
            q.tau = q.t_return;
            q.eta_bound = (spec.d_max - q.tau * params[q.member] * spec.ddot_max).cwiseMax(0.0);
            break;
        case FilterMode::NaiveEnsemble:
            q.member = select_member(params, normalized_max(est.d_bar, spec.d_max));
            q.tau = cfg.tubes[q.member]->max_tau();
            q.eta_bound = params[q.member] * spec.d_max;
            break;
        case FilterMode::WorstCase:
            q.tau = cfg.tubes[q.member]->max_tau();
            q.eta_bound = spec.d_max;
            break;
    }
    q.tau = std::min(q.tau, cfg.tubes[q.member]->max_tau());
    return q;
}

/// One filter evaluation: query the selected tube and run the barrier QP.
template <ControlAffineModel Model>
FilterOutput<Model::kControlDim> filter_step(const FilterConfig& cfg, const Model& model, const StateOf<Model>& x,
                                             const DisturbanceEstimator::Estimate& est, const ControlOf<Model>& u_nom) {
    constexpr int N = Model::kStateDim;
    const FilterQuery q = plan_query(cfg, est);
    if (q.eta_bound.size() != N) throw Error("filter: estimate dimension mismatch");
    const ValueTube& tube = *cfg.tubes[q.member];
    std::array<double, N> xs{};
    for (int i = 0; i < N; ++i) xs[i] = x[i];
    const TubeSample s = sample(tube, xs, q.tau);
    StateOf<Model> grad, eta;
    for (int i = 0; i < N; ++i) {
        grad[i] = s.grad[i];
        eta[i] = q.eta_bound[i];
    }
    auto out = cbf_qp(model, u_nom, s.value, s.dvdt, grad, x, eta, cfg.gamma);
    out.t_return = q.t_return;
    out.tau_query = q.tau;
    out.member_index = q.member;
    out.clamped = s.clamped;
    return out;
}

}  // namespace s2t
