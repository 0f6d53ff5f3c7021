#pragma once

// Grid dynamic programming for avoid and reach-avoid tubes.
//
// Each backward step applies
//   reach-avoid:  V <- min{ g, max{ l, V + dt * H_LF(V, x, b(tau)) } }
//   avoid:        V <- min{ g, V + dt * H_LF(V, x, b(tau)) }
// with V(., 0) = min{l, g} (resp. g). H_LF is the Lax-Friedrichs numerical
// Hamiltonian on first-order one-sided differences:
//   H_LF = H(x, (p+ + p-)/2, b) + sum_i alpha_i(x) (p+_i - p-_i) / 2
// with alpha_i(x) = max_u |f_i + (g u)_i| + dissipation box_i at the node.
// Outside the grid the field is extended with zero slope. The scheme is
// monotone when dt * sum_i alpha_i / h_i <= 1; dt is chosen from that sum
// (grid maxima) times the CFL number. Nodes with g <= 0 keep their terminal value.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "s2t/dynamics.hpp"
#include "s2t/error.hpp"
#include "s2t/grid.hpp"
#include "s2t/parallel.hpp"

namespace s2t {

using ScalarField = std::function<double(std::span<const double>)>;

/// Constant 0-centred disturbance box.
struct FixedBound {
    Eigen::VectorXd bound;
};

/// Disturbance box that shrinks with time-to-go (grows toward the terminal time).
struct RateSchedule {
    TimeVaryingDisturbanceSet set;
};

using DisturbanceModel = std::variant<FixedBound, RateSchedule>;

inline Eigen::VectorXd bound_at(const DisturbanceModel& dm, double tau) {
    if (const auto* fixed = std::get_if<FixedBound>(&dm)) return fixed->bound;
    return std::get<RateSchedule>(dm).set.bound(tau);
}

/// Largest box the disturbance model ever uses.
inline Eigen::VectorXd max_bound(const DisturbanceModel& dm) {
    if (const auto* fixed = std::get_if<FixedBound>(&dm)) return fixed->bound;
    return std::get<RateSchedule>(dm).set.d_max.cwiseMax(0.0);
}

struct SolverSettings {
    double cfl = 0.5;
    /// Time step; 0 derives it from the CFL bound.
    double dt = 0.0;
    /// Number of tau intervals kept in the output tube (plus tau = 0).
    std::size_t archive_samples = 50;
    std::size_t jobs = 1;
    /// Disturbance box used for the dissipation coefficients. Members of one
    /// ensemble share it so that they share dt and stay pointwise comparable.
    std::optional<Eigen::VectorXd> dissipation_bound;
};

template <ControlAffineModel Model>
struct ReachAvoidProblem {
    Model model;
    RectGrid grid;
    ScalarField constraint;  ///< g: failure set is {g <= 0}
    ScalarField target;      ///< l: target set is {l >= 0}; unused by solve_avoid
    DisturbanceModel disturbance;
    double horizon = 1.0;
    SolverSettings settings;
};

struct SolveInfo {
    double dt = 0.0;
    std::size_t steps = 0;
    std::size_t archive_every = 1;
    std::vector<double> dissipation;
};

namespace detail {

template <ControlAffineModel Model>
std::vector<double> dissipation_coefficients(const Model& model, const RectGrid& grid, const Eigen::VectorXd& dist) {
    constexpr int N = Model::kStateDim;
    const auto& box = model.control_box();
    std::vector<double> alpha(N, 0.0);
    StateOf<Model> x;
    std::array<double, N> coords{};
    for (std::size_t p = 0; p < grid.size(); ++p) {
        grid.point(p, coords);
        for (int i = 0; i < N; ++i) x[i] = coords[i];
        const auto f = model.drift(x);
        const auto g = model.input_matrix(x);
        for (int i = 0; i < N; ++i) {
            double lo = f[i];
            double hi = f[i];
            for (int j = 0; j < Model::kControlDim; ++j) {
                lo += std::min(g(i, j) * box.lo[j], g(i, j) * box.hi[j]);
                hi += std::max(g(i, j) * box.lo[j], g(i, j) * box.hi[j]);
            }
            alpha[i] = std::max(alpha[i], std::max(std::abs(lo), std::abs(hi)));
        }
    }
    for (int i = 0; i < N; ++i) alpha[i] += dist[i];
    return alpha;
}

template <ControlAffineModel Model>
void validate(const ReachAvoidProblem<Model>& pb) {
    constexpr int N = Model::kStateDim;
    if (pb.grid.ndim() != static_cast<std::size_t>(N)) throw ConfigError("solver: grid dimension does not match model");
    if (!pb.constraint) throw ConfigError("solver: constraint function missing");
    if (!(pb.horizon > 0.0) || !std::isfinite(pb.horizon)) throw ConfigError("solver: horizon must be positive");
    if (!(pb.settings.cfl > 0.0) || pb.settings.cfl > 1.0) throw ConfigError("solver: CFL number must lie in (0, 1]");
    if (pb.settings.archive_samples == 0) throw ConfigError("solver: archive_samples must be positive");
    const Eigen::VectorXd b = max_bound(pb.disturbance);
    if (b.size() != N) throw ConfigError("solver: disturbance bound dimension does not match model");
    if (const auto* rs = std::get_if<RateSchedule>(&pb.disturbance)) {
        if (rs->set.ddot.size() != N || (rs->set.ddot.array() < 0.0).any()) {
            throw ConfigError("solver: disturbance rate must be non-negative with model dimension");
        }
    }
    if ((b.array() < 0.0).any()) throw ConfigError("solver: disturbance bound must be non-negative");
    if (pb.settings.dissipation_bound) {
        const auto& db = *pb.settings.dissipation_bound;
        if (db.size() != N) throw ConfigError("solver: dissipation bound dimension mismatch");
        if (((db - b).array() < -1e-15).any()) {
            throw ConfigError("solver: dissipation bound must cover the disturbance box");
        }
    }
}

template <ControlAffineModel Model>
ValueTube solve(const ReachAvoidProblem<Model>& pb, bool reach, SolveInfo* info_out) {
    constexpr int N = Model::kStateDim;
    constexpr int M = Model::kControlDim;
    validate(pb);
    const RectGrid& grid = pb.grid;
    const std::size_t npts = grid.size();
    if (reach && !pb.target) throw ConfigError("solver: target function missing");

    std::vector<double> gvals(npts);
    std::vector<double> lvals(reach ? npts : 0);
    {
        std::vector<double> x(N);
        for (std::size_t p = 0; p < npts; ++p) {
            grid.point(p, x);
            gvals[p] = pb.constraint(x);
            if (reach) lvals[p] = pb.target(x);
            if (!std::isfinite(gvals[p]) || (reach && !std::isfinite(lvals[p]))) {
                throw NumericalError("solver: non-finite constraint/target value at grid node " + std::to_string(p));
            }
        }
    }
    const Eigen::VectorXd diss_box = pb.settings.dissipation_bound.value_or(max_bound(pb.disturbance));
    const std::vector<double> alpha = dissipation_coefficients(pb.model, grid, diss_box);
    double rate_sum = 0.0;
    for (int i = 0; i < N; ++i) rate_sum += alpha[i] / grid.spacing(i);
    const double dt_stable = rate_sum > 0.0 ? pb.settings.cfl / rate_sum : std::numeric_limits<double>::infinity();

    double dt_req = pb.settings.dt > 0.0 ? pb.settings.dt : dt_stable;
    if (pb.settings.dt > 0.0 && pb.settings.dt > dt_stable * (1.0 + 1e-12)) {
        std::ostringstream msg;
        msg << "CFL violation: dt " << pb.settings.dt << " exceeds stable step " << dt_stable << " (CFL "
            << pb.settings.cfl << ")";
        throw NumericalError(msg.str());
    }
    if (!std::isfinite(dt_req)) dt_req = pb.horizon;
    std::size_t steps = static_cast<std::size_t>(std::ceil(pb.horizon / dt_req - 1e-9));
    steps = std::max<std::size_t>(steps, 1);
    const std::size_t archive = std::min(pb.settings.archive_samples, steps);
    const std::size_t every = (steps + archive - 1) / archive;
    steps = every * archive;
    const double dt = pb.horizon / static_cast<double>(steps);

    std::vector<double> current(npts);
    for (std::size_t p = 0; p < npts; ++p) current[p] = reach ? std::min(lvals[p], gvals[p]) : gvals[p];
    std::vector<double> next(npts);

    std::vector<double> taus;
    std::vector<double> archived;
    taus.reserve(archive + 1);
    archived.reserve((archive + 1) * npts);
    taus.push_back(0.0);
    archived.insert(archived.end(), current.begin(), current.end());

    std::array<double, N> inv_h{};
    std::array<std::size_t, N> strides{};
    std::array<std::size_t, N> counts{};
    for (int i = 0; i < N; ++i) {
        inv_h[i] = 1.0 / grid.spacing(i);
        strides[i] = grid.stride(i);
        counts[i] = grid.count(i);
    }
    const auto& box = pb.model.control_box();

    for (std::size_t k = 0; k < steps; ++k) {
        const double tau = static_cast<double>(k) * dt;
        const Eigen::VectorXd b = bound_at(pb.disturbance, tau);
        std::array<double, N> bnd{};
        for (int i = 0; i < N; ++i) bnd[i] = b[i];

        parallel_for(npts, pb.settings.jobs, [&](std::size_t begin, std::size_t end) {
            std::array<std::size_t, N> idx{};
            StateOf<Model> x;
            for (int i = 0; i < N; ++i) {
                idx[i] = (begin / strides[i]) % counts[i];
                x[i] = grid.coordinate(i, idx[i]);
            }
            for (std::size_t p = begin; p < end; ++p) {
                const double vc = current[p];
                const auto f = pb.model.drift(x);
                const auto g = pb.model.input_matrix(x);
                StateOf<Model> lambda;
                double diffusion = 0.0;
                for (int i = 0; i < N; ++i) {
                    double lo = f[i], hi = f[i];
                    for (int j = 0; j < M; ++j) {
                        lo += std::min(g(i, j) * box.lo[j], g(i, j) * box.hi[j]);
                        hi += std::max(g(i, j) * box.lo[j], g(i, j) * box.hi[j]);
                    }
                    const double a_loc = std::max(std::abs(lo), std::abs(hi)) + diss_box[i];
                    const double vp = idx[i] + 1 < counts[i] ? current[p + strides[i]] : vc;
                    const double vm = idx[i] > 0 ? current[p - strides[i]] : vc;
                    const double dplus = (vp - vc) * inv_h[i];
                    const double dminus = (vc - vm) * inv_h[i];
                    lambda[i] = 0.5 * (dplus + dminus);
                    diffusion += a_loc * 0.5 * (dplus - dminus);
                }
                double h = lambda.dot(f);
                for (int j = 0; j < M; ++j) {
                    double c = 0.0;
                    for (int i = 0; i < N; ++i) c += g(i, j) * lambda[i];
                    h += std::max(c * box.lo[j], c * box.hi[j]);
                }
                for (int i = 0; i < N; ++i) h -= std::abs(lambda[i]) * bnd[i];

                double vn = vc + dt * (h + diffusion);
                if (reach) vn = std::max(lvals[p], vn);
                vn = std::min(gvals[p], vn);
                // Failure is absorbing: nodes in F keep their terminal value.
                if (gvals[p] <= 0.0) vn = vc;
                if (!std::isfinite(vn)) {
                    std::ostringstream msg;
                    msg << "solver: non-finite value at step " << k << " (tau " << tau << "), node " << p << " x=["
                        << x.transpose() << "], previous value " << vc;
                    throw NumericalError(msg.str());
                }
                next[p] = vn;

                for (int i = N - 1; i >= 0; --i) {
                    if (++idx[i] < counts[i]) {
                        x[i] = grid.coordinate(i, idx[i]);
                        break;
                    }
                    idx[i] = 0;
                    x[i] = grid.coordinate(i, 0);
                }
            }
        });
        current.swap(next);

        if ((k + 1) % every == 0) {
            const std::size_t j = (k + 1) / every;
            taus.push_back(pb.horizon * static_cast<double>(j) / static_cast<double>(archive));
            archived.insert(archived.end(), current.begin(), current.end());
        }
    }

    if (info_out) {
        info_out->dt = dt;
        info_out->steps = steps;
        info_out->archive_every = every;
        info_out->dissipation = alpha;
    }
    TubeMeta meta;
    meta.problem = reach ? "reach_avoid" : "avoid";
    return ValueTube(grid, std::move(taus), std::move(archived), std::move(meta));
}

}  // namespace detail

template <ControlAffineModel Model>
ValueTube solve_reach_avoid(const ReachAvoidProblem<Model>& problem, SolveInfo* info = nullptr) {
    return detail::solve(problem, true, info);
}

template <ControlAffineModel Model>
ValueTube solve_avoid(const ReachAvoidProblem<Model>& problem, SolveInfo* info = nullptr) {
    return detail::solve(problem, false, info);
}

/// Ensemble members as multipliers of ddot_max (rate members) or of d_max
/// (bound members), strictly increasing, ending at 1.
struct EnsembleSpec {
    Parameterization kind = Parameterization::FixedRate;
    std::vector<double> multipliers;

    static EnsembleSpec evenly_spaced(Parameterization kind, std::size_t k, bool include_zero) {
        if (k == 0) throw ConfigError("ensemble: need at least one member");
        EnsembleSpec spec{kind, {}};
        for (std::size_t i = 0; i < k; ++i) {
            const double frac = include_zero ? (k == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(k - 1))
                                             : static_cast<double>(i + 1) / static_cast<double>(k);
            spec.multipliers.push_back(frac);
        }
        return spec;
    }

    void validate() const {
        if (kind == Parameterization::None) throw ConfigError("ensemble: parameterization must be rate or bound");
        if (multipliers.empty()) throw ConfigError("ensemble: need at least one member");
        for (std::size_t i = 0; i < multipliers.size(); ++i) {
            if (multipliers[i] < 0.0 || multipliers[i] > 1.0) throw ConfigError("ensemble: multipliers must lie in [0, 1]");
            if (i > 0 && !(multipliers[i] > multipliers[i - 1])) {
                throw ConfigError("ensemble: multipliers must be strictly increasing");
            }
        }
        if (multipliers.back() != 1.0 && !(kind == Parameterization::FixedRate && multipliers.size() == 1)) {
            throw ConfigError("ensemble: last member must equal the maximum (multiplier 1)");
        }
    }
};

/// Tube of one ensemble member: a RateSchedule at multiplier * ddot_max or a
/// FixedBound at multiplier * d_max, with dissipation sized for d_max so that
/// all members of an ensemble share the time step.
template <ControlAffineModel Model>
ValueTube solve_member(Parameterization kind, double multiplier, const ReachAvoidProblem<Model>& base,
                       const DisturbanceSpec& dist, SolveInfo* info = nullptr) {
    if (kind == Parameterization::None) throw ConfigError("ensemble: parameterization must be rate or bound");
    if (!(multiplier >= 0.0 && multiplier <= 1.0)) throw ConfigError("ensemble: multipliers must lie in [0, 1]");
    ReachAvoidProblem<Model> pb = base;
    if (kind == Parameterization::FixedRate) {
        pb.disturbance = RateSchedule{{multiplier * dist.ddot_max, dist.d_max}};
    } else {
        pb.disturbance = FixedBound{multiplier * dist.d_max};
    }
    pb.settings.dissipation_bound = dist.d_max;
    ValueTube raw = solve_reach_avoid(pb, info);
    TubeMeta meta = raw.meta();
    meta.kind = kind;
    meta.multiplier = multiplier;
    meta.d_max.assign(dist.d_max.data(), dist.d_max.data() + dist.d_max.size());
    meta.ddot_max.assign(dist.ddot_max.data(), dist.ddot_max.data() + dist.ddot_max.size());
    return std::move(raw).with_meta(std::move(meta));
}

/// One tube per member, in multiplier order.
template <ControlAffineModel Model>
std::vector<ValueTube> solve_ensemble(const EnsembleSpec& spec, const ReachAvoidProblem<Model>& base,
                                      const DisturbanceSpec& dist, std::vector<SolveInfo>* infos = nullptr) {
    spec.validate();
    std::vector<ValueTube> tubes;
    tubes.reserve(spec.multipliers.size());
    for (double m : spec.multipliers) {
        SolveInfo info;
        tubes.push_back(solve_member(spec.kind, m, base, dist, &info));
        if (infos) infos->push_back(std::move(info));
    }
    return tubes;
}

}  // namespace s2t
