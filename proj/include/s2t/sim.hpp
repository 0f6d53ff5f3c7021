#pragma once

// Planar-quadrotor cityscape: geometry, signed constraint/target functions,
// LQR nominal controller, goal cycling, closed-loop rollouts and metrics.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "s2t/dynamics.hpp"
#include "s2t/error.hpp"
#include "s2t/filter.hpp"
#include "s2t/hjr.hpp"
#include "s2t/parallel.hpp"
#include "s2t/wind.hpp"

namespace s2t {

struct Rect {
    double x_lo = 0.0;
    double x_hi = 0.0;
    double z_lo = 0.0;
    double z_hi = 0.0;

    bool contains(double x, double z) const { return x >= x_lo && x <= x_hi && z >= z_lo && z <= z_hi; }
    bool overlaps(const Rect& o) const { return x_lo < o.x_hi && o.x_lo < x_hi && z_lo < o.z_hi && o.z_lo < z_hi; }
};

/// Euclidean distance to the rectangle outside it, minus the depth inside it.
inline double signed_distance_outside(const Rect& r, double x, double z) {
    const double dx = std::max({r.x_lo - x, 0.0, x - r.x_hi});
    const double dz = std::max({r.z_lo - z, 0.0, z - r.z_hi});
    if (dx > 0.0 || dz > 0.0) return std::hypot(dx, dz);
    return -std::min({x - r.x_lo, r.x_hi - x, z - r.z_lo, r.z_hi - z});
}

/// Smallest margin to the faces of the rectangle; positive inside.
inline double margin_inside(const Rect& r, double x, double z) {
    return std::min({x - r.x_lo, r.x_hi - x, z - r.z_lo, r.z_hi - z});
}

struct Canyon {
    double x_lo = 0.0;
    double x_hi = 0.0;
    double floor = 0.0;
    double rim = 0.0;  ///< lower of the two flanking roofs
};

struct Environment {
    Rect boundary{-4.0, 4.0, 0.0, 2.5};
    double v_max = 1.9;
    std::vector<Rect> buildings{{-3.1, -1.3, 0.0, 1.5}, {0.0, 1.2, 0.0, 1.0}, {2.0, 3.2, 0.0, 2.0}};
    Rect target{-2.5, 1.5, 1.7, 2.3};
    double target_v_max = 1.0;

    /// Gaps between horizontally adjacent buildings.
    std::vector<Canyon> canyons() const {
        std::vector<Rect> sorted = buildings;
        std::sort(sorted.begin(), sorted.end(), [](const Rect& a, const Rect& b) { return a.x_lo < b.x_lo; });
        std::vector<Canyon> out;
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
            if (sorted[i + 1].x_lo > sorted[i].x_hi) {
                out.push_back({sorted[i].x_hi, sorted[i + 1].x_lo, boundary.z_lo,
                               std::min(sorted[i].z_hi, sorted[i + 1].z_hi)});
            }
        }
        return out;
    }

    void validate() const {
        if (!(boundary.x_hi > boundary.x_lo && boundary.z_hi > boundary.z_lo)) throw ConfigError("environment: empty boundary");
        if (!(v_max > 0.0) || !(target_v_max > 0.0)) throw ConfigError("environment: velocity limits must be positive");
        if (!(target.x_lo >= boundary.x_lo && target.x_hi <= boundary.x_hi && target.z_lo >= boundary.z_lo &&
              target.z_hi <= boundary.z_hi)) {
            throw ConfigError("environment: target must lie inside the boundary");
        }
        if (target_v_max > v_max) throw ConfigError("environment: target velocity box exceeds the boundary's");
        for (const auto& b : buildings) {
            if (!(b.x_hi > b.x_lo && b.z_hi > b.z_lo)) throw ConfigError("environment: degenerate building");
            if (b.overlaps(target)) throw ConfigError("environment: buildings and target must be disjoint");
        }
        if (canyons().empty()) throw ConfigError("environment: no canyon between buildings");
    }
};

/// min over building exteriors, boundary interior and velocity margin.
inline double constraint_g(const Environment& env, const Eigen::Vector4d& x) {
    double g = margin_inside(env.boundary, x[0], x[1]);
    for (const auto& b : env.buildings) g = std::min(g, signed_distance_outside(b, x[0], x[1]));
    g = std::min(g, env.v_max - std::abs(x[2]));
    g = std::min(g, env.v_max - std::abs(x[3]));
    return g;
}

/// Margin into the target box intersected with its velocity box.
inline double target_l(const Environment& env, const Eigen::Vector4d& x) {
    double l = margin_inside(env.target, x[0], x[1]);
    l = std::min(l, env.target_v_max - std::abs(x[2]));
    l = std::min(l, env.target_v_max - std::abs(x[3]));
    return l;
}

/// Reach-avoid problem for the planar quadrotor in an environment.
inline ReachAvoidProblem<PlanarQuadModel> make_problem(const Environment& env, const PlanarQuadModel& model,
                                                       const RectGrid& grid, double horizon, SolverSettings settings) {
    ReachAvoidProblem<PlanarQuadModel> pb{model, grid, nullptr, nullptr, FixedBound{Eigen::VectorXd::Zero(4)}, horizon,
                                          std::move(settings)};
    pb.constraint = [env](std::span<const double> x) { return constraint_g(env, Eigen::Vector4d(x[0], x[1], x[2], x[3])); };
    pb.target = [env](std::span<const double> x) { return target_l(env, Eigen::Vector4d(x[0], x[1], x[2], x[3])); };
    return pb;
}

/// Stabilising solution of A'P + PA - P B R^-1 B' P + Q = 0 from the stable
/// invariant subspace of the Hamiltonian matrix.
template <int N, int M>
Eigen::Matrix<double, N, N> solve_care(const Eigen::Matrix<double, N, N>& a, const Eigen::Matrix<double, N, M>& b,
                                       const Eigen::Matrix<double, N, N>& q, const Eigen::Matrix<double, M, M>& r) {
    Eigen::Matrix<double, 2 * N, 2 * N> h;
    h << a, -b * r.inverse() * b.transpose(), -q, -a.transpose();
    Eigen::EigenSolver<Eigen::Matrix<double, 2 * N, 2 * N>> es(h);
    if (es.info() != Eigen::Success) throw NumericalError("care: eigen decomposition failed");
    Eigen::Matrix<std::complex<double>, N, N> xs;
    Eigen::Matrix<std::complex<double>, N, N> ys;
    int k = 0;
    for (int i = 0; i < 2 * N; ++i) {
        if (es.eigenvalues()[i].real() < 0.0) {
            if (k == N) throw NumericalError("care: too many stable eigenvalues");
            xs.col(k) = es.eigenvectors().col(i).head(N);
            ys.col(k) = es.eigenvectors().col(i).tail(N);
            ++k;
        }
    }
    if (k != N) throw NumericalError("care: Hamiltonian has eigenvalues on the imaginary axis");
    Eigen::Matrix<double, N, N> p = (ys * xs.inverse()).real();
    p = 0.5 * (p + p.transpose()).eval();
    if (!p.allFinite()) throw NumericalError("care: non-finite solution");
    return p;
}

struct LqrWeights {
    Eigen::Vector4d q{1.0, 1.0, 0.5, 0.5};
    Eigen::Vector2d r{10.0, 0.1};
};

/// Infinite-horizon LQR on the linear part of the planar quadrotor.
class LqrController {
public:
    LqrController(const PlanarQuadModel& model, const LqrWeights& w) : model_(model) {
        if ((w.q.array() < 0.0).any() || (w.r.array() <= 0.0).any()) {
            throw ConfigError("lqr: Q must be non-negative and R positive");
        }
        Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
        a(0, 2) = 1.0;
        a(1, 3) = 1.0;
        const Eigen::Matrix<double, 4, 2> b = model.input_matrix(Eigen::Vector4d::Zero());
        const Eigen::Matrix4d p = solve_care<4, 2>(a, b, w.q.asDiagonal(), w.r.asDiagonal());
        gain_ = w.r.cwiseInverse().asDiagonal() * b.transpose() * p;
    }

    const Eigen::Matrix<double, 2, 4>& gain() const { return gain_; }

    /// clamp(u_hover - K (x - x_goal)) with x_goal = (goal, 0, 0).
    Eigen::Vector2d operator()(const Eigen::Vector4d& x, const Eigen::Vector2d& goal) const {
        const Eigen::Vector4d err = x - Eigen::Vector4d(goal[0], goal[1], 0.0, 0.0);
        return model_.control_box().clamp(model_.hover() - gain_ * err);
    }

private:
    PlanarQuadModel model_;
    Eigen::Matrix<double, 2, 4> gain_;
};

struct GoalSettings {
    std::size_t count = 10;
    double above_altitude = 2.0;
    double above_jitter = 0.25;   ///< fraction of canyon width
    double bottom_clearance = 0.3;
    double top_clearance = 0.3;
    double wall_clearance = 0.2;
};

/// above canyon, canyon bottom, canyon top, repeated; each cycle picks a canyon.
inline std::vector<Eigen::Vector2d> sample_goals(std::mt19937_64& rng, const Environment& env, const GoalSettings& gs) {
    const auto canyons = env.canyons();
    std::vector<Eigen::Vector2d> goals;
    goals.reserve(gs.count);
    const Canyon* c = nullptr;
    for (std::size_t i = 0; i < gs.count; ++i) {
        if (i % 3 == 0) {
            const auto pick = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(canyons.size())));
            c = &canyons[std::min(pick, canyons.size() - 1)];
        }
        const double centre = 0.5 * (c->x_lo + c->x_hi);
        const double half = 0.5 * (c->x_hi - c->x_lo);
        Eigen::Vector2d goal;
        switch (i % 3) {
            case 0:
                goal = {centre + uniform(rng, -1.0, 1.0) * gs.above_jitter * half, gs.above_altitude};
                break;
            case 1:
                goal = {centre + uniform(rng, -1.0, 1.0) * std::max(0.0, half - gs.wall_clearance),
                        c->floor + gs.bottom_clearance};
                break;
            default:
                goal = {centre + uniform(rng, -1.0, 1.0) * std::max(0.0, half - gs.wall_clearance),
                        c->rim - gs.top_clearance};
                break;
        }
        if (!(constraint_g(env, Eigen::Vector4d(goal[0], goal[1], 0.0, 0.0)) > 0.0)) {
            throw ConfigError("goal sampling produced an infeasible goal; check the goal clearances");
        }
        goals.push_back(goal);
    }
    return goals;
}

struct RolloutSettings {
    double dt = 0.025;
    std::size_t max_steps = 1000;
    std::size_t sample_every = 10;
    std::size_t goal_period = 100;
    Eigen::Vector4d start{-0.5, 2.0, 0.0, 0.0};
    DisturbanceEstimator::Settings estimator;
};

struct StepRecord {
    std::size_t step = 0;
    double t = 0.0;
    Eigen::Vector4d x;  ///< state after the step
    Eigen::Vector2d u_nom;
    Eigen::Vector2d u_star;
    Eigen::Vector4d d_true;  ///< wind at the pre-step state
    Eigen::Vector4d d_bar;
    Eigen::Vector4d rate_bar;
    double t_return = 0.0;
    double value = 0.0;
    std::size_t member = 0;
    QpStatus qp_status = QpStatus::NominalFeasible;
    Eigen::Vector2d goal;
    std::size_t goal_index = 0;
};

struct TrajectoryRecord {
    std::vector<StepRecord> steps;
    bool crashed = false;
    std::size_t crash_step = 0;
    WindField wind;
    std::vector<Eigen::Vector2d> goals;
    std::uint64_t seed = 0;

    std::size_t length() const { return steps.size(); }
};

/// Everything a rollout needs besides the per-trajectory randomness.
struct Scenario {
    Environment env;
    PlanarQuadModel model;
    WindField wind_base;
    WindRandomization wind_random;
    LqrWeights lqr;
    GoalSettings goals;
    RolloutSettings rollout;
    DisturbanceSpec d_spec;
    double t_max = 5.0;
};

/// Built-in cityscape with wind confined to its canyons, d_max 0.75 and
/// ddot_max 1.5 per dimension.
inline Scenario default_scenario() {
    Scenario sc;
    sc.d_spec = DisturbanceSpec(Eigen::VectorXd::Constant(4, 0.75), Eigen::VectorXd::Constant(4, 1.5));
    for (const auto& c : sc.env.canyons()) sc.wind_base.canyons.push_back({c.x_lo, c.x_hi});
    return sc;
}

/// Per-trajectory generator; identical for every mode given (seed, index).
inline std::mt19937_64 trajectory_rng(std::uint64_t seed, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
}

namespace detail {
inline Eigen::Vector4d closed_loop_rhs(const PlanarQuadModel& model, const WindField& wind, const Eigen::Vector4d& x,
                                       const Eigen::Vector2d& u) {
    return model.drift(x) + model.input_matrix(x) * u + wind.at(x);
}
}  // namespace detail

/// One RK4 step with zero-order-hold control and the wind evaluated at each stage.
inline Eigen::Vector4d rk4_step(const PlanarQuadModel& model, const WindField& wind, const Eigen::Vector4d& x,
                                const Eigen::Vector2d& u, double dt) {
    const Eigen::Vector4d k1 = detail::closed_loop_rhs(model, wind, x, u);
    const Eigen::Vector4d k2 = detail::closed_loop_rhs(model, wind, x + 0.5 * dt * k1, u);
    const Eigen::Vector4d k3 = detail::closed_loop_rhs(model, wind, x + 0.5 * dt * k2, u);
    const Eigen::Vector4d k4 = detail::closed_loop_rhs(model, wind, x + dt * k3, u);
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Closed loop under a filter (nullptr runs the raw LQR). Wind parameters and
/// goals come from trajectory_rng(seed, index).
inline TrajectoryRecord rollout(const Scenario& sc, const FilterConfig* filter, std::uint64_t seed, std::size_t index) {
    std::mt19937_64 rng = trajectory_rng(seed, index);
    TrajectoryRecord rec;
    rec.seed = seed;
    rec.wind = sample_field_params(rng, sc.wind_base, sc.wind_random);
    rec.goals = sample_goals(rng, sc.env, sc.goals);
    const LqrController lqr(sc.model, sc.lqr);
    DisturbanceEstimator est(sc.d_spec, sc.t_max, sc.rollout.estimator);
    est.prime();
    const auto& rs = sc.rollout;
    const auto& box = sc.model.control_box();
    Eigen::Vector4d x = rs.start;
    rec.steps.reserve(rs.max_steps);
    for (std::size_t k = 0; k < rs.max_steps; ++k) {
        const double t = static_cast<double>(k) * rs.dt;
        const Eigen::Vector4d d_true = rec.wind.at(x);
        if (k % rs.sample_every == 0) est.measure(d_true, t);
        const std::size_t gi = std::min(k / rs.goal_period, rec.goals.size() - 1);
        StepRecord s;
        s.step = k;
        s.t = t;
        s.goal = rec.goals[gi];
        s.goal_index = gi;
        s.d_true = d_true;
        s.u_nom = lqr(x, s.goal);
        auto e = est.current_estimate();
        s.rate_bar = e.rate_bar;
        if (filter && filter->mode != FilterMode::SpaceToTime) e.d_bar = est.max_recent_magnitude();
        s.d_bar = e.d_bar;
        if (filter) {
            const auto out = filter_step(*filter, sc.model, x, e, s.u_nom);
            s.u_star = out.u_star;
            s.t_return = out.t_return;
            s.value = out.value;
            s.member = out.member_index;
            s.qp_status = out.qp_status;
        } else {
            s.u_star = s.u_nom;
        }
        if (!box.contains(s.u_star, 1e-12)) throw NumericalError("rollout: filtered control left the control box");
        x = rk4_step(sc.model, rec.wind, x, s.u_star, rs.dt);
        if (!x.allFinite()) {
            std::ostringstream msg;
            msg << "rollout: non-finite state at step " << k << " (trajectory " << index << ", seed " << seed << ")";
            throw NumericalError(msg.str());
        }
        s.x = x;
        rec.steps.push_back(s);
        if (constraint_g(sc.env, x) <= 0.0) {
            rec.crashed = true;
            rec.crash_step = k;
            break;
        }
    }
    return rec;
}

struct BenchmarkMetrics {
    double pct_violations = 0.0;  ///< fraction in [0, 1]
    double mean_goal_distance = 0.0;
    double mean_traj_length = 0.0;
    std::size_t n_traj = 0;
};

/// Mean over the goals a trajectory reached (i.e. that became active) of the
/// closest position distance achieved while the goal was active.
inline double mean_min_goal_distance(const TrajectoryRecord& rec) {
    std::vector<double> best;
    for (const auto& s : rec.steps) {
        if (s.goal_index >= best.size()) best.resize(s.goal_index + 1, std::numeric_limits<double>::infinity());
        const double d = std::hypot(s.x[0] - s.goal[0], s.x[1] - s.goal[1]);
        best[s.goal_index] = std::min(best[s.goal_index], d);
    }
    if (best.empty()) return 0.0;
    double sum = 0.0;
    for (double b : best) sum += b;
    return sum / static_cast<double>(best.size());
}

inline BenchmarkMetrics aggregate(const std::vector<TrajectoryRecord>& records) {
    BenchmarkMetrics m;
    m.n_traj = records.size();
    if (records.empty()) return m;
    double crashed = 0.0;
    double dist = 0.0;
    double length = 0.0;
    for (const auto& r : records) {
        crashed += r.crashed ? 1.0 : 0.0;
        dist += mean_min_goal_distance(r);
        length += static_cast<double>(r.length());
    }
    const auto n = static_cast<double>(records.size());
    m.pct_violations = crashed / n;
    m.mean_goal_distance = dist / n;
    m.mean_traj_length = length / n;
    return m;
}

struct ModeResult {
    FilterMode mode;
    BenchmarkMetrics metrics;
    std::vector<TrajectoryRecord> records;
};

/// n_traj paired rollouts per mode; trajectory i shares wind and goals across modes.
inline std::vector<ModeResult> run_benchmark(const Scenario& sc, const std::vector<FilterConfig>& filters,
                                             std::size_t n_traj, std::uint64_t seed, std::size_t jobs = 1) {
    if (n_traj == 0) throw ConfigError("benchmark: n_traj must be at least 1");
    std::vector<ModeResult> out;
    for (const auto& cfg : filters) {
        cfg.validate();
        ModeResult res{cfg.mode, {}, std::vector<TrajectoryRecord>(n_traj)};
        parallel_for(n_traj, jobs, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) res.records[i] = rollout(sc, &cfg, seed, i);
        });
        res.metrics = aggregate(res.records);
        out.push_back(std::move(res));
    }
    return out;
}

/// One CSV row per step, full round-trip precision. A leading '#' line
/// records the config hash and seed when a hash is given.
inline void write_trace_csv(const std::filesystem::path& path, const TrajectoryRecord& rec,
                            const std::string& config_hash = {}) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write trace " + path.string());
    if (!config_hash.empty()) os << "# config_hash=" << config_hash << " seed=" << rec.seed << '\n';
    os << "step,t,p_x,p_z,v_x,v_z,u_nom_1,u_nom_2,u_star_1,u_star_2,d_true_1,d_true_2,d_true_3,d_true_4,"
          "d_bar_1,d_bar_2,d_bar_3,d_bar_4,rate_bar_1,rate_bar_2,rate_bar_3,rate_bar_4,t_return,value,member,"
          "qp_status,goal_x,goal_z\n";
    os << std::setprecision(17);
    auto put = [&](const auto& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << v[i];
    };
    for (const auto& s : rec.steps) {
        os << s.step << ',' << s.t;
        put(s.x);
        put(s.u_nom);
        put(s.u_star);
        put(s.d_true);
        put(s.d_bar);
        put(s.rate_bar);
        os << ',' << s.t_return << ',' << s.value << ',' << s.member << ',' << to_string(s.qp_status) << ','
           << s.goal[0] << ',' << s.goal[1] << '\n';
    }
    if (!os) throw Error("error while writing trace " + path.string());
}

}  // namespace s2t
