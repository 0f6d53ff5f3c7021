#pragma once

// Control- and disturbance-affine dynamics  xdot = f(x) + G(x) u + d  with a
// box control set and 0-centred box disturbances, plus the closed-form
// max-min Hamiltonian these admit.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>

#include "s2t/error.hpp"

namespace s2t {

template <int M>
struct ControlBox {
    using Control = Eigen::Matrix<double, M, 1>;
    Control lo = Control::Zero();
    Control hi = Control::Zero();

    ControlBox() = default;
    ControlBox(Control lo_, Control hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
        for (int j = 0; j < M; ++j) {
            if (!(lo[j] <= hi[j])) throw ConfigError("control box: lo must not exceed hi");
        }
    }

    Control midpoint() const { return 0.5 * (lo + hi); }
    Control width() const { return hi - lo; }
    Control clamp(const Control& u) const { return u.cwiseMax(lo).cwiseMin(hi); }
    bool contains(const Control& u, double tol = 1e-12) const {
        for (int j = 0; j < M; ++j) {
            if (u[j] < lo[j] - tol || u[j] > hi[j] + tol) return false;
        }
        return true;
    }
};

template <class T>
concept ControlAffineModel = requires(const T& m, const typename T::State& x) {
    { T::kStateDim } -> std::convertible_to<int>;
    { T::kControlDim } -> std::convertible_to<int>;
    { m.drift(x) } -> std::convertible_to<typename T::State>;
    { m.input_matrix(x) } -> std::convertible_to<typename T::InputMatrix>;
    { m.control_box() } -> std::convertible_to<const ControlBox<T::kControlDim>&>;
};

/// Planar quadrotor: state (p_x, p_z, v_x, v_z), input (tilt proxy u1, thrust u2).
///   p_x' = v_x + d1,  p_z' = v_z + d2,  v_x' = g u1 + d3,  v_z' = u2 - g + d4
class PlanarQuadModel {
public:
    static constexpr int kStateDim = 4;
    static constexpr int kControlDim = 2;
    static constexpr double kGravity = 9.81;
    using State = Eigen::Vector4d;
    using Control = Eigen::Vector2d;
    using InputMatrix = Eigen::Matrix<double, 4, 2>;

    PlanarQuadModel() : PlanarQuadModel(default_box()) {}
    explicit PlanarQuadModel(ControlBox<2> box) : box_(std::move(box)) {}

    static ControlBox<2> default_box() {
        return {Control(-0.25, kGravity - 4.0), Control(0.25, kGravity + 4.0)};
    }

    State drift(const State& x) const { return {x[2], x[3], 0.0, -kGravity}; }

    InputMatrix input_matrix(const State&) const {
        InputMatrix g = InputMatrix::Zero();
        g(2, 0) = kGravity;
        g(3, 1) = 1.0;
        return g;
    }

    const ControlBox<2>& control_box() const { return box_; }
    Control hover() const { return {0.0, kGravity}; }

private:
    ControlBox<2> box_;
};

/// xdot = A x + B u with a box on u. Used for toy problems and oracles.
template <int N, int M>
class LinearModel {
public:
    static constexpr int kStateDim = N;
    static constexpr int kControlDim = M;
    using State = Eigen::Matrix<double, N, 1>;
    using Control = Eigen::Matrix<double, M, 1>;
    using InputMatrix = Eigen::Matrix<double, N, M>;

    LinearModel(Eigen::Matrix<double, N, N> a, InputMatrix b, ControlBox<M> box)
        : a_(std::move(a)), b_(std::move(b)), box_(std::move(box)) {}

    State drift(const State& x) const { return a_ * x; }
    InputMatrix input_matrix(const State&) const { return b_; }
    const ControlBox<M>& control_box() const { return box_; }

private:
    Eigen::Matrix<double, N, N> a_;
    InputMatrix b_;
    ControlBox<M> box_;
};

/// x1' = x2, x2' = u, |u| <= u_max.
inline LinearModel<2, 1> double_integrator(double u_max = 1.0) {
    Eigen::Matrix2d a;
    a << 0.0, 1.0, 0.0, 0.0;
    return {a, Eigen::Vector2d(0.0, 1.0), ControlBox<1>(Eigen::Matrix<double, 1, 1>(-u_max), Eigen::Matrix<double, 1, 1>(u_max))};
}

template <ControlAffineModel Model>
using StateOf = typename Model::State;
template <ControlAffineModel Model>
using ControlOf = typename Model::Control;

namespace detail {
template <class V>
void require_finite(const V& v, const char* what) {
    if (!v.allFinite()) throw NumericalError(std::string(what) + ": non-finite input");
}
}  // namespace detail

/// Full dynamics f(x) + G(x) u + d. Rejects controls outside the box.
template <ControlAffineModel Model>
StateOf<Model> flow(const Model& model, const StateOf<Model>& x, const ControlOf<Model>& u, const StateOf<Model>& d) {
    if (!model.control_box().contains(u, 1e-9)) throw Error("flow: control outside the admissible box");
    detail::require_finite(x, "flow");
    detail::require_finite(d, "flow");
    return model.drift(x) + model.input_matrix(x) * u + d;
}

/// d_i = -sign(lambda_i) * bound_i, zero where lambda_i == 0.
template <int N>
Eigen::Matrix<double, N, 1> worst_case_disturbance(const Eigen::Matrix<double, N, 1>& lambda,
                                                   const Eigen::Matrix<double, N, 1>& bound) {
    Eigen::Matrix<double, N, 1> d;
    for (int i = 0; i < N; ++i) {
        d[i] = lambda[i] > 0.0 ? -bound[i] : (lambda[i] < 0.0 ? bound[i] : 0.0);
    }
    return d;
}

/// argmax_u min_d lambda^T f: box vertex picked by the sign of (G^T lambda)_j,
/// box midpoint on exact ties.
template <ControlAffineModel Model>
ControlOf<Model> optimal_control(const Model& model, const StateOf<Model>& lambda, const StateOf<Model>& x) {
    detail::require_finite(lambda, "optimal_control");
    const ControlOf<Model> c = model.input_matrix(x).transpose() * lambda;
    const auto& box = model.control_box();
    ControlOf<Model> u;
    for (int j = 0; j < Model::kControlDim; ++j) {
        u[j] = c[j] > 0.0 ? box.hi[j] : (c[j] < 0.0 ? box.lo[j] : 0.5 * (box.lo[j] + box.hi[j]));
    }
    return u;
}

/// H(lambda, x) = max_u min_d lambda^T (f + G u + d) over the control box and
/// the 0-centred disturbance box of half-widths `bound`.
template <ControlAffineModel Model>
double hamiltonian(const Model& model, const StateOf<Model>& lambda, const StateOf<Model>& x,
                   const StateOf<Model>& bound) {
    detail::require_finite(lambda, "hamiltonian");
    detail::require_finite(x, "hamiltonian");
    detail::require_finite(bound, "hamiltonian");
    if ((bound.array() < 0.0).any()) throw Error("hamiltonian: disturbance bound must be non-negative");
    const ControlOf<Model> c = model.input_matrix(x).transpose() * lambda;
    const auto& box = model.control_box();
    double h = lambda.dot(model.drift(x));
    for (int j = 0; j < Model::kControlDim; ++j) h += std::max(c[j] * box.lo[j], c[j] * box.hi[j]);
    h -= lambda.cwiseAbs().dot(bound);
    return h;
}

/// Magnitude bounds and rate bounds of the disturbance, per state dimension.
struct DisturbanceSpec {
    Eigen::VectorXd d_max;
    Eigen::VectorXd ddot_max;

    DisturbanceSpec() = default;
    DisturbanceSpec(Eigen::VectorXd d_max_, Eigen::VectorXd ddot_max_)
        : d_max(std::move(d_max_)), ddot_max(std::move(ddot_max_)) {
        if (d_max.size() != ddot_max.size()) throw ConfigError("disturbance spec: size mismatch");
        if (!d_max.allFinite() || !ddot_max.allFinite() || (d_max.array() < 0.0).any() ||
            (ddot_max.array() < 0.0).any()) {
            throw ConfigError("disturbance spec: bounds must be finite and non-negative");
        }
    }

    /// ddot_max = L_d * M_f componentwise.
    static DisturbanceSpec from_lipschitz(Eigen::VectorXd d_max, double lipschitz, double flow_bound) {
        if (lipschitz < 0.0 || flow_bound < 0.0) throw ConfigError("disturbance spec: negative Lipschitz data");
        Eigen::VectorXd rate = Eigen::VectorXd::Constant(d_max.size(), lipschitz * flow_bound);
        return {std::move(d_max), std::move(rate)};
    }

    Eigen::Index size() const { return d_max.size(); }
};

/// Box whose half-width shrinks with time-to-go: max(0, d_max - tau * ddot).
struct TimeVaryingDisturbanceSet {
    Eigen::VectorXd ddot;
    Eigen::VectorXd d_max;

    Eigen::VectorXd bound(double tau) const {
        if (tau < 0.0) throw Error("time-varying disturbance set: negative time-to-go");
        return (d_max - tau * ddot).cwiseMax(0.0);
    }
};

/// Base dynamics with the disturbance rate appended as a constant state.
template <ControlAffineModel Base>
struct AugmentedModel {
    static constexpr int kStateDim = 2 * Base::kStateDim;
    using State = Eigen::Matrix<double, kStateDim, 1>;

    Base base;
    StateOf<Base> ddot;

    State augmented_state(const StateOf<Base>& x) const {
        State z;
        z << x, ddot;
        return z;
    }

    /// z' = [f(x) + G(x) u + eta, 0].
    State flow(const State& z, const ControlOf<Base>& u, const StateOf<Base>& eta) const {
        State out = State::Zero();
        out.template head<Base::kStateDim>() = s2t::flow(base, z.template head<Base::kStateDim>(), u, eta);
        return out;
    }
};

/// Upper bound M_f on |f(x) + G(x) u + d| over a state box, the control box
/// and the disturbance box, by vertex enumeration (exact for jointly affine
/// dynamics such as PlanarQuadModel).
template <ControlAffineModel Model>
double flow_bound(const Model& model, const StateOf<Model>& x_lo, const StateOf<Model>& x_hi,
                  const StateOf<Model>& d_max) {
    constexpr int N = Model::kStateDim;
    constexpr int M = Model::kControlDim;
    const auto& box = model.control_box();
    double best = 0.0;
    const long n_vertices = 1L << (2 * N + M);
    for (long v = 0; v < n_vertices; ++v) {
        StateOf<Model> x;
        StateOf<Model> d;
        ControlOf<Model> u;
        for (int i = 0; i < N; ++i) x[i] = (v >> i) & 1 ? x_hi[i] : x_lo[i];
        for (int j = 0; j < M; ++j) u[j] = (v >> (N + j)) & 1 ? box.hi[j] : box.lo[j];
        for (int i = 0; i < N; ++i) d[i] = (v >> (N + M + i)) & 1 ? d_max[i] : -d_max[i];
        best = std::max(best, (model.drift(x) + model.input_matrix(x) * u + d).norm());
    }
    return best;
}

}  // namespace s2t
