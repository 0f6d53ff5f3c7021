#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of them call into the code they check beyond the
// model's f and G.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>
#include <vector>

#include "s2t/dynamics.hpp"

namespace oracle {

/// max over an n-point-per-axis control lattice of min over an n-point-per-axis
/// disturbance lattice of lambda^T (f + G u + d).
template <class Model>
double brute_hamiltonian(const Model& model, const typename Model::State& lambda, const typename Model::State& x,
                         const typename Model::State& bound, int n = 21) {
    constexpr int N = Model::kStateDim;
    constexpr int M = Model::kControlDim;
    auto lattice = [n](double lo, double hi, int k) { return lo + (hi - lo) * k / (n - 1); };
    double dmin = std::numeric_limits<double>::infinity();
    std::vector<int> idx(N, 0);
    while (true) {
        double s = 0.0;
        for (int i = 0; i < N; ++i) s += lambda[i] * lattice(-bound[i], bound[i], idx[i]);
        dmin = std::min(dmin, s);
        int i = 0;
        while (i < N && ++idx[i] == n) idx[i++] = 0;
        if (i == N) break;
    }
    const auto f = model.drift(x);
    const auto g = model.input_matrix(x);
    const auto& box = model.control_box();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> ui(M, 0);
    while (true) {
        typename Model::Control u;
        for (int j = 0; j < M; ++j) u[j] = lattice(box.lo[j], box.hi[j], ui[j]);
        best = std::max(best, lambda.dot(f + g * u) + dmin);
        int j = 0;
        while (j < M && ++ui[j] == n) ui[j++] = 0;
        if (j == M) break;
    }
    return best;
}

/// Dense-sampling solution of min |u - u_nom|^2 over a 2D box with a^T u >= b.
struct DenseQp {
    bool feasible = false;
    double objective = std::numeric_limits<double>::infinity();
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    double cell_gap = 0.0;  ///< largest objective change across one sample cell
};

inline DenseQp dense_qp(const Eigen::Vector2d& u_nom, const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
                        const Eigen::Vector2d& a, double b, int n = 201) {
    DenseQp out;
    const Eigen::Vector2d h = (hi - lo) / (n - 1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const Eigen::Vector2d u(lo[0] + h[0] * i, lo[1] + h[1] * j);
            if (a.dot(u) < b) continue;
            const double obj = (u - u_nom).squaredNorm();
            if (obj < out.objective) {
                out.objective = obj;
                out.u = u;
                out.feasible = true;
            }
        }
    }
    // |grad obj| <= 2 * diam(box + u_nom) per unit step; bound the change over one cell.
    const double reach = (hi - lo).norm() + (u_nom - 0.5 * (lo + hi)).norm();
    out.cell_gap = 2.0 * reach * h.norm() + h.squaredNorm();
    return out;
}

/// Exhaustive discrete-time reach-avoid game on x1' = x2, x2' = u (d = 0):
/// can some sequence of `steps` zero-order-hold controls from an n-point lattice
/// on [-u_max, u_max] reach the target box while never touching |x1| >= fail?
/// States are merged on an exact lattice, so the search is a breadth-first
/// sweep over distinct reachable states.
struct DoubleIntegratorGame {
    double u_max = 1.0;
    int n_controls = 11;
    int steps = 20;
    double dt = 0.1;
    double target = 0.2;
    double fail = 1.0;

    bool in_target(double x1, double x2) const { return std::abs(x1) <= target + 1e-12 && std::abs(x2) <= target + 1e-12; }

    bool wins(double x1, double x2) const {
        if (std::abs(x1) >= fail) return false;
        if (in_target(x1, x2)) return true;
        // Exact lattice keys: x2 moves by multiples of du*dt, x1 by dt*x2 + dt^2 u/2.
        const double du = 2.0 * u_max / (n_controls - 1);
        const double q2 = du * dt;
        const double q1 = 0.5 * du * dt * dt;
        struct Key {
            long long a, b;
            bool operator==(const Key& o) const { return a == o.a && b == o.b; }
        };
        struct Hash {
            std::size_t operator()(const Key& k) const { return std::hash<long long>()(k.a * 1000003LL ^ k.b); }
        };
        // Offsets relative to the start state keep keys integral.
        std::vector<std::pair<long long, long long>> frontier{{0, 0}};
        for (int s = 0; s < steps; ++s) {
            std::unordered_map<Key, bool, Hash> next;
            std::vector<std::pair<long long, long long>> out;
            for (const auto& [k1, k2] : frontier) {
                for (int c = 0; c < n_controls; ++c) {
                    const long long m = c - (n_controls - 1) / 2;  // u = m * du
                    // x1 += dt*v + dt^2 u / 2  ->  in q1 units: 2*k2*step + m, where k2*q2*dt = 2*k2*q1
                    const long long n1 = k1 + 2 * k2 + m;
                    const long long n2 = k2 + m;
                    const double y1 = x1 + dt * x2 * (s + 1) + n1 * q1;
                    const double y2 = x2 + n2 * q2;
                    if (std::abs(y1) >= fail) continue;
                    if (in_target(y1, y2)) return true;
                    const Key key{n1, n2};
                    if (next.emplace(key, true).second) out.emplace_back(n1, n2);
                }
            }
            frontier.swap(out);
            if (frontier.empty()) return false;
        }
        return false;
    }
};

}  // namespace oracle
