#pragma once

// Rectangular state grids and sampled value tubes V(x, tau).
//
// Tubes are stored in time-to-go tau >= 0 (t = -tau). Queries outside the
// state box are clamped to the boundary; callers that care can check
// RectGrid::contains() first.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s2t/error.hpp"

namespace s2t {

inline constexpr std::size_t kMaxGridDims = 8;

class RectGrid {
public:
    RectGrid() = default;

    RectGrid(std::vector<double> lo, std::vector<double> hi, std::vector<std::size_t> counts)
        : lo_(std::move(lo)), hi_(std::move(hi)), counts_(std::move(counts)) {
        if (lo_.empty() || lo_.size() != hi_.size() || lo_.size() != counts_.size()) {
            throw ConfigError("grid: lo/hi/counts must be non-empty and of equal length");
        }
        if (lo_.size() > kMaxGridDims) {
            throw ConfigError("grid: at most " + std::to_string(kMaxGridDims) + " dimensions supported");
        }
        const std::size_t n = lo_.size();
        spacing_.resize(n);
        strides_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(lo_[i]) || !std::isfinite(hi_[i]) || !(lo_[i] < hi_[i])) {
                throw ConfigError("grid: dimension " + std::to_string(i) + " needs finite lo < hi");
            }
            if (counts_[i] < 2) {
                throw ConfigError("grid: dimension " + std::to_string(i) + " needs at least 2 points");
            }
            spacing_[i] = (hi_[i] - lo_[i]) / static_cast<double>(counts_[i] - 1);
        }
        std::size_t stride = 1;
        for (std::size_t i = n; i-- > 0;) {
            strides_[i] = stride;
            stride *= counts_[i];
        }
        size_ = stride;
    }

    std::size_t ndim() const { return lo_.size(); }
    std::size_t size() const { return size_; }

    const std::vector<double>& lo() const { return lo_; }
    const std::vector<double>& hi() const { return hi_; }
    const std::vector<std::size_t>& counts() const { return counts_; }
    const std::vector<double>& spacing() const { return spacing_; }
    const std::vector<std::size_t>& strides() const { return strides_; }

    double lo(std::size_t d) const { return lo_[d]; }
    double hi(std::size_t d) const { return hi_[d]; }
    std::size_t count(std::size_t d) const { return counts_[d]; }
    double spacing(std::size_t d) const { return spacing_[d]; }
    std::size_t stride(std::size_t d) const { return strides_[d]; }

    double coordinate(std::size_t d, std::size_t i) const {
        // Pin the last node to hi exactly.
        if (i + 1 == counts_[d]) return hi_[d];
        return lo_[d] + static_cast<double>(i) * spacing_[d];
    }

    /// Coordinates of the node with the given flat (row-major) index.
    void point(std::size_t flat, std::span<double> out) const {
        for (std::size_t d = 0; d < ndim(); ++d) {
            const std::size_t i = (flat / strides_[d]) % counts_[d];
            out[d] = coordinate(d, i);
        }
    }

    std::vector<double> point(std::size_t flat) const {
        std::vector<double> x(ndim());
        point(flat, x);
        return x;
    }

    std::size_t flat_index(std::span<const std::size_t> idx) const {
        std::size_t flat = 0;
        for (std::size_t d = 0; d < ndim(); ++d) flat += idx[d] * strides_[d];
        return flat;
    }

    bool contains(std::span<const double> x) const {
        for (std::size_t d = 0; d < ndim(); ++d) {
            if (x[d] < lo_[d] || x[d] > hi_[d]) return false;
        }
        return true;
    }

    bool operator==(const RectGrid& o) const {
        return lo_ == o.lo_ && hi_ == o.hi_ && counts_ == o.counts_;
    }

private:
    std::vector<double> lo_;
    std::vector<double> hi_;
    std::vector<std::size_t> counts_;
    std::vector<double> spacing_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

/// How the ensemble member behind a tube was parameterized.
enum class Parameterization { None, FixedRate, FixedBound };

inline const char* to_string(Parameterization p) {
    switch (p) {
        case Parameterization::FixedRate: return "rate";
        case Parameterization::FixedBound: return "bound";
        case Parameterization::None: break;
    }
    return "none";
}

inline Parameterization parameterization_from_string(const std::string& s) {
    if (s == "rate") return Parameterization::FixedRate;
    if (s == "bound") return Parameterization::FixedBound;
    if (s == "none") return Parameterization::None;
    throw ConfigError("unknown parameterization tag '" + s + "'");
}

struct TubeMeta {
    Parameterization kind = Parameterization::None;
    /// Member multiplier: fraction of ddot_max (rate) or of d_max (bound).
    double multiplier = 0.0;
    std::vector<double> d_max;
    std::vector<double> ddot_max;
    std::string problem = "reach_avoid";

    bool operator==(const TubeMeta&) const = default;
};

/// V(x, tau) sampled on a state grid at increasing time-to-go samples.
/// Immutable once constructed; concurrent const queries are safe.
class ValueTube {
public:
    ValueTube() = default;

    ValueTube(RectGrid grid, std::vector<double> taus, std::vector<double> values, TubeMeta meta = {})
        : grid_(std::move(grid)), taus_(std::move(taus)), values_(std::move(values)), meta_(std::move(meta)) {
        if (taus_.empty() || taus_.front() != 0.0) {
            throw ConfigError("tube: taus must start at 0");
        }
        for (std::size_t k = 1; k < taus_.size(); ++k) {
            if (!(taus_[k] > taus_[k - 1])) throw ConfigError("tube: taus must be strictly increasing");
        }
        if (values_.size() != taus_.size() * grid_.size()) {
            throw ConfigError("tube: value array does not match taus x grid shape");
        }
        for (double v : values_) {
            if (!std::isfinite(v)) throw NumericalError("tube: non-finite value sample");
        }
    }

    const RectGrid& grid() const { return grid_; }
    const std::vector<double>& taus() const { return taus_; }
    const std::vector<double>& values() const { return values_; }
    const TubeMeta& meta() const { return meta_; }
    double max_tau() const { return taus_.back(); }
    std::size_t slice_count() const { return taus_.size(); }

    std::span<const double> slice(std::size_t k) const {
        return {values_.data() + k * grid_.size(), grid_.size()};
    }

    double at(std::size_t k, std::size_t flat) const { return values_[k * grid_.size() + flat]; }

    /// Same samples, different metadata; consumes this tube.
    ValueTube with_meta(TubeMeta meta) && {
        ValueTube out;
        out.grid_ = std::move(grid_);
        out.taus_ = std::move(taus_);
        out.values_ = std::move(values_);
        out.meta_ = std::move(meta);
        return out;
    }

private:
    RectGrid grid_;
    std::vector<double> taus_;
    std::vector<double> values_;
    TubeMeta meta_;
};

namespace detail {

// Enclosing cell and per-dimension weights of a (clamped) query point.
struct CellLocation {
    std::size_t base = 0;
    std::size_t ndim = 0;
    std::array<double, kMaxGridDims> weight{};
    std::array<std::size_t, kMaxGridDims> stride{};
};

inline void check_finite(std::span<const double> x, double tau) {
    for (double v : x) {
        if (!std::isfinite(v)) throw NumericalError("tube query: non-finite state component");
    }
    if (!std::isfinite(tau)) throw NumericalError("tube query: non-finite tau");
}

inline CellLocation locate(const RectGrid& grid, std::span<const double> x) {
    if (x.size() != grid.ndim()) throw ConfigError("tube query: state dimension mismatch");
    CellLocation loc;
    loc.ndim = grid.ndim();
    for (std::size_t d = 0; d < loc.ndim; ++d) {
        const double xc = std::clamp(x[d], grid.lo(d), grid.hi(d));
        const double s = (xc - grid.lo(d)) / grid.spacing(d);
        const auto last_cell = static_cast<double>(grid.count(d) - 2);
        double cell = std::floor(s);
        cell = std::clamp(cell, 0.0, last_cell);
        loc.weight[d] = std::clamp(s - cell, 0.0, 1.0);
        loc.base += static_cast<std::size_t>(cell) * grid.stride(d);
        loc.stride[d] = grid.stride(d);
    }
    return loc;
}

inline double interpolate_slice(std::span<const double> slice, const CellLocation& loc) {
    const std::size_t corners = std::size_t{1} << loc.ndim;
    double acc = 0.0;
    for (std::size_t c = 0; c < corners; ++c) {
        double w = 1.0;
        std::size_t offset = loc.base;
        for (std::size_t d = 0; d < loc.ndim; ++d) {
            if (c & (std::size_t{1} << d)) {
                w *= loc.weight[d];
                offset += loc.stride[d];
            } else {
                w *= 1.0 - loc.weight[d];
            }
        }
        if (w != 0.0) acc += w * slice[offset];
    }
    return acc;
}

// Segment [k, k+1] of taus holding tau and the linear weight of k+1.
inline std::pair<std::size_t, double> locate_tau(const std::vector<double>& taus, double tau) {
    if (tau < 0.0) throw NumericalError("tube query: negative time-to-go");
    const double tmax = taus.back();
    if (tau > tmax * (1.0 + 1e-12) + 1e-15) {
        throw NumericalError("horizon exceeded: tau " + std::to_string(tau) + " > " + std::to_string(tmax));
    }
    if (taus.size() == 1) return {0, 0.0};
    tau = std::min(tau, tmax);
    auto it = std::upper_bound(taus.begin(), taus.end(), tau);
    std::size_t k = (it == taus.begin()) ? 0 : static_cast<std::size_t>(it - taus.begin()) - 1;
    k = std::min(k, taus.size() - 2);
    const double w = (tau - taus[k]) / (taus[k + 1] - taus[k]);
    return {k, std::clamp(w, 0.0, 1.0)};
}

inline double interpolate_at(const ValueTube& tube, const CellLocation& loc, double tau) {
    const auto [k, w] = locate_tau(tube.taus(), tau);
    const double v0 = interpolate_slice(tube.slice(k), loc);
    if (tube.slice_count() == 1 || w == 0.0) return v0;
    const double v1 = interpolate_slice(tube.slice(k + 1), loc);
    return (1.0 - w) * v0 + w * v1;
}

}  // namespace detail

/// Multilinear in state, linear in tau. Exact at grid nodes.
inline double interpolate(const ValueTube& tube, std::span<const double> x, double tau) {
    detail::check_finite(x, tau);
    return detail::interpolate_at(tube, detail::locate(tube.grid(), x), tau);
}

/// Spatial gradient: central differences of the interpolated field with step
/// equal to the grid spacing; one-sided where the stencil leaves the box.
inline std::vector<double> gradient(const ValueTube& tube, std::span<const double> x, double tau) {
    detail::check_finite(x, tau);
    const RectGrid& grid = tube.grid();
    if (x.size() != grid.ndim()) throw ConfigError("tube query: state dimension mismatch");
    std::array<double, kMaxGridDims> xc{};
    for (std::size_t d = 0; d < grid.ndim(); ++d) xc[d] = std::clamp(x[d], grid.lo(d), grid.hi(d));
    const std::span<double> xs(xc.data(), grid.ndim());

    std::vector<double> grad(grid.ndim());
    for (std::size_t d = 0; d < grid.ndim(); ++d) {
        const double h = grid.spacing(d);
        const double slack = 1e-12 * h;
        const double centre = xc[d];
        const bool has_plus = centre + h <= grid.hi(d) + slack;
        const bool has_minus = centre - h >= grid.lo(d) - slack;
        double up = 0.0;
        double down = 0.0;
        double width = 0.0;
        if (has_plus) {
            xc[d] = std::min(centre + h, grid.hi(d));
            up = detail::interpolate_at(tube, detail::locate(grid, xs), tau);
            width += xc[d] - centre;
        } else {
            up = detail::interpolate_at(tube, detail::locate(grid, xs), tau);
        }
        if (has_minus) {
            xc[d] = std::max(centre - h, grid.lo(d));
            down = detail::interpolate_at(tube, detail::locate(grid, xs), tau);
            width += centre - xc[d];
        } else {
            xc[d] = centre;
            down = detail::interpolate_at(tube, detail::locate(grid, xs), tau);
        }
        xc[d] = centre;
        grad[d] = width > 0.0 ? (up - down) / width : 0.0;
    }
    return grad;
}

/// dV/dt with t = -tau. Nodal rates are central differences across adjacent
/// tau samples (one-sided at the ends), interpolated linearly in tau.
inline double time_derivative(const ValueTube& tube, std::span<const double> x, double tau) {
    detail::check_finite(x, tau);
    const auto loc = detail::locate(tube.grid(), x);
    const auto& taus = tube.taus();
    const std::size_t n = taus.size();
    if (n < 2) {
        (void)detail::locate_tau(taus, tau);
        return 0.0;
    }
    const auto [k, w] = detail::locate_tau(taus, tau);

    const std::size_t first = k == 0 ? 0 : k - 1;
    const std::size_t last = std::min(k + 2, n - 1);
    std::array<double, 4> v{};
    for (std::size_t j = first; j <= last; ++j) v[j - first] = detail::interpolate_slice(tube.slice(j), loc);
    auto value = [&](std::size_t j) { return v[j - first]; };
    auto nodal_rate = [&](std::size_t j) {
        const std::size_t lo = j == 0 ? 0 : j - 1;
        const std::size_t hi = j + 1 == n ? j : j + 1;
        return (value(hi) - value(lo)) / (taus[hi] - taus[lo]);
    };
    const double dv_dtau = (1.0 - w) * nodal_rate(k) + w * nodal_rate(k + 1);
    return -dv_dtau;
}

/// Everything the safety filter needs from one tube lookup.
struct TubeSample {
    double value = 0.0;
    double dvdt = 0.0;
    std::vector<double> grad;
    bool clamped = false;
};

inline TubeSample sample(const ValueTube& tube, std::span<const double> x, double tau) {
    TubeSample s;
    s.clamped = !tube.grid().contains(x);
    s.value = interpolate(tube, x, tau);
    s.grad = gradient(tube, x, tau);
    s.dvdt = time_derivative(tube, x, tau);
    return s;
}

/// Values on the plane spanned by two grid axes at their grid nodes, with the
/// remaining coordinates taken from `at` and tau interpolated.
struct Slice2D {
    std::size_t axis_a = 0;
    std::size_t axis_b = 1;
    std::vector<double> coords_a;
    std::vector<double> coords_b;
    std::vector<double> values;  ///< row-major, axis_a rows by axis_b columns

    double operator()(std::size_t i, std::size_t j) const { return values[i * coords_b.size() + j]; }
};

inline Slice2D extract_slice(const ValueTube& tube, std::size_t axis_a, std::size_t axis_b,
                             std::span<const double> at, double tau) {
    const RectGrid& grid = tube.grid();
    if (axis_a >= grid.ndim() || axis_b >= grid.ndim() || axis_a == axis_b) {
        throw ConfigError("slice: axes must be two distinct grid dimensions");
    }
    if (at.size() != grid.ndim()) throw ConfigError("slice: fixed point has the wrong dimension");
    if (!(tau >= 0.0 && tau <= tube.max_tau())) throw ConfigError("slice: tau outside [0, horizon]");
    std::vector<double> x(at.begin(), at.end());
    for (std::size_t d = 0; d < grid.ndim(); ++d) {
        if (d == axis_a || d == axis_b) continue;
        if (!(x[d] >= grid.lo(d) && x[d] <= grid.hi(d))) {
            throw ConfigError("slice: fixed coordinate " + std::to_string(d) + " lies outside the grid");
        }
    }
    Slice2D s;
    s.axis_a = axis_a;
    s.axis_b = axis_b;
    for (std::size_t i = 0; i < grid.count(axis_a); ++i) s.coords_a.push_back(grid.coordinate(axis_a, i));
    for (std::size_t j = 0; j < grid.count(axis_b); ++j) s.coords_b.push_back(grid.coordinate(axis_b, j));
    s.values.reserve(s.coords_a.size() * s.coords_b.size());
    for (double a : s.coords_a) {
        x[axis_a] = a;
        for (double b : s.coords_b) {
            x[axis_b] = b;
            s.values.push_back(interpolate(tube, x, tau));
        }
    }
    return s;
}

}  // namespace s2t
