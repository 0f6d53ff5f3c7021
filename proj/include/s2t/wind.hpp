#pragma once

// Urban-canyon wind field and the sampled disturbance estimator.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "s2t/dynamics.hpp"
#include "s2t/error.hpp"

namespace s2t {

/// Uniform double in [lo, hi) from the top 53 bits of a 64-bit Mersenne
/// Twister draw; identical on every platform for a given seed.
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

struct CanyonSpan {
    double x_lo = 0.0;
    double x_hi = 0.0;
};

/// Deterministic wind: fixed direction pattern times a scalar magnitude that
/// ramps up exponentially with depth below the top of the wind band and is
/// windowed horizontally to the canyon spans.
struct WindField {
    Eigen::Vector4d direction{1.0, -1.0, 1.0, -1.0};
    double factor = 1.0;     ///< D
    double max_wind = 0.75;  ///< W
    double ramp_rate = 5.0;  ///< r
    double band_bottom = 0.0;
    double band_top = 1.5;
    double max_wind_altitude = 0.3;
    double taper = 0.2;
    std::vector<CanyonSpan> canyons;

    double peak() const { return factor * max_wind; }

    /// Depth below band_top at which the ramp reaches its design maximum.
    double ramp_length() const { return band_top - max_wind_altitude; }

    double vertical_profile(double pz) const {
        if (pz < band_bottom || pz > band_top) return 0.0;
        const double depth = band_top - pz;
        return 1.0 - std::exp(-ramp_rate * depth / ramp_length());
    }

    double horizontal_window(double px) const {
        for (const auto& c : canyons) {
            if (px < c.x_lo || px > c.x_hi) continue;
            const double edge = std::min(px - c.x_lo, c.x_hi - px);
            if (edge >= taper) return 1.0;
            return 0.5 * (1.0 - std::cos(std::numbers::pi * edge / taper));
        }
        return 0.0;
    }

    double magnitude(double px, double pz) const { return peak() * horizontal_window(px) * vertical_profile(pz); }

    Eigen::Vector4d at(const Eigen::Vector4d& x) const { return direction * magnitude(x[0], x[1]); }

    /// Lipschitz constant of the vertical ramp alone.
    double vertical_lipschitz() const { return peak() * ramp_rate / ramp_length(); }

    /// Lipschitz constant of the magnitude in (p_x, p_z), Euclidean norm.
    double lipschitz() const {
        const double horizontal = peak() * std::numbers::pi / (2.0 * taper);
        return std::hypot(vertical_lipschitz(), horizontal);
    }

    void validate() const {
        if (factor < 0.0 || max_wind < 0.0) throw ConfigError("wind: factor and max magnitude must be non-negative");
        if (!(band_top > band_bottom)) throw ConfigError("wind: band_top must exceed band_bottom");
        if (!(max_wind_altitude >= band_bottom && max_wind_altitude < band_top)) {
            throw ConfigError("wind: max-wind altitude must lie inside the band");
        }
        if (!(ramp_rate > 0.0)) throw ConfigError("wind: ramp rate must be positive");
        if (!(taper > 0.0)) throw ConfigError("wind: taper must be positive");
        if (!(direction.cwiseAbs().maxCoeff() <= 1.0)) throw ConfigError("wind: direction entries must lie in [-1, 1]");
        for (const auto& c : canyons) {
            if (!(c.x_hi - c.x_lo > 2.0 * taper)) throw ConfigError("wind: canyon narrower than two tapers");
        }
    }
};

/// Ranges the per-trajectory wind parameters are drawn from.
struct WindRandomization {
    double ramp_rate_lo = 3.0;
    double ramp_rate_hi = 7.0;
    double max_altitude_lo = 0.1;
    /// Upper bound on the max-wind altitude as a fraction of the band height.
    double max_altitude_fraction = 1.0 / 3.0;
};

/// Draws r ~ U[3, 7] and the max-wind altitude ~ U[0.1, height/3].
inline WindField sample_field_params(std::mt19937_64& rng, const WindField& base, const WindRandomization& rnd = {}) {
    WindField field = base;
    field.ramp_rate = uniform(rng, rnd.ramp_rate_lo, rnd.ramp_rate_hi);
    const double height = base.band_top - base.band_bottom;
    field.max_wind_altitude = base.band_bottom + uniform(rng, rnd.max_altitude_lo, height * rnd.max_altitude_fraction);
    field.validate();
    return field;
}

/// Tracks sampled disturbance magnitudes and finite-difference rate estimates.
///   rate = max{ max{0, (|d| - |d_prev|) / dt_sample}, d_max / t_max }
/// The rate estimate reported is the max over the last H samples, clipped to
/// [0, ddot_max]; the magnitude estimate is the latest sample clipped to
/// [0, d_max].
class DisturbanceEstimator {
public:
    struct Settings {
        double sample_period = 0.25;
        std::size_t horizon = 1;
    };

    struct Estimate {
        Eigen::VectorXd d_bar;
        Eigen::VectorXd rate_bar;
    };

    DisturbanceEstimator(DisturbanceSpec spec, double t_max, Settings settings)
        : spec_(std::move(spec)), t_max_(t_max), settings_(settings) {
        if (!(t_max_ > 0.0)) throw ConfigError("estimator: horizon t_max must be positive");
        if (!(settings_.sample_period > 0.0)) throw ConfigError("estimator: sample period must be positive");
        if (settings_.horizon == 0) throw ConfigError("estimator: history horizon H must be at least 1");
        last_d_ = Eigen::VectorXd::Zero(spec_.size());
    }

    Eigen::VectorXd floor_rate() const { return spec_.d_max / t_max_; }

    /// Wind-free start: d_bar = 0 and one floor-rate entry in the history.
    void prime() {
        rates_.clear();
        magnitudes_.clear();
        last_d_ = Eigen::VectorXd::Zero(spec_.size());
        push(floor_rate(), last_d_);
    }

    void measure(const Eigen::VectorXd& true_d, double now) {
        if (true_d.size() != spec_.size()) throw Error("estimator: disturbance dimension mismatch");
        if (!true_d.allFinite() || !std::isfinite(now)) throw NumericalError("estimator: non-finite measurement");
        if (last_time_ && !(now > *last_time_)) throw Error("estimator: measurement timestamps must increase");
        const Eigen::VectorXd mag = true_d.cwiseAbs();
        Eigen::VectorXd rate = ((mag - last_d_) / settings_.sample_period).cwiseMax(0.0);
        rate = rate.cwiseMax(floor_rate());
        push(rate, mag);
        last_d_ = mag;
        last_time_ = now;
    }

    bool primed() const { return !rates_.empty(); }

    Estimate current_estimate() const {
        if (!primed()) throw Error("estimator not primed");
        Eigen::VectorXd rate = rates_.front();
        for (const auto& r : rates_) rate = rate.cwiseMax(r);
        return {magnitudes_.back().cwiseMax(0.0).cwiseMin(spec_.d_max),
                rate.cwiseMax(0.0).cwiseMin(spec_.ddot_max)};
    }

    /// Largest magnitude over the last H samples, clipped to [0, d_max].
    Eigen::VectorXd max_recent_magnitude() const {
        if (!primed()) throw Error("estimator not primed");
        Eigen::VectorXd m = magnitudes_.front();
        for (const auto& v : magnitudes_) m = m.cwiseMax(v);
        return m.cwiseMax(0.0).cwiseMin(spec_.d_max);
    }

    std::size_t history_size() const { return rates_.size(); }
    const Settings& settings() const { return settings_; }
    const DisturbanceSpec& spec() const { return spec_; }

private:
    void push(const Eigen::VectorXd& rate, const Eigen::VectorXd& mag) {
        rates_.push_back(rate);
        magnitudes_.push_back(mag);
        while (rates_.size() > settings_.horizon) rates_.pop_front();
        while (magnitudes_.size() > settings_.horizon) magnitudes_.pop_front();
    }

    DisturbanceSpec spec_;
    double t_max_;
    Settings settings_;
    std::deque<Eigen::VectorXd> rates_;
    std::deque<Eigen::VectorXd> magnitudes_;
    Eigen::VectorXd last_d_;
    std::optional<double> last_time_;
};

}  // namespace s2t
