#pragma once

// Benchmark configuration: TOML in, strictly validated, hashed over a
// canonical JSON rendering so equal content gives equal hashes.

#include <openssl/evp.h>

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "s2t/error.hpp"
#include "s2t/filter.hpp"
#include "s2t/sim.hpp"
#include "toml.hpp"

namespace s2t {

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read '" + path.string() + "'");
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return sha256_hex(data);
}

struct SolverConfig {
    std::vector<double> grid_lo{-5.0, -0.2, -1.9, -1.9};
    std::vector<double> grid_hi{5.0, 2.8, 1.9, 1.9};
    std::vector<std::size_t> grid_counts{41, 25, 15, 15};
    double dt = 0.0;  ///< 0 = derived from the CFL bound
    double cfl = 0.5;
    double t_max = 5.0;
    std::size_t archive_samples = 50;
    std::size_t ensemble_k = 5;
    std::vector<Parameterization> parameterizations{Parameterization::FixedRate, Parameterization::FixedBound};

    RectGrid grid() const { return RectGrid(grid_lo, grid_hi, grid_counts); }

    /// Rate members k/K (k = 1..K); bound members evenly spaced from 0 to 1.
    EnsembleSpec ensemble(Parameterization kind) const {
        return EnsembleSpec::evenly_spaced(kind, ensemble_k, kind == Parameterization::FixedBound);
    }
};

struct FilterSettings {
    std::vector<FilterMode> modes{FilterMode::SpaceToTime, FilterMode::NaiveEnsemble, FilterMode::WorstCase};
    double gamma = 1.0;
};

struct RunConfig {
    std::size_t n_traj = 20;
    std::uint64_t seed = 0;
};

struct BenchmarkConfig {
    Scenario scenario;
    SolverConfig solver;
    FilterSettings filter;
    RunConfig run;

    void validate() const;
    nlohmann::json to_json() const;
    /// SHA-256 of the canonical JSON of everything that affects outputs.
    std::string hash() const { return sha256_hex(to_json().dump()); }
    /// Hash of the blocks tube solving depends on.
    std::string solver_hash() const;
};

namespace detail {

inline std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline nlohmann::json rect_json(const Rect& r) { return {r.x_lo, r.x_hi, r.z_lo, r.z_hi}; }

// Reads one TOML table, remembering which keys were consumed so leftovers can
// be reported as unknown.
class TableReader {
public:
    TableReader(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

    bool has(std::string_view key) const { return table_ && table_->contains(key); }

    double number(std::string_view key, double fallback) {
        const toml::node* n = take(key);
        if (!n) return fallback;
        if (auto v = n->value<double>()) return *v;
        throw ConfigError(where(key) + ": expected a number");
    }

    std::int64_t integer(std::string_view key, std::int64_t fallback) {
        const toml::node* n = take(key);
        if (!n) return fallback;
        if (n->is_integer()) return *n->value<std::int64_t>();
        throw ConfigError(where(key) + ": expected an integer");
    }

    std::size_t count(std::string_view key, std::size_t fallback) {
        const auto v = integer(key, static_cast<std::int64_t>(fallback));
        if (v < 0) throw ConfigError(where(key) + ": must be non-negative");
        return static_cast<std::size_t>(v);
    }

    std::string string(std::string_view key, const std::string& fallback) {
        const toml::node* n = take(key);
        if (!n) return fallback;
        if (auto v = n->value<std::string>()) return *v;
        throw ConfigError(where(key) + ": expected a string");
    }

    const toml::node* raw(std::string_view key) { return take(key); }

    std::vector<double> numbers(std::string_view key, std::vector<double> fallback, std::size_t want = 0) {
        const toml::node* n = take(key);
        if (!n) return fallback;
        return as_numbers(*n, where(key), want);
    }

    std::vector<std::string> strings(std::string_view key, std::vector<std::string> fallback) {
        const toml::node* n = take(key);
        if (!n) return fallback;
        const auto* arr = n->as_array();
        if (!arr) throw ConfigError(where(key) + ": expected an array of strings");
        std::vector<std::string> out;
        for (const auto& e : *arr) {
            auto s = e.value<std::string>();
            if (!s) throw ConfigError(where(key) + ": expected an array of strings");
            out.push_back(*s);
        }
        return out;
    }

    std::string where(std::string_view key) const { return path_ + "." + std::string(key); }

    static std::vector<double> as_numbers(const toml::node& n, const std::string& where, std::size_t want) {
        const auto* arr = n.as_array();
        if (!arr) throw ConfigError(where + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& e : *arr) {
            auto v = e.value<double>();
            if (!v) throw ConfigError(where + ": expected an array of numbers");
            out.push_back(*v);
        }
        if (want && out.size() != want) {
            throw ConfigError(where + ": expected " + std::to_string(want) + " entries, got " + std::to_string(out.size()));
        }
        return out;
    }

    void reject_unknown() const {
        if (!table_) return;
        for (const auto& [k, v] : *table_) {
            if (!used_.count(std::string(k.str()))) throw ConfigError("unknown config key '" + where(k.str()) + "'");
        }
    }

private:
    const toml::node* take(std::string_view key) {
        if (!table_) return nullptr;
        used_.insert(std::string(key));
        return table_->get(key);
    }

    const toml::table* table_;
    std::string path_;
    std::set<std::string> used_;
};

inline Rect rect_from(const std::vector<double>& v) { return {v[0], v[1], v[2], v[3]}; }

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline void BenchmarkConfig::validate() const {
    const auto& sc = scenario;
    sc.env.validate();
    sc.wind_base.validate();
    if (!(sc.wind_random.ramp_rate_lo > 0.0 && sc.wind_random.ramp_rate_hi >= sc.wind_random.ramp_rate_lo)) {
        throw ConfigError("wind.ramp_rate: need 0 < lo <= hi");
    }
    const double band = sc.wind_base.band_top - sc.wind_base.band_bottom;
    if (!(sc.wind_random.max_altitude_lo >= 0.0 &&
          sc.wind_random.max_altitude_lo <= band * sc.wind_random.max_altitude_fraction &&
          band * sc.wind_random.max_altitude_fraction < band)) {
        throw ConfigError("wind: max-wind altitude range must lie inside the band");
    }
    if (sc.d_spec.size() != 4) throw ConfigError("dynamics: d_max and ddot_max need 4 entries");
    if (!(solver.t_max > 0.0)) throw ConfigError("solver.t_max must be positive");
    if (std::abs(sc.t_max - solver.t_max) > 0.0) throw ConfigError("internal: scenario horizon out of sync");
    if (solver.grid_counts.size() != 4 || solver.grid_lo.size() != 4 || solver.grid_hi.size() != 4) {
        throw ConfigError("solver grid must be 4-dimensional");
    }
    (void)solver.grid();
    if (solver.dt < 0.0) throw ConfigError("solver.dt must be positive or \"auto\"");
    if (!(solver.cfl > 0.0 && solver.cfl <= 1.0)) throw ConfigError("solver.cfl must lie in (0, 1]");
    if (solver.archive_samples == 0) throw ConfigError("solver.archive_samples must be positive");
    if (solver.ensemble_k == 0) throw ConfigError("solver.ensemble_k must be positive");
    if (solver.parameterizations.empty()) throw ConfigError("solver.parameterizations must not be empty");
    for (auto p : solver.parameterizations) solver.ensemble(p).validate();
    if (!(filter.gamma > 0.0)) throw ConfigError("filter.gamma must be positive");
    if (filter.modes.empty()) throw ConfigError("filter.modes must not be empty");
    auto solved = [&](Parameterization p) {
        return std::find(solver.parameterizations.begin(), solver.parameterizations.end(), p) !=
               solver.parameterizations.end();
    };
    for (auto m : filter.modes) {
        const auto need = m == FilterMode::SpaceToTime ? Parameterization::FixedRate : Parameterization::FixedBound;
        if (!solved(need)) {
            throw ConfigError(std::string("filter mode ") + to_string(m) + " needs solver parameterization '" +
                              to_string(need) + "'");
        }
    }
    const auto& rs = sc.rollout;
    if (!(rs.dt > 0.0) || rs.max_steps == 0 || rs.sample_every == 0 || rs.goal_period == 0) {
        throw ConfigError("run: dt, steps, sample_every and goal_period must be positive");
    }
    if (rs.estimator.horizon == 0) throw ConfigError("filter.history must be at least 1");
    if (std::abs(rs.estimator.sample_period - rs.dt * static_cast<double>(rs.sample_every)) > 1e-9) {
        throw ConfigError("filter.sample_period must equal run.dt * run.sample_every");
    }
    if (!(constraint_g(sc.env, rs.start) > 0.0)) throw ConfigError("run.start must be a safe state");
    if (sc.goals.count == 0) throw ConfigError("goals.count must be positive");
    if (run.n_traj == 0) throw ConfigError("run.n_traj must be at least 1");
}

inline nlohmann::json BenchmarkConfig::to_json() const {
    using nlohmann::json;
    const auto& sc = scenario;
    json buildings = json::array();
    for (const auto& b : sc.env.buildings) buildings.push_back(detail::rect_json(b));
    json params = json::array();
    for (auto p : solver.parameterizations) params.push_back(to_string(p));
    json modes = json::array();
    for (auto m : filter.modes) modes.push_back(to_string(m));
    const auto& box = sc.model.control_box();
    return {
        {"environment",
         {{"boundary", detail::rect_json(sc.env.boundary)},
          {"v_max", sc.env.v_max},
          {"buildings", buildings},
          {"target", detail::rect_json(sc.env.target)},
          {"target_v_max", sc.env.target_v_max}}},
        {"dynamics",
         {{"u_lo", {box.lo[0], box.lo[1]}},
          {"u_hi", {box.hi[0], box.hi[1]}},
          {"d_max", detail::to_vec(sc.d_spec.d_max)},
          {"ddot_max", detail::to_vec(sc.d_spec.ddot_max)}}},
        {"wind",
         {{"factor", sc.wind_base.factor},
          {"direction", detail::to_vec(sc.wind_base.direction)},
          {"max_wind", sc.wind_base.max_wind},
          {"ramp_rate", {sc.wind_random.ramp_rate_lo, sc.wind_random.ramp_rate_hi}},
          {"band", {sc.wind_base.band_bottom, sc.wind_base.band_top}},
          {"max_altitude_lo", sc.wind_random.max_altitude_lo},
          {"max_altitude_fraction", sc.wind_random.max_altitude_fraction},
          {"taper", sc.wind_base.taper}}},
        {"solver",
         {{"grid_lo", solver.grid_lo},
          {"grid_hi", solver.grid_hi},
          {"grid_counts", solver.grid_counts},
          {"dt", solver.dt},
          {"cfl", solver.cfl},
          {"t_max", solver.t_max},
          {"archive_samples", solver.archive_samples},
          {"ensemble_k", solver.ensemble_k},
          {"parameterizations", params}}},
        {"filter",
         {{"modes", modes},
          {"gamma", filter.gamma},
          {"history", sc.rollout.estimator.horizon},
          {"sample_period", sc.rollout.estimator.sample_period}}},
        {"lqr", {{"q", detail::to_vec(sc.lqr.q)}, {"r", detail::to_vec(sc.lqr.r)}}},
        {"goals",
         {{"count", sc.goals.count},
          {"above_altitude", sc.goals.above_altitude},
          {"above_jitter", sc.goals.above_jitter},
          {"bottom_clearance", sc.goals.bottom_clearance},
          {"top_clearance", sc.goals.top_clearance},
          {"wall_clearance", sc.goals.wall_clearance}}},
        {"run",
         {{"n_traj", run.n_traj},
          {"seed", run.seed},
          {"steps", sc.rollout.max_steps},
          {"dt", sc.rollout.dt},
          {"sample_every", sc.rollout.sample_every},
          {"goal_period", sc.rollout.goal_period},
          {"start", detail::to_vec(sc.rollout.start)}}},
    };
}

inline std::string BenchmarkConfig::solver_hash() const {
    const auto j = to_json();
    const nlohmann::json part = {{"environment", j["environment"]}, {"dynamics", j["dynamics"]}, {"solver", j["solver"]}};
    return sha256_hex(part.dump());
}

/// Parses TOML text. Unknown tables or keys, wrong types and broken
/// invariants raise ConfigError.
inline BenchmarkConfig parse_config(std::string_view text, const std::string& source = "config") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ": " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(msg.str());
    }
    static const std::set<std::string> kTables{"environment", "dynamics", "wind", "solver",
                                               "filter",      "lqr",      "goals", "run"};
    for (const auto& [k, v] : root) {
        if (!kTables.count(std::string(k.str()))) throw ConfigError("unknown config table '" + std::string(k.str()) + "'");
        if (!v.is_table()) throw ConfigError("config key '" + std::string(k.str()) + "' must be a table");
    }
    auto table = [&](const char* name) { return detail::TableReader(root[name].as_table(), name); };

    BenchmarkConfig cfg;
    auto& sc = cfg.scenario;
    {
        auto t = table("environment");
        sc.env.boundary = detail::rect_from(t.numbers("boundary", {-4.0, 4.0, 0.0, 2.5}, 4));
        sc.env.v_max = t.number("v_max", sc.env.v_max);
        if (const auto* n = t.raw("buildings")) {
            const auto* arr = n->as_array();
            if (!arr || arr->empty()) throw ConfigError("environment.buildings: expected an array of [x_lo, x_hi, z_lo, z_hi]");
            sc.env.buildings.clear();
            for (const auto& b : *arr) {
                sc.env.buildings.push_back(
                    detail::rect_from(detail::TableReader::as_numbers(b, "environment.buildings", 4)));
            }
        }
        sc.env.target = detail::rect_from(t.numbers("target", {-2.5, 1.5, 1.7, 2.3}, 4));
        sc.env.target_v_max = t.number("target_v_max", sc.env.target_v_max);
        t.reject_unknown();
    }
    {
        auto t = table("dynamics");
        const auto lo = t.numbers("u_lo", {-0.25, PlanarQuadModel::kGravity - 4.0}, 2);
        const auto hi = t.numbers("u_hi", {0.25, PlanarQuadModel::kGravity + 4.0}, 2);
        sc.model = PlanarQuadModel(ControlBox<2>(Eigen::Vector2d(lo[0], lo[1]), Eigen::Vector2d(hi[0], hi[1])));
        if (!sc.model.control_box().contains(sc.model.hover())) throw ConfigError("dynamics: control box must contain hover");
        const auto dmax = t.numbers("d_max", {0.75, 0.75, 0.75, 0.75}, 4);
        const auto ddot = t.numbers("ddot_max", {1.5, 1.5, 1.5, 1.5}, 4);
        sc.d_spec = DisturbanceSpec(detail::to_eigen(dmax), detail::to_eigen(ddot));
        t.reject_unknown();
    }
    {
        auto t = table("wind");
        sc.wind_base.factor = t.number("factor", 1.0);
        sc.wind_base.max_wind = t.number("max_wind", 0.75);
        sc.wind_base.direction = detail::to_eigen(t.numbers("direction", {1.0, -1.0, 1.0, -1.0}, 4));
        const auto r = t.numbers("ramp_rate", {3.0, 7.0}, 2);
        sc.wind_random.ramp_rate_lo = r[0];
        sc.wind_random.ramp_rate_hi = r[1];
        const auto band = t.numbers("band", {0.0, 1.5}, 2);
        sc.wind_base.band_bottom = band[0];
        sc.wind_base.band_top = band[1];
        sc.wind_random.max_altitude_lo = t.number("max_altitude_lo", 0.1);
        sc.wind_random.max_altitude_fraction = t.number("max_altitude_fraction", 1.0 / 3.0);
        sc.wind_base.taper = t.number("taper", 0.2);
        sc.wind_base.max_wind_altitude = sc.wind_base.band_bottom + sc.wind_random.max_altitude_lo;
        t.reject_unknown();
    }
    for (const auto& c : sc.env.canyons()) sc.wind_base.canyons.push_back({c.x_lo, c.x_hi});
    {
        auto t = table("solver");
        auto& s = cfg.solver;
        s.grid_lo = t.numbers("grid_lo", s.grid_lo, 4);
        s.grid_hi = t.numbers("grid_hi", s.grid_hi, 4);
        if (const auto* n = t.raw("grid_counts")) {
            const auto raw = detail::TableReader::as_numbers(*n, "solver.grid_counts", 4);
            s.grid_counts.clear();
            for (double c : raw) {
                if (c < 2 || c != std::floor(c)) throw ConfigError("solver.grid_counts: need integers >= 2");
                s.grid_counts.push_back(static_cast<std::size_t>(c));
            }
        }
        if (const auto* n = t.raw("dt")) {
            if (auto str = n->value<std::string>()) {
                if (*str != "auto") throw ConfigError("solver.dt: expected a number or \"auto\"");
                s.dt = 0.0;
            } else if (auto v = n->value<double>()) {
                if (!(*v > 0.0)) throw ConfigError("solver.dt must be positive or \"auto\"");
                s.dt = *v;
            } else {
                throw ConfigError("solver.dt: expected a number or \"auto\"");
            }
        }
        s.cfl = t.number("cfl", s.cfl);
        s.t_max = t.number("t_max", s.t_max);
        s.archive_samples = t.count("archive_samples", s.archive_samples);
        s.ensemble_k = t.count("ensemble_k", s.ensemble_k);
        const auto params = t.strings("parameterizations", {"rate", "bound"});
        s.parameterizations.clear();
        for (const auto& p : params) {
            const auto kind = parameterization_from_string(p);
            if (kind == Parameterization::None) throw ConfigError("solver.parameterizations: expected rate or bound");
            if (std::find(s.parameterizations.begin(), s.parameterizations.end(), kind) != s.parameterizations.end()) {
                throw ConfigError("solver.parameterizations: duplicate entry '" + p + "'");
            }
            s.parameterizations.push_back(kind);
        }
        t.reject_unknown();
        sc.t_max = s.t_max;
    }
    {
        auto t = table("filter");
        const auto modes = t.strings("modes", {"space2time", "naive", "worst-case"});
        cfg.filter.modes.clear();
        for (const auto& m : modes) cfg.filter.modes.push_back(filter_mode_from_string(m));
        cfg.filter.gamma = t.number("gamma", cfg.filter.gamma);
        sc.rollout.estimator.horizon = t.count("history", 1);
        sc.rollout.estimator.sample_period = t.number("sample_period", 0.25);
        t.reject_unknown();
    }
    {
        auto t = table("lqr");
        sc.lqr.q = detail::to_eigen(t.numbers("q", {1.0, 1.0, 0.5, 0.5}, 4));
        sc.lqr.r = detail::to_eigen(t.numbers("r", {10.0, 0.1}, 2));
        t.reject_unknown();
    }
    {
        auto t = table("goals");
        auto& g = sc.goals;
        g.count = t.count("count", g.count);
        g.above_altitude = t.number("above_altitude", g.above_altitude);
        g.above_jitter = t.number("above_jitter", g.above_jitter);
        g.bottom_clearance = t.number("bottom_clearance", g.bottom_clearance);
        g.top_clearance = t.number("top_clearance", g.top_clearance);
        g.wall_clearance = t.number("wall_clearance", g.wall_clearance);
        t.reject_unknown();
    }
    {
        auto t = table("run");
        cfg.run.n_traj = t.count("n_traj", cfg.run.n_traj);
        const auto seed = t.integer("seed", 0);
        if (seed < 0) throw ConfigError("run.seed must be non-negative");
        cfg.run.seed = static_cast<std::uint64_t>(seed);
        sc.rollout.max_steps = t.count("steps", sc.rollout.max_steps);
        sc.rollout.dt = t.number("dt", sc.rollout.dt);
        sc.rollout.sample_every = t.count("sample_every", sc.rollout.sample_every);
        sc.rollout.goal_period = t.count("goal_period", sc.rollout.goal_period);
        sc.rollout.start = detail::to_eigen(t.numbers("start", {-0.5, 2.0, 0.0, 0.0}, 4));
        t.reject_unknown();
    }
    try {
        (void)LqrController(sc.model, sc.lqr);
    } catch (const NumericalError& e) {
        throw ConfigError(std::string("lqr weights: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline BenchmarkConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_config(text, path.string());
}

}  // namespace s2t
