#pragma once

// solve / bench / inspect, as library calls the command-line tool wraps.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2t/config.hpp"
#include "s2t/error.hpp"
#include "s2t/filter.hpp"
#include "s2t/hjr.hpp"
#include "s2t/sim.hpp"
#include "s2t/tube_io.hpp"

namespace s2t {

namespace fs = std::filesystem;

struct ManifestMember {
    std::string file;
    Parameterization kind = Parameterization::None;
    double multiplier = 0.0;
    std::string sha256;

    bool operator==(const ManifestMember&) const = default;
};

struct TubeManifest {
    std::string solver_hash;
    std::vector<double> grid_lo;
    std::vector<double> grid_hi;
    std::vector<std::size_t> grid_counts;
    double horizon = 0.0;
    double cfl = 0.0;
    double dt_requested = 0.0;
    double dt_used = 0.0;
    std::size_t steps = 0;
    std::size_t archive_samples = 0;
    std::vector<double> d_max;
    std::vector<double> ddot_max;
    std::vector<ManifestMember> members;

    bool operator==(const TubeManifest&) const = default;

    std::vector<ManifestMember> members_of(Parameterization kind) const {
        std::vector<ManifestMember> out;
        for (const auto& m : members) {
            if (m.kind == kind) out.push_back(m);
        }
        return out;
    }
};

inline nlohmann::json manifest_to_json(const TubeManifest& m) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& mm : m.members) {
        members.push_back({{"file", mm.file},
                           {"parameterization", to_string(mm.kind)},
                           {"multiplier", mm.multiplier},
                           {"sha256", mm.sha256}});
    }
    return {{"solver_hash", m.solver_hash},
            {"grid", {{"lo", m.grid_lo}, {"hi", m.grid_hi}, {"counts", m.grid_counts}}},
            {"horizon", m.horizon},
            {"solver",
             {{"cfl", m.cfl},
              {"dt_requested", m.dt_requested},
              {"dt", m.dt_used},
              {"steps", m.steps},
              {"archive_samples", m.archive_samples}}},
            {"disturbance", {{"d_max", m.d_max}, {"ddot_max", m.ddot_max}}},
            {"members", members}};
}

inline TubeManifest manifest_from_json(const nlohmann::json& j) {
    TubeManifest m;
    try {
        m.solver_hash = j.at("solver_hash").get<std::string>();
        m.grid_lo = j.at("grid").at("lo").get<std::vector<double>>();
        m.grid_hi = j.at("grid").at("hi").get<std::vector<double>>();
        m.grid_counts = j.at("grid").at("counts").get<std::vector<std::size_t>>();
        m.horizon = j.at("horizon").get<double>();
        const auto& s = j.at("solver");
        m.cfl = s.at("cfl").get<double>();
        m.dt_requested = s.at("dt_requested").get<double>();
        m.dt_used = s.at("dt").get<double>();
        m.steps = s.at("steps").get<std::size_t>();
        m.archive_samples = s.at("archive_samples").get<std::size_t>();
        m.d_max = j.at("disturbance").at("d_max").get<std::vector<double>>();
        m.ddot_max = j.at("disturbance").at("ddot_max").get<std::vector<double>>();
        for (const auto& e : j.at("members")) {
            m.members.push_back({e.at("file").get<std::string>(),
                                 parameterization_from_string(e.at("parameterization").get<std::string>()),
                                 e.at("multiplier").get<double>(), e.at("sha256").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("tube manifest: ") + e.what());
    }
    return m;
}

inline fs::path tubes_dir(const fs::path& out_dir) { return out_dir / "tubes"; }
inline fs::path manifest_path(const fs::path& out_dir) { return tubes_dir(out_dir) / "manifest.json"; }

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    os << text;
    if (!os) throw Error("write failed for '" + path.string() + "'");
}

inline std::optional<TubeManifest> read_manifest(const fs::path& out_dir) {
    const fs::path p = manifest_path(out_dir);
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream is(p);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("tube manifest '" + p.string() + "': " + e.what());
    }
    return manifest_from_json(j);
}

/// True when every member file exists and still has its recorded hash.
inline bool manifest_intact(const fs::path& out_dir, const TubeManifest& m) {
    for (const auto& mm : m.members) {
        const fs::path p = tubes_dir(out_dir) / mm.file;
        if (!fs::exists(p) || !fs::exists(sidecar_path(p)) || sha256_file(p) != mm.sha256) return false;
    }
    return true;
}

struct SolveOptions {
    std::size_t jobs = 1;
    bool force = false;
};

/// Solves every requested ensemble into <out_dir>/tubes. A second call with
/// the same solver-relevant configuration reuses the intact files.
inline TubeManifest cmd_solve(const BenchmarkConfig& cfg, const fs::path& out_dir, const SolveOptions& opt,
                              std::ostream& log) {
    cfg.validate();
    const std::string hash = cfg.solver_hash();
    if (!opt.force) {
        if (auto existing = read_manifest(out_dir); existing && existing->solver_hash == hash &&
                                                    manifest_intact(out_dir, *existing)) {
            log << "tubes in " << tubes_dir(out_dir).string() << " are up to date (solver hash " << hash.substr(0, 12)
                << ")\n";
            return *existing;
        }
    }
    fs::create_directories(tubes_dir(out_dir));
    const auto& sc = cfg.scenario;
    SolverSettings settings;
    settings.cfl = cfg.solver.cfl;
    settings.dt = cfg.solver.dt;
    settings.archive_samples = cfg.solver.archive_samples;
    settings.jobs = opt.jobs;
    const auto pb = make_problem(sc.env, sc.model, cfg.solver.grid(), cfg.solver.t_max, settings);

    TubeManifest man;
    man.solver_hash = hash;
    man.grid_lo = cfg.solver.grid_lo;
    man.grid_hi = cfg.solver.grid_hi;
    man.grid_counts = cfg.solver.grid_counts;
    man.horizon = cfg.solver.t_max;
    man.cfl = cfg.solver.cfl;
    man.dt_requested = cfg.solver.dt;
    man.archive_samples = cfg.solver.archive_samples;
    man.d_max = detail::to_vec(sc.d_spec.d_max);
    man.ddot_max = detail::to_vec(sc.d_spec.ddot_max);
    for (auto kind : cfg.solver.parameterizations) {
        const EnsembleSpec spec = cfg.solver.ensemble(kind);
        for (std::size_t i = 0; i < spec.multipliers.size(); ++i) {
            log << "solving " << to_string(kind) << " member " << i + 1 << "/" << spec.multipliers.size()
                << " (multiplier " << spec.multipliers[i] << ")\n"
                << std::flush;
            SolveInfo info;
            const ValueTube tube = solve_member(kind, spec.multipliers[i], pb, sc.d_spec, &info);
            std::ostringstream name;
            name << to_string(kind) << "_" << i << ".s2tv";
            const fs::path p = tubes_dir(out_dir) / name.str();
            write_tube(p, tube);
            man.dt_used = info.dt;
            man.steps = info.steps;
            man.members.push_back({name.str(), kind, spec.multipliers[i], sha256_file(p)});
        }
    }
    write_text(manifest_path(out_dir), manifest_to_json(man).dump(2) + "\n");
    return man;
}

struct LoadedTubes {
    TubeManifest manifest;
    TubeSet rate;
    TubeSet bound;
};

inline LoadedTubes load_tubes(const BenchmarkConfig& cfg, const fs::path& out_dir) {
    const auto man = read_manifest(out_dir);
    if (!man) {
        throw ConfigError("no value tubes in '" + tubes_dir(out_dir).string() + "'; run `s2t solve --config <file> --out-dir " +
                          out_dir.string() + "` first");
    }
    if (man->solver_hash != cfg.solver_hash()) {
        throw ConfigError("value tubes in '" + tubes_dir(out_dir).string() +
                          "' were solved for a different configuration; rerun `s2t solve` with this config");
    }
    LoadedTubes out{*man, {}, {}};
    for (const auto& mm : man->members) {
        const fs::path p = tubes_dir(out_dir) / mm.file;
        if (!fs::exists(p)) throw ConfigError("missing tube file '" + p.string() + "'; rerun `s2t solve`");
        if (sha256_file(p) != mm.sha256) throw ConfigError("tube file '" + p.string() + "' was modified; rerun `s2t solve`");
        auto tube = std::make_shared<const ValueTube>(read_tube(p));
        (mm.kind == Parameterization::FixedRate ? out.rate : out.bound).push_back(std::move(tube));
    }
    return out;
}

inline FilterConfig make_filter(const BenchmarkConfig& cfg, const LoadedTubes& tubes, FilterMode mode) {
    FilterConfig fc;
    fc.mode = mode;
    fc.gamma = cfg.filter.gamma;
    fc.d_spec = cfg.scenario.d_spec;
    fc.t_max = cfg.solver.t_max;
    switch (mode) {
        case FilterMode::SpaceToTime: fc.tubes = tubes.rate; break;
        case FilterMode::NaiveEnsemble: fc.tubes = tubes.bound; break;
        case FilterMode::WorstCase:
            if (!tubes.bound.empty()) fc.tubes = {tubes.bound.back()};
            break;
    }
    if (fc.tubes.empty()) {
        throw ConfigError(std::string("no tubes for mode ") + to_string(mode) + "; rerun `s2t solve` with the matching parameterization");
    }
    if (mode == FilterMode::WorstCase && fc.tubes.front()->meta().multiplier != 1.0) {
        throw ConfigError("worst-case mode needs the bound member at multiplier 1");
    }
    return fc;
}

inline const char* table_label(FilterMode m) {
    switch (m) {
        case FilterMode::SpaceToTime: return "HJR Ours (space2time)";
        case FilterMode::NaiveEnsemble: return "HJR Naive";
        case FilterMode::WorstCase: return "HJR Naive Worst-Case";
    }
    return "?";
}

inline std::string format_table(const std::vector<ModeResult>& results) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "Method" << std::right << std::setw(14) << "% Violations" << std::setw(12)
       << "Goal dist" << std::setw(14) << "Traj length" << '\n';
    os << std::fixed;
    for (const auto& r : results) {
        os << std::left << std::setw(24) << table_label(r.mode) << std::right << std::setw(13) << std::setprecision(1)
           << 100.0 * r.metrics.pct_violations << '%' << std::setw(12) << std::setprecision(3)
           << r.metrics.mean_goal_distance << std::setw(14) << std::setprecision(1) << r.metrics.mean_traj_length << '\n';
    }
    return os.str();
}

inline nlohmann::json metrics_json(const BenchmarkConfig& cfg, const std::vector<ModeResult>& results) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& r : results) {
        nlohmann::json traj = nlohmann::json::array();
        for (std::size_t i = 0; i < r.records.size(); ++i) {
            const auto& rec = r.records[i];
            traj.push_back({{"index", i},
                            {"crashed", rec.crashed},
                            {"length", rec.length()},
                            {"mean_min_goal_distance", mean_min_goal_distance(rec)},
                            {"wind_ramp_rate", rec.wind.ramp_rate},
                            {"wind_max_altitude", rec.wind.max_wind_altitude}});
        }
        modes.push_back({{"mode", to_string(r.mode)},
                         {"label", table_label(r.mode)},
                         {"pct_violations", r.metrics.pct_violations},
                         {"mean_goal_distance", r.metrics.mean_goal_distance},
                         {"mean_traj_length", r.metrics.mean_traj_length},
                         {"n_traj", r.metrics.n_traj},
                         {"trajectories", traj}});
    }
    return {{"config_hash", cfg.hash()}, {"seed", cfg.run.seed}, {"n_traj", cfg.run.n_traj}, {"results", modes}};
}

struct BenchOptions {
    std::size_t jobs = 1;
    bool write_traces = true;
};

/// Runs the benchmark on solved tubes and writes <out_dir>/bench/metrics.json
/// plus one CSV per rollout under <out_dir>/bench/traces/<mode>/.
inline std::vector<ModeResult> cmd_bench(const BenchmarkConfig& cfg, const fs::path& out_dir, const BenchOptions& opt,
                                         std::ostream& log) {
    cfg.validate();
    const LoadedTubes tubes = load_tubes(cfg, out_dir);
    std::vector<FilterConfig> filters;
    for (auto m : cfg.filter.modes) filters.push_back(make_filter(cfg, tubes, m));
    auto results = run_benchmark(cfg.scenario, filters, cfg.run.n_traj, cfg.run.seed, opt.jobs);

    const fs::path bench = out_dir / "bench";
    fs::create_directories(bench);
    const std::string hash = cfg.hash();
    if (opt.write_traces) {
        for (const auto& r : results) {
            const fs::path dir = bench / "traces" / to_string(r.mode);
            fs::create_directories(dir);
            for (std::size_t i = 0; i < r.records.size(); ++i) {
                std::ostringstream name;
                name << "traj_" << std::setw(3) << std::setfill('0') << i << ".csv";
                write_trace_csv(dir / name.str(), r.records[i], hash);
            }
        }
    }
    write_text(bench / "metrics.json", metrics_json(cfg, results).dump(2) + "\n");
    log << format_table(results);
    return results;
}

/// Writes a 2D slice as CSV: header row holds the axis_b coordinates, each
/// following row starts with its axis_a coordinate.
inline void write_slice_csv(std::ostream& os, const Slice2D& s) {
    os << std::setprecision(17);
    os << 'x' << s.axis_a << "\\x" << s.axis_b;
    for (double b : s.coords_b) os << ',' << b;
    os << '\n';
    for (std::size_t i = 0; i < s.coords_a.size(); ++i) {
        os << s.coords_a[i];
        for (std::size_t j = 0; j < s.coords_b.size(); ++j) os << ',' << s(i, j);
        os << '\n';
    }
}

inline Slice2D read_slice_csv(std::istream& is) {
    Slice2D s;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    if (!std::getline(is, line)) throw Error("slice csv: empty");
    auto head = split(line);
    if (head.empty() || head[0].size() < 4 || head[0][0] != 'x') throw Error("slice csv: bad header");
    const auto sep = head[0].find("\\x");
    if (sep == std::string::npos) throw Error("slice csv: bad header");
    s.axis_a = std::stoul(head[0].substr(1, sep - 1));
    s.axis_b = std::stoul(head[0].substr(sep + 2));
    for (std::size_t j = 1; j < head.size(); ++j) s.coords_b.push_back(std::stod(head[j]));
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != s.coords_b.size() + 1) throw Error("slice csv: ragged row");
        s.coords_a.push_back(std::stod(cells[0]));
        for (std::size_t j = 1; j < cells.size(); ++j) s.values.push_back(std::stod(cells[j]));
    }
    return s;
}

struct SliceRequest {
    std::size_t axis_a = 0;
    std::size_t axis_b = 1;
    std::vector<double> at;  ///< full state; entries on the slice axes are ignored
    std::optional<double> tau;  ///< default: the tube horizon
};

inline Slice2D cmd_inspect(const fs::path& tube_path, const SliceRequest& req, std::ostream& out) {
    const ValueTube tube = read_tube(tube_path);
    std::vector<double> at = req.at;
    if (at.empty()) at.assign(tube.grid().ndim(), 0.0);
    const Slice2D s = extract_slice(tube, req.axis_a, req.axis_b, at, req.tau.value_or(tube.max_tau()));
    write_slice_csv(out, s);
    return s;
}

}  // namespace s2t
