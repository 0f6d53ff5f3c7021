// Command-line entry point: s2t solve | bench | inspect.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "s2t/cli.hpp"

namespace {

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw s2t::ConfigError("expected a comma-separated list of numbers, got '" + text + "'");
        }
    }
    return out;
}

struct Common {
    std::string config;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_traj;
    std::string modes;
    std::size_t jobs = 1;
};

s2t::BenchmarkConfig load(const Common& c) {
    auto cfg = s2t::load_config(c.config);
    if (c.seed) cfg.run.seed = *c.seed;
    if (c.n_traj) cfg.run.n_traj = *c.n_traj;
    if (!c.modes.empty()) {
        cfg.filter.modes.clear();
        std::stringstream ss(c.modes);
        std::string m;
        while (std::getline(ss, m, ',')) cfg.filter.modes.push_back(s2t::filter_mode_from_string(m));
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"space2time value tubes, safety filters and the canyon benchmark"};
    app.require_subcommand(1);
    Common c;

    auto* solve = app.add_subcommand("solve", "solve the value-tube ensembles of a config");
    bool force = false;
    solve->add_option("--config", c.config, "benchmark config (TOML)")->required();
    solve->add_option("--out-dir", c.out_dir, "output directory (tubes go to <out-dir>/tubes)");
    solve->add_option("--jobs", c.jobs, "worker threads");
    solve->add_option("--seed", c.seed, "override run.seed (recorded only)");
    solve->add_flag("--force", force, "re-solve even when up-to-date tubes exist");

    auto* bench = app.add_subcommand("bench", "run the closed-loop benchmark on solved tubes");
    bool no_traces = false;
    bench->add_option("--config", c.config, "benchmark config (TOML)")->required();
    bench->add_option("--out-dir", c.out_dir, "directory holding tubes/ and receiving bench/");
    bench->add_option("--seed", c.seed, "override run.seed");
    bench->add_option("--n-traj", c.n_traj, "override run.n_traj");
    bench->add_option("--modes", c.modes, "comma-separated modes: space2time,naive,worst-case");
    bench->add_option("--jobs", c.jobs, "worker threads");
    bench->add_flag("--no-traces", no_traces, "skip per-rollout CSV traces");

    auto* inspect = app.add_subcommand("inspect", "export a 2D slice of a tube as CSV");
    std::string tube_path;
    std::string axes = "0,1";
    std::string at;
    std::optional<double> tau;
    std::string out_file;
    inspect->add_option("--tube", tube_path, "tube file (.s2tv)")->required();
    inspect->add_option("--axes", axes, "two grid axes spanning the slice, e.g. 0,1");
    inspect->add_option("--at", at, "full state fixing the other axes, e.g. 0,0,0,0");
    inspect->add_option("--tau", tau, "time-to-go of the slice (default: horizon)");
    inspect->add_option("--out", out_file, "output CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*solve) {
            s2t::cmd_solve(load(c), c.out_dir, {c.jobs, force}, std::cout);
        } else if (*bench) {
            s2t::cmd_bench(load(c), c.out_dir, {c.jobs, !no_traces}, std::cout);
        } else if (*inspect) {
            const auto ax = parse_list(axes);
            if (ax.size() != 2 || ax[0] < 0 || ax[1] < 0) throw s2t::ConfigError("--axes needs two axis indices");
            s2t::SliceRequest req{static_cast<std::size_t>(ax[0]), static_cast<std::size_t>(ax[1]),
                                  at.empty() ? std::vector<double>{} : parse_list(at), tau};
            if (out_file.empty()) {
                s2t::cmd_inspect(tube_path, req, std::cout);
            } else {
                std::ofstream os(out_file, std::ios::binary);
                if (!os) throw s2t::Error("cannot write '" + out_file + "'");
                s2t::cmd_inspect(tube_path, req, os);
            }
        }
    } catch (const s2t::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const s2t::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
