#pragma once

// Binary tube files ("S2TV") and their JSON metadata sidecar.
//
// Layout, all little-endian:
//   char[4]  magic "S2TV"
//   u32      version
//   u32      ndim
//   u32      counts[ndim]
//   f64      lo[ndim]
//   f64      hi[ndim]
//   u32      ntaus
//   f64      taus[ntaus]
//   f64      values[ntaus * prod(counts)]   row-major, tau slowest, last dim fastest
//
// The sidecar lives next to the tube as "<path>.json".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2t/error.hpp"
#include "s2t/grid.hpp"

namespace s2t {

inline constexpr char kTubeMagic[4] = {'S', '2', 'T', 'V'};
inline constexpr std::uint32_t kTubeVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!is) throw ConfigError("tube file: truncated");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

inline void write_doubles(std::ostream& os, std::span<const double> xs) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
    } else {
        for (double x : xs) write_le(os, x);
    }
}

inline void read_doubles(std::istream& is, std::span<double> xs) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
        if (!is) throw ConfigError("tube file: truncated value block");
    } else {
        for (double& x : xs) x = read_le<double>(is);
    }
}

}  // namespace detail

inline nlohmann::json meta_to_json(const TubeMeta& meta) {
    return {
        {"parameterization", to_string(meta.kind)},
        {"multiplier", meta.multiplier},
        {"d_max", meta.d_max},
        {"ddot_max", meta.ddot_max},
        {"problem", meta.problem},
    };
}

inline TubeMeta meta_from_json(const nlohmann::json& j) {
    TubeMeta meta;
    try {
        meta.kind = parameterization_from_string(j.at("parameterization").get<std::string>());
        meta.multiplier = j.at("multiplier").get<double>();
        meta.d_max = j.at("d_max").get<std::vector<double>>();
        meta.ddot_max = j.at("ddot_max").get<std::vector<double>>();
        meta.problem = j.at("problem").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("tube sidecar: ") + e.what());
    }
    return meta;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& tube_path) {
    return tube_path.string() + ".json";
}

inline void write_tube(const std::filesystem::path& path, const ValueTube& tube) {
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open '" + path.string() + "' for writing");
        const RectGrid& grid = tube.grid();
        os.write(kTubeMagic, 4);
        detail::write_le<std::uint32_t>(os, kTubeVersion);
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.ndim()));
        for (std::size_t c : grid.counts()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c));
        detail::write_doubles(os, grid.lo());
        detail::write_doubles(os, grid.hi());
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tube.taus().size()));
        detail::write_doubles(os, tube.taus());
        detail::write_doubles(os, tube.values());
        if (!os) throw Error("write failed for '" + path.string() + "'");
    }
    std::ofstream js(sidecar_path(path), std::ios::trunc);
    if (!js) throw Error("cannot open sidecar for '" + path.string() + "'");
    js << meta_to_json(tube.meta()).dump(2) << '\n';
}

inline ValueTube read_tube(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open tube file '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kTubeMagic, 4) != 0) {
        throw ConfigError("'" + path.string() + "' is not a tube file (bad magic)");
    }
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kTubeVersion) throw ConfigError("unsupported tube file version " + std::to_string(version));
    const auto ndim = detail::read_le<std::uint32_t>(is);
    if (ndim == 0 || ndim > kMaxGridDims) throw ConfigError("tube file: bad dimension count");
    std::vector<std::size_t> counts(ndim);
    for (auto& c : counts) c = detail::read_le<std::uint32_t>(is);
    std::vector<double> lo(ndim);
    std::vector<double> hi(ndim);
    detail::read_doubles(is, lo);
    detail::read_doubles(is, hi);
    RectGrid grid(lo, hi, counts);
    const auto ntaus = detail::read_le<std::uint32_t>(is);
    std::vector<double> taus(ntaus);
    detail::read_doubles(is, taus);
    std::vector<double> values(static_cast<std::size_t>(ntaus) * grid.size());
    detail::read_doubles(is, values);

    TubeMeta meta;
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
        std::ifstream js(side);
        nlohmann::json j;
        try {
            js >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("tube sidecar '" + side.string() + "': " + e.what());
        }
        meta = meta_from_json(j);
    }
    return ValueTube(std::move(grid), std::move(taus), std::move(values), std::move(meta));
}

}  // namespace s2t
