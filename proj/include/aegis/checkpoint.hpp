#pragma once

// Checkpoint container (see docs/checkpoint-format.md):
//
//   bytes 0..7    magic "AEGISCKP"
//   bytes 8..11   format version, u32 little-endian
//   bytes 12..19  header length H, u64 little-endian
//   next H bytes  UTF-8 JSON header: schedule, architecture, block map, count, meta
//   remainder     count parameters, f64 little-endian

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/diffusion.hpp"
#include "aegis/errors.hpp"

namespace aegis::checkpoint {

inline constexpr std::array<char, 8> kMagic = {'A', 'E', 'G', 'I', 'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
    diffusion::NoiseSchedule schedule;
    diffusion::NoisePredictorParams params;
    nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline nlohmann::json arch_json(const diffusion::Architecture& a) {
    return {{"z_dim", a.z_dim}, {"temb_dim", a.temb_dim}, {"concept_dim", a.concept_dim}, {"hidden", a.hidden},
            {"depth", a.depth}};
}

inline diffusion::Architecture arch_from_json(const nlohmann::json& j) {
    diffusion::Architecture a;
    a.z_dim = j.at("z_dim").get<std::size_t>();
    a.temb_dim = j.at("temb_dim").get<std::size_t>();
    a.concept_dim = j.at("concept_dim").get<std::size_t>();
    a.hidden = j.at("hidden").get<std::size_t>();
    a.depth = j.at("depth").get<std::size_t>();
    return a;
}

inline std::string serialize(const Checkpoint& ck) {
    ck.params.validate();
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : ck.params.blocks)
        blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
    const nlohmann::json header = {
        {"schedule", {{"T", ck.schedule.T}, {"beta_start", ck.schedule.beta_start}, {"beta_end", ck.schedule.beta_end}}},
        {"arch", arch_json(ck.params.arch)},
        {"blocks", blocks},
        {"count", ck.params.theta.size()},
        {"meta", ck.meta}};
    const std::string h = header.dump();
    std::string out(kMagic.begin(), kMagic.end());
    detail::put_le<std::uint32_t>(out, kVersion);
    detail::put_le<std::uint64_t>(out, h.size());
    out += h;
    for (double v : ck.params.theta) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
        throw ArtifactError("checkpoint: bad magic");
    const auto version = detail::get_le<std::uint32_t>(p + 8);
    if (version != kVersion) throw ArtifactError("checkpoint: unsupported version " + std::to_string(version));
    const auto hlen = detail::get_le<std::uint64_t>(p + 12);
    if (hlen > bytes.size() - 20) throw ArtifactError("checkpoint: truncated header");
    Checkpoint ck;
    std::size_t count = 0;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(20, hlen));
        const auto& s = header.at("schedule");
        ck.schedule = diffusion::make_schedule(s.at("T").get<std::size_t>(), s.at("beta_start").get<double>(),
                                               s.at("beta_end").get<double>());
        ck.params = diffusion::zero_params(arch_from_json(header.at("arch")));
        diffusion::BlockMap stored;
        for (const auto& b : header.at("blocks"))
            stored.push_back({b.at("name").get<std::string>(), b.at("offset").get<std::size_t>(),
                              b.at("rows").get<std::size_t>(), b.at("cols").get<std::size_t>()});
        if (stored != ck.params.blocks) throw ArtifactError("checkpoint: block map does not match architecture");
        count = header.at("count").get<std::size_t>();
        ck.meta = header.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("checkpoint: header ") + e.what());
    } catch (const ConfigError& e) {
        throw ArtifactError(std::string("checkpoint: ") + e.what());
    }
    if (count != ck.params.theta.size()) throw ArtifactError("checkpoint: parameter count mismatch");
    if (bytes.size() != 20 + hlen + 8 * count) throw ArtifactError("checkpoint: payload size mismatch");
    const unsigned char* q = p + 20 + hlen;
    for (std::size_t i = 0; i < count; ++i)
        ck.params.theta[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(q + 8 * i));
    if (!num::all_finite(ck.params.theta)) throw ArtifactError("checkpoint: non-finite parameter");
    return ck;
}

inline void save(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ArtifactError("cannot write " + path.string());
    const std::string bytes = serialize(ck);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ArtifactError("write failed for " + path.string());
}

inline Checkpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArtifactError("cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace aegis::checkpoint
