#pragma once

// Synthetic concept universe: five erase-group embeddings (two close
// "synonyms" forming C1, three farther members forming C2) that all map to one
// data cluster, plus retained concepts with clusters of their own.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/diffusion.hpp"
#include "aegis/errors.hpp"
#include "aegis/rng.hpp"
#include "aegis/tensor.hpp"

namespace aegis::concepts {

using diffusion::LabeledPoint;
using diffusion::Point;
using num::Vec;

struct ConceptEmbedding {
    std::string name;
    Vec v;
    std::size_t learnable_start = 0;
    std::size_t learnable_len = 0;

    std::size_t dim() const { return v.size(); }
    bool is_learnable(std::size_t i) const { return i >= learnable_start && i < learnable_start + learnable_len; }

    void validate() const {
        if (learnable_start + learnable_len > v.size())
            throw ShapeError("concept '" + name + "': learnable segment [" + std::to_string(learnable_start) + ", " +
                             std::to_string(learnable_start + learnable_len) + ") exceeds dimension " +
                             std::to_string(v.size()));
        if (!num::all_finite(v)) throw NumericError("concept '" + name + "': non-finite coordinate");
    }
};

/// Add `delta` to the learnable coordinates only.
inline void apply_segment_update(ConceptEmbedding& c, std::span<const double> delta) {
    if (delta.size() != c.dim()) throw ShapeError("segment update: dimension mismatch");
    for (std::size_t i = c.learnable_start; i < c.learnable_start + c.learnable_len; ++i) c.v[i] += delta[i];
}

struct LearnableInit {
    std::size_t start = 0;      // prefix by default
    double half_width = 0.1;    // segment drawn from U[-half_width, half_width]
};

/// Copy of `tmpl` whose segment [start, start+len) is redrawn at random.
inline ConceptEmbedding init_learnable(const ConceptEmbedding& tmpl, std::size_t len, std::uint64_t seed,
                                       const LearnableInit& init = {}) {
    if (len < 1) throw ContractError("init_learnable: segment length must be >= 1");
    if (len > tmpl.dim())
        throw ConfigError("init_learnable: segment length " + std::to_string(len) + " exceeds dimension " +
                          std::to_string(tmpl.dim()));
    if (init.start + len > tmpl.dim()) throw ConfigError("init_learnable: segment does not fit after its start index");
    ConceptEmbedding out = tmpl;
    out.learnable_start = init.start;
    out.learnable_len = len;
    Rng rng = Rng::stream(seed, "learnable:" + tmpl.name);
    for (std::size_t i = init.start; i < init.start + len; ++i) out.v[i] = rng.uniform(-init.half_width, init.half_width);
    return out;
}

// ---------------------------------------------------------------------------
// Universe

struct UniverseConfig {
    std::size_t m = 8;
    /// Leading coordinates held at zero in every concept; free room for learnable segments.
    std::size_t prefix_slots = 5;
    double center_norm = 2.5;      // norm of the erase-group centre; keeps members away from the null input
    double member_radius = 1.0;    // distance of each erase-group member from that centre
    double c1_spread = 0.1;        // half-distance between the two C1 members
    double retained_radius = 2.5;  // distance of retained embeddings from the erase centre
    std::size_t retained = 3;
    double data_radius = 3.0;      // cluster centroids sit on a circle of this radius
    double cluster_std = 0.3;
    double member_shift = 0.6;     // per-member offset of the data mean inside the erase cluster

    friend bool operator==(const UniverseConfig&, const UniverseConfig&) = default;
};

inline constexpr std::size_t kEraseGroupSize = 5;

struct ConceptUniverse {
    UniverseConfig config;
    std::uint64_t seed = 0;
    std::vector<ConceptEmbedding> erase_group;  // c^0..c^4
    std::vector<ConceptEmbedding> retained;
    std::vector<std::size_t> c1{0, 1};
    std::vector<std::size_t> c2{2, 3, 4};
    std::vector<Point> centroids;        // [0] erase cluster, [1..] retained clusters
    std::vector<Point> erase_means;      // data mean per erase-group member
    double cluster_std = 0.0;

    std::size_t dim() const { return config.m; }
    const ConceptEmbedding& erased() const { return erase_group.at(0); }

    std::vector<ConceptEmbedding> all_concepts() const {
        std::vector<ConceptEmbedding> out = erase_group;
        out.insert(out.end(), retained.begin(), retained.end());
        return out;
    }
};

inline double embedding_distance(const ConceptEmbedding& a, const ConceptEmbedding& b) {
    return num::norm(num::subtract(a.v, b.v));
}

/// Index of the nearest centroid; 0 is the erase cluster.
inline std::size_t nearest_centroid(const std::vector<Point>& centroids, const Point& p) {
    std::size_t best = 0;
    double bd = INFINITY;
    for (std::size_t k = 0; k < centroids.size(); ++k) {
        const double dx = p[0] - centroids[k][0], dy = p[1] - centroids[k][1];
        const double d = dx * dx + dy * dy;
        if (d < bd) {
            bd = d;
            best = k;
        }
    }
    return best;
}

namespace detail {

/// Unit vectors in a k-dimensional subspace: orthonormal while k allows it,
/// random unit vectors afterwards.
inline std::vector<Vec> directions(std::size_t count, std::size_t k, Rng& rng) {
    std::vector<Vec> out;
    while (out.size() < count) {
        Vec g(k);
        for (double& x : g) x = rng.normal();
        if (out.size() < k)
            for (const Vec& q : out) g = num::axpy(-num::dot(g, q), q, g);
        const double n = num::norm(g);
        if (n < 1e-8) continue;
        out.push_back(num::scaled(1.0 / n, g));
    }
    return out;
}

inline ConceptEmbedding embed(std::string name, const UniverseConfig& cfg, const Vec& content) {
    ConceptEmbedding c{std::move(name), Vec(cfg.m, 0.0), 0, 0};
    std::copy(content.begin(), content.end(), c.v.begin() + static_cast<std::ptrdiff_t>(cfg.prefix_slots));
    return c;
}

}  // namespace detail

inline void validate(const UniverseConfig& c) {
    if (c.m < 4) throw ConfigError("universe: embedding dimension m must be >= 4");
    if (c.prefix_slots + 2 > c.m) throw ConfigError("universe: prefix slots leave fewer than 2 content coordinates");
    if (!(c.member_radius > 0.0) || !(c.c1_spread > 0.0) || !(c.retained_radius > 0.0) || !(c.data_radius > 0.0) ||
        !(c.cluster_std > 0.0))
        throw ConfigError("universe: degenerate spread (all separations must be positive)");
    if (c.retained < 3) throw ConfigError("universe: need at least 3 retained concepts");
    if (c.member_shift < 0.0) throw ConfigError("universe: member_shift must be nonnegative");
}

inline ConceptUniverse build_universe(std::uint64_t seed, const UniverseConfig& cfg = {}) {
    validate(cfg);
    ConceptUniverse u;
    u.config = cfg;
    u.seed = seed;
    u.cluster_std = cfg.cluster_std;
    Rng rng = Rng::stream(seed, "universe");
    const std::size_t k = cfg.m - cfg.prefix_slots;

    Vec center(k);
    for (double& x : center) x = rng.normal();
    center = num::scaled(cfg.center_norm / num::norm(center), center);

    // w: C1 direction, u1: C1 split direction, v_j: C2 directions, q_i: retained directions.
    const auto dirs = detail::directions(2 + 3 + cfg.retained, k, rng);
    const Vec& w = dirs[0];
    const Vec& split = dirs[1];
    for (int s : {+1, -1}) {
        Vec p = num::axpy(cfg.member_radius, w, center);
        p = num::axpy(s * cfg.c1_spread, split, p);
        u.erase_group.push_back(detail::embed("c" + std::to_string(u.erase_group.size()), cfg, p));
    }
    for (std::size_t j = 0; j < 3; ++j)
        u.erase_group.push_back(detail::embed("c" + std::to_string(u.erase_group.size()), cfg,
                                              num::axpy(cfg.member_radius, dirs[2 + j], center)));
    for (std::size_t i = 0; i < cfg.retained; ++i)
        u.retained.push_back(
            detail::embed("r" + std::to_string(i), cfg, num::axpy(cfg.retained_radius, dirs[5 + i], center)));

    double c1_max = 0.0, cross_min = INFINITY;
    for (std::size_t a : u.c1) {
        for (std::size_t b : u.c1)
            if (a < b) c1_max = std::max(c1_max, embedding_distance(u.erase_group[a], u.erase_group[b]));
        for (std::size_t b : u.c2) cross_min = std::min(cross_min, embedding_distance(u.erase_group[a], u.erase_group[b]));
    }
    if (!(c1_max < cross_min))
        throw ConfigError("universe: C1 members are not mutually closer than C1-C2 pairs (max " +
                          std::to_string(c1_max) + " vs min " + std::to_string(cross_min) + ")");

    // Data space: clusters evenly spaced on a circle with a random phase.
    const std::size_t n_clusters = 1 + cfg.retained;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n_clusters; ++i) {
        const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_clusters);
        u.centroids.push_back({cfg.data_radius * std::cos(a), cfg.data_radius * std::sin(a)});
    }
    for (std::size_t i = 1; i < n_clusters; ++i) {
        const double dx = u.centroids[i][0] - u.centroids[0][0], dy = u.centroids[i][1] - u.centroids[0][1];
        if (std::hypot(dx, dy) < 4.0 * cfg.cluster_std)
            throw ConfigError("universe: retained centroid within 4 standard deviations of the erase centroid");
    }
    // C1 members share a shift direction; C2 members are spread around the rest of the circle.
    const double psi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double offsets[kEraseGroupSize] = {0.0, 0.2, std::numbers::pi / 2, std::numbers::pi, 1.5 * std::numbers::pi};
    for (double off : offsets)
        u.erase_means.push_back({u.centroids[0][0] + cfg.member_shift * std::cos(psi + off),
                                 u.centroids[0][1] + cfg.member_shift * std::sin(psi + off)});
    return u;
}

/// n points per concept from its data distribution, in concept order
/// (erase group, then retained).
inline std::vector<LabeledPoint> make_dataset(const ConceptUniverse& u, std::size_t n_per_concept,
                                              std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "dataset");
    std::vector<LabeledPoint> out;
    auto emit = [&](const ConceptEmbedding& c, const Point& mean) {
        for (std::size_t i = 0; i < n_per_concept; ++i) {
            const double a = rng.normal(), b = rng.normal();
            out.push_back({{mean[0] + u.cluster_std * a, mean[1] + u.cluster_std * b}, c.v});
        }
    };
    for (std::size_t i = 0; i < u.erase_group.size(); ++i) emit(u.erase_group[i], u.erase_means[i]);
    for (std::size_t i = 0; i < u.retained.size(); ++i) emit(u.retained[i], u.centroids[1 + i]);
    return out;
}

/// One draw from the data distribution of erase-group member `i`.
inline Point draw_erase_point(const ConceptUniverse& u, std::size_t i, Rng& rng) {
    const Point& m = u.erase_means.at(i);
    const double a = rng.normal(), b = rng.normal();
    return {m[0] + u.cluster_std * a, m[1] + u.cluster_std * b};
}

inline Point draw_retained_point(const ConceptUniverse& u, std::size_t i, Rng& rng) {
    const Point& m = u.centroids.at(1 + i);
    const double a = rng.normal(), b = rng.normal();
    return {m[0] + u.cluster_std * a, m[1] + u.cluster_std * b};
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const ConceptEmbedding& c) {
    j = {{"name", c.name}, {"v", c.v}, {"learnable_start", c.learnable_start}, {"learnable_len", c.learnable_len}};
}

inline void from_json(const nlohmann::json& j, ConceptEmbedding& c) {
    j.at("name").get_to(c.name);
    j.at("v").get_to(c.v);
    c.learnable_start = j.value("learnable_start", std::size_t{0});
    c.learnable_len = j.value("learnable_len", std::size_t{0});
    c.validate();
}

inline void to_json(nlohmann::json& j, const UniverseConfig& c) {
    j = {{"m", c.m},
         {"prefix_slots", c.prefix_slots},
         {"center_norm", c.center_norm},
         {"member_radius", c.member_radius},
         {"c1_spread", c.c1_spread},
         {"retained_radius", c.retained_radius},
         {"retained", c.retained},
         {"data_radius", c.data_radius},
         {"cluster_std", c.cluster_std},
         {"member_shift", c.member_shift}};
}

inline void from_json(const nlohmann::json& j, UniverseConfig& c) {
    const UniverseConfig d;
    c.m = j.value("m", d.m);
    c.prefix_slots = j.value("prefix_slots", d.prefix_slots);
    c.center_norm = j.value("center_norm", d.center_norm);
    c.member_radius = j.value("member_radius", d.member_radius);
    c.c1_spread = j.value("c1_spread", d.c1_spread);
    c.retained_radius = j.value("retained_radius", d.retained_radius);
    c.retained = j.value("retained", d.retained);
    c.data_radius = j.value("data_radius", d.data_radius);
    c.cluster_std = j.value("cluster_std", d.cluster_std);
    c.member_shift = j.value("member_shift", d.member_shift);
    validate(c);
}

inline nlohmann::json universe_to_json(const ConceptUniverse& u) {
    auto points = [](const std::vector<Point>& ps) {
        nlohmann::json a = nlohmann::json::array();
        for (const Point& p : ps) a.push_back({p[0], p[1]});
        return a;
    };
    return {{"config", u.config},
            {"seed", u.seed},
            {"erase_group", u.erase_group},
            {"retained", u.retained},
            {"groups", {{"C0", {0, 1, 2, 3, 4}}, {"C1", u.c1}, {"C2", u.c2}}},
            {"centroids", points(u.centroids)},
            {"erase_means", points(u.erase_means)},
            {"cluster_std", u.cluster_std}};
}

inline ConceptUniverse universe_from_json(const nlohmann::json& j) {
    ConceptUniverse u;
    try {
        u.config = j.at("config").get<UniverseConfig>();
        u.seed = j.at("seed").get<std::uint64_t>();
        u.erase_group = j.at("erase_group").get<std::vector<ConceptEmbedding>>();
        u.retained = j.at("retained").get<std::vector<ConceptEmbedding>>();
        u.c1 = j.at("groups").at("C1").get<std::vector<std::size_t>>();
        u.c2 = j.at("groups").at("C2").get<std::vector<std::size_t>>();
        for (const auto& p : j.at("centroids")) u.centroids.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        for (const auto& p : j.at("erase_means")) u.erase_means.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        u.cluster_std = j.at("cluster_std").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("universe json: ") + e.what());
    }
    if (u.erase_group.size() != kEraseGroupSize || u.centroids.size() != 1 + u.retained.size() ||
        u.erase_means.size() != kEraseGroupSize)
        throw ArtifactError("universe json: inconsistent group sizes");
    return u;
}

}  // namespace aegis::concepts
