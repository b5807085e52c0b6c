#pragma once

// Experiment configuration: everything a pipeline stage needs, read from one
// JSON document with unknown keys rejected, and echoed back normalized.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aegis/adversarial.hpp"
#include "aegis/checkpoint.hpp"
#include "aegis/concepts.hpp"
#include "aegis/diffusion.hpp"
#include "aegis/erasure.hpp"
#include "aegis/metrics.hpp"

namespace aegis::experiment {

struct MetricProtocolConfig {
    std::size_t z_seeds = 16;  // fixed latents at t = T for the distance matrices
    std::uint64_t drift_seed = 77;
    std::size_t drift_draws = 64;  // per retained concept
    std::vector<std::uint64_t> attack_seeds{100, 101};
    std::vector<std::size_t> attack_targets{0, 1, 2, 3, 4};  // erase-group members attacked

    metrics::ZProtocol z_protocol() const { return metrics::ZProtocol::standard(z_seeds); }
    metrics::DriftProtocol drift() const { return {drift_seed, drift_draws}; }
};

struct ExperimentConfig {
    std::uint64_t universe_seed = 1;
    concepts::UniverseConfig universe;
    std::size_t T = 50;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    diffusion::Architecture arch;
    std::size_t points_per_concept = 400;
    std::uint64_t data_seed = 1;
    diffusion::TrainConfig train = default_train();
    erasure::ErasureConfig erasure = default_erasure();
    adversarial::AttackConfig attack = adversarial::attack_defaults();
    MetricProtocolConfig metrics;
    std::vector<std::uint64_t> seeds{0};

    static diffusion::TrainConfig default_train() {
        diffusion::TrainConfig t;
        t.epochs = 200;
        t.lr = 0.05;
        t.seed = 1;
        return t;
    }

    /// Toy-scale step size; every other erasure setting keeps its method default.
    static erasure::ErasureConfig default_erasure() {
        erasure::ErasureConfig e;
        e.alpha = 2e-2;
        return e;
    }

    diffusion::NoiseSchedule schedule() const { return diffusion::make_schedule(T, beta_start, beta_end); }
    concepts::ConceptUniverse build_universe() const { return concepts::build_universe(universe_seed, universe); }

    void validate() const {
        concepts::validate(universe);
        (void)schedule();
        if (arch.concept_dim != universe.m)
            throw ConfigError("arch.concept_dim (" + std::to_string(arch.concept_dim) + ") must equal universe.m (" +
                              std::to_string(universe.m) + ")");
        if (arch.z_dim != 2) throw ConfigError("arch.z_dim must be 2");
        if (arch.hidden < 1 || arch.temb_dim < 2 || arch.temb_dim % 2 != 0)
            throw ConfigError("arch: hidden must be >= 1 and temb_dim an even number >= 2");
        if (points_per_concept < 1) throw ConfigError("points_per_concept must be >= 1");
        if (!(train.lr > 0.0) || train.batch < 1 || train.epochs < 1)
            throw ConfigError("train: epochs, batch and lr must be positive");
        if (!(train.null_prob >= 0.0 && train.null_prob < 1.0)) throw ConfigError("train.null_prob must lie in [0, 1)");
        erasure.validate();
        attack.validate(true);
        if (attack.init.start + attack.segment_len > universe.m)
            throw ConfigError("attack segment does not fit in the concept embedding");
        for (const auto* c : {&erasure.aet, &erasure.adv})
            if (c->init.start + c->segment_len > universe.m)
                throw ConfigError("erasure segment does not fit in the concept embedding");
        if (metrics.z_seeds < 1 || metrics.drift_draws < 1) throw ConfigError("metrics: protocol sizes must be >= 1");
        if (metrics.attack_seeds.empty()) throw ConfigError("metrics.attack_seeds must be nonempty");
        if (metrics.attack_targets.empty()) throw ConfigError("metrics.attack_targets must be nonempty");
        for (std::size_t t : metrics.attack_targets)
            if (t >= concepts::kEraseGroupSize) throw ConfigError("metrics.attack_targets: index out of range");
        if (seeds.empty()) throw ConfigError("seeds must be nonempty");
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

inline void check_attack_keys(const nlohmann::json& j, const std::string& where) {
    check_keys(j,
               {"step", "iterations", "segment_len", "segment_start", "init_half_width", "sign_update", "warm_start",
                "optimizer", "batch", "eval_every", "stop_on_success", "samples", "threshold"},
               where);
}

}  // namespace detail

inline nlohmann::json train_to_json(const diffusion::TrainConfig& t) {
    return {{"epochs", t.epochs},     {"batch", t.batch},
            {"lr", t.lr},             {"seed", t.seed},
            {"null_prob", t.null_prob}, {"optimizer", diffusion::to_string(t.optimizer)},
            {"loss_threshold", t.loss_threshold}};
}

inline diffusion::TrainConfig train_from_json(const nlohmann::json& j, diffusion::TrainConfig d) {
    detail::check_keys(j, {"epochs", "batch", "lr", "seed", "null_prob", "optimizer", "loss_threshold"}, "train");
    d.epochs = j.value("epochs", d.epochs);
    d.batch = j.value("batch", d.batch);
    d.lr = j.value("lr", d.lr);
    d.seed = j.value("seed", d.seed);
    d.null_prob = j.value("null_prob", d.null_prob);
    if (j.contains("optimizer")) d.optimizer = diffusion::parse_optimizer(j.at("optimizer").get<std::string>());
    d.loss_threshold = j.value("loss_threshold", d.loss_threshold);
    return d;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"universe_seed", c.universe_seed},
            {"universe", c.universe},
            {"schedule", {{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}},
            {"arch", checkpoint::arch_json(c.arch)},
            {"points_per_concept", c.points_per_concept},
            {"data_seed", c.data_seed},
            {"train", train_to_json(c.train)},
            {"erasure", c.erasure},
            {"attack", c.attack},
            {"metrics",
             {{"z_seeds", c.metrics.z_seeds},
              {"drift_seed", c.metrics.drift_seed},
              {"drift_draws", c.metrics.drift_draws},
              {"attack_seeds", c.metrics.attack_seeds},
              {"attack_targets", c.metrics.attack_targets}}},
            {"seeds", c.seeds}};
}

/// Missing keys keep their defaults; unknown keys and invalid values raise ConfigError.
inline ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        detail::check_keys(j,
                           {"universe_seed", "universe", "schedule", "arch", "points_per_concept", "data_seed", "train",
                            "erasure", "attack", "metrics", "seeds"},
                           "config");
        c.universe_seed = j.value("universe_seed", c.universe_seed);
        if (j.contains("universe")) {
            detail::check_keys(j.at("universe"),
                               {"m", "prefix_slots", "center_norm", "member_radius", "c1_spread", "retained_radius",
                                "retained", "data_radius", "cluster_std", "member_shift"},
                               "universe");
            c.universe = j.at("universe").get<concepts::UniverseConfig>();
            c.arch.concept_dim = c.universe.m;
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            detail::check_keys(s, {"T", "beta_start", "beta_end"}, "schedule");
            c.T = s.value("T", c.T);
            c.beta_start = s.value("beta_start", c.beta_start);
            c.beta_end = s.value("beta_end", c.beta_end);
        }
        if (j.contains("arch")) {
            const auto& a = j.at("arch");
            detail::check_keys(a, {"z_dim", "temb_dim", "concept_dim", "hidden", "depth"}, "arch");
            c.arch.z_dim = a.value("z_dim", c.arch.z_dim);
            c.arch.temb_dim = a.value("temb_dim", c.arch.temb_dim);
            c.arch.concept_dim = a.value("concept_dim", c.arch.concept_dim);
            c.arch.hidden = a.value("hidden", c.arch.hidden);
            c.arch.depth = a.value("depth", c.arch.depth);
        }
        c.points_per_concept = j.value("points_per_concept", c.points_per_concept);
        c.data_seed = j.value("data_seed", c.data_seed);
        if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
        if (j.contains("erasure")) {
            const auto& e = j.at("erasure");
            detail::check_keys(e,
                               {"mode", "eta", "alpha", "epochs", "aet", "adv", "omega0", "mu", "granularity",
                                "optimizer", "batch", "retain_batch", "log_block_cosines"},
                               "erasure");
            if (e.contains("aet")) detail::check_attack_keys(e.at("aet"), "erasure.aet");
            if (e.contains("adv")) detail::check_attack_keys(e.at("adv"), "erasure.adv");
            c.erasure = erasure::erasure_from_json(e, c.erasure);
        }
        if (j.contains("attack")) {
            detail::check_attack_keys(j.at("attack"), "attack");
            c.attack = adversarial::attack_from_json(j.at("attack"), c.attack);
        }
        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            detail::check_keys(m, {"z_seeds", "drift_seed", "drift_draws", "attack_seeds", "attack_targets"}, "metrics");
            c.metrics.z_seeds = m.value("z_seeds", c.metrics.z_seeds);
            c.metrics.drift_seed = m.value("drift_seed", c.metrics.drift_seed);
            c.metrics.drift_draws = m.value("drift_draws", c.metrics.drift_draws);
            c.metrics.attack_seeds = m.value("attack_seeds", c.metrics.attack_seeds);
            c.metrics.attack_targets = m.value("attack_targets", c.metrics.attack_targets);
        }
        c.seeds = j.value("seeds", c.seeds);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace aegis::experiment
