#pragma once

// Shared fixtures: the standard trained base model, cached on disk so the
// test binaries train it once per build tree.

#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <unistd.h>

#include "aegis/checkpoint.hpp"
#include "aegis/experiment.hpp"

#ifndef AEGIS_TEST_CACHE
#define AEGIS_TEST_CACHE "test-cache"
#endif

namespace aegis::fixtures {

struct StandardBase {
    experiment::ExperimentConfig config;
    concepts::ConceptUniverse universe;
    diffusion::NoiseSchedule schedule;
    diffusion::NoisePredictorParams theta0;
};

inline const StandardBase& standard_base() {
    static StandardBase base;
    static std::once_flag once;
    std::call_once(once, [] {
        namespace fs = std::filesystem;
        base.config = experiment::ExperimentConfig{};
        base.universe = base.config.build_universe();
        base.schedule = base.config.schedule();
        const fs::path dir = AEGIS_TEST_CACHE;
        // Keyed by the config so a change of defaults never reuses a stale model.
        const auto key = std::hash<std::string>{}(experiment::to_json(base.config).dump());
        const fs::path path = dir / ("standard-base-" + std::to_string(key) + ".ckpt");
        if (fs::exists(path)) {
            base.theta0 = checkpoint::load(path).params;
            return;
        }
        const auto data = concepts::make_dataset(base.universe, base.config.points_per_concept, base.config.data_seed);
        base.theta0 = diffusion::train_base(data, base.schedule, base.config.arch, base.config.train).params;
        fs::create_directories(dir);
        const fs::path tmp = dir / (path.filename().string() + ".tmp" + std::to_string(::getpid()));
        checkpoint::save(tmp, {base.schedule, base.theta0, {}});
        fs::rename(tmp, path);
    });
    return base;
}

}  // namespace aegis::fixtures
