#pragma once

// Pipeline stages behind the grp-erase tool. Each stage reads only persisted
// artifacts from earlier stages and writes a self-describing directory closed
// by a MANIFEST of SHA-256 hashes.
//
//   train-base   config.json universe.json train.csv base.ckpt metrics.json plots/d0.svg
//   erase        config.json base.ckpt erased.ckpt run.csv metrics.json plots/{d0,d1,conflict}.svg
//   attack       adds attacks/seed-<s>.csv, plots/d2.svg and the "attack" block of metrics.json
//   report       comparison.csv summary.json plots/<run>-{d0,d1,d2,conflict}.svg plots/conflict.svg

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "aegis/adversarial.hpp"
#include "aegis/checkpoint.hpp"
#include "aegis/concepts.hpp"
#include "aegis/diffusion.hpp"
#include "aegis/erasure.hpp"
#include "aegis/experiment.hpp"
#include "aegis/metrics.hpp"
#include "aegis/report.hpp"
#include "aegis/suites.hpp"
#include "aegis/theoremlab.hpp"

namespace aegis::pipeline {

namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using nlohmann::json;

/// Runs task(i) for i in [0, n) on up to `jobs` threads. The first failure in
/// index order is rethrown after all tasks finish.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                task(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline json read_json(const fs::path& p) {
    try {
        return json::parse(report::read_file(p));
    } catch (const json::exception& e) {
        throw ArtifactError(p.string() + ": " + e.what());
    }
}

inline std::vector<std::string> names(const std::vector<concepts::ConceptEmbedding>& cs) {
    std::vector<std::string> out;
    for (const auto& c : cs) out.push_back(c.name);
    return out;
}

inline json matrix_json(const metrics::DistanceMatrix& m) {
    return {{"kind", metrics::to_string(m.kind)}, {"names", m.names}, {"values", m.values}};
}

inline std::string matrix_svg(const metrics::DistanceMatrix& m, const std::string& title) {
    return report::heatmap_svg(m.values, m.names, m.names, title);
}

/// Universe and training provenance stored in the base checkpoint header.
inline json base_meta(const ExperimentConfig& c) {
    return {{"universe_seed", c.universe_seed},
            {"universe", c.universe},
            {"points_per_concept", c.points_per_concept},
            {"data_seed", c.data_seed},
            {"train", experiment::train_to_json(c.train)}};
}

inline void require_same_universe(const checkpoint::Checkpoint& base, const ExperimentConfig& c) {
    const json& m = base.meta;
    if (!m.contains("universe_seed") || !m.contains("universe"))
        throw ConfigError("base checkpoint carries no universe description");
    if (m.at("universe_seed").get<std::uint64_t>() != c.universe_seed ||
        m.at("universe").get<concepts::UniverseConfig>() != c.universe)
        throw ConfigError("base checkpoint was trained on a different universe than the config describes");
    if (base.params.arch != c.arch) throw ConfigError("base checkpoint architecture differs from the config");
    const auto s = c.schedule();
    if (base.schedule.T != s.T || base.schedule.beta_start != s.beta_start || base.schedule.beta_end != s.beta_end)
        throw ConfigError("base checkpoint noise schedule differs from the config");
}

/// A checkpoint path, or a directory holding base.ckpt. Missing is a usage error.
inline fs::path resolve_base(const fs::path& p) {
    const fs::path f = fs::is_directory(p) ? p / "base.ckpt" : p;
    if (!fs::exists(f)) throw ConfigError("base checkpoint not found: " + f.string());
    if (fs::exists(f.parent_path() / report::kManifestName)) report::verify_manifest(f.parent_path());
    return f;
}

// ---------------------------------------------------------------------------
// train-base

struct TrainBaseResult {
    fs::path dir;
    double final_loss = 0.0;
    bool converged = false;
};

inline TrainBaseResult cmd_train_base(const ExperimentConfig& cfg, const fs::path& out) {
    cfg.validate();
    fs::create_directories(out);
    const auto u = cfg.build_universe();
    const auto s = cfg.schedule();
    const auto data = concepts::make_dataset(u, cfg.points_per_concept, cfg.data_seed);
    const auto tr = diffusion::train_base(data, s, cfg.arch, cfg.train);

    report::write_file(out / "config.json", dump(experiment::to_json(cfg)));
    report::write_file(out / "universe.json", dump(concepts::universe_to_json(u)));
    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e)
        csv += std::to_string(e) + "," + erasure::fmt_double(tr.epoch_loss[e]) + "\n";
    report::write_file(out / "train.csv", csv);
    checkpoint::save(out / "base.ckpt", {s, tr.params, base_meta(cfg)});

    const auto all = u.all_concepts();
    const auto d0 = metrics::distance_matrix(metrics::DistanceKind::d0, tr.params, tr.params, all, s,
                                             cfg.metrics.z_protocol());
    const double final_loss = tr.epoch_loss.empty() ? 0.0 : tr.epoch_loss.back();
    report::write_file(out / "metrics.json",
                       dump({{"final_loss", final_loss}, {"converged", tr.converged}, {"d0", matrix_json(d0)}}));
    report::write_file(out / "plots" / "d0.svg", matrix_svg(d0, "d0 on the base model"));
    report::write_manifest(out);
    return {out, final_loss, tr.converged};
}

// ---------------------------------------------------------------------------
// erase

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed, std::size_t n_seeds) {
    return n_seeds == 1 ? out : out / ("seed-" + std::to_string(seed));
}

inline json erase_metrics(const erasure::RunResult& r, const diffusion::NoisePredictorParams& theta0,
                          const concepts::ConceptUniverse& u, const diffusion::NoiseSchedule& s,
                          const ExperimentConfig& cfg, std::uint64_t seed, metrics::DistanceMatrix* d0_out,
                          metrics::DistanceMatrix* d1_out) {
    const auto zp = cfg.metrics.z_protocol();
    const auto all = u.all_concepts();
    auto d0 = metrics::distance_matrix(metrics::DistanceKind::d0, theta0, theta0, all, s, zp);
    auto d1 = metrics::distance_matrix(metrics::DistanceKind::d1, r.theta, theta0, all, s, zp);
    std::size_t conflicts = 0;
    double omega_sum = 0.0;
    for (const auto& row : r.record.rows) {
        conflicts += row.conflict;
        omega_sum += row.omega;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, r.record.rows.size()));
    json j = {{"mode", erasure::to_string(cfg.erasure.mode)},
              {"seed", seed},
              {"theta_drift", num::norm(num::subtract(r.theta.theta, theta0.theta))},
              {"retention_drift", metrics::retention_drift(r.theta, theta0, u, s, cfg.metrics.drift())},
              {"final_L_e", r.record.rows.empty() ? 0.0 : r.record.rows.back().L_e},
              {"conflict_fraction", static_cast<double>(conflicts) / n},
              {"mean_omega", omega_sum / n},
              {"d0", matrix_json(d0)},
              {"d1", matrix_json(d1)}};
    if (d0_out) *d0_out = std::move(d0);
    if (d1_out) *d1_out = std::move(d1);
    return j;
}

inline std::string conflict_svg(const erasure::RunRecord& rec, const std::string& title) {
    report::Series cos{"cos_phi", {}}, omega{"omega", {}};
    for (const auto& r : rec.rows) {
        cos.y.push_back(r.cos_phi);
        omega.y.push_back(r.omega);
    }
    return report::line_plot_svg({cos, omega}, title, "epoch", "value");
}

/// One run directory per seed (the output directory itself for a single seed).
inline std::vector<fs::path> cmd_erase(ExperimentConfig cfg, const fs::path& base_path, const fs::path& out,
                                       std::size_t jobs = 1) {
    cfg.validate();
    const fs::path bp = resolve_base(base_path);
    const std::string base_bytes = report::read_file(bp);
    const auto base = checkpoint::deserialize(base_bytes);
    require_same_universe(base, cfg);
    const auto u = cfg.build_universe();
    const auto& s = base.schedule;
    const auto seeds = cfg.seeds;

    std::vector<fs::path> dirs;
    for (std::uint64_t sd : seeds) dirs.push_back(seed_dir(out, sd, seeds.size()));
    parallel_for(seeds.size(), jobs, [&](std::size_t i) {
        const std::uint64_t seed = seeds[i];
        const fs::path dir = dirs[i];
        fs::create_directories(dir);
        const auto r = erasure::run_aegis(base.params, u, s, cfg.erasure, seed);

        ExperimentConfig echo = cfg;
        echo.seeds = {seed};
        report::write_file(dir / "config.json", dump(experiment::to_json(echo)));
        report::write_file(dir / "base.ckpt", base_bytes);
        checkpoint::save(dir / "erased.ckpt",
                         {s, r.theta,
                          {{"mode", erasure::to_string(cfg.erasure.mode)},
                           {"seed", seed},
                           {"base_sha256", report::sha256_hex(base_bytes)}}});
        std::ostringstream csv;
        erasure::write_run_csv(csv, r.record);
        report::write_file(dir / "run.csv", csv.str());
        metrics::DistanceMatrix d0, d1;
        const json m = erase_metrics(r, base.params, u, s, cfg, seed, &d0, &d1);
        report::write_file(dir / "metrics.json", dump(m));
        report::write_file(dir / "plots" / "d0.svg", matrix_svg(d0, "d0 on the base model"));
        report::write_file(dir / "plots" / "d1.svg", matrix_svg(d1, "d1 after erasure"));
        report::write_file(dir / "plots" / "conflict.svg",
                           conflict_svg(r.record, fmt::format("{} seed {}: cos_phi and omega",
                                                              erasure::to_string(cfg.erasure.mode), seed)));
        report::write_manifest(dir);
    });
    return dirs;
}

// ---------------------------------------------------------------------------
// attack

struct AttackSummary {
    double asr = 0.0;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> targets;
    std::vector<std::vector<bool>> successes;  // [seed][target]
    std::vector<fs::path> traces;
};

inline constexpr const char* kAttackCsvHeader = "target,iteration,objective,success_so_far";

/// Attacks the erased model in `run_dir` (or `checkpoint_override`) with
/// every configured target per attack seed; one trace file per seed.
inline AttackSummary cmd_attack(const ExperimentConfig& cfg, const fs::path& run_dir,
                                const fs::path& checkpoint_override = {}, std::size_t jobs = 1) {
    cfg.validate();
    if (!fs::is_directory(run_dir)) throw ConfigError("run directory not found: " + run_dir.string());
    const fs::path target_ckpt = checkpoint_override.empty() ? run_dir / "erased.ckpt" : checkpoint_override;
    if (!fs::exists(target_ckpt)) throw ConfigError("checkpoint not found: " + target_ckpt.string());
    if (!fs::exists(run_dir / "base.ckpt")) throw ConfigError("base checkpoint not found in " + run_dir.string());
    report::verify_manifest(run_dir);
    const auto base = checkpoint::load(run_dir / "base.ckpt");
    require_same_universe(base, cfg);
    const auto erased = checkpoint::load(target_ckpt);
    if (erased.params.arch != base.params.arch) throw ArtifactError("erased checkpoint architecture differs from base");
    const auto u = cfg.build_universe();
    const auto& s = base.schedule;

    AttackSummary sum;
    sum.seeds = cfg.metrics.attack_seeds;
    sum.targets = cfg.metrics.attack_targets;
    const std::size_t nt = sum.targets.size();
    std::vector<adversarial::AttackResult> runs(sum.seeds.size() * nt);
    parallel_for(runs.size(), jobs, [&](std::size_t k) {
        const std::size_t target = sum.targets[k % nt];
        runs[k] = adversarial::run_attack(erased.params, base.params, u.erase_group.at(target), u, s, cfg.attack,
                                          sum.seeds[k / nt], adversarial::erase_member_points(u, target));
    });

    std::size_t hits = 0;
    json fractions = json::array();
    for (std::size_t i = 0; i < sum.seeds.size(); ++i) {
        std::string csv = std::string(kAttackCsvHeader) + "\n";
        sum.successes.emplace_back();
        json fr = json::array();
        for (std::size_t t = 0; t < nt; ++t) {
            const auto& r = runs[i * nt + t];
            const std::string name = u.erase_group.at(sum.targets[t]).name;
            for (const auto& row : r.trace)
                csv += name + "," + std::to_string(row.iteration) + "," + erasure::fmt_double(row.objective) + "," +
                       (row.success_so_far ? "1" : "0") + "\n";
            sum.successes.back().push_back(r.success);
            hits += r.success;
            fr.push_back(r.erased_fraction);
        }
        fractions.push_back(fr);
        const fs::path p = run_dir / "attacks" / ("seed-" + std::to_string(sum.seeds[i]) + ".csv");
        report::write_file(p, csv);
        sum.traces.push_back(p);
    }
    sum.asr = static_cast<double>(hits) / static_cast<double>(runs.size());

    // d2 over the attacked members, using the first attack seed's prompts.
    metrics::AttackMap prompts;
    std::vector<concepts::ConceptEmbedding> attacked;
    for (std::size_t t = 0; t < nt; ++t) {
        const auto& c = u.erase_group.at(sum.targets[t]);
        prompts[c.name] = runs[t].c_star;
        attacked.push_back(c);
    }
    const auto d2 = metrics::distance_matrix(metrics::DistanceKind::d2, erased.params, base.params, attacked, s,
                                             cfg.metrics.z_protocol(), &prompts);

    json m = fs::exists(run_dir / "metrics.json") ? read_json(run_dir / "metrics.json") : json::object();
    json targets = json::array();
    for (std::size_t t : sum.targets) targets.push_back(u.erase_group.at(t).name);
    m["attack"] = {{"config", cfg.attack},
                   {"seeds", sum.seeds},
                   {"targets", targets},
                   {"successes", sum.successes},
                   {"erased_fractions", fractions},
                   {"asr", sum.asr},
                   {"checkpoint", fs::relative(target_ckpt, run_dir).generic_string()}};
    m["d2"] = matrix_json(d2);
    report::write_file(run_dir / "metrics.json", dump(m));
    report::write_file(run_dir / "plots" / "d2.svg", matrix_svg(d2, "d2 against adversarial prompts"));
    report::write_manifest(run_dir);
    return sum;
}

// ---------------------------------------------------------------------------
// report

inline constexpr const char* kComparisonCsvHeader = "run,method,seed,toy_asr,retention_drift,theta_drift";

struct ReportResult {
    fs::path dir;
    std::size_t runs = 0;
};

inline std::vector<std::vector<double>> matrix_values(const json& m) {
    return m.at("values").get<std::vector<std::vector<double>>>();
}

inline std::vector<double> csv_column(const std::string& csv, const std::string& column) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw ArtifactError("empty CSV");
    std::size_t idx = 0, k = 0;
    bool found = false;
    std::istringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ','); ++k)
        if (cell == column) {
            idx = k;
            found = true;
        }
    if (!found) throw ArtifactError("CSV has no column '" + column + "'");
    std::vector<double> out;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string cell;
        for (std::size_t i = 0; i <= idx; ++i)
            if (!std::getline(ls, cell, ',')) throw ArtifactError("short CSV row");
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ArtifactError("non-numeric CSV cell '" + cell + "'");
        }
    }
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return NAN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline ReportResult cmd_report(const std::vector<fs::path>& runs, const fs::path& out) {
    if (runs.empty()) throw ConfigError("report: need at least one run directory");
    for (const auto& r : runs) {
        if (!fs::is_directory(r)) throw ConfigError("report: not a directory: " + r.string());
        report::verify_manifest(r);
    }
    fs::create_directories(out / "plots");
    std::string csv = std::string(kComparisonCsvHeader) + "\n";
    std::map<std::string, std::size_t> used;
    std::map<std::string, std::vector<double>> asr_by, drift_by, theta_by;
    std::vector<report::Series> traces;
    for (const auto& r : runs) {
        const json m = read_json(r / "metrics.json");
        if (!m.contains("mode") || !m.contains("d0") || !m.contains("d1"))
            throw ArtifactError(r.string() + ": metrics.json is not from an erase run");
        const std::string mode = m.at("mode").get<std::string>();
        const auto seed = m.at("seed").get<std::uint64_t>();
        std::string label = fmt::format("{}-seed{}", mode, seed);
        if (const std::size_t n = used[label]++; n > 0) label += "-" + std::to_string(n);

        const double drift = m.at("retention_drift").get<double>();
        const double theta_drift = m.at("theta_drift").get<double>();
        const bool attacked = m.contains("attack");
        const double asr = attacked ? m.at("attack").at("asr").get<double>() : NAN;
        csv += fmt::format("{},{},{},{},{},{}\n", label, mode, seed, attacked ? erasure::fmt_double(asr) : "",
                           erasure::fmt_double(drift), erasure::fmt_double(theta_drift));
        if (attacked) asr_by[mode].push_back(asr);
        drift_by[mode].push_back(drift);
        theta_by[mode].push_back(theta_drift);

        for (const char* k : {"d0", "d1", "d2"}) {
            if (!m.contains(k)) continue;
            const auto nm = m.at(k).at("names").get<std::vector<std::string>>();
            report::write_file(out / "plots" / (label + "-" + k + ".svg"),
                               report::heatmap_svg(matrix_values(m.at(k)), nm, nm, label + " " + k));
        }
        const std::string run_csv = report::read_file(r / "run.csv");
        const auto cos = csv_column(run_csv, "cos_phi");
        const auto omega = csv_column(run_csv, "omega");
        report::write_file(out / "plots" / (label + "-conflict.svg"),
                           report::line_plot_svg({{"cos_phi", cos}, {"omega", omega}}, label + ": conflict trace",
                                                 "epoch", "value"));
        traces.push_back({label, cos});
    }
    report::write_file(out / "comparison.csv", csv);
    report::write_file(out / "plots" / "conflict.svg",
                       report::line_plot_svg(traces, "cos_phi between erasing and retention gradients", "epoch",
                                             "cos_phi"));
    json summary = json::object();
    for (const auto& [mode, v] : drift_by)
        summary[mode] = {{"runs", v.size()},
                         {"median_retention_drift", median(v)},
                         {"median_theta_drift", median(theta_by[mode])},
                         {"median_toy_asr", asr_by.contains(mode) ? json(median(asr_by[mode])) : json(nullptr)}};
    report::write_file(out / "summary.json", dump(summary));
    report::write_manifest(out);
    return {out, runs.size()};
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
    std::uint64_t seed = 1;
    std::size_t trials = 0;          // 0 keeps the suite default
    double alpha_over_bound = 1.0;   // descent suite: alpha as a multiple of 2/L
    std::size_t jobs = 1;
    fs::path grid_csv;               // retention grid suite: optional per-cell CSV
};

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> n{"prop1", "thm1", "thm2", "gradcheck", "grp-props"};
    return n;
}

struct VerifyResult {
    bool passed = false;
    json report;
};

inline VerifyResult cmd_verify(const std::string& suite, const VerifyOptions& o = {}) {
    const auto pick = [&](std::size_t d) { return o.trials ? o.trials : d; };
    json j;
    bool ok = false;
    if (suite == "prop1") {
        const auto r = theoremlab::verify_prop1_vectors(pick(100000), 8, o.seed);
        j = r;
        ok = r.ok();
    } else if (suite == "thm1") {
        theoremlab::DescentSweepConfig c;
        c.trials = pick(c.trials);
        c.seed = o.seed;
        c.alpha_over_bound = o.alpha_over_bound;
        c.force_bound = o.alpha_over_bound > 1.0;
        const auto r = theoremlab::descent_sweep(c);
        j = r;
        ok = r.passed();
    } else if (suite == "thm2") {
        auto c = theoremlab::RetentionGridConfig::standard();
        c.seed = o.seed;
        c.jobs = o.jobs;
        const auto r = theoremlab::retention_grid(c);
        if (!o.grid_csv.empty()) {
            std::ostringstream os;
            theoremlab::write_retention_grid_csv(os, r);
            report::write_file(o.grid_csv, os.str());
        }
        j = r.summary;
        ok = r.summary.passed();
    } else if (suite == "gradcheck") {
        const auto r = suites::gradcheck_suite(pick(100), o.seed);
        j = r;
        ok = r.passed();
    } else if (suite == "grp-props") {
        const auto r = suites::grp_property_suite(pick(10000), o.seed);
        j = r;
        ok = r.passed();
    } else {
        throw ConfigError("unknown suite '" + suite + "'");
    }
    return {ok, {{"suite", suite}, {"passed", ok}, {"report", j}}};
}

}  // namespace aegis::pipeline
