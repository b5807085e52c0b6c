// grp-erase: train a toy base model, erase a concept, attack the result,
// compare runs and run the verification suites.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage or configuration error,
// 3 numeric abort, 4 corrupt or unreadable artifacts.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "aegis/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using aegis::experiment::ExperimentConfig;

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kNumeric = 3, kArtifact = 4 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::size_t jobs = 1;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_out, bool with_out = true) {
    sub->add_option("--config", c.config, "experiment config (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    auto* seed = sub->add_option("--seed", c.seed, "single seed");
    sub->add_option("--seeds", c.seeds, "comma-separated seed list")->delimiter(',')->excludes(seed);
    if (with_out) {
        c.out = default_out;
        sub->add_option("--out", c.out, "output directory")->capture_default_str();
    }
    sub->add_option("--jobs", c.jobs, "worker threads (GRP_ERASE_JOBS overrides)")->check(CLI::PositiveNumber);
}

std::size_t jobs_from(const Common& c) {
    if (const char* env = std::getenv("GRP_ERASE_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v < 1) throw std::invalid_argument("nonpositive");
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw aegis::ConfigError(std::string("GRP_ERASE_JOBS must be a positive integer, got '") + env + "'");
        }
    }
    return c.jobs;
}

ExperimentConfig load_config(const std::string& path) {
    return path.empty() ? ExperimentConfig{} : aegis::experiment::load(path);
}

std::vector<std::uint64_t> seed_list(const Common& c, const std::vector<std::uint64_t>& fallback) {
    if (c.seed) return {*c.seed};
    if (!c.seeds.empty()) return c.seeds;
    return fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept erasure with gradient regularization projection on a toy 2-D diffusion model"};
    app.name("grp-erase");
    app.require_subcommand(1, 1);

    Common train_c, erase_c, attack_c, report_c;
    auto* train = app.add_subcommand("train-base", "train the base noise predictor on the toy universe");
    add_common(train, train_c, "runs/base");

    auto* erase = app.add_subcommand("erase", "fine-tune the base model to erase concept c0");
    add_common(erase, erase_c, "runs/erase");
    std::string mode, base;
    erase->add_option("--mode", mode, "esd | esd_aet | aegis | aegis_fixed_omega | no_aet | no_pr | no_dgr")
        ->check(CLI::IsMember({"esd", "esd_aet", "aegis", "aegis_fixed_omega", "no_aet", "no_pr", "no_dgr"}));
    erase->add_option("--base", base, "base checkpoint, or a train-base output directory")->required();
    double omega0 = -1.0;
    erase->add_option("--omega0", omega0, "initial (or pinned) omega")->check(CLI::Range(0.0, 1.0));

    auto* attack = app.add_subcommand("attack", "optimize adversarial prompts against an erased model");
    add_common(attack, attack_c, "", false);
    std::string run_dir, ckpt;
    attack->add_option("--run", run_dir, "run directory produced by erase")->required();
    attack->add_option("--checkpoint", ckpt, "checkpoint to attack (default: <run>/erased.ckpt)");

    auto* rep = app.add_subcommand("report", "compare run directories: plots, comparison table, summary");
    report_c.out = "report";
    std::vector<std::string> runs;
    rep->add_option("runs", runs, "run directories")->required();
    rep->add_option("--out", report_c.out, "output directory")->capture_default_str();

    auto* verify = app.add_subcommand("verify", "run a verification suite");
    std::string suite, verify_out, grid_csv;
    aegis::pipeline::VerifyOptions vopt;
    verify->add_option("--suite", suite, "prop1 | thm1 | thm2 | gradcheck | grp-props")
        ->required()
        ->check(CLI::IsMember(aegis::pipeline::suite_names()));
    verify->add_option("--seed", vopt.seed, "suite seed")->capture_default_str();
    verify->add_option("--trials", vopt.trials, "override the suite's trial count");
    verify->add_option("--alpha-over-bound", vopt.alpha_over_bound,
                       "descent suite (thm1): step size as a multiple of 2/L (values above 1 exhibit the bound)")
        ->check(CLI::PositiveNumber);
    verify->add_option("--grid-csv", grid_csv, "retention grid suite (thm2): write the per-cell grid here");
    verify->add_option("--out", verify_out, "also write the JSON report here");
    verify->add_option("--jobs", vopt.jobs, "worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) {
            auto cfg = load_config(train_c.config);
            if (train_c.seed) cfg.train.seed = *train_c.seed;
            const auto r = aegis::pipeline::cmd_train_base(cfg, train_c.out);
            fmt::print("trained base model in {} (final loss {:.4f}, converged {})\n", r.dir.string(), r.final_loss,
                       r.converged);
        } else if (*erase) {
            auto cfg = load_config(erase_c.config);
            if (!mode.empty()) cfg.erasure.mode = aegis::erasure::parse_mode(mode);
            if (omega0 >= 0.0) cfg.erasure.omega0 = omega0;
            cfg.seeds = seed_list(erase_c, cfg.seeds);
            const auto dirs = aegis::pipeline::cmd_erase(cfg, base, erase_c.out, jobs_from(erase_c));
            for (const auto& d : dirs) fmt::print("{}\n", d.string());
        } else if (*attack) {
            const fs::path rd = run_dir;
            auto cfg = attack_c.config.empty() ? (fs::exists(rd / "config.json")
                                                      ? aegis::experiment::load(rd / "config.json")
                                                      : ExperimentConfig{})
                                               : aegis::experiment::load(attack_c.config);
            cfg.metrics.attack_seeds = seed_list(attack_c, cfg.metrics.attack_seeds);
            const auto s = aegis::pipeline::cmd_attack(cfg, rd, ckpt, jobs_from(attack_c));
            fmt::print("toy ASR {:.4f} over {} attacks\n", s.asr, s.seeds.size() * s.targets.size());
        } else if (*rep) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            const auto r = aegis::pipeline::cmd_report(dirs, report_c.out);
            fmt::print("report for {} run(s) in {}\n", r.runs, r.dir.string());
        } else if (*verify) {
            vopt.grid_csv = grid_csv;
            const auto r = aegis::pipeline::cmd_verify(suite, vopt);
            const std::string text = r.report.dump(2) + "\n";
            fmt::print("{}", text);
            if (!verify_out.empty()) aegis::report::write_file(verify_out, text);
            return r.passed ? kOk : kVerifyFailed;
        }
    } catch (const aegis::ArtifactError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kArtifact;
    } catch (const aegis::NumericError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kNumeric;
    } catch (const aegis::ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    } catch (const aegis::ContractError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    } catch (const aegis::ShapeError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kArtifact;
    }
    return kOk;
}
