#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsr/data.hpp"
#include "advsr/evaluation.hpp"
#include "advsr/loss.hpp"
#include "advsr/models.hpp"
#include "advsr/training.hpp"

namespace advsr::exp {

inline constexpr const char* kToolVersion = "1.0.0";

struct PhaseConfig {
    int epochs = 60;
    double lr = 1e-4;
    train::Selection selection = train::Selection::best_val;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    data::DataConfig data;
    loss::AttackSpec attack;

    ClassifierConfig classifier;
    int classifier_epochs = 30;
    int classifier_batch = 32;
    double classifier_lr = 1e-3;

    SrConfig sr;
    int sr_batch = 16;
    train::Mode sr_mode = train::Mode::sr_advsr;
    double r = 0.1;
    PhaseConfig clean{60, 1e-4, train::Selection::best_val};
    PhaseConfig advsr{60, 1e-4, train::Selection::final_epoch};
    std::vector<double> sweep_r{0.05, 0.1, 0.5, 1.0, 5.0};

    std::filesystem::path run_dir = "runs/default";

    // Strict parse: unknown keys, wrong types and out-of-range values throw
    // ConfigError naming the offending key.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::ordered_json to_json() const;
    void validate() const;

    train::TrainConfig train_config(train::Mode mode) const;
};

// Seeds derived from the run seed, one per consumer.
struct ResolvedSeeds {
    std::uint64_t data = 0;
    std::uint64_t classifier = 0;
    std::uint64_t sr = 0;
    std::uint64_t featnet = 0;
};

ResolvedSeeds resolve_seeds(std::uint64_t seed);

// Applies ADVSR_SEED when set.
void apply_env_overrides(ExperimentConfig& cfg);

// On-disk layout under the run directory.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path data_dir() const { return root / "data"; }
    std::filesystem::path split_file(const std::string& split) const { return data_dir() / (split + ".advd"); }
    std::filesystem::path phase_dir(train::Mode mode) const;
    std::filesystem::path checkpoint(train::Mode mode) const { return phase_dir(mode) / "weights.advw"; }
    std::filesystem::path eval_dir(const std::string& name) const { return root / "eval" / name; }
    std::filesystem::path sweep_dir() const { return root / "sweep"; }
};

using Logger = std::function<void(const std::string&)>;

struct CommandContext {
    ExperimentConfig config;
    std::filesystem::path config_path;
    RunLayout layout;
    Logger log;
};

CommandContext make_context(const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& out,
                            Logger log = {});

void cmd_gen_data(const CommandContext& ctx);

struct TrainOutcome {
    std::filesystem::path checkpoint;
    std::optional<loss::LossBalance> balance;
};

// `r_override` and `dir_override` are used by the sweep.
TrainOutcome cmd_train(const CommandContext& ctx, train::Mode phase, std::optional<double> r_override = std::nullopt,
                       const std::optional<std::filesystem::path>& dir_override = std::nullopt);

// Evaluates one SR checkpoint ("bicubic" selects the interpolation
// baseline). Without a checkpoint every trained SR phase is evaluated and a
// combined table is written.
std::vector<eval::EvalReport> cmd_eval(const CommandContext& ctx, const std::optional<std::filesystem::path>& checkpoint,
                                       const std::optional<std::string>& name = std::nullopt);

struct SweepRow {
    double r = 0.0;
    loss::LossBalance balance;
    eval::EvalReport report;
};

struct SweepResult {
    eval::EvalReport clean;
    std::vector<SweepRow> rows;
};

SweepResult cmd_sweep_r(const CommandContext& ctx, const std::vector<double>& r_list);

// Combined markdown over the evaluation reports of one or more run
// directories.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs);

std::vector<double> parse_r_list(const std::string& text);
std::string sweep_csv(const SweepResult& sweep);
std::string format_r(double r);

}  // namespace advsr::exp
