#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rnd/config.hpp"
#include "rnd/eval.hpp"
#include "rnd/scm.hpp"

namespace rnd::pipeline {

/// Output root: $RND_OUT when set, else output.dir.
std::filesystem::path output_root(const config::ExperimentConfig& cfg);

/// Reads data.dir when set, otherwise generates from the data.* keys.
scm::DatasetSplits load_data(const config::ExperimentConfig& cfg);

/// model.pretrained when set, else a file under `root` named after a hash of
/// everything that influences pretraining.
std::filesystem::path pretrained_path(const config::ExperimentConfig& cfg, const std::filesystem::path& root);

/// Pretrains the teacher unless the weights already exist.
std::filesystem::path ensure_pretrained(const config::ExperimentConfig& cfg, const std::filesystem::path& root,
                                        const scm::DatasetSplits& splits, std::ostream* log = nullptr);

std::vector<Image> noise_images(const config::ExperimentConfig& cfg);

/// config.txt (normalized echo) and seeds.txt.
void write_run_metadata(const std::filesystem::path& dir, const config::ExperimentConfig& cfg,
                        const std::filesystem::path& pretrained);

struct RunInfo {
    std::string group = "train";
    std::string row = "default";
};

struct RunOutcome {
    eval::EvalResult result;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
    int resumed_from_epoch = 0;
    /// The run directory already held a finished run; nothing was retrained.
    bool reused = false;
};

/// Trains (resuming from run_dir/checkpoint when present), saves the final
/// models, evaluates and writes scores.tsv, report.json and report.csv.
/// A directory that already has a report is reused unless `force`.
RunOutcome train_run(const config::ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                     const scm::DatasetSplits& splits, const std::filesystem::path& pretrained,
                     const RunInfo& info = {}, bool force = false, std::ostream* log = nullptr);

/// Loads models.rndw from a finished run directory and re-evaluates.
eval::EvalResult evaluate_run(const config::ExperimentConfig& cfg, const std::filesystem::path& run_dir,
                              const scm::DatasetSplits& splits, const std::filesystem::path& pretrained);

void write_reports(const std::filesystem::path& dir, const eval::EvalResult& r);

// ---------------------------------------------------------------- ablation

struct AblationRow {
    std::string name;
    std::vector<std::string> overrides;
};

/// Overrides turning the base config into pipeline Setup A..E.
std::vector<std::string> setup_overrides(char setup);

/// Rows of an ablation group: setups, losses, masks, exposure, strategy.
/// ConfigError for unknown groups.
std::vector<AblationRow> ablation_rows(const std::string& group);
std::vector<std::string> ablation_groups();

std::filesystem::path ablation_dir(const std::filesystem::path& root, const std::string& group, const std::string& row,
                                   std::uint64_t seed);

// ------------------------------------------------------------------ report

struct RunSummary {
    std::filesystem::path dir;
    RunInfo info;
    std::uint64_t seed = 0;
    eval::EvalResult result;
};

/// Every run directory below `root` (one holding scores.tsv and run.txt);
/// metrics are recomputed from the score files.
std::vector<RunSummary> collect_runs(const std::filesystem::path& root);

struct RowAggregate {
    std::string group;
    std::string row;
    int seeds = 0;
    double standard_mean = 0.0, standard_std = 0.0;
    double robust_mean = 0.0, robust_std = 0.0;
    double aupr_robust = 0.0, fpr95_robust = 0.0;
    double far_mean = -1.0;  // -1 when no run had a far-OOD report
};

std::vector<RowAggregate> aggregate(const std::vector<RunSummary>& runs);
std::string summary_csv(const std::vector<RowAggregate>& rows);
std::string summary_markdown(const std::vector<RowAggregate>& rows);
std::string bar_chart_svg(const std::vector<RowAggregate>& rows);

}  // namespace rnd::pipeline
