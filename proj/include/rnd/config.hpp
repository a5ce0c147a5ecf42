#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rnd/eval.hpp"
#include "rnd/scm.hpp"
#include "rnd/trainer.hpp"

namespace rnd::config {

enum class Preset { main, appendix };

struct EvalSettings {
    bool noise = true;
    int noise_count = 250;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    scm::ScmConfig data;
    /// Existing dataset directory; empty = generate from `data`.
    std::filesystem::path data_dir;
    train::PretrainConfig pretrain;
    /// Existing pretrained weights; empty = <output>/pretrained.rndw.
    std::filesystem::path pretrained;
    Preset preset = Preset::main;
    train::TrainConfig train;
    EvalSettings eval;
    eval::DiagnosticConfig theory;
    std::filesystem::path output = "runs";

    /// Copies with the experiment seed filled in.
    train::TrainConfig train_config() const;
    eval::DiagnosticConfig theory_config() const;
};

/// Learning rate and weight decay of a preset.
std::pair<double, double> preset_values(Preset p);

/// Parses `section.key = value` lines on top of the defaults. Blank lines and
/// '#' comments are ignored. Unknown keys, duplicates and malformed values
/// throw ConfigError naming the line.
ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load(const std::filesystem::path& path);

/// Applies `key=value` overrides (command line) after the file.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

/// Range and consistency checks; ConfigError naming the key.
void validate(const ExperimentConfig& cfg);

/// Normalized text: every key, in a fixed order, with its doc line.
/// parse(echo(c)) reproduces c.
std::string echo(const ExperimentConfig& cfg);

/// Keys with their documentation, in echo order.
std::vector<std::pair<std::string, std::string>> documented_keys();

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace rnd::config
