#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rnd/image.hpp"
#include "rnd/model.hpp"
#include "rnd/objectives.hpp"
#include "rnd/ood_synth.hpp"
#include "rnd/optim.hpp"
#include "rnd/saliency.hpp"
#include "rnd/transforms.hpp"

namespace rnd::train {

struct PretrainConfig {
    int min_epochs = 8;
    int max_epochs = 60;
    int batch_size = 64;
    double lr = 2e-3;
    double min_accuracy = 0.90;
    std::uint64_t seed = 0;
    bool augment = true;
};

struct PretrainReport {
    double train_accuracy = 0.0;
    int epochs = 0;
    std::vector<double> epoch_loss;
};

/// Fits encoder + auxiliary classifier; TrainingFailure if the accuracy
/// floor is not reached by max_epochs. Writes the weight archive to `out`
/// when non-empty.
PretrainReport pretrain_teacher(const std::vector<Image>& images, const std::vector<int>& labels,
                                const PretrainConfig& cfg, const std::filesystem::path& out,
                                AuxClassifier* trained = nullptr);

double aux_accuracy(const AuxClassifier& model, const std::vector<Image>& images, const std::vector<int>& labels);

enum class CeTargets { teacher, both };
/// Student encoder start: fresh random weights or a copy of the pretrained
/// teacher encoder (the head is always freshly initialized).
enum class StudentInit { random, pretrained };

struct TrainConfig {
    int epochs = 50;
    int batch_n = 32;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;

    StudentInit student_init = StudentInit::random;
    bool use_heads = true;
    bool use_ce = true;
    CeTargets ce_targets = CeTargets::teacher;
    objectives::Variant variant = objectives::Variant::ocl;
    double gamma = 0.2;

    bool ood_enabled = true;
    ood::Strategy strategy = ood::Strategy::core;
    ood::CraftOptions craft;
    bool regenerate_each_epoch = true;

    std::vector<transforms::Kind> light = transforms::Registry().light();
    std::vector<transforms::Kind> hard = transforms::Registry().hard();

    /// Checkpoint every k epochs into checkpoint_dir (0 = never).
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;
    /// Directory for the diagnostic dump on numerical failure.
    std::filesystem::path failure_dir;

    /// Throws ConfigError for inconsistent settings.
    void validate() const;
    /// Stable text form of everything except the epoch count; its hash
    /// identifies checkpoints.
    std::string describe() const;
};

struct StepRecord {
    int epoch = 0;
    int step = 0;
    double main_loss = 0.0;
    double ce_loss = 0.0;
    double ce_accuracy = 0.0;
};

/// Everything that evolves during training. Not movable: the optimizer holds
/// pointers into the networks.
struct TrainState {
    TrainState(Teacher t, nn::Network<float> s, const TrainConfig& cfg);
    TrainState(const TrainState&) = delete;
    TrainState& operator=(const TrainState&) = delete;

    Teacher teacher;
    nn::Network<float> student;
    optim::AdamW optimizer;
    int epochs_done = 0;
    std::vector<StepRecord> history;

    /// Saliency per training image, built once before the first epoch.
    std::vector<saliency::SaliencyMap> saliency_cache;

    nn::ReadoutCache<float> student_scratch;
    nn::ReadoutCache<float> teacher_scratch;
};

std::unique_ptr<TrainState> make_state(const std::filesystem::path& pretrained, const TrainConfig& cfg);

/// Light spec used for image `index`'s cached saliency.
transforms::TransformSpec saliency_light_for(const TrainConfig& cfg, std::size_t index);

void build_saliency_cache(TrainState& state, const std::vector<Image>& images, const TrainConfig& cfg);

/// A-OOD counterpart of image `index` in `epoch`.
Image craft_for(const TrainState& state, const std::vector<Image>& images, std::size_t index, int epoch,
                const TrainConfig& cfg);

/// Called after each epoch with the number of finished epochs.
using EpochCallback = std::function<void(int, const std::vector<StepRecord>&)>;

/// Runs epochs [state.epochs_done, until_epoch) (default: cfg.epochs).
void train(TrainState& state, const std::vector<Image>& images, const TrainConfig& cfg,
           std::optional<int> until_epoch = std::nullopt, const EpochCallback& on_epoch = {});

void save_checkpoint(const std::filesystem::path& dir, TrainState& state, const TrainConfig& cfg);
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& dir, const std::filesystem::path& pretrained,
                                            const TrainConfig& cfg);

/// Final models only: student network and teacher head under "student." and
/// "teacher_head." prefixes, plus the frozen teacher encoder under
/// "teacher_encoder." for auditing.
void save_models(const std::filesystem::path& path, TrainState& state);
void load_models(const std::filesystem::path& path, TrainState& state);

void write_history(const std::filesystem::path& path, const std::vector<StepRecord>& history);
std::vector<StepRecord> read_history(const std::filesystem::path& path);

}  // namespace rnd::train
