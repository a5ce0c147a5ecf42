#include "rnd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rnd/errors.hpp"
#include "rnd/rng.hpp"

namespace rnd::train {

namespace {

using objectives::Matrix;

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

void check_images(const std::vector<Image>& images) {
    if (images.empty()) throw InputError("training set is empty");
    for (const auto& im : images) {
        if (!im.same_shape(images.front())) throw InputError("training images differ in shape");
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::vector<std::string> kind_names(const std::vector<transforms::Kind>& kinds) {
    std::vector<std::string> out;
    for (auto k : kinds) out.emplace_back(transforms::to_string(k));
    return out;
}

}  // namespace

// ---------------------------------------------------------------- pretraining

double aux_accuracy(const AuxClassifier& model, const std::vector<Image>& images, const std::vector<int>& labels) {
    if (images.size() != labels.size() || images.empty()) throw InputError("aux accuracy: bad inputs");
    int correct = 0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t count = std::min(chunk, images.size() - start);
        const auto batch = to_batch<float>(std::span<const Image>(images).subspan(start, count));
        const auto taps = model.encoder.forward(batch, nullptr);
        const auto logits = model.classifier.forward(nn::spatial_mean(taps[nn::kStages - 1]));
        for (std::size_t i = 0; i < count; ++i) {
            Eigen::Index arg = 0;
            logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
            if (arg == labels[start + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(images.size());
}

PretrainReport pretrain_teacher(const std::vector<Image>& images, const std::vector<int>& labels,
                                const PretrainConfig& cfg, const std::filesystem::path& out,
                                AuxClassifier* trained) {
    check_images(images);
    if (images.size() != labels.size()) throw InputError("pretrain: image/label count mismatch");
    for (int y : labels) {
        if (y < 0 || y >= kAuxClasses) throw InputError("pretrain label outside auxiliary classes");
    }
    AuxClassifier model;
    {
        Rng rng = make_rng(cfg.seed, {tag("aux-init")});
        model.encoder.init(rng);
        model.classifier.init(rng);
    }
    optim::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    opt.add("", model.params());
    const transforms::Registry registry;

    PretrainReport report;
    nn::Encoder<float>::Cache cache;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto order = permutation(images.size(), make_rng(cfg.seed, {tag("aux-order"), static_cast<std::uint64_t>(epoch)}));
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            std::vector<Image> views;
            std::vector<int> ys;
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t idx = order[start + k];
                if (cfg.augment) {
                    Rng rng = make_rng(cfg.seed, {tag("aux-aug"), static_cast<std::uint64_t>(epoch), idx});
                    Image v = transforms::apply(registry.sample_light(rng), images[idx]);
                    // Random quarter turns keep class evidence from settling on one image border.
                    const int quarter = uniform_int(rng, 0, 3);
                    if (quarter > 0) v = transforms::apply(transforms::make_spec(transforms::Kind::rotation, {{"angle", 90.0 * quarter}}), v);
                    views.push_back(std::move(v));
                } else {
                    views.push_back(images[idx]);
                }
                ys.push_back(labels[idx]);
            }
            opt.zero_grad();
            const auto batch = to_batch<float>(views);
            auto taps = model.encoder.forward(batch, &cache);
            const auto pooled = nn::spatial_mean(taps[nn::kStages - 1]);
            const auto logits = model.classifier.forward(pooled);
            const auto ce = objectives::ce_loss(logits.cast<double>(), ys);
            if (!std::isfinite(ce.value)) throw TrainingFailure("non-finite loss during teacher pretraining");
            const nn::RowMatrix<float> grad_logits = ce.grad_logits.cast<float>();
            const auto grad_pooled = model.classifier.backward(pooled, grad_logits);
            nn::Encoder<float>::Taps grad_taps;
            const auto& last = taps[nn::kStages - 1];
            grad_taps[nn::kStages - 1] = nn::Batch<float>(last.channels, last.samples, last.height, last.width);
            nn::spatial_mean_backward(grad_pooled, grad_taps[nn::kStages - 1]);
            model.encoder.backward(cache, std::move(grad_taps), nullptr);
            opt.step();
            loss_sum += ce.value;
            ++batches;
        }
        report.epoch_loss.push_back(loss_sum / batches);
        report.epochs = epoch + 1;
        report.train_accuracy = aux_accuracy(model, images, labels);
        if (epoch + 1 >= cfg.min_epochs && report.train_accuracy >= cfg.min_accuracy) break;
    }
    if (report.train_accuracy < cfg.min_accuracy) {
        throw TrainingFailure("teacher pretraining reached " + fmt(report.train_accuracy) + " train accuracy after " +
                              std::to_string(report.epochs) + " epochs; floor is " + fmt(cfg.min_accuracy));
    }
    if (!out.empty()) save_pretrained(out, model);
    if (trained) *trained = model;
    return report;
}

// ------------------------------------------------------------------- config

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("trainer.epochs must be >= 0");
    if (batch_n < 1) throw ConfigError("trainer.batch_n must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("trainer.lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay must be >= 0");
    if (!(gamma > 0.0)) throw ConfigError("loss.gamma must be > 0");
    if (use_ce && !use_heads) throw ConfigError("loss.ce requires model.heads = true");
    if (!ood_enabled && variant != objectives::Variant::ts) {
        throw ConfigError("loss.variant " + std::string(objectives::to_string(variant)) + " needs ood.enabled = true");
    }
    if (!ood_enabled && use_ce) throw ConfigError("loss.ce needs A-OOD samples (ood.enabled = true)");
    if (craft.hard_count != 1 && craft.hard_count != 2) throw ConfigError("ood.hard_count must be 1 or 2");
    if (!(craft.alpha_lo > 0.0 && craft.alpha_lo <= craft.alpha_hi && craft.alpha_hi <= 1.0)) {
        throw ConfigError("ood.alpha_min/alpha_max must satisfy 0 < min <= max <= 1");
    }
    if (light.empty()) throw ConfigError("transforms.light must not be empty");
    if (ood_enabled && hard.empty()) throw ConfigError("transforms.hard must not be empty");
    (void)transforms::Registry(light, hard);
    if (checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every must be >= 0");
}

std::string TrainConfig::describe() const {
    std::ostringstream os;
    os << "batch_n=" << batch_n << " lr=" << fmt(lr) << " wd=" << fmt(weight_decay)
       << " seed=" << seed << " student_init=" << (student_init == StudentInit::pretrained ? "pretrained" : "random")
       << " heads=" << use_heads << " ce=" << use_ce
       << " ce_targets=" << (ce_targets == CeTargets::both ? "both" : "teacher")
       << " variant=" << objectives::to_string(variant) << " gamma=" << fmt(gamma) << " ood=" << ood_enabled
       << " strategy=" << ood::to_string(strategy) << " alpha=" << fmt(craft.alpha_lo) << ',' << fmt(craft.alpha_hi)
       << " hard_count=" << craft.hard_count << " regen=" << regenerate_each_epoch << " light=";
    for (const auto& n : kind_names(light)) os << n << ',';
    os << " hard=";
    for (const auto& n : kind_names(hard)) os << n << ',';
    return os.str();
}

// -------------------------------------------------------------------- state

TrainState::TrainState(Teacher t, nn::Network<float> s, const TrainConfig& cfg)
    : teacher(std::move(t)), student(std::move(s)),
      optimizer({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}) {
    optimizer.add("student.", student.params());
    if (cfg.use_heads && cfg.use_ce) optimizer.add("teacher_head.", {&teacher.net.head.weight, &teacher.net.head.bias});
}

std::unique_ptr<TrainState> make_state(const std::filesystem::path& pretrained, const TrainConfig& cfg) {
    cfg.validate();
    Teacher teacher = build_teacher(pretrained, derive_seed(cfg.seed, {tag("teacher")}), cfg.use_heads);
    if (!(cfg.use_heads && cfg.use_ce)) {
        teacher.net.head.weight.trainable = false;
        teacher.net.head.bias.trainable = false;
    }
    nn::Network<float> student = build_student(derive_seed(cfg.seed, {tag("student")}), cfg.use_heads);
    if (cfg.student_init == StudentInit::pretrained) {
        const auto& src = teacher.net.encoder;
        nn::copy_parameters<float, float>(src.params(), student.encoder.params());
    }
    return std::make_unique<TrainState>(std::move(teacher), std::move(student), cfg);
}

transforms::TransformSpec saliency_light_for(const TrainConfig& cfg, std::size_t index) {
    const transforms::Registry registry(cfg.light, cfg.hard);
    return ood::saliency_light(registry, derive_seed(cfg.seed, {tag("saliency"), index}));
}

void build_saliency_cache(TrainState& state, const std::vector<Image>& images, const TrainConfig& cfg) {
    std::vector<transforms::TransformSpec> lights;
    lights.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) lights.push_back(saliency_light_for(cfg, i));
    state.saliency_cache =
        saliency::style_agnostic_batch(state.teacher.net.encoder, state.teacher.classifier, images, lights);
}

Image craft_for(const TrainState& state, const std::vector<Image>& images, std::size_t index, int epoch,
                const TrainConfig& cfg) {
    const transforms::Registry registry(cfg.light, cfg.hard);
    const std::uint64_t e = cfg.regenerate_each_epoch ? static_cast<std::uint64_t>(epoch) : 0;
    Rng rng = make_rng(cfg.seed, {tag("craft"), e, index});
    switch (cfg.strategy) {
        case ood::Strategy::core:
            if (state.saliency_cache.size() != images.size()) throw InputError("saliency cache not built");
            return ood::craft_ood(images[index], state.saliency_cache[index], registry, rng, cfg.craft).image;
        case ood::Strategy::global: return ood::craft_ood_global(images[index], registry, rng, cfg.craft);
        case ood::Strategy::random_region:
            return ood::craft_ood_random_region(images[index], registry, rng, cfg.craft).image;
    }
    throw ConfigError("unknown ood strategy");
}

// --------------------------------------------------------------------- loop

namespace {

[[noreturn]] void fail_numerically(const TrainConfig& cfg, int epoch, int step, const std::vector<std::size_t>& batch,
                                   double main_loss, double ce) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << " step " << step << " (main " << main_loss << ", ce " << ce
        << "); batch indices:";
    for (auto i : batch) msg << ' ' << i;
    if (!cfg.failure_dir.empty()) {
        std::filesystem::create_directories(cfg.failure_dir);
        std::ofstream(cfg.failure_dir / "failed_batch.txt") << msg.str() << '\n';
    }
    throw TrainingFailure(msg.str());
}

}  // namespace

void train(TrainState& state, const std::vector<Image>& images, const TrainConfig& cfg, std::optional<int> until_epoch,
           const EpochCallback& on_epoch) {
    cfg.validate();
    check_images(images);
    const int last_epoch = until_epoch.value_or(cfg.epochs);
    const transforms::Registry registry(cfg.light, cfg.hard);
    if (cfg.ood_enabled && cfg.strategy == ood::Strategy::core && state.saliency_cache.size() != images.size()) {
        build_saliency_cache(state, images, cfg);
    }
    const std::size_t n_total = images.size();
    const std::size_t n = static_cast<std::size_t>(cfg.batch_n);

    for (int epoch = state.epochs_done; epoch < last_epoch; ++epoch) {
        const auto order = permutation(n_total, make_rng(cfg.seed, {tag("order"), static_cast<std::uint64_t>(epoch)}));
        int step = 0;
        for (std::size_t start = 0; start < n_total; start += n, ++step) {
            const std::size_t m = std::min(n, n_total - start);
            const std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                   order.begin() + static_cast<std::ptrdiff_t>(start + m));
            const int per_view = static_cast<int>(cfg.ood_enabled ? 2 * m : m);
            std::vector<Image> views(static_cast<std::size_t>(2 * per_view));
            for (std::size_t j = 0; j < m; ++j) {
                const std::size_t idx = members[j];
                Rng rng = make_rng(cfg.seed, {tag("views"), static_cast<std::uint64_t>(epoch), idx});
                const auto t1 = registry.sample_light(rng);
                const auto t2 = registry.sample_light(rng);
                views[j] = transforms::apply(t1, images[idx]);
                views[per_view + j] = transforms::apply(t2, images[idx]);
                if (cfg.ood_enabled) {
                    const Image g = craft_for(state, images, idx, epoch, cfg);
                    views[m + j] = transforms::apply(t1, g);
                    views[per_view + m + j] = transforms::apply(t2, g);
                }
            }
            const auto batch = to_batch<float>(views);
            state.optimizer.zero_grad();
            const Matrix fs = nn::readout_forward(state.student, batch, &state.student_scratch);
            const Matrix ft = nn::readout_forward(state.teacher.net, batch, &state.teacher_scratch);

            objectives::LossResult main;
            if (cfg.ood_enabled) {
                main = objectives::ablation_loss(cfg.variant, fs, ft, objectives::ViewLayout{static_cast<int>(m)},
                                                 cfg.gamma);
            } else {
                main = objectives::mean_cosine_loss(fs, ft);
            }
            StepRecord rec{epoch, step, main.value, 0.0, 0.0};
            Matrix student_logit_grad;
            if (cfg.use_ce) {
                const auto labels = objectives::ViewLayout{static_cast<int>(m)}.labels();
                const auto ce_t = objectives::ce_loss(state.teacher_scratch.logits.cast<double>(), labels);
                rec.ce_loss = ce_t.value;
                rec.ce_accuracy = ce_t.accuracy;
                const nn::RowMatrix<float> g = ce_t.grad_logits.cast<float>();
                state.teacher.net.head.backward(state.teacher_scratch.pooled[nn::kStages - 1], g);
                if (cfg.ce_targets == CeTargets::both) {
                    const auto ce_s = objectives::ce_loss(state.student_scratch.logits.cast<double>(), labels);
                    rec.ce_loss += ce_s.value;
                    student_logit_grad = ce_s.grad_logits;
                }
            }
            if (!std::isfinite(rec.main_loss) || !std::isfinite(rec.ce_loss) || !main.grad_student.allFinite()) {
                fail_numerically(cfg, epoch, step, members, rec.main_loss, rec.ce_loss);
            }
            nn::readout_backward(state.student, state.student_scratch, main.grad_student, static_cast<nn::Batch<float>*>(nullptr),
                                 student_logit_grad.size() ? &student_logit_grad : nullptr);
            state.optimizer.step();
            state.history.push_back(rec);
        }
        state.epochs_done = epoch + 1;
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && state.epochs_done % cfg.checkpoint_every == 0) {
            save_checkpoint(cfg.checkpoint_dir, state, cfg);
        }
        if (on_epoch) on_epoch(state.epochs_done, state.history);
    }
}

// -------------------------------------------------------------- persistence

void save_models(const std::filesystem::path& path, TrainState& state) {
    WeightArchive archive;
    archive.store("student.", state.student.params());
    std::vector<nn::Param<float>*> head{&state.teacher.net.head.weight, &state.teacher.net.head.bias};
    archive.store("teacher_head.", head);
    // Kept so a finished run can be checked against the pretrained file.
    archive.store("teacher_encoder.", state.teacher.net.encoder.params());
    archive.save(path);
}

void load_models(const std::filesystem::path& path, TrainState& state) {
    const WeightArchive archive = WeightArchive::load(path);
    archive.restore("student.", state.student.params());
    std::vector<nn::Param<float>*> head{&state.teacher.net.head.weight, &state.teacher.net.head.bias};
    archive.restore("teacher_head.", head);
}

void write_history(const std::filesystem::path& path, const std::vector<StepRecord>& history) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    out << "epoch\tstep\tmain_loss\tce_loss\tce_accuracy\n";
    for (const auto& r : history) {
        out << r.epoch << '\t' << r.step << '\t' << fmt(r.main_loss) << '\t' << fmt(r.ce_loss) << '\t'
            << fmt(r.ce_accuracy) << '\n';
    }
}

std::vector<StepRecord> read_history(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("history not found: " + path.string());
    std::vector<StepRecord> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        StepRecord r;
        ss >> r.epoch >> r.step >> r.main_loss >> r.ce_loss >> r.ce_accuracy;
        if (!ss) throw ConfigError("malformed history line: " + line);
        out.push_back(r);
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& dir, TrainState& state, const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    WeightArchive archive;
    archive.store("student.", state.student.params());
    std::vector<nn::Param<float>*> head{&state.teacher.net.head.weight, &state.teacher.net.head.bias};
    archive.store("teacher_head.", head);
    state.optimizer.store(archive);
    archive.save(dir / "checkpoint.rndw");
    write_history(dir / "history.tsv", state.history);
    std::ofstream meta(dir / "checkpoint.txt");
    meta << "epoch = " << state.epochs_done << '\n'
         << "optimizer_steps = " << state.optimizer.steps() << '\n'
         << "seed = " << cfg.seed << '\n'
         << "config_hash = " << tag(cfg.describe()) << '\n'
         << "rng = streams derived from (seed, stream tag, epoch, sample index); no carried state\n";
}

std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& dir, const std::filesystem::path& pretrained,
                                            const TrainConfig& cfg) {
    std::ifstream meta(dir / "checkpoint.txt");
    if (!meta) throw MissingArtifact("checkpoint metadata not found in " + dir.string());
    int epoch = -1;
    long long steps = -1;
    std::uint64_t hash = 0;
    std::string line;
    while (std::getline(meta, line)) {
        std::istringstream ss(line);
        std::string key, eq;
        ss >> key >> eq;
        if (key == "epoch") ss >> epoch;
        else if (key == "optimizer_steps") ss >> steps;
        else if (key == "config_hash") ss >> hash;
    }
    if (epoch < 0 || steps < 0) throw ConfigError("checkpoint metadata incomplete in " + dir.string());
    if (hash != tag(cfg.describe())) {
        throw ConfigError("checkpoint in " + dir.string() + " was written with a different training config");
    }
    auto state = make_state(pretrained, cfg);
    const WeightArchive archive = WeightArchive::load(dir / "checkpoint.rndw");
    archive.restore("student.", state->student.params());
    std::vector<nn::Param<float>*> head{&state->teacher.net.head.weight, &state->teacher.net.head.bias};
    archive.restore("teacher_head.", head);
    state->optimizer.restore(archive, steps);
    state->epochs_done = epoch;
    state->history = read_history(dir / "history.tsv");
    return state;
}

}  // namespace rnd::train
