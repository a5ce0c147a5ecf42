#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "rnd/errors.hpp"
#include "rnd/eval.hpp"
#include "rnd/model.hpp"
#include "rnd/pipeline.hpp"
#include "rnd/scm.hpp"
#include "rnd/trainer.hpp"

using namespace rnd;
namespace fs = std::filesystem;

namespace {

// Small dataset and a briefly pretrained teacher shared by every test.
struct Fixture {
    scm::DatasetSplits data;
    fs::path dir;
    fs::path pretrained;

    Fixture() {
        scm::ScmConfig c;
        c.train_count = 48;
        c.test_count = 24;
        c.aux_per_class = 24;
        c.seed = 5;
        data = scm::generate_dataset(c);
        dir = fs::temp_directory_path() / "rnd_test_trainer";
        fs::remove_all(dir);
        fs::create_directories(dir);
        pretrained = dir / "pre.rndw";
        train::PretrainConfig pc;
        pc.min_epochs = 2;
        pc.max_epochs = 2;
        pc.min_accuracy = 0.0;
        train::pretrain_teacher(scm::images_of(data.aux_pretrain), scm::labels_of(data.aux_pretrain), pc, pretrained);
    }
    ~Fixture() { fs::remove_all(dir); }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

train::TrainConfig small_train() {
    train::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_n = 8;
    return tc;
}

std::vector<std::vector<float>> values(const std::vector<nn::Param<float>*>& ps) {
    std::vector<std::vector<float>> out;
    for (auto* p : ps) out.push_back(p->value);
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Pretrain, SameSeedGivesIdenticalWeights) {
    auto& f = fixture();
    train::PretrainConfig pc;
    pc.min_epochs = 2;
    pc.max_epochs = 2;
    pc.min_accuracy = 0.0;
    const auto again = f.dir / "pre_again.rndw";
    train::pretrain_teacher(scm::images_of(f.data.aux_pretrain), scm::labels_of(f.data.aux_pretrain), pc, again);
    EXPECT_EQ(slurp(again), slurp(f.pretrained));
}

TEST(Pretrain, AccuracyFloorFailureIsReported) {
    auto& f = fixture();
    train::PretrainConfig pc;
    pc.min_epochs = 1;
    pc.max_epochs = 1;
    pc.min_accuracy = 1.01;
    EXPECT_THROW(train::pretrain_teacher(scm::images_of(f.data.aux_pretrain), scm::labels_of(f.data.aux_pretrain), pc,
                                         ""),
                 TrainingFailure);
}

TEST(Pretrain, TrainedEncoderBeatsRandomInit) {
    auto& f = fixture();
    const auto imgs = scm::images_of(f.data.aux_pretrain);
    const auto labels = scm::labels_of(f.data.aux_pretrain);
    train::PretrainConfig pc;
    pc.min_epochs = 25;
    pc.max_epochs = 25;
    pc.batch_size = 16;
    pc.min_accuracy = 0.0;
    AuxClassifier trained;
    train::pretrain_teacher(imgs, labels, pc, "", &trained);
    AuxClassifier fresh;
    Rng rng(1);
    fresh.encoder.init(rng);
    fresh.classifier.init(rng);
    EXPECT_GT(train::aux_accuracy(trained, imgs, labels), train::aux_accuracy(fresh, imgs, labels));
}

TEST(Train, FreezeContractAndUpdatedParameterSet) {
    auto& f = fixture();
    auto tc = small_train();
    auto state = train::make_state(f.pretrained, tc);
    const auto archive = WeightArchive::load(f.pretrained);
    const auto teacher_enc0 = values(state->teacher.net.encoder.params());
    const auto teacher_head0 = values({&state->teacher.net.head.weight, &state->teacher.net.head.bias});
    const auto classifier0 = values({&state->teacher.classifier.weight, &state->teacher.classifier.bias});
    const auto student0 = values(state->student.params());

    train::train(*state, scm::images_of(f.data.train), tc);

    // Teacher encoder equals the file bit for bit.
    for (auto* p : state->teacher.net.encoder.params()) {
        const auto* rec = archive.find(p->name);
        ASSERT_NE(rec, nullptr) << p->name;
        EXPECT_EQ(rec->data, p->value) << p->name;
    }
    EXPECT_EQ(values(state->teacher.net.encoder.params()), teacher_enc0);
    EXPECT_EQ(values({&state->teacher.classifier.weight, &state->teacher.classifier.bias}), classifier0);
    EXPECT_NE(values({&state->teacher.net.head.weight, &state->teacher.net.head.bias}), teacher_head0);
    const auto student1 = values(state->student.params());
    for (std::size_t i = 0; i < student0.size(); ++i) EXPECT_NE(student1[i], student0[i]) << i;
}

TEST(Train, SameSeedGivesIdenticalHistories) {
    auto& f = fixture();
    const auto tc = small_train();
    auto a = train::make_state(f.pretrained, tc);
    auto b = train::make_state(f.pretrained, tc);
    const auto imgs = scm::images_of(f.data.train);
    train::train(*a, imgs, tc);
    train::train(*b, imgs, tc);
    ASSERT_EQ(a->history.size(), b->history.size());
    for (std::size_t i = 0; i < a->history.size(); ++i) {
        EXPECT_EQ(a->history[i].main_loss, b->history[i].main_loss);
        EXPECT_EQ(a->history[i].ce_loss, b->history[i].ce_loss);
    }
}

TEST(Train, CheckpointResumeMatchesUninterrupted) {
    auto& f = fixture();
    auto tc = small_train();
    tc.epochs = 4;
    const auto imgs = scm::images_of(f.data.train);
    auto full = train::make_state(f.pretrained, tc);
    train::train(*full, imgs, tc);

    tc.checkpoint_every = 1;
    tc.checkpoint_dir = f.dir / "ckpt";
    auto first = train::make_state(f.pretrained, tc);
    train::train(*first, imgs, tc, 2);
    first.reset();
    auto resumed = train::load_checkpoint(tc.checkpoint_dir, f.pretrained, tc);
    EXPECT_EQ(resumed->epochs_done, 2);
    train::train(*resumed, imgs, tc);

    ASSERT_EQ(full->history.size(), resumed->history.size());
    for (std::size_t i = 0; i < full->history.size(); ++i) {
        const double a = full->history[i].main_loss, b = resumed->history[i].main_loss;
        EXPECT_LE(std::abs(a - b), 1e-5 * std::max(std::abs(a), 1e-12)) << "step " << i;
    }
}

TEST(Train, CheckpointFromDifferentConfigIsRejected) {
    auto& f = fixture();
    auto tc = small_train();
    tc.checkpoint_every = 1;
    tc.checkpoint_dir = f.dir / "ckpt_cfg";
    auto s = train::make_state(f.pretrained, tc);
    train::train(*s, scm::images_of(f.data.train), tc, 1);
    auto other = tc;
    other.gamma = 0.5;
    EXPECT_THROW(train::load_checkpoint(tc.checkpoint_dir, f.pretrained, other), ConfigError);
}

TEST(Train, BatchPairsEveryIdImageWithItsCraftedCounterpart) {
    auto& f = fixture();
    auto tc = small_train();
    auto state = train::make_state(f.pretrained, tc);
    const auto imgs = scm::images_of(f.data.train);
    train::build_saliency_cache(*state, imgs, tc);
    ASSERT_EQ(state->saliency_cache.size(), imgs.size());
    // Crafting is a pure function of (index, epoch): repeatable, and the
    // counterpart differs from the ID image.
    for (std::size_t i = 0; i < 5; ++i) {
        const auto a = train::craft_for(*state, imgs, i, 0, tc);
        EXPECT_EQ(a, train::craft_for(*state, imgs, i, 0, tc));
        EXPECT_NE(a, imgs[i]);
        EXPECT_NE(a, train::craft_for(*state, imgs, i, 1, tc));
    }
}

TEST(Train, FiveEpochSmokeRunLowersTheLoss) {
    auto& f = fixture();
    auto tc = small_train();
    tc.epochs = 5;
    tc.lr = 1e-3;
    auto state = train::make_state(f.pretrained, tc);
    train::train(*state, scm::images_of(f.data.train), tc);
    double first = 0.0, last = 0.0;
    int nf = 0, nl = 0;
    for (const auto& h : state->history) {
        if (h.epoch == 0) first += h.main_loss, ++nf;
        if (h.epoch == 4) last += h.main_loss, ++nl;
    }
    EXPECT_LT(last / nl, first / nf);
}

TEST(Train, HistoryFileRoundTrips) {
    std::vector<train::StepRecord> h{{0, 0, 1.5, 0.7, 0.5}, {0, 1, 1.25, 0.6, 0.75}};
    const auto path = fixture().dir / "history.tsv";
    train::write_history(path, h);
    const auto back = train::read_history(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].main_loss, 1.25);
    EXPECT_EQ(back[1].ce_accuracy, 0.75);
}

TEST(Pipeline, RunDirectoryIsSelfDescribingAndReportsRecompute) {
    auto& f = fixture();
    auto cfg = config::parse("trainer.epochs = 1\ntrainer.batch_n = 8\neval.noise_count = 10\n");
    const auto run = f.dir / "run";
    const auto out = pipeline::train_run(cfg, run, f.data, f.pretrained, {"g", "r"});
    for (const char* name : {"config.txt", "seeds.txt", "run.txt", "scores.tsv", "report.json", "report.csv",
                             "models.rndw", "history.tsv"}) {
        EXPECT_TRUE(fs::exists(run / name)) << name;
    }
    EXPECT_TRUE(config::load(run / "config.txt") == cfg);
    // Re-evaluating from the saved models reproduces the report, and the
    // score file alone reproduces it too.
    const auto again = pipeline::evaluate_run(cfg, run, f.data, f.pretrained);
    EXPECT_NEAR(again.robust.auroc, out.result.robust.auroc, 1e-9);
    EXPECT_NEAR(again.standard.auroc, out.result.standard.auroc, 1e-9);
    const auto runs = pipeline::collect_runs(f.dir);
    ASSERT_EQ(runs.size(), 1u);
    EXPECT_EQ(runs[0].info.group, "g");
    EXPECT_NEAR(runs[0].result.robust.auroc, out.result.robust.auroc, 1e-9);
    ASSERT_TRUE(out.result.far_ood.has_value());
    EXPECT_EQ(out.result.far_ood->n_ood, 10);

    const auto reused = pipeline::train_run(cfg, run, f.data, f.pretrained, {"g", "r"});
    EXPECT_TRUE(reused.reused);
    EXPECT_NEAR(reused.result.robust.auroc, out.result.robust.auroc, 1e-12);

    const auto rows = pipeline::aggregate(runs);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_NE(pipeline::summary_csv(rows).find("g,r,1,"), std::string::npos);
    EXPECT_NE(pipeline::bar_chart_svg(rows).find("<svg"), std::string::npos);

    // Deleting the directory and running again regenerates the same metrics.
    fs::remove_all(run);
    const auto fresh = pipeline::train_run(cfg, run, f.data, f.pretrained, {"g", "r"});
    EXPECT_FALSE(fresh.reused);
    EXPECT_EQ(fresh.result.robust.auroc, out.result.robust.auroc);
    EXPECT_EQ(fresh.result.standard.auroc, out.result.standard.auroc);
    fs::remove_all(run);
}

TEST(Eval, UntrainedStudentGivesWellFormedReports) {
    auto& f = fixture();
    const auto teacher = build_teacher(f.pretrained, 1);
    const auto student = build_student(2);
    const auto r = eval::evaluate(teacher.net, student, f.data);
    for (const auto* m : {&r.standard, &r.robust}) {
        EXPECT_GE(m->auroc, 0.0);
        EXPECT_LE(m->auroc, 1.0);
        EXPECT_EQ(m->n_id + m->n_ood, 24);
    }
    EXPECT_FALSE(r.far_ood.has_value());
    // Duplicated inputs score identically.
    std::vector<Image> dup{f.data.test_main[0].image, f.data.test_main[0].image};
    const auto s = eval::ood_scores(teacher.net, student, dup);
    EXPECT_EQ(s[0], s[1]);
}
