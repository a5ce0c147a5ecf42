// Acceptance runner: prints one PASS/FAIL line per criterion.
//
//   rnd_acceptance            all criteria
//   rnd_acceptance 7 8        selected criteria
//
// Training runs are cached under $RND_ACCEPT_OUT (default
// <build>/acceptance) keyed by the normalized config, so criteria that need
// the same run share it. Budgets are checked against the train and eval
// seconds recorded in each run's timing.txt; the one-off teacher pretraining
// is reported separately.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rnd/config.hpp"
#include "rnd/errors.hpp"
#include "rnd/eval.hpp"
#include "rnd/model.hpp"
#include "rnd/objectives.hpp"
#include "rnd/ood_synth.hpp"
#include "rnd/pipeline.hpp"
#include "rnd/rng.hpp"
#include "rnd/saliency.hpp"

using namespace rnd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string format(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

// ------------------------------------------------------------ shared runs

struct Run {
    eval::EvalResult result;
    double seconds = 0.0;  // train + eval, from timing.txt
    fs::path dir;
};

class Workspace {
public:
    Workspace() {
        const char* env = std::getenv("RND_ACCEPT_OUT");
        root_ = env && *env ? fs::path(env) : fs::path(RND_BINARY_DIR) / "acceptance";
        fs::create_directories(root_);
    }

    const fs::path& root() const { return root_; }

    config::ExperimentConfig desk(const std::vector<std::string>& overrides = {}) const {
        auto cfg = config::load(fs::path(RND_SOURCE_DIR) / "configs" / "desk.txt");
        config::apply_overrides(cfg, overrides);
        config::validate(cfg);
        return cfg;
    }

    const scm::DatasetSplits& data(const config::ExperimentConfig& cfg) {
        const std::string key = scm::config_text(cfg.data);
        auto it = data_.find(key);
        if (it == data_.end()) it = data_.emplace(key, pipeline::load_data(cfg)).first;
        return it->second;
    }

    fs::path pretrained(const config::ExperimentConfig& cfg) {
        const fs::path path = pipeline::pretrained_path(cfg, root_);
        if (!fs::exists(path)) {
            const auto t0 = Clock::now();
            pipeline::ensure_pretrained(cfg, root_, data(cfg));
            std::printf("  (teacher pretraining took %.0f s)\n", since(t0));
        }
        return path;
    }

    fs::path run_dir(const config::ExperimentConfig& cfg) const {
        return root_ / "runs" / format("%016llx", static_cast<unsigned long long>(tag(config::echo(cfg))));
    }

    Run run(const config::ExperimentConfig& cfg, const std::string& label) {
        const fs::path dir = run_dir(cfg);
        const auto& splits = data(cfg);
        const fs::path pre = pretrained(cfg);
        std::printf("  run %-24s seed %llu  %s\n", label.c_str(), static_cast<unsigned long long>(cfg.seed),
                    dir.filename().c_str());
        std::fflush(stdout);
        const auto out = pipeline::train_run(cfg, dir, splits, pre, {"acceptance", label});
        return {out.result, recorded_seconds(dir), dir};
    }

    std::vector<Run> seeds(const std::vector<std::string>& overrides, const std::string& label) {
        std::vector<Run> runs;
        for (auto seed : kSeeds) {
            auto o = overrides;
            o.push_back("seed=" + std::to_string(seed));
            runs.push_back(run(desk(o), label));
        }
        return runs;
    }

private:
    static double recorded_seconds(const fs::path& dir) {
        std::ifstream in(dir / "timing.txt");
        std::string key, eq;
        double v = 0.0, total = 0.0;
        while (in >> key >> eq >> v) {
            if (key == "train_seconds" || key == "eval_seconds") total += v;
        }
        return total;
    }

    fs::path root_;
    std::map<std::string, scm::DatasetSplits> data_;
};

double mean_of(const std::vector<Run>& runs, const std::function<double(const eval::EvalResult&)>& f) {
    double s = 0.0;
    for (const auto& r : runs) s += f(r.result);
    return s / static_cast<double>(runs.size());
}

double seconds_of(const std::vector<Run>& runs) {
    double s = 0.0;
    for (const auto& r : runs) s += r.seconds;
    return s;
}

double robust(const eval::EvalResult& r) { return r.robust.auroc; }
double gap(const eval::EvalResult& r) { return r.standard.auroc - r.robust.auroc; }

std::vector<Run> setup_runs(Workspace& ws, char setup) {
    return ws.seeds(pipeline::setup_overrides(setup), std::string("setup ") + setup);
}

// --------------------------------------------------------------- criteria

Outcome metric_oracles(Workspace&) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = oracle::random_scores(seed);
        worst = std::max({worst, std::abs(eval::auroc(s) - oracle::auroc(s)),
                          std::abs(eval::aupr(s) - oracle::aupr(s)),
                          std::abs(eval::fpr_at_95_tpr(s) - oracle::fpr95(s))});
    }
    const double t = since(t0);
    return {worst <= 1e-9 && t < 10.0, format("max |diff| %.3g over 100 score sets, %.2f s", worst, t)};
}

Outcome ocl_oracle(Workspace&) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int n = uniform_int(rng, 1, 8);
        const int dim = uniform_int(rng, 2, 12);
        const double gamma = uniform(rng, 0.1, 1.0);
        const auto s = oracle::random_features(rng, 4 * n, dim);
        const auto t = oracle::random_features(rng, 4 * n, dim);
        const double got = objectives::ocl_loss(s, t, objectives::ViewLayout{n}, gamma).value;
        worst = std::max(worst, std::abs(got - oracle::ocl(s, t, n, gamma)));
    }
    // n = 1 with every similarity equal.
    objectives::Matrix same = objectives::Matrix::Ones(4, 3);
    const double flat = objectives::ocl_loss(same, same, objectives::ViewLayout{1}, 0.2).value;
    const double flat_err = std::abs(flat - 4.0 * std::log(4.0));
    const double t = since(t0);
    return {worst <= 1e-6 && flat_err <= 1e-6 && t < 10.0,
            format("max |diff| %.3g over 100 seeds, n=1 flat case %.9f (4 ln 4 = %.9f), %.2f s", worst, flat,
                   4.0 * std::log(4.0), t)};
}

Outcome gradient_checks(Workspace&) {
    const auto t0 = Clock::now();
    // (a) Grad-CAM class score through the backbone, double precision.
    nn::Encoder<double> encoder(default_encoder_config());
    nn::Linear<double> head("head", 64, kAuxClasses);
    Rng rng(5);
    encoder.init(rng);
    head.init(rng);
    const auto img = oracle::random_image(rng, 3, 16, 16);
    const auto batch = to_batch<double>(std::span<const Image>(&img, 1));
    const auto score = [&] {
        const auto taps = encoder.forward(batch, nullptr);
        return saliency::class_scores(taps[nn::kStages - 1], head)[0];
    };
    nn::Encoder<double>::Cache cache;
    const auto taps = encoder.forward(batch, &cache);
    nn::Encoder<double>::Taps grads;
    grads[nn::kStages - 1] = saliency::class_score_gradient(taps[nn::kStages - 1], head, 0);
    for (auto* p : encoder.params()) p->zero_grad();
    encoder.backward(cache, grads, nullptr);
    int significant = 0, good = 0;
    for (auto* p : encoder.params()) {
        for (std::size_t i = 0; i < p->size(); i += 1 + p->size() / 40) {
            const double keep = p->value[i];
            p->value[i] = keep + 1e-6;
            const double up = score();
            p->value[i] = keep - 1e-6;
            const double down = score();
            p->value[i] = keep;
            if (std::abs(p->grad[i]) <= 1e-4) continue;
            ++significant;
            good += oracle::rel_error(p->grad[i], (up - down) / 2e-6) <= 1e-3;
        }
    }
    const bool cam_ok = significant > 0 && good >= 0.95 * significant;

    // (b) OCL loss gradient, every entry.
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng r(seed + 77);
        const int n = 3;
        const objectives::ViewLayout layout{n};
        auto s = oracle::random_features(r, 4 * n, 6);
        const auto t = oracle::random_features(r, 4 * n, 6);
        const auto g = objectives::ocl_loss(s, t, layout, 0.3).grad_student;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            const double keep = s.data()[i];
            s.data()[i] = keep + 1e-4;
            const double up = objectives::ocl_loss(s, t, layout, 0.3).value;
            s.data()[i] = keep - 1e-4;
            const double down = objectives::ocl_loss(s, t, layout, 0.3).value;
            s.data()[i] = keep;
            worst = std::max(worst, oracle::rel_error(g.data()[i], (up - down) / 2e-4, 1e-6));
        }
    }
    const double t = since(t0);
    return {cam_ok && worst <= 1e-3 && t < 60.0,
            format("grad-cam %d/%d significant coords within 1e-3, ocl max rel err %.2e, %.1f s", good, significant,
                   worst, t)};
}

Outcome mask_oracle(Workspace&) {
    const auto t0 = Clock::now();
    int mismatches = 0, cases = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const int h = uniform_int(rng, 2, 32), w = uniform_int(rng, 2, 32);
        const auto sm = oracle::random_dyadic_map(rng, h, w);
        for (int a = 1; a <= 9; ++a) {
            const auto m = ood::select_core_mask(sm, a / 10.0);
            const auto o = oracle::best_window(sm, a / 10.0);
            ++cases;
            mismatches += m.side_h != o.side || m.side_w != o.side || m.top != o.top || m.left != o.left;
        }
    }
    const double t = since(t0);
    return {mismatches == 0 && t < 30.0, format("%d/%d windows differ from enumeration, %.2f s", mismatches, cases, t)};
}

Outcome compositing(Workspace&) {
    const transforms::Registry reg;
    int bad = 0, outside_changed = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int n = uniform_int(rng, 8, 32);
        const auto img = oracle::random_image(rng, 3, n, n);
        const auto sm = oracle::random_dyadic_map(rng, n, n);
        const auto out = ood::craft_ood(img, sm, reg, rng);
        const auto expect =
            oracle::composite(img, out.mask.top, out.mask.left, out.mask.side_h, out.mask.side_w, out.hard);
        bad += !(out.image == expect);
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    outside_changed += !out.mask.contains(y, x) && out.image.at(c, y, x) != img.at(c, y, x);
                }
            }
        }
    }
    return {bad == 0 && outside_changed == 0,
            format("%d/100 images differ from the per-pixel formula, %d outside-mask pixels changed", bad,
                   outside_changed)};
}

Outcome freeze_contract(Workspace& ws) {
    const auto cfg = ws.desk(pipeline::setup_overrides('E'));
    const Run run = ws.run(cfg, "setup E");
    const auto pre = WeightArchive::load(ws.pretrained(cfg));
    const auto models = WeightArchive::load(run.dir / "models.rndw");
    const std::string prefix = "teacher_encoder.";
    int checked = 0, differing = 0;
    for (const auto& t : models.tensors()) {
        if (t.name.rfind(prefix, 0) != 0) continue;
        ++checked;
        const auto* ref = pre.find(t.name.substr(prefix.size()));
        differing += !ref || ref->data != t.data || ref->shape != t.shape;
    }
    const int expected = static_cast<int>(nn::Encoder<float>(default_encoder_config()).params().size());
    return {checked == expected && differing == 0,
            format("%d/%d teacher encoder tensors after a %d-epoch run, %d differ from the pretrained file", checked,
                   expected, cfg.train.epochs, differing)};
}

Outcome ablation_direction(Workspace& ws) {
    const auto a = setup_runs(ws, 'A');
    const auto e = setup_runs(ws, 'E');
    const double ra = mean_of(a, robust), re = mean_of(e, robust);
    const double ga = mean_of(a, gap), ge = mean_of(e, gap);
    const double secs = seconds_of(a) + seconds_of(e);
    return {re - ra >= 0.05 && ge < ga && secs <= 20 * 60,
            format("robust A %.4f E %.4f (margin %+.4f, need >= 0.05); gap A %.4f E %.4f; %.0f s of 1200", ra, re,
                   re - ra, ga, ge, secs)};
}

Outcome exposure_trend(Workspace& ws) {
    std::vector<double> means;
    std::string detail;
    double secs = 0.0;
    for (const char* level : {"0", "0.05", "0.1", "0.2"}) {
        auto o = pipeline::setup_overrides('E');
        o.push_back(std::string("data.exposure=") + level);
        const auto runs = ws.seeds(o, std::string("exposure ") + level);
        means.push_back(mean_of(runs, robust));
        secs += seconds_of(runs);
        detail += format("%s:%.4f ", level, means.back());
    }
    int inversions = 0;
    double worst_drop = 0.0;
    for (std::size_t i = 1; i < means.size(); ++i) {
        if (means[i] < means[i - 1]) {
            ++inversions;
            worst_drop = std::max(worst_drop, means[i - 1] - means[i]);
        }
    }
    const bool trend = inversions == 0 || (inversions == 1 && worst_drop <= 0.01);
    return {trend && secs <= 30 * 60,
            format("robust by exposure %s; %d inversion(s), largest drop %.4f; %.0f s of 1800", detail.c_str(),
                   inversions, worst_drop, secs)};
}

Outcome core_vs_global(Workspace& ws) {
    const auto core = setup_runs(ws, 'E');
    auto o = pipeline::setup_overrides('E');
    o.push_back("ood.strategy=global");
    const auto global = ws.seeds(o, "global");
    const double rc = mean_of(core, robust), rg = mean_of(global, robust);
    return {rc >= rg, format("robust core %.4f, global %.4f", rc, rg)};
}

Outcome far_ood(Workspace& ws) {
    const auto e = setup_runs(ws, 'E');
    std::string per;
    for (const auto& r : e) {
        if (!r.result.far_ood) return {false, "run has no far-OOD report"};
        per += format("%.4f ", r.result.far_ood->auroc);
    }
    const double m = mean_of(e, [](const eval::EvalResult& r) { return r.far_ood->auroc; });
    // Post-training cost: re-score seed 0 from its saved models.
    const auto cfg = ws.desk([] {
        auto o = pipeline::setup_overrides('E');
        o.push_back("seed=0");
        return o;
    }());
    const auto t0 = Clock::now();
    const auto again = pipeline::evaluate_run(cfg, e.front().dir, ws.data(cfg), ws.pretrained(cfg));
    const double t = since(t0);
    const bool same = again.far_ood && std::abs(again.far_ood->auroc - e.front().result.far_ood->auroc) <= 1e-9;
    return {m >= 0.90 && same && t < 60.0,
            format("noise AUROC per seed %s mean %.4f (need >= 0.90); evaluation %.1f s", per.c_str(), m, t)};
}

Outcome theorem_diagnostic(Workspace& ws) {
    const auto cfg = ws.desk();
    const auto teacher = build_teacher(ws.pretrained(cfg), 0, false);
    const auto t0 = Clock::now();
    const auto rows = eval::theorem1_diagnostic(teacher.net.encoder, cfg.theory_config());
    const double t = since(t0);
    std::vector<double> dist, gp;
    std::string table;
    for (const auto& r : rows) {
        dist.push_back(r.core_distance);
        gp.push_back(r.eval_gap);
        table += format("(%.2f: %.4f, %.4f) ", r.severity, r.core_distance, r.eval_gap);
    }
    const double rho = eval::spearman(dist, gp);
    const bool zero = !rows.empty() && rows.front().severity == 0.0 && std::abs(rows.front().core_distance) <= 1e-9;
    return {rows.size() == 5 && rho > 0.0 && zero && t <= 15 * 60,
            format("(severity: distance, gap) %sspearman %.3f, %.0f s", table.c_str(), rho, t)};
}

Outcome reproducibility(Workspace& ws) {
    auto cfg = ws.desk(pipeline::setup_overrides('E'));
    config::apply_overrides(cfg, {"trainer.epochs=3", "seed=11"});
    const auto& splits = ws.data(cfg);
    const auto pre = ws.pretrained(cfg);
    std::vector<eval::EvalResult> results;
    for (const char* name : {"repro_a", "repro_b"}) {
        const fs::path dir = ws.root() / name;
        fs::remove_all(dir);
        results.push_back(pipeline::train_run(cfg, dir, splits, pre, {"acceptance", name}, true).result);
    }
    double worst = 0.0;
    const auto cmp = [&](double x, double y) {
        worst = std::max(worst, std::abs(x - y) / std::max(std::abs(x), 1e-12));
    };
    const auto& [a, b] = std::tie(results[0], results[1]);
    for (const auto& [p, q] : {std::pair{&a.standard, &b.standard}, std::pair{&a.robust, &b.robust}}) {
        cmp(p->auroc, q->auroc);
        cmp(p->aupr, q->aupr);
        cmp(p->fpr95, q->fpr95);
    }
    if (a.far_ood && b.far_ood) cmp(a.far_ood->auroc, b.far_ood->auroc);
    return {worst <= 1e-5, format("max relative difference between two identical runs %.3g", worst)};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*fn)(Workspace&);
};

const std::vector<Criterion> kCriteria{
    {1, "metric oracles", metric_oracles},
    {2, "OCL loss oracle", ocl_oracle},
    {3, "gradient checks", gradient_checks},
    {4, "mask selection oracle", mask_oracle},
    {5, "compositing exactness", compositing},
    {6, "freeze contract", freeze_contract},
    {7, "ablation direction (E vs A)", ablation_direction},
    {8, "exposure trend", exposure_trend},
    {9, "core vs global", core_vs_global},
    {10, "far-OOD noise", far_ood},
    {11, "core-distance diagnostic", theorem_diagnostic},
    {12, "reproducibility", reproducibility},
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    Workspace ws;
    int failed = 0;
    for (const auto& c : kCriteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        Outcome o;
        try {
            o = c.fn(ws);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %2d %s: %s | %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
