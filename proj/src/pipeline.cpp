#include "rnd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "rnd/errors.hpp"
#include "rnd/rng.hpp"
#include "rnd/trainer.hpp"

namespace rnd::pipeline {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string pretrain_key(const config::ExperimentConfig& cfg) {
    std::ostringstream os;
    const auto& p = cfg.pretrain;
    os << "data.dir=" << cfg.data_dir.string() << " image_size=" << cfg.data.image_size
       << " aux_per_class=" << cfg.data.aux_per_class << " data.seed=" << cfg.data.seed << " seed=" << p.seed
       << " min_epochs=" << p.min_epochs << " max_epochs=" << p.max_epochs << " batch=" << p.batch_size
       << " lr=" << std::setprecision(17) << p.lr << " min_acc=" << p.min_accuracy << " augment=" << p.augment;
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    out << text;
}

RunInfo read_run_info(const fs::path& path, std::uint64_t* seed) {
    RunInfo info;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 3);
        if (key == "group") info.group = value;
        else if (key == "row") info.row = value;
        else if (key == "seed" && seed) *seed = std::stoull(value);
    }
    return info;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

fs::path output_root(const config::ExperimentConfig& cfg) {
    if (const char* env = std::getenv("RND_OUT"); env && *env) return fs::path(env);
    return cfg.output;
}

scm::DatasetSplits load_data(const config::ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) return scm::read_dataset(cfg.data_dir);
    return scm::generate_dataset(cfg.data);
}

fs::path pretrained_path(const config::ExperimentConfig& cfg, const fs::path& root) {
    if (!cfg.pretrained.empty()) return cfg.pretrained;
    return root / ("pretrained-" + hex(tag(pretrain_key(cfg))) + ".rndw");
}

fs::path ensure_pretrained(const config::ExperimentConfig& cfg, const fs::path& root, const scm::DatasetSplits& splits,
                           std::ostream* log) {
    const fs::path path = pretrained_path(cfg, root);
    if (fs::exists(path)) return path;
    if (!cfg.pretrained.empty()) throw MissingArtifact("pretrained weights not found: " + path.string());
    if (splits.aux_pretrain.empty()) throw InputError("dataset has no aux_pretrain split");
    fs::create_directories(root);
    if (log) *log << "pretraining teacher -> " << path.string() << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    const auto report = train::pretrain_teacher(scm::images_of(splits.aux_pretrain),
                                                scm::labels_of(splits.aux_pretrain), cfg.pretrain, path);
    std::ostringstream os;
    os << "key = " << pretrain_key(cfg) << "\nepochs = " << report.epochs
       << "\ntrain_accuracy = " << std::setprecision(17) << report.train_accuracy
       << "\nseconds = " << seconds_since(t0) << '\n';
    write_text(fs::path(path).replace_extension(".txt"), os.str());
    if (log) *log << "pretraining done: accuracy " << report.train_accuracy << " after " << report.epochs << " epochs"
                  << std::endl;
    return path;
}

std::vector<Image> noise_images(const config::ExperimentConfig& cfg) {
    const int n = cfg.data.image_size;
    return scm::noise_ood(cfg.eval.noise_count, 3, n, n, derive_seed(cfg.data.seed, {tag("noise")}),
                          cfg.data.noise_mean, cfg.data.noise_std);
}

void write_run_metadata(const fs::path& dir, const config::ExperimentConfig& cfg, const fs::path& pretrained) {
    fs::create_directories(dir);
    write_text(dir / "config.txt", config::echo(cfg));
    std::ostringstream os;
    os << "seed = " << cfg.seed << "\ndata.seed = " << cfg.data.seed << "\npretrain.seed = " << cfg.pretrain.seed
       << "\nteacher_head_seed = " << derive_seed(cfg.seed, {tag("teacher")})
       << "\nstudent_seed = " << derive_seed(cfg.seed, {tag("student")})
       << "\nnoise_seed = " << derive_seed(cfg.data.seed, {tag("noise")})
       << "\npretrained = " << pretrained.string() << '\n';
    write_text(dir / "seeds.txt", os.str());
}

void write_reports(const fs::path& dir, const eval::EvalResult& r) {
    eval::write_scores(dir / "scores.tsv", r.scores);
    write_text(dir / "report.json", eval::report_json(r) + "\n");
    write_text(dir / "report.csv", eval::report_csv(r));
}

RunOutcome train_run(const config::ExperimentConfig& cfg, const fs::path& run_dir, const scm::DatasetSplits& splits,
                     const fs::path& pretrained, const RunInfo& info, bool force, std::ostream* log) {
    RunOutcome out;
    if (!force && fs::exists(run_dir / "report.json") && fs::exists(run_dir / "scores.tsv")) {
        out.result = eval::reports_from_scores(eval::read_scores(run_dir / "scores.tsv"));
        out.reused = true;
        return out;
    }
    write_run_metadata(run_dir, cfg, pretrained);
    {
        std::ostringstream os;
        os << "group = " << info.group << "\nrow = " << info.row << "\nseed = " << cfg.seed << '\n';
        write_text(run_dir / "run.txt", os.str());
    }
    train::TrainConfig tc = cfg.train_config();
    tc.checkpoint_dir = run_dir / "checkpoint";
    tc.failure_dir = run_dir;

    std::unique_ptr<train::TrainState> state;
    if (!force && fs::exists(tc.checkpoint_dir / "checkpoint.txt")) {
        state = train::load_checkpoint(tc.checkpoint_dir, pretrained, tc);
        out.resumed_from_epoch = state->epochs_done;
        if (log) *log << "resuming " << run_dir.string() << " from epoch " << state->epochs_done << std::endl;
    } else {
        state = train::make_state(pretrained, tc);
    }
    const auto images = scm::images_of(splits.train);
    const auto t0 = std::chrono::steady_clock::now();
    train::train(*state, images, tc, std::nullopt, [&](int epoch, const std::vector<train::StepRecord>& history) {
        if (!log) return;
        double main = 0.0, ce = 0.0;
        int k = 0;
        for (const auto& h : history) {
            if (h.epoch == epoch - 1) {
                main += h.main_loss;
                ce += h.ce_loss;
                ++k;
            }
        }
        *log << "  epoch " << epoch << "/" << tc.epochs << " loss " << main / std::max(k, 1) << " ce "
             << ce / std::max(k, 1) << " (" << std::fixed << std::setprecision(1) << seconds_since(t0) << "s)"
             << std::defaultfloat << std::setprecision(6) << std::endl;
    });
    out.train_seconds = seconds_since(t0);
    train::save_models(run_dir / "models.rndw", *state);
    train::write_history(run_dir / "history.tsv", state->history);

    const auto t1 = std::chrono::steady_clock::now();
    const auto noise = cfg.eval.noise ? noise_images(cfg) : std::vector<Image>{};
    out.result = eval::evaluate(state->teacher.net, state->student, splits, cfg.eval.noise ? &noise : nullptr);
    out.eval_seconds = seconds_since(t1);
    write_reports(run_dir, out.result);
    std::ostringstream timing;
    timing << "train_seconds = " << out.train_seconds << "\neval_seconds = " << out.eval_seconds
           << "\nresumed_from_epoch = " << out.resumed_from_epoch << '\n';
    write_text(run_dir / "timing.txt", timing.str());
    return out;
}

eval::EvalResult evaluate_run(const config::ExperimentConfig& cfg, const fs::path& run_dir,
                              const scm::DatasetSplits& splits, const fs::path& pretrained) {
    if (!fs::exists(run_dir / "models.rndw")) throw MissingArtifact("no trained models in " + run_dir.string());
    auto state = train::make_state(pretrained, cfg.train_config());
    train::load_models(run_dir / "models.rndw", *state);
    const auto noise = cfg.eval.noise ? noise_images(cfg) : std::vector<Image>{};
    return eval::evaluate(state->teacher.net, state->student, splits, cfg.eval.noise ? &noise : nullptr);
}

// ---------------------------------------------------------------- ablation

std::vector<std::string> setup_overrides(char setup) {
    switch (setup) {
        case 'A':
            // A student copied from the teacher would start at the minimum of
            // the TS loss and never move, so the baseline starts from scratch.
            return {"model.heads=false", "loss.ce=false", "ood.enabled=false", "loss.variant=ts",
                    "model.student_init=random"};
        case 'B':
            return {"model.heads=false", "loss.ce=false", "ood.enabled=true", "loss.variant=ocl", "ood.strategy=core"};
        case 'C':
            return {"model.heads=true", "loss.ce=true", "ood.enabled=true", "loss.variant=ts", "ood.strategy=core"};
        case 'D':
            return {"model.heads=true", "loss.ce=true", "ood.enabled=true", "loss.variant=ocl",
                    "ood.strategy=random_region"};
        case 'E':
            return {"model.heads=true", "loss.ce=true", "ood.enabled=true", "loss.variant=ocl", "ood.strategy=core"};
    }
    throw ConfigError(std::string("unknown setup '") + setup + "' (expected A-E)");
}

std::vector<std::string> ablation_groups() { return {"setups", "losses", "masks", "exposure", "strategy"}; }

std::vector<AblationRow> ablation_rows(const std::string& group) {
    std::vector<AblationRow> rows;
    if (group == "setups") {
        for (char s : std::string("ABCDE")) rows.push_back({std::string(1, s), setup_overrides(s)});
    } else if (group == "losses") {
        for (const char* v : {"g_setup_a", "g_setup_b", "ocl", "g_setup_d"}) {
            auto o = setup_overrides('E');
            o.push_back(std::string("loss.variant=") + v);
            rows.push_back({v, o});
        }
    } else if (group == "masks") {
        const std::vector<std::pair<int, int>> ranges{{5, 20}, {10, 30}, {20, 40}, {20, 50}, {30, 50}, {40, 70}};
        for (auto [lo, hi] : ranges) {
            auto o = setup_overrides('E');
            o.push_back("ood.alpha_min=" + std::to_string(lo / 100.0));
            o.push_back("ood.alpha_max=" + std::to_string(hi / 100.0));
            rows.push_back({std::to_string(lo) + "-" + std::to_string(hi), o});
        }
    } else if (group == "exposure") {
        for (int pctv : {0, 5, 10, 20}) {
            auto o = setup_overrides('E');
            o.push_back("data.exposure=" + std::to_string(pctv / 100.0));
            rows.push_back({std::to_string(pctv) + "%", o});
        }
    } else if (group == "strategy") {
        for (const char* s : {"core", "global"}) {
            auto o = setup_overrides('E');
            o.push_back(std::string("ood.strategy=") + s);
            rows.push_back({s, o});
        }
    } else {
        throw ConfigError("unknown ablation group '" + group + "'");
    }
    return rows;
}

fs::path ablation_dir(const fs::path& root, const std::string& group, const std::string& row, std::uint64_t seed) {
    std::string safe = row;
    std::replace(safe.begin(), safe.end(), '%', 'p');
    return root / "ablate" / group / safe / ("seed_" + std::to_string(seed));
}

// ------------------------------------------------------------------ report

std::vector<RunSummary> collect_runs(const fs::path& root) {
    std::vector<RunSummary> out;
    if (!fs::exists(root)) throw MissingArtifact("no such directory: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().filename() == "scores.tsv" &&
            fs::exists(entry.path().parent_path() / "run.txt")) {
            dirs.push_back(entry.path().parent_path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
        RunSummary s;
        s.dir = d;
        s.info = read_run_info(d / "run.txt", &s.seed);
        s.result = eval::reports_from_scores(eval::read_scores(d / "scores.tsv"));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<RowAggregate> aggregate(const std::vector<RunSummary>& runs) {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<const RunSummary*>> by_row;
    for (const auto& r : runs) {
        const auto key = std::pair{r.info.group, r.info.row};
        if (!by_row.count(key)) order.push_back(key);
        by_row[key].push_back(&r);
    }
    std::vector<RowAggregate> out;
    for (const auto& key : order) {
        const auto& members = by_row[key];
        RowAggregate a;
        a.group = key.first;
        a.row = key.second;
        a.seeds = static_cast<int>(members.size());
        std::vector<double> std_v, rob_v, aupr_v, fpr_v, far_v;
        for (const auto* m : members) {
            std_v.push_back(m->result.standard.auroc);
            rob_v.push_back(m->result.robust.auroc);
            aupr_v.push_back(m->result.robust.aupr);
            fpr_v.push_back(m->result.robust.fpr95);
            if (m->result.far_ood) far_v.push_back(m->result.far_ood->auroc);
        }
        double unused = 0.0;
        mean_std(std_v, a.standard_mean, a.standard_std);
        mean_std(rob_v, a.robust_mean, a.robust_std);
        mean_std(aupr_v, a.aupr_robust, unused);
        mean_std(fpr_v, a.fpr95_robust, unused);
        if (!far_v.empty()) mean_std(far_v, a.far_mean, unused);
        out.push_back(a);
    }
    return out;
}

std::string summary_csv(const std::vector<RowAggregate>& rows) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "group,row,seeds,standard_auroc,standard_std,robust_auroc,robust_std,robust_aupr,robust_fpr95,far_ood_auroc\n";
    for (const auto& r : rows) {
        os << r.group << ',' << r.row << ',' << r.seeds << ',' << r.standard_mean << ',' << r.standard_std << ','
           << r.robust_mean << ',' << r.robust_std << ',' << r.aupr_robust << ',' << r.fpr95_robust << ',';
        if (r.far_mean >= 0.0) os << r.far_mean;
        os << '\n';
    }
    return os.str();
}

std::string summary_markdown(const std::vector<RowAggregate>& rows) {
    std::ostringstream os;
    os << "| Group | Row | Seeds | Standard / Robust AUROC (%) | Robust AUPR (%) | Robust FPR95 (%) | Noise AUROC (%) |\n"
       << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.group << " | " << r.row << " | " << r.seeds << " | " << pct(r.standard_mean) << " / **"
           << pct(r.robust_mean) << "** | " << pct(r.aupr_robust) << " | " << pct(r.fpr95_robust) << " | "
           << (r.far_mean >= 0.0 ? pct(r.far_mean) : "-") << " |\n";
    }
    return os.str();
}

std::string bar_chart_svg(const std::vector<RowAggregate>& rows) {
    const int bar = 18, gap = 6, group_gap = 22, left = 50, top = 30, height = 220;
    const int width = left + static_cast<int>(rows.size()) * (2 * bar + gap + group_gap) + 20;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 70
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"18\">AUROC (%): standard (grey) vs robust (blue)</text>\n";
    for (int t = 0; t <= 100; t += 25) {
        const double y = top + height - height * t / 100.0;
        os << "<line x1=\"" << left - 4 << "\" x2=\"" << width - 10 << "\" y1=\"" << y << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << t
           << "</text>\n";
    }
    int x = left + 8;
    for (const auto& r : rows) {
        const auto draw = [&](double v, const char* colour) {
            const double h = height * std::clamp(v, 0.0, 1.0);
            os << "<rect x=\"" << x << "\" y=\"" << top + height - h << "\" width=\"" << bar << "\" height=\"" << h
               << "\" fill=\"" << colour << "\"/>\n";
            os << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + height - h - 3
               << "\" text-anchor=\"middle\" font-size=\"9\">" << pct(v) << "</text>\n";
            x += bar + gap;
        };
        const int start = x;
        draw(r.standard_mean, "#9e9e9e");
        draw(r.robust_mean, "#1f77b4");
        os << "<text x=\"" << start + bar << "\" y=\"" << top + height + 16 << "\" text-anchor=\"middle\">"
           << xml_escape(r.row) << "</text>\n";
        os << "<text x=\"" << start + bar << "\" y=\"" << top + height + 30
           << "\" text-anchor=\"middle\" fill=\"#666\" font-size=\"9\">" << xml_escape(r.group) << "</text>\n";
        x += group_gap - gap;
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace rnd::pipeline
