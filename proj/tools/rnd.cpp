// Command-line driver: data generation, pretraining, training, evaluation,
// ablations and reports.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "rnd/config.hpp"
#include "rnd/errors.hpp"
#include "rnd/eval.hpp"
#include "rnd/pipeline.hpp"
#include "rnd/saliency.hpp"
#include "rnd/scm.hpp"
#include "rnd/trainer.hpp"

namespace fs = std::filesystem;
using namespace rnd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kTraining = 3, kMissing = 4 };

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
};

config::ExperimentConfig load_config(const Common& c) {
    auto cfg = c.config_path.empty() ? config::parse("", "<defaults>") : config::load(c.config_path);
    config::apply_overrides(cfg, c.overrides);
    config::validate(cfg);
    return cfg;
}

void print_result(const std::string& label, const eval::EvalResult& r) {
    std::printf("%s\n", label.c_str());
    auto line = [](const eval::MetricReport& m) {
        std::printf("  %-14s auroc %.4f  aupr %.4f  fpr95 %.4f  (id %d, ood %d)\n", m.tag.c_str(), m.auroc, m.aupr,
                    m.fpr95, m.n_id, m.n_ood);
    };
    line(r.standard);
    line(r.robust);
    if (r.far_ood) line(*r.far_ood);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Horizontal strips of equally sized tiles, one strip per row.
Image montage(const std::vector<std::vector<Image>>& rows, int pad = 2) {
    const int h = rows.front().front().height, w = rows.front().front().width;
    int cols = 0;
    for (const auto& r : rows) cols = std::max(cols, static_cast<int>(r.size()));
    Image out(3, static_cast<int>(rows.size()) * (h + pad) + pad, cols * (w + pad) + pad, 1.0f);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const Image& tile = rows[r][c];
            const int oy = pad + static_cast<int>(r) * (h + pad), ox = pad + static_cast<int>(c) * (w + pad);
            for (int ch = 0; ch < 3; ++ch) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) out.at(ch, oy + y, ox + x) = tile.at(tile.channels == 1 ? 0 : ch, y, x);
                }
            }
        }
    }
    return out;
}

Image mask_overlay(const Image& img, const ood::CoreMask& m) {
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const bool edge = m.contains(y, x) && (y == m.top || x == m.left || y == m.top + m.side_h - 1 ||
                                                   x == m.left + m.side_w - 1);
            if (!edge) continue;
            out.at(0, y, x) = 1.0f;
            out.at(1, y, x) = 0.0f;
            out.at(2, y, x) = 0.0f;
        }
    }
    return out;
}

int cmd_gen_data(const Common& c, const std::string& out_arg) {
    auto cfg = load_config(c);
    const fs::path out = out_arg.empty() ? pipeline::output_root(cfg) / "data" : fs::path(out_arg);
    const auto splits = scm::generate_dataset(cfg.data);
    scm::write_dataset(out, splits, cfg.data);
    std::printf("wrote %s: train %zu, test_main %zu, test_shifted %zu, aux_pretrain %zu\n", out.string().c_str(),
                splits.train.size(), splits.test_main.size(), splits.test_shifted.size(), splits.aux_pretrain.size());
    return kOk;
}

int cmd_pretrain(const Common& c) {
    auto cfg = load_config(c);
    const fs::path root = pipeline::output_root(cfg);
    const auto splits = pipeline::load_data(cfg);
    const fs::path path = pipeline::ensure_pretrained(cfg, root, splits, &std::cout);
    std::printf("%s\n", path.string().c_str());
    return kOk;
}

fs::path default_run_dir(const config::ExperimentConfig& cfg) {
    return pipeline::output_root(cfg) / "train" / ("seed_" + std::to_string(cfg.seed));
}

int cmd_train(const Common& c, const std::string& run_arg, bool force) {
    auto cfg = load_config(c);
    const fs::path root = pipeline::output_root(cfg);
    const fs::path run_dir = run_arg.empty() ? default_run_dir(cfg) : fs::path(run_arg);
    const auto splits = pipeline::load_data(cfg);
    const fs::path pre = pipeline::ensure_pretrained(cfg, root, splits, &std::cout);
    std::printf("training -> %s\n", run_dir.string().c_str());
    const auto outcome = pipeline::train_run(cfg, run_dir, splits, pre, {}, force, &std::cout);
    print_result(outcome.reused ? "existing run (use --force to retrain)" : "evaluation", outcome.result);
    return kOk;
}

int cmd_eval(const Common& c, const std::string& run_arg) {
    const fs::path run_dir = run_arg;
    if (!fs::exists(run_dir / "config.txt")) throw MissingArtifact("no config.txt in " + run_dir.string());
    // The run's own normalized config, with any command-line config on top.
    auto cfg = config::load(run_dir / "config.txt");
    if (!c.config_path.empty()) cfg = config::load(c.config_path);
    config::apply_overrides(cfg, c.overrides);
    config::validate(cfg);
    const auto splits = pipeline::load_data(cfg);
    const fs::path pre = pipeline::pretrained_path(cfg, pipeline::output_root(cfg));
    if (!fs::exists(pre)) throw MissingArtifact("pretrained weights not found: " + pre.string());
    const auto result = pipeline::evaluate_run(cfg, run_dir, splits, pre);
    pipeline::write_reports(run_dir, result);
    print_result("evaluation", result);
    return kOk;
}

int cmd_craft_preview(const Common& c, int count, const std::string& out_arg) {
    auto cfg = load_config(c);
    const fs::path root = pipeline::output_root(cfg);
    const auto splits = pipeline::load_data(cfg);
    const fs::path pre = pipeline::ensure_pretrained(cfg, root, splits, &std::cout);
    auto tc = cfg.train_config();
    auto state = train::make_state(pre, tc);
    auto images = scm::images_of(splits.train);
    images.resize(std::min<std::size_t>(images.size(), static_cast<std::size_t>(std::max(count, 1))));
    train::build_saliency_cache(*state, images, tc);

    const transforms::Registry registry(tc.light, tc.hard);
    std::vector<std::vector<Image>> rows;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& sm = state->saliency_cache[i];
        Rng rng(derive_seed(tc.seed, {tag("craft-preview"), i}));
        const auto crafted = ood::craft_ood(images[i], sm, registry, rng, tc.craft);
        rows.push_back({images[i], saliency::to_image(sm), mask_overlay(images[i], crafted.mask), crafted.image});
    }
    const fs::path out = out_arg.empty() ? root / "craft_preview.png" : fs::path(out_arg);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_png(out, montage(rows));
    std::printf("wrote %s (columns: image, saliency, mask, A-OOD)\n", out.string().c_str());
    return kOk;
}

int cmd_ablate(const Common& c, std::vector<std::string> groups, const std::string& setups,
               const std::string& seeds_arg, bool force) {
    auto base = load_config(c);
    const fs::path root = pipeline::output_root(base);
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
    if (seeds.empty()) seeds.push_back(base.seed);

    std::vector<std::pair<std::string, pipeline::AblationRow>> plan;
    if (!setups.empty()) {
        for (const auto& s : split_list(setups)) {
            if (s.size() != 1) throw ConfigError("setup names are single letters A-E, got '" + s + "'");
            plan.push_back({"setups", {s, pipeline::setup_overrides(s[0])}});
        }
    }
    if (groups.empty() && plan.empty()) groups = pipeline::ablation_groups();
    for (const auto& g : groups) {
        for (auto& r : pipeline::ablation_rows(g)) plan.push_back({g, std::move(r)});
    }

    std::map<std::string, scm::DatasetSplits> data_cache;
    for (const auto& [group, row] : plan) {
        for (std::uint64_t seed : seeds) {
            auto cfg = base;
            config::apply_overrides(cfg, row.overrides);
            cfg.seed = seed;
            config::validate(cfg);
            const std::string data_key = cfg.data_dir.string() + "\n" + scm::config_text(cfg.data);
            if (!data_cache.count(data_key)) data_cache.emplace(data_key, pipeline::load_data(cfg));
            const auto& splits = data_cache.at(data_key);
            const fs::path pre = pipeline::ensure_pretrained(cfg, root, splits, &std::cout);
            const fs::path dir = pipeline::ablation_dir(root, group, row.name, seed);
            std::printf("[%s/%s seed %llu] %s\n", group.c_str(), row.name.c_str(),
                        static_cast<unsigned long long>(seed), dir.string().c_str());
            std::fflush(stdout);
            const auto outcome = pipeline::train_run(cfg, dir, splits, pre, {group, row.name}, force, &std::cout);
            std::printf("  standard %.4f  robust %.4f%s\n", outcome.result.standard.auroc, outcome.result.robust.auroc,
                        outcome.reused ? "  (existing)" : "");
        }
    }
    const auto rows = pipeline::aggregate(pipeline::collect_runs(root / "ablate"));
    std::cout << '\n' << pipeline::summary_markdown(rows);
    return kOk;
}

int cmd_theory(const Common& c, const std::string& out_arg) {
    auto cfg = load_config(c);
    const fs::path root = pipeline::output_root(cfg);
    const auto splits = pipeline::load_data(cfg);
    const fs::path pre = pipeline::ensure_pretrained(cfg, root, splits, &std::cout);
    const auto teacher = build_teacher(pre, 0, false);
    const auto rows = eval::theorem1_diagnostic(teacher.net.encoder, cfg.theory_config());

    std::ostringstream csv;
    csv << std::setprecision(17) << "severity,core_distance,eval_gap,loss_real,loss_aood\n";
    std::vector<double> dist, gap;
    std::printf("%-9s %-14s %-12s %-10s %-10s\n", "severity", "core_distance", "eval_gap", "loss_real", "loss_aood");
    for (const auto& r : rows) {
        csv << r.severity << ',' << r.core_distance << ',' << r.eval_gap << ',' << r.loss_real << ',' << r.loss_aood
            << '\n';
        std::printf("%-9.2f %-14.6f %-12.6f %-10.6f %-10.6f\n", r.severity, r.core_distance, r.eval_gap, r.loss_real,
                    r.loss_aood);
        dist.push_back(r.core_distance);
        gap.push_back(r.eval_gap);
    }
    const double rho = eval::spearman(dist, gap);
    std::printf("spearman(core_distance, eval_gap) = %.4f\n", rho);
    const fs::path out = out_arg.empty() ? root / "theory.csv" : fs::path(out_arg);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << csv.str();
    return kOk;
}

int cmd_report(const Common& c, const std::string& root_arg, const std::string& out_arg) {
    auto cfg = load_config(c);
    const fs::path root = root_arg.empty() ? pipeline::output_root(cfg) : fs::path(root_arg);
    const auto runs = pipeline::collect_runs(root);
    if (runs.empty()) throw MissingArtifact("no finished runs below " + root.string());
    for (const auto& r : runs) {
        std::printf("%-50s standard %.6f robust %.6f\n", r.dir.string().c_str(), r.result.standard.auroc,
                    r.result.robust.auroc);
    }
    const auto rows = pipeline::aggregate(runs);
    const fs::path out = out_arg.empty() ? root : fs::path(out_arg);
    fs::create_directories(out);
    std::ofstream(out / "summary.csv") << pipeline::summary_csv(rows);
    std::ofstream(out / "summary.md") << pipeline::summary_markdown(rows);
    std::ofstream(out / "summary.svg") << pipeline::bar_chart_svg(rows);
    std::cout << '\n' << pipeline::summary_markdown(rows);
    std::printf("\nwrote summary.csv, summary.md, summary.svg to %s\n", out.string().c_str());
    return kOk;
}

int cmd_config(const Common& c, bool echo_only, bool keys) {
    if (keys) {
        for (const auto& [k, doc] : config::documented_keys()) std::printf("%-28s %s\n", k.c_str(), doc.c_str());
        return kOk;
    }
    auto cfg = load_config(c);
    const std::string text = config::echo(cfg);
    if (!echo_only) {
        const fs::path root = pipeline::output_root(cfg);
        fs::create_directories(root);
        std::ofstream(root / "config.normalized.txt") << text;
    }
    std::cout << text;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Saliency-guided OOD synthesis with teacher-student novelty detection"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "config file (section.key = value lines)");
        sub->add_option("-s,--set", common.overrides, "override, key=value (repeatable)");
    };

    std::string out, run, root, groups_arg, setups, seeds;
    bool force = false, echo_only = false, keys = false;
    int count = 8;

    auto* gen = app.add_subcommand("gen-data", "generate the SCM dataset and write it to disk");
    add_common(gen);
    gen->add_option("-o,--out", out, "dataset directory (default <out>/data)");

    auto* pre = app.add_subcommand("pretrain", "pretrain the teacher on the auxiliary classes");
    add_common(pre);

    auto* tr = app.add_subcommand("train", "train a student and evaluate it");
    add_common(tr);
    tr->add_option("-r,--run", run, "run directory (default <out>/train/seed_<seed>)");
    tr->add_flag("-f,--force", force, "retrain even if the run directory holds a finished run");

    auto* ev = app.add_subcommand("eval", "re-evaluate a finished run directory");
    add_common(ev);
    ev->add_option("-r,--run", run, "run directory")->required();

    auto* cp = app.add_subcommand("craft-preview", "write a PNG of training images next to their A-OOD versions");
    add_common(cp);
    cp->add_option("-n,--count", count, "number of images");
    cp->add_option("-o,--out", out, "PNG path (default <out>/craft_preview.png)");

    auto* ab = app.add_subcommand("ablate", "run ablation rows over seeds");
    add_common(ab);
    ab->add_option("-g,--group", groups_arg, "comma list of groups: setups, losses, masks, exposure, strategy");
    ab->add_option("--setups", setups, "comma list of setups A-E (instead of whole groups)");
    ab->add_option("--seeds", seeds, "comma list of seeds (default: seed)");
    ab->add_flag("-f,--force", force, "retrain rows that already have results");

    auto* th = app.add_subcommand("theory-check", "core-distance vs evaluation-gap diagnostic");
    add_common(th);
    th->add_option("-o,--out", out, "CSV path (default <out>/theory.csv)");

    auto* rep = app.add_subcommand("report", "aggregate run directories into CSV, Markdown and SVG");
    add_common(rep);
    rep->add_option("--root", root, "directory to scan (default <out>)");
    rep->add_option("-o,--out", out, "directory for the summary files (default: the scanned root)");

    auto* cf = app.add_subcommand("config", "validate a config and echo it normalized");
    add_common(cf);
    cf->add_flag("--echo", echo_only, "print only, do not write <out>/config.normalized.txt");
    cf->add_flag("--keys", keys, "list every key with its documentation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen_data(common, out);
        if (*pre) return cmd_pretrain(common);
        if (*tr) return cmd_train(common, run, force);
        if (*ev) return cmd_eval(common, run);
        if (*cp) return cmd_craft_preview(common, count, out);
        if (*ab) return cmd_ablate(common, split_list(groups_arg), setups, seeds, force);
        if (*th) return cmd_theory(common, out);
        if (*rep) return cmd_report(common, root, out);
        if (*cf) return cmd_config(common, echo_only, keys);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kConfig;
    } catch (const TrainingFailure& e) {
        std::fprintf(stderr, "training failure: %s\n", e.what());
        return kTraining;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "training failure: %s\n", e.what());
        return kTraining;
    } catch (const MissingArtifact& e) {
        std::fprintf(stderr, "missing artifact: %s\n", e.what());
        return kMissing;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kFailure;
}
