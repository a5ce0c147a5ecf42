#include "rnd/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "rnd/errors.hpp"

namespace rnd::config {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
    if (used != v.size() || !std::isfinite(d)) throw ConfigError("expected a finite number, got '" + v + "'");
    return d;
}

long long to_integer(const std::string& v) {
    std::size_t used = 0;
    long long i = 0;
    try {
        i = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected an integer, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("expected an integer, got '" + v + "'");
    return i;
}

int to_int(const std::string& v) {
    const long long i = to_integer(v);
    if (i < -2147483647LL || i > 2147483647LL) throw ConfigError("integer out of range: '" + v + "'");
    return static_cast<int>(i);
}

std::uint64_t to_seed(const std::string& v) {
    std::size_t used = 0;
    unsigned long long u = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        u = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a non-negative integer seed, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("expected a non-negative integer seed, got '" + v + "'");
    return u;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected true/false, got '" + v + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::vector<double> to_doubles(const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split(v, ',')) out.push_back(to_double(item));
    return out;
}

std::string from_doubles(const double* v, std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

std::vector<transforms::Kind> to_kinds(const std::string& v) {
    std::vector<transforms::Kind> out;
    try {
        for (const auto& item : split(v, ',')) out.push_back(transforms::kind_from_string(item));
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
    return out;
}

std::string from_kinds(const std::vector<transforms::Kind>& kinds) {
    std::string out;
    for (std::size_t i = 0; i < kinds.size(); ++i) out += (i ? "," : "") + std::string(transforms::to_string(kinds[i]));
    return out;
}

struct Field {
    std::string key;
    std::string doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    using S = const std::string&;
    static const std::vector<Field> table = {
        {"seed", "training seed (student init, views, crafting, batch order)",
         [](const C& c) { return std::to_string(c.seed); }, [](C& c, S v) { c.seed = to_seed(v); }},

        {"data.dir", "existing dataset directory; empty = generate from the data.* keys",
         [](const C& c) { return c.data_dir.string(); }, [](C& c, S v) { c.data_dir = v; }},
        {"data.seed", "dataset generator seed", [](const C& c) { return std::to_string(c.data.seed); },
         [](C& c, S v) { c.data.seed = to_seed(v); }},
        {"data.image_size", "square image side in pixels (>= 8)",
         [](const C& c) { return std::to_string(c.data.image_size); },
         [](C& c, S v) { c.data.image_size = to_int(v); }},
        {"data.confounder_strength", "coupling of core and style through U, in [0, 1]",
         [](const C& c) { return fmt(c.data.confounder_strength); },
         [](C& c, S v) { c.data.confounder_strength = to_double(v); }},
        {"data.train_count", "ID training images", [](const C& c) { return std::to_string(c.data.train_count); },
         [](C& c, S v) { c.data.train_count = to_int(v); }},
        {"data.exposure", "fraction of shifted-domain ID images in train, in [0, 1)",
         [](const C& c) { return fmt(c.data.exposure); }, [](C& c, S v) { c.data.exposure = to_double(v); }},
        {"data.shifted_pool", "shifted ID images available for exposure",
         [](const C& c) { return std::to_string(c.data.shifted_pool); },
         [](C& c, S v) { c.data.shifted_pool = to_int(v); }},
        {"data.test_count", "images per test split (half ID, half OOD; even)",
         [](const C& c) { return std::to_string(c.data.test_count); },
         [](C& c, S v) { c.data.test_count = to_int(v); }},
        {"data.aux_per_class", "auxiliary pretraining images per class",
         [](const C& c) { return std::to_string(c.data.aux_per_class); },
         [](C& c, S v) { c.data.aux_per_class = to_int(v); }},
        {"data.ood_bins", "real-OOD core distribution over the 8 star-amplitude bins",
         [](const C& c) { return from_doubles(c.data.ood_bins.data(), c.data.ood_bins.size()); },
         [](C& c, S v) {
             const auto d = to_doubles(v);
             if (d.size() != c.data.ood_bins.size()) throw ConfigError("expected 8 comma-separated bin weights");
             std::copy(d.begin(), d.end(), c.data.ood_bins.begin());
         }},

        {"pretrain.seed", "teacher pretraining seed", [](const C& c) { return std::to_string(c.pretrain.seed); },
         [](C& c, S v) { c.pretrain.seed = to_seed(v); }},
        {"pretrain.min_epochs", "epochs before the accuracy floor may stop pretraining",
         [](const C& c) { return std::to_string(c.pretrain.min_epochs); },
         [](C& c, S v) { c.pretrain.min_epochs = to_int(v); }},
        {"pretrain.max_epochs", "pretraining fails if the floor is not met by then",
         [](const C& c) { return std::to_string(c.pretrain.max_epochs); },
         [](C& c, S v) { c.pretrain.max_epochs = to_int(v); }},
        {"pretrain.batch_size", "pretraining batch size", [](const C& c) { return std::to_string(c.pretrain.batch_size); },
         [](C& c, S v) { c.pretrain.batch_size = to_int(v); }},
        {"pretrain.lr", "pretraining learning rate", [](const C& c) { return fmt(c.pretrain.lr); },
         [](C& c, S v) { c.pretrain.lr = to_double(v); }},
        {"pretrain.min_accuracy", "train accuracy floor on the auxiliary task",
         [](const C& c) { return fmt(c.pretrain.min_accuracy); },
         [](C& c, S v) { c.pretrain.min_accuracy = to_double(v); }},
        {"pretrain.augment", "light augmentation plus quarter turns during pretraining",
         [](const C& c) { return from_bool(c.pretrain.augment); },
         [](C& c, S v) { c.pretrain.augment = to_bool(v); }},

        {"model.pretrained", "existing teacher weights; empty = <output>/pretrained.rndw",
         [](const C& c) { return c.pretrained.string(); }, [](C& c, S v) { c.pretrained = v; }},
        {"model.heads", "binary heads on teacher and student",
         [](const C& c) { return from_bool(c.train.use_heads); }, [](C& c, S v) { c.train.use_heads = to_bool(v); }},
        {"model.student_init", "student encoder start: pretrained | random",
         [](const C& c) {
             return std::string(c.train.student_init == train::StudentInit::pretrained ? "pretrained" : "random");
         },
         [](C& c, S v) {
             if (v == "pretrained") c.train.student_init = train::StudentInit::pretrained;
             else if (v == "random") c.train.student_init = train::StudentInit::random;
             else throw ConfigError("expected pretrained or random, got '" + v + "'");
         }},

        {"transforms.light", "light family (views, saliency)",
         [](const C& c) { return from_kinds(c.train.light); }, [](C& c, S v) { c.train.light = to_kinds(v); }},
        {"transforms.hard", "hard family (A-OOD distortion)",
         [](const C& c) { return from_kinds(c.train.hard); }, [](C& c, S v) { c.train.hard = to_kinds(v); }},

        {"ood.enabled", "craft A-OOD counterparts", [](const C& c) { return from_bool(c.train.ood_enabled); },
         [](C& c, S v) { c.train.ood_enabled = to_bool(v); }},
        {"ood.strategy", "core | global | random_region",
         [](const C& c) { return std::string(ood::to_string(c.train.strategy)); },
         [](C& c, S v) { c.train.strategy = ood::strategy_from_string(v); }},
        {"ood.alpha_min", "lower bound of the mask area fraction",
         [](const C& c) { return fmt(c.train.craft.alpha_lo); },
         [](C& c, S v) { c.train.craft.alpha_lo = to_double(v); }},
        {"ood.alpha_max", "upper bound of the mask area fraction",
         [](const C& c) { return fmt(c.train.craft.alpha_hi); },
         [](C& c, S v) { c.train.craft.alpha_hi = to_double(v); }},
        {"ood.hard_count", "hard transforms per A-OOD sample (1 or 2)",
         [](const C& c) { return std::to_string(c.train.craft.hard_count); },
         [](C& c, S v) { c.train.craft.hard_count = to_int(v); }},
        {"ood.regenerate_each_epoch", "fresh A-OOD draws every epoch",
         [](const C& c) { return from_bool(c.train.regenerate_each_epoch); },
         [](C& c, S v) { c.train.regenerate_each_epoch = to_bool(v); }},

        {"loss.variant", "ocl | ts | g_setup_a | g_setup_b | g_setup_d",
         [](const C& c) { return std::string(objectives::to_string(c.train.variant)); },
         [](C& c, S v) { c.train.variant = objectives::variant_from_string(v); }},
        {"loss.gamma", "contrastive temperature (> 0)", [](const C& c) { return fmt(c.train.gamma); },
         [](C& c, S v) { c.train.gamma = to_double(v); }},
        {"loss.ce", "ID vs A-OOD cross-entropy task", [](const C& c) { return from_bool(c.train.use_ce); },
         [](C& c, S v) { c.train.use_ce = to_bool(v); }},
        {"loss.ce_targets", "heads receiving the CE gradient: teacher | both",
         [](const C& c) { return std::string(c.train.ce_targets == train::CeTargets::both ? "both" : "teacher"); },
         [](C& c, S v) {
             if (v == "teacher") c.train.ce_targets = train::CeTargets::teacher;
             else if (v == "both") c.train.ce_targets = train::CeTargets::both;
             else throw ConfigError("expected teacher or both, got '" + v + "'");
         }},

        {"trainer.preset", "main (lr 1e-4, wd 1e-5) | appendix (lr 5e-5, wd 1e-4); explicit keys win",
         [](const C& c) { return std::string(c.preset == Preset::appendix ? "appendix" : "main"); },
         [](C& c, S v) {
             if (v == "main") c.preset = Preset::main;
             else if (v == "appendix") c.preset = Preset::appendix;
             else throw ConfigError("expected main or appendix, got '" + v + "'");
             std::tie(c.train.lr, c.train.weight_decay) = preset_values(c.preset);
         }},
        {"trainer.epochs", "training epochs", [](const C& c) { return std::to_string(c.train.epochs); },
         [](C& c, S v) { c.train.epochs = to_int(v); }},
        {"trainer.batch_n", "ID samples per step (4n views)", [](const C& c) { return std::to_string(c.train.batch_n); },
         [](C& c, S v) { c.train.batch_n = to_int(v); }},
        {"trainer.lr", "AdamW learning rate", [](const C& c) { return fmt(c.train.lr); },
         [](C& c, S v) { c.train.lr = to_double(v); }},
        {"trainer.weight_decay", "AdamW decoupled weight decay", [](const C& c) { return fmt(c.train.weight_decay); },
         [](C& c, S v) { c.train.weight_decay = to_double(v); }},
        {"trainer.checkpoint_every", "epochs between checkpoints (0 = only at the end)",
         [](const C& c) { return std::to_string(c.train.checkpoint_every); },
         [](C& c, S v) { c.train.checkpoint_every = to_int(v); }},

        {"eval.noise", "also score Gaussian-noise images as far OOD", [](const C& c) { return from_bool(c.eval.noise); },
         [](C& c, S v) { c.eval.noise = to_bool(v); }},
        {"eval.noise_count", "noise images", [](const C& c) { return std::to_string(c.eval.noise_count); },
         [](C& c, S v) { c.eval.noise_count = to_int(v); }},
        {"eval.noise_mean", "noise pixel mean", [](const C& c) { return fmt(c.data.noise_mean); },
         [](C& c, S v) { c.data.noise_mean = to_double(v); }},
        {"eval.noise_std", "noise pixel standard deviation", [](const C& c) { return fmt(c.data.noise_std); },
         [](C& c, S v) { c.data.noise_std = to_double(v); }},

        {"theory.severities", "mixing weights toward the far core bins, each in [0, 1]",
         [](const C& c) { return from_doubles(c.theory.severities.data(), c.theory.severities.size()); },
         [](C& c, S v) { c.theory.severities = to_doubles(v); }},
        {"theory.train_per_class", "probe training images per class",
         [](const C& c) { return std::to_string(c.theory.train_per_class); },
         [](C& c, S v) { c.theory.train_per_class = to_int(v); }},
        {"theory.test_per_class", "probe test images per class",
         [](const C& c) { return std::to_string(c.theory.test_per_class); },
         [](C& c, S v) { c.theory.test_per_class = to_int(v); }},

        {"output.dir", "output root (RND_OUT overrides)", [](const C& c) { return c.output.string(); },
         [](C& c, S v) { c.output = v; }},
    };
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

/// Sets fields in table order after the preset, so explicit lr/weight decay
/// override it regardless of where they appear.
void apply_entries(ExperimentConfig& cfg, const std::map<std::string, std::pair<std::string, std::string>>& entries) {
    const auto apply = [&](const Field& f) {
        const auto it = entries.find(f.key);
        if (it == entries.end()) return;
        try {
            f.set(cfg, it->second.first);
        } catch (const ConfigError& e) {
            throw ConfigError(it->second.second + ": " + f.key + ": " + e.what());
        }
    };
    if (const Field* preset = find_field("trainer.preset")) apply(*preset);
    for (const auto& f : fields()) {
        if (f.key != "trainer.preset") apply(f);
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

std::pair<double, double> preset_values(Preset p) {
    return p == Preset::appendix ? std::pair{5e-5, 1e-4} : std::pair{1e-4, 1e-5};
}

train::TrainConfig ExperimentConfig::train_config() const {
    train::TrainConfig t = train;
    t.seed = seed;
    return t;
}

eval::DiagnosticConfig ExperimentConfig::theory_config() const {
    eval::DiagnosticConfig d = theory;
    d.scm = data;
    d.seed = seed;
    return d;
}

ExperimentConfig parse(const std::string& text, const std::string& origin) {
    std::map<std::string, std::pair<std::string, std::string>> entries;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value': " + trim(raw));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!find_field(key)) throw ConfigError(where + ": unknown key '" + key + "'");
        if (entries.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
        entries[key] = {value, where};
    }
    ExperimentConfig cfg;
    apply_entries(cfg, entries);
    return cfg;
}

ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
    std::map<std::string, std::pair<std::string, std::string>> entries;
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "': expected key=value");
        const std::string key = trim(o.substr(0, eq));
        if (!find_field(key)) throw ConfigError("override '" + o + "': unknown key '" + key + "'");
        entries[key] = {trim(o.substr(eq + 1)), "override '" + o + "'"};
    }
    apply_entries(cfg, entries);
}

void validate(const ExperimentConfig& cfg) {
    const auto& d = cfg.data;
    require(d.image_size >= 8, "data.image_size", "must be >= 8");
    require(d.confounder_strength >= 0.0 && d.confounder_strength <= 1.0, "data.confounder_strength",
            "must lie in [0, 1]");
    require(d.train_count >= 1, "data.train_count", "must be >= 1");
    require(d.exposure >= 0.0 && d.exposure < 1.0, "data.exposure", "must lie in [0, 1)");
    require(d.shifted_pool >= 0, "data.shifted_pool", "must be >= 0");
    require(std::lround(d.train_count * d.exposure) <= d.shifted_pool, "data.exposure",
            "needs more shifted samples than data.shifted_pool provides");
    require(d.test_count >= 2 && d.test_count % 2 == 0, "data.test_count", "must be even and >= 2");
    require(d.aux_per_class >= 1, "data.aux_per_class", "must be >= 1");
    double bins = 0.0;
    for (double b : d.ood_bins) {
        require(b >= 0.0, "data.ood_bins", "weights must be non-negative");
        bins += b;
    }
    require(bins > 0.0, "data.ood_bins", "weights must not all be zero");
    if (!cfg.data_dir.empty()) {
        require(std::filesystem::is_directory(cfg.data_dir), "data.dir",
                "directory does not exist: " + cfg.data_dir.string());
    }

    const auto& p = cfg.pretrain;
    require(p.min_epochs >= 1, "pretrain.min_epochs", "must be >= 1");
    require(p.max_epochs >= p.min_epochs, "pretrain.max_epochs", "must be >= pretrain.min_epochs");
    require(p.batch_size >= 1, "pretrain.batch_size", "must be >= 1");
    require(p.lr > 0.0, "pretrain.lr", "must be > 0");
    require(p.min_accuracy >= 0.0 && p.min_accuracy <= 1.0, "pretrain.min_accuracy", "must lie in [0, 1]");
    if (!cfg.pretrained.empty()) {
        require(std::filesystem::is_regular_file(cfg.pretrained), "model.pretrained",
                "file does not exist: " + cfg.pretrained.string());
    }

    cfg.train_config().validate();

    require(cfg.eval.noise_count >= 1, "eval.noise_count", "must be >= 1");
    require(cfg.data.noise_std >= 0.0, "eval.noise_std", "must be >= 0");

    require(cfg.theory.severities.size() >= 2, "theory.severities", "needs at least 2 values");
    for (double s : cfg.theory.severities) require(s >= 0.0 && s <= 1.0, "theory.severities", "values must lie in [0, 1]");
    require(cfg.theory.train_per_class >= 2, "theory.train_per_class", "must be >= 2");
    require(cfg.theory.test_per_class >= 2, "theory.test_per_class", "must be >= 2");
    require(!cfg.output.empty(), "output.dir", "must not be empty");
}

std::string echo(const ExperimentConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string s = dot == std::string::npos ? "" : f.key.substr(0, dot);
        if (s != section && !os.str().empty()) os << '\n';
        section = s;
        os << "# " << f.doc << '\n' << f.key << " = " << f.get(cfg) << '\n';
    }
    return os.str();
}

std::vector<std::pair<std::string, std::string>> documented_keys() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.doc);
    return out;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return echo(a) == echo(b); }

}  // namespace rnd::config
