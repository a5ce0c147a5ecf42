#include "rnd/scm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "rnd/errors.hpp"
#include "rnd/probe.hpp"

namespace rnd::scm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kSupersample = 4;
constexpr int kMaxRejections = 100000;
constexpr std::array<float, 3> kShapeColor{0.95f, 0.95f, 0.92f};

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s);
    const double q = v * (1 - s * f);
    const double t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

/// Point (x, y) in shape-local units (radius 1, already rotated).
bool regular_polygon(double x, double y, int sides) {
    const double apothem = std::cos(kPi / sides);
    for (int k = 0; k < sides; ++k) {
        const double a = kPi / 2 + (2 * k + 1) * kPi / sides;
        if (x * std::cos(a) + y * std::sin(a) > apothem) return false;
    }
    return true;
}

bool inside(const RenderSpec& s, double x, double y) {
    const double rho = std::hypot(x, y);
    switch (s.shape) {
        case Concept::blob:
        case Concept::star: {
            if (rho == 0.0) return true;
            const double c = x / rho;
            const double sn = y / rho;
            const double cos2 = c * c - sn * sn;
            const double cos5 = c * (16 * c * c * c * c - 20 * c * c + 5);
            return rho < 1.0 + s.ellipticity * cos2 + s.star_amplitude * cos5;
        }
        case Concept::triangle: return regular_polygon(x, y, 3);
        case Concept::square: return regular_polygon(x, y, 4);
        case Concept::ring: return rho < 1.0 && rho > 0.55;
        case Concept::cross:
            return (std::abs(x) < 0.33 && std::abs(y) < 1.0) || (std::abs(y) < 0.33 && std::abs(x) < 1.0);
    }
    return false;
}

void sample_geometry(RenderSpec& s, Rng& rng) {
    const double n = s.size;
    s.cx = n / 2 + uniform(rng, -0.1, 0.1) * n;
    s.cy = n / 2 + uniform(rng, -0.1, 0.1) * n;
    s.radius = uniform(rng, 0.22, 0.30) * n;
    s.rotation = uniform(rng, 0.0, 2 * kPi);
    s.ellipticity = uniform(rng, 0.0, 0.2);
}

int draw_bin(const BinDistribution& bins, Rng& rng) {
    std::discrete_distribution<int> dist(bins.begin(), bins.end());
    return dist(rng);
}

Latent draw_labelled(double cs, int label, Rng& rng) {
    for (int i = 0; i < kMaxRejections; ++i) {
        Latent l = sample_latent(cs, rng);
        if ((l.core > 0.5 ? 1 : 0) == label) return l;
    }
    throw InputError("could not draw a latent with the requested label");
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

std::string_view to_string(Domain d) { return d == Domain::main ? "main" : "shifted"; }

Domain domain_from_string(std::string_view s) {
    if (s == "main") return Domain::main;
    if (s == "shifted") return Domain::shifted;
    throw InputError("unknown domain '" + std::string(s) + "'");
}

double bin_amplitude(int bin) { return 0.15 + 0.07 * bin; }

BinDistribution default_ood_bins() { return {0.05, 0.15, 0.30, 0.30, 0.15, 0.05, 0.0, 0.0}; }

Latent sample_latent(double cs, Rng& rng) {
    const double u = uniform(rng, 0.0, 1.0);
    const double vc = uniform(rng, 0.0, 1.0);
    const double ve = uniform(rng, 0.0, 1.0);
    return {u, cs * u + (1 - cs) * vc, cs * u + (1 - cs) * ve};
}

void apply_style(RenderSpec& s, Domain domain, double style, Rng& rng) {
    if (domain == Domain::main) {
        s.bg_hue = 0.05 + 0.35 * style;
        s.bg_saturation = 0.6;
        s.bg_brightness = uniform(rng, 0.65, 0.9);
        s.checker = false;
        s.period = uniform(rng, 6.0, 10.0);
        s.phase = uniform(rng, 0.0, 2 * kPi);
    } else {
        s.bg_hue = 0.55 + 0.35 * style;
        s.bg_saturation = 0.6;
        s.bg_brightness = uniform(rng, 0.45, 0.7);
        s.checker = true;
        s.period = uniform(rng, 2.0, 4.0);
        s.phase = uniform(rng, 0.0, s.period);
    }
    s.noise_seed = rng();
}

Image render(const RenderSpec& s) {
    const int n = s.size;
    Image img(3, n, n);
    const double cr = std::cos(-s.rotation);
    const double sr = std::sin(-s.rotation);
    Rng noise(s.noise_seed);
    std::normal_distribution<double> jitter(0.0, 0.02);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double v;
            if (s.checker) {
                const int cx = static_cast<int>(std::floor((x + s.phase) / s.period));
                const int cy = static_cast<int>(std::floor(y / s.period));
                v = s.bg_brightness * (((cx + cy) & 1) ? 1.0 : 0.7);
            } else {
                v = s.bg_brightness * (0.75 + 0.25 * (0.5 + 0.5 * std::sin(2 * kPi * y / s.period + s.phase)));
            }
            const auto bg = hsv_to_rgb(s.bg_hue, s.bg_saturation, v);
            int hits = 0;
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = (x + (sx + 0.5) / kSupersample - s.cx) / s.radius;
                    const double py = (y + (sy + 0.5) / kSupersample - s.cy) / s.radius;
                    hits += inside(s, cr * px - sr * py, sr * px + cr * py);
                }
            }
            const double cover = static_cast<double>(hits) / (kSupersample * kSupersample);
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = static_cast<float>(cover * kShapeColor[c] + (1 - cover) * bg[c] + jitter(noise));
            }
        }
    }
    clip_unit(img);
    quantize_8bit(img);
    return img;
}

ScmSample sample_labelled(const ScmConfig& cfg, int label, Domain domain, std::uint64_t seed) {
    if (label != 0 && label != 1) throw InputError("label must be 0 (ID) or 1 (OOD)");
    Rng rng = make_rng(seed);
    ScmSample out;
    out.label = label;
    out.domain = domain;
    out.seed = seed;
    out.latent = draw_labelled(cfg.confounder_strength, label, rng);
    // The shifted environment intervenes on the style: its latent no longer
    // depends on U.
    if (domain == Domain::shifted) out.latent.style = uniform(rng, 0.0, 1.0);
    out.spec.size = cfg.image_size;
    sample_geometry(out.spec, rng);
    if (label == 1) {
        out.core_bin = draw_bin(cfg.ood_bins, rng);
        out.spec.shape = Concept::star;
        out.spec.star_amplitude = bin_amplitude(out.core_bin);
    }
    apply_style(out.spec, domain, out.latent.style, rng);
    out.image = render(out.spec);
    return out;
}

ScmSample sample_star(const ScmConfig& cfg, const BinDistribution& bins, Domain domain, std::uint64_t seed) {
    ScmConfig c = cfg;
    c.ood_bins = bins;
    return sample_labelled(c, 1, domain, seed);
}

ScmSample sample_aux(const ScmConfig& cfg, int aux_class, std::uint64_t seed) {
    if (aux_class < 0 || aux_class >= kAuxClassCount) throw InputError("aux class out of range");
    Rng rng = make_rng(seed);
    ScmSample out;
    out.split = "aux_pretrain";
    out.label = aux_class;
    out.seed = seed;
    out.domain = uniform(rng, 0.0, 1.0) < 0.5 ? Domain::main : Domain::shifted;
    RenderSpec& s = out.spec;
    s.size = cfg.image_size;
    s.shape = static_cast<Concept>(static_cast<int>(Concept::triangle) + aux_class);
    sample_geometry(s, rng);
    s.ellipticity = 0.0;
    s.bg_hue = uniform(rng, 0.0, 1.0);
    s.bg_saturation = uniform(rng, 0.3, 0.8);
    s.bg_brightness = uniform(rng, 0.45, 0.9);
    s.checker = uniform(rng, 0.0, 1.0) < 0.5;
    s.period = uniform(rng, 2.0, 10.0);
    s.phase = uniform(rng, 0.0, 2 * kPi);
    s.noise_seed = rng();
    out.image = render(s);
    return out;
}

std::vector<ScmSample> mix_exposure(const std::vector<ScmSample>& main_ids, const std::vector<ScmSample>& shifted_ids,
                                    double shifted_fraction, int total, std::uint64_t seed) {
    if (!(shifted_fraction >= 0.0 && shifted_fraction <= 1.0)) throw InputError("exposure fraction outside [0,1]");
    if (total < 0) throw InputError("negative train count");
    const int n_shift = static_cast<int>(std::lround(total * shifted_fraction));
    const int n_main = total - n_shift;
    if (n_main > static_cast<int>(main_ids.size())) {
        throw InputError("exposure needs " + std::to_string(n_main) + " main samples, pool has " +
                         std::to_string(main_ids.size()));
    }
    if (n_shift > static_cast<int>(shifted_ids.size())) {
        throw InputError("exposure needs " + std::to_string(n_shift) + " shifted samples, pool has " +
                         std::to_string(shifted_ids.size()));
    }
    Rng rng = make_rng(seed, {tag("exposure")});
    const auto pick = [&](const std::vector<ScmSample>& pool, int count) {
        std::vector<std::size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(count));
        std::sort(idx.begin(), idx.end());
        std::vector<ScmSample> out;
        for (auto i : idx) out.push_back(pool[i]);
        return out;
    };
    auto out = pick(main_ids, n_main);
    auto sh = pick(shifted_ids, n_shift);
    out.insert(out.end(), sh.begin(), sh.end());
    for (auto& s : out) s.split = "train";
    return out;
}

DatasetSplits generate_dataset(const ScmConfig& cfg) {
    if (cfg.train_count < 1 || cfg.test_count < 2 || cfg.aux_per_class < 1 || cfg.shifted_pool < 0) {
        throw InputError("scm counts must be >= 1 (test_count >= 2)");
    }
    if (cfg.image_size < 8) throw InputError("scm image_size must be >= 8");
    if (std::lround(cfg.train_count * cfg.exposure) > cfg.shifted_pool) {
        throw InputError("exposure " + fmt(cfg.exposure) + " of " + std::to_string(cfg.train_count) +
                         " train samples exceeds the shifted budget of " + std::to_string(cfg.shifted_pool));
    }
    const auto seed_of = [&](std::string_view stream, int i) {
        return derive_seed(cfg.seed, {tag(stream), static_cast<std::uint64_t>(i)});
    };
    DatasetSplits out;
    std::vector<ScmSample> main_pool, shifted_pool;
    const int n_shift = static_cast<int>(std::lround(cfg.train_count * cfg.exposure));
    for (int i = 0; i < cfg.train_count - n_shift; ++i) {
        main_pool.push_back(sample_labelled(cfg, 0, Domain::main, seed_of("train-main", i)));
    }
    for (int i = 0; i < (n_shift > 0 ? cfg.shifted_pool : 0); ++i) {
        shifted_pool.push_back(sample_labelled(cfg, 0, Domain::shifted, seed_of("train-shifted", i)));
    }
    out.train = mix_exposure(main_pool, shifted_pool, cfg.exposure, cfg.train_count, cfg.seed);

    const int half = cfg.test_count / 2;
    for (auto [domain, split, dest] : {std::tuple{Domain::main, "test_main", &out.test_main},
                                       std::tuple{Domain::shifted, "test_shifted", &out.test_shifted}}) {
        for (int i = 0; i < cfg.test_count; ++i) {
            const int label = i < half ? 0 : 1;
            auto s = sample_labelled(cfg, label, domain, seed_of(split, i));
            s.split = split;
            dest->push_back(std::move(s));
        }
    }
    for (int k = 0; k < kAuxClassCount; ++k) {
        for (int i = 0; i < cfg.aux_per_class; ++i) {
            out.aux_pretrain.push_back(sample_aux(cfg, k, seed_of("aux", k * cfg.aux_per_class + i)));
        }
    }
    return out;
}

std::vector<Image> noise_ood(int count, int channels, int height, int width, std::uint64_t seed, double mean,
                             double stddev) {
    if (count < 0 || channels < 1 || height < 1 || width < 1) throw InputError("bad noise image shape");
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng = make_rng(seed, {tag("noise"), static_cast<std::uint64_t>(i)});
        std::normal_distribution<double> dist(mean, stddev);
        Image img(channels, height, width);
        for (auto& v : img.data) v = static_cast<float>(dist(rng));
        clip_unit(img);
        out.push_back(std::move(img));
    }
    return out;
}

double style_probe_accuracy(double confounder_strength, int count, std::uint64_t seed) {
    Rng rng = make_rng(seed, {tag("style-probe")});
    Eigen::MatrixXd x(count, 1);
    std::vector<int> y(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const Latent l = sample_latent(confounder_strength, rng);
        x(i, 0) = l.style - 0.5;
        y[static_cast<std::size_t>(i)] = l.core > 0.5 ? 1 : 0;
    }
    LogisticProbe probe(1e-6, 50);
    probe.fit(x, y);
    return probe.accuracy(x, y);
}

std::string config_text(const ScmConfig& cfg) {
    std::ostringstream os;
    os << "image_size = " << cfg.image_size << '\n'
       << "confounder_strength = " << fmt(cfg.confounder_strength) << '\n'
       << "train_count = " << cfg.train_count << '\n'
       << "exposure = " << fmt(cfg.exposure) << '\n'
       << "shifted_pool = " << cfg.shifted_pool << '\n'
       << "test_count = " << cfg.test_count << '\n'
       << "aux_per_class = " << cfg.aux_per_class << '\n'
       << "noise_mean = " << fmt(cfg.noise_mean) << '\n'
       << "noise_std = " << fmt(cfg.noise_std) << '\n'
       << "seed = " << cfg.seed << '\n'
       << "ood_bins =";
    for (double b : cfg.ood_bins) os << ' ' << fmt(b);
    os << '\n';
    return os.str();
}

void write_dataset(const std::filesystem::path& dir, const DatasetSplits& splits, const ScmConfig& cfg) {
    std::filesystem::create_directories(dir / "images");
    std::ofstream manifest(dir / "manifest.tsv");
    if (!manifest) throw MissingArtifact("cannot write " + (dir / "manifest.tsv").string());
    manifest << "path\tsplit\tlabel\tdomain\tseed\tclass\n";
    for (const auto* part : {&splits.train, &splits.test_main, &splits.test_shifted, &splits.aux_pretrain}) {
        for (std::size_t i = 0; i < part->size(); ++i) {
            const ScmSample& s = (*part)[i];
            std::ostringstream name;
            name << "images/" << s.split << '_' << std::setw(5) << std::setfill('0') << i << ".png";
            write_png(dir / name.str(), s.image);
            const bool aux = s.split == "aux_pretrain";
            manifest << name.str() << '\t' << s.split << '\t' << (!aux && s.label == 1 ? "ood" : "id") << '\t'
                     << to_string(s.domain) << '\t' << s.seed << '\t' << (aux ? s.label : -1) << '\n';
        }
    }
    std::ofstream(dir / "scm_config.txt") << config_text(cfg);
}

DatasetSplits read_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.tsv");
    if (!manifest) throw MissingArtifact("dataset manifest not found: " + (dir / "manifest.tsv").string());
    DatasetSplits out;
    std::string line;
    std::getline(manifest, line);
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string path, split, label, domain, seed, cls;
        std::getline(ss, path, '\t');
        std::getline(ss, split, '\t');
        std::getline(ss, label, '\t');
        std::getline(ss, domain, '\t');
        std::getline(ss, seed, '\t');
        std::getline(ss, cls, '\t');
        ScmSample s;
        s.split = split;
        s.domain = domain_from_string(domain);
        s.seed = std::stoull(seed);
        s.image = read_png(dir / path);
        if (split == "aux_pretrain") {
            s.label = std::stoi(cls);
            out.aux_pretrain.push_back(std::move(s));
            continue;
        }
        if (label != "id" && label != "ood") throw InputError("bad label '" + label + "' in manifest");
        s.label = label == "ood" ? 1 : 0;
        if (split == "train") out.train.push_back(std::move(s));
        else if (split == "test_main") out.test_main.push_back(std::move(s));
        else if (split == "test_shifted") out.test_shifted.push_back(std::move(s));
        else throw InputError("unknown split '" + split + "' in manifest");
    }
    return out;
}

std::vector<Image> images_of(const std::vector<ScmSample>& samples) {
    std::vector<Image> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image);
    return out;
}

std::vector<int> labels_of(const std::vector<ScmSample>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
}

}  // namespace rnd::scm
