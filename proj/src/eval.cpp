#include "rnd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rnd/errors.hpp"
#include "rnd/probe.hpp"

namespace rnd::eval {

namespace {

struct Counts {
    int pos = 0;
    int neg = 0;
};

Counts count_labels(std::span<const ScoredSample> scored) {
    Counts c;
    for (const auto& s : scored) {
        if (!std::isfinite(s.score)) throw NumericalError("non-finite score for sample " + s.id);
        if (s.label == 1) ++c.pos;
        else if (s.label == 0) ++c.neg;
        else throw InputError("label must be 0 or 1");
    }
    return c;
}

/// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const ScoredSample> scored) {
    std::vector<std::size_t> idx(scored.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scored[a].score > scored[b].score; });
    return idx;
}

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

nlohmann::json to_json(const MetricReport& m) {
    return {{"tag", m.tag}, {"auroc", m.auroc}, {"aupr", m.aupr}, {"fpr95", m.fpr95}, {"n_id", m.n_id},
            {"n_ood", m.n_ood}};
}

}  // namespace

double ood_score(std::span<const double> student, std::span<const double> teacher, std::span<const int> offsets) {
    if (student.size() != teacher.size()) throw InputError("feature vectors differ in length");
    double total = 0.0;
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
        double dot = 0.0, ns = 0.0, nt = 0.0;
        for (int k = offsets[b]; k < offsets[b + 1]; ++k) {
            dot += student[k] * teacher[k];
            ns += student[k] * student[k];
            nt += teacher[k] * teacher[k];
        }
        total += 1.0 - dot / (std::sqrt(ns) * std::sqrt(nt) + nn::kNormEpsilon);
    }
    return total;
}

double ood_score(const FeatureVector& student, const FeatureVector& teacher) {
    if (student.offsets != teacher.offsets) throw InputError("feature block layouts differ");
    return ood_score(student.values, teacher.values, student.offsets);
}

std::vector<double> ood_scores(const nn::Network<float>& teacher, const nn::Network<float>& student,
                               std::span<const Image> images) {
    if (teacher.block_offsets() != student.block_offsets()) throw InputError("teacher/student layouts differ");
    const FeatureMatrix t = readout_images(teacher, images);
    const FeatureMatrix s = readout_images(student, images);
    const auto offsets = teacher.block_offsets();
    std::vector<double> out(images.size());
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
        out[static_cast<std::size_t>(r)] =
            ood_score(std::span<const double>(s.row(r).data(), static_cast<std::size_t>(s.cols())),
                      std::span<const double>(t.row(r).data(), static_cast<std::size_t>(t.cols())), offsets);
    }
    return out;
}

double auroc(std::span<const ScoredSample> scored) {
    const Counts c = count_labels(scored);
    if (c.pos == 0 || c.neg == 0) throw InputError("auroc needs both ID and OOD samples");
    std::vector<double> v;
    v.reserve(scored.size());
    for (const auto& s : scored) v.push_back(s.score);
    const auto r = ranks(v);
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        if (scored[i].label == 1) pos_rank_sum += r[i];
    }
    const double p = c.pos;
    return (pos_rank_sum - p * (p + 1) / 2.0) / (p * static_cast<double>(c.neg));
}

double aupr(std::span<const ScoredSample> scored) {
    const Counts c = count_labels(scored);
    if (c.pos == 0) throw InputError("aupr needs at least one OOD sample");
    const auto idx = descending(scored);
    double area = 0.0;
    double prev_recall = 0.0;
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scored[idx[j]].score == scored[idx[i]].score) {
            (scored[idx[j]].label == 1 ? tp : fp) += 1;
            ++j;
        }
        const double recall = static_cast<double>(tp) / c.pos;
        const double precision = static_cast<double>(tp) / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

double fpr_at_95_tpr(std::span<const ScoredSample> scored) {
    const Counts c = count_labels(scored);
    if (c.pos == 0) throw InputError("fpr95 needs at least one OOD sample");
    if (c.neg == 0) return 0.0;
    const auto idx = descending(scored);
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scored[idx[j]].score == scored[idx[i]].score) {
            (scored[idx[j]].label == 1 ? tp : fp) += 1;
            ++j;
        }
        if (100LL * tp >= 95LL * c.pos) return static_cast<double>(fp) / c.neg;
        i = j;
    }
    return 1.0;
}

MetricReport make_report(const std::string& tag, std::span<const ScoredSample> scored) {
    MetricReport m;
    m.tag = tag;
    const Counts c = count_labels(scored);
    m.n_id = c.neg;
    m.n_ood = c.pos;
    m.auroc = auroc(scored);
    m.aupr = aupr(scored);
    m.fpr95 = fpr_at_95_tpr(scored);
    return m;
}

EvalResult reports_from_scores(std::vector<ScoredSample> scores) {
    std::vector<ScoredSample> main, shifted, far;
    for (const auto& s : scores) {
        if (s.domain == "main") main.push_back(s);
        else if (s.domain == "shifted") shifted.push_back(s);
        else if (s.domain == "noise") far.push_back(s);
        else throw InputError("unknown score domain '" + s.domain + "'");
    }
    if (main.empty()) throw InputError("scores lack the test_main split");
    if (shifted.empty()) throw InputError("scores lack the test_shifted split");
    EvalResult r;
    r.standard = make_report("standard", main);
    r.robust = make_report("robust", shifted);
    if (!far.empty()) {
        for (const auto& s : main) {
            if (s.label == 0) far.push_back(s);
        }
        r.far_ood = make_report("far_ood_noise", far);
    }
    r.scores = std::move(scores);
    return r;
}

EvalResult evaluate(const nn::Network<float>& teacher, const nn::Network<float>& student,
                    const scm::DatasetSplits& splits, const std::vector<Image>* noise) {
    if (splits.test_main.empty()) throw InputError("evaluation split test_main missing");
    if (splits.test_shifted.empty()) throw InputError("evaluation split test_shifted missing");
    std::vector<ScoredSample> all;
    for (const auto* part : {&splits.test_main, &splits.test_shifted}) {
        const auto images = scm::images_of(*part);
        const auto scores = ood_scores(teacher, student, images);
        for (std::size_t i = 0; i < part->size(); ++i) {
            const auto& s = (*part)[i];
            all.push_back({s.split + "_" + std::to_string(i), scores[i], s.label, std::string(scm::to_string(s.domain))});
        }
    }
    if (noise && !noise->empty()) {
        const auto scores = ood_scores(teacher, student, *noise);
        for (std::size_t i = 0; i < noise->size(); ++i) all.push_back({"noise_" + std::to_string(i), scores[i], 1, "noise"});
    }
    return reports_from_scores(std::move(all));
}

void write_scores(const std::filesystem::path& path, std::span<const ScoredSample> scores) {
    std::ofstream out(path);
    if (!out) throw MissingArtifact("cannot write " + path.string());
    out << "id\tscore\tlabel\tdomain\n";
    for (const auto& s : scores) {
        out << s.id << '\t' << fmt(s.score) << '\t' << (s.label ? "ood" : "id") << '\t' << s.domain << '\n';
    }
}

std::vector<ScoredSample> read_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("scores not found: " + path.string());
    std::vector<ScoredSample> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ScoredSample s;
        std::string label;
        ss >> s.id >> s.score >> label >> s.domain;
        if (!ss || (label != "id" && label != "ood")) throw ConfigError("malformed score line: " + line);
        s.label = label == "ood" ? 1 : 0;
        out.push_back(s);
    }
    return out;
}

std::string report_json(const EvalResult& r) {
    nlohmann::json j{{"standard", to_json(r.standard)}, {"robust", to_json(r.robust)}};
    if (r.far_ood) j["far_ood"] = to_json(*r.far_ood);
    return j.dump(2);
}

std::string report_csv(const EvalResult& r) {
    std::ostringstream os;
    os << "report,auroc,aupr,fpr95,n_id,n_ood\n";
    std::vector<const MetricReport*> rows{&r.standard, &r.robust};
    if (r.far_ood) rows.push_back(&*r.far_ood);
    for (const auto* m : rows) {
        os << m->tag << ',' << fmt(m->auroc) << ',' << fmt(m->aupr) << ',' << fmt(m->fpr95) << ',' << m->n_id << ','
           << m->n_ood << '\n';
    }
    return os.str();
}

double l2_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw InputError("distributions differ in support size");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
    return std::sqrt(s);
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InputError("spearman needs two equally long series (>= 2)");
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mean = (n + 1) / 2.0;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mean) * (ry[i] - mean);
        sxx += (rx[i] - mean) * (rx[i] - mean);
        syy += (ry[i] - mean) * (ry[i] - mean);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

scm::BinDistribution severity_bins(const scm::BinDistribution& real, double severity) {
    if (!(severity >= 0.0 && severity <= 1.0)) throw InputError("severity must lie in [0, 1]");
    // Far target: the two most distorted bins, which real OOD never uses.
    scm::BinDistribution far{};
    far[scm::kCoreBins - 2] = 0.5;
    far[scm::kCoreBins - 1] = 0.5;
    scm::BinDistribution out{};
    for (int b = 0; b < scm::kCoreBins; ++b) out[b] = (1.0 - severity) * real[b] + severity * far[b];
    return out;
}

std::vector<DiagnosticRow> theorem1_diagnostic(const nn::Encoder<float>& encoder, const DiagnosticConfig& cfg) {
    if (cfg.severities.size() < 2) throw InputError("theorem-1 diagnostic needs at least 2 severities");
    if (cfg.train_per_class < 2 || cfg.test_per_class < 2) throw InputError("diagnostic needs >= 2 samples per class");
    scm::ScmConfig scm_cfg = cfg.scm;
    scm_cfg.confounder_strength = 0.0;  // isolate the core factor

    nn::Network<float> net(encoder.config(), false);
    {
        auto src = encoder.params();
        nn::copy_parameters<float, float>(src, net.encoder.params());
    }
    const auto features = [&](const std::vector<scm::ScmSample>& samples) {
        const auto images = scm::images_of(samples);
        const FeatureMatrix f = readout_images(net, images);
        return Eigen::MatrixXd(f);
    };
    const auto draw = [&](std::string_view stream, int count, auto&& make) {
        std::vector<scm::ScmSample> out;
        for (int i = 0; i < count; ++i) out.push_back(make(derive_seed(cfg.seed, {tag(stream), static_cast<std::uint64_t>(i)})));
        return out;
    };
    const auto id_sample = [&](std::uint64_t s) { return scm::sample_labelled(scm_cfg, 0, scm::Domain::main, s); };
    const auto real_sample = [&](std::uint64_t s) { return scm::sample_labelled(scm_cfg, 1, scm::Domain::main, s); };

    const Eigen::MatrixXd id_train = features(draw("diag-id-train", cfg.train_per_class, id_sample));
    const Eigen::MatrixXd id_test = features(draw("diag-id-test", cfg.test_per_class, id_sample));
    const Eigen::MatrixXd real_test = features(draw("diag-real-test", cfg.test_per_class, real_sample));

    const auto stack = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        Eigen::MatrixXd m(a.rows() + b.rows(), a.cols());
        m << a, b;
        return m;
    };
    std::vector<int> y_train(static_cast<std::size_t>(2 * cfg.train_per_class), 0);
    std::fill(y_train.begin() + cfg.train_per_class, y_train.end(), 1);
    std::vector<int> y_test(static_cast<std::size_t>(2 * cfg.test_per_class), 0);
    std::fill(y_test.begin() + cfg.test_per_class, y_test.end(), 1);

    std::vector<DiagnosticRow> rows;
    for (double sev : cfg.severities) {
        const auto bins = severity_bins(scm_cfg.ood_bins, sev);
        const auto aood_sample = [&](std::uint64_t s) { return scm::sample_star(scm_cfg, bins, scm::Domain::main, s); };
        const Eigen::MatrixXd aood_train = features(draw("diag-aood-train", cfg.train_per_class, aood_sample));
        const Eigen::MatrixXd aood_test = features(draw("diag-aood-test", cfg.test_per_class, aood_sample));
        LogisticProbe probe(1e-3, 40);
        probe.fit(stack(id_train, aood_train), y_train);
        DiagnosticRow row;
        row.severity = sev;
        row.core_distance = l2_distance(bins, scm_cfg.ood_bins);
        row.loss_real = probe.bce(stack(id_test, real_test), y_test);
        row.loss_aood = probe.bce(stack(id_test, aood_test), y_test);
        row.eval_gap = std::abs(row.loss_real - row.loss_aood);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace rnd::eval
