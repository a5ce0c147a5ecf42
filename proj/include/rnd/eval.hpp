#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rnd/image.hpp"
#include "rnd/model.hpp"
#include "rnd/scm.hpp"

namespace rnd::eval {

struct ScoredSample {
    std::string id;
    double score = 0.0;
    int label = 0;  // 0 = ID, 1 = OOD
    std::string domain = "main";
};

/// Sum over feature blocks of (1 - cosine(student block, teacher block)).
double ood_score(const FeatureVector& student, const FeatureVector& teacher);
double ood_score(std::span<const double> student, std::span<const double> teacher, std::span<const int> offsets);

/// Scores of many images; rows follow `images`.
std::vector<double> ood_scores(const nn::Network<float>& teacher, const nn::Network<float>& student,
                               std::span<const Image> images);

/// Mann-Whitney AUROC, OOD positive, ties counted 1/2.
double auroc(std::span<const ScoredSample> scored);
/// Step-wise area under precision-recall, thresholds descending with ties grouped.
double aupr(std::span<const ScoredSample> scored);
/// FPR at the largest threshold whose TPR reaches 0.95.
double fpr_at_95_tpr(std::span<const ScoredSample> scored);

struct MetricReport {
    std::string tag;
    double auroc = 0.0;
    double aupr = 0.0;
    double fpr95 = 0.0;
    int n_id = 0;
    int n_ood = 0;
};

MetricReport make_report(const std::string& tag, std::span<const ScoredSample> scored);

struct EvalResult {
    MetricReport standard;
    MetricReport robust;
    std::optional<MetricReport> far_ood;
    std::vector<ScoredSample> scores;
};

/// Scores test_main (standard) and test_shifted (robust); with noise images,
/// also the main ID samples against them (far-OOD).
EvalResult evaluate(const nn::Network<float>& teacher, const nn::Network<float>& student,
                    const scm::DatasetSplits& splits, const std::vector<Image>* noise = nullptr);

/// Reports recomputed from a score list with the same tags as evaluate().
EvalResult reports_from_scores(std::vector<ScoredSample> scores);

void write_scores(const std::filesystem::path& path, std::span<const ScoredSample> scores);
std::vector<ScoredSample> read_scores(const std::filesystem::path& path);
std::string report_json(const EvalResult& r);
std::string report_csv(const EvalResult& r);

double l2_distance(std::span<const double> p, std::span<const double> q);
/// Rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct DiagnosticConfig {
    scm::ScmConfig scm;
    /// Mixing weight toward the far core bins, in [0, 1]; 0 reproduces the
    /// real OOD core distribution.
    std::vector<double> severities{0.0, 0.25, 0.5, 0.75, 1.0};
    int train_per_class = 300;
    int test_per_class = 300;
    std::uint64_t seed = 0;
};

struct DiagnosticRow {
    double severity = 0.0;
    double core_distance = 0.0;
    double eval_gap = 0.0;
    double loss_real = 0.0;
    double loss_aood = 0.0;
};

/// A-OOD core distribution at a severity.
scm::BinDistribution severity_bins(const scm::BinDistribution& real, double severity);

std::vector<DiagnosticRow> theorem1_diagnostic(const nn::Encoder<float>& encoder, const DiagnosticConfig& cfg);

}  // namespace rnd::eval
