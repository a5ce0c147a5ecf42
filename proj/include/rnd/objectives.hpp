#pragma once

#include <string_view>
#include <vector>

#include "rnd/nn/tensor.hpp"

namespace rnd::objectives {

using Matrix = nn::RowMatrix<double>;

/// Row layout of a paired batch of 4n views: view i in {0,1} of sample j in
/// [0, 2n) sits at row i*2n + j. Samples j < n are ID; sample n + j is the
/// A-OOD counterpart of ID sample j.
struct ViewLayout {
    int n = 1;

    int views() const { return 4 * n; }
    int row(int view, int sample) const { return view * 2 * n + sample; }
    int view_of(int r) const { return r / (2 * n); }
    int sample_of(int r) const { return r % (2 * n); }
    bool is_ood(int r) const { return sample_of(r) >= n; }
    /// G: ID row -> row of its A-OOD counterpart (same view).
    int counterpart(int r) const { return r + n; }
    /// P: the other view of the same sample.
    int partner(int r) const { return row(1 - view_of(r), sample_of(r)); }
    /// Binary labels per row (0 = ID, 1 = A-OOD).
    std::vector<int> labels() const;
};

enum class Variant { ocl, ts, g_setup_a, g_setup_b, g_setup_d };

std::string_view to_string(Variant v);
/// ConfigError for unknown names.
Variant variant_from_string(std::string_view name);

/// Loss value and its gradient with respect to the student feature rows.
struct LossResult {
    double value = 0.0;
    Matrix grad_student;
};

/// Cosine similarity of every student row with every teacher row.
Matrix cosine_matrix(const Matrix& student, const Matrix& teacher);

/// Contrastive OOD-aware loss summed over ID samples, both views and (when
/// `symmetric`) both student/teacher directions. Teacher rows are constants.
LossResult ocl_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout, double gamma,
                    bool symmetric = true);

/// Negative mean cosine between matching rows (every row counted).
LossResult mean_cosine_loss(const Matrix& student, const Matrix& teacher);

/// Negative mean cosine over ID rows.
LossResult ts_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout);

/// -(mean ID cosine - mean A-OOD cosine).
LossResult g_setup_a_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout);

/// ID contrastive term minus the same term anchored at the A-OOD rows.
LossResult g_setup_b_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout, double gamma);

LossResult ablation_loss(Variant variant, const Matrix& student, const Matrix& teacher, const ViewLayout& layout,
                         double gamma);

/// Mean softmax cross-entropy of N x 2 logits; gradient w.r.t. logits.
struct CeResult {
    double value = 0.0;
    Matrix grad_logits;
    double accuracy = 0.0;
};

CeResult ce_loss(const Matrix& logits, const std::vector<int>& labels);

}  // namespace rnd::objectives
