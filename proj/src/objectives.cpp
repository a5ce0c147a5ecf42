#include "rnd/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "rnd/errors.hpp"

namespace rnd::objectives {

namespace {

using Entry = std::pair<int, int>;  // (student row, teacher row) of the cosine matrix

void check_inputs(const Matrix& student, const Matrix& teacher, const ViewLayout& layout) {
    if (layout.n < 1) throw InputError("paired batch needs n >= 1");
    if (student.rows() != layout.views() || teacher.rows() != layout.views()) {
        throw InputError("expected " + std::to_string(layout.views()) + " feature rows, got " +
                         std::to_string(student.rows()) + " student / " + std::to_string(teacher.rows()) +
                         " teacher");
    }
    if (student.cols() != teacher.cols()) throw InputError("student and teacher feature widths differ");
}

void check_gamma(double gamma) {
    if (!(gamma > 0.0)) throw InputError("temperature gamma must be positive, got " + std::to_string(gamma));
}

/// Accumulates sign * (lse(den) - lse(num)) over C/gamma into dC and
/// returns its value.
double contrastive_term(const Matrix& c, const std::vector<Entry>& num, const std::vector<Entry>& den, double gamma,
                        double sign, Matrix& dc) {
    const auto lse = [&](const std::vector<Entry>& es, double scale) {
        double mx = -INFINITY;
        for (auto [r, k] : es) mx = std::max(mx, c(r, k) / gamma);
        double s = 0.0;
        for (auto [r, k] : es) s += std::exp(c(r, k) / gamma - mx);
        const double value = mx + std::log(s);
        for (auto [r, k] : es) dc(r, k) += scale * std::exp(c(r, k) / gamma - value) / gamma;
        return value;
    };
    const double d = lse(den, sign);
    const double u = lse(num, -sign);
    return sign * (d - u);
}

/// dL/dC -> dL/d(student rows) through the cosine.
Matrix cosine_backward(const Matrix& student, const Matrix& teacher, const Matrix& c, const Matrix& dc) {
    Matrix s_hat = student;
    Eigen::VectorXd s_norm(student.rows());
    for (Eigen::Index r = 0; r < student.rows(); ++r) {
        s_norm(r) = student.row(r).norm();
        s_hat.row(r) /= s_norm(r);
    }
    Matrix t_hat = teacher;
    for (Eigen::Index r = 0; r < teacher.rows(); ++r) t_hat.row(r) /= teacher.row(r).norm();
    Matrix grad = dc * t_hat;
    const Eigen::VectorXd weight = (dc.array() * c.array()).rowwise().sum();
    for (Eigen::Index r = 0; r < student.rows(); ++r) {
        grad.row(r) = (grad.row(r) - weight(r) * s_hat.row(r)) / s_norm(r);
    }
    return grad;
}

/// One direction of the OCL sum. `transpose` swaps the roles of the two
/// networks by reading C with its indices exchanged.
double ocl_direction(const Matrix& c, const ViewLayout& layout, double gamma, bool transpose, Matrix& dc) {
    const int views = layout.views();
    const auto at = [&](int anchor, int other) { return transpose ? Entry{other, anchor} : Entry{anchor, other}; };
    double total = 0.0;
    std::vector<Entry> num(2);
    std::vector<Entry> den(static_cast<std::size_t>(2 * views));
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < layout.n; ++j) {
            const int a = layout.row(i, j);
            const int g = layout.counterpart(a);
            num[0] = at(a, a);
            num[1] = at(a, layout.partner(a));
            for (int b = 0; b < views; ++b) {
                den[2 * b] = at(a, b);
                den[2 * b + 1] = at(g, b);
            }
            total += contrastive_term(c, num, den, gamma, 1.0, dc);
        }
    }
    return total;
}

}  // namespace

std::vector<int> ViewLayout::labels() const {
    std::vector<int> out(static_cast<std::size_t>(views()));
    for (int r = 0; r < views(); ++r) out[r] = is_ood(r) ? 1 : 0;
    return out;
}

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::ocl: return "ocl";
        case Variant::ts: return "ts";
        case Variant::g_setup_a: return "g_setup_a";
        case Variant::g_setup_b: return "g_setup_b";
        case Variant::g_setup_d: return "g_setup_d";
    }
    return "?";
}

Variant variant_from_string(std::string_view name) {
    for (Variant v : {Variant::ocl, Variant::ts, Variant::g_setup_a, Variant::g_setup_b, Variant::g_setup_d}) {
        if (to_string(v) == name) return v;
    }
    throw ConfigError("unknown loss variant '" + std::string(name) + "'");
}

Matrix cosine_matrix(const Matrix& student, const Matrix& teacher) {
    Matrix s = student;
    for (Eigen::Index r = 0; r < s.rows(); ++r) s.row(r) /= s.row(r).norm();
    Matrix t = teacher;
    for (Eigen::Index r = 0; r < t.rows(); ++r) t.row(r) /= t.row(r).norm();
    Matrix c = s * t.transpose();
    if (!c.allFinite()) throw NumericalError("non-finite cosine similarity (zero-norm feature row?)");
    return c;
}

LossResult ocl_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout, double gamma,
                    bool symmetric) {
    check_gamma(gamma);
    check_inputs(student, teacher, layout);
    const Matrix c = cosine_matrix(student, teacher);
    Matrix dc = Matrix::Zero(c.rows(), c.cols());
    LossResult out;
    out.value = ocl_direction(c, layout, gamma, false, dc);
    if (symmetric) out.value += ocl_direction(c, layout, gamma, true, dc);
    out.grad_student = cosine_backward(student, teacher, c, dc);
    return out;
}

LossResult mean_cosine_loss(const Matrix& student, const Matrix& teacher) {
    if (student.rows() == 0 || student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
        throw InputError("mean_cosine_loss: feature matrices differ in shape or are empty");
    }
    const Matrix c = cosine_matrix(student, teacher);
    Matrix dc = Matrix::Zero(c.rows(), c.cols());
    const double w = 1.0 / static_cast<double>(c.rows());
    LossResult out;
    for (Eigen::Index a = 0; a < c.rows(); ++a) {
        out.value -= w * c(a, a);
        dc(a, a) = -w;
    }
    out.grad_student = cosine_backward(student, teacher, c, dc);
    return out;
}

LossResult ts_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout) {
    check_inputs(student, teacher, layout);
    const Matrix c = cosine_matrix(student, teacher);
    Matrix dc = Matrix::Zero(c.rows(), c.cols());
    const double w = 1.0 / (2.0 * layout.n);
    LossResult out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < layout.n; ++j) {
            const int a = layout.row(i, j);
            out.value -= w * c(a, a);
            dc(a, a) -= w;
        }
    }
    out.grad_student = cosine_backward(student, teacher, c, dc);
    return out;
}

LossResult g_setup_a_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout) {
    check_inputs(student, teacher, layout);
    const Matrix c = cosine_matrix(student, teacher);
    Matrix dc = Matrix::Zero(c.rows(), c.cols());
    const double w = 1.0 / (2.0 * layout.n);
    LossResult out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < layout.n; ++j) {
            const int a = layout.row(i, j);
            const int g = layout.counterpart(a);
            out.value += w * (c(g, g) - c(a, a));
            dc(a, a) -= w;
            dc(g, g) += w;
        }
    }
    out.grad_student = cosine_backward(student, teacher, c, dc);
    return out;
}

LossResult g_setup_b_loss(const Matrix& student, const Matrix& teacher, const ViewLayout& layout, double gamma) {
    check_gamma(gamma);
    check_inputs(student, teacher, layout);
    const Matrix c = cosine_matrix(student, teacher);
    Matrix dc = Matrix::Zero(c.rows(), c.cols());
    const int views = layout.views();
    LossResult out;
    std::vector<Entry> num(2);
    std::vector<Entry> den(static_cast<std::size_t>(views));
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < layout.n; ++j) {
            const int a = layout.row(i, j);
            for (int anchor : {a, layout.counterpart(a)}) {
                num[0] = {anchor, anchor};
                num[1] = {anchor, layout.partner(anchor)};
                for (int b = 0; b < views; ++b) den[b] = {anchor, b};
                out.value += contrastive_term(c, num, den, gamma, anchor == a ? 1.0 : -1.0, dc);
            }
        }
    }
    out.grad_student = cosine_backward(student, teacher, c, dc);
    return out;
}

LossResult ablation_loss(Variant variant, const Matrix& student, const Matrix& teacher, const ViewLayout& layout,
                         double gamma) {
    switch (variant) {
        case Variant::ocl: return ocl_loss(student, teacher, layout, gamma, true);
        case Variant::ts: return ts_loss(student, teacher, layout);
        case Variant::g_setup_a: return g_setup_a_loss(student, teacher, layout);
        case Variant::g_setup_b: return g_setup_b_loss(student, teacher, layout, gamma);
        case Variant::g_setup_d: return ocl_loss(student, teacher, layout, gamma, false);
    }
    throw ConfigError("unhandled loss variant");
}

CeResult ce_loss(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw InputError("ce_loss: " + std::to_string(logits.rows()) + " logit rows but " +
                         std::to_string(labels.size()) + " labels");
    }
    if (logits.rows() == 0) throw InputError("ce_loss on an empty batch");
    const Eigen::Index k = logits.cols();
    CeResult out;
    out.grad_logits = Matrix::Zero(logits.rows(), k);
    const double inv = 1.0 / static_cast<double>(logits.rows());
    int correct = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= k) throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
        const double mx = logits.row(r).maxCoeff();
        double s = 0.0;
        for (Eigen::Index c = 0; c < k; ++c) s += std::exp(logits(r, c) - mx);
        const double lse = mx + std::log(s);
        if (!std::isfinite(lse)) throw NumericalError("non-finite logits in ce_loss");
        out.value += inv * (lse - logits(r, y));
        for (Eigen::Index c = 0; c < k; ++c) {
            out.grad_logits(r, c) = inv * (std::exp(logits(r, c) - lse) - (c == y ? 1.0 : 0.0));
        }
        Eigen::Index arg = 0;
        logits.row(r).maxCoeff(&arg);
        if (arg == y) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows());
    return out;
}

}  // namespace rnd::objectives
