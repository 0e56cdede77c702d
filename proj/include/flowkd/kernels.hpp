#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "flowkd/mat.hpp"
#include "flowkd/tensor.hpp"

namespace flowkd {

// Pairwise-similarity kernels, the conditional neighbor-probability matrices
// built from them, Jeffreys divergence between two such matrices, and the
// differentiable hybrid (cosine + T-student) matching loss.

// Floor applied to off-diagonal probabilities before any log, followed by a
// column renormalization.
inline constexpr double kProbFloor = 1e-7;
// Added to vector norms in the cosine kernel so zero vectors stay defined.
inline constexpr double kNormEpsilon = 1e-8;

struct KernelKind {
    enum class Kind { Cosine, TStudent };
    Kind kind = Kind::TStudent;
    int degree = 1;  // T-student only

    static KernelKind cosine() { return {Kind::Cosine, 1}; }
    static KernelKind tstudent(int d = 1) {
        if (d < 1) throw std::invalid_argument("kernel: T-student degree must be >= 1");
        return {Kind::TStudent, d};
    }
};

enum class RepSourceKind { Teacher, Auxiliary, Student };

template <class T>
struct RepresentationBatch {
    Mat<T> values;  // N x d
    int layer_index = 0;
    RepSourceKind source = RepSourceKind::Student;

    int n() const { return values.rows; }
    void validate() const {
        if (values.rows < 2) throw std::invalid_argument("representation batch: need at least 2 samples");
        if (!values.all_finite()) throw NumericError("representation batch: non-finite values");
    }
};

template <class T>
struct CondProbMatrix {
    Mat<T> p;  // N x N, zero diagonal, columns sum to 1
    KernelKind kernel;

    int n() const { return p.rows; }
};

// ---------------------------------------------------------------------------
// scalar kernels

template <class T>
double cosine_kernel(const T* a, const T* b, int d) {
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < d; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    na = std::sqrt(na) + kNormEpsilon;
    nb = std::sqrt(nb) + kNormEpsilon;
    return 0.5 * (dot / (na * nb) + 1.0);
}

template <class T>
double tstudent_kernel(const T* a, const T* b, int d, int degree) {
    if (degree < 1) throw std::invalid_argument("kernel: T-student degree must be >= 1");
    double sq = 0;
    for (int i = 0; i < d; ++i) {
        const double diff = static_cast<double>(a[i]) - b[i];
        sq += diff * diff;
    }
    return 1.0 / (1.0 + std::pow(std::sqrt(sq), degree));
}

template <class T>
double cosine_kernel(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("kernel: dimension mismatch");
    return cosine_kernel(a.data(), b.data(), static_cast<int>(a.size()));
}

template <class T>
double tstudent_kernel(const std::vector<T>& a, const std::vector<T>& b, int degree = 1) {
    if (a.size() != b.size()) throw std::invalid_argument("kernel: dimension mismatch");
    return tstudent_kernel(a.data(), b.data(), static_cast<int>(a.size()), degree);
}

template <class T>
double kernel_value(const KernelKind& k, const T* a, const T* b, int d) {
    return k.kind == KernelKind::Kind::Cosine ? cosine_kernel(a, b, d)
                                              : tstudent_kernel(a, b, d, k.degree);
}

// ---------------------------------------------------------------------------
// conditional probability matrix (value path)

// p[i][j] = K(x_i, x_j) / sum_{i' != j} K(x_{i'}, x_j): each column j holds
// the probability of sample j selecting each neighbor i. Off-diagonal
// entries are floored at kProbFloor and columns renormalized.
template <class T>
CondProbMatrix<T> cond_prob_matrix(const Mat<T>& reps, const KernelKind& kernel) {
    const int N = reps.rows;
    if (N < 2) throw std::invalid_argument("cond_prob_matrix: need at least 2 samples");
    CondProbMatrix<T> out;
    out.kernel = kernel;
    out.p = Mat<T>(N, N, T(0));
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) {
            const double k = kernel_value(kernel, reps.row(i), reps.row(j), reps.cols);
            out.p.at(i, j) = static_cast<T>(k);
            out.p.at(j, i) = static_cast<T>(k);
        }
    for (int j = 0; j < N; ++j) {
        double colsum = 0;
        for (int i = 0; i < N; ++i)
            if (i != j) colsum += out.p.at(i, j);
        for (int i = 0; i < N; ++i)
            if (i != j) out.p.at(i, j) = static_cast<T>(std::max(static_cast<double>(out.p.at(i, j)) / colsum,
                                                                 kProbFloor));
        double floored = 0;
        for (int i = 0; i < N; ++i)
            if (i != j) floored += out.p.at(i, j);
        for (int i = 0; i < N; ++i)
            if (i != j) out.p.at(i, j) = static_cast<T>(out.p.at(i, j) / floored);
    }
    return out;
}

template <class T>
CondProbMatrix<T> cond_prob_matrix(const RepresentationBatch<T>& batch, const KernelKind& kernel) {
    batch.validate();
    return cond_prob_matrix(batch.values, kernel);
}

// ---------------------------------------------------------------------------
// Jeffreys divergence (value path)

template <class T>
double jeffreys_divergence(const CondProbMatrix<T>& pt, const CondProbMatrix<T>& ps) {
    const int N = pt.n();
    if (ps.n() != N || pt.p.cols != ps.p.cols)
        throw std::invalid_argument("jeffreys_divergence: shape mismatch");
    double d = 0;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            if (i == j) continue;
            const double a = pt.p.at(i, j);
            const double b = ps.p.at(i, j);
            d += (a - b) * (std::log(a) - std::log(b));
        }
    return d;
}

// Debug dump, row-major with 17 significant digits.
template <class T>
void dump_csv(const CondProbMatrix<T>& m, std::ostream& os) {
    char buf[64];
    for (int i = 0; i < m.p.rows; ++i) {
        for (int j = 0; j < m.p.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(m.p.at(i, j)));
            os << (j ? "," : "") << buf;
        }
        os << "\n";
    }
}

// ---------------------------------------------------------------------------
// taped path

namespace detail {

// Guards inside sqrt/pow keep gradients finite at zero rows / coincident
// points; they perturb kernel values by under 1e-14.
inline constexpr double kSqGuard = 1e-30;

template <class T>
TensorT<T> offdiag_mask(int n) {
    std::vector<T> m(static_cast<size_t>(n) * n, T(1));
    for (int i = 0; i < n; ++i) m[static_cast<size_t>(i) * n + i] = T(0);
    return TensorT<T>::from_data({n, n}, std::move(m));
}

template <class T>
TensorT<T> identity_const(int n) {
    std::vector<T> m(static_cast<size_t>(n) * n, T(0));
    for (int i = 0; i < n; ++i) m[static_cast<size_t>(i) * n + i] = T(1);
    return TensorT<T>::from_data({n, n}, std::move(m));
}

template <class T>
TensorT<T> taped_kernel_matrix(const TensorT<T>& x, const KernelKind& kernel) {
    if (x.ndim() != 2) throw std::invalid_argument("kernel matrix: expected N x d tensor");
    if (kernel.kind == KernelKind::Kind::Cosine) {
        auto rs = row_sums(mul(x, x));
        auto norms = add_scalar(sqrt(add_scalar(rs, static_cast<T>(kSqGuard))),
                                static_cast<T>(kNormEpsilon));
        auto xn = div_colvec(x, norms);
        auto sim = matmul_nt(xn, xn);
        return add_scalar(mul_scalar(sim, T(0.5)), T(0.5));
    }
    auto rs = row_sums(mul(x, x));
    auto gram = matmul_nt(x, x);
    auto sq = add_colvec(add_rowvec(mul_scalar(gram, T(-2)), rs), rs);
    sq = maximum_scalar(sq, T(0));
    auto dist_pow = pow_scalar(add_scalar(sq, static_cast<T>(kSqGuard)), 0.5 * kernel.degree);
    return pow_scalar(add_scalar(dist_pow, T(1)), -1.0);
}

}  // namespace detail

// Differentiable conditional probability matrix for a taped N x d batch;
// same semantics (zero diagonal, column normalization, floor, renormalize)
// as the value path.
template <class T>
TensorT<T> taped_cond_prob(const TensorT<T>& x, const KernelKind& kernel) {
    if (x.dim(0) < 2) throw std::invalid_argument("taped_cond_prob: need at least 2 samples");
    const int n = x.dim(0);
    auto mask = detail::offdiag_mask<T>(n);
    auto k = mul(detail::taped_kernel_matrix(x, kernel), mask);
    auto p = div_rowvec(k, col_sums(k));
    auto floored = mul(maximum_scalar(p, static_cast<T>(kProbFloor)), mask);
    return div_rowvec(floored, col_sums(floored));
}

// Jeffreys divergence of a taped student matrix against a constant teacher
// matrix. Adding the identity to both sides turns the log-diagonal into
// log(1) = 0 without touching off-diagonal terms.
template <class T>
TensorT<T> taped_jeffreys(const Mat<T>& teacher_p, const TensorT<T>& student_p) {
    const int n = teacher_p.rows;
    if (student_p.dim(0) != n || student_p.dim(1) != n)
        throw std::invalid_argument("taped_jeffreys: shape mismatch");
    auto eye = detail::identity_const<T>(n);
    auto pt = add(TensorT<T>::from_mat(teacher_p), eye);
    auto ps = add(student_p, eye);
    auto term = mul(sub(pt, ps), sub(log(pt), log(ps)));
    return sum(term);
}

// Hybrid matching loss: Jeffreys divergence under the cosine kernel plus
// Jeffreys divergence under the T-student kernel, teacher side constant.
template <class T>
TensorT<T> hybrid_layer_loss(const Mat<T>& teacher_values, const TensorT<T>& student_values,
                             int tstudent_degree = 1) {
    if (teacher_values.rows < 2) throw std::invalid_argument("hybrid_layer_loss: need at least 2 samples");
    if (student_values.dim(0) != teacher_values.rows)
        throw std::invalid_argument("hybrid_layer_loss: batch size mismatch");
    const auto cos_k = KernelKind::cosine();
    const auto ts_k = KernelKind::tstudent(tstudent_degree);
    auto pt_cos = cond_prob_matrix(teacher_values, cos_k);
    auto pt_ts = cond_prob_matrix(teacher_values, ts_k);
    auto loss_cos = taped_jeffreys(pt_cos.p, taped_cond_prob(student_values, cos_k));
    auto loss_ts = taped_jeffreys(pt_ts.p, taped_cond_prob(student_values, ts_k));
    return add(loss_cos, loss_ts);
}

template <class T>
double hybrid_layer_loss_value(const RepresentationBatch<T>& teacher,
                               const RepresentationBatch<T>& student,
                               int tstudent_degree = 1) {
    teacher.validate();
    student.validate();
    return hybrid_layer_loss(teacher.values, TensorT<T>::from_mat(student.values), tstudent_degree)
        .item();
}

}  // namespace flowkd
