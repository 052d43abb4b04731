#pragma once

// Dense linear algebra, losses, seeded randomness and gradient checking.
// Everything is double precision and row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "labelbal/error.hpp"

namespace labelbal {

using Vector = std::vector<double>;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

// ---------------------------------------------------------------------------
// small vector kernels

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_shape(a.size() == b.size(), "dot operands");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require_shape(x.size() == y.size(), "axpy operands");
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += alpha * x[i];
    }
}

/// out = W x + b
inline void matvec_bias(const Matrix& W, std::span<const double> b, std::span<const double> x,
                        std::span<double> out) {
    require_shape(W.cols == x.size() && W.rows == b.size() && out.size() == W.rows, "W x + b");
    for (std::size_t r = 0; r < W.rows; ++r) {
        const double* w = W.data.data() + r * W.cols;
        double s = b[r];
        for (std::size_t c = 0; c < W.cols; ++c) {
            s += w[c] * x[c];
        }
        out[r] = s;
    }
}

/// out += W^T g
inline void matvec_transpose_add(const Matrix& W, std::span<const double> g, std::span<double> out) {
    require_shape(W.rows == g.size() && W.cols == out.size(), "W^T g");
    for (std::size_t r = 0; r < W.rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) {
            continue;
        }
        const double* w = W.data.data() + r * W.cols;
        for (std::size_t c = 0; c < W.cols; ++c) {
            out[c] += w[c] * gr;
        }
    }
}

/// G += scale * g x^T
inline void outer_add(double scale, std::span<const double> g, std::span<const double> x, Matrix& G) {
    require_shape(G.rows == g.size() && G.cols == x.size(), "g x^T");
    for (std::size_t r = 0; r < G.rows; ++r) {
        const double gr = scale * g[r];
        if (gr == 0.0) {
            continue;
        }
        double* out = G.data.data() + r * G.cols;
        for (std::size_t c = 0; c < G.cols; ++c) {
            out[c] += gr * x[c];
        }
    }
}

inline Matrix matmul(const Matrix& A, const Matrix& B) {
    require_shape(A.cols == B.rows, "matmul");
    Matrix C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double a = A(i, k);
            for (std::size_t j = 0; j < B.cols; ++j) {
                C(i, j) += a * B(k, j);
            }
        }
    }
    return C;
}

inline Matrix transpose(const Matrix& A) {
    Matrix T(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        for (std::size_t j = 0; j < A.cols; ++j) {
            T(j, i) = A(i, j);
        }
    }
    return T;
}

/// w^T A w
inline double quadratic_form(const Matrix& A, std::span<const double> w) {
    require_shape(A.rows == w.size() && A.cols == w.size(), "quadratic form");
    double s = 0.0;
    for (std::size_t i = 0; i < A.rows; ++i) {
        s += w[i] * dot(A.row(i), w);
    }
    return s;
}

// ---------------------------------------------------------------------------
// activations and losses

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// +1 for a positive label, -1 for a negative one.
inline double label_sign(int label) { return label != 0 ? 1.0 : -1.0; }

/// log(1 + exp(-s * logit)) with s = +1 for label 1 and -1 for label 0.
inline double bce_with_logits(double logit, int label) {
    if (!std::isfinite(logit)) {
        fail(ErrorKind::invalid_input, "input.non_finite_logit", "bce_with_logits: non-finite logit");
    }
    return softplus(-label_sign(label) * logit);
}

/// d/dlogit of bce_with_logits: -s * sigmoid(-s * logit).
inline double bce_with_logits_grad(double logit, int label) {
    if (!std::isfinite(logit)) {
        fail(ErrorKind::invalid_input, "input.non_finite_logit", "bce_with_logits_grad: non-finite logit");
    }
    const double s = label_sign(label);
    return -s * sigmoid(-s * logit);
}

/// Subgradient of |v| with sign(0) = 0.
inline double abs_subgradient(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// ---------------------------------------------------------------------------
// affine layer

struct AffineGrad {
    Vector out;
    Matrix gradW;
    Vector gradb;
    Vector gradx;
};

/// Forward `W x + b` and its exact gradients against `upstream` = dL/dout.
inline AffineGrad affine_forward_backward(const Matrix& W, std::span<const double> b, std::span<const double> x,
                                          std::span<const double> upstream) {
    require_shape(W.cols == x.size(), "affine input");
    require_shape(W.rows == b.size(), "affine bias");
    require_shape(W.rows == upstream.size(), "affine upstream");
    AffineGrad g;
    g.out.resize(W.rows);
    matvec_bias(W, b, x, g.out);
    g.gradW = Matrix(W.rows, W.cols);
    outer_add(1.0, upstream, x, g.gradW);
    g.gradb.assign(upstream.begin(), upstream.end());
    g.gradx.assign(W.cols, 0.0);
    matvec_transpose_add(W, upstream, g.gradx);
    return g;
}

// ---------------------------------------------------------------------------
// finite differences

/// max_i |central difference_i - analytic_i| / (|analytic_i| + 1e-12).
inline double finite_diff_check(const std::function<double(std::span<const double>)>& f, std::span<const double> p,
                                std::span<const double> analytic_grad, double eps) {
    require_shape(p.size() == analytic_grad.size(), "finite_diff_check gradient length");
    if (!(eps >= 1e-8 && eps <= 1e-3)) {
        fail(ErrorKind::invalid_input, "input.eps_range", "finite_diff_check: eps must lie in [1e-8, 1e-3]");
    }
    Vector probe(p.begin(), p.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        probe[i] = p[i] + eps;
        const double up = f(probe);
        probe[i] = p[i] - eps;
        const double down = f(probe);
        probe[i] = p[i];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            fail(ErrorKind::numeric, "numeric.non_finite", "finite_diff_check: non-finite function value");
        }
        const double central = (up - down) / (2.0 * eps);
        worst = std::max(worst, std::abs(central - analytic_grad[i]) / (std::abs(analytic_grad[i]) + 1e-12));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// randomness

enum class Stream : std::uint64_t {
    data_gen = 1,
    init = 2,
    batch_order = 3,
    bank_sampling = 4,
    isda_noise = 5,
    split = 6,
    prototypes = 7,
    analysis = 8,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// xoshiro256** keyed by (seed, stream id). Identical keys replay identical
/// sequences on every platform; no std:: distributions are involved.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
        std::uint64_t sm = seed ^ (0xD1B54A32D192ED03ULL * (stream_id + 1));
        for (auto& s : state_) {
            s = splitmix64(sm);
        }
    }
    RngStream(std::uint64_t seed, Stream stream) : RngStream(seed, static_cast<std::uint64_t>(stream)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Independent child stream derived from this stream's key and `index`.
    RngStream substream(std::uint64_t index) const {
        std::uint64_t sm = seed_ ^ (stream_id_ << 32) ^ 0x6A09E667F3BCC909ULL;
        const std::uint64_t mixed = splitmix64(sm) ^ (index * 0x9E3779B97F4A7C15ULL);
        return RngStream(mixed, stream_id_ ^ (index + 0x100000000ULL));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) {
            fail(ErrorKind::invalid_input, "input.empty_range", "RngStream::below(0)");
        }
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t state_[4]{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// symmetric eigen-decomposition

struct SymmetricEigen {
    Vector values;  // non-increasing
    Matrix vectors; // column j is the eigenvector of values[j]
};

/// Cyclic Jacobi rotations; fine for the small (M <= 64) matrices used here.
inline SymmetricEigen jacobi_eigen(Matrix A, int max_sweeps = 100) {
    require_shape(A.rows == A.cols, "jacobi_eigen needs a square matrix");
    const std::size_t n = A.rows;
    Matrix V = Matrix::identity(n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += A(p, q) * A(p, q);
            }
        }
        if (off < 1e-30) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) < 1e-300) {
                    continue;
                }
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A(k, p);
                    const double akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A(p, k);
                    const double aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = V(k, p);
                    const double vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return A(a, a) > A(b, b); });
    SymmetricEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = A(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) {
            out.vectors(k, j) = V(k, order[j]);
        }
    }
    return out;
}

/// Symmetric square root L of a PSD matrix (L L^T = A). Throws a config
/// error when A has a clearly negative eigenvalue or is asymmetric.
inline Matrix psd_sqrt(const Matrix& A) {
    require_shape(A.rows == A.cols, "psd_sqrt needs a square matrix");
    double scale = 0.0;
    for (double v : A.data) {
        scale = std::max(scale, std::abs(v));
    }
    for (std::size_t i = 0; i < A.rows; ++i) {
        for (std::size_t j = i + 1; j < A.cols; ++j) {
            if (std::abs(A(i, j) - A(j, i)) > 1e-10 * std::max(scale, 1.0)) {
                fail(ErrorKind::config, "config.non_psd_covariance", "covariance is not symmetric");
            }
        }
    }
    const SymmetricEigen eig = jacobi_eigen(A);
    const double tol = 1e-10 * std::max(scale, 1.0);
    Matrix L(A.rows, A.cols);
    for (std::size_t j = 0; j < A.rows; ++j) {
        double lambda = eig.values[j];
        if (lambda < -tol) {
            fail(ErrorKind::config, "config.non_psd_covariance", "covariance has a negative eigenvalue");
        }
        const double root = std::sqrt(std::max(lambda, 0.0));
        for (std::size_t r = 0; r < A.rows; ++r) {
            for (std::size_t c = 0; c < A.cols; ++c) {
                L(r, c) += eig.vectors(r, j) * root * eig.vectors(c, j);
            }
        }
    }
    return L;
}

} // namespace labelbal
