#pragma once

// Feature-space augmentation: the explicit gradient-oriented translation,
// the homogeneous gaussian baseline with its closed-form margin loss, and
// the diagnostics built on them.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/model.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal {

// ---------------------------------------------------------------------------
// gradient-oriented translation

/// Loss of one attribute feature under classifier row k.
inline double attribute_loss(std::span<const double> f, int label, const Affine& classifier, std::size_t k) {
    return bce_with_logits(dot(classifier.W.row(k), f) + classifier.b[k], label);
}

/// Gradient of |L_cls(f) - mu| with respect to the feature f.
inline Vector goat_direction(std::span<const double> f, int label, const Affine& classifier, std::size_t k, double mu_k) {
    require_shape(f.size() == classifier.W.cols && k < classifier.W.rows, "goat feature vs classifier");
    const double z = dot(classifier.W.row(k), f) + classifier.b[k];
    const double g = abs_subgradient(bce_with_logits(z, label) - mu_k) * bce_with_logits_grad(z, label);
    Vector grad(f.size());
    const auto w = classifier.W.row(k);
    for (std::size_t m = 0; m < f.size(); ++m) {
        grad[m] = g * w[m];
    }
    return grad;
}

/// f - eta * grad_f |L_cls(f) - mu_k|, for a fixed classifier.
inline Vector goat_translate(std::span<const double> f, int label, const Affine& classifier, std::size_t k, double mu_k, double eta) {
    if (!(eta > 0.0)) {
        fail(ErrorKind::invalid_input, "input.eta", "goat_translate: eta must be positive");
    }
    Vector out(f.begin(), f.end());
    axpy(-eta, goat_direction(f, label, classifier, k, mu_k), out);
    return out;
}

// ---------------------------------------------------------------------------
// homogeneous (ISDA-style) augmentation

struct HomoAugConfig {
    Vector lambda;             // lambda^k
    std::vector<Matrix> sigma; // Sigma^k, M x M each
};

/// Random-noise covariance A A^T / M with standard gaussian A.
inline Matrix random_noise_sigma(std::size_t M, RngStream& rng) {
    Matrix A(M, M);
    for (auto& v : A.data) {
        v = rng.normal();
    }
    Matrix S = matmul(A, transpose(A));
    for (auto& v : S.data) {
        v /= static_cast<double>(M);
    }
    return S;
}

/// Draws f + L z with L L^T = lambda^k Sigma^k; factors are computed once.
class IsdaSampler {
public:
    explicit IsdaSampler(const HomoAugConfig& cfg) {
        require_shape(cfg.lambda.size() == cfg.sigma.size(), "lambda vs sigma count");
        for (std::size_t k = 0; k < cfg.sigma.size(); ++k) {
            if (!(cfg.lambda[k] >= 0.0)) {
                fail(ErrorKind::config, "config.lambda", "lambda must be non-negative");
            }
            Matrix scaled = cfg.sigma[k];
            for (auto& v : scaled.data) {
                v *= cfg.lambda[k];
            }
            factors_.push_back(psd_sqrt(scaled));
        }
    }

    Vector sample(std::span<const double> f, std::size_t k, RngStream& rng) const {
        const Matrix& L = factors_.at(k);
        require_shape(L.cols == f.size(), "isda feature width");
        Vector z(f.size());
        for (auto& v : z) {
            v = rng.normal();
        }
        Vector out(f.begin(), f.end());
        for (std::size_t r = 0; r < L.rows; ++r) {
            out[r] += dot(L.row(r), z);
        }
        return out;
    }

private:
    std::vector<Matrix> factors_;
};

/// One draw from N(f, lambda^k Sigma^k).
inline Vector isda_sample(std::span<const double> f, std::size_t k, const HomoAugConfig& cfg, RngStream& rng) {
    HomoAugConfig one{{cfg.lambda.at(k)}, {cfg.sigma.at(k)}};
    return IsdaSampler(one).sample(f, 0, rng);
}

/// (1/n) sum log(1 + exp(-s (w f + b) + w^T lambda Sigma w / 2)).
inline double isda_margin_loss(const Matrix& features, std::span<const std::uint8_t> labels, std::span<const double> w, double b,
                               double lambda_k, const Matrix& sigma_k) {
    require_shape(features.rows == labels.size() && features.cols == w.size(), "isda batch");
    if (features.rows == 0) {
        fail(ErrorKind::invalid_input, "input.empty_batch", "isda_margin_loss: empty batch");
    }
    const double margin = 0.5 * lambda_k * quadratic_form(sigma_k, w);
    double total = 0.0;
    for (std::size_t i = 0; i < features.rows; ++i) {
        const double s = label_sign(labels[i]);
        total += softplus(-s * (dot(w, features.row(i)) + b) + margin);
    }
    return total / static_cast<double>(features.rows);
}

/// lambda* with w^T lambda1 Sigma1 w = w^T lambda* SigmaStar w.
inline double margin_matched_sigma(std::span<const double> w, double lambda1, const Matrix& sigma1, const Matrix& sigma_star) {
    const double q_star = quadratic_form(sigma_star, w);
    if (!(q_star > 0.0)) {
        fail(ErrorKind::invalid_input, "input.degenerate_margin", "margin_matched_sigma: w^T Sigma* w must be positive");
    }
    return lambda1 * quadratic_form(sigma1, w) / q_star;
}

/// Per-attribute covariance of attribute features of label-1 samples.
inline std::vector<Matrix> positive_feature_covariances(const ModelParams& p, const Dataset& ds) {
    const std::size_t C = p.shape.C;
    const std::size_t M = p.shape.M;
    std::vector<Matrix> sums(C, Matrix(M, M));
    std::vector<Vector> means(C, Vector(M, 0.0));
    std::vector<std::size_t> counts(C, 0);
    ForwardTrace t;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        forward_features(p, ds.X.row(i), t);
        for (std::size_t k = 0; k < C; ++k) {
            if (!ds.Y(i, k)) {
                continue;
            }
            ++counts[k];
            axpy(1.0, t.fk.row(k), means[k]);
            outer_add(1.0, t.fk.row(k), t.fk.row(k), sums[k]);
        }
    }
    std::vector<Matrix> cov(C, Matrix(M, M));
    for (std::size_t k = 0; k < C; ++k) {
        if (counts[k] < 2) {
            continue;
        }
        const double n = static_cast<double>(counts[k]);
        for (std::size_t a = 0; a < M; ++a) {
            for (std::size_t b = 0; b < M; ++b) {
                cov[k](a, b) = (sums[k](a, b) - means[k][a] * means[k][b] / n) / (n - 1.0);
            }
        }
    }
    return cov;
}

// ---------------------------------------------------------------------------
// feature-noise estimate

struct DenoiseEstimate {
    Vector sigma_hat;    // estimated feature noise rate per attribute
    Vector success_rate; // 1 - sigma_hat
};

/// 1 - sigma^k = mean probability the gradient classifier gives the observed label.
inline DenoiseEstimate estimate_noise_rate(const ModelParams& p, const Dataset& ds) {
    const std::size_t C = p.shape.C;
    DenoiseEstimate est;
    est.success_rate.assign(C, 0.0);
    ForwardTrace t;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        forward(p, ds.X.row(i), Head::cls, t);
        for (std::size_t k = 0; k < C; ++k) {
            est.success_rate[k] += sigmoid(label_sign(ds.Y(i, k)) * t.logits[k]);
        }
    }
    for (auto& v : est.success_rate) {
        v /= static_cast<double>(ds.size());
        est.sigma_hat.push_back(1.0 - v);
    }
    return est;
}

// ---------------------------------------------------------------------------
// eigen-directions and posterior sweeps

struct EigenPairs {
    Vector values;
    std::vector<Vector> vectors; // unit norm
};

/// Top `top_l` eigenpairs of a symmetric PSD matrix by power iteration
/// with deflation.
inline EigenPairs power_iteration_eigens(Matrix A, std::size_t top_l, RngStream& rng, int iterations = 200) {
    require_shape(A.rows == A.cols && top_l <= A.rows, "power iteration");
    const std::size_t n = A.rows;
    EigenPairs out;
    Vector next(n);
    for (std::size_t l = 0; l < top_l; ++l) {
        Vector v(n);
        for (auto& x : v) {
            x = rng.normal();
        }
        // orthogonalize against found vectors so a zero remainder stays zero
        for (const auto& u : out.vectors) {
            axpy(-dot(u, v), u, v);
        }
        double nv = norm2(v);
        for (auto& x : v) {
            x /= nv;
        }
        double lambda = 0.0;
        for (int it = 0; it < iterations; ++it) {
            for (std::size_t r = 0; r < n; ++r) {
                next[r] = dot(A.row(r), v);
            }
            for (const auto& u : out.vectors) {
                axpy(-dot(u, next), u, next);
            }
            const double nn = norm2(next);
            if (nn < 1e-300) {
                lambda = 0.0;
                break;
            }
            double diff = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double val = next[r] / nn;
                diff = std::max(diff, std::abs(val - v[r]));
                v[r] = val;
            }
            lambda = nn;
            if (diff < 1e-14) {
                break;
            }
        }
        // Rayleigh quotient for the reported eigenvalue
        for (std::size_t r = 0; r < n; ++r) {
            next[r] = dot(A.row(r), v);
        }
        lambda = dot(v, next);
        out.values.push_back(lambda);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                A(r, c) -= lambda * v[r] * v[c];
            }
        }
        out.vectors.push_back(v);
    }
    return out;
}

/// Sample covariance (divisor n - 1) of row vectors.
inline Matrix row_covariance(const Matrix& rows) {
    require_shape(rows.rows >= 2, "covariance needs two rows");
    const std::size_t d = rows.cols;
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < rows.rows; ++i) {
        axpy(1.0, rows.row(i), mean);
    }
    for (auto& v : mean) {
        v /= static_cast<double>(rows.rows);
    }
    Matrix cov(d, d);
    Vector centered(d);
    for (std::size_t i = 0; i < rows.rows; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            centered[c] = rows(i, c) - mean[c];
        }
        outer_add(1.0, centered, centered, cov);
    }
    for (auto& v : cov.data) {
        v /= static_cast<double>(rows.rows - 1);
    }
    return cov;
}

/// |sigmoid(w (f + t v) + b) - sigmoid(w f + b)| along one ray, for one attribute.
inline Vector posterior_sweep(std::span<const double> f, std::span<const double> v, std::span<const double> t_grid,
                              const Affine& classifier, std::size_t k) {
    require_shape(f.size() == v.size() && f.size() == classifier.W.cols, "posterior sweep feature width");
    if (std::abs(norm2(v) - 1.0) > 1e-9) {
        fail(ErrorKind::invalid_input, "input.direction_norm", "posterior_sweep: direction must be unit norm");
    }
    const auto w = classifier.W.row(k);
    const double z0 = dot(w, f) + classifier.b[k];
    const double p0 = sigmoid(z0);
    const double wv = dot(w, v);
    Vector curve;
    curve.reserve(t_grid.size());
    for (double t : t_grid) {
        curve.push_back(t == 0.0 ? 0.0 : std::abs(sigmoid(z0 + t * wv) - p0));
    }
    return curve;
}

/// Sweep of every attribute feature along the same direction: result(t, k).
inline Matrix posterior_sweep(const Matrix& fk, std::span<const double> v, std::span<const double> t_grid, const Affine& classifier) {
    Matrix out(t_grid.size(), fk.rows);
    for (std::size_t k = 0; k < fk.rows; ++k) {
        const Vector curve = posterior_sweep(fk.row(k), v, t_grid, classifier, k);
        for (std::size_t t = 0; t < t_grid.size(); ++t) {
            out(t, k) = curve[t];
        }
    }
    return out;
}

} // namespace labelbal
