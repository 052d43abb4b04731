#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "labelbal/numkit.hpp"

#include "expect_error.hpp"

using namespace labelbal;

TEST(Bce, ZeroLogitIsLn2ForBothLabels) {
    EXPECT_DOUBLE_EQ(bce_with_logits(0.0, 1), std::log(2.0));
    EXPECT_DOUBLE_EQ(bce_with_logits(0.0, 0), std::log(2.0));
}

TEST(Bce, MatchesLongDoubleOracle) {
    for (double z : {2.0, -3.5, 0.25, 17.0, -40.0}) {
        for (int y : {0, 1}) {
            const long double s = y ? 1.0L : -1.0L;
            const long double ref = log1pl(expl(-s * static_cast<long double>(z)));
            EXPECT_NEAR(bce_with_logits(z, y), static_cast<double>(ref), 1e-15 * std::max(1.0, static_cast<double>(ref)));
        }
    }
    EXPECT_NEAR(bce_with_logits(2.0, 1), 0.126928, 1e-6);
}

TEST(Bce, LabelAntisymmetry) {
    RngStream rng(1, Stream::analysis);
    for (int i = 0; i < 1000; ++i) {
        const double t = rng.uniform(-60.0, 60.0);
        EXPECT_EQ(bce_with_logits(t, 1), bce_with_logits(-t, 0));
    }
}

TEST(Bce, StableForHugeLogits) {
    EXPECT_DOUBLE_EQ(bce_with_logits(-1e4, 1), 1e4);
    EXPECT_EQ(bce_with_logits(1e4, 1), 0.0);
    EXPECT_TRUE(std::isfinite(bce_with_logits_grad(-1e4, 1)));
}

TEST(Bce, NonFiniteLogitRejected) {
    expect_error([] { bce_with_logits(std::nan(""), 1); }, "input.non_finite_logit");
    expect_error([] { bce_with_logits(INFINITY, 0); }, "input.non_finite_logit");
}

TEST(Bce, DerivativeMatchesCentralDifferences) {
    for (int y : {0, 1}) {
        for (double t = -50.0; t <= 50.0; t += 0.37) {
            const double h = 1e-5;
            const double fd = (bce_with_logits(t + h, y) - bce_with_logits(t - h, y)) / (2 * h);
            const double g = bce_with_logits_grad(t, y);
            EXPECT_LE(std::abs(fd - g) / (std::abs(g) + 1e-300), 1e-6) << "t=" << t << " y=" << y;
        }
    }
}

TEST(Affine, IdentityMap) {
    const Matrix I = Matrix::identity(2);
    const Vector b{0, 0}, x{1, 2}, up{1, 1};
    const AffineGrad g = affine_forward_backward(I, b, x, up);
    EXPECT_EQ(g.out, (Vector{1, 2}));
    EXPECT_EQ(g.gradx, (Vector{1, 1}));
}

TEST(Affine, ZeroWeights) {
    const Matrix W(2, 3);
    const Vector b{3, 4}, x{0.5, -1, 2}, up{1, 0};
    const AffineGrad g = affine_forward_backward(W, b, x, up);
    EXPECT_EQ(g.out, (Vector{3, 4}));
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(g.gradW(0, c), x[c]);
        EXPECT_EQ(g.gradW(1, c), 0.0);
    }
}

TEST(Affine, ShapeMismatch) {
    expect_error([] { affine_forward_backward(Matrix(2, 3), Vector(2), Vector(2), Vector(2)); }, "shape.mismatch");
}

TEST(Affine, FiniteDifferencesSeed7) {
    RngStream rng(7, Stream::analysis);
    Matrix W(3, 2);
    Vector b(3), x(2), up(3);
    for (auto& v : W.data) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    for (auto& v : x) v = rng.normal();
    for (auto& v : up) v = rng.normal();
    const AffineGrad g = affine_forward_backward(W, b, x, up);
    auto loss_W = [&](std::span<const double> w) {
        Matrix Wp(3, 2);
        std::copy(w.begin(), w.end(), Wp.data.begin());
        return dot(affine_forward_backward(Wp, b, x, up).out, up);
    };
    EXPECT_LT(finite_diff_check(loss_W, W.data, g.gradW.data, 1e-5), 1e-6);
    EXPECT_LT(finite_diff_check([&](std::span<const double> xx) { return dot(affine_forward_backward(W, b, xx, up).out, up); }, x, g.gradx,
                                1e-5),
              1e-6);
    EXPECT_LT(finite_diff_check([&](std::span<const double> bb) { return dot(affine_forward_backward(W, bb, x, up).out, up); }, b, g.gradb,
                                1e-5),
              1e-6);
}

TEST(FiniteDiff, QuadraticIsExact) {
    const Vector p{1, -2};
    const Vector g{2, -4};
    EXPECT_LT(finite_diff_check([](std::span<const double> v) { return dot(v, v); }, p, g, 1e-5), 1e-8);
}

TEST(FiniteDiff, NegatedGradientGivesTwo) {
    const Vector p{1, -2};
    const Vector g{-2, 4};
    EXPECT_NEAR(finite_diff_check([](std::span<const double> v) { return dot(v, v); }, p, g, 1e-5), 2.0, 1e-6);
}

TEST(FiniteDiff, BceThroughAffineSeed3) {
    RngStream rng(3, Stream::analysis);
    Matrix W(1, 4);
    Vector b{rng.normal()}, x(4);
    for (auto& v : W.data) v = rng.normal();
    for (auto& v : x) v = rng.normal();
    const double z = affine_forward_backward(W, b, x, Vector{1.0}).out[0];
    const AffineGrad g = affine_forward_backward(W, b, x, Vector{bce_with_logits_grad(z, 1)});
    auto f = [&](std::span<const double> w) {
        Matrix Wp(1, 4);
        std::copy(w.begin(), w.end(), Wp.data.begin());
        return bce_with_logits(affine_forward_backward(Wp, b, x, Vector{1.0}).out[0], 1);
    };
    EXPECT_LT(finite_diff_check(f, W.data, g.gradW.data, 1e-5), 1e-4);
}

TEST(FiniteDiff, EpsRangeAndNonFinite) {
    const Vector p{1.0};
    const Vector g{0.0};
    expect_error([&] { finite_diff_check([](std::span<const double>) { return 0.0; }, p, g, 1e-9); }, "input.eps_range");
    expect_error([&] { finite_diff_check([](std::span<const double>) { return 0.0; }, p, g, 1e-2); }, "input.eps_range");
    expect_error([&] { finite_diff_check([](std::span<const double>) { return NAN; }, p, g, 1e-5); }, "numeric.non_finite");
}

TEST(Rng, ReplayIsBitIdentical) {
    RngStream a(42, Stream::batch_order);
    RngStream b(42, Stream::batch_order);
    for (int i = 0; i < 1000; ++i) {
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
    RngStream c = RngStream(42, Stream::init).substream(3);
    RngStream d = RngStream(42, Stream::init).substream(3);
    for (int i = 0; i < 100; ++i) {
        ASSERT_EQ(c.normal(), d.normal());
    }
}

TEST(Rng, DistinctStreamsLookIndependent) {
    // joint 10x10 histogram of paired uniforms; chi-square with 99 dof, alpha = 0.001
    constexpr double critical = 148.23;
    auto chi2 = [](RngStream a, RngStream b) {
        std::vector<int> cells(100, 0);
        const int n = 10000;
        for (int i = 0; i < n; ++i) {
            const auto u = static_cast<int>(a.uniform() * 10);
            const auto v = static_cast<int>(b.uniform() * 10);
            ++cells[u * 10 + v];
        }
        double s = 0.0;
        for (int c : cells) s += (c - 100.0) * (c - 100.0) / 100.0;
        return s;
    };
    EXPECT_LT(chi2(RngStream(0, Stream::data_gen), RngStream(0, Stream::init)), critical);
    EXPECT_LT(chi2(RngStream(5, Stream::bank_sampling), RngStream(5, Stream::isda_noise)), critical);
    EXPECT_LT(chi2(RngStream(9, Stream::data_gen).substream(0), RngStream(9, Stream::data_gen).substream(1)), critical);
}

TEST(Rng, NormalMoments) {
    RngStream rng(11, Stream::analysis);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, BelowAndShuffle) {
    RngStream rng(2, Stream::analysis);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_LT(rng.below(7), 7u);
    }
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) {
        EXPECT_EQ(sorted[i], i);
    }
    expect_error([&] { rng.below(0); }, "input.empty_range");
}

TEST(Jacobi, MatchesEigenSelfAdjointSolver) {
    RngStream rng(4, Stream::analysis);
    const std::size_t n = 12;
    Matrix A(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            A(i, j) = A(j, i) = rng.normal();
        }
    }
    const SymmetricEigen ours = jacobi_eigen(A);
    Eigen::MatrixXd E(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) E(i, j) = A(i, j);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(E);
    for (std::size_t j = 0; j < n; ++j) {
        EXPECT_NEAR(ours.values[j], es.eigenvalues()(static_cast<Eigen::Index>(n - 1 - j)), 1e-10);
        // A v = lambda v
        for (std::size_t r = 0; r < n; ++r) {
            double av = 0.0;
            for (std::size_t c = 0; c < n; ++c) av += A(r, c) * ours.vectors(c, j);
            EXPECT_NEAR(av, ours.values[j] * ours.vectors(r, j), 1e-9);
        }
    }
}

TEST(PsdSqrt, SquaresBack) {
    RngStream rng(8, Stream::analysis);
    Matrix B(5, 5);
    for (auto& v : B.data) v = rng.normal();
    const Matrix A = matmul(B, transpose(B));
    const Matrix L = psd_sqrt(A);
    const Matrix back = matmul(L, transpose(L));
    for (std::size_t i = 0; i < A.data.size(); ++i) {
        EXPECT_NEAR(back.data[i], A.data[i], 1e-9);
    }
}

TEST(PsdSqrt, RejectsIndefinite) {
    Matrix A = Matrix::identity(2);
    A(1, 1) = -1.0;
    expect_error([&] { psd_sqrt(A); }, "config.non_psd_covariance");
}
