#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "labelbal/metrics.hpp"

#include "expect_error.hpp"

using namespace labelbal;

namespace {

Matrix probs(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
        std::size_t c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

// direct transcription of the definitions over boolean predictions
struct BruteForce {
    double mA, precision, recall, F1;
};

BruteForce brute_force(const Matrix& P, const LabelMatrix& Y, double thr) {
    const std::size_t N = Y.rows, C = Y.cols;
    double ma = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
        double tp = 0, tn = 0, pos = 0, neg = 0;
        for (std::size_t i = 0; i < N; ++i) {
            const bool pred = P(i, j) > thr;
            if (Y(i, j)) {
                ++pos;
                tp += pred;
            } else {
                ++neg;
                tn += !pred;
            }
        }
        ma += pos && neg ? 0.5 * (tp / pos + tn / neg) : (pos ? tp / pos : tn / neg);
    }
    double prec = 0.0, rec = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double inter = 0, npred = 0, ntrue = 0;
        for (std::size_t j = 0; j < C; ++j) {
            const bool pred = P(i, j) > thr;
            inter += pred && Y(i, j);
            npred += pred;
            ntrue += Y(i, j);
        }
        if (npred > 0) prec += inter / npred;
        if (ntrue > 0) rec += inter / ntrue;
    }
    prec /= static_cast<double>(N);
    rec /= static_cast<double>(N);
    return {ma / static_cast<double>(C), prec, rec, prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0};
}

} // namespace

TEST(Evaluate, PerfectPrediction) {
    const LabelMatrix Y{{1, 0}, {0, 1}};
    const EvalReport r = evaluate(probs({{0.9, 0.1}, {0.2, 0.8}}), Y);
    EXPECT_DOUBLE_EQ(r.mA, 1.0);
    EXPECT_DOUBLE_EQ(r.precision, 1.0);
    EXPECT_DOUBLE_EQ(r.recall, 1.0);
    EXPECT_DOUBLE_EQ(r.F1, 1.0);
}

TEST(Evaluate, AllNegativePredictions) {
    const LabelMatrix Y{{1, 0}, {0, 1}};
    const EvalReport r = evaluate(probs({{0.1, 0.1}, {0.2, 0.3}}), Y);
    EXPECT_DOUBLE_EQ(r.mA, 0.5);
    EXPECT_DOUBLE_EQ(r.precision, 0.0);
    EXPECT_DOUBLE_EQ(r.recall, 0.0);
    EXPECT_DOUBLE_EQ(r.F1, 0.0);
}

TEST(Evaluate, ThresholdIsStrict) {
    const LabelMatrix Y{{1}, {0}};
    const EvalReport r = evaluate(probs({{0.5}, {0.5}}), Y);
    EXPECT_EQ(r.attribute_confusion[0].fn, 1u);
    EXPECT_EQ(r.attribute_confusion[0].tn, 1u);
    EXPECT_DOUBLE_EQ(r.mA, 0.5);
}

TEST(Evaluate, HandCountedMixedCase) {
    const LabelMatrix Y{{1, 1, 0}, {0, 1, 0}, {1, 0, 1}, {0, 0, 0}};
    const Matrix P = probs({{0.8, 0.3, 0.6}, {0.1, 0.9, 0.2}, {0.4, 0.7, 0.9}, {0.6, 0.1, 0.1}});
    const EvalReport r = evaluate(P, Y);
    // attribute 0: TP 1 FN 1 TN 1 FP 1
    EXPECT_DOUBLE_EQ(r.per_attribute_mA[0], 0.5);
    // attribute 1: TP 1 FN 1 TN 1 FP 1
    EXPECT_DOUBLE_EQ(r.per_attribute_mA[1], 0.5);
    // attribute 2: TP 1 TN 2 FP 1
    EXPECT_DOUBLE_EQ(r.per_attribute_mA[2], 0.5 * (1.0 + 2.0 / 3.0));
    // sample precisions 1/2, 1, 1/2, 0 and recalls 1/2, 1, 1/2, (empty) 0
    EXPECT_DOUBLE_EQ(r.precision, 0.5);
    EXPECT_DOUBLE_EQ(r.recall, 0.5);
    EXPECT_DOUBLE_EQ(r.F1, 0.5);
}

TEST(Evaluate, DegenerateAttributeUsesDefinedHalf) {
    const LabelMatrix Y{{1, 0}, {1, 1}, {1, 0}};
    const EvalReport r = evaluate(probs({{0.9, 0.1}, {0.2, 0.9}, {0.7, 0.2}}), Y);
    EXPECT_TRUE(r.degenerate[0]);
    EXPECT_FALSE(r.degenerate[1]);
    EXPECT_DOUBLE_EQ(r.per_attribute_mA[0], 2.0 / 3.0);
}

TEST(Evaluate, Errors) {
    const LabelMatrix Y{{1}, {0}};
    expect_error([&] { evaluate(probs({{0.5, 0.5}, {0.5, 0.5}}), Y); }, "shape.mismatch");
    expect_error([&] { evaluate(probs({{1.5}, {0.5}}), Y); }, "input.probability");
    expect_error([&] { evaluate(probs({{NAN}, {0.5}}), Y); }, "input.probability");
    expect_error([&] { evaluate(probs({{0.5}, {0.5}}), Y, 1.0); }, "input.threshold");
}

TEST(Evaluate, MatchesBruteForceOnRandomData) {
    RngStream rng(1, Stream::analysis);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix P(100, 8);
        LabelMatrix Y(100, 8);
        for (auto& v : P.data) v = rng.uniform();
        for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] = rng.bernoulli(0.1 + 0.1 * static_cast<double>(i % 8));
        const double thr = rng.uniform(0.2, 0.8);
        const EvalReport r = evaluate(P, Y, thr);
        const BruteForce b = brute_force(P, Y, thr);
        EXPECT_NEAR(r.mA, b.mA, 1e-12);
        EXPECT_NEAR(r.precision, b.precision, 1e-12);
        EXPECT_NEAR(r.recall, b.recall, 1e-12);
        EXPECT_NEAR(r.F1, b.F1, 1e-12);
    }
}

TEST(Evaluate, InvariantUnderMonotoneTransformOfScores) {
    RngStream rng(2, Stream::analysis);
    Matrix P(60, 5);
    LabelMatrix Y(60, 5);
    for (auto& v : P.data) v = rng.uniform();
    for (auto& v : Y.data) v = rng.bernoulli(0.3);
    // p -> p^2 with threshold t -> t^2 keeps every prediction
    Matrix Q = P;
    for (auto& v : Q.data) v = v * v;
    const EvalReport a = evaluate(P, Y, 0.6);
    const EvalReport b = evaluate(Q, Y, 0.36);
    EXPECT_EQ(a.per_attribute_mA, b.per_attribute_mA);
    EXPECT_EQ(a.F1, b.F1);
}

TEST(Evaluate, LabelSwapKeepsMeanAccuracy) {
    RngStream rng(3, Stream::analysis);
    Matrix P(50, 4);
    LabelMatrix Y(50, 4);
    for (auto& v : P.data) v = rng.uniform(0.01, 0.99);
    for (auto& v : Y.data) v = rng.bernoulli(0.4);
    Matrix Q = P;
    for (auto& v : Q.data) v = 1.0 - v;
    LabelMatrix Z = Y;
    for (auto& v : Z.data) v = 1 - v;
    // strict threshold: ties at exactly 0.5 would break the symmetry, none occur here
    const EvalReport a = evaluate(P, Y);
    const EvalReport b = evaluate(Q, Z);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.per_attribute_mA[k], b.per_attribute_mA[k], 1e-15);
}

TEST(Buckets, Examples) {
    EvalReport r;
    r.per_attribute_mA = {0.9, 0.7, 0.6, 0.8};
    LabelStats s;
    s.label_means = {0.03, 0.08, 0.45, 0.5};
    s.imbalance = {0.47, 0.42, 0.05, 0.0};
    const Vector edges{0.05, 0.1, 0.2, 0.5};
    const LabelMeanCurve c = ma_by_label_mean_buckets(r, s, edges);
    ASSERT_EQ(c.buckets.size(), 4u);
    EXPECT_EQ(c.buckets[0].count, 1u);
    EXPECT_DOUBLE_EQ(*c.buckets[0].mean_mA, 0.9);
    EXPECT_EQ(c.buckets[2].count, 0u);
    EXPECT_FALSE(c.buckets[2].mean_mA.has_value());
    EXPECT_EQ(c.buckets[3].count, 2u);
    EXPECT_DOUBLE_EQ(*c.buckets[3].mean_mA, 0.7);
    EXPECT_EQ(c.ranked.front().attribute, 0u);
    EXPECT_EQ(c.ranked.back().attribute, 3u);
    std::ostringstream out;
    write_curve_csv(c, out);
    EXPECT_NE(out.str().find(format_double(0.1) + "," + format_double(0.2) + ",0,\n"), std::string::npos);
}

TEST(Buckets, DeltasAgainstBaseline) {
    EvalReport r, base;
    r.per_attribute_mA = {0.9, 0.7};
    base.per_attribute_mA = {0.8, 0.75};
    LabelStats s;
    s.label_means = {0.1, 0.4};
    s.imbalance = {0.4, 0.1};
    const LabelMeanCurve c = ma_by_label_mean_buckets(r, s, Vector{1.0}, &base);
    EXPECT_NEAR(*c.ranked[0].delta, 0.1, 1e-15);
    EXPECT_NEAR(*c.ranked[1].delta, -0.05, 1e-15);
    expect_error([&] { ma_by_label_mean_buckets(r, s, Vector{0.5, 0.2}); }, "input.bucket_edges");
    expect_error([&] { ma_by_label_mean_buckets(r, s, Vector{}); }, "input.bucket_edges");
}

TEST(ReportJson, RoundTrip) {
    const LabelMatrix Y{{1, 1, 0}, {0, 1, 0}, {1, 0, 1}, {0, 0, 0}};
    const EvalReport r = evaluate(probs({{0.8, 0.3, 0.6}, {0.1, 0.9, 0.2}, {0.4, 0.7, 0.9}, {0.6, 0.1, 0.1}}), Y, 0.4);
    const nlohmann::json j = report_to_json(r);
    EXPECT_EQ(j.at("schema_version"), 1);
    const EvalReport back = report_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(report_to_json(back), j);
}
