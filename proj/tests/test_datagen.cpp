#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "labelbal/datagen.hpp"
#include "labelbal/lir.hpp"

#include "expect_error.hpp"

using namespace labelbal;

namespace {

GenConfig one_attribute(double mean, std::size_t N) {
    GenConfig g;
    g.N = N;
    g.D = 4;
    g.C = 1;
    g.target_means = {mean};
    g.co_occurrence_rules = {};
    return g;
}

Dataset parse(const std::string& text) {
    std::istringstream in(text);
    return load_csv(in, "inline");
}

} // namespace

TEST(Generate, EmpiricalMeanWithinBinomialBand) {
    const Dataset ds = generate_synthetic(one_attribute(0.1, 10000));
    EXPECT_NEAR(label_stats(ds).label_means[0], 0.1, 0.01);
}

TEST(Generate, CopyRuleWithRhoOneDuplicatesSource) {
    GenConfig g;
    g.N = 3000;
    g.C = 3;
    g.D = 8;
    g.target_means = {0.2, 0.3, 0.6};
    g.co_occurrence_rules = {{1, 2, 1.0}};
    const Dataset ds = generate_synthetic(g);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        ASSERT_EQ(ds.Y(i, 1), ds.Y(i, 2));
    }
}

TEST(Generate, NoiselessInputsDependOnlyOnLabels) {
    GenConfig g;
    g.N = 500;
    g.noise_sigma = 0.0;
    const Dataset ds = generate_synthetic(g);
    for (std::size_t i = 0; i < 60; ++i) {
        for (std::size_t j = i + 1; j < ds.size(); ++j) {
            if (std::equal(ds.Y.row(i).begin(), ds.Y.row(i).end(), ds.Y.row(j).begin())) {
                ASSERT_TRUE(std::equal(ds.X.row(i).begin(), ds.X.row(i).end(), ds.X.row(j).begin()));
            }
        }
    }
}

TEST(Generate, FixedSeedIsByteIdentical) {
    GenConfig g;
    g.N = 400;
    g.seed = 9;
    std::ostringstream a, b;
    write_csv(generate_synthetic(g), a);
    write_csv(generate_synthetic(g), b);
    EXPECT_EQ(a.str(), b.str());
    g.seed = 10;
    std::ostringstream c;
    write_csv(generate_synthetic(g), c);
    EXPECT_NE(a.str(), c.str());
}

TEST(Generate, RuleImpliedMeans) {
    GenConfig g;
    g.N = 20000;
    const LabelStats s = label_stats(generate_synthetic(g));
    // target 1 copies attribute 0 with probability 0.9, else Bernoulli(0.05)
    const double implied = 0.9 * s.label_means[0] + 0.1 * 0.05;
    EXPECT_NEAR(s.label_means[1], implied, 0.005);
    for (std::size_t k = 2; k < g.C; ++k) {
        EXPECT_NEAR(s.label_means[k], g.target_means[k], 4 * std::sqrt(0.25 / g.N));
    }
}

TEST(Generate, ConfigErrors) {
    GenConfig g;
    g.co_occurrence_rules = {{0, 1, 0.5}, {1, 0, 0.5}};
    expect_error([&] { generate_synthetic(g); }, "config.cyclic_rules");
    g.co_occurrence_rules = {{0, 1, 0.5}, {1, 2, 0.5}, {2, 0, 0.5}};
    expect_error([&] { generate_synthetic(g); }, "config.cyclic_rules");
    g.co_occurrence_rules = {{0, 1, 1.5}};
    expect_error([&] { generate_synthetic(g); }, "config.rule_rho");
    g = GenConfig{};
    g.D = 4;
    expect_error([&] { generate_synthetic(g); }, "config.dimension");
    g = GenConfig{};
    g.target_means[3] = 1.0;
    expect_error([&] { generate_synthetic(g); }, "config.target_means");
}

TEST(Generate, RuleChainsAreOrdered) {
    GenConfig g;
    g.co_occurrence_rules = {{2, 1, 0.5}, {1, 0, 0.5}};
    const auto order = rule_order(g);
    const auto pos = [&](std::size_t k) { return std::find(order.begin(), order.end(), k) - order.begin(); };
    EXPECT_LT(pos(2), pos(1));
    EXPECT_LT(pos(1), pos(0));
}

TEST(Csv, WellFormedFile) {
    const Dataset ds = parse("id,x_0,x_1,y_0\n0,1.5,-2,1\n1,0,0,0\n2,3e-3,1,1\n");
    EXPECT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.input_dim(), 2u);
    EXPECT_EQ(ds.num_attributes(), 1u);
    EXPECT_DOUBLE_EQ(ds.X(2, 0), 3e-3);
    EXPECT_EQ(ds.Y(1, 0), 0);
}

TEST(Csv, Errors) {
    expect_error([] { parse("id,x_0,y_0\n0,1.0,2\n"); }, "io.non_binary_label");
    expect_error([] { parse("id,x_0,y_0\n0,1.0\n"); }, "io.column_count");
    expect_error([] { parse("id,x_0,y_0\n0,abc,1\n"); }, "io.malformed_row");
    expect_error([] { parse(""); }, "io.empty_file");
    expect_error([] { load_csv(std::string("/nonexistent/data.csv")); }, "io.missing_file");
}

TEST(Csv, RoundTrip) {
    GenConfig g;
    g.N = 300;
    g.seed = 4;
    const Dataset ds = generate_synthetic(g);
    std::ostringstream out;
    write_csv(ds, out);
    const Dataset back = parse(out.str());
    EXPECT_EQ(back.Y, ds.Y);
    ASSERT_EQ(back.X.data.size(), ds.X.data.size());
    for (std::size_t i = 0; i < ds.X.data.size(); ++i) {
        EXPECT_NEAR(back.X.data[i], ds.X.data[i], 1e-9);
    }
}

TEST(Stats, TwoRowExample) {
    const LabelStats s = label_stats(LabelMatrix{{1}, {0}});
    EXPECT_DOUBLE_EQ(s.label_means[0], 0.5);
    EXPECT_DOUBLE_EQ(s.imbalance[0], 0.0);
}

TEST(Stats, HandCountedCooccurrence) {
    const LabelStats s = label_stats(LabelMatrix{{1, 1}, {1, 0}, {0, 0}, {0, 0}});
    EXPECT_DOUBLE_EQ(s.label_means[0], 0.5);
    EXPECT_DOUBLE_EQ(s.label_means[1], 0.25);
    EXPECT_DOUBLE_EQ(s.cooccurrence(0, 1), 0.25);
    EXPECT_DOUBLE_EQ(s.cooccurrence(1, 0), 0.25);
    EXPECT_DOUBLE_EQ(s.cooccurrence(0, 0), s.label_means[0]);
    EXPECT_EQ(s.positives[0], 2u);
}

TEST(Stats, AllPositiveIsDegenerate) {
    const LabelStats s = label_stats(LabelMatrix{{1, 0}, {1, 1}});
    EXPECT_DOUBLE_EQ(s.imbalance[0], 0.5);
    EXPECT_TRUE(s.degenerate[0]);
    EXPECT_FALSE(s.degenerate[1]);
}

TEST(Stats, PermutationInvariant) {
    GenConfig g;
    g.N = 500;
    const Dataset ds = generate_synthetic(g);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    RngStream rng(1, Stream::analysis);
    rng.shuffle(idx);
    const LabelStats a = label_stats(ds);
    const LabelStats b = label_stats(ds.subset(idx));
    EXPECT_EQ(a.positives, b.positives);
    for (std::size_t k = 0; k < g.C; ++k) {
        EXPECT_NEAR(a.label_means[k], b.label_means[k], 1e-15);
        for (std::size_t j = 0; j < g.C; ++j) EXPECT_NEAR(a.cooccurrence(k, j), b.cooccurrence(k, j), 1e-15);
    }
}

// A copy rule with rho = 1 makes the two columns identical, so their balance
// constraints coincide and a balancing sampler still exists.
TEST(Generate, CopiedPairRemainsReSamplable) {
    GenConfig g;
    g.N = 200;
    g.C = 2;
    g.D = 4;
    g.target_means = {0.2, 0.4};
    g.co_occurrence_rules = {{0, 1, 1.0}};
    const Dataset ds = generate_synthetic(g);
    const FeasibilityResult r = check_lir_feasibility(ds.Y, default_lir_eps(ds.size()));
    EXPECT_TRUE(r.feasible);
}

TEST(Json, GenConfigRoundTrip) {
    GenConfig g;
    g.N = 77;
    g.co_occurrence_rules = {{2, 3, 0.25}};
    const nlohmann::json j = g;
    const GenConfig back = j.get<GenConfig>();
    EXPECT_EQ(back.N, 77u);
    EXPECT_EQ(back.co_occurrence_rules.size(), 1u);
    EXPECT_EQ(back.co_occurrence_rules[0].target, 3u);
    EXPECT_EQ(back.target_means, g.target_means);
}
