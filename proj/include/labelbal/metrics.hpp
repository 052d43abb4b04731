#pragma once

// Label-based mean accuracy and instance-based precision / recall / F1.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal {

struct AttributeConfusion {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct SampleConfusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct EvalReport {
    double mA = 0.0;
    Vector per_attribute_mA;
    double precision = 0.0;
    double recall = 0.0;
    double F1 = 0.0;
    std::vector<AttributeConfusion> attribute_confusion;
    std::vector<SampleConfusion> sample_confusion;
    std::vector<bool> degenerate; // attribute had no positives or no negatives
    double threshold = 0.5;
};

/// A sample or attribute counts as predicted positive when p > threshold.
///
/// Instance terms with an empty denominator (no predicted positives for
/// precision, no true positives for recall) contribute 0 to the mean over
/// samples. An attribute without positives (or negatives) uses only the
/// defined half of its accuracy and is flagged degenerate.
inline EvalReport evaluate(const Matrix& probabilities, const LabelMatrix& Y, double threshold = 0.5) {
    require_shape(probabilities.rows == Y.rows && probabilities.cols == Y.cols, "probabilities vs labels");
    if (Y.rows == 0 || Y.cols == 0) {
        fail(ErrorKind::invalid_input, "input.empty_dataset", "evaluate: empty dataset");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        fail(ErrorKind::invalid_input, "input.threshold", "evaluate: threshold must lie in (0, 1)");
    }
    const std::size_t N = Y.rows;
    const std::size_t C = Y.cols;
    EvalReport r;
    r.threshold = threshold;
    r.attribute_confusion.resize(C);
    r.sample_confusion.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < C; ++j) {
            const double p = probabilities(i, j);
            if (!(p >= 0.0 && p <= 1.0)) {
                fail(ErrorKind::invalid_input, "input.probability", "evaluate: probabilities must lie in [0, 1]");
            }
            const bool pred = p > threshold;
            const bool truth = Y(i, j) != 0;
            auto& a = r.attribute_confusion[j];
            auto& s = r.sample_confusion[i];
            if (pred && truth) {
                ++a.tp;
                ++s.tp;
            } else if (pred) {
                ++a.fp;
                ++s.fp;
            } else if (truth) {
                ++a.fn;
                ++s.fn;
            } else {
                ++a.tn;
            }
        }
    }
    double ma_sum = 0.0;
    for (const auto& a : r.attribute_confusion) {
        const std::size_t pos = a.tp + a.fn;
        const std::size_t neg = a.tn + a.fp;
        double acc;
        if (pos > 0 && neg > 0) {
            acc = 0.5 * (static_cast<double>(a.tp) / static_cast<double>(pos) + static_cast<double>(a.tn) / static_cast<double>(neg));
        } else if (pos > 0) {
            acc = static_cast<double>(a.tp) / static_cast<double>(pos);
        } else {
            acc = static_cast<double>(a.tn) / static_cast<double>(neg);
        }
        r.degenerate.push_back(pos == 0 || neg == 0);
        r.per_attribute_mA.push_back(acc);
        ma_sum += acc;
    }
    r.mA = ma_sum / static_cast<double>(C);

    double prec = 0.0;
    double rec = 0.0;
    for (const auto& s : r.sample_confusion) {
        if (s.tp + s.fp > 0) {
            prec += static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
        }
        if (s.tp + s.fn > 0) {
            rec += static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
        }
    }
    r.precision = prec / static_cast<double>(N);
    r.recall = rec / static_cast<double>(N);
    r.F1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// label-mean diagnostics

struct LabelMeanBucket {
    double lo = 0.0; // exclusive
    double hi = 0.0; // inclusive
    std::size_t count = 0;
    std::optional<double> mean_mA; // absent for an empty bucket
};

struct RankedAttribute {
    std::size_t attribute = 0;
    double label_mean = 0.0;
    double imbalance = 0.0;
    double mA = 0.0;
    std::optional<double> delta; // versus the baseline report
};

struct LabelMeanCurve {
    std::vector<LabelMeanBucket> buckets;
    std::vector<RankedAttribute> ranked; // by |mean - 0.5|, descending
};

/// Buckets (0, e_0], (e_0, e_1], ... of per-attribute mA by label mean.
inline LabelMeanCurve ma_by_label_mean_buckets(const EvalReport& report, const LabelStats& stats, std::span<const double> edges,
                                               const EvalReport* baseline = nullptr) {
    const std::size_t C = report.per_attribute_mA.size();
    require_shape(stats.label_means.size() == C, "label stats vs report");
    if (baseline) {
        require_shape(baseline->per_attribute_mA.size() == C, "baseline report vs report");
    }
    if (edges.empty()) {
        fail(ErrorKind::invalid_input, "input.bucket_edges", "bucket edges must be non-empty");
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
        if (!(edges[e] > 0.0 && edges[e] <= 1.0) || (e > 0 && !(edges[e] > edges[e - 1]))) {
            fail(ErrorKind::invalid_input, "input.bucket_edges", "bucket edges must be strictly increasing in (0, 1]");
        }
    }
    LabelMeanCurve curve;
    double lo = 0.0;
    for (double hi : edges) {
        LabelMeanBucket b{lo, hi, 0, std::nullopt};
        double sum = 0.0;
        for (std::size_t k = 0; k < C; ++k) {
            const double m = stats.label_means[k];
            if (m > lo && m <= hi) {
                ++b.count;
                sum += report.per_attribute_mA[k];
            }
        }
        if (b.count > 0) {
            b.mean_mA = sum / static_cast<double>(b.count);
        }
        curve.buckets.push_back(b);
        lo = hi;
    }
    for (std::size_t k = 0; k < C; ++k) {
        RankedAttribute a{k, stats.label_means[k], stats.imbalance[k], report.per_attribute_mA[k], std::nullopt};
        if (baseline) {
            a.delta = report.per_attribute_mA[k] - baseline->per_attribute_mA[k];
        }
        curve.ranked.push_back(a);
    }
    std::stable_sort(curve.ranked.begin(), curve.ranked.end(),
                     [](const RankedAttribute& a, const RankedAttribute& b) { return a.imbalance > b.imbalance; });
    return curve;
}

inline void write_curve_csv(const LabelMeanCurve& curve, std::ostream& out) {
    out << "bucket_lo,bucket_hi,count,mean_mA\n";
    for (const auto& b : curve.buckets) {
        out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count << ','
            << (b.mean_mA ? format_double(*b.mean_mA) : std::string()) << '\n';
    }
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json attrs = nlohmann::json::array();
    for (std::size_t j = 0; j < r.attribute_confusion.size(); ++j) {
        const auto& a = r.attribute_confusion[j];
        attrs.push_back({{"TP", a.tp}, {"TN", a.tn}, {"FP", a.fp}, {"FN", a.fn}, {"mA", r.per_attribute_mA[j]}, {"degenerate", r.degenerate[j]}});
    }
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : r.sample_confusion) {
        samples.push_back({s.tp, s.fp, s.fn});
    }
    return {{"schema_version", 1},
            {"mA", r.mA},
            {"per_attribute_mA", r.per_attribute_mA},
            {"precision", r.precision},
            {"recall", r.recall},
            {"F1", r.F1},
            {"threshold", r.threshold},
            {"attributes", attrs},
            {"samples_tp_fp_fn", samples}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.mA = j.at("mA").get<double>();
    r.per_attribute_mA = j.at("per_attribute_mA").get<Vector>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.F1 = j.at("F1").get<double>();
    r.threshold = j.value("threshold", 0.5);
    for (const auto& a : j.value("attributes", nlohmann::json::array())) {
        r.attribute_confusion.push_back({a.at("TP").get<std::size_t>(), a.at("TN").get<std::size_t>(), a.at("FP").get<std::size_t>(),
                                         a.at("FN").get<std::size_t>()});
        r.degenerate.push_back(a.value("degenerate", false));
    }
    for (const auto& s : j.value("samples_tp_fp_fn", nlohmann::json::array())) {
        r.sample_confusion.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
    }
    return r;
}

} // namespace labelbal
