#pragma once

// Training arms and experiment plumbing shared by the command-line tool and
// the acceptance suite.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "labelbal/augment.hpp"
#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/metrics.hpp"
#include "labelbal/model.hpp"
#include "labelbal/trainer.hpp"

namespace labelbal {

enum class Arm { baseline, reweighted, frdl, frdl_goat, isda };

inline const char* arm_name(Arm a) {
    switch (a) {
    case Arm::baseline:
        return "baseline";
    case Arm::reweighted:
        return "reweighted";
    case Arm::frdl:
        return "frdl";
    case Arm::frdl_goat:
        return "frdl_goat";
    case Arm::isda:
        return "isda";
    }
    return "baseline";
}

inline Arm parse_arm(const std::string& s) {
    for (Arm a : {Arm::baseline, Arm::reweighted, Arm::frdl, Arm::frdl_goat, Arm::isda}) {
        if (s == arm_name(a)) {
            return a;
        }
    }
    fail(ErrorKind::config, "config.unknown_arm", "unknown arm '" + s + "' (expected baseline, reweighted, frdl, frdl_goat or isda)");
}

struct RunConfig {
    std::string source = "generate"; // "generate" or "csv"
    std::string csv_path;
    GenConfig gen;
    TrainConfig train;
    ModelShape shape;
    Arm arm = Arm::frdl_goat;
    double eval_split = 0.2;
    std::string output_dir = "out";
    std::optional<std::uint64_t> seed; // overrides gen.seed and train.seed
};

inline void apply_seed(RunConfig& c) {
    if (c.seed) {
        c.gen.seed = *c.seed;
        c.train.seed = *c.seed;
    }
}

inline void validate(const RunConfig& c) {
    if (c.source != "generate" && c.source != "csv") {
        fail(ErrorKind::config, "config.source", "dataset source must be 'generate' or 'csv'");
    }
    if (c.source == "csv" && c.csv_path.empty()) {
        fail(ErrorKind::config, "config.source", "csv source needs a path");
    }
    if (!(c.eval_split > 0.0 && c.eval_split < 1.0)) {
        fail(ErrorKind::config, "config.eval_split", "eval split fraction must lie in (0, 1)");
    }
    validate(c.train);
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            c.source = d.value("source", c.source);
            c.csv_path = d.value("path", c.csv_path);
            if (d.contains("gen")) {
                c.gen = d.at("gen").get<GenConfig>();
            }
        }
        if (j.contains("train")) {
            c.train = j.at("train").get<TrainConfig>();
        }
        if (j.contains("model")) {
            c.shape = shape_from_json(j.at("model"));
        }
        if (j.contains("arm")) {
            c.arm = parse_arm(j.at("arm").get<std::string>());
        }
        c.eval_split = j.value("eval_split", c.eval_split);
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("seed") && !j.at("seed").is_null()) {
            c.seed = j.at("seed").get<std::uint64_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, "config.malformed", std::string("malformed run config: ") + e.what());
    }
    return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j{{"schema_version", 1},
                     {"dataset", {{"source", c.source}, {"path", c.csv_path}, {"gen", c.gen}}},
                     {"train", c.train},
                     {"model", shape_to_json(c.shape)},
                     {"arm", arm_name(c.arm)},
                     {"eval_split", c.eval_split},
                     {"output_dir", c.output_dir}};
    j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// data

struct Split {
    Dataset train;
    Dataset test;
};

/// Deterministic shuffle, then the last `eval_fraction` of samples are held out.
inline Split split_dataset(const Dataset& ds, double eval_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    RngStream rng(seed, Stream::split);
    rng.shuffle(idx);
    auto n_test = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(ds.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, ds.size() - 1);
    const std::size_t n_train = ds.size() - n_test;
    return {ds.subset(std::span(idx).subspan(0, n_train)), ds.subset(std::span(idx).subspan(n_train))};
}

inline Dataset load_run_dataset(const RunConfig& c) {
    return c.source == "csv" ? load_csv(c.csv_path) : generate_synthetic(c.gen);
}

// ---------------------------------------------------------------------------
// arms

inline ModelShape shape_for(const ModelShape& base, const Dataset& ds) {
    ModelShape s = base;
    s.D = ds.input_dim();
    s.C = ds.num_attributes();
    return s;
}

inline ModelParams initial_params(const ModelShape& shape, std::uint64_t seed) {
    RngStream rng(seed, Stream::init);
    return init_params(shape, rng);
}

/// Replace the fresh head with new random weights (distinct from the initial one).
inline void reset_fresh_head(ModelParams& p, std::uint64_t seed) {
    RngStream rng = RngStream(seed, Stream::init).substream(1);
    init_head(p.ft, rng);
}

struct ArmOutcome {
    ModelParams params;
    Head test_head = Head::cls;
    TrainLog log;
    std::optional<LossCentroids> centroids;
};

/// Stage 2 on top of a trained model: centroids, harvest, fresh head training.
inline ModelParams feature_resampled_refit(const ModelParams& stage1, const Dataset& train, const TrainConfig& cfg, FinetuneLoss loss,
                                           bool goat_harvest, TrainLog* log = nullptr, LossCentroids* centroids_out = nullptr) {
    const LossCentroids mu = compute_loss_centroids(stage1, train);
    TrainConfig hc = cfg;
    if (!goat_harvest) {
        hc.goat_alpha = 0.0;
    }
    const FeatureBanks banks = harvest_banks(stage1, train, hc, mu.mu, {}, log);
    ModelParams p = stage1;
    reset_fresh_head(p, cfg.seed);
    std::optional<HomoAugConfig> homo;
    if (loss == FinetuneLoss::isda) {
        homo = HomoAugConfig{Vector(p.shape.C, cfg.isda_lambda), positive_feature_covariances(stage1, train)};
    }
    finetune_classifier(banks, mu.mu, cfg, p, loss, homo ? &*homo : nullptr, log);
    if (centroids_out) {
        *centroids_out = mu;
    }
    return p;
}

/// Runs one arm from scratch. `stage1_cache` lets callers share the stage-1
/// model between arms trained with the same data, config and seed.
inline ArmOutcome run_arm(Arm arm, const Dataset& train, const TrainConfig& cfg, const ModelShape& shape,
                          const ModelParams* stage1_cache = nullptr) {
    ArmOutcome out;
    const ModelShape s = shape_for(shape, train);
    const ModelParams p0 = initial_params(s, cfg.seed);
    if (arm == Arm::reweighted) {
        out.params = train_reweighted(train, cfg, p0, &out.log);
        out.test_head = Head::cls;
        return out;
    }
    ModelParams stage1 = stage1_cache ? *stage1_cache : train_stage1(train, cfg, p0, &out.log);
    if (arm == Arm::baseline) {
        out.params = std::move(stage1);
        out.test_head = Head::cls;
        return out;
    }
    LossCentroids mu;
    switch (arm) {
    case Arm::frdl:
        out.params = feature_resampled_refit(stage1, train, cfg, FinetuneLoss::bce, false, &out.log, &mu);
        break;
    case Arm::frdl_goat:
        out.params = feature_resampled_refit(stage1, train, cfg, FinetuneLoss::goat, true, &out.log, &mu);
        break;
    case Arm::isda:
        out.params = feature_resampled_refit(stage1, train, cfg, FinetuneLoss::isda, false, &out.log, &mu);
        break;
    default:
        break;
    }
    out.centroids = mu;
    out.test_head = Head::ft;
    return out;
}

inline EvalReport evaluate_model(const ModelParams& p, Head head, const Dataset& test, double threshold = 0.5) {
    return evaluate(predict_proba(p, test.X, head), test.Y, threshold);
}

// ---------------------------------------------------------------------------
// gamma sweep

/// Fresh head trained with the re-weighted BCE (gamma = 1) on frozen
/// features, instance-balanced batches.
inline ModelParams reweighted_head_refit(const ModelParams& extractor, const Dataset& train, const TrainConfig& cfg) {
    ModelParams p = extractor;
    reset_fresh_head(p, cfg.seed);
    const std::size_t C = p.shape.C;
    const std::size_t M = p.shape.M;
    std::vector<Matrix> feats;
    feats.reserve(train.size());
    ForwardTrace t;
    for (std::size_t i = 0; i < train.size(); ++i) {
        forward_features(p, train.X.row(i), t);
        feats.push_back(t.fk);
    }
    const LossWeights w = reweighting_weights(label_stats(train).label_means, 1.0);
    EpochSampler sampler(train.size(), cfg.finetune_batch(), RngStream(cfg.seed, Stream::batch_order).substream(2));
    Matrix gW(C, M);
    Vector gb(C);
    for (std::size_t step = 0; step < cfg.finetune_steps(); ++step) {
        const auto batch = sampler.next();
        std::fill(gW.data.begin(), gW.data.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (std::size_t i : batch) {
            for (std::size_t k = 0; k < C; ++k) {
                const int y = train.Y(i, k);
                const double z = dot(p.ft.W.row(k), feats[i].row(k)) + p.ft.b[k];
                const double g = (y ? w.pos[k] : w.neg[k]) * bce_with_logits_grad(z, y) * inv;
                axpy(g, feats[i].row(k), gW.row(k));
                gb[k] += g;
            }
        }
        axpy(-cfg.ft_alpha, gW.data, p.ft.W.data);
        axpy(-cfg.ft_alpha, gb, p.ft.b);
    }
    return p;
}

struct SweepPoint {
    double gamma = 0.0;
    std::string mode; // "rS" (feature re-sampled) or "rW" (re-weighted head)
    double mA = 0.0;
    double F1 = 0.0;
};

inline std::size_t thread_cap() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LABELBAL_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) {
            n = static_cast<std::size_t>(v);
        }
    }
    return n;
}

/// Runs `jobs` on at most thread_cap() threads; each job writes only its own slot.
inline void parallel_jobs(std::size_t count, const std::function<void(std::size_t)>& job) {
    const std::size_t workers = std::min(thread_cap(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            job(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

/// For each gamma: train an extractor with the gamma-weighted BCE, then
/// refit a classifier by label-balanced feature re-sampling (rS) and by the
/// re-weighted loss (rW) on the frozen features.
inline std::vector<SweepPoint> sweep_gamma(const Dataset& train, const Dataset& test, const TrainConfig& cfg, const ModelShape& shape,
                                           std::span<const double> gammas) {
    if (gammas.empty()) {
        fail(ErrorKind::config, "config.empty_gamma_list", "gamma list is empty");
    }
    std::vector<std::vector<SweepPoint>> slots(gammas.size());
    parallel_jobs(gammas.size(), [&](std::size_t g) {
        TrainConfig c = cfg;
        c.gamma = gammas[g];
        const ModelShape s = shape_for(shape, train);
        const ModelParams extractor = train_reweighted(train, c, initial_params(s, c.seed));
        const ModelParams rs = feature_resampled_refit(extractor, train, c, FinetuneLoss::bce, false);
        const ModelParams rw = reweighted_head_refit(extractor, train, c);
        const EvalReport er = evaluate_model(rs, Head::ft, test);
        const EvalReport ew = evaluate_model(rw, Head::ft, test);
        slots[g] = {{gammas[g], "rS", er.mA, er.F1}, {gammas[g], "rW", ew.mA, ew.F1}};
    });
    std::vector<SweepPoint> out;
    for (auto& s : slots) {
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

inline void write_sweep_csv(const std::vector<SweepPoint>& pts, std::ostream& out) {
    out << "gamma,mode,mA,F1\n";
    for (const auto& p : pts) {
        out << format_double(p.gamma) << ',' << p.mode << ',' << format_double(p.mA) << ',' << format_double(p.F1) << '\n';
    }
}

// ---------------------------------------------------------------------------
// comparison

struct NamedReport {
    std::string name;
    EvalReport report;
};

/// Per-attribute mA of every report and its delta against the first one.
inline void write_comparison_csv(const std::vector<NamedReport>& reports, std::ostream& out) {
    out << "report,attribute,mA,delta_vs_first\n";
    const auto& ref = reports.front().report;
    for (const auto& r : reports) {
        for (std::size_t k = 0; k < r.report.per_attribute_mA.size(); ++k) {
            out << r.name << ',' << k << ',' << format_double(r.report.per_attribute_mA[k]) << ','
                << format_double(r.report.per_attribute_mA[k] - ref.per_attribute_mA[k]) << '\n';
        }
        out << r.name << ",all," << format_double(r.report.mA) << ',' << format_double(r.report.mA - ref.mA) << '\n';
    }
}

inline std::string comparison_table(const std::vector<NamedReport>& reports) {
    std::ostringstream s;
    s << std::left << std::setw(24) << "report" << std::right << std::setw(10) << "mA" << std::setw(10) << "F1" << std::setw(10) << "Prec"
      << std::setw(10) << "Recall" << std::setw(12) << "dmA" << '\n';
    s << std::fixed << std::setprecision(2);
    const double ref = reports.front().report.mA;
    for (const auto& r : reports) {
        s << std::left << std::setw(24) << r.name << std::right << std::setw(10) << 100.0 * r.report.mA << std::setw(10) << 100.0 * r.report.F1
          << std::setw(10) << 100.0 * r.report.precision << std::setw(10) << 100.0 * r.report.recall << std::setw(12)
          << 100.0 * (r.report.mA - ref) << '\n';
    }
    return s.str();
}

inline void check_comparable(const std::vector<NamedReport>& reports) {
    if (reports.empty()) {
        fail(ErrorKind::config, "config.no_reports", "compare needs at least one report");
    }
    for (const auto& r : reports) {
        if (r.report.per_attribute_mA.size() != reports.front().report.per_attribute_mA.size()) {
            fail(ErrorKind::config, "config.attribute_count_mismatch", "report " + r.name + " has a different number of attributes");
        }
    }
}

} // namespace labelbal
