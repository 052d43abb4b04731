#pragma once

// Two-stage training: instance-balanced whole-model training, then
// per-attribute label-balanced classifier re-training on features harvested
// into memory banks, optionally along short gradient-oriented trajectories
// of the extractor.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelbal/augment.hpp"
#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/model.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal {

struct TrainConfig {
    double alpha = 0.05;      // learning rate
    std::size_t T1 = 3000;    // end of stage 1
    std::size_t T2 = 4000;    // end of harvesting
    std::size_t T = 20;       // trajectory length before reload
    std::size_t batch_size = 64;
    std::size_t bank_capacity = 4096;
    double eta = 0.1;         // explicit translation step (analysis only)
    double gamma = 1.0;       // label balancing ratio of the re-weighted loss
    double lr_decay = 0.1;    // stage-1 learning rate factor applied from decay_at on
    std::size_t decay_at = 0; // 0 means 2/3 of T1
    std::optional<double> goat_alpha; // harvest step size, defaults to the decayed alpha
    double ft_alpha = 0.5;    // classifier re-training rate
    std::size_t ft_steps = 0; // 0 means T2 - T1 outer steps
    std::size_t ft_batch_size = 0; // 0 means batch_size
    double isda_lambda = 0.5;
    std::uint64_t seed = 0;

    double harvest_alpha() const { return goat_alpha.value_or(alpha * lr_decay); }
    std::size_t finetune_steps() const { return ft_steps ? ft_steps : T2 - T1; }
    std::size_t finetune_batch() const { return ft_batch_size ? ft_batch_size : batch_size; }
    std::size_t decay_step() const { return decay_at ? decay_at : (2 * T1) / 3; }
};

inline void validate(const TrainConfig& c) {
    auto bad = [](const std::string& code, const std::string& m) { fail(ErrorKind::config, code, m); };
    if (c.T < 1) {
        bad("config.T", "T must be at least 1");
    }
    if (!(c.T1 < c.T2)) {
        bad("config.steps", "T1 must be smaller than T2");
    }
    if (!(c.alpha >= 0.0) || !(c.ft_alpha >= 0.0) || !(c.harvest_alpha() >= 0.0)) {
        bad("config.alpha", "learning rates must be non-negative");
    }
    if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) {
        bad("config.gamma", "gamma must lie in [0, 1]");
    }
    if (c.batch_size < 1 || c.bank_capacity < 1) {
        bad("config.batch", "batch size and bank capacity must be positive");
    }
}

// ---------------------------------------------------------------------------
// training log

struct LogRow {
    std::size_t step = 0;
    std::string stage;
    double loss = 0.0;
    Vector per_attribute;
};

struct TrainLog {
    std::vector<LogRow> rows;

    void add(std::size_t step, std::string stage, double loss, const Vector& per_attribute) {
        rows.push_back({step, std::move(stage), loss, per_attribute});
    }

    void write_csv(std::ostream& out) const {
        std::size_t C = 0;
        for (const auto& r : rows) {
            C = std::max(C, r.per_attribute.size());
        }
        out << "step,stage,loss";
        for (std::size_t k = 0; k < C; ++k) {
            out << ",loss_" << k;
        }
        out << '\n';
        for (const auto& r : rows) {
            out << r.step << ',' << r.stage << ',' << format_double(r.loss);
            for (std::size_t k = 0; k < C; ++k) {
                out << ',' << (k < r.per_attribute.size() ? format_double(r.per_attribute[k]) : std::string());
            }
            out << '\n';
        }
    }
};

// ---------------------------------------------------------------------------
// instance-balanced batches

/// Per-epoch shuffled minibatches without replacement; the short tail of
/// an epoch is dropped.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::size_t batch, RngStream rng) : n_(n), batch_(std::min(batch, n)), rng_(rng) {
        if (n == 0) {
            fail(ErrorKind::invalid_input, "input.empty_dataset", "cannot draw batches from an empty dataset");
        }
        order_.resize(n);
        reshuffle();
    }

    std::span<const std::size_t> next() {
        if (pos_ + batch_ > n_) {
            reshuffle();
        }
        std::span<const std::size_t> out(order_.data() + pos_, batch_);
        pos_ += batch_;
        return out;
    }

private:
    void reshuffle() {
        for (std::size_t i = 0; i < n_; ++i) {
            order_[i] = i;
        }
        rng_.shuffle(order_);
        pos_ = 0;
    }

    std::size_t n_;
    std::size_t batch_;
    RngStream rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// stage 1 and the re-weighted baseline

/// w_pos = e^{1 - (gamma (r - 0.5) + 0.5)}, w_neg = e^{gamma (r - 0.5) + 0.5}.
inline LossWeights reweighting_weights(std::span<const double> label_means, double gamma) {
    LossWeights w;
    for (double r : label_means) {
        const double shift = gamma * (r - 0.5) + 0.5;
        w.pos.push_back(std::exp(1.0 - shift));
        w.neg.push_back(std::exp(shift));
    }
    return w;
}

namespace detail {

/// Runs `f`, reporting a non-finite logit as training divergence.
template <class F>
auto divergence_guard(F&& f, const std::string& what) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == "input.non_finite_logit") {
            fail(ErrorKind::numeric, "numeric.divergence", what + " diverged");
        }
        throw;
    }
}

inline ModelParams instance_balanced_training(const Dataset& ds, const TrainConfig& cfg, ModelParams p, const LossWeights* weights,
                                              TrainLog* log, const char* stage) {
    validate(cfg);
    const auto stats = label_stats(ds);
    for (std::size_t k = 0; k < stats.degenerate.size(); ++k) {
        if (stats.degenerate[k]) {
            fail(ErrorKind::degenerate, "data.degenerate_attribute", "attribute " + std::to_string(k) + " has a single label value");
        }
    }
    EpochSampler sampler(ds.size(), cfg.batch_size, RngStream(cfg.seed, Stream::batch_order).substream(0));
    for (std::size_t step = 0; step < cfg.T1; ++step) {
        const auto batch = sampler.next();
        LossAndGrads lg = divergence_guard([&] { return backward_bce(p, ds, batch, Head::cls, weights); },
                                           std::string(stage) + " step " + std::to_string(step));
        if (!std::isfinite(lg.loss)) {
            fail(ErrorKind::numeric, "numeric.divergence", std::string(stage) + " diverged at step " + std::to_string(step));
        }
        if (log) {
            log->add(step, stage, lg.loss, lg.per_attribute);
        }
        const double lr = step >= cfg.decay_step() ? cfg.alpha * cfg.lr_decay : cfg.alpha;
        if (lr != 0.0) {
            sgd_update(p, lg.grads, lr, group_theta | group_psi | group_cls);
        }
    }
    if (!all_finite(p)) {
        fail(ErrorKind::numeric, "numeric.divergence", std::string(stage) + " produced non-finite parameters");
    }
    return p;
}

} // namespace detail

/// T1 steps of plain BCE SGD over instance-balanced minibatches.
inline ModelParams train_stage1(const Dataset& ds, const TrainConfig& cfg, ModelParams p0, TrainLog* log = nullptr) {
    return detail::instance_balanced_training(ds, cfg, std::move(p0), nullptr, log, "stage1");
}

/// Stage-1 loop with the label-mean re-weighted BCE (weights fixed from the data).
inline ModelParams train_reweighted(const Dataset& ds, const TrainConfig& cfg, ModelParams p0, TrainLog* log = nullptr) {
    validate(cfg);
    const LossWeights w = reweighting_weights(label_stats(ds).label_means, cfg.gamma);
    return detail::instance_balanced_training(ds, cfg, std::move(p0), &w, log, "reweighted");
}

// ---------------------------------------------------------------------------
// loss centroids

struct LossCentroids {
    Vector mu;
};

/// mu^k = dataset mean of L_cls(f^k) under the gradient classifier.
inline LossCentroids compute_loss_centroids(const ModelParams& p, const Dataset& ds) {
    LossCentroids c;
    c.mu.assign(p.shape.C, 0.0);
    ForwardTrace t;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        forward(p, ds.X.row(i), Head::cls, t);
        for (std::size_t k = 0; k < p.shape.C; ++k) {
            c.mu[k] += bce_with_logits(t.logits[k], ds.Y(i, k));
        }
    }
    for (auto& v : c.mu) {
        v /= static_cast<double>(ds.size());
    }
    return c;
}

// ---------------------------------------------------------------------------
// feature banks

/// Ring buffer of M-vectors; each entry remembers the sample it came from.
class Bank {
public:
    Bank(std::size_t dim, std::size_t capacity) : dim_(dim), capacity_(capacity) {}

    void push(std::span<const double> f, std::size_t sample) {
        require_shape(f.size() == dim_, "bank feature width");
        if (frozen_) {
            fail(ErrorKind::invalid_input, "bank.frozen", "feature bank is frozen");
        }
        const std::size_t slot = inserted_ % capacity_;
        if (size() < capacity_) {
            data_.insert(data_.end(), f.begin(), f.end());
            source_.push_back(sample);
        } else {
            std::copy(f.begin(), f.end(), data_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
            source_[slot] = sample;
        }
        ++inserted_;
    }

    std::size_t size() const { return source_.size(); }
    bool empty() const { return source_.empty(); }
    std::size_t dim() const { return dim_; }
    std::size_t inserted() const { return inserted_; }
    std::span<const double> at(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::size_t source(std::size_t i) const { return source_[i]; }
    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

private:
    std::size_t dim_;
    std::size_t capacity_;
    std::vector<double> data_;
    std::vector<std::size_t> source_;
    std::size_t inserted_ = 0;
    bool frozen_ = false;
};

struct FeatureBanks {
    std::vector<Bank> q0; // label-0 features per attribute
    std::vector<Bank> q1; // label-1 features per attribute

    FeatureBanks(std::size_t C, std::size_t M, std::size_t capacity) {
        for (std::size_t k = 0; k < C; ++k) {
            q0.emplace_back(M, capacity);
            q1.emplace_back(M, capacity);
        }
    }

    std::size_t num_attributes() const { return q0.size(); }
    const Bank& bank(std::size_t k, int label) const { return label ? q1.at(k) : q0.at(k); }

    void push(std::size_t k, int label, std::span<const double> f, std::size_t sample) { (label ? q1 : q0).at(k).push(f, sample); }

    void freeze() {
        for (auto& b : q0) {
            b.freeze();
        }
        for (auto& b : q1) {
            b.freeze();
        }
    }
};

/// Snapshot of extractor parameters (theta and psi).
struct Extractor {
    std::vector<Affine> theta;
    Affine psi;

    static Extractor of(const ModelParams& p) { return {p.theta, p.psi}; }
    void restore(ModelParams& p) const {
        p.theta = theta;
        p.psi = psi;
    }
    friend bool operator==(const Extractor&, const Extractor&) = default;
};

/// Called before each harvest update with (step j, trajectory position, current params).
using HarvestObserver = std::function<void(std::size_t, std::size_t, const ModelParams&)>;

struct HarvestOptions {
    std::uint64_t batch_stream = 1; // substream of the batch-order stream
    HarvestObserver observer;
};

/// One gradient step of L_goat on theta and psi with the gradient head frozen.
inline double goat_step(ModelParams& p, const Dataset& ds, std::span<const std::size_t> batch, std::span<const double> mu, double alpha) {
    LossAndGrads lg = backward_goat(p, ds, batch, mu, Head::cls);
    if (alpha != 0.0) {
        sgd_update(p, lg.grads, alpha, group_theta | group_psi);
    }
    return lg.loss;
}

/// Steps j = T1 .. T2-1: reload the extractor to the stage-1 snapshot every
/// T steps, push the batch's attribute features into the banks by label,
/// then take one L_goat step. The gradient classifier is never modified.
inline FeatureBanks harvest_banks(const ModelParams& p_star, const Dataset& ds, const TrainConfig& cfg, std::span<const double> mu,
                                  const HarvestOptions& opts = {}, TrainLog* log = nullptr) {
    validate(cfg);
    require_shape(mu.size() == p_star.shape.C, "loss centroids vs attributes");
    const std::size_t C = p_star.shape.C;
    FeatureBanks banks(C, p_star.shape.M, cfg.bank_capacity);
    const Extractor snapshot = Extractor::of(p_star);
    ModelParams p = p_star;
    const double alpha = cfg.harvest_alpha();
    EpochSampler sampler(ds.size(), cfg.batch_size, RngStream(cfg.seed, Stream::batch_order).substream(opts.batch_stream));
    ForwardTrace t;
    for (std::size_t j = cfg.T1; j < cfg.T2; ++j) {
        const std::size_t pos = (j - cfg.T1) % cfg.T;
        if (pos == 0) {
            snapshot.restore(p);
        }
        const auto batch = sampler.next();
        if (opts.observer) {
            opts.observer(j, pos, p);
        }
        for (std::size_t i : batch) {
            forward_features(p, ds.X.row(i), t);
            for (std::size_t k = 0; k < C; ++k) {
                banks.push(k, ds.Y(i, k), t.fk.row(k), i);
            }
        }
        if (alpha != 0.0) {
            LossAndGrads lg = detail::divergence_guard([&] { return backward_goat(p, ds, batch, mu, Head::cls); },
                                                       "GOAT harvest step " + std::to_string(j));
            if (!std::isfinite(lg.loss)) {
                fail(ErrorKind::numeric, "numeric.divergence", "GOAT harvest diverged at step " + std::to_string(j));
            }
            if (log) {
                log->add(j, "harvest", lg.loss, lg.per_attribute);
            }
            sgd_update(p, lg.grads, alpha, group_theta | group_psi);
        }
    }
    for (std::size_t k = 0; k < C; ++k) {
        if (banks.q0[k].empty() || banks.q1[k].empty()) {
            fail(ErrorKind::degenerate, "trainer.empty_bank",
                 "attribute " + std::to_string(k) + " never produced a " + (banks.q0[k].empty() ? "negative" : "positive") + " feature");
        }
    }
    banks.freeze();
    return banks;
}

// ---------------------------------------------------------------------------
// label-balanced classifier re-training

struct BalancedBatch {
    Matrix features;
    std::vector<std::uint8_t> labels;
};

/// Each draw flips a fair coin between Q0 and Q1, then picks uniformly with
/// replacement inside the chosen bank.
inline BalancedBatch balanced_sample(const FeatureBanks& banks, std::size_t k, std::size_t m, RngStream& rng) {
    const Bank& b0 = banks.bank(k, 0);
    const Bank& b1 = banks.bank(k, 1);
    if (b0.empty() || b1.empty()) {
        fail(ErrorKind::degenerate, "trainer.empty_bank", "balanced_sample: attribute " + std::to_string(k) + " has an empty bank");
    }
    BalancedBatch out;
    out.features = Matrix(m, b0.dim());
    out.labels.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const int label = rng.bernoulli(0.5) ? 1 : 0;
        const Bank& bank = label ? b1 : b0;
        const auto f = bank.at(rng.below(bank.size()));
        std::copy(f.begin(), f.end(), out.features.row(i).begin());
        out.labels[i] = static_cast<std::uint8_t>(label);
    }
    return out;
}

enum class FinetuneLoss {
    bce,      // plain BCE on balanced batches
    goat,     // |L_cls - mu^l|
    isda      // closed-form homogeneous augmentation margin loss
};

/// Re-train the fresh head `ft` attribute by attribute (round robin, one
/// balanced batch per attribute per outer step). Only row l and bias l of
/// `ft` change while attribute l is trained.
inline void finetune_classifier(const FeatureBanks& banks, std::span<const double> mu, const TrainConfig& cfg, ModelParams& p,
                                FinetuneLoss loss, const HomoAugConfig* homo = nullptr, TrainLog* log = nullptr) {
    const std::size_t C = p.shape.C;
    const std::size_t M = p.shape.M;
    require_shape(banks.num_attributes() == C, "banks vs attributes");
    require_shape(mu.size() == C, "loss centroids vs attributes");
    if (loss == FinetuneLoss::isda && (!homo || homo->lambda.size() != C || homo->sigma.size() != C)) {
        fail(ErrorKind::config, "config.isda", "isda re-training needs lambda and Sigma for every attribute");
    }
    RngStream rng(cfg.seed, Stream::bank_sampling);
    const std::size_t m = cfg.finetune_batch();
    Vector gw(M);
    Vector sigma_w(M);
    Vector per_attr(C);
    const std::size_t steps = cfg.finetune_steps();
    for (std::size_t step = 0; step < steps; ++step) {
        const double lr = step >= (2 * steps) / 3 ? cfg.ft_alpha * cfg.lr_decay : cfg.ft_alpha;
        double total = 0.0;
        for (std::size_t l = 0; l < C; ++l) {
            const BalancedBatch batch = balanced_sample(banks, l, m, rng);
            auto w = p.ft.W.row(l);
            double& b = p.ft.b[l];
            double margin = 0.0;
            if (loss == FinetuneLoss::isda) {
                std::fill(sigma_w.begin(), sigma_w.end(), 0.0);
                for (std::size_t r = 0; r < M; ++r) {
                    sigma_w[r] = homo->lambda[l] * dot(homo->sigma[l].row(r), w);
                }
                margin = 0.5 * dot(w, sigma_w);
            }
            std::fill(gw.begin(), gw.end(), 0.0);
            double gb = 0.0;
            double batch_loss = 0.0;
            double margin_grad_scale = 0.0;
            const double inv = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const auto f = batch.features.row(i);
                const int y = batch.labels[i];
                const double z = dot(w, f) + b;
                if (!std::isfinite(z)) {
                    fail(ErrorKind::numeric, "numeric.divergence", "classifier re-training diverged at step " + std::to_string(step));
                }
                double g = 0.0;
                switch (loss) {
                case FinetuneLoss::bce:
                    batch_loss += bce_with_logits(z, y);
                    g = bce_with_logits_grad(z, y);
                    break;
                case FinetuneLoss::goat: {
                    const double gap = bce_with_logits(z, y) - mu[l];
                    batch_loss += std::abs(gap);
                    g = abs_subgradient(gap) * bce_with_logits_grad(z, y);
                    break;
                }
                case FinetuneLoss::isda: {
                    const double s = label_sign(y);
                    const double u = -s * z + margin;
                    batch_loss += softplus(u);
                    g = -s * sigmoid(u);
                    margin_grad_scale += sigmoid(u);
                    break;
                }
                }
                axpy(g * inv, f, gw);
                gb += g * inv;
            }
            if (loss == FinetuneLoss::isda) {
                axpy(margin_grad_scale * inv, sigma_w, gw);
            }
            batch_loss *= inv;
            if (!std::isfinite(batch_loss)) {
                fail(ErrorKind::numeric, "numeric.divergence", "classifier re-training diverged at step " + std::to_string(step));
            }
            per_attr[l] = batch_loss;
            total += batch_loss;
            axpy(-lr, gw, w);
            b -= lr * gb;
        }
        if (log) {
            log->add(cfg.T1 + step, "finetune", total, per_attr);
        }
    }
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"alpha", c.alpha},       {"T1", c.T1},
                       {"T2", c.T2},             {"T", c.T},
                       {"batch_size", c.batch_size}, {"bank_capacity", c.bank_capacity},
                       {"eta", c.eta},           {"gamma", c.gamma},
                       {"lr_decay", c.lr_decay}, {"decay_at", c.decay_at},
                       {"ft_alpha", c.ft_alpha}, {"ft_steps", c.ft_steps},
                       {"ft_batch_size", c.ft_batch_size}, {"isda_lambda", c.isda_lambda},
                       {"seed", c.seed}};
    if (c.goat_alpha) {
        j["goat_alpha"] = *c.goat_alpha;
    }
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.alpha = j.value("alpha", c.alpha);
    c.T1 = j.value("T1", c.T1);
    c.T2 = j.value("T2", c.T2);
    c.T = j.value("T", c.T);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.bank_capacity = j.value("bank_capacity", c.bank_capacity);
    c.eta = j.value("eta", c.eta);
    c.gamma = j.value("gamma", c.gamma);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_at = j.value("decay_at", c.decay_at);
    if (j.contains("goat_alpha") && !j.at("goat_alpha").is_null()) {
        c.goat_alpha = j.at("goat_alpha").get<double>();
    }
    c.ft_alpha = j.value("ft_alpha", c.ft_alpha);
    c.ft_steps = j.value("ft_steps", c.ft_steps);
    c.ft_batch_size = j.value("ft_batch_size", c.ft_batch_size);
    c.isda_lambda = j.value("isda_lambda", c.isda_lambda);
    c.seed = j.value("seed", c.seed);
}

} // namespace labelbal
