#pragma once

// Feature extractor (ReLU perceptron), attribute decomposer (one affine
// layer producing C features of width M) and two per-attribute linear heads:
// the gradient classifier `cls` and the fresh classifier `ft`.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal {

struct Affine {
    Matrix W;
    Vector b;

    Affine() = default;
    Affine(std::size_t out, std::size_t in) : W(out, in), b(out, 0.0) {}

    std::size_t in_dim() const { return W.cols; }
    std::size_t out_dim() const { return W.rows; }

    friend bool operator==(const Affine&, const Affine&) = default;
};

struct ModelShape {
    std::size_t D = 32;
    std::vector<std::size_t> hidden{64};
    std::size_t feature_dim = 64; // M_H
    std::size_t C = 8;
    std::size_t M = 16;

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

enum class Head { cls, ft };

inline const char* head_name(Head h) { return h == Head::cls ? "cls" : "ft"; }

struct ModelParams {
    ModelShape shape;
    std::vector<Affine> theta; // ReLU between consecutive layers, none after the last
    Affine psi;                // feature_dim -> C*M
    Affine cls;                // C x M (row k is w^k)
    Affine ft;

    Affine& head(Head h) { return h == Head::cls ? cls : ft; }
    const Affine& head(Head h) const { return h == Head::cls ? cls : ft; }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Zero-valued parameters of the given shape; also used as a gradient buffer.
inline ModelParams zero_params(const ModelShape& s) {
    ModelParams p;
    p.shape = s;
    std::size_t in = s.D;
    for (std::size_t h : s.hidden) {
        p.theta.emplace_back(h, in);
        in = h;
    }
    p.theta.emplace_back(s.feature_dim, in);
    p.psi = Affine(s.C * s.M, s.feature_dim);
    p.cls = Affine(s.C, s.M);
    p.ft = Affine(s.C, s.M);
    return p;
}

inline void uniform_fill(Matrix& W, double limit, RngStream& rng) {
    for (auto& v : W.data) {
        v = rng.uniform(-limit, limit);
    }
}

/// Fresh Glorot-uniform weights and zero biases for one classifier head.
inline void init_head(Affine& head, RngStream& rng) {
    uniform_fill(head.W, std::sqrt(6.0 / static_cast<double>(head.in_dim() + head.out_dim())), rng);
    std::fill(head.b.begin(), head.b.end(), 0.0);
}

/// He-uniform for the ReLU stack, Glorot-uniform elsewhere, zero biases.
inline ModelParams init_params(const ModelShape& s, RngStream& rng) {
    ModelParams p = zero_params(s);
    for (auto& layer : p.theta) {
        uniform_fill(layer.W, std::sqrt(6.0 / static_cast<double>(layer.in_dim())), rng);
    }
    uniform_fill(p.psi.W, std::sqrt(6.0 / static_cast<double>(p.psi.in_dim() + p.psi.out_dim())), rng);
    init_head(p.cls, rng);
    init_head(p.ft, rng);
    return p;
}

// ---------------------------------------------------------------------------
// parameter views

/// Flat views of every parameter block: theta (W, b)..., psi, cls, ft.
inline std::vector<std::span<double>> param_blocks(ModelParams& p) {
    std::vector<std::span<double>> out;
    auto add = [&](Affine& a) {
        out.emplace_back(a.W.data);
        out.emplace_back(a.b);
    };
    for (auto& l : p.theta) {
        add(l);
    }
    add(p.psi);
    add(p.cls);
    add(p.ft);
    return out;
}

inline Vector flatten(const ModelParams& p) {
    Vector out;
    for (auto block : param_blocks(const_cast<ModelParams&>(p))) {
        out.insert(out.end(), block.begin(), block.end());
    }
    return out;
}

inline void unflatten(std::span<const double> flat, ModelParams& p) {
    std::size_t off = 0;
    for (auto block : param_blocks(p)) {
        require_shape(off + block.size() <= flat.size(), "unflatten length");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + block.size()),
                  block.begin());
        off += block.size();
    }
    require_shape(off == flat.size(), "unflatten length");
}

inline bool all_finite(const ModelParams& p) {
    for (auto block : param_blocks(const_cast<ModelParams&>(p))) {
        for (double v : block) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
    }
    return true;
}

enum ParamGroup : unsigned { group_theta = 1, group_psi = 2, group_cls = 4, group_ft = 8 };

inline unsigned head_group(Head h) { return h == Head::cls ? group_cls : group_ft; }

/// p -= alpha * g on the selected groups.
inline void sgd_update(ModelParams& p, const ModelParams& g, double alpha, unsigned groups) {
    auto step = [alpha](Affine& a, const Affine& ga) {
        axpy(-alpha, ga.W.data, a.W.data);
        axpy(-alpha, ga.b, a.b);
    };
    if (groups & group_theta) {
        for (std::size_t l = 0; l < p.theta.size(); ++l) {
            step(p.theta[l], g.theta[l]);
        }
    }
    if (groups & group_psi) {
        step(p.psi, g.psi);
    }
    if (groups & group_cls) {
        step(p.cls, g.cls);
    }
    if (groups & group_ft) {
        step(p.ft, g.ft);
    }
}

// ---------------------------------------------------------------------------
// forward

struct ForwardTrace {
    std::vector<Vector> pre;  // pre-activation of each theta layer
    std::vector<Vector> acts; // acts[0] = x, acts[l+1] = input of layer l+1
    Vector f;                 // backbone feature (M_H)
    Matrix fk;                // C x M attribute features
    Vector logits;            // C
};

inline void check_input(const ModelParams& p, std::span<const double> x) {
    require_shape(x.size() == p.shape.D, "model input has " + std::to_string(x.size()) + " entries, expected " + std::to_string(p.shape.D));
}

/// Backbone and attribute features only (no classifier).
inline void forward_features(const ModelParams& p, std::span<const double> x, ForwardTrace& t) {
    check_input(p, x);
    const std::size_t L = p.theta.size();
    t.pre.resize(L);
    t.acts.resize(L);
    t.acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
        const Affine& layer = p.theta[l];
        t.pre[l].resize(layer.out_dim());
        matvec_bias(layer.W, layer.b, t.acts[l], t.pre[l]);
        if (l + 1 < L) {
            t.acts[l + 1].resize(layer.out_dim());
            for (std::size_t i = 0; i < layer.out_dim(); ++i) {
                t.acts[l + 1][i] = t.pre[l][i] > 0.0 ? t.pre[l][i] : 0.0;
            }
        }
    }
    t.f = t.pre[L - 1];
    if (t.fk.rows != p.shape.C || t.fk.cols != p.shape.M) {
        t.fk = Matrix(p.shape.C, p.shape.M);
    }
    matvec_bias(p.psi.W, p.psi.b, t.f, t.fk.data);
}

/// logits_k = w^k . f^k + b^k
inline void apply_head(const Affine& head, const Matrix& fk, Vector& logits) {
    require_shape(head.W.rows == fk.rows && head.W.cols == fk.cols, "classifier vs attribute features");
    logits.resize(fk.rows);
    for (std::size_t k = 0; k < fk.rows; ++k) {
        logits[k] = dot(head.W.row(k), fk.row(k)) + head.b[k];
    }
}

inline void forward(const ModelParams& p, std::span<const double> x, Head head, ForwardTrace& t) {
    forward_features(p, x, t);
    apply_head(p.head(head), t.fk, t.logits);
}

inline ForwardTrace forward(const ModelParams& p, std::span<const double> x, Head head) {
    ForwardTrace t;
    forward(p, x, head, t);
    return t;
}

/// Sigmoid posteriors for every sample (N x C).
inline Matrix predict_proba(const ModelParams& p, const Matrix& X, Head head) {
    Matrix out(X.rows, p.shape.C);
    ForwardTrace t;
    for (std::size_t i = 0; i < X.rows; ++i) {
        forward(p, X.row(i), head, t);
        for (std::size_t k = 0; k < p.shape.C; ++k) {
            out(i, k) = sigmoid(t.logits[k]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward

/// Accumulate (scaled by `scale`) gradients of a loss whose derivative with
/// respect to the logits is `g_logits`, given a trace from forward().
/// With `include_head` false the classifier receives no gradient.
inline void backprop(const ModelParams& p, const ForwardTrace& t, std::span<const double> g_logits, Head head, double scale,
                     ModelParams& grads, bool include_head, Vector& scratch_fk, Vector& scratch_f) {
    const Affine& clf = p.head(head);
    const std::size_t C = p.shape.C;
    const std::size_t M = p.shape.M;
    scratch_fk.assign(C * M, 0.0);
    Affine& gclf = grads.head(head);
    for (std::size_t k = 0; k < C; ++k) {
        const double g = scale * g_logits[k];
        if (g == 0.0) {
            continue;
        }
        const auto w = clf.W.row(k);
        const auto fk = t.fk.row(k);
        if (include_head) {
            auto gw = gclf.W.row(k);
            for (std::size_t m = 0; m < M; ++m) {
                gw[m] += g * fk[m];
            }
            gclf.b[k] += g;
        }
        for (std::size_t m = 0; m < M; ++m) {
            scratch_fk[k * M + m] = g * w[m];
        }
    }
    // decomposer
    outer_add(1.0, scratch_fk, t.f, grads.psi.W);
    axpy(1.0, scratch_fk, grads.psi.b);
    scratch_f.assign(p.shape.feature_dim, 0.0);
    matvec_transpose_add(p.psi.W, scratch_fk, scratch_f);
    // extractor, last layer has no ReLU
    Vector g = scratch_f;
    for (std::size_t l = p.theta.size(); l-- > 0;) {
        if (l + 1 < p.theta.size()) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (t.pre[l][i] <= 0.0) {
                    g[i] = 0.0;
                }
            }
        }
        outer_add(1.0, g, t.acts[l], grads.theta[l].W);
        axpy(1.0, g, grads.theta[l].b);
        if (l > 0) {
            Vector g_in(p.theta[l].in_dim(), 0.0);
            matvec_transpose_add(p.theta[l].W, g, g_in);
            g = std::move(g_in);
        }
    }
}

/// Per-attribute positive/negative weights for the weighted BCE.
struct LossWeights {
    Vector pos;
    Vector neg;
};

struct LossAndGrads {
    double loss = 0.0;
    Vector per_attribute; // mean loss per attribute over the batch
    ModelParams grads;
};

/// Mean-over-batch, sum-over-attributes BCE and its gradients for theta,
/// psi and the chosen head. `weights` turns it into the weighted BCE.
inline LossAndGrads backward_bce(const ModelParams& p, const Dataset& ds, std::span<const std::size_t> batch, Head head,
                                 const LossWeights* weights = nullptr) {
    if (batch.empty()) {
        fail(ErrorKind::invalid_input, "input.empty_batch", "backward_bce: empty batch");
    }
    require_shape(ds.num_attributes() == p.shape.C, "label columns vs model attributes");
    const std::size_t C = p.shape.C;
    LossAndGrads out;
    out.grads = zero_params(p.shape);
    out.per_attribute.assign(C, 0.0);
    ForwardTrace t;
    Vector g_logits(C);
    Vector s1;
    Vector s2;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
        forward(p, ds.X.row(i), head, t);
        for (std::size_t k = 0; k < C; ++k) {
            const int y = ds.Y(i, k);
            double w = 1.0;
            if (weights) {
                w = y ? weights->pos[k] : weights->neg[k];
            }
            const double l = w * bce_with_logits(t.logits[k], y);
            out.per_attribute[k] += l * inv_b;
            out.loss += l * inv_b;
            g_logits[k] = w * bce_with_logits_grad(t.logits[k], y);
        }
        backprop(p, t, g_logits, head, inv_b, out.grads, true, s1, s2);
    }
    return out;
}

/// L_goat = (1/|B|) sum_i sum_k |L_cls(f_i^k) - mu^k| and its gradients for
/// theta and psi; the frozen head gets an exactly-zero gradient.
inline LossAndGrads backward_goat(const ModelParams& p, const Dataset& ds, std::span<const std::size_t> batch,
                                  std::span<const double> mu, Head frozen) {
    if (batch.empty()) {
        fail(ErrorKind::invalid_input, "input.empty_batch", "backward_goat: empty batch");
    }
    require_shape(mu.size() == p.shape.C, "loss centroids vs attributes");
    const std::size_t C = p.shape.C;
    LossAndGrads out;
    out.grads = zero_params(p.shape);
    out.per_attribute.assign(C, 0.0);
    ForwardTrace t;
    Vector g_logits(C);
    Vector s1;
    Vector s2;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
        forward(p, ds.X.row(i), frozen, t);
        for (std::size_t k = 0; k < C; ++k) {
            const int y = ds.Y(i, k);
            const double gap = bce_with_logits(t.logits[k], y) - mu[k];
            out.per_attribute[k] += std::abs(gap) * inv_b;
            out.loss += std::abs(gap) * inv_b;
            g_logits[k] = abs_subgradient(gap) * bce_with_logits_grad(t.logits[k], y);
        }
        backprop(p, t, g_logits, frozen, inv_b, out.grads, false, s1, s2);
    }
    return out;
}

/// Mean BCE (sum over attributes) of a batch, for gradient checks.
inline double batch_bce(const ModelParams& p, const Dataset& ds, std::span<const std::size_t> batch, Head head,
                        const LossWeights* weights = nullptr) {
    ForwardTrace t;
    double loss = 0.0;
    for (std::size_t i : batch) {
        forward(p, ds.X.row(i), head, t);
        for (std::size_t k = 0; k < p.shape.C; ++k) {
            const int y = ds.Y(i, k);
            const double w = weights ? (y ? weights->pos[k] : weights->neg[k]) : 1.0;
            loss += w * bce_with_logits(t.logits[k], y);
        }
    }
    return loss / static_cast<double>(batch.size());
}

inline double batch_goat(const ModelParams& p, const Dataset& ds, std::span<const std::size_t> batch, std::span<const double> mu,
                         Head head) {
    ForwardTrace t;
    double loss = 0.0;
    for (std::size_t i : batch) {
        forward(p, ds.X.row(i), head, t);
        for (std::size_t k = 0; k < p.shape.C; ++k) {
            loss += std::abs(bce_with_logits(t.logits[k], ds.Y(i, k)) - mu[k]);
        }
    }
    return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// checkpoints

inline nlohmann::json affine_to_json(const Affine& a) {
    return {{"rows", a.W.rows}, {"cols", a.W.cols}, {"W", a.W.data}, {"b", a.b}};
}

inline Affine affine_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols, const std::string& name) {
    Affine a(rows, cols);
    if (j.at("rows").get<std::size_t>() != rows || j.at("cols").get<std::size_t>() != cols) {
        fail(ErrorKind::config, "checkpoint.shape_mismatch", "checkpoint layer " + name + " has the wrong shape");
    }
    auto W = j.at("W").get<std::vector<double>>();
    auto b = j.at("b").get<std::vector<double>>();
    if (W.size() != rows * cols || b.size() != rows) {
        fail(ErrorKind::config, "checkpoint.shape_mismatch", "checkpoint layer " + name + " has the wrong number of values");
    }
    a.W.data = std::move(W);
    a.b = std::move(b);
    return a;
}

inline nlohmann::json shape_to_json(const ModelShape& s) {
    return {{"D", s.D}, {"hidden", s.hidden}, {"feature_dim", s.feature_dim}, {"C", s.C}, {"M", s.M}};
}

inline ModelShape shape_from_json(const nlohmann::json& j) {
    ModelShape s;
    s.D = j.value("D", s.D);
    s.hidden = j.value("hidden", s.hidden);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.C = j.value("C", s.C);
    s.M = j.value("M", s.M);
    return s;
}

inline nlohmann::json checkpoint_to_json(const ModelParams& p, Head test_head) {
    nlohmann::json theta = nlohmann::json::array();
    for (const auto& l : p.theta) {
        theta.push_back(affine_to_json(l));
    }
    return {{"schema_version", 1},
            {"format", "labelbal-checkpoint"},
            {"shape", shape_to_json(p.shape)},
            {"test_head", head_name(test_head)},
            {"theta", theta},
            {"psi", affine_to_json(p.psi)},
            {"cls", affine_to_json(p.cls)},
            {"ft", affine_to_json(p.ft)}};
}

struct Checkpoint {
    ModelParams params;
    Head test_head = Head::cls;
};

/// Rejects any layer whose stored shape disagrees with the declared shape,
/// and, when `expected` is given, a declared shape that differs from it.
inline Checkpoint checkpoint_from_json(const nlohmann::json& j, const ModelShape* expected = nullptr) {
    if (j.value("format", std::string()) != "labelbal-checkpoint" || j.value("schema_version", 0) != 1) {
        fail(ErrorKind::io, "checkpoint.format", "not a version-1 labelbal checkpoint");
    }
    Checkpoint ck;
    const ModelShape s = shape_from_json(j.at("shape"));
    if (expected && !(s == *expected)) {
        fail(ErrorKind::config, "checkpoint.shape_mismatch", "checkpoint shape differs from the expected model shape");
    }
    ModelParams p = zero_params(s);
    const auto& theta = j.at("theta");
    if (theta.size() != p.theta.size()) {
        fail(ErrorKind::config, "checkpoint.shape_mismatch", "checkpoint has the wrong number of extractor layers");
    }
    for (std::size_t l = 0; l < p.theta.size(); ++l) {
        p.theta[l] = affine_from_json(theta[l], p.theta[l].out_dim(), p.theta[l].in_dim(), "theta." + std::to_string(l));
    }
    p.psi = affine_from_json(j.at("psi"), p.psi.out_dim(), p.psi.in_dim(), "psi");
    p.cls = affine_from_json(j.at("cls"), s.C, s.M, "cls");
    p.ft = affine_from_json(j.at("ft"), s.C, s.M, "ft");
    ck.params = std::move(p);
    ck.test_head = j.value("test_head", std::string("cls")) == "ft" ? Head::ft : Head::cls;
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelParams& p, Head test_head) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::io, "io.open_failed", "cannot write " + path);
    }
    out << checkpoint_to_json(p, test_head).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelShape* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "io.missing_file", "cannot open " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, "io.malformed_json", path + ": " + e.what());
    }
    return checkpoint_from_json(j, expected);
}

} // namespace labelbal
