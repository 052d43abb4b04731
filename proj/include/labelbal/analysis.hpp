#pragma once

// Translating directions produced by short gradient-oriented extractor
// trajectories, their principal axes, and posterior variation along them.

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "labelbal/augment.hpp"
#include "labelbal/error.hpp"
#include "labelbal/model.hpp"
#include "labelbal/numkit.hpp"
#include "labelbal/trainer.hpp"

namespace labelbal {

struct FeatureTarget {
    std::size_t sample = 0;
    std::size_t attribute = 0;
};

/// For every target feature f_i^k, n_dirs displacements f(step) - f(snapshot)
/// collected along trajectories of L_goat steps (length cfg.T, each
/// trajectory with its own batch order). Result: one n_dirs x M matrix per target.
inline std::vector<Matrix> collect_translating_directions(const ModelParams& p_star, const Dataset& ds, const TrainConfig& cfg,
                                                          std::span<const double> mu, std::span<const FeatureTarget> targets,
                                                          std::size_t n_dirs) {
    validate(cfg);
    require_shape(mu.size() == p_star.shape.C, "loss centroids vs attributes");
    if (targets.empty() || n_dirs < 2) {
        fail(ErrorKind::invalid_input, "analysis.too_few_directions", "need at least one target and two directions");
    }
    const std::size_t M = p_star.shape.M;
    std::vector<Matrix> base(targets.size());
    ForwardTrace t;
    for (std::size_t j = 0; j < targets.size(); ++j) {
        if (targets[j].sample >= ds.size() || targets[j].attribute >= p_star.shape.C) {
            fail(ErrorKind::invalid_input, "analysis.target", "feature target out of range");
        }
        forward_features(p_star, ds.X.row(targets[j].sample), t);
        base[j] = t.fk;
    }
    std::vector<Matrix> dirs(targets.size(), Matrix(n_dirs, M));
    const Extractor snapshot = Extractor::of(p_star);
    ModelParams p = p_star;
    std::size_t filled = 0;
    for (std::uint64_t traj = 0; filled < n_dirs; ++traj) {
        snapshot.restore(p);
        EpochSampler sampler(ds.size(), cfg.batch_size, RngStream(cfg.seed, Stream::analysis).substream(traj));
        for (std::size_t step = 0; step < cfg.T && filled < n_dirs; ++step) {
            const double loss = goat_step(p, ds, sampler.next(), mu, cfg.harvest_alpha());
            if (!std::isfinite(loss)) {
                fail(ErrorKind::numeric, "numeric.divergence", "trajectory diverged");
            }
            for (std::size_t j = 0; j < targets.size(); ++j) {
                forward_features(p, ds.X.row(targets[j].sample), t);
                const std::size_t k = targets[j].attribute;
                for (std::size_t m = 0; m < M; ++m) {
                    dirs[j](filled, m) = t.fk(k, m) - base[j](k, m);
                }
            }
            ++filled;
        }
    }
    return dirs;
}

/// Top `top_l` principal axes of each target's direction cloud.
inline std::vector<EigenPairs> direction_eigens(const ModelParams& p_star, const Dataset& ds, const TrainConfig& cfg,
                                                std::span<const FeatureTarget> targets, std::size_t n_dirs, std::size_t top_l) {
    if (top_l < 1 || top_l > p_star.shape.M || n_dirs < top_l) {
        fail(ErrorKind::invalid_input, "analysis.too_few_directions", "need 1 <= top_l <= M and n_dirs >= top_l");
    }
    const LossCentroids mu = compute_loss_centroids(p_star, ds);
    const auto dirs = collect_translating_directions(p_star, ds, cfg, mu.mu, targets, n_dirs);
    RngStream rng = RngStream(cfg.seed, Stream::analysis).substream(1u << 20);
    std::vector<EigenPairs> out;
    for (const auto& d : dirs) {
        out.push_back(power_iteration_eigens(row_covariance(d), top_l, rng));
    }
    return out;
}

/// Mean over targets of |G(f + t v) - G(f)| for the target's own attribute,
/// with v the target's eigenvector of rank `rank`.
inline Vector mean_posterior_variation(const ModelParams& p, const Dataset& ds, std::span<const FeatureTarget> targets,
                                       std::span<const EigenPairs> eigens, std::size_t rank, std::span<const double> t_grid) {
    require_shape(targets.size() == eigens.size(), "targets vs eigen-directions");
    Vector out(t_grid.size(), 0.0);
    ForwardTrace t;
    for (std::size_t j = 0; j < targets.size(); ++j) {
        forward_features(p, ds.X.row(targets[j].sample), t);
        const Vector curve = posterior_sweep(t.fk.row(targets[j].attribute), eigens[j].vectors.at(rank), t_grid, p.cls, targets[j].attribute);
        axpy(1.0 / static_cast<double>(targets.size()), curve, out);
    }
    return out;
}

inline void write_sweep_rows(std::ostream& out, std::size_t feature, std::size_t eigen_index, std::span<const double> t_grid,
                             const Matrix& variation) {
    for (std::size_t r = 0; r < t_grid.size(); ++r) {
        out << feature << ',' << eigen_index << ',' << format_double(t_grid[r]);
        for (std::size_t k = 0; k < variation.cols; ++k) {
            out << ',' << format_double(variation(r, k));
        }
        out << '\n';
    }
}

} // namespace labelbal
