#pragma once

// Small fixtures shared by the unit tests and the acceptance runner.

#include <cstdint>

#include "labelbal/datagen.hpp"
#include "labelbal/model.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal::testing {

inline ModelShape small_shape() {
    ModelShape s;
    s.D = 5;
    s.hidden = {6};
    s.feature_dim = 5;
    s.C = 3;
    s.M = 4;
    return s;
}

/// Gaussian inputs, Bernoulli(0.5) labels.
inline Dataset random_dataset(std::size_t N, std::size_t D, std::size_t C, std::uint64_t seed) {
    RngStream rng(seed, Stream::analysis);
    Dataset ds;
    ds.X = Matrix(N, D);
    ds.Y = LabelMatrix(N, C);
    for (auto& v : ds.X.data) {
        v = rng.normal();
    }
    for (auto& v : ds.Y.data) {
        v = rng.bernoulli(0.5) ? 1 : 0;
    }
    ds.attribute_names = default_attribute_names(C);
    return ds;
}

/// Random parameters with non-zero biases everywhere.
inline ModelParams random_params(const ModelShape& s, std::uint64_t seed) {
    RngStream rng(seed, Stream::init);
    ModelParams p = init_params(s, rng);
    for (auto block : param_blocks(p)) {
        for (auto& v : block) {
            if (v == 0.0) {
                v = rng.uniform(-0.3, 0.3);
            }
        }
    }
    return p;
}

} // namespace labelbal::testing
