#pragma once

/**
 * Two-Gaussian toy problem with a locally flipped label region.
 *
 * Training data is two well-separated isotropic blobs. The edit stream is
 * drawn from a small disk sitting inside one blob's support, with labels
 * flipped relative to the generating class; the test set is drawn from the
 * clean mixture with the disk excluded. A correct classifier therefore
 * starts wrong on every stream candidate, and fixing them must not cost
 * accuracy anywhere else.
 */

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace grace {

struct SyntheticSpec {
    std::array<double, 2> mean0{-2.0, -2.0};
    std::array<double, 2> mean1{2.0, 2.0};
    double sigma = 0.7;
    std::size_t per_class = 100;
    std::array<double, 2> flip_center{2.5, 2.5};
    double flip_radius = 0.5;
    std::size_t n_edits = 20;
    std::size_t n_holdouts = 50;
    std::size_t n_test = 400;
    std::uint64_t seed = 0;
};

struct EditStream {
    LabeledDataset candidates;                  // flipped labels, in arrival order
    LabeledDataset holdouts;                    // same region, never streamed
    std::vector<std::size_t> original_labels;   // generating class per candidate
};

struct SyntheticData {
    LabeledDataset train;
    EditStream edits;
    LabeledDataset test;
};

namespace detail {

inline bool inside_disk(double x, double y, const std::array<double, 2>& c, double r) {
    const double dx = x - c[0], dy = y - c[1];
    return dx * dx + dy * dy <= r * r;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (!(spec.sigma > 0.0)) throw ConfigError("generate_synthetic: sigma must be positive");
    if (!(spec.flip_radius > 0.0)) throw ConfigError("generate_synthetic: flip radius must be positive");
    if (spec.per_class == 0) throw ConfigError("generate_synthetic: per_class must be >= 1");
    if (spec.n_edits == 0) throw ConfigError("generate_synthetic: n_edits must be >= 1");

    Rng rng(spec.seed);
    const std::array<const std::array<double, 2>*, 2> means{&spec.mean0, &spec.mean1};

    SyntheticData out;
    out.train.name = "train";
    for (std::size_t cls = 0; cls < 2; ++cls) {
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            const double x = rng.normal((*means[cls])[0], spec.sigma);
            const double y = rng.normal((*means[cls])[1], spec.sigma);
            out.train.inputs.push_back(Tensor::vector({x, y}));
            out.train.labels.push_back(cls);
        }
    }

    // Flip-region draws come from the same mixture, rejection-sampled into
    // the disk. The attempt cap turns a region with (near-)zero mass into a
    // config error instead of a hang.
    constexpr std::size_t max_attempts = 1000000;
    const std::size_t wanted = spec.n_edits + spec.n_holdouts;
    std::vector<std::array<double, 2>> flips;
    std::vector<std::size_t> flip_origin;
    std::size_t attempts = 0;
    while (flips.size() < wanted && attempts < max_attempts) {
        ++attempts;
        const std::size_t cls = rng.below(2);
        const double x = rng.normal((*means[cls])[0], spec.sigma);
        const double y = rng.normal((*means[cls])[1], spec.sigma);
        if (!detail::inside_disk(x, y, spec.flip_center, spec.flip_radius)) continue;
        flips.push_back({x, y});
        flip_origin.push_back(cls);
    }
    if (flips.size() < wanted)
        throw ConfigError("generate_synthetic: flip region captured too few samples ("
                          + std::to_string(flips.size()) + " of " + std::to_string(wanted) + ")");
    for (std::size_t cls : flip_origin)
        if (cls != flip_origin.front())
            throw ConfigError("generate_synthetic: flip region spans both classes");

    out.edits.candidates.name = "edits";
    out.edits.holdouts.name = "holdouts";
    for (std::size_t i = 0; i < wanted; ++i) {
        Var p = Tensor::vector({flips[i][0], flips[i][1]});
        const std::size_t flipped = 1 - flip_origin[i];
        if (i < spec.n_edits) {
            out.edits.candidates.inputs.push_back(p);
            out.edits.candidates.labels.push_back(flipped);
            out.edits.original_labels.push_back(flip_origin[i]);
        } else {
            out.edits.holdouts.inputs.push_back(p);
            out.edits.holdouts.labels.push_back(flipped);
        }
    }

    out.test.name = "test";
    attempts = 0;
    while (out.test.size() < spec.n_test && attempts < max_attempts) {
        ++attempts;
        const std::size_t cls = rng.below(2);
        const double x = rng.normal((*means[cls])[0], spec.sigma);
        const double y = rng.normal((*means[cls])[1], spec.sigma);
        if (detail::inside_disk(x, y, spec.flip_center, spec.flip_radius)) continue;
        out.test.inputs.push_back(Tensor::vector({x, y}));
        out.test.labels.push_back(cls);
    }
    if (out.test.size() < spec.n_test)
        throw ConfigError("generate_synthetic: could not draw the test set outside the flip region");

    return out;
}

}  // namespace grace
