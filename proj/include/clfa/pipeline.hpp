#pragma once

#include <vector>

#include "clfa/adapter.hpp"
#include "clfa/backbone.hpp"
#include "clfa/prompts.hpp"

// Glue between the hooked backbone forward and the detection heads.

namespace clfa {

/// Per-layer abnormality probability tensors from hooked records.
inline std::vector<tc::Tensor> layer_probabilities(const std::vector<TapRecord>& records,
                                                   const tc::Tensor& prototypes, double tau, PoolingMode pooling) {
    std::vector<tc::Tensor> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        if (!rec.m.defined()) raise(ErrorCode::EmptyLayerList, "record has no fused descriptor (no adapters ran)");
        out.push_back(pool_abnormal(match_prototypes(rec.m, prototypes, tau), pooling));
    }
    return out;
}

inline std::vector<double> layer_probability_values(const std::vector<tc::Tensor>& probs) {
    std::vector<double> out;
    out.reserve(probs.size());
    for (const auto& p : probs) out.push_back(p.item());
    return out;
}

/// Scores a pre-computed first-tap token tensor (see
/// Backbone::prefix_to_first_tap) against one task's prototypes.
inline double score_from_prefix(const Backbone& backbone, const AdapterStack& stack, const tc::Tensor& prefix,
                                const tc::Tensor& prototypes, PoolingMode aggregation = PoolingMode::Mean) {
    auto records = backbone.resume_from_tap(0, prefix, tc::Tensor(), &stack);
    auto probs = layer_probabilities(records, prototypes, stack.tau, stack.pooling);
    return image_score(layer_probability_values(probs), aggregation);
}

/// Full image pipeline: embed, hooked forward, match, pool, aggregate.
inline double score_image(const Backbone& backbone, const AdapterStack& stack, const RenderedImage& image,
                          const tc::Tensor& prototypes, PoolingMode aggregation = PoolingMode::Mean) {
    return score_from_prefix(backbone, stack, backbone.prefix_to_first_tap(image), prototypes, aggregation);
}

}  // namespace clfa
