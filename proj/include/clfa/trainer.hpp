#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "clfa/adapter.hpp"
#include "clfa/backbone.hpp"
#include "clfa/container.hpp"
#include "clfa/error.hpp"
#include "clfa/pipeline.hpp"
#include "clfa/render.hpp"
#include "clfa/util.hpp"

// Adam on the detection loss, adapters only; the backbone never changes.

namespace clfa {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 1;
    int epochs = 3;
    std::uint64_t seed = 0;
    double alpha = 0.1;
    double tau = 0.07;
    double slope = 0.01;
    int bottleneck = 16;  // T; must match the prototype width
    int kernel = 3;
    PoolingMode pooling = PoolingMode::Mean;
    std::vector<int> tapped_layers = {1, 2, 3, 4};

    void validate() const {
        if (learning_rate <= 0.0) raise(ErrorCode::InvalidArgument, "learning rate must be positive");
        if (batch_size < 1) raise(ErrorCode::InvalidArgument, "batch size must be >= 1");
        if (epochs < 1) raise(ErrorCode::InvalidArgument, "epochs must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/// Standard bias-corrected Adam update on one parameter tensor.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grads.size()) raise(ErrorCode::ShapeMismatch, "adam_step: parameter/gradient sizes differ");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) raise(ErrorCode::ShapeMismatch, "adam_step: state size differs");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        double mh = state.m[i] / bc1;
        double vh = state.v[i] / bc2;
        params[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSample {
    RenderedImage image;
    int label = 0;
};

struct TrainResult {
    AdapterStack stack;
    std::vector<double> loss_trace;  // one entry per optimizer step
};

/// Trains an adapter stack on one task's rendered samples. Sample order is a
/// per-epoch seeded shuffle; gradients of a batch are accumulated through a
/// single summed loss. Deterministic per (config.seed, inputs).
inline TrainResult train(const Backbone& backbone, const std::vector<TrainSample>& samples,
                         const std::vector<double>& proto_nor, const std::vector<double>& proto_abn,
                         const TrainConfig& config) {
    config.validate();
    if (samples.empty()) raise(ErrorCode::EmptyTask, "no samples for source task");
    bool has0 = false, has1 = false;
    for (const auto& s : samples) (s.label == 0 ? has0 : has1) = true;
    if (!has0 || !has1) raise(ErrorCode::SingleClassTask, "source task needs both labels");
    if (static_cast<int>(proto_nor.size()) != config.bottleneck)
        raise(ErrorCode::ConfigMismatch, "prototype width " + std::to_string(proto_nor.size()) +
                                             " != adapter bottleneck " + std::to_string(config.bottleneck));
    if (backbone.config().tapped_layers != config.tapped_layers)
        raise(ErrorCode::ConfigMismatch, "train config tapped layers differ from backbone");

    tc::Tensor prototypes = prototype_tensor(proto_nor, proto_abn);
    AdapterStack stack = init_adapter_stack(config.seed, backbone.config().width, config.bottleneck, config.kernel,
                                            config.tapped_layers.size(), config.alpha, config.tau, config.slope,
                                            config.pooling);

    // The stream below the first tap is frozen, so each sample's entry
    // tokens are computed once.
    std::vector<tc::Tensor> prefixes;
    prefixes.reserve(samples.size());
    for (const auto& s : samples) prefixes.push_back(backbone.prefix_to_first_tap(s.image));

    std::vector<tc::Tensor> params = stack.trainable_tensors();
    std::vector<AdamState> states(params.size());

    TrainResult result;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(mix64(config.seed, 0xE90C0 + static_cast<std::uint64_t>(epoch)));
        seeded_shuffle(order, shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            tc::Tensor batch_loss;
            for (std::size_t bi = start; bi < end; ++bi) {
                const std::size_t idx = order[bi];
                auto records = backbone.resume_from_tap(0, prefixes[idx], tc::Tensor(), &stack);
                auto probs = layer_probabilities(records, prototypes, stack.tau, stack.pooling);
                tc::Tensor loss = detection_loss(probs, samples[idx].label);
                batch_loss = batch_loss.defined() ? tc::add(batch_loss, loss) : loss;
            }
            batch_loss = tc::scale(batch_loss, 1.0 / static_cast<double>(end - start));
            tc::backward(batch_loss);
            for (std::size_t p = 0; p < params.size(); ++p) {
                auto grads = params[p].grad();
                adam_step(params[p].values_mut(), grads, states[p], config.learning_rate);
            }
            result.loss_trace.push_back(batch_loss.item());
        }
    }
    result.stack = std::move(stack);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: shared container with adapter tensors + hyperparameters.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    int source_task = 0;
    std::uint64_t seed = 0;
    TrainConfig config;
    int width_c = 0;
};

inline std::string save_checkpoint(const AdapterStack& stack, const CheckpointMeta& meta) {
    Container c;
    c.meta = {{"type", "clfa-checkpoint"},
              {"source_task", meta.source_task},
              {"seed", meta.seed},
              {"alpha", stack.alpha},
              {"tau", stack.tau},
              {"slope", stack.slope},
              {"pooling", pooling_to_string(stack.pooling)},
              {"tapped_layers", meta.config.tapped_layers},
              {"width_c", meta.width_c},
              {"bottleneck_t", meta.config.bottleneck},
              {"kernel", meta.config.kernel},
              {"learning_rate", meta.config.learning_rate},
              {"batch_size", meta.config.batch_size},
              {"epochs", meta.config.epochs}};
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        std::string prefix = "adapter." + std::to_string(l) + ".";
        auto put = [&c](const std::string& name, const tc::Tensor& t) {
            auto v = t.values();
            c.tensors.push_back({name, {t.rows(), t.cols()}, std::vector<double>(v.begin(), v.end())});
        };
        put(prefix + "w1", stack.layers[l].w1);
        put(prefix + "conv", stack.layers[l].kernels);
        if (stack.layers[l].wz.defined()) put(prefix + "wz", stack.layers[l].wz);
        put(prefix + "w2", stack.layers[l].w2);
    }
    return write_container(c);
}

struct LoadedCheckpoint {
    AdapterStack stack;
    CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& bytes) {
    Container c = read_container(bytes);
    if (!c.meta.contains("type") || c.meta["type"] != "clfa-checkpoint")
        raise(ErrorCode::ManifestMismatch, "container is not a checkpoint");

    LoadedCheckpoint out;
    out.meta.source_task = c.meta.at("source_task").get<int>();
    out.meta.seed = c.meta.at("seed").get<std::uint64_t>();
    out.meta.width_c = c.meta.at("width_c").get<int>();
    out.meta.config.tapped_layers = c.meta.at("tapped_layers").get<std::vector<int>>();
    out.meta.config.bottleneck = c.meta.at("bottleneck_t").get<int>();
    out.meta.config.kernel = c.meta.at("kernel").get<int>();
    out.meta.config.learning_rate = c.meta.at("learning_rate").get<double>();
    out.meta.config.batch_size = c.meta.at("batch_size").get<int>();
    out.meta.config.epochs = c.meta.at("epochs").get<int>();
    out.meta.config.alpha = c.meta.at("alpha").get<double>();
    out.meta.config.tau = c.meta.at("tau").get<double>();
    out.meta.config.slope = c.meta.at("slope").get<double>();
    out.meta.config.pooling = pooling_from_string(c.meta.at("pooling").get<std::string>());

    out.stack.alpha = out.meta.config.alpha;
    out.stack.tau = out.meta.config.tau;
    out.stack.slope = out.meta.config.slope;
    out.stack.pooling = out.meta.config.pooling;

    const int width_c = out.meta.width_c;
    const int t = out.meta.config.bottleneck;
    const int k = out.meta.config.kernel;
    const std::size_t layers = out.meta.config.tapped_layers.size();
    auto get = [&c](const std::string& name, int rows, int cols) {
        const TensorRecord& rec = c.find(name);
        if (rec.shape.size() != 2 || rec.shape[0] != rows || rec.shape[1] != cols)
            raise(ErrorCode::ManifestMismatch, "checkpoint tensor '" + name + "' has unexpected shape");
        return tc::Tensor::from(rows, cols, rec.data, /*requires_grad=*/true);
    };
    for (std::size_t l = 0; l < layers; ++l) {
        std::string prefix = "adapter." + std::to_string(l) + ".";
        AdapterParams p;
        p.w1 = get(prefix + "w1", width_c, t);
        p.kernels = get(prefix + "conv", t, k);
        if (l > 0) p.wz = get(prefix + "wz", t, t);
        p.w2 = get(prefix + "w2", t, width_c);
        out.stack.layers.push_back(std::move(p));
    }
    return out;
}

}  // namespace clfa
