#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "clfa/error.hpp"
#include "clfa/tensor.hpp"
#include "clfa/util.hpp"

// The cross-layer fusion adapter: per-layer bottleneck projection, token
// convolution, fusion with the previous layer's descriptor, and residual
// retargeting back into the backbone stream. Descriptors are matched against
// text prototypes and pooled into per-layer abnormality probabilities.

namespace clfa {

/// Trainable parameters of one adapter. The first tapped layer has no
/// fusion transform (there is nothing to fuse yet).
struct AdapterParams {
    tc::Tensor w1;       // C x T bottleneck projection
    tc::Tensor kernels;  // T x k depthwise conv kernels
    tc::Tensor wz;       // T x T fusion transform; undefined for the first layer
    tc::Tensor w2;       // T x C re-projection

    std::vector<tc::Tensor> tensors() const {
        std::vector<tc::Tensor> out = {w1, kernels};
        if (wz.defined()) out.push_back(wz);
        out.push_back(w2);
        return out;
    }
};

enum class PoolingMode { Mean, Max };

inline PoolingMode pooling_from_string(std::string_view s) {
    if (s == "mean") return PoolingMode::Mean;
    if (s == "max") return PoolingMode::Max;
    raise(ErrorCode::UnknownMode, "unknown pooling mode '" + std::string(s) + "'");
}

inline const char* pooling_to_string(PoolingMode m) { return m == PoolingMode::Mean ? "mean" : "max"; }

struct AdapterStack {
    std::vector<AdapterParams> layers;  // ordered to match the tapped layers
    double alpha = 0.1;                 // residual coefficient
    double slope = 0.01;                // activation slope
    double tau = 0.07;                  // matching temperature
    PoolingMode pooling = PoolingMode::Mean;

    std::vector<tc::Tensor> trainable_tensors() const {
        std::vector<tc::Tensor> out;
        for (const auto& l : layers)
            for (auto& t : l.tensors()) out.push_back(t);
        return out;
    }
};

/// Seeded initialization: projections uniform at 1/sqrt(fan_in), conv
/// kernels near the identity tap, and W2 zero so training starts from the
/// unperturbed backbone stream.
inline AdapterStack init_adapter_stack(std::uint64_t seed, int width_c, int bottleneck_t, int kernel_k,
                                       std::size_t num_layers, double alpha = 0.1, double tau = 0.07,
                                       double slope = 0.01, PoolingMode pooling = PoolingMode::Mean) {
    if (kernel_k % 2 == 0) raise(ErrorCode::EvenKernel, "kernel width must be odd");
    if (num_layers == 0) raise(ErrorCode::EmptyLayerList, "adapter stack needs at least one layer");
    if (alpha < 0.0 || alpha > 1.0) raise(ErrorCode::InvalidArgument, "alpha must lie in [0,1]");
    Rng rng(mix64(seed, 0xADAFull));
    auto uniform_matrix = [&rng](int rows, int cols, int fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> d(static_cast<std::size_t>(rows) * cols);
        for (auto& v : d) v = rng.symmetric(bound);
        return tc::Tensor::from(rows, cols, std::move(d), /*requires_grad=*/true);
    };

    AdapterStack stack;
    stack.alpha = alpha;
    stack.tau = tau;
    stack.slope = slope;
    stack.pooling = pooling;
    for (std::size_t l = 0; l < num_layers; ++l) {
        AdapterParams p;
        p.w1 = uniform_matrix(width_c, bottleneck_t, width_c);
        std::vector<double> kd(static_cast<std::size_t>(bottleneck_t) * kernel_k);
        for (int c = 0; c < bottleneck_t; ++c)
            for (int j = 0; j < kernel_k; ++j)
                kd[static_cast<std::size_t>(c) * kernel_k + j] = (j == kernel_k / 2 ? 1.0 : 0.0) + 0.01 * rng.symmetric(1.0);
        p.kernels = tc::Tensor::from(bottleneck_t, kernel_k, std::move(kd), /*requires_grad=*/true);
        if (l > 0) p.wz = uniform_matrix(bottleneck_t, bottleneck_t, bottleneck_t);
        p.w2 = tc::Tensor::zeros(bottleneck_t, width_c, /*requires_grad=*/true);
        stack.layers.push_back(std::move(p));
    }
    return stack;
}

/// Every intermediate of one adapter pass, exposed for testing.
struct AdapterOut {
    tc::Tensor h;        // bottleneck projection
    tc::Tensor m_prime;  // activated local descriptor
    tc::Tensor m;        // fused descriptor
    tc::Tensor z;        // descriptor propagated to the next adapter (== m)
    tc::Tensor y;        // re-projected residual update
    tc::Tensor x_out;    // blended stream
};

/// One adapter pass:
///   H  = X W1
///   M' = phi(H + dwconv(H))
///   M  = M' + Z_prev Wz          (M' at the first layer)
///   Z  = M
///   Y  = phi(M W2)
///   X_out = (1 - alpha) X + alpha Y, short-circuited to X when alpha == 0
///   so the identity is bit-exact.
inline AdapterOut adapter_forward(const tc::Tensor& x, const tc::Tensor& z_prev, const AdapterParams& params,
                                  double alpha, double slope = 0.01) {
    if (z_prev.defined() != params.wz.defined())
        raise(ErrorCode::ShapeMismatch, "fusion input and Wz must be both present or both absent");
    AdapterOut out;
    out.h = tc::matmul(x, params.w1);
    out.m_prime = tc::leaky_relu(tc::add(out.h, tc::depthwise_conv1d(out.h, params.kernels)), slope);
    out.m = z_prev.defined() ? tc::add(out.m_prime, tc::matmul(z_prev, params.wz)) : out.m_prime;
    out.z = out.m;
    out.y = tc::leaky_relu(tc::matmul(out.m, params.w2), slope);
    out.x_out = alpha == 0.0 ? x : tc::add(tc::scale(x, 1.0 - alpha), tc::scale(out.y, alpha));
    return out;
}

/// Builds the constant T x 2 prototype tensor [e_nor, e_abn]. Columns must
/// be unit norm.
inline tc::Tensor prototype_tensor(const std::vector<double>& e_nor, const std::vector<double>& e_abn) {
    if (e_nor.size() != e_abn.size() || e_nor.empty()) raise(ErrorCode::ShapeMismatch, "prototype widths differ");
    double n0 = 0.0, n1 = 0.0;
    for (double v : e_nor) n0 += v * v;
    for (double v : e_abn) n1 += v * v;
    if (std::fabs(std::sqrt(n0) - 1.0) > 1e-3 || std::fabs(std::sqrt(n1) - 1.0) > 1e-3)
        raise(ErrorCode::InvalidArgument, "prototype columns must be unit norm");
    const int t = static_cast<int>(e_nor.size());
    std::vector<double> data(static_cast<std::size_t>(t) * 2);
    for (int i = 0; i < t; ++i) {
        data[static_cast<std::size_t>(i) * 2] = e_nor[static_cast<std::size_t>(i)];
        data[static_cast<std::size_t>(i) * 2 + 1] = e_abn[static_cast<std::size_t>(i)];
    }
    return tc::Tensor::from(t, 2, std::move(data));
}

/// Token-prototype matching: rows of M are l2-normalized, compared against
/// both prototypes at temperature tau, and softmaxed over the 2-class axis.
inline tc::Tensor match_prototypes(const tc::Tensor& m, const tc::Tensor& prototypes, double tau) {
    if (prototypes.cols() != 2 || prototypes.rows() != m.cols())
        raise(ErrorCode::ShapeMismatch, "prototype tensor must be T x 2 with T = cols(M)");
    if (tau <= 0.0) raise(ErrorCode::InvalidArgument, "temperature must be positive");
    tc::Tensor logits = tc::scale(tc::matmul(tc::l2_normalize_rows(m), prototypes), 1.0 / tau);
    return tc::softmax_rows(logits);
}

/// Pools the abnormal channel over the patch rows (class token excluded).
inline tc::Tensor pool_abnormal(const tc::Tensor& assignments, PoolingMode mode) {
    if (assignments.cols() != 2) raise(ErrorCode::ShapeMismatch, "assignments must have 2 columns");
    if (assignments.rows() < 2) raise(ErrorCode::ShapeMismatch, "need the class token plus at least one patch");
    tc::Tensor patches = tc::slice_rows(assignments, 1, assignments.rows());
    tc::Tensor abnormal = tc::slice_cols(patches, 1, 2);
    switch (mode) {
        case PoolingMode::Mean: return tc::mean_all(abnormal);
        case PoolingMode::Max: return tc::max_all(abnormal);
    }
    raise(ErrorCode::UnknownMode, "unhandled pooling mode");
}

/// Mean binary cross-entropy over the per-layer abnormality probabilities.
inline tc::Tensor detection_loss(const std::vector<tc::Tensor>& p_per_layer, int label) {
    if (p_per_layer.empty()) raise(ErrorCode::EmptyLayerList, "no layer probabilities");
    tc::Tensor acc;
    for (const auto& p : p_per_layer) {
        tc::Tensor term = tc::bce(p, label);
        acc = acc.defined() ? tc::add(acc, term) : term;
    }
    return tc::scale(acc, 1.0 / static_cast<double>(p_per_layer.size()));
}

/// Image-level anomaly score from per-layer probabilities (mean by default).
inline double image_score(const std::vector<double>& p_per_layer, PoolingMode aggregation = PoolingMode::Mean) {
    if (p_per_layer.empty()) raise(ErrorCode::EmptyLayerList, "no layer probabilities");
    if (aggregation == PoolingMode::Max) {
        double best = p_per_layer[0];
        for (double p : p_per_layer) best = std::max(best, p);
        return best;
    }
    double sum = 0.0;
    for (double p : p_per_layer) sum += p;
    return sum / static_cast<double>(p_per_layer.size());
}

}  // namespace clfa
