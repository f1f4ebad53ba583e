#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clfa/adapter.hpp"
#include "clfa/container.hpp"
#include "clfa/error.hpp"
#include "clfa/render.hpp"
#include "clfa/tensor.hpp"
#include "clfa/util.hpp"

// Frozen ViT-style visual encoder. Weights are drawn once from a seeded
// generator and never trained; adapters hook in after selected blocks and
// gradients flow through the frozen math into earlier adapters.

namespace clfa {

struct BackboneConfig {
    std::uint64_t seed = 42;
    int depth = 4;
    int width = 64;       // C
    int patch_size = 30;
    int image_size = 240;
    int heads = 4;
    int mlp_ratio = 4;
    std::vector<int> tapped_layers = {1, 2, 3, 4};  // 1-based block indices, ascending

    int patches_per_side() const { return image_size / patch_size; }
    int patch_tokens() const { return patches_per_side() * patches_per_side(); }
    int token_count() const { return 1 + patch_tokens(); }  // cls + patches

    void validate() const {
        if (depth < 1 || width < 1 || heads < 1 || mlp_ratio < 1)
            raise(ErrorCode::ConfigMismatch, "backbone extents must be positive");
        if (image_size % patch_size != 0)
            raise(ErrorCode::IndivisibleSize, "image size " + std::to_string(image_size) +
                                                  " not divisible by patch size " + std::to_string(patch_size));
        if (width % heads != 0) raise(ErrorCode::ConfigMismatch, "width must divide evenly into heads");
        if (tapped_layers.empty()) raise(ErrorCode::ConfigMismatch, "at least one tapped layer required");
        for (std::size_t i = 0; i < tapped_layers.size(); ++i) {
            if (tapped_layers[i] < 1 || tapped_layers[i] > depth)
                raise(ErrorCode::ConfigMismatch, "tapped layer out of range: " + std::to_string(tapped_layers[i]));
            if (i > 0 && tapped_layers[i] <= tapped_layers[i - 1])
                raise(ErrorCode::ConfigMismatch, "tapped layers must be strictly ascending");
        }
    }

    /// CPU-verifiable default: 4 pre-norm blocks at width 64, patch 30 on a
    /// 240 px canvas (65 tokens), tapped after every block.
    static BackboneConfig desk(std::uint64_t seed = 42) {
        BackboneConfig c;
        c.seed = seed;
        return c;
    }
};

/// Patch extraction: row-major patch order, channels interleaved per pixel.
/// Returns an S x (3 * patch^2) matrix; the class token joins after
/// embedding.
inline tc::Tensor patchify(const RenderedImage& image, int patch_size) {
    if (image.size % patch_size != 0)
        raise(ErrorCode::IndivisibleSize, "image size " + std::to_string(image.size) + " not divisible by patch size " +
                                              std::to_string(patch_size));
    const int side = image.size / patch_size;
    const int dim = 3 * patch_size * patch_size;
    std::vector<double> data(static_cast<std::size_t>(side) * side * dim);
    std::size_t row = 0;
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px, ++row) {
            double* dst = data.data() + row * dim;
            std::size_t k = 0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int c = 0; c < 3; ++c)
                        dst[k++] = image.at(py * patch_size + y, px * patch_size + x, c);
        }
    return tc::Tensor::from(side * side, dim, std::move(data));
}

/// One tapped layer's outputs: the raw block output X and, when adapters
/// are attached, the fused descriptor M.
struct TapRecord {
    int layer = 0;
    tc::Tensor x;
    tc::Tensor m;  // undefined when no adapters ran
};

class Backbone {
public:
    struct BlockParams {
        tc::Tensor ln1_g, ln1_b;
        tc::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        tc::Tensor ln2_g, ln2_b;
        tc::Tensor w_fc1, b_fc1, w_fc2, b_fc2;
    };

    explicit Backbone(const BackboneConfig& config) : cfg_(config) { cfg_.validate(); }

    const BackboneConfig& config() const { return cfg_; }

    /// Embeds an image into the N x C token tensor (cls + patches, positional
    /// terms added). Pure value computation: nothing upstream is trainable.
    tc::Tensor embed_tokens(const RenderedImage& image) const {
        if (image.size != cfg_.image_size)
            raise(ErrorCode::ConfigMismatch, "image size " + std::to_string(image.size) + " != configured " +
                                                 std::to_string(cfg_.image_size));
        tc::Tensor patches = patchify(image, cfg_.patch_size);
        const int s = patches.rows(), dim = patches.cols(), c = cfg_.width;
        const int n = s + 1;
        std::vector<double> tokens(static_cast<std::size_t>(n) * c, 0.0);
        auto pe = patch_embed_.values();
        auto pb = patch_bias_.values();
        auto pv = patches.values();
        for (int i = 0; i < s; ++i) {
            double* dst = tokens.data() + static_cast<std::size_t>(i + 1) * c;
            for (int j = 0; j < c; ++j) dst[j] = pb[static_cast<std::size_t>(j)];
            for (int k = 0; k < dim; ++k) {
                const double a = pv[static_cast<std::size_t>(i) * dim + k];
                if (a == 0.0) continue;
                const double* wrow = pe.data() + static_cast<std::size_t>(k) * c;
                for (int j = 0; j < c; ++j) dst[j] += a * wrow[j];
            }
        }
        auto cls = cls_token_.values();
        for (int j = 0; j < c; ++j) tokens[static_cast<std::size_t>(j)] = cls[static_cast<std::size_t>(j)];
        auto pos = pos_embed_.values();
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += pos[i];
        return tc::Tensor::from(n, c, std::move(tokens));
    }

    /// Runs the full stack with optional adapter hooks: after each tapped
    /// block the stream is replaced by the adapter's residual-blended output
    /// and the fused descriptor is recorded. Without adapters the records
    /// carry the raw block outputs.
    std::vector<TapRecord> forward_with_hooks(const RenderedImage& image, const AdapterStack* stack = nullptr) const {
        return resume_from_tap(0, prefix_to_first_tap(image), tc::Tensor(), stack);
    }

    /// Embedding plus all blocks up to and including the first tapped layer.
    /// The result is the first adapter's input and is reusable across
    /// training steps and checkpoints (everything before it is frozen).
    tc::Tensor prefix_to_first_tap(const RenderedImage& image) const {
        tc::Tensor x = embed_tokens(image);
        for (int b = 1; b <= cfg_.tapped_layers.front(); ++b) x = run_block(x, b - 1);
        return x;
    }

    /// Resumes the hooked forward at tap index `tap_index` given that tap's
    /// block output and the previous adapter's fused descriptor. Returns
    /// records for taps tap_index..end.
    std::vector<TapRecord> resume_from_tap(std::size_t tap_index, tc::Tensor x_at_tap, tc::Tensor z_prev,
                                           const AdapterStack* stack) const {
        const auto& taps = cfg_.tapped_layers;
        if (tap_index >= taps.size()) raise(ErrorCode::ConfigMismatch, "tap index out of range");
        if (stack && stack->layers.size() != taps.size())
            raise(ErrorCode::ConfigMismatch, "adapter stack size does not match tapped layers");

        std::vector<TapRecord> records;
        records.reserve(taps.size() - tap_index);
        tc::Tensor x = std::move(x_at_tap);
        tc::Tensor z = std::move(z_prev);
        for (std::size_t i = tap_index; i < taps.size(); ++i) {
            if (i > tap_index)
                for (int b = taps[i - 1] + 1; b <= taps[i]; ++b) x = run_block(x, b - 1);
            TapRecord rec;
            rec.layer = taps[i];
            rec.x = x;
            if (stack) {
                AdapterOut out = adapter_forward(x, i == 0 ? tc::Tensor() : z, stack->layers[i], stack->alpha,
                                                 stack->slope);
                rec.m = out.m;
                x = out.x_out;
                z = out.z;
            }
            records.push_back(std::move(rec));
        }
        return records;
    }

    /// FNV hash over every parameter byte in a fixed order; the freeze
    /// contract is "this value never changes".
    std::uint64_t parameter_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto feed = [&h](const tc::Tensor& t) {
            auto v = t.values();
            h = fnv1a64(v.data(), v.size() * sizeof(double), h);
        };
        feed(patch_embed_);
        feed(patch_bias_);
        feed(cls_token_);
        feed(pos_embed_);
        for (const auto& b : blocks_) {
            feed(b.ln1_g);
            feed(b.ln1_b);
            feed(b.wq);
            feed(b.bq);
            feed(b.wk);
            feed(b.bk);
            feed(b.wv);
            feed(b.bv);
            feed(b.wo);
            feed(b.bo);
            feed(b.ln2_g);
            feed(b.ln2_b);
            feed(b.w_fc1);
            feed(b.b_fc1);
            feed(b.w_fc2);
            feed(b.b_fc2);
        }
        return h;
    }

    /// Weight export in the shared container format (same scheme as adapter
    /// checkpoints), so externally produced weights can be loaded later
    /// without an API change.
    Container to_container() const {
        Container c;
        c.meta = {{"type", "clfa-backbone"},
                  {"seed", cfg_.seed},
                  {"depth", cfg_.depth},
                  {"width", cfg_.width},
                  {"patch_size", cfg_.patch_size},
                  {"image_size", cfg_.image_size},
                  {"heads", cfg_.heads},
                  {"mlp_ratio", cfg_.mlp_ratio},
                  {"tapped_layers", cfg_.tapped_layers}};
        auto put = [&c](const std::string& name, const tc::Tensor& t) {
            auto v = t.values();
            c.tensors.push_back({name, {t.rows(), t.cols()}, std::vector<double>(v.begin(), v.end())});
        };
        put("patch_embed.w", patch_embed_);
        put("patch_embed.b", patch_bias_);
        put("cls_token", cls_token_);
        put("pos_embed", pos_embed_);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            std::string p = "blocks." + std::to_string(b) + ".";
            put(p + "ln1.g", blocks_[b].ln1_g);
            put(p + "ln1.b", blocks_[b].ln1_b);
            put(p + "attn.wq", blocks_[b].wq);
            put(p + "attn.bq", blocks_[b].bq);
            put(p + "attn.wk", blocks_[b].wk);
            put(p + "attn.bk", blocks_[b].bk);
            put(p + "attn.wv", blocks_[b].wv);
            put(p + "attn.bv", blocks_[b].bv);
            put(p + "attn.wo", blocks_[b].wo);
            put(p + "attn.bo", blocks_[b].bo);
            put(p + "ln2.g", blocks_[b].ln2_g);
            put(p + "ln2.b", blocks_[b].ln2_b);
            put(p + "mlp.w1", blocks_[b].w_fc1);
            put(p + "mlp.b1", blocks_[b].b_fc1);
            put(p + "mlp.w2", blocks_[b].w_fc2);
            put(p + "mlp.b2", blocks_[b].b_fc2);
        }
        return c;
    }

    friend Backbone init_frozen(const BackboneConfig& config);
    friend Backbone load_backbone(const Container& container);

private:
    static tc::Tensor frozen(int rows, int cols, std::vector<double> data) {
        return tc::Tensor::from(rows, cols, std::move(data), /*requires_grad=*/false);
    }

    /// Pre-norm transformer block: x += MHA(LN(x)); x += MLP(LN(x)).
    tc::Tensor run_block(const tc::Tensor& x, int block_index) const {
        const auto& p = blocks_[static_cast<std::size_t>(block_index)];
        const int c = cfg_.width, heads = cfg_.heads, hd = c / heads;
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

        tc::Tensor h = tc::layer_norm_rows(x, p.ln1_g, p.ln1_b);
        tc::Tensor q = tc::add_rowvec(tc::matmul(h, p.wq), p.bq);
        tc::Tensor k = tc::add_rowvec(tc::matmul(h, p.wk), p.bk);
        tc::Tensor v = tc::add_rowvec(tc::matmul(h, p.wv), p.bv);
        std::vector<tc::Tensor> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int hh = 0; hh < heads; ++hh) {
            tc::Tensor qh = tc::slice_cols(q, hh * hd, (hh + 1) * hd);
            tc::Tensor kh = tc::slice_cols(k, hh * hd, (hh + 1) * hd);
            tc::Tensor vh = tc::slice_cols(v, hh * hd, (hh + 1) * hd);
            tc::Tensor scores = tc::scale(tc::matmul(qh, tc::transpose(kh)), att_scale);
            head_outs.push_back(tc::matmul(tc::softmax_rows(scores), vh));
        }
        tc::Tensor attn = tc::add_rowvec(tc::matmul(tc::concat_cols(head_outs), p.wo), p.bo);
        tc::Tensor x1 = tc::add(x, attn);

        tc::Tensor h2 = tc::layer_norm_rows(x1, p.ln2_g, p.ln2_b);
        tc::Tensor m = tc::leaky_relu(tc::add_rowvec(tc::matmul(h2, p.w_fc1), p.b_fc1), 0.01);
        tc::Tensor mlp = tc::add_rowvec(tc::matmul(m, p.w_fc2), p.b_fc2);
        return tc::add(x1, mlp);
    }

    BackboneConfig cfg_;
    tc::Tensor patch_embed_;  // (3 p^2) x C
    tc::Tensor patch_bias_;   // 1 x C
    tc::Tensor cls_token_;    // 1 x C, seeded frozen vector
    tc::Tensor pos_embed_;    // N x C
    std::vector<BlockParams> blocks_;
};

/// Builds a backbone with all weights drawn from a seeded generator at
/// 1/sqrt(fan_in) scale and marked non-trainable. Norm affines start at
/// identity.
inline Backbone init_frozen(const BackboneConfig& config) {
    Backbone bb(config);
    const auto& cfg = bb.config();
    Rng rng(mix64(cfg.seed, 0xBACBONEull));
    auto uniform_matrix = [&rng](int rows, int cols, int fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> d(static_cast<std::size_t>(rows) * cols);
        for (auto& v : d) v = rng.symmetric(bound);
        return Backbone::frozen(rows, cols, std::move(d));
    };
    const int c = cfg.width;
    const int dim = 3 * cfg.patch_size * cfg.patch_size;
    const int n = cfg.token_count();
    bb.patch_embed_ = uniform_matrix(dim, c, dim);
    bb.patch_bias_ = uniform_matrix(1, c, dim);
    bb.cls_token_ = uniform_matrix(1, c, c);
    bb.pos_embed_ = uniform_matrix(n, c, c);
    for (int b = 0; b < cfg.depth; ++b) {
        Backbone::BlockParams p;
        p.ln1_g = Backbone::frozen(1, c, std::vector<double>(static_cast<std::size_t>(c), 1.0));
        p.ln1_b = Backbone::frozen(1, c, std::vector<double>(static_cast<std::size_t>(c), 0.0));
        p.wq = uniform_matrix(c, c, c);
        p.bq = uniform_matrix(1, c, c);
        p.wk = uniform_matrix(c, c, c);
        p.bk = uniform_matrix(1, c, c);
        p.wv = uniform_matrix(c, c, c);
        p.bv = uniform_matrix(1, c, c);
        p.wo = uniform_matrix(c, c, c);
        p.bo = uniform_matrix(1, c, c);
        p.ln2_g = Backbone::frozen(1, c, std::vector<double>(static_cast<std::size_t>(c), 1.0));
        p.ln2_b = Backbone::frozen(1, c, std::vector<double>(static_cast<std::size_t>(c), 0.0));
        p.w_fc1 = uniform_matrix(c, c * cfg.mlp_ratio, c);
        p.b_fc1 = uniform_matrix(1, c * cfg.mlp_ratio, c);
        p.w_fc2 = uniform_matrix(c * cfg.mlp_ratio, c, c * cfg.mlp_ratio);
        p.b_fc2 = uniform_matrix(1, c, c * cfg.mlp_ratio);
        bb.blocks_.push_back(std::move(p));
    }
    return bb;
}

/// Restores a backbone from an exported weight container.
inline Backbone load_backbone(const Container& container) {
    if (!container.meta.contains("type") || container.meta["type"] != "clfa-backbone")
        raise(ErrorCode::ManifestMismatch, "container is not a backbone dump");
    BackboneConfig cfg;
    cfg.seed = container.meta.at("seed").get<std::uint64_t>();
    cfg.depth = container.meta.at("depth").get<int>();
    cfg.width = container.meta.at("width").get<int>();
    cfg.patch_size = container.meta.at("patch_size").get<int>();
    cfg.image_size = container.meta.at("image_size").get<int>();
    cfg.heads = container.meta.at("heads").get<int>();
    cfg.mlp_ratio = container.meta.at("mlp_ratio").get<int>();
    cfg.tapped_layers = container.meta.at("tapped_layers").get<std::vector<int>>();

    Backbone bb(cfg);
    auto get = [&container](const std::string& name, int rows, int cols) {
        const TensorRecord& t = container.find(name);
        if (t.shape.size() != 2 || t.shape[0] != rows || t.shape[1] != cols)
            raise(ErrorCode::ManifestMismatch, "tensor '" + name + "' has unexpected shape");
        return Backbone::frozen(rows, cols, t.data);
    };
    const int c = cfg.width;
    const int dim = 3 * cfg.patch_size * cfg.patch_size;
    bb.patch_embed_ = get("patch_embed.w", dim, c);
    bb.patch_bias_ = get("patch_embed.b", 1, c);
    bb.cls_token_ = get("cls_token", 1, c);
    bb.pos_embed_ = get("pos_embed", cfg.token_count(), c);
    for (int b = 0; b < cfg.depth; ++b) {
        std::string p = "blocks." + std::to_string(b) + ".";
        Backbone::BlockParams blk;
        blk.ln1_g = get(p + "ln1.g", 1, c);
        blk.ln1_b = get(p + "ln1.b", 1, c);
        blk.wq = get(p + "attn.wq", c, c);
        blk.bq = get(p + "attn.bq", 1, c);
        blk.wk = get(p + "attn.wk", c, c);
        blk.bk = get(p + "attn.bk", 1, c);
        blk.wv = get(p + "attn.wv", c, c);
        blk.bv = get(p + "attn.bv", 1, c);
        blk.wo = get(p + "attn.wo", c, c);
        blk.bo = get(p + "attn.bo", 1, c);
        blk.ln2_g = get(p + "ln2.g", 1, c);
        blk.ln2_b = get(p + "ln2.b", 1, c);
        blk.w_fc1 = get(p + "mlp.w1", c, c * cfg.mlp_ratio);
        blk.b_fc1 = get(p + "mlp.b1", 1, c * cfg.mlp_ratio);
        blk.w_fc2 = get(p + "mlp.w2", c * cfg.mlp_ratio, c);
        blk.b_fc2 = get(p + "mlp.b2", 1, c);
        bb.blocks_.push_back(std::move(blk));
    }
    return bb;
}

}  // namespace clfa
