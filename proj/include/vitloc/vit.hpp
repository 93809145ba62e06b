#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vitloc/common.hpp"
#include "vitloc/dam.hpp"
#include "vitloc/tape.hpp"
#include "vitloc/tensor.hpp"

namespace vitloc {

enum class Pooling { mean, class_token };
enum class Merge { residual_add, concat_project };

inline constexpr double kLayerNormEps = 1e-5;

struct VitConfig {
    std::size_t image_size = 206;                      // R
    std::size_t patch_size = 20;                       // P
    std::size_t embed_dim = 64;                        // D
    std::size_t num_heads = 5;                         // h
    std::size_t head_dim = 16;                         // d_k
    std::size_t num_blocks = 1;                        // L
    std::vector<std::size_t> encoder_mlp_dims = {128, 64};
    std::vector<std::size_t> head_dims = {128, 0};     // last entry == num_classes
    std::size_t num_classes = 0;
    Pooling pooling = Pooling::mean;
    Merge merge = Merge::residual_add;

    std::size_t patches_per_side() const { return image_size / patch_size; }
    /// Boundary-discard tiling: N = floor(R/P)^2, which equals (R*R)/(P*P)
    /// for divisible sizes.
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
    std::size_t num_tokens() const { return num_patches() + (pooling == Pooling::class_token ? 1 : 0); }

    void validate() const {
        if (patch_size == 0 || image_size == 0) throw ConfigError("vit extents must be positive");
        if (patch_size > image_size) throw ConfigError("vit patch_size exceeds image_size");
        if (embed_dim == 0 || num_heads == 0 || head_dim == 0 || num_blocks == 0) {
            throw ConfigError("vit extents must be positive");
        }
        if (encoder_mlp_dims.empty()) throw ConfigError("vit encoder_mlp_dims must be non-empty");
        for (std::size_t d : encoder_mlp_dims)
            if (d == 0) throw ConfigError("vit encoder_mlp_dims entries must be positive");
        if (merge == Merge::residual_add && encoder_mlp_dims.back() != embed_dim) {
            throw ConfigError("residual_add merge requires the last encoder MLP dim (" +
                              std::to_string(encoder_mlp_dims.back()) + ") to equal embed_dim (" +
                              std::to_string(embed_dim) + ")");
        }
        if (num_classes == 0) throw ConfigError("vit num_classes must be positive");
        if (head_dims.empty() || head_dims.back() != num_classes) {
            throw ConfigError("vit head_dims must end with num_classes");
        }
        for (std::size_t d : head_dims)
            if (d == 0) throw ConfigError("vit head_dims entries must be positive");
    }
};

/// One weight set; E is Tensor<T> for values, a tape id for graph building.
template <typename E>
struct VitParams {
    struct Block {
        E ln1_gamma, ln1_beta;
        std::vector<E> wq, wk, wv;  // per head, D x d_k
        E wo;                       // h*d_k x D
        E ln2_gamma, ln2_beta;
        std::vector<E> mlp_w, mlp_b;
        E merge_w, merge_b;         // concat_project only
    };
    E patch_proj;       // 3P^2 x D
    E patch_bias;       // D
    E pos_embedding;    // N x D
    E class_token;      // 1 x D, class_token pooling only
    std::vector<Block> blocks;
    std::vector<E> head_w, head_b;
};

template <typename T>
using VitWeights = VitParams<Tensor<T>>;
using VitParamIds = VitParams<std::size_t>;

/// Canonical walk over every trainable parameter: fixed order shared by
/// checkpointing, counting, init, and the optimizer.
template <typename E, typename Fn>
void for_each_param(const VitConfig& cfg, VitParams<E>& p, Fn&& fn) {
    fn("patch_proj", p.patch_proj);
    fn("patch_bias", p.patch_bias);
    fn("pos_embedding", p.pos_embedding);
    if (cfg.pooling == Pooling::class_token) fn("class_token", p.class_token);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        auto& blk = p.blocks[b];
        const std::string pre = "block" + std::to_string(b) + ".";
        fn(pre + "ln1_gamma", blk.ln1_gamma);
        fn(pre + "ln1_beta", blk.ln1_beta);
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            const std::string hp = pre + "head" + std::to_string(h) + ".";
            fn(hp + "wq", blk.wq[h]);
            fn(hp + "wk", blk.wk[h]);
            fn(hp + "wv", blk.wv[h]);
        }
        fn(pre + "wo", blk.wo);
        fn(pre + "ln2_gamma", blk.ln2_gamma);
        fn(pre + "ln2_beta", blk.ln2_beta);
        for (std::size_t l = 0; l < blk.mlp_w.size(); ++l) {
            fn(pre + "mlp" + std::to_string(l) + ".w", blk.mlp_w[l]);
            fn(pre + "mlp" + std::to_string(l) + ".b", blk.mlp_b[l]);
        }
        if (cfg.merge == Merge::concat_project) {
            fn(pre + "merge_w", blk.merge_w);
            fn(pre + "merge_b", blk.merge_b);
        }
    }
    for (std::size_t l = 0; l < p.head_w.size(); ++l) {
        fn("head" + std::to_string(l) + ".w", p.head_w[l]);
        fn("head" + std::to_string(l) + ".b", p.head_b[l]);
    }
}

/// Shape-correct zero weights for a config.
template <typename T>
VitWeights<T> zero_weights(const VitConfig& cfg) {
    cfg.validate();
    using Tn = Tensor<T>;
    VitWeights<T> w;
    const std::size_t d = cfg.embed_dim;
    w.patch_proj = Tn::zeros({cfg.patch_dim(), d});
    w.patch_bias = Tn::zeros({d});
    w.pos_embedding = Tn::zeros({cfg.num_patches(), d});
    if (cfg.pooling == Pooling::class_token) w.class_token = Tn::zeros({std::size_t(1), d});
    w.blocks.resize(cfg.num_blocks);
    for (auto& blk : w.blocks) {
        blk.ln1_gamma = Tn::zeros({d});
        blk.ln1_beta = Tn::zeros({d});
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            blk.wq.push_back(Tn::zeros({d, cfg.head_dim}));
            blk.wk.push_back(Tn::zeros({d, cfg.head_dim}));
            blk.wv.push_back(Tn::zeros({d, cfg.head_dim}));
        }
        blk.wo = Tn::zeros({cfg.num_heads * cfg.head_dim, d});
        blk.ln2_gamma = Tn::zeros({d});
        blk.ln2_beta = Tn::zeros({d});
        std::size_t in = d;
        for (std::size_t out : cfg.encoder_mlp_dims) {
            blk.mlp_w.push_back(Tn::zeros({in, out}));
            blk.mlp_b.push_back(Tn::zeros({out}));
            in = out;
        }
        if (cfg.merge == Merge::concat_project) {
            blk.merge_w = Tn::zeros({d + cfg.encoder_mlp_dims.back(), d});
            blk.merge_b = Tn::zeros({d});
        }
    }
    std::size_t in = d;
    for (std::size_t out : cfg.head_dims) {
        w.head_w.push_back(Tn::zeros({in, out}));
        w.head_b.push_back(Tn::zeros({out}));
        in = out;
    }
    return w;
}

/// Names and shapes in canonical order; the checkpoint manifest and
/// param_count are both derived from this.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> param_manifest(const VitConfig& cfg) {
    auto w = zero_weights<float>(cfg);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    for_each_param(cfg, w, [&](const std::string& name, const Tensor<float>& t) {
        out.emplace_back(name, t.shape());
    });
    return out;
}

/// Exact number of scalar trainable parameters implied by the config.
inline std::size_t param_count(const VitConfig& cfg) {
    std::size_t n = 0;
    for (const auto& [name, shape] : param_manifest(cfg)) {
        std::size_t e = 1;
        for (std::size_t s : shape) e *= s;
        n += e;
    }
    return n;
}

/// Seeded init: Glorot-uniform matrices, N(0, 0.02) embeddings, unit
/// LayerNorm scales, zero shifts and biases. Every parameter draws from its
/// own labeled stream, so values do not depend on visit order.
template <typename T>
VitWeights<T> init_weights(const VitConfig& cfg, std::uint64_t seed) {
    VitWeights<T> w = zero_weights<T>(cfg);
    for_each_param(cfg, w, [&](const std::string& name, Tensor<T>& t) {
        Rng rng = stream_rng(seed, "init/" + name);
        if (name.find("gamma") != std::string::npos) {
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = T(1);
        } else if (t.rank() == 1) {
            // biases and LayerNorm shifts stay zero
        } else if (name == "pos_embedding" || name == "class_token") {
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, 0.02));
        } else {
            const double lim = std::sqrt(6.0 / static_cast<double>(t.shape()[0] + t.shape()[1]));
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-lim, lim));
        }
    });
    return w;
}

// ---- patching ---------------------------------------------------------------

/// Flat indices mapping an R x R x 3 image to N patch rows of length 3P^2.
/// Tiles are row-major, partial boundary tiles discarded; within a tile the
/// layout is [row][col][channel].
inline std::shared_ptr<const std::vector<std::size_t>> patch_indices(std::size_t image_size,
                                                                     std::size_t patch_size) {
    if (patch_size > image_size) throw ShapeError("patch size exceeds image size");
    const std::size_t side = image_size / patch_size;
    auto idx = std::make_shared<std::vector<std::size_t>>();
    idx->reserve(side * side * patch_size * patch_size * 3);
    for (std::size_t ti = 0; ti < side; ++ti)
        for (std::size_t tj = 0; tj < side; ++tj)
            for (std::size_t pr = 0; pr < patch_size; ++pr)
                for (std::size_t pc = 0; pc < patch_size; ++pc)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        idx->push_back(((ti * patch_size + pr) * image_size + tj * patch_size + pc) * 3 + ch);
    return idx;
}

/// Non-overlapping P x P x 3 tiles flattened to an N x 3P^2 matrix.
template <typename T>
Tensor<T> extract_patches(const RssiImage2d<T>& img, std::size_t patch_size) {
    auto idx = patch_indices(img.size, patch_size);
    const std::size_t side = img.size / patch_size;
    Tensor<T> out({side * side, 3 * patch_size * patch_size});
    for (std::size_t i = 0; i < idx->size(); ++i) out[i] = img.values[(*idx)[i]];
    return out;
}

// ---- graph builders ----------------------------------------------------------

/// softmax(Q K^T / sqrt(d_k)) V on an existing tape.
template <typename T>
typename Tape<T>::Id attention_on_tape(Tape<T>& tape, typename Tape<T>::Id q, typename Tape<T>::Id k,
                                       typename Tape<T>::Id v) {
    const std::size_t dk = tape.value(q).cols();
    if (tape.value(k).cols() != dk) throw ShapeError("attention: Q and K key dims differ");
    if (tape.value(k).rows() != tape.value(v).rows()) throw ShapeError("attention: K and V token counts differ");
    auto scores = tape.scale(tape.matmul(q, tape.transpose(k)), static_cast<T>(1.0 / std::sqrt(double(dk))));
    return tape.matmul(tape.softmax(scores, 1), v);
}

/// Plain-value attention (builds a throwaway tape).
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    Tape<T> tape;
    auto out = attention_on_tape(tape, tape.leaf(q, false), tape.leaf(k, false), tape.leaf(v, false));
    return tape.value(out);
}

struct MsaIds {
    std::vector<std::size_t> wq, wk, wv;
    std::size_t wo = 0;
};

/// Self-attention: per-head Q/K/V projections of x, attention per head,
/// concat, output projection.
template <typename T>
typename Tape<T>::Id multi_head_on_tape(Tape<T>& tape, typename Tape<T>::Id x, const MsaIds& w) {
    std::vector<typename Tape<T>::Id> heads;
    heads.reserve(w.wq.size());
    for (std::size_t h = 0; h < w.wq.size(); ++h) {
        auto q = tape.matmul(x, w.wq[h]);
        auto k = tape.matmul(x, w.wk[h]);
        auto v = tape.matmul(x, w.wv[h]);
        heads.push_back(attention_on_tape(tape, q, k, v));
    }
    return tape.matmul(tape.concat_cols(heads), w.wo);
}

template <typename T>
Tensor<T> multi_head(const Tensor<T>& x, const std::vector<Tensor<T>>& wq, const std::vector<Tensor<T>>& wk,
                     const std::vector<Tensor<T>>& wv, const Tensor<T>& wo) {
    Tape<T> tape;
    MsaIds ids;
    for (std::size_t h = 0; h < wq.size(); ++h) {
        ids.wq.push_back(tape.leaf(wq[h], false));
        ids.wk.push_back(tape.leaf(wk[h], false));
        ids.wv.push_back(tape.leaf(wv[h], false));
    }
    ids.wo = tape.leaf(wo, false);
    return tape.value(multi_head_on_tape(tape, tape.leaf(x, false), ids));
}

/// Registers every trainable parameter of `w` as tape leaves in canonical
/// order. `grad_leaves` selects trainable vs frozen registration.
template <typename T>
VitParamIds register_params(Tape<T>& tape, const VitConfig& cfg, const VitWeights<T>& w, bool grad_leaves) {
    VitParamIds ids;
    ids.blocks.resize(cfg.num_blocks);
    for (auto& blk : ids.blocks) {
        blk.wq.resize(cfg.num_heads);
        blk.wk.resize(cfg.num_heads);
        blk.wv.resize(cfg.num_heads);
    }
    ids.head_w.resize(cfg.head_dims.size());
    ids.head_b.resize(cfg.head_dims.size());
    for (auto& blk : ids.blocks) {
        blk.mlp_w.resize(cfg.encoder_mlp_dims.size());
        blk.mlp_b.resize(cfg.encoder_mlp_dims.size());
    }
    auto& wmut = const_cast<VitWeights<T>&>(w);  // walk only reads
    std::vector<std::pair<std::string, const Tensor<T>*>> flat;
    for_each_param(cfg, wmut, [&](const std::string& name, Tensor<T>& t) { flat.emplace_back(name, &t); });
    std::vector<std::pair<std::string, std::size_t*>> slots;
    for_each_param(cfg, ids, [&](const std::string& name, std::size_t& s) { slots.emplace_back(name, &s); });
    for (std::size_t i = 0; i < flat.size(); ++i) {
        *slots[i].second = tape.leaf(*flat[i].second, grad_leaves);
    }
    return ids;
}

/// Encoder block: LN -> MSA -> merge, LN -> MLP -> merge. residual_add is
/// y = x + MSA(LN(x)); z = y + MLP(LN(y)). concat_project instead projects
/// [MSA_out, MLP(LN(MSA_out))] back to D.
template <typename T>
typename Tape<T>::Id encoder_block_on_tape(Tape<T>& tape, typename Tape<T>::Id x, const VitConfig& cfg,
                                           const typename VitParamIds::Block& blk) {
    const T eps = static_cast<T>(kLayerNormEps);
    MsaIds msa{blk.wq, blk.wk, blk.wv, blk.wo};
    auto mlp = [&](typename Tape<T>::Id in) {
        auto cur = in;
        for (std::size_t l = 0; l < blk.mlp_w.size(); ++l) {
            cur = tape.dense(cur, blk.mlp_w[l], blk.mlp_b[l]);
            if (l + 1 < blk.mlp_w.size()) cur = tape.gelu(cur);
        }
        return cur;
    };
    if (cfg.merge == Merge::residual_add) {
        auto y = tape.add(x, multi_head_on_tape(tape, tape.layernorm(x, blk.ln1_gamma, blk.ln1_beta, eps), msa));
        return tape.add(y, mlp(tape.layernorm(y, blk.ln2_gamma, blk.ln2_beta, eps)));
    }
    auto a = multi_head_on_tape(tape, tape.layernorm(x, blk.ln1_gamma, blk.ln1_beta, eps), msa);
    auto m = mlp(tape.layernorm(a, blk.ln2_gamma, blk.ln2_beta, eps));
    return tape.dense(tape.concat_cols({a, m}), blk.merge_w, blk.merge_b);
}

/// Patch tokens + positional embedding (class token prepended if configured).
template <typename T>
typename Tape<T>::Id embed_on_tape(Tape<T>& tape, typename Tape<T>::Id patches, const VitConfig& cfg,
                                   const VitParamIds& ids) {
    auto tok = tape.add(tape.dense(patches, ids.patch_proj, ids.patch_bias), ids.pos_embedding);
    if (cfg.pooling == Pooling::class_token) tok = tape.concat_rows(ids.class_token, tok);
    return tok;
}

/// Full forward graph from a flattened image leaf to the 1 x num_classes
/// logits node.
template <typename T>
typename Tape<T>::Id forward_on_tape(Tape<T>& tape, typename Tape<T>::Id image_flat, const VitConfig& cfg,
                                     const VitParamIds& ids,
                                     const std::shared_ptr<const std::vector<std::size_t>>& patch_idx) {
    auto patches = tape.gather(image_flat, patch_idx, {cfg.num_patches(), cfg.patch_dim()});
    auto tok = embed_on_tape(tape, patches, cfg, ids);
    for (const auto& blk : ids.blocks) tok = encoder_block_on_tape(tape, tok, cfg, blk);
    auto pooled = cfg.pooling == Pooling::mean ? tape.mean_rows(tok) : tape.select_row(tok, 0);
    auto cur = pooled;
    for (std::size_t l = 0; l < ids.head_w.size(); ++l) {
        cur = tape.dense(cur, ids.head_w[l], ids.head_b[l]);
        if (l + 1 < ids.head_w.size()) cur = tape.gelu(cur);
    }
    return cur;
}

// ---- bundled model -----------------------------------------------------------

/// Class index -> RP identity and coordinates.
struct ClassLabel {
    int building_id = 0;
    int rp_id = 0;
    double x_m = 0.0;
    double y_m = 0.0;
};

/// Everything online inference needs: architecture, weights, the class
/// table, and the AP index the model was trained with.
template <typename T>
struct VitModel {
    VitConfig config;
    VitWeights<T> weights;
    std::vector<ClassLabel> classes;
    std::vector<std::string> ap_ids;

    std::shared_ptr<const std::vector<std::size_t>> patch_idx;  // lazy cache

    const std::vector<std::size_t>& ensure_patch_idx() {
        if (!patch_idx) patch_idx = patch_indices(config.image_size, config.patch_size);
        return *patch_idx;
    }
};

template <typename T>
Tensor<T> forward(VitModel<T>& model, const RssiImage2d<T>& img) {
    if (img.size != model.config.image_size) {
        throw ShapeError("forward: image size " + std::to_string(img.size) + " does not match config " +
                         std::to_string(model.config.image_size));
    }
    model.ensure_patch_idx();
    Tape<T> tape;
    auto image = tape.leaf(Tensor<T>({img.values.size()}, img.values), false);
    auto ids = register_params(tape, model.config, model.weights, false);
    auto logits = forward_on_tape(tape, image, model.config, ids, model.patch_idx);
    return tape.value(logits);
}

struct Prediction {
    std::size_t class_index = 0;
    ClassLabel label;
    std::vector<double> logits;
};

/// Online-phase inference: reduced fingerprint -> deterministic eval-mode
/// DAM image -> forward -> argmax class mapped back to RP identity.
template <typename T>
Prediction predict(VitModel<T>& model, const ReducedFingerprint& fingerprint, const DamConfig& dam) {
    if (model.classes.size() != model.config.num_classes) {
        throw ValueError("model class table does not match num_classes");
    }
    DamConfig cfg = dam;
    cfg.image_size = model.config.image_size;
    ApIndex index(std::vector<std::string>(model.ap_ids));
    const RssiImage1d img1d = to_1d_image(fingerprint, index);
    const RssiImage2d<T> img = dam_apply_eval<T>(img1d, cfg);
    const Tensor<T> logits = forward(model, img);
    Prediction out;
    out.logits.assign(logits.vec().begin(), logits.vec().end());
    for (std::size_t i = 1; i < out.logits.size(); ++i) {
        if (out.logits[i] > out.logits[out.class_index]) out.class_index = i;
    }
    out.label = model.classes[out.class_index];
    return out;
}

}  // namespace vitloc
