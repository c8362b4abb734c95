#pragma once

#include "mvp/common.hpp"
#include "mvp/rng.hpp"
#include "mvp/tape.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mvp {

struct ViTConfig {
  int image_height = 224;
  int image_width = 224;
  int patch_height = 16;
  int patch_width = 16;
  int embed_dim = 192;
  int num_layers = 12;
  int num_heads = 3;
  int mlp_num = 4;  // mlp hidden = embed_dim * mlp_num / mlp_den
  int mlp_den = 1;

  int patches_per_row() const { return image_width / patch_width; }
  int patches_per_col() const { return image_height / patch_height; }
  int num_patches() const { return patches_per_row() * patches_per_col(); }
  int patch_dim() const { return 3 * patch_height * patch_width; }
  int mlp_hidden() const { return embed_dim * mlp_num / mlp_den; }
  int head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    if (image_height <= 0 || image_width <= 0 || patch_height <= 0 || patch_width <= 0 ||
        embed_dim <= 0 || num_layers < 0 || num_heads <= 0 || mlp_num <= 0 || mlp_den <= 0)
      throw std::invalid_argument("ViTConfig: non-positive dimension");
    if (image_height % patch_height != 0 || image_width % patch_width != 0)
      throw std::invalid_argument("ViTConfig: image size not divisible by patch size");
    if (embed_dim % num_heads != 0)
      throw std::invalid_argument("ViTConfig: embed_dim not divisible by num_heads");
    if ((embed_dim * mlp_num) % mlp_den != 0)
      throw std::invalid_argument("ViTConfig: mlp ratio does not give integer hidden size");
  }
};

template <typename Scalar>
struct LayerWeights {
  MatrixX<Scalar> ln1_gain, ln1_bias;      // 1 x d
  MatrixX<Scalar> wq, wk, wv, wo;          // d x d
  MatrixX<Scalar> bq, bk, bv, bo;          // 1 x d
  MatrixX<Scalar> ln2_gain, ln2_bias;      // 1 x d
  MatrixX<Scalar> w1, w2;                  // d x hidden, hidden x d
  MatrixX<Scalar> b1, b2;                  // 1 x hidden, 1 x d
};

// Frozen after construction; forward passes may share one instance across
// threads. Mutation during training would show up in backbone_hash.
template <typename Scalar>
struct BackboneWeights {
  MatrixX<Scalar> patch_weight;            // (3 h w) x d
  MatrixX<Scalar> patch_bias;              // 1 x d
  MatrixX<Scalar> pos;                     // (1 + m) x d; row 0 belongs to CLS
  MatrixX<Scalar> cls;                     // 1 x d
  std::vector<LayerWeights<Scalar>> layers;
  MatrixX<Scalar> final_gain, final_bias;  // 1 x d
};

enum class ArrayKind { General, LnGain, LnBias };

// Canonical array order; init, hashing and checkpoint I/O all follow it.
template <typename Weights, typename Fn>
void for_each_backbone_array(Weights& w, Fn&& fn) {
  fn("patch_weight", w.patch_weight, ArrayKind::General);
  fn("patch_bias", w.patch_bias, ArrayKind::General);
  fn("pos", w.pos, ArrayKind::General);
  fn("cls", w.cls, ArrayKind::General);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string tag = "layer" + std::to_string(i) + ".";
    fn((tag + "ln1_gain").c_str(), l.ln1_gain, ArrayKind::LnGain);
    fn((tag + "ln1_bias").c_str(), l.ln1_bias, ArrayKind::LnBias);
    fn((tag + "wq").c_str(), l.wq, ArrayKind::General);
    fn((tag + "bq").c_str(), l.bq, ArrayKind::General);
    fn((tag + "wk").c_str(), l.wk, ArrayKind::General);
    fn((tag + "bk").c_str(), l.bk, ArrayKind::General);
    fn((tag + "wv").c_str(), l.wv, ArrayKind::General);
    fn((tag + "bv").c_str(), l.bv, ArrayKind::General);
    fn((tag + "wo").c_str(), l.wo, ArrayKind::General);
    fn((tag + "bo").c_str(), l.bo, ArrayKind::General);
    fn((tag + "ln2_gain").c_str(), l.ln2_gain, ArrayKind::LnGain);
    fn((tag + "ln2_bias").c_str(), l.ln2_bias, ArrayKind::LnBias);
    fn((tag + "w1").c_str(), l.w1, ArrayKind::General);
    fn((tag + "b1").c_str(), l.b1, ArrayKind::General);
    fn((tag + "w2").c_str(), l.w2, ArrayKind::General);
    fn((tag + "b2").c_str(), l.b2, ArrayKind::General);
  }
  fn("final_gain", w.final_gain, ArrayKind::LnGain);
  fn("final_bias", w.final_bias, ArrayKind::LnBias);
}

template <typename Scalar>
BackboneWeights<Scalar> make_backbone_shell(const ViTConfig& cfg) {
  cfg.validate();
  const int d = cfg.embed_dim;
  const int hid = cfg.mlp_hidden();
  BackboneWeights<Scalar> w;
  w.patch_weight.resize(cfg.patch_dim(), d);
  w.patch_bias.resize(1, d);
  w.pos.resize(1 + cfg.num_patches(), d);
  w.cls.resize(1, d);
  w.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& l : w.layers) {
    l.ln1_gain.resize(1, d);
    l.ln1_bias.resize(1, d);
    l.wq.resize(d, d);
    l.wk.resize(d, d);
    l.wv.resize(d, d);
    l.wo.resize(d, d);
    l.bq.resize(1, d);
    l.bk.resize(1, d);
    l.bv.resize(1, d);
    l.bo.resize(1, d);
    l.ln2_gain.resize(1, d);
    l.ln2_bias.resize(1, d);
    l.w1.resize(d, hid);
    l.b1.resize(1, hid);
    l.w2.resize(hid, d);
    l.b2.resize(1, d);
  }
  w.final_gain.resize(1, d);
  w.final_bias.resize(1, d);
  return w;
}

// Seeded random backbone for runs without an external checkpoint: weights,
// positional encodings, CLS and biases uniform in +-1/sqrt(d); layer-norm
// gains 1 and biases 0.
template <typename Scalar>
BackboneWeights<Scalar> init_backbone(const ViTConfig& cfg, std::uint64_t seed) {
  auto w = make_backbone_shell<Scalar>(cfg);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  SplitRng rng(seed);
  for_each_backbone_array(w, [&](const char*, MatrixX<Scalar>& m, ArrayKind kind) {
    switch (kind) {
      case ArrayKind::LnGain: m.setOnes(); break;
      case ArrayKind::LnBias: m.setZero(); break;
      case ArrayKind::General:
        for (Index i = 0; i < m.rows(); ++i)
          for (Index j = 0; j < m.cols(); ++j)
            m(i, j) = static_cast<Scalar>(rng.uniform_symmetric(bound));
        break;
    }
  });
  return w;
}

// Content hash of every backbone array in canonical order; the frozen-backbone
// contract asserts it is unchanged by training.
template <typename Scalar>
std::uint64_t backbone_hash(const BackboneWeights<Scalar>& w) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for_each_backbone_array(w, [&](const char*, const MatrixX<Scalar>& m, ArrayKind) {
    h = hash_matrix(m, h);
  });
  return h;
}

inline std::int64_t count_backbone_params(const ViTConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t m = cfg.num_patches();
  const std::int64_t hid = cfg.mlp_hidden();
  const std::int64_t patch = static_cast<std::int64_t>(cfg.patch_dim()) * d + d;
  const std::int64_t pos_cls = (1 + m) * d + d;
  const std::int64_t per_layer = 2 * d                 // ln1
                                 + 4 * (d * d + d)     // q,k,v,o projections
                                 + 2 * d               // ln2
                                 + d * hid + hid       // mlp in
                                 + hid * d + d;        // mlp out
  return patch + pos_cls + cfg.num_layers * per_layer + 2 * d;
}

inline constexpr double kLayerNormEps = 1e-6;

// --- embedding ----------------------------------------------------------------

// Patch embedding with positional encoding. chw is the image as a flat
// channel-major buffer (index = c*H*W + y*W + x); patches are enumerated
// row-major over the patch grid and each is flattened channel-major before
// projection. Row j of the result carries positional encoding row 1+j.
template <typename Scalar>
MatrixX<Scalar> embed_patches(const VectorX<Scalar>& chw, const ViTConfig& cfg,
                              const BackboneWeights<Scalar>& w) {
  cfg.validate();
  const int H = cfg.image_height, W = cfg.image_width;
  const int ph = cfg.patch_height, pw = cfg.patch_width;
  const int m = cfg.num_patches();
  if (chw.size() != static_cast<Index>(3) * H * W)
    throw std::invalid_argument("embed_patches: image size mismatch");
  if (w.patch_weight.rows() != cfg.patch_dim() || w.patch_weight.cols() != cfg.embed_dim ||
      w.pos.rows() != 1 + m)
    throw std::invalid_argument("embed_patches: weight dimensions mismatch");
  MatrixX<Scalar> patches(m, cfg.patch_dim());
  const int grid_w = cfg.patches_per_row();
  for (int j = 0; j < m; ++j) {
    const int gy = j / grid_w, gx = j % grid_w;
    Index k = 0;
    for (int c = 0; c < 3; ++c)
      for (int dy = 0; dy < ph; ++dy)
        for (int dx = 0; dx < pw; ++dx)
          patches(j, k++) = chw[static_cast<Index>(c) * H * W +
                                static_cast<Index>(gy * ph + dy) * W + (gx * pw + dx)];
  }
  MatrixX<Scalar> out = patches * w.patch_weight;
  out.rowwise() += w.patch_bias.row(0);
  out += w.pos.middleRows(1, m);
  return out;
}

// --- transformer graph ----------------------------------------------------------

// Multi-head self-attention sublayer (projections, per-head scaled dot-product
// softmax, output projection). No positions are consumed here, so the block is
// permutation-equivariant over rows.
template <typename Scalar>
Var<Scalar> attention_graph(Var<Scalar> x, const LayerWeights<Scalar>& lw, int heads) {
  auto& t = detail::tape_of(x);
  const Index d = t.val(x).cols();
  if (heads <= 0 || d % heads != 0)
    throw std::invalid_argument("attention: embed dim not divisible by heads");
  const Index dh = d / heads;
  auto q = linear(x, &lw.wq, &lw.bq);
  auto k = linear(x, &lw.wk, &lw.bk);
  auto v = linear(x, &lw.wv, &lw.bv);
  const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var<Scalar>> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = cols(q, h * dh, dh);
    auto kh = cols(k, h * dh, dh);
    auto vh = cols(v, h * dh, dh);
    auto attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh));
    out.push_back(matmul(attn, vh));
  }
  return linear(concat_cols(out), &lw.wo, &lw.bo);
}

template <typename Scalar>
Var<Scalar> feedforward_graph(Var<Scalar> x, const LayerWeights<Scalar>& lw) {
  return linear(gelu(linear(x, &lw.w1, &lw.b1)), &lw.w2, &lw.b2);
}

// Pre-norm layer: x + Attn(LN(x)), then + MLP(LN(.)).
template <typename Scalar>
Var<Scalar> transformer_layer_graph(Var<Scalar> x, const LayerWeights<Scalar>& lw, int heads,
                                    Scalar eps = Scalar(kLayerNormEps)) {
  auto a = x + attention_graph(layer_norm_rows(x, &lw.ln1_gain, &lw.ln1_bias, eps), lw, heads);
  return a + feedforward_graph(layer_norm_rows(a, &lw.ln2_gain, &lw.ln2_bias, eps), lw);
}

// CLS feature for a patch-embedding matrix, optionally with per-layer prompt
// rows. Layer i consumes [CLS, prompts[i], E]; the prompt rows it emits are
// discarded and layer i+1 gets fresh rows from prompts[i+1] (deep prompting).
// Prompt rows carry no positional encoding. Returns the layer-normed final
// CLS row (1 x d).
template <typename Scalar>
Var<Scalar> cls_feature_graph(Tape<Scalar>& t, Var<Scalar> embeddings,
                              const std::vector<Var<Scalar>>& prompts,
                              const BackboneWeights<Scalar>& w, const ViTConfig& cfg,
                              Scalar eps = Scalar(kLayerNormEps)) {
  const Index m = t.val(embeddings).rows();
  if (t.val(embeddings).cols() != cfg.embed_dim)
    throw std::invalid_argument("cls_feature: embedding dim mismatch");
  if (!prompts.empty() && static_cast<int>(prompts.size()) != cfg.num_layers)
    throw std::invalid_argument("cls_feature: prompt bank layer count mismatch");
  const Index p = prompts.empty() ? 0 : t.val(prompts.front()).rows();
  auto cls = t.constant(MatrixX<Scalar>(w.cls + w.pos.row(0)));
  auto e = embeddings;
  for (int i = 0; i < cfg.num_layers; ++i) {
    std::vector<Var<Scalar>> parts;
    parts.push_back(cls);
    if (!prompts.empty()) parts.push_back(prompts[static_cast<std::size_t>(i)]);
    parts.push_back(e);
    auto seq = concat_rows(parts);
    if (t.val(seq).rows() != 1 + p + m)
      throw std::logic_error("cls_feature: sequence length invariant violated");
    auto out = transformer_layer_graph(seq, w.layers[static_cast<std::size_t>(i)], cfg.num_heads, eps);
    cls = rows(out, 0, 1);
    e = rows(out, 1 + p, m);
  }
  return layer_norm_rows(cls, &w.final_gain, &w.final_bias, eps);
}

// --- value-only entry points ------------------------------------------------------

// f_theta(x): plain ViT feature of a patch-embedding matrix.
template <typename Scalar>
VectorX<Scalar> vit_forward(const MatrixX<Scalar>& embeddings, const BackboneWeights<Scalar>& w,
                            const ViTConfig& cfg) {
  Tape<Scalar> t;
  auto f = cls_feature_graph(t, t.constant(embeddings), {}, w, cfg);
  return t.val(f).row(0).transpose();
}

template <typename Scalar>
MatrixX<Scalar> attention_block(const MatrixX<Scalar>& seq, const LayerWeights<Scalar>& lw, int heads) {
  Tape<Scalar> t;
  return t.val(attention_graph(t.constant(seq), lw, heads));
}

template <typename Scalar>
MatrixX<Scalar> feedforward_block(const MatrixX<Scalar>& seq, const LayerWeights<Scalar>& lw) {
  Tape<Scalar> t;
  return t.val(feedforward_graph(t.constant(seq), lw));
}

}  // namespace mvp
