#pragma once

#include "mvp/checkpoint.hpp"
#include "mvp/common.hpp"
#include "mvp/rng.hpp"
#include "mvp/vit.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvp {

// The per-layer prompt tokens: N arrays of shape p x d. These are the only
// trainable parameters anywhere in the pipeline.
template <typename Scalar>
struct PromptBank {
  std::vector<MatrixX<Scalar>> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int tokens() const { return layers.empty() ? 0 : static_cast<int>(layers.front().rows()); }
  int dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().cols()); }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& m : layers) h = hash_matrix(m, h);
    return h;
  }

  bool same_values(const PromptBank& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].rows() != other.layers[i].rows() ||
          layers[i].cols() != other.layers[i].cols())
        return false;
      if ((layers[i].array() != other.layers[i].array()).any()) return false;
    }
    return true;
  }
};

inline std::int64_t trainable_param_count(const ViTConfig& cfg, int p) {
  cfg.validate();
  if (p < 1) throw std::invalid_argument("trainable_param_count: p must be >= 1");
  return static_cast<std::int64_t>(cfg.num_layers) * p * cfg.embed_dim;
}

inline int prompted_sequence_length(const ViTConfig& cfg, int p) {
  return 1 + p + cfg.num_patches();
}

// Entries uniform in +-sqrt(6/d), deterministically seeded.
template <typename Scalar>
PromptBank<Scalar> init_prompts(const ViTConfig& cfg, int p, std::uint64_t seed) {
  cfg.validate();
  if (p < 1) throw std::invalid_argument("init_prompts: p must be >= 1");
  const double bound = std::sqrt(6.0 / cfg.embed_dim);
  SplitRng rng(seed);
  PromptBank<Scalar> bank;
  bank.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& m : bank.layers) {
    m.resize(p, cfg.embed_dim);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j)
        m(i, j) = static_cast<Scalar>(rng.uniform_symmetric(bound));
  }
  return bank;
}

// Graph form: watches every bank layer on the tape; the watched vars are
// returned so the caller can read gradients after backward. Shared across all
// image forwards on one tape, so per-episode gradients accumulate.
template <typename Scalar>
std::vector<Var<Scalar>> watch_prompts(Tape<Scalar>& t, const PromptBank<Scalar>& bank) {
  std::vector<Var<Scalar>> vars;
  vars.reserve(bank.layers.size());
  for (const auto& m : bank.layers) vars.push_back(t.watch(m));
  return vars;
}

// f_theta'(x): prompted CLS feature (value only).
template <typename Scalar>
VectorX<Scalar> prompted_forward(const MatrixX<Scalar>& embeddings, const PromptBank<Scalar>& bank,
                                 const BackboneWeights<Scalar>& w, const ViTConfig& cfg) {
  if (bank.num_layers() != cfg.num_layers)
    throw std::invalid_argument("prompted_forward: bank layer count mismatch");
  Tape<Scalar> t;
  auto prompts = watch_prompts(t, bank);
  auto f = cls_feature_graph(t, t.constant(embeddings), prompts, w, cfg);
  return t.val(f).row(0).transpose();
}

// --- prompt checkpoints ------------------------------------------------------------
//
// Payload: N*p*d little-endian f32, layer-major, token-major, dim-minor (each
// layer's row-major p x d block in order).

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const PromptBank<Scalar>& bank,
                     std::uint64_t seed) {
  if (bank.layers.empty()) throw std::invalid_argument("save_checkpoint: empty bank");
  std::vector<float> payload;
  payload.reserve(static_cast<std::size_t>(bank.num_layers()) * bank.tokens() * bank.dim());
  for (const auto& m : bank.layers)
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) payload.push_back(static_cast<float>(m(i, j)));
  write_checkpoint_blob(path,
                        {{"d", std::to_string(bank.dim())},
                         {"N", std::to_string(bank.num_layers())},
                         {"p", std::to_string(bank.tokens())},
                         {"seed", std::to_string(seed)},
                         {"precision", sizeof(Scalar) == 4 ? "f32" : "f64"}},
                        payload);
}

template <typename Scalar>
PromptBank<Scalar> load_checkpoint(const std::filesystem::path& path) {
  CheckpointBlob blob = read_checkpoint_blob(path);
  const std::int64_t d = blob.get_int("d");
  const std::int64_t n = blob.get_int("N");
  const std::int64_t p = blob.get_int("p");
  if (d < 1 || n < 1 || p < 1)
    throw CheckpointError(CheckpointError::Kind::DimMismatch, "checkpoint: non-positive dims in header");
  // A payload that still holds whole N*p tokens but of a different width is a
  // dim mismatch; anything else is a truncated (or padded) payload.
  const std::int64_t tokens = n * p;
  const std::int64_t have = static_cast<std::int64_t>(blob.payload.size());
  if (have != tokens * d) {
    if (have % tokens == 0)
      throw CheckpointError(CheckpointError::Kind::DimMismatch,
                            "checkpoint: dim mismatch (payload implies d=" +
                                std::to_string(have / tokens) + ", header says d=" +
                                std::to_string(d) + ")");
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint: truncated payload");
  }
  PromptBank<Scalar> bank;
  bank.layers.resize(static_cast<std::size_t>(n));
  std::size_t k = 0;
  for (auto& m : bank.layers) {
    m.resize(p, d);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(blob.payload[k++]);
  }
  return bank;
}

}  // namespace mvp
