#pragma once

#include "mvp/common.hpp"
#include "mvp/episode.hpp"
#include "mvp/rng.hpp"

#include <cstdint>
#include <vector>

namespace mvp {

// Per-image patch-embedding sets of a support batch (bs entries of m x d),
// with the source labels.
template <typename Scalar>
struct EmbeddingBatch {
  std::vector<MatrixX<Scalar>> arrays;
  std::vector<int> labels;

  int batch_size() const { return static_cast<int>(arrays.size()); }

  void validate() const {
    if (arrays.empty()) throw std::invalid_argument("EmbeddingBatch: empty batch");
    if (labels.size() != arrays.size())
      throw std::invalid_argument("EmbeddingBatch: label count mismatch");
    for (const auto& a : arrays)
      if (a.rows() != arrays.front().rows() || a.cols() != arrays.front().cols())
        throw std::invalid_argument("EmbeddingBatch: inconsistent shapes");
  }
};

struct RecombinationRate {
  double alpha = 0.0;

  explicit RecombinationRate(double a) : alpha(a) {
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument("RecombinationRate: alpha outside [0, 1]");
  }
};

// Random Patch Recombination over patch embeddings (already carrying their
// positional encodings; CLS and prompt rows do not exist yet at this point).
//
// For image i = 0..bs-1, in order and in place (earlier-modified images can
// serve as later sources): draw exactly floor(m * alpha) distinct positions,
// then for each selected position (in selection order) a source image uniform
// over the whole batch, self included, and overwrite the row at that position
// with the source's same-position row. Labels are unchanged.
//
// RNG stream contract (shared with the independent reference oracle): image i
// uses SplitRng(seed).split(i); positions come from one
// sample_without_replacement(m, r) call, then one uniform_below(bs) per
// selected position.
template <typename Scalar>
EmbeddingBatch<Scalar> rpr_recombine(EmbeddingBatch<Scalar> batch, RecombinationRate rate,
                                     std::uint64_t seed) {
  batch.validate();
  const int bs = batch.batch_size();
  const int m = static_cast<int>(batch.arrays.front().rows());
  const int r = static_cast<int>(m * rate.alpha);
  if (r == 0) return batch;
  const SplitRng root(seed);
  for (int i = 0; i < bs; ++i) {
    SplitRng rng = root.split(static_cast<std::uint64_t>(i));
    const std::vector<int> positions = rng.sample_without_replacement(m, r);
    for (int pos : positions) {
      const int src = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(bs)));
      batch.arrays[static_cast<std::size_t>(i)].row(pos) =
          batch.arrays[static_cast<std::size_t>(src)].row(pos);
    }
  }
  return batch;
}

// Auxiliary task T' = {S, Q'} for meta fine-tuning: one recombined embedding
// set per support image, labeled with the source image's label. embed maps a
// support sample id to its m x d patch-embedding matrix.
template <typename Scalar, typename EmbedFn>
EpisodeTask<Scalar> build_pseudo_query(const EpisodeTask<Scalar>& task, RecombinationRate rate,
                                       std::uint64_t seed, EmbedFn&& embed) {
  if (task.support.empty()) throw std::invalid_argument("build_pseudo_query: empty support");
  EmbeddingBatch<Scalar> batch;
  batch.arrays.reserve(task.support.size());
  batch.labels.reserve(task.support.size());
  for (const auto& s : task.support) {
    batch.arrays.push_back(embed(s.sample_id));
    batch.labels.push_back(s.label);
  }
  batch = rpr_recombine(std::move(batch), rate, seed);
  EpisodeTask<Scalar> aux;
  aux.way = task.way;
  aux.shot = task.shot;
  aux.class_ids = task.class_ids;
  aux.support = task.support;
  aux.pseudo_query.reserve(batch.arrays.size());
  for (std::size_t i = 0; i < batch.arrays.size(); ++i)
    aux.pseudo_query.push_back({std::move(batch.arrays[i]), batch.labels[i]});
  return aux;
}

}  // namespace mvp
