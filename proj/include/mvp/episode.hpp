#pragma once

#include "mvp/common.hpp"
#include "mvp/rng.hpp"
#include "mvp/tape.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace mvp {

struct LabeledSample {
  int sample_id = -1;
  int label = -1;  // episode-contiguous class index in [0, way)
};

template <typename Scalar>
struct PseudoQuery {
  MatrixX<Scalar> embeddings;  // m x d, derived from a support image
  int label = -1;
};

// One few-shot task. Real queries reference dataset samples disjoint from the
// support; pseudo-queries (meta fine-tuning auxiliaries) are embedding-level
// and flagged by living in pseudo_query.
template <typename Scalar>
struct EpisodeTask {
  int way = 0;
  int shot = 0;
  std::vector<int> class_ids;  // dataset class per episode label
  std::vector<LabeledSample> support;
  std::vector<LabeledSample> query;
  std::vector<PseudoQuery<Scalar>> pseudo_query;
};

struct SamplerSpec {
  int maxway = 10;
  int maxshot = 5;
  int queries_per_class = 10;

  void validate() const {
    if (maxway < 5) throw std::invalid_argument("SamplerSpec: MAXWAY must be >= 5");
    if (maxshot < 1) throw std::invalid_argument("SamplerSpec: MAXSHOT must be >= 1");
    if (queries_per_class < 1) throw std::invalid_argument("SamplerSpec: queries_per_class must be >= 1");
  }
};

// Variable-way variable-shot uniform sampling: way ~ U{5..MAXWAY}, one shared
// shot K ~ U{1..MAXSHOT}, classes without replacement, per class K supports
// plus up to queries_per_class queries without replacement (disjoint sets).
// Support and query lists are canonicalized (sorted by label, then sample id)
// so downstream reductions are order-stable.
template <typename Scalar>
EpisodeTask<Scalar> sample_episode(const std::vector<std::vector<int>>& class_samples,
                                   const SamplerSpec& spec, SplitRng& rng) {
  spec.validate();
  const int n_classes = static_cast<int>(class_samples.size());
  if (n_classes < 5)
    throw std::runtime_error("sample_episode: insufficient classes (have " +
                             std::to_string(n_classes) + ", need at least 5)");
  EpisodeTask<Scalar> task;
  task.way = 5 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(spec.maxway - 5 + 1)));
  task.shot = 1 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(spec.maxshot)));
  if (task.way > n_classes)
    throw std::runtime_error("sample_episode: insufficient classes (have " +
                             std::to_string(n_classes) + ", drew way " + std::to_string(task.way) + ")");
  task.class_ids = rng.sample_without_replacement(n_classes, task.way);
  for (int label = 0; label < task.way; ++label) {
    const int cls = task.class_ids[static_cast<std::size_t>(label)];
    const auto& pool = class_samples[static_cast<std::size_t>(cls)];
    const int avail = static_cast<int>(pool.size());
    if (avail < task.shot + 1)
      throw std::runtime_error("sample_episode: insufficient samples in class " + std::to_string(cls) +
                               " (have " + std::to_string(avail) + ", need shot " +
                               std::to_string(task.shot) + " + at least 1 query)");
    const int n_query = std::min(spec.queries_per_class, avail - task.shot);
    std::vector<int> picks = rng.sample_without_replacement(avail, task.shot + n_query);
    for (int i = 0; i < task.shot; ++i)
      task.support.push_back({pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])], label});
    for (int i = task.shot; i < task.shot + n_query; ++i)
      task.query.push_back({pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])], label});
  }
  auto by_label_then_id = [](const LabeledSample& a, const LabeledSample& b) {
    return a.label != b.label ? a.label < b.label : a.sample_id < b.sample_id;
  };
  std::sort(task.support.begin(), task.support.end(), by_label_then_id);
  std::sort(task.query.begin(), task.query.end(), by_label_then_id);
  return task;
}

// Debug dump line: "episode_id, way, shot, class_ids, support_ids, query_ids"
// with space-separated ids inside each list field.
template <typename Scalar>
std::string format_episode_line(int episode_id, const EpisodeTask<Scalar>& task) {
  auto join_ids = [](const auto& items, auto get) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) s += ' ';
      s += std::to_string(get(items[i]));
    }
    return s;
  };
  return std::to_string(episode_id) + ", " + std::to_string(task.way) + ", " +
         std::to_string(task.shot) + ", " + join_ids(task.class_ids, [](int c) { return c; }) +
         ", " + join_ids(task.support, [](const LabeledSample& s) { return s.sample_id; }) + ", " +
         join_ids(task.query, [](const LabeledSample& s) { return s.sample_id; });
}

// --- prototypes and the prototypical head ---------------------------------------

template <typename Scalar>
struct PrototypeSet {
  MatrixX<Scalar> prototypes;  // C x d
  std::vector<int> counts;     // |S_c|

  int way() const { return static_cast<int>(counts.size()); }
};

// Class means over support features. Features are accumulated per class in
// ascending sample-id order, so any permutation of the inputs yields
// bit-identical prototypes.
template <typename Scalar>
PrototypeSet<Scalar> compute_prototypes(const MatrixX<Scalar>& features,
                                        const std::vector<int>& labels,
                                        const std::vector<int>& sample_ids) {
  const Index n = features.rows();
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(sample_ids.size()) != n)
    throw std::invalid_argument("compute_prototypes: label/id count mismatch");
  if (n == 0) throw std::invalid_argument("compute_prototypes: no features");
  const int way = 1 + *std::max_element(labels.begin(), labels.end());
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return sample_ids[static_cast<std::size_t>(a)] < sample_ids[static_cast<std::size_t>(b)];
  });
  PrototypeSet<Scalar> out;
  out.prototypes = MatrixX<Scalar>::Zero(way, features.cols());
  out.counts.assign(static_cast<std::size_t>(way), 0);
  for (Index i : order) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0) throw std::invalid_argument("compute_prototypes: negative label");
    out.prototypes.row(c) += features.row(i);
    ++out.counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < way; ++c) {
    if (out.counts[static_cast<std::size_t>(c)] == 0)
      throw std::runtime_error("compute_prototypes: empty class " + std::to_string(c));
    out.prototypes.row(c) /= static_cast<Scalar>(out.counts[static_cast<std::size_t>(c)]);
  }
  return out;
}

template <typename Scalar>
PrototypeSet<Scalar> compute_prototypes(const MatrixX<Scalar>& features,
                                        const std::vector<int>& labels) {
  std::vector<int> ids(static_cast<std::size_t>(features.rows()));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return compute_prototypes(features, labels, ids);
}

// d(u, v) = 1 - cos(u, v). Zero norms are a domain error, not an epsilon.
template <typename Scalar>
Scalar cosine_distance(const VectorX<Scalar>& u, const VectorX<Scalar>& v) {
  const Scalar nu = u.norm(), nv = v.norm();
  if (!(nu > Scalar(0)) || !(nv > Scalar(0)))
    throw std::domain_error("cosine_distance: zero-norm vector");
  return Scalar(1) - u.dot(v) / (nu * nv);
}

// p(c) = exp(-d(f, mu_c)) / sum_c' exp(-d(f, mu_c')), Eq. softmax over
// negative cosine distances.
template <typename Scalar>
VectorX<Scalar> classify_query(const VectorX<Scalar>& feature, const PrototypeSet<Scalar>& protos) {
  const int way = protos.way();
  VectorX<Scalar> neg_d(way);
  for (int c = 0; c < way; ++c)
    neg_d[c] = -cosine_distance<Scalar>(feature, protos.prototypes.row(c).transpose());
  MatrixX<Scalar> row(1, way);
  row.row(0) = neg_d.transpose();
  return softmax<Scalar>(row).row(0).transpose();
}

// Per query with true class c: w_c * [ d(f, mu_c) + log sum_c' exp(-d(f, mu_c')) ]
// with w_c = 1/|S_c| (the paper's weighting) or 1 (plain NLL ablation); the
// episode loss is the mean over queries.
template <typename Scalar>
Scalar episode_loss(const MatrixX<Scalar>& query_features, const std::vector<int>& query_labels,
                    const PrototypeSet<Scalar>& protos, bool plain_nll = false) {
  const Index q = query_features.rows();
  if (static_cast<Index>(query_labels.size()) != q)
    throw std::invalid_argument("episode_loss: label count mismatch");
  const int way = protos.way();
  Scalar total = 0;
  for (Index j = 0; j < q; ++j) {
    const int y = query_labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= way) throw std::out_of_range("episode_loss: label outside [0, C)");
    VectorX<Scalar> d(way);
    for (int c = 0; c < way; ++c)
      d[c] = cosine_distance<Scalar>(query_features.row(j).transpose(),
                                     protos.prototypes.row(c).transpose());
    const Scalar m = -d.minCoeff();
    const Scalar lse = m + std::log((-d.array() - m).exp().sum());
    const Scalar w = plain_nll ? Scalar(1)
                               : Scalar(1) / static_cast<Scalar>(
                                     protos.counts[static_cast<std::size_t>(y)]);
    total += w * (d[y] + lse);
  }
  return total / static_cast<Scalar>(q);
}

template <typename Scalar>
Scalar episodic_accuracy(const MatrixX<Scalar>& query_features, const std::vector<int>& query_labels,
                         const PrototypeSet<Scalar>& protos) {
  const Index q = query_features.rows();
  Index correct = 0;
  for (Index j = 0; j < q; ++j) {
    VectorX<Scalar> p = classify_query<Scalar>(query_features.row(j).transpose(), protos);
    Index pred;
    p.maxCoeff(&pred);
    if (static_cast<int>(pred) == query_labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<Scalar>(correct) / static_cast<Scalar>(q);
}

// Tape form of the full prototypical head, for training. Support and query
// features arrive as 1 x d vars from prompted forwards on the same tape.
template <typename Scalar>
Var<Scalar> episode_loss_graph(Tape<Scalar>& t, const std::vector<Var<Scalar>>& support_features,
                               const std::vector<int>& support_labels,
                               const std::vector<Var<Scalar>>& query_features,
                               const std::vector<int>& query_labels, int way,
                               bool plain_nll = false) {
  if (support_features.empty() || query_features.empty())
    throw std::invalid_argument("episode_loss_graph: empty support or query");
  const int n_s = static_cast<int>(support_features.size());
  std::vector<int> counts(static_cast<std::size_t>(way), 0);
  for (int y : support_labels) {
    if (y < 0 || y >= way) throw std::out_of_range("episode_loss_graph: support label outside [0, C)");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < way; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw std::runtime_error("episode_loss_graph: empty class " + std::to_string(c));
  // Prototypes as a fixed aggregation matrix applied to the stacked supports.
  MatrixX<Scalar> agg = MatrixX<Scalar>::Zero(way, n_s);
  for (int i = 0; i < n_s; ++i)
    agg(support_labels[static_cast<std::size_t>(i)], i) =
        Scalar(1) / static_cast<Scalar>(counts[static_cast<std::size_t>(
                        support_labels[static_cast<std::size_t>(i)])]);
  auto protos = matmul(t.constant(std::move(agg)), concat_rows(support_features));
  auto dists = one_minus(matmul_nt(row_l2_normalize(concat_rows(query_features)),
                                   row_l2_normalize(protos)));
  std::vector<Scalar> weights(query_labels.size());
  for (std::size_t j = 0; j < query_labels.size(); ++j) {
    const int y = query_labels[j];
    if (y < 0 || y >= way) throw std::out_of_range("episode_loss_graph: query label outside [0, C)");
    weights[j] = plain_nll ? Scalar(1)
                           : Scalar(1) / static_cast<Scalar>(counts[static_cast<std::size_t>(y)]);
  }
  return episode_nll(dists, query_labels, weights);
}

}  // namespace mvp
