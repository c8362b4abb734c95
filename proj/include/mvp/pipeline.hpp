#pragma once

#include "mvp/config.hpp"
#include "mvp/dataset.hpp"
#include "mvp/episode.hpp"
#include "mvp/pixel_aug.hpp"
#include "mvp/prompt.hpp"
#include "mvp/rpr.hpp"
#include "mvp/vit.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mvp {

// Fixed stream keys so every derived seed is a pure function of the master
// seed and its role; parallel and serial schedules would draw identically.
namespace streams {
inline constexpr std::uint64_t kBackboneInit = 1;
inline constexpr std::uint64_t kPromptInit = 2;
inline constexpr std::uint64_t kMetaTrainEpisode = 3;
inline constexpr std::uint64_t kEvalTask = 4;
inline constexpr std::uint64_t kFinetuneCandidate = 5;
inline constexpr std::uint64_t kBench = 6;
}  // namespace streams

struct TraceRow {
  int episode = 0;
  int way = 0;
  int shot = 0;
  double loss = 0.0;
};

struct EvalReport {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sample std / sqrt(n); 0 for n == 1
  int n_tasks = 0;
  std::uint64_t seed = 0;
  std::string config_digest;

  struct TaskRow {
    int task = 0;
    int way = 0;
    int shot = 0;
    double accuracy = 0.0;
    double lr = 0.0;
    double alpha = 0.0;
  };
  std::vector<TaskRow> rows;
};

inline void summarize(EvalReport& r) {
  const int n = static_cast<int>(r.rows.size());
  r.n_tasks = n;
  double sum = 0.0;
  for (const auto& row : r.rows) sum += row.accuracy;
  r.mean = n > 0 ? sum / n : 0.0;
  if (n > 1) {
    double ss = 0.0;
    for (const auto& row : r.rows) ss += (row.accuracy - r.mean) * (row.accuracy - r.mean);
    r.half_width = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
  } else {
    r.half_width = 0.0;  // std of a singleton is 0 by convention
  }
}

namespace detail {

// Per-task embedding cache: images are frozen, so each sample is embedded once.
template <typename Scalar>
class EmbedCache {
 public:
  EmbedCache(const DatasetManifest& data, const BackboneWeights<Scalar>& w, const ViTConfig& cfg)
      : data_(data), weights_(w), cfg_(cfg) {}

  const MatrixX<Scalar>& get(int sample_id) {
    auto it = cache_.find(sample_id);
    if (it != cache_.end()) return it->second;
    auto emb = embed_patches<Scalar>(to_chw<Scalar>(data_.images[static_cast<std::size_t>(sample_id)]),
                                     cfg_, weights_);
    return cache_.emplace(sample_id, std::move(emb)).first->second;
  }

 private:
  const DatasetManifest& data_;
  const BackboneWeights<Scalar>& weights_;
  const ViTConfig& cfg_;
  std::map<int, MatrixX<Scalar>> cache_;
};

template <typename Scalar>
std::vector<int> labels_of(const std::vector<LabeledSample>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(s.label);
  return out;
}

template <typename Scalar>
std::vector<int> ids_of(const std::vector<LabeledSample>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(s.sample_id);
  return out;
}

// One tape over the whole episode: supports, queries, prototypes and loss.
// Returns the loss value and leaves per-layer prompt gradients in grads.
template <typename Scalar>
Scalar episode_backward(const std::vector<MatrixX<Scalar>>& support_emb,
                        const std::vector<int>& support_labels,
                        const std::vector<MatrixX<Scalar>>& query_emb,
                        const std::vector<int>& query_labels, int way,
                        const PromptBank<Scalar>& bank, const BackboneWeights<Scalar>& w,
                        const ViTConfig& cfg, bool plain_nll,
                        std::vector<MatrixX<Scalar>>& grads) {
  Tape<Scalar> t;
  auto prompts = watch_prompts(t, bank);
  std::vector<Var<Scalar>> sf, qf;
  sf.reserve(support_emb.size());
  qf.reserve(query_emb.size());
  for (const auto& e : support_emb)
    sf.push_back(cls_feature_graph(t, t.constant(e), prompts, w, cfg));
  for (const auto& e : query_emb)
    qf.push_back(cls_feature_graph(t, t.constant(e), prompts, w, cfg));
  auto loss = episode_loss_graph(t, sf, support_labels, qf, query_labels, way, plain_nll);
  const Scalar value = t.val(loss)(0, 0);
  t.backward(loss);
  grads.clear();
  grads.reserve(prompts.size());
  for (auto p : prompts) grads.push_back(t.grad(p));
  return value;
}

template <typename Scalar>
MatrixX<Scalar> stack_features(const std::vector<VectorX<Scalar>>& feats) {
  MatrixX<Scalar> out(static_cast<Index>(feats.size()), feats.front().size());
  for (std::size_t i = 0; i < feats.size(); ++i) out.row(static_cast<Index>(i)) = feats[i].transpose();
  return out;
}

}  // namespace detail

// --- meta-training -----------------------------------------------------------------

template <typename Scalar>
struct MetaTrainResult {
  PromptBank<Scalar> bank;
  std::vector<TraceRow> trace;
};

// Episodic meta-training of the prompt initialization: one episode per update,
// SGD with momentum on the prompt bank only. The backbone is read-only
// throughout (callers can verify via backbone_hash).
template <typename Scalar>
MetaTrainResult<Scalar> meta_train(const std::vector<const DatasetManifest*>& sources,
                                   const BackboneWeights<Scalar>& weights, const RunConfig& cfg,
                                   PromptBank<Scalar> bank) {
  cfg.validate();
  if (sources.empty()) throw std::invalid_argument("meta_train: no source datasets");
  if (!cfg.target_path.empty()) {
    const std::string target_id =
        std::filesystem::path(cfg.target_path).lexically_normal().string();
    for (const auto* s : sources)
      if (s->id == target_id)
        throw std::invalid_argument("meta_train: source dataset '" + s->id +
                                    "' is the evaluation target");
  }
  MetaTrainResult<Scalar> result;
  result.trace.reserve(static_cast<std::size_t>(cfg.meta_train_episodes));
  std::vector<MatrixX<Scalar>> velocity;
  for (const auto& m : bank.layers) velocity.push_back(MatrixX<Scalar>::Zero(m.rows(), m.cols()));
  std::vector<detail::EmbedCache<Scalar>> caches;
  caches.reserve(sources.size());
  for (const auto* s : sources) caches.emplace_back(*s, weights, cfg.vit);

  const Scalar lr = static_cast<Scalar>(cfg.meta_train_lr);
  const Scalar mu = static_cast<Scalar>(cfg.momentum);
  std::vector<MatrixX<Scalar>> grads;
  for (int ep = 0; ep < cfg.meta_train_episodes; ++ep) {
    SplitRng rng(derive_seed(cfg.seed, streams::kMetaTrainEpisode, static_cast<std::uint64_t>(ep)));
    const std::size_t si = static_cast<std::size_t>(rng.uniform_below(sources.size()));
    const DatasetManifest& data = *sources[si];
    auto task = sample_episode<Scalar>(data.class_samples, cfg.sampler, rng);
    std::vector<MatrixX<Scalar>> support_emb, query_emb;
    for (const auto& s : task.support) support_emb.push_back(caches[si].get(s.sample_id));
    for (const auto& q : task.query) query_emb.push_back(caches[si].get(q.sample_id));
    const Scalar loss = detail::episode_backward(
        support_emb, detail::labels_of<Scalar>(task.support), query_emb,
        detail::labels_of<Scalar>(task.query), task.way, bank, weights, cfg.vit, cfg.plain_nll,
        grads);
    if (!std::isfinite(static_cast<double>(loss)))
      throw std::runtime_error("meta_train: non-finite loss at episode " + std::to_string(ep));
    Scalar scale = 1;
    if (cfg.normalize_grad) {
      Scalar norm_sq = 0;
      for (const auto& g : grads) norm_sq += g.squaredNorm();
      const Scalar norm = std::sqrt(norm_sq);
      if (norm > Scalar(0)) scale = Scalar(1) / norm;
    }
    for (std::size_t l = 0; l < bank.layers.size(); ++l) {
      velocity[l] = mu * velocity[l] + scale * grads[l];
      bank.layers[l] -= lr * velocity[l];
    }
    result.trace.push_back({ep, task.way, task.shot, static_cast<double>(loss)});
  }
  result.bank = std::move(bank);
  return result;
}

// --- meta fine-tuning ----------------------------------------------------------------

template <typename Scalar>
struct FinetuneResult {
  PromptBank<Scalar> bank;
  double lr = 0.0;
  double alpha = 0.0;
};

// Grid selection over (lr, alpha): each candidate adapts a cloned bank for
// finetune_steps plain gradient steps on a pseudo-query auxiliary task, then
// is scored by accuracy on a second, independently seeded pseudo-query set.
// lr 0 skips adaptation entirely. Ties break toward smaller lr, then smaller
// alpha. Candidate seeds derive from (task_seed, candidate index), so any
// execution order gives the same selection.
template <typename Scalar>
FinetuneResult<Scalar> meta_finetune(const EpisodeTask<Scalar>& task,
                                     detail::EmbedCache<Scalar>& cache,
                                     const BackboneWeights<Scalar>& weights, const RunConfig& cfg,
                                     const PromptBank<Scalar>& bank, std::uint64_t task_seed) {
  cfg.validate();
  if (task.support.empty()) throw std::invalid_argument("meta_finetune: empty support");
  const std::vector<int> support_labels = detail::labels_of<Scalar>(task.support);
  const std::vector<int> support_ids = detail::ids_of<Scalar>(task.support);
  std::vector<MatrixX<Scalar>> support_emb;
  support_emb.reserve(task.support.size());
  for (const auto& s : task.support) support_emb.push_back(cache.get(s.sample_id));
  auto embed_fn = [&](int sample_id) { return cache.get(sample_id); };

  FinetuneResult<Scalar> best;
  bool have_best = false;
  double best_score = -1.0;
  std::vector<MatrixX<Scalar>> grads;
  std::uint64_t candidate = 0;
  for (double lr : cfg.lr_grid) {
    for (double alpha : cfg.alpha_grid) {
      const std::uint64_t cand_seed = derive_seed(task_seed, streams::kFinetuneCandidate, candidate);
      ++candidate;
      PromptBank<Scalar> cand_bank = bank;
      if (lr > 0.0 && cfg.finetune_steps > 0) {
        auto aux = build_pseudo_query<Scalar>(task, RecombinationRate(alpha),
                                              derive_seed(cand_seed, 0), embed_fn);
        std::vector<MatrixX<Scalar>> pq_emb;
        std::vector<int> pq_labels;
        for (auto& pq : aux.pseudo_query) {
          pq_emb.push_back(std::move(pq.embeddings));
          pq_labels.push_back(pq.label);
        }
        for (int step = 0; step < cfg.finetune_steps; ++step) {
          const Scalar loss = detail::episode_backward(support_emb, support_labels, pq_emb,
                                                       pq_labels, task.way, cand_bank, weights,
                                                       cfg.vit, cfg.plain_nll, grads);
          if (!std::isfinite(static_cast<double>(loss)))
            throw std::runtime_error("meta_finetune: non-finite loss at step " + std::to_string(step));
          for (std::size_t l = 0; l < cand_bank.layers.size(); ++l)
            cand_bank.layers[l] -= static_cast<Scalar>(lr) * grads[l];
        }
      }
      // Score on a fresh pseudo-query set drawn with the candidate's alpha.
      auto score_aux = build_pseudo_query<Scalar>(task, RecombinationRate(alpha),
                                                  derive_seed(cand_seed, 1), embed_fn);
      std::vector<VectorX<Scalar>> sfeat;
      for (const auto& e : support_emb)
        sfeat.push_back(prompted_forward(e, cand_bank, weights, cfg.vit));
      auto protos = compute_prototypes(detail::stack_features(sfeat), support_labels, support_ids);
      Index correct = 0;
      for (const auto& pq : score_aux.pseudo_query) {
        VectorX<Scalar> f = prompted_forward(pq.embeddings, cand_bank, weights, cfg.vit);
        VectorX<Scalar> p = classify_query(f, protos);
        Index pred;
        p.maxCoeff(&pred);
        if (static_cast<int>(pred) == pq.label) ++correct;
      }
      const double score = static_cast<double>(correct) /
                           static_cast<double>(score_aux.pseudo_query.size());
      const bool better =
          !have_best || score > best_score ||
          (score == best_score && (lr < best.lr || (lr == best.lr && alpha < best.alpha)));
      if (better) {
        have_best = true;
        best_score = score;
        best = {std::move(cand_bank), lr, alpha};
      }
    }
  }
  return best;
}

// --- evaluation -----------------------------------------------------------------------

// Samples n_tasks episodes from the target; each runs meta_finetune from the
// shared meta-trained bank and classifies its real queries by Eq. 8 argmax.
template <typename Scalar>
EvalReport evaluate(const DatasetManifest& target, const BackboneWeights<Scalar>& weights,
                    const RunConfig& cfg, const PromptBank<Scalar>& bank, int n_tasks) {
  cfg.validate();
  if (n_tasks < 1) throw std::invalid_argument("evaluate: n_tasks must be >= 1");
  EvalReport report;
  report.seed = cfg.seed;
  report.config_digest = cfg.digest();
  detail::EmbedCache<Scalar> cache(target, weights, cfg.vit);
  for (int ti = 0; ti < n_tasks; ++ti) {
    const std::uint64_t task_seed = derive_seed(cfg.seed, streams::kEvalTask, static_cast<std::uint64_t>(ti));
    SplitRng rng(derive_seed(task_seed, 0));
    auto task = sample_episode<Scalar>(target.class_samples, cfg.sampler, rng);
    auto ft = meta_finetune(task, cache, weights, cfg, bank, derive_seed(task_seed, 1));
    std::vector<VectorX<Scalar>> sfeat;
    for (const auto& s : task.support)
      sfeat.push_back(prompted_forward(cache.get(s.sample_id), ft.bank, weights, cfg.vit));
    auto protos = compute_prototypes(detail::stack_features(sfeat),
                                     detail::labels_of<Scalar>(task.support),
                                     detail::ids_of<Scalar>(task.support));
    std::vector<VectorX<Scalar>> qfeat;
    for (const auto& q : task.query)
      qfeat.push_back(prompted_forward(cache.get(q.sample_id), ft.bank, weights, cfg.vit));
    const Scalar acc = episodic_accuracy(detail::stack_features(qfeat),
                                         detail::labels_of<Scalar>(task.query), protos);
    report.rows.push_back({ti, task.way, task.shot, static_cast<double>(acc), ft.lr, ft.alpha});
  }
  summarize(report);
  return report;
}

// --- augmentation timing benchmark ------------------------------------------------------

struct BenchRow {
  int shot = 0;
  int batch = 0;
  double rpr_mean_s = 0.0;
  double pixel_mean_s = 0.0;
};

// Times rpr_recombine at alpha = 0.25 against the reduced pixel-space stack
// over identical 10-way k-shot batches, k in {1,2,4,6,8,10}. Embeddings for
// the RPR side are precomputed (the projection runs either way in the
// pipeline); each trial copies its input batch so both sides pay the same
// materialization cost. Strictly serial so timings stay clean.
template <typename Scalar>
std::vector<BenchRow> aug_bench(const DatasetManifest& data, const BackboneWeights<Scalar>& weights,
                                const RunConfig& cfg, int n_trials) {
  if (n_trials < 1) throw std::invalid_argument("aug_bench: n_trials must be >= 1");
  if (data.num_classes() < 10) throw std::runtime_error("aug_bench: need at least 10 classes");
  const RecombinationRate alpha(0.25);
  std::vector<BenchRow> out;
  using clock = std::chrono::steady_clock;
  for (int k : {1, 2, 4, 6, 8, 10}) {
    SplitRng rng(derive_seed(cfg.seed, streams::kBench, static_cast<std::uint64_t>(k)));
    // 10-way k-shot support batch.
    EmbeddingBatch<Scalar> emb;
    PixelBatch<Scalar> pix;
    pix.height = cfg.vit.image_height;
    pix.width = cfg.vit.image_width;
    std::vector<int> classes = rng.sample_without_replacement(data.num_classes(), 10);
    for (int label = 0; label < 10; ++label) {
      const auto& pool = data.class_samples[static_cast<std::size_t>(classes[static_cast<std::size_t>(label)])];
      if (static_cast<int>(pool.size()) < k) throw std::runtime_error("aug_bench: class too small");
      std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(pool.size()), k);
      for (int i = 0; i < k; ++i) {
        const Image& img = data.images[static_cast<std::size_t>(pool[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])])];
        pix.images.push_back(to_chw<Scalar>(img));
        emb.arrays.push_back(embed_patches<Scalar>(pix.images.back(), cfg.vit, weights));
        emb.labels.push_back(label);
      }
    }
    double rpr_total = 0.0, pixel_total = 0.0;
    for (int trial = 0; trial < n_trials; ++trial) {
      const auto t0 = clock::now();
      auto recombined = rpr_recombine(emb, alpha, derive_seed(cfg.seed, streams::kBench,
                                                              static_cast<std::uint64_t>(1000 + trial)));
      const auto t1 = clock::now();
      rpr_total += std::chrono::duration<double>(t1 - t0).count();
      if (recombined.arrays.size() != emb.arrays.size())
        throw std::logic_error("aug_bench: recombination changed batch size");
    }
    for (int trial = 0; trial < n_trials; ++trial) {
      SplitRng trng(derive_seed(cfg.seed, streams::kBench, static_cast<std::uint64_t>(5000 + trial)));
      const auto t0 = clock::now();
      PixelBatch<Scalar> copy = pix;
      pixel_augment_batch(copy, trng);
      const auto t1 = clock::now();
      pixel_total += std::chrono::duration<double>(t1 - t0).count();
      if (copy.images.size() != pix.images.size())
        throw std::logic_error("aug_bench: pixel augmentation changed batch size");
    }
    out.push_back({k, 10 * k, rpr_total / n_trials, pixel_total / n_trials});
  }
  return out;
}

}  // namespace mvp
