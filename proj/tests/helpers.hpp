#pragma once

// Shared helpers for the test suites. The finite-difference machinery here is
// the independent oracle side of the gradient checks: it only ever consumes
// forward values.

#include "mvp/episode.hpp"
#include "mvp/prompt.hpp"
#include "mvp/rng.hpp"
#include "mvp/vit.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mvp_test {

template <typename Scalar>
mvp::MatrixX<Scalar> random_matrix(mvp::SplitRng& rng, int r, int c, double scale = 1.0) {
  mvp::MatrixX<Scalar> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = static_cast<Scalar>(rng.uniform_symmetric(scale));
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

template <typename To, typename From>
mvp::PromptBank<To> cast_bank(const mvp::PromptBank<From>& bank) {
  mvp::PromptBank<To> out;
  out.layers.reserve(bank.layers.size());
  for (const auto& m : bank.layers) out.layers.push_back(m.template cast<To>());
  return out;
}

template <typename To, typename From>
mvp::BackboneWeights<To> cast_backbone(const mvp::BackboneWeights<From>& w,
                                       const mvp::ViTConfig& cfg) {
  auto out = mvp::make_backbone_shell<To>(cfg);
  std::vector<To> flat;
  mvp::for_each_backbone_array(w, [&](const char*, const mvp::MatrixX<From>& m, mvp::ArrayKind) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(static_cast<To>(m(i, j)));
  });
  std::size_t k = 0;
  mvp::for_each_backbone_array(out, [&](const char*, mvp::MatrixX<To>& m, mvp::ArrayKind) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[k++];
  });
  return out;
}

// Episode loss of a prompt bank, forward only (the function the FD oracle
// differentiates).
template <typename Scalar>
Scalar episode_loss_value(const std::vector<mvp::MatrixX<Scalar>>& support_emb,
                          const std::vector<int>& support_labels,
                          const std::vector<mvp::MatrixX<Scalar>>& query_emb,
                          const std::vector<int>& query_labels, int way,
                          const mvp::PromptBank<Scalar>& bank,
                          const mvp::BackboneWeights<Scalar>& w, const mvp::ViTConfig& cfg,
                          bool plain_nll = false) {
  mvp::Tape<Scalar> t;
  auto prompts = mvp::watch_prompts(t, bank);
  std::vector<mvp::Var<Scalar>> sf, qf;
  for (const auto& e : support_emb) sf.push_back(mvp::cls_feature_graph(t, t.constant(e), prompts, w, cfg));
  for (const auto& e : query_emb) qf.push_back(mvp::cls_feature_graph(t, t.constant(e), prompts, w, cfg));
  return t.val(mvp::episode_loss_graph(t, sf, support_labels, qf, query_labels, way, plain_nll))(0, 0);
}

// Same computation with a backward sweep; returns loss and per-layer prompt
// gradients.
template <typename Scalar>
Scalar episode_loss_grads(const std::vector<mvp::MatrixX<Scalar>>& support_emb,
                          const std::vector<int>& support_labels,
                          const std::vector<mvp::MatrixX<Scalar>>& query_emb,
                          const std::vector<int>& query_labels, int way,
                          const mvp::PromptBank<Scalar>& bank,
                          const mvp::BackboneWeights<Scalar>& w, const mvp::ViTConfig& cfg,
                          std::vector<mvp::MatrixX<Scalar>>& grads, bool plain_nll = false) {
  mvp::Tape<Scalar> t;
  auto prompts = mvp::watch_prompts(t, bank);
  std::vector<mvp::Var<Scalar>> sf, qf;
  for (const auto& e : support_emb) sf.push_back(mvp::cls_feature_graph(t, t.constant(e), prompts, w, cfg));
  for (const auto& e : query_emb) qf.push_back(mvp::cls_feature_graph(t, t.constant(e), prompts, w, cfg));
  auto loss = mvp::episode_loss_graph(t, sf, support_labels, qf, query_labels, way, plain_nll);
  const Scalar v = t.val(loss)(0, 0);
  t.backward(loss);
  grads.clear();
  for (auto p : prompts) grads.push_back(t.grad(p));
  return v;
}

// Central differences of a bank-valued function, per prompt entry.
template <typename Scalar, typename F>
std::vector<mvp::MatrixX<Scalar>> fd_bank_gradient(const F& f, mvp::PromptBank<Scalar> bank,
                                                   Scalar h) {
  std::vector<mvp::MatrixX<Scalar>> grads;
  for (std::size_t l = 0; l < bank.layers.size(); ++l) {
    auto& m = bank.layers[l];
    mvp::MatrixX<Scalar> g(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const Scalar orig = m(i, j);
        m(i, j) = orig + h;
        const Scalar fp = f(bank);
        m(i, j) = orig - h;
        const Scalar fm = f(bank);
        m(i, j) = orig;
        g(i, j) = (fp - fm) / (Scalar(2) * h);
      }
    grads.push_back(std::move(g));
  }
  return grads;
}

// Worst |a-b| / max(1, |a|, |b|) across two gradient stacks.
template <typename A, typename B>
double max_bank_rel_err(const std::vector<A>& a, const std::vector<B>& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l)
    for (Eigen::Index i = 0; i < a[l].rows(); ++i)
      for (Eigen::Index j = 0; j < a[l].cols(); ++j)
        worst = std::max(worst, rel_err(static_cast<double>(a[l](i, j)),
                                        static_cast<double>(b[l](i, j))));
  return worst;
}

// Random toy episode directly in embedding space (no sampler, so the way can
// go below 5 for oracle cases).
template <typename Scalar>
struct ToyEpisode {
  std::vector<mvp::MatrixX<Scalar>> support_emb, query_emb;
  std::vector<int> support_labels, query_labels;
  int way = 0;
};

template <typename Scalar>
ToyEpisode<Scalar> random_toy_episode(mvp::SplitRng& rng, int way, int shot, int queries, int m,
                                      int d) {
  ToyEpisode<Scalar> ep;
  ep.way = way;
  for (int c = 0; c < way; ++c) {
    for (int s = 0; s < shot; ++s) {
      ep.support_emb.push_back(random_matrix<Scalar>(rng, m, d));
      ep.support_labels.push_back(c);
    }
    for (int q = 0; q < queries; ++q) {
      ep.query_emb.push_back(random_matrix<Scalar>(rng, m, d));
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

}  // namespace mvp_test
