#include "mvp/episode.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

using mvp::MatrixX;
using mvp::SamplerSpec;
using mvp::VectorX;

namespace {

std::vector<std::vector<int>> synthetic_classes(int n_classes, int per_class) {
  std::vector<std::vector<int>> out;
  int next = 0;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<int> ids;
    for (int s = 0; s < per_class; ++s) ids.push_back(next++);
    out.push_back(std::move(ids));
  }
  return out;
}

}  // namespace

TEST_CASE("sampler: MAXWAY=5 locks the way to 5") {
  auto classes = synthetic_classes(8, 20);
  SamplerSpec spec{5, 3, 4};
  mvp::SplitRng rng(1);
  for (int i = 0; i < 50; ++i) {
    auto t = mvp::sample_episode<float>(classes, spec, rng);
    CHECK(t.way == 5);
    CHECK(t.shot >= 1);
    CHECK(t.shot <= 3);
  }
}

TEST_CASE("sampler: way and shot stay in their uniform ranges") {
  auto classes = synthetic_classes(12, 30);
  SamplerSpec spec{10, 10, 5};
  mvp::SplitRng rng(2);
  for (int i = 0; i < 200; ++i) {
    auto t = mvp::sample_episode<float>(classes, spec, rng);
    CHECK(t.way >= 5);
    CHECK(t.way <= 10);
    CHECK(t.shot >= 1);
    CHECK(t.shot <= 10);
    CHECK(static_cast<int>(t.class_ids.size()) == t.way);
    std::set<int> uniq(t.class_ids.begin(), t.class_ids.end());
    CHECK(static_cast<int>(uniq.size()) == t.way);
  }
}

TEST_CASE("sampler: support and query are disjoint, queries capped by availability") {
  auto classes = synthetic_classes(8, 7);
  SamplerSpec spec{8, 5, 10};  // 10 queries requested, at most 7 - shot available
  mvp::SplitRng rng(3);
  for (int i = 0; i < 100; ++i) {
    auto t = mvp::sample_episode<float>(classes, spec, rng);
    std::set<int> support_ids, query_ids;
    for (const auto& s : t.support) support_ids.insert(s.sample_id);
    for (const auto& q : t.query) query_ids.insert(q.sample_id);
    CHECK(support_ids.size() == t.support.size());
    CHECK(query_ids.size() == t.query.size());
    for (int id : query_ids) CHECK(support_ids.count(id) == 0);
    CHECK(t.support.size() == static_cast<std::size_t>(t.way * t.shot));
    // labels are a contiguous relabeling
    for (const auto& s : t.support) {
      CHECK(s.label >= 0);
      CHECK(s.label < t.way);
    }
  }
}

TEST_CASE("sampler: insufficient classes and samples are reported") {
  auto few = synthetic_classes(4, 10);
  SamplerSpec spec{5, 1, 1};
  mvp::SplitRng rng(4);
  CHECK_THROWS_WITH_AS(mvp::sample_episode<float>(few, spec, rng),
                       doctest::Contains("insufficient classes"), std::runtime_error);

  auto shallow = synthetic_classes(6, 2);
  SamplerSpec deep{6, 5, 1};
  bool saw_insufficient = false;
  for (int i = 0; i < 50 && !saw_insufficient; ++i) {
    try {
      (void)mvp::sample_episode<float>(shallow, deep, rng);
    } catch (const std::runtime_error& e) {
      saw_insufficient = std::string(e.what()).find("insufficient samples in class") != std::string::npos;
    }
  }
  CHECK(saw_insufficient);
}

TEST_CASE("sampler: episode dump line format") {
  auto classes = synthetic_classes(6, 10);
  SamplerSpec spec{5, 1, 2};
  mvp::SplitRng rng(5);
  auto t = mvp::sample_episode<float>(classes, spec, rng);
  auto line = mvp::format_episode_line(3, t);
  CHECK(line.substr(0, 6) == "3, 5, ");
  CHECK(std::count(line.begin(), line.end(), ',') == 5);
}

TEST_CASE("prototypes: means, counts, and permutation stability") {
  MatrixX<double> f(3, 2);
  f << 1.0, 2.0,  // class 0
      3.0, 4.0,   // class 1
      5.0, 8.0;   // class 1
  auto protos = mvp::compute_prototypes<double>(f, {0, 1, 1}, {10, 20, 30});
  CHECK(protos.way() == 2);
  CHECK(protos.counts[0] == 1);
  CHECK(protos.counts[1] == 2);
  CHECK(protos.prototypes(0, 0) == 1.0);  // single support: the feature itself
  CHECK(protos.prototypes(1, 0) == 4.0);  // (3+5)/2
  CHECK(protos.prototypes(1, 1) == 6.0);  // (4+8)/2

  // permuting rows (with their ids) leaves prototypes bit-identical
  MatrixX<float> g(4, 3);
  mvp::SplitRng rng(6);
  g = mvp_test::random_matrix<float>(rng, 4, 3);
  std::vector<int> labels = {1, 0, 1, 0}, ids = {7, 3, 5, 11};
  auto a = mvp::compute_prototypes<float>(g, labels, ids);
  MatrixX<float> gp(4, 3);
  const int perm[4] = {2, 0, 3, 1};
  std::vector<int> labels_p(4), ids_p(4);
  for (int i = 0; i < 4; ++i) {
    gp.row(i) = g.row(perm[i]);
    labels_p[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[i])];
    ids_p[static_cast<std::size_t>(i)] = ids[static_cast<std::size_t>(perm[i])];
  }
  auto b = mvp::compute_prototypes<float>(gp, labels_p, ids_p);
  CHECK((a.prototypes.array() == b.prototypes.array()).all());

  CHECK_THROWS_WITH_AS((void)mvp::compute_prototypes<double>(f, {0, 2, 2}, {1, 2, 3}),
                       doctest::Contains("empty class"), std::runtime_error);
}

TEST_CASE("classify_query oracle cases") {
  // equidistant prototypes -> uniform probabilities
  mvp::PrototypeSet<double> protos;
  protos.prototypes = MatrixX<double>::Identity(3, 3);
  protos.counts = {1, 1, 1};
  VectorX<double> f(3);
  f << 1.0, 1.0, 1.0;
  auto p = mvp::classify_query<double>(f, protos);
  for (int c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(1.0 / 3).epsilon(1e-9));

  // f = mu_1, mu_2 orthogonal: distances 0 and 1, p(1) = 1/(1+e^-1)
  mvp::PrototypeSet<double> two;
  two.prototypes = MatrixX<double>::Zero(2, 2);
  two.prototypes(0, 0) = 1.0;
  two.prototypes(1, 1) = 1.0;
  two.counts = {1, 1};
  VectorX<double> q(2);
  q << 1.0, 0.0;
  auto p2 = mvp::classify_query<double>(q, two);
  CHECK(p2[0] == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(p2[1] == doctest::Approx(0.2689414214).epsilon(1e-9));
  CHECK(p2.sum() == doctest::Approx(1.0).epsilon(1e-9));

  // positive rescaling of the feature changes nothing
  auto p3 = mvp::classify_query<double>((q * 37.5).eval(), two);
  CHECK((p2 - p3).cwiseAbs().maxCoeff() < 1e-6);

  VectorX<double> zero = VectorX<double>::Zero(2);
  CHECK_THROWS_AS(mvp::classify_query<double>(zero, two), std::domain_error);
}

TEST_CASE("episode_loss oracle cases") {
  mvp::PrototypeSet<double> two;
  two.prototypes = MatrixX<double>::Zero(2, 2);
  two.prototypes(0, 0) = 1.0;
  two.prototypes(1, 1) = 1.0;
  two.counts = {1, 1};
  MatrixX<double> q(1, 2);
  q << 1.0, 0.0;
  const double loss1 = mvp::episode_loss<double>(q, {0}, two);
  CHECK(loss1 == doctest::Approx(0.3132616875).epsilon(1e-9));  // -ln 0.7310586

  two.counts = {5, 5};
  const double loss5 = mvp::episode_loss<double>(q, {0}, two);
  CHECK(loss5 == doctest::Approx(0.3132616875 / 5.0).epsilon(1e-9));

  // plain-NLL ablation drops the 1/|S_c| factor
  CHECK(mvp::episode_loss<double>(q, {0}, two, true) == doctest::Approx(0.3132616875).epsilon(1e-9));
}

TEST_CASE("per-query loss equals -(1/|S_c|) log p(true class)") {
  mvp::SplitRng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int way = 2 + static_cast<int>(rng.uniform_below(6));
    const int d = 3 + static_cast<int>(rng.uniform_below(8));
    mvp::PrototypeSet<double> protos;
    protos.prototypes = mvp_test::random_matrix<double>(rng, way, d);
    protos.counts.clear();
    for (int c = 0; c < way; ++c) protos.counts.push_back(1 + static_cast<int>(rng.uniform_below(5)));
    VectorX<double> f = mvp_test::random_matrix<double>(rng, d, 1).col(0);
    const int y = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(way)));
    MatrixX<double> q(1, d);
    q.row(0) = f.transpose();
    const double loss = mvp::episode_loss<double>(q, {y}, protos);
    const double p = mvp::classify_query<double>(f, protos)[y];
    const double expected = -std::log(p) / protos.counts[static_cast<std::size_t>(y)];
    CHECK(std::abs(loss - expected) < 1e-6);
  }
}

TEST_CASE("argmax of classify_query is the cosine-nearest prototype") {
  mvp::SplitRng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int way = 2 + static_cast<int>(rng.uniform_below(7));
    const int d = 3 + static_cast<int>(rng.uniform_below(8));
    mvp::PrototypeSet<double> protos;
    protos.prototypes = mvp_test::random_matrix<double>(rng, way, d);
    protos.counts.assign(static_cast<std::size_t>(way), 1);
    VectorX<double> f = mvp_test::random_matrix<double>(rng, d, 1).col(0);
    auto p = mvp::classify_query<double>(f, protos);
    Eigen::Index argmax;
    p.maxCoeff(&argmax);
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < way; ++c) {
      const double dist = mvp::cosine_distance<double>(f, protos.prototypes.row(c).transpose());
      if (dist < best) {
        best = dist;
        nearest = c;
      }
    }
    CHECK(static_cast<int>(argmax) == nearest);
  }
}

TEST_CASE("loss strictly decreases as p(true class) increases") {
  // Move the query feature toward the true prototype along the cosine angle;
  // everything else fixed.
  mvp::PrototypeSet<double> protos;
  protos.prototypes = MatrixX<double>::Zero(3, 3);
  protos.prototypes(0, 0) = 1.0;
  protos.prototypes(1, 1) = 1.0;
  protos.prototypes(2, 2) = 1.0;
  protos.counts = {2, 2, 2};
  double prev_loss = std::numeric_limits<double>::infinity();
  double prev_p = -1.0;
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    VectorX<double> f(3);
    f << t, 1.0 - t, 0.2;  // larger t = closer to class 0
    MatrixX<double> q(1, 3);
    q.row(0) = f.transpose();
    const double p = mvp::classify_query<double>(f, protos)[0];
    const double loss = mvp::episode_loss<double>(q, {0}, protos);
    CHECK(p > prev_p);
    CHECK(loss < prev_loss);
    prev_p = p;
    prev_loss = loss;
  }
}

TEST_CASE("tape loss head agrees with the numeric loss") {
  mvp::SplitRng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int way = 2 + static_cast<int>(rng.uniform_below(4));
    const int shot = 1 + static_cast<int>(rng.uniform_below(3));
    const int d = 4 + static_cast<int>(rng.uniform_below(6));
    MatrixX<double> sup = mvp_test::random_matrix<double>(rng, way * shot, d);
    MatrixX<double> qry = mvp_test::random_matrix<double>(rng, way, d);
    std::vector<int> slab, qlab;
    for (int c = 0; c < way; ++c) {
      for (int s = 0; s < shot; ++s) slab.push_back(c);
      qlab.push_back(c);
    }
    mvp::Tape<double> t;
    std::vector<mvp::Var<double>> sf, qf;
    for (Eigen::Index i = 0; i < sup.rows(); ++i) sf.push_back(t.constant(sup.row(i)));
    for (Eigen::Index i = 0; i < qry.rows(); ++i) qf.push_back(t.constant(qry.row(i)));
    const double tape_loss = t.val(mvp::episode_loss_graph(t, sf, slab, qf, qlab, way))(0, 0);
    auto protos = mvp::compute_prototypes<double>(sup, slab);
    const double numeric = mvp::episode_loss<double>(qry, qlab, protos);
    CHECK(std::abs(tape_loss - numeric) < 1e-9);
  }
}
