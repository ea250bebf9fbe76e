#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>
#include <set>

#include "bcd/objective.hpp"
#include "oracles.hpp"

using namespace bcd;

namespace {

std::vector<int> repeated_labels(std::size_t ids, std::size_t per_id) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < ids; ++i)
    for (std::size_t j = 0; j < per_id; ++j) labels.push_back(static_cast<int>(i) * 10 + 3);
  return labels;
}

}  // namespace

TEST(SamplePk, DefaultBatchHasSixIdentitiesOfEight) {
  const auto index = IdentityIndex::build(repeated_labels(32, 16));
  Rng rng(1);
  const auto batch = sample_pk(index, 6, 8, rng);
  EXPECT_EQ(batch.size(), 48u);
  std::map<int, int> per_id;
  for (std::size_t i = 0; i < batch.size(); ++i) ++per_id[batch.identities[i]];
  EXPECT_EQ(per_id.size(), 6u);
  for (auto [id, n] : per_id) EXPECT_EQ(n, 8);
  EXPECT_EQ(std::set<std::size_t>(batch.samples.begin(), batch.samples.end()).size(), 48u);
}

TEST(SamplePk, ExhaustiveCaseIsTheWholeDataset) {
  const std::vector<int> labels{5, 5, 9, 9};
  const auto index = IdentityIndex::build(labels);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = sample_pk(index, 2, 2, rng);
    EXPECT_EQ(std::set<std::size_t>(batch.samples.begin(), batch.samples.end()), (std::set<std::size_t>{0, 1, 2, 3}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(batch.identities[i], labels[batch.samples[i]]);
  }
}

TEST(SamplePk, SmallIdentitiesSampleWithReplacement) {
  const auto index = IdentityIndex::build({1, 1, 2, 2, 2});
  Rng rng(3);
  const auto batch = sample_pk(index, 2, 5, rng);
  EXPECT_EQ(batch.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto s = batch.samples[i];
    EXPECT_TRUE(batch.identities[i] == 1 ? s <= 1 : (s >= 2 && s <= 4)) << s;
  }
}

TEST(SamplePk, SeedFixesBatchSequence) {
  const auto index = IdentityIndex::build(repeated_labels(10, 5));
  Rng a(7), b(7);
  for (int step = 0; step < 10; ++step) {
    const auto x = sample_pk(index, 4, 3, a), y = sample_pk(index, 4, 3, b);
    EXPECT_EQ(x.samples, y.samples);
    EXPECT_EQ(x.identities, y.identities);
  }
}

TEST(SamplePk, Errors) {
  const auto index = IdentityIndex::build({1, 2, 3});
  Rng rng(4);
  EXPECT_THROW(sample_pk(index, 4, 2, rng), ConfigError);
  EXPECT_THROW(sample_pk(index, 0, 2, rng), ConfigError);
}

TEST(CrossEntropy, UniformLogitsGiveLogJ) {
  EXPECT_NEAR(cross_entropy_part(Tensor::zeros({3, 10}), {0, 4, 9}).item(), 2.302585092994046, 1e-12);
}

TEST(CrossEntropy, SaturatedTrueClassApproachesZero) {
  Tensor logits({1, 3}, {200.0, 0.0, 0.0});
  EXPECT_LT(cross_entropy_part(logits, {0}).item(), 1e-80);
}

TEST(CrossEntropy, MatchesOracle) {
  oracle::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = oracle::pick(rng, 1, 6), j = oracle::pick(rng, 2, 8);
    Tensor logits = oracle::random_tensor({n, j}, rng, -4.0, 4.0);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(oracle::pick(rng, 0, j - 1));
    EXPECT_NEAR(cross_entropy_part(logits, labels).item(), oracle::cross_entropy(logits.vec(), n, j, labels), 1e-12);
  }
  EXPECT_THROW(cross_entropy_part(Tensor::zeros({1, 3}), {3}), ContractViolation);
}

TEST(Triplet, AllEqualEmbeddingsGiveMargin) {
  EXPECT_NEAR(batch_hard_triplet(Tensor::full({6, 4}, 0.3), repeated_labels(3, 2), 0.20).item(), 0.20, 1e-12);
}

TEST(Triplet, SeparatedClustersGiveZero) {
  std::vector<double> v(6 * 3, 0.0);
  for (std::size_t i = 0; i < 6; ++i) v[i * 3 + i / 2] = 1.0 + static_cast<double>(i % 2);
  EXPECT_EQ(batch_hard_triplet(Tensor({6, 3}, v), repeated_labels(3, 2), 0.20).item(), 0.0);
}

TEST(Triplet, MatchesExhaustiveOracle) {
  oracle::Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = oracle::pick(rng, 2, 4), a = oracle::pick(rng, 1, 3), d = oracle::pick(rng, 2, 6);
    const auto labels = repeated_labels(p, a);
    Tensor h = oracle::random_tensor({p * a, d}, rng);
    EXPECT_NEAR(batch_hard_triplet(h, labels, 0.2).item(), oracle::triplet(h.vec(), p * a, d, labels, 0.2), 1e-12);
  }
}

TEST(Triplet, ScaleInvariance) {
  oracle::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto labels = repeated_labels(3, 2);
    Tensor h = oracle::random_tensor({6, 5}, rng);
    auto scaled = h.vec();
    for (std::size_t i = 0; i < 6; ++i) {
      const double s = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
      for (std::size_t k = 0; k < 5; ++k) scaled[i * 5 + k] *= s;
    }
    // exact up to the norm guard: each distance moves by at most eps / (|a||b|)
    double min_norm = 1e300;
    for (const std::vector<double>* m : std::array<const std::vector<double>*, 2>{&h.vec(), &scaled})
      for (std::size_t i = 0; i < 6; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 5; ++k) s += (*m)[i * 5 + k] * (*m)[i * 5 + k];
        min_norm = std::min(min_norm, std::sqrt(s));
      }
    const double tol = 4.0 * 1e-12 / (min_norm * min_norm) + 1e-14;
    EXPECT_NEAR(batch_hard_triplet(h, labels, 0.2).item(), batch_hard_triplet(Tensor({6, 5}, scaled), labels, 0.2).item(),
                tol);
  }
}

TEST(Triplet, SingleIdentityIsConfigError) {
  EXPECT_THROW(batch_hard_triplet(Tensor::full({3, 2}, 1.0), {4, 4, 4}, 0.2), ConfigError);
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
  oracle::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto labels = repeated_labels(3, 2);
    Tensor h = oracle::random_tensor({6, 4}, rng);
    EXPECT_LT(grad_check([&](const Tensor& x) { return batch_hard_triplet(x, labels, 0.2); }, h, 1e-5), 1e-6);
  }
}

namespace {

LossTerms random_terms(oracle::Rng& rng, std::size_t k) {
  auto scalar = [&rng] { return Tensor::scalar(std::uniform_real_distribution<double>(0.0, 3.0)(rng)); };
  LossTerms t;
  for (std::size_t i = 0; i < k; ++i) {
    t.id.push_back(scalar());
    t.bcca.push_back(scalar());
    t.part_reg.push_back(scalar());
    t.stripe_id.push_back(scalar());
  }
  t.triplet = scalar();
  t.holistic_reg = scalar();
  return t;
}

double sum_of(const std::vector<Tensor>& v) {
  double s = 0.0;
  for (const auto& t : v) s += t.item();
  return s;
}

}  // namespace

TEST(TotalLoss, BaselineIsIdentityPlusTriplet) {
  oracle::Rng rng(9);
  const auto terms = random_terms(rng, 6);
  LossWeights w;
  w.bcca_loss = w.part_reg = w.holistic_reg = w.stripe_subnets = false;
  EXPECT_NEAR(total_loss(terms, w).item(), sum_of(terms.id) + terms.triplet.item(), 1e-12);
}

TEST(TotalLoss, ZeroWeightsMatchTogglesOff) {
  oracle::Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto terms = random_terms(rng, 6);
    LossWeights zero, off;
    zero.lambda1 = zero.lambda2 = 0.0;
    off.bcca_loss = off.part_reg = off.holistic_reg = false;
    EXPECT_NEAR(total_loss(terms, zero).item(), total_loss(terms, off).item(), 1e-15);
  }
}

TEST(TotalLoss, EqualsManualSumAndIsAdditive) {
  oracle::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto terms = random_terms(rng, 4);
    LossWeights w;
    w.lambda1 = 0.7;
    w.lambda2 = 1.3;
    LossValues values;
    const double full = total_loss(terms, w, &values).item();
    const double manual = sum_of(terms.id) + terms.triplet.item() + 0.7 * sum_of(terms.bcca) +
                          1.3 * (terms.holistic_reg.item() + sum_of(terms.part_reg)) + sum_of(terms.stripe_id);
    EXPECT_NEAR(full, manual, 1e-12);
    EXPECT_NEAR(values.total, full, 1e-15);

    auto without = w;
    without.bcca_loss = false;
    EXPECT_NEAR(full - total_loss(terms, without).item(), 0.7 * sum_of(terms.bcca), 1e-12);
    without = w;
    without.part_reg = false;
    EXPECT_NEAR(full - total_loss(terms, without).item(), 1.3 * sum_of(terms.part_reg), 1e-12);
    without = w;
    without.holistic_reg = false;
    EXPECT_NEAR(full - total_loss(terms, without).item(), 1.3 * terms.holistic_reg.item(), 1e-12);
    without = w;
    without.stripe_subnets = false;
    EXPECT_NEAR(full - total_loss(terms, without).item(), sum_of(terms.stripe_id), 1e-12);
  }
}

TEST(Sgd, HandComputedStep) {
  std::vector<double> x{1.0}, v{0.0};
  const std::vector<double> g{2.0};
  sgd_step(x, g, v, SgdSettings{0.1, 0.0, 0.0});
  EXPECT_NEAR(x[0], 0.8, 1e-15);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  std::vector<double> x{0.3, -1.2}, v{0.0, 0.0};
  sgd_step(x, std::vector<double>{0.0, 0.0}, v, SgdSettings{0.5, 0.9, 0.0});
  EXPECT_EQ(x, (std::vector<double>{0.3, -1.2}));
  EXPECT_THROW(sgd_step(x, std::vector<double>{0.0, 0.0}, v, SgdSettings{0.0, 0.9, 0.0}), ContractViolation);
}

TEST(Sgd, ConvexQuadraticConverges) {
  // f(x) = sum_i c_i x_i^2 with curvatures in [0.5, 2].
  const std::vector<double> c{0.5, 1.0, 2.0};
  for (double momentum : {0.0, 0.9}) {
    Tensor x({3}, {1.0, -2.0, 0.5}, true);
    ParamList list;
    list.add("x", x);
    Sgd opt(SgdSettings{0.05, momentum, 0.0});
    std::vector<double> history;
    for (int step = 0; step < 200; ++step) {
      list.zero_grad();
      Tensor f = sum(mul(mul(x, x), Tensor({3}, c)));
      history.push_back(f.item());
      backward(f);
      opt.step(list);
    }
    EXPECT_LT(history.back(), 1e-6 * history.front()) << momentum;
    if (momentum == 0.0)
      for (std::size_t i = 10; i < 200; ++i) EXPECT_LT(history[i], history[i - 1]);
    else
      for (std::size_t i = 150; i < 200; ++i) EXPECT_LE(history[i], history[100]);
  }
}
