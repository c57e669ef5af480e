#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "tfd/errors.hpp"
#include "tfd/grad_check.hpp"
#include "tfd/losses.hpp"

using namespace tfd;
using tfd::testing::random_tensor;

namespace {

double neg_log_softmax(const std::vector<double>& x, std::size_t k) {
  long double z = 0;
  const double m = *std::max_element(x.begin(), x.end());
  for (double v : x) z += std::exp(static_cast<long double>(v - m));
  return static_cast<double>(-(static_cast<long double>(x[k] - m) - std::log(z)));
}

ClipLabels change_labels(std::size_t frame, std::vector<LabeledBox> boxes) {
  ClipLabels l;
  l.state_change = true;
  l.pnr_frame = frame;
  l.boxes = std::move(boxes);
  return l;
}

ClipLabels two_boxes() {
  return change_labels(3, {{BoxClass::hand, {0.3, 0.4, 0.2, 0.25}},
                           {BoxClass::object, {0.6, 0.55, 0.3, 0.2}}});
}

std::vector<ScodQuery> random_queries(Graph& g, Rng& rng) {
  std::vector<ScodQuery> q;
  for (std::size_t i = 0; i < kScodQueries; ++i) {
    Tensor box({4});
    for (double& v : box.data()) v = rng.uniform(0.1, 0.9);
    q.push_back({g.constant(random_tensor({3}, rng, -2, 2)), g.constant(box)});
  }
  return q;
}

double hull_giou(const Box& a, const Box& b) {
  auto lo = [](double c, double s) { return c - s / 2; };
  auto hi = [](double c, double s) { return c + s / 2; };
  const double ix = std::max(0.0, std::min(hi(a.cx, a.w), hi(b.cx, b.w)) - std::max(lo(a.cx, a.w), lo(b.cx, b.w)));
  const double iy = std::max(0.0, std::min(hi(a.cy, a.h), hi(b.cy, b.h)) - std::max(lo(a.cy, a.h), lo(b.cy, b.h)));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double hx = std::max(hi(a.cx, a.w), hi(b.cx, b.w)) - std::min(lo(a.cx, a.w), lo(b.cx, b.w));
  const double hy = std::max(hi(a.cy, a.h), hi(b.cy, b.h)) - std::min(lo(a.cy, a.h), lo(b.cy, b.h));
  return inter / uni - (hx * hy - uni) / (hx * hy);
}

}  // namespace

TEST(OsccLoss, UniformLogitsGiveLn2) {
  Graph g;
  for (bool label : {true, false}) {
    EXPECT_NEAR(oscc_loss(g.constant(Tensor::vector({0, 0})), label).item(), std::log(2.0), 1e-12);
  }
}

TEST(OsccLoss, ConfidentCorrect) {
  Graph g;
  EXPECT_LE(oscc_loss(g.constant(Tensor::vector({20, -20})), true).item(), 1e-8);
  EXPECT_GE(oscc_loss(g.constant(Tensor::vector({20, -20})), false).item(), 39.0);
}

TEST(OsccLoss, MatchesScalarEvaluation) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const bool change = rng.bernoulli(0.5);
    Graph g;
    const double l = oscc_loss(g.constant(Tensor::vector({x[0], x[1]})), change).item();
    EXPECT_NEAR(l, neg_log_softmax(x, change ? kOsccChange : 1 - kOsccChange), 1e-12);
    EXPECT_GE(l, 0.0);
  }
}

TEST(PnrTarget, OneHotAndUniform) {
  PnrTarget t = make_pnr_target(change_labels(5, {}), 16);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t.dist[i], i == 5 ? 1.0 : 0.0);
  PnrTarget u = make_pnr_target(ClipLabels{}, 16);
  for (double v : u.dist.data()) EXPECT_EQ(v, 0.0625);
}

TEST(PnrTarget, FrameOutOfRangeIsLabelError) {
  EXPECT_THROW(make_pnr_target(change_labels(16, {}), 16), LabelError);
}

TEST(PnrTarget, SumsToOne) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = 2 + rng.below(30);
    ClipLabels l;
    if (rng.bernoulli(0.5)) l = change_labels(rng.below(T), {});
    PnrTarget t = make_pnr_target(l, T);
    double s = 0;
    for (double v : t.dist.data()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(PnrLoss, ZeroWhenDistributionsMatch) {
  Graph g;
  EXPECT_EQ(pnr_loss(g.constant(Tensor({16}, 0.0)), make_pnr_target(ClipLabels{}, 16)).item(), 0.0);
}

TEST(PnrLoss, OneHotReducesToNll) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    Tensor x = random_tensor({16}, rng, -5, 5);
    const std::size_t k = rng.below(16);
    Graph g;
    const double l = pnr_loss(g.constant(x), make_pnr_target(change_labels(k, {}), 16)).item();
    EXPECT_NEAR(l, neg_log_softmax({x.data().begin(), x.data().end()}, k), 1e-12);
  }
}

TEST(PnrLoss, UniformTargetMatchesScalarEvaluation) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    Tensor x = random_tensor({16}, rng, -3, 3);
    std::vector<double> xs(x.data().begin(), x.data().end());
    long double kl = 0;
    for (std::size_t t = 0; t < 16; ++t) {
      const long double p = std::exp(-static_cast<long double>(neg_log_softmax(xs, t)));
      kl += (1.0L / 16) * std::log((1.0L / 16) / p);
    }
    Graph g;
    const double l = pnr_loss(g.constant(x), make_pnr_target(ClipLabels{}, 16)).item();
    EXPECT_NEAR(l, static_cast<double>(kl), 1e-12);
    EXPECT_GT(l, 0.0);
  }
}

TEST(Giou, Identical) {
  const Box b{0.4, 0.5, 0.2, 0.3};
  EXPECT_EQ(giou(b, b), 1.0);
  EXPECT_EQ(iou(b, b), 1.0);
  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const Box r{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(1e-3, 1), rng.uniform(1e-3, 1)};
    ASSERT_EQ(giou(r, r), 1.0);
    ASSERT_EQ(iou(r, r), 1.0);
  }
}

TEST(Giou, DisjointSquares) {
  const Box a{0.25, 0.25, 0.2, 0.2}, b{0.75, 0.75, 0.2, 0.2};
  const double hull = (0.85 - 0.15) * (0.85 - 0.15);
  const double uni = 0.04 + 0.04;
  EXPECT_EQ(iou(a, b), 0.0);
  EXPECT_NEAR(giou(a, b), -(hull - uni) / hull, 1e-15);
}

TEST(Giou, ConcentricHalfArea) {
  const Box outer{0.5, 0.5, 0.4, 0.4}, inner{0.5, 0.5, 0.4, 0.2};
  EXPECT_NEAR(iou(inner, outer), 0.5, 1e-15);
  EXPECT_NEAR(giou(inner, outer), 0.5, 1e-15);
}

TEST(Giou, DegenerateBoxIsDomainError) {
  EXPECT_THROW(giou(Box{0.5, 0.5, 0.0, 0.1}, Box{0.5, 0.5, 0.1, 0.1}), DomainError);
}

TEST(Giou, RangeSymmetryAndOracle) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Box a{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
    const Box b{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5)};
    const double v = giou(a, b);
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
    EXPECT_NEAR(v, giou(b, a), 1e-15);
    EXPECT_NEAR(v, hull_giou(a, b), 1e-12);
  }
}

TEST(Giou, DifferentiableMatchesValue) {
  Rng rng(8);
  const Box target{0.5, 0.45, 0.3, 0.2};
  for (int i = 0; i < 10; ++i) {
    const Box p{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
    Graph g;
    EXPECT_NEAR(giou(g.constant(Tensor::vector({p.cx, p.cy, p.w, p.h})), target).item(),
                giou(p, target), 1e-15);
  }
}

TEST(ScodLoss, PerfectPredictionIsNearZero) {
  const ClipLabels labels = two_boxes();
  Graph g;
  std::vector<ScodQuery> q;
  for (std::size_t i = 0; i < kScodQueries; ++i) {
    Tensor logits({3}, -30.0);
    Tensor box = Tensor::vector({0.5, 0.5, 0.1, 0.1});
    if (i == 2 || i == 5) {
      const LabeledBox& lb = labels.boxes[i == 2 ? 0 : 1];
      logits[static_cast<std::size_t>(lb.cls)] = 30.0;
      box = Tensor::vector({lb.box.cx, lb.box.cy, lb.box.w, lb.box.h});
    } else {
      logits[static_cast<std::size_t>(BoxClass::no_object)] = 30.0;
    }
    q.push_back({g.constant(logits), g.constant(box)});
  }
  Assignment match;
  EXPECT_LE(scod_loss(q, labels, nullptr, &match).item(), 1e-6);
  EXPECT_EQ(match.col_of(0), 2u);
  EXPECT_EQ(match.col_of(1), 5u);
}

TEST(ScodLoss, SingleBoxMatchesBruteForce) {
  Rng rng(10);
  for (int i = 0; i < 30; ++i) {
    Graph g;
    auto q = random_queries(g, rng);
    ClipLabels labels = change_labels(1, {{BoxClass::object, {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.2, 0.3}}});
    Assignment match;
    scod_loss(q, labels, nullptr, &match);
    const CostMatrix costs = scod_cost_matrix(q, labels);
    const Assignment oracle = brute_force_assign(costs);
    EXPECT_EQ(match.total_cost, oracle.total_cost);
    const double best = *std::min_element(costs.costs().begin(), costs.costs().end());
    EXPECT_EQ(costs.at(0, match.col_of(0)), best);
  }
}

TEST(ScodLoss, QueryPermutationInvariant) {
  Rng rng(12);
  for (int i = 0; i < 30; ++i) {
    Graph g;
    auto q = random_queries(g, rng);
    std::vector<std::size_t> perm(kScodQueries);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = perm.size() - 1; k > 0; --k) std::swap(perm[k], perm[rng.below(k + 1)]);
    std::vector<ScodQuery> qp;
    for (std::size_t k : perm) qp.push_back(q[k]);
    const ClipLabels labels = two_boxes();
    Assignment m, mp;
    const double a = scod_loss(q, labels, nullptr, &m).item();
    const double b = scod_loss(qp, labels, nullptr, &mp).item();
    EXPECT_NEAR(a, b, 1e-12);
    for (std::size_t r = 0; r < labels.boxes.size(); ++r) EXPECT_EQ(perm[mp.col_of(r)], m.col_of(r));
  }
}

TEST(ScodLoss, EmptyLabelsAreContractError) {
  Rng rng(1);
  Graph g;
  auto q = random_queries(g, rng);
  EXPECT_THROW(scod_loss(q, change_labels(1, {})), ContractError);
}

TEST(ScodLoss, GradCheckThroughFixedMatch) {
  Rng rng(14);
  std::vector<Tensor> logits, raw_boxes;
  for (std::size_t i = 0; i < kScodQueries; ++i) {
    logits.push_back(random_tensor({3}, rng, -2, 2));
    raw_boxes.push_back(random_tensor({4}, rng, -1, 1));
  }
  const ClipLabels labels = two_boxes();
  Assignment match;
  auto build = [&](Graph& g) {
    std::vector<ScodQuery> q;
    for (std::size_t i = 0; i < kScodQueries; ++i) {
      q.push_back({g.param(logits[i]), sigmoid(g.param(raw_boxes[i]))});
    }
    return q;
  };
  {
    Graph g;
    scod_loss(build(g), labels, nullptr, &match);
  }
  std::vector<GradCheckInput> in;
  for (std::size_t i = 0; i < kScodQueries; ++i) {
    in.push_back({"logits" + std::to_string(i), &logits[i]});
    in.push_back({"box" + std::to_string(i), &raw_boxes[i]});
  }
  auto rep = grad_check([&](Graph& g) { return scod_loss(build(g), labels, &match); }, in);
  EXPECT_TRUE(rep.all_passed()) << rep.max_rel_error();
}

TEST(JointLoss, UnitSigmaHalvesTheSum) {
  Graph g;
  std::array<std::optional<Var>, 3> l{g.constant(Tensor::scalar(1.5)), g.constant(Tensor::scalar(2.0)),
                                      g.constant(Tensor::scalar(4.0))};
  EXPECT_DOUBLE_EQ(joint_loss(l, g.constant(Tensor({3}, 0.0)), TaskSet{}).item(), 0.5 * 7.5);
}

TEST(JointLoss, SingleTask) {
  Graph g;
  std::array<std::optional<Var>, 3> l{g.constant(Tensor::scalar(2.0)), std::nullopt, std::nullopt};
  EXPECT_EQ(joint_loss(l, g.constant(Tensor({3}, 0.0)), TaskSet::parse("oscc")).item(), 1.0);
}

TEST(JointLoss, DisabledTasksContributeNothing) {
  Graph g;
  Tensor s = Tensor::vector({0.3, -0.7, 1.1});
  std::array<std::optional<Var>, 3> l{g.constant(Tensor::scalar(2.0)), g.constant(Tensor::scalar(3.0)),
                                      std::nullopt};
  const double v = joint_loss(l, g.constant(s), TaskSet::parse("oscc,pnr")).item();
  const double expect = std::exp(-0.3) / 2 * 2.0 + std::exp(0.7) / 2 * 3.0 + 0.5 * (0.3 - 0.7);
  EXPECT_NEAR(v, expect, 1e-15);
}

TEST(JointLoss, EqualsOriginalWeightingForm) {
  Rng rng(15);
  for (int i = 0; i < 20; ++i) {
    const std::array<double, 3> L{rng.uniform(0.1, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    const std::array<double, 3> sigma{rng.uniform(0.3, 3), rng.uniform(0.3, 3), rng.uniform(0.3, 3)};
    Graph g;
    std::array<std::optional<Var>, 3> l;
    Tensor s({3});
    double expect = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      l[k] = g.constant(Tensor::scalar(L[k]));
      s[k] = std::log(sigma[k] * sigma[k]);
      expect += L[k] / (2 * sigma[k] * sigma[k]) + std::log(sigma[k]);
    }
    EXPECT_NEAR(joint_loss(l, g.constant(s), TaskSet{}).item(), expect, 1e-12);
  }
}

TEST(JointLoss, StationaryPointIsTheLossValue) {
  Tensor s({3}, 0.0);
  s.set_requires_grad(true);
  const std::array<double, 3> L{1, 4, 9};
  for (int step = 0; step < 2000; ++step) {
    s.zero_grad();
    Graph g;
    std::array<std::optional<Var>, 3> l;
    for (std::size_t k = 0; k < 3; ++k) l[k] = g.constant(Tensor::scalar(L[k]));
    g.backward(joint_loss(l, g.param(s), TaskSet{}));
    for (std::size_t k = 0; k < 3; ++k) s[k] -= 0.1 * s.grad()[k];
  }
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(std::exp(s[k]), L[k], 0.01 * L[k]);
}
