#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "spa/error.hpp"
#include "spa/objective.hpp"
#include "toy.hpp"

namespace spa {
namespace {

// Exhaustive search in lexicographic permutation order; the first strict
// minimum is the lexicographically smallest optimum.
std::vector<std::size_t> brute_assignment(const std::vector<double>& cost, std::size_t k) {
  std::vector<std::size_t> perm(k), best;
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < k; ++r) c += cost[r * k + perm[r]];
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Independent chamfer: all pairs, mean convention.
double brute_chamfer(const PartCloud& a, const PartCloud& b) {
  auto dir = [](const PartCloud& x, const PartCloud& y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < y.rows(); ++j) m = std::min(m, (x.row(i) - y.row(j)).squaredNorm());
      s += m;
    }
    return s / static_cast<double>(x.rows());
  };
  return dir(a, b) + dir(b, a);
}

PartCloud place(const Pose& p, const PartCloud& c) {
  PartCloud out(c.rows(), 3);
  const Eigen::Matrix3d r = p.rotation.toRotationMatrix();
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    out.row(i) = (r * c.row(i).transpose() + p.translation).transpose();
  }
  return out;
}

Pose negated(const Pose& p) {
  Pose q = p;
  q.rotation.coeffs() = -p.rotation.coeffs();
  return q;
}

TEST(Assignment, MatchesBruteForceOn200Groups) {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> size(1, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = size(rng);
    std::vector<double> cost(k * k);
    for (double& c : cost) c = u(rng);
    EXPECT_EQ(solve_assignment(cost, k), brute_assignment(cost, k)) << "trial " << trial;
  }
}

TEST(Assignment, TiesResolveToSmallestPermutation) {
  EXPECT_EQ(solve_assignment(std::vector<double>(9, 0.0), 3), (std::vector<std::size_t>{0, 1, 2}));
  // Two optima: (1,0,2) and (2,0,1) both cost 0; pick the smaller.
  std::vector<double> cost = {1, 0, 0,
                              0, 1, 1,
                              1, 0, 0};
  EXPECT_EQ(solve_assignment(cost, 3), (std::vector<std::size_t>{1, 0, 2}));
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> small(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 4;
    std::vector<double> c(k * k);
    for (double& v : c) v = small(rng);
    EXPECT_EQ(solve_assignment(c, k), brute_assignment(c, k));
  }
}

TEST(Assignment, RejectsBadInput) {
  EXPECT_THROW(solve_assignment(std::vector<double>(5), 2), ShapeError);
  EXPECT_TRUE(solve_assignment({}, 0).empty());
}

TEST(MatchGroups, SingletonsGiveIdentity) {
  std::mt19937_64 rng(43);
  std::vector<PartCloud> parts;
  std::vector<Pose> pred, gt;
  for (int i = 0; i < 4; ++i) {
    parts.push_back(toy::box_surface(0.2 + 0.1 * i, 0.1, 0.05, 4));
    pred.push_back(toy::random_pose(rng));
    gt.push_back(toy::random_pose(rng));
  }
  const auto g = SymmetryGrouping::FromIds({1, 2, 3, 4});
  EXPECT_EQ(match_groups(pred, parts, gt, g), Matching::Identity(4));
}

TEST(MatchGroups, RecoversPermutedLegs) {
  const toy::Assembly t = toy::table();
  std::mt19937_64 rng(44);
  std::vector<std::size_t> legs = {1, 2, 3, 4};
  for (int trial = 0; trial < 24; ++trial) {
    std::shuffle(legs.begin(), legs.end(), rng);
    std::vector<Pose> pred = t.gt;
    for (std::size_t k = 0; k < 4; ++k) pred[1 + k] = t.gt[legs[k]];
    const Matching m = match_groups(pred, t.parts, t.gt, t.grouping);
    EXPECT_EQ(m.gt_of[0], 0u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(m.gt_of[1 + k], legs[k]);
    EXPECT_LT(total_loss(pred, t.gt, t.parts, t.grouping, {}), 1e-9);
  }
}

TEST(MatchGroups, MatchesBruteForceOverPlacedClouds) {
  std::mt19937_64 rng(45);
  const PartCloud leg = toy::box_surface(0.1, 0.4, 0.06, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 5;
    std::vector<PartCloud> parts(k, leg);
    std::vector<Pose> pred, gt;
    for (std::size_t i = 0; i < k; ++i) {
      pred.push_back(toy::random_pose(rng));
      gt.push_back(toy::random_pose(rng));
    }
    std::vector<double> cost(k * k);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) cost[a * k + b] = brute_chamfer(place(pred[a], leg), place(gt[b], leg));
    }
    const auto expect = brute_assignment(cost, k);
    const Matching m = match_groups(pred, parts, gt, SymmetryGrouping::FromIds({1, 1, 1, 1, 1}));
    EXPECT_EQ(m.gt_of, expect);
  }
}

TEST(MatchGroups, NeverWorseThanIdentity) {
  std::mt19937_64 rng(46);
  const toy::Assembly t = toy::table();
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Pose> pred;
    for (std::size_t i = 0; i < t.gt.size(); ++i) pred.push_back(toy::random_pose(rng, 0.3));
    const double matched = total_loss(pred, t.gt, t.parts, t.grouping, {});
    const double identity =
        total_loss(pred, t.gt, t.parts, SymmetryGrouping::FromIds({1, 2, 3, 4, 5}), {});
    EXPECT_LE(matched, identity + 1e-12);
  }
}

TEST(Losses, TranslationExamples) {
  std::vector<Pose> gt = {toy::translation(0, 0, 0), toy::translation(1, 1, 1)};
  EXPECT_EQ(loss_translation(gt, gt), 0.0);
  std::vector<Pose> one = gt;
  one[0].translation.x() += 1.0;
  EXPECT_DOUBLE_EQ(loss_translation(one, gt), 1.0);
  std::vector<Pose> two = one;
  two[1].translation.y() += 2.0;
  EXPECT_DOUBLE_EQ(loss_translation(two, gt), 5.0);
}

TEST(Losses, RotationExamples) {
  std::mt19937_64 rng(47);
  const PartCloud part = toy::box_surface(0.5, 0.2, 0.1, 5);
  std::vector<PartCloud> parts = {part};
  std::vector<Pose> gt = {toy::random_pose(rng)};
  EXPECT_EQ(loss_rotation(gt, gt, parts), 0.0);
  std::vector<Pose> flipped = {negated(gt[0])};
  EXPECT_LT(loss_rotation(flipped, gt, parts), 1e-20);

  // Thin bar along x: a half turn about x maps the sampled bar onto itself.
  const PartCloud bar = toy::box_surface(1.0, 0.05, 0.05, 9);
  std::vector<PartCloud> bars = {bar};
  std::vector<Pose> id = {Pose::Identity()};
  Pose about_long = Pose::Identity();
  about_long.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitX()));
  Pose about_perp = Pose::Identity();
  about_perp.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitY()));
  EXPECT_LT(loss_rotation(std::vector<Pose>{about_long}, id, bars), 1e-12);
  EXPECT_GT(loss_rotation(std::vector<Pose>{about_perp}, id, bars), 0.1);
  // Translations do not enter the rotation-only term.
  std::vector<Pose> moved = id;
  moved[0].translation = Eigen::Vector3d(3, 0, 0);
  EXPECT_EQ(loss_rotation(moved, id, bars), 0.0);
  EXPECT_GT(loss_rotation(moved, id, bars, RotationLoss::kFullPose), 1.0);
}

TEST(Losses, ShapeExamples) {
  const toy::Assembly t = toy::table();
  EXPECT_EQ(loss_shape(t.gt, t.gt, t.parts), 0.0);
  std::vector<Pose> swapped = t.gt;
  std::swap(swapped[1], swapped[3]);
  EXPECT_EQ(loss_shape(swapped, t.gt, t.parts), 0.0);

  std::vector<Pose> shifted = t.gt;
  std::vector<PartCloud> a, b;
  for (std::size_t i = 0; i < t.parts.size(); ++i) {
    shifted[i].translation.x() += 1.0;
    a.push_back(place(shifted[i], t.parts[i]));
    b.push_back(place(t.gt[i], t.parts[i]));
  }
  EXPECT_NEAR(loss_shape(shifted, t.gt, t.parts), brute_chamfer(concat_clouds(a), concat_clouds(b)),
              1e-9);
}

TEST(Losses, TotalLossComponents) {
  std::mt19937_64 rng(48);
  std::vector<PartCloud> parts = {toy::box_surface(0.6, 0.2, 0.1, 5),
                                  toy::box_surface(0.3, 0.25, 0.05, 5)};
  std::vector<Pose> gt = {toy::random_pose(rng), toy::random_pose(rng)};
  std::vector<Pose> pred = {toy::random_pose(rng), toy::random_pose(rng)};
  const auto g = SymmetryGrouping::FromIds({1, 2});
  EXPECT_EQ(total_loss(gt, gt, parts, g, {}), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(pred, gt, parts, g, {0, 0, 1}), loss_shape(pred, gt, parts));

  double lt = 0.0, lr = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    lt += (pred[i].translation - gt[i].translation).squaredNorm();
    Pose pr = pred[i], gr = gt[i];
    pr.translation.setZero();
    gr.translation.setZero();
    lr += brute_chamfer(place(pr, parts[i]), place(gr, parts[i]));
  }
  const double ls = brute_chamfer(concat_clouds(std::vector<PartCloud>{place(pred[0], parts[0]), place(pred[1], parts[1])}),
                                  concat_clouds(std::vector<PartCloud>{place(gt[0], parts[0]), place(gt[1], parts[1])}));
  EXPECT_NEAR(total_loss(pred, gt, parts, g, {}), lt + 10.0 * lr + ls, 1e-9);
}

TEST(Losses, InvariantToGroupRelabeling) {
  const toy::Assembly t = toy::table();
  std::mt19937_64 rng(49);
  std::vector<Pose> pred;
  for (std::size_t i = 0; i < t.gt.size(); ++i) pred.push_back(toy::random_pose(rng, 0.3));
  std::vector<Pose> relabeled = t.gt;
  std::swap(relabeled[1], relabeled[4]);
  std::swap(relabeled[2], relabeled[3]);
  EXPECT_NEAR(total_loss(pred, t.gt, t.parts, t.grouping, {}),
              total_loss(pred, relabeled, t.parts, t.grouping, {}), 1e-12);
}

TEST(Losses, GraphAgreesWithValues) {
  std::mt19937_64 rng(50);
  const toy::Assembly t = toy::table();
  for (RotationLoss mode : {RotationLoss::kRotationOnly, RotationLoss::kFullPose}) {
    std::vector<Pose> pred;
    for (std::size_t i = 0; i < t.gt.size(); ++i) pred.push_back(toy::random_pose(rng, 0.3));
    std::vector<double> q, tr;
    for (const Pose& p : pred) {
      for (double v : p.Wxyz()) q.push_back(v);
      for (int k = 0; k < 3; ++k) tr.push_back(p.translation[k]);
    }
    nn::Graph g;
    PoseVars vars{g.constant(nn::Tensor({pred.size(), 4}, q)),
                  g.constant(nn::Tensor({pred.size(), 3}, tr))};
    const Matching m = match_groups(pred, t.parts, t.gt, t.grouping);
    const LossTerms terms = object_loss(g, vars, t.parts, t.gt, m, {}, mode);
    EXPECT_NEAR(terms.total.item(), total_loss(pred, t.gt, t.parts, t.grouping, {}, mode), 1e-9);
    EXPECT_NEAR(terms.shape.item(), loss_shape(pred, t.gt, t.parts), 1e-9);
  }
}

ModelConfig toy_model() {
  ModelConfig c;
  c.d = 8;
  c.layers = 1;
  c.heads = 2;
  c.n_max = 4;
  c.m_max = 4;
  c.encoder.points = 6;
  c.encoder.hidden = {6};
  c.encoder.width = 6;
  return c;
}

TrainSample toy_sample(std::mt19937_64& rng, std::size_t points, const std::string& id) {
  // Two identical pegs and a plate.
  TrainSample s;
  s.id = id;
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  PartCloud peg(static_cast<Eigen::Index>(points), 3), plate(static_cast<Eigen::Index>(points), 3);
  for (Eigen::Index i = 0; i < peg.rows(); ++i) {
    peg.row(i) << 4 * u(rng), u(rng), 0.5 * u(rng);
    plate.row(i) << 6 * u(rng), 4 * u(rng), 0.2 * u(rng);
  }
  s.input.clouds = {peg, peg, plate};
  s.input.group_ids = {1, 1, 2};
  s.grouping = SymmetryGrouping::FromIds({1, 1, 2});
  s.gt = {toy::random_pose(rng, 0.3), toy::random_pose(rng, 0.3), toy::random_pose(rng, 0.3)};
  return s;
}

TEST(TotalLossGradient, MatchesFiniteDifferencesOnThreePartToy) {
  const ModelConfig c = toy_model();
  Model model(c, 51);
  std::mt19937_64 rng(51);
  const TrainSample s = toy_sample(rng, c.encoder.points, "toy");
  // Matching is a discrete choice: compute it once and hold it fixed.
  const Matching m = match_groups(model.predict(s.input, {}), s.input.clouds, s.gt, s.grouping);
  const double err = nn::grad_check_params(model.params(), [&](nn::Graph& g) {
    const PoseVars out = model.forward(g, s.input, {});
    return object_loss(g, out, s.input.clouds, s.gt, m, {}).total;
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Fit, OverfitsOneBatch) {
  ModelConfig c = toy_model();
  c.d = 16;
  c.encoder.points = 16;
  c.encoder.hidden = {16};
  c.encoder.width = 16;
  Model model(c, 52);
  std::mt19937_64 rng(52);
  std::vector<TrainSample> data;
  for (int i = 0; i < 4; ++i) data.push_back(toy_sample(rng, c.encoder.points, "o" + std::to_string(i)));
  std::vector<const TrainSample*> batch;
  for (const auto& s : data) batch.push_back(&s);
  TrainConfig tc;
  tc.lr = 1e-2;
  nn::AdamState state;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    nn::GradMap grads;
    const double loss = batch_gradient(model, batch, tc, grads);
    if (step == 0) first = loss;
    last = loss;
    nn::adam_step(model.params(), grads, state, {tc.lr, 0.9, 0.999, 1e-8});
  }
  EXPECT_LT(last, 0.5 * first) << "first " << first << " last " << last;
}

TEST(Fit, DeterministicAcrossRunsAndThreads) {
  const ModelConfig c = toy_model();
  std::mt19937_64 rng(53);
  std::vector<TrainSample> train, val;
  for (int i = 0; i < 5; ++i) train.push_back(toy_sample(rng, c.encoder.points, "t" + std::to_string(i)));
  for (int i = 0; i < 2; ++i) val.push_back(toy_sample(rng, c.encoder.points, "v" + std::to_string(i)));
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 2;
  tc.lr = 1e-3;
  tc.seed = 9;
  Model a(c, 9), b(c, 9), threaded(c, 9);
  const FitResult ra = fit(a, train, val, tc);
  const FitResult rb = fit(b, train, val, tc);
  tc.threads = 3;
  const FitResult rc = fit(threaded, train, val, tc);
  EXPECT_EQ(ra.history, rb.history);
  EXPECT_EQ(ra.history, rc.history);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_TRUE(a.params() == threaded.params());
  ASSERT_EQ(ra.history.size(), 3u);
  EXPECT_EQ(ra.history[0].lr, 1e-3);
}

TEST(Fit, RecordsScheduleAndKeepsBestEpoch) {
  const ModelConfig c = toy_model();
  std::mt19937_64 rng(54);
  std::vector<TrainSample> train = {toy_sample(rng, c.encoder.points, "a")};
  TrainConfig tc;
  tc.epochs = 5;
  tc.decay_every = 2;
  tc.decay = 0.5;
  tc.lr = 1e-3;
  Model m(c, 1);
  std::vector<EpochRecord> seen;
  const FitResult r = fit(m, train, {}, tc, [&](const EpochRecord& e) { seen.push_back(e); });
  EXPECT_EQ(seen, r.history);
  EXPECT_DOUBLE_EQ(r.history[2].lr, 5e-4);
  EXPECT_DOUBLE_EQ(r.history[4].lr, 2.5e-4);
  EXPECT_EQ(r.best_epoch, 4);  // no validation data: last epoch
  EXPECT_DOUBLE_EQ(nn::step_decay_lr(1.5e-4, 0.8, 80, 160), 1.5e-4 * 0.8 * 0.8);
}

TEST(Fit, NonFiniteLossNamesTheBatch) {
  const ModelConfig c = toy_model();
  std::mt19937_64 rng(55);
  std::vector<TrainSample> train = {toy_sample(rng, c.encoder.points, "bad-object")};
  Model m(c, 1);
  m.params().at("head.2.b").values()[4] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  try {
    fit(m, train, {}, tc);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad-object"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
  }
}

TEST(Fit, RejectsInvalidConfig) {
  TrainConfig tc;
  tc.batch = 0;
  EXPECT_THROW(tc.Validate(), ConfigError);
  tc = {};
  tc.loss.rotation = -1;
  EXPECT_THROW(tc.Validate(), ConfigError);
  EXPECT_THROW(rotation_loss_from_string("both"), ConfigError);
}

}  // namespace
}  // namespace spa
