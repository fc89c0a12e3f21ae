#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "spa/data.hpp"
#include "spa/error.hpp"

namespace spa {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spa_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthOptions small_options() {
  SynthOptions o;
  o.points = 300;
  return o;
}

TEST(Sequence, PatternsOnHandCentroids) {
  std::vector<Eigen::Vector3d> c = {{0, 0.55, 0}, {0.4, 0.25, 0.2}, {-0.4, 0.25, 0.2},
                                    {0.4, 0.25, -0.2}, {-0.4, 0.25, -0.2}};
  std::vector<std::array<double, 3>> e = {{1, 0.6, 0.05}, {0.5, 0.07, 0.05}, {0.5, 0.07, 0.05},
                                          {0.5, 0.07, 0.05}, {0.5, 0.07, 0.05}};
  // Keys 0.55, 0.85, 0.05, 0.45, -0.35.
  EXPECT_EQ(make_sequence(c, e, SequencePattern::kDiagonal, 0),
            (std::vector<std::size_t>{4, 2, 3, 0, 1}));
  EXPECT_EQ(make_sequence(c, e, SequencePattern::kBottomToTop, 0),
            (std::vector<std::size_t>{1, 2, 3, 4, 0}));
  EXPECT_EQ(make_sequence(c, e, SequencePattern::kTopToBottom, 0),
            (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(make_sequence(c, e, SequencePattern::kDescendingSize, 0),
            (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Sequence, BottomToTopReversesTopToBottom) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector3d> c(8);
    std::vector<std::array<double, 3>> e(8, {1, 1, 1});
    for (auto& v : c) v = Eigen::Vector3d(u(rng), u(rng), u(rng));
    auto up = make_sequence(c, e, SequencePattern::kBottomToTop, 0);
    auto down = make_sequence(c, e, SequencePattern::kTopToBottom, 0);
    std::reverse(down.begin(), down.end());
    EXPECT_EQ(up, down);
  }
}

TEST(Sequence, RandomIsSeededPermutation) {
  std::vector<Eigen::Vector3d> c(10, Eigen::Vector3d::Zero());
  std::vector<std::array<double, 3>> e(10, {1, 1, 1});
  const auto a = make_sequence(c, e, SequencePattern::kRandom, 5);
  EXPECT_EQ(a, make_sequence(c, e, SequencePattern::kRandom, 5));
  EXPECT_NE(a, make_sequence(c, e, SequencePattern::kRandom, 6));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 10u);
  // Equal keys keep the original order.
  EXPECT_EQ(make_sequence(c, e, SequencePattern::kDiagonal, 0),
            (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_THROW(pattern_from_string("spiral"), ConfigError);
  for (auto p : all_patterns()) EXPECT_EQ(pattern_from_string(to_string(p)), p);
}

TEST(Synth, TableBottomToTopPutsTopLast) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const AssemblyTask t = with_pattern(synth_object(ObjectKind::kTable, seed, small_options()),
                                        SequencePattern::kBottomToTop, 0);
    EXPECT_EQ(t.chain.back(), 0u) << "seed " << seed;  // the top is part 0
    EXPECT_GT(t.gt[0].translation.y(), 0.45);
  }
}

TEST(Synth, Deterministic) {
  const AssemblyTask a = synth_object(ObjectKind::kTable, 7, small_options());
  const AssemblyTask b = synth_object(ObjectKind::kTable, 7, small_options());
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == synth_object(ObjectKind::kTable, 8, small_options()));
}

class SynthKinds : public ::testing::TestWithParam<ObjectKind> {};

TEST_P(SynthKinds, TasksAreConsistent) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const AssemblyTask t = synth_object(GetParam(), seed, small_options());
    SCOPED_TRACE(t.id);
    EXPECT_NO_THROW(t.Validate());
    EXPECT_GE(t.size(), 4u);
    EXPECT_LE(t.size(), 16u);
    // Grouping from construction agrees with the extent-based algorithm.
    EXPECT_EQ(group_by_symmetry(t.parts), t.grouping);
    for (const PartCloud& p : t.parts) {
      EXPECT_EQ(p.rows(), 300);
      EXPECT_LT(p.colwise().mean().norm(), 1e-6);
    }
    // Ground truth is a metric fixed point.
    const ObjectMetrics m =
        evaluate_object(t.id, t.category, t.gt, t.gt, t.parts, t.grouping, t.contacts, {});
    EXPECT_EQ(m.scd, 0.0);
    EXPECT_EQ(m.pa, 1.0);
    EXPECT_EQ(m.ca, 1.0);
    EXPECT_EQ(m.sr, 1);
    EXPECT_FALSE(t.contacts.empty());
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, SynthKinds,
                         ::testing::Values(ObjectKind::kTable, ObjectKind::kChair, ObjectKind::kShelf),
                         [](const auto& info) { return to_string(info.param); });

TEST(Synth, TableTopTouchesEveryLegAndLegsAreApart) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const AssemblyTask t = synth_object(ObjectKind::kTable, seed);
    const auto& legs = t.grouping.members[1];  // group 2 holds the legs
    ASSERT_GE(legs.size(), 4u);
    for (std::size_t leg : legs) {
      bool touches_top = false;
      for (const Contact& c : t.contacts) {
        if (c.i == 0 && c.j == leg) touches_top = true;
        EXPECT_FALSE(std::count(legs.begin(), legs.end(), c.i) && std::count(legs.begin(), legs.end(), c.j));
      }
      EXPECT_TRUE(touches_top) << "seed " << seed << " leg " << leg;
    }
  }
}

TEST(Synth, DefaultResolution) {
  const AssemblyTask t = synth_object(ObjectKind::kChair, 3);
  for (const PartCloud& p : t.parts) EXPECT_EQ(p.rows(), 1000);
}

TEST(Split, SizesAndDeterminism) {
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) ids.push_back("obj_" + std::to_string(i));
  const SplitManifest s = make_split(ids, 1);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s, make_split(ids, 1));
  EXPECT_NE(s.train, make_split(ids, 2).train);
  std::set<std::string> all;
  for (const auto* v : {&s.train, &s.val, &s.test}) all.insert(v->begin(), v->end());
  EXPECT_EQ(all.size(), 100u);
  std::vector<std::string> dup = {"a", "a"};
  EXPECT_THROW(make_split(dup, 0), DataError);
}

TEST(DatasetIo, RoundTripWithSidecar) {
  Dataset d;
  d.tasks = synth_dataset("mixed", 6, 3, small_options());
  std::vector<std::string> ids;
  for (const auto& t : d.tasks) ids.push_back(t.id);
  d.split = make_split(ids, 3);
  const fs::path dir = temp_dir("roundtrip");
  save_dataset(d, dir);
  const Dataset back = load_dataset(dir);
  ASSERT_EQ(back.tasks.size(), d.tasks.size());
  for (std::size_t i = 0; i < d.tasks.size(); ++i) {
    EXPECT_TRUE(back.find(d.tasks[i].id) == d.tasks[i]) << d.tasks[i].id;
  }
  EXPECT_EQ(back.split, d.split);
  EXPECT_EQ(d.tasks[0].category, "table");
  EXPECT_EQ(d.tasks[1].category, "chair");
  EXPECT_EQ(d.tasks[2].category, "shelf");
}

TEST(DatasetIo, InlinePointsRoundTrip) {
  const AssemblyTask t = synth_object(ObjectKind::kShelf, 4, small_options());
  const AssemblyTask back = task_from_json(task_to_json(t, true));
  EXPECT_TRUE(back == t);
}

TEST(DatasetIo, MissingQuaternionNamesObject) {
  const AssemblyTask t = synth_object(ObjectKind::kTable, 5, small_options());
  nlohmann::json j = task_to_json(t, true);
  j["parts"][1].erase("gt_q");
  try {
    task_from_json(j);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(t.id), std::string::npos) << msg;
    EXPECT_NE(msg.find("parts[1].gt_q"), std::string::npos) << msg;
  }
}

TEST(DatasetIo, SchemaViolations) {
  const AssemblyTask t = synth_object(ObjectKind::kTable, 6, small_options());
  nlohmann::json j = task_to_json(t, true);
  j["chain"] = nlohmann::json::array({0, 0, 1});
  EXPECT_THROW(task_from_json(j), DataError);
  j = task_to_json(t, true);
  j["parts"][0]["gt_q"] = nlohmann::json::array({2.0, 0.0, 0.0, 0.0});
  EXPECT_THROW(task_from_json(j), DataError);
  j = task_to_json(t, true);
  j["groups"][0] = 9;
  EXPECT_THROW(task_from_json(j), DataError);
  EXPECT_THROW(task_from_json(task_to_json(t, false)), DataError);  // sidecar missing
}

TEST(Sample, AssemblyOrderAndResolution) {
  const AssemblyTask t = synth_object(ObjectKind::kChair, 9, small_options());
  const TrainSample s = to_sample(t, 64);
  ASSERT_EQ(s.input.clouds.size(), t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    EXPECT_EQ(s.input.clouds[k].rows(), 64);
    EXPECT_EQ(s.gt[k].translation, t.gt[t.chain[k]].translation);
    EXPECT_EQ(s.input.group_ids[k], t.grouping.group_of[t.chain[k]]);
  }
  EXPECT_EQ(to_sample(t, 300).input.clouds[0], t.parts[t.chain[0]]);
}

TEST(Export, PlyCountsAndBytes) {
  PartCloud c(1000, 3);
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(-1, 1);
  for (Eigen::Index i = 0; i < c.rows(); ++i) c.row(i) << u(rng), u(rng), u(rng);
  std::vector<PartCloud> parts = {c};
  std::vector<Pose> poses = {Pose::Identity()};
  const fs::path dir = temp_dir("export");
  export_shape(parts, poses, dir / "a.ply");
  export_shape(parts, poses, dir / "b.ply");
  const std::string a = slurp(dir / "a.ply");
  EXPECT_EQ(a, slurp(dir / "b.ply"));
  EXPECT_NE(a.find("element vertex 1000\n"), std::string::npos);
  const auto header_end = a.find("end_header\n") + 11;
  EXPECT_EQ(std::count(a.begin() + static_cast<long>(header_end), a.end(), '\n'), 1000);
  EXPECT_THROW(export_shape(parts, poses, dir / "a.xyz"), ConfigError);
}

TEST(Export, OneColorPerPart) {
  const AssemblyTask t = synth_object(ObjectKind::kTable, 10, small_options());
  const std::string ply = shape_to_ply(t.parts, t.gt);
  std::set<std::string> colors;
  std::istringstream in(ply.substr(ply.find("end_header\n") + 11));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    double x, y, z;
    std::string r, g, b;
    ls >> x >> y >> z >> r >> g >> b;
    colors.insert(r + " " + g + " " + b);
  }
  EXPECT_EQ(colors.size(), t.size());
  const std::string obj = shape_to_obj(t.parts, t.gt);
  std::size_t objects = 0;
  std::istringstream lines(obj);
  while (std::getline(lines, line)) objects += line.rfind("o part_", 0) == 0 ? 1 : 0;
  EXPECT_EQ(objects, t.size());
}

}  // namespace
}  // namespace spa
