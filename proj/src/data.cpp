#include "spa/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "spa/error.hpp"

namespace spa {

namespace fs = std::filesystem;
using nlohmann::json;

// --- task ---------------------------------------------------------------

void AssemblyTask::Validate() const {
  auto fail = [&](const std::string& what) {
    throw DataError("object '" + id + "': " + what);
  };
  const std::size_t n = parts.size();
  if (n == 0) fail("has no parts");
  if (gt.size() != n) fail("gt has " + std::to_string(gt.size()) + " poses for " + std::to_string(n) + " parts");
  for (std::size_t i = 0; i < n; ++i) {
    if (parts[i].rows() == 0) fail("parts[" + std::to_string(i) + "].points is empty");
    if (!parts[i].allFinite()) fail("parts[" + std::to_string(i) + "].points has non-finite values");
    try {
      gt[i].Validate();
    } catch (const InvalidPoseError& e) {
      fail("parts[" + std::to_string(i) + "] pose: " + e.what());
    }
  }
  if (chain.size() != n) fail("chain has " + std::to_string(chain.size()) + " entries for " + std::to_string(n) + " parts");
  std::vector<char> seen(n, 0);
  for (std::size_t k : chain) {
    if (k >= n || seen[k]) fail("chain is not a permutation of the part indices");
    seen[k] = 1;
  }
  if (grouping.part_count() != n) fail("groups has " + std::to_string(grouping.part_count()) + " entries for " + std::to_string(n) + " parts");
  for (const Contact& c : contacts) {
    if (!(c.i < c.j) || c.j >= n) fail("contact (" + std::to_string(c.i) + ", " + std::to_string(c.j) + ") is out of range");
  }
}

bool AssemblyTask::operator==(const AssemblyTask& o) const {
  if (id != o.id || category != o.category || chain != o.chain || !(grouping == o.grouping) ||
      contacts != o.contacts || pattern != o.pattern || seed != o.seed ||
      parts.size() != o.parts.size() || gt.size() != o.gt.size()) {
    return false;
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].rows() != o.parts[i].rows() || parts[i] != o.parts[i]) return false;
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i].Wxyz() != o.gt[i].Wxyz() || gt[i].translation != o.gt[i].translation) return false;
  }
  return true;
}

// --- sequences ----------------------------------------------------------

std::string to_string(SequencePattern pattern) {
  switch (pattern) {
    case SequencePattern::kDiagonal: return "diagonal";
    case SequencePattern::kTopToBottom: return "top-to-bottom";
    case SequencePattern::kBottomToTop: return "bottom-to-top";
    case SequencePattern::kDescendingSize: return "descending-size";
    case SequencePattern::kRandom: return "random";
  }
  return "diagonal";
}

SequencePattern pattern_from_string(const std::string& name) {
  for (SequencePattern p : all_patterns()) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown sequence pattern '" + name +
                    "' (expected diagonal|top-to-bottom|bottom-to-top|descending-size|random)");
}

std::vector<SequencePattern> all_patterns() {
  return {SequencePattern::kDiagonal, SequencePattern::kTopToBottom, SequencePattern::kBottomToTop,
          SequencePattern::kDescendingSize, SequencePattern::kRandom};
}

std::vector<std::size_t> make_sequence(std::span<const Eigen::Vector3d> centroids,
                                       std::span<const std::array<double, 3>> extents,
                                       SequencePattern pattern, std::uint64_t seed) {
  const std::size_t n = centroids.size();
  if (extents.size() != n) {
    throw ShapeError("make_sequence: " + std::to_string(n) + " centroids, " +
                     std::to_string(extents.size()) + " extents");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> key(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d& c = centroids[i];
    switch (pattern) {
      case SequencePattern::kDiagonal: key[i] = c.x() + c.y() + c.z(); break;
      case SequencePattern::kTopToBottom: key[i] = -c.y(); break;
      case SequencePattern::kBottomToTop: key[i] = c.y(); break;
      case SequencePattern::kDescendingSize:
        key[i] = -(extents[i][0] * extents[i][1] * extents[i][2]);
        break;
      case SequencePattern::kRandom: key[i] = 0.0; break;
    }
  }
  if (pattern == SequencePattern::kRandom) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  return order;
}

namespace {

std::vector<Eigen::Vector3d> centroids_of(const AssemblyTask& t) {
  std::vector<Eigen::Vector3d> c;
  for (const Pose& p : t.gt) c.push_back(p.translation);
  return c;
}

std::vector<std::array<double, 3>> extents_of(const AssemblyTask& t) {
  std::vector<std::array<double, 3>> e;
  for (const PartCloud& p : t.parts) e.push_back(bbox_extents(p));
  return e;
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

AssemblyTask with_pattern(AssemblyTask task, SequencePattern pattern, std::uint64_t seed) {
  task.chain = make_sequence(centroids_of(task), extents_of(task), pattern, seed);
  task.pattern = to_string(pattern);
  return task;
}

AssemblyTask with_pattern(AssemblyTask task, SequencePattern pattern) {
  const std::uint64_t seed = splitmix64(task.seed);
  return with_pattern(std::move(task), pattern, seed);
}

// --- synthesis ----------------------------------------------------------

std::string to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::kTable: return "table";
    case ObjectKind::kChair: return "chair";
    case ObjectKind::kShelf: return "shelf";
  }
  return "table";
}

ObjectKind object_kind_from_string(const std::string& name) {
  if (name == "table") return ObjectKind::kTable;
  if (name == "chair") return ObjectKind::kChair;
  if (name == "shelf") return ObjectKind::kShelf;
  throw ConfigError("unknown object kind '" + name + "' (expected table|chair|shelf)");
}

namespace {

// A proposed layout was ambiguous (near-equal extents); try another draw.
struct Reject {};

class Builder {
 public:
  Builder(std::uint64_t seed, const SynthOptions& options) : rng_(seed), options_(options) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  // Registers a cuboid prototype with edge lengths (sx, sy, sz).
  std::size_t prototype(double sx, double sy, double sz) {
    std::array<double, 3> dims = {sx, sy, sz};
    std::sort(dims.begin(), dims.end(), std::greater<>());
    if (dims[2] < 0.004) throw Reject{};
    // Distinct principal extents keep the canonical frame well defined.
    if (dims[0] < 1.15 * dims[1] || dims[1] < 1.15 * dims[2]) throw Reject{};
    for (const Proto& p : protos_) {
      bool same = true;
      for (int k = 0; k < 3; ++k) {
        if (std::abs(p.dims[k] - dims[k]) > 0.06 * std::max(p.dims[k], dims[k])) same = false;
      }
      if (same) throw Reject{};
    }
    Proto proto;
    proto.dims = dims;
    auto [canon, frame] = canonicalize(sample_box(sx, sy, sz));
    // Float-representable coordinates make the f32 sidecar lossless.
    proto.cloud = canon.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
    proto.frame = frame;
    protos_.push_back(std::move(proto));
    return protos_.size() - 1;
  }

  // Places an instance of `proto` with its box centered at `center`.
  void place(std::size_t proto, const Eigen::Vector3d& center) {
    const Proto& p = protos_[proto];
    Pose pose;
    pose.rotation = CanonicalSign(Eigen::Quaterniond(p.frame.rotation.transpose()).normalized());
    pose.translation = p.frame.center + center;
    parts_.push_back(p.cloud);
    gt_.push_back(pose);
    proto_of_.push_back(proto);
  }

  AssemblyTask finish(const std::string& category, std::uint64_t seed) {
    AssemblyTask t;
    t.category = category;
    t.seed = seed;
    t.parts = parts_;
    t.gt = gt_;
    std::vector<int> id_of(protos_.size(), 0);
    int next = 0;
    std::vector<int> groups;
    for (std::size_t proto : proto_of_) {
      if (id_of[proto] == 0) id_of[proto] = ++next;
      groups.push_back(id_of[proto]);
    }
    t.grouping = SymmetryGrouping::FromIds(std::move(groups));
    t.contacts = extract_contacts(t.parts, t.gt, options_.contact_delta);
    return with_pattern(std::move(t), options_.pattern, splitmix64(seed));
  }

 private:
  struct Proto {
    std::array<double, 3> dims;
    PartCloud cloud;
    CanonicalFrame frame;
  };

  // Area-weighted uniform surface samples, jittered, thinned by farthest
  // point sampling to the requested count.
  PartCloud sample_box(double sx, double sy, double sz) {
    const std::size_t dense = 4 * options_.points;
    const double areas[3] = {sy * sz, sx * sz, sx * sy};  // faces normal to x, y, z
    const double total = areas[0] + areas[1] + areas[2];
    std::uniform_real_distribution<double> u(-0.5, 0.5), pick(0.0, total);
    std::normal_distribution<double> noise(0.0, options_.jitter);
    std::bernoulli_distribution side(0.5);
    const double size[3] = {sx, sy, sz};
    PartCloud raw(static_cast<Eigen::Index>(dense), 3);
    for (std::size_t i = 0; i < dense; ++i) {
      const double r = pick(rng_);
      const int axis = r < areas[0] ? 0 : (r < areas[0] + areas[1] ? 1 : 2);
      Eigen::Vector3d p;
      for (int k = 0; k < 3; ++k) p[k] = u(rng_) * size[k];
      p[axis] = (side(rng_) ? 0.5 : -0.5) * size[axis];
      for (int k = 0; k < 3; ++k) p[k] += noise(rng_);
      raw.row(static_cast<Eigen::Index>(i)) = p.transpose();
    }
    return select_rows(raw, farthest_point_sample(raw, options_.points, 0));
  }

  std::mt19937_64 rng_;
  SynthOptions options_;
  std::vector<Proto> protos_;
  std::vector<PartCloud> parts_;
  std::vector<Pose> gt_;
  std::vector<std::size_t> proto_of_;
};

void build_table(Builder& b) {
  const double w = b.uniform(0.8, 1.3);
  const double d = w * b.uniform(0.5, 0.72);
  const double t = b.uniform(0.03, 0.06);
  const double h = b.uniform(0.45, 0.7);
  const double la = b.uniform(0.04, 0.07);
  const double lb = la * b.uniform(1.3, 1.6);
  const double inset = b.uniform(0.02, 0.08);
  const bool middle_legs = w > 1.05 && b.chance(0.4);
  const bool aprons = b.chance(0.5);
  const bool stretchers = b.chance(0.35);

  const std::size_t top = b.prototype(w, t, d);
  b.place(top, {0.0, h + t / 2, 0.0});
  const std::size_t leg = b.prototype(la, h, lb);
  const double lx = w / 2 - inset - la / 2;
  const double lz = d / 2 - inset - lb / 2;
  for (double x : {-lx, lx}) {
    for (double z : {-lz, lz}) b.place(leg, {x, h / 2, z});
  }
  if (middle_legs) {
    for (double z : {-lz, lz}) b.place(leg, {0.0, h / 2, z});
  }
  if (aprons) {
    const double ah = b.uniform(0.06, 0.1);
    const double at = b.uniform(0.015, 0.025);
    const double long_len = 2 * lx - la;
    const double short_len = 2 * lz - lb;
    if (short_len < 0.15) throw Reject{};
    if (!middle_legs) {
      const std::size_t long_apron = b.prototype(long_len, ah, at);
      for (double z : {-lz, lz}) b.place(long_apron, {0.0, h - ah / 2, z});
    }
    const std::size_t short_apron = b.prototype(at, ah, short_len);
    for (double x : {-lx, lx}) b.place(short_apron, {x, h - ah / 2, 0.0});
  }
  if (stretchers) {
    const double sh = b.uniform(0.025, 0.04);
    const double st = sh * b.uniform(1.3, 1.6);
    const double y = b.uniform(0.1, 0.2) * h;
    const std::size_t stretcher = b.prototype(st, sh, 2 * lz - lb);
    for (double x : {-lx, lx}) b.place(stretcher, {x, y, 0.0});
  }
}

void build_chair(Builder& b) {
  const double w = b.uniform(0.4, 0.55);
  const double d = w * b.uniform(0.72, 0.85);
  const double t = b.uniform(0.03, 0.05);
  const double h = b.uniform(0.38, 0.5);
  const double la = b.uniform(0.03, 0.05);
  const double lb = la * b.uniform(1.3, 1.6);
  const double back_h = b.uniform(0.35, 0.5);
  const double back_t = b.uniform(0.02, 0.035);

  const std::size_t seat = b.prototype(w, t, d);
  b.place(seat, {0.0, h + t / 2, 0.0});
  const std::size_t leg = b.prototype(la, h, lb);
  const double lx = w / 2 - la / 2 - 0.01;
  const double lz = d / 2 - lb / 2 - 0.01;
  for (double x : {-lx, lx}) {
    for (double z : {-lz, lz}) b.place(leg, {x, h / 2, z});
  }
  const double back_z = -d / 2 + back_t / 2;
  const double seat_top = h + t;
  if (b.chance(0.5)) {
    const std::size_t panel = b.prototype(w, back_h, back_t);
    b.place(panel, {0.0, seat_top + back_h / 2, back_z});
  } else {
    const double rail_h = b.uniform(0.05, 0.08);
    const int slats = b.integer(2, 4);
    const double slat_w = b.uniform(0.025, 0.045);
    const std::size_t rail = b.prototype(w, rail_h, back_t);
    b.place(rail, {0.0, seat_top + back_h - rail_h / 2, back_z});
    const double slat_len = back_h - rail_h;
    const std::size_t slat = b.prototype(slat_w, slat_len, back_t * b.uniform(0.6, 0.75));
    for (int k = 0; k < slats; ++k) {
      const double x = -w / 2 + w * (k + 1) / (slats + 1);
      b.place(slat, {x, seat_top + slat_len / 2, back_z});
    }
  }
  if (b.chance(0.4)) {
    const double post_h = b.uniform(0.16, 0.24);
    const double post_a = b.uniform(0.025, 0.035);
    const double arm_h = b.uniform(0.025, 0.035);
    const double arm_w = arm_h * b.uniform(1.8, 2.4);
    const double px = w / 2 - arm_w / 2;
    const std::size_t post = b.prototype(post_a, post_h, post_a * 1.4);
    for (double x : {-px, px}) b.place(post, {x, seat_top + post_h / 2, d * 0.15});
    const std::size_t arm = b.prototype(arm_w, arm_h, d * 0.8);
    for (double x : {-px, px}) b.place(arm, {x, seat_top + post_h + arm_h / 2, 0.0});
  }
}

void build_shelf(Builder& b) {
  const double inner = b.uniform(0.5, 0.9);
  const double depth = b.uniform(0.25, 0.4);
  const double side_t = b.uniform(0.015, 0.03);
  const double height = b.uniform(0.8, 1.6);
  const double board_t = b.uniform(0.015, 0.03);
  const int boards = b.integer(3, 8);

  const std::size_t side = b.prototype(side_t, height, depth);
  for (double x : {-(inner + side_t) / 2, (inner + side_t) / 2}) b.place(side, {x, height / 2, 0.0});
  const std::size_t board = b.prototype(inner, board_t, depth);
  const double lo = b.uniform(0.03, 0.08) + board_t / 2;
  const double hi = height - board_t / 2;
  for (int k = 0; k < boards; ++k) {
    b.place(board, {0.0, lo + (hi - lo) * k / (boards - 1), 0.0});
  }
  if (b.chance(0.5)) {
    const double back_t = b.uniform(0.006, 0.012);
    const std::size_t back = b.prototype(inner + 2 * side_t, height, back_t);
    b.place(back, {0.0, height / 2, -depth / 2 - back_t / 2});
  }
}

}  // namespace

AssemblyTask synth_object(ObjectKind kind, std::uint64_t seed, const SynthOptions& options) {
  if (options.points == 0) throw ConfigError("points per part must be positive");
  for (std::uint64_t attempt = 0;; ++attempt) {
    Builder b(splitmix64(seed * 1000003ull + attempt), options);
    try {
      switch (kind) {
        case ObjectKind::kTable: build_table(b); break;
        case ObjectKind::kChair: build_chair(b); break;
        case ObjectKind::kShelf: build_shelf(b); break;
      }
    } catch (const Reject&) {
      continue;
    }
    AssemblyTask t = b.finish(to_string(kind), seed);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-%llu", to_string(kind).c_str(),
                  static_cast<unsigned long long>(seed));
    t.id = buf;
    t.Validate();
    return t;
  }
}

std::vector<AssemblyTask> synth_dataset(const std::string& kind, std::size_t count,
                                        std::uint64_t seed, const SynthOptions& options) {
  const bool mixed = kind == "mixed";
  const ObjectKind fixed = mixed ? ObjectKind::kTable : object_kind_from_string(kind);
  static const ObjectKind cycle[3] = {ObjectKind::kTable, ObjectKind::kChair, ObjectKind::kShelf};
  std::vector<AssemblyTask> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const ObjectKind kk = mixed ? cycle[k % 3] : fixed;
    const std::uint64_t s = splitmix64(seed ^ splitmix64(k));
    AssemblyTask t = synth_object(kk, s, options);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%05zu", to_string(kk).c_str(), k);
    t.id = buf;
    out.push_back(std::move(t));
  }
  return out;
}

// --- splits -------------------------------------------------------------

SplitManifest make_split(std::span<const std::string> ids, std::uint64_t seed) {
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw DataError("duplicate object ids in dataset");
  auto rank_key = [seed](const std::string& id) {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (unsigned char c : id) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    return splitmix64(h ^ splitmix64(seed));
  };
  std::vector<std::pair<std::uint64_t, std::string>> ranked;
  for (const auto& id : ids) ranked.emplace_back(rank_key(id), id);
  std::sort(ranked.begin(), ranked.end());
  const std::size_t n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  SplitManifest m;
  m.seed = seed;
  for (std::size_t k = 0; k < n; ++k) {
    auto& bucket = k < n_train ? m.train : (k < n_train + n_val ? m.val : m.test);
    bucket.push_back(ranked[k].second);
  }
  for (auto* v : {&m.train, &m.val, &m.test}) std::sort(v->begin(), v->end());
  return m;
}

const AssemblyTask& Dataset::find(const std::string& id) const {
  for (const auto& t : tasks) {
    if (t.id == id) return t;
  }
  throw DataError("object '" + id + "' is listed in the split but not in the dataset");
}

std::vector<const AssemblyTask*> Dataset::subset(const std::vector<std::string>& ids) const {
  std::vector<const AssemblyTask*> out;
  for (const auto& id : ids) out.push_back(&find(id));
  return out;
}

// --- serialization ------------------------------------------------------

namespace {

const json& field(const json& j, const char* key, const std::string& id, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw DataError("object '" + id + "': missing field " + where + key);
  }
  return j.at(key);
}

template <typename T>
T as(const json& j, const std::string& id, const std::string& name) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw DataError("object '" + id + "': field " + name + " has the wrong type");
  }
}

template <std::size_t K>
std::array<double, K> fixed_array(const json& j, const std::string& id, const std::string& name) {
  if (!j.is_array() || j.size() != K) {
    throw DataError("object '" + id + "': field " + name + " must be an array of " + std::to_string(K) + " numbers");
  }
  std::array<double, K> out{};
  for (std::size_t k = 0; k < K; ++k) out[k] = as<double>(j[k], id, name);
  return out;
}

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

json task_to_json(const AssemblyTask& task, bool inline_points) {
  json parts = json::array();
  for (std::size_t i = 0; i < task.parts.size(); ++i) {
    json p;
    if (inline_points) {
      json pts = json::array();
      for (Eigen::Index r = 0; r < task.parts[i].rows(); ++r) {
        pts.push_back(json::array({task.parts[i](r, 0), task.parts[i](r, 1), task.parts[i](r, 2)}));
      }
      p["points"] = std::move(pts);
    } else {
      p["point_count"] = task.parts[i].rows();
    }
    p["gt_t"] = vec3(task.gt[i].translation);
    const auto q = task.gt[i].Wxyz();
    p["gt_q"] = json::array({q[0], q[1], q[2], q[3]});
    parts.push_back(std::move(p));
  }
  json contacts = json::array();
  for (const Contact& c : task.contacts) {
    contacts.push_back({{"i", c.i}, {"j", c.j}, {"c_ij", vec3(c.c_ij)}, {"c_ji", vec3(c.c_ji)},
                        {"index_i", c.index_i}, {"index_j", c.index_j}});
  }
  json out = {{"id", task.id},
              {"category", task.category},
              {"parts", std::move(parts)},
              {"chain", task.chain},
              {"contacts", std::move(contacts)},
              {"groups", task.grouping.group_of},
              {"pattern", task.pattern},
              {"seed", task.seed}};
  if (!inline_points) out["points_file"] = task.id + ".bin";
  return out;
}

AssemblyTask task_from_json(const json& j, std::span<const float> points) {
  AssemblyTask t;
  t.id = j.is_object() && j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "<unknown>";
  field(j, "id", t.id, "");
  t.category = as<std::string>(field(j, "category", t.id, ""), t.id, "category");
  const json& parts = field(j, "parts", t.id, "");
  if (!parts.is_array()) throw DataError("object '" + t.id + "': field parts must be an array");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string where = "parts[" + std::to_string(i) + "].";
    const json& p = parts[i];
    PartCloud cloud;
    if (p.is_object() && p.contains("points")) {
      const json& pts = p["points"];
      if (!pts.is_array()) throw DataError("object '" + t.id + "': field " + where + "points must be an array");
      cloud.resize(static_cast<Eigen::Index>(pts.size()), 3);
      for (std::size_t r = 0; r < pts.size(); ++r) {
        const auto xyz = fixed_array<3>(pts[r], t.id, where + "points[" + std::to_string(r) + "]");
        for (int k = 0; k < 3; ++k) cloud(static_cast<Eigen::Index>(r), k) = xyz[k];
      }
    } else {
      const auto count = as<std::size_t>(field(p, "point_count", t.id, where), t.id, where + "point_count");
      if ((offset + count) * 3 > points.size()) {
        throw DataError("object '" + t.id + "': point sidecar is too short for " + where + "point_count");
      }
      cloud.resize(static_cast<Eigen::Index>(count), 3);
      for (std::size_t r = 0; r < count; ++r) {
        for (int k = 0; k < 3; ++k) {
          cloud(static_cast<Eigen::Index>(r), k) = static_cast<double>(points[(offset + r) * 3 + k]);
        }
      }
      offset += count;
    }
    const auto tr = fixed_array<3>(field(p, "gt_t", t.id, where), t.id, where + "gt_t");
    const auto q = fixed_array<4>(field(p, "gt_q", t.id, where), t.id, where + "gt_q");
    Pose pose;
    pose.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
    pose.translation = Eigen::Vector3d(tr[0], tr[1], tr[2]);
    t.parts.push_back(std::move(cloud));
    t.gt.push_back(pose);
  }
  if (offset * 3 != points.size() && offset != 0) {
    throw DataError("object '" + t.id + "': point sidecar has trailing values");
  }
  t.chain = as<std::vector<std::size_t>>(field(j, "chain", t.id, ""), t.id, "chain");
  try {
    t.grouping = SymmetryGrouping::FromIds(as<std::vector<int>>(field(j, "groups", t.id, ""), t.id, "groups"));
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.rfind("object '", 0) == 0) throw;
    throw DataError("object '" + t.id + "': field groups: " + msg);
  }
  const json& contacts = field(j, "contacts", t.id, "");
  if (!contacts.is_array()) throw DataError("object '" + t.id + "': field contacts must be an array");
  for (std::size_t k = 0; k < contacts.size(); ++k) {
    const std::string where = "contacts[" + std::to_string(k) + "].";
    const json& c = contacts[k];
    Contact ct;
    ct.i = as<std::size_t>(field(c, "i", t.id, where), t.id, where + "i");
    ct.j = as<std::size_t>(field(c, "j", t.id, where), t.id, where + "j");
    const auto a = fixed_array<3>(field(c, "c_ij", t.id, where), t.id, where + "c_ij");
    const auto b = fixed_array<3>(field(c, "c_ji", t.id, where), t.id, where + "c_ji");
    ct.c_ij = Eigen::Vector3d(a[0], a[1], a[2]);
    ct.c_ji = Eigen::Vector3d(b[0], b[1], b[2]);
    ct.index_i = c.contains("index_i") ? as<std::size_t>(c["index_i"], t.id, where + "index_i") : 0;
    ct.index_j = c.contains("index_j") ? as<std::size_t>(c["index_j"], t.id, where + "index_j") : 0;
    t.contacts.push_back(ct);
  }
  if (j.contains("pattern")) t.pattern = as<std::string>(j["pattern"], t.id, "pattern");
  if (j.contains("seed")) t.seed = as<std::uint64_t>(j["seed"], t.id, "seed");
  t.Validate();
  return t;
}

namespace {

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

static_assert(std::endian::native == std::endian::little, "sidecar I/O assumes a little-endian host");

}  // namespace

void save_task(const AssemblyTask& task, const fs::path& dir, bool inline_points) {
  task.Validate();
  fs::create_directories(dir);
  write_file(dir / (task.id + ".json"), task_to_json(task, inline_points).dump(1) + "\n");
  if (inline_points) return;
  std::string bytes;
  for (const PartCloud& p : task.parts) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (int k = 0; k < 3; ++k) {
        const auto f = static_cast<float>(p(r, k));
        if (static_cast<double>(f) != p(r, k)) {
          throw DataError("object '" + task.id + "': point coordinates are not float-representable");
        }
        char raw[4];
        std::memcpy(raw, &f, 4);
        bytes.append(raw, 4);
      }
    }
  }
  write_file(dir / (task.id + ".bin"), bytes);
}

AssemblyTask load_task(const fs::path& json_file) {
  const json j = parse_json(json_file);
  std::vector<float> points;
  if (j.is_object() && j.contains("points_file")) {
    const std::string bytes = read_file(json_file.parent_path() / j["points_file"].get<std::string>());
    if (bytes.size() % 4 != 0) throw DataError(json_file.string() + ": point sidecar size is not a multiple of 4");
    points.resize(bytes.size() / 4);
    std::memcpy(points.data(), bytes.data(), bytes.size());
  }
  return task_from_json(j, points);
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  const fs::path objects = dir / "objects";
  fs::create_directories(objects);
  for (const auto& t : dataset.tasks) save_task(t, objects);
  const json split = {{"train", dataset.split.train},
                      {"val", dataset.split.val},
                      {"test", dataset.split.test},
                      {"seed", dataset.split.seed}};
  write_file(dir / "split.json", split.dump(1) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path objects = dir / "objects";
  if (!fs::is_directory(objects)) throw DataError(dir.string() + ": no objects/ directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(objects)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Dataset d;
  for (const auto& f : files) d.tasks.push_back(load_task(f));
  std::vector<std::string> ids;
  for (const auto& t : d.tasks) ids.push_back(t.id);
  if (fs::exists(dir / "split.json")) {
    const json s = parse_json(dir / "split.json");
    try {
      d.split.train = s.at("train").get<std::vector<std::string>>();
      d.split.val = s.at("val").get<std::vector<std::string>>();
      d.split.test = s.at("test").get<std::vector<std::string>>();
      d.split.seed = s.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw DataError((dir / "split.json").string() + ": " + e.what());
    }
    std::set<std::string> listed;
    for (const auto* v : {&d.split.train, &d.split.val, &d.split.test}) {
      for (const auto& id : *v) {
        if (!listed.insert(id).second) throw DataError("split.json lists '" + id + "' twice");
        d.find(id);
      }
    }
    if (listed.size() != ids.size()) throw DataError("split.json does not cover every object");
  } else {
    d.split = make_split(ids, 0);
  }
  return d;
}

TrainSample to_sample(const AssemblyTask& task, std::size_t points) {
  TrainSample s;
  s.id = task.id;
  std::vector<int> groups;
  for (std::size_t k : task.chain) {
    const PartCloud& cloud = task.parts[k];
    if (static_cast<std::size_t>(cloud.rows()) == points) {
      s.input.clouds.push_back(cloud);
    } else {
      s.input.clouds.push_back(select_rows(cloud, farthest_point_sample(cloud, points, 0)));
    }
    s.gt.push_back(task.gt[k]);
    groups.push_back(task.grouping.group_of[k]);
  }
  s.input.group_ids = groups;
  s.grouping = SymmetryGrouping::FromIds(std::move(groups));
  return s;
}

// --- export -------------------------------------------------------------

std::array<std::uint8_t, 3> part_color(std::size_t part) {
  // Hues spaced by the golden angle; fixed saturation and value.
  const double h = std::fmod(static_cast<double>(part) * 0.618033988749895, 1.0) * 6.0;
  const double s = 0.65, v = 0.95;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  auto byte = [](double c) { return static_cast<std::uint8_t>(std::lround(c * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

namespace {

std::vector<PartCloud> placed_parts(std::span<const PartCloud> parts, std::span<const Pose> poses) {
  if (parts.size() != poses.size()) {
    throw ShapeError("export: " + std::to_string(parts.size()) + " parts, " +
                     std::to_string(poses.size()) + " poses");
  }
  std::vector<PartCloud> out;
  for (std::size_t i = 0; i < parts.size(); ++i) out.push_back(apply_pose(poses[i], parts[i]));
  return out;
}

}  // namespace

std::string shape_to_ply(std::span<const PartCloud> parts, std::span<const Pose> poses) {
  const auto placed = placed_parts(parts, poses);
  std::size_t total = 0;
  for (const auto& p : placed) total += static_cast<std::size_t>(p.rows());
  std::string out = "ply\nformat ascii 1.0\ncomment parts " + std::to_string(parts.size()) +
                    "\nelement vertex " + std::to_string(total) +
                    "\nproperty float x\nproperty float y\nproperty float z\n"
                    "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[128];
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto c = part_color(i);
    for (Eigen::Index r = 0; r < placed[i].rows(); ++r) {
      std::snprintf(line, sizeof line, "%.6f %.6f %.6f %u %u %u\n", placed[i](r, 0), placed[i](r, 1),
                    placed[i](r, 2), c[0], c[1], c[2]);
      out += line;
    }
  }
  return out;
}

std::string shape_to_obj(std::span<const PartCloud> parts, std::span<const Pose> poses) {
  const auto placed = placed_parts(parts, poses);
  std::string out = "# assembled point cloud, " + std::to_string(parts.size()) + " parts\n";
  char line[128];
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto c = part_color(i);
    out += "o part_" + std::to_string(i) + "\n";
    for (Eigen::Index r = 0; r < placed[i].rows(); ++r) {
      std::snprintf(line, sizeof line, "v %.6f %.6f %.6f %.4f %.4f %.4f\n", placed[i](r, 0),
                    placed[i](r, 1), placed[i](r, 2), c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
      out += line;
    }
  }
  return out;
}

void export_shape(std::span<const PartCloud> parts, std::span<const Pose> poses,
                  const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".ply") {
    write_file(path, shape_to_ply(parts, poses));
  } else if (ext == ".obj") {
    write_file(path, shape_to_obj(parts, poses));
  } else {
    throw ConfigError("export path must end in .ply or .obj: " + path.string());
  }
}

}  // namespace spa
