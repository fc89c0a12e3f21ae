#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spa/geom.hpp"
#include "spa/knowledge.hpp"
#include "spa/metrics.hpp"
#include "spa/objective.hpp"

namespace spa {

// One object to assemble. Parts are stored in their original order; `chain`
// lists part indices in assembly order.
struct AssemblyTask {
  std::string id;
  std::string category;
  std::vector<PartCloud> parts;  // canonical clouds
  std::vector<Pose> gt;
  std::vector<std::size_t> chain;
  SymmetryGrouping grouping;
  ContactSet contacts;
  std::string pattern = "diagonal";
  std::uint64_t seed = 0;

  std::size_t size() const { return parts.size(); }
  // Throws DataError naming the object and the offending field.
  void Validate() const;
  bool operator==(const AssemblyTask&) const;
};

enum class SequencePattern { kDiagonal, kTopToBottom, kBottomToTop, kDescendingSize, kRandom };

std::string to_string(SequencePattern pattern);
SequencePattern pattern_from_string(const std::string& name);
std::vector<SequencePattern> all_patterns();

// Part indices in assembly order. Ties are broken by the original index.
std::vector<std::size_t> make_sequence(std::span<const Eigen::Vector3d> centroids,
                                       std::span<const std::array<double, 3>> extents,
                                       SequencePattern pattern, std::uint64_t seed);

// Recomputes the chain of `task` with another pattern.
AssemblyTask with_pattern(AssemblyTask task, SequencePattern pattern, std::uint64_t seed);
// Same, seeding the random pattern from the task's own seed as generation does.
AssemblyTask with_pattern(AssemblyTask task, SequencePattern pattern);

std::uint64_t splitmix64(std::uint64_t x);

enum class ObjectKind { kTable, kChair, kShelf };

std::string to_string(ObjectKind kind);
ObjectKind object_kind_from_string(const std::string& name);

struct SynthOptions {
  std::size_t points = 1000;
  double jitter = 0.002;
  double contact_delta = 0.025;
  SequencePattern pattern = SequencePattern::kDiagonal;
};

// A procedural object of axis-aligned cuboid parts (y up, resting on y = 0).
// Parts of one prototype share a single canonical cloud.
AssemblyTask synth_object(ObjectKind kind, std::uint64_t seed, const SynthOptions& options = {});

// `count` objects; "mixed" cycles table, chair, shelf. Object k uses a seed
// derived from (seed, k).
std::vector<AssemblyTask> synth_dataset(const std::string& kind, std::size_t count,
                                        std::uint64_t seed, const SynthOptions& options = {});

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  bool operator==(const SplitManifest&) const = default;
};

// 70/10/20 by rank of a seeded hash of each id; sizes are rounded.
SplitManifest make_split(std::span<const std::string> ids, std::uint64_t seed);

struct Dataset {
  std::vector<AssemblyTask> tasks;
  SplitManifest split;

  const AssemblyTask& find(const std::string& id) const;
  std::vector<const AssemblyTask*> subset(const std::vector<std::string>& ids) const;
};

nlohmann::json task_to_json(const AssemblyTask& task, bool inline_points);
// `points` supplies sidecar coordinates when the JSON does not inline them.
AssemblyTask task_from_json(const nlohmann::json& j, std::span<const float> points = {});

// One object file: <dir>/<id>.json plus <dir>/<id>.bin (f32 points).
void save_task(const AssemblyTask& task, const std::filesystem::path& dir, bool inline_points = false);
AssemblyTask load_task(const std::filesystem::path& json_file);

// <dir>/objects/*.json|bin and <dir>/split.json.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Parts in assembly order, each reduced to `points` by farthest point
// sampling (identity when the cloud already has that many points).
TrainSample to_sample(const AssemblyTask& task, std::size_t points);

// Assembled union as ASCII PLY (per-part colors) or OBJ, chosen by the file
// extension. Output bytes depend only on the inputs.
void export_shape(std::span<const PartCloud> parts, std::span<const Pose> poses,
                  const std::filesystem::path& path);
std::string shape_to_ply(std::span<const PartCloud> parts, std::span<const Pose> poses);
std::string shape_to_obj(std::span<const PartCloud> parts, std::span<const Pose> poses);
std::array<std::uint8_t, 3> part_color(std::size_t part);

}  // namespace spa
