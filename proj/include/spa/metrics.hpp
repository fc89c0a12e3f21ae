#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spa/geom.hpp"
#include "spa/knowledge.hpp"
#include "spa/objective.hpp"

namespace spa {

struct MetricConfig {
  double epsilon = 0.01;     // PA threshold on per-part Chamfer
  double tau = 0.01;         // CA threshold on squared contact separation
  double delta = 0.025;      // GT adjacency distance
  double scd_scale = 1000.0;

  void Validate() const;
};

// A ground-truth contact between parts i < j. Points are in each part's
// canonical frame; index_i / index_j locate them in the part clouds.
struct Contact {
  std::size_t i = 0;
  std::size_t j = 0;
  Eigen::Vector3d c_ij = Eigen::Vector3d::Zero();
  Eigen::Vector3d c_ji = Eigen::Vector3d::Zero();
  std::size_t index_i = 0;
  std::size_t index_j = 0;

  bool operator==(const Contact&) const = default;
};

using ContactSet = std::vector<Contact>;

// Parts are adjacent when their closest GT-placed points are nearer than
// delta. Ties go to the smallest (index_i, index_j).
ContactSet extract_contacts(std::span<const PartCloud> parts, std::span<const Pose> gt,
                            double delta);

double metric_scd(std::span<const Pose> pred, std::span<const Pose> gt,
                  std::span<const PartCloud> parts, double scale = 1000.0);

struct PartAccuracy {
  double value = 0.0;
  std::vector<bool> correct;  // per part, in input order
};

// Predictions are matched to GT slots within symmetry groups first.
PartAccuracy metric_pa(std::span<const Pose> pred, std::span<const Pose> gt,
                       std::span<const PartCloud> parts, const SymmetryGrouping& grouping,
                       double epsilon);
// Each prediction is scored against its own GT slot.
PartAccuracy metric_pa_strict(std::span<const Pose> pred, std::span<const Pose> gt,
                              std::span<const PartCloud> parts, double epsilon);

struct ContactAccuracy {
  double value = 1.0;
  std::size_t connected = 0;
  std::size_t total = 0;
  bool vacuous = false;  // no contacts: value is 1 by convention
};

// `pred[k]` is the pose placed at GT slot k (apply the matching first).
ContactAccuracy metric_ca(std::span<const Pose> pred, const ContactSet& contacts, double tau);

int metric_sr(const std::vector<bool>& correct);

struct ObjectMetrics {
  std::string id;
  std::string category;
  std::size_t parts = 0;
  double scd = 0.0;
  double pa = 0.0;
  std::size_t parts_correct = 0;
  double pa_strict = 0.0;
  std::size_t parts_correct_strict = 0;
  double ca = 1.0;
  std::size_t contacts_connected = 0;
  std::size_t contacts_total = 0;
  bool ca_vacuous = false;
  int sr = 0;
  // Aggregation bucket for the assembly-length split.
  bool long_assembly() const { return parts > 10; }
};

ObjectMetrics evaluate_object(const std::string& id, const std::string& category,
                              std::span<const Pose> pred, std::span<const Pose> gt,
                              std::span<const PartCloud> parts, const SymmetryGrouping& grouping,
                              const ContactSet& contacts, const MetricConfig& config);

struct MetricSummary {
  std::size_t objects = 0;
  std::size_t parts = 0;
  std::size_t contacts = 0;
  double scd = 0.0;        // mean over objects
  double pa = 0.0;         // over parts
  double pa_strict = 0.0;  // over parts
  double ca = 1.0;         // over contact pairs
  double sr = 0.0;         // over objects
};

struct MetricReport {
  std::vector<ObjectMetrics> per_object;
  std::map<std::string, MetricSummary> per_category;
  std::map<std::string, MetricSummary> per_length;  // "le10", "gt10"
  MetricSummary overall;
  MetricConfig config;
  std::size_t vacuous_contacts = 0;
};

// Throws DomainError on an empty list.
MetricReport aggregate(std::vector<ObjectMetrics> objects, const MetricConfig& config);

nlohmann::json to_json(const MetricReport& report);

}  // namespace spa
