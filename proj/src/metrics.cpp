#include "spa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spa/error.hpp"

namespace spa {

void MetricConfig::Validate() const {
  for (double v : {epsilon, tau, delta, scd_scale}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError("metric thresholds must be finite and strictly positive");
    }
  }
}

namespace {

void require_same_count(std::size_t a, std::size_t b, std::size_t c, const char* what) {
  if (a != b || a != c) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " predictions, " +
                     std::to_string(b) + " GT poses, " + std::to_string(c) + " parts");
  }
}

struct Box {
  Eigen::Vector3d lo, hi;
};

Box bounds(const PartCloud& c) {
  return {c.colwise().minCoeff().transpose(), c.colwise().maxCoeff().transpose()};
}

double box_gap(const Box& a, const Box& b) {
  double sq = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double gap = std::max({0.0, a.lo[k] - b.hi[k], b.lo[k] - a.hi[k]});
    sq += gap * gap;
  }
  return std::sqrt(sq);
}

}  // namespace

ContactSet extract_contacts(std::span<const PartCloud> parts, std::span<const Pose> gt,
                            double delta) {
  require_same_count(gt.size(), gt.size(), parts.size(), "extract_contacts");
  if (!(delta > 0.0)) throw DomainError("contact threshold must be positive");
  std::vector<PartCloud> placed;
  std::vector<Box> boxes;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    placed.push_back(apply_pose(gt[i], parts[i]));
    boxes.push_back(bounds(placed.back()));
  }
  const double delta_sq = delta * delta;
  ContactSet out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t j = i + 1; j < parts.size(); ++j) {
      // Boxes at least delta apart cannot hold a closer pair.
      if (box_gap(boxes[i], boxes[j]) >= delta) continue;
      const PartCloud& a = placed[i];
      const PartCloud& b = placed[j];
      double best = std::numeric_limits<double>::infinity();
      Eigen::Index bi = 0, bj = 0;
      for (Eigen::Index p = 0; p < a.rows(); ++p) {
        for (Eigen::Index q = 0; q < b.rows(); ++q) {
          const double d = (a.row(p) - b.row(q)).squaredNorm();
          if (d < best) {
            best = d;
            bi = p;
            bj = q;
          }
        }
      }
      if (best < delta_sq) {
        Contact c;
        c.i = i;
        c.j = j;
        c.index_i = static_cast<std::size_t>(bi);
        c.index_j = static_cast<std::size_t>(bj);
        c.c_ij = parts[i].row(bi).transpose();
        c.c_ji = parts[j].row(bj).transpose();
        out.push_back(c);
      }
    }
  }
  return out;
}

double metric_scd(std::span<const Pose> pred, std::span<const Pose> gt,
                  std::span<const PartCloud> parts, double scale) {
  return scale * loss_shape(pred, gt, parts);
}

PartAccuracy metric_pa(std::span<const Pose> pred, std::span<const Pose> gt,
                       std::span<const PartCloud> parts, const SymmetryGrouping& grouping,
                       double epsilon) {
  require_same_count(pred.size(), gt.size(), parts.size(), "metric_pa");
  const Matching m = match_groups(pred, parts, gt, grouping);
  PartAccuracy out;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t j = m.gt_of[i];
    const bool ok = chamfer(apply_pose(pred[i], parts[i]), apply_pose(gt[j], parts[j])) < epsilon;
    out.correct.push_back(ok);
    hits += ok ? 1 : 0;
  }
  out.value = parts.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(parts.size());
  return out;
}

PartAccuracy metric_pa_strict(std::span<const Pose> pred, std::span<const Pose> gt,
                              std::span<const PartCloud> parts, double epsilon) {
  require_same_count(pred.size(), gt.size(), parts.size(), "metric_pa_strict");
  PartAccuracy out;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const bool ok = chamfer(apply_pose(pred[i], parts[i]), apply_pose(gt[i], parts[i])) < epsilon;
    out.correct.push_back(ok);
    hits += ok ? 1 : 0;
  }
  out.value = parts.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(parts.size());
  return out;
}

ContactAccuracy metric_ca(std::span<const Pose> pred, const ContactSet& contacts, double tau) {
  ContactAccuracy out;
  out.total = contacts.size();
  if (contacts.empty()) {
    out.vacuous = true;
    out.value = 1.0;
    return out;
  }
  for (const Contact& c : contacts) {
    if (c.i >= pred.size() || c.j >= pred.size()) {
      throw ShapeError("metric_ca: contact references part " + std::to_string(c.j) + " of " +
                       std::to_string(pred.size()));
    }
    pred[c.i].Validate();
    pred[c.j].Validate();
    const Eigen::Vector3d a = RotationMatrix(pred[c.i].rotation) * c.c_ij + pred[c.i].translation;
    const Eigen::Vector3d b = RotationMatrix(pred[c.j].rotation) * c.c_ji + pred[c.j].translation;
    if ((a - b).squaredNorm() < tau) ++out.connected;
  }
  out.value = static_cast<double>(out.connected) / static_cast<double>(out.total);
  return out;
}

int metric_sr(const std::vector<bool>& correct) {
  return std::all_of(correct.begin(), correct.end(), [](bool b) { return b; }) ? 1 : 0;
}

ObjectMetrics evaluate_object(const std::string& id, const std::string& category,
                              std::span<const Pose> pred, std::span<const Pose> gt,
                              std::span<const PartCloud> parts, const SymmetryGrouping& grouping,
                              const ContactSet& contacts, const MetricConfig& config) {
  require_same_count(pred.size(), gt.size(), parts.size(), "evaluate_object");
  ObjectMetrics m;
  m.id = id;
  m.category = category;
  m.parts = parts.size();
  m.scd = metric_scd(pred, gt, parts, config.scd_scale);

  const PartAccuracy pa = metric_pa(pred, gt, parts, grouping, config.epsilon);
  m.pa = pa.value;
  m.parts_correct = static_cast<std::size_t>(std::count(pa.correct.begin(), pa.correct.end(), true));
  const PartAccuracy strict = metric_pa_strict(pred, gt, parts, config.epsilon);
  m.pa_strict = strict.value;
  m.parts_correct_strict =
      static_cast<std::size_t>(std::count(strict.correct.begin(), strict.correct.end(), true));
  m.sr = metric_sr(pa.correct);

  // Contacts live on GT slots; place each slot with the prediction matched to it.
  const Matching match = match_groups(pred, parts, gt, grouping);
  std::vector<Pose> at_slot(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) at_slot[match.gt_of[i]] = pred[i];
  const ContactAccuracy ca = metric_ca(at_slot, contacts, config.tau);
  m.ca = ca.value;
  m.contacts_connected = ca.connected;
  m.contacts_total = ca.total;
  m.ca_vacuous = ca.vacuous;
  return m;
}

namespace {

MetricSummary summarize(const std::vector<const ObjectMetrics*>& objects) {
  MetricSummary s;
  double scd = 0.0;
  std::size_t correct = 0, correct_strict = 0, connected = 0, successes = 0;
  for (const ObjectMetrics* o : objects) {
    ++s.objects;
    s.parts += o->parts;
    s.contacts += o->contacts_total;
    scd += o->scd;
    correct += o->parts_correct;
    correct_strict += o->parts_correct_strict;
    connected += o->contacts_connected;
    successes += static_cast<std::size_t>(o->sr);
  }
  s.scd = scd / static_cast<double>(s.objects);
  s.pa = s.parts == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(s.parts);
  s.pa_strict = s.parts == 0 ? 0.0 : static_cast<double>(correct_strict) / static_cast<double>(s.parts);
  s.ca = s.contacts == 0 ? 1.0 : static_cast<double>(connected) / static_cast<double>(s.contacts);
  s.sr = static_cast<double>(successes) / static_cast<double>(s.objects);
  return s;
}

nlohmann::json summary_json(const MetricSummary& s) {
  return {{"objects", s.objects}, {"parts", s.parts},         {"contacts", s.contacts},
          {"scd", s.scd},         {"pa", s.pa},               {"pa_strict", s.pa_strict},
          {"ca", s.ca},           {"sr", s.sr}};
}

}  // namespace

MetricReport aggregate(std::vector<ObjectMetrics> objects, const MetricConfig& config) {
  if (objects.empty()) throw DomainError("aggregate: no objects to report");
  MetricReport r;
  r.config = config;
  r.per_object = std::move(objects);
  std::vector<const ObjectMetrics*> all;
  std::map<std::string, std::vector<const ObjectMetrics*>> by_category, by_length;
  for (const ObjectMetrics& o : r.per_object) {
    all.push_back(&o);
    by_category[o.category].push_back(&o);
    by_length[o.long_assembly() ? "gt10" : "le10"].push_back(&o);
    if (o.ca_vacuous) ++r.vacuous_contacts;
  }
  r.overall = summarize(all);
  for (const auto& [name, list] : by_category) r.per_category[name] = summarize(list);
  for (const auto& [name, list] : by_length) r.per_length[name] = summarize(list);
  return r;
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json per_object = nlohmann::json::array();
  for (const ObjectMetrics& o : report.per_object) {
    per_object.push_back({{"id", o.id},
                          {"category", o.category},
                          {"parts", o.parts},
                          {"scd", o.scd},
                          {"pa", o.pa},
                          {"pa_strict", o.pa_strict},
                          {"ca", o.ca},
                          {"contacts", o.contacts_total},
                          {"ca_vacuous", o.ca_vacuous},
                          {"sr", o.sr}});
  }
  nlohmann::json per_category = nlohmann::json::object();
  for (const auto& [name, s] : report.per_category) per_category[name] = summary_json(s);
  nlohmann::json per_length = nlohmann::json::object();
  for (const auto& [name, s] : report.per_length) per_length[name] = summary_json(s);
  nlohmann::json warnings = nlohmann::json::array();
  if (report.vacuous_contacts > 0) {
    warnings.push_back(std::to_string(report.vacuous_contacts) +
                       " object(s) have no contacts; their CA is reported as 1");
  }
  return {{"per_object", per_object},
          {"per_category", per_category},
          {"per_length", per_length},
          {"overall", summary_json(report.overall)},
          {"config",
           {{"epsilon", report.config.epsilon},
            {"tau", report.config.tau},
            {"delta", report.config.delta},
            {"scd_scale", report.config.scd_scale}}},
          {"warnings", warnings}};
}

}  // namespace spa
