#pragma once

// Small hand-built assemblies shared by the objective and metric tests.

#include <Eigen/Geometry>

#include <random>
#include <vector>

#include "spa/geom.hpp"
#include "spa/knowledge.hpp"

namespace spa::toy {

// Points on the surface of a centered box, `k` samples per edge direction.
inline PartCloud box_surface(double sx, double sy, double sz, int k) {
  std::vector<Eigen::Vector3d> pts;
  const double h[3] = {sx / 2, sy / 2, sz / 2};
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      for (int c = 0; c < k; ++c) {
        const bool face = a == 0 || a == k - 1 || b == 0 || b == k - 1 || c == 0 || c == k - 1;
        if (!face) continue;
        const double u = -1.0 + 2.0 * a / (k - 1);
        const double v = -1.0 + 2.0 * b / (k - 1);
        const double w = -1.0 + 2.0 * c / (k - 1);
        pts.emplace_back(u * h[0], v * h[1], w * h[2]);
      }
    }
  }
  PartCloud out(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

inline Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return CanonicalSign(q);
}

inline Pose random_pose(std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> n(0.0, spread);
  Pose p;
  p.rotation = random_rotation(rng);
  p.translation = Eigen::Vector3d(n(rng), n(rng), n(rng));
  return p;
}

inline Pose translation(double x, double y, double z) {
  Pose p = Pose::Identity();
  p.translation = Eigen::Vector3d(x, y, z);
  return p;
}

struct Assembly {
  std::vector<PartCloud> parts;
  std::vector<Pose> gt;
  SymmetryGrouping grouping;
};

// Four legs (0.1 x 0.5 x 0.1, y in [0, 0.5]) under a 1.0 x 0.1 x 0.6 top
// resting on them; parts: top, then the legs.
inline Assembly table() {
  Assembly t;
  t.parts.push_back(box_surface(1.0, 0.1, 0.6, 11));
  t.gt.push_back(translation(0.0, 0.55, 0.0));
  const PartCloud leg = box_surface(0.1, 0.5, 0.1, 6);
  for (double x : {-0.4, 0.4}) {
    for (double z : {-0.2, 0.2}) {
      t.parts.push_back(leg);
      t.gt.push_back(translation(x, 0.25, z));
    }
  }
  t.grouping = SymmetryGrouping::FromIds({1, 2, 2, 2, 2});
  return t;
}

}  // namespace spa::toy
