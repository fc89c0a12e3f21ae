#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace spa {

// One part's point set, one point per row (x, y, z).
using PartCloud = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline constexpr double kUnitQuaternionTolerance = 1e-6;

// Rigid transform p -> R(q) p + t. Quaternions are stored (w, x, y, z) in
// the serialized forms; Eigen keeps its own internal order.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose Identity() { return {}; }

  // Builds a pose from (w, x, y, z) and a translation; flips the quaternion
  // into the canonical hemisphere.
  static Pose FromWxyz(const std::array<double, 4>& wxyz,
                       const Eigen::Vector3d& translation);

  std::array<double, 4> Wxyz() const;

  // Throws InvalidPoseError if the quaternion is not unit within 1e-6.
  void Validate() const;

  bool IsCanonicalSign() const;
};

// Returns q or -q such that w >= 0 (if w == 0, first nonzero component >= 0).
Eigen::Quaterniond CanonicalSign(const Eigen::Quaterniond& q);

// Rotation matrix of a (not necessarily canonical) unit quaternion.
Eigen::Matrix3d RotationMatrix(const Eigen::Quaterniond& q);

// Maps raw points into canonical space: canonical = rotation * (p - center).
struct CanonicalFrame {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  PartCloud Apply(const PartCloud& raw) const;
};

// Checks that every coordinate is finite and the cloud is nonempty.
void ValidateCloud(const PartCloud& cloud);

PartCloud apply_pose(const Pose& pose, const PartCloud& cloud);

// Applies only the rotation of `pose`.
PartCloud rotate_only(const Pose& pose, const PartCloud& cloud);

// Mean squared nearest-neighbour distance from every point of `from` to `to`.
double directed_chamfer(const PartCloud& from, const PartCloud& to);

// Symmetric Chamfer distance with the mean convention:
// directed(a, b) + directed(b, a).
double chamfer(const PartCloud& a, const PartCloud& b);

std::pair<PartCloud, CanonicalFrame> canonicalize(const PartCloud& raw);

std::vector<std::size_t> farthest_point_sample(const PartCloud& cloud,
                                               std::size_t k,
                                               std::size_t start = 0);

// Bounding-box extents in the cloud's own PCA frame, sorted descending.
std::array<double, 3> bbox_extents(const PartCloud& cloud);

PartCloud select_rows(const PartCloud& cloud,
                      std::span<const std::size_t> indices);

// Row-wise concatenation of several clouds.
PartCloud concat_clouds(std::span<const PartCloud> clouds);

}  // namespace spa
