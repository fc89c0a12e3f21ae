#include "spa/geom.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "spa/error.hpp"

namespace spa {

namespace {

constexpr double kEigenTieTolerance = 1e-9;
constexpr double kSkewTolerance = 1e-9;

// Squared distance between row i of a and row j of b.
inline double sq_dist(const double* a, const double* b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Chooses the sign of `axis` when the skew along it is numerically zero:
// the lexicographically-largest centered point (by x, then y, then z) must
// project nonnegatively. Points with a vanishing projection are skipped.
Eigen::Vector3d fix_sign_by_extreme_point(const PartCloud& centered,
                                          const Eigen::Vector3d& axis) {
  const Eigen::Index n = centered.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) {
    for (int c = 0; c < 3; ++c) {
      if (centered(l, c) != centered(r, c)) return centered(l, c) > centered(r, c);
    }
    return false;
  });
  const double r_max = centered.rowwise().norm().maxCoeff();
  const double proj_tol = kEigenTieTolerance * r_max;
  for (Eigen::Index i : order) {
    const double proj = centered.row(i).dot(axis);
    if (std::abs(proj) > proj_tol) return proj < 0.0 ? Eigen::Vector3d(-axis) : axis;
  }
  return axis;
}

Eigen::Vector3d fix_sign(const PartCloud& centered, const Eigen::Vector3d& axis,
                         double variance) {
  const Eigen::VectorXd proj = centered * axis;
  const double skew = proj.array().cube().mean();
  const double threshold =
      kSkewTolerance * std::pow(std::max(variance, 0.0), 1.5);
  if (skew > threshold) return axis;
  if (skew < -threshold) return -axis;
  return fix_sign_by_extreme_point(centered, axis);
}

// Orthonormal basis (u, v) for the plane spanned by two tied eigenvectors,
// with u taken from the highest-variance coordinate axis that has a usable
// projection onto the plane.
std::pair<Eigen::Vector3d, Eigen::Vector3d> tied_plane_basis(
    const Eigen::Vector3d& e1, const Eigen::Vector3d& e2,
    const std::array<int, 3>& coord_order) {
  for (int c : coord_order) {
    Eigen::Vector3d axis = Eigen::Vector3d::Unit(c);
    Eigen::Vector3d proj = axis.dot(e1) * e1 + axis.dot(e2) * e2;
    if (proj.squaredNorm() > 1e-6) {
      Eigen::Vector3d u = proj.normalized();
      Eigen::Vector3d normal = e1.cross(e2).normalized();
      Eigen::Vector3d v = normal.cross(u);
      return {u, v};
    }
  }
  return {e1, e2};
}

}  // namespace

Pose Pose::FromWxyz(const std::array<double, 4>& wxyz,
                    const Eigen::Vector3d& translation) {
  Pose pose;
  pose.rotation = CanonicalSign(
      Eigen::Quaterniond(wxyz[0], wxyz[1], wxyz[2], wxyz[3]));
  pose.translation = translation;
  return pose;
}

std::array<double, 4> Pose::Wxyz() const {
  return {rotation.w(), rotation.x(), rotation.y(), rotation.z()};
}

void Pose::Validate() const {
  const double norm = rotation.coeffs().norm();
  if (!std::isfinite(norm) || std::abs(norm - 1.0) >= kUnitQuaternionTolerance) {
    throw InvalidPoseError("quaternion norm " + std::to_string(norm) +
                           " is not unit within 1e-6");
  }
  if (!translation.allFinite()) {
    throw InvalidPoseError("translation is not finite");
  }
}

bool Pose::IsCanonicalSign() const {
  return CanonicalSign(rotation).coeffs() == rotation.coeffs();
}

Eigen::Quaterniond CanonicalSign(const Eigen::Quaterniond& q) {
  const std::array<double, 4> wxyz = {q.w(), q.x(), q.y(), q.z()};
  for (double c : wxyz) {
    if (c > 0.0) return q;
    if (c < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  }
  return q;
}

Eigen::Matrix3d RotationMatrix(const Eigen::Quaterniond& q) {
  return q.toRotationMatrix();
}

PartCloud CanonicalFrame::Apply(const PartCloud& raw) const {
  PartCloud out = (raw.rowwise() - center.transpose()) * rotation.transpose();
  return out;
}

void ValidateCloud(const PartCloud& cloud) {
  if (cloud.rows() == 0) throw DomainError("point cloud is empty");
  if (!cloud.allFinite()) throw DomainError("point cloud has non-finite coordinates");
}

PartCloud apply_pose(const Pose& pose, const PartCloud& cloud) {
  pose.Validate();
  const Eigen::Matrix3d r = RotationMatrix(pose.rotation);
  PartCloud out = cloud * r.transpose();
  out.rowwise() += pose.translation.transpose();
  return out;
}

PartCloud rotate_only(const Pose& pose, const PartCloud& cloud) {
  pose.Validate();
  const Eigen::Matrix3d r = RotationMatrix(pose.rotation);
  PartCloud out = cloud * r.transpose();
  return out;
}

double directed_chamfer(const PartCloud& from, const PartCloud& to) {
  if (from.rows() == 0 || to.rows() == 0) {
    throw DomainError("chamfer requires nonempty clouds");
  }
  const double* a = from.data();
  const double* b = to.data();
  const Eigen::Index n = from.rows();
  const Eigen::Index m = to.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      best = std::min(best, sq_dist(a + 3 * i, b + 3 * j));
    }
    total += best;
  }
  return total / static_cast<double>(n);
}

double chamfer(const PartCloud& a, const PartCloud& b) {
  return directed_chamfer(a, b) + directed_chamfer(b, a);
}

std::pair<PartCloud, CanonicalFrame> canonicalize(const PartCloud& raw) {
  if (raw.rows() < 1) throw DomainError("canonicalize requires at least one point");
  CanonicalFrame frame;
  frame.center = raw.colwise().mean().transpose();
  const PartCloud centered = raw.rowwise() - frame.center.transpose();
  const Eigen::Matrix3d cov =
      centered.transpose() * centered / static_cast<double>(raw.rows());

  // Coordinate axes ordered by their variance, used by the degenerate rules.
  std::array<int, 3> coord_order = {0, 1, 2};
  std::stable_sort(coord_order.begin(), coord_order.end(),
                   [&](int l, int r) { return cov(l, l) > cov(r, r); });

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  // Descending order.
  Eigen::Vector3d values(solver.eigenvalues()[2], solver.eigenvalues()[1],
                         solver.eigenvalues()[0]);
  Eigen::Matrix3d vectors;
  vectors.col(0) = solver.eigenvectors().col(2);
  vectors.col(1) = solver.eigenvectors().col(1);
  vectors.col(2) = solver.eigenvectors().col(0);

  const double scale = std::max(values[0], 0.0);
  const double tie_tol = kEigenTieTolerance * scale;
  const bool tie01 = values[0] - values[1] <= tie_tol;
  const bool tie12 = values[1] - values[2] <= tie_tol;

  Eigen::Vector3d a1;
  Eigen::Vector3d a2;
  if (scale <= 0.0 || (tie01 && tie12)) {
    a1 = Eigen::Vector3d::Unit(coord_order[0]);
    a2 = Eigen::Vector3d::Unit(coord_order[1]);
  } else if (tie01) {
    std::tie(a1, a2) = tied_plane_basis(vectors.col(0), vectors.col(1), coord_order);
  } else if (tie12) {
    a1 = vectors.col(0);
    a2 = tied_plane_basis(vectors.col(1), vectors.col(2), coord_order).first;
  } else {
    a1 = vectors.col(0);
    a2 = vectors.col(1);
  }

  a1 = fix_sign(centered, a1.normalized(), values[0]);
  a2 = fix_sign(centered, a2.normalized(), values[1]);
  const Eigen::Vector3d a3 = a1.cross(a2).normalized();

  frame.rotation.row(0) = a1.transpose();
  frame.rotation.row(1) = a2.transpose();
  frame.rotation.row(2) = a3.transpose();

  PartCloud out = centered * frame.rotation.transpose();
  return {std::move(out), frame};
}

std::vector<std::size_t> farthest_point_sample(const PartCloud& cloud,
                                               std::size_t k,
                                               std::size_t start) {
  const auto n = static_cast<std::size_t>(cloud.rows());
  if (k < 1 || k > n) {
    throw DomainError("farthest_point_sample: k=" + std::to_string(k) +
                      " outside [1, " + std::to_string(n) + "]");
  }
  if (start >= n) {
    throw DomainError("farthest_point_sample: start index out of range");
  }
  const double* p = cloud.data();
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> picked;
  picked.reserve(k);
  std::size_t current = start;
  for (std::size_t s = 0; s < k; ++s) {
    picked.push_back(current);
    min_dist[current] = -1.0;
    std::size_t next = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (min_dist[i] < 0.0) continue;
      min_dist[i] = std::min(min_dist[i], sq_dist(p + 3 * i, p + 3 * current));
      if (min_dist[i] > best) {
        best = min_dist[i];
        next = i;
      }
    }
    current = next;
  }
  return picked;
}

std::array<double, 3> bbox_extents(const PartCloud& cloud) {
  if (cloud.rows() == 0) throw DomainError("bbox_extents: empty cloud");
  const PartCloud canonical = canonicalize(cloud).first;
  std::array<double, 3> ext{};
  for (int c = 0; c < 3; ++c) {
    ext[c] = canonical.col(c).maxCoeff() - canonical.col(c).minCoeff();
  }
  std::sort(ext.begin(), ext.end(), std::greater<>());
  return ext;
}

PartCloud select_rows(const PartCloud& cloud,
                      std::span<const std::size_t> indices) {
  PartCloud out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        cloud.row(static_cast<Eigen::Index>(indices[i]));
  }
  return out;
}

PartCloud concat_clouds(std::span<const PartCloud> clouds) {
  Eigen::Index rows = 0;
  for (const auto& c : clouds) rows += c.rows();
  PartCloud out(rows, 3);
  Eigen::Index at = 0;
  for (const auto& c : clouds) {
    out.middleRows(at, c.rows()) = c;
    at += c.rows();
  }
  return out;
}

}  // namespace spa
