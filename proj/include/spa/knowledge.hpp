#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "spa/geom.hpp"

namespace spa {

// Partition of an object's parts into groups of interchangeable geometry.
// Group ids are 1-based and contiguous.
struct SymmetryGrouping {
  std::vector<int> group_of;                     // per part, in 1..count
  int count = 0;                                 // M
  std::vector<std::vector<std::size_t>> members; // members[s - 1], ascending

  static SymmetryGrouping FromIds(std::vector<int> group_of);
  std::size_t part_count() const { return group_of.size(); }

  bool operator==(const SymmetryGrouping&) const = default;
};

inline constexpr double kDefaultSymmetryTolerance = 0.02;

// Groups parts whose sorted PCA bounding-box extents agree within `rel_tol`
// (relative, per extent) of the cluster seed. Parts are visited in
// lexicographic order of their extents; group ids follow the first
// appearance in the original part order.
SymmetryGrouping group_by_symmetry(std::span<const PartCloud> parts,
                                   double rel_tol = kDefaultSymmetryTolerance);

SymmetryGrouping group_by_extents(std::span<const std::array<double, 3>> extents,
                                  double rel_tol = kDefaultSymmetryTolerance);

// One-hot of length n_max with a 1 at `position` (0-based).
std::vector<double> order_encoding(std::size_t position, std::size_t n_max);

// One-hot of length m_max with a 1 at group - 1.
std::vector<double> symmetry_encoding(int group, std::size_t m_max);

struct RotaryConfig {
  std::size_t dim = 64;  // must be even
  double base = 10000.0;

  // theta_k = base^(-2k/dim), k = 0 .. dim/2 - 1.
  std::vector<double> thetas() const;
};

// Rotates consecutive pairs (x_2k, x_2k+1) by position * theta_k.
std::vector<double> rotary_rotate(std::span<const double> x, double position,
                                  const RotaryConfig& config);

}  // namespace spa
