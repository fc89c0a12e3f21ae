#include "spa/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "spa/error.hpp"

namespace spa {

SymmetryGrouping SymmetryGrouping::FromIds(std::vector<int> group_of) {
  SymmetryGrouping g;
  g.count = group_of.empty() ? 0 : *std::max_element(group_of.begin(), group_of.end());
  g.members.assign(static_cast<std::size_t>(std::max(g.count, 0)), {});
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    const int s = group_of[i];
    if (s < 1) throw DataError("group id " + std::to_string(s) + " of part " +
                               std::to_string(i) + " is not positive");
    g.members[static_cast<std::size_t>(s - 1)].push_back(i);
  }
  for (int s = 1; s <= g.count; ++s) {
    if (g.members[static_cast<std::size_t>(s - 1)].empty()) {
      throw DataError("group ids are not contiguous: group " + std::to_string(s) + " is empty");
    }
  }
  g.group_of = std::move(group_of);
  return g;
}

namespace {

bool extent_matches(double a, double b, double rel_tol) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return true;
  return std::abs(a - b) <= rel_tol * scale;
}

}  // namespace

SymmetryGrouping group_by_extents(std::span<const std::array<double, 3>> extents,
                                  double rel_tol) {
  if (rel_tol <= 0.0) throw DomainError("symmetry tolerance must be positive");
  const std::size_t n = extents.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return extents[l] < extents[r];
  });

  // Clusters in sorted order, anchored to their seed.
  std::vector<int> cluster_of(n, -1);
  int clusters = 0;
  std::size_t seed = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t part = order[k];
    bool joins = k > 0;
    if (joins) {
      for (int c = 0; c < 3; ++c) {
        if (!extent_matches(extents[part][c], extents[seed][c], rel_tol)) joins = false;
      }
    }
    if (!joins) {
      seed = part;
      ++clusters;
    }
    cluster_of[part] = clusters - 1;
  }

  std::vector<int> id_of_cluster(static_cast<std::size_t>(clusters), 0);
  int next = 0;
  std::vector<int> group_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    int& id = id_of_cluster[static_cast<std::size_t>(cluster_of[i])];
    if (id == 0) id = ++next;
    group_of[i] = id;
  }
  return SymmetryGrouping::FromIds(std::move(group_of));
}

SymmetryGrouping group_by_symmetry(std::span<const PartCloud> parts, double rel_tol) {
  if (parts.empty()) throw DomainError("group_by_symmetry: no parts");
  std::vector<std::array<double, 3>> extents;
  extents.reserve(parts.size());
  for (const PartCloud& p : parts) extents.push_back(bbox_extents(p));
  return group_by_extents(extents, rel_tol);
}

std::vector<double> order_encoding(std::size_t position, std::size_t n_max) {
  if (position >= n_max) {
    throw CapacityError("assembly position " + std::to_string(position) +
                        " exceeds model capacity n_max=" + std::to_string(n_max));
  }
  std::vector<double> e(n_max, 0.0);
  e[position] = 1.0;
  return e;
}

std::vector<double> symmetry_encoding(int group, std::size_t m_max) {
  if (group < 1 || static_cast<std::size_t>(group) > m_max) {
    throw CapacityError("symmetry group " + std::to_string(group) +
                        " exceeds model capacity m_max=" + std::to_string(m_max));
  }
  std::vector<double> e(m_max, 0.0);
  e[static_cast<std::size_t>(group - 1)] = 1.0;
  return e;
}

std::vector<double> RotaryConfig::thetas() const {
  std::vector<double> t(dim / 2);
  for (std::size_t k = 0; k < t.size(); ++k) {
    t[k] = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
  }
  return t;
}

std::vector<double> rotary_rotate(std::span<const double> x, double position,
                                  const RotaryConfig& config) {
  if (config.dim % 2 != 0) throw ShapeError("rotary dimension must be even, got " +
                                            std::to_string(config.dim));
  if (x.size() != config.dim) {
    throw ShapeError("rotary_rotate: vector of length " + std::to_string(x.size()) +
                     " for dimension " + std::to_string(config.dim));
  }
  const auto theta = config.thetas();
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double angle = position * theta[k];
    const double c = std::cos(angle), s = std::sin(angle);
    out[2 * k] = x[2 * k] * c - x[2 * k + 1] * s;
    out[2 * k + 1] = x[2 * k] * s + x[2 * k + 1] * c;
  }
  return out;
}

}  // namespace spa
