#include "spa/objective.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "spa/error.hpp"
#include "spa/metrics.hpp"

namespace spa {

void LossWeights::Validate() const {
  for (double w : {translation, rotation, shape}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

std::string to_string(RotationLoss mode) {
  return mode == RotationLoss::kRotationOnly ? "rotation_only" : "full_pose";
}

RotationLoss rotation_loss_from_string(const std::string& name) {
  if (name == "rotation_only") return RotationLoss::kRotationOnly;
  if (name == "full_pose") return RotationLoss::kFullPose;
  throw ConfigError("unknown rotation loss mode '" + name + "' (expected rotation_only|full_pose)");
}

Matching Matching::Identity(std::size_t n) {
  Matching m;
  m.gt_of.resize(n);
  std::iota(m.gt_of.begin(), m.gt_of.end(), std::size_t{0});
  return m;
}

namespace {

// Hungarian algorithm with potentials, O(k^3). Returns column per row.
std::vector<std::size_t> hungarian(const std::vector<double>& a, std::size_t k) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(k + 1, 0.0), v(k + 1, 0.0), minv(k + 1);
  std::vector<std::size_t> p(k + 1, 0), way(k + 1, 0);
  std::vector<char> used(k + 1);
  for (std::size_t i = 1; i <= k; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * k + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= k; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of(k);
  for (std::size_t j = 1; j <= k; ++j) col_of[p[j] - 1] = j - 1;
  return col_of;
}

// Optimal cost over the rows >= `row` using only columns not in `taken`.
double residual_optimum(std::span<const double> cost, std::size_t k, std::size_t row,
                        const std::vector<char>& taken) {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < k; ++c) {
    if (!taken[c]) cols.push_back(c);
  }
  const std::size_t r = k - row;
  if (r == 0) return 0.0;
  std::vector<double> sub(r * r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) sub[i * r + j] = cost[(row + i) * k + cols[j]];
  }
  const auto assign = hungarian(sub, r);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) total += sub[i * r + assign[i]];
  return total;
}

}  // namespace

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t k) {
  if (cost.size() != k * k) {
    throw ShapeError("solve_assignment: " + std::to_string(cost.size()) + " costs for k=" +
                     std::to_string(k));
  }
  if (k == 0) return {};
  double scale = 0.0;
  for (double c : cost) {
    if (!std::isfinite(c)) throw NumericError("solve_assignment: non-finite cost");
    scale = std::max(scale, std::abs(c));
  }
  const double tol = 1e-12 * std::max(scale * static_cast<double>(k), 1e-300);

  // Fix rows one at a time, each to the smallest column that still allows an
  // optimal completion.
  std::vector<char> taken(k, 0);
  std::vector<std::size_t> result(k);
  double prefix = 0.0;
  const double best = residual_optimum(cost, k, 0, taken);
  for (std::size_t row = 0; row < k; ++row) {
    bool placed = false;
    for (std::size_t col = 0; col < k && !placed; ++col) {
      if (taken[col]) continue;
      taken[col] = 1;
      const double with = prefix + cost[row * k + col] + residual_optimum(cost, k, row + 1, taken);
      if (with <= best + tol) {
        result[row] = col;
        prefix += cost[row * k + col];
        placed = true;
      } else {
        taken[col] = 0;
      }
    }
    if (!placed) throw NumericError("solve_assignment: no optimal completion found");
  }
  return result;
}

Matching match_groups(std::span<const Pose> pred, std::span<const PartCloud> parts,
                      std::span<const Pose> gt, const SymmetryGrouping& grouping) {
  const std::size_t n = parts.size();
  if (pred.size() != n || gt.size() != n || grouping.part_count() != n) {
    throw ShapeError("match_groups: sizes differ (pred " + std::to_string(pred.size()) +
                     ", gt " + std::to_string(gt.size()) + ", parts " + std::to_string(n) +
                     ", groups " + std::to_string(grouping.part_count()) + ")");
  }
  Matching m = Matching::Identity(n);
  for (const auto& members : grouping.members) {
    const std::size_t k = members.size();
    if (k < 2) continue;
    std::vector<PartCloud> placed_pred, placed_gt;
    for (std::size_t idx : members) {
      placed_pred.push_back(apply_pose(pred[idx], parts[idx]));
      placed_gt.push_back(apply_pose(gt[idx], parts[idx]));
    }
    std::vector<double> cost(k * k);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) cost[a * k + b] = chamfer(placed_pred[a], placed_gt[b]);
    }
    const auto assign = solve_assignment(cost, k);
    for (std::size_t a = 0; a < k; ++a) m.gt_of[members[a]] = members[assign[a]];
  }
  return m;
}

namespace {

nn::Tensor cloud_tensor(const PartCloud& c) {
  return nn::Tensor({static_cast<std::size_t>(c.rows()), 3},
                    std::vector<double>(c.data(), c.data() + c.size()));
}

void check_sizes(std::size_t pred, std::size_t gt, std::size_t parts, const char* what) {
  if (pred != gt || (parts != 0 && parts != pred)) {
    throw ShapeError(std::string(what) + ": " + std::to_string(pred) + " predictions, " +
                     std::to_string(gt) + " GT poses, " + std::to_string(parts) + " parts");
  }
}

}  // namespace

LossTerms object_loss(nn::Graph& graph, const PoseVars& pred, std::span<const PartCloud> parts,
                      std::span<const Pose> gt, const Matching& matching,
                      const LossWeights& weights, RotationLoss mode) {
  const std::size_t n = parts.size();
  check_sizes(pred.quat.rows(), gt.size(), n, "object_loss");
  if (matching.gt_of.size() != n) throw ShapeError("object_loss: matching size differs");

  std::vector<nn::Var> placed, gt_placed;
  std::vector<nn::Var> t_terms, r_terms;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = matching.gt_of[i];
    nn::Var rot = nn::quat_to_rotmat(nn::slice_rows(pred.quat, i, i + 1));
    nn::Var t = nn::slice_rows(pred.trans, i, i + 1);
    nn::Var rotated = nn::matmul(graph.constant(cloud_tensor(parts[i])), nn::transpose(rot));
    nn::Var moved = nn::add_row(rotated, t);
    placed.push_back(moved);

    const Eigen::Vector3d& ts = gt[j].translation;
    nn::Var target_t = graph.constant(nn::Tensor::matrix(1, 3, {ts.x(), ts.y(), ts.z()}));
    t_terms.push_back(nn::sum(nn::square(nn::sub(t, target_t))));
    if (mode == RotationLoss::kRotationOnly) {
      r_terms.push_back(
          nn::chamfer(rotated, graph.constant(cloud_tensor(rotate_only(gt[j], parts[j])))));
    } else {
      r_terms.push_back(
          nn::chamfer(moved, graph.constant(cloud_tensor(apply_pose(gt[j], parts[j])))));
    }
    gt_placed.push_back(graph.constant(cloud_tensor(apply_pose(gt[i], parts[i]))));
  }
  auto total_of = [](const std::vector<nn::Var>& terms) {
    nn::Var acc = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) acc = nn::add(acc, terms[k]);
    return acc;
  };
  LossTerms out;
  out.translation = total_of(t_terms);
  out.rotation = total_of(r_terms);
  out.shape = nn::chamfer(nn::concat_rows(placed), nn::concat_rows(gt_placed));
  out.total = nn::add(nn::add(nn::scale(out.translation, weights.translation),
                              nn::scale(out.rotation, weights.rotation)),
                      nn::scale(out.shape, weights.shape));
  return out;
}

double loss_translation(std::span<const Pose> pred, std::span<const Pose> gt) {
  check_sizes(pred.size(), gt.size(), 0, "loss_translation");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total += (pred[i].translation - gt[i].translation).squaredNorm();
  }
  return total;
}

double loss_rotation(std::span<const Pose> pred, std::span<const Pose> gt,
                     std::span<const PartCloud> parts, RotationLoss mode) {
  check_sizes(pred.size(), gt.size(), parts.size(), "loss_rotation");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mode == RotationLoss::kRotationOnly) {
      total += chamfer(rotate_only(pred[i], parts[i]), rotate_only(gt[i], parts[i]));
    } else {
      total += chamfer(apply_pose(pred[i], parts[i]), apply_pose(gt[i], parts[i]));
    }
  }
  return total;
}

double loss_shape(std::span<const Pose> pred, std::span<const Pose> gt,
                  std::span<const PartCloud> parts) {
  check_sizes(pred.size(), gt.size(), parts.size(), "loss_shape");
  std::vector<PartCloud> a, b;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    a.push_back(apply_pose(pred[i], parts[i]));
    b.push_back(apply_pose(gt[i], parts[i]));
  }
  return chamfer(concat_clouds(a), concat_clouds(b));
}

double total_loss(std::span<const Pose> pred, std::span<const Pose> gt,
                  std::span<const PartCloud> parts, const SymmetryGrouping& grouping,
                  const LossWeights& weights, RotationLoss mode) {
  const Matching m = match_groups(pred, parts, gt, grouping);
  std::vector<Pose> matched;
  std::vector<PartCloud> matched_parts;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    matched.push_back(gt[m.gt_of[i]]);
    matched_parts.push_back(parts[m.gt_of[i]]);
  }
  // The rotation term compares each prediction with the cloud of its slot.
  double rot = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (mode == RotationLoss::kRotationOnly) {
      rot += chamfer(rotate_only(pred[i], parts[i]), rotate_only(matched[i], matched_parts[i]));
    } else {
      rot += chamfer(apply_pose(pred[i], parts[i]), apply_pose(matched[i], matched_parts[i]));
    }
  }
  return weights.translation * loss_translation(pred, matched) + weights.rotation * rot +
         weights.shape * loss_shape(pred, gt, parts);
}

void TrainConfig::Validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (!(decay > 0.0) || decay > 1.0) throw ConfigError("train.decay must be in (0, 1]");
  if (decay_every <= 0) throw ConfigError("train.decay_every must be positive");
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("metrics.epsilon must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  loss.Validate();
}

void for_each_index(std::size_t count, std::size_t threads,
                    const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < count; k += threads) {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

// Overflowing weights can leave finite but degenerate quaternions, so the
// unit norm is checked as well.
void check_outputs(const PoseVars& out, const std::string& what) {
  const auto q = out.quat.value();
  const auto t = out.trans.value();
  const bool finite = std::all_of(q.begin(), q.end(), [](double x) { return std::isfinite(x); }) &&
                      std::all_of(t.begin(), t.end(), [](double x) { return std::isfinite(x); });
  bool unit = true;
  for (std::size_t r = 0; finite && r + 3 < q.size(); r += 4) {
    const double n = std::sqrt(q[r] * q[r] + q[r + 1] * q[r + 1] + q[r + 2] * q[r + 2] + q[r + 3] * q[r + 3]);
    unit = unit && std::abs(n - 1.0) < 1e-6;
  }
  if (!finite || !unit) throw NumericError("non-finite pose prediction on " + what);
}

}  // namespace

double batch_gradient(const Model& model, std::span<const TrainSample* const> batch,
                      const TrainConfig& config, nn::GradMap& grads) {
  const std::size_t b = batch.size();
  if (b == 0) throw ShapeError("batch_gradient: empty batch");
  const double weight = 1.0 / static_cast<double>(b);
  std::vector<nn::GradMap> per_sample(b);
  std::vector<double> losses(b);
  for_each_index(b, config.threads, [&](std::size_t k) {
    const TrainSample& s = *batch[k];
    nn::Graph graph;
    const PoseVars out = model.forward(graph, s.input, config.flags);
    check_outputs(out, "object '" + s.id + "'");
    const Matching m = match_groups(to_poses(out), s.input.clouds, s.gt, s.grouping);
    const LossTerms terms =
        object_loss(graph, out, s.input.clouds, s.gt, m, config.loss, config.rotation_mode);
    losses[k] = terms.total.item();
    if (!std::isfinite(losses[k])) {
      throw NumericError("non-finite loss on object '" + s.id + "' (translation " +
                         std::to_string(terms.translation.item()) + ", rotation " +
                         std::to_string(terms.rotation.item()) + ", shape " +
                         std::to_string(terms.shape.item()) + ")");
    }
    graph.backward(terms.total);
    graph.accumulate_param_grads(per_sample[k], weight);
  });
  double mean = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    for (const auto& [name, g] : per_sample[k]) {
      auto it = grads.find(name);
      if (it == grads.end()) it = grads.emplace(name, nn::Tensor(g.shape(), 0.0)).first;
      auto dst = it->second.values();
      auto src = g.values();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
    }
    mean += losses[k];
  }
  return mean / static_cast<double>(b);
}

double validation_pa(const Model& model, std::span<const TrainSample> samples,
                     const TrainConfig& config) {
  if (samples.empty()) return 0.0;
  std::vector<std::size_t> correct(samples.size());
  for_each_index(samples.size(), config.threads, [&](std::size_t k) {
    const TrainSample& s = samples[k];
    nn::Graph graph;
    const PoseVars out = model.forward(graph, s.input, config.flags);
    check_outputs(out, "validation object '" + s.id + "'");
    const auto pred = to_poses(out);
    const PartAccuracy pa = metric_pa(pred, s.gt, s.input.clouds, s.grouping, config.epsilon);
    correct[k] = static_cast<std::size_t>(std::count(pa.correct.begin(), pa.correct.end(), true));
  });
  std::size_t hits = 0, total = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    hits += correct[k];
    total += samples[k].gt.size();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

FitResult fit(Model& model, std::span<const TrainSample> train, std::span<const TrainSample> val,
              const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.Validate();
  if (train.empty()) throw DataError("training set is empty");
  FitResult result;
  nn::AdamState state;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = nn::step_decay_lr(config.lr, config.decay, config.decay_every, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<const TrainSample*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&train[order[k]]);
      nn::GradMap grads;
      try {
        loss_sum += batch_gradient(model, batch, config, grads) * static_cast<double>(batch.size());
      } catch (const NumericError& e) {
        std::string ids;
        for (const auto* s : batch) ids += (ids.empty() ? "" : ",") + s->id;
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + " [" + ids + "]: " + e.what());
      }
      nn::AdamConfig adam;
      adam.lr = lr;
      nn::adam_step(model.params(), grads, state, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    try {
      rec.val_pa = validation_pa(model, val, config);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const bool better = result.best_epoch < 0 || (val.empty() ? true : rec.val_pa > result.best_val_pa);
    if (better) {
      result.best = model.params();
      result.best_epoch = epoch;
      result.best_val_pa = rec.val_pa;
    }
  }
  model.params() = result.best;
  return result;
}

}  // namespace spa
