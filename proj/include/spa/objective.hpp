#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spa/generator.hpp"
#include "spa/geom.hpp"
#include "spa/knowledge.hpp"
#include "spa/numerics.hpp"

namespace spa {

struct LossWeights {
  double translation = 1.0;
  double rotation = 10.0;
  double shape = 1.0;

  void Validate() const;
};

// How the rotation term places the predicted part before comparing clouds.
enum class RotationLoss { kRotationOnly, kFullPose };

std::string to_string(RotationLoss mode);
RotationLoss rotation_loss_from_string(const std::string& name);

// gt_of[i] is the ground-truth slot assigned to prediction i. Only parts of
// the same symmetry group are ever exchanged.
struct Matching {
  std::vector<std::size_t> gt_of;

  static Matching Identity(std::size_t n);
  bool operator==(const Matching&) const = default;
};

// Optimal assignment for a square cost matrix (row-major, k x k). Among
// assignments whose total is within a relative 1e-12 of the optimum, the
// lexicographically smallest is returned. result[row] = column.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t k);

// Within each group, assigns predictions to ground-truth slots minimizing the
// summed Chamfer distance between placed clouds.
Matching match_groups(std::span<const Pose> pred, std::span<const PartCloud> parts,
                      std::span<const Pose> gt, const SymmetryGrouping& grouping);

// Differentiable loss terms for one object. `pred` rows follow `parts`.
struct LossTerms {
  nn::Var translation;
  nn::Var rotation;
  nn::Var shape;
  nn::Var total;
};

LossTerms object_loss(nn::Graph& graph, const PoseVars& pred, std::span<const PartCloud> parts,
                      std::span<const Pose> gt, const Matching& matching,
                      const LossWeights& weights, RotationLoss mode = RotationLoss::kRotationOnly);

// Value versions. The per-part terms expect `gt` already matched to `pred`.
double loss_translation(std::span<const Pose> pred, std::span<const Pose> gt);
double loss_rotation(std::span<const Pose> pred, std::span<const Pose> gt,
                     std::span<const PartCloud> parts,
                     RotationLoss mode = RotationLoss::kRotationOnly);
double loss_shape(std::span<const Pose> pred, std::span<const Pose> gt,
                  std::span<const PartCloud> parts);
// Matches within groups first.
double total_loss(std::span<const Pose> pred, std::span<const Pose> gt,
                  std::span<const PartCloud> parts, const SymmetryGrouping& grouping,
                  const LossWeights& weights, RotationLoss mode = RotationLoss::kRotationOnly);

// One training object: parts in assembly order at encoder resolution.
struct TrainSample {
  std::string id;
  ModelInput input;
  std::vector<Pose> gt;
  SymmetryGrouping grouping;
};

struct TrainConfig {
  double lr = 1.5e-4;
  double decay = 0.8;
  int decay_every = 80;
  std::size_t batch = 32;
  int epochs = 800;
  std::uint64_t seed = 0;
  LossWeights loss;
  RotationLoss rotation_mode = RotationLoss::kRotationOnly;
  EncodingFlags flags;
  double epsilon = 0.01;  // PA threshold used for model selection
  std::size_t threads = 1;

  void Validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_pa = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct FitResult {
  nn::ParamSet best;
  int best_epoch = -1;
  double best_val_pa = 0.0;
  std::vector<EpochRecord> history;
};

// Mean loss of the batch with gradients accumulated into `grads` (weighted
// by 1/batch size, ascending sample order).
double batch_gradient(const Model& model, std::span<const TrainSample* const> batch,
                      const TrainConfig& config, nn::GradMap& grads);

// Part-weighted, group-matched PA of the model over `samples`.
// Runs fn(k) for k in [0, count) on up to `threads` workers. Every index runs;
// the failure with the smallest index is rethrown.
void for_each_index(std::size_t count, std::size_t threads,
                    const std::function<void(std::size_t)>& fn);

double validation_pa(const Model& model, std::span<const TrainSample> samples,
                     const TrainConfig& config);

// Adam with step decay, seeded per-epoch shuffling, selection of the best
// epoch by validation PA (earliest wins ties; the final epoch when there is
// no validation data). `model` ends holding the selected weights. Throws
// NumericError naming the epoch, batch and objects on a non-finite loss.
FitResult fit(Model& model, std::span<const TrainSample> train, std::span<const TrainSample> val,
              const TrainConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace spa
