#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spa/geom.hpp"
#include "spa/knowledge.hpp"
#include "spa/numerics.hpp"
#include "spa/partenc.hpp"

namespace spa {

enum class GeneratorKind { kParallel, kAutoregressive };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_from_string(const std::string& name);

struct EncodingFlags {
  bool oenc = true;  // one-hot assembly position
  bool renc = true;  // rotary relation encoding in attention
  bool senc = true;  // one-hot symmetry group

  bool operator==(const EncodingFlags&) const = default;
};

struct ModelConfig {
  std::size_t d = 512;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t n_max = 20;
  std::size_t m_max = 20;
  GeneratorKind generator = GeneratorKind::kParallel;
  EncoderConfig encoder;
  double rope_base = 10000.0;
  double layernorm_eps = 1e-5;

  // Throws ConfigError when the widths are inconsistent.
  void Validate() const;
  std::size_t head_dim() const { return d / heads; }
};

// One object as the network sees it: parts listed in assembly order.
struct ModelInput {
  std::vector<PartCloud> clouds;  // encoder resolution, one per part
  std::vector<int> group_ids;     // 1-based symmetry group per part
};

// Raw pose outputs: unit quaternions (N x 4, w x y z) and translations (N x 3).
struct PoseVars {
  nn::Var quat;
  nn::Var trans;
};

// The full network: part encoder, knowledge fusion, transformer and pose head.
// Parameters are owned here and bound by reference into each forward graph.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  // Adopts trained weights; names and shapes must match a fresh model.
  Model(ModelConfig config, nn::ParamSet params);

  const ModelConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // (N x d_enc) part features.
  nn::Var encode(nn::Graph& graph, std::span<const PartCloud> clouds) const;

  // token_i = Linear(v_i (+) e(i) (+) e(s_i)); disabled encodings are zeros.
  nn::Var fuse(nn::Graph& graph, const nn::Var& features, std::span<const int> group_ids,
               const EncodingFlags& flags) const;

  // Bidirectional transformer over all tokens, then the pose head.
  PoseVars parallel(nn::Graph& graph, const nn::Var& tokens, bool renc) const;

  // Decodes the first `steps` poses (steps <= N) with the part-specifier
  // recursion; the prompt holds every token.
  PoseVars autoregressive(nn::Graph& graph, const nn::Var& tokens, bool renc,
                          std::size_t steps) const;

  PoseVars forward(nn::Graph& graph, const ModelInput& input, const EncodingFlags& flags) const;

  // Inference: poses aligned with input order, quaternions in canonical sign.
  std::vector<Pose> predict(const ModelInput& input, const EncodingFlags& flags) const;

 private:
  nn::Var transformer(nn::Graph& graph, nn::Var x, std::span<const double> positions,
                      std::span<const std::uint8_t> mask, bool renc) const;
  PoseVars head(nn::Graph& graph, const nn::Var& z) const;

  ModelConfig config_;
  nn::ParamSet params_;
};

// Reads poses out of a forward pass.
std::vector<Pose> to_poses(const PoseVars& vars);

}  // namespace spa
