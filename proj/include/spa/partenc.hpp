#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "spa/geom.hpp"
#include "spa/numerics.hpp"

namespace spa {

// Shared PointNet-style part encoder: a per-point MLP with relu, max-pooled
// over the points, followed by one dense layer.
struct EncoderConfig {
  std::size_t points = 1000;                    // points per part
  std::vector<std::size_t> hidden = {64, 128};  // per-point hidden widths
  std::size_t width = 512;                      // feature width d_enc
};

// Adds "enc.*" tensors to `params`, uniform in +-1/sqrt(fan_in).
void init_part_encoder(nn::ParamSet& params, const EncoderConfig& config,
                       std::mt19937_64& rng);

// Encodes every part in one pass: returns an (N x width) node. Each part must
// have exactly config.points points. Rows are computed independently, so the
// result equals N separate calls bit for bit.
nn::Var encode_parts(nn::Graph& graph, const nn::ParamSet& params,
                     const EncoderConfig& config, std::span<const PartCloud> parts);

// Value-only convenience for a single part.
std::vector<double> encode_part(const PartCloud& cloud, const nn::ParamSet& params,
                                const EncoderConfig& config);

// Uniform(-1/sqrt(in), 1/sqrt(in)) weight (in x out) and bias (out).
void add_linear(nn::ParamSet& params, const std::string& prefix, std::size_t in,
                std::size_t out, std::mt19937_64& rng);

// x W + b with the tensors registered by add_linear.
nn::Var linear(nn::Graph& graph, const nn::ParamSet& params, const std::string& prefix,
               const nn::Var& x);

}  // namespace spa
