#include "spa/partenc.hpp"

#include <cmath>
#include <string>

#include "spa/error.hpp"

namespace spa {

void add_linear(nn::ParamSet& params, const std::string& prefix, std::size_t in,
                std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out), b(out);
  for (double& v : w) v = u(rng);
  for (double& v : b) v = u(rng);
  params.add(prefix + ".w", nn::Tensor({in, out}, std::move(w)));
  params.add(prefix + ".b", nn::Tensor({out}, std::move(b)));
}

nn::Var linear(nn::Graph& graph, const nn::ParamSet& params, const std::string& prefix,
               const nn::Var& x) {
  return nn::add_row(nn::matmul(x, graph.param(params, prefix + ".w")),
                     graph.param(params, prefix + ".b"));
}

void init_part_encoder(nn::ParamSet& params, const EncoderConfig& config,
                       std::mt19937_64& rng) {
  std::size_t in = 3;
  for (std::size_t k = 0; k < config.hidden.size(); ++k) {
    add_linear(params, "enc.point" + std::to_string(k), in, config.hidden[k], rng);
    in = config.hidden[k];
  }
  add_linear(params, "enc.point" + std::to_string(config.hidden.size()), in, config.width, rng);
  add_linear(params, "enc.out", config.width, config.width, rng);
}

nn::Var encode_parts(nn::Graph& graph, const nn::ParamSet& params,
                     const EncoderConfig& config, std::span<const PartCloud> parts) {
  if (parts.empty()) throw ShapeError("encode_parts: no parts");
  const std::size_t p = config.points;
  std::vector<double> stacked;
  stacked.reserve(parts.size() * p * 3);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (static_cast<std::size_t>(parts[i].rows()) != p) {
      throw ShapeError("encode_parts: part " + std::to_string(i) + " has " +
                       std::to_string(parts[i].rows()) + " points, encoder expects " +
                       std::to_string(p));
    }
    stacked.insert(stacked.end(), parts[i].data(), parts[i].data() + p * 3);
  }
  nn::Var h = graph.constant(nn::Tensor({parts.size() * p, 3}, std::move(stacked)));
  for (std::size_t k = 0; k <= config.hidden.size(); ++k) {
    h = nn::relu(linear(graph, params, "enc.point" + std::to_string(k), h));
  }
  std::vector<nn::Var> pooled;
  pooled.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    pooled.push_back(nn::max_over_axis(nn::slice_rows(h, i * p, (i + 1) * p), 0));
  }
  return linear(graph, params, "enc.out", nn::concat_rows(pooled));
}

std::vector<double> encode_part(const PartCloud& cloud, const nn::ParamSet& params,
                                const EncoderConfig& config) {
  nn::Graph graph;
  nn::Var v = encode_parts(graph, params, config, std::span<const PartCloud>(&cloud, 1));
  return std::vector<double>(v.value().begin(), v.value().end());
}

}  // namespace spa
