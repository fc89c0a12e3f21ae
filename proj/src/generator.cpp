#include "spa/generator.hpp"

#include <cmath>
#include <random>

#include "spa/error.hpp"

namespace spa {

using nn::Graph;
using nn::Var;

std::string to_string(GeneratorKind kind) {
  return kind == GeneratorKind::kParallel ? "parallel" : "autoregressive";
}

GeneratorKind generator_from_string(const std::string& name) {
  if (name == "parallel") return GeneratorKind::kParallel;
  if (name == "autoregressive") return GeneratorKind::kAutoregressive;
  throw ConfigError("unknown generator '" + name + "' (expected parallel|autoregressive)");
}

void ModelConfig::Validate() const {
  if (d == 0 || layers == 0 || heads == 0) throw ConfigError("model widths must be positive");
  if (d % heads != 0) {
    throw ConfigError("d=" + std::to_string(d) + " is not divisible by heads=" +
                      std::to_string(heads));
  }
  if (head_dim() % 2 != 0) throw ConfigError("head dimension must be even for rotary encoding");
  if (d % 2 != 0) throw ConfigError("d must be even");
  if (n_max == 0 || m_max == 0) throw ConfigError("n_max and m_max must be positive");
  if (encoder.points == 0 || encoder.width == 0) throw ConfigError("encoder sizes must be positive");
  for (std::size_t h : encoder.hidden) {
    if (h == 0) throw ConfigError("encoder hidden widths must be positive");
  }
}

namespace {

void add_layernorm(nn::ParamSet& params, const std::string& prefix, std::size_t width) {
  params.add(prefix + ".g", nn::Tensor({width}, 1.0));
  params.add(prefix + ".b", nn::Tensor({width}, 0.0));
}

Var layernorm(Graph& graph, const nn::ParamSet& params, const std::string& prefix,
              const Var& x, double eps) {
  return nn::add_row(nn::mul_row(nn::layernorm_rows(x, eps), graph.param(params, prefix + ".g")),
                     graph.param(params, prefix + ".b"));
}

std::string layer_prefix(std::size_t l) { return "tf." + std::to_string(l); }

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.Validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.d;
  init_part_encoder(params_, config_.encoder, rng);
  add_linear(params_, "fuse", config_.encoder.width + config_.n_max + config_.m_max, d, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = layer_prefix(l);
    add_layernorm(params_, p + ".ln1", d);
    add_linear(params_, p + ".q", d, d, rng);
    add_linear(params_, p + ".k", d, d, rng);
    add_linear(params_, p + ".v", d, d, rng);
    add_linear(params_, p + ".o", d, d, rng);
    add_layernorm(params_, p + ".ln2", d);
    add_linear(params_, p + ".ff1", d, 4 * d, rng);
    add_linear(params_, p + ".ff2", 4 * d, d, rng);
  }
  add_layernorm(params_, "tf.ln_f", d);
  add_linear(params_, "head.1", d, d, rng);
  add_linear(params_, "head.2", d, 7, rng);
  // Untrained output starts near the identity rotation.
  auto bias = params_.at("head.2.b").values();
  std::fill(bias.begin(), bias.end(), 0.0);
  bias[0] = 1.0;
  if (config_.generator == GeneratorKind::kAutoregressive) {
    add_linear(params_, "ar.phi1", d, d / 2, rng);
    add_linear(params_, "ar.phi2", d, d / 2, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> z0(d / 2);
    for (double& v : z0) v = u(rng);
    params_.add("ar.z0", nn::Tensor({1, d / 2}, std::move(z0)));
  }
}

Model::Model(ModelConfig config, nn::ParamSet params) : Model(std::move(config), 0) {
  if (params.names() != params_.names()) {
    throw ConfigError("checkpoint tensors do not match the model configuration");
  }
  for (const std::string& name : params_.names()) {
    if (params.at(name).shape() != params_.at(name).shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                        nn::shape_str(params.at(name).shape()) + ", model expects " +
                        nn::shape_str(params_.at(name).shape()));
    }
  }
  params_ = std::move(params);
}

Var Model::encode(Graph& graph, std::span<const PartCloud> clouds) const {
  return encode_parts(graph, params_, config_.encoder, clouds);
}

Var Model::fuse(Graph& graph, const Var& features, std::span<const int> group_ids,
                const EncodingFlags& flags) const {
  const std::size_t n = features.rows();
  if (group_ids.size() != n) {
    throw ShapeError("fuse: " + std::to_string(group_ids.size()) + " group ids for " +
                     std::to_string(n) + " parts");
  }
  if (n > config_.n_max) {
    throw CapacityError("object has " + std::to_string(n) + " parts, model capacity is " +
                        std::to_string(config_.n_max));
  }
  std::vector<double> order(n * config_.n_max, 0.0);
  std::vector<double> sym(n * config_.m_max, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto oe = order_encoding(i, config_.n_max);
    const auto se = symmetry_encoding(group_ids[i], config_.m_max);
    if (flags.oenc) std::copy(oe.begin(), oe.end(), order.begin() + i * config_.n_max);
    if (flags.senc) std::copy(se.begin(), se.end(), sym.begin() + i * config_.m_max);
  }
  std::vector<Var> parts = {features, graph.constant(nn::Tensor({n, config_.n_max}, order)),
                            graph.constant(nn::Tensor({n, config_.m_max}, sym))};
  return linear(graph, params_, "fuse", nn::concat_cols(parts));
}

Var Model::transformer(Graph& graph, Var x, std::span<const double> positions,
                       std::span<const std::uint8_t> mask, bool renc) const {
  const std::size_t hd = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = layer_prefix(l);
    Var h = layernorm(graph, params_, p + ".ln1", x, config_.layernorm_eps);
    Var q = linear(graph, params_, p + ".q", h);
    Var k = linear(graph, params_, p + ".k", h);
    Var v = linear(graph, params_, p + ".v", h);
    std::vector<Var> heads;
    heads.reserve(config_.heads);
    for (std::size_t head = 0; head < config_.heads; ++head) {
      Var qh = nn::slice_cols(q, head * hd, (head + 1) * hd);
      Var kh = nn::slice_cols(k, head * hd, (head + 1) * hd);
      Var vh = nn::slice_cols(v, head * hd, (head + 1) * hd);
      if (renc) {
        qh = nn::rotary_rows(qh, positions, config_.rope_base);
        kh = nn::rotary_rows(kh, positions, config_.rope_base);
      }
      Var scores = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt);
      Var attn = mask.empty() ? nn::softmax_rows(scores) : nn::masked_softmax_rows(scores, mask);
      heads.push_back(nn::matmul(attn, vh));
    }
    x = nn::add(x, linear(graph, params_, p + ".o", nn::concat_cols(heads)));
    Var f = layernorm(graph, params_, p + ".ln2", x, config_.layernorm_eps);
    f = linear(graph, params_, p + ".ff2", nn::relu(linear(graph, params_, p + ".ff1", f)));
    x = nn::add(x, f);
  }
  return layernorm(graph, params_, "tf.ln_f", x, config_.layernorm_eps);
}

PoseVars Model::head(Graph& graph, const Var& z) const {
  Var raw = linear(graph, params_, "head.2", nn::relu(linear(graph, params_, "head.1", z)));
  return {nn::l2_normalize_rows(nn::slice_cols(raw, 0, 4), 1e-12), nn::slice_cols(raw, 4, 7)};
}

PoseVars Model::parallel(Graph& graph, const Var& tokens, bool renc) const {
  const std::size_t n = tokens.rows();
  std::vector<double> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<double>(i);
  return head(graph, transformer(graph, tokens, positions, {}, renc));
}

PoseVars Model::autoregressive(Graph& graph, const Var& tokens, bool renc,
                               std::size_t steps) const {
  const std::size_t n = tokens.rows();
  if (steps == 0 || steps > n) {
    throw ShapeError("autoregressive: steps=" + std::to_string(steps) + " for " +
                     std::to_string(n) + " parts");
  }
  std::vector<Var> rows = {tokens};
  std::vector<Var> z_out;
  Var prev = graph.param(params_, "ar.z0");
  for (std::size_t i = 1; i <= steps; ++i) {
    Var spec = linear(graph, params_, "ar.phi2", nn::slice_rows(tokens, i - 1, i));
    std::vector<Var> slot = {prev, spec};
    rows.push_back(nn::concat_cols(slot));
    const std::size_t len = n + i;
    std::vector<double> positions(len);
    for (std::size_t t = 0; t < len; ++t) positions[t] = static_cast<double>(t);
    // Prompt rows see the prompt; decode rows see the prompt and earlier slots.
    std::vector<std::uint8_t> mask(len * len, 0);
    for (std::size_t r = 0; r < len; ++r) {
      const std::size_t visible = r < n ? n : r + 1;
      for (std::size_t c = 0; c < visible; ++c) mask[r * len + c] = 1;
    }
    Var out = transformer(graph, nn::concat_rows(rows), positions, mask, renc);
    Var z = nn::slice_rows(out, len - 1, len);
    z_out.push_back(z);
    prev = linear(graph, params_, "ar.phi1", z);
  }
  return head(graph, nn::concat_rows(z_out));
}

PoseVars Model::forward(Graph& graph, const ModelInput& input, const EncodingFlags& flags) const {
  if (input.clouds.empty()) throw ShapeError("forward: object has no parts");
  Var tokens = fuse(graph, encode(graph, input.clouds), input.group_ids, flags);
  if (config_.generator == GeneratorKind::kParallel) return parallel(graph, tokens, flags.renc);
  return autoregressive(graph, tokens, flags.renc, input.clouds.size());
}

std::vector<Pose> Model::predict(const ModelInput& input, const EncodingFlags& flags) const {
  Graph graph;
  return to_poses(forward(graph, input, flags));
}

std::vector<Pose> to_poses(const PoseVars& vars) {
  const std::size_t n = vars.quat.rows();
  auto q = vars.quat.value();
  auto t = vars.trans.value();
  std::vector<Pose> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Pose::FromWxyz({q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]},
                                 Eigen::Vector3d(t[3 * i], t[3 * i + 1], t[3 * i + 2])));
  }
  return out;
}

}  // namespace spa
