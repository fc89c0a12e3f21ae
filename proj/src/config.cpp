#include "spa/config.hpp"

#include <fstream>
#include <set>

#include "spa/error.hpp"

namespace spa {

namespace {

using nlohmann::json;

// Reads an object section, rejecting keys outside `allowed`.
class Section {
 public:
  Section(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    for (const auto& [key, value] : j_.items()) {
      if (!allowed.count(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const { return j_.at(key); }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where(key) + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0) {
        throw ConfigError(where(key) + ": must not be negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    } else {
      if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    }
    out = v.get<T>();
  }

 private:
  const json& j_;
  std::string path_;
};

}  // namespace

void RunConfig::Resolve() {
  train.flags = encodings;
  train.epsilon = metrics.epsilon;
  model.Validate();
  train.Validate();
  metrics.Validate();
}

RunConfig RunConfig::Desk() {
  RunConfig c;
  c.model.d = 64;
  c.model.layers = 2;
  c.model.heads = 4;
  c.model.n_max = 16;
  c.model.m_max = 16;
  c.model.encoder.points = 64;
  c.model.encoder.hidden = {32, 64};
  c.model.encoder.width = 128;
  c.train.lr = 1e-3;
  c.train.batch = 32;
  c.train.epochs = 200;
  c.train.decay_every = 80;
  c.Resolve();
  return c;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  const Section root(j, "config", {"model", "encodings", "train", "loss", "metrics", "pattern"});
  if (root.has("model")) {
    const Section s(root.at("model"), "model",
                    {"d", "layers", "heads", "n_max", "m_max", "generator", "encoder", "rope_base"});
    s.read("d", c.model.d);
    s.read("layers", c.model.layers);
    s.read("heads", c.model.heads);
    s.read("n_max", c.model.n_max);
    s.read("m_max", c.model.m_max);
    s.read("rope_base", c.model.rope_base);
    std::string generator = to_string(c.model.generator);
    s.read("generator", generator);
    c.model.generator = generator_from_string(generator);
    if (s.has("encoder")) {
      const Section e(s.at("encoder"), "model.encoder", {"points", "hidden", "width"});
      e.read("points", c.model.encoder.points);
      e.read("width", c.model.encoder.width);
      if (e.has("hidden")) {
        const json& h = e.at("hidden");
        if (!h.is_array()) throw ConfigError("model.encoder.hidden: expected an array");
        c.model.encoder.hidden.clear();
        for (const json& v : h) {
          if (!v.is_number_integer() || v.get<long long>() <= 0) {
            throw ConfigError("model.encoder.hidden: expected positive integers");
          }
          c.model.encoder.hidden.push_back(v.get<std::size_t>());
        }
      }
    }
  }
  if (root.has("encodings")) {
    const Section s(root.at("encodings"), "encodings", {"oenc", "renc", "senc"});
    s.read("oenc", c.encodings.oenc);
    s.read("renc", c.encodings.renc);
    s.read("senc", c.encodings.senc);
  }
  if (root.has("train")) {
    const Section s(root.at("train"), "train",
                    {"lr", "decay", "decay_every", "batch", "epochs", "seed"});
    s.read("lr", c.train.lr);
    s.read("decay", c.train.decay);
    s.read("decay_every", c.train.decay_every);
    s.read("batch", c.train.batch);
    s.read("epochs", c.train.epochs);
    s.read("seed", c.train.seed);
  }
  if (root.has("loss")) {
    const Section s(root.at("loss"), "loss", {"translation", "rotation", "shape", "rotation_mode"});
    s.read("translation", c.train.loss.translation);
    s.read("rotation", c.train.loss.rotation);
    s.read("shape", c.train.loss.shape);
    std::string mode = to_string(c.train.rotation_mode);
    s.read("rotation_mode", mode);
    c.train.rotation_mode = rotation_loss_from_string(mode);
  }
  if (root.has("metrics")) {
    const Section s(root.at("metrics"), "metrics", {"epsilon", "tau", "delta"});
    s.read("epsilon", c.metrics.epsilon);
    s.read("tau", c.metrics.tau);
    s.read("delta", c.metrics.delta);
  }
  std::string pattern = to_string(c.pattern);
  root.read("pattern", pattern);
  c.pattern = pattern_from_string(pattern);
  c.Resolve();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"model",
           {{"d", c.model.d},
            {"layers", c.model.layers},
            {"heads", c.model.heads},
            {"n_max", c.model.n_max},
            {"m_max", c.model.m_max},
            {"generator", to_string(c.model.generator)},
            {"rope_base", c.model.rope_base},
            {"encoder",
             {{"points", c.model.encoder.points},
              {"hidden", c.model.encoder.hidden},
              {"width", c.model.encoder.width}}}}},
          {"encodings",
           {{"oenc", c.encodings.oenc}, {"renc", c.encodings.renc}, {"senc", c.encodings.senc}}},
          {"train",
           {{"lr", c.train.lr},
            {"decay", c.train.decay},
            {"decay_every", c.train.decay_every},
            {"batch", c.train.batch},
            {"epochs", c.train.epochs},
            {"seed", c.train.seed}}},
          {"loss",
           {{"translation", c.train.loss.translation},
            {"rotation", c.train.loss.rotation},
            {"shape", c.train.loss.shape},
            {"rotation_mode", to_string(c.train.rotation_mode)}}},
          {"metrics",
           {{"epsilon", c.metrics.epsilon}, {"tau", c.metrics.tau}, {"delta", c.metrics.delta}}},
          {"pattern", to_string(c.pattern)}};
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << to_json(config).dump(2) << "\n";
}

}  // namespace spa
