// Command-line front end: gen-data, train, eval, assemble, ablate, config.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "spa/config.hpp"
#include "spa/data.hpp"
#include "spa/error.hpp"
#include "spa/run.hpp"

namespace fs = std::filesystem;
using namespace spa;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::size_t env_threads() {
  const char* v = std::getenv("SPA_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("SPA_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// The run directory of a checkpoint holds its resolved config.
RunConfig config_for_checkpoint(const fs::path& ckpt, const std::string& override_path) {
  if (!override_path.empty()) return load_config(override_path);
  const fs::path beside = ckpt.parent_path() / "config.json";
  if (!fs::exists(beside)) {
    throw ConfigError("no config.json next to " + ckpt.string() + "; pass --config");
  }
  return load_config(beside);
}

Model load_model(const fs::path& ckpt, const RunConfig& config) {
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt.string());
  return Model(config.model, nn::load_checkpoint(ckpt.string()));
}

std::vector<std::string> split_ids(const Dataset& data, const std::string& split) {
  if (split == "train") return data.split.train;
  if (split == "val") return data.split.val;
  if (split == "test") return data.split.test;
  std::vector<std::string> all;
  for (const AssemblyTask& t : data.tasks) all.push_back(t.id);
  return all;
}

nlohmann::json summary_row(const MetricSummary& s) {
  return {{"scd", s.scd}, {"pa", s.pa}, {"ca", s.ca}, {"sr", s.sr}, {"objects", s.objects}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-aware 3D part assembly"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_kind = "mixed", gen_out, gen_pattern = "diagonal";
  std::size_t gen_count = 512, gen_points = 1000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--kind", gen_kind, "table|chair|shelf|mixed")->capture_default_str();
  gen->add_option("--count", gen_count)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--points", gen_points, "points per part")->capture_default_str();
  gen->add_option("--pattern", gen_pattern, "stored assembly order")->capture_default_str();
  gen->add_option("--out", gen_out)->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_out;
  train->add_option("--config", train_config)->required();
  train->add_option("--data", train_data)->required();
  train->add_option("--out", train_out, "run directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_report, eval_config, eval_split = "test";
  bool eval_gt = false;
  eval->add_option("--ckpt", eval_ckpt);
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--report", eval_report)->required();
  eval->add_option("--config", eval_config, "defaults to config.json beside the checkpoint");
  eval->add_option("--split", eval_split)
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  eval->add_flag("--gt-as-prediction", eval_gt, "score the ground truth poses");

  // assemble
  auto* assemble = app.add_subcommand("assemble", "Assemble one object");
  std::string asm_ckpt, asm_object, asm_export, asm_config, asm_pattern;
  assemble->add_option("--ckpt", asm_ckpt)->required();
  assemble->add_option("--object", asm_object, "object JSON file")->required();
  assemble->add_option("--pattern", asm_pattern, "overrides the configured pattern");
  assemble->add_option("--export", asm_export, ".ply or .obj");
  assemble->add_option("--config", asm_config);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run one ablation axis");
  std::string abl_config, abl_axis, abl_out, abl_data;
  ablate->add_option("--config", abl_config)->required();
  ablate->add_option("--axis", abl_axis)
      ->required()
      ->check(CLI::IsMember({"encodings", "pattern", "generator"}));
  ablate->add_option("--data", abl_data)->required();
  ablate->add_option("--out", abl_out)->required();

  // config
  auto* cfg = app.add_subcommand("config", "Print a resolved configuration");
  std::string cfg_preset = "paper", cfg_file;
  cfg->add_option("--preset", cfg_preset)->check(CLI::IsMember({"paper", "desk"}))->capture_default_str();
  cfg->add_option("--file", cfg_file, "validate and resolve this file instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const std::size_t threads = env_threads();
    if (*gen) {
      SynthOptions opts;
      opts.points = gen_points;
      opts.pattern = pattern_from_string(gen_pattern);
      Dataset d;
      d.tasks = synth_dataset(gen_kind, gen_count, gen_seed, opts);
      std::vector<std::string> ids;
      for (const AssemblyTask& t : d.tasks) ids.push_back(t.id);
      d.split = make_split(ids, gen_seed);
      save_dataset(d, gen_out);
      std::cout << "wrote " << d.tasks.size() << " objects to " << gen_out << " (train "
                << d.split.train.size() << ", val " << d.split.val.size() << ", test "
                << d.split.test.size() << ")\n";
    } else if (*train) {
      const RunConfig config = load_config(train_config);
      const Dataset data = load_dataset(train_data);
      const RunResult r = train_run(config, data, train_out, threads, &std::cerr);
      std::cout << nlohmann::json{{"best_epoch", r.fit.best_epoch},
                                  {"best_val_pa", r.fit.best_val_pa},
                                  {"test", summary_row(r.report.overall)}}
                       .dump()
                << "\n";
    } else if (*eval) {
      if (!eval_gt && eval_ckpt.empty()) throw ConfigError("eval needs --ckpt or --gt-as-prediction");
      const RunConfig config = eval_ckpt.empty()
                                   ? (eval_config.empty() ? RunConfig{} : load_config(eval_config))
                                   : config_for_checkpoint(eval_ckpt, eval_config);
      const Dataset data = load_dataset(eval_data);
      const auto tasks = data.subset(split_ids(data, eval_split));
      if (tasks.empty()) throw DataError("split '" + eval_split + "' is empty");
      std::optional<Model> model;
      if (!eval_gt) model.emplace(load_model(eval_ckpt, config));
      const MetricReport report = evaluate_tasks(model ? &*model : nullptr, tasks, config, threads);
      nlohmann::json j = to_json(report);
      j["split"] = eval_split;
      j["gt_as_prediction"] = eval_gt;
      write_json(eval_report, j);
      std::cout << summary_row(report.overall).dump() << "\n";
    } else if (*assemble) {
      RunConfig config = config_for_checkpoint(asm_ckpt, asm_config);
      if (!asm_pattern.empty()) config.pattern = pattern_from_string(asm_pattern);
      const Model model = load_model(asm_ckpt, config);
      const AssemblyTask task = load_task(asm_object);
      task.Validate();
      const std::vector<Pose> pred = predict_task(model, task, config);
      if (!asm_export.empty()) export_shape(task.parts, pred, asm_export);
      const ObjectMetrics m = evaluate_object(task.id, task.category, pred, task.gt, task.parts,
                                              task.grouping, task.contacts, config.metrics);
      nlohmann::json poses = nlohmann::json::array();
      for (const Pose& p : pred) {
        poses.push_back({{"t", {p.translation.x(), p.translation.y(), p.translation.z()}},
                         {"q", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}}});
      }
      std::cout << nlohmann::json{{"id", task.id},
                                  {"pattern", to_string(config.pattern)},
                                  {"poses", poses},
                                  {"scd", m.scd},
                                  {"pa", m.pa},
                                  {"ca", m.ca},
                                  {"sr", m.sr}}
                       .dump(2)
                << "\n";
    } else if (*ablate) {
      const RunConfig base = load_config(abl_config);
      const Dataset data = load_dataset(abl_data);
      nlohmann::json summary = nlohmann::json::object();
      for (const auto& [name, config] : ablation_grid(base, abl_axis)) {
        std::cerr << "== " << abl_axis << ": " << name << "\n";
        const RunResult r = train_run(config, data, fs::path(abl_out) / name, threads, &std::cerr);
        summary[name] = summary_row(r.report.overall);
        std::cout << name << " " << summary[name].dump() << "\n";
      }
      write_json(fs::path(abl_out) / "summary.json", {{"axis", abl_axis}, {"runs", summary}});
    } else if (*cfg) {
      const RunConfig c = !cfg_file.empty() ? load_config(cfg_file)
                          : cfg_preset == "desk" ? RunConfig::Desk()
                                                 : RunConfig{};
      std::cout << to_json(c).dump(2) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
