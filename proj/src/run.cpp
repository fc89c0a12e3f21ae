#include "spa/run.hpp"

#include <fstream>
#include <ostream>

#include "spa/error.hpp"

namespace spa {

namespace fs = std::filesystem;

std::vector<TrainSample> make_samples(std::span<const AssemblyTask* const> tasks,
                                      const RunConfig& config) {
  std::vector<TrainSample> out;
  out.reserve(tasks.size());
  for (const AssemblyTask* t : tasks) {
    out.push_back(to_sample(with_pattern(*t, config.pattern), config.model.encoder.points));
  }
  return out;
}

std::vector<Pose> predict_task(const Model& model, const AssemblyTask& task,
                               const RunConfig& config) {
  const AssemblyTask ordered = with_pattern(task, config.pattern);
  const TrainSample s = to_sample(ordered, config.model.encoder.points);
  const std::vector<Pose> in_chain = model.predict(s.input, config.encodings);
  std::vector<Pose> out(task.size());
  for (std::size_t k = 0; k < ordered.chain.size(); ++k) out[ordered.chain[k]] = in_chain[k];
  return out;
}

MetricReport evaluate_tasks(const Model* model, std::span<const AssemblyTask* const> tasks,
                            const RunConfig& config, std::size_t threads) {
  std::vector<ObjectMetrics> objects(tasks.size());
  for_each_index(tasks.size(), threads, [&](std::size_t k) {
    const AssemblyTask& t = *tasks[k];
    const std::vector<Pose> pred = model ? predict_task(*model, t, config) : t.gt;
    objects[k] = evaluate_object(t.id, t.category, pred, t.gt, t.parts, t.grouping, t.contacts,
                                 config.metrics);
  });
  return aggregate(std::move(objects), config.metrics);
}

nlohmann::json history_line(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"val_pa", r.val_pa}};
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace

RunResult train_run(const RunConfig& config, const Dataset& data, const fs::path& out_dir,
                    std::size_t threads, std::ostream* log) {
  const std::vector<const AssemblyTask*> train_tasks = data.subset(data.split.train);
  const std::vector<const AssemblyTask*> val_tasks = data.subset(data.split.val);
  const std::vector<const AssemblyTask*> test_tasks = data.subset(data.split.test);
  if (train_tasks.empty()) throw DataError("the train split is empty");
  if (test_tasks.empty()) throw DataError("the test split is empty");
  for (const AssemblyTask* t : train_tasks) t->Validate();

  TrainConfig tc = config.train;
  tc.threads = threads;
  const std::vector<TrainSample> train = make_samples(train_tasks, config);
  const std::vector<TrainSample> val = make_samples(val_tasks, config);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_config(config, out_dir / "config.json");
  }
  std::string history;
  Model model(config.model, config.train.seed);
  RunResult result;
  result.fit = fit(model, train, val, tc, [&](const EpochRecord& r) {
    history += history_line(r).dump() + "\n";
    if (log) {
      *log << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss << " val_pa "
           << r.val_pa << std::endl;
    }
  });
  const Model best(config.model, result.fit.best);
  result.report = evaluate_tasks(&best, test_tasks, config, threads);

  if (!out_dir.empty()) {
    nn::save_checkpoint(result.fit.best, (out_dir / "checkpoint.spac").string());
    write_text(out_dir / "history.jsonl", history);
    nlohmann::json report = to_json(result.report);
    report["best_epoch"] = result.fit.best_epoch;
    report["best_val_pa"] = result.fit.best_val_pa;
    write_text(out_dir / "report.json", report.dump(2) + "\n");
  }
  return result;
}

std::vector<std::pair<std::string, RunConfig>> ablation_grid(const RunConfig& base,
                                                             const std::string& axis) {
  std::vector<std::pair<std::string, RunConfig>> grid;
  if (axis == "encodings") {
    const std::pair<const char*, EncodingFlags> rows[] = {
        {"vanilla", {false, false, false}},   {"renc", {false, true, false}},
        {"senc", {false, false, true}},       {"oenc", {true, false, false}},
        {"oenc+renc", {true, true, false}},   {"oenc+senc", {true, false, true}},
        {"oenc+renc+senc", {true, true, true}}};
    for (const auto& [name, flags] : rows) {
      RunConfig c = base;
      c.encodings = flags;
      c.Resolve();
      grid.emplace_back(name, c);
    }
  } else if (axis == "pattern") {
    for (SequencePattern p : all_patterns()) {
      RunConfig c = base;
      c.pattern = p;
      grid.emplace_back(to_string(p), c);
    }
  } else if (axis == "generator") {
    for (GeneratorKind g : {GeneratorKind::kParallel, GeneratorKind::kAutoregressive}) {
      RunConfig c = base;
      c.model.generator = g;
      c.Resolve();
      grid.emplace_back(to_string(g), c);
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (expected encodings|pattern|generator)");
  }
  return grid;
}

}  // namespace spa
