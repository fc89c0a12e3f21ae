#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spa/config.hpp"
#include "spa/data.hpp"
#include "spa/generator.hpp"
#include "spa/metrics.hpp"
#include "spa/objective.hpp"

namespace spa {

// Training samples with each task reordered by the configured pattern.
std::vector<TrainSample> make_samples(std::span<const AssemblyTask* const> tasks,
                                      const RunConfig& config);

// Predicted poses in the task's original part order.
std::vector<Pose> predict_task(const Model& model, const AssemblyTask& task,
                               const RunConfig& config);

// Scores every task; a null model scores the GT poses themselves.
MetricReport evaluate_tasks(const Model* model, std::span<const AssemblyTask* const> tasks,
                            const RunConfig& config, std::size_t threads);

struct RunResult {
  FitResult fit;
  MetricReport report;  // best checkpoint on the test split
};

// Trains on the split's train ids, selects on val, reports on test. When
// `out_dir` is non-empty it receives config.json, checkpoint.spac,
// history.jsonl and report.json. Progress lines go to `log` if given.
RunResult train_run(const RunConfig& config, const Dataset& data,
                    const std::filesystem::path& out_dir, std::size_t threads,
                    std::ostream* log = nullptr);

nlohmann::json history_line(const EpochRecord& record);

// Named sub-runs of one ablation axis: "encodings", "pattern" or "generator".
std::vector<std::pair<std::string, RunConfig>> ablation_grid(const RunConfig& base,
                                                             const std::string& axis);

}  // namespace spa
