#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtl/curriculum.hpp"
#include "mtl/meta.hpp"

namespace mtl {

// Full meta-training drive: ordinary meta-batches with failure recording,
// periodic hard phases, decayed outer learning rate, periodic validation
// snapshots, and best-checkpoint selection.
struct MetaTrainConfig {
  MetaConfig meta;
  CurriculumConfig curriculum;
  std::int64_t total_tasks = 2000;  // budget, hard tasks included
  std::int64_t snapshot_every = 500;  // in tasks; every snapshot is validated
  int val_tasks = 100;
  int threads = 1;  // workers per meta-batch; 1 = sequential per-task updates
};

struct MetricsRow {
  std::int64_t iteration;  // meta-batch index
  std::string phase;       // "normal" | "hard"
  std::int64_t task_idx;   // running task count, 0-based
  double test_loss;
  double mean_acc;
  int hardest_class;  // global class id
};

struct HardPhaseRecord {
  std::int64_t iteration;  // meta-batch index when the phase fired
  std::vector<int> classes;
  std::vector<int> padded;
  std::string method;
};

struct SnapshotRecord {
  std::int64_t task_idx;  // tasks completed when the snapshot was taken
  MetaModel model;
  double val_acc;
};

struct MetaTrainResult {
  MetaModel model;  // state after the last task
  std::vector<MetricsRow> metrics;
  std::vector<HardPhaseRecord> hard_phases;
  std::vector<SnapshotRecord> snapshots;  // includes the final state
  int best_snapshot = -1;                 // highest validation accuracy
};

// Seed streams: episode sampling, hard-task resampling, validation tasks, and
// parameter initialization are derived independently, so disabling the
// curriculum leaves the ordinary episode sequence untouched.
MetaTrainResult run_meta_training(const Dataset& ds, const FeatureExtractor& pretrained,
                                  const VariantSpec& variant, const MetaTrainConfig& cfg,
                                  std::uint64_t seed, std::ostream* run_log = nullptr);

void write_meta_csv(const std::vector<MetricsRow>& rows, const std::string& path);

}  // namespace mtl
