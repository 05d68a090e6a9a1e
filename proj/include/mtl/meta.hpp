#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtl/episodes.hpp"
#include "mtl/models.hpp"
#include "mtl/rng.hpp"

namespace mtl {

// Two-loop episodic training configuration. The inner loop adapts a per-task
// copy of the classifier by full-batch gradient descent; the outer loop
// updates the cross-task parameters (scale/shift modulation and the
// classifier initialization — or raw backbone weights for the fine-tuning
// variants) from the episode's test loss.
struct MetaConfig {
  double base_lr = 0.01;  // inner-loop step size, constant
  int inner_epochs = 5;
  double meta_lr_init = 0.001;
  std::int64_t meta_lr_period = 1000;
  double meta_lr_floor = 0.0001;
  int meta_batch = 2;  // tasks per outer iteration
  bool second_order = false;
  int way = 5, shot = 1, query = 15;
};

double gamma_schedule(std::int64_t iter, const MetaConfig& cfg);

// Outcome of one episode: test loss, per-class test accuracy, and the class
// the task failed hardest on (lowest accuracy, ties to the lowest episode
// label) with the episode's samples of that class for curriculum reuse.
struct TaskResult {
  double test_loss = 0.0;
  std::vector<double> per_class_acc;
  double mean_acc = 0.0;
  int hardest_label = -1;
  int hardest_class_id = -1;
  std::vector<std::int64_t> hardest_samples;
};

// Lowest-accuracy index; ties break to the lowest index. Depends only on the
// ordering of the values, never on their magnitudes.
int hardest_class(const std::vector<double>& per_class_acc);

// The state the outer loop trains: a backbone (frozen for SS variants,
// partially trainable for FT), optional scale/shift parameters, and the
// classifier initialization.
struct MetaModel {
  FeatureExtractor extractor;
  SSParams ss;  // empty unless the variant uses scale/shift
  ClassifierHead head;
  VariantSpec variant;

  // Clones the pretrained backbone; SS variants keep it frozen and attach
  // identity scale/shift, FT variants re-enable gradients on the scoped
  // blocks. The classifier initialization is drawn fresh (sigma 0.01).
  static MetaModel create(const FeatureExtractor& pretrained, const VariantSpec& variant,
                          int way, Rng& rng);

  // The tensors the outer loop updates, in a fixed order (classifier last).
  std::vector<Tensor> meta_params() const;
  bool uses_ss() const { return variant.meta_op == MetaOp::SS; }

  MetaModel clone() const;

  void save(const std::string& path) const;
  static MetaModel load(const std::string& path);
};

// Inner loop only: returns an adapted copy of `head` after `inner_epochs`
// full-batch steps on the episode's train split. The backbone and scale/shift
// parameters are read, never written.
ClassifierHead base_learn(const Episode& ep, const Dataset& ds, const FeatureExtractor& ext,
                          const SSParams* ss, const ClassifierHead& head, double base_lr,
                          int inner_epochs);

// One task under an SS variant: inner adaptation, test-loss gradients, one
// gamma-sized step on the scale/shift parameters and the classifier
// initialization (both from the same backward pass). Returns the task result.
TaskResult meta_step(const Episode& ep, const Dataset& ds, MetaModel& model,
                     const MetaConfig& cfg, double gamma);

// Same loop under an FT variant: the outer step applies to the raw backbone
// parameters in the variant's scope plus the classifier initialization.
TaskResult meta_step_ft(const Episode& ep, const Dataset& ds, MetaModel& model,
                        const MetaConfig& cfg, double gamma);

// Dispatches to meta_step / meta_step_ft by the model's variant.
TaskResult meta_update(const Episode& ep, const Dataset& ds, MetaModel& model,
                       const MetaConfig& cfg, double gamma);

// Gradient-free evaluation of one episode (adapt a head copy, score the test
// split). Shared by meta-validation, meta-test, and the baselines.
TaskResult evaluate_task(const Episode& ep, const Dataset& ds, const FeatureExtractor& ext,
                         const SSParams* ss, const ClassifierHead& head, double base_lr,
                         int inner_epochs);

// No-meta-training baseline: adapts the named parameter set on the episode's
// train split only (update_head: the given head; update_all: head plus a
// throwaway copy of the backbone). Shared state is never mutated.
TaskResult run_baseline(const Episode& ep, const Dataset& ds, const FeatureExtractor& ext,
                        const ClassifierHead& head, const VariantSpec& variant, double base_lr,
                        int inner_epochs);

// Computing one task's outer gradients without applying them (parallel
// meta-batches sum these across workers before a single update).
struct TaskGradients {
  TaskResult result;
  std::vector<Tensor> grads;  // aligned with MetaModel::meta_params()
};
TaskGradients task_gradients(const Episode& ep, const Dataset& ds, const MetaModel& model,
                             const MetaConfig& cfg);

struct EvalSummary {
  double mean_acc = 0.0;
  double ci95 = 0.0;  // normal approximation over tasks
  int tasks = 0;
  std::vector<double> per_task_acc;
};
EvalSummary summarize(const std::vector<double>& per_task_acc);

// Meta-test: fresh episodes from the split, each solved by base_learn and
// scored; no cross-task parameter is written.
EvalSummary meta_test(const Dataset& ds, MetaSplit split, const MetaModel& model,
                      const MetaConfig& cfg, int num_tasks, Rng& rng);

// Baseline evaluation over fresh episodes: a new sigma-0.01 head per task.
EvalSummary evaluate_baseline(const Dataset& ds, MetaSplit split, const FeatureExtractor& ext,
                              const VariantSpec& variant, const MetaConfig& cfg, int num_tasks,
                              Rng& rng);

// Index of the highest validation accuracy (first occurrence on ties) — the
// checkpoint-selection rule.
int select_best(const std::vector<double>& val_accs);

}  // namespace mtl
