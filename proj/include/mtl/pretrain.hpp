#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtl/episodes.hpp"
#include "mtl/models.hpp"
#include "mtl/rng.hpp"

namespace mtl {

// Large-scale pre-training: one softmax classifier over every class of the
// meta-train split, minibatch cross-entropy, adaptive-moment optimizer with
// a step-decayed learning rate.
struct PretrainConfig {
  ExtractorConfig arch;
  double lr_init = 0.001;
  std::int64_t lr_period = 5000;
  double lr_floor = 0.0001;
  int batch_size = 64;         // >= 2: batch statistics need company
  double dropout_keep = 0.9;   // applied to the embedding, before the classifier
  std::int64_t max_iterations = 10000;
};

double lr_schedule(std::int64_t iter, const PretrainConfig& cfg);

struct PretrainRecord {
  std::int64_t iteration;
  double lr;
  double loss;
  double acc;
};

struct PretrainedModel {
  FeatureExtractor extractor;  // frozen; the training classifier is discarded
  std::vector<PretrainRecord> curve;
};

// Trains on all samples of the meta-train classes (or on `subset`, a list of
// sample indices, when given — the hyperparameter-selection protocol trains
// on a holdout-reduced subset first, then on everything).
PretrainedModel pretrain(const Dataset& ds, const PretrainConfig& cfg, Rng& rng,
                         const std::vector<std::int64_t>* subset = nullptr);

// Splits every class of the chosen meta-split into kept and held-out sample
// indices (`holdout_per_class` samples held out per class, drawn without
// replacement). Deterministic given the generator state.
struct HoldoutSplit {
  std::vector<std::int64_t> keep;
  std::vector<std::int64_t> holdout;
};
HoldoutSplit holdout_split(const Dataset& ds, MetaSplit split, int holdout_per_class, Rng& rng);

void save_pretrained(const PretrainedModel& model, const std::string& path);
PretrainedModel load_pretrained(const std::string& path);

void write_pretrain_csv(const std::vector<PretrainRecord>& curve, const std::string& path);

}  // namespace mtl
