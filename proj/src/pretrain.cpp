#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "mtl/checkpoint.hpp"
#include "mtl/errors.hpp"
#include "mtl/ops.hpp"
#include "mtl/optim.hpp"
#include "mtl/pretrain.hpp"

namespace mtl {

double lr_schedule(std::int64_t iter, const PretrainConfig& cfg) {
  return decayed_lr(iter, cfg.lr_init, cfg.lr_period, cfg.lr_floor);
}

namespace {

void validate(const PretrainConfig& cfg) {
  if (cfg.lr_floor > cfg.lr_init)
    throw ConfigError("pretrain: learning-rate floor exceeds the initial rate");
  if (cfg.batch_size < 2)
    throw ConfigError("pretrain: batch_size must be >= 2 (batch statistics)");
  if (cfg.max_iterations < 0) throw ConfigError("pretrain: negative iteration count");
  if (cfg.dropout_keep <= 0.0 || cfg.dropout_keep > 1.0)
    throw ConfigError("pretrain: dropout keep probability must be in (0, 1]");
}

}  // namespace

PretrainedModel pretrain(const Dataset& ds, const PretrainConfig& cfg, Rng& rng,
                         const std::vector<std::int64_t>* subset) {
  validate(cfg);
  const auto& train_classes = ds.classes(MetaSplit::Train);
  if (train_classes.empty()) throw CapacityError("pretrain: meta-train split has no classes");

  // Global class id -> contiguous label over the merged meta-train classes.
  std::map<int, int> label_of;
  for (std::size_t i = 0; i < train_classes.size(); ++i)
    label_of[train_classes[i]] = static_cast<int>(i);

  std::vector<std::int64_t> samples;
  if (subset != nullptr) {
    samples = *subset;
    for (auto idx : samples)
      if (label_of.find(ds.class_of(idx)) == label_of.end())
        throw ContractError("pretrain: subset sample " + std::to_string(idx) +
                            " is not from a meta-train class");
  } else {
    for (int c : train_classes)
      for (auto idx : ds.samples_of(c)) samples.push_back(idx);
  }
  if (static_cast<std::int64_t>(samples.size()) < cfg.batch_size)
    throw CapacityError("pretrain: batch of " + std::to_string(cfg.batch_size) +
                        " exceeds the " + std::to_string(samples.size()) +
                        " available samples");

  PretrainedModel model;
  model.extractor = FeatureExtractor::create(cfg.arch, rng);
  ClassifierHead classifier = ClassifierHead::create_fc(
      model.extractor.embedding_dim(), static_cast<std::int64_t>(train_classes.size()), 1, rng);

  std::vector<Tensor> all_params = model.extractor.params();
  for (const Tensor& p : classifier.params()) all_params.push_back(p);
  Adam opt(all_params);

  for (std::int64_t iter = 0; iter < cfg.max_iterations; ++iter) {
    const double lr = lr_schedule(iter, cfg);
    const auto pick =
        rng.choose_k(static_cast<std::int64_t>(samples.size()), cfg.batch_size);
    std::vector<std::int64_t> batch;
    std::vector<int> labels;
    batch.reserve(pick.size());
    for (auto p : pick) {
      batch.push_back(samples[static_cast<std::size_t>(p)]);
      labels.push_back(label_of.at(ds.class_of(batch.back())));
    }
    const Tensor x = ds.gather(batch);

    Tape tape;
    TapeScope scope(tape);
    Tensor emb = model.extractor.forward(x);
    if (cfg.dropout_keep < 1.0) emb = dropout(emb, cfg.dropout_keep, rng);
    const Tensor logits = classifier.forward(emb);
    const Tensor loss = softmax_cross_entropy(logits, labels);

    const auto pred = argmax_rows(logits);
    int correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
    const double acc = static_cast<double>(correct) / static_cast<double>(labels.size());

    tape.backward(loss);
    opt.step(lr);
    opt.zero_grad();

    model.curve.push_back({iter, lr, loss.item(), acc});
  }

  model.extractor.freeze();
  return model;
}

HoldoutSplit holdout_split(const Dataset& ds, MetaSplit split, int holdout_per_class, Rng& rng) {
  if (holdout_per_class < 0) throw ConfigError("holdout_split: negative holdout count");
  HoldoutSplit out;
  for (int c : ds.classes(split)) {
    const auto& idx = ds.samples_of(c);
    if (static_cast<int>(idx.size()) <= holdout_per_class)
      throw CapacityError("holdout_split: class " + std::to_string(c) + " has " +
                          std::to_string(idx.size()) + " samples; cannot hold out " +
                          std::to_string(holdout_per_class));
    const auto pick = rng.choose_k(static_cast<std::int64_t>(idx.size()), holdout_per_class);
    std::vector<bool> held(idx.size(), false);
    for (auto p : pick) held[static_cast<std::size_t>(p)] = true;
    for (std::size_t i = 0; i < idx.size(); ++i)
      (held[i] ? out.holdout : out.keep).push_back(idx[i]);
  }
  return out;
}

void save_pretrained(const PretrainedModel& model, const std::string& path) {
  Checkpoint ck;
  const ExtractorConfig& a = model.extractor.config();
  std::vector<double> arch = {static_cast<double>(a.num_blocks),
                              static_cast<double>(a.filters),
                              static_cast<double>(a.kernel),
                              static_cast<double>(a.in_channels),
                              static_cast<double>(a.input_hw),
                              a.mean_pool ? 1.0 : 0.0};
  for (int f : a.pool_flags) arch.push_back(static_cast<double>(f));
  const std::int64_t arch_len = static_cast<std::int64_t>(arch.size());
  ck.add("__arch__", Tensor::from_data({arch_len}, std::move(arch)));
  for (const auto& [name, t] : model.extractor.named_params()) ck.add(name, t);
  ck.save(path);
}

PretrainedModel load_pretrained(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  const Tensor& arch = ck.get("__arch__");
  if (arch.size() < 7) throw FormatError("pretrained checkpoint: malformed __arch__ record");
  ExtractorConfig cfg;
  cfg.num_blocks = static_cast<int>(arch.data()[0]);
  cfg.filters = static_cast<std::int64_t>(arch.data()[1]);
  cfg.kernel = static_cast<std::int64_t>(arch.data()[2]);
  cfg.in_channels = static_cast<std::int64_t>(arch.data()[3]);
  cfg.input_hw = static_cast<std::int64_t>(arch.data()[4]);
  cfg.mean_pool = arch.data()[5] != 0.0;
  if (arch.size() != 6 + cfg.num_blocks)
    throw FormatError("pretrained checkpoint: __arch__ pool flags do not match block count");
  cfg.pool_flags.clear();
  for (int i = 0; i < cfg.num_blocks; ++i)
    cfg.pool_flags.push_back(static_cast<int>(arch.data()[6 + i]));

  Rng scratch(0);  // values are overwritten below
  PretrainedModel model;
  model.extractor = FeatureExtractor::create(cfg, scratch);
  for (auto& [name, t] : model.extractor.named_params()) {
    const Tensor& stored = ck.get(name);
    if (stored.shape() != t.shape())
      throw FormatError("pretrained checkpoint: tensor '" + name + "' has shape " +
                        shape_str(stored.shape()) + ", expected " + shape_str(t.shape()));
    Tensor dst = t;
    std::copy(stored.data(), stored.data() + stored.size(), dst.data());
  }
  model.extractor.freeze();
  return model;
}

void write_pretrain_csv(const std::vector<PretrainRecord>& curve, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os << "iteration,lr,loss,acc\n";
    char buf[128];
    for (const PretrainRecord& r : curve) {
      std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(r.iteration), r.lr, r.loss, r.acc);
      os << buf;
    }
    if (!os) throw IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move '" + tmp + "' to '" + path + "'");
}

}  // namespace mtl
