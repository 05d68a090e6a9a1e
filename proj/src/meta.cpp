#include <algorithm>
#include <cmath>

#include "mtl/checkpoint.hpp"
#include "mtl/errors.hpp"
#include "mtl/meta.hpp"
#include "mtl/ops.hpp"
#include "mtl/optim.hpp"

namespace mtl {

double gamma_schedule(std::int64_t iter, const MetaConfig& cfg) {
  return decayed_lr(iter, cfg.meta_lr_init, cfg.meta_lr_period, cfg.meta_lr_floor);
}

int hardest_class(const std::vector<double>& per_class_acc) {
  if (per_class_acc.empty()) throw ContractError("hardest_class: empty accuracy list");
  int best = 0;
  for (int i = 1; i < static_cast<int>(per_class_acc.size()); ++i)
    if (per_class_acc[static_cast<std::size_t>(i)] <
        per_class_acc[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

namespace {

void check_meta_config(const MetaConfig& cfg) {
  if (cfg.inner_epochs < 0) throw ConfigError("meta: negative inner epoch count");
  if (cfg.meta_batch < 1) throw ConfigError("meta: meta-batch size must be >= 1");
  if (cfg.way < 2 || cfg.shot < 1 || cfg.query < 1)
    throw ConfigError("meta: episode geometry must satisfy way >= 2, shot >= 1, query >= 1");
}

// The scale/shift tensors the variant's scope exposes to the outer loop.
std::vector<Tensor> scoped_ss_params(const SSParams& ss, Scope scope) {
  const int blocks = ss.num_blocks();
  int from = 0;
  switch (scope) {
    case Scope::Full: from = 0; break;
    case Scope::LastBlock: from = blocks - 1; break;
    case Scope::LastTwoBlocks: from = blocks - 2; break;
    case Scope::HeadOnly: from = blocks; break;
  }
  from = std::max(from, 0);
  std::vector<Tensor> out;
  for (int b = from; b < blocks; ++b) {
    out.push_back(ss.s1(b));
    out.push_back(ss.s2(b));
  }
  return out;
}

std::vector<Tensor> scoped_extractor_params(const FeatureExtractor& ext, Scope scope) {
  switch (scope) {
    case Scope::Full: return ext.params();
    case Scope::LastBlock: return ext.last_blocks_params(1);
    case Scope::LastTwoBlocks: return ext.last_blocks_params(2);
    case Scope::HeadOnly: return {};
  }
  return {};
}

// Per-class test accuracy, the failure class, and its episode samples.
TaskResult result_from_logits(const Episode& ep, const Tensor& test_logits, double test_loss) {
  TaskResult r;
  r.test_loss = test_loss;
  const auto pred = argmax_rows(test_logits);
  const auto labels = ep.test_labels();
  std::vector<int> correct(static_cast<std::size_t>(ep.way), 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++correct[static_cast<std::size_t>(labels[i])];
  r.per_class_acc.resize(static_cast<std::size_t>(ep.way));
  double sum = 0.0;
  for (int m = 0; m < ep.way; ++m) {
    r.per_class_acc[static_cast<std::size_t>(m)] =
        static_cast<double>(correct[static_cast<std::size_t>(m)]) /
        static_cast<double>(ep.query);
    sum += r.per_class_acc[static_cast<std::size_t>(m)];
  }
  r.mean_acc = sum / static_cast<double>(ep.way);
  r.hardest_label = hardest_class(r.per_class_acc);
  r.hardest_class_id = ep.class_map[static_cast<std::size_t>(r.hardest_label)];
  const auto tl = ep.train_labels();
  for (std::size_t i = 0; i < ep.train_indices.size(); ++i)
    if (tl[i] == r.hardest_label) r.hardest_samples.push_back(ep.train_indices[i]);
  for (std::size_t i = 0; i < ep.test_indices.size(); ++i)
    if (labels[i] == r.hardest_label) r.hardest_samples.push_back(ep.test_indices[i]);
  return r;
}

}  // namespace

// ---- model assembly --------------------------------------------------------

MetaModel MetaModel::create(const FeatureExtractor& pretrained, const VariantSpec& variant,
                            int way, Rng& rng) {
  MetaModel m;
  m.variant = variant;
  m.extractor = pretrained.clone();
  m.extractor.freeze();
  if (variant.meta_op == MetaOp::SS) {
    m.ss = SSParams::for_extractor(m.extractor);
  } else if (variant.meta_op == MetaOp::FT) {
    for (Tensor& p : scoped_extractor_params(m.extractor, variant.scope))
      p.set_requires_grad(true);
  }
  m.head = ClassifierHead::create_fc(m.extractor.embedding_dim(), way, 1, rng);
  return m;
}

std::vector<Tensor> MetaModel::meta_params() const {
  std::vector<Tensor> out;
  if (variant.meta_op == MetaOp::SS)
    out = scoped_ss_params(ss, variant.scope);
  else if (variant.meta_op == MetaOp::FT)
    out = scoped_extractor_params(extractor, variant.scope);
  for (const Tensor& p : head.params()) out.push_back(p);
  if (variant.meta_op == MetaOp::None) out.clear();  // baselines are never meta-trained
  return out;
}

MetaModel MetaModel::clone() const {
  MetaModel m;
  m.extractor = extractor.clone();
  if (variant.meta_op == MetaOp::SS) {
    // Rebind the copied scale/shift values onto the copied extractor.
    m.ss = ss.clone();
  }
  m.head = head.clone(true);
  m.variant = variant;
  return m;
}

void MetaModel::save(const std::string& path) const {
  Checkpoint ck;
  const ExtractorConfig& a = extractor.config();
  std::vector<double> arch = {static_cast<double>(a.num_blocks),
                              static_cast<double>(a.filters),
                              static_cast<double>(a.kernel),
                              static_cast<double>(a.in_channels),
                              static_cast<double>(a.input_hw),
                              a.mean_pool ? 1.0 : 0.0};
  for (int f : a.pool_flags) arch.push_back(static_cast<double>(f));
  const std::int64_t arch_len = static_cast<std::int64_t>(arch.size());
  ck.add("__arch__", Tensor::from_data({arch_len}, std::move(arch)));

  const std::string vname = variant.name();
  std::vector<double> vcodes;
  for (char c : vname) vcodes.push_back(static_cast<double>(c));
  const std::int64_t vlen = static_cast<std::int64_t>(vcodes.size());
  ck.add("__variant__", Tensor::from_data({vlen}, std::move(vcodes)));

  std::vector<double> headrec = {head.kind() == HeadKind::Cosine ? 1.0 : 0.0,
                                 static_cast<double>(head.depth()),
                                 static_cast<double>(head.ways()),
                                 static_cast<double>(head.embedding_dim())};
  ck.add("__head__", Tensor::from_data({4}, std::move(headrec)));

  for (const auto& [name, t] : extractor.named_params()) ck.add(name, t);
  if (variant.meta_op == MetaOp::SS)
    for (const auto& [name, t] : ss.named_params()) ck.add(name, t);
  for (const auto& [name, t] : head.named_params()) ck.add(name, t);
  ck.save(path);
}

MetaModel MetaModel::load(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  const Tensor& arch = ck.get("__arch__");
  if (arch.size() < 7) throw FormatError("model checkpoint: malformed __arch__ record");
  ExtractorConfig cfg;
  cfg.num_blocks = static_cast<int>(arch.data()[0]);
  cfg.filters = static_cast<std::int64_t>(arch.data()[1]);
  cfg.kernel = static_cast<std::int64_t>(arch.data()[2]);
  cfg.in_channels = static_cast<std::int64_t>(arch.data()[3]);
  cfg.input_hw = static_cast<std::int64_t>(arch.data()[4]);
  cfg.mean_pool = arch.data()[5] != 0.0;
  if (arch.size() != 6 + cfg.num_blocks)
    throw FormatError("model checkpoint: __arch__ pool flags do not match block count");
  cfg.pool_flags.clear();
  for (int i = 0; i < cfg.num_blocks; ++i)
    cfg.pool_flags.push_back(static_cast<int>(arch.data()[6 + i]));

  const Tensor& vrec = ck.get("__variant__");
  std::string vname;
  for (std::int64_t i = 0; i < vrec.size(); ++i)
    vname.push_back(static_cast<char>(vrec.data()[i]));

  const Tensor& hrec = ck.get("__head__");
  if (hrec.size() != 4) throw FormatError("model checkpoint: malformed __head__ record");
  const bool cosine = hrec.data()[0] != 0.0;
  const int depth = static_cast<int>(hrec.data()[1]);
  const auto ways = static_cast<std::int64_t>(hrec.data()[2]);
  const auto emb = static_cast<std::int64_t>(hrec.data()[3]);

  Rng scratch(0);  // all drawn values are overwritten below
  MetaModel m;
  m.variant = VariantSpec::parse(vname);
  m.extractor = FeatureExtractor::create(cfg, scratch);
  if (m.variant.meta_op == MetaOp::SS) m.ss = SSParams::for_extractor(m.extractor);
  m.head = cosine ? ClassifierHead::create_cosine(emb, ways, scratch)
                  : ClassifierHead::create_fc(emb, ways, depth, scratch);

  auto restore = [&ck](const std::vector<std::pair<std::string, Tensor>>& named) {
    for (const auto& [name, t] : named) {
      const Tensor& stored = ck.get(name);
      if (stored.shape() != t.shape())
        throw FormatError("model checkpoint: tensor '" + name + "' has shape " +
                          shape_str(stored.shape()) + ", expected " + shape_str(t.shape()));
      Tensor dst = t;
      std::copy(stored.data(), stored.data() + stored.size(), dst.data());
    }
  };
  restore(m.extractor.named_params());
  if (m.variant.meta_op == MetaOp::SS) restore(m.ss.named_params());
  restore(m.head.named_params());

  m.extractor.freeze();
  if (m.variant.meta_op == MetaOp::FT)
    for (Tensor& p : scoped_extractor_params(m.extractor, m.variant.scope))
      p.set_requires_grad(true);
  return m;
}

// ---- inner loop --------------------------------------------------------------

ClassifierHead base_learn(const Episode& ep, const Dataset& ds, const FeatureExtractor& ext,
                          const SSParams* ss, const ClassifierHead& head, double base_lr,
                          int inner_epochs) {
  if (inner_epochs < 0) throw ConfigError("base_learn: negative epoch count");
  const Tensor x = ds.gather(ep.train_indices);
  const auto labels = ep.train_labels();

  // The backbone and scale/shift stay fixed during adaptation, so the
  // embedding is computed once, outside any recording.
  Tensor emb;
  {
    NoGradGuard ng;
    emb = ext.forward(x, ss);
  }

  ClassifierHead adapted = head.clone(true);
  for (int e = 0; e < inner_epochs; ++e) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor logits = adapted.forward(emb);
    const Tensor loss = softmax_cross_entropy(logits, labels);
    const auto params = adapted.params();
    const auto grads = tape.grad(loss, params);
    sgd_step(params, grads, base_lr);
  }
  return adapted;
}

TaskResult evaluate_task(const Episode& ep, const Dataset& ds, const FeatureExtractor& ext,
                         const SSParams* ss, const ClassifierHead& head, double base_lr,
                         int inner_epochs) {
  const ClassifierHead adapted = base_learn(ep, ds, ext, ss, head, base_lr, inner_epochs);
  NoGradGuard ng;
  const Tensor x_te = ds.gather(ep.test_indices);
  const Tensor logits = adapted.forward(ext.forward(x_te, ss));
  const Tensor loss = softmax_cross_entropy(logits, ep.test_labels());
  return result_from_logits(ep, logits, loss.item());
}

// ---- outer loop --------------------------------------------------------------

TaskGradients task_gradients(const Episode& ep, const Dataset& ds, const MetaModel& model,
                             const MetaConfig& cfg) {
  check_meta_config(cfg);
  const SSParams* ss = model.uses_ss() ? &model.ss : nullptr;
  const auto meta_params = model.meta_params();
  if (meta_params.empty())
    throw ContractError("task_gradients: variant '" + model.variant.name() +
                        "' has no meta-parameters");
  const auto head_params = model.head.params();
  const std::size_t backbone_count = meta_params.size() - head_params.size();

  TaskGradients out;
  if (!cfg.second_order) {
    // First-order: adapt, then differentiate the test loss at the adapted
    // point. The classifier-initialization gradient is taken at the adapted
    // parameters (the inner trajectory is treated as a constant offset).
    const ClassifierHead adapted =
        base_learn(ep, ds, model.extractor, ss, model.head, cfg.base_lr, cfg.inner_epochs);
    Tape tape;
    TapeScope scope(tape);
    const Tensor x_te = ds.gather(ep.test_indices);
    const Tensor logits = adapted.forward(model.extractor.forward(x_te, ss));
    const Tensor loss = softmax_cross_entropy(logits, ep.test_labels());

    std::vector<Tensor> targets(meta_params.begin(),
                                meta_params.begin() + static_cast<std::ptrdiff_t>(backbone_count));
    for (const Tensor& p : adapted.params()) targets.push_back(p);
    out.grads = tape.grad(loss, targets);
    out.result = result_from_logits(ep, logits, loss.item());
    return out;
  }

  // Second-order: one tape spans the inner trajectory and the test loss, so
  // the outer gradients flow through the adaptation itself.
  Tape tape;
  TapeScope scope(tape);
  const Tensor x_tr = ds.gather(ep.train_indices);
  const auto y_tr = ep.train_labels();
  const Tensor emb_tr = model.extractor.forward(x_tr, ss);

  ClassifierHead work = model.head.clone(true);
  work.set_params(head_params);  // share the initialization tensors: the
                                 // trajectory must start at the meta-parameters
  for (int e = 0; e < cfg.inner_epochs; ++e) {
    const Tensor logits = work.forward(emb_tr);
    const Tensor loss = softmax_cross_entropy(logits, y_tr);
    const auto params = work.params();
    const auto gs = tape.grad(loss, params, /*create_graph=*/true);
    std::vector<Tensor> stepped;
    stepped.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      stepped.push_back(sub(params[i], scale(gs[i], cfg.base_lr)));
    work.set_params(stepped);
  }

  const Tensor x_te = ds.gather(ep.test_indices);
  const Tensor logits_te = work.forward(model.extractor.forward(x_te, ss));
  const Tensor loss_te = softmax_cross_entropy(logits_te, ep.test_labels());
  out.grads = tape.grad(loss_te, meta_params);
  out.result = result_from_logits(ep, logits_te, loss_te.item());
  return out;
}

TaskResult meta_step(const Episode& ep, const Dataset& ds, MetaModel& model,
                     const MetaConfig& cfg, double gamma) {
  if (model.variant.meta_op != MetaOp::SS)
    throw ContractError("meta_step: variant '" + model.variant.name() +
                        "' does not use scale/shift");
  TaskGradients tg = task_gradients(ep, ds, model, cfg);
  sgd_step(model.meta_params(), tg.grads, gamma);
  return tg.result;
}

TaskResult meta_step_ft(const Episode& ep, const Dataset& ds, MetaModel& model,
                        const MetaConfig& cfg, double gamma) {
  if (model.variant.meta_op != MetaOp::FT)
    throw ContractError("meta_step_ft: variant '" + model.variant.name() +
                        "' is not a fine-tuning variant");
  TaskGradients tg = task_gradients(ep, ds, model, cfg);
  sgd_step(model.meta_params(), tg.grads, gamma);
  return tg.result;
}

TaskResult meta_update(const Episode& ep, const Dataset& ds, MetaModel& model,
                       const MetaConfig& cfg, double gamma) {
  switch (model.variant.meta_op) {
    case MetaOp::SS: return meta_step(ep, ds, model, cfg, gamma);
    case MetaOp::FT: return meta_step_ft(ep, ds, model, cfg, gamma);
    case MetaOp::None: break;
  }
  throw ContractError("meta_update: variant '" + model.variant.name() +
                      "' has no outer update (baseline)");
}

// ---- baselines ----------------------------------------------------------------

TaskResult run_baseline(const Episode& ep, const Dataset& ds, const FeatureExtractor& ext,
                        const ClassifierHead& head, const VariantSpec& variant, double base_lr,
                        int inner_epochs) {
  if (variant.baseline == Baseline::None)
    throw ContractError("run_baseline: variant '" + variant.name() + "' is not a baseline");

  if (variant.baseline == Baseline::UpdateHead)
    return evaluate_task(ep, ds, ext, nullptr, head, base_lr, inner_epochs);

  // update_all: adapt a throwaway copy of the whole network on the episode's
  // train split.
  FeatureExtractor work_ext = ext.clone();
  for (Tensor& p : work_ext.params()) p.set_requires_grad(true);
  ClassifierHead work_head = head.clone(true);
  const Tensor x_tr = ds.gather(ep.train_indices);
  const auto y_tr = ep.train_labels();
  for (int e = 0; e < inner_epochs; ++e) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor logits = work_head.forward(work_ext.forward(x_tr));
    const Tensor loss = softmax_cross_entropy(logits, y_tr);
    std::vector<Tensor> params = work_ext.params();
    for (const Tensor& p : work_head.params()) params.push_back(p);
    const auto grads = tape.grad(loss, params);
    sgd_step(params, grads, base_lr);
  }
  NoGradGuard ng;
  const Tensor x_te = ds.gather(ep.test_indices);
  const Tensor logits = work_head.forward(work_ext.forward(x_te));
  const Tensor loss = softmax_cross_entropy(logits, ep.test_labels());
  return result_from_logits(ep, logits, loss.item());
}

// ---- evaluation ----------------------------------------------------------------

EvalSummary summarize(const std::vector<double>& per_task_acc) {
  if (per_task_acc.empty()) throw ContractError("summarize: no task accuracies");
  EvalSummary s;
  s.per_task_acc = per_task_acc;
  s.tasks = static_cast<int>(per_task_acc.size());
  double sum = 0.0;
  for (double a : per_task_acc) sum += a;
  s.mean_acc = sum / static_cast<double>(s.tasks);
  if (s.tasks > 1) {
    double ss = 0.0;
    for (double a : per_task_acc) ss += (a - s.mean_acc) * (a - s.mean_acc);
    const double sd = std::sqrt(ss / static_cast<double>(s.tasks - 1));
    s.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(s.tasks));
  }
  return s;
}

EvalSummary meta_test(const Dataset& ds, MetaSplit split, const MetaModel& model,
                      const MetaConfig& cfg, int num_tasks, Rng& rng) {
  check_meta_config(cfg);
  if (num_tasks < 1) throw ConfigError("meta_test: need at least one task");
  const SSParams* ss = model.uses_ss() ? &model.ss : nullptr;
  std::vector<double> accs;
  accs.reserve(static_cast<std::size_t>(num_tasks));
  for (int t = 0; t < num_tasks; ++t) {
    const Episode ep = sample_episode(ds, split, cfg.way, cfg.shot, cfg.query, rng);
    const TaskResult r =
        evaluate_task(ep, ds, model.extractor, ss, model.head, cfg.base_lr, cfg.inner_epochs);
    accs.push_back(r.mean_acc);
  }
  return summarize(accs);
}

EvalSummary evaluate_baseline(const Dataset& ds, MetaSplit split, const FeatureExtractor& ext,
                              const VariantSpec& variant, const MetaConfig& cfg, int num_tasks,
                              Rng& rng) {
  check_meta_config(cfg);
  if (num_tasks < 1) throw ConfigError("evaluate_baseline: need at least one task");
  std::vector<double> accs;
  accs.reserve(static_cast<std::size_t>(num_tasks));
  for (int t = 0; t < num_tasks; ++t) {
    const Episode ep = sample_episode(ds, split, cfg.way, cfg.shot, cfg.query, rng);
    const ClassifierHead head =
        ClassifierHead::create_fc(ext.embedding_dim(), cfg.way, 1, rng);
    const TaskResult r = run_baseline(ep, ds, ext, head, variant, cfg.base_lr, cfg.inner_epochs);
    accs.push_back(r.mean_acc);
  }
  return summarize(accs);
}

int select_best(const std::vector<double>& val_accs) {
  if (val_accs.empty()) throw ContractError("select_best: empty validation curve");
  int best = 0;
  for (int i = 1; i < static_cast<int>(val_accs.size()); ++i)
    if (val_accs[static_cast<std::size_t>(i)] > val_accs[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

}  // namespace mtl
