#include <cstdio>
#include <fstream>
#include <ostream>
#include <thread>

#include "mtl/errors.hpp"
#include "mtl/optim.hpp"
#include "mtl/trainer.hpp"

namespace mtl {

namespace {

// Evaluates a fixed validation task set (the stream restarts from the same
// derived seed every time, so every snapshot sees identical tasks).
double validation_accuracy(const Dataset& ds, const MetaModel& model, const MetaConfig& meta,
                           int val_tasks, std::uint64_t seed) {
  Rng val_rng(Rng::derive_seed(seed, "validation_tasks", 0));
  return meta_test(ds, MetaSplit::Val, model, meta, val_tasks, val_rng).mean_acc;
}

// One meta-batch worth of episodes, evaluated and applied. Sequential mode
// updates after every task; with workers, tasks run against the same snapshot
// and their gradient sums produce one update.
void run_meta_batch(const std::vector<Episode>& episodes, const Dataset& ds, MetaModel& model,
                    const MetaConfig& meta, double gamma, int threads,
                    std::vector<TaskResult>& results_out) {
  if (threads <= 1 || episodes.size() == 1) {
    for (const Episode& ep : episodes)
      results_out.push_back(meta_update(ep, ds, model, meta, gamma));
    return;
  }

  std::vector<TaskGradients> grads(episodes.size());
  {
    std::vector<std::thread> workers;
    workers.reserve(episodes.size());
    for (std::size_t j = 0; j < episodes.size(); ++j)
      workers.emplace_back([&, j] { grads[j] = task_gradients(episodes[j], ds, model, meta); });
    for (auto& w : workers) w.join();
  }

  // Deterministic task-order summation, then a single update.
  const auto params = model.meta_params();
  std::vector<Tensor> total;
  total.reserve(params.size());
  for (const Tensor& p : params) total.push_back(Tensor::zeros(p.shape()));
  for (const TaskGradients& tg : grads) {
    for (std::size_t i = 0; i < total.size(); ++i) {
      double* acc = total[i].data();
      const double* g = tg.grads[i].data();
      for (std::int64_t k = 0; k < total[i].size(); ++k) acc[k] += g[k];
    }
    results_out.push_back(tg.result);
  }
  sgd_step(params, total, gamma);
}

}  // namespace

MetaTrainResult run_meta_training(const Dataset& ds, const FeatureExtractor& pretrained,
                                  const VariantSpec& variant, const MetaTrainConfig& cfg,
                                  std::uint64_t seed, std::ostream* run_log) {
  if (cfg.total_tasks < 1) throw ConfigError("meta-training: task budget must be >= 1");
  if (cfg.snapshot_every < 1) throw ConfigError("meta-training: snapshot period must be >= 1");
  if (variant.meta_op == MetaOp::None)
    throw ConfigError("meta-training: variant '" + variant.name() +
                      "' is a baseline with no meta-training phase");

  Rng init_rng(Rng::derive_seed(seed, "meta_init", 0));
  Rng episode_rng(Rng::derive_seed(seed, "normal_episodes", 0));
  Rng hard_rng(Rng::derive_seed(seed, "hard_episodes", 0));

  MetaTrainResult out;
  out.model = MetaModel::create(pretrained, variant, cfg.meta.way, init_rng);

  HardClassSet failures;
  std::int64_t task_idx = 0;       // tasks completed
  std::int64_t batch_iter = 0;     // meta-batches completed (drives gamma decay)
  std::int64_t normal_batches = 0;
  std::int64_t next_snapshot = cfg.snapshot_every;

  auto take_snapshot = [&]() {
    SnapshotRecord snap;
    snap.task_idx = task_idx;
    snap.model = out.model.clone();
    snap.val_acc =
        validation_accuracy(ds, out.model, cfg.meta, cfg.val_tasks, seed);
    out.snapshots.push_back(std::move(snap));
  };

  const int k = cfg.meta.meta_batch;
  while (task_idx < cfg.total_tasks) {
    const bool hard_due = schedule(normal_batches, cfg.curriculum) == Phase::Hard &&
                          !failures.empty();

    std::vector<Episode> episodes;
    std::string phase;
    HardBatch hard;
    if (hard_due) {
      phase = "hard";
      hard = make_hard_tasks(failures, ds, MetaSplit::Train, cfg.meta.way, cfg.meta.shot,
                             cfg.meta.query, cfg.curriculum.hard_tasks,
                             cfg.curriculum.method, hard_rng);
      HardPhaseRecord rec{batch_iter, hard.flushed_classes, hard.padded_classes, hard.method};
      if (run_log != nullptr) {
        *run_log << "HARD_PHASE iter=" << rec.iteration << " classes=[";
        for (std::size_t i = 0; i < rec.classes.size(); ++i)
          *run_log << (i ? "," : "") << rec.classes[i];
        *run_log << "] padded=[";
        for (std::size_t i = 0; i < rec.padded.size(); ++i)
          *run_log << (i ? "," : "") << rec.padded[i];
        *run_log << "] method=" << rec.method << "\n";
      }
      out.hard_phases.push_back(std::move(rec));
      episodes = std::move(hard.episodes);
    } else {
      phase = "normal";
      const auto remaining = cfg.total_tasks - task_idx;
      const int draw = static_cast<int>(std::min<std::int64_t>(k, remaining));
      for (int j = 0; j < draw; ++j)
        episodes.push_back(sample_episode(ds, MetaSplit::Train, cfg.meta.way, cfg.meta.shot,
                                          cfg.meta.query, episode_rng));
    }

    // Hard phases run in meta-batch-sized chunks (final chunk may be short);
    // every chunk advances the outer-iteration counter. Chunks never exceed
    // the remaining task budget.
    std::size_t next = 0;
    while (next < episodes.size() && task_idx < cfg.total_tasks) {
      const auto room = static_cast<std::size_t>(
          std::min<std::int64_t>(k, cfg.total_tasks - task_idx));
      std::vector<Episode> chunk;
      for (std::size_t j = next; j < episodes.size() && chunk.size() < room; ++j)
        chunk.push_back(episodes[j]);
      next += chunk.size();

      const double gamma = gamma_schedule(batch_iter, cfg.meta);
      std::vector<TaskResult> results;
      run_meta_batch(chunk, ds, out.model, cfg.meta, gamma, cfg.threads, results);

      for (const TaskResult& r : results) {
        if (phase == "normal") failures.record(r, task_idx);
        out.metrics.push_back(
            {batch_iter, phase, task_idx, r.test_loss, r.mean_acc, r.hardest_class_id});
        ++task_idx;
      }
      ++batch_iter;
      if (phase == "normal") ++normal_batches;

      if (task_idx >= next_snapshot) {
        take_snapshot();
        while (next_snapshot <= task_idx) next_snapshot += cfg.snapshot_every;
      }
    }
  }

  if (out.snapshots.empty() || out.snapshots.back().task_idx != task_idx) take_snapshot();

  std::vector<double> val_accs;
  for (const SnapshotRecord& s : out.snapshots) val_accs.push_back(s.val_acc);
  out.best_snapshot = select_best(val_accs);
  return out;
}

void write_meta_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os << "iteration,phase,task_idx,test_loss,mean_acc,hardest_class\n";
    char buf[160];
    for (const MetricsRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%lld,%s,%lld,%.17g,%.17g,%d\n",
                    static_cast<long long>(r.iteration), r.phase.c_str(),
                    static_cast<long long>(r.task_idx), r.test_loss, r.mean_acc,
                    r.hardest_class);
      os << buf;
    }
    if (!os) throw IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move '" + tmp + "' to '" + path + "'");
}

}  // namespace mtl
