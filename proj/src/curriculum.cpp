#include <algorithm>
#include <map>
#include <set>

#include "mtl/curriculum.hpp"
#include "mtl/errors.hpp"

namespace mtl {

const char* resample_name(CurriculumConfig::Resample method) {
  return method == CurriculumConfig::Resample::ReuseSamples ? "reuse_samples"
                                                            : "fresh_samples";
}

void HardClassSet::record(const TaskResult& result, std::int64_t task_index) {
  if (result.hardest_label < 0 || result.hardest_class_id < 0)
    throw ContractError("record_failure: task result carries no failure class");
  HardEntry e;
  e.class_id = result.hardest_class_id;
  e.source_task = task_index;
  e.accuracy = result.per_class_acc[static_cast<std::size_t>(result.hardest_label)];
  e.samples = result.hardest_samples;
  entries_.push_back(std::move(e));
}

Phase schedule(std::int64_t normal_batches_done, const CurriculumConfig& cfg) {
  if (!cfg.enabled) return Phase::Normal;
  if (cfg.cadence < 1) throw ConfigError("curriculum: cadence must be >= 1");
  if (normal_batches_done > 0 && normal_batches_done % cfg.cadence == 0) return Phase::Hard;
  return Phase::Normal;
}

HardBatch make_hard_tasks(HardClassSet& set, const Dataset& ds, MetaSplit split, int way,
                          int shot, int query, int count, CurriculumConfig::Resample method,
                          Rng& rng) {
  if (set.empty())
    throw ContractError("make_hard_tasks: hard phase scheduled before any failure was recorded");
  if (count < 1) throw ConfigError("make_hard_tasks: hard task count must be >= 1");

  std::vector<int> pool;
  std::map<int, std::vector<std::int64_t>> reuse;
  for (const HardEntry& e : set.entries()) {
    pool.push_back(e.class_id);
    auto& samples = reuse[e.class_id];
    for (auto idx : e.samples)
      if (std::find(samples.begin(), samples.end(), idx) == samples.end())
        samples.push_back(idx);
  }

  HardBatch batch;
  batch.method = resample_name(method);
  std::set<int> flushed(pool.begin(), pool.end());
  batch.flushed_classes.assign(flushed.begin(), flushed.end());

  std::set<int> padded;
  for (int i = 0; i < count; ++i) {
    Episode ep = method == CurriculumConfig::Resample::ReuseSamples
                     ? sample_episode_reusing(ds, split, pool, reuse, way, shot, query, rng)
                     : sample_episode_from_classes(ds, split, pool, way, shot, query, rng);
    for (int c : ep.padded_classes) padded.insert(c);
    batch.episodes.push_back(std::move(ep));
  }
  batch.padded_classes.assign(padded.begin(), padded.end());

  set.clear();
  return batch;
}

}  // namespace mtl
