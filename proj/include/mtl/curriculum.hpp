#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtl/episodes.hpp"
#include "mtl/meta.hpp"

namespace mtl {

// Hard-task scheduling: every task reports its worst-classified class; after
// a fixed number of ordinary meta-batches, the accumulated failure classes
// seed a burst of deliberately hard episodes, then the set is emptied.
struct CurriculumConfig {
  bool enabled = true;
  int cadence = 10;     // ordinary meta-batches between hard phases
  int hard_tasks = 10;  // episodes per hard phase (K')
  enum class Resample { FreshSamples, ReuseSamples };
  Resample method = Resample::FreshSamples;
};

const char* resample_name(CurriculumConfig::Resample method);

struct HardEntry {
  int class_id;
  std::int64_t source_task;
  double accuracy;                    // the class's test accuracy in that task
  std::vector<std::int64_t> samples;  // the episode's samples of the class
};

// Multiset of failure classes with provenance. One entry per ordinary task
// since the last flush; duplicates raise a class's selection probability.
class HardClassSet {
 public:
  void record(const TaskResult& result, std::int64_t task_index);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<HardEntry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<HardEntry> entries_;
};

enum class Phase { Normal, Hard };

// Phase for the position after `normal_batches_done` ordinary meta-batches:
// a hard phase fires after every `cadence` of them (never before the first).
Phase schedule(std::int64_t normal_batches_done, const CurriculumConfig& cfg);

// One hard phase: K' episodes whose classes are drawn from the flushed
// multiset (weighted by multiplicity, padded from the split when the set has
// too few distinct classes). ReuseSamples draws each hard class's support
// from the recorded failure samples; FreshSamples redraws from the dataset.
struct HardBatch {
  std::vector<Episode> episodes;
  std::vector<int> flushed_classes;  // distinct classes that were in the set
  std::vector<int> padded_classes;   // union of fallback padding, all episodes
  std::string method;
};
HardBatch make_hard_tasks(HardClassSet& set, const Dataset& ds, MetaSplit split, int way,
                          int shot, int query, int count, CurriculumConfig::Resample method,
                          Rng& rng);

}  // namespace mtl
