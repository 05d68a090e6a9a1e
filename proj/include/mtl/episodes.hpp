#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

enum class MetaSplit { Train, Val, Test };

const char* split_name(MetaSplit s);

// ---- dataset -------------------------------------------------------------------

struct SyntheticConfig {
  int num_classes = 100;
  int samples_per_class = 60;
  std::int64_t channels = 3;
  std::int64_t height = 16;
  std::int64_t width = 16;
  // Template family: each class gets `bumps` random Gaussian bumps plus one
  // oriented sinusoidal grating per channel.
  int bumps = 3;
  // Per-sample corruption. Every class draws its own noise level from
  // [noise_lo, noise_hi], so some classes are persistently harder than
  // others; jitter shifts the template by up to this many pixels.
  double noise_lo = 0.04;
  double noise_hi = 0.30;
  int jitter = 1;
  double amplitude_wobble = 0.15;  // per-sample template amplitude spread
};

// Immutable after construction. Classes are partitioned over the three
// meta-splits 64:16:20 proportionally (largest remainders to train first).
class Dataset {
 public:
  Dataset() = default;

  static Dataset generate_synthetic(const SyntheticConfig& cfg, Rng& rng);

  // Binary image store plus a text sidecar `<path>.splits` with three lines
  // (train:/val:/test:) of comma-separated class ids.
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

  std::int64_t channels() const { return c_; }
  std::int64_t height() const { return h_; }
  std::int64_t width() const { return w_; }
  std::int64_t num_samples() const { return static_cast<std::int64_t>(images_.size()); }
  int num_classes() const;

  const std::vector<int>& classes(MetaSplit split) const;
  const std::vector<std::int64_t>& samples_of(int class_id) const;  // sample indices
  const Tensor& image(std::int64_t index) const;                    // [C, H, W]
  int class_of(std::int64_t index) const;

  // Stacks the given samples into one [n, C, H, W] batch tensor.
  Tensor gather(const std::vector<std::int64_t>& indices) const;

 private:
  std::int64_t c_ = 0, h_ = 0, w_ = 0;
  std::vector<Tensor> images_;
  std::vector<int> labels_;
  std::map<int, std::vector<std::int64_t>> class_index_;
  std::vector<int> train_classes_, val_classes_, test_classes_;

  void rebuild_index();
  void assign_splits_proportionally();
};

// ---- episodes ------------------------------------------------------------------

// An M-way N-shot task. Sample indices are grouped by episode label: train
// position i carries label i/N, test position j carries label j/Q.
struct Episode {
  int way = 0;    // M
  int shot = 0;   // N
  int query = 0;  // Q
  std::vector<std::int64_t> train_indices;  // M*N
  std::vector<std::int64_t> test_indices;   // M*Q
  std::vector<int> class_map;               // episode label -> global class id
  std::vector<int> padded_classes;          // classes injected by the fallback rule

  std::vector<int> train_labels() const;
  std::vector<int> test_labels() const;
};

// M distinct classes uniformly from the split, then N+Q distinct samples per
// class (first N train, rest test). Episode labels follow draw order.
Episode sample_episode(const Dataset& ds, MetaSplit split, int way, int shot, int query,
                       Rng& rng);

// Classes drawn from `pool` (a multiset: duplicates raise a class's selection
// probability) without replacement. If the pool deduplicates to fewer than
// `way` classes, every pool class is used and the remainder is padded with
// uniform draws from the split; padded class ids are recorded on the episode.
// Samples are drawn fresh from the dataset.
Episode sample_episode_from_classes(const Dataset& ds, MetaSplit split,
                                    const std::vector<int>& pool, int way, int shot, int query,
                                    Rng& rng);

// Same, but for classes present in `reuse`: the N train samples are drawn
// from the recorded indices instead of the whole class (test samples stay
// fresh and disjoint from the chosen train samples).
Episode sample_episode_reusing(const Dataset& ds, MetaSplit split, const std::vector<int>& pool,
                               const std::map<int, std::vector<std::int64_t>>& reuse, int way,
                               int shot, int query, Rng& rng);

}  // namespace mtl
