#include <algorithm>
#include <map>
#include <set>

#include "mtl/episodes.hpp"
#include "mtl/errors.hpp"

namespace mtl {

std::vector<int> Episode::train_labels() const {
  std::vector<int> out(train_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<int>(i) / shot;
  return out;
}

std::vector<int> Episode::test_labels() const {
  std::vector<int> out(test_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<int>(i) / query;
  return out;
}

namespace {

void check_geometry(int way, int shot, int query) {
  if (way < 2) throw ConfigError("episode needs at least 2 classes, got " + std::to_string(way));
  if (shot < 1 || query < 1)
    throw ConfigError("episode needs at least 1 support and 1 query sample per class");
}

// Draw support/query indices for one chosen class and append them to the episode.
// When `train_pool` is given, support samples come from it (and query samples are
// drawn from the rest of the class); otherwise both come from the full class.
void fill_samples(const Dataset& ds, Episode& ep, int class_id, Rng& rng,
                  const std::vector<std::int64_t>* train_pool) {
  const auto& all = ds.samples_of(class_id);
  const int need = ep.shot + ep.query;
  if (train_pool == nullptr) {
    if (static_cast<int>(all.size()) < need)
      throw CapacityError("class " + std::to_string(class_id) + " has " +
                          std::to_string(all.size()) + " samples; episode needs " +
                          std::to_string(need));
    const auto draw = rng.choose_k(all.size(), static_cast<std::size_t>(need));
    for (int i = 0; i < ep.shot; ++i)
      ep.train_indices.push_back(all[draw[static_cast<std::size_t>(i)]]);
    for (int i = ep.shot; i < need; ++i)
      ep.test_indices.push_back(all[draw[static_cast<std::size_t>(i)]]);
    return;
  }
  if (static_cast<int>(train_pool->size()) < ep.shot)
    throw CapacityError("recorded sample pool for class " + std::to_string(class_id) + " has " +
                        std::to_string(train_pool->size()) + " samples; episode needs " +
                        std::to_string(ep.shot) + " support samples");
  const auto tdraw = rng.choose_k(train_pool->size(), static_cast<std::size_t>(ep.shot));
  std::set<std::int64_t> taken;
  for (auto d : tdraw) {
    ep.train_indices.push_back((*train_pool)[d]);
    taken.insert((*train_pool)[d]);
  }
  std::vector<std::int64_t> rest;
  for (auto idx : all)
    if (taken.count(idx) == 0) rest.push_back(idx);
  if (static_cast<int>(rest.size()) < ep.query)
    throw CapacityError("class " + std::to_string(class_id) + " has only " +
                        std::to_string(rest.size()) + " samples left for queries; episode needs " +
                        std::to_string(ep.query));
  const auto qdraw = rng.choose_k(rest.size(), static_cast<std::size_t>(ep.query));
  for (auto d : qdraw) ep.test_indices.push_back(rest[d]);
}

// Weighted draw without replacement from a multiset of classes, followed by a
// uniform pad from the split when the multiset has fewer distinct classes than
// the episode needs.
std::vector<int> choose_classes_weighted(const Dataset& ds, MetaSplit split,
                                         const std::vector<int>& pool, int way, Rng& rng,
                                         std::vector<int>& padded_out) {
  const auto& split_classes = ds.classes(split);
  if (static_cast<int>(split_classes.size()) < way)
    throw CapacityError(std::string("meta-split '") + split_name(split) + "' has " +
                        std::to_string(split_classes.size()) + " classes; episode needs " +
                        std::to_string(way));

  std::map<int, int> counts;  // ordered: deterministic walk during weighted draws
  for (int c : pool) {
    (void)ds.samples_of(c);  // membership check: unknown class -> IndexError
    ++counts[c];
  }

  std::vector<int> chosen;
  while (static_cast<int>(chosen.size()) < way && !counts.empty()) {
    std::int64_t total = 0;
    for (const auto& [_, n] : counts) total += n;
    std::int64_t x = rng.uniform_int(total);
    int pick = counts.begin()->first;
    for (const auto& [cls, n] : counts) {
      if (x < n) {
        pick = cls;
        break;
      }
      x -= n;
    }
    chosen.push_back(pick);
    counts.erase(pick);
  }

  if (static_cast<int>(chosen.size()) < way) {
    std::set<int> have(chosen.begin(), chosen.end());
    std::vector<int> candidates;
    for (int c : split_classes)
      if (have.count(c) == 0) candidates.push_back(c);
    const auto need = static_cast<std::size_t>(way) - chosen.size();
    if (candidates.size() < need)
      throw CapacityError(std::string("meta-split '") + split_name(split) + "' has only " +
                          std::to_string(candidates.size()) +
                          " classes left to pad the episode; needs " + std::to_string(need));
    const auto draw = rng.choose_k(candidates.size(), need);
    for (auto d : draw) {
      chosen.push_back(candidates[d]);
      padded_out.push_back(candidates[d]);
    }
  }
  return chosen;
}

Episode build_episode(const Dataset& ds, const std::vector<int>& chosen, int shot, int query,
                      Rng& rng, const std::map<int, std::vector<std::int64_t>>* reuse) {
  Episode ep;
  ep.way = static_cast<int>(chosen.size());
  ep.shot = shot;
  ep.query = query;
  ep.class_map = chosen;
  for (int cls : chosen) {
    const std::vector<std::int64_t>* pool = nullptr;
    if (reuse != nullptr) {
      auto it = reuse->find(cls);
      if (it != reuse->end()) pool = &it->second;
    }
    fill_samples(ds, ep, cls, rng, pool);
  }
  return ep;
}

}  // namespace

Episode sample_episode(const Dataset& ds, MetaSplit split, int way, int shot, int query,
                       Rng& rng) {
  check_geometry(way, shot, query);
  const auto& cls = ds.classes(split);
  if (static_cast<int>(cls.size()) < way)
    throw CapacityError(std::string("meta-split '") + split_name(split) + "' has " +
                        std::to_string(cls.size()) + " classes; episode needs " +
                        std::to_string(way));
  const auto pick = rng.choose_k(cls.size(), static_cast<std::size_t>(way));
  std::vector<int> chosen;
  for (auto p : pick) chosen.push_back(cls[p]);
  return build_episode(ds, chosen, shot, query, rng, nullptr);
}

Episode sample_episode_from_classes(const Dataset& ds, MetaSplit split,
                                    const std::vector<int>& pool, int way, int shot, int query,
                                    Rng& rng) {
  check_geometry(way, shot, query);
  std::vector<int> padded;
  const auto chosen = choose_classes_weighted(ds, split, pool, way, rng, padded);
  Episode ep = build_episode(ds, chosen, shot, query, rng, nullptr);
  ep.padded_classes = padded;
  return ep;
}

Episode sample_episode_reusing(const Dataset& ds, MetaSplit split, const std::vector<int>& pool,
                               const std::map<int, std::vector<std::int64_t>>& reuse, int way,
                               int shot, int query, Rng& rng) {
  check_geometry(way, shot, query);
  std::vector<int> padded;
  const auto chosen = choose_classes_weighted(ds, split, pool, way, rng, padded);
  Episode ep = build_episode(ds, chosen, shot, query, rng, &reuse);
  ep.padded_classes = padded;
  return ep;
}

}  // namespace mtl
