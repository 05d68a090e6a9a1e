#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mtl/episodes.hpp"
#include "mtl/errors.hpp"

namespace mtl {

const char* split_name(MetaSplit s) {
  switch (s) {
    case MetaSplit::Train: return "train";
    case MetaSplit::Val: return "val";
    case MetaSplit::Test: return "test";
  }
  return "?";
}

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'D'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("dataset file truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(os, v);
}

float read_f32(std::istream& is, const char* what) {
  const std::uint32_t v = read_u32(is, what);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

// ---- synthetic generation ------------------------------------------------------

Dataset Dataset::generate_synthetic(const SyntheticConfig& cfg, Rng& rng) {
  if (cfg.num_classes < 1 || cfg.samples_per_class < 1)
    throw ConfigError("synthetic dataset: class and sample counts must be positive");
  if (cfg.channels < 1 || cfg.height < 2 || cfg.width < 2)
    throw ConfigError("synthetic dataset: degenerate image shape");

  Dataset ds;
  ds.c_ = cfg.channels;
  ds.h_ = cfg.height;
  ds.w_ = cfg.width;

  struct Bump {
    double cx, cy, sigma, amp;
  };
  struct Grating {
    double freq, angle, phase, amp;
  };

  const std::int64_t C = cfg.channels, H = cfg.height, W = cfg.width;
  for (int cls = 0; cls < cfg.num_classes; ++cls) {
    Rng crng = rng.split("class_template", static_cast<std::uint64_t>(cls));
    std::vector<std::vector<Bump>> bumps(static_cast<std::size_t>(C));
    std::vector<Grating> gratings(static_cast<std::size_t>(C));
    for (std::int64_t ch = 0; ch < C; ++ch) {
      for (int b = 0; b < cfg.bumps; ++b) {
        Bump bump;
        bump.cx = crng.uniform() * static_cast<double>(W - 1);
        bump.cy = crng.uniform() * static_cast<double>(H - 1);
        bump.sigma = 1.5 + 2.0 * crng.uniform();
        bump.amp = 0.35 + 0.45 * crng.uniform();
        bumps[static_cast<std::size_t>(ch)].push_back(bump);
      }
      Grating g;
      g.freq = 0.5 + 1.5 * crng.uniform();
      g.angle = crng.uniform() * 3.14159265358979323846;
      g.phase = crng.uniform() * 2.0 * 3.14159265358979323846;
      g.amp = 0.10 + 0.15 * crng.uniform();
      gratings[static_cast<std::size_t>(ch)] = g;
    }
    // Per-class noise level: classes near noise_hi stay persistently harder.
    const double noise = cfg.noise_lo + (cfg.noise_hi - cfg.noise_lo) * crng.uniform();

    auto template_at = [&](std::int64_t ch, double y, double x) {
      double v = 0.18;
      for (const Bump& b : bumps[static_cast<std::size_t>(ch)]) {
        const double dx = x - b.cx, dy = y - b.cy;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      const Grating& g = gratings[static_cast<std::size_t>(ch)];
      const double t = (x * std::cos(g.angle) + y * std::sin(g.angle)) / static_cast<double>(W);
      v += g.amp * std::sin(2.0 * 3.14159265358979323846 * g.freq * t + g.phase);
      return v;
    };

    for (int s = 0; s < cfg.samples_per_class; ++s) {
      Rng srng = rng.split("class_sample",
                           static_cast<std::uint64_t>(cls) * 1000003ULL +
                               static_cast<std::uint64_t>(s));
      const int jx = cfg.jitter > 0
                         ? static_cast<int>(srng.uniform_int(2 * cfg.jitter + 1)) - cfg.jitter
                         : 0;
      const int jy = cfg.jitter > 0
                         ? static_cast<int>(srng.uniform_int(2 * cfg.jitter + 1)) - cfg.jitter
                         : 0;
      const double amp = 1.0 + cfg.amplitude_wobble * (2.0 * srng.uniform() - 1.0);
      Tensor img = Tensor::zeros({C, H, W});
      for (std::int64_t ch = 0; ch < C; ++ch)
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t x = 0; x < W; ++x) {
            const double sy = std::clamp<double>(static_cast<double>(y - jy), 0.0,
                                                 static_cast<double>(H - 1));
            const double sx = std::clamp<double>(static_cast<double>(x - jx), 0.0,
                                                 static_cast<double>(W - 1));
            double v = amp * template_at(ch, sy, sx);
            if (noise > 0.0) v += noise * srng.normal();
            img.data()[(ch * H + y) * W + x] = quantize(std::clamp(v, 0.0, 1.0));
          }
      ds.images_.push_back(std::move(img));
      ds.labels_.push_back(cls);
    }
  }
  ds.rebuild_index();
  ds.assign_splits_proportionally();
  return ds;
}

void Dataset::rebuild_index() {
  class_index_.clear();
  for (std::size_t i = 0; i < labels_.size(); ++i)
    class_index_[labels_[i]].push_back(static_cast<std::int64_t>(i));
}

void Dataset::assign_splits_proportionally() {
  std::vector<int> all;
  for (const auto& [cls, _] : class_index_) all.push_back(cls);
  const auto n = static_cast<double>(all.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * 0.64));
  const auto n_val = static_cast<std::size_t>(std::llround(n * 0.16));
  train_classes_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  val_classes_.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                      all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  test_classes_.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
}

// ---- accessors -----------------------------------------------------------------

int Dataset::num_classes() const { return static_cast<int>(class_index_.size()); }

const std::vector<int>& Dataset::classes(MetaSplit split) const {
  switch (split) {
    case MetaSplit::Train: return train_classes_;
    case MetaSplit::Val: return val_classes_;
    case MetaSplit::Test: return test_classes_;
  }
  throw ContractError("unknown meta-split");
}

const std::vector<std::int64_t>& Dataset::samples_of(int class_id) const {
  auto it = class_index_.find(class_id);
  if (it == class_index_.end())
    throw IndexError("dataset has no class " + std::to_string(class_id));
  return it->second;
}

const Tensor& Dataset::image(std::int64_t index) const {
  if (index < 0 || index >= num_samples())
    throw IndexError("sample index " + std::to_string(index) + " out of range (dataset has " +
                     std::to_string(num_samples()) + " samples)");
  return images_[static_cast<std::size_t>(index)];
}

int Dataset::class_of(std::int64_t index) const {
  if (index < 0 || index >= num_samples())
    throw IndexError("sample index " + std::to_string(index) + " out of range (dataset has " +
                     std::to_string(num_samples()) + " samples)");
  return labels_[static_cast<std::size_t>(index)];
}

Tensor Dataset::gather(const std::vector<std::int64_t>& indices) const {
  if (indices.empty()) throw ContractError("gather: empty index list");
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(indices.size()), c_, h_, w_});
  const std::int64_t per = c_ * h_ * w_;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = image(indices[i]);
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * per, img.data(),
                static_cast<std::size_t>(per) * sizeof(double));
  }
  return out;
}

// ---- persistence ---------------------------------------------------------------

void Dataset::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(num_samples()));
    write_u32(os, static_cast<std::uint32_t>(c_));
    write_u32(os, static_cast<std::uint32_t>(h_));
    write_u32(os, static_cast<std::uint32_t>(w_));
    for (std::size_t i = 0; i < images_.size(); ++i) {
      write_u32(os, static_cast<std::uint32_t>(labels_[i]));
      const Tensor& img = images_[i];
      for (std::int64_t j = 0; j < img.size(); ++j)
        write_f32(os, static_cast<float>(img.data()[j]));
    }
    if (!os) throw IoError("write to '" + tmp + "' failed");
  }

  const std::string side = path + ".splits";
  const std::string side_tmp = side + ".tmp";
  {
    std::ofstream ss(side_tmp);
    if (!ss) throw IoError("cannot open '" + side_tmp + "' for writing");
    auto line = [&](const char* name, const std::vector<int>& cls) {
      ss << name << ":";
      for (std::size_t i = 0; i < cls.size(); ++i) ss << (i ? "," : " ") << cls[i];
      ss << "\n";
    };
    line("train", train_classes_);
    line("val", val_classes_);
    line("test", test_classes_);
    if (!ss) throw IoError("write to '" + side_tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move '" + tmp + "' to '" + path + "'");
  if (std::rename(side_tmp.c_str(), side.c_str()) != 0)
    throw IoError("cannot move '" + side_tmp + "' to '" + side + "'");
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("dataset file truncated while reading magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("'" + path + "' is not a dataset file (bad magic)");
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw FormatError("dataset file version " + std::to_string(version) + " unsupported (want " +
                      std::to_string(kVersion) + ")");
  const std::uint32_t n = read_u32(is, "sample count");
  Dataset ds;
  ds.c_ = read_u32(is, "channels");
  ds.h_ = read_u32(is, "height");
  ds.w_ = read_u32(is, "width");
  if (ds.c_ < 1 || ds.h_ < 1 || ds.w_ < 1) throw FormatError("dataset header has zero dimension");
  for (std::uint32_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(read_u32(is, "class id"));
    Tensor img = Tensor::zeros({ds.c_, ds.h_, ds.w_});
    for (std::int64_t j = 0; j < img.size(); ++j)
      img.data()[j] = static_cast<double>(read_f32(is, "pixels"));
    ds.images_.push_back(std::move(img));
    ds.labels_.push_back(cls);
  }
  ds.rebuild_index();

  const std::string side = path + ".splits";
  std::ifstream ss(side);
  if (!ss) throw IoError("cannot open '" + side + "' (split sidecar)");
  auto parse_line = [&](const char* name) {
    std::string line;
    if (!std::getline(ss, line))
      throw FormatError("split sidecar missing the '" + std::string(name) + ":' line");
    const std::string prefix = std::string(name) + ":";
    if (line.rfind(prefix, 0) != 0)
      throw FormatError("split sidecar line does not start with '" + prefix + "': " + line);
    std::vector<int> out;
    std::string rest = line.substr(prefix.size());
    std::stringstream fields(rest);
    std::string field;
    while (std::getline(fields, field, ',')) {
      const auto from = field.find_first_not_of(" \t");
      if (from == std::string::npos) continue;
      out.push_back(std::stoi(field.substr(from)));
    }
    return out;
  };
  ds.train_classes_ = parse_line("train");
  ds.val_classes_ = parse_line("val");
  ds.test_classes_ = parse_line("test");

  // every class in exactly one split, and no unknown classes
  std::vector<int> seen;
  for (const auto* v : {&ds.train_classes_, &ds.val_classes_, &ds.test_classes_})
    seen.insert(seen.end(), v->begin(), v->end());
  std::vector<int> sorted = seen;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw FormatError("split sidecar assigns a class to more than one split");
  std::vector<int> present;
  for (const auto& [cls, _] : ds.class_index_) present.push_back(cls);
  if (sorted != present)
    throw FormatError("split sidecar classes do not match the classes in the dataset");
  return ds;
}

}  // namespace mtl
