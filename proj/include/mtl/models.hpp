#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

class Rng;
class SSParams;

// ---- feature extractor Θ ----------------------------------------------------

struct ExtractorConfig {
  int num_blocks = 4;
  std::int64_t filters = 16;
  std::int64_t kernel = 3;  // odd; convolutions are padded to preserve H×W
  std::int64_t in_channels = 3;
  std::int64_t input_hw = 16;
  std::vector<int> pool_flags = {1, 1, 1, 0};  // one per block
  bool mean_pool = false;  // true: spatial average at the end; false: flatten
};

// One block: conv (+bias) -> relu -> batch-norm -> optional 2x2 max-pool. The
// normalization runs on current-batch statistics after the nonlinearity, so a
// per-filter rescale/shift of the convolution changes which units activate —
// it cannot be absorbed by the normalization.
struct ConvBlock {
  Tensor w;      // [K, C_in, k, k]
  Tensor b;      // [K]
  Tensor gamma;  // [K], normalization scale
  Tensor beta;   // [K], normalization shift
  bool pool = false;
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  // He-initialized conv weights, zero biases, identity normalization.
  static FeatureExtractor create(const ExtractorConfig& cfg, Rng& rng);

  // x: [B, in_channels, input_hw, input_hw] -> [B, embedding_dim]. B >= 2
  // (batch statistics). With ss present, each block's conv runs with
  // effective weight W·Φ_S1[k] and effective bias b+Φ_S2[k]; ss must match
  // this extractor's shape (binding error otherwise).
  Tensor forward(const Tensor& x, const SSParams* ss = nullptr) const;

  const ExtractorConfig& config() const { return cfg_; }
  const std::vector<ConvBlock>& blocks() const { return blocks_; }
  std::int64_t embedding_dim() const { return embedding_dim_; }

  // All tensors, in a fixed order (per block: w, b, gamma, beta).
  std::vector<Tensor> params() const;
  std::vector<std::pair<std::string, Tensor>> named_params() const;

  // Parameters of the trailing `n` blocks (n<=0 -> none), same order.
  std::vector<Tensor> last_blocks_params(int n) const;

  void freeze();  // clears requires_grad on every parameter
  FeatureExtractor clone() const;  // deep copy (requires_grad preserved)

 private:
  ExtractorConfig cfg_;
  std::vector<ConvBlock> blocks_;
  std::int64_t embedding_dim_ = 0;
};

// ---- scaling/shifting parameters Φ ------------------------------------------

// One scalar pair per conv filter: Φ_S1 scales the whole filter, Φ_S2 shifts
// its bias. Fresh parameters are the exact identity (ones / zeros).
class SSParams {
 public:
  SSParams() = default;

  static SSParams for_extractor(const FeatureExtractor& ext);

  int num_blocks() const { return static_cast<int>(s1_.size()); }
  const Tensor& s1(int block) const { return s1_[static_cast<std::size_t>(block)]; }
  const Tensor& s2(int block) const { return s2_[static_cast<std::size_t>(block)]; }

  std::vector<Tensor> params() const;  // s1_0, s2_0, s1_1, s2_1, ...
  std::vector<std::pair<std::string, Tensor>> named_params() const;

  // Throws a binding error unless shapes mirror the extractor's filter
  // counts block by block.
  void validate_for(const FeatureExtractor& ext) const;

  SSParams clone() const;

 private:
  std::vector<Tensor> s1_, s2_;
};

// ---- classifier heads θ ------------------------------------------------------

enum class HeadKind { FcSoftmax, Cosine };

class ClassifierHead {
 public:
  ClassifierHead() = default;

  // depth 1..3 stacked FC layers (relu between); final layer N(0, sigma).
  static ClassifierHead create_fc(std::int64_t embedding_dim, std::int64_t ways, int depth,
                                  Rng& rng, double sigma = 0.01);
  // Single layer of class weight vectors; logits are temperature-scaled
  // cosine similarities. temperature is learnable.
  static ClassifierHead create_cosine(std::int64_t embedding_dim, std::int64_t ways, Rng& rng,
                                      double sigma = 0.01, double temperature = 10.0);

  Tensor forward(const Tensor& emb) const;  // [B, d] -> [B, ways]

  HeadKind kind() const { return kind_; }
  int depth() const { return static_cast<int>(weights_.size()); }
  std::int64_t ways() const { return ways_; }
  std::int64_t embedding_dim() const { return embedding_dim_; }

  std::vector<Tensor> params() const;
  std::vector<std::pair<std::string, Tensor>> named_params() const;

  ClassifierHead clone(bool requires_grad = true) const;

  // Replaces parameter tensors in order (used by the inner loop to install
  // adapted values without rebuilding the head).
  void set_params(const std::vector<Tensor>& ps);

 private:
  HeadKind kind_ = HeadKind::FcSoftmax;
  std::int64_t embedding_dim_ = 0;
  std::int64_t ways_ = 0;
  std::vector<Tensor> weights_;  // per layer [d_in, d_out]
  std::vector<Tensor> biases_;   // per layer [d_out] (fc only)
  Tensor temperature_;           // [1] (cosine only)
};

// ---- experiment variants -----------------------------------------------------

enum class MetaOp { SS, FT, None };
enum class Scope { Full, LastBlock, LastTwoBlocks, HeadOnly };
enum class Baseline { None, UpdateAll, UpdateHead };

struct VariantSpec {
  MetaOp meta_op = MetaOp::SS;
  Scope scope = Scope::Full;
  Baseline baseline = Baseline::None;

  // ss_full | ss_b4 | ss_b34 | ft_full | ft_b4 | ft_b34 | ft_head |
  // update_all | update_head
  static VariantSpec parse(const std::string& name);
  std::string name() const;
};

// ---- parameter accounting ----------------------------------------------------

struct ParamCounts {
  std::int64_t ss_count = 0;  // scaling/shifting scalars
  std::int64_t ft_count = 0;  // conv weight + bias elements
  std::int64_t num = 0, den = 0;  // ss_count/ft_count reduced to lowest terms
};

ParamCounts ss_param_count(const FeatureExtractor& ext);

}  // namespace mtl
