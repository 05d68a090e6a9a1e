#include "mtl/models.hpp"

#include <cmath>
#include <numeric>

#include "mtl/errors.hpp"
#include "mtl/ops.hpp"
#include "mtl/rng.hpp"

namespace mtl {

namespace {

Tensor normal_tensor(Rng& rng, Shape shape, double sigma, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * sigma;
  return t;
}

}  // namespace

// ---- FeatureExtractor --------------------------------------------------------

FeatureExtractor FeatureExtractor::create(const ExtractorConfig& cfg, Rng& rng) {
  if (cfg.num_blocks < 0) throw ConfigError("extractor: negative block count");
  if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
    throw ConfigError("extractor: kernel must be odd and positive, got " +
                      std::to_string(cfg.kernel));
  if (cfg.filters < 1) throw ConfigError("extractor: filters must be positive");
  if (cfg.in_channels < 1) throw ConfigError("extractor: in_channels must be positive");
  if (cfg.input_hw < 1) throw ConfigError("extractor: input_hw must be positive");
  if (static_cast<int>(cfg.pool_flags.size()) != cfg.num_blocks)
    throw ConfigError("extractor: pool_flags must list one flag per block (" +
                      std::to_string(cfg.pool_flags.size()) + " flags for " +
                      std::to_string(cfg.num_blocks) + " blocks)");

  FeatureExtractor ext;
  ext.cfg_ = cfg;
  std::int64_t cin = cfg.in_channels;
  std::int64_t h = cfg.input_hw;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    ConvBlock blk;
    const double sigma = std::sqrt(2.0 / static_cast<double>(cin * cfg.kernel * cfg.kernel));
    blk.w = normal_tensor(rng, {cfg.filters, cin, cfg.kernel, cfg.kernel}, sigma, true);
    blk.b = Tensor::zeros({cfg.filters}, true);
    blk.gamma = Tensor::full({cfg.filters}, 1.0, true);
    blk.beta = Tensor::zeros({cfg.filters}, true);
    blk.pool = cfg.pool_flags[static_cast<std::size_t>(i)] != 0;
    if (blk.pool) {
      if (h < 2)
        throw ConfigError("extractor: block " + std::to_string(i) +
                          " pools a 1-pixel map; disable its pool flag");
      h /= 2;
    }
    ext.blocks_.push_back(std::move(blk));
    cin = cfg.filters;
  }
  ext.embedding_dim_ = cfg.mean_pool && cfg.num_blocks > 0 ? cin : cin * h * h;
  return ext;
}

Tensor FeatureExtractor::forward(const Tensor& x, const SSParams* ss) const {
  if (!x.defined() || x.rank() != 4) throw DimensionError("extractor forward: input must be 4-D");
  if (x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_hw || x.dim(3) != cfg_.input_hw)
    throw DimensionError("extractor forward: input " + shape_str(x.shape()) +
                         " does not match configured " + std::to_string(cfg_.in_channels) + "x" +
                         std::to_string(cfg_.input_hw) + "x" + std::to_string(cfg_.input_hw));
  if (ss != nullptr) ss->validate_for(*this);

  const int pad = static_cast<int>((cfg_.kernel - 1) / 2);
  Tensor t = x;
  for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) {
    const ConvBlock& blk = blocks_[static_cast<std::size_t>(i)];
    Tensor w_eff = ss != nullptr ? scale_filters(blk.w, ss->s1(i)) : blk.w;
    Tensor b_eff = ss != nullptr ? add(blk.b, ss->s2(i)) : blk.b;
    t = conv2d(t, w_eff, b_eff, 1, pad);
    t = relu(t);
    t = batch_norm(t, blk.gamma, blk.beta);
    if (blk.pool) t = max_pool2d(t);
  }
  return cfg_.mean_pool && !blocks_.empty() ? mean_pool(t) : flatten2d(t);
}

std::vector<Tensor> FeatureExtractor::params() const {
  std::vector<Tensor> out;
  out.reserve(blocks_.size() * 4);
  for (const ConvBlock& blk : blocks_) {
    out.push_back(blk.w);
    out.push_back(blk.b);
    out.push_back(blk.gamma);
    out.push_back(blk.beta);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> FeatureExtractor::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    out.emplace_back(p + "w", blocks_[i].w);
    out.emplace_back(p + "b", blocks_[i].b);
    out.emplace_back(p + "gamma", blocks_[i].gamma);
    out.emplace_back(p + "beta", blocks_[i].beta);
  }
  return out;
}

std::vector<Tensor> FeatureExtractor::last_blocks_params(int n) const {
  std::vector<Tensor> out;
  const int nb = static_cast<int>(blocks_.size());
  for (int i = std::max(0, nb - n); i < nb; ++i) {
    const ConvBlock& blk = blocks_[static_cast<std::size_t>(i)];
    out.push_back(blk.w);
    out.push_back(blk.b);
    out.push_back(blk.gamma);
    out.push_back(blk.beta);
  }
  return out;
}

void FeatureExtractor::freeze() {
  for (Tensor& t : params()) t.set_requires_grad(false);
}

FeatureExtractor FeatureExtractor::clone() const {
  FeatureExtractor ext;
  ext.cfg_ = cfg_;
  ext.embedding_dim_ = embedding_dim_;
  for (const ConvBlock& blk : blocks_) {
    ConvBlock c;
    c.w = blk.w.clone(blk.w.requires_grad());
    c.b = blk.b.clone(blk.b.requires_grad());
    c.gamma = blk.gamma.clone(blk.gamma.requires_grad());
    c.beta = blk.beta.clone(blk.beta.requires_grad());
    c.pool = blk.pool;
    ext.blocks_.push_back(std::move(c));
  }
  return ext;
}

// ---- SSParams ------------------------------------------------------------------

SSParams SSParams::for_extractor(const FeatureExtractor& ext) {
  SSParams ss;
  for (const ConvBlock& blk : ext.blocks()) {
    const std::int64_t k = blk.w.dim(0);
    ss.s1_.push_back(Tensor::full({k}, 1.0, true));
    ss.s2_.push_back(Tensor::zeros({k}, true));
  }
  return ss;
}

std::vector<Tensor> SSParams::params() const {
  std::vector<Tensor> out;
  out.reserve(s1_.size() * 2);
  for (std::size_t i = 0; i < s1_.size(); ++i) {
    out.push_back(s1_[i]);
    out.push_back(s2_[i]);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> SSParams::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < s1_.size(); ++i) {
    out.emplace_back("ss" + std::to_string(i) + ".scale", s1_[i]);
    out.emplace_back("ss" + std::to_string(i) + ".shift", s2_[i]);
  }
  return out;
}

void SSParams::validate_for(const FeatureExtractor& ext) const {
  const auto& blocks = ext.blocks();
  if (blocks.size() != s1_.size())
    throw BindingError("scaling/shifting parameters cover " + std::to_string(s1_.size()) +
                       " blocks but the extractor has " + std::to_string(blocks.size()));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::int64_t k = blocks[i].w.dim(0);
    if (s1_[i].dim(0) != k || s2_[i].dim(0) != k)
      throw BindingError("scaling/shifting parameters for block " + std::to_string(i) + " have " +
                         std::to_string(s1_[i].dim(0)) + " entries, extractor has " +
                         std::to_string(k) + " filters");
  }
}

SSParams SSParams::clone() const {
  SSParams ss;
  for (std::size_t i = 0; i < s1_.size(); ++i) {
    ss.s1_.push_back(s1_[i].clone(s1_[i].requires_grad()));
    ss.s2_.push_back(s2_[i].clone(s2_[i].requires_grad()));
  }
  return ss;
}

// ---- ClassifierHead ------------------------------------------------------------

ClassifierHead ClassifierHead::create_fc(std::int64_t embedding_dim, std::int64_t ways, int depth,
                                         Rng& rng, double sigma) {
  if (depth < 1 || depth > 3)
    throw ConfigError("classifier head: depth must be 1..3, got " + std::to_string(depth));
  if (embedding_dim < 1 || ways < 1) throw ConfigError("classifier head: degenerate dimensions");
  ClassifierHead head;
  head.kind_ = HeadKind::FcSoftmax;
  head.embedding_dim_ = embedding_dim;
  head.ways_ = ways;
  std::int64_t din = embedding_dim;
  for (int layer = 0; layer < depth; ++layer) {
    const bool last = layer == depth - 1;
    const std::int64_t dout = last ? ways : embedding_dim;
    const double s = last ? sigma : std::sqrt(2.0 / static_cast<double>(din));
    head.weights_.push_back(normal_tensor(rng, {din, dout}, s, true));
    head.biases_.push_back(Tensor::zeros({dout}, true));
    din = dout;
  }
  return head;
}

ClassifierHead ClassifierHead::create_cosine(std::int64_t embedding_dim, std::int64_t ways,
                                             Rng& rng, double sigma, double temperature) {
  if (embedding_dim < 1 || ways < 1) throw ConfigError("classifier head: degenerate dimensions");
  ClassifierHead head;
  head.kind_ = HeadKind::Cosine;
  head.embedding_dim_ = embedding_dim;
  head.ways_ = ways;
  head.weights_.push_back(normal_tensor(rng, {embedding_dim, ways}, sigma, true));
  head.temperature_ = Tensor::full({1}, temperature, true);
  return head;
}

Tensor ClassifierHead::forward(const Tensor& emb) const {
  if (!emb.defined() || emb.rank() != 2 || emb.dim(1) != embedding_dim_)
    throw DimensionError("classifier head: expected [B, " + std::to_string(embedding_dim_) +
                         "] embeddings, got " + shape_str(emb.shape()));
  if (kind_ == HeadKind::FcSoftmax) {
    Tensor t = emb;
    for (std::size_t layer = 0; layer < weights_.size(); ++layer) {
      t = add_bias(matmul(t, weights_[layer]), biases_[layer]);
      if (layer + 1 < weights_.size()) t = relu(t);
    }
    return t;
  }
  // cosine similarities; norms guarded in quadrature so a zero vector yields
  // zero logits with finite gradients instead of NaN
  const Tensor& w = weights_[0];
  Tensor dots = matmul(emb, w);                                       // [B, M]
  Tensor en = sqrt(addc(row_sum(mul(emb, emb)), 1e-16));              // [B]
  Tensor wn = sqrt(addc(col_sum(mul(w, w)), 1e-16));                  // [M]
  return scale_by(div_per_col(div_per_row(dots, en), wn), temperature_);
}

std::vector<Tensor> ClassifierHead::params() const {
  std::vector<Tensor> out;
  if (kind_ == HeadKind::FcSoftmax) {
    for (std::size_t layer = 0; layer < weights_.size(); ++layer) {
      out.push_back(weights_[layer]);
      out.push_back(biases_[layer]);
    }
  } else {
    out.push_back(weights_[0]);
    out.push_back(temperature_);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> ClassifierHead::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (kind_ == HeadKind::FcSoftmax) {
    for (std::size_t layer = 0; layer < weights_.size(); ++layer) {
      out.emplace_back("head.w" + std::to_string(layer), weights_[layer]);
      out.emplace_back("head.b" + std::to_string(layer), biases_[layer]);
    }
  } else {
    out.emplace_back("head.w0", weights_[0]);
    out.emplace_back("head.temperature", temperature_);
  }
  return out;
}

ClassifierHead ClassifierHead::clone(bool requires_grad) const {
  ClassifierHead head;
  head.kind_ = kind_;
  head.embedding_dim_ = embedding_dim_;
  head.ways_ = ways_;
  for (const Tensor& w : weights_) head.weights_.push_back(w.clone(requires_grad));
  for (const Tensor& b : biases_) head.biases_.push_back(b.clone(requires_grad));
  if (temperature_.defined()) head.temperature_ = temperature_.clone(requires_grad);
  return head;
}

void ClassifierHead::set_params(const std::vector<Tensor>& ps) {
  const std::vector<Tensor> cur = params();
  if (ps.size() != cur.size())
    throw ContractError("classifier head: set_params got " + std::to_string(ps.size()) +
                        " tensors, expected " + std::to_string(cur.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].shape() != cur[i].shape())
      throw DimensionError("classifier head: parameter " + std::to_string(i) + " has shape " +
                           shape_str(ps[i].shape()) + ", expected " + shape_str(cur[i].shape()));
  }
  std::size_t idx = 0;
  if (kind_ == HeadKind::FcSoftmax) {
    for (std::size_t layer = 0; layer < weights_.size(); ++layer) {
      weights_[layer] = ps[idx++];
      biases_[layer] = ps[idx++];
    }
  } else {
    weights_[0] = ps[idx++];
    temperature_ = ps[idx++];
  }
}

// ---- VariantSpec ---------------------------------------------------------------

VariantSpec VariantSpec::parse(const std::string& name) {
  VariantSpec v;
  if (name == "ss_full") {
    v = {MetaOp::SS, Scope::Full, Baseline::None};
  } else if (name == "ss_b4") {
    v = {MetaOp::SS, Scope::LastBlock, Baseline::None};
  } else if (name == "ss_b34") {
    v = {MetaOp::SS, Scope::LastTwoBlocks, Baseline::None};
  } else if (name == "ft_full") {
    v = {MetaOp::FT, Scope::Full, Baseline::None};
  } else if (name == "ft_b4") {
    v = {MetaOp::FT, Scope::LastBlock, Baseline::None};
  } else if (name == "ft_b34") {
    v = {MetaOp::FT, Scope::LastTwoBlocks, Baseline::None};
  } else if (name == "ft_head") {
    v = {MetaOp::FT, Scope::HeadOnly, Baseline::None};
  } else if (name == "update_all") {
    v = {MetaOp::None, Scope::Full, Baseline::UpdateAll};
  } else if (name == "update_head") {
    v = {MetaOp::None, Scope::Full, Baseline::UpdateHead};
  } else {
    throw ConfigError("unknown variant '" + name +
                      "' (expected ss_full|ss_b4|ss_b34|ft_full|ft_b4|ft_b34|ft_head|"
                      "update_all|update_head)");
  }
  return v;
}

std::string VariantSpec::name() const {
  if (baseline == Baseline::UpdateAll) return "update_all";
  if (baseline == Baseline::UpdateHead) return "update_head";
  if (meta_op == MetaOp::SS) {
    switch (scope) {
      case Scope::Full: return "ss_full";
      case Scope::LastBlock: return "ss_b4";
      case Scope::LastTwoBlocks: return "ss_b34";
      case Scope::HeadOnly: break;
    }
    throw ConfigError("scaling/shifting variant has no head-only scope");
  }
  if (meta_op == MetaOp::FT) {
    switch (scope) {
      case Scope::Full: return "ft_full";
      case Scope::LastBlock: return "ft_b4";
      case Scope::LastTwoBlocks: return "ft_b34";
      case Scope::HeadOnly: return "ft_head";
    }
  }
  throw ConfigError("variant without a meta op must set a baseline");
}

// ---- parameter accounting ------------------------------------------------------

ParamCounts ss_param_count(const FeatureExtractor& ext) {
  ParamCounts out;
  for (const ConvBlock& blk : ext.blocks()) {
    const std::int64_t k = blk.w.dim(0);
    out.ss_count += 2 * k;
    out.ft_count += blk.w.size() + blk.b.size();
  }
  if (out.ft_count == 0)
    throw ContractError("parameter ratio is undefined for an extractor with no conv parameters");
  const std::int64_t g = std::gcd(out.ss_count, out.ft_count);
  out.num = out.ss_count / (g == 0 ? 1 : g);
  out.den = out.ft_count / (g == 0 ? 1 : g);
  return out;
}

}  // namespace mtl
