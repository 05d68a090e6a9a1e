#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "mtl/errors.hpp"
#include "mtl/models.hpp"
#include "mtl/ops.hpp"
#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace mtl;

namespace {

Tensor randn(Rng& rng, Shape shape, double sigma = 1.0, bool rg = false) {
  Tensor t = Tensor::zeros(std::move(shape), rg);
  for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * sigma;
  return t;
}

ExtractorConfig small_cfg() {
  ExtractorConfig cfg;
  cfg.num_blocks = 2;
  cfg.filters = 4;
  cfg.kernel = 3;
  cfg.in_channels = 1;
  cfg.input_hw = 8;
  cfg.pool_flags = {1, 0};
  return cfg;
}

}  // namespace

TEST_CASE("extractor construction and shapes") {
  Rng r(1);
  ExtractorConfig cfg;  // defaults: 4 blocks, 16 filters, 16x16 input, pools 1,1,1,0
  FeatureExtractor ext = FeatureExtractor::create(cfg, r);
  CHECK(ext.embedding_dim() == 64);  // 16 filters x 2x2 after three pools
  CHECK(ext.params().size() == 16);  // 4 tensors per block
  CHECK(ext.blocks()[0].w.shape() == Shape{16, 3, 3, 3});
  CHECK(ext.blocks()[1].w.shape() == Shape{16, 16, 3, 3});

  Tensor x = randn(r, {2, 3, 16, 16});
  Tensor emb = ext.forward(x);
  CHECK(emb.shape() == Shape{2, 64});

  ExtractorConfig mp = cfg;
  mp.mean_pool = true;
  FeatureExtractor ext2 = FeatureExtractor::create(mp, r);
  CHECK(ext2.embedding_dim() == 16);
  CHECK(ext2.forward(x).shape() == Shape{2, 16});

  // configuration errors
  ExtractorConfig bad = cfg;
  bad.kernel = 4;
  CHECK_THROWS_AS(FeatureExtractor::create(bad, r), ConfigError);
  bad = cfg;
  bad.pool_flags = {1, 1};
  CHECK_THROWS_AS(FeatureExtractor::create(bad, r), ConfigError);
  bad = cfg;
  bad.input_hw = 4;  // pools would shrink 4 -> 2 -> 1 -> pool of a 1-pixel map
  CHECK_THROWS_AS(FeatureExtractor::create(bad, r), ConfigError);

  // input validation
  CHECK_THROWS_AS(ext.forward(randn(r, {2, 1, 16, 16})), DimensionError);
  CHECK_THROWS_AS(ext.forward(randn(r, {2, 3, 8, 8})), DimensionError);
  // single sample: no usable batch statistics
  CHECK_THROWS_AS(ext.forward(randn(r, {1, 3, 16, 16})), DegenerateBatchError);
}

TEST_CASE("fresh scaling/shifting parameters are the exact identity") {
  Rng r(2);
  FeatureExtractor ext = FeatureExtractor::create(small_cfg(), r);
  SSParams ss = SSParams::for_extractor(ext);
  for (int i = 0; i < ss.num_blocks(); ++i) {
    for (std::int64_t j = 0; j < ss.s1(i).size(); ++j) {
      CHECK(ss.s1(i).data()[j] == 1.0);
      CHECK(ss.s2(i).data()[j] == 0.0);
    }
  }

  Tensor x = randn(r, {3, 1, 8, 8});
  Tensor plain = ext.forward(x);
  Tensor with_ss = ext.forward(x, &ss);
  REQUIRE(plain.size() == with_ss.size());
  for (std::int64_t i = 0; i < plain.size(); ++i)
    CHECK(plain.data()[i] == with_ss.data()[i]);  // bit-identical
}

TEST_CASE("per-filter scaling and shifting compose into the convolution") {
  // 1x1 conv, W=[2], b=[0.5], scale=[3], shift=[-1], input [1]: 2*3*1 + (0.5-1)
  Tensor x = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
  Tensor b = Tensor::from_data({1}, {0.5});
  Tensor s1 = Tensor::from_data({1}, {3.0});
  Tensor s2 = Tensor::from_data({1}, {-1.0});
  Tensor out = conv2d(x, scale_filters(w, s1), add(b, s2));
  CHECK(out.item() == doctest::Approx(5.5).epsilon(1e-15));

  // doubling the scale doubles the pre-bias response (linearity)
  Rng r(3);
  Tensor xb = randn(r, {2, 3, 5, 5});
  Tensor wb = randn(r, {4, 3, 3, 3});
  Tensor zero_bias = Tensor::zeros({4});
  Tensor s = Tensor::from_data({4}, {0.5, 1.0, 2.0, -1.0});
  Tensor doubled = Tensor::from_data({4}, {1.0, 2.0, 4.0, -2.0});
  Tensor y1 = conv2d(xb, scale_filters(wb, s), zero_bias, 1, 1);
  Tensor y2 = conv2d(xb, scale_filters(wb, doubled), zero_bias, 1, 1);
  for (std::int64_t i = 0; i < y1.size(); ++i)
    CHECK(y2.data()[i] == doctest::Approx(2.0 * y1.data()[i]).epsilon(1e-12));
}

TEST_CASE("scaling/shifting parameters must match their extractor") {
  Rng r(4);
  FeatureExtractor ext = FeatureExtractor::create(small_cfg(), r);
  ExtractorConfig other_cfg = small_cfg();
  other_cfg.filters = 8;
  FeatureExtractor other = FeatureExtractor::create(other_cfg, r);
  SSParams ss = SSParams::for_extractor(other);
  Tensor x = randn(r, {2, 1, 8, 8});
  CHECK_THROWS_AS(ext.forward(x, &ss), BindingError);

  ExtractorConfig deeper = small_cfg();
  deeper.num_blocks = 3;
  deeper.pool_flags = {1, 0, 0};
  SSParams ss3 = SSParams::for_extractor(FeatureExtractor::create(deeper, r));
  CHECK_THROWS_AS(ext.forward(x, &ss3), BindingError);

  SSParams good = SSParams::for_extractor(ext);
  CHECK_NOTHROW(ext.forward(x, &good));
}

TEST_CASE("freeze clears every gradient request") {
  Rng r(5);
  FeatureExtractor ext = FeatureExtractor::create(small_cfg(), r);
  ext.freeze();
  for (const Tensor& p : ext.params()) CHECK_FALSE(p.requires_grad());

  ClassifierHead head = ClassifierHead::create_fc(ext.embedding_dim(), 3, 1, r, 0.1);
  Tensor x = randn(r, {2, 1, 8, 8});
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = softmax_cross_entropy(head.forward(ext.forward(x)), {0, 2});
  tape.backward(loss);
  for (const Tensor& p : ext.params()) CHECK_FALSE(p.has_grad());
  for (const Tensor& p : head.params()) CHECK(p.has_grad());

  // a fully frozen graph records nothing at all
  Tape empty;
  {
    TapeScope scope2(empty);
    (void)ext.forward(x);
  }
  CHECK(empty.node_count() == 0);
}

TEST_CASE("head cloning is a deep copy") {
  Rng r(6);
  ClassifierHead head = ClassifierHead::create_fc(8, 5, 1, r);
  ClassifierHead copy = head.clone();
  copy.params()[0].data()[0] += 1.0;
  CHECK(head.params()[0].data()[0] != copy.params()[0].data()[0]);

  ClassifierHead copy2 = head.clone().clone();
  const auto a = head.params();
  const auto b = copy2.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::int64_t j = 0; j < a[i].size(); ++j) CHECK(a[i].data()[j] == b[i].data()[j]);
}

TEST_CASE("fc head with zero parameters emits zero logits") {
  Rng r(7);
  ClassifierHead head = ClassifierHead::create_fc(8, 5, 1, r);
  for (Tensor& p : head.params())
    for (std::int64_t i = 0; i < p.size(); ++i) p.data()[i] = 0.0;
  Tensor emb = randn(r, {3, 8});
  Tensor logits = head.forward(emb);
  REQUIRE(logits.shape() == Shape{3, 5});
  for (std::int64_t i = 0; i < logits.size(); ++i) CHECK(logits.data()[i] == 0.0);

  CHECK_THROWS_AS(head.forward(randn(r, {3, 7})), DimensionError);
  CHECK_THROWS_AS(ClassifierHead::create_fc(8, 5, 4, r), ConfigError);
}

TEST_CASE("cosine head geometry") {
  Rng r(8);
  ClassifierHead head = ClassifierHead::create_cosine(4, 3, r);
  // class-0 weight parallel to the probe embedding, others orthogonal
  std::vector<Tensor> ps = head.params();
  Tensor w = ps[0];  // [4, 3]
  const double e[4] = {1.0, 2.0, -1.0, 0.5};
  const double o1[4] = {2.0, -1.0, 0.0, 0.0};   // e.o1 = 0
  const double o2[4] = {0.0, 0.5, 1.0, 0.0};    // e.o2 = 0
  for (int i = 0; i < 4; ++i) {
    w.data()[i * 3 + 0] = 0.25 * e[i];
    w.data()[i * 3 + 1] = o1[i];
    w.data()[i * 3 + 2] = o2[i];
  }
  Tensor emb = Tensor::from_data({1, 4}, {e[0], e[1], e[2], e[3]});
  Tensor logits = head.forward(emb);
  REQUIRE(logits.shape() == Shape{1, 3});
  CHECK(logits.data()[0] == doctest::Approx(10.0).epsilon(1e-9));  // temperature
  CHECK(std::fabs(logits.data()[1]) < 1e-9);
  CHECK(std::fabs(logits.data()[2]) < 1e-9);

  // invariant to positive rescaling of the embedding
  Tensor scaled = Tensor::from_data({1, 4}, {7 * e[0], 7 * e[1], 7 * e[2], 7 * e[3]});
  Tensor logits2 = head.forward(scaled);
  for (int i = 0; i < 3; ++i)
    CHECK(std::fabs(logits2.data()[i] - logits.data()[i]) < 1e-9);

  // zero-norm embedding: finite logits, and finite gradients through them
  Tensor zero_emb = Tensor::zeros({1, 4}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor zl = head.forward(zero_emb);
  for (int i = 0; i < 3; ++i) CHECK(std::isfinite(zl.data()[i]));
  tape.backward(mean_all(zl));
  for (double g : zero_emb.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("parameter accounting") {
  Rng r(9);
  // one block, one 3x3 filter, one input channel: 2 scalars vs 9+1 weights
  ExtractorConfig one;
  one.num_blocks = 1;
  one.filters = 1;
  one.kernel = 3;
  one.in_channels = 1;
  one.input_hw = 8;
  one.pool_flags = {0};
  ParamCounts pc = ss_param_count(FeatureExtractor::create(one, r));
  CHECK(pc.ss_count == 2);
  CHECK(pc.ft_count == 10);
  CHECK(pc.num == 1);
  CHECK(pc.den == 5);
  CHECK(pc.num * 9 < pc.den * 2);  // ratio < 2/9

  ExtractorConfig seven = one;
  seven.kernel = 7;
  seven.input_hw = 9;
  ParamCounts pc7 = ss_param_count(FeatureExtractor::create(seven, r));
  CHECK(pc7.ss_count == 2);
  CHECK(pc7.ft_count == 50);
  CHECK(pc7.num * 49 < pc7.den * 2);  // ratio < 2/49

  ParamCounts desk = ss_param_count(FeatureExtractor::create(ExtractorConfig{}, r));
  CHECK(desk.ss_count == 128);
  CHECK(desk.ft_count == 7408);
  CHECK(desk.num * 9 < desk.den * 2);

  ExtractorConfig none = one;
  none.num_blocks = 0;
  none.pool_flags = {};
  CHECK_THROWS_AS(ss_param_count(FeatureExtractor::create(none, r)), ContractError);
}

TEST_CASE("variant names round-trip") {
  const char* names[] = {"ss_full", "ss_b4",       "ss_b34",     "ft_full", "ft_b4",
                         "ft_b34",  "ft_head",     "update_all", "update_head"};
  for (const char* n : names) CHECK(VariantSpec::parse(n).name() == n);
  CHECK(VariantSpec::parse("ss_full").meta_op == MetaOp::SS);
  CHECK(VariantSpec::parse("ft_b4").scope == Scope::LastBlock);
  CHECK(VariantSpec::parse("ft_head").scope == Scope::HeadOnly);
  CHECK(VariantSpec::parse("update_head").baseline == Baseline::UpdateHead);
  CHECK(VariantSpec::parse("update_all").meta_op == MetaOp::None);
  CHECK_THROWS_AS(VariantSpec::parse("ss_head"), ConfigError);
  CHECK_THROWS_AS(VariantSpec::parse(""), ConfigError);
}

TEST_CASE("scaling/shifting gradients pass finite differences away from identity") {
  Rng r(20260817);
  FeatureExtractor ext = FeatureExtractor::create(small_cfg(), r);
  ext.freeze();
  SSParams ss = SSParams::for_extractor(ext);
  auto ss_ps = ss.params();  // s1, s2 alternating
  for (std::size_t i = 0; i < ss_ps.size(); ++i) {
    Tensor p = ss_ps[i];
    for (std::int64_t j = 0; j < p.size(); ++j)
      p.data()[j] = i % 2 == 0 ? 0.7 + 0.6 * r.uniform() : 0.4 * r.uniform() - 0.2;
  }
  Tensor x = randn(r, {3, 1, 8, 8});
  Tensor weights = randn(r, {3, ext.embedding_dim()});
  const double err = gradcheck::check(
      ss.params(), [&] { return mean_all(mul(ext.forward(x, &ss), weights)); });
  CHECK(err < 1e-4);
}

TEST_CASE("head gradients pass finite differences") {
  Rng r(31);
  Tensor emb = randn(r, {4, 8});
  const std::vector<int> labels = {0, 2, 4, 1};

  ClassifierHead fc2 = ClassifierHead::create_fc(8, 5, 2, r, 0.2);
  const double err_fc = gradcheck::check(
      fc2.params(), [&] { return softmax_cross_entropy(fc2.forward(emb), labels); });
  CHECK(err_fc < 1e-4);

  ClassifierHead cos = ClassifierHead::create_cosine(8, 5, r, 0.5);
  const double err_cos = gradcheck::check(
      cos.params(), [&] { return softmax_cross_entropy(cos.forward(emb), labels); });
  CHECK(err_cos < 1e-4);
}

TEST_CASE("the head adapts through a recorded inner step, end to end") {
  // one unrolled gradient step on the head, differentiated back to the
  // scaling/shifting parameters — the meta-gradient path used in training
  Rng r(32);
  FeatureExtractor ext = FeatureExtractor::create(small_cfg(), r);
  ext.freeze();
  SSParams ss = SSParams::for_extractor(ext);
  auto ss_ps = ss.params();
  for (std::size_t i = 0; i < ss_ps.size(); ++i) {
    Tensor p = ss_ps[i];
    for (std::int64_t j = 0; j < p.size(); ++j)
      p.data()[j] = i % 2 == 0 ? 0.8 + 0.4 * r.uniform() : 0.2 * r.uniform() - 0.1;
  }
  ClassifierHead head = ClassifierHead::create_fc(ext.embedding_dim(), 3, 1, r, 0.1);
  Tensor xs = randn(r, {3, 1, 8, 8});
  Tensor xq = randn(r, {3, 1, 8, 8});
  const std::vector<int> ys = {0, 1, 2}, yq = {2, 0, 1};

  Tape tape;
  TapeScope scope(tape);
  Tensor fs = ext.forward(xs, &ss);
  Tensor inner = softmax_cross_entropy(head.forward(fs), ys);
  auto hp = head.params();
  auto g = tape.grad(inner, hp, /*create_graph=*/true);
  std::vector<Tensor> adapted;
  for (std::size_t i = 0; i < hp.size(); ++i) adapted.push_back(sub(hp[i], scale(g[i], 0.05)));
  ClassifierHead prime = head.clone();
  prime.set_params(adapted);
  Tensor fq = ext.forward(xq, &ss);
  Tensor outer = softmax_cross_entropy(prime.forward(fq), yq);
  auto meta = tape.grad(outer, ss.params());
  double total = 0.0;
  for (const Tensor& m : meta)
    for (std::int64_t i = 0; i < m.size(); ++i) total += std::fabs(m.data()[i]);
  CHECK(total > 0.0);
  for (const Tensor& m : meta)
    for (std::int64_t i = 0; i < m.size(); ++i) CHECK(std::isfinite(m.data()[i]));
}
