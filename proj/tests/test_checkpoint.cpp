#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mtl/checkpoint.hpp"
#include "mtl/errors.hpp"
#include "mtl/optim.hpp"
#include "mtl/rng.hpp"
#include "mtl/sha256.hpp"

using mtl::Checkpoint;
using mtl::Rng;
using mtl::Tensor;

// ---- hashing -------------------------------------------------------------------

TEST_CASE("sha256 matches the FIPS 180-4 reference vectors") {
  CHECK(mtl::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(mtl::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(mtl::sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // one-million-'a' vector, fed in uneven chunks
  mtl::Sha256 h;
  std::string chunk(997, 'a');
  std::size_t fed = 0;
  while (fed < 1000000) {
    const std::size_t take = std::min<std::size_t>(997, 1000000 - fed);
    h.update(chunk.data(), take);
    fed += take;
  }
  CHECK(h.hex_digest() == "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("file hashing agrees with buffer hashing") {
  const std::string path = "hash_probe.bin";
  std::string payload = "The quick brown fox jumps over the lazy dog";
  {
    std::ofstream os(path, std::ios::binary);
    os << payload;
  }
  CHECK(mtl::sha256_file(path) == mtl::sha256_hex(payload));
  CHECK(mtl::sha256_file(path) ==
        "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
  std::remove(path.c_str());
  CHECK_THROWS_AS(mtl::sha256_file("no_such_file_here"), mtl::IoError);
}

TEST_CASE("tensor checksums detect any value or shape change") {
  Tensor a = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(mtl::checksum_tensors({a}) == mtl::checksum_tensors({b}));
  b.data()[3] = 4.0000000001;
  CHECK(mtl::checksum_tensors({a}) != mtl::checksum_tensors({b}));
  Tensor c = Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0});  // same bytes, other shape
  CHECK(mtl::checksum_tensors({a}) != mtl::checksum_tensors({c}));
}

// ---- checkpoint container --------------------------------------------------------

TEST_CASE("checkpoint round-trips tensors bit-exactly") {
  Rng rng(31);
  Checkpoint ck;
  Tensor w = Tensor::zeros({3, 2, 3, 3});
  for (std::int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * 1e3;
  w.data()[0] = 0.1 + 0.2;  // not exactly representable: catches any text round-trip
  Tensor v = Tensor::from_data({4}, {-0.0, 1e-308, 3.141592653589793, -2.718281828459045});
  ck.add("layer.w", w);
  ck.add("layer.v", v);

  const std::string path = "ckpt_roundtrip.mtlc";
  ck.save(path);
  const Checkpoint back = Checkpoint::load(path);
  REQUIRE(back.entries().size() == 2);
  CHECK(back.entries()[0].first == "layer.w");
  CHECK(back.get("layer.w").shape() == w.shape());
  bool same = true;
  for (std::int64_t i = 0; i < w.size(); ++i)
    if (back.get("layer.w").data()[i] != w.data()[i]) same = false;
  for (std::int64_t i = 0; i < v.size(); ++i)
    if (back.get("layer.v").data()[i] != v.data()[i]) same = false;
  CHECK(same);
  CHECK(std::signbit(back.get("layer.v").data()[0]));

  // byte-identical re-save
  const std::string path2 = "ckpt_roundtrip2.mtlc";
  back.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint container rejects misuse") {
  Checkpoint ck;
  ck.add("a", Tensor::scalar(1.0));
  CHECK_THROWS_AS(ck.add("a", Tensor::scalar(2.0)), mtl::ContractError);
  CHECK_THROWS_AS(ck.add("", Tensor::scalar(2.0)), mtl::ContractError);
  CHECK_THROWS_AS(ck.get("missing"), mtl::FormatError);
  CHECK(ck.has("a"));
  CHECK(!ck.has("b"));
}

TEST_CASE("checkpoint loader rejects malformed files") {
  const std::string path = "ckpt_bad.mtlc";
  CHECK_THROWS_AS(Checkpoint::load("no_such_checkpoint.mtlc"), mtl::IoError);

  SUBCASE("bad magic") {
    std::ofstream os(path, std::ios::binary);
    os << "XXXX" << std::string(32, '\0');
    os.close();
    CHECK_THROWS_AS(Checkpoint::load(path), mtl::FormatError);
  }
  SUBCASE("unknown version is named in the error") {
    std::ofstream os(path, std::ios::binary);
    os << "MTLC";
    const unsigned char ver[4] = {2, 0, 0, 0};
    os.write(reinterpret_cast<const char*>(ver), 4);
    os << std::string(32, '\0');
    os.close();
    CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("version 2"),
                         mtl::FormatError);
  }
  SUBCASE("truncation leaves no partial checkpoint") {
    Checkpoint ck;
    ck.add("w", Tensor::from_data({8}, {1, 2, 3, 4, 5, 6, 7, 8}));
    ck.save(path);
    std::ifstream is(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    std::ofstream os(path, std::ios::binary);
    os.write(all.data(), static_cast<std::streamsize>(all.size() - 11));
    os.close();
    CHECK_THROWS_AS(Checkpoint::load(path), mtl::FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint saves atomically via a temp file") {
  Checkpoint ck;
  ck.add("x", Tensor::scalar(5.0));
  const std::string path = "ckpt_atomic.mtlc";
  ck.save(path);
  std::ifstream probe(path + ".tmp");
  CHECK(!probe.good());  // temp name renamed away
  CHECK(Checkpoint::load(path).get("x").item() == 5.0);
  std::remove(path.c_str());
}

// ---- step-decay schedule ---------------------------------------------------------

TEST_CASE("step-decay halves on the period and clamps at the floor") {
  CHECK(mtl::decayed_lr(0, 0.001, 5000, 0.0001) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(mtl::decayed_lr(4999, 0.001, 5000, 0.0001) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(mtl::decayed_lr(5000, 0.001, 5000, 0.0001) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(mtl::decayed_lr(25000, 0.001, 5000, 0.0001) ==
        doctest::Approx(0.0001).epsilon(1e-15));  // 0.001*0.5^5 = 3.125e-5 -> clamp
  CHECK(mtl::decayed_lr(1000, 0.001, 1000, 0.0001) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(mtl::decayed_lr(4000, 0.001, 1000, 0.0001) ==
        doctest::Approx(0.0001).epsilon(1e-15));  // 6.25e-5 -> clamp
  CHECK_THROWS_AS(mtl::decayed_lr(-1, 0.001, 5000, 0.0001), mtl::ContractError);
  CHECK_THROWS_AS(mtl::decayed_lr(0, 0.001, 0, 0.0001), mtl::ConfigError);
  CHECK_THROWS_AS(mtl::decayed_lr(0, 0.001, 5000, 0.01), mtl::ConfigError);
}

// ---- adaptive-moment optimizer ----------------------------------------------------

TEST_CASE("first optimizer step moves by almost exactly the learning rate") {
  // With bias correction, step 1 is lr * g/(|g|+eps) regardless of |g|.
  Tensor p = Tensor::scalar(1.0, true);
  mtl::Adam opt({p});
  Tensor g = Tensor::scalar(0.5);
  opt.step_with(0.01, {g});
  CHECK(p.item() == doctest::Approx(1.0 - 0.01 * (0.5 / (0.5 + 1e-8))).epsilon(1e-14));
}

TEST_CASE("optimizer follows the textbook moment recursion") {
  Tensor p = Tensor::scalar(2.0, true);
  mtl::Adam opt({p});
  const double grads[3] = {0.5, -0.25, 1.0};
  // independent trace of the same update rule
  double m = 0.0, v = 0.0, ref = 2.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    ref -= 0.005 * mhat / (std::sqrt(vhat) + 1e-8);
    opt.step_with(0.005, {Tensor::scalar(g)});
  }
  CHECK(p.item() == doctest::Approx(ref).epsilon(1e-15));
  CHECK(opt.steps() == 3);
}

TEST_CASE("gradient-field steps and explicit-gradient steps agree") {
  Tensor a = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Tensor b = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  mtl::Adam opt_a({a}), opt_b({b});
  Rng rng(9);
  for (int t = 0; t < 5; ++t) {
    Tensor g = Tensor::zeros({3});
    for (int i = 0; i < 3; ++i) g.data()[i] = rng.normal();
    a.accumulate_grad(g.data(), 3);
    opt_a.step(0.01);
    opt_a.zero_grad();
    opt_b.step_with(0.01, {g});
  }
  for (int i = 0; i < 3; ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("a parameter with no gradient still decays its moments") {
  Tensor p = Tensor::scalar(1.0, true);
  mtl::Adam opt({p});
  opt.step_with(0.01, {Tensor::scalar(1.0)});
  const double after_first = p.item();
  opt.step(0.01);  // no .grad set: gradient treated as zero
  // moments decayed toward zero but the parameter still moves a little
  CHECK(p.item() < after_first);
  CHECK(p.item() > after_first - 0.01);
}

TEST_CASE("optimizer rejects mismatched gradients") {
  Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
  mtl::Adam opt({p});
  CHECK_THROWS_AS(opt.step_with(0.01, {}), mtl::ContractError);
  CHECK_THROWS_AS(opt.step_with(0.01, {Tensor::scalar(1.0)}), mtl::DimensionError);
  CHECK_THROWS_AS(mtl::Adam({}), mtl::ContractError);
  CHECK_THROWS_AS(
      mtl::sgd_step({p}, {Tensor::scalar(1.0)}, 0.1), mtl::DimensionError);
}

TEST_CASE("plain gradient steps move parameters in place") {
  Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor g = Tensor::from_data({2}, {0.5, -1.0});
  mtl::sgd_step({p}, {g}, 0.1);
  CHECK(p.data()[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p.data()[1] == doctest::Approx(2.1).epsilon(1e-15));
}
