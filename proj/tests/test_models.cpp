#include <doctest.h>

#include <cmath>
#include <numeric>

#include "tsxil/error.hpp"
#include "tsxil/models.hpp"
#include "tsxil/random.hpp"

using namespace tsxil;

namespace {
std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}
}  // namespace

TEST_CASE("fcn output has K logits for any admissible length") {
  FcnConfig cfg;
  cfg.channels = {4, 8, 4};
  cfg.num_classes = 3;
  FcnClassifier m(cfg, 1);
  for (std::size_t t : {7u, 20u, 64u}) {
    const auto logits = classify(m, noise(t, t));
    CHECK(logits.size() == 3);
    for (double v : logits) CHECK(std::isfinite(v));
  }
  CHECK_THROWS_AS(classify(m, noise(6, 1)), ShapeError);
}

TEST_CASE("softmax of random-init logits sums to one") {
  FcnClassifier m(FcnConfig{}, 42);
  const auto p = softmax(classify(m, noise(64, 3)));
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-9);
}

TEST_CASE("forecaster output length is W and input length is enforced") {
  MlpForecaster m(MlpConfig{9, 3, {16}, Activation::Softplus}, 2);
  CHECK(forecast(m, noise(9, 1)).size() == 3);
  CHECK_THROWS_AS(forecast(m, noise(8, 1)), ShapeError);
  CHECK_THROWS_AS(classify(m, noise(9, 1)), ContractViolation);
}

TEST_CASE("parameter counts are fixed by the architecture") {
  // conv 1->32 k7: 224+32, 32->64 k5: 10240+64, 64->32 k3: 6144+32, head 32*2+2.
  CHECK(FcnClassifier::count_parameters(FcnConfig{}) == 256 + 10304 + 6176 + 66);
  CHECK(FcnClassifier(FcnConfig{}, 0).parameter_count() == 16802);
  // 32->128, 128->128, 128->8 with biases.
  CHECK(MlpForecaster::count_parameters(MlpConfig{}) == 4224 + 16512 + 1032);
  CHECK(MlpForecaster(MlpConfig{}, 0).parameter_count() == 21768);
}

TEST_CASE("same seed gives the same weights and outputs") {
  FcnClassifier a(FcnConfig{}, 9), b(FcnConfig{}, 9), c(FcnConfig{}, 10);
  CHECK(a.flat_parameters() == b.flat_parameters());
  CHECK(a.flat_parameters() != c.flat_parameters());
  const auto x = noise(32, 5);
  CHECK(classify(a, x) == classify(b, x));
}

TEST_CASE("checkpoint round trip preserves architecture and bits") {
  MlpForecaster m(MlpConfig{12, 4, {8, 8}, Activation::Tanh}, 3);
  const auto bytes = checkpoint_bytes(m);
  CHECK(bytes.find("tsxil-checkpoint") != std::string::npos);
  const auto back = checkpoint_from_bytes(bytes);
  CHECK(back->descriptor() == m.descriptor());
  CHECK(back->flat_parameters() == m.flat_parameters());
  CHECK(checkpoint_bytes(*back) == bytes);
  auto corrupt = bytes;
  corrupt.pop_back();
  CHECK_THROWS_AS(checkpoint_from_bytes(corrupt), DataError);
}

TEST_CASE("descriptor rebuilds the same family") {
  FcnConfig cfg;
  cfg.channels = {3};
  cfg.kernels = {5};
  cfg.activation = Activation::Relu;
  FcnClassifier m(cfg, 0);
  const auto rebuilt = model_from_descriptor(m.descriptor(), 0);
  CHECK(rebuilt->parameter_count() == m.parameter_count());
  CHECK(rebuilt->descriptor() == m.descriptor());
  CHECK_THROWS_AS(model_from_descriptor({{"family", "transformer"}}), ConfigError);
}

TEST_CASE("set_flat_parameters checks the size") {
  MlpForecaster m(MlpConfig{4, 1, {}, Activation::Softplus}, 0);
  CHECK(m.parameter_count() == 5);
  m.set_flat_parameters(std::vector<double>{1, 2, 3, 4, 0.5});
  CHECK(forecast(m, std::vector<double>{1, 1, 1, 1})[0] == 10.5);
  CHECK_THROWS_AS(m.set_flat_parameters(std::vector<double>{1, 2}), ShapeError);
}
