#include <doctest.h>

#include <cmath>

#include "tsxil/attribution.hpp"
#include "tsxil/error.hpp"
#include "tsxil/losses.hpp"
#include "tsxil/random.hpp"

using namespace tsxil;
using ad::Tensor;

TEST_CASE("right-answer losses") {
  SUBCASE("mse") {
    const auto l = right_answer_loss(Tensor::from({1, 2}, {1, 2}), Tensor::from({0, 0}, {1, 2}));
    CHECK(l.item() == 2.5);
    CHECK(mse(Tensor::from({3, 4}, {2, 1}), Tensor::from({3, 4}, {2, 1})).item() == 0.0);
    CHECK_THROWS_AS(mse(Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), ShapeError);
  }
  SUBCASE("cross-entropy goes to zero on a confident correct prediction") {
    const std::vector<std::size_t> labels{1, 0};
    const auto l = right_answer_loss(Tensor::from({-40, 40, 40, -40}, {2, 2}), labels);
    CHECK(l.item() < 1e-30);
    // Uniform logits: log K.
    const auto u = cross_entropy(Tensor::zeros({2, 3}), labels);
    CHECK(u.item() == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    const std::vector<std::size_t> bad{2, 0};
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 2}), bad), ShapeError);
  }
}

TEST_CASE("rr_spatial hand values") {
  CHECK(rr_spatial(Tensor::from({1, 2, 3}, {1, 3}), Tensor::from({0, 1, 0}, {1, 3})).item() == 4.0);
  CHECK(rr_spatial(Tensor::from({1, 0, 2, 2}, {2, 2}), Tensor::from({1, 0, 1, 1}, {2, 2})).item() == 4.5);
  CHECK(rr_spatial(Tensor::from({1, 2, 3}, {1, 3}), Tensor::zeros({1, 3})).item() == 0.0);
  // Denominator override: annotated rows only, D = 4.
  CHECK(rr_spatial(Tensor::from({1, 2, 3}, {1, 3}), Tensor::from({0, 1, 0}, {1, 3}), 4).item() == 1.0);
  // Length normalization.
  CHECK(rr_spatial(Tensor::from({1, 2, 3}, {1, 3}), Tensor::from({0, 1, 0}, {1, 3}), 0, true).item() ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-15));

  const std::vector<Attribution> attrs{{{1, 0}, {}}, {{2, 2}, {}}};
  const std::vector<TimeMask> masks{{"a", {1, 0}}, {"b", {1, 1}}};
  CHECK(rr_spatial(attrs, masks) == 4.5);
}

TEST_CASE("rr_spatial is zero exactly when masked attributions vanish") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> e(12), a(12);
    for (std::size_t i = 0; i < 12; ++i) {
      a[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
      e[i] = rng.uniform() < 0.5 ? 0.0 : rng.normal();
    }
    bool zero_on_mask = true;
    for (std::size_t i = 0; i < 12; ++i) zero_on_mask &= !(a[i] != 0.0 && e[i] != 0.0);
    CHECK((rr_spatial(Tensor::from(e, {2, 6}), Tensor::from(a, {2, 6})).item() == 0.0) == zero_on_mask);
  }
}

TEST_CASE("rr_frequency hand values") {
  const ComplexTensor s{Tensor::from({1}, {1, 1}), Tensor::from({2}, {1, 1})};
  CHECK(rr_frequency(s, Tensor::ones({1, 1}), Tensor::ones({1, 1})).item() == 5.0);
  CHECK(rr_frequency(s, Tensor::zeros({1, 1}), Tensor::zeros({1, 1})).item() == 0.0);
  // Masked-out imaginary part contributes nothing, whatever its size.
  const ComplexTensor big{Tensor::from({1}, {1, 1}), Tensor::from({1e6}, {1, 1})};
  CHECK(rr_frequency(big, Tensor::ones({1, 1}), Tensor::zeros({1, 1})).item() == 1.0);

  FrequencyAttribution fa{{{1.0}, {2.0}}};
  const std::vector<FrequencyMask> masks{{"x", {1}, {1}}};
  CHECK(rr_frequency(std::vector<FrequencyAttribution>{fa}, masks) == 5.0);
}

TEST_CASE("combined loss") {
  LossConfig cfg;
  CHECK(combined_loss(1.3, 4, 5, cfg).total == 1.3);
  cfg.lambda_sp = 0.5;
  cfg.lambda_fr = 0.1;
  const auto r = combined_loss(1, 4, 5, cfg);
  CHECK(r.total == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(std::abs(r.total - (r.ra + cfg.lambda_sp * r.rr_sp + cfg.lambda_fr * r.rr_fr)) <= 1e-12);
  auto doubled = cfg;
  doubled.lambda_sp *= 2;
  const auto r2 = combined_loss(1, 4, 5, doubled);
  CHECK((r2.total - 1 - 0.5) == 2 * (r.total - 1 - 0.5));

  const auto t = combined_loss(Tensor::scalar(1), Tensor::scalar(4), Tensor::scalar(5), cfg);
  CHECK(t.item() == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(combined_loss(Tensor::scalar(1), Tensor{}, Tensor{}, cfg).item() == 1.0);

  LossConfig negative;
  negative.lambda_sp = -1;
  CHECK_THROWS_AS(combined_loss(1, 1, 1, negative), ConfigError);

  const auto row = loss_row_json(3, r);
  CHECK(row["epoch"] == 3);
  CHECK(row["total"] == r.total);
}

TEST_CASE("zero masks leave the parameter gradient bitwise unchanged") {
  FcnConfig fcfg;
  fcfg.channels = {4, 4};
  fcfg.kernels = {5, 3};
  FcnClassifier model(fcfg, 2);
  Rng rng(4);
  std::vector<double> xv(3 * 16);
  for (auto& v : xv) v = rng.normal();
  const auto x = Tensor::from(xv, {3, 16});
  const std::vector<std::size_t> labels{0, 1, 1};

  auto param_grad = [&](bool with_rr) {
    const auto ra = cross_entropy(model.forward(x), labels);
    LossConfig cfg;
    cfg.lambda_sp = 10.0;
    cfg.lambda_fr = 3.0;
    Tensor sp, fr;
    if (with_rr) {
      const auto e = integrated_gradients(model, x, labels, IgConfig{4, {}}, true);
      sp = rr_spatial(e, Tensor::zeros({3, 16}));
      fr = rr_frequency(dft(e), Tensor::zeros({3, 16}), Tensor::zeros({3, 16}));
    }
    const auto total = combined_loss(ra, sp, fr, cfg);
    std::vector<double> flat;
    for (const auto& g : ad::grad(total, model.parameters()))
      flat.insert(flat.end(), g.values().begin(), g.values().end());
    return flat;
  };
  CHECK(param_grad(true) == param_grad(false));
}

TEST_CASE("mask tensors pick rows") {
  std::vector<TimeMask> masks{{"a", {1, 0}}, {"b", {0, 1}}, {"c", {1, 1}}};
  const std::vector<std::size_t> rows{2, 0};
  const auto t = mask_tensor(masks, rows);
  CHECK(std::vector<double>(t.values().begin(), t.values().end()) == std::vector<double>{1, 1, 1, 0});
  std::vector<FrequencyMask> fm{{"a", {1, 0}, {0, 0}}, {"b", {0, 1}, {1, 1}}};
  const std::vector<std::size_t> one{1};
  const auto [re, im] = mask_tensors(fm, one);
  CHECK(re.at(1) == 1.0);
  CHECK(im.at(0) == 1.0);
}
