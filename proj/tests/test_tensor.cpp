#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hg/grad_check.hpp"
#include "hg/rng.hpp"
#include "hg/tensor.hpp"

using hg::Tensor;

namespace {

Tensor<double> randn(hg::Shape shape, hg::Rng& rng) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : *t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("matmul identity and direct arithmetic") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {3, 4, 5, 6});
  auto out = hg::matmul(eye, m);
  CHECK(*out.data == *m.data);

  auto a = Tensor<double>::from({1, 2}, {1, 2});
  auto b = Tensor<double>::from({2, 1}, {3, 4});
  CHECK(hg::matmul(a, b).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({2, 2});
  try {
    hg::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const hg::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient equals column sums of B and passes grad_check") {
  hg::Rng rng(7);
  auto a = randn({3, 4}, rng);
  auto b = randn({4, 2}, rng);

  // d sum(A*B) / dA[i,k] = sum_j B[k,j], identical for every row i.
  {
    Tensor<double> at = a.clone();
    at.set_requires_grad(true);
    hg::Tape<double> tape;
    hg::TapeScope<double> scope(tape);
    auto loss = hg::sum_all(hg::matmul(at, b));
    hg::backward(loss);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        double colsum = 0.0;
        for (std::size_t j = 0; j < 2; ++j) colsum += b.at(k, j);
        CHECK((*at.grad)[i * 4 + k] == doctest::Approx(colsum).epsilon(1e-12));
      }
    }
  }

  const double err = hg::grad_check<double>(
      [](std::vector<Tensor<double>>& in) {
        return hg::sum_all(hg::matmul(in[0], in[1]));
      },
      {a, b}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("rowwise_softmax closed forms and stability") {
  auto sym = hg::rowwise_softmax(Tensor<double>::from({1, 2}, {0, 0}));
  CHECK(sym.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));

  auto two = hg::rowwise_softmax(
      Tensor<double>::from({1, 2}, {std::log(2.0), 0.0}));
  CHECK(two.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(two.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Large inputs stay finite; expected value from the shifted formula.
  auto big = hg::rowwise_softmax(Tensor<double>::from({1, 2}, {1000, 999}));
  const double expect = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(std::isfinite(big.at(0, 0)));
  CHECK(big.at(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(big.at(0, 1) == doctest::Approx(1.0 - expect).epsilon(1e-12));
}

TEST_CASE("rowwise_softmax rows sum to one for random finite input") {
  hg::Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    auto x = randn({4, 5}, rng);
    for (auto& v : *x.data) v *= 100.0;
    auto y = hg::rowwise_softmax(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += y.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm constant row, identity case, beta shift") {
  auto gamma = Tensor<double>::full({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  auto flat = hg::layer_norm(Tensor<double>::from({1, 3}, {5, 5, 5}), gamma,
                             beta, 1e-6);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(flat.at(0, j) == doctest::Approx(0.0).epsilon(1e-9));
  }

  auto g2 = Tensor<double>::full({2}, 1.0);
  auto b2 = Tensor<double>::zeros({2});
  auto unit = hg::layer_norm(Tensor<double>::from({1, 2}, {1, -1}), g2, b2,
                             1e-12);
  CHECK(unit.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(unit.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-6));

  hg::Rng rng(3);
  auto x = randn({4, 6}, rng);
  auto g6 = randn({6}, rng);
  auto zero6 = Tensor<double>::zeros({6});
  auto shift = Tensor<double>::from(
      {6}, {0.3, -1.2, 0.7, 2.0, -0.5, 0.1});
  auto base = hg::layer_norm(x, g6, zero6, 1e-6);
  auto shifted = hg::layer_norm(x, g6, shift, 1e-6);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(shifted.at(i, j) ==
            doctest::Approx(base.at(i, j) + shift.at(j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward bilinear and mean gradients") {
  hg::Rng rng(5);
  auto x = randn({2, 3}, rng);
  auto w = randn({2, 3}, rng);
  w.set_requires_grad(true);
  {
    hg::Tape<double> tape;
    hg::TapeScope<double> scope(tape);
    auto loss = hg::sum_all(hg::mul(x, w));
    hg::backward(loss);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK((*w.grad)[i] == doctest::Approx((*x.data)[i]).epsilon(1e-12));
    }
  }

  auto y = randn({3, 4}, rng);
  y.set_requires_grad(true);
  {
    hg::Tape<double> tape;
    hg::TapeScope<double> scope(tape);
    auto loss = hg::mean_all(y);
    hg::backward(loss);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK((*y.grad)[i] == doctest::Approx(1.0 / 12.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward twice without reset doubles leaf grads") {
  auto x = Tensor<double>::from({2, 2}, {1, 2, 3, 4}, true);
  hg::Tape<double> tape;
  hg::TapeScope<double> scope(tape);
  auto loss = hg::mean_all(hg::mul(x, x));
  hg::backward(loss);
  const std::vector<double> once = *x.grad;
  hg::backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((*x.grad)[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = Tensor<double>::from({2, 1}, {1, 2}, true);
  hg::Tape<double> tape;
  hg::TapeScope<double> scope(tape);
  auto y = hg::scale(x, 2.0);
  CHECK_THROWS_AS(hg::backward(y), hg::ContractError);
}

TEST_CASE("composed matmul-softmax-mean pipeline matches finite differences") {
  hg::Rng rng(13);
  auto x = randn({3, 4}, rng);
  auto w = randn({4, 4}, rng);
  // Weighting the probabilities keeps the composite non-constant (a plain
  // mean of softmax rows would be identically 1/c).
  auto weights = randn({3, 4}, rng);
  const double err = hg::grad_check<double>(
      [&weights](std::vector<Tensor<double>>& in) {
        auto probs = hg::rowwise_softmax(hg::matmul(in[0], in[1]));
        return hg::mean_all(hg::mul(probs, weights));
      },
      {x, w}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check is near-exact on linear maps") {
  hg::Rng rng(17);
  auto x = randn({5}, rng);
  auto w = randn({5}, rng);
  const double err = hg::grad_check<double>(
      [](std::vector<Tensor<double>>& in) {
        return hg::sum_all(hg::mul(in[0], in[1]));
      },
      {x, w}, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check flags a deliberately corrupted gradient") {
  // Forward computes sum(x) but the recorded rule claims twice that.
  auto corrupted_sum = [](std::vector<Tensor<double>>& in) {
    Tensor<double>& x = in[0];
    Tensor<double> out = Tensor<double>::zeros({1});
    for (double v : *x.data) (*out.data)[0] += v;
    if (hg::detail::active_tape<double>() && x.requires_grad) {
      out.set_requires_grad(true);
      hg::detail::active_tape<double>()->record(
          "corrupted_sum", out.grad, [x, out]() {
            for (std::size_t i = 0; i < x.grad->size(); ++i) {
              (*x.grad)[i] += 2.0 * (*out.grad)[0];
            }
          });
    }
    return out;
  };
  auto x = Tensor<double>::from({3}, {0.4, -1.1, 2.2});
  const double err = hg::grad_check<double>(corrupted_sum, {x}, 1e-5);
  CHECK(err == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("grad_check refuses non-finite outputs") {
  auto x = Tensor<double>::from({1}, {0.0});
  CHECK_THROWS_AS(
      hg::grad_check<double>(
          [](std::vector<Tensor<double>>& in) {
            Tensor<double> out = Tensor<double>::zeros({1});
            (*out.data)[0] = 1.0 / (*in[0].data)[0];
            return out;
          },
          {x}, 1e-5),
      hg::EvalError);
}

TEST_CASE("segment ops average, mask, and route gradients by segment") {
  auto x = Tensor<double>::from({4, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  std::vector<std::size_t> ids{0, 0, 1, 1};
  auto mean = hg::segment_mean(x, ids, 2);
  CHECK(mean.at(0, 0) == doctest::Approx(2.0));
  CHECK(mean.at(0, 1) == doctest::Approx(3.0));
  CHECK(mean.at(1, 0) == doctest::Approx(20.0));

  hg::Rng rng(23);
  auto scores = randn({4, 4}, rng);
  auto probs = hg::segment_masked_softmax(scores, ids);
  for (std::size_t i = 0; i < 4; ++i) {
    double in_segment = 0.0, cross = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      (ids[j] == ids[i] ? in_segment : cross) += probs.at(i, j);
    }
    CHECK(in_segment == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cross == 0.0);
  }

  const double err = hg::grad_check<double>(
      [&ids](std::vector<Tensor<double>>& in) {
        auto p = hg::segment_masked_softmax(in[0], ids);
        return hg::mean_all(hg::mul(p, p));
      },
      {scores}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("signed_normalize_rows spec rows and gradient") {
  auto c = Tensor<double>::from({3, 3},
                                {2, -1, 1,
                                 0.4, 0.6, 0.0,
                                 1e-9, -1e-9, 0.0});
  auto alpha = hg::signed_normalize_rows(c, 1e-6);
  CHECK(alpha.at(0, 0) == doctest::Approx(1.0));
  CHECK(alpha.at(0, 1) == doctest::Approx(-0.5));
  CHECK(alpha.at(0, 2) == doctest::Approx(0.5));
  CHECK(alpha.at(1, 0) == doctest::Approx(0.4));
  CHECK(alpha.at(1, 1) == doctest::Approx(0.6));
  // Degenerate sum falls back to uniform weights.
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(alpha.at(2, j) == doctest::Approx(1.0 / 3.0));
  }

  hg::Rng rng(29);
  auto raw = randn({2, 4}, rng);
  const double err = hg::grad_check<double>(
      [](std::vector<Tensor<double>>& in) {
        auto a = hg::signed_normalize_rows(in[0], 1e-6);
        return hg::mean_all(hg::mul(a, a));
      },
      {raw}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("weighted_layer_sum mixes slices per segment with gradients") {
  auto s0 = Tensor<double>::from({3, 2}, {1, 1, 2, 2, 3, 3});
  auto s1 = Tensor<double>::from({3, 2}, {10, 10, 20, 20, 30, 30});
  std::vector<std::size_t> ids{0, 0, 1};
  auto alpha = Tensor<double>::from({2, 2}, {0.5, 0.5, -1.0, 2.0});
  auto out = hg::weighted_layer_sum({s0, s1}, alpha, ids);
  CHECK(out.at(0, 0) == doctest::Approx(5.5));
  CHECK(out.at(1, 0) == doctest::Approx(11.0));
  CHECK(out.at(2, 0) == doctest::Approx(57.0));

  hg::Rng rng(31);
  auto r0 = randn({3, 2}, rng);
  auto r1 = randn({3, 2}, rng);
  auto ra = randn({2, 2}, rng);
  const double err = hg::grad_check<double>(
      [&ids](std::vector<Tensor<double>>& in) {
        auto y = hg::weighted_layer_sum({in[0], in[1]}, in[2], ids);
        return hg::mean_all(hg::mul(y, y));
      },
      {r0, r1, ra}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("losses: cross entropy, mse, masked bce") {
  // Uniform logits over K classes -> ln K.
  auto logits = Tensor<double>::zeros({4, 3});
  auto ce = hg::cross_entropy_mean(logits, {0, 1, 2, 0});
  CHECK(ce.item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  auto confident = Tensor<double>::from({2, 2}, {20, 0, 0, 20});
  CHECK(hg::cross_entropy_mean(confident, {0, 1}).item() < 1e-3);

  auto pred = Tensor<double>::from({2, 1}, {0.5, -0.25});
  CHECK(hg::mse_mean(pred, pred.clone()).item() == 0.0);

  bool warned = false;
  auto targets = Tensor<double>::from({2, 1}, {1, 0});
  auto masked = hg::bce_logits_masked_mean(pred, targets, {0, 0}, &warned);
  CHECK(masked.item() == 0.0);
  CHECK(warned);

  warned = true;
  auto partial = hg::bce_logits_masked_mean(pred, targets, {1, 0}, &warned);
  CHECK(!warned);
  const double expect = std::log1p(std::exp(0.5)) - 0.5;
  CHECK(partial.item() == doctest::Approx(expect).epsilon(1e-12));

  hg::Rng rng(37);
  auto l = randn({3, 4}, rng);
  const double err = hg::grad_check<double>(
      [](std::vector<Tensor<double>>& in) {
        return hg::cross_entropy_mean(in[0], {1, 3, 0});
      },
      {l}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("convex mix endpoints and midpoint") {
  auto x = Tensor<double>::from({1, 1}, {2.0});
  auto y = Tensor<double>::from({1, 1}, {0.0});
  CHECK(hg::convex_mix(Tensor<double>::scalar(1.0), x, y).item() == 2.0);
  CHECK(hg::convex_mix(Tensor<double>::scalar(0.0), x, y).item() == 0.0);
  CHECK(hg::convex_mix(Tensor<double>::scalar(0.5), x, y).item() ==
        doctest::Approx(1.0));

  hg::Rng rng(41);
  auto s = Tensor<double>::from({1}, {0.3});
  auto a = randn({2, 2}, rng);
  auto b = randn({2, 2}, rng);
  const double err = hg::grad_check<double>(
      [](std::vector<Tensor<double>>& in) {
        return hg::mean_all(hg::convex_mix(in[0], in[1], in[2]));
      },
      {s, a, b}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("forward evaluation is bitwise deterministic") {
  hg::Rng rng(43);
  auto x = randn({6, 6}, rng);
  auto w = randn({6, 6}, rng);
  auto run = [&]() {
    return hg::rowwise_softmax(hg::matmul(hg::relu(x), w));
  };
  auto a = run();
  auto b = run();
  CHECK(std::memcmp(a.data->data(), b.data->data(),
                    a.numel() * sizeof(double)) == 0);
}

TEST_CASE("public op outputs stay finite on finite inputs") {
  hg::Rng rng(47);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = randn({4, 4}, rng);
    auto w = randn({4, 4}, rng);
    auto g = Tensor<double>::full({4}, 1.0);
    auto b = Tensor<double>::zeros({4});
    CHECK(hg::matmul(x, w).all_finite());
    CHECK(hg::rowwise_softmax(x).all_finite());
    CHECK(hg::layer_norm(x, g, b, 1e-6).all_finite());
    CHECK(hg::signed_normalize_rows(x, 1e-6).all_finite());
    CHECK(hg::segment_masked_softmax(x, {0, 0, 1, 1}).all_finite());
  }
}
