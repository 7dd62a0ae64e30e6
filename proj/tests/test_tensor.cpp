#include <doctest.h>

#include <cmath>

#include "capkit/errors.hpp"
#include "capkit/gradcheck.hpp"
#include "capkit/rng.hpp"
#include "capkit/tensor.hpp"

using namespace capkit;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                             double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * (rng.uniform_real() * 2.0 - 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul basics") {
  const auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  const auto x = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(eye, x).values() == x.values());

  const auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  const auto ones = Tensor<double>::from({2, 1}, {1, 1});
  CHECK(matmul(a, ones).values() == std::vector<double>{3, 7});

  CHECK_THROWS_AS(matmul(a, Tensor<double>::from({3, 1}, {1, 1, 1})), ValidationError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng, true);
  auto b = random_tensor({4, 2}, rng, true);
  const auto report = grad_check_params<double>(
      [&]() { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("softmax values and identities") {
  const auto constant = Tensor<double>::from({1, 4}, {2, 2, 2, 2});
  for (const double v : softmax(constant).values()) CHECK(v == doctest::Approx(0.25));

  const auto x = Tensor<double>::from({1, 2}, {0.0, std::log(3.0)});
  const auto s = softmax(x);
  CHECK(s.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(2);
  const auto r = random_tensor({3, 5}, rng);
  const auto sm = softmax(r);
  const auto lsm = log_softmax(r);
  for (std::size_t i = 0; i < sm.size(); ++i) {
    CHECK(std::exp(lsm.values()[i]) == doctest::Approx(sm.values()[i]).epsilon(1e-12));
  }
  // additive shift invariance
  auto shifted = r.detached();
  for (auto& v : shifted.values()) v += 123.456;
  const auto sm2 = softmax(shifted);
  for (std::size_t i = 0; i < sm.size(); ++i) {
    CHECK(sm2.values()[i] == doctest::Approx(sm.values()[i]).epsilon(1e-12));
  }
  // rows sum to one
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 5; ++j) row += sm.values()[i * 5 + j];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax and log_softmax gradients") {
  Rng rng(3);
  auto x = random_tensor({2, 6}, rng, true);
  auto w = random_tensor({6, 3}, rng);
  const auto r1 = grad_check_params<double>(
      [&]() { return sum(hadamard(softmax(x), softmax(x))); }, {{"x", x}});
  CHECK(r1.max_rel_err < 1e-6);
  const auto r2 =
      grad_check_params<double>([&]() { return sum(log_softmax(matmul(x, w))); }, {{"x", x}});
  CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("layer_norm normalizes rows") {
  const auto gain = Tensor<double>::from({4}, {1, 1, 1, 1});
  const auto bias = Tensor<double>::from({4}, {0, 0, 0, 0});
  const auto constant = Tensor<double>::from({1, 4}, {7, 7, 7, 7});
  for (const double v : layer_norm(constant, gain, bias).values()) {
    CHECK(v == doctest::Approx(0.0).epsilon(1e-9));
  }

  Rng rng(4);
  const auto x = random_tensor({3, 8}, rng);
  const auto y = layer_norm(x, Tensor<double>::from({8}, std::vector<double>(8, 1.0)),
                            Tensor<double>::zeros({8}));
  for (std::size_t i = 0; i < 3; ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += y.values()[i * 8 + j];
    mean /= 8;
    for (std::size_t j = 0; j < 8; ++j) {
      var += (y.values()[i * 8 + j] - mean) * (y.values()[i * 8 + j] - mean);
    }
    var /= 8;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts it slightly
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(5);
  auto x = random_tensor({2, 5}, rng, true);
  auto gain = random_tensor({5}, rng, true);
  auto bias = random_tensor({5}, rng, true);
  const auto report = grad_check_params<double>(
      [&]() { return sum(hadamard(layer_norm(x, gain, bias), layer_norm(x, gain, bias))); },
      {{"x", x}, {"gain", gain}, {"bias", bias}});
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("cross_entropy_loss values") {
  // logits forcing probability ~1 on the target
  const auto forced = Tensor<double>::from({1, 3}, {100.0, 0.0, 0.0});
  CHECK(cross_entropy_loss(forced, {0}, 99).item() == doctest::Approx(0.0).epsilon(1e-9));

  const std::size_t v = 7;
  const auto uniform = Tensor<double>::zeros({2, v});
  CHECK(cross_entropy_loss(uniform, {1, 3}, 0).item() ==
        doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));

  // matches the per-position -sum(y log yhat) definition on a random case
  Rng rng(6);
  const auto logits = random_tensor({3, 5}, rng);
  const std::vector<int> targets = {2, 0, 4};
  double expected = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    double mx = logits.values()[t * 5];
    for (std::size_t j = 0; j < 5; ++j) mx = std::max(mx, logits.values()[t * 5 + j]);
    double denom = 0;
    for (std::size_t j = 0; j < 5; ++j) denom += std::exp(logits.values()[t * 5 + j] - mx);
    for (std::size_t j = 0; j < 5; ++j) {
      const double y = j == static_cast<std::size_t>(targets[t]) ? 1.0 : 0.0;
      const double log_p = logits.values()[t * 5 + j] - mx - std::log(denom);
      expected -= y * log_p;
    }
  }
  expected /= 3.0;
  CHECK(cross_entropy_loss(logits, targets, 0).item() ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross_entropy_loss pad handling") {
  Rng rng(7);
  const auto logits = random_tensor({4, 5}, rng);
  // pad rows are excluded from numerator and denominator
  const auto without_pads =
      cross_entropy_loss(slice_rows(logits, 0, 2), std::vector<int>{2, 3}, 0);
  const auto with_pads = cross_entropy_loss(logits, std::vector<int>{2, 3, 0, 0}, 0);
  CHECK(with_pads.item() == doctest::Approx(without_pads.item()).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy_loss(logits, std::vector<int>{0, 0, 0, 0}, 0),
                  ValidationError);
}

TEST_CASE("cross_entropy_loss gradient matches finite differences") {
  Rng rng(8);
  auto logits = random_tensor({4, 6}, rng, true);
  const std::vector<int> targets = {1, 0, 5, 0};  // includes pads
  const auto report = grad_check_params<double>(
      [&]() { return cross_entropy_loss(logits, targets, 0); }, {{"logits", logits}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("backward fills leaf gradients and clears the tape") {
  auto x = Tensor<double>::from({3}, {1, 2, 3}, true);
  auto loss = sum(x);
  loss.backward();
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  x.zero_grad();
  auto loss2 = sum(hadamard(x, x));  // x.x -> grad 2x
  loss2.backward();
  CHECK(x.grad() == std::vector<double>{2, 4, 6});

  auto y = Tensor<double>::from({2, 2}, {1, 2, 3, 4}, true);
  CHECK_THROWS_AS(scale(y, 2.0).backward(), ValidationError);
}

TEST_CASE("gradients accumulate across reuse of a leaf") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto loss = add(sum(x), sum(hadamard(x, x)));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(1.0 + 2.0));
  CHECK(x.grad()[1] == doctest::Approx(1.0 + 4.0));
}

TEST_CASE("no-grad mode builds no graph") {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  NoGradGuard ng;
  auto y = sum(hadamard(x, x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check flags a broken backward rule") {
  // exact gradient for a linear map
  auto x = Tensor<double>::from({4}, {0.5, -1.0, 2.0, 0.25}, true);
  const auto linear =
      grad_check_params<double>([&]() { return sum(scale(x, 3.0)); }, {{"x", x}});
  CHECK(linear.max_rel_err < 1e-9);

  // an op whose backward rule deliberately lies (claims factor 3, forward is 2)
  auto broken_double = [](const Tensor<double>& in) {
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * in.values()[i];
    return Tensor<double>::make_op(
        in.shape(), std::move(out), {in},
        [in](const std::vector<double>& g, const std::vector<double>&) {
          auto& gx = in.grad();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3.0 * g[i];
        });
  };
  x.zero_grad();
  const auto broken =
      grad_check_params<double>([&]() { return sum(broken_double(x)); }, {{"x", x}});
  CHECK(broken.max_rel_err > 0.1);
}

TEST_CASE("grad_check on softmax-of-matmul composite") {
  Rng rng(9);
  auto x = random_tensor({3, 4}, rng, true);
  auto w = random_tensor({4, 4}, rng);
  const auto report = grad_check_params<double>(
      [&]() { return sum(hadamard(softmax(matmul(x, w)), softmax(matmul(x, w)))); }, {{"x", x}},
      1e-5);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(10);
  auto x = random_tensor({2, 3}, rng, true);
  auto b = random_tensor({3}, rng, true);
  const auto r = grad_check_params<double>(
      [&]() {
        return sum(tanh(add_bias(relu(x), b)));
      },
      {{"x", x}, {"b", b}});
  CHECK(r.max_rel_err < 1e-5);
  auto y = random_tensor({2, 3}, rng, true);
  const auto r2 = grad_check_params<double>(
      [&]() { return sum(sigmoid(hadamard(x, y))); }, {{"x", x}, {"y", y}});
  CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("slice and concat gradients") {
  Rng rng(11);
  auto x = random_tensor({4, 6}, rng, true);
  const auto r = grad_check_params<double>(
      [&]() {
        auto top = slice_rows(x, 0, 2);
        auto left = slice_cols(x, 0, 3);
        auto rebuilt = concat_cols<double>({slice_cols(x, 3, 6), slice_cols(x, 0, 3)});
        return add(sum(concat_rows<double>({top, top})), add(sum(left), sum(rebuilt)));
      },
      {{"x", x}});
  CHECK(r.max_rel_err < 1e-8);
}

TEST_CASE("embedding lookup scatters gradients to the right rows") {
  auto table = Tensor<double>::from({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  auto out = embedding_lookup(table, {2, 2, 0});
  CHECK(out.values() == std::vector<double>{4, 5, 4, 5, 0, 1});
  sum(out).backward();
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2, 0, 0});
  CHECK_THROWS_AS(embedding_lookup(table, {4}), ValidationError);
}

TEST_CASE("forward and backward are bit-deterministic") {
  auto run = [] {
    Rng rng(77);
    auto x = random_tensor({4, 4}, rng, true);
    auto w = random_tensor({4, 4}, rng, true);
    auto loss = sum(softmax(matmul(tanh(x), w)));
    loss.backward();
    std::vector<double> out = x.grad();
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("dropout masks with inverted scaling and exact backward") {
  Rng rng(12);
  auto x = Tensor<double>::from({1, 1000}, std::vector<double>(1000, 1.0), true);
  auto y = dropout(x, 0.25, rng);
  std::size_t kept = 0;
  for (const double v : y.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 650);
  CHECK(kept < 850);
  sum(y).backward();
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x.grad()[i] == y.values()[i]);  // mask value exactly
  }
}
