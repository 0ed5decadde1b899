#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vit3d/autodiff.hpp"
#include "vit3d/grad_check.hpp"

using namespace vit3d;

namespace {

template <typename S>
NamedTensors<S> named(std::initializer_list<std::pair<std::string, Tensor<S>>> items) {
  NamedTensors<S> out;
  for (const auto& [n, t] : items) out.insert(n, t);
  return out;
}

// Three-layer tanh-free MLP: GELU hidden layers, LayerNorm before the output.
template <typename S>
Var<S> mlp3(Tape<S>&, const std::vector<Var<S>>& p, const Var<S>& x, std::span<const int> y) {
  auto h1 = gelu(add(matmul(x, p[0]), p[1]));
  auto h2 = gelu(add(matmul(h1, p[2]), p[3]));
  auto h3 = layer_norm(h2, p[4], p[5]);
  auto logits = add(matmul(h3, p[6]), p[7]);
  return cross_entropy_from_logits(logits, y);
}

template <typename S>
GradCheckReport check_mlp(double h, double tol) {
  CounterRng rng(21);
  auto params = named<S>({{"w1", testing::random_tensor<S>({5, 7}, rng, 0.5)},
                          {"b1", testing::random_tensor<S>({7}, rng, 0.1)},
                          {"w2", testing::random_tensor<S>({7, 6}, rng, 0.5)},
                          {"b2", testing::random_tensor<S>({6}, rng, 0.1)},
                          {"g", testing::random_tensor<S>({6}, rng, 0.3)},
                          {"beta", testing::random_tensor<S>({6}, rng, 0.1)},
                          {"w3", testing::random_tensor<S>({6, 3}, rng, 0.5)},
                          {"b3", testing::random_tensor<S>({3}, rng, 0.1)}});
  for (Index i = 0; i < 6; ++i) params.at("g")[i] += static_cast<S>(1);
  const auto x = testing::random_tensor<S>({4, 5}, rng);
  const std::vector<int> y{0, 2, 1, 2};
  LossFn<S> f = [&](Tape<S>& t, const std::vector<Var<S>>& p) { return mlp3(t, p, t.constant(x), y); };
  return grad_check<S>(f, params, h, tol);
}

}  // namespace

TEST_SUITE("tensor-autodiff") {
  TEST_CASE("gradient of sum is all ones") {
    Tape<float> tape;
    CounterRng rng(1);
    auto x = tape.parameter("x", testing::random_tensor<float>({3, 4}, rng));
    const auto g = tape.backward(sum(x));
    CHECK((g.at("x").array() == 1.0f).all());
  }

  TEST_CASE("gradient of sum(x*x)/2 is x") {
    Tape<double> tape;
    CounterRng rng(2);
    const auto xv = testing::random_tensor<double>({2, 3, 2}, rng);
    auto x = tape.parameter("x", xv);
    const auto g = tape.backward(scale(sum(mul(x, x)), 0.5));
    CHECK((g.at("x").array() - xv.array()).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("unused parameters get zero gradients; non-scalar loss is rejected") {
    Tape<float> tape;
    auto a = tape.parameter("a", Tensor<float>::full({2}, 1.0f));
    auto b = tape.parameter("b", Tensor<float>::full({3}, 1.0f));
    const auto g = tape.backward(sum(a));
    CHECK(g.size() == 2);
    CHECK((g.at("b").array() == 0.0f).all());
    CHECK_THROWS_AS(tape.backward(b), ContractError);
  }

  TEST_CASE("backward visits each op once in reverse order") {
    Tape<float> tape;
    auto x = tape.parameter("x", Tensor<float>::full({2}, 2.0f));
    auto y = mul(x, x);
    auto z = add(y, x);
    auto loss = sum(z);
    tape.backward(loss);
    const auto& order = tape.last_backward_order();
    CHECK(order == std::vector<std::size_t>{loss.id(), z.id(), y.id()});
  }

  TEST_CASE("MLP gradients match finite differences (32-bit)") {
    const auto r = check_mlp<float>(1e-3, 1e-2);
    CHECK(r.entries.size() == 8);
    CHECK(r.max_rel_error < 1e-2);
    CHECK(r.passed);
  }

  TEST_CASE("MLP gradients match finite differences (64-bit)") {
    const auto r = check_mlp<double>(1e-5, 1e-4);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("softmax + cross-entropy on 3 classes passes grad_check") {
    CounterRng rng(4);
    auto params = named<float>({{"logits", testing::random_tensor<float>({5, 3}, rng, 2.0)}});
    const std::vector<int> y{0, 1, 2, 1, 0};
    LossFn<float> f = [&](Tape<float>&, const std::vector<Var<float>>& p) {
      return cross_entropy_from_logits(p[0], y);
    };
    CHECK(grad_check<float>(f, params, 1e-3, 1e-2).passed);
    const auto w = testing::random_tensor<float>({5, 3}, rng);
    LossFn<float> g = [&](Tape<float>& t, const std::vector<Var<float>>& p) {
      return sum(mul(softmax(p[0]), t.constant(w)));
    };
    CHECK(grad_check<float>(g, params, 1e-3, 1e-2).passed);
  }

  TEST_CASE("layer_norm with gain and bias passes grad_check") {
    CounterRng rng(5);
    auto params = named<float>({{"x", testing::random_tensor<float>({3, 2, 6}, rng)},
                                {"g", testing::random_tensor<float>({6}, rng)},
                                {"b", testing::random_tensor<float>({6}, rng)}});
    const auto w = testing::random_tensor<float>({3, 2, 6}, rng);
    LossFn<float> f = [&](Tape<float>& t, const std::vector<Var<float>>& p) {
      return sum(mul(layer_norm(p[0], p[1], p[2]), t.constant(w)));
    };
    CHECK(grad_check<float>(f, params, 1e-3, 1e-2).passed);
  }

  TEST_CASE("per-op grad checks: matmul, gelu, permute, concat, slice, mean") {
    CounterRng rng(6);
    auto params = named<double>({{"a", testing::random_tensor<double>({2, 3, 4}, rng)},
                                 {"b", testing::random_tensor<double>({4, 5}, rng)},
                                 {"c", testing::random_tensor<double>({2, 4, 5}, rng)},
                                 {"d", testing::random_tensor<double>({2, 1, 5}, rng)}});
    const auto w = testing::random_tensor<double>({2, 4, 5}, rng);
    LossFn<double> f = [&](Tape<double>& t, const std::vector<Var<double>>& p) {
      auto ab = gelu(matmul(p[0], p[1]));                               // [2,3,5]
      auto batched = slice(matmul(p[0], p[2]), 1, 1, 2);                // [2,2,5]
      auto cat = concat<double>({ab, p[3]}, 1);                         // [2,4,5]
      auto perm = permute(transpose(cat), {0, 2, 1});                   // back to [2,4,5]
      auto bsum = sum(mul(reshape(batched, {4, 5}), reshape(batched, {4, 5})));
      auto tail = mean(sub(perm, t.constant(w)));
      return add(add(sum(mul(perm, t.constant(w))), bsum), tail);
    };
    const auto r = grad_check<double>(f, params, 1e-5, 1e-6);
    CHECK(r.max_rel_error < 1e-6);
  }

  TEST_CASE("identity function: zero gradients both ways") {
    auto params = named<float>({{"p", Tensor<float>::full({3}, 0.5f)}});
    LossFn<float> f = [&](Tape<float>& t, const std::vector<Var<float>>&) { return t.constant(Tensor<float>::scalar(1)); };
    const auto r = grad_check<float>(f, params, 1e-3, 1e-2);
    CHECK(r.passed);
    CHECK(r.max_rel_error == 0.0);
  }

  TEST_CASE("grad_check detects a non-deterministic loss") {
    auto params = named<float>({{"p", Tensor<float>::full({3}, 0.5f)}});
    DropoutStream stream{1, 0};
    LossFn<float> f = [&](Tape<float>&, const std::vector<Var<float>>& p) {
      return sum(dropout(p[0], 0.5, true, &stream));
    };
    CHECK_THROWS_AS(grad_check<float>(f, params, 1e-3, 1e-2), DeterminismError);
  }

  TEST_CASE("softmax sums to one and is shift invariant") {
    CounterRng rng(7);
    Tape<float> tape;
    const auto x = testing::random_tensor<float>({4, 6}, rng, 3.0);
    auto shifted = x;
    shifted.array() += 5.0f;
    const auto a = softmax(tape.constant(x)).value().as_matrix(4, 6);
    const auto b = softmax(tape.constant(shifted)).value().as_matrix(4, 6);
    for (Index r = 0; r < 4; ++r) CHECK(std::abs(a.row(r).sum() - 1.0f) < 1e-5f);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5f);
    // Large logits must not overflow.
    auto big = x;
    big.array() *= 1000.0f;
    CHECK(softmax(tape.constant(big)).value().array().isFinite().all());
  }

  TEST_CASE("layer_norm output has zero mean and unit variance before gain/bias") {
    CounterRng rng(8);
    Tape<float> tape;
    auto y = layer_norm(tape.constant(testing::random_tensor<float>({5, 16}, rng, 4.0)),
                        tape.constant(Tensor<float>::full({16}, 1.0f)), tape.constant(Tensor<float>::zeros({16})));
    const auto m = y.value().as_matrix(5, 16);
    for (Index r = 0; r < 5; ++r) {
      const double mean = m.row(r).cast<double>().mean();
      const double var = (m.row(r).cast<double>().array() - mean).square().mean();
      CHECK(std::abs(mean) < 1e-4);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }

  TEST_CASE("dropout: identity in eval, unbiased in train") {
    Tape<float> tape;
    const auto x = Tensor<float>::full({100}, 2.0f);
    auto v = tape.constant(x);
    DropoutStream stream{99, 0};
    CHECK(dropout(v, 0.3, false, &stream).value().bit_equal(x));
    double total = 0.0;
    const int masks = 10000;
    for (int i = 0; i < masks; ++i) total += dropout(v, 0.3, true, &stream).value().array().sum();
    const double mean = total / (masks * 100.0);
    CHECK(std::abs(mean - 2.0) / 2.0 < 0.02);
  }

  TEST_CASE("cross-entropy equals -log softmax[label] on hand cases") {
    Tape<double> tape;
    Tensor<double> logits({2, 3});
    const double vals[] = {1.0, 2.0, 3.0, -1.0, 0.0, 4.0};
    for (int i = 0; i < 6; ++i) logits[i] = vals[i];
    const std::vector<int> y{0, 2};
    const double ce = cross_entropy_from_logits(tape.constant(logits), y).value()[0];
    const double l0 = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    const double l1 = -std::log(std::exp(4.0) / (std::exp(-1.0) + std::exp(0.0) + std::exp(4.0)));
    CHECK(std::abs(ce - (l0 + l1) / 2.0) < 1e-5);
  }

  TEST_CASE("broadcast rules are enforced") {
    Tape<float> tape;
    auto a = tape.constant(Tensor<float>::zeros({2, 3}));
    auto b = tape.constant(Tensor<float>::zeros({2}));
    CHECK_THROWS_AS(add(a, b), ContractError);
    CHECK_THROWS_AS(matmul(a, a), ContractError);
  }
}
