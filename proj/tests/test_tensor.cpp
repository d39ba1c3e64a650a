#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "proprio/checkpoint.hpp"
#include "proprio/optim.hpp"
#include "proprio/rng.hpp"
#include "proprio/tensor.hpp"

using namespace proprio;
using namespace proprio::tensor;

namespace {

// Central finite-difference check: rebuilds the graph per probe and
// compares the analytic gradient of a scalar loss against
// (f(x+h) - f(x-h)) / 2h entry by entry.
double max_grad_error(const std::function<Var(Tape&)>& forward, const std::vector<Var>& params,
                      double h = 1e-4) {
  Tape tape;
  Var loss = forward(tape);
  for (const auto& p : params) p->zero_grad();
  tape.backward(loss);
  std::vector<Tensor> analytic;
  for (const auto& p : params) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t k = 0; k < params[pi]->value.numel(); ++k) {
      const double keep = params[pi]->value[k];
      params[pi]->value[k] = keep + h;
      Tape tp;
      const double up = forward(tp)->value[0];
      params[pi]->value[k] = keep - h;
      Tape tm;
      const double down = forward(tm)->value[0];
      params[pi]->value[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][k];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double stddev = 1.0) {
  auto engine = make_engine(seed);
  return Tensor::randn(std::move(shape), engine, stddev);
}

}  // namespace

TEST_CASE("matmul and bias gradients pass finite differences") {
  auto a = make_param(random_tensor({4, 5}, 1));
  auto w = make_param(random_tensor({5, 3}, 2));
  auto b = make_param(random_tensor({3}, 3));
  const Tensor target = random_tensor({4, 3}, 4);
  auto forward = [&](Tape& t) { return sum_sq_diff(t, add_bias(t, matmul(t, a, w), b), target); };
  REQUIRE(max_grad_error(forward, {a, w, b}) < 1e-4);
}

TEST_CASE("relu gradient away from the kink") {
  auto x = make_param(random_tensor({6, 4}, 5));
  for (auto& v : x->value.data)
    if (std::abs(v) < 0.05) v = 0.2;  // keep probes off the nondifferentiable point
  const Tensor target = random_tensor({6, 4}, 6);
  auto forward = [&](Tape& t) { return sum_sq_diff(t, relu(t, x), target); };
  REQUIRE(max_grad_error(forward, {x}) < 1e-4);
}

TEST_CASE("pointwise mlp over a point set passes finite differences") {
  auto engine = make_engine(7);
  PointwiseMlp mlp({3, 8, 6}, engine);
  auto cloud = make_param(random_tensor({10, 3}, 8));
  const Tensor target = random_tensor({10, 6}, 9);
  auto forward = [&](Tape& t) { return sum_sq_diff(t, mlp.forward(t, cloud), target); };
  std::vector<Var> params{cloud};
  mlp.collect(params);
  REQUIRE(max_grad_error(forward, params) < 1e-4);
}

TEST_CASE("global max pool: gradient, permutation invariance, tie break") {
  auto x = make_param(random_tensor({7, 5}, 10));
  const Tensor target = random_tensor({1, 5}, 11);
  auto forward = [&](Tape& t) { return sum_sq_diff(t, global_max_pool(t, x), target); };
  REQUIRE(max_grad_error(forward, {x}) < 1e-4);

  // permutation invariance of the pooled features
  Tape t1, t2;
  auto pooled = global_max_pool(t1, x)->value;
  Tensor shuffled({7, 5});
  const std::size_t perm[7] = {3, 0, 6, 1, 5, 2, 4};
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 5; ++c) shuffled.data[r * 5 + c] = x->value.data[perm[r] * 5 + c];
  auto pooled2 = global_max_pool(t2, make_const(shuffled))->value;
  for (std::size_t c = 0; c < 5; ++c) REQUIRE(pooled[c] == pooled2[c]);

  // ties route the subgradient to the lowest row index
  Tape t3;
  Tensor tied({3, 1});
  tied.data = {2.0, 2.0, 1.0};
  auto xt = make_param(tied);
  auto loss = sum(t3, global_max_pool(t3, xt));
  t3.backward(loss);
  REQUIRE(xt->grad[0] == 1.0);
  REQUIRE(xt->grad[1] == 0.0);
  REQUIRE(xt->grad[2] == 0.0);
}

TEST_CASE("transposed conv gradients pass finite differences") {
  auto x = make_param(random_tensor({2, 3, 3}, 12));
  auto k = make_param(random_tensor({2, 3, 3, 3}, 13, 0.5));
  auto b = make_param(random_tensor({3}, 14));
  const Tensor target = random_tensor({3, 6, 6}, 15);
  auto forward = [&](Tape& t) {
    return sum_sq_diff(t, conv_transpose2d(t, x, k, b, 2, 1, 1), target);
  };
  REQUIRE(max_grad_error(forward, {x, k, b}) < 1e-4);
}

TEST_CASE("identity-kernel transposed conv doubles spatial dims") {
  // kernel = delta at the center: output scatters the input to even
  // positions of a doubled grid, zeros elsewhere (hand-computed 3x3 case)
  Tensor in({1, 3, 3});
  for (int i = 0; i < 9; ++i) in.data[i] = i + 1;
  Tensor kernel({1, 1, 3, 3});
  kernel.data[4] = 1.0;  // center tap
  Tape tape;
  auto out = conv_transpose2d(tape, make_const(in), make_const(kernel),
                              make_const(Tensor({1})), 2, 1, 1);
  REQUIRE(out->value.shape == std::vector<std::size_t>{1, 6, 6});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      double expect = (y % 2 == 0 && x % 2 == 0) ? in.data[(y / 2) * 3 + x / 2] : 0.0;
      REQUIRE(out->value.data[y * 6 + x] == expect);
    }
}

TEST_CASE("reshape and transpose gradients") {
  auto x = make_param(random_tensor({4, 6}, 16));
  const Tensor target = random_tensor({3, 8}, 17);
  auto forward = [&](Tape& t) {
    return sum_sq_diff(t, reshape(t, transpose2d(t, x), {3, 8}), target);
  };
  REQUIRE(max_grad_error(forward, {x}) < 1e-4);
}

TEST_CASE("two linears compose like a single linear") {
  auto engine = make_engine(18);
  Linear l1(4, 5, engine), l2(5, 3, engine);
  // composed weight/bias: W = W1 W2, b = b1 W2 + b2
  Tensor wc({4, 3}), bc({3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 5; ++k)
        wc.data[i * 3 + j] += l1.weight->value.at2(i, k) * l2.weight->value.at2(k, j);
  for (std::size_t j = 0; j < 3; ++j) {
    bc[j] = l2.bias->value[j];
    for (std::size_t k = 0; k < 5; ++k) bc[j] += l1.bias->value[k] * l2.weight->value.at2(k, j);
  }
  auto composed_w = make_param(wc);
  auto composed_b = make_param(bc);

  auto x1 = make_param(random_tensor({6, 4}, 19));
  auto x2 = make_param(x1->value);
  const Tensor target = random_tensor({6, 3}, 20);

  Tape ta, tb;
  auto la = sum_sq_diff(ta, l2.forward(ta, l1.forward(ta, x1)), target);
  auto lb = sum_sq_diff(tb, add_bias(tb, matmul(tb, x2, composed_w), composed_b), target);
  x1->zero_grad();
  x2->zero_grad();
  ta.backward(la);
  tb.backward(lb);
  REQUIRE_THAT(la->value[0], Catch::Matchers::WithinRel(lb->value[0], 1e-9));
  for (std::size_t i = 0; i < x1->value.numel(); ++i)
    REQUIRE_THAT(x1->grad[i], Catch::Matchers::WithinRel(x2->grad[i], 1e-8));
}

TEST_CASE("zero-weight linear gives zero output and zero input gradient") {
  auto engine = make_engine(21);
  Linear l(4, 3, engine);
  l.weight->value.fill(0.0);
  l.bias->value.fill(0.0);
  auto x = make_param(random_tensor({5, 4}, 22));
  Tape tape;
  auto out = l.forward(tape, x);
  for (double v : out->value.data) REQUIRE(v == 0.0);
  auto loss = sum(tape, out);
  x->zero_grad();
  tape.backward(loss);
  for (double g : x->grad.data) REQUIRE(g == 0.0);
}

TEST_CASE("constant loss leaves parameter gradients at zero") {
  auto engine = make_engine(23);
  Linear l(3, 3, engine);
  std::vector<Var> params;
  l.collect(params);
  zero_grads(params);
  Tape tape;
  auto loss = sum(tape, make_const(Tensor({1}, 5.0)));
  tape.backward(loss);
  for (const auto& p : params)
    for (double g : p->grad.data) REQUIRE(g == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape tape;
  auto x = make_param(random_tensor({2, 2}, 24));
  auto y = relu(tape, x);
  REQUIRE_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("adam matches an independent scalar simulation") {
  auto w = make_param(Tensor({1}, 1.0));
  Adam opt({w});
  // independent oracle
  double ow = 1.0, om = 0.0, ov = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 100; ++t) {
    Tape tape;
    auto loss = sum_sq_diff(tape, w, Tensor({1}, 0.0));  // f(w) = w^2
    w->zero_grad();
    tape.backward(loss);
    opt.step(lr);

    double g = 2.0 * ow;
    om = b1 * om + (1 - b1) * g;
    ov = b2 * ov + (1 - b2) * g * g;
    ow -= lr * (om / (1 - std::pow(b1, t))) / (std::sqrt(ov / (1 - std::pow(b2, t))) + eps);
    REQUIRE_THAT(w->value[0], Catch::Matchers::WithinAbs(ow, 1e-12));
  }
  REQUIRE(std::abs(w->value[0]) < 1e-2);
}

TEST_CASE("sgd momentum matches an independent scalar simulation") {
  auto w = make_param(Tensor({1}, 1.0));
  SgdMomentum opt({w}, 0.9);
  double ow = 1.0, ovel = 0.0;
  const double lr = 0.05;
  for (int t = 0; t < 40; ++t) {
    Tape tape;
    auto loss = sum_sq_diff(tape, w, Tensor({1}, 0.0));
    w->zero_grad();
    tape.backward(loss);
    opt.step(lr);

    double g = 2.0 * ow;
    ovel = 0.9 * ovel + g;
    ow -= lr * ovel;
    REQUIRE_THAT(w->value[0], Catch::Matchers::WithinAbs(ow, 1e-12));
  }
}

TEST_CASE("plateau scheduler holds and then cuts the learning rate") {
  PlateauScheduler sched{0.2, 3, 1e-8};
  double lr = 1e-3;
  for (double loss : {1.0, 0.9, 0.8, 0.7}) lr = sched.update(loss, lr);
  REQUIRE(lr == 1e-3);  // strictly decreasing: untouched

  lr = sched.update(0.7, lr);  // no improvement x1
  lr = sched.update(0.7, lr);  // x2
  REQUIRE(lr == 1e-3);
  lr = sched.update(0.7, lr);  // x3 -> cut
  REQUIRE_THAT(lr, Catch::Matchers::WithinRel(2e-4, 1e-12));
}

TEST_CASE("cosine schedule endpoints") {
  REQUIRE_THAT(cosine_lr(1e-3, 0, 100), Catch::Matchers::WithinRel(1e-3, 1e-12));
  REQUIRE_THAT(cosine_lr(1e-3, 50, 100), Catch::Matchers::WithinRel(5e-4, 1e-12));
  REQUIRE(cosine_lr(1e-3, 100, 100) < 1e-18);
  REQUIRE(cosine_lr(1e-3, 150, 100) < 1e-18);  // clamped past T_max
}

TEST_CASE("early stopper waits for patience epochs") {
  EarlyStopper stop(3);
  REQUIRE_FALSE(stop.update(1.0, 0));
  REQUIRE(stop.improved());
  REQUIRE_FALSE(stop.update(0.5, 1));
  REQUIRE_FALSE(stop.update(0.6, 2));
  REQUIRE_FALSE(stop.update(0.6, 3));
  REQUIRE(stop.update(0.6, 4));  // third bad epoch in a row
  REQUIRE(stop.best_epoch == 1);
  REQUIRE(stop.best == 0.5);
}

TEST_CASE("checkpoints round trip and validate") {
  auto engine = make_engine(25);
  Linear l(6, 4, engine);
  auto params = [&] {
    std::vector<Var> out;
    l.collect(out);
    return out;
  }();
  auto bytes = serialize_params(1234, params);

  Linear l2(6, 4, engine);  // different random init
  std::vector<Var> params2;
  l2.collect(params2);
  deserialize_params(bytes, 1234, params2);
  for (std::size_t i = 0; i < params.size(); ++i)
    REQUIRE(params[i]->value.data == params2[i]->value.data);

  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x40;
  REQUIRE_THROWS_AS(deserialize_params(corrupt, 1234, params2), CheckpointError);
  REQUIRE_THROWS_AS(deserialize_params(bytes, 999, params2), CheckpointError);

  Linear wrong(6, 5, engine);
  std::vector<Var> wrong_params;
  wrong.collect(wrong_params);
  REQUIRE_THROWS_AS(deserialize_params(bytes, 1234, wrong_params), CheckpointError);
}

TEST_CASE("tiny training loop is bit-reproducible") {
  auto run = [] {
    auto engine = make_engine(77);
    Linear l(3, 2, engine);
    std::vector<Var> params;
    l.collect(params);
    Adam opt(params);
    auto x = make_const(random_tensor({8, 3}, 31));
    const Tensor target = random_tensor({8, 2}, 32);
    for (int step = 0; step < 25; ++step) {
      Tape tape;
      auto loss = sum_sq_diff(tape, l.forward(tape, x), target);
      zero_grads(params);
      tape.backward(loss);
      opt.step(1e-2);
    }
    return serialize_params(1, params);
  };
  REQUIRE(run() == run());
}
