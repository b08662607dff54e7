#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <vector>

#include "formlink/autodiff.hpp"
#include "formlink/conv_ops.hpp"
#include "formlink/grad_check.hpp"
#include "formlink/rng.hpp"

using namespace formlink;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

using BuildFn =
    std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>;

// Builds the graph from the current tensor contents and returns the scalar.
double eval_build(const BuildFn& build, std::vector<Tensor<double>*>& tensors) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  vars.reserve(tensors.size());
  for (auto* t : tensors) vars.push_back(ops::leaf_param(g, *t));
  return build(g, vars).value().data[0];
}

// Runs grad_check for every input tensor of a scalar-valued graph.
GradCheckResult check_all(const BuildFn& build, std::vector<Tensor<double>*> tensors,
                          double eps = 1e-5) {
  Graph<double> g;
  std::vector<Var<double>> vars;
  for (auto* t : tensors) vars.push_back(ops::leaf_param(g, *t));
  Var<double> loss = build(g, vars);
  g.backward(loss.id);

  GradCheckResult worst;
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor<double> analytic = vars[i].grad();
    auto r = grad_check(*tensors[i], [&] { return eval_build(build, tensors); }, analytic, eps);
    worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
    worst.n_checked += r.n_checked;
    worst.n_excluded += r.n_excluded;
  }
  return worst;
}

// Naive O(everything) convolution used as the independent oracle.
Tensor<double> conv_oracle(const Tensor<double>& in, const Tensor<double>& w, int stride,
                           int pad) {
  int O = w.dim(0), C = w.dim(1), k = w.dim(2);
  int H = in.dim(1), W = in.dim(2);
  int Ho = (H + 2 * pad - k) / stride + 1;
  int Wo = (W + 2 * pad - k) / stride + 1;
  Tensor<double> out({O, Ho, Wo});
  for (int o = 0; o < O; ++o)
    for (int y = 0; y < Ho; ++y)
      for (int x = 0; x < Wo; ++x) {
        double acc = 0;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int iy = y * stride - pad + ky, ix = x * stride - pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += w.data[((o * C + c) * k + ky) * k + kx] * in.at(c, iy, ix);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(7);
  Graph<double> g;
  auto x = ops::input(g, random_tensor({1, 3, 3}, rng));
  auto w = ops::input(g, Tensor<double>({1, 1, 1, 1}, {1.0}));
  auto y = ops::conv2d(x, w);
  CHECK(y.value().shape == std::vector<int>{1, 3, 3});
  for (size_t i = 0; i < 9; ++i) CHECK(y.value().data[i] == doctest::Approx(x.value().data[i]));
}

TEST_CASE("conv2d all-ones 3x3 kernel counts covered cells") {
  Graph<double> g;
  auto x = ops::input(g, Tensor<double>::full({1, 3, 3}, 1.0));
  auto w = ops::input(g, Tensor<double>::full({1, 1, 3, 3}, 1.0));
  auto y = ops::conv2d(x, w, 1, 1);
  CHECK(y.value().at(0, 1, 1) == doctest::Approx(9.0));
  CHECK(y.value().at(0, 0, 0) == doctest::Approx(4.0));
  CHECK(y.value().at(0, 0, 1) == doctest::Approx(6.0));
}

TEST_CASE("conv2d matches the naive oracle on random shapes") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    int C = rng.uniform_int(1, 3), O = rng.uniform_int(1, 3);
    int H = rng.uniform_int(3, 8), W = rng.uniform_int(3, 8);
    int k = rng.uniform_int(0, 1) ? 1 : 3;
    int stride = rng.uniform_int(1, 2);
    int pad = (k - 1) / 2;
    Tensor<double> xt = random_tensor({C, H, W}, rng);
    Tensor<double> wt = random_tensor({O, C, k, k}, rng);
    Graph<double> g;
    auto y = ops::conv2d(ops::input(g, xt), ops::input(g, wt), stride, pad);
    Tensor<double> ref = conv_oracle(xt, wt, stride, pad);
    REQUIRE(y.value().shape == ref.shape);
    for (size_t i = 0; i < ref.data.size(); ++i)
      CHECK(y.value().data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Graph<double> g;
  auto x = ops::input(g, Tensor<double>({2, 4, 4}));
  auto w = ops::input(g, Tensor<double>({1, 3, 3, 3}));
  CHECK_THROWS_AS(ops::conv2d(x, w), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(23);
  Tensor<double> xt = random_tensor({2, 5, 6}, rng);
  Tensor<double> wt = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor<double> r = random_tensor({3, 5, 6}, rng);
  BuildFn build = [r](Graph<double>& g, std::vector<Var<double>>& v) {
    return ops::weighted_sum(ops::conv2d(v[0], v[1], 1, 1), r);
  };
  auto res = check_all(build, {&xt, &wt});
  CHECK(res.n_checked > 0);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("softmax_channels splits a tie evenly") {
  Graph<double> g;
  auto x = ops::input(g, Tensor<double>({2, 1, 1}, {0.0, 0.0}));
  auto y = ops::softmax_channels(x);
  CHECK(y.value().data[0] == doctest::Approx(0.5));
  CHECK(y.value().data[1] == doctest::Approx(0.5));
}

TEST_CASE("max_pool2 routes gradient to the first maximum in row-major order") {
  Graph<double> g;
  // all four window cells tie
  auto x = ops::leaf_param(g, Tensor<double>::full({1, 2, 2}, 3.0));
  auto y = ops::max_pool2(x);
  auto loss = ops::sum_all(y);
  g.backward(loss.id);
  CHECK(x.grad().data[0] == doctest::Approx(1.0));
  CHECK(x.grad().data[1] == doctest::Approx(0.0));
  CHECK(x.grad().data[2] == doctest::Approx(0.0));
  CHECK(x.grad().data[3] == doctest::Approx(0.0));
}

TEST_CASE("upsample after pool is the identity on constant maps") {
  Graph<double> g;
  auto x = ops::input(g, Tensor<double>::full({2, 4, 4}, 0.75));
  auto y = ops::nearest_upsample2(ops::max_pool2(x));
  REQUIRE(y.value().shape == x.value().shape);
  for (double v : y.value().data) CHECK(v == doctest::Approx(0.75));
}

TEST_CASE("backward of add distributes gradients unchanged") {
  Rng rng(5);
  Graph<double> g;
  Tensor<double> r = random_tensor({2, 3, 3}, rng);
  auto a = ops::leaf_param(g, random_tensor({2, 3, 3}, rng));
  auto b = ops::leaf_param(g, random_tensor({2, 3, 3}, rng));
  auto loss = ops::weighted_sum(ops::add(a, b), r);
  g.backward(loss.id);
  for (size_t i = 0; i < r.data.size(); ++i) {
    CHECK(a.grad().data[i] == doctest::Approx(r.data[i]));
    CHECK(b.grad().data[i] == doctest::Approx(r.data[i]));
  }
}

TEST_CASE("backward of concat splits by exact channel ranges") {
  Rng rng(9);
  Graph<double> g;
  auto a = ops::leaf_param(g, random_tensor({1, 2, 2}, rng));
  auto b = ops::leaf_param(g, random_tensor({3, 2, 2}, rng));
  auto y = ops::channel_concat<double>({a, b});
  Tensor<double> r = random_tensor({4, 2, 2}, rng);
  auto loss = ops::weighted_sum(y, r);
  g.backward(loss.id);
  for (int i = 0; i < 4; ++i) CHECK(a.grad().data[i] == doctest::Approx(r.data[i]));
  for (int i = 0; i < 12; ++i) CHECK(b.grad().data[i] == doctest::Approx(r.data[i + 4]));
}

TEST_CASE("every primitive passes finite-difference checks on random small shapes") {
  Rng rng(101);
  struct Case {
    const char* name;
    BuildFn build;
    std::vector<Tensor<double>> tensors;
  };
  std::vector<Case> cases;

  {
    Tensor<double> r = random_tensor({3, 4, 4}, rng);
    cases.push_back({"relu",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::relu(v[0]), r);
                     },
                     {random_tensor({3, 4, 4}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({3, 4, 4}, rng);
    cases.push_back({"leaky_relu",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::leaky_relu(v[0], 0.1), r);
                     },
                     {random_tensor({3, 4, 4}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({2, 4, 4}, rng);
    cases.push_back({"sigmoid",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::sigmoid(v[0]), r);
                     },
                     {random_tensor({2, 4, 4}, rng, -2, 2)}});
  }
  {
    Tensor<double> r = random_tensor({2, 4, 4}, rng);
    cases.push_back({"softplus",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::softplus(v[0]), r);
                     },
                     {random_tensor({2, 4, 4}, rng, -2, 2)}});
  }
  {
    Tensor<double> r = random_tensor({4, 8, 8}, rng);
    cases.push_back({"max_pool2+upsample",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(
                           ops::nearest_upsample2(ops::max_pool2(v[0])), r);
                     },
                     {random_tensor({4, 8, 8}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({4, 4, 4}, rng);
    cases.push_back({"softmax_channels",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::softmax_channels(v[0]), r);
                     },
                     {random_tensor({4, 4, 4}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({3, 5}, rng);
    cases.push_back({"matmul",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::matmul(v[0], v[1]), r);
                     },
                     {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({4, 3}, rng);
    cases.push_back({"transpose+softmax_rows",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::softmax_rows(ops::transpose2(v[0])), r);
                     },
                     {random_tensor({3, 4}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({2, 4, 4}, rng);
    cases.push_back({"bias_add",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::bias_add(v[0], v[1]), r);
                     },
                     {random_tensor({2, 4, 4}, rng), random_tensor({2}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({5, 3, 3}, rng);
    cases.push_back({"concat+slice+scalar_mul",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       auto cat = ops::channel_concat<double>({v[0], v[1]});
                       auto sl = ops::channel_slice(cat, 1, 6);
                       return ops::weighted_sum(ops::scalar_mul(sl, 1.7), r);
                     },
                     {random_tensor({2, 3, 3}, rng), random_tensor({4, 3, 3}, rng)}});
  }
  {
    Tensor<double> r = random_tensor({2, 3, 2}, rng);
    cases.push_back({"crop_spatial",
                     [r](Graph<double>& g, std::vector<Var<double>>& v) {
                       return ops::weighted_sum(ops::crop_spatial(v[0], 3, 2), r);
                     },
                     {random_tensor({2, 4, 4}, rng)}});
  }

  for (auto& c : cases) {
    CAPTURE(c.name);
    std::vector<Tensor<double>*> ptrs;
    for (auto& t : c.tensors) ptrs.push_back(&t);
    auto res = check_all(c.build, ptrs);
    CHECK(res.n_checked > 0);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("grad_check on relu away from zero is tight") {
  Rng rng(3);
  Tensor<double> xt({2, 4, 4});
  for (auto& v : xt.data) v = (rng.uniform_int(0, 1) ? 1 : -1) * rng.uniform(0.5, 1.5);
  Tensor<double> r = random_tensor({2, 4, 4}, rng);
  BuildFn build = [r](Graph<double>& g, std::vector<Var<double>>& v) {
    return ops::weighted_sum(ops::relu(v[0]), r);
  };
  auto res = check_all(build, {&xt}, 1e-6);
  CHECK(res.n_excluded == 0);
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("grad_check chained conv-relu-pool stays under 1e-4") {
  Rng rng(31);
  Tensor<double> xt = random_tensor({2, 8, 8}, rng);
  Tensor<double> wt = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor<double> r = random_tensor({3, 4, 4}, rng);
  BuildFn build = [r](Graph<double>& g, std::vector<Var<double>>& v) {
    return ops::weighted_sum(ops::max_pool2(ops::relu(ops::conv2d(v[0], v[1], 1, 1))), r);
  };
  auto res = check_all(build, {&xt, &wt});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("grad_check reports the relu kink as excluded, not failed") {
  Tensor<double> xt({1, 1, 1}, {0.0});
  Tensor<double> r({1, 1, 1}, {1.0});
  BuildFn build = [r](Graph<double>& g, std::vector<Var<double>>& v) {
    return ops::weighted_sum(ops::relu(v[0]), r);
  };
  auto res = check_all(build, {&xt});
  CHECK(res.n_excluded == 1);
  CHECK(res.n_checked == 0);
  CHECK(res.max_rel_err == doctest::Approx(0.0));
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng rng(77);
  Tensor<double> xt = random_tensor({3, 8, 8}, rng);
  Tensor<double> wt = random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    Graph<double> g;
    auto y = ops::conv2d(ops::input(g, xt), ops::input(g, wt), 1, 1);
    return y.value().data;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}
