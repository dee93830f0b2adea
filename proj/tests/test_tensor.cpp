#include <doctest.h>

#include <cmath>
#include <vector>

#include "unispoof/rng.hpp"
#include "unispoof/tensor.hpp"

using namespace unispoof;
using TD = Tensor<double>;

namespace {

TD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v));
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
TD weighted_sum(const TD& y, std::uint64_t seed) {
  Rng rng(seed);
  TD w = random_tensor(y.shape(), rng);
  return sum(mul(y, w));
}

double check(const std::function<TD(std::span<const TD>)>& fn, std::vector<TD> in, double floor = 1e-4) {
  GradCheckOptions opt;
  opt.floor = floor;
  return grad_check(fn, std::move(in), opt).max_rel_error;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul examples and errors") {
  auto a = TD::from({2, 2}, {1, 2, 3, 4});
  auto b = TD::from({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{19, 22, 43, 50});

  auto eye = TD::from({2, 2}, {1, 0, 0, 1});
  auto id = matmul(eye, b);
  CHECK(std::vector<double>(id.data().begin(), id.data().end()) == std::vector<double>{5, 6, 7, 8});

  auto bad = TD::zeros({3, 2});
  try {
    matmul(a, bad);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShape);
    CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    CHECK(std::string(e.what()).find("[3x2]") != std::string::npos);
  }

  Rng rng(1);
  double err = check([](std::span<const TD> in) { return sum(matmul(in[0], in[1])); },
                     {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  CHECK(err <= 1e-6);
}

TEST_CASE("conv2d examples") {
  SUBCASE("1x1 kernel is channel mixing") {
    Rng rng(2);
    auto x = random_tensor({1, 3, 3, 2}, rng);
    auto w = random_tensor({1, 1, 2, 4}, rng);
    auto y = conv2d(x, w, TD(), 1, 0);
    auto ref = matmul(reshape(x, {9, 2}), reshape(w, {2, 4}));
    REQUIRE(y.shape() == Shape{1, 3, 3, 4});
    for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }
  SUBCASE("all-ones kernel on constant input") {
    const double v = 0.7;
    auto x = TD::full({1, 5, 5, 2}, v);
    auto w = TD::full({3, 3, 2, 1}, 1.0);
    auto y = conv2d(x, w, TD(), 1, 0);
    REQUIRE(y.shape() == Shape{1, 3, 3, 1});
    for (double o : y.data()) CHECK(o == doctest::Approx(9 * v * 2));
  }
  SUBCASE("padding and stride output size") {
    auto y = conv2d(TD::zeros({2, 7, 7, 3}), TD::zeros({3, 3, 3, 5}), TD::zeros({5}), 2, 1);
    CHECK(y.shape() == Shape{2, 4, 4, 5});
  }
  SUBCASE("kernel larger than padded input") {
    CHECK_THROWS_AS(conv2d(TD::zeros({1, 2, 2, 1}), TD::zeros({5, 5, 1, 1}), TD(), 1, 1), Error);
  }
  SUBCASE("gradients vs finite differences") {
    Rng rng(3);
    double err = check(
        [](std::span<const TD> in) { return weighted_sum(conv2d(in[0], in[1], in[2], 1, 1), 7); },
        {random_tensor({1, 5, 5, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)});
    CHECK(err <= 1e-5);
    err = check([](std::span<const TD> in) { return weighted_sum(conv2d(in[0], in[1], in[2], 2, 0), 8); },
                {random_tensor({1, 5, 5, 2}, rng), random_tensor({3, 3, 2, 2}, rng), random_tensor({2}, rng)});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("pool2d examples") {
  for (auto mode : {PoolMode::kMax, PoolMode::kAvg}) {
    auto y = pool2d(TD::full({1, 4, 4, 2}, 3.25), 2, mode);
    for (double v : y.data()) CHECK(v == 3.25);
  }
  auto x = TD::from({1, 2, 2, 1}, {1, 2, 3, 4});
  CHECK(pool2d(x, 2, PoolMode::kMax).item() == 4.0);
  CHECK(pool2d(x, 2, PoolMode::kAvg).item() == 2.5);
  CHECK_THROWS_AS(pool2d(TD::zeros({1, 5, 4, 1}), 2, PoolMode::kMax), Error);

  SUBCASE("avg gradient is uniform") {
    auto in = TD::from({1, 2, 2, 1}, {1, 2, 3, 4}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    tape.backward(sum(pool2d(in, 2, PoolMode::kAvg)));
    for (double g : in.grad()) CHECK(g == 0.25);
    Rng rng(4);
    double err = check([](std::span<const TD> v) { return weighted_sum(pool2d(v[0], 2, PoolMode::kAvg), 3); },
                       {random_tensor({2, 4, 4, 3}, rng)});
    CHECK(err <= 1e-6);
  }
  SUBCASE("max ties go to the first index") {
    auto in = TD::from({1, 2, 2, 1}, {5, 5, 5, 5}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    tape.backward(sum(pool2d(in, 2, PoolMode::kMax)));
    CHECK(std::vector<double>(in.grad().begin(), in.grad().end()) == std::vector<double>{1, 0, 0, 0});
  }
}

TEST_CASE("layer_norm") {
  auto ones = TD::full({4}, 1.0);
  auto zeros = TD::zeros({4});
  auto x = TD::from({1, 4}, {-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738});
  auto y = layer_norm(x, ones, zeros, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-9));

  Rng rng(5);
  auto r = random_tensor({6, 16}, rng, -3, 5);
  auto yn = layer_norm(r, TD::full({16}, 1.0), TD::zeros({16}), 1e-5);
  for (std::size_t row = 0; row < 6; ++row) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += yn.data()[row * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += std::pow(yn.data()[row * 16 + j] - m, 2);
    v /= 16;
    CHECK(std::abs(m) < 1e-9);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
  double err = check([](std::span<const TD> in) { return weighted_sum(layer_norm(in[0], in[1], in[2]), 11); },
                     {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)});
  CHECK(err <= 1e-5);
}

TEST_CASE("softmax") {
  auto u = softmax(TD::full({2, 5}, 0.3));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.2));
  Rng rng(6);
  auto x = random_tensor({3, 7}, rng);
  auto a = softmax(x);
  auto b = softmax(add_scalar(x, 12.5));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) s += a.data()[r * 7 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(check([](std::span<const TD> in) { return weighted_sum(softmax(in[0]), 12); }, {x}) <= 1e-6);
}

TEST_CASE("l2_normalize") {
  auto y = l2_normalize(TD::from({1, 2}, {3, 4}));
  CHECK(y.data()[0] == doctest::Approx(0.6));
  CHECK(y.data()[1] == doctest::Approx(0.8));
  Rng rng(7);
  auto v = random_tensor({4, 6}, rng);
  auto a = l2_normalize(v);
  auto b = l2_normalize(scale(v, 3.7));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  CHECK(check([](std::span<const TD> in) { return weighted_sum(l2_normalize(in[0]), 13); }, {v}) <= 1e-6);
}

TEST_CASE("backward contract") {
  SUBCASE("sum of (2x)^2 gives 8x") {
    auto x = TD::from({3}, {1, -2, 0.5}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    auto t = scale(x, 2.0);
    tape.backward(sum(mul(t, t)));
    CHECK(x.grad()[0] == 8.0);
    CHECK(x.grad()[1] == -16.0);
    CHECK(x.grad()[2] == 4.0);
  }
  SUBCASE("no gradient for frozen leaves, zero for unreached leaves") {
    auto x = TD::from({2}, {1, 2}, true);
    auto frozen = TD::from({2}, {3, 4}, false);
    auto unused = TD::from({2}, {5, 6}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    auto side = mul(unused, frozen);
    (void)side;
    tape.backward(sum(mul(x, frozen)));
    CHECK_FALSE(frozen.has_grad());
    REQUIRE(unused.has_grad());
    CHECK(unused.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("second backward is an error") {
    auto x = TD::from({2}, {1, 2}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    auto loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), Error);
  }
  SUBCASE("non-scalar and detached losses") {
    auto x = TD::from({2}, {1, 2}, true);
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), Error);
    CHECK_THROWS_AS(tape.backward(TD::scalar(1.0)), Error);
  }
  SUBCASE("no recording without an active tape") {
    auto x = TD::from({2}, {1, 2}, true);
    auto y = mul(x, x);
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("sgd_step") {
  auto p = TD::from({1}, {1.0}, true);
  p.grad_mut();
  {
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    tape.backward(scale(sum(p), 2.0));
  }
  std::vector<TD> params{p};
  sgd_step<double>(params, 0.0);
  CHECK(p.data()[0] == 1.0);
  {
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    tape.backward(scale(sum(p), 2.0));
  }
  sgd_step<double>(params, 0.1);
  CHECK(p.data()[0] == doctest::Approx(0.8));
  CHECK(p.grad()[0] == 0.0);

  auto fresh = TD::from({1}, {0.0}, true);
  std::vector<TD> missing{fresh};
  CHECK_THROWS_AS(sgd_step<double>(missing, 0.1), Error);

  auto w = TD::from({1}, {0.0}, true);
  std::vector<TD> ws{w};
  for (int i = 0; i < 100; ++i) {
    Tape<double> tape;
    Tape<double>::Scope scope(&tape);
    auto d = add_scalar(w, -3.0);
    tape.backward(sum(mul(d, d)));
    sgd_step<double>(ws, 0.1);
  }
  CHECK(std::abs(w.data()[0] - 3.0) <= 1e-4);
}

TEST_CASE("grad_check sanity") {
  Rng rng(8);
  auto coeff = random_tensor({5}, rng);
  double linear_err = check([coeff](std::span<const TD> in) { return sum(mul(in[0], coeff)); },
                            {random_tensor({5}, rng)}, 1e-12);
  CHECK(linear_err <= 1e-9);

  std::vector<std::size_t> labels{0, 3, 1};
  double ce_err = check([&](std::span<const TD> in) { return cross_entropy(in[0], labels); },
                        {random_tensor({3, 4}, rng, -2, 2)});
  CHECK(ce_err <= 1e-6);

  // A squaring op whose backward forgets the factor 2.
  auto broken_square = [](const TD& x) {
    auto out = std::make_shared<TensorNode<double>>();
    out->shape = x.shape();
    for (double v : x.data()) out->data.push_back(v * v);
    if (auto* tape = Tape<double>::active(); tape && x.requires_grad()) {
      out->requires_grad = true;
      out->leaf = false;
      auto xn = x.node();
      auto* o = out.get();
      tape->record("broken_square", {xn}, out, [xn, o] {
        if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0);
        for (std::size_t i = 0; i < o->grad.size(); ++i) xn->grad[i] += o->grad[i] * xn->data[i];
      });
    }
    return TD(out);
  };
  double bad = check([&](std::span<const TD> in) { return sum(broken_square(in[0])); }, {random_tensor({4}, rng)});
  CHECK(bad > 1e-2);
}

TEST_CASE("every differentiable op matches finite differences over random shapes") {
  // Twenty seeds, each drawing fresh shapes.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(100 + seed);
    const std::size_t n = 1 + rng.below(3), m = 1 + rng.below(4), k = 1 + rng.below(5);
    auto a = random_tensor({n, m}, rng);
    auto b = random_tensor({m, k}, rng);
    auto bt = random_tensor({k, m}, rng);
    auto same = random_tensor({n, m}, rng);
    auto bias = random_tensor({k}, rng);
    auto b3 = random_tensor({n, m, k}, rng);
    auto b3t = random_tensor({n, k + 1, k}, rng);
    auto img = random_tensor({n, 4, 4, m}, rng);
    auto kern = random_tensor({3, 3, m, k}, rng);

    auto ws = [seed](const TD& y) { return weighted_sum(y, seed + 1000); };
    const double tol = 1e-5;
    CHECK(check([&](auto in) { return ws(add(in[0], in[1])); }, {a, same}) <= tol);
    CHECK(check([&](auto in) { return ws(sub(in[0], in[1])); }, {a, same}) <= tol);
    CHECK(check([&](auto in) { return ws(mul(in[0], in[1])); }, {a, same}) <= tol);
    CHECK(check([&](auto in) { return ws(scale(in[0], 1.7)); }, {a}) <= tol);
    CHECK(check([&](auto in) { return ws(add_broadcast(in[0], in[1])); }, {b3, random_tensor({k}, rng)}) <= tol);
    CHECK(check([&](auto in) { return ws(gelu(in[0])); }, {a}) <= tol);
    CHECK(check([&](auto in) { return ws(sigmoid(in[0])); }, {a}) <= tol);
    CHECK(check([&](auto in) { return ws(relu(in[0])); }, {a}) <= tol);
    CHECK(check([&](auto in) { return mean(in[0]); }, {a}) <= tol);
    CHECK(check([&](auto in) { return ws(matmul(in[0], in[1])); }, {a, b}) <= tol);
    CHECK(check([&](auto in) { return ws(matmul_nt(in[0], in[1])); }, {a, bt}) <= tol);
    CHECK(check([&](auto in) { return ws(linear(in[0], in[1], in[2])); }, {a, b, bias}) <= tol);
    CHECK(check([&](auto in) { return ws(bmm(in[0], in[1], false)); }, {b3, random_tensor({n, k, 2}, rng)}) <= tol);
    CHECK(check([&](auto in) { return ws(bmm(in[0], in[1], true)); }, {b3, b3t}) <= tol);
    CHECK(check([&](auto in) { return ws(permute(in[0], {2, 0, 1})); }, {b3}) <= tol);
    CHECK(check([&](auto in) { return ws(reshape(in[0], {n * m * k})); }, {b3}) <= tol);
    CHECK(check([&](auto in) { return ws(concat_last<double>({in[0], in[1]})); }, {a, same}) <= tol);
    CHECK(check([&](auto in) { return ws(slice_last(in[0], 0, 1)); }, {b3}) <= tol);
    CHECK(check([&](auto in) { return ws(slice_first(in[0], 0, 1)); }, {b3}) <= tol);
    auto map = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{2, 0, 0, 1});
    CHECK(check([&](auto in) { return ws(gather_rows(in[0], 3, 1, map, {4})); }, {random_tensor({3}, rng)}) <= tol);
    CHECK(check([&](auto in) { return ws(softmax(in[0])); }, {b3}) <= tol);
    CHECK(check([&](auto in) { return ws(layer_norm(in[0], in[1], in[2])); },
                {b3, random_tensor({k}, rng), random_tensor({k}, rng)}) <= tol);
    CHECK(check([&](auto in) { return ws(l2_normalize(in[0])); }, {b3}) <= tol);
    CHECK(check([&](auto in) { return ws(conv2d(in[0], in[1], in[2], 1, 1)); }, {img, kern, bias}) <= tol);
    CHECK(check([&](auto in) { return ws(pool2d(in[0], 2, PoolMode::kAvg)); }, {img}) <= tol);
    CHECK(check([&](auto in) { return ws(pool2d(in[0], 2, PoolMode::kMax)); }, {img}) <= tol);
    CHECK(check([&](auto in) { return ws(global_avg_pool(in[0])); }, {img}) <= tol);

    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(m);
    CHECK(check([&](auto in) { return cross_entropy(in[0], labels); }, {a}) <= tol);
    auto cosines = random_tensor({n, m}, rng, -0.9, 0.9);
    CHECK(check([&](auto in) { return cross_entropy(arcface_logits(in[0], labels, 32.0, 0.5), labels); }, {cosines}) <= tol);
    std::vector<double> ylab(n * m);
    for (auto& y : ylab) y = static_cast<double>(rng.below(2));
    CHECK(check([&](auto in) { return bce(in[0], std::span<const double>(ylab)); },
                {random_tensor({n, m}, rng, 0.05, 0.95)}) <= tol);
  }
}

TEST_CASE("forward operations are deterministic") {
  Rng rng(9);
  auto x = random_tensor({2, 6, 6, 3}, rng);
  auto w = random_tensor({3, 3, 3, 4}, rng);
  auto a = softmax(conv2d(x, w, TD(), 1, 1));
  auto b = softmax(conv2d(x, w, TD(), 1, 1));
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

}  // TEST_SUITE
