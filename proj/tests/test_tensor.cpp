#include <doctest.h>

#include <cmath>

#include "mlnmt/tensor.hpp"
#include "mlnmt/util.hpp"

using namespace mlnmt;

namespace {

using TD = Tensor<double>;
using VD = Var<double>;

TD random_tensor(std::vector<std::size_t> dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(dims));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with fixed random weights, so that every output element
// reaches the scalar with a distinct coefficient.
VD probe(VD out, std::uint64_t seed) {
  Rng rng(seed, 99);
  auto w = random_tensor(out.value().dims(), rng);
  return sum(mul(out, out.tape().constant(std::move(w))));
}

double check(const ScalarFunction<double>& f, std::vector<TD> params) {
  return grad_check(f, params, 1e-5, 500, 1).max_rel_error;
}

}  // namespace

TEST_CASE("matmul identity and shape errors") {
  Tape<double> tape;
  auto I = tape.constant(TD::from_rows({{1, 0}, {0, 1}}));
  auto M = tape.constant(TD::from_rows({{1.5, -2}, {3, 4.25}}));
  CHECK(matmul(I, M).value() == M.value());
  auto bad = tape.constant(TD::matrix(3, 2));
  try {
    matmul(M, bad);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(M.value().shape_string()) != std::string::npos);
    CHECK(msg.find(bad.value().shape_string()) != std::string::npos);
  }
  CHECK_THROWS_AS(add(M, bad), Error);
}

TEST_CASE("softmax rows") {
  Tape<float> tape(false);
  auto x = tape.constant(Tensor<float>::from_rows({{0, 0}}));
  const auto s = softmax_rows(x).value();
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  // Large logits must not overflow.
  auto big = tape.constant(Tensor<float>::from_rows({{1000, 1000, -1000}, {88, 89, 90}}));
  const auto sb = softmax_rows(big).value();
  CHECK(sb.all_finite());
  Rng rng(4);
  Tensor<float> r({7, 13});
  for (auto& v : r.values()) v = static_cast<float>(rng.uniform(-30, 30));
  const auto sr = softmax_rows(tape.constant(r)).value();
  for (std::size_t i = 0; i < 7; ++i) {
    double total = 0;
    for (float v : sr.row(i)) total += v;
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer norm statistics") {
  Tape<double> tape(false);
  auto gain = tape.constant(TD::vector(4, 1.0));
  auto bias = tape.constant(TD::vector(4, 0.0));
  const auto z = layer_norm(tape.constant(TD::from_rows({{3, 3, 3, 3}})), gain, bias).value();
  for (double v : z.values()) CHECK(v == 0.0);

  Rng rng(8);
  Tape<float> tf(false);
  Tensor<float> x({5, 32});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-4, 4));
  const auto y = layer_norm(tf.constant(x), tf.constant(Tensor<float>::vector(32, 1.0f)),
                            tf.constant(Tensor<float>::vector(32, 0.0f)))
                     .value();
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (float v : y.row(r)) mean += v;
    mean /= 32;
    for (float v : y.row(r)) var += (v - mean) * (v - mean);
    var /= 32;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("grad_check on x squared") {
  ScalarFunction<double> f = [](Tape<double>&, std::span<const VD> v) { return sum(mul(v[0], v[0])); };
  std::vector<TD> params = {TD::scalar(3.0)};
  Tape<double> tape;
  auto x = tape.leaf(TD::scalar(3.0));
  tape.backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(grad_check(f, params, 1e-5).max_rel_error < 1e-9);
}

TEST_CASE("softmax sum has zero gradient") {
  Rng rng(1);
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({3, 5}, rng, -2, 2));
  tape.backward(sum(softmax_rows(x)));
  const auto g = x.grad();
  for (double v : g.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("grad_check rejects non-finite values") {
  ScalarFunction<double> f = [](Tape<double>& t, std::span<const VD> v) {
    return sum(mul(v[0], t.constant(TD::scalar(std::numeric_limits<double>::infinity()))));
  };
  std::vector<TD> params = {TD::scalar(1.0)};
  CHECK_THROWS_AS(grad_check(f, params), Error);
}

TEST_CASE("backward handles shared subexpressions once") {
  Tape<double> tape;
  auto x = tape.leaf(TD::scalar(2.0));
  auto y = mul(x, x);
  auto z = add(y, mul(y, x));  // x^2 + x^3
  tape.backward(sum(z));
  CHECK(x.grad()[0] == doctest::Approx(2 * 2.0 + 3 * 4.0));
  CHECK_THROWS_AS(tape.backward(sum(z)), Error);
}

TEST_CASE("op gradients pass finite differences") {
  Rng rng(21);
  SUBCASE("matmul and matmul_nt") {
    CHECK(check([](Tape<double>&, std::span<const VD> v) { return probe(matmul(v[0], v[1]), 1); },
                {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}) < 1e-6);
    CHECK(check([](Tape<double>&, std::span<const VD> v) { return probe(matmul_nt(v[0], v[1]), 2); },
                {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}) < 1e-6);
  }
  SUBCASE("elementwise") {
    CHECK(check([](Tape<double>&, std::span<const VD> v) {
      return probe(add(mul(v[0], v[1]), scale(v[0], -1.7)), 3);
    }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}) < 1e-6);
    CHECK(check([](Tape<double>&, std::span<const VD> v) { return probe(add_row(v[0], v[1]), 4); },
                {random_tensor({3, 4}, rng), random_tensor({4}, rng)}) < 1e-6);
    // Values kept away from the kink at 0.
    auto x = random_tensor({3, 3}, rng, 0.2, 1.0);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
    CHECK(check([](Tape<double>&, std::span<const VD> v) { return probe(relu(v[0]), 5); }, {x}) < 1e-6);
  }
  SUBCASE("softmax and layer norm") {
    CHECK(check([](Tape<double>&, std::span<const VD> v) { return probe(softmax_rows(v[0]), 6); },
                {random_tensor({3, 5}, rng, -2, 2)}) < 1e-5);
    CHECK(check([](Tape<double>&, std::span<const VD> v) {
      return probe(layer_norm(v[0], v[1], v[2]), 7);
    }, {random_tensor({3, 6}, rng, -2, 2), random_tensor({6}, rng, 0.5, 1.5), random_tensor({6}, rng)}) < 1e-4);
  }
  SUBCASE("lookups") {
    const std::vector<int> ids = {2, 0, 2, 3};
    CHECK(check([&](Tape<double>&, std::span<const VD> v) { return probe(gather_rows(v[0], ids), 8); },
                {random_tensor({5, 3}, rng)}) < 1e-6);
    const std::vector<bool> sel = {true, false, true, false};
    const std::vector<double> mean = {0.1, -0.4, 0.3};
    CHECK(check([&](Tape<double>&, std::span<const VD> v) {
      return probe(shift_rows(v[0], sel, std::span<const double>(mean)), 9);
    }, {random_tensor({4, 3}, rng)}) < 1e-6);
  }
  SUBCASE("dropout with a fixed mask") {
    CHECK(check([](Tape<double>&, std::span<const VD> v) {
      Rng r(5);
      return probe(dropout(v[0], 0.3, r), 10);
    }, {random_tensor({4, 4}, rng)}) < 1e-6);
  }
  SUBCASE("multi-head attention") {
    AttentionLayout layout;
    layout.batch = 2;
    layout.query_len = 3;
    layout.key_len = 4;
    layout.heads = 2;
    layout.key_lengths = {4, 2};
    layout.scale = 0.5;
    CHECK(check([&](Tape<double>&, std::span<const VD> v) {
      return probe(attention(v[0], v[1], v[2], layout), 11);
    }, {random_tensor({6, 4}, rng), random_tensor({8, 4}, rng), random_tensor({8, 4}, rng)}) < 1e-5);
    AttentionLayout causal;
    causal.batch = 1;
    causal.query_len = 4;
    causal.key_len = 4;
    causal.heads = 1;
    causal.causal = true;
    causal.scale = 1.0;
    CHECK(check([&](Tape<double>&, std::span<const VD> v) {
      return probe(attention(v[0], v[1], v[2], causal), 12);
    }, {random_tensor({4, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)}) < 1e-5);
  }
  SUBCASE("cross entropy") {
    const std::vector<int> targets = {1, 0, 4, 2};
    for (double smoothing : {0.0, 0.1}) {
      CHECK(check([&](Tape<double>&, std::span<const VD> v) {
        return cross_entropy(v[0], targets, 0, smoothing);
      }, {random_tensor({4, 5}, rng, -2, 2)}) < 1e-5);
    }
  }
}

TEST_CASE("attention masks padded and future keys") {
  Tape<double> tape(false);
  AttentionLayout layout;
  layout.query_len = 2;
  layout.key_len = 3;
  layout.key_lengths = {2};
  auto q = tape.constant(TD::from_rows({{1, 0}, {0, 1}}));
  auto k = tape.constant(TD::from_rows({{1, 0}, {0, 1}, {5, 5}}));
  auto v = tape.constant(TD::from_rows({{1, 0}, {0, 1}, {100, 100}}));
  const auto out = attention(q, k, v, layout).value();
  const double w = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(out(0, 0) == doctest::Approx(w));
  CHECK(out(0, 1) == doctest::Approx(1 - w));
  CHECK(out(1, 0) == doctest::Approx(1 - w));
}

TEST_CASE("cross entropy ignores padding and rejects all-padding") {
  Tape<double> tape(false);
  auto logits = tape.constant(TD::from_rows({{0, 0}, {0, 0}}));
  LossStats stats;
  const std::vector<int> t = {1, 0};
  CHECK(cross_entropy(logits, t, 0, 0.0, &stats).value()[0] == doctest::Approx(std::log(2.0)));
  CHECK(stats.count == 1);
  const std::vector<int> pad = {0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, pad, 0), Error);
}

TEST_CASE("tape truncate keeps earlier nodes") {
  Tape<double> tape(false);
  auto a = tape.constant(TD::scalar(1.0));
  const auto n = tape.size();
  scale(add(a, a), 2.0);
  CHECK(tape.size() > n);
  tape.truncate(n);
  CHECK(tape.size() == n);
  CHECK(a.value()[0] == 1.0);
}
