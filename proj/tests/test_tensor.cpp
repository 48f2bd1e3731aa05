#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "ampattn/gradcheck.hpp"
#include "ampattn/rng.hpp"
#include "ampattn/tensor.hpp"
#include "ampattn/tensor_io.hpp"

using namespace ampattn;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(t.size() == static_cast<int64_t>(want.size()));
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(std::abs(t.data()[i] - want[i]) <= tol * std::max(1.0, std::abs(want[i])));
}

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("factories enforce shape/data agreement") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.rank() == 2);
  CHECK_THROWS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}));
  Tensor f = Tensor::full({3}, 2.5);
  expect_values(f, {2.5, 2.5, 2.5});
}

TEST_CASE("matmul identity and hand product") {
  Graph g;
  Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {3.5, -1, 2, 7});
  expect_values(g.matmul(i2, m), {3.5, -1, 2, 7});

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  expect_values(g.matmul(a, b), {17, 39});
}

TEST_CASE("matmul shape error names both shapes") {
  Graph g;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  try {
    g.matmul(a, b);
    FAIL("no error");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Tensor a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {2, 3, 4, 5});
  double err = grad_check(
      [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.matmul(in[0], in[1])); },
      {a, b});
  CHECK(err <= 1e-6);
}

TEST_CASE("elementwise basics") {
  Graph g;
  CHECK(g.sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5));
  CHECK(g.tanh(Tensor::scalar(0.0)).value() == doctest::Approx(0.0));
  Tensor x = Tensor::from_data({2}, {1, 2});
  Tensor y = Tensor::from_data({2}, {3, 4});
  expect_values(g.add(x, y), {4, 6});
  expect_values(g.square(Tensor::from_data({3}, {1, -2, 3})), {1, 4, 9});
  expect_values(g.relu(Tensor::from_data({3}, {-1, 0, 2})), {0, 0, 2});
}

TEST_CASE("trailing-axis broadcast and its gradient") {
  Graph g;
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from_data({1, 3}, {10, 20, 30});
  expect_values(g.add(a, row), {11, 22, 33, 14, 25, 36});
  Tensor col = Tensor::from_data({2, 1}, {100, 200});
  expect_values(g.add(a, col), {101, 102, 103, 204, 205, 206});
  CHECK_THROWS(g.add(a, Tensor::zeros({2, 2})));

  // Gradients sum over broadcast axes.
  row.set_requires_grad(true);
  row.zero_grad();
  Graph g2;
  g2.backward(g2.sum(g2.add(a, row)));
  auto gr = row.grad();
  CHECK(gr[0] == 2.0);
  CHECK(gr[1] == 2.0);
  CHECK(gr[2] == 2.0);
}

TEST_CASE("softmax rows: uniform, stable, hand case") {
  Graph g;
  expect_values(g.softmax_rows(Tensor::from_data({1, 4}, {0, 0, 0, 0})),
                {0.25, 0.25, 0.25, 0.25});
  Tensor big = g.softmax_rows(Tensor::from_data({1, 2}, {1000, 0}));
  CHECK(std::abs(big.data()[0] - 1.0) <= 1e-12);
  CHECK(std::abs(big.data()[1] - 0.0) <= 1e-12);
  expect_values(g.softmax_rows(Tensor::from_data(
                    {1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)})),
                {1.0 / 6, 2.0 / 6, 3.0 / 6}, 1e-12);
}

TEST_CASE("softmax rows sum to one even with huge spread") {
  Rng rng(99);
  Tensor x = rand_tensor({8, 5}, rng, -350.0, 350.0);  // spread up to 700
  Graph g;
  Tensor y = g.softmax_rows(x);
  for (int r = 0; r < 8; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += y.at2(r, c);
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("reductions: hand values and tie rule") {
  Graph g;
  CHECK(g.mean(Tensor::from_data({3}, {2, 4, 6})).value() == doctest::Approx(4.0));
  CHECK(g.max(Tensor::from_data({2, 2}, {1, 5, 3, 2})).value() == doctest::Approx(5.0));

  // Gradient of max at a non-tied point is the indicator of the argmax.
  Tensor x = Tensor::from_data({2, 2}, {1, 5, 3, 2}, true);
  x.zero_grad();
  Graph g2;
  g2.backward(g2.max(x));
  auto gr = x.grad();
  CHECK(gr[0] == 0.0);
  CHECK(gr[1] == 1.0);
  CHECK(gr[2] == 0.0);
  CHECK(gr[3] == 0.0);
  double fd = grad_check(
      [](Graph& gg, const std::vector<Tensor>& in) { return gg.max(in[0]); },
      {Tensor::from_data({2, 2}, {1, 5, 3, 2})});
  CHECK(fd <= 1e-6);

  // Ties route the whole gradient to the first maximal element.
  Tensor t = Tensor::from_data({1, 2}, {2, 2}, true);
  t.zero_grad();
  Graph g3;
  g3.backward(g3.max(t));
  CHECK(t.grad()[0] == 1.0);
  CHECK(t.grad()[1] == 0.0);
}

TEST_CASE("axis reductions") {
  Graph g;
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  expect_values(g.sum_axis(x, 0), {5, 7, 9});
  expect_values(g.sum_axis(x, 1), {6, 15});
  expect_values(g.mean_axis(x, 0), {2.5, 3.5, 4.5});
  expect_values(g.max_axis(x, 1), {3, 6});
  CHECK_THROWS(g.sum_axis(x, 2));
}

TEST_CASE("backward: ones for sum, 2x for sum of squares") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  x.zero_grad();
  Graph g;
  g.backward(g.sum(x));
  {
    auto gr = x.grad();
    CHECK(gr[0] == 1.0);
    CHECK(gr[1] == 1.0);
    CHECK(gr[2] == 1.0);
  }
  x.zero_grad();
  Graph g2;
  g2.backward(g2.sum(g2.square(x)));
  auto gr = x.grad();
  CHECK(gr[0] == doctest::Approx(2.0));
  CHECK(gr[1] == doctest::Approx(4.0));
  CHECK(gr[2] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Graph g;
  Tensor y = g.square(x);
  CHECK_THROWS(g.backward(y));
}

TEST_CASE("grad accumulation contract") {
  Tensor x = Tensor::from_data({2}, {1.5, -2.0}, true);
  x.zero_grad();
  Graph g;
  Tensor loss = g.sum(g.square(x));
  g.backward(loss);
  std::vector<double> once(x.grad().begin(), x.grad().end());
  g.backward(loss);  // no zeroing: grads accumulate additively
  for (int i = 0; i < 2; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * once[i]));

  // With zeroing, repeated runs are bit-identical.
  x.zero_grad();
  Graph g2;
  g2.backward(g2.sum(g2.square(x)));
  std::vector<double> a(x.grad().begin(), x.grad().end());
  x.zero_grad();
  Graph g3;
  g3.backward(g3.sum(g3.square(x)));
  for (int i = 0; i < 2; ++i) CHECK(x.grad()[i] == a[i]);
}

TEST_CASE("grad_check oracle behaviors") {
  Rng rng(7);
  Tensor x = rand_tensor({2, 3}, rng);
  double err = grad_check(
      [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(in[0])); }, {x});
  CHECK(err <= 1e-6);

  // Constant function: analytic and numeric gradients are both zero.
  double c = grad_check(
      [](Graph& g, const std::vector<Tensor>& in) {
        return g.scale(g.sum(g.mul(in[0], Tensor::zeros(in[0].shape()))), 1.0);
      },
      {x});
  CHECK(c == 0.0);
}

TEST_CASE("cross entropy: uniform, saturated, hand case") {
  Graph g;
  CHECK(g.cross_entropy(Tensor::zeros({1, 4}), 1).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(g.cross_entropy(Tensor::from_data({1, 3}, {1000, 0, 0}), 0).value() ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
  double hand = -3.0 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(g.cross_entropy(Tensor::from_data({1, 3}, {1, 2, 3}), 2).value() ==
        doctest::Approx(hand).epsilon(1e-12));
  CHECK(hand == doctest::Approx(0.4076).epsilon(1e-4));
  CHECK_THROWS(g.cross_entropy(Tensor::zeros({1, 3}), 3));
}

TEST_CASE("finite outputs for a deep random chain") {
  Rng rng(13);
  Tensor x = rand_tensor({4, 4}, rng, -2.0, 2.0);
  Graph g;
  Tensor y = g.softmax_rows(g.matmul(g.tanh(x), g.transpose(g.sigmoid(x))));
  y = g.mul(y, g.exp(g.scale(x, 0.1)));
  for (double v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("tensor binary round trip and trailing-byte check") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ampattn_tensor_io_test";
  fs::create_directories(dir);
  Rng rng(21);
  Tensor t = rand_tensor({3, 2, 2}, rng);
  fs::path file = dir / "t.tnsr";
  save_tensor(file, t);
  Tensor back = load_tensor(file);
  REQUIRE(back.shape() == t.shape());
  for (int64_t i = 0; i < t.size(); ++i) CHECK(back.data()[i] == t.data()[i]);

  // A trailing byte invalidates the file.
  {
    std::FILE* f = std::fopen(file.string().c_str(), "ab");
    REQUIRE(f);
    std::fputc(0, f);
    std::fclose(f);
  }
  CHECK_THROWS(load_tensor(file));
  fs::remove_all(dir);
}

TEST_CASE("csv export uses 17 significant digits") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "ampattn_csv_test";
  fs::create_directories(dir);
  double v = 1.0 / 3.0;
  Tensor t = Tensor::from_data({1, 2}, {v, 2.0});
  fs::path file = dir / "t.csv";
  save_csv(file, t);
  std::FILE* f = std::fopen(file.string().c_str(), "r");
  REQUIRE(f);
  char buf[256] = {0};
  REQUIRE(std::fgets(buf, sizeof(buf), f));
  std::fclose(f);
  double parsed = 0;
  REQUIRE(std::sscanf(buf, "%lf", &parsed) == 1);
  CHECK(parsed == v);  // %.17g round-trips doubles exactly
  fs::remove_all(dir);
}

TEST_SUITE_END();
