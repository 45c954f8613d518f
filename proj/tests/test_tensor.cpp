#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/checkpoint.hpp"
#include "trinet/error.hpp"
#include "trinet/gradcheck.hpp"
#include "trinet/tensor.hpp"

using namespace trinet;
using ad::Tensor;

TEST_CASE("matmul by hand") {
  auto eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from_vector({2, 2}, {3, 4, 5, 6});
  CHECK(ad::matmul(eye, b).to_vector() == std::vector<double>{3, 4, 5, 6});
  auto row = Tensor::from_vector({1, 2}, {1, 2});
  auto col = Tensor::from_vector({2, 1}, {3, 4});
  auto r = ad::matmul(row, col);
  CHECK(r.shape() == ad::Shape{1, 1});
  CHECK(r[0] == 11.0);
  CHECK_THROWS_AS(ad::matmul(row, row), DimensionError);
}

TEST_CASE("matmul gradient of the output sum") {
  Rng rng(1);
  auto a = test::randn(rng, {5, 4}), b = test::randn(rng, {4, 3});
  CHECK(ad::grad_check([&] { return ad::sum_all(ad::matmul(a, b)); }, {a, b}) <= 1e-6);
}

TEST_CASE("softmax closed forms") {
  auto s = ad::softmax(Tensor::from_vector({2}, {0, 0}), 0);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-15));
  auto big = ad::softmax(Tensor::from_vector({3}, {1000, 1000, 1000}), 0);
  for (double v : big.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto l3 = ad::softmax(Tensor::from_vector({2}, {0, std::log(3.0)}), 0);
  CHECK(l3[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(l3[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("elementwise examples") {
  CHECK(ad::relu(Tensor::from_vector({3}, {-1, 0, 2})).to_vector() == std::vector<double>{0, 0, 2});
  CHECK(ad::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  auto x = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(ad::sum(x, 0).to_vector() == std::vector<double>{5, 7, 9});
  CHECK(ad::mean(x, 1).to_vector() == std::vector<double>{2, 5});
  CHECK(ad::embedding_lookup(x, 1).to_vector() == std::vector<double>{4, 5, 6});
  CHECK_THROWS_AS(ad::embedding_lookup(x, 2), InputError);
  CHECK_THROWS_AS(ad::add(x, Tensor::zeros({2})), DimensionError);
}

TEST_CASE("broadcast multiply scales each time slice like an explicit loop") {
  Rng rng(2);
  const std::size_t c = 3, s = 4, p = 5;
  auto x = test::randn(rng, {c, s, p});
  auto t = test::randn(rng, {s});
  auto y = ad::mul(x, ad::reshape(t, {s, 1}));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < p; ++k) {
        const std::size_t at = (i * s + j) * p + k;
        CHECK(y[at] == x[at] * t[j]);
      }
}

TEST_CASE("backward examples") {
  auto x = Tensor::from_vector({2}, {1, 2}, true);
  ad::backward(ad::sum_all(ad::mul(x, x)));
  CHECK(x.to_vector() == std::vector<double>{1, 2});
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4});

  Rng rng(3);
  auto w = test::randn(rng, {4}), v = test::randn(rng, {4});
  CHECK(ad::grad_check([&] { return ad::sigmoid(ad::sum_all(ad::mul(w, v))); }, {w, v}) <= 1e-6);

  auto used = Tensor::from_vector({2}, {1, 1}, true);
  auto unused = Tensor::from_vector({3}, {1, 2, 3}, true);
  ad::backward(ad::sum_all(used));
  for (double g : unused.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(ad::backward(x), ContractError);
  CHECK_THROWS_AS(ad::backward(Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  auto x = Tensor::from_vector({1}, {3}, true);
  ad::backward(ad::sum_all(ad::scale(x, 2.0)));
  ad::backward(ad::sum_all(ad::scale(x, 2.0)));
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard records nothing") {
  auto x = Tensor::from_vector({2}, {1, 2}, true);
  ad::NoGradGuard guard;
  auto y = ad::mul(x, x);
  CHECK_FALSE(y.tracks());
}

TEST_CASE("grad_check of a linear function is exact") {
  Rng rng(4);
  auto x = test::randn(rng, {3, 3});
  CHECK(ad::grad_check([](const Tensor& t) { return ad::sum_all(t); }, x) <= 1e-10);
  CHECK_THROWS_AS(ad::grad_check([](const Tensor& t) { return ad::sum_all(t); }, x, 1e-2), InputError);
}

TEST_CASE("corrupted backward rule is caught") {
  Rng rng(5);
  auto a = test::randn(rng, {3, 3}), b = test::randn(rng, {3, 2});
  ad::testing::corrupt_backward("matmul");
  const double err = ad::grad_check([&] { return ad::sum_all(ad::matmul(a, b)); }, {a, b});
  ad::testing::corrupt_backward("");
  CHECK(err > 1e-2);
}

TEST_CASE("non-finite values are rejected at the op") {
  auto x = Tensor::from_vector({1}, {-1.0});
  CHECK_THROWS_AS(ad::log(x), NumericalError);
}

TEST_CASE("memory accounting tracks live and peak bytes") {
  ad::memory::reset_peak();
  const std::size_t before = ad::memory::live_bytes();
  {
    auto big = Tensor::zeros({1000});
    CHECK(ad::memory::live_bytes() >= before + 8000);
  }
  CHECK(ad::memory::live_bytes() == before);
  CHECK(ad::memory::peak_bytes() >= before + 8000);
}

TEST_CASE("checkpoint round trip and corruption") {
  TensorMap m;
  m["a"] = Tensor::from_vector({2, 2}, {1, 2, 3, 4.5});
  m["b/c"] = Tensor::scalar(-0.25);
  const std::string bytes = checkpoint::encode(m);
  CHECK(bytes.substr(0, 8) == "TRIKIT01");
  auto back = checkpoint::decode(bytes);
  CHECK(back.size() == 2);
  CHECK(back["a"].to_vector() == m["a"].to_vector());
  CHECK(back["a"].shape() == m["a"].shape());
  CHECK(back["b/c"].item() == -0.25);
  CHECK(checksum(back) == checksum(m));
  CHECK(checksum(back, "b/") != checksum(back));
  CHECK_THROWS_AS(checkpoint::decode("NOTAKIT1"), CheckpointError);
  CHECK_THROWS_AS(checkpoint::decode(bytes.substr(0, bytes.size() - 3)), CheckpointError);
}

TEST_CASE("parameter store assignment") {
  ParameterStore store;
  store.add("w", Tensor::zeros({2}, true));
  TensorMap src;
  src["w"] = Tensor::from_vector({2}, {1, 2});
  src["extra"] = Tensor::scalar(1.0);
  auto unused = store.assign(src, true);
  CHECK(unused == std::vector<std::string>{"extra"});
  CHECK(store.get("w").to_vector() == std::vector<double>{1, 2});
  CHECK(store.get("w").tracks());
  TensorMap wrong;
  wrong["w"] = Tensor::zeros({3});
  CHECK_THROWS_AS(store.assign(wrong, false), CheckpointError);
  CHECK_THROWS_AS(store.assign({}, true), CheckpointError);
}
