#include <catch2/catch_amalgamated.hpp>

#include "ssnl/rng.hpp"
#include "ssnl/tensor.hpp"

using namespace ssnl;

namespace {

// Independent reference product: plain i-j-k triple loop.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()}, 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < a.cols(); ++l) acc += a.at(i, l) * b.at(l, j);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace

TEST_CASE("scalar and shape basics") {
  Tensor s = Tensor::scalar(2.5);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.value() == 2.5);

  Tensor v = Tensor::vec({1.0, 2.0, 3.0});
  CHECK(v.rank() == 1);
  CHECK(v.rows() == 3);
  CHECK(v.cols() == 1);

  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.at(0, 2) == 3.0);
  CHECK(m.at(1, 0) == 4.0);
  CHECK_THROWS_AS(m.value(), ShapeError);
  CHECK_THROWS_AS(Tensor::matrix(2, 3, {1, 2, 3}), ShapeError);
}

TEST_CASE("zero-width matrices are legal") {
  Tensor e({5, 0});
  CHECK(e.numel() == 0);
  CHECK(e.rows() == 5);
  CHECK(e.cols() == 0);
  // (5x0) * (0x4) is a 5x4 zero matrix.
  Tensor z = matmul_raw(e, Tensor({0, 4}));
  CHECK(z.rows() == 5);
  CHECK(z.cols() == 4);
  for (double x : z.data()) CHECK(x == 0.0);
}

TEST_CASE("matmul matches hand-computed product") {
  Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::matrix(3, 2, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul_raw(a, b);
  CHECK(c.at(0, 0) == 58.0);
  CHECK(c.at(0, 1) == 64.0);
  CHECK(c.at(1, 0) == 139.0);
  CHECK(c.at(1, 1) == 154.0);
}

TEST_CASE("matmul variants agree with naive reference on random inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::size_t n = 1 + rng.randint(8), k = 1 + rng.randint(8), m = 1 + rng.randint(8);
    Tensor a = rng.normal_tensor({n, k});
    Tensor b = rng.normal_tensor({k, m});
    Tensor ref = naive_matmul(a, b);

    Tensor c1 = matmul_raw(a, b);
    Tensor c2 = matmul_nt_raw(a, transpose(b));
    Tensor c3 = matmul_tn_raw(transpose(a), b);
    for (std::size_t i = 0; i < ref.numel(); ++i) {
      CHECK(c1[i] == Catch::Approx(ref[i]).margin(1e-12));
      CHECK(c2[i] == Catch::Approx(ref[i]).margin(1e-12));
      CHECK(c3[i] == Catch::Approx(ref[i]).margin(1e-12));
    }
  }
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor a({2, 3});
  Tensor b({2, 3});
  CHECK_THROWS_AS(matmul_raw(a, b), ShapeError);
  CHECK_THROWS_AS(matmul_nt_raw(a, Tensor({4, 2})), ShapeError);
  CHECK_THROWS_AS(matmul_tn_raw(a, Tensor({3, 2})), ShapeError);
}

TEST_CASE("all_finite flags NaN and Inf") {
  Tensor t = Tensor::vec({1.0, 2.0});
  CHECK(all_finite(t));
  t[1] = std::nan("");
  CHECK(!all_finite(t));
  t[1] = std::numeric_limits<double>::infinity();
  CHECK(!all_finite(t));
}
