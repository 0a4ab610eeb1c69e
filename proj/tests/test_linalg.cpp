#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bgnn/linalg.hpp"
#include "support.hpp"

using namespace bgnn;

TEST_SUITE("linalg") {

TEST_CASE("normal cdf against quadrature of the density") {
  CHECK(std_normal_cdf(0.0) == 0.5);
  auto density = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  const double ref = 0.5 + testing::adaptive_simpson(density, 0.0, 1.96, 1e-14);
  CHECK(std::abs(std_normal_cdf(1.96) - ref) < 1e-12);
  CHECK(std::abs(std_normal_cdf(1.96) - 0.97500) < 1e-5);
  CHECK(std_normal_cdf(-8.0) < 1e-14);
  CHECK(std_normal_cdf(-8.0) > 0.0);
  for (double x : {-6.0, -3.0, -1.0, -0.25, 0.5, 2.0, 4.0}) {
    const double q = x < 0 ? 0.5 - testing::adaptive_simpson(density, x, 0.0, 1e-15)
                           : 0.5 + testing::adaptive_simpson(density, 0.0, x, 1e-15);
    CHECK(std::abs(std_normal_cdf(x) - q) < 1e-12);
  }
}

TEST_CASE("normal pdf") {
  CHECK(std::abs(std_normal_pdf(0.0) - 0.3989423) < 1e-7);
  CHECK(std_normal_pdf(3.0) == std_normal_pdf(-3.0));
  CHECK(std_normal_pdf(40.0) >= 0.0);
  CHECK(std_normal_pdf(40.0) < 1e-300);
}

TEST_CASE("gaussian sampling") {
  RngStream a(7, 3);
  CHECK(sample_gaussian(a, 5.0, 0.0) == 5.0);
  CHECK_THROWS_AS(sample_gaussian(a, 0.0, -1.0), ArgumentError);

  RngStream rng(2024, 1);
  const std::size_t n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = sample_gaussian(rng, 0.0, 1.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("streams are reproducible and distinct") {
  RngStream a(11, 4), b(11, 4), c(11, 5), d(12, 4);
  const double x = a.standard_normal();
  CHECK(x == b.standard_normal());
  CHECK(x != c.standard_normal());
  CHECK(x != d.standard_normal());
  RngStream e(1, 1);
  for (int i = 0; i < 10000; ++i) {
    const double u = e.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(e.index(7) < 7);
  }
  const RngStream parent(3, 3);
  CHECK(parent.derive(1).seed() == parent.derive(1).seed());
  CHECK(parent.derive(1).stream_id() != parent.derive(2).stream_id());
}

TEST_CASE("matrix products agree with the naive triple loop") {
  RngStream rng(5, 0);
  Matrix a(4, 6), b(6, 3);
  for (double& x : a.values()) x = rng.uniform() < 0.3 ? 0.0 : rng.standard_normal();
  for (double& x : b.values()) x = rng.standard_normal();
  Matrix naive(4, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 6; ++k) naive(i, j) += a(i, k) * b(k, j);
  CHECK(max_abs_diff(matmul(a, b), naive) < 1e-12);
  CHECK(max_abs_diff(matmul_at_b(transpose(a), b), naive) < 1e-12);
  CHECK(max_abs_diff(matmul_a_bt(a, transpose(b)), naive) < 1e-12);
  Matrix acc = naive;
  matmul_accumulate(a, b, acc);
  Matrix twice = naive;
  for (double& x : twice.values()) x *= 2.0;
  CHECK(max_abs_diff(acc, twice) < 1e-12);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("elementwise helpers") {
  Matrix m(2, 2, {1.0, -2.0, 3.0, -4.0});
  CHECK(squared(m) == Matrix(2, 2, {1.0, 4.0, 9.0, 16.0}));
  const double s[] = {2.0, 0.0};
  CHECK(scale_columns(m, s) == Matrix(2, 2, {2.0, 0.0, 6.0, 0.0}));
  const std::size_t rows[] = {1, 1, 0};
  CHECK(gather_rows(m, rows) == Matrix(3, 2, {3.0, -4.0, 3.0, -4.0, 1.0, -2.0}));
  CHECK(m.all_finite());
  m(0, 0) = NAN;
  CHECK_FALSE(m.all_finite());
}

}
