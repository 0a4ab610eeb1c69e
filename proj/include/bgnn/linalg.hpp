#pragma once

// Dense numerical substrate: row-major matrices, seeded RNG streams and the
// Gaussian special functions used by moment matching.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bgnn/errors.hpp"

namespace bgnn {

using Vector = std::vector<double>;

class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double value);
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix transpose(const Matrix& m);

/// a * b. Rows of `a` are processed independently and zero entries of `a`
/// are skipped, so sparse inputs (bag-of-words features) stay cheap.
Matrix matmul(const Matrix& a, const Matrix& b);

/// out += a * b
void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& out);

/// a^T * b without materializing the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);

/// a * b^T without materializing the transpose.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

/// Elementwise square.
Matrix squared(const Matrix& m);

/// Copy of `m` with column j scaled by scale[j].
Matrix scale_columns(const Matrix& m, std::span<const double> scale);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

double max_abs_diff(const Matrix& a, const Matrix& b);

/// Standard normal CDF, accurate to double rounding across the real line.
double std_normal_cdf(double x) noexcept;

/// Standard normal density.
double std_normal_pdf(double x) noexcept;

/// Deterministic random stream keyed by (seed, stream id). Streams with
/// different ids are seeded through a seed sequence and are independent for
/// all practical purposes. Single owner; not thread safe.
class RngStream {
public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Uniform in [0, 1).
  double uniform();
  double standard_normal();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  bool bernoulli(double p);
  std::uint64_t next_u64() { return engine_(); }

  /// A child stream derived from this stream's key; does not advance `this`.
  RngStream derive(std::uint64_t child) const;

  std::mt19937_64& engine() noexcept { return engine_; }

private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Draw from N(mean, variance). Zero variance returns `mean` exactly and does
/// not consume randomness.
double sample_gaussian(RngStream& rng, double mean, double variance);

}  // namespace bgnn
