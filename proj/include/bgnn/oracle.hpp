#pragma once

// Brute-force ground truth for the moment propagation: sample the feature
// noise, run the deterministic network, and measure empirical moments.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bgnn/adf.hpp"
#include "bgnn/graph.hpp"
#include "bgnn/model.hpp"

namespace bgnn {

/// Which intermediate the oracle measures.
struct LayerTap {
  enum class Kind { layer, logits, probabilities };
  Kind kind = Kind::probabilities;
  std::size_t index = 0;  ///< for Kind::layer: 0 = input, i = output of layer i (i < L)

  static LayerTap layer(std::size_t i) { return {Kind::layer, i}; }
  static LayerTap logits() { return {Kind::logits, 0}; }
  static LayerTap probabilities() { return {Kind::probabilities, 0}; }
};

struct OracleEstimate {
  Matrix mean;
  Matrix var;      ///< unbiased sample variance
  Matrix mean_se;  ///< standard error of `mean`
  Matrix var_se;   ///< standard error of `var` from the fourth central moment
  std::size_t samples = 0;
};

struct OracleOptions {
  const DropoutMask* mask = nullptr;  ///< fixed weight mask applied to every draw
  /// Experimental: also realize each undirected link with its probability and
  /// aggregate realized links with weight 1. Not the model the ADF rules
  /// describe.
  bool bernoulli_links = false;
};

/// Draw s uses RngStream(seed, s) for its feature noise (and link draws).
OracleEstimate oracle_moments(const ModelParams& params, const Graph& g, const Matrix& input_means,
                              const Matrix& input_variances, std::size_t samples,
                              std::uint64_t seed, LayerTap tap = LayerTap::probabilities(),
                              const OracleOptions& options = {});

/// Several taps from one set of draws; result i belongs to taps[i].
std::vector<OracleEstimate> oracle_moments(const ModelParams& params, const Graph& g,
                                           const Matrix& input_means,
                                           const Matrix& input_variances, std::size_t samples,
                                           std::uint64_t seed, const std::vector<LayerTap>& taps,
                                           const OracleOptions& options = {});

/// The matching ADF quantity for a tap (probabilities, logits or layer i).
Moments adf_moments_at(const AdfOutput& out, LayerTap tap);

/// E[max(X,0)] and Var[max(X,0)] for X ~ N(mean, var) by composite
/// Gauss-Legendre quadrature of the Gaussian density over the region where
/// the rectifier is active, so the kink never falls inside a panel.
ScalarMoments relu_quadrature(double mean, double var);

/// Integral of f over [a, b] by composite Gauss-Legendre (64 nodes per panel).
template <typename F>
double integrate(F&& f, double a, double b, std::size_t panels);

namespace detail {
struct GaussLegendre64 {
  double node[64];
  double weight[64];
};
const GaussLegendre64& gauss_legendre_64();
}  // namespace detail

template <typename F>
double integrate(F&& f, double a, double b, std::size_t panels) {
  const auto& gl = detail::gauss_legendre_64();
  const double width = (b - a) / static_cast<double>(panels);
  double total = 0.0;
  for (std::size_t p = 0; p < panels; ++p) {
    const double lo = a + width * static_cast<double>(p);
    const double half = 0.5 * width;
    const double mid = lo + half;
    double acc = 0.0;
    for (int k = 0; k < 64; ++k) acc += gl.weight[k] * f(mid + half * gl.node[k]);
    total += half * acc;
  }
  return total;
}

}  // namespace bgnn
