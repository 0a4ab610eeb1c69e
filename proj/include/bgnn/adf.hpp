#pragma once

// Assumed Density Filtering forward pass. Every activation is summarized by a
// factorized Gaussian (one mean and one variance per node and unit) and each
// layer maps input moments to moment-matched output moments.

#include <utility>
#include <vector>

#include "bgnn/graph.hpp"
#include "bgnn/linalg.hpp"
#include "bgnn/model.hpp"

namespace bgnn {

/// Variances below this are treated as exact zeros by the ReLU rule and as
/// the floor wherever a variance is divided by.
inline constexpr double kVarianceFloor = 1e-12;

/// Per-node moments of one layer; row u belongs to node u.
struct Moments {
  Matrix mean;
  Matrix var;
};

/// Throws ArgumentError on a negative or NaN variance, ShapeError when the
/// two matrices disagree.
void check_moments(const Moments& m);

struct ScalarMoments {
  double mean = 0.0;
  double var = 0.0;
};

/// Mean and variance of max(X, 0) for X ~ N(mean, var).
ScalarMoments relu_moments(double mean, double var);

/// Elementwise relu_moments over a moment matrix.
Moments relu_moments(const Moments& in);

/// Class-probability moments from logit moments: softmax of the mean logits
/// and first-order (delta method) variances var_c = sum_j J_cj^2 v_j with
/// J = diag(s) - s s^T.
Moments softmax_moments(const Moments& logits);

/// One embedding layer. mean: combine mu_u + aggregate * mean_v p_uv mu_v.
/// var: combine^2 v_u + aggregate^2 * (1/|N(u)|^2) sum_v p_uv^2 v_v, with
/// squares taken elementwise (diagonal covariance).
Moments adf_embed_layer(const Moments& prev, const Graph& g, const Matrix& combine,
                        const Matrix& aggregate, const Vector* mask = nullptr);

/// mean' = W mean + b, var' = (W o W) var.
Moments adf_affine(const Moments& in, const Matrix& weight, const Vector& bias,
                   const Vector* mask = nullptr);

struct AdfOutput {
  Moments probabilities;  ///< n x C class-probability moments
  Moments logits;         ///< n x C pre-softmax moments
  /// layers[0] is the input, layers[i] for 1 <= i < L the output of layer i.
  /// Only filled when requested.
  std::vector<Moments> layers;
};

/// Embedding layers, then affine + ReLU moment matching for each hidden MLP
/// layer, then the output affine layer and softmax_moments.
AdfOutput adf_forward(const ModelParams& params, const Graph& g, const Matrix& input_means,
                      const Matrix& input_variances, const DropoutMask* mask = nullptr,
                      bool keep_layers = false);

/// First-layer products of a fixed input, reusable across dropout masks.
/// A mask only rescales weight columns, so the masked product equals
/// keep_scale * (full product - contribution of dropped columns), which costs
/// time proportional to the dropped columns.
class InputProjection {
public:
  InputProjection(const ModelParams& params, const Graph& g, const Matrix& input_means,
                  const Matrix& input_variances);

  /// Moments after the first embedding layer for `mask` (may be null).
  Moments first_layer(const Vector* mask) const;

private:
  const ModelParams* params_;
  Matrix self_mean_, agg_mean_, self_var_, agg_var_;
  Matrix combine_t_, aggregate_t_, combine_sq_t_, aggregate_sq_t_;
  // per-row values when every row of the variance input is constant, else empty
  std::vector<double> self_var_rows_, agg_var_rows_;
  Moments unmasked_;
};

/// adf_forward with the first embedding layer taken from `projection`.
AdfOutput adf_forward(const ModelParams& params, const Graph& g, const InputProjection& projection,
                      const DropoutMask* mask = nullptr);

}  // namespace bgnn
