#include "bgnn/adf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bgnn {

void check_moments(const Moments& m) {
  if (m.mean.rows() != m.var.rows() || m.mean.cols() != m.var.cols()) {
    throw ShapeError("mean and variance matrices differ in shape");
  }
  for (double v : m.var.values()) {
    if (!(v >= 0.0)) throw ArgumentError("negative or NaN input variance");
  }
}

ScalarMoments relu_moments(double mean, double var) {
  if (!(var >= 0.0)) throw ArgumentError("relu_moments: negative variance");
  if (var < kVarianceFloor) return {mean > 0.0 ? mean : 0.0, 0.0};
  const double sigma = std::sqrt(var);
  const double t = mean / sigma;
  const double cdf = std_normal_cdf(t);
  const double pdf = std_normal_pdf(t);
  const double first = mean * cdf + sigma * pdf;
  const double second = (mean * mean + var) * cdf + mean * sigma * pdf;
  return {first, std::max(0.0, second - first * first)};
}

Moments relu_moments(const Moments& in) {
  Moments out{Matrix(in.mean.rows(), in.mean.cols()), Matrix(in.var.rows(), in.var.cols())};
  for (std::size_t k = 0; k < in.mean.size(); ++k) {
    const auto r = relu_moments(in.mean.values()[k], in.var.values()[k]);
    out.mean.values()[k] = r.mean;
    out.var.values()[k] = r.var;
  }
  return out;
}

Moments softmax_moments(const Moments& logits) {
  check_moments(logits);
  Moments out{softmax_rows(logits.mean), Matrix(logits.mean.rows(), logits.mean.cols())};
  const std::size_t classes = logits.mean.cols();
  for (std::size_t r = 0; r < logits.mean.rows(); ++r) {
    auto s = out.mean.row(r);
    auto v = logits.var.row(r);
    auto dst = out.var.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < classes; ++j) {
        const double jac = (c == j ? s[c] : 0.0) - s[c] * s[j];
        acc += jac * jac * v[j];
      }
      dst[c] = acc;
    }
  }
  return out;
}

Moments adf_embed_layer(const Moments& prev, const Graph& g, const Matrix& combine,
                        const Matrix& aggregate, const Vector* mask) {
  check_moments(prev);
  if (prev.mean.rows() != g.num_nodes()) throw ShapeError("moments do not cover every node");
  if (combine.cols() != prev.mean.cols() || aggregate.cols() != prev.mean.cols() ||
      combine.rows() != aggregate.rows()) {
    throw ShapeError("embedding weights do not match input width");
  }
  const NodeSet all = NodeSet::all(g.num_nodes());
  const EmbedLayer w = masked(EmbedLayer{combine, aggregate}, mask);
  Moments out;
  out.mean = combine_projection(prev.mean, neighbor_mean(g, prev.mean, all, all), w.combine,
                                w.aggregate);
  out.var = combine_projection(prev.var, neighbor_variance(g, prev.var, all, all),
                               squared(w.combine), squared(w.aggregate));
  return out;
}

Moments adf_affine(const Moments& in, const Matrix& weight, const Vector& bias, const Vector* mask) {
  check_moments(in);
  if (weight.cols() != in.mean.cols() || bias.size() != weight.rows()) {
    throw ShapeError("affine layer does not match input width");
  }
  const Matrix w = mask == nullptr ? weight : scale_columns(weight, *mask);
  Moments out;
  out.mean = affine(in.mean, w, bias);
  out.var = matmul(in.var, transpose(squared(w)));
  return out;
}

namespace {

std::vector<double> constant_rows(const Matrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (double x : row) {
      if (x != row[0]) return {};
    }
    out[r] = row.empty() ? 0.0 : row[0];
  }
  return out;
}

AdfOutput finish_forward(const ModelParams& params, const Graph& g, Moments h,
                         std::size_t first_embed, const DropoutMask* mask, AdfOutput out,
                         bool keep_layers) {
  for (std::size_t i = first_embed; i < params.embed.size(); ++i) {
    h = adf_embed_layer(h, g, params.embed[i].combine, params.embed[i].aggregate,
                        embed_mask(mask, i));
    if (keep_layers) out.layers.push_back(h);
  }
  for (std::size_t i = 0; i < params.mlp.size(); ++i) {
    const DenseLayer& layer = params.mlp[i];
    h = adf_affine(h, layer.weight, layer.bias, mlp_mask(mask, i));
    if (layer.activation == Activation::softmax) {
      out.probabilities = softmax_moments(h);
      out.logits = std::move(h);
      break;
    }
    if (layer.activation == Activation::relu) h = relu_moments(h);
    if (keep_layers) out.layers.push_back(h);
  }
  return out;
}

}  // namespace

AdfOutput adf_forward(const ModelParams& params, const Graph& g, const Matrix& input_means,
                      const Matrix& input_variances, const DropoutMask* mask, bool keep_layers) {
  validate(params);
  if (input_means.rows() != g.num_nodes() || input_means.cols() != params.input_dim()) {
    throw ShapeError("input moments must be n x d");
  }
  Moments h{input_means, input_variances};
  check_moments(h);
  AdfOutput out;
  if (keep_layers) out.layers.push_back(h);
  return finish_forward(params, g, std::move(h), 0, mask, std::move(out), keep_layers);
}

InputProjection::InputProjection(const ModelParams& params, const Graph& g,
                                 const Matrix& input_means, const Matrix& input_variances)
    : params_(&params) {
  validate(params);
  if (params.embed.empty()) throw ArgumentError("InputProjection needs an embedding layer");
  if (input_means.rows() != g.num_nodes() || input_means.cols() != params.input_dim()) {
    throw ShapeError("input moments must be n x d");
  }
  check_moments({input_means, input_variances});
  const NodeSet all = NodeSet::all(g.num_nodes());
  const EmbedLayer& first = params.embed.front();
  self_mean_ = input_means;
  agg_mean_ = neighbor_mean(g, input_means, all, all);
  self_var_ = input_variances;
  agg_var_ = neighbor_variance(g, input_variances, all, all);
  combine_t_ = transpose(first.combine);
  aggregate_t_ = transpose(first.aggregate);
  combine_sq_t_ = transpose(squared(first.combine));
  aggregate_sq_t_ = transpose(squared(first.aggregate));
  self_var_rows_ = constant_rows(self_var_);
  agg_var_rows_ = constant_rows(agg_var_);
  unmasked_.mean = combine_projection(self_mean_, agg_mean_, first.combine, first.aggregate);
  unmasked_.var = combine_projection(self_var_, agg_var_, squared(first.combine),
                                     squared(first.aggregate));
}

Moments InputProjection::first_layer(const Vector* mask) const {
  if (mask == nullptr) return unmasked_;
  if (mask->size() != self_mean_.cols()) throw ShapeError("mask length != input width");

  // Masks from sample_dropout_mask hold only 0 and one keep scale; anything
  // else takes the direct route.
  double keep = 0.0;
  bool two_valued = true;
  std::vector<std::size_t> dropped;
  for (std::size_t k = 0; k < mask->size(); ++k) {
    const double m = (*mask)[k];
    if (m == 0.0) {
      dropped.push_back(k);
    } else if (keep == 0.0) {
      keep = m;
    } else if (m != keep) {
      two_valued = false;
      break;
    }
  }
  if (!two_valued || keep == 0.0) {
    const EmbedLayer& first = params_->embed.front();
    const EmbedLayer w = masked(first, mask);
    return {combine_projection(self_mean_, agg_mean_, w.combine, w.aggregate),
            combine_projection(self_var_, agg_var_, squared(w.combine), squared(w.aggregate))};
  }

  Moments out = unmasked_;
  const std::size_t width = out.mean.cols();
  auto subtract = [&](Matrix& dst, const Matrix& src, const Matrix& weight_t) {
    for (std::size_t r = 0; r < dst.rows(); ++r) {
      auto row = dst.row(r);
      auto in = src.row(r);
      for (std::size_t k : dropped) {
        const double a = in[k];
        if (a == 0.0) continue;
        auto w = weight_t.row(k);
        for (std::size_t c = 0; c < width; ++c) row[c] -= a * w[c];
      }
    }
  };
  subtract(out.mean, self_mean_, combine_t_);
  subtract(out.mean, agg_mean_, aggregate_t_);
  auto subtract_rows = [&](Matrix& dst, const std::vector<double>& level, const Matrix& weight_t) {
    Vector dropped_sum(width, 0.0);
    for (std::size_t k : dropped) {
      auto w = weight_t.row(k);
      for (std::size_t c = 0; c < width; ++c) dropped_sum[c] += w[c];
    }
    for (std::size_t r = 0; r < dst.rows(); ++r) {
      if (level[r] == 0.0) continue;
      auto row = dst.row(r);
      for (std::size_t c = 0; c < width; ++c) row[c] -= level[r] * dropped_sum[c];
    }
  };
  if (self_var_rows_.empty()) {
    subtract(out.var, self_var_, combine_sq_t_);
  } else {
    subtract_rows(out.var, self_var_rows_, combine_sq_t_);
  }
  if (agg_var_rows_.empty()) {
    subtract(out.var, agg_var_, aggregate_sq_t_);
  } else {
    subtract_rows(out.var, agg_var_rows_, aggregate_sq_t_);
  }
  const double keep_sq = keep * keep;
  for (double& x : out.mean.values()) x *= keep;
  for (double& x : out.var.values()) x = std::max(0.0, x * keep_sq);
  return out;
}

AdfOutput adf_forward(const ModelParams& params, const Graph& g, const InputProjection& projection,
                      const DropoutMask* mask) {
  return finish_forward(params, g, projection.first_layer(embed_mask(mask, 0)), 1, mask, {},
                        false);
}

}  // namespace bgnn
