#include "bgnn/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <tuple>
#include <vector>

namespace bgnn {

namespace detail {

const GaussLegendre64& gauss_legendre_64() {
  static const GaussLegendre64 rule = [] {
    GaussLegendre64 r{};
    constexpr int n = 64;
    for (int i = 0; i < n; ++i) {
      // Newton iteration on P_n from the Chebyshev-like initial guess.
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = pk;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double step = p1 / dp;
        x -= step;
        if (std::abs(step) < 1e-16) break;
      }
      r.node[i] = x;
      r.weight[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
  }();
  return rule;
}

}  // namespace detail

namespace {

/// Streaming mean and central moments up to order four.
class MomentAccumulator {
public:
  explicit MomentAccumulator(std::size_t size) : mean_(size), m2_(size), m3_(size), m4_(size) {}

  void add(std::span<const double> x) {
    ++n_;
    const double n = static_cast<double>(n_);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double delta = x[k] - mean_[k];
      const double dn = delta / n;
      const double dn2 = dn * dn;
      const double term1 = delta * dn * (n - 1.0);
      mean_[k] += dn;
      m4_[k] += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2_[k] - 4.0 * dn * m3_[k];
      m3_[k] += term1 * dn * (n - 2.0) - 3.0 * dn * m2_[k];
      m2_[k] += term1;
    }
  }

  void finish(std::size_t rows, std::size_t cols, OracleEstimate& out) const {
    const double n = static_cast<double>(n_);
    out.samples = n_;
    out.mean = Matrix(rows, cols, mean_);
    out.var = Matrix(rows, cols);
    out.mean_se = Matrix(rows, cols);
    out.var_se = Matrix(rows, cols);
    for (std::size_t k = 0; k < mean_.size(); ++k) {
      const double var = m2_[k] / (n - 1.0);
      const double pop2 = m2_[k] / n;
      const double pop4 = m4_[k] / n;
      out.var.values()[k] = var;
      out.mean_se.values()[k] = std::sqrt(var / n);
      out.var_se.values()[k] = std::sqrt(std::max(0.0, pop4 - pop2 * pop2) / n);
    }
  }

private:
  std::size_t n_ = 0;
  std::vector<double> mean_, m2_, m3_, m4_;
};

Graph realize_links(const Graph& g, RngStream& rng) {
  Graph out = g;
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    for (const Neighbor& nb : g.adjacency[u]) {
      if (!g.directed && nb.id < u) continue;
      if (rng.bernoulli(nb.prob)) edges.emplace_back(u, nb.id, 1.0);
    }
  }
  out.adjacency = build_adjacency(g.num_nodes(), edges, g.directed);
  return out;
}

}  // namespace

namespace {

/// Deterministic forward pass over all nodes with weights masked once and
/// every intermediate held in preallocated buffers.
class Evaluator {
public:
  Evaluator(const ModelParams& params, const Graph& g, const DropoutMask* mask) : g_(&g) {
    const std::size_t n = g.num_nodes();
    for (std::size_t i = 0; i < params.embed.size(); ++i) {
      embed_.push_back(masked(params.embed[i], embed_mask(mask, i)));
    }
    for (std::size_t i = 0; i < params.mlp.size(); ++i) {
      mlp_.push_back(masked(params.mlp[i], mlp_mask(mask, i)));
    }
    layers_.emplace_back(n, params.input_dim());
    for (const auto& l : embed_) {
      agg_.emplace_back(n, l.in_dim());
      layers_.emplace_back(n, l.out_dim());
    }
    for (const auto& l : mlp_) {
      if (l.activation != Activation::softmax) layers_.emplace_back(n, l.out_dim());
    }
    logits_ = Matrix(n, params.num_classes());
    probs_ = Matrix(n, params.num_classes());
  }

  Matrix& input() { return layers_.front(); }

  void run() {
    const std::size_t n = g_->num_nodes();
    for (std::size_t i = 0; i < embed_.size(); ++i) {
      const Matrix& h = layers_[i];
      Matrix& agg = agg_[i];
      Matrix& out = layers_[i + 1];
      agg.fill(0.0);
      for (std::size_t u = 0; u < n; ++u) {
        const auto& nbrs = g_->adjacency[u];
        if (nbrs.empty()) continue;
        double* a = agg.row(u).data();
        for (const Neighbor& nb : nbrs) {
          const double* src = h.row(nb.id).data();
          for (std::size_t c = 0; c < h.cols(); ++c) a[c] += nb.prob * src[c];
        }
        const double inv = 1.0 / static_cast<double>(nbrs.size());
        for (std::size_t c = 0; c < h.cols(); ++c) a[c] *= inv;
      }
      const Matrix& cw = embed_[i].combine;
      const Matrix& aw = embed_[i].aggregate;
      for (std::size_t u = 0; u < n; ++u) {
        const double* x = h.row(u).data();
        const double* a = agg.row(u).data();
        for (std::size_t o = 0; o < out.cols(); ++o) {
          const double* cr = cw.row(o).data();
          const double* ar = aw.row(o).data();
          // Same accumulation order as combine_projection.
          double acc = 0.0;
          for (std::size_t k = 0; k < h.cols(); ++k)
            if (x[k] != 0.0) acc += x[k] * cr[k];
          for (std::size_t k = 0; k < h.cols(); ++k)
            if (a[k] != 0.0) acc += a[k] * ar[k];
          out(u, o) = acc;
        }
      }
    }
    std::size_t cur = embed_.size();
    for (const DenseLayer& l : mlp_) {
      const Matrix& h = layers_[cur];
      const bool last = l.activation == Activation::softmax;
      Matrix& out = last ? logits_ : layers_[cur + 1];
      for (std::size_t u = 0; u < n; ++u) {
        const double* x = h.row(u).data();
        for (std::size_t o = 0; o < l.out_dim(); ++o) {
          const double* w = l.weight.row(o).data();
          double acc = l.bias[o];
          for (std::size_t k = 0; k < l.in_dim(); ++k)
            if (x[k] != 0.0) acc += x[k] * w[k];
          if (l.activation == Activation::relu) acc = acc > 0.0 ? acc : 0.0;
          out(u, o) = acc;
        }
      }
      if (last) {
        probs_ = softmax_rows(logits_);
      } else {
        ++cur;
      }
    }
  }

  const Matrix& at(LayerTap tap) const {
    switch (tap.kind) {
      case LayerTap::Kind::layer:
        if (tap.index >= layers_.size()) throw ArgumentError("layer tap out of range");
        return layers_[tap.index];
      case LayerTap::Kind::logits: return logits_;
      case LayerTap::Kind::probabilities: return probs_;
    }
    throw ArgumentError("unknown tap");
  }

private:
  const Graph* g_;
  std::vector<EmbedLayer> embed_;
  std::vector<DenseLayer> mlp_;
  std::vector<Matrix> layers_, agg_;
  Matrix logits_, probs_;
};

}  // namespace

std::vector<OracleEstimate> oracle_moments(const ModelParams& params, const Graph& g,
                                           const Matrix& input_means,
                                           const Matrix& input_variances, std::size_t samples,
                                           std::uint64_t seed, const std::vector<LayerTap>& taps,
                                           const OracleOptions& options) {
  if (samples < 100) throw ArgumentError("oracle needs at least 100 samples");
  if (taps.empty()) throw ArgumentError("no layer tap requested");
  validate(params);
  check_moments({input_means, input_variances});
  if (input_means.rows() != g.num_nodes() || input_means.cols() != params.input_dim()) {
    throw ShapeError("input moments must be n x d");
  }
  std::vector<double> sd(input_variances.size());
  for (std::size_t k = 0; k < sd.size(); ++k) sd[k] = std::sqrt(input_variances.values()[k]);

  std::optional<Evaluator> fixed;
  if (!options.bernoulli_links) fixed.emplace(params, g, options.mask);
  std::vector<MomentAccumulator> acc;
  for (LayerTap tap : taps) {
    if (fixed) acc.emplace_back(fixed->at(tap).size());
  }
  Matrix draw(input_means.rows(), input_means.cols());
  std::optional<Graph> realized;
  std::optional<Evaluator> per_draw;
  for (std::size_t s = 0; s < samples; ++s) {
    RngStream rng(seed, s);
    for (std::size_t k = 0; k < sd.size(); ++k) {
      draw.values()[k] = sd[k] == 0.0 ? input_means.values()[k]
                                      : input_means.values()[k] + sd[k] * rng.standard_normal();
    }
    Evaluator* ev = nullptr;
    if (fixed) {
      ev = &*fixed;
    } else {
      realized = realize_links(g, rng);
      per_draw.emplace(params, *realized, options.mask);
      ev = &*per_draw;
      if (acc.empty()) {
        for (LayerTap tap : taps) acc.emplace_back(ev->at(tap).size());
      }
    }
    ev->input() = draw;
    ev->run();
    for (std::size_t t = 0; t < taps.size(); ++t) acc[t].add(ev->at(taps[t]).values());
  }
  std::vector<OracleEstimate> out(taps.size());
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const Matrix& shape = fixed ? fixed->at(taps[t]) : per_draw->at(taps[t]);
    acc[t].finish(shape.rows(), shape.cols(), out[t]);
  }
  return out;
}

OracleEstimate oracle_moments(const ModelParams& params, const Graph& g, const Matrix& input_means,
                              const Matrix& input_variances, std::size_t samples,
                              std::uint64_t seed, LayerTap tap, const OracleOptions& options) {
  return oracle_moments(params, g, input_means, input_variances, samples, seed,
                        std::vector<LayerTap>{tap}, options)
      .front();
}

Moments adf_moments_at(const AdfOutput& out, LayerTap tap) {
  switch (tap.kind) {
    case LayerTap::Kind::layer:
      if (tap.index >= out.layers.size()) {
        throw ArgumentError("layer tap out of range (run adf_forward with keep_layers)");
      }
      return out.layers[tap.index];
    case LayerTap::Kind::logits: return out.logits;
    case LayerTap::Kind::probabilities: return out.probabilities;
  }
  throw ArgumentError("unknown tap");
}

ScalarMoments relu_quadrature(double mean, double var) {
  if (!(var > 0.0)) throw ArgumentError("relu_quadrature: variance must be positive");
  constexpr double tail = 40.0;  // density below 1e-347 beyond |z| = 40
  const double sigma = std::sqrt(var);
  const double kink = -mean / sigma;  // X > 0 exactly when z > kink
  const double lo = std::max(kink, -tail);
  if (lo >= tail) return {0.0, 0.0};
  const auto panels = static_cast<std::size_t>(std::ceil(tail - lo));
  auto density = [](double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  };
  const double first = integrate([&](double z) { return (mean + sigma * z) * density(z); }, lo,
                                 tail, panels);
  const double second = integrate(
      [&](double z) {
        const double x = mean + sigma * z;
        return x * x * density(z);
      },
      lo, tail, panels);
  return {first, std::max(0.0, second - first * first)};
}

}  // namespace bgnn
