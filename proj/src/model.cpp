#include "bgnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace bgnn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  throw ArgumentError("unknown activation '" + s + "'");
}

std::vector<std::span<double>> ModelParams::blocks() {
  std::vector<std::span<double>> out;
  for (auto& l : embed) {
    out.push_back(l.combine.values());
    out.push_back(l.aggregate.values());
  }
  for (auto& l : mlp) {
    out.push_back(l.weight.values());
    out.push_back(l.bias);
  }
  return out;
}

std::vector<std::span<const double>> ModelParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : embed) {
    out.push_back(l.combine.values());
    out.push_back(l.aggregate.values());
  }
  for (const auto& l : mlp) {
    out.push_back(l.weight.values());
    out.push_back(l.bias);
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (auto b : blocks()) n += b.size();
  return n;
}

void validate(const ModelParams& params) {
  if (!(params.dropout_rate >= 0.0 && params.dropout_rate < 1.0)) {
    throw ArgumentError("dropout rate must lie in [0, 1)");
  }
  if (params.mlp.empty()) throw ShapeError("model needs at least one MLP (output) layer");
  std::size_t width = params.input_dim();
  for (std::size_t i = 0; i < params.embed.size(); ++i) {
    const auto& l = params.embed[i];
    if (l.in_dim() != width || l.aggregate.cols() != width || l.aggregate.rows() != l.out_dim()) {
      throw ShapeError("embedding layer " + std::to_string(i) + " does not chain");
    }
    width = l.out_dim();
  }
  for (std::size_t i = 0; i < params.mlp.size(); ++i) {
    const auto& l = params.mlp[i];
    if (l.in_dim() != width || l.bias.size() != l.out_dim()) {
      throw ShapeError("MLP layer " + std::to_string(i) + " does not chain");
    }
    const bool last = i + 1 == params.mlp.size();
    if (last != (l.activation == Activation::softmax)) {
      throw ShapeError("softmax must be the activation of the output layer only");
    }
    width = l.out_dim();
  }
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto b : z.blocks()) std::fill(b.begin(), b.end(), 0.0);
  return z;
}

ModelParams init_params(const Architecture& arch, double dropout_rate, std::uint64_t seed) {
  if (arch.input_dim == 0 || arch.num_classes == 0) {
    throw ArgumentError("architecture needs input_dim and num_classes");
  }
  RngStream rng(seed, 1);
  auto glorot = [&rng](std::size_t out, std::size_t in) {
    Matrix w(out, in);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& x : w.values()) x = limit * (2.0 * rng.uniform() - 1.0);
    return w;
  };
  ModelParams p;
  p.dropout_rate = dropout_rate;
  p.seed = seed;
  std::size_t width = arch.input_dim;
  for (std::size_t w : arch.embed_widths) {
    EmbedLayer layer;
    layer.combine = glorot(w, width);
    layer.aggregate = glorot(w, width);
    p.embed.push_back(std::move(layer));
    width = w;
  }
  for (std::size_t w : arch.hidden_widths) {
    p.mlp.push_back({glorot(w, width), Vector(w, 0.0), Activation::relu});
    width = w;
  }
  p.mlp.push_back({glorot(arch.num_classes, width), Vector(arch.num_classes, 0.0),
                   Activation::softmax});
  validate(p);
  return p;
}

DropoutMask sample_dropout_mask(const ModelParams& params, RngStream& rng) {
  const double rate = params.dropout_rate;
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - rate);
  auto draw = [&](std::size_t n) {
    Vector m(n, 1.0);
    if (rate == 0.0) return m;
    for (double& x : m) x = rng.uniform() < rate ? 0.0 : keep_scale;
    return m;
  };
  DropoutMask mask;
  for (const auto& l : params.embed) mask.embed.push_back(draw(l.in_dim()));
  for (const auto& l : params.mlp) mask.mlp.push_back(draw(l.in_dim()));
  return mask;
}

NodeSet::NodeSet(std::size_t universe, std::vector<std::size_t> nodes)
    : nodes_(std::move(nodes)), position_(universe, npos) {
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i] >= universe) throw ArgumentError("node id outside graph");
    position_[nodes_[i]] = i;
  }
}

NodeSet NodeSet::all(std::size_t universe) {
  std::vector<std::size_t> ids(universe);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return NodeSet(universe, std::move(ids));
}

NodeSet NodeSet::expand(const Graph& g) const {
  std::vector<std::size_t> ids = nodes_;
  for (std::size_t u : nodes_)
    for (const Neighbor& nb : g.adjacency[u]) ids.push_back(nb.id);
  return NodeSet(position_.size(), std::move(ids));
}

namespace {

std::size_t require_position(const NodeSet& in, std::size_t node) {
  const std::size_t pos = in.position(node);
  if (pos == NodeSet::npos) throw ArgumentError("input rows do not cover the receptive field");
  return pos;
}

}  // namespace

Matrix gather_self(const Matrix& h, const NodeSet& in, const NodeSet& out) {
  Matrix self(out.size(), h.cols());
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto src = h.row(require_position(in, out.nodes()[r]));
    std::copy(src.begin(), src.end(), self.row(r).begin());
  }
  return self;
}

Matrix neighbor_mean(const Graph& g, const Matrix& h, const NodeSet& in, const NodeSet& out) {
  Matrix agg(out.size(), h.cols());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto& nbrs = g.adjacency[out.nodes()[r]];
    if (nbrs.empty()) continue;
    auto dst = agg.row(r);
    for (const Neighbor& nb : nbrs) {
      auto src = h.row(require_position(in, nb.id));
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += nb.prob * src[c];
    }
    const double inv = 1.0 / static_cast<double>(nbrs.size());
    for (double& x : dst) x *= inv;
  }
  return agg;
}

Matrix neighbor_variance(const Graph& g, const Matrix& v, const NodeSet& in, const NodeSet& out) {
  Matrix agg(out.size(), v.cols());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto& nbrs = g.adjacency[out.nodes()[r]];
    if (nbrs.empty()) continue;
    auto dst = agg.row(r);
    for (const Neighbor& nb : nbrs) {
      auto src = v.row(require_position(in, nb.id));
      const double w = nb.prob * nb.prob;
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * src[c];
    }
    const double deg = static_cast<double>(nbrs.size());
    const double inv = 1.0 / (deg * deg);
    for (double& x : dst) x *= inv;
  }
  return agg;
}

Matrix combine_projection(const Matrix& self, const Matrix& agg, const Matrix& combine,
                          const Matrix& aggregate) {
  Matrix out = matmul(self, transpose(combine));
  matmul_accumulate(agg, transpose(aggregate), out);
  return out;
}

Matrix affine(const Matrix& x, const Matrix& weight, const Vector& bias) {
  Matrix out(x.rows(), weight.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) std::copy(bias.begin(), bias.end(), out.row(r).begin());
  matmul_accumulate(x, transpose(weight), out);
  return out;
}

void relu_inplace(Matrix& m) {
  for (double& x : m.values()) x = x > 0.0 ? x : 0.0;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    auto out = p.row(r);
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      out[c] = std::exp(z[c] - top);
      total += out[c];
    }
    for (double& x : out) x /= total;
  }
  return p;
}

EmbedLayer masked(const EmbedLayer& layer, const Vector* mask) {
  if (mask == nullptr) return layer;
  return {scale_columns(layer.combine, *mask), scale_columns(layer.aggregate, *mask)};
}

DenseLayer masked(const DenseLayer& layer, const Vector* mask) {
  if (mask == nullptr) return layer;
  return {scale_columns(layer.weight, *mask), layer.bias, layer.activation};
}

const Vector* embed_mask(const DropoutMask* mask, std::size_t layer) {
  return mask == nullptr ? nullptr : &mask->embed.at(layer);
}

const Vector* mlp_mask(const DropoutMask* mask, std::size_t layer) {
  return mask == nullptr ? nullptr : &mask->mlp.at(layer);
}

namespace {

void check_features(const ModelParams& params, const Graph& g, const Matrix& features) {
  if (features.rows() != g.num_nodes() || features.cols() != params.input_dim()) {
    throw ShapeError("feature matrix is " + std::to_string(features.rows()) + "x" +
                     std::to_string(features.cols()) + ", expected " +
                     std::to_string(g.num_nodes()) + "x" + std::to_string(params.input_dim()));
  }
}

void apply_activation(Matrix& m, Activation a) {
  if (a == Activation::relu) relu_inplace(m);
}

}  // namespace

ForwardTrace forward_trace(const ModelParams& params, const Graph& g, const Matrix& features,
                           const DropoutMask* mask) {
  check_features(params, g, features);
  const NodeSet all = NodeSet::all(g.num_nodes());
  ForwardTrace trace;
  trace.layers.push_back(features);
  for (std::size_t i = 0; i < params.embed.size(); ++i) {
    const Matrix& h = trace.layers.back();
    const EmbedLayer w = masked(params.embed[i], embed_mask(mask, i));
    trace.layers.push_back(combine_projection(h, neighbor_mean(g, h, all, all), w.combine, w.aggregate));
  }
  for (std::size_t i = 0; i < params.mlp.size(); ++i) {
    const DenseLayer w = masked(params.mlp[i], mlp_mask(mask, i));
    Matrix z = affine(trace.layers.back(), w.weight, w.bias);
    if (w.activation == Activation::softmax) {
      trace.probabilities = softmax_rows(z);
      trace.logits = std::move(z);
    } else {
      apply_activation(z, w.activation);
      trace.layers.push_back(std::move(z));
    }
  }
  return trace;
}

Matrix embed_forward(const ModelParams& params, const Graph& g, const Matrix& features,
                     const DropoutMask* mask) {
  check_features(params, g, features);
  const NodeSet all = NodeSet::all(g.num_nodes());
  Matrix h = features;
  for (std::size_t i = 0; i < params.embed.size(); ++i) {
    const EmbedLayer w = masked(params.embed[i], embed_mask(mask, i));
    h = combine_projection(h, neighbor_mean(g, h, all, all), w.combine, w.aggregate);
  }
  return h;
}

Matrix full_forward(const ModelParams& params, const Graph& g, const Matrix& features,
                    const DropoutMask* mask) {
  return forward_trace(params, g, features, mask).probabilities;
}

double loss_and_gradient(const ModelParams& params, const Graph& g, const Matrix& features,
                         std::span<const std::size_t> targets, const DropoutMask* mask,
                         ModelParams* grad) {
  check_features(params, g, features);
  if (targets.empty()) throw ArgumentError("loss over an empty target set");
  const std::size_t n = g.num_nodes();
  const std::size_t lg = params.embed.size();

  // sets[i] holds the nodes whose layer-i output is needed; sets[0] is every
  // node because the feature matrix is indexed globally.
  std::vector<NodeSet> sets(lg + 1);
  sets[lg] = NodeSet(n, std::vector<std::size_t>(targets.begin(), targets.end()));
  for (std::size_t i = lg; i > 1; --i) sets[i - 1] = sets[i].expand(g);
  sets[0] = NodeSet::all(n);

  std::vector<EmbedLayer> eff_embed;
  std::vector<Matrix> selfs, aggs;
  Matrix h = features;
  for (std::size_t i = 0; i < lg; ++i) {
    eff_embed.push_back(masked(params.embed[i], embed_mask(mask, i)));
    selfs.push_back(gather_self(h, sets[i], sets[i + 1]));
    aggs.push_back(neighbor_mean(g, h, sets[i], sets[i + 1]));
    h = combine_projection(selfs.back(), aggs.back(), eff_embed.back().combine,
                           eff_embed.back().aggregate);
  }
  if (lg == 0) h = gather_self(features, sets[0], sets[0]);

  std::vector<DenseLayer> eff_mlp;
  std::vector<Matrix> mlp_inputs, pre_acts;
  for (std::size_t i = 0; i < params.mlp.size(); ++i) {
    eff_mlp.push_back(masked(params.mlp[i], mlp_mask(mask, i)));
    mlp_inputs.push_back(h);
    Matrix z = affine(h, eff_mlp.back().weight, eff_mlp.back().bias);
    pre_acts.push_back(z);
    if (eff_mlp.back().activation != Activation::softmax) apply_activation(z, eff_mlp.back().activation);
    h = std::move(z);
  }

  const Matrix& logits = pre_acts.back();
  const NodeSet& out = sets[lg];
  const double batch = static_cast<double>(out.size());
  double loss = 0.0;
  Matrix delta(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    const std::size_t y = g.labels[out.nodes()[r]];
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double x : z) total += std::exp(x - top);
    const double log_norm = top + std::log(total);
    loss += log_norm - z[y];
    auto d = delta.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) {
      d[c] = (std::exp(z[c] - log_norm) - (c == y ? 1.0 : 0.0)) / batch;
    }
  }
  loss /= batch;
  if (grad == nullptr) return loss;

  *grad = zeros_like(params);
  for (std::size_t i = params.mlp.size(); i-- > 0;) {
    const DenseLayer& w = eff_mlp[i];
    if (w.activation == Activation::relu) {
      const Matrix& z = pre_acts[i];
      for (std::size_t k = 0; k < delta.size(); ++k) {
        if (!(z.values()[k] > 0.0)) delta.values()[k] = 0.0;
      }
    }
    Matrix dw = matmul_at_b(delta, mlp_inputs[i]);
    const Vector* m = mlp_mask(mask, i);
    if (m != nullptr) dw = scale_columns(dw, *m);
    grad->mlp[i].weight = std::move(dw);
    auto& db = grad->mlp[i].bias;
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto d = delta.row(r);
      for (std::size_t c = 0; c < d.size(); ++c) db[c] += d[c];
    }
    delta = matmul(delta, w.weight);
  }

  for (std::size_t i = lg; i-- > 0;) {
    const EmbedLayer& w = eff_embed[i];
    Matrix dc = transpose(matmul_at_b(selfs[i], delta));
    Matrix da = transpose(matmul_at_b(aggs[i], delta));
    const Vector* m = embed_mask(mask, i);
    if (m != nullptr) {
      dc = scale_columns(dc, *m);
      da = scale_columns(da, *m);
    }
    grad->embed[i].combine = std::move(dc);
    grad->embed[i].aggregate = std::move(da);
    if (i == 0) break;

    const NodeSet& in = sets[i];
    const NodeSet& cur = sets[i + 1];
    const Matrix d_self = matmul(delta, w.combine);
    const Matrix d_agg = matmul(delta, w.aggregate);
    Matrix d_in(in.size(), d_self.cols());
    for (std::size_t r = 0; r < cur.size(); ++r) {
      const std::size_t u = cur.nodes()[r];
      auto dst = d_in.row(in.position(u));
      auto src = d_self.row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      const auto& nbrs = g.adjacency[u];
      if (nbrs.empty()) continue;
      const double inv = 1.0 / static_cast<double>(nbrs.size());
      auto ga = d_agg.row(r);
      for (const Neighbor& nb : nbrs) {
        auto nd = d_in.row(in.position(nb.id));
        const double s = nb.prob * inv;
        for (std::size_t c = 0; c < nd.size(); ++c) nd[c] += s * ga[c];
      }
    }
    delta = std::move(d_in);
  }
  return loss;
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ArgumentError("batch size must be positive");
  if (cfg.epochs == 0) throw ArgumentError("epoch count must be positive");
  if (!(cfg.learning_rate >= 0.0)) throw ArgumentError("learning rate must be nonnegative");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw ArgumentError("dropout rate must lie in [0, 1)");
  }
}

double accuracy(const Matrix& probabilities, const Graph& g, std::span<const std::size_t> nodes) {
  if (nodes.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (std::size_t u : nodes) {
    auto row = probabilities.row(u);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == g.labels[u]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

namespace {

class Adam {
public:
  explicit Adam(const ModelParams& params, double lr)
      : lr_(lr), m_(zeros_like(params)), v_(zeros_like(params)) {}

  void step(ModelParams& params, const ModelParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto p = params.blocks();
    auto g = grad.blocks();
    auto m = m_.blocks();
    auto v = v_.blocks();
    for (std::size_t b = 0; b < p.size(); ++b) {
      for (std::size_t k = 0; k < p[b].size(); ++k) {
        const double gk = g[b][k];
        m[b][k] = beta1_ * m[b][k] + (1.0 - beta1_) * gk;
        v[b][k] = beta2_ * v[b][k] + (1.0 - beta2_) * gk * gk;
        p[b][k] -= lr_ * (m[b][k] / c1) / (std::sqrt(v[b][k] / c2) + eps_);
      }
    }
  }

private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t t_ = 0;
  ModelParams m_;
  ModelParams v_;
};

}  // namespace

TrainResult train(const Graph& g, const TrainConfig& cfg) {
  validate(cfg);
  if (g.train.empty()) throw ArgumentError("train mask is empty");
  Architecture arch;
  arch.input_dim = g.feature_dim();
  arch.embed_widths = cfg.embed_widths;
  arch.hidden_widths = cfg.hidden_widths;
  arch.num_classes = g.num_classes;

  TrainResult result;
  result.params = init_params(arch, cfg.dropout_rate, cfg.seed);
  ModelParams& params = result.params;
  Adam adam(params, cfg.learning_rate);
  RngStream order_rng(cfg.seed, 2);
  RngStream dropout_rng(cfg.seed, 3);
  ModelParams grad;

  std::vector<std::size_t> order = g.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      std::optional<DropoutMask> mask;
      if (params.dropout_rate > 0.0) mask = sample_dropout_mask(params, dropout_rng);
      const double loss =
          loss_and_gradient(params, g, g.features, batch, mask ? &*mask : nullptr, &grad);
      loss_sum += loss * static_cast<double>(batch.size());
      adam.step(params, grad);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.val_accuracy = std::numeric_limits<double>::quiet_NaN();
    if (!g.val.empty()) {
      stats.val_accuracy = accuracy(full_forward(params, g, g.features), g, g.val);
    }
    result.trace.push_back(stats);
  }
  return result;
}

std::string checkpoint_json(const ModelParams& params) {
  validate(params);
  nlohmann::ordered_json j;
  j["format"] = "bgnn-checkpoint-1";
  j["seed"] = params.seed;
  j["dropout_rate"] = params.dropout_rate;
  j["input_dim"] = params.input_dim();
  auto& embed = j["embed"] = nlohmann::ordered_json::array();
  for (const auto& l : params.embed) {
    nlohmann::ordered_json e;
    e["in"] = l.in_dim();
    e["out"] = l.out_dim();
    e["activation"] = "linear";
    e["combine"] = l.combine.data();
    e["aggregate"] = l.aggregate.data();
    embed.push_back(std::move(e));
  }
  auto& mlp = j["mlp"] = nlohmann::ordered_json::array();
  for (const auto& l : params.mlp) {
    nlohmann::ordered_json e;
    e["in"] = l.in_dim();
    e["out"] = l.out_dim();
    e["activation"] = to_string(l.activation);
    e["weight"] = l.weight.data();
    e["bias"] = l.bias;
    mlp.push_back(std::move(e));
  }
  return j.dump(1) + "\n";
}

ModelParams checkpoint_from_json(const std::string& text) {
  ModelParams p;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "bgnn-checkpoint-1") {
      throw ValidationError("unknown checkpoint format");
    }
    p.seed = j.at("seed").get<std::uint64_t>();
    p.dropout_rate = j.at("dropout_rate").get<double>();
    for (const auto& e : j.at("embed")) {
      const auto out = e.at("out").get<std::size_t>();
      const auto in = e.at("in").get<std::size_t>();
      p.embed.push_back({Matrix(out, in, e.at("combine").get<std::vector<double>>()),
                         Matrix(out, in, e.at("aggregate").get<std::vector<double>>())});
    }
    for (const auto& e : j.at("mlp")) {
      const auto out = e.at("out").get<std::size_t>();
      const auto in = e.at("in").get<std::size_t>();
      p.mlp.push_back({Matrix(out, in, e.at("weight").get<std::vector<double>>()),
                       e.at("bias").get<std::vector<double>>(),
                       activation_from_string(e.at("activation").get<std::string>())});
    }
    if (p.input_dim() != j.at("input_dim").get<std::size_t>()) {
      throw ShapeError("checkpoint input_dim does not match first layer");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
  validate(p);
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string(), 0, "cannot write checkpoint");
  out << checkpoint_json(params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open checkpoint");
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace bgnn
