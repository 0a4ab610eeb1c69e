#pragma once

// GraphSAGE-style node classifier: mean-aggregation embedding layers followed
// by an MLP head with a softmax output, trained with Adam on cross-entropy.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgnn/graph.hpp"
#include "bgnn/linalg.hpp"

namespace bgnn {

enum class Activation { linear, relu, softmax };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// h_u' = combine * h_u + aggregate * mean_{v in N(u)} p_uv h_v, both out x in.
struct EmbedLayer {
  Matrix combine;
  Matrix aggregate;

  std::size_t in_dim() const noexcept { return combine.cols(); }
  std::size_t out_dim() const noexcept { return combine.rows(); }

  friend bool operator==(const EmbedLayer&, const EmbedLayer&) = default;
};

struct DenseLayer {
  Matrix weight;  ///< out x in
  Vector bias;
  Activation activation = Activation::relu;

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
  std::vector<EmbedLayer> embed;
  std::vector<DenseLayer> mlp;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return embed.empty() ? mlp.front().in_dim() : embed.front().in_dim(); }
  std::size_t num_classes() const { return mlp.back().out_dim(); }
  /// Total layer count L = embedding layers + MLP layers.
  std::size_t num_layers() const noexcept { return embed.size() + mlp.size(); }

  /// Every learnable array in a fixed order: per embedding layer combine then
  /// aggregate, per MLP layer weight then bias.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Throws ShapeError unless layer dimensions chain and the last layer is a
/// softmax output; ArgumentError unless 0 <= dropout_rate < 1.
void validate(const ModelParams& params);

/// Same shapes and activations, all entries zero.
ModelParams zeros_like(const ModelParams& params);

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> embed_widths{64, 32};
  std::vector<std::size_t> hidden_widths{12, 8};
  std::size_t num_classes = 0;
};

/// Glorot-uniform weights, zero biases. Embedding layers are linear, hidden
/// MLP layers ReLU, the output layer softmax.
ModelParams init_params(const Architecture& arch, double dropout_rate, std::uint64_t seed);

/// One multiplicative factor per input unit of every layer: 0 with
/// probability dropout_rate, else 1 / (1 - dropout_rate). Scaling a layer's
/// weight columns by its mask drops those inputs for every node at once.
struct DropoutMask {
  std::vector<Vector> embed;
  std::vector<Vector> mlp;
};

DropoutMask sample_dropout_mask(const ModelParams& params, RngStream& rng);

/// Sorted set of node ids with O(1) membership lookup.
class NodeSet {
public:
  NodeSet() = default;
  NodeSet(std::size_t universe, std::vector<std::size_t> nodes);
  static NodeSet all(std::size_t universe);

  const std::vector<std::size_t>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Row of `node` in matrices indexed by this set; npos when absent.
  std::size_t position(std::size_t node) const noexcept { return position_[node]; }
  bool contains(std::size_t node) const noexcept { return position_[node] != npos; }

  /// This set plus every neighbor of its members.
  NodeSet expand(const Graph& g) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
  std::vector<std::size_t> nodes_;
  std::vector<std::size_t> position_;
};

/// Rows of `h` (indexed by `in`) for the members of `out`.
Matrix gather_self(const Matrix& h, const NodeSet& in, const NodeSet& out);

/// Row u: (1/|N(u)|) sum_v p_uv h_v over u in `out`; zero for isolated nodes.
Matrix neighbor_mean(const Graph& g, const Matrix& h, const NodeSet& in, const NodeSet& out);

/// Row u: (1/|N(u)|^2) sum_v p_uv^2 v_v, the variance of the neighbor mean
/// under independent inputs.
Matrix neighbor_variance(const Graph& g, const Matrix& v, const NodeSet& in, const NodeSet& out);

/// self * combine^T + agg * aggregate^T for already masked weights.
Matrix combine_projection(const Matrix& self, const Matrix& agg, const Matrix& combine,
                          const Matrix& aggregate);

/// x * weight^T + bias
Matrix affine(const Matrix& x, const Matrix& weight, const Vector& bias);

void relu_inplace(Matrix& m);
/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Weights of layer `index` with the mask applied to their columns.
EmbedLayer masked(const EmbedLayer& layer, const Vector* mask);
DenseLayer masked(const DenseLayer& layer, const Vector* mask);

const Vector* embed_mask(const DropoutMask* mask, std::size_t layer);
const Vector* mlp_mask(const DropoutMask* mask, std::size_t layer);

/// Node embeddings after all embedding layers (n x m_lg).
Matrix embed_forward(const ModelParams& params, const Graph& g, const Matrix& features,
                     const DropoutMask* mask = nullptr);

/// Class probabilities (n x C).
Matrix full_forward(const ModelParams& params, const Graph& g, const Matrix& features,
                    const DropoutMask* mask = nullptr);

/// Every intermediate of a deterministic pass over all nodes. layers[0] is the
/// input, layers[i] for 1 <= i < L the post-activation output of layer i;
/// the last layer is split into logits and probabilities.
struct ForwardTrace {
  std::vector<Matrix> layers;
  Matrix logits;
  Matrix probabilities;
};

ForwardTrace forward_trace(const ModelParams& params, const Graph& g, const Matrix& features,
                           const DropoutMask* mask = nullptr);

/// Mean categorical cross-entropy over `targets`, computed on their receptive
/// field only. When `grad` is given it receives d loss / d params (same shapes
/// as params; overwritten).
double loss_and_gradient(const ModelParams& params, const Graph& g, const Matrix& features,
                         std::span<const std::size_t> targets, const DropoutMask* mask,
                         ModelParams* grad);

struct TrainConfig {
  std::size_t batch_size = 50;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double dropout_rate = 0.1;
  std::vector<std::size_t> embed_widths{64, 32};
  std::vector<std::size_t> hidden_widths{12, 8};
};

void validate(const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;  ///< NaN when the validation mask is empty
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> trace;
};

/// Mini-batch Adam on the train mask; full-neighborhood aggregation; one fresh
/// dropout mask per step. Deterministic given cfg.seed.
TrainResult train(const Graph& g, const TrainConfig& cfg);

/// Fraction of `nodes` whose argmax row of `probabilities` equals the label.
double accuracy(const Matrix& probabilities, const Graph& g, std::span<const std::size_t> nodes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const ModelParams& params);
ModelParams checkpoint_from_json(const std::string& text);

}  // namespace bgnn
