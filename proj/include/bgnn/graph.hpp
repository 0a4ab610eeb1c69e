#pragma once

// Graph data model with probabilistic links, plus dataset IO, split masks,
// synthetic generation and feature-noise injection.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bgnn/linalg.hpp"

namespace bgnn {

struct Neighbor {
  std::size_t id = 0;
  double prob = 1.0;  ///< link existence probability in [0, 1]

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Graph {
  Matrix features;                               ///< n x d, one row per node
  std::vector<std::size_t> labels;               ///< class index per node
  std::size_t num_classes = 0;
  std::vector<std::vector<Neighbor>> adjacency;  ///< sorted by neighbor id
  bool directed = false;
  std::size_t num_links = 0;                     ///< edge rows as loaded/generated

  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  std::size_t num_nodes() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }
  std::size_t degree(std::size_t u) const noexcept { return adjacency[u].size(); }

  friend bool operator==(const Graph&, const Graph&) = default;
};

/// Throws ValidationError on any broken invariant: probabilities outside
/// [0, 1], self loops, asymmetric undirected adjacency, overlapping or out of
/// range masks, labels outside [0, C).
void validate(const Graph& g);

/// Builds sorted adjacency lists from an edge list. Undirected edges are stored
/// once per direction; a pair listed in both directions must carry the same
/// probability. Duplicate rows with identical probability collapse.
std::vector<std::vector<Neighbor>> build_adjacency(
    std::size_t num_nodes, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges,
    bool directed);

struct NoiseSpec {
  double level_pct = 0.0;
  Vector per_feature_variance;  ///< diagonal of the feature-noise covariance
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path nodes_file;
  std::filesystem::path edges_file;
  std::size_t feature_dim = 0;
  std::size_t class_count = 0;
  bool directed = false;
};

/// Reads a manifest JSON. Relative file paths resolve against the manifest's
/// directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

Graph load_dataset(const DatasetManifest& manifest);

/// Writes nodes.csv, edges.csv and manifest.json into `dir` and returns the
/// manifest. Splits are not part of the on-disk format.
DatasetManifest save_dataset(const Graph& g, const std::string& name,
                             const std::filesystem::path& dir);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Random disjoint train/val/test masks. Boundaries are the rounded cumulative
/// fractions of a shuffled node order, so each size is within one node of
/// fraction * n.
void make_splits(Graph& g, SplitFractions fractions, RngStream& rng);

NoiseSpec derive_noise_variance(const Graph& g, double level_pct);

/// Returns features + eps with eps ~ N(0, diag(spec)), drawn independently per
/// node and per feature in row-major order.
Matrix inject_feature_noise(const Graph& g, const NoiseSpec& spec, RngStream& rng);

/// n x d matrix holding the per-feature noise variance on every row.
Matrix noise_variance_matrix(const Graph& g, const NoiseSpec& spec);

enum class FeatureStyle {
  gaussian,  ///< class mean in [0, separation) per dim plus unit Gaussian jitter
  binary,    ///< bag-of-words: class topic words switched on more often
};

struct SyntheticSpec {
  std::size_t nodes = 300;
  std::size_t classes = 3;
  double intra_p = 0.05;
  double inter_p = 0.005;
  std::size_t feature_dim = 16;
  FeatureStyle style = FeatureStyle::gaussian;
  /// gaussian: spread of class means. binary: topic-word activation odds.
  double separation = 3.0;
  /// binary only: expected active words per node.
  double words_per_node = 18.0;
};

/// Planted-partition graph: node u belongs to class u % classes, every pair
/// is linked with intra_p (same class) or inter_p (different class), and each
/// realized link carries a probability drawn uniformly from (0, 1].
Graph generate_synthetic(const SyntheticSpec& spec, RngStream& rng);

/// Gaussian-feature planted partition with default separation.
Graph generate_synthetic(std::size_t nodes, std::size_t classes, double intra_p, double inter_p,
                         std::size_t feature_dim, RngStream& rng);

}  // namespace bgnn
