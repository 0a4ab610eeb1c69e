#include "bgnn/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string_view>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "bgnn/csv.hpp"

namespace bgnn {

namespace {

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace

void validate(const Graph& g) {
  const std::size_t n = g.num_nodes();
  if (g.features.rows() != n) throw ValidationError("feature rows != node count");
  if (g.adjacency.size() != n) throw ValidationError("adjacency size != node count");
  if (!g.features.all_finite()) throw ValidationError("non-finite feature value");
  for (std::size_t u = 0; u < n; ++u) {
    if (g.labels[u] >= g.num_classes) {
      throw ValidationError("node " + std::to_string(u) + " label out of range");
    }
    for (const Neighbor& nb : g.adjacency[u]) {
      if (nb.id >= n) throw ValidationError("neighbor id out of range");
      if (nb.id == u) throw ValidationError("self loop at node " + std::to_string(u));
      if (!(nb.prob >= 0.0 && nb.prob <= 1.0)) {
        throw ValidationError("link probability outside [0,1] on edge " + std::to_string(u) +
                              "-" + std::to_string(nb.id));
      }
      if (!g.directed) {
        const auto& back = g.adjacency[nb.id];
        const auto it = std::lower_bound(
            back.begin(), back.end(), u,
            [](const Neighbor& a, std::size_t id) { return a.id < id; });
        if (it == back.end() || it->id != u || it->prob != nb.prob) {
          throw ValidationError("asymmetric undirected edge " + std::to_string(u) + "-" +
                                std::to_string(nb.id));
        }
      }
    }
  }
  std::vector<char> seen(n, 0);
  for (const auto* mask : {&g.train, &g.val, &g.test}) {
    for (std::size_t u : *mask) {
      if (u >= n) throw ValidationError("mask index out of range");
      if (seen[u]) throw ValidationError("masks overlap at node " + std::to_string(u));
      seen[u] = 1;
    }
  }
}

std::vector<std::vector<Neighbor>> build_adjacency(
    std::size_t num_nodes, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges,
    bool directed) {
  // (u, v) -> probability; a conflicting duplicate is an asymmetric edge.
  std::map<std::pair<std::size_t, std::size_t>, double> links;
  auto insert = [&](std::size_t u, std::size_t v, double p) {
    auto [it, inserted] = links.emplace(std::make_pair(u, v), p);
    if (!inserted && it->second != p) {
      throw ValidationError("asymmetric or conflicting edge " + std::to_string(u) + "-" +
                            std::to_string(v));
    }
  };
  for (const auto& [u, v, p] : edges) {
    if (u >= num_nodes || v >= num_nodes) throw ValidationError("edge endpoint out of range");
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError("link probability outside [0,1] on edge " + std::to_string(u) + "-" +
                            std::to_string(v));
    }
    if (u == v) continue;
    insert(u, v, p);
    if (!directed) insert(v, u, p);
  }
  std::vector<std::vector<Neighbor>> adjacency(num_nodes);
  for (const auto& [key, p] : links) adjacency[key.first].push_back({key.second, p});
  return adjacency;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open manifest");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.nodes_file = j.at("nodes_file").get<std::string>();
    m.edges_file = j.at("edges_file").get<std::string>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.class_count = j.at("class_count").get<std::size_t>();
    m.directed = j.value("directed", false);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, std::string("manifest field: ") + e.what());
  }
  const auto base = path.parent_path();
  if (m.nodes_file.is_relative()) m.nodes_file = base / m.nodes_file;
  if (m.edges_file.is_relative()) m.edges_file = base / m.edges_file;
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["name"] = manifest.name;
  j["nodes_file"] = manifest.nodes_file.string();
  j["edges_file"] = manifest.edges_file.string();
  j["feature_dim"] = manifest.feature_dim;
  j["class_count"] = manifest.class_count;
  j["directed"] = manifest.directed;
  std::ofstream out(path);
  if (!out) throw ParseError(path.string(), 0, "cannot write manifest");
  out << j.dump(2) << '\n';
}

Graph load_dataset(const DatasetManifest& manifest) {
  Graph g;
  g.directed = manifest.directed;
  g.num_classes = manifest.class_count;
  const std::size_t d = manifest.feature_dim;

  const std::string nodes_path = manifest.nodes_file.string();
  std::ifstream nodes(manifest.nodes_file);
  if (!nodes) throw ParseError(nodes_path, 0, "cannot open nodes file");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(nodes, line)) throw ParseError(nodes_path, 1, "missing header row");
  ++line_no;
  {
    const auto header = csv::split(line);
    if (header.size() < 2 || header[0] != "node_id" || header[1] != "label") {
      throw ParseError(nodes_path, 1, "header must start with node_id,label");
    }
    if (header.size() - 2 != d) {
      throw ParseError(nodes_path, 1,
                       "header declares " + std::to_string(header.size() - 2) +
                           " features, manifest says " + std::to_string(d));
    }
  }

  std::unordered_map<std::string, std::size_t> index_of;
  std::vector<double> feature_data;
  while (std::getline(nodes, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = csv::split(line);
    if (fields.size() != d + 2) {
      throw ParseError(nodes_path, line_no,
                       "expected " + std::to_string(d + 2) + " fields, got " +
                           std::to_string(fields.size()));
    }
    const std::size_t idx = g.labels.size();
    if (!index_of.emplace(std::string(fields[0]), idx).second) {
      throw ParseError(nodes_path, line_no, "duplicate node id " + std::string(fields[0]));
    }
    const std::size_t label = csv::to_index(fields[1], nodes_path, line_no);
    if (label >= g.num_classes) {
      throw ParseError(nodes_path, line_no, "label " + std::to_string(label) + " >= class_count");
    }
    g.labels.push_back(label);
    for (std::size_t f = 0; f < d; ++f) {
      const double x = csv::to_double(fields[f + 2], nodes_path, line_no);
      if (!std::isfinite(x)) throw ParseError(nodes_path, line_no, "non-finite feature");
      feature_data.push_back(x);
    }
  }
  const std::size_t n = g.labels.size();
  g.features = Matrix(n, d, std::move(feature_data));
  if (n > 0) {
    const std::size_t max_label = *std::max_element(g.labels.begin(), g.labels.end());
    if (max_label + 1 != g.num_classes) {
      throw ValidationError(nodes_path + ": labels span " + std::to_string(max_label + 1) +
                            " classes, manifest says " + std::to_string(g.num_classes));
    }
  }

  const std::string edges_path = manifest.edges_file.string();
  std::ifstream edges(manifest.edges_file);
  if (!edges) throw ParseError(edges_path, 0, "cannot open edges file");
  std::vector<std::tuple<std::size_t, std::size_t, double>> edge_list;
  line_no = 0;
  while (std::getline(edges, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = csv::split(line);
    if (line_no == 1 && !fields.empty() && fields[0] == "src") continue;
    if (fields.size() != 2 && fields.size() != 3) {
      throw ParseError(edges_path, line_no, "expected src,dst[,prob]");
    }
    auto lookup = [&](std::string_view id) {
      const auto it = index_of.find(std::string(id));
      if (it == index_of.end()) {
        throw ParseError(edges_path, line_no, "unknown node id " + std::string(id));
      }
      return it->second;
    };
    const double p = fields.size() == 3 ? csv::to_double(fields[2], edges_path, line_no) : 1.0;
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError(edges_path + ":" + std::to_string(line_no) +
                            ": link probability outside [0,1]");
    }
    edge_list.emplace_back(lookup(fields[0]), lookup(fields[1]), p);
  }
  g.num_links = edge_list.size();
  g.adjacency = build_adjacency(n, edge_list, g.directed);
  validate(g);
  return g;
}

DatasetManifest save_dataset(const Graph& g, const std::string& name,
                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.name = name;
  m.nodes_file = "nodes.csv";
  m.edges_file = "edges.csv";
  m.feature_dim = g.feature_dim();
  m.class_count = g.num_classes;
  m.directed = g.directed;

  {
    std::ofstream out(dir / m.nodes_file);
    out << "node_id,label";
    for (std::size_t f = 0; f < g.feature_dim(); ++f) out << ",f" << f;
    out << '\n';
    for (std::size_t u = 0; u < g.num_nodes(); ++u) {
      out << u << ',' << g.labels[u];
      for (double x : g.features.row(u)) out << ',' << csv::number(x);
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / m.edges_file);
    out << "src,dst,prob\n";
    for (std::size_t u = 0; u < g.num_nodes(); ++u) {
      for (const Neighbor& nb : g.adjacency[u]) {
        if (!g.directed && nb.id < u) continue;
        out << u << ',' << nb.id << ',' << csv::number(nb.prob) << '\n';
      }
    }
  }
  write_manifest(m, dir / "manifest.json");
  return read_manifest(dir / "manifest.json");
}

void make_splits(Graph& g, SplitFractions fractions, RngStream& rng) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
    throw ArgumentError("split fractions must be nonnegative");
  }
  if (fractions.train + fractions.val + fractions.test > 1.0 + 1e-12) {
    throw ArgumentError("split fractions sum to more than 1");
  }
  const std::size_t n = g.num_nodes();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  auto boundary = [n](double cumulative) {
    return std::min(n, static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(n))));
  };
  const std::size_t b1 = boundary(fractions.train);
  const std::size_t b2 = std::max(b1, boundary(fractions.train + fractions.val));
  const std::size_t b3 = std::max(b2, boundary(fractions.train + fractions.val + fractions.test));

  auto sorted_slice = [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> s(order.begin() + lo, order.begin() + hi);
    std::sort(s.begin(), s.end());
    return s;
  };
  g.train = sorted_slice(0, b1);
  g.val = sorted_slice(b1, b2);
  g.test = sorted_slice(b2, b3);
}

NoiseSpec derive_noise_variance(const Graph& g, double level_pct) {
  if (!(level_pct >= 0.0)) throw ArgumentError("noise level must be nonnegative");
  NoiseSpec spec;
  spec.level_pct = level_pct;
  double variance = 0.0;
  if (level_pct > 0.0 && !g.features.empty()) {
    double sum = 0.0;
    for (double x : g.features.values()) sum += x;
    const double grand_mean = sum / static_cast<double>(g.features.size());
    variance = level_pct / 100.0 * grand_mean;
    if (variance < 0.0) {
      throw ArgumentError("feature grand mean is negative; percentage noise is undefined");
    }
  }
  spec.per_feature_variance.assign(g.feature_dim(), variance);
  return spec;
}

Matrix inject_feature_noise(const Graph& g, const NoiseSpec& spec, RngStream& rng) {
  if (spec.per_feature_variance.size() != g.feature_dim()) {
    throw ShapeError("noise spec dimension != feature dimension");
  }
  Matrix noisy = g.features;
  for (std::size_t u = 0; u < noisy.rows(); ++u) {
    auto row = noisy.row(u);
    for (std::size_t f = 0; f < row.size(); ++f) {
      row[f] = sample_gaussian(rng, row[f], spec.per_feature_variance[f]);
    }
  }
  return noisy;
}

Matrix noise_variance_matrix(const Graph& g, const NoiseSpec& spec) {
  if (spec.per_feature_variance.size() != g.feature_dim()) {
    throw ShapeError("noise spec dimension != feature dimension");
  }
  Matrix v(g.num_nodes(), g.feature_dim());
  for (std::size_t u = 0; u < v.rows(); ++u) {
    std::copy(spec.per_feature_variance.begin(), spec.per_feature_variance.end(),
              v.row(u).begin());
  }
  return v;
}

Graph generate_synthetic(const SyntheticSpec& spec, RngStream& rng) {
  if (spec.classes == 0 || spec.nodes < spec.classes) {
    throw ArgumentError("synthetic graph needs nodes >= classes >= 1");
  }
  if (!(spec.intra_p >= 0 && spec.intra_p <= 1 && spec.inter_p >= 0 && spec.inter_p <= 1)) {
    throw ArgumentError("synthetic edge probabilities must lie in [0,1]");
  }
  const std::size_t n = spec.nodes;
  const std::size_t d = spec.feature_dim;
  Graph g;
  g.num_classes = spec.classes;
  g.labels.resize(n);
  for (std::size_t u = 0; u < n; ++u) g.labels[u] = u % spec.classes;

  g.features = Matrix(n, d);
  if (spec.style == FeatureStyle::gaussian) {
    Matrix class_mean(spec.classes, d);
    for (double& x : class_mean.values()) x = spec.separation * rng.uniform();
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t f = 0; f < d; ++f) {
        g.features(u, f) = class_mean(g.labels[u], f) + rng.standard_normal();
      }
    }
  } else {
    // Word f is a topic word of class f % classes; topic words fire
    // `separation` times more often than background words.
    const double topic = static_cast<double>(d) / static_cast<double>(spec.classes);
    const double base =
        spec.words_per_node / (topic * spec.separation + static_cast<double>(d) - topic);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t f = 0; f < d; ++f) {
        const double p =
            std::min(1.0, f % spec.classes == g.labels[u] ? base * spec.separation : base);
        g.features(u, f) = rng.bernoulli(p) ? 1.0 : 0.0;
      }
    }
  }

  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = g.labels[u] == g.labels[v] ? spec.intra_p : spec.inter_p;
      if (p > 0.0 && rng.bernoulli(p)) {
        edges.emplace_back(u, v, 1.0 - rng.uniform());  // (0, 1]
      }
    }
  }
  g.num_links = edges.size();
  g.adjacency = build_adjacency(n, edges, false);
  return g;
}

Graph generate_synthetic(std::size_t nodes, std::size_t classes, double intra_p, double inter_p,
                         std::size_t feature_dim, RngStream& rng) {
  SyntheticSpec spec;
  spec.nodes = nodes;
  spec.classes = classes;
  spec.intra_p = intra_p;
  spec.inter_p = inter_p;
  spec.feature_dim = feature_dim;
  return generate_synthetic(spec, rng);
}

}  // namespace bgnn
