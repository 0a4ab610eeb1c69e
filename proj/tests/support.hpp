#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "bgnn/graph.hpp"
#include "bgnn/model.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("bgnn-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

/// Adaptive Simpson quadrature.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol);

/// Graph from explicit edges; features n x d, labels u % classes.
bgnn::Graph make_graph(const bgnn::Matrix& features, std::size_t classes,
                       const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges);

/// u0 - u1 - u2 with scalar features (1, 2, 4) and link probabilities 1.0 and 0.5.
bgnn::Graph path_graph();

/// One linear scalar embedding layer with the given combine/aggregate weights
/// followed by an identity 1 -> 1 softmax head.
bgnn::ModelParams scalar_layer(double combine, double aggregate);

/// A 6-node graph with a few probabilistic links, d = 3, 2 classes.
bgnn::Graph six_node_graph();

/// Exact output variance of a network that is linear in its input (every
/// embedding and hidden layer linear): with J the Jacobian of the tapped
/// layer, var_i = sum_k J_ik^2 v_k. Columns of J come from unit perturbations
/// of the input, which is exact for an affine map up to rounding.
bgnn::Matrix exact_linear_variance(const bgnn::ModelParams& params, const bgnn::Graph& g,
                                   const bgnn::Matrix& means, const bgnn::Matrix& variances,
                                   bool logits);

}  // namespace testing
