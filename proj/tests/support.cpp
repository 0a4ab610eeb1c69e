#include "support.hpp"

#include <fstream>
#include <sstream>

namespace testing {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                    double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, 50);
}

bgnn::Graph make_graph(const bgnn::Matrix& features, std::size_t classes,
                       const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges) {
  bgnn::Graph g;
  g.features = features;
  g.num_classes = classes;
  for (std::size_t u = 0; u < features.rows(); ++u) g.labels.push_back(u % classes);
  g.adjacency = bgnn::build_adjacency(features.rows(), edges, false);
  g.num_links = edges.size();
  return g;
}

bgnn::Graph path_graph() {
  return make_graph(bgnn::Matrix(3, 1, {1.0, 2.0, 4.0}), 1, {{0, 1, 1.0}, {1, 2, 0.5}});
}

bgnn::ModelParams scalar_layer(double combine, double aggregate) {
  bgnn::ModelParams p;
  p.embed.push_back({bgnn::Matrix(1, 1, combine), bgnn::Matrix(1, 1, aggregate)});
  p.mlp.push_back({bgnn::Matrix(1, 1, 1.0), bgnn::Vector(1, 0.0), bgnn::Activation::softmax});
  return p;
}

bgnn::Graph six_node_graph() {
  bgnn::Matrix x(6, 3);
  const double vals[] = {0.3, -1.2, 0.8, 1.1, 0.4, -0.6, -0.7, 0.9, 0.2,
                         0.5, -0.3, -1.4, -1.0, 1.3, 0.6, 0.2, 0.7, -0.9};
  for (std::size_t k = 0; k < 18; ++k) x.values()[k] = vals[k];
  return make_graph(x, 2, {{0, 1, 0.9}, {1, 2, 0.4}, {2, 3, 1.0}, {3, 4, 0.7}, {0, 4, 0.3}, {1, 5, 0.6}});
}

bgnn::Matrix exact_linear_variance(const bgnn::ModelParams& params, const bgnn::Graph& g,
                                   const bgnn::Matrix& means, const bgnn::Matrix& variances,
                                   bool logits) {
  auto tap = [&](const bgnn::Matrix& x) {
    bgnn::ForwardTrace t = bgnn::forward_trace(params, g, x);
    return logits ? t.logits : t.layers.back();
  };
  const bgnn::Matrix base = tap(means);
  bgnn::Matrix var(base.rows(), base.cols());
  bgnn::Matrix x = means;
  for (std::size_t k = 0; k < means.size(); ++k) {
    const double v = variances.values()[k];
    if (v == 0.0) continue;
    x.values()[k] += 1.0;
    const bgnn::Matrix moved = tap(x);
    x.values()[k] = means.values()[k];
    for (std::size_t i = 0; i < var.size(); ++i) {
      const double j = moved.values()[i] - base.values()[i];
      var.values()[i] += j * j * v;
    }
  }
  return var;
}

}  // namespace testing
