#include "bgnn/uq.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "bgnn/csv.hpp"

namespace bgnn {

McEnsemble run_mc_ensemble(const ModelParams& params, const Graph& g, const Matrix& input_means,
                           const Matrix& input_variances, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw ArgumentError("MC ensemble needs at least one sample");
  validate(params);
  McEnsemble ens;
  ens.seed = seed;
  ens.means.reserve(samples);
  ens.variances.reserve(samples);

  std::optional<InputProjection> projection;
  if (!params.embed.empty()) projection.emplace(params, g, input_means, input_variances);

  for (std::size_t t = 0; t < samples; ++t) {
    RngStream rng(seed, kMaskStreamBase + t);
    const DropoutMask mask = sample_dropout_mask(params, rng);
    AdfOutput out = projection ? adf_forward(params, g, *projection, &mask)
                               : adf_forward(params, g, input_means, input_variances, &mask);
    if (ens.mean_logit_variance.empty()) {
      ens.mean_logit_variance = Matrix(out.logits.var.rows(), out.logits.var.cols());
    }
    auto acc = ens.mean_logit_variance.values();
    auto lv = out.logits.var.values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += lv[k];
    ens.means.push_back(std::move(out.probabilities.mean));
    ens.variances.push_back(std::move(out.probabilities.var));
  }
  for (double& x : ens.mean_logit_variance.values()) x /= static_cast<double>(samples);
  return ens;
}

VarianceDecomposition total_variance(const McEnsemble& ens) {
  if (ens.size() == 0) throw ArgumentError("empty ensemble");
  const std::size_t rows = ens.means.front().rows();
  const std::size_t cols = ens.means.front().cols();
  const double m = static_cast<double>(ens.size());
  VarianceDecomposition d{Matrix(rows, cols), Matrix(rows, cols), Matrix(rows, cols),
                          Matrix(rows, cols)};
  const auto first = ens.means.front().values();
  for (std::size_t t = 0; t < ens.size(); ++t) {
    auto mu = ens.means[t].values();
    auto v = ens.variances[t].values();
    for (std::size_t k = 0; k < mu.size(); ++k) {
      d.mean.values()[k] += mu[k] - first[k];
      d.aleatoric.values()[k] += v[k];
    }
  }
  for (std::size_t k = 0; k < d.mean.size(); ++k) d.mean.values()[k] = first[k] + d.mean.values()[k] / m;
  for (double& x : d.aleatoric.values()) x /= m;
  for (std::size_t t = 0; t < ens.size(); ++t) {
    auto mu = ens.means[t].values();
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double dev = mu[k] - d.mean.values()[k];
      d.epistemic.values()[k] += dev * dev;
    }
  }
  for (std::size_t k = 0; k < d.total.size(); ++k) {
    d.epistemic.values()[k] /= m;
    d.total.values()[k] = d.aleatoric.values()[k] + d.epistemic.values()[k];
  }
  return d;
}

double nll_per_class(double y, double y_hat, double total_var) {
  const double var = std::max(total_var, kVarianceFloor);
  if (!(var > 0.0) || !std::isfinite(var)) throw NumericError("nll: unusable variance");
  const double err = y - y_hat;
  return 0.5 * std::log(var) + err * err / (2.0 * var);
}

UQReport score(const Graph& g, const McEnsemble& ensemble, double noise_level_pct) {
  if (g.test.empty()) throw ArgumentError("test mask is empty");
  UQReport report;
  report.decomposition = total_variance(ensemble);
  const auto& dec = report.decomposition;
  const std::size_t classes = dec.mean.cols();
  const double n_test = static_cast<double>(g.test.size());

  UQSummary& s = report.summary;
  s.noise_level_pct = noise_level_pct;
  s.mc_samples = ensemble.size();
  s.seed = ensemble.seed;

  std::size_t hits = 0;
  double loss = 0.0;
  double max_total = 0.0;
  std::vector<double> class_nll(classes, 0.0);
  for (std::size_t u : g.test) {
    auto mean = dec.mean.row(u);
    auto total = dec.total.row(u);
    NodeResult r;
    r.node = u;
    r.true_label = g.labels[u];
    r.predicted = static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    r.p_true = mean[r.true_label];
    for (std::size_t c = 0; c < classes; ++c) {
      r.aleatoric += dec.aleatoric(u, c);
      r.epistemic += dec.epistemic(u, c);
      r.total += total[c];
      s.mean_logit_variance += ensemble.mean_logit_variance(u, c);
      max_total = std::max(max_total, total[c]);
      class_nll[c] += nll_per_class(c == r.true_label ? 1.0 : 0.0, mean[c], total[c]);
    }
    r.aleatoric /= static_cast<double>(classes);
    r.epistemic /= static_cast<double>(classes);
    r.total /= static_cast<double>(classes);
    if (r.predicted == r.true_label) ++hits;
    loss += -std::log(std::max(r.p_true, std::numeric_limits<double>::min()));
    s.mean_aleatoric += r.aleatoric;
    s.mean_epistemic += r.epistemic;
    s.mean_total_variance += r.total;
    report.nodes.push_back(r);
  }
  s.accuracy = static_cast<double>(hits) / n_test;
  s.prediction_loss = loss / n_test;
  s.mean_aleatoric /= n_test;
  s.mean_epistemic /= n_test;
  s.mean_total_variance /= n_test;
  s.mean_logit_variance /= n_test * static_cast<double>(classes);
  if (max_total > 0.0) {
    double nll = 0.0;
    for (double c : class_nll) nll += c / n_test;
    s.nll = nll / static_cast<double>(classes);
  }
  return report;
}

UQReport evaluate(const ModelParams& params, const Graph& g, const NoiseSpec& noise,
                  std::size_t samples, std::uint64_t seed) {
  if (g.test.empty()) throw ArgumentError("test mask is empty");
  RngStream noise_rng(seed, kNoiseStream);
  const Matrix noisy = inject_feature_noise(g, noise, noise_rng);
  const Matrix variance = noise_variance_matrix(g, noise);
  const McEnsemble ens = run_mc_ensemble(params, g, noisy, variance, samples, seed);
  return score(g, ens, noise.level_pct);
}

std::string summary_json(const UQSummary& s) {
  nlohmann::ordered_json j;
  j["noise_level_pct"] = s.noise_level_pct;
  j["accuracy"] = s.accuracy;
  j["prediction_loss"] = s.prediction_loss;
  j["avg_per_class_nll"] = s.nll ? nlohmann::ordered_json(*s.nll) : nlohmann::ordered_json();
  j["mean_total_variance"] = s.mean_total_variance;
  j["mean_aleatoric_variance"] = s.mean_aleatoric;
  j["mean_epistemic_variance"] = s.mean_epistemic;
  j["mean_logit_variance"] = s.mean_logit_variance;
  j["mc_samples"] = s.mc_samples;
  j["seed"] = s.seed;
  return j.dump(2);
}

void write_node_csv(const UQReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path.string(), 0, "cannot write node report");
  out << "node_id,true_label,pred_label,p_true,aleatoric,epistemic,total\n";
  for (const NodeResult& r : report.nodes) {
    out << r.node << ',' << r.true_label << ',' << r.predicted << ',' << csv::number(r.p_true)
        << ',' << csv::number(r.aleatoric) << ',' << csv::number(r.epistemic) << ','
        << csv::number(r.total) << '\n';
  }
}

std::vector<NodeResult> read_node_csv(const std::filesystem::path& path) {
  const auto rows = csv::read(path, 7);
  std::vector<NodeResult> out;
  for (const auto& row : rows) {
    NodeResult r;
    r.node = csv::to_index(row.fields[0], path, row.line);
    r.true_label = csv::to_index(row.fields[1], path, row.line);
    r.predicted = csv::to_index(row.fields[2], path, row.line);
    r.p_true = csv::to_double(row.fields[3], path, row.line);
    r.aleatoric = csv::to_double(row.fields[4], path, row.line);
    r.epistemic = csv::to_double(row.fields[5], path, row.line);
    r.total = csv::to_double(row.fields[6], path, row.line);
    out.push_back(r);
  }
  return out;
}

}  // namespace bgnn
