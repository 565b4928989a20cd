#include "abrnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "abrnet/errors.hpp"
#include "abrnet/rng.hpp"

namespace abrnet {

using nlohmann::json;

void SyntheticSpec::validate() const {
  if (n < 1) throw spec_error("spec.n must be >= 1, got " + std::to_string(n));
  if (d_l < 1) throw spec_error("spec.d_l must be >= 1, got " + std::to_string(d_l));
  if (samples < 1) throw spec_error("spec.samples must be >= 1, got " + std::to_string(samples));
  if (noise < 0.0) throw spec_error("spec.noise must be >= 0, got " + std::to_string(noise));
  if (clusters.empty()) throw spec_error("spec.clusters must contain at least one cluster");
  double total_weight = 0.0;
  for (size_t c = 0; c < clusters.size(); ++c) {
    const auto& cl = clusters[c];
    const std::string where = "spec.clusters[" + std::to_string(c) + "]";
    if (!(cl.weight > 0.0)) throw spec_error(where + ".weight must be > 0");
    total_weight += cl.weight;
    if (static_cast<int>(cl.rates.size()) != n)
      throw spec_error(where + ".rates has " + std::to_string(cl.rates.size()) +
                       " entries, expected n=" + std::to_string(n));
    for (int u = 0; u < n; ++u)
      if (!(cl.rates[u] > 0.0 && cl.rates[u] < 1.0))
        throw spec_error(where + ".rates[" + std::to_string(u) + "] must lie in (0,1), got " +
                         std::to_string(cl.rates[u]));
    const Matrix& corr = cl.correlation;
    if (corr.rows() != n || corr.cols() != n)
      throw spec_error(where + ".correlation is " + corr.shape_str() + ", expected " +
                       std::to_string(n) + "x" + std::to_string(n));
    for (int i = 0; i < n; ++i) {
      if (corr(i, i) != 1.0)
        throw spec_error(where + ".correlation diagonal must be 1.0 (entry " +
                         std::to_string(i) + " is " + std::to_string(corr(i, i)) + ")");
      for (int j = 0; j < n; ++j) {
        if (corr(i, j) < -1.0 || corr(i, j) > 1.0)
          throw spec_error(where + ".correlation[" + std::to_string(i) + "][" +
                           std::to_string(j) + "] outside [-1,1]");
        if (corr(i, j) != corr(j, i))
          throw spec_error(where + ".correlation is not symmetric at (" + std::to_string(i) +
                           "," + std::to_string(j) + ")");
      }
    }
  }
  if (!(total_weight > 0.0)) throw spec_error("spec.clusters total weight must be > 0");
}

namespace {

Matrix identity_corr(int n) { return Matrix::identity(n); }

std::vector<double> json_rates(const json& j, int n, const std::string& where) {
  if (!j.is_array()) throw spec_error(where + " must be an array");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw spec_error(where + " entries must be numbers");
    out.push_back(v.get<double>());
  }
  (void)n;
  return out;
}

Matrix json_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw spec_error(where + " must be a nested array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) throw spec_error(where + " has ragged rows");
    for (int c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) throw spec_error(where + " entries must be numbers");
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw spec_error(where + "." + key + " is required");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw spec_error(where + "." + key + " has the wrong type");
  }
}

}  // namespace

SyntheticSpec parse_synthetic_spec(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw spec_error(std::string("spec is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw spec_error("spec must be a JSON object");

  static const std::vector<std::string> known = {"n",     "d_l",           "samples", "seed",
                                                 "noise", "neighbor_scale", "clusters"};
  for (const auto& [key, _] : doc.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw spec_error("spec has unknown field '" + key + "'");

  SyntheticSpec spec;
  spec.n = require<int>(doc, "n", "spec");
  spec.d_l = require<int>(doc, "d_l", "spec");
  spec.samples = require<int>(doc, "samples", "spec");
  spec.seed = require<std::uint64_t>(doc, "seed", "spec");
  if (doc.contains("noise")) spec.noise = require<double>(doc, "noise", "spec");
  if (doc.contains("neighbor_scale"))
    spec.neighbor_scale = require<double>(doc, "neighbor_scale", "spec");

  if (!doc.contains("clusters") || !doc.at("clusters").is_array())
    throw spec_error("spec.clusters must be an array");
  size_t idx = 0;
  for (const auto& c : doc.at("clusters")) {
    const std::string where = "spec.clusters[" + std::to_string(idx) + "]";
    if (!c.is_object()) throw spec_error(where + " must be an object");
    for (const auto& [key, _] : c.items())
      if (key != "weight" && key != "rates" && key != "correlation")
        throw spec_error(where + " has unknown field '" + key + "'");
    ClusterSpec cl;
    if (c.contains("weight")) cl.weight = require<double>(c, "weight", where);
    cl.rates = c.contains("rates") ? json_rates(c.at("rates"), spec.n, where + ".rates")
                                   : std::vector<double>(spec.n, 0.5);
    cl.correlation = c.contains("correlation")
                         ? json_matrix(c.at("correlation"), where + ".correlation")
                         : identity_corr(spec.n);
    spec.clusters.push_back(std::move(cl));
    ++idx;
  }
  spec.validate();
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("spec: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_spec(ss.str());
}

std::pair<Matrix, std::vector<double>> symmetric_eigen(const Matrix& a) {
  if (a.rows() != a.cols()) throw dim_error("symmetric_eigen: matrix is " + a.shape_str());
  const int n = a.rows();
  Matrix d = a;
  Matrix v = Matrix::identity(n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += d(p, q) * d(p, q);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(d(p, q)) < 1e-300) continue;
        const double theta = (d(q, q) - d(p, p)) / (2.0 * d(p, q));
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double tt = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tt * tt + 1.0);
        const double s = tt * c;
        for (int i = 0; i < n; ++i) {
          const double dip = d(i, p), diq = d(i, q);
          d(i, p) = c * dip - s * diq;
          d(i, q) = s * dip + c * diq;
        }
        for (int i = 0; i < n; ++i) {
          const double dpi = d(p, i), dqi = d(q, i);
          d(p, i) = c * dpi - s * dqi;
          d(q, i) = s * dpi + c * dqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return d(x, x) > d(y, y); });
  Matrix vec(n, n);
  std::vector<double> val(n);
  for (int c = 0; c < n; ++c) {
    val[c] = d(order[c], order[c]);
    for (int r = 0; r < n; ++r) vec(r, c) = v(r, order[c]);
  }
  return {std::move(vec), std::move(val)};
}

namespace {

std::string render_matrix(const Matrix& m) {
  std::ostringstream os;
  os.precision(4);
  os << "[";
  for (int i = 0; i < m.rows(); ++i) {
    os << (i ? ", [" : "[");
    for (int j = 0; j < m.cols(); ++j) os << (j ? ", " : "") << m(i, j);
    os << "]";
  }
  os << "]";
  return os.str();
}

// C = V diag(lambda) V^T with eigenvalues clamped to >= 0, then the factor
// A = V diag(sqrt(lambda)) so that A g has covariance C for g ~ N(0, I).
Matrix psd_factor(const Matrix& corr, size_t cluster_idx) {
  auto [vec, val] = symmetric_eigen(corr);
  const int n = corr.rows();
  double min_val = val.empty() ? 0.0 : *std::min_element(val.begin(), val.end());
  if (min_val < -1e-8) {
    // nearest-PSD suggestion: clamp negative eigenvalues, rescale to unit diagonal
    Matrix clamped(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int k = 0; k < n; ++k) s += vec(i, k) * std::max(val[k], 0.0) * vec(j, k);
        clamped(i, j) = s;
      }
    Matrix suggestion(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        suggestion(i, j) = clamped(i, j) / std::sqrt(clamped(i, i) * clamped(j, j));
    throw spec_error("spec.clusters[" + std::to_string(cluster_idx) +
                     "].correlation is not positive semidefinite (min eigenvalue " +
                     std::to_string(min_val) + "); nearest PSD correlation: " +
                     render_matrix(suggestion));
  }
  Matrix factor(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) factor(i, j) = vec(i, j) * std::sqrt(std::max(val[j], 0.0));
  return factor;
}

Matrix unit_vector(Rng& rng, int d) {
  Matrix v = gaussian_matrix(rng, 1, d);
  double norm = 0.0;
  for (int i = 0; i < d; ++i) norm += v[i] * v[i];
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    v = Matrix(1, d);
    v(0, 0) = 1.0;
    return v;
  }
  for (int i = 0; i < d; ++i) v[i] /= norm;
  return v;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.n, d_l = spec.d_l;

  std::vector<Matrix> factors;
  std::vector<std::vector<double>> thresholds;
  for (size_t c = 0; c < spec.clusters.size(); ++c) {
    factors.push_back(psd_factor(spec.clusters[c].correlation, c));
    std::vector<double> tau(n);
    for (int u = 0; u < n; ++u) tau[u] = inverse_normal_cdf(1.0 - spec.clusters[c].rates[u]);
    thresholds.push_back(std::move(tau));
  }

  Rng rng(spec.seed);
  // anchors first, so they are a pure function of (seed, n, d_l)
  std::vector<Matrix> own(n);
  std::vector<std::vector<Matrix>> neighbor(n, std::vector<Matrix>(n));
  for (int i = 0; i < n; ++i) own[i] = unit_vector(rng, d_l);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i) neighbor[i][j] = unit_vector(rng, d_l);

  std::vector<double> weights;
  for (const auto& cl : spec.clusters) weights.push_back(cl.weight);
  std::discrete_distribution<int> pick_cluster(weights.begin(), weights.end());

  Dataset d;
  d.n = n;
  d.d_l = d_l;
  d.cluster.reserve(spec.samples);
  d.labels.reserve(spec.samples);
  d.features.reserve(spec.samples);

  std::vector<double> g(n), z(n);
  for (int s = 0; s < spec.samples; ++s) {
    const int c = spec.clusters.size() == 1 ? 0 : pick_cluster(rng);
    for (int u = 0; u < n; ++u) g[u] = gaussian(rng);
    const Matrix& a = factors[c];
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += a(i, k) * g[k];
      z[i] = acc;
    }
    std::vector<int> labels(n);
    for (int u = 0; u < n; ++u) labels[u] = z[u] > thresholds[c][u] ? 1 : 0;

    Matrix f(n, d_l);
    for (int i = 0; i < n; ++i) {
      const double si = 2.0 * labels[i] - 1.0;
      for (int t = 0; t < d_l; ++t) f(i, t) = si * own[i][t];
      if (spec.neighbor_scale != 0.0) {
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const double sj = spec.neighbor_scale * (2.0 * labels[j] - 1.0);
          const Matrix& v = neighbor[i][j];
          for (int t = 0; t < d_l; ++t) f(i, t) += sj * v[t];
        }
      }
      if (spec.noise != 0.0)
        for (int t = 0; t < d_l; ++t) f(i, t) += spec.noise * gaussian(rng);
    }
    d.cluster.push_back(c);
    d.labels.push_back(std::move(labels));
    d.features.push_back(std::move(f));
  }
  return d;
}

}  // namespace abrnet
