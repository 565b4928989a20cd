#include "abrnet/dataset.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "abrnet/errors.hpp"

namespace abrnet {

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

int parse_int(const std::string& s, const std::string& what, size_t line_no) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw io_error("dataset: bad " + what + " '" + s + "' on line " + std::to_string(line_no));
  return v;
}

double parse_double(const std::string& s, size_t line_no) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw io_error("dataset: bad number '" + s + "' on line " + std::to_string(line_no));
  return v;
}

std::string header_for(int n, int d_l) {
  std::string h = "sample_id,cluster";
  for (int u = 1; u <= n; ++u) h += ",label_" + std::to_string(u);
  for (int u = 1; u <= n; ++u)
    for (int d = 1; d <= d_l; ++d)
      h += ",f_" + std::to_string(u) + "_" + std::to_string(d);
  return h;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& d) {
  if (d.cluster.size() != d.labels.size() || d.features.size() != d.labels.size())
    throw io_error("dataset: inconsistent sample counts");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("dataset: cannot write " + path);

  std::string buf = header_for(d.n, d.d_l);
  buf += '\n';
  for (int s = 0; s < d.samples(); ++s) {
    buf += std::to_string(s);
    buf += ',';
    buf += std::to_string(d.cluster[s]);
    for (int u = 0; u < d.n; ++u) {
      buf += ',';
      buf += char('0' + d.labels[s][u]);
    }
    const Matrix& f = d.features[s];
    if (f.rows() != d.n || f.cols() != d.d_l)
      throw io_error("dataset: sample " + std::to_string(s) + " features " + f.shape_str() +
                     ", expected " + std::to_string(d.n) + "x" + std::to_string(d.d_l));
    for (int i = 0; i < f.size(); ++i) {
      buf += ',';
      append_double(buf, f[i]);
    }
    buf += '\n';
    if (buf.size() > (1u << 20)) {
      out << buf;
      buf.clear();
    }
  }
  out << buf;
  if (!out) throw io_error("dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("dataset: cannot read " + path);

  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw io_error("dataset: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> head = split_csv(line);
  if (head.size() < 3 || head[0] != "sample_id" || head[1] != "cluster")
    throw io_error("dataset: unexpected header in " + path);
  int n = 0;
  size_t col = 2;
  while (col < head.size() && head[col] == "label_" + std::to_string(n + 1)) {
    ++n;
    ++col;
  }
  if (n == 0) throw io_error("dataset: no label columns in " + path);
  const size_t feat_cols = head.size() - col;
  if (feat_cols == 0 || feat_cols % n != 0)
    throw io_error("dataset: feature column count " + std::to_string(feat_cols) +
                   " is not a multiple of " + std::to_string(n) + " units");
  const int d_l = static_cast<int>(feat_cols) / n;
  if (head != split_csv(header_for(n, d_l)))
    throw io_error("dataset: header does not match the f_{unit}_{dim} layout");

  Dataset d;
  d.n = n;
  d.d_l = d_l;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != head.size())
      throw io_error("dataset: line " + std::to_string(line_no) + " has " +
                     std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(head.size()));
    d.cluster.push_back(parse_int(fields[1], "cluster", line_no));
    std::vector<int> row(n);
    for (int u = 0; u < n; ++u) {
      const int v = parse_int(fields[2 + u], "label", line_no);
      if (v != 0 && v != 1)
        throw io_error("dataset: label " + fields[2 + u] + " on line " +
                       std::to_string(line_no) + " is not 0/1");
      row[u] = v;
    }
    d.labels.push_back(std::move(row));
    Matrix f(n, d_l);
    for (int i = 0; i < f.size(); ++i) f[i] = parse_double(fields[2 + n + i], line_no);
    d.features.push_back(std::move(f));
  }
  if (d.samples() == 0) throw io_error("dataset: " + path + " has no data rows");
  return d;
}

Dataset slice(const Dataset& d, int begin, int end) {
  if (begin < 0 || end > d.samples() || begin >= end)
    throw config_error("dataset slice [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of range for " + std::to_string(d.samples()) + " samples");
  Dataset out;
  out.n = d.n;
  out.d_l = d.d_l;
  out.cluster.assign(d.cluster.begin() + begin, d.cluster.begin() + end);
  out.labels.assign(d.labels.begin() + begin, d.labels.begin() + end);
  out.features.assign(d.features.begin() + begin, d.features.begin() + end);
  return out;
}

}  // namespace abrnet
