#pragma once

#include <string>
#include <vector>

#include "abrnet/loss.hpp"
#include "abrnet/matrix.hpp"

namespace abrnet {

// In-memory multi-label dataset: per sample a cluster id, n binary labels
// and an n x d_l feature block (one feature row per unit).
struct Dataset {
  int n = 0;
  int d_l = 0;
  std::vector<int> cluster;
  std::vector<std::vector<int>> labels;  // samples x n, entries 0/1
  std::vector<Matrix> features;          // each n x d_l

  int samples() const { return static_cast<int>(labels.size()); }
  LabelBatch label_batch() const { return LabelBatch::from_rows(labels); }
};

// CSV layout: header
//   sample_id,cluster,label_1..label_n,f_1_1..f_1_{d_l},...,f_n_{d_l}
// then one row per sample. LF line endings; doubles written shortest
// round-trip so load(save(d)) == d bitwise.
void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

// Samples [begin, end) as a new dataset.
Dataset slice(const Dataset& d, int begin, int end);

}  // namespace abrnet
