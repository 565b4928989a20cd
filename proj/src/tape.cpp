#include "abrnet/tape.hpp"

#include <cmath>
#include <utility>

namespace abrnet {

Tape::Id Tape::push(Matrix value, std::function<void(Tape&, Id)> back) {
  const Id id = static_cast<Id>(nodes_.size());
  Matrix grad(value.rows(), value.cols());
  nodes_.push_back(Node{std::move(value), std::move(grad), std::move(back)});
  return id;
}

Tape::Id Tape::leaf(Matrix value) { return push(std::move(value), nullptr); }

Tape::Id Tape::add(Id a, Id b) {
  return push(abrnet::add(value(a), value(b)), [a, b](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    for (int i = 0; i < g.size(); ++i) {
      t.grad_ref(a)[i] += g[i];
      t.grad_ref(b)[i] += g[i];
    }
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  return push(abrnet::sub(value(a), value(b)), [a, b](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    for (int i = 0; i < g.size(); ++i) {
      t.grad_ref(a)[i] += g[i];
      t.grad_ref(b)[i] -= g[i];
    }
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  return push(hadamard(value(a), value(b)), [a, b](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    for (int i = 0; i < g.size(); ++i) {
      t.grad_ref(a)[i] += g[i] * vb[i];
      t.grad_ref(b)[i] += g[i] * va[i];
    }
  });
}

Tape::Id Tape::scale(Id a, double c) {
  return push(abrnet::scale(value(a), c), [a, c](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    for (int i = 0; i < g.size(); ++i) t.grad_ref(a)[i] += c * g[i];
  });
}

Tape::Id Tape::matmul(Id a, Id b) {
  return push(abrnet::matmul(value(a), value(b)), [a, b](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    // dA += g * B^T, dB += A^T * g
    Matrix& ga = t.grad_ref(a);
    for (int i = 0; i < va.rows(); ++i)
      for (int k = 0; k < va.cols(); ++k) {
        double s = 0.0;
        for (int j = 0; j < vb.cols(); ++j) s += g(i, j) * vb(k, j);
        ga(i, k) += s;
      }
    Matrix& gb = t.grad_ref(b);
    for (int k = 0; k < vb.rows(); ++k)
      for (int j = 0; j < vb.cols(); ++j) {
        double s = 0.0;
        for (int i = 0; i < va.rows(); ++i) s += va(i, k) * g(i, j);
        gb(k, j) += s;
      }
  });
}

Tape::Id Tape::transpose(Id a) {
  return push(abrnet::transpose(value(a)), [a](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_ref(a);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
  });
}

Tape::Id Tape::leaky_relu(Id a, double slope) {
  return push(abrnet::leaky_relu(value(a), slope), [a, slope](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va = t.value(a);
    for (int i = 0; i < g.size(); ++i)
      t.grad_ref(a)[i] += g[i] * (va[i] >= 0.0 ? 1.0 : slope);
  });
}

Tape::Id Tape::relu(Id a) {
  const Matrix& va = value(a);
  Matrix out(va.rows(), va.cols());
  for (int i = 0; i < va.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
  return push(std::move(out), [a](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va2 = t.value(a);
    for (int i = 0; i < g.size(); ++i)
      if (va2[i] > 0.0) t.grad_ref(a)[i] += g[i];
  });
}

Tape::Id Tape::sigmoid(Id a) {
  return push(abrnet::sigmoid(value(a)), [a](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& s = t.value(self);
    for (int i = 0; i < g.size(); ++i)
      t.grad_ref(a)[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Tape::Id Tape::softmax_rows(Id a) {
  return push(abrnet::softmax_rows(value(a)), [a](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& s = t.value(self);
    Matrix& ga = t.grad_ref(a);
    for (int i = 0; i < s.rows(); ++i) {
      double dot = 0.0;
      for (int j = 0; j < s.cols(); ++j) dot += g(i, j) * s(i, j);
      for (int j = 0; j < s.cols(); ++j) ga(i, j) += s(i, j) * (g(i, j) - dot);
    }
  });
}

Tape::Id Tape::log(Id a) {
  const Matrix& va = value(a);
  Matrix out(va.rows(), va.cols());
  for (int i = 0; i < va.size(); ++i) out[i] = std::log(va[i]);
  return push(std::move(out), [a](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va2 = t.value(a);
    for (int i = 0; i < g.size(); ++i) t.grad_ref(a)[i] += g[i] / va2[i];
  });
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  const Matrix& va = value(a);
  Matrix out(va.rows(), va.cols());
  for (int i = 0; i < va.size(); ++i)
    out[i] = va[i] < lo ? lo : (va[i] > hi ? hi : va[i]);
  return push(std::move(out), [a, lo, hi](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va2 = t.value(a);
    for (int i = 0; i < g.size(); ++i)
      if (va2[i] > lo && va2[i] < hi) t.grad_ref(a)[i] += g[i];
  });
}

Tape::Id Tape::row_scale(Id a, Id v) {
  return push(abrnet::row_scale(value(a), value(v)), [a, v](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    const Matrix& va2 = t.value(a);
    const Matrix& vv2 = t.value(v);
    Matrix& ga = t.grad_ref(a);
    Matrix& gv = t.grad_ref(v);
    for (int i = 0; i < va2.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < va2.cols(); ++j) {
        ga(i, j) += g(i, j) * vv2(i, 0);
        s += g(i, j) * va2(i, j);
      }
      gv(i, 0) += s;
    }
  });
}

Tape::Id Tape::tile_cols(Id v, int cols) {
  const Matrix& vv = value(v);
  if (vv.cols() != 1) throw dim_error("tile_cols: expected column vector, got " + vv.shape_str());
  Matrix out(vv.rows(), cols);
  for (int i = 0; i < vv.rows(); ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = vv(i, 0);
  return push(std::move(out), [v](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    Matrix& gv = t.grad_ref(v);
    for (int i = 0; i < g.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < g.cols(); ++j) s += g(i, j);
      gv(i, 0) += s;
    }
  });
}

Tape::Id Tape::row(Id a, int r) {
  const Matrix& va = value(a);
  if (r < 0 || r >= va.rows())
    throw dim_error("row: index " + std::to_string(r) + " out of range for " + va.shape_str());
  Matrix out(1, va.cols());
  for (int j = 0; j < va.cols(); ++j) out(0, j) = va(r, j);
  return push(std::move(out), [a, r](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_ref(a);
    for (int j = 0; j < g.cols(); ++j) ga(r, j) += g(0, j);
  });
}

Tape::Id Tape::col(Id a, int c) {
  const Matrix& va = value(a);
  if (c < 0 || c >= va.cols())
    throw dim_error("col: index " + std::to_string(c) + " out of range for " + va.shape_str());
  Matrix out(va.rows(), 1);
  for (int i = 0; i < va.rows(); ++i) out(i, 0) = va(i, c);
  return push(std::move(out), [a, c](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_ref(a);
    for (int i = 0; i < g.rows(); ++i) ga(i, c) += g(i, 0);
  });
}

Tape::Id Tape::vstack(const std::vector<Id>& parts) {
  if (parts.empty()) throw dim_error("vstack: no parts");
  const int cols = value(parts[0]).cols();
  int rows = 0;
  for (Id p : parts) {
    if (value(p).cols() != cols)
      throw dim_error("vstack: column mismatch " + value(p).shape_str());
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  int r0 = 0;
  for (Id p : parts) {
    const Matrix& vp = value(p);
    for (int i = 0; i < vp.rows(); ++i)
      for (int j = 0; j < cols; ++j) out(r0 + i, j) = vp(i, j);
    r0 += vp.rows();
  }
  return push(std::move(out), [parts](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    int r0 = 0;
    for (Id p : parts) {
      Matrix& gp = t.grad_ref(p);
      for (int i = 0; i < gp.rows(); ++i)
        for (int j = 0; j < gp.cols(); ++j) gp(i, j) += g(r0 + i, j);
      r0 += gp.rows();
    }
  });
}

Tape::Id Tape::hconcat(const std::vector<Id>& parts) {
  if (parts.empty()) throw dim_error("hconcat: no parts");
  const int rows = value(parts[0]).rows();
  int cols = 0;
  for (Id p : parts) {
    if (value(p).rows() != rows)
      throw dim_error("hconcat: row mismatch " + value(p).shape_str());
    cols += value(p).cols();
  }
  Matrix out(rows, cols);
  int c0 = 0;
  for (Id p : parts) {
    const Matrix& vp = value(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < vp.cols(); ++j) out(i, c0 + j) = vp(i, j);
    c0 += vp.cols();
  }
  return push(std::move(out), [parts](Tape& t, Id self) {
    const Matrix& g = t.grad(self);
    int c0 = 0;
    for (Id p : parts) {
      Matrix& gp = t.grad_ref(p);
      for (int i = 0; i < gp.rows(); ++i)
        for (int j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, c0 + j);
      c0 += gp.cols();
    }
  });
}

Tape::Id Tape::sum_all(Id a) {
  Matrix out(1, 1);
  out(0, 0) = sum(value(a));
  return push(std::move(out), [a](Tape& t, Id self) {
    const double g = t.grad(self)(0, 0);
    Matrix& ga = t.grad_ref(a);
    for (int i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

void Tape::backward(Id loss_id) {
  const Matrix& lv = value(loss_id);
  if (lv.rows() != 1 || lv.cols() != 1)
    throw dim_error("backward: loss must be 1x1, got " + lv.shape_str());
  for (auto& n : nodes_)
    for (int i = 0; i < n.grad.size(); ++i) n.grad[i] = 0.0;
  nodes_[loss_id].grad(0, 0) = 1.0;
  for (Id id = loss_id; id >= 0; --id)
    if (nodes_[id].back) nodes_[id].back(*this, id);
}

}  // namespace abrnet
