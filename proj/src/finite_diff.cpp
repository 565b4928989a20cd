#include "abrnet/finite_diff.hpp"

#include <cmath>

namespace abrnet {

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& at,
                        double h) {
  if (!(h > 0.0)) throw oracle_error("finite_diff_grad: step must be positive");
  Matrix x = at;
  Matrix grad(at.rows(), at.cols());
  for (int i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw oracle_error("finite_diff_grad: non-finite function evaluation at entry " +
                         std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace abrnet
