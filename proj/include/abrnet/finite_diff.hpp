#pragma once

#include <functional>

#include "abrnet/matrix.hpp"

namespace abrnet {

// Central-difference gradient of a scalar function of a matrix:
// (f(x + h*e) - f(x - h*e)) / (2h) per entry. Independent of the tape;
// used as the oracle every analytic gradient is checked against.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& at,
                        double h = 1e-5);

}  // namespace abrnet
