#pragma once

#include <complex>

#include <Eigen/Dense>

namespace thermoq {

using Complex = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;

// Number of Bloch components for an N-level system.
constexpr int bloch_dim(int levels) { return levels * levels - 1; }

} // namespace thermoq
