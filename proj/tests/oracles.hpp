#pragma once

// Independent reference computations shared by unit and acceptance tests.

#include <array>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "thermoq/basis.hpp"
#include "thermoq/types.hpp"

namespace thermoq::test {

// rho^s by eigen-decomposition with eigenvalues floored at zero.
inline CMat power(const CMat& rho, double s) {
    Eigen::SelfAdjointEigenSolver<CMat> es(rho);
    Vec lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam[i] = lam[i] > 0 ? std::pow(lam[i], s) : 0.0;
    return es.eigenvectors() * lam.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint();
}

// Composite 5-point Gauss-Legendre on [0,1] with 400 panels (2000 nodes) of
// an n x cols matrix-valued integrand.
template <typename Fn>
CMat quadrature(Fn integrand, int n, int cols = -1) {
    static const std::array<double, 5> x = {0.0, -0.5384693101056831, 0.5384693101056831,
                                            -0.9061798459386640, 0.9061798459386640};
    static const std::array<double, 5> w = {0.5688888888888889, 0.4786286704993665,
                                            0.4786286704993665, 0.2369268850561891,
                                            0.2369268850561891};
    const int panels = 400;
    const double hp = 1.0 / panels;
    CMat acc = CMat::Zero(n, cols < 0 ? n : cols);
    for (int p = 0; p < panels; ++p) {
        const double mid = (p + 0.5) * hp;
        for (int q = 0; q < 5; ++q) acc += (0.5 * hp * w[q]) * integrand(mid + 0.5 * hp * x[q]);
    }
    return acc;
}

inline CMat comm(const CMat& a, const CMat& b) { return a * b - b * a; }

// Bloch image of int_0^1 [rho^s, [rho^{1-s}, A]] ds.
inline Vec quadrature_M_apply(const CMat& rho, const CMat& a, const StructureConstants& sc) {
    const int n = sc.levels();
    const CMat val = quadrature(
        [&](double s) { return comm(power(rho, s), comm(power(rho, 1.0 - s), a)); }, n);
    return to_bloch(val, sc);
}

} // namespace thermoq::test
