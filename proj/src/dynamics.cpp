#include "thermoq/dynamics.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "thermoq/errors.hpp"
#include "thermoq/log.hpp"

namespace thermoq {

namespace {

constexpr double kEigenFloor = 1e-12;

void check_size(const Vec& v, int dim, const char* what) {
    if (v.size() != dim) {
        throw DimensionError(std::string(what) + ": expected length " + std::to_string(dim) +
                             ", got " + std::to_string(v.size()));
    }
}

// Spectrum with eigenvalues below the floor set to zero. Throws if the most
// negative eigenvalue is below -psd_tol (pass a negative tolerance to skip).
DensitySpectrum clamped_spectrum(const Vec& v, const StructureConstants& sc, double psd_tol) {
    DensitySpectrum spec = density_spectrum(v, sc);
    if (psd_tol >= 0.0 && spec.values[0] < -psd_tol) {
        throw StateError("density matrix has eigenvalue " + std::to_string(spec.values[0]));
    }
    for (Eigen::Index i = 0; i < spec.values.size(); ++i) {
        if (spec.values[i] < kEigenFloor) spec.values[i] = 0.0;
    }
    return spec;
}

Mat log_mean_table(const Vec& lam) {
    const auto n = lam.size();
    Mat out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) out(i, j) = log_mean(lam[i], lam[j]);
    return out;
}

Mat nonlinear_M_from(const DensitySpectrum& spec, const StructureConstants& sc) {
    const int n = sc.levels();
    const int d = sc.dim();
    std::vector<Mat> lphi;
    lphi.reserve(n);
    for (int i = 0; i < n; ++i) {
        const CMat proj = spec.vectors.col(i) * spec.vectors.col(i).adjoint();
        lphi.push_back(op_L(to_bloch(proj, sc), sc));
    }
    const Mat lam = log_mean_table(spec.values);
    Mat m = Mat::Zero(d, d);
    for (int i = 0; i < n; ++i) {
        Mat k = Mat::Zero(d, d);
        for (int j = 0; j < n; ++j) {
            if (lam(i, j) != 0.0) k += lam(i, j) * lphi[j];
        }
        m.noalias() += lphi[i].transpose() * k;
    }
    return 0.5 * (m + m.transpose());
}

CMat ladder(int levels) {
    CMat a = CMat::Zero(levels, levels);
    for (int k = 1; k < levels; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
    return a;
}

CMat number_op(int levels) {
    CMat n = CMat::Zero(levels, levels);
    for (int k = 0; k < levels; ++k) n(k, k) = k;
    return n;
}

CMat drift_matrix(const ControlSpec& ctrl, Frame frame, int levels) {
    const CMat a = ladder(levels);
    const CMat ad = a.adjoint();
    const double freq = frame == Frame::lab ? ctrl.omega : ctrl.omega - ctrl.omega_d;
    return freq * number_op(levels) - ctrl.xi * (ad * ad * a * a);
}

CMat drive_matrix(const ControlSpec& ctrl, double t, Frame frame, int levels) {
    const CMat a = ladder(levels);
    const Complex omega_t(ctrl.pulse.p(t), ctrl.pulse.q(t));
    if (frame == Frame::rotating) {
        return omega_t * a + std::conj(omega_t) * a.adjoint();
    }
    const double f = 2.0 * (omega_t * std::exp(Complex(0.0, ctrl.omega_d * t))).real();
    return f * (a + a.adjoint());
}

template <typename Fn>
CMat hermitian_apply(const CMat& a, Fn fn) {
    Eigen::SelfAdjointEigenSolver<CMat> es(a);
    Vec vals = es.eigenvalues();
    for (Eigen::Index i = 0; i < vals.size(); ++i) vals[i] = fn(vals[i]);
    return es.eigenvectors() * vals.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint();
}

std::atomic<bool> warned_state_excursion{false};

} // namespace

Mat op_L(const Vec& a, const StructureConstants& sc) {
    check_size(a, sc.dim(), "op_L");
    Mat out = Mat::Zero(sc.dim(), sc.dim());
    for (const auto& e : sc.f_entries()) out(e.i, e.j) += e.value * a[e.k];
    return out;
}

Mat op_G(const Vec& a, const StructureConstants& sc) {
    check_size(a, sc.dim(), "op_G");
    Mat out = Mat::Zero(sc.dim(), sc.dim());
    for (const auto& e : sc.g_entries()) out(e.i, e.j) += e.value * a[e.k];
    return out;
}

double log_mean(double a, double b) {
    if (a < 0.0 || b < 0.0) throw std::domain_error("log_mean: negative argument");
    if (a < kEigenFloor || b < kEigenFloor) return 0.0;
    if (std::abs(a - b) < 1e-12 * std::max(a, 1.0)) return a;
    return (a - b) / (std::log(a) - std::log(b));
}

DensitySpectrum density_spectrum(const Vec& v, const StructureConstants& sc) {
    check_size(v, sc.dim(), "density_spectrum");
    Eigen::SelfAdjointEigenSolver<CMat> es(from_bloch(v, sc));
    return {es.eigenvalues(), es.eigenvectors()};
}

Mat nonlinear_M(const Vec& v, const StructureConstants& sc, double psd_tol) {
    return nonlinear_M_from(clamped_spectrum(v, sc, psd_tol), sc);
}

CMat canonical_correlation(const Vec& v, const CMat& a, const StructureConstants& sc,
                           double psd_tol) {
    if (a.rows() != sc.levels() || a.cols() != sc.levels()) {
        throw DimensionError("canonical_correlation: dimension mismatch");
    }
    const DensitySpectrum spec = clamped_spectrum(v, sc, psd_tol);
    const Mat lam = log_mean_table(spec.values);
    CMat rotated = spec.vectors.adjoint() * a * spec.vectors;
    rotated.array() *= lam.cast<Complex>().array();
    return spec.vectors * rotated * spec.vectors.adjoint();
}

CMat hermitian_log(const CMat& a) {
    return hermitian_apply(a, [](double x) {
        if (x <= 0.0) throw StateError("hermitian_log: non-positive eigenvalue");
        return std::log(x);
    });
}

CMat hermitian_exp(const CMat& a) {
    return hermitian_apply(a, [](double x) { return std::exp(x); });
}

CMat hermitian_power(const CMat& a, double s) {
    return hermitian_apply(a, [s](double x) { return x <= 0.0 ? 0.0 : std::pow(x, s); });
}

double PulseSpec::p(double t) const {
    return p01 + p12 * (std::cos(mod_freq * t) + std::sin(mod_freq * t));
}

double PulseSpec::q(double t) const {
    return q01 + q12 * (std::cos(mod_freq * t) - std::sin(mod_freq * t));
}

Vec drift_bloch(const ControlSpec& ctrl, Frame frame, int levels) {
    return to_bloch(drift_matrix(ctrl, frame, levels), *structure_constants(levels));
}

Vec drive_bloch(const ControlSpec& ctrl, double t, Frame frame, int levels) {
    return to_bloch(drive_matrix(ctrl, t, frame, levels), *structure_constants(levels));
}

Vec hamiltonian_at(const ControlSpec& ctrl, double t, Frame frame, int levels) {
    return drift_bloch(ctrl, frame, levels) + drive_bloch(ctrl, t, frame, levels);
}

DriveBasis drive_basis(int levels) {
    const auto sc = structure_constants(levels);
    const CMat a = ladder(levels);
    const Complex i1(0.0, 1.0);
    return {to_bloch(a + a.adjoint(), *sc), to_bloch(i1 * (a - a.adjoint()), *sc)};
}

Vec number_bloch(int levels) { return to_bloch(number_op(levels), *structure_constants(levels)); }

Vec SystemSpec::unitary_h(double t) const {
    if (!control) return h;
    return h + drive_bloch(*control, t, Frame::rotating, levels);
}

Vec rhs_nonlinear(const Vec& v, const SystemSpec& sys, double t) {
    const auto sc = structure_constants(sys.levels);
    const int d = sc->dim();
    check_size(v, d, "rhs_nonlinear");
    check_size(sys.h, d, "rhs_nonlinear (h)");
    const Mat& x = sys.coupling.x_cols;
    if (x.rows() != d) throw DimensionError("rhs_nonlinear: coupling has wrong row count");

    DensitySpectrum spec = density_spectrum(v, *sc);
    if (spec.values[0] < -1e-8 && !warned_state_excursion.exchange(true)) {
        logger().warn("rhs_nonlinear: state left the admissible set (min eigenvalue {:.3e})",
                      spec.values[0]);
    }
    for (Eigen::Index i = 0; i < spec.values.size(); ++i) {
        if (spec.values[i] < kEigenFloor) spec.values[i] = 0.0;
    }
    const Mat m = nonlinear_M_from(spec, *sc);
    const Mat b = (2.0 / sys.levels) * Mat::Identity(d, d) + op_G(v, *sc) - m;

    Vec out = sc->apply_L(v, sys.unitary_h(t));
    const Vec& hd = sys.dissipative_h();
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const Vec xk = x.col(k);
        if (xk.isZero(0.0)) continue;
        sc->add_L(xk, sc->apply_L(xk, v), 1.0, out);
        const Vec y = sc->apply_L(xk, hd);
        sc->add_L(xk, b * y, 0.5 * sys.beta, out);
    }
    return out;
}

Vec rhs_lindblad(const Vec& v, const LindbladSystem& sys) {
    const auto sc = structure_constants(sys.levels);
    check_size(v, sc->dim(), "rhs_lindblad");
    if (sys.jump_ops.size() != sys.rates.size()) {
        throw DimensionError("rhs_lindblad: jump operator and rate counts differ");
    }
    const CMat rho = from_bloch(v, *sc);
    const CMat h = coeffs_to_hermitian({0.0, sys.h}, *sc);
    const Complex i1(0.0, 1.0);
    CMat drho = -i1 * (h * rho - rho * h);
    for (std::size_t k = 0; k < sys.jump_ops.size(); ++k) {
        const CMat& l = sys.jump_ops[k];
        if (l.rows() != sys.levels || l.cols() != sys.levels) {
            throw DimensionError("rhs_lindblad: jump operator has wrong size");
        }
        const CMat ldl = l.adjoint() * l;
        drho += sys.rates[k] * (l * rho * l.adjoint() - 0.5 * (ldl * rho + rho * ldl));
    }
    return to_bloch(drho, *sc);
}

Mat GenericBlocks::assembled_M() const {
    const auto d = M11.rows();
    Mat out(d + 1, d + 1);
    out.topLeftCorner(d, d) = M11;
    out.topRightCorner(d, 1) = M12;
    out.bottomLeftCorner(1, d) = M12.transpose();
    out(d, d) = M22;
    return out;
}

GenericBlocks generic_blocks(const Vec& v, const SystemSpec& sys) {
    const auto sc = structure_constants(sys.levels);
    const int d = sc->dim();
    check_size(v, d, "generic_blocks");
    const Mat m = nonlinear_M(v, *sc);
    const Mat b = (2.0 / sys.levels) * Mat::Identity(d, d) + op_G(v, *sc) - m;
    GenericBlocks out;
    out.L11 = 2.0 * op_L(v, *sc);
    out.M11 = Mat::Zero(d, d);
    const Mat& x = sys.coupling.x_cols;
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const Mat lq = op_L(x.col(k), *sc);
        out.M11 -= lq * b * lq;
    }
    const Vec& h = sys.dissipative_h();
    out.M12 = -0.5 * out.M11 * h;
    out.M22 = 0.25 * h.dot(out.M11 * h);
    return out;
}

double total_entropy(const Vec& v, const Vec& h, double beta, const StructureConstants& sc) {
    const DensitySpectrum spec = density_spectrum(v, sc);
    double s = 0.0;
    for (Eigen::Index i = 0; i < spec.values.size(); ++i) {
        const double lam = spec.values[i];
        if (lam > 1e-300) s -= lam * std::log(lam);
    }
    return s - beta * 0.5 * v.dot(h);
}

} // namespace thermoq
