#pragma once

#include <optional>
#include <vector>

#include "thermoq/basis.hpp"
#include "thermoq/types.hpp"

namespace thermoq {

// [L(a)]_ij = sum_k a_k f_ijk (skew-symmetric).
Mat op_L(const Vec& a, const StructureConstants& sc);
// [G(a)]_ij = sum_k a_k g_ijk (symmetric).
Mat op_G(const Vec& a, const StructureConstants& sc);

// Logarithmic mean (a - b) / (ln a - ln b). Arguments below 1e-12 count as zero
// and give 0; nearly equal arguments give the limit value a.
double log_mean(double a, double b);

// Eigen-decomposition of the density matrix of a Bloch vector.
struct DensitySpectrum {
    Vec values;   // ascending
    CMat vectors; // columns are eigenvectors
};
DensitySpectrum density_spectrum(const Vec& v, const StructureConstants& sc);

// M(v) = sum_ij Lambda_ij L(phi_i)^T L(phi_j), the Bloch form of
// a -> -C'_rho a with C'_rho A = -int_0^1 [rho^s, [rho^{1-s}, A]] ds.
// Throws StateError if rho has an eigenvalue below -psd_tol.
Mat nonlinear_M(const Vec& v, const StructureConstants& sc, double psd_tol = 1e-10);

// C_rho A = int_0^1 rho^s A rho^{1-s} ds, evaluated spectrally.
CMat canonical_correlation(const Vec& v, const CMat& a, const StructureConstants& sc,
                           double psd_tol = 1e-10);

// Matrix functions of a Hermitian matrix via its eigenbasis.
CMat hermitian_log(const CMat& a);
CMat hermitian_exp(const CMat& a);
CMat hermitian_power(const CMat& a, double s); // eigenvalues clamped at 0

enum class Frame { lab, rotating };

// Control amplitudes p(t) and q(t) of Omega(t) = p(t) + i q(t):
//   p(t) = p01 + p12 (cos(nu t) + sin(nu t))
//   q(t) = q01 + q12 (cos(nu t) - sin(nu t))
// Constant pulses have p12 = q12 = 0.
struct PulseSpec {
    double p01 = 0.0;
    double p12 = 0.0;
    double q01 = 0.0;
    double q12 = 0.0;
    double mod_freq = 0.0; // nu, rad per time unit

    double p(double t) const;
    double q(double t) const;
};

// Driven anharmonic oscillator truncated to N levels:
//   lab:      omega n - xi a^+a^+aa + f(t)(a + a^+),  f = Omega e^{i wd t} + c.c.
//   rotating: (omega - wd) n - xi a^+a^+aa + Omega a + Omega^* a^+
// All frequencies in rad per time unit.
struct ControlSpec {
    double omega = 0.0;
    double xi = 0.0;
    double omega_d = 0.0;
    PulseSpec pulse;
};

// Bloch coefficients of the static part of the Hamiltonian in the given frame.
Vec drift_bloch(const ControlSpec& ctrl, Frame frame, int levels);
// Bloch coefficients of the time-dependent drive term.
Vec drive_bloch(const ControlSpec& ctrl, double t, Frame frame, int levels);
// drift + drive.
Vec hamiltonian_at(const ControlSpec& ctrl, double t, Frame frame, int levels);

// Bloch vectors of a + a^+ and i(a - a^+): the rotating-frame drive is
// p(t) * first + q(t) * second.
struct DriveBasis {
    Vec p_dir;
    Vec q_dir;
};
DriveBasis drive_basis(int levels);
// Bloch vector of the number operator a^+ a.
Vec number_bloch(int levels);

struct CouplingSpec {
    Mat x_cols; // d x K; column k is the Bloch vector of Q_k

    Mat gamma() const { return x_cols * x_cols.transpose(); }
};

// Parameters of the thermodynamic master equation in Bloch form.
//
// The unitary part uses h + drive(t); the dissipative (nonlinear) part uses
// h_dissipative when set, else h. With a rotating-frame control the latter is
// the lab-frame drift.
struct SystemSpec {
    int levels = 2;
    Vec h;
    std::optional<Vec> h_dissipative;
    CouplingSpec coupling;
    double beta = 1.0;
    std::optional<ControlSpec> control;

    const Vec& dissipative_h() const { return h_dissipative ? *h_dissipative : h; }
    Vec unitary_h(double t) const;
};

// Right-hand side of the nonlinear thermodynamic master equation:
//   L(v) h + sum_k L(q_k)^2 v + (beta/2) sum_k L(q_k)(2/N I + G(v) - M(v)) L(q_k) h_diss
// Small excursions outside the state space are clamped and logged.
Vec rhs_nonlinear(const Vec& v, const SystemSpec& sys, double t);

// Linear Lindblad master equation with jump operators L_k and rates gamma_k.
struct LindbladSystem {
    int levels = 2;
    Vec h;
    std::vector<CMat> jump_ops;
    std::vector<double> rates;
};
Vec rhs_lindblad(const Vec& v, const LindbladSystem& sys);

// GENERIC blocks (hbar = k_B = 1) for a constant Hamiltonian.
struct GenericBlocks {
    Mat L11;
    Mat M11;
    Vec M12;
    double M22 = 0.0;

    // (d+1) x (d+1) friction matrix [[M11, M12], [M12^T, M22]].
    Mat assembled_M() const;
};
GenericBlocks generic_blocks(const Vec& v, const SystemSpec& sys);

// Total entropy in units of k_B, up to a constant: S(rho) - beta <H>.
double total_entropy(const Vec& v, const Vec& h, double beta, const StructureConstants& sc);

} // namespace thermoq
