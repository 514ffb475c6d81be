#pragma once

#include <memory>
#include <vector>

#include "thermoq/types.hpp"

namespace thermoq {

// Generalized Gell-Mann matrices for an N-level system, normalized so that
// Tr(s_i) = 0 and Tr(s_i s_j) = 2 delta_ij.
//
// Ordering follows the usual SU(3) numbering generalized to any N: for each
// k = 1..N-1, the symmetric and antisymmetric generators of every pair (j, k)
// with j < k, then the diagonal generator of level k. For N = 2 this gives the
// Pauli matrices (X, Y, Z); for N = 3, lambda_1..lambda_8.
std::vector<CMat> gell_mann_basis(int levels);

// Dense structure constants together with their nonzero entries.
//
//   f_ijk = -(i/4) Tr(s_i [s_j, s_k])   totally antisymmetric
//   g_ijk =  (1/4) Tr(s_i {s_j, s_k})   totally symmetric
//
// Immutable after construction; share through structure_constants().
class StructureConstants {
public:
    struct Entry {
        int i;
        int j;
        int k;
        double value;
    };

    explicit StructureConstants(int levels);

    int levels() const noexcept { return levels_; }
    int dim() const noexcept { return dim_; }
    const std::vector<CMat>& basis() const noexcept { return basis_; }

    double f(int i, int j, int k) const { return f_[index(i, j, k)]; }
    double g(int i, int j, int k) const { return g_[index(i, j, k)]; }

    // All (i,j,k) with nonzero f (resp. g), every permutation listed.
    const std::vector<Entry>& f_entries() const noexcept { return f_nz_; }
    const std::vector<Entry>& g_entries() const noexcept { return g_nz_; }

    // L(a) b with [L(a)]_ij = sum_k a_k f_ijk, without forming L(a).
    Vec apply_L(const Vec& a, const Vec& b) const;
    // G(a) b with [G(a)]_ij = sum_k a_k g_ijk.
    Vec apply_G(const Vec& a, const Vec& b) const;

    // Accumulating forms used in hot loops: out += scale * L(a) b.
    void add_L(const Vec& a, const Vec& b, double scale, Vec& out) const;
    void add_G(const Vec& a, const Vec& b, double scale, Vec& out) const;

private:
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * dim_ + j) * dim_ + k;
    }

    int levels_;
    int dim_;
    std::vector<CMat> basis_;
    std::vector<double> f_;
    std::vector<double> g_;
    std::vector<Entry> f_nz_;
    std::vector<Entry> g_nz_;
};

// Cached per N; thread-safe.
std::shared_ptr<const StructureConstants> structure_constants(int levels);

bool is_hermitian(const CMat& a, double tol = 1e-12);

// v_j = Tr(s_j rho).
Vec to_bloch(const CMat& rho, const StructureConstants& sc);

// I/N + (1/2) sum_j v_j s_j.
CMat from_bloch(const Vec& v, const StructureConstants& sc);

struct HermitianCoeffs {
    double trace = 0.0; // a0 = Tr(A)
    Vec a;              // a_j = Tr(s_j A)
};

// Expansion A = (a0/N) I + (1/2) a.s of a Hermitian operator.
HermitianCoeffs hermitian_to_coeffs(const CMat& a, const StructureConstants& sc);
CMat coeffs_to_hermitian(const HermitianCoeffs& c, const StructureConstants& sc);

} // namespace thermoq
