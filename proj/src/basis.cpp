#include "thermoq/basis.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <string>

#include "thermoq/errors.hpp"

namespace thermoq {

namespace {

constexpr double kResidueTol = 1e-12;
constexpr double kZeroTol = 1e-14;

void check_levels(int levels) {
    if (levels < 2) {
        throw DimensionError("number of levels must be >= 2, got " + std::to_string(levels));
    }
}

void check_size(const Vec& v, int dim, const char* what) {
    if (v.size() != dim) {
        throw DimensionError(std::string(what) + ": expected length " + std::to_string(dim) +
                             ", got " + std::to_string(v.size()));
    }
}

} // namespace

std::vector<CMat> gell_mann_basis(int levels) {
    check_levels(levels);
    const Complex i1(0.0, 1.0);
    std::vector<CMat> out;
    out.reserve(static_cast<std::size_t>(bloch_dim(levels)));
    for (int k = 1; k < levels; ++k) {
        for (int j = 0; j < k; ++j) {
            CMat sym = CMat::Zero(levels, levels);
            sym(j, k) = 1.0;
            sym(k, j) = 1.0;
            out.push_back(std::move(sym));

            CMat anti = CMat::Zero(levels, levels);
            anti(j, k) = -i1;
            anti(k, j) = i1;
            out.push_back(std::move(anti));
        }
        CMat diag = CMat::Zero(levels, levels);
        const double scale = std::sqrt(2.0 / (k * (k + 1.0)));
        for (int j = 0; j < k; ++j) diag(j, j) = scale;
        diag(k, k) = -scale * k;
        out.push_back(std::move(diag));
    }
    return out;
}

StructureConstants::StructureConstants(int levels)
    : levels_(levels), dim_(bloch_dim(levels)), basis_(gell_mann_basis(levels)) {
    const auto d = static_cast<std::size_t>(dim_);
    f_.assign(d * d * d, 0.0);
    g_.assign(d * d * d, 0.0);

    // Products s_j s_k are reused for every i.
    std::vector<CMat> prod(d * d);
    for (int j = 0; j < dim_; ++j)
        for (int k = 0; k < dim_; ++k) prod[j * d + k] = basis_[j] * basis_[k];

    for (int i = 0; i < dim_; ++i) {
        for (int j = 0; j < dim_; ++j) {
            for (int k = 0; k < dim_; ++k) {
                const Complex tjk = (basis_[i] * prod[j * d + k]).trace();
                const Complex tkj = (basis_[i] * prod[k * d + j]).trace();
                const Complex fc = Complex(0.0, -0.25) * (tjk - tkj);
                const Complex gc = 0.25 * (tjk + tkj);
                if (std::abs(fc.imag()) > kResidueTol || std::abs(gc.imag()) > kResidueTol) {
                    throw std::logic_error("structure constants have an imaginary residue");
                }
                const double fv = std::abs(fc.real()) < kZeroTol ? 0.0 : fc.real();
                const double gv = std::abs(gc.real()) < kZeroTol ? 0.0 : gc.real();
                f_[index(i, j, k)] = fv;
                g_[index(i, j, k)] = gv;
                if (fv != 0.0) f_nz_.push_back({i, j, k, fv});
                if (gv != 0.0) g_nz_.push_back({i, j, k, gv});
            }
        }
    }
}

Vec StructureConstants::apply_L(const Vec& a, const Vec& b) const {
    Vec out = Vec::Zero(dim_);
    add_L(a, b, 1.0, out);
    return out;
}

Vec StructureConstants::apply_G(const Vec& a, const Vec& b) const {
    Vec out = Vec::Zero(dim_);
    add_G(a, b, 1.0, out);
    return out;
}

void StructureConstants::add_L(const Vec& a, const Vec& b, double scale, Vec& out) const {
    // [L(a) b]_i = sum_{j,k} f_ijk b_j a_k
    for (const auto& e : f_nz_) out[e.i] += scale * e.value * b[e.j] * a[e.k];
}

void StructureConstants::add_G(const Vec& a, const Vec& b, double scale, Vec& out) const {
    for (const auto& e : g_nz_) out[e.i] += scale * e.value * b[e.j] * a[e.k];
}

std::shared_ptr<const StructureConstants> structure_constants(int levels) {
    check_levels(levels);
    static std::mutex mutex;
    static std::map<int, std::shared_ptr<const StructureConstants>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(levels);
    if (it == cache.end()) {
        it = cache.emplace(levels, std::make_shared<const StructureConstants>(levels)).first;
    }
    return it->second;
}

bool is_hermitian(const CMat& a, double tol) {
    if (a.rows() != a.cols()) return false;
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = r; c < a.cols(); ++c)
            if (std::abs(a(r, c) - std::conj(a(c, r))) > tol) return false;
    return true;
}

Vec to_bloch(const CMat& rho, const StructureConstants& sc) {
    if (rho.rows() != sc.levels() || rho.cols() != sc.levels()) {
        throw DimensionError("to_bloch: matrix is " + std::to_string(rho.rows()) + "x" +
                             std::to_string(rho.cols()) + ", expected " +
                             std::to_string(sc.levels()) + "x" + std::to_string(sc.levels()));
    }
    Vec v(sc.dim());
    for (int j = 0; j < sc.dim(); ++j) {
        // Tr(s_j rho) without forming the product.
        v[j] = (sc.basis()[j].transpose().array() * rho.array()).sum().real();
    }
    return v;
}

CMat from_bloch(const Vec& v, const StructureConstants& sc) {
    check_size(v, sc.dim(), "from_bloch");
    const int n = sc.levels();
    CMat rho = CMat::Identity(n, n) / static_cast<double>(n);
    for (int j = 0; j < sc.dim(); ++j) rho += 0.5 * v[j] * sc.basis()[j];
    return rho;
}

HermitianCoeffs hermitian_to_coeffs(const CMat& a, const StructureConstants& sc) {
    if (a.rows() != sc.levels() || a.cols() != sc.levels()) {
        throw DimensionError("hermitian_to_coeffs: dimension mismatch");
    }
    if (!is_hermitian(a)) throw ValidationError("hermitian_to_coeffs: matrix is not Hermitian");
    return {a.trace().real(), to_bloch(a, sc)};
}

CMat coeffs_to_hermitian(const HermitianCoeffs& c, const StructureConstants& sc) {
    check_size(c.a, sc.dim(), "coeffs_to_hermitian");
    const int n = sc.levels();
    CMat out = CMat::Identity(n, n) * (c.trace / n);
    for (int j = 0; j < sc.dim(); ++j) out += 0.5 * c.a[j] * sc.basis()[j];
    return out;
}

} // namespace thermoq
