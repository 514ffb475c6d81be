#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "test_util.hpp"
#include "thermoq/dynamics.hpp"
#include "thermoq/errors.hpp"
#include "thermoq/model.hpp"

using namespace thermoq;
using thermoq::test::max_abs;

namespace {

LearnableModel random_model(int n, std::mt19937_64& rng, double net_scale = 1.0) {
    LearnableModel m = LearnableModel::zeros(n, 0.8);
    const int d = m.dim();
    m.h = test::random_vec(d, rng);
    m.x_hat = test::random_vec(d * d, rng, 0.3).reshaped(d, d).triangularView<Eigen::Lower>();
    m.mlp = Mlp::glorot(default_mlp_widths(n), net_scale, rng);
    for (std::size_t l = 0; l < m.mlp.layers(); ++l) m.mlp.bias(l) = test::random_vec(m.mlp.bias(l).size(), rng, 0.1);
    m.dissipative_shift = test::random_vec(d, rng, 0.5);
    return m;
}

LearnableModel two_level_truth() {
    LearnableModel m = LearnableModel::zeros(2, 1.0 / 0.65);
    m.h = Vec::Unit(3, 2) * 1.5;
    m.x_hat(0, 0) = m.x_hat(1, 1) = std::sqrt(0.0785 / 2.0);
    return m;
}

double min_eig(const Mat& a) { return Eigen::SelfAdjointEigenSolver<Mat>(a).eigenvalues().minCoeff(); }

// Direct dense evaluation of the learnable field.
Vec dense_field(const Vec& v, const LearnableModel& m, const Vec& hu) {
    const auto sc = structure_constants(m.levels);
    const int d = m.dim();
    const Vec hd = m.h + m.dissipative_shift;
    const Mat b = (2.0 / m.levels) * Mat::Identity(d, d) + op_G(v, *sc) - M_theta(v, m);
    Vec f = op_L(v, *sc) * hu;
    for (int k = 0; k < d; ++k) {
        const Mat lk = op_L(m.x_hat.col(k), *sc);
        f += lk * lk * v + 0.5 * m.beta * lk * b * lk * hd;
    }
    return f;
}

} // namespace

TEST_CASE("Gamma from the Cholesky factor") {
    LearnableModel m = LearnableModel::zeros(2, 1.0);
    CHECK(gamma_of(m).norm() == 0.0);
    const LearnableModel truth = two_level_truth();
    Mat expected = Mat::Zero(3, 3);
    expected(0, 0) = expected(1, 1) = 0.0785 / 2.0;
    CHECK(max_abs(gamma_of(truth) - expected) < 1e-15);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const LearnableModel r = random_model(3, rng);
        CHECK(min_eig(gamma_of(r)) >= -1e-12);
    }
}

TEST_CASE("couplings recovered from the Cholesky factor") {
    const LearnableModel truth = two_level_truth();
    const auto sc = structure_constants(2);
    const auto q = couplings_from_cholesky(truth);
    REQUIRE(q.size() == 3);
    const double s = std::sqrt(0.0785 / 2.0);
    CHECK(max_abs(q[0] - s * sc->basis()[0] / 2.0) < 1e-15);
    CHECK(max_abs(q[1] - s * sc->basis()[1] / 2.0) < 1e-15);
    CHECK(max_abs(q[2]) == 0.0);

    std::mt19937_64 rng(2);
    const LearnableModel r = random_model(3, rng);
    const auto sc3 = structure_constants(3);
    Mat x(8, 8);
    const auto qs = couplings_from_cholesky(r);
    for (int k = 0; k < 8; ++k) {
        CHECK(std::abs(qs[k].trace()) < 1e-14);
        CHECK(is_hermitian(qs[k]));
        x.col(k) = hermitian_to_coeffs(qs[k], *sc3).a;
    }
    CHECK(max_abs(x * x.transpose() - gamma_of(r)) < 1e-12);
}

TEST_CASE("purity weight") {
    CHECK(r_tilde_sq(Vec::Zero(3), 2) == 0.0);
    CHECK(r_tilde_sq(Vec::Unit(3, 1), 2) == 1.0);
    Vec v = Vec::Zero(8);
    v[0] = std::sqrt(2.0 / 3.0);
    CHECK(r_tilde_sq(v, 3) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("R interpolates between the network and the identity") {
    std::mt19937_64 rng(3);
    const LearnableModel m = random_model(3, rng);
    const auto sc = structure_constants(3);
    const Vec pure = to_bloch(test::random_pure(3, rng), *sc);
    CHECK(max_abs(R_of(pure, m) - Mat::Identity(8, 8)) < 1e-12);
    CHECK(max_abs(R_of(Vec::Zero(8), m) - R_tilde(Vec::Zero(8), m)) == 0.0);
    const Mat rt = R_tilde(pure, m);
    CHECK(max_abs(Mat(rt.triangularView<Eigen::StrictlyLower>())) == 0.0);

    LearnableModel small = LearnableModel::zeros(3, 1.0);
    small.mlp = Mlp::glorot(default_mlp_widths(3), 1e-6, rng);
    const Vec mixed = test::random_mixed_bloch(*sc, rng);
    CHECK(max_abs(R_of(mixed, small) - r_tilde_sq(mixed, 3) * Mat::Identity(8, 8)) < 1e-5);
}

TEST_CASE("M_theta is PSD, respects the null space and collapses at pure states") {
    std::mt19937_64 rng(4);
    for (int n : {2, 3}) {
        const auto sc = structure_constants(n);
        for (int trial = 0; trial < 50; ++trial) {
            const LearnableModel m = random_model(n, rng, 2.0);
            const Vec v = test::random_mixed_bloch(*sc, rng);
            const Mat mt = M_theta(v, m);
            CHECK(max_abs(mt - mt.transpose()) < 1e-12);
            CHECK(min_eig(mt) >= -1e-12);
            const Vec w = hermitian_to_coeffs(hermitian_log(from_bloch(v, *sc)), *sc).a;
            CHECK((mt * w).norm() < 1e-10 * (1.0 + w.norm()));
            CHECK((mt * v).norm() < 1e-12);
            const Vec p = to_bloch(test::random_pure(n, rng), *sc);
            const Mat l = op_L(p, *sc);
            CHECK(max_abs(M_theta(p, m) - l.transpose() * l) < 1e-12);
        }
    }
}

TEST_CASE("learnable field matches dense assembly and exact dynamics") {
    std::mt19937_64 rng(5);
    for (int n : {2, 3}) {
        const auto sc = structure_constants(n);
        for (int trial = 0; trial < 10; ++trial) {
            const LearnableModel m = random_model(n, rng);
            const Vec v = test::random_mixed_bloch(*sc, rng);
            CHECK((F_theta(v, m, 0.0) - dense_field(v, m, m.h)).norm() < 1e-12);
        }
    }

    // With true parameters the field agrees with the exact equation on pure states.
    const LearnableModel truth = two_level_truth();
    SystemSpec sys;
    sys.levels = 2;
    sys.h = truth.h;
    sys.coupling.x_cols = truth.x_hat;
    sys.beta = truth.beta;
    const auto sc2 = structure_constants(2);
    for (int trial = 0; trial < 10; ++trial) {
        const Vec p = to_bloch(test::random_pure(2, rng), *sc2);
        CHECK((F_theta(p, truth, 0.0) - rhs_nonlinear(p, sys, 0.0)).norm() < 1e-10);
    }
    // For two levels M(v) = c L^T L; a constant network reproduces it at one state.
    const Vec v = Vec(Eigen::Vector3d(0.2, -0.3, 0.4));
    const Mat l = op_L(v, *sc2);
    const double c = nonlinear_M(v, *sc2)(0, 0) / (l.transpose() * l)(0, 0);
    const double r2 = r_tilde_sq(v, 2);
    LearnableModel fit = truth;
    Vec bias = Vec::Zero(6);
    bias[0] = bias[3] = bias[5] = (std::sqrt(c) - r2) / (1.0 - r2);
    fit.mlp.bias(2) = bias;
    CHECK(max_abs(M_theta(v, fit) - nonlinear_M(v, *sc2)) < 1e-12);
    CHECK((F_theta(v, fit, 0.0) - rhs_nonlinear(v, sys, 0.0)).norm() < 1e-10);
}

TEST_CASE("zero temperature weight leaves a Lindblad field") {
    std::mt19937_64 rng(6);
    const auto sc = structure_constants(3);
    LearnableModel m = random_model(3, rng);
    m.beta = 0.0;
    LindbladSystem lind;
    lind.levels = 3;
    lind.h = m.h;
    for (const CMat& q : couplings_from_cholesky(m)) {
        lind.jump_ops.push_back(q);
        lind.rates.push_back(2.0);
    }
    for (int trial = 0; trial < 10; ++trial) {
        const Vec v = test::random_mixed_bloch(*sc, rng);
        CHECK((F_theta(v, m, 0.0) - rhs_lindblad(v, lind)).norm() < 1e-12);
    }
}

TEST_CASE("control drive enters the unitary part only") {
    std::mt19937_64 rng(7);
    const LearnableModel m = random_model(3, rng);
    ControlSpec ctrl;
    ctrl.pulse = {0.4, 0.3, -0.2, 0.1, 2.0};
    const auto sc = structure_constants(3);
    const Vec v = test::random_mixed_bloch(*sc, rng);
    const double t = 0.9;
    const Vec hu = m.h + drive_bloch(ctrl, t, Frame::rotating, 3);
    CHECK((F_theta(v, m, t, &ctrl) - dense_field(v, m, hu)).norm() < 1e-12);
}

TEST_CASE("vector-Jacobian product matches finite differences") {
    std::mt19937_64 rng(8);
    for (int n : {2, 3}) {
        const auto sc = structure_constants(n);
        for (int trial = 0; trial < 3; ++trial) {
            LearnableModel m = random_model(n, rng);
            m.learn_beta = true;
            ControlSpec ctrl;
            ctrl.pulse = {0.4, 0.3, -0.2, 0.1, 2.0};
            const Vec v = test::random_mixed_bloch(*sc, rng) * 0.9;
            const int d = m.dim();
            const Vec adj = test::random_vec(d, rng);
            const double t = 0.3;

            ModelField field(m);
            field.set_control(&ctrl);
            Vec gv = Vec::Zero(d);
            Vec gth = Vec::Zero(static_cast<Eigen::Index>(m.parameter_count()));
            field.vjp(t, v, adj, gv, gth);

            const double eps = 1e-6;
            Vec fd_v(d);
            for (int i = 0; i < d; ++i) {
                Vec vp = v, vm = v;
                vp[i] += eps;
                vm[i] -= eps;
                fd_v[i] = adj.dot(F_theta(vp, m, t, &ctrl) - F_theta(vm, m, t, &ctrl)) / (2 * eps);
            }
            CHECK((gv - fd_v).norm() <= 1e-7 * (1.0 + fd_v.norm()));

            const Vec theta = m.parameters();
            Vec fd_t(theta.size());
            for (Eigen::Index i = 0; i < theta.size(); ++i) {
                LearnableModel mp = m, mm = m;
                Vec tp = theta, tm = theta;
                tp[i] += eps;
                tm[i] -= eps;
                mp.set_parameters(tp);
                mm.set_parameters(tm);
                fd_t[i] = adj.dot(F_theta(v, mp, t, &ctrl) - F_theta(v, mm, t, &ctrl)) / (2 * eps);
            }
            CHECK((gth - fd_t).norm() <= 1e-7 * (1.0 + fd_t.norm()));
        }
    }
}

TEST_CASE("network backward pass matches finite differences") {
    std::mt19937_64 rng(9);
    Mlp net = Mlp::glorot({3, 6, 9, 6}, 1.0, rng);
    const Vec x = test::random_vec(3, rng);
    const Vec adj = test::random_vec(6, rng);
    Mlp::Cache cache;
    net.forward(x, cache);
    CHECK((cache.act.back() - net.forward(x)).norm() == 0.0);
    std::vector<double> grad(net.parameter_count(), 0.0);
    const Vec gx = net.backward(cache, adj, grad.data());
    const double eps = 1e-6;
    for (int i = 0; i < 3; ++i) {
        Vec xp = x, xm = x;
        xp[i] += eps;
        xm[i] -= eps;
        CHECK(gx[i] == doctest::Approx(adj.dot(net.forward(xp) - net.forward(xm)) / (2 * eps)).epsilon(1e-6));
    }
    std::vector<double> p(net.parameter_count());
    net.pack(p.data());
    for (std::size_t i = 0; i < p.size(); ++i) {
        Mlp a = net, b = net;
        auto pp = p, pm = p;
        pp[i] += eps;
        pm[i] -= eps;
        a.unpack(pp.data());
        b.unpack(pm.data());
        const double fd = adj.dot(a.forward(x) - b.forward(x)) / (2 * eps);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("flat parameter layout") {
    std::mt19937_64 rng(10);
    LearnableModel m = random_model(3, rng);
    CHECK(m.parameter_count() == 8 + 36 + m.mlp.parameter_count());
    m.learn_beta = true;
    const Vec theta = m.parameters();
    REQUIRE(theta.size() == static_cast<Eigen::Index>(m.parameter_count()));
    CHECK(theta[theta.size() - 1] == m.beta);
    CHECK(theta[8 + 2] == m.x_hat(1, 1));
    LearnableModel z = LearnableModel::zeros(3, 0.0);
    z.learn_beta = true;
    z.set_parameters(theta);
    CHECK((z.parameters() - theta).norm() == 0.0);
    CHECK_THROWS_AS(z.set_parameters(Vec::Zero(3)), DimensionError);

    const Vec mask = m.weight_mask();
    Vec masked = theta.cwiseProduct(mask);
    CHECK(masked.squaredNorm() == doctest::Approx(m.mlp.weight_sq_norm()).epsilon(1e-14));
    CHECK(mask.sum() == 8 * 16 + 16 * 24 + 24 * 36);
}

TEST_CASE("model JSON round trip is bit-faithful") {
    std::mt19937_64 rng(11);
    LearnableModel m = random_model(3, rng);
    m.learn_beta = true;
    m.beta = 1.0 / 3.0;
    const std::string text = model_to_json(m).dump();
    const LearnableModel back = model_from_json(nlohmann::json::parse(text));
    CHECK(back.levels == 3);
    CHECK(back.learn_beta);
    const Vec a = m.parameters(), b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK((back.dissipative_shift - m.dissipative_shift).norm() == 0.0);
    CHECK(back.beta == m.beta);

    auto broken = model_to_json(m);
    broken["X_hat"] = std::vector<double>{1.0};
    CHECK_THROWS_AS(model_from_json(broken), DataError);
    CHECK_THROWS_AS(model_from_json(nlohmann::json::object()), DataError);
}
