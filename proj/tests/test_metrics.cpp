#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "thermoq/data.hpp"
#include "thermoq/errors.hpp"
#include "thermoq/metrics.hpp"

using namespace thermoq;
using thermoq::test::max_abs;

TEST_CASE("trace distance paths agree for two levels") {
    const auto sc = structure_constants(2);
    Vec a(3), b(3);
    a << 0, 0, 1;
    b << 0, 0, -1;
    CHECK(trace_distance(a, b, *sc) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(trace_distance_bloch(a, b) == 1.0);
    CHECK(trace_distance(a, a, *sc) == 0.0);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec x = test::random_mixed_bloch(*sc, rng);
        const Vec y = test::random_mixed_bloch(*sc, rng);
        CHECK(std::abs(trace_distance(x, y, *sc) - trace_distance_bloch(x, y)) < 1e-12);
    }
    CHECK_THROWS_AS(trace_distance(Vec::Zero(8), a, *sc), DimensionError);
}

TEST_CASE("trace distance is a metric") {
    for (int n : {2, 3, 4}) {
        const auto sc = structure_constants(n);
        std::mt19937_64 rng(static_cast<unsigned>(n));
        for (int trial = 0; trial < 50; ++trial) {
            const Vec x = test::random_mixed_bloch(*sc, rng);
            const Vec y = test::random_mixed_bloch(*sc, rng);
            const Vec z = test::random_mixed_bloch(*sc, rng);
            const double xy = trace_distance(x, y, *sc);
            CHECK(xy == trace_distance(y, x, *sc));
            CHECK(xy >= 0.0);
            CHECK(xy <= 1.0 + 1e-12);
            CHECK(xy <= trace_distance(x, z, *sc) + trace_distance(z, y, *sc) + 1e-12);
        }
    }
}

TEST_CASE("distance bands") {
    Vec a(3), b(3);
    a << 0.1, 0.2, 0.3;
    b << 0.3, 0.0, 0.3;
    const DistanceBands single = bands({a});
    CHECK(single.mean == a);
    CHECK(single.min == a);
    CHECK(single.max == a);
    const DistanceBands two = bands({a, b});
    CHECK(max_abs(two.mean - Vec(Eigen::Vector3d(0.2, 0.1, 0.3))) < 1e-15);
    CHECK(two.min[1] == 0.0);
    CHECK(two.max[0] == 0.3);
    CHECK_THROWS_AS(bands({}), ValidationError);
}

TEST_CASE("expected trace distance of the true model vanishes") {
    QutritParams p;
    const auto ctrls = random_control_set(3, 2.0 * M_PI * 0.0625, 2.0 * M_PI * 0.5, p, 1);
    // A model with zero dissipation against a truth with zero dissipation.
    SystemSpec truth = qutrit_system(p, ctrls[0]);
    truth.coupling.x_cols = Mat::Zero(8, 1);
    LearnableModel m = LearnableModel::zeros(3, p.beta);
    m.h = truth.h;
    const auto t = uniform_grid(1.0, 0.05);
    const ExpectedDistance e = expected_trace_distance(m, truth, ctrls, ground_state(3), t,
                                                       IntegratorConfig::data_generation());
    CHECK(e.predicted.size() == 3);
    CHECK(e.bands.max.maxCoeff() < 1e-6);
    // Something actually happened.
    CHECK((e.reference[2].bottomRows(1) - e.reference[2].topRows(1)).norm() > 1e-2);

    const ExpectedDistance one = expected_trace_distance(m, truth, {ctrls[0]}, ground_state(3), t,
                                                         IntegratorConfig::data_generation());
    CHECK(one.bands.mean == one.bands.min);
    CHECK(one.bands.mean == one.bands.max);
}

TEST_CASE("positivity violation") {
    const auto sc = structure_constants(3);
    // Eigenvalues (1.05, 0, -0.05) on the diagonal.
    CMat rho = CMat::Zero(3, 3);
    rho(0, 0) = 1.05;
    rho(2, 2) = -0.05;
    const Vec bad = to_bloch(rho, *sc);
    Mat traj(3, 8);
    traj.row(0) = ground_state(3).transpose();
    traj.row(1) = bad.transpose();
    traj.row(2) = Vec::Zero(8).transpose();
    const Vec viol = psd_violation(traj, *sc);
    CHECK(viol[0] < 1e-15);
    CHECK(viol[1] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(viol[2] < 1e-15);

    Mat other = traj;
    other.row(1) = Vec::Zero(8).transpose();
    other.row(2) = bad.transpose();
    const Vec worst = psd_violation(std::vector<Mat>{traj, other}, *sc);
    CHECK(worst[1] == doctest::Approx(0.05));
    CHECK(worst[2] == doctest::Approx(0.05));
    CHECK(psd_violation_fraction({traj, other}, *sc) == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("exact dynamics never violate positivity") {
    QutritParams p;
    p.t_end = 1.0;
    const TrajectoryDataset ds = gen_qutrit(p, 0);
    const auto sc = structure_constants(3);
    std::vector<Mat> trajs;
    for (const auto& r : ds.records) trajs.push_back(r.v);
    CHECK(psd_violation(trajs, *sc).maxCoeff() <= 1e-10);
}

TEST_CASE("cumulative trace distance") {
    const auto sc = structure_constants(2);
    Mat a = Mat::Zero(4, 3), b = Mat::Zero(4, 3);
    CHECK(cumulative_trace_distance(a, b, *sc).norm() == 0.0);
    b.col(2).setConstant(0.4);
    const Vec c = cumulative_trace_distance(a, b, *sc);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(c[i] == doctest::Approx(0.2));
    b(3, 2) = 2.0;
    CHECK(cumulative_trace_distance(a, b, *sc)[3] == doctest::Approx((0.6 + 1.0) / 4.0));
    CHECK_THROWS_AS(cumulative_trace_distance(a, Mat::Zero(3, 3), *sc), DimensionError);
}

TEST_CASE("Cholesky factor of a semidefinite matrix") {
    std::mt19937_64 rng(4);
    const Mat x = test::random_vec(15, rng).reshaped(5, 3);
    const Mat gamma = x * x.transpose();
    const Mat l = psd_cholesky(gamma);
    CHECK(max_abs(l * l.transpose() - gamma) < 1e-12);
    CHECK(max_abs(Mat(l.triangularView<Eigen::StrictlyUpper>())) == 0.0);
    CHECK(l.col(4).norm() == 0.0);
}

TEST_CASE("operator errors are gauge invariant") {
    TwoLevelParams p;
    const Vec h = two_level_h(p);
    const Mat x = two_level_x(p);
    LearnableModel m = LearnableModel::zeros(2, 1.0);
    m.h = h;
    // Columns permuted with a sign flip give the same Gamma.
    m.x_hat = Mat::Zero(3, 3);
    m.x_hat.col(0) = -x.col(1);
    m.x_hat.col(1) = x.col(0);
    CHECK(max_abs(gamma_of(m) - x * x.transpose()) < 1e-15);
    OperatorErrors e = operator_errors(m, h, x);
    CHECK(e.h_rel == 0.0);
    CHECK(e.x_rel < 1e-15);

    // A rotation mixing the two columns needs the orthogonal alignment.
    const double c = std::cos(0.3), s = std::sin(0.3);
    Mat q = Mat::Identity(3, 3);
    q.topLeftCorner(2, 2) << c, -s, s, c;
    m.x_hat = x * q;
    CHECK(operator_errors(m, h, x, true).x_rel < 1e-12);
    CHECK(operator_errors(m, h, x, false).x_rel > 1e-2);

    m.h = 1.1 * h;
    CHECK(operator_errors(m, h, x).h_rel == doctest::Approx(0.1));
    // Narrow truth factors are padded.
    const Mat qx = qutrit_x();
    LearnableModel m3 = LearnableModel::zeros(3, 1.0);
    m3.h = Vec::Ones(8);
    m3.x_hat.leftCols(3) = qx;
    CHECK(operator_errors(m3, Vec::Ones(8), qx).x_rel < 1e-15);
}

TEST_CASE("nonlinear term error") {
    TwoLevelParams p;
    const Vec h = two_level_h(p);
    const Mat x = two_level_x(p);
    const auto sc = structure_constants(2);
    std::mt19937_64 rng(5);
    std::vector<Vec> states;
    for (int i = 0; i < 20; ++i) states.push_back(test::random_mixed_bloch(*sc, rng));

    LearnableModel m = LearnableModel::zeros(2, 1.0 / p.kT);
    m.h = h;
    CHECK(nonlinear_term_error(m, h, x, states) == doctest::Approx(1.0).epsilon(1e-14));

    // At one state a constant network output reproduces the exact M.
    const Vec v = states[0];
    const Mat l = op_L(v, *sc);
    const double cval = nonlinear_M(v, *sc)(0, 0) / (l.transpose() * l)(0, 0);
    const double r2 = r_tilde_sq(v, 2);
    m.x_hat = x;
    Vec bias = Vec::Zero(6);
    bias[0] = bias[3] = bias[5] = (std::sqrt(cval) - r2) / (1.0 - r2);
    m.mlp.bias(2) = bias;
    CHECK(nonlinear_term_error(m, h, x, {v}) < 1e-10);
    CHECK(nonlinear_term_error(m, h, x, states) > 1e-3);
}
