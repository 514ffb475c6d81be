#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "thermoq/data.hpp"
#include "thermoq/errors.hpp"
#include "thermoq/training.hpp"

using namespace thermoq;

namespace {

TwoLevelParams short_two_level() {
    TwoLevelParams p;
    p.t_end = 1.0;
    p.dt = 0.1;
    p.n_train = 2;
    p.n_test = 1;
    return p;
}

LearnableModel two_level_truth(const TwoLevelParams& p) {
    LearnableModel m = LearnableModel::zeros(2, 1.0 / p.kT);
    m.h = two_level_h(p);
    m.x_hat = two_level_x(p);
    return m;
}

LearnableModel random_model(int levels, double beta, std::mt19937_64& rng) {
    LearnableModel m = LearnableModel::zeros(levels, beta);
    const int d = m.dim();
    m.h = test::random_vec(d, rng);
    m.x_hat = test::random_vec(d * d, rng, 0.2).reshaped(d, d).triangularView<Eigen::Lower>();
    m.mlp = Mlp::glorot(default_mlp_widths(levels), 1.0, rng);
    for (std::size_t l = 0; l < m.mlp.layers(); ++l) m.mlp.bias(l) = test::random_vec(m.mlp.bias(l).size(), rng, 0.1);
    return m;
}

// Central differences with a step relative to the parameter scale.
Vec fd_gradient(TrajectoryLoss& l, const Vec& theta, const std::vector<Eigen::Index>& idx) {
    Vec fd = Vec::Zero(theta.size());
    for (const auto i : idx) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
        Vec tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        fd[i] = (l.evaluate(tp, nullptr).total - l.evaluate(tm, nullptr).total) / (2.0 * h);
    }
    return fd;
}

std::vector<Eigen::Index> all_indices(Eigen::Index n) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
}

double rel_error(const Vec& g, const Vec& fd, const std::vector<Eigen::Index>& idx) {
    double num = 0.0, den = 0.0;
    for (const auto i : idx) {
        num += (g[i] - fd[i]) * (g[i] - fd[i]);
        den += fd[i] * fd[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

} // namespace

TEST_CASE("ground-truth parameters reproduce noiseless data") {
    // Data generated by the learnable field itself at data-generation tolerances.
    TwoLevelParams p = short_two_level();
    p.t_end = 6.0;
    TrajectoryDataset ds = gen_two_level(p, 3);
    std::mt19937_64 rng(3);
    LearnableModel truth = two_level_truth(p);
    truth.mlp = Mlp::glorot(default_mlp_widths(2), 0.5, rng);
    for (auto& r : ds.records) r.v = predict(truth, r, IntegratorConfig::data_generation());
    TrainConfig cfg;
    cfg.tikhonov_lambda = 0.0;
    const LossReport rep = loss(truth, ds.split("train"), cfg);
    CHECK(rep.finite);
    CHECK(rep.total < 1e-8);
    // Over a short horizon the fixed-step truncation error is smaller still.
    CHECK(loss(truth, ds.split("train"), cfg, 10).total < 1e-10);
}

TEST_CASE("zero model gives a finite positive loss") {
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 4);
    const LossReport rep = loss(LearnableModel::zeros(2, 1.0 / 0.65), ds.split("train"), TrainConfig{});
    CHECK(rep.finite);
    CHECK(rep.total > 0.0);
}

TEST_CASE("loss report decomposes into mean plus regularization") {
    std::mt19937_64 rng(5);
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 5);
    const LearnableModel m = random_model(2, 1.0 / 0.65, rng);
    TrainConfig cfg;
    cfg.tikhonov_lambda = 1e-3;
    const LossReport rep = loss(m, ds.split("train"), cfg);
    REQUIRE(rep.per_trajectory.size() == 2);
    CHECK(std::abs(rep.total - (rep.per_trajectory.mean() + rep.regularization)) < 1e-12);

    double w2 = 0.0;
    for (std::size_t l = 0; l < m.mlp.layers(); ++l) w2 += m.mlp.weight(l).squaredNorm();
    CHECK(rep.regularization == doctest::Approx(1e-3 * w2).epsilon(1e-14));
}

TEST_CASE("regularization gradient is 2 lambda times the weights") {
    std::mt19937_64 rng(6);
    const LearnableModel m = random_model(2, 1.0, rng);
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 6);
    TrainConfig a, b;
    a.tikhonov_lambda = 0.0;
    b.tikhonov_lambda = 1e-3;
    const Vec diff = gradient(m, ds.split("train"), b) - gradient(m, ds.split("train"), a);
    const Vec expected = 2e-3 * m.parameters().cwiseProduct(m.weight_mask());
    CHECK(test::max_abs(diff - expected) < 1e-15);
}

TEST_CASE("gradient of the unitary-only model matches finite differences") {
    std::mt19937_64 rng(7);
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 7);
    LearnableModel m = LearnableModel::zeros(2, 1.0);
    m.h = test::random_vec(3, rng);
    TrainConfig cfg;
    cfg.learn_x = cfg.learn_network = false;
    TrajectoryLoss l(m, ds.split("train"), cfg);
    Vec g;
    const Vec theta = m.parameters();
    l.evaluate(theta, &g);
    const std::vector<Eigen::Index> idx{0, 1, 2};
    const Vec fd = fd_gradient(l, theta, idx);
    CHECK(rel_error(g, fd, idx) < 1e-6);
    // Frozen groups carry no gradient.
    CHECK(g.tail(g.size() - 3).norm() == 0.0);
}

TEST_CASE("full two-level gradient matches finite differences") {
    std::mt19937_64 rng(8);
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 8);
    for (int trial = 0; trial < 3; ++trial) {
        const LearnableModel m = random_model(2, 1.0 / 0.65, rng);
        TrajectoryLoss l(m, ds.split("train"), TrainConfig{});
        const Vec theta = m.parameters();
        Vec g;
        REQUIRE(l.evaluate(theta, &g).finite);
        const auto idx = all_indices(theta.size());
        CHECK(rel_error(g, fd_gradient(l, theta, idx), idx) < 1e-5);
    }
}

TEST_CASE("qutrit gradient with drive and frame shift matches finite differences") {
    QutritParams p;
    p.t_end = 0.15;
    p.amplitudes = {2.0 * M_PI * 0.125, 2.0 * M_PI * 0.5};
    const TrajectoryDataset ds = gen_qutrit(p, 1);
    std::mt19937_64 rng(9);
    LearnableModel m = random_model(3, p.beta, rng);
    m.dissipative_shift = ds.dissipative_shift;
    TrajectoryLoss l(m, ds.split("train"), TrainConfig{});
    const Vec theta = m.parameters();
    Vec g;
    REQUIRE(l.evaluate(theta, &g).finite);
    // h, X and a random subset of network entries.
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < 8 + 36; ++i) idx.push_back(i);
    std::uniform_int_distribution<Eigen::Index> pick(44, theta.size() - 1);
    for (int k = 0; k < 60; ++k) idx.push_back(pick(rng));
    CHECK(rel_error(g, fd_gradient(l, theta, idx), idx) < 1e-5);
}

TEST_CASE("learned beta receives a gradient") {
    std::mt19937_64 rng(10);
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 10);
    LearnableModel m = random_model(2, 1.2, rng);
    m.learn_beta = true;
    TrajectoryLoss l(m, ds.split("train"), TrainConfig{});
    const Vec theta = m.parameters();
    Vec g;
    l.evaluate(theta, &g);
    const std::vector<Eigen::Index> idx{theta.size() - 1};
    CHECK(rel_error(g, fd_gradient(l, theta, idx), idx) < 1e-5);
}

TEST_CASE("windows restrict the loss to early samples") {
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 11);
    TrainConfig cfg;
    TrajectoryLoss l(LearnableModel::zeros(2, 1.0), ds.split("train"), cfg);
    CHECK(l.max_window() == 10);
    l.set_window(3);
    CHECK(l.window() == 3);
    l.set_window(100);
    CHECK(l.window() == 10);
    CHECK_THROWS_AS(l.set_window(0), ValidationError);

    cfg.train_window = 0.45;
    TrajectoryLoss lw(LearnableModel::zeros(2, 1.0), ds.split("train"), cfg);
    CHECK(lw.max_window() == 4);

    // A loss over k samples only depends on the first k data rows.
    TrajectoryDataset noisy = ds;
    for (auto& r : noisy.records) r.v.bottomRows(5).array() += 0.3;
    const auto a = loss(LearnableModel::zeros(2, 1.0), ds.split("train"), TrainConfig{}, 5);
    const auto b = loss(LearnableModel::zeros(2, 1.0), noisy.split("train"), TrainConfig{}, 5);
    CHECK(a.total == b.total);
}

TEST_CASE("diverging rollouts are reported as infinite loss") {
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 12);
    LearnableModel m = LearnableModel::zeros(2, 1.0);
    m.x_hat = Mat::Identity(3, 3) * 1e6;
    m.h.setConstant(1e-3);
    TrainConfig cfg;
    const LossReport rep = loss(m, ds.split("train"), cfg);
    CHECK_FALSE(rep.finite);
    CHECK(std::isinf(rep.total));
}

TEST_CASE("single full-horizon window is plain training") {
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 13);
    TrainConfig cfg;
    cfg.continuation_step = 1000;
    cfg.max_iters_first = 5;
    std::mt19937_64 rng(1);
    LearnableModel init = LearnableModel::zeros(2, 1.0 / 0.65);
    init.mlp = Mlp::glorot(default_mlp_widths(2), 1e-6, rng);
    const TrainResult r = train_continuation(init, ds.split("train"), cfg, 1);
    REQUIRE(r.windows.size() == 1);
    CHECK(r.windows[0] == 10);
    CHECK(r.history.size() == 5);
    CHECK(r.window_loss[0] < loss(init, ds.split("train"), cfg).total);
}

TEST_CASE("continuation training keeps the structure and the previous windows") {
    TwoLevelParams p = short_two_level();
    p.t_end = 3.0;
    // Data from a representable model, so every window can be fitted jointly.
    TrajectoryDataset ds = gen_two_level(p, 14);
    for (auto& rec : ds.records) rec.v = predict(two_level_truth(p), rec, IntegratorConfig::data_generation());
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::lbfgs;
    cfg.continuation_step = 10;
    cfg.max_iters_first = 100;
    cfg.max_iters_rest = 60;
    std::mt19937_64 rng(2);
    const LearnableModel init = LearnableModel::initial(2, 1.0 / 0.65, rng);
    const TrainResult r = train_continuation(init, ds.split("train"), cfg, 2);
    CHECK(r.windows == std::vector<int>{10, 20, 30});
    REQUIRE(r.checks.size() == 3);
    for (const auto& c : r.checks) CHECK(c.ok());
    for (std::size_t k = 1; k < r.windows.size(); ++k) {
        CHECK(handoff_ok(r.window_loss[k - 1], r.handoff_loss[k]));
    }
    // Line-search iterations never increase the loss within a window.
    for (std::size_t i = 1; i < r.history.size(); ++i) {
        if (r.history[i].increment == r.history[i - 1].increment) {
            CHECK(r.history[i].loss <= r.history[i - 1].loss);
        }
    }

    const auto path = std::filesystem::temp_directory_path() / "thermoq_history_test.csv";
    write_history_csv(r.history, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "increment,iteration,loss,grad_norm,wall_time");
    std::filesystem::remove(path);
}

TEST_CASE("resuming from an increment checkpoint reproduces the run") {
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 15);
    TrainConfig cfg;
    cfg.continuation_step = 4;
    cfg.max_iters_first = 20;
    cfg.max_iters_rest = 10;
    std::mt19937_64 rng(3);
    const LearnableModel init = LearnableModel::initial(2, 1.0 / 0.65, rng);
    CHECK(continuation_windows(10, cfg) == std::vector<int>{4, 8, 10});

    std::vector<LearnableModel> snaps;
    const TrainResult full =
        train_continuation(init, ds.split("train"), cfg, 4, [&](int, const LearnableModel& m) { snaps.push_back(m); });
    REQUIRE(snaps.size() == 3);
    cfg.start_increment = 1;
    const TrainResult resumed = train_continuation(snaps[0], ds.split("train"), cfg, 4);
    CHECK(resumed.windows == std::vector<int>{8, 10});
    CHECK(resumed.model.parameters() == full.model.parameters());
    CHECK(resumed.handoff_ratio[0] == full.handoff_ratio[1]);
    cfg.start_increment = 3;
    CHECK_THROWS_AS(train_continuation(snaps[0], ds.split("train"), cfg, 4), ValidationError);
}

TEST_CASE("final L-BFGS phase refines the full window") {
    const TrajectoryDataset ds = gen_two_level(short_two_level(), 16);
    TrainConfig cfg;
    cfg.continuation_step = 5;
    cfg.max_iters_first = 20;
    cfg.max_iters_rest = 20;
    std::mt19937_64 rng(5);
    const LearnableModel init = LearnableModel::initial(2, 1.0 / 0.65, rng);
    const TrainResult plain = train_continuation(init, ds.split("train"), cfg, 5);
    cfg.final_lbfgs_iters = 30;
    int calls = 0;
    const TrainResult r = train_continuation(init, ds.split("train"), cfg, 5, [&](int, const LearnableModel&) { ++calls; });
    CHECK(calls == 3);
    CHECK(r.windows == std::vector<int>{5, 10, 10});
    CHECK(r.window_loss[1] == plain.window_loss[1]);
    CHECK(r.window_loss[2] <= r.window_loss[1]);
    CHECK(r.handoff_ratio[2] <= 1.0);
    CHECK(r.history.back().increment == 2);
    CHECK(r.checks.size() == 3);
}

TEST_CASE("optimizer names round trip") {
    CHECK(optimizer_from_string(to_string(OptimizerKind::adam)) == OptimizerKind::adam);
    CHECK(optimizer_from_string(to_string(OptimizerKind::lbfgs)) == OptimizerKind::lbfgs);
    CHECK_THROWS_AS(optimizer_from_string("sgd"), ValidationError);
}
