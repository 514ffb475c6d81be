#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "thermoq/data.hpp"
#include "thermoq/integrator.hpp"
#include "thermoq/model.hpp"
#include "thermoq/optim.hpp"

namespace thermoq {

enum class OptimizerKind { adam, lbfgs };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double adam_lr = 0.1;
    int lbfgs_history = 10;
    // Points added per increment, and points in the first window (0: same as
    // the step).
    int continuation_step = 30;
    int first_window = 0;
    // Increments before this one are skipped (resuming from a checkpoint
    // written after increment start_increment - 1).
    int start_increment = 0;
    int max_iters_first = 2000;
    int max_iters_rest = 500;
    // L-BFGS iterations on the full window after the last increment.
    int final_lbfgs_iters = 0;
    double tikhonov_lambda = 1e-3;
    // Only samples with t - t0 <= train_window are used (0: all).
    double train_window = 0.0;
    // RK4 step bound: dt <= substep_scale / max(|h| + drive, 1).
    double substep_scale = 0.25;
    double grad_tol = 0.0;
    bool learn_h = true;
    bool learn_x = true;
    bool learn_network = true;
    // Rollouts outside training (evaluation, plots).
    IntegratorConfig integrator = IntegratorConfig::training();
};

struct LossReport {
    double total = 0.0;
    Vec per_trajectory;
    double regularization = 0.0;
    bool finite = true;
};

// Mean squared Bloch-vector error of fixed-step RK4 rollouts of the learnable
// field, plus a Tikhonov term on the network weights, and its exact gradient
// by reverse-mode differentiation through the RK4 steps.
class TrajectoryLoss {
public:
    TrajectoryLoss(const LearnableModel& prototype, std::vector<const TrajectoryRecord*> records,
                   const TrainConfig& cfg);

    // Number of samples after the initial one that enter the loss (clipped to
    // what each record and the train window provide).
    void set_window(int points);
    int window() const { return window_; }
    int max_window() const;

    // Loss at parameters theta; fills grad (same layout) when non-null.
    LossReport evaluate(const Vec& theta, Vec* grad);
    Objective objective();

    // Frozen parameter groups are zero in the mask.
    const Vec& trainable_mask() const { return mask_; }
    const LearnableModel& model() const { return model_; }

    // RK4 prediction at the record's first `points`+1 sample times.
    Mat rollout(const Vec& theta, const TrajectoryRecord& rec, int points);

private:
    int points_for(const TrajectoryRecord& rec) const;
    int substeps(const TrajectoryRecord& rec, double dt) const;
    double record_loss(const TrajectoryRecord& rec, int points, Vec* grad);

    LearnableModel model_;
    std::vector<const TrajectoryRecord*> records_;
    TrainConfig cfg_;
    int window_ = 0;
    Vec mask_;
    Vec weight_mask_;
    // Per-substep stage states from the last forward pass.
    std::vector<Vec> stages_;
    std::vector<double> stage_t_;
    std::vector<double> stage_dt_;
};

LossReport loss(const LearnableModel& model, const std::vector<const TrajectoryRecord*>& records,
                const TrainConfig& cfg, int window = -1);
Vec gradient(const LearnableModel& model, const std::vector<const TrajectoryRecord*>& records,
             const TrainConfig& cfg, int window = -1);

// Adaptive rollout of the learned field on the record's grid.
Mat predict(const LearnableModel& model, const TrajectoryRecord& rec, const IntegratorConfig& cfg);

struct HistoryRow {
    int increment = 0;
    int iteration = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double wall_time = 0.0;
};

// Structural spot check of M_theta on sampled states.
struct StructuralReport {
    double min_eigenvalue = 0.0;  // over mixed states
    double null_residual = 0.0;   // |M_theta(v) w| with L(v) w = 0
    double pure_residual = 0.0;   // |M_theta(v) - L^T L| at pure states
    bool ok(double tol = 1e-9) const;
};
StructuralReport structural_check(const LearnableModel& model, std::mt19937_64& rng, int samples = 20);

// Losses below this are at the fixed-step truncation floor, where handoff
// ratios carry no information.
inline constexpr double kHandoffFloor = 1e-8;

// after <= 1.1 before, up to the floor.
inline bool handoff_ok(double before, double after) { return after <= 1.1 * before + kHandoffFloor; }

// Per-increment entries; a final L-BFGS phase appends one more entry on the
// full window whose handoff ratio is its own loss reduction.
struct TrainResult {
    LearnableModel model;
    std::vector<HistoryRow> history;
    std::vector<int> windows;
    std::vector<double> window_loss;
    // Loss on the previous window after training the next one, and its ratio
    // to the value when that window finished (1 for the first window).
    std::vector<double> handoff_loss;
    std::vector<double> handoff_ratio;
    std::vector<StructuralReport> checks;
};

// Window sizes of every increment.
std::vector<int> continuation_windows(int full, const TrainConfig& cfg);

// Called after every increment with its index and the model at that point.
using IncrementCallback = std::function<void(int, const LearnableModel&)>;

// Continuation training: windows grow by continuation_step samples until the
// full horizon; optimizer state is reset for every window. The result lists
// only the increments that were run.
TrainResult train_continuation(const LearnableModel& init,
                               const std::vector<const TrajectoryRecord*>& records,
                               const TrainConfig& cfg, std::uint64_t seed = 0,
                               const IncrementCallback& on_increment = {});

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

} // namespace thermoq
