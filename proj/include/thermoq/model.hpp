#pragma once

#include <memory>
#include <random>
#include <vector>

#include <json.hpp>

#include "thermoq/basis.hpp"
#include "thermoq/dynamics.hpp"
#include "thermoq/types.hpp"

namespace thermoq {

// Feed-forward network with tanh hidden layers and a linear output layer.
class Mlp {
public:
    Mlp() = default;
    // Zero-initialized network with the given layer widths (input first).
    explicit Mlp(std::vector<int> widths);

    // Glorot-uniform weights multiplied by `scale`, zero biases.
    static Mlp glorot(std::vector<int> widths, double scale, std::mt19937_64& rng);

    const std::vector<int>& widths() const noexcept { return widths_; }
    std::size_t layers() const noexcept { return weights_.size(); }
    Mat& weight(std::size_t l) { return weights_[l]; }
    const Mat& weight(std::size_t l) const { return weights_[l]; }
    Vec& bias(std::size_t l) { return biases_[l]; }
    const Vec& bias(std::size_t l) const { return biases_[l]; }

    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }
    // Weights then bias for every layer; weights row-major.
    std::size_t parameter_count() const;
    double weight_sq_norm() const;

    Vec forward(const Vec& x) const;

    // Activations of every layer (index 0 is the input) for backward().
    struct Cache {
        std::vector<Vec> act;
    };
    void forward(const Vec& x, Cache& cache) const;
    // Given d(out), accumulates d(params) into grad (layout as parameter_count)
    // and returns d(input).
    Vec backward(const Cache& cache, const Vec& out_adj, double* grad) const;

    void pack(double* dst) const;
    void unpack(const double* src);

private:
    std::vector<int> widths_;
    std::vector<Mat> weights_;
    std::vector<Vec> biases_;
};

// Default hidden widths (2d, 3d) and output d(d+1)/2.
std::vector<int> default_mlp_widths(int levels);

// Learnable right-hand side
//   F(v) = L(v) h(t) + sum_k L(x_k)^2 v + (beta/2) sum_k L(x_k)(2/N I + G(v) - M_theta(v)) L(x_k) h_diss
// with Gamma = X X^T (X lower triangular, columns x_k),
// M_theta(v) = L(v)^T R^T R L(v) and R = r2 I + (1 - r2) Rtilde(v).
//
// h(t) adds the rotating-frame drive of a control when one is given; h_diss is
// h + dissipative_shift (the known frame frequency times the number operator
// for rotating-frame data, zero otherwise).
struct LearnableModel {
    int levels = 2;
    Vec h;
    Mat x_hat;
    Mlp mlp;
    double beta = 1.0;
    bool learn_beta = false;
    Vec dissipative_shift;

    int dim() const { return bloch_dim(levels); }

    // Zero h and X, zero network of default widths.
    static LearnableModel zeros(int levels, double beta);
    // Zero h, lower triangle of X drawn from N(0, x_sigma), Glorot network
    // scaled by net_scale. X = 0 is a stationary point of any loss, so
    // training needs a nonzero start.
    static LearnableModel initial(int levels, double beta, std::mt19937_64& rng, double x_sigma = 0.05,
                                  double net_scale = 1e-6);

    // Flat parameter vector: h | lower triangle of X (row-major) | MLP | beta?
    std::size_t parameter_count() const;
    Vec parameters() const;
    void set_parameters(const Vec& theta);
    // Range of the MLP weight matrices inside the flat vector, as a 0/1 mask.
    Vec weight_mask() const;
};

Mat gamma_of(const LearnableModel& model);
std::vector<CMat> couplings_from_cholesky(const LearnableModel& model);
double r_tilde_sq(const Vec& v, int levels);
// Rtilde(v): network output placed row-major into the upper triangle.
Mat R_tilde(const Vec& v, const LearnableModel& model);
Mat R_of(const Vec& v, const LearnableModel& model);
Mat M_theta(const Vec& v, const LearnableModel& model);
Vec F_theta(const Vec& v, const LearnableModel& model, double t, const ControlSpec* ctrl = nullptr);

// Reusable evaluator for F_theta and its vector-Jacobian product. Holds
// scratch buffers, so one instance per thread.
class ModelField {
public:
    explicit ModelField(const LearnableModel& model);

    const LearnableModel& model() const { return model_; }

    // Sets the control used by subsequent calls (nullptr for none).
    void set_control(const ControlSpec* ctrl) { ctrl_ = ctrl; }

    void eval(double t, const Vec& v, Vec& out);

    // For adj = dL/dF: grad_v += (dF/dv)^T adj, grad_theta += (dF/dtheta)^T adj.
    void vjp(double t, const Vec& v, const Vec& adj, Vec& grad_v, Vec& grad_theta);

private:
    void forward(double t, const Vec& v, bool keep);
    void unitary_h(double t);

    const LearnableModel& model_;
    std::shared_ptr<const StructureConstants> sc_;
    const ControlSpec* ctrl_ = nullptr;
    DriveBasis drive_;
    int d_;
    int n_levels_;
    std::size_t off_x_;
    std::size_t off_mlp_;
    std::size_t off_beta_;
    std::vector<int> active_cols_;

    // forward state
    Vec hu_, hd_, out_;
    double r2_ = 0.0;
    bool r2_clamped_ = false;
    Mat rtilde_, r_;
    Mlp::Cache cache_;
    std::vector<Vec> xk_, u_, y_, p_, q_, rr_, z_;
};

nlohmann::json model_to_json(const LearnableModel& model);
LearnableModel model_from_json(const nlohmann::json& j);

} // namespace thermoq
