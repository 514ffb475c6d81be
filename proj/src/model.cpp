#include "thermoq/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "thermoq/errors.hpp"

namespace thermoq {

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least two widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        weights_.push_back(Mat::Zero(widths_[l + 1], widths_[l]));
        biases_.push_back(Vec::Zero(widths_[l + 1]));
    }
}

Mlp Mlp::glorot(std::vector<int> widths, double scale, std::mt19937_64& rng) {
    Mlp net(std::move(widths));
    for (auto& w : net.weights_) {
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * dist(rng);
    }
    return net;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    }
    return n;
}

double Mlp::weight_sq_norm() const {
    double s = 0.0;
    for (const auto& w : weights_) s += w.squaredNorm();
    return s;
}

Vec Mlp::forward(const Vec& x) const {
    Vec a = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Vec z = weights_[l] * a + biases_[l];
        a = (l + 1 < weights_.size()) ? Vec(z.array().tanh()) : z;
    }
    return a;
}

void Mlp::forward(const Vec& x, Cache& cache) const {
    cache.act.resize(weights_.size() + 1);
    cache.act[0] = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Vec& a = cache.act[l + 1];
        a.noalias() = weights_[l] * cache.act[l];
        a += biases_[l];
        if (l + 1 < weights_.size()) a = a.array().tanh();
    }
}

Vec Mlp::backward(const Cache& cache, const Vec& out_adj, double* grad) const {
    // Offsets of each layer's block in the flat layout.
    std::vector<std::size_t> offset(weights_.size());
    std::size_t pos = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        offset[l] = pos;
        pos += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    }
    Vec delta = out_adj;
    for (std::size_t l = weights_.size(); l-- > 0;) {
        if (l + 1 < weights_.size()) {
            delta.array() *= 1.0 - cache.act[l + 1].array().square();
        }
        const Vec& a = cache.act[l];
        const auto rows = weights_[l].rows();
        const auto cols = weights_[l].cols();
        double* gw = grad + offset[l];
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double dr = delta[r];
            for (Eigen::Index c = 0; c < cols; ++c) gw[r * cols + c] += dr * a[c];
        }
        double* gb = gw + rows * cols;
        for (Eigen::Index r = 0; r < rows; ++r) gb[r] += delta[r];
        delta = weights_[l].transpose() * delta;
    }
    return delta;
}

void Mlp::pack(double* dst) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Mat& w = weights_[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) *dst++ = w(r, c);
        for (Eigen::Index r = 0; r < biases_[l].size(); ++r) *dst++ = biases_[l][r];
    }
}

void Mlp::unpack(const double* src) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Mat& w = weights_[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = *src++;
        for (Eigen::Index r = 0; r < biases_[l].size(); ++r) biases_[l][r] = *src++;
    }
}

std::vector<int> default_mlp_widths(int levels) {
    const int d = bloch_dim(levels);
    return {d, 2 * d, 3 * d, d * (d + 1) / 2};
}

// ---------------------------------------------------------------- LearnableModel

LearnableModel LearnableModel::zeros(int levels, double beta) {
    LearnableModel m;
    m.levels = levels;
    const int d = bloch_dim(levels);
    m.h = Vec::Zero(d);
    m.x_hat = Mat::Zero(d, d);
    m.mlp = Mlp(default_mlp_widths(levels));
    m.beta = beta;
    m.dissipative_shift = Vec::Zero(d);
    return m;
}

LearnableModel LearnableModel::initial(int levels, double beta, std::mt19937_64& rng, double x_sigma,
                                       double net_scale) {
    LearnableModel m = zeros(levels, beta);
    std::normal_distribution<double> nd(0.0, x_sigma);
    const int d = m.dim();
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) m.x_hat(i, j) = nd(rng);
    m.mlp = Mlp::glorot(default_mlp_widths(levels), net_scale, rng);
    return m;
}

std::size_t LearnableModel::parameter_count() const {
    const auto d = static_cast<std::size_t>(dim());
    return d + d * (d + 1) / 2 + mlp.parameter_count() + (learn_beta ? 1 : 0);
}

Vec LearnableModel::parameters() const {
    const int d = dim();
    Vec theta(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index pos = 0;
    for (int i = 0; i < d; ++i) theta[pos++] = h[i];
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) theta[pos++] = x_hat(i, j);
    mlp.pack(theta.data() + pos);
    pos += static_cast<Eigen::Index>(mlp.parameter_count());
    if (learn_beta) theta[pos++] = beta;
    return theta;
}

void LearnableModel::set_parameters(const Vec& theta) {
    if (theta.size() != static_cast<Eigen::Index>(parameter_count())) {
        throw DimensionError("set_parameters: expected " + std::to_string(parameter_count()) +
                             " values, got " + std::to_string(theta.size()));
    }
    const int d = dim();
    Eigen::Index pos = 0;
    for (int i = 0; i < d; ++i) h[i] = theta[pos++];
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) x_hat(i, j) = theta[pos++];
    mlp.unpack(theta.data() + pos);
    pos += static_cast<Eigen::Index>(mlp.parameter_count());
    if (learn_beta) beta = theta[pos++];
}

Vec LearnableModel::weight_mask() const {
    Vec mask = Vec::Zero(static_cast<Eigen::Index>(parameter_count()));
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::Index pos = d + d * (d + 1) / 2;
    for (std::size_t l = 0; l < mlp.layers(); ++l) {
        const auto nw = mlp.weight(l).size();
        mask.segment(pos, nw).setOnes();
        pos += nw + mlp.bias(l).size();
    }
    return mask;
}

// ---------------------------------------------------------------- operations

Mat gamma_of(const LearnableModel& model) { return model.x_hat * model.x_hat.transpose(); }

std::vector<CMat> couplings_from_cholesky(const LearnableModel& model) {
    const auto sc = structure_constants(model.levels);
    std::vector<CMat> out;
    for (Eigen::Index k = 0; k < model.x_hat.cols(); ++k) {
        out.push_back(coeffs_to_hermitian({0.0, model.x_hat.col(k)}, *sc));
    }
    return out;
}

double r_tilde_sq(const Vec& v, int levels) {
    return levels * v.squaredNorm() / (2.0 * (levels - 1));
}

Mat R_tilde(const Vec& v, const LearnableModel& model) {
    const int d = model.dim();
    const Vec o = model.mlp.forward(v);
    Mat rt = Mat::Zero(d, d);
    Eigen::Index idx = 0;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) rt(i, j) = o[idx++];
    return rt;
}

Mat R_of(const Vec& v, const LearnableModel& model) {
    const int d = model.dim();
    const double r2 = std::clamp(r_tilde_sq(v, model.levels), 0.0, 1.0);
    return r2 * Mat::Identity(d, d) + (1.0 - r2) * R_tilde(v, model);
}

Mat M_theta(const Vec& v, const LearnableModel& model) {
    const auto sc = structure_constants(model.levels);
    const Mat l = op_L(v, *sc);
    const Mat rl = R_of(v, model) * l;
    return rl.transpose() * rl;
}

Vec F_theta(const Vec& v, const LearnableModel& model, double t, const ControlSpec* ctrl) {
    ModelField field(model);
    field.set_control(ctrl);
    Vec out(model.dim());
    field.eval(t, v, out);
    return out;
}

// ---------------------------------------------------------------- ModelField

ModelField::ModelField(const LearnableModel& model)
    : model_(model),
      sc_(structure_constants(model.levels)),
      drive_(drive_basis(model.levels)),
      d_(model.dim()),
      n_levels_(model.levels) {
    const auto d = static_cast<std::size_t>(d_);
    if (model.h.size() != d_ || model.x_hat.rows() != d_ || model.x_hat.cols() != d_) {
        throw DimensionError("ModelField: parameter shapes do not match N");
    }
    if (model.mlp.input_size() != d_ || model.mlp.output_size() != d_ * (d_ + 1) / 2) {
        throw DimensionError("ModelField: network widths do not match N");
    }
    off_x_ = d;
    off_mlp_ = off_x_ + d * (d + 1) / 2;
    off_beta_ = off_mlp_ + model.mlp.parameter_count();
    hu_.resize(d_);
    hd_.resize(d_);
    out_.resize(d_);
    rtilde_ = Mat::Zero(d_, d_);
    r_ = Mat::Zero(d_, d_);
    xk_.assign(d, Vec::Zero(d_));
    u_ = y_ = p_ = q_ = rr_ = z_ = xk_;
}

void ModelField::unitary_h(double t) {
    hu_ = model_.h;
    if (ctrl_ != nullptr) {
        hu_ += ctrl_->pulse.p(t) * drive_.p_dir + ctrl_->pulse.q(t) * drive_.q_dir;
    }
}

void ModelField::forward(double t, const Vec& v, bool keep) {
    const StructureConstants& sc = *sc_;
    unitary_h(t);
    hd_ = model_.h;
    if (model_.dissipative_shift.size() == d_) hd_ += model_.dissipative_shift;

    out_.setZero();
    sc.add_L(v, hu_, 1.0, out_);

    const double r2raw = r_tilde_sq(v, n_levels_);
    r2_clamped_ = r2raw > 1.0 || r2raw < 0.0;
    r2_ = std::clamp(r2raw, 0.0, 1.0);
    model_.mlp.forward(v, cache_);
    const Vec& o = cache_.act.back();
    Eigen::Index idx = 0;
    for (int i = 0; i < d_; ++i)
        for (int j = i; j < d_; ++j) rtilde_(i, j) = o[idx++];
    r_ = (1.0 - r2_) * rtilde_;
    r_.diagonal().array() += r2_;

    const double half_beta = 0.5 * model_.beta;
    const double two_over_n = 2.0 / n_levels_;
    Vec tmp(d_);
    for (int k = 0; k < d_; ++k) {
        Vec& xk = xk_[k];
        xk.setZero();
        bool nonzero = false;
        for (int i = k; i < d_; ++i) {
            xk[i] = model_.x_hat(i, k);
            nonzero = nonzero || xk[i] != 0.0;
        }
        if (!nonzero && !keep) continue;

        Vec& u = u_[k];
        u.setZero();
        sc.add_L(xk, v, 1.0, u);
        sc.add_L(xk, u, 1.0, out_);

        Vec& y = y_[k];
        y.setZero();
        sc.add_L(xk, hd_, 1.0, y);
        Vec& p = p_[k];
        p.setZero();
        sc.add_L(v, y, 1.0, p);
        Vec& q = q_[k];
        q.noalias() = r_.triangularView<Eigen::Upper>() * p;
        Vec& rr = rr_[k];
        rr.noalias() = r_.triangularView<Eigen::Upper>().transpose() * q;
        Vec& z = z_[k];
        z = two_over_n * y;
        sc.add_G(v, y, 1.0, z);
        sc.add_L(v, rr, 1.0, z);
        sc.add_L(xk, z, half_beta, out_);
    }
}

void ModelField::eval(double t, const Vec& v, Vec& out) {
    forward(t, v, false);
    out = out_;
}

void ModelField::vjp(double t, const Vec& v, const Vec& adj, Vec& grad_v, Vec& grad_theta) {
    const StructureConstants& sc = *sc_;
    forward(t, v, true);

    const double half_beta = 0.5 * model_.beta;
    const double two_over_n = 2.0 / n_levels_;
    double* gh = grad_theta.data();
    double* gx = grad_theta.data() + off_x_;

    Vec hbar_u = Vec::Zero(d_);
    Vec hbar_d = Vec::Zero(d_);
    sc.add_L(hu_, adj, 1.0, grad_v);
    sc.add_L(adj, v, 1.0, hbar_u);

    Mat rbar = Mat::Zero(d_, d_);
    Vec xbar(d_), ubar(d_), cbar(d_), zbar(d_), ybar(d_), rrbar(d_), qbar(d_), pbar(d_);
    cbar = half_beta * adj;
    double beta_bar = 0.0;
    Vec lz(d_);

    for (int k = 0; k < d_; ++k) {
        const Vec& xk = xk_[k];
        const Vec& u = u_[k];
        const Vec& y = y_[k];
        const Vec& p = p_[k];
        const Vec& q = q_[k];
        const Vec& rr = rr_[k];
        const Vec& z = z_[k];
        xbar.setZero();

        // out += L(xk) u,  u = L(xk) v
        sc.add_L(u, adj, 1.0, xbar);
        ubar.setZero();
        sc.add_L(adj, xk, 1.0, ubar);
        sc.add_L(v, ubar, 1.0, xbar);
        sc.add_L(ubar, xk, 1.0, grad_v);

        // out += (beta/2) L(xk) z
        if (model_.learn_beta) {
            lz.setZero();
            sc.add_L(xk, z, 1.0, lz);
            beta_bar += 0.5 * adj.dot(lz);
        }
        sc.add_L(z, cbar, 1.0, xbar);
        zbar.setZero();
        sc.add_L(cbar, xk, 1.0, zbar);

        // z = (2/N) y + G(v) y + L(v) rr
        ybar = two_over_n * zbar;
        sc.add_G(v, zbar, 1.0, ybar);
        sc.add_G(y, zbar, 1.0, grad_v);
        sc.add_L(rr, zbar, 1.0, grad_v);
        rrbar.setZero();
        sc.add_L(zbar, v, 1.0, rrbar);

        // rr = R^T q,  q = R p
        qbar.noalias() = r_.triangularView<Eigen::Upper>() * rrbar;
        rbar.noalias() += q * rrbar.transpose();
        pbar.noalias() = r_.triangularView<Eigen::Upper>().transpose() * qbar;
        rbar.noalias() += qbar * p.transpose();

        // p = L(v) y
        sc.add_L(y, pbar, 1.0, grad_v);
        sc.add_L(pbar, v, 1.0, ybar);

        // y = L(xk) hd
        sc.add_L(hd_, ybar, 1.0, xbar);
        sc.add_L(ybar, xk, 1.0, hbar_d);

        for (int i = k; i < d_; ++i) gx[i * (i + 1) / 2 + k] += xbar[i];
    }

    for (int i = 0; i < d_; ++i) gh[i] += hbar_u[i] + hbar_d[i];

    // R = r2 I + (1 - r2) Rtilde, upper triangle only.
    double r2bar = 0.0;
    Vec obar(d_ * (d_ + 1) / 2);
    Eigen::Index idx = 0;
    for (int i = 0; i < d_; ++i) {
        r2bar += rbar(i, i);
        for (int j = i; j < d_; ++j) {
            r2bar -= rbar(i, j) * rtilde_(i, j);
            obar[idx++] = (1.0 - r2_) * rbar(i, j);
        }
    }
    if (!r2_clamped_) {
        grad_v += r2bar * (static_cast<double>(n_levels_) / (n_levels_ - 1)) * v;
    }
    grad_v += model_.mlp.backward(cache_, obar, grad_theta.data() + off_mlp_);
    if (model_.learn_beta) grad_theta[static_cast<Eigen::Index>(off_beta_)] += beta_bar;
}

// ---------------------------------------------------------------- JSON

namespace {

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_std(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

nlohmann::json model_to_json(const LearnableModel& model) {
    using nlohmann::json;
    const int d = model.dim();
    std::vector<double> xl;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) xl.push_back(model.x_hat(i, j));
    json mlp;
    mlp["widths"] = model.mlp.widths();
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < model.mlp.layers(); ++l) {
        const Mat& w = model.mlp.weight(l);
        std::vector<double> flat;
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
        weights.push_back(flat);
        biases.push_back(to_std(model.mlp.bias(l)));
    }
    mlp["weights"] = weights;
    mlp["biases"] = biases;
    json j;
    j["format"] = "thermoq-model";
    j["version"] = 1;
    j["N"] = model.levels;
    j["h_theta"] = to_std(model.h);
    j["X_hat"] = xl;
    j["mlp"] = mlp;
    j["beta"] = model.beta;
    j["learn_beta"] = model.learn_beta;
    j["dissipative_shift"] = to_std(model.dissipative_shift.size() == d ? model.dissipative_shift
                                                                       : Vec::Zero(d));
    j["metadata"] = json::object();
    return j;
}

LearnableModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "thermoq-model") {
            throw DataError("model JSON: unexpected format tag");
        }
        if (j.at("version").get<int>() != 1) throw DataError("model JSON: unsupported version");
        LearnableModel m;
        m.levels = j.at("N").get<int>();
        if (m.levels < 2) throw DataError("model JSON: N must be >= 2");
        const int d = m.dim();
        m.h = from_std(j.at("h_theta").get<std::vector<double>>());
        const auto xl = j.at("X_hat").get<std::vector<double>>();
        if (m.h.size() != d || xl.size() != static_cast<std::size_t>(d * (d + 1) / 2)) {
            throw DataError("model JSON: parameter sizes do not match N");
        }
        m.x_hat = Mat::Zero(d, d);
        std::size_t pos = 0;
        for (int i = 0; i < d; ++i)
            for (int jj = 0; jj <= i; ++jj) m.x_hat(i, jj) = xl[pos++];
        const auto& mj = j.at("mlp");
        m.mlp = Mlp(mj.at("widths").get<std::vector<int>>());
        const auto& weights = mj.at("weights");
        const auto& biases = mj.at("biases");
        if (weights.size() != m.mlp.layers() || biases.size() != m.mlp.layers()) {
            throw DataError("model JSON: layer count mismatch");
        }
        for (std::size_t l = 0; l < m.mlp.layers(); ++l) {
            const auto w = weights[l].get<std::vector<double>>();
            const auto b = biases[l].get<std::vector<double>>();
            Mat& wm = m.mlp.weight(l);
            if (w.size() != static_cast<std::size_t>(wm.size()) ||
                b.size() != static_cast<std::size_t>(m.mlp.bias(l).size())) {
                throw DataError("model JSON: layer shape mismatch");
            }
            std::size_t p = 0;
            for (Eigen::Index r = 0; r < wm.rows(); ++r)
                for (Eigen::Index c = 0; c < wm.cols(); ++c) wm(r, c) = w[p++];
            m.mlp.bias(l) = from_std(b);
        }
        m.beta = j.at("beta").get<double>();
        m.learn_beta = j.value("learn_beta", false);
        m.dissipative_shift = j.contains("dissipative_shift")
                                  ? from_std(j["dissipative_shift"].get<std::vector<double>>())
                                  : Vec::Zero(d);
        if (m.dissipative_shift.size() != d) throw DataError("model JSON: bad dissipative_shift");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model JSON: ") + e.what());
    }
}

} // namespace thermoq
