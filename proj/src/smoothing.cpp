#include "apcd/smoothing.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace apcd {

double FilterResult::log_evidence() const {
    return std::accumulate(log_evidence_increments.begin(), log_evidence_increments.end(), 0.0);
}

namespace {

// Joint of (x, u) when x ~ N(m, P) and u = K x + k + s.
GaussianMarginal lift_to_joint(const GaussianMarginal& state, const PolicyStep& pol) {
    const auto nx = state.mean.size();
    const auto nu = pol.k.size();
    GaussianMarginal out{Vec(nx + nu), Mat(nx + nu, nx + nu)};
    out.mean << state.mean, pol.K * state.mean + pol.k;
    const Mat PKt = state.cov * pol.K.transpose();
    out.cov.topLeftCorner(nx, nx) = state.cov;
    out.cov.topRightCorner(nx, nu) = PKt;
    out.cov.bottomLeftCorner(nu, nx) = PKt.transpose();
    out.cov.bottomRightCorner(nu, nu) = pol.K * PKt + pol.S;
    out.cov = symmetrize(out.cov);
    return out;
}

GaussianMarginal state_block(const GaussianMarginal& joint, Eigen::Index n_x) {
    return {joint.mean.head(n_x), joint.cov.topLeftCorner(n_x, n_x)};
}

}  // namespace

FilterResult kalman_filter(const ChmmModel& model, const Measurements& z) {
    const Dims& d = model.dims;
    if (z.size() != d.steps) throw std::invalid_argument("measurement sequence length does not match model steps");

    const auto nx = static_cast<Eigen::Index>(d.n_x);
    FilterResult out;
    out.predicted.reserve(d.steps);
    out.filtered.reserve(d.steps);
    out.filtered_joint.reserve(d.steps);
    out.log_evidence_increments.reserve(d.steps);

    GaussianMarginal pred{model.prior.mu0, symmetrize(model.prior.sigma0)};
    for (std::size_t t = 0; t < d.steps; ++t) {
        out.predicted.push_back(pred);
        GaussianMarginal joint = lift_to_joint(pred, model.prior_policy[t]);

        const EmissionStep& em = model.emissions[t];
        const Mat G = em.Gxi();
        const Vec innovation = z[t] - (G * joint.mean + em.g);
        const Mat PGt = joint.cov * G.transpose();
        const Mat innov_cov = symmetrize(G * PGt + em.Rcov);
        Eigen::LLT<Mat> llt(innov_cov);
        if (llt.info() != Eigen::Success) throw NumericalError("innovation covariance not PD (degenerate emission)", t);

        const Mat gain = llt.solve(PGt.transpose()).transpose();
        const Mat IKG = Mat::Identity(joint.cov.rows(), joint.cov.cols()) - gain * G;
        joint.mean += gain * innovation;
        joint.cov = symmetrize(IKG * joint.cov * IKG.transpose() + gain * em.Rcov * gain.transpose());

        const Vec white = llt.matrixL().solve(innovation);
        const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        out.log_evidence_increments.push_back(
            -0.5 * (white.squaredNorm() + log_det + static_cast<double>(d.n_z) * std::log(2.0 * std::numbers::pi)));

        out.filtered.push_back(state_block(joint, nx));
        if (t + 1 < d.steps) {
            const TransitionStep& tr = model.transitions[t];
            const Mat F = tr.Fxi();
            pred = {F * joint.mean + tr.f, symmetrize(F * joint.cov * F.transpose() + tr.Qcov)};
        }
        out.filtered_joint.push_back(std::move(joint));
    }
    return out;
}

SmootherResult rts_smoother(const ChmmModel& model, const FilterResult& filter) {
    const Dims& d = model.dims;
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const std::size_t steps = filter.filtered_joint.size();
    if (steps != d.steps) throw std::invalid_argument("filter result length does not match model steps");

    SmootherResult out;
    out.joint.resize(steps);
    out.states.resize(steps);
    out.joint[steps - 1] = filter.filtered_joint[steps - 1];
    out.states[steps - 1] = filter.filtered[steps - 1];

    for (std::size_t t = steps - 1; t-- > 0;) {
        const GaussianMarginal& filt = filter.filtered_joint[t];
        const GaussianMarginal& pred_next = filter.predicted[t + 1];
        const GaussianMarginal& smooth_next = out.states[t + 1];
        const Mat F = model.transitions[t].Fxi();

        Eigen::LLT<Mat> llt(pred_next.cov);
        if (llt.info() != Eigen::Success) throw NumericalError("predicted covariance singular (degenerate transition)", t + 1);
        // J = Cov(xi_t, x_{t+1}) * P_{t+1|t}^{-1}
        const Mat gain = llt.solve(F * filt.cov).transpose();

        GaussianMarginal& joint = out.joint[t];
        joint.mean = filt.mean + gain * (smooth_next.mean - pred_next.mean);
        joint.cov = symmetrize(filt.cov + gain * (smooth_next.cov - pred_next.cov) * gain.transpose());
        out.states[t] = state_block(joint, nx);
    }
    return out;
}

std::vector<GaussianMarginal> smooth_states(const ChmmModel& model, const Measurements& z) {
    return rts_smoother(model, kalman_filter(model, z)).states;
}

PolicyStep condition_control_on_state(const GaussianMarginal& joint, std::size_t n_x) {
    const auto nx = static_cast<Eigen::Index>(n_x);
    const auto nu = joint.mean.size() - nx;
    const Mat Sxx = joint.cov.topLeftCorner(nx, nx);
    const Mat Sux = joint.cov.bottomLeftCorner(nu, nx);
    const Mat Suu = joint.cov.bottomRightCorner(nu, nu);
    Eigen::LLT<Mat> llt(symmetrize(Sxx));
    if (llt.info() != Eigen::Success) throw NumericalError("state marginal covariance singular while conditioning");
    PolicyStep out;
    out.K = llt.solve(Sux.transpose()).transpose();
    out.k = joint.mean.tail(nu) - out.K * joint.mean.head(nx);
    out.S = symmetrize(Suu - out.K * Sux.transpose());
    return out;
}

// ----------------------------------------------------------------------------
// Dense oracle

namespace {

struct DenseJoint {
    Vec mean;
    Mat cov;
};

// Variables per step ordered (x_t, u_t[, z_t]); every variable is an affine
// function of earlier ones plus independent noise, w = L w + c + e.
DenseJoint build_dense_joint(const ChmmModel& model, const LinearPolicy& policy, bool with_measurements) {
    const Dims& d = model.dims;
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const auto nu = static_cast<Eigen::Index>(d.n_u);
    const auto nz = with_measurements ? static_cast<Eigen::Index>(d.n_z) : Eigen::Index{0};
    const Eigen::Index block = nx + nu + nz;
    const Eigen::Index dim = block * static_cast<Eigen::Index>(d.steps);

    Mat L = Mat::Zero(dim, dim);
    Vec c = Vec::Zero(dim);
    Mat D = Mat::Zero(dim, dim);

    for (std::size_t t = 0; t < d.steps; ++t) {
        const Eigen::Index xi = block * static_cast<Eigen::Index>(t);
        const Eigen::Index ui = xi + nx;
        const Eigen::Index zi = ui + nu;
        if (t == 0) {
            c.segment(xi, nx) = model.prior.mu0;
            D.block(xi, xi, nx, nx) = model.prior.sigma0;
        } else {
            const TransitionStep& tr = model.transitions[t - 1];
            const Eigen::Index prev = xi - block;
            L.block(xi, prev, nx, nx) = tr.Fx;
            L.block(xi, prev + nx, nx, nu) = tr.Fu;
            c.segment(xi, nx) = tr.f;
            D.block(xi, xi, nx, nx) = tr.Qcov;
        }
        const PolicyStep& pol = policy[t];
        L.block(ui, xi, nu, nx) = pol.K;
        c.segment(ui, nu) = pol.k;
        D.block(ui, ui, nu, nu) = pol.S;
        if (with_measurements) {
            const EmissionStep& em = model.emissions[t];
            L.block(zi, xi, nz, nx) = em.Gx;
            L.block(zi, ui, nz, nu) = em.Gu;
            c.segment(zi, nz) = em.g;
            D.block(zi, zi, nz, nz) = em.Rcov;
        }
    }

    const Mat IL = Mat::Identity(dim, dim) - L;
    const Mat A = IL.triangularView<Eigen::UnitLower>().solve(Mat::Identity(dim, dim));
    DenseJoint out;
    out.mean = A * c;
    out.cov = symmetrize(A * D * A.transpose());
    // Only nearly singular joints (e.g. noise-free state blocks) are
    // regularised; a jitter on a well-posed joint costs accuracy for nothing.
    if (!is_pd(out.cov)) out.cov += JointGaussianOracle::kRegularization * Mat::Identity(dim, dim);
    return out;
}

}  // namespace

JointGaussianOracle::JointGaussianOracle(const ChmmModel& model, Measurements z) : dims_(model.dims), z_(std::move(z)) {
    if (z_.size() != dims_.steps) throw std::invalid_argument("measurement sequence length does not match model steps");
    const std::size_t total = dims_.steps * (dims_.n_x + dims_.n_u + dims_.n_z);
    if (total > kMaxDimension) throw std::invalid_argument("joint dimension exceeds dense oracle limit");

    DenseJoint joint = build_dense_joint(model, model.prior_policy, true);
    mean_ = std::move(joint.mean);
    cov_ = std::move(joint.cov);
    if (!is_pd(cov_)) throw NumericalError("joint covariance not PD after regularization");

    std::vector<Eigen::Index> latent;
    for (std::size_t t = 0; t < dims_.steps; ++t) {
        for (std::size_t i = 0; i < dims_.n_x + dims_.n_u; ++i) latent.push_back(static_cast<Eigen::Index>(x_index(t) + i));
    }
    posterior_ = condition(latent, dims_.steps);
}

std::size_t JointGaussianOracle::x_index(std::size_t t) const { return t * (dims_.n_x + dims_.n_u + dims_.n_z); }
std::size_t JointGaussianOracle::u_index(std::size_t t) const { return x_index(t) + dims_.n_x; }
std::size_t JointGaussianOracle::z_index(std::size_t t) const { return u_index(t) + dims_.n_u; }

GaussianMarginal JointGaussianOracle::condition(const std::vector<Eigen::Index>& latent, std::size_t n_observed) const {
    std::vector<Eigen::Index> observed;
    Vec zvec(static_cast<Eigen::Index>(n_observed * dims_.n_z));
    for (std::size_t t = 0; t < n_observed; ++t) {
        for (std::size_t i = 0; i < dims_.n_z; ++i) observed.push_back(static_cast<Eigen::Index>(z_index(t) + i));
        zvec.segment(static_cast<Eigen::Index>(t * dims_.n_z), static_cast<Eigen::Index>(dims_.n_z)) = z_[t];
    }

    const Vec mu_a = mean_(latent);
    const Mat S_aa = cov_(latent, latent);
    if (observed.empty()) return {mu_a, S_aa};

    const Vec mu_b = mean_(observed);
    const Mat S_ab = cov_(latent, observed);
    const Mat S_bb = cov_(observed, observed);
    Eigen::LLT<Mat> llt(S_bb);
    if (llt.info() != Eigen::Success) throw NumericalError("measurement marginal covariance not PD");
    return {mu_a + S_ab * llt.solve(zvec - mu_b), symmetrize(S_aa - S_ab * llt.solve(S_ab.transpose()))};
}

GaussianMarginal JointGaussianOracle::smoothed_state(std::size_t t) const {
    const auto off = static_cast<Eigen::Index>(t * (dims_.n_x + dims_.n_u));
    const auto nx = static_cast<Eigen::Index>(dims_.n_x);
    return {posterior_.mean.segment(off, nx), posterior_.cov.block(off, off, nx, nx)};
}

GaussianMarginal JointGaussianOracle::smoothed_joint(std::size_t t) const {
    const auto n = static_cast<Eigen::Index>(dims_.n_x + dims_.n_u);
    const Eigen::Index off = n * static_cast<Eigen::Index>(t);
    return {posterior_.mean.segment(off, n), posterior_.cov.block(off, off, n, n)};
}

GaussianMarginal JointGaussianOracle::filtered_state(std::size_t t) const {
    std::vector<Eigen::Index> latent;
    for (std::size_t i = 0; i < dims_.n_x; ++i) latent.push_back(static_cast<Eigen::Index>(x_index(t) + i));
    return condition(latent, t + 1);
}

GaussianMarginal JointGaussianOracle::predicted_state(std::size_t t) const {
    std::vector<Eigen::Index> latent;
    for (std::size_t i = 0; i < dims_.n_x; ++i) latent.push_back(static_cast<Eigen::Index>(x_index(t) + i));
    return condition(latent, t);
}

PolicyStep JointGaussianOracle::control_conditional(std::size_t t) const {
    return condition_control_on_state(smoothed_joint(t), dims_.n_x);
}

double JointGaussianOracle::log_evidence() const {
    std::vector<Eigen::Index> observed;
    Vec zvec(static_cast<Eigen::Index>(dims_.steps * dims_.n_z));
    for (std::size_t t = 0; t < dims_.steps; ++t) {
        for (std::size_t i = 0; i < dims_.n_z; ++i) observed.push_back(static_cast<Eigen::Index>(z_index(t) + i));
        zvec.segment(static_cast<Eigen::Index>(t * dims_.n_z), static_cast<Eigen::Index>(dims_.n_z)) = z_[t];
    }
    return gaussian_logpdf(zvec, mean_(observed), cov_(observed, observed));
}

GaussianMarginal JointGaussianOracle::trajectory_posterior() const { return posterior_; }

GaussianMarginal JointGaussianOracle::trajectory_prior(const ChmmModel& model, const LinearPolicy& policy) {
    DenseJoint joint = build_dense_joint(model, policy, false);
    return {std::move(joint.mean), std::move(joint.cov)};
}

}  // namespace apcd
