#include "apcd/apcd.hpp"

#include "apcd/parallel.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace apcd {

QuadraticValue QuadraticValue::zero(std::size_t n_x) {
    const auto n = static_cast<Eigen::Index>(n_x);
    return {Vec::Zero(n), Mat::Zero(n, n)};
}

QuadraticQ QuadraticQ::from_obs(const ObsQuadratic& obs, std::size_t n_x) { return {obs.Rxi, obs.Rxixi, n_x}; }

Mat QuadraticQ::Qxx() const {
    const auto nx = static_cast<Eigen::Index>(n_x);
    return Qxixi.topLeftCorner(nx, nx);
}

Mat QuadraticQ::Qux() const {
    const auto nx = static_cast<Eigen::Index>(n_x);
    return Qxixi.bottomLeftCorner(static_cast<Eigen::Index>(n_u()), nx);
}

Mat QuadraticQ::Quu() const {
    const auto nu = static_cast<Eigen::Index>(n_u());
    return Qxixi.bottomRightCorner(nu, nu);
}

const char* to_string(Method method) { return method == Method::Vanilla ? "vanilla" : "natural"; }

Method parse_method(const std::string& name) {
    if (name == "vanilla") return Method::Vanilla;
    if (name == "natural") return Method::Natural;
    throw std::invalid_argument("unknown method '" + name + "' (expected vanilla or natural)");
}

PolicyStep policy_from_q(const PolicyStep& prior, const QuadraticQ& q, std::optional<std::size_t> step) {
    const Mat S_inv = spd_inverse(prior.S, "prior policy covariance not PD", step);
    const Mat precision = symmetrize(S_inv + q.Quu());
    Eigen::LLT<Mat> llt(precision);
    if (llt.info() != Eigen::Success) throw NumericalError("S^-1 + Quu not PD (indefinite Q)", step);

    PolicyStep out;
    out.S = symmetrize(llt.solve(Mat::Identity(precision.rows(), precision.cols())));
    out.K = llt.solve(S_inv * prior.K - q.Qux());
    out.k = llt.solve(S_inv * prior.k - q.Qu());
    return out;
}

QuadraticValue value_from_q(const PolicyStep& prior, const PolicyStep& posterior, const QuadraticQ& q) {
    const Mat S_inv = spd_inverse(prior.S, "prior policy covariance not PD");
    // Sigma*^-1 = S^-1 + Quu by construction of policy_from_q.
    const Mat post_precision = symmetrize(S_inv + q.Quu());
    QuadraticValue v;
    v.Vx = q.Qx() + prior.K.transpose() * S_inv * prior.k - posterior.K.transpose() * post_precision * posterior.k;
    v.Vxx = symmetrize(q.Qxx() + prior.K.transpose() * S_inv * prior.K -
                       posterior.K.transpose() * post_precision * posterior.K);
    return v;
}

QuadraticQ vanilla_q_update(const TransitionStep& step, const ObsQuadratic& obs, const QuadraticValue& v_next,
                            std::optional<std::size_t> t) {
    const Eigen::Index nx = step.Fx.rows();
    const Mat F = step.Fxi();
    // (Vxx^-1 + Qcov)^-1 = (I + Vxx Qcov)^-1 Vxx
    Eigen::PartialPivLU<Mat> lu(Mat::Identity(nx, nx) + v_next.Vxx * step.Qcov);
    if (!(lu.rcond() > 1e-14)) throw NumericalError("Vxx^-1 + Qcov singular (degenerate propagation)", t);
    const Mat propagated = symmetrize(lu.solve(v_next.Vxx));
    const Vec linear = propagated * step.f + lu.solve(v_next.Vx);

    QuadraticQ q;
    q.n_x = static_cast<std::size_t>(nx);
    q.Qxixi = symmetrize(obs.Rxixi + F.transpose() * propagated * F);
    q.Qxi = obs.Rxi + F.transpose() * linear;
    return q;
}

QuadraticQ natural_q_update(const TransitionStep& step, const ObsQuadratic& obs_mean, const QuadraticValue& v_next) {
    const Mat F = step.Fxi();
    QuadraticQ q;
    q.n_x = static_cast<std::size_t>(step.Fx.rows());
    q.Qxixi = symmetrize(obs_mean.Rxixi + F.transpose() * v_next.Vxx * F);
    q.Qxi = obs_mean.Rxi + F.transpose() * (v_next.Vxx * step.f + v_next.Vx);
    return q;
}

namespace {

template <typename ObsAt, typename Propagate>
BackwardPass run_backward(const ChmmModel& model, ObsAt&& obs_at, Propagate&& propagate) {
    const Dims& d = model.dims;
    BackwardPass out;
    out.policy.steps.resize(d.steps);
    out.q.resize(d.steps);
    out.value.resize(d.steps);

    QuadraticValue v_next = QuadraticValue::zero(d.n_x);
    for (std::size_t t = d.steps; t-- > 0;) {
        const ObsQuadratic obs = obs_at(t);
        QuadraticQ q = (t + 1 == d.steps) ? QuadraticQ::from_obs(obs, d.n_x) : propagate(t, obs, v_next);
        const PolicyStep& prior = model.prior_policy[t];
        PolicyStep posterior = policy_from_q(prior, q, t);
        v_next = value_from_q(prior, posterior, q);
        out.value[t] = v_next;
        out.q[t] = std::move(q);
        out.policy[t] = std::move(posterior);
    }
    return out;
}

void check_sequences(const ChmmModel& model, const std::vector<Measurements>& sequences) {
    if (sequences.empty()) throw std::invalid_argument("at least one measurement sequence is required");
    for (const auto& z : sequences) {
        if (z.size() != model.dims.steps) throw std::invalid_argument("measurement sequence length does not match model steps");
    }
}

}  // namespace

BackwardPass backward_vanilla(const ChmmModel& model, const Measurements& z) {
    if (z.size() != model.dims.steps) throw std::invalid_argument("measurement sequence length does not match model steps");
    return run_backward(
        model, [&](std::size_t t) { return obs_loglik_quadratic(model.emissions[t], z[t]); },
        [&](std::size_t t, const ObsQuadratic& obs, const QuadraticValue& v) {
            return vanilla_q_update(model.transitions[t], obs, v, t);
        });
}

BackwardPass backward_natural(const ChmmModel& model, const std::vector<Measurements>& sequences) {
    check_sequences(model, sequences);
    return run_backward(
        model,
        [&](std::size_t t) {
            std::vector<ObsQuadratic> terms;
            terms.reserve(sequences.size());
            for (const auto& z : sequences) terms.push_back(obs_loglik_quadratic(model.emissions[t], z[t]));
            return average(terms);
        },
        [&](std::size_t t, const ObsQuadratic& obs, const QuadraticValue& v) {
            return natural_q_update(model.transitions[t], obs, v);
        });
}

MixturePolicy::MixturePolicy(std::vector<LinearPolicy> components, std::vector<std::vector<GaussianMarginal>> weight_marginals)
    : components_(std::move(components)), weight_marginals_(std::move(weight_marginals)) {
    if (components_.empty()) throw std::invalid_argument("mixture policy needs at least one component");
    if (components_.size() != weight_marginals_.size()) throw std::invalid_argument("one weight marginal list per component required");
    const std::size_t steps = components_.front().size();
    cache_.resize(components_.size());
    for (std::size_t n = 0; n < components_.size(); ++n) {
        if (components_[n].size() != steps || weight_marginals_[n].size() != steps) {
            throw std::invalid_argument("mixture components must share the horizon");
        }
        cache_[n].reserve(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            const Mat& cov = weight_marginals_[n][t].cov;
            Eigen::LLT<Mat> llt(symmetrize(cov));
            if (llt.info() != Eigen::Success) throw NumericalError("smoothed covariance not PD in mixture weights", t);
            const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
            const double dim = static_cast<double>(cov.rows());
            cache_[n].push_back({llt.solve(Mat::Identity(cov.rows(), cov.cols())),
                                 -0.5 * (log_det + dim * std::log(2.0 * std::numbers::pi))});
        }
    }
}

Vec MixturePolicy::weights(std::size_t t, const Vec& x) const {
    const auto n = static_cast<Eigen::Index>(components_.size());
    Vec log_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& c = cache_[static_cast<std::size_t>(i)][t];
        const Vec r = x - weight_marginals_[static_cast<std::size_t>(i)][t].mean;
        log_w(i) = c.log_norm - 0.5 * r.dot(c.precision * r);
    }
    const double top = log_w.maxCoeff();
    if (!std::isfinite(top)) {
        spdlog::warn("event=mixture_weight_underflow t={} components={}", t, n);
        return Vec::Constant(n, 1.0 / static_cast<double>(n));
    }
    Vec w = (log_w.array() - top).exp().matrix();
    return w / w.sum();
}

MixturePolicy extract_vanilla(const ChmmModel& model, const std::vector<Measurements>& sequences, std::size_t jobs) {
    check_sequences(model, sequences);
    std::vector<LinearPolicy> components(sequences.size());
    std::vector<std::vector<GaussianMarginal>> marginals(sequences.size());
    parallel_for(sequences.size(), jobs, [&](std::size_t n) {
        components[n] = backward_vanilla(model, sequences[n]).policy;
        marginals[n] = smooth_states(model, sequences[n]);
    });
    return MixturePolicy(std::move(components), std::move(marginals));
}

LinearPolicy extract_natural(const ChmmModel& model, const std::vector<Measurements>& sequences) {
    return backward_natural(model, sequences).policy;
}

Vec mixture_mean_control(const MixturePolicy& mix, std::size_t t, const Vec& x) {
    if (t >= mix.steps()) throw std::out_of_range("time index beyond mixture horizon");
    if (mix.size() == 1) return mix.components().front().mean_control(t, x);
    const Vec w = mix.weights(t, x);
    Vec u = Vec::Zero(mix.components().front()[t].k.size());
    for (std::size_t n = 0; n < mix.size(); ++n) u += w(static_cast<Eigen::Index>(n)) * mix.components()[n].mean_control(t, x);
    return u;
}

}  // namespace apcd
