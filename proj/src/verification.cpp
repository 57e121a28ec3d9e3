#include "apcd/verification.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace apcd {

namespace {

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    }
    return m;
}

Vec random_vector(Eigen::Index n, double scale, std::mt19937_64& rng) { return random_matrix(n, 1, scale, rng).col(0); }

Mat random_spd(Eigen::Index n, double scale, std::mt19937_64& rng) {
    const Mat L = random_matrix(n, n, 1.0, rng);
    return symmetrize(scale * (L * L.transpose() / static_cast<double>(n) + 0.2 * Mat::Identity(n, n)));
}

std::size_t uniform_index(std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double log_det_pd(const Mat& m) {
    Eigen::LLT<Mat> llt(m);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance not PD in divergence");
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double max_gain_norm(const LinearPolicy& p) {
    double out = 0.0;
    for (const auto& s : p.steps) out = std::max(out, s.K.norm());
    return out;
}

double max_gain_gap(const LinearPolicy& a, const LinearPolicy& b) {
    double out = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) out = std::max(out, (a[t].K - b[t].K).norm());
    return out;
}

// Relative error floor: parameters below this norm are compared absolutely.
constexpr double kCompareFloor = 1e-6;

double policy_step_error(const PolicyStep& a, const PolicyStep& b, double floor) {
    return std::max({rel_diff(a.K, b.K, floor), rel_diff(a.k, b.k, floor), rel_diff(a.S, b.S, floor)});
}

double marginal_error(const GaussianMarginal& a, const GaussianMarginal& b) {
    return std::max(rel_diff(a.mean, b.mean, kCompareFloor), rel_diff(a.cov, b.cov, kCompareFloor));
}

CheckResult finish(std::string name, double value, double threshold, bool below, std::string detail) {
    CheckResult r;
    r.name = std::move(name);
    r.value = value;
    r.threshold = threshold;
    r.passed = std::isfinite(value) && (below ? value <= threshold : value > threshold);
    r.detail = std::move(detail);
    return r;
}

// Same policy with the prior's means and the given policy's covariances.
LinearPolicy prior_means(const ChmmModel& model, const LinearPolicy& like) {
    return unpack_means(like, pack_means(model.prior_policy));
}

struct StationarityOutcome {
    double relative_gradient = 0.0;
    std::size_t failed_perturbations = 0;
};

StationarityOutcome stationarity(const std::function<double(const Vec&)>& f, const Vec& optimum, const Vec& reference,
                                 double h, std::mt19937_64& rng) {
    StationarityOutcome out;
    const double g_opt = finite_difference_gradient(f, optimum, h).norm();
    const double g_ref = finite_difference_gradient(f, reference, h).norm();
    out.relative_gradient = g_opt / std::max(g_ref, 1e-300);
    const double f_opt = f(optimum);
    std::normal_distribution<double> normal;
    for (int i = 0; i < 20; ++i) {
        Vec d(optimum.size());
        for (Eigen::Index j = 0; j < d.size(); ++j) d(j) = normal(rng);
        d *= 1e-2 / d.norm();
        if (!(f(optimum + d) > f_opt)) ++out.failed_perturbations;
    }
    return out;
}

}  // namespace

ChmmModel random_model(std::mt19937_64& rng, const RandomModelOptions& options) {
    ChmmModel m;
    Dims& d = m.dims;
    d.n_x = uniform_index(1, options.max_nx, rng);
    d.n_u = uniform_index(1, options.max_nu, rng);
    d.n_z = uniform_index(1, options.max_nz, rng);
    d.steps = uniform_index(options.min_steps, options.max_steps, rng);
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const auto nu = static_cast<Eigen::Index>(d.n_u);
    const auto nz = static_cast<Eigen::Index>(d.n_z);

    m.prior = {random_vector(nx, 1.0, rng), random_spd(nx, 1.0, rng)};
    for (std::size_t t = 0; t + 1 < d.steps; ++t) {
        TransitionStep tr;
        tr.Fx = 0.9 * Mat::Identity(nx, nx) + random_matrix(nx, nx, 0.3, rng);
        tr.Fu = random_matrix(nx, nu, 1.0, rng);
        tr.f = random_vector(nx, 0.5, rng);
        tr.Qcov = random_spd(nx, 0.5, rng);
        m.transitions.push_back(std::move(tr));
    }
    for (std::size_t t = 0; t < d.steps; ++t) {
        EmissionStep em;
        em.Gx = random_matrix(nz, nx, 1.0, rng);
        em.Gu = options.control_in_emission ? random_matrix(nz, nu, 0.5, rng) : Mat::Zero(nz, nu);
        em.g = random_vector(nz, 0.5, rng);
        em.Rcov = random_spd(nz, 0.5, rng);
        m.emissions.push_back(std::move(em));
        m.prior_policy.steps.push_back({random_matrix(nu, nx, 0.3, rng), random_vector(nu, 0.5, rng), random_spd(nu, 1.0, rng)});
    }
    return m;
}

Measurements sample_measurements(const ChmmModel& model, std::mt19937_64& rng) {
    const Dims& d = model.dims;
    std::normal_distribution<double> normal;
    auto draw = [&](const Mat& cov) {
        Vec e(cov.rows());
        for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = normal(rng);
        return Vec(psd_sqrt(cov) * e);
    };
    Measurements z;
    z.reserve(d.steps);
    Vec x = model.prior.mu0 + draw(model.prior.sigma0);
    for (std::size_t t = 0; t < d.steps; ++t) {
        const PolicyStep& pol = model.prior_policy[t];
        const Vec u = pol.mean(x) + draw(pol.S);
        const EmissionStep& em = model.emissions[t];
        z.push_back(em.Gx * x + em.Gu * u + em.g + draw(em.Rcov));
        if (t + 1 < d.steps) {
            const TransitionStep& tr = model.transitions[t];
            x = tr.Fx * x + tr.Fu * u + tr.f + draw(tr.Qcov);
        }
    }
    return z;
}

ChmmModel with_process_noise(const ChmmModel& model, double scale) {
    ChmmModel out = model;
    const auto nx = static_cast<Eigen::Index>(model.dims.n_x);
    for (auto& tr : out.transitions) tr.Qcov = scale * Mat::Identity(nx, nx);
    return out;
}

double gaussian_kl(const GaussianMarginal& p, const GaussianMarginal& q) {
    Eigen::LLT<Mat> llt(q.cov);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance not PD in divergence");
    const Vec diff = q.mean - p.mean;
    const double n = static_cast<double>(p.mean.size());
    const double trace = llt.solve(p.cov).trace();
    return 0.5 * (trace + diff.dot(llt.solve(diff)) - n + log_det_pd(q.cov) - log_det_pd(p.cov));
}

double m_projection_divergence(const ChmmModel& model, const GaussianMarginal& posterior, const LinearPolicy& policy) {
    return gaussian_kl(posterior, JointGaussianOracle::trajectory_prior(model, policy));
}

double i_projection_divergence(const ChmmModel& model, const Measurements& z, double log_evidence, const LinearPolicy& policy) {
    const Dims& d = model.dims;
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const auto nu = static_cast<Eigen::Index>(d.n_u);
    const double log_2pi = std::log(2.0 * std::numbers::pi);

    Vec m = model.prior.mu0;
    Mat P = model.prior.sigma0;
    double total = log_evidence;
    for (std::size_t t = 0; t < d.steps; ++t) {
        const PolicyStep& pi = policy[t];
        const PolicyStep& rho = model.prior_policy[t];

        // E_x KL(N(K x + k, Sigma) || N(K_rho x + k_rho, S))
        const Mat S_inv = spd_inverse(rho.S, "prior policy covariance not PD", t);
        const Mat D = pi.K - rho.K;
        const Vec dm = D * m + (pi.k - rho.k);
        total += 0.5 * ((S_inv * pi.S).trace() - static_cast<double>(nu) + log_det_pd(rho.S) - log_det_pd(pi.S) +
                        dm.dot(S_inv * dm) + (D.transpose() * S_inv * D * P).trace());

        Vec mean(nx + nu);
        mean << m, pi.mean(m);
        Mat cov(nx + nu, nx + nu);
        cov << P, P * pi.K.transpose(), pi.K * P, pi.K * P * pi.K.transpose() + pi.S;

        // E -log p(z_t | xi_t)
        const EmissionStep& em = model.emissions[t];
        const Mat G = em.Gxi();
        const Mat R_inv = spd_inverse(em.Rcov, "Rcov not PD", t);
        const Vec r = z[t] - G * mean - em.g;
        total += 0.5 * (r.dot(R_inv * r) + (G.transpose() * R_inv * G * cov).trace() + log_det_pd(em.Rcov) +
                        static_cast<double>(d.n_z) * log_2pi);

        if (t + 1 < d.steps) {
            const TransitionStep& tr = model.transitions[t];
            const Mat F = tr.Fxi();
            m = F * mean + tr.f;
            P = symmetrize(F * cov * F.transpose() + tr.Qcov);
        }
    }
    return total;
}

Vec pack_means(const LinearPolicy& policy) {
    Eigen::Index n = 0;
    for (const auto& s : policy.steps) n += s.K.size() + s.k.size();
    Vec theta(n);
    Eigen::Index at = 0;
    for (const auto& s : policy.steps) {
        theta.segment(at, s.K.size()) = s.K.reshaped();
        at += s.K.size();
        theta.segment(at, s.k.size()) = s.k;
        at += s.k.size();
    }
    return theta;
}

LinearPolicy unpack_means(const LinearPolicy& like, const Vec& theta) {
    LinearPolicy out = like;
    Eigen::Index at = 0;
    for (auto& s : out.steps) {
        s.K = theta.segment(at, s.K.size()).reshaped(s.K.rows(), s.K.cols());
        at += s.K.size();
        s.k = theta.segment(at, s.k.size());
        at += s.k.size();
    }
    if (at != theta.size()) throw std::invalid_argument("parameter vector does not match policy shape");
    return out;
}

Vec finite_difference_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, double h) {
    Vec g(theta.size());
    Vec probe = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double step = h * (1.0 + std::abs(theta(i)));
        probe(i) = theta(i) + step;
        const double up = f(probe);
        probe(i) = theta(i) - step;
        const double down = f(probe);
        probe(i) = theta(i);
        g(i) = (up - down) / (2.0 * step);
    }
    return g;
}

CheckResult check_oracle_equivalence(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed);
    RandomModelOptions shape;
    shape.max_steps = options.max_steps;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const ChmmModel model = random_model(rng, shape);
        const Measurements z = sample_measurements(model, rng);
        const LinearPolicy policy = backward_vanilla(model, z).policy;
        const JointGaussianOracle oracle(model, z);
        for (std::size_t t = 0; t < model.dims.steps; ++t) {
            worst = std::max(worst, policy_step_error(policy[t], oracle.control_conditional(t), kCompareFloor));
        }
    }
    return finish("vanilla policy matches exact conditional p(u|x,Z)", worst, 1e-8, true,
                  fmt::format("{} models", options.trials));
}

CheckResult check_smoother_agreement(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 1);
    RandomModelOptions shape;
    shape.max_steps = options.max_steps;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const ChmmModel model = random_model(rng, shape);
        const Measurements z = sample_measurements(model, rng);
        const FilterResult filter = kalman_filter(model, z);
        const SmootherResult smoother = rts_smoother(model, filter);
        const JointGaussianOracle oracle(model, z);
        for (std::size_t t = 0; t < model.dims.steps; ++t) {
            worst = std::max({worst, marginal_error(smoother.states[t], oracle.smoothed_state(t)),
                              marginal_error(smoother.joint[t], oracle.smoothed_joint(t)),
                              marginal_error(filter.filtered[t], oracle.filtered_state(t)),
                              marginal_error(filter.predicted[t], oracle.predicted_state(t))});
        }
    }
    return finish("filter and smoother marginals match oracle", worst, 1e-10, true,
                  fmt::format("{} models", options.trials));
}

CheckResult check_log_evidence(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 2);
    RandomModelOptions shape;
    shape.max_steps = options.max_steps;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const ChmmModel model = random_model(rng, shape);
        const Measurements z = sample_measurements(model, rng);
        const double oracle = JointGaussianOracle(model, z).log_evidence();
        worst = std::max(worst, std::abs(kalman_filter(model, z).log_evidence() - oracle) / std::max(std::abs(oracle), 1.0));
    }
    return finish("filter log-evidence matches oracle", worst, 1e-8, true, fmt::format("{} models", options.trials));
}

CheckResult check_deterministic_limit(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 3);
    RandomModelOptions shape;
    shape.max_steps = options.max_steps;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const ChmmModel model = with_process_noise(random_model(rng, shape), 1e-10);
        const Measurements z = sample_measurements(model, rng);
        const LinearPolicy v = backward_vanilla(model, z).policy;
        const LinearPolicy n = backward_natural(model, {z}).policy;
        worst = std::max(worst, max_gain_gap(v, n) / max_gain_norm(v));
    }
    return finish("vanilla and natural gains coincide for Qcov = 1e-10 I", worst, 1e-6, true,
                  "max_t |K_v - K_n| / max_t |K_v|");
}

CheckResult check_methods_distinct(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 4);
    RandomModelOptions shape;
    shape.min_steps = 3;
    shape.max_steps = std::max<std::size_t>(options.max_steps, 3);
    double smallest = std::numeric_limits<double>::infinity();
    const std::size_t trials = std::min<std::size_t>(options.trials, 10);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const ChmmModel model = with_process_noise(random_model(rng, shape), 1.0);
        const Measurements z = sample_measurements(model, rng);
        const LinearPolicy v = backward_vanilla(model, z).policy;
        const LinearPolicy n = backward_natural(model, {z}).policy;
        smallest = std::min(smallest, max_gain_gap(v, n) / max_gain_norm(v));
    }
    return finish("vanilla and natural gains differ for Qcov = I", smallest, 1e-3, false,
                  fmt::format("smallest gap over {} models", trials));
}

CheckResult check_m_projection(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 5);
    RandomModelOptions shape;
    shape.max_steps = std::min<std::size_t>(options.max_steps, 5);
    const std::size_t trials = std::min<std::size_t>(options.trials, 5);
    double worst = 0.0;
    std::size_t failed = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const ChmmModel model = random_model(rng, shape);
        const Measurements z = sample_measurements(model, rng);
        const LinearPolicy best = backward_vanilla(model, z).policy;
        const GaussianMarginal posterior = JointGaussianOracle(model, z).trajectory_posterior();
        auto f = [&](const Vec& theta) { return m_projection_divergence(model, posterior, unpack_means(best, theta)); };
        const auto outcome = stationarity(f, pack_means(best), pack_means(prior_means(model, best)), 1e-4, rng);
        worst = std::max(worst, outcome.relative_gradient);
        failed += outcome.failed_perturbations;
    }
    CheckResult r = finish("vanilla policy is a stationary minimum of D[p(Xi|Z) || p(Xi; pi)]", worst, 1e-5, true,
                           fmt::format("{} models, {} perturbations did not increase the divergence", trials, failed));
    r.passed = r.passed && failed == 0;
    return r;
}

CheckResult check_i_projection(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 6);
    RandomModelOptions shape;
    shape.max_steps = std::min<std::size_t>(options.max_steps, 5);
    const std::size_t trials = std::min<std::size_t>(options.trials, 5);
    double worst = 0.0;
    std::size_t failed = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const ChmmModel model = with_process_noise(random_model(rng, shape), 0.0);
        const Measurements z = sample_measurements(model, rng);
        const LinearPolicy best = backward_natural(model, {z}).policy;
        const double log_evidence = JointGaussianOracle(model, z).log_evidence();
        auto f = [&](const Vec& theta) { return i_projection_divergence(model, z, log_evidence, unpack_means(best, theta)); };
        const auto outcome = stationarity(f, pack_means(best), pack_means(prior_means(model, best)), 1e-5, rng);
        worst = std::max(worst, outcome.relative_gradient);
        failed += outcome.failed_perturbations;
    }
    CheckResult r = finish("natural policy is a stationary minimum of D[p(Xi; pi) || p(Xi|Z)]", worst, 1e-5, true,
                           fmt::format("{} deterministic models, {} perturbations did not increase the divergence", trials, failed));
    r.passed = r.passed && failed == 0;
    return r;
}

CheckResult check_prior_recovery(const OracleSuiteOptions& options) {
    std::mt19937_64 rng(options.seed + 7);
    RandomModelOptions shape;
    shape.max_steps = options.max_steps;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        ChmmModel model = random_model(rng, shape);
        const Measurements z = sample_measurements(model, rng);
        for (auto& em : model.emissions) em.Rcov *= 1e12;
        const LinearPolicy v = backward_vanilla(model, z).policy;
        const LinearPolicy n = backward_natural(model, {z}).policy;
        for (std::size_t t = 0; t < model.dims.steps; ++t) {
            worst = std::max({worst, policy_step_error(v[t], model.prior_policy[t], 1.0),
                              policy_step_error(n[t], model.prior_policy[t], 1.0)});
        }
    }
    return finish("uninformative measurements return the prior policy", worst, 1e-4, true,
                  fmt::format("{} models, Rcov scaled by 1e12", options.trials));
}

std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& options) {
    return {check_oracle_equivalence(options), check_smoother_agreement(options), check_log_evidence(options),
            check_deterministic_limit(options), check_methods_distinct(options),   check_m_projection(options),
            check_i_projection(options),        check_prior_recovery(options)};
}

}  // namespace apcd
