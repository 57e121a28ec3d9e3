#include "support.hpp"

#include "apcd/verification.hpp"

#include <algorithm>

using namespace apcd;
using namespace apcd::test;

namespace {

bool mentions(const ValidationReport& report, const std::string& text) {
    return std::any_of(report.begin(), report.end(),
                       [&](const ValidationIssue& i) { return i.to_string().find(text) != std::string::npos; });
}

// Empirical mean and covariance of `draws` samples of y = A x + b + e.
struct Moments {
    Vec mean;
    Mat cov;
};

template <typename Sampler>
Moments sample_moments(std::size_t draws, Eigen::Index dim, Sampler&& sample) {
    Vec sum = Vec::Zero(dim);
    Mat outer = Mat::Zero(dim, dim);
    for (std::size_t i = 0; i < draws; ++i) {
        const Vec y = sample();
        sum += y;
        outer += y * y.transpose();
    }
    const double n = static_cast<double>(draws);
    const Vec mean = sum / n;
    return {mean, (outer - n * mean * mean.transpose()) / (n - 1.0)};
}

// Entry-wise 3-standard-error check of the empirical moments of a Gaussian.
void check_moments(const Moments& m, const Vec& mean, const Mat& cov, std::size_t draws) {
    const double n = static_cast<double>(draws);
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        CHECK(std::abs(m.mean(i) - mean(i)) <= 3.0 * std::sqrt(cov(i, i) / n));
        for (Eigen::Index j = 0; j < mean.size(); ++j) {
            // Var of the sample covariance entry: (S_ii S_jj + S_ij^2) / n
            const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n);
            CHECK(std::abs(m.cov(i, j) - cov(i, j)) <= 3.0 * se);
        }
    }
}

Vec draw(const Mat& cov, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Vec e(cov.rows());
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = normal(rng);
    return psd_sqrt(cov) * e;
}

}  // namespace

TEST_SUITE("chmm_model") {

TEST_CASE("validate_model accepts a well-formed model") {
    CHECK(validate_model(scalar_model({})).empty());
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) CHECK(validate_model(random_model(rng)).empty());
}

TEST_CASE("validate_model names an indefinite Qcov with its step") {
    std::mt19937_64 rng(2);
    RandomModelOptions opts;
    opts.min_steps = opts.max_steps = 8;
    ChmmModel m = random_model(rng, opts);
    const Eigen::Index n = m.transitions[4].Qcov.rows();
    Mat Q = Mat::Identity(n, n);
    Q(0, 0) = -1e-3;
    m.transitions[4].Qcov = Q;
    const ValidationReport report = validate_model(m);
    REQUIRE(report.size() == 1);
    CHECK(report[0].to_string() == "Qcov not PSD, t=4");
}

TEST_CASE("validate_model reports list length mismatches") {
    ChmmModel m = scalar_model({.steps = 5});
    m.transitions.pop_back();
    CHECK(mentions(validate_model(m), "transitions length mismatch: 3, expected 4"));
    m = scalar_model({.steps = 5});
    m.emissions.push_back(m.emissions.back());
    CHECK(mentions(validate_model(m), "emissions length mismatch"));
}

TEST_CASE("validate_model catches shape, definiteness and dimension errors") {
    ChmmModel m = scalar_model({});
    m.emissions[1].Rcov = mat({{0.0}});
    CHECK(mentions(validate_model(m), "Rcov not PD, t=1"));
    m = scalar_model({});
    m.prior_policy[2].S = mat({{1, 0}, {0, 1}});
    CHECK(mentions(validate_model(m), "S has shape 2x2, expected 1x1, t=2"));
    m = scalar_model({});
    m.transitions[0].Qcov = mat({{1.0}});
    m.transitions[0].Fx(0, 0) = std::nan("");
    CHECK(mentions(validate_model(m), "Fx not finite, t=0"));
    m = scalar_model({});
    m.dims.steps = 1;
    CHECK(mentions(validate_model(m), "steps must be >= 2"));
    m = scalar_model({});
    m.dims.dt = 0.0;
    CHECK(mentions(validate_model(m), "dt must be > 0"));
}

TEST_CASE("validate_model is pure") {
    ChmmModel m = scalar_model({});
    m.transitions[1].Qcov = mat({{-1.0}});
    CHECK(validate_model(m) == validate_model(m));
}

TEST_CASE("obs_loglik_quadratic scalar examples") {
    const EmissionStep em{mat({{1}}), mat({{0}}), vec({0}), mat({{1}})};
    ObsQuadratic q = obs_loglik_quadratic(em, vec({0.0}));
    CHECK(q.Rxi == vec({0, 0}));
    CHECK(q.Rxixi == mat({{1, 0}, {0, 0}}));
    q = obs_loglik_quadratic(em, vec({2.0}));
    CHECK(q.Rxi == vec({-2, 0}));
}

TEST_CASE("obs_loglik_quadratic matches the squared Mahalanobis residual") {
    std::mt19937_64 rng(5);
    const EmissionStep em{random_matrix(2, 2, rng), random_matrix(2, 1, rng), random_vector(2, rng), random_spd(2, rng)};
    const Vec z = random_vector(2, rng);
    const ObsQuadratic q = obs_loglik_quadratic(em, z);
    const Mat Rinv = em.Rcov.inverse();
    CHECK(q.Rxixi == q.Rxixi.transpose());
    std::optional<double> offset;
    for (int i = 0; i < 10; ++i) {
        const Vec xi = random_vector(3, rng, 2.0);
        const Vec r = em.Gxi() * xi + em.g - z;
        const double direct = 0.5 * r.dot(Rinv * r);
        const double form = 0.5 * xi.dot(q.Rxixi * xi) + q.Rxi.dot(xi);
        if (!offset) offset = direct - form;
        CHECK(direct - form == doctest::Approx(*offset).epsilon(1e-12));
    }
    for (int i = 0; i < 100; ++i) {
        const Vec x = random_vector(3, rng);
        CHECK(x.dot(q.Rxixi * x) >= -1e-12);
    }
}

TEST_CASE("obs_loglik_quadratic rejects a singular Rcov") {
    const EmissionStep em{mat({{1}}), mat({{0}}), vec({0}), mat({{0}})};
    CHECK_THROWS_WITH_AS((void)obs_loglik_quadratic(em, vec({0})), "non-invertible emission covariance",
                         NumericalError);
}

TEST_CASE("average of observation quadratics") {
    const ObsQuadratic a{vec({1, 2}), mat({{1, 0}, {0, 1}})};
    const ObsQuadratic b{vec({3, 0}), mat({{3, 1}, {1, 1}})};
    const ObsQuadratic m = average({a, b});
    CHECK(m.Rxi == vec({2, 1}));
    CHECK(m.Rxixi == mat({{2, 0.5}, {0.5, 1}}));
    CHECK_THROWS_AS((void)average({}), std::invalid_argument);
}

TEST_CASE("closed_loop_transition examples") {
    const TransitionStep step{mat({{1}}), mat({{1}}), vec({0}), mat({{1}})};
    const AffineGaussianSystem sys = closed_loop_transition(step, PolicyStep{mat({{-0.5}}), vec({0}), mat({{1}})});
    CHECK(sys.A(0, 0) == doctest::Approx(0.5));
    CHECK(sys.cov(0, 0) == doctest::Approx(2.0));

    std::mt19937_64 rng(6);
    const TransitionStep big{random_matrix(3, 3, rng), random_matrix(3, 2, rng), random_vector(3, rng), random_spd(3, rng)};
    const double eps = 1e-14;
    const AffineGaussianSystem open =
        closed_loop_transition(big, PolicyStep{Mat::Zero(2, 3), Vec::Zero(2), eps * Mat::Identity(2, 2)});
    CHECK(open.A == big.Fx);
    CHECK(open.b == big.f);
    CHECK((open.cov - big.Qcov).norm() < 1e-12);
}

TEST_CASE("closed_loop_emission examples") {
    const PolicyStep pol{mat({{2}}), vec({0}), mat({{1}})};
    AffineGaussianSystem sys = closed_loop_emission(EmissionStep{mat({{1}}), mat({{1}}), vec({0}), mat({{1}})}, pol);
    CHECK(sys.A(0, 0) == doctest::Approx(3.0));
    CHECK(sys.cov(0, 0) == doctest::Approx(2.0));
    const EmissionStep position{mat({{1, 0}}), mat({{0}}), vec({0.5}), mat({{0.1}})};
    sys = closed_loop_emission(position, PolicyStep{mat({{4, 5}}), vec({1}), mat({{3}})});
    CHECK(sys.A == position.Gx);
    CHECK(sys.b == position.g);
    CHECK(sys.cov == position.Rcov);
}

TEST_CASE("closed-loop forms agree with sampling") {
    std::mt19937_64 rng(7);
    const PolicyStep pol{random_matrix(2, 3, rng), random_vector(2, rng), random_spd(2, rng)};
    const TransitionStep tr{random_matrix(3, 3, rng), random_matrix(3, 2, rng), random_vector(3, rng), random_spd(3, rng)};
    const EmissionStep em{random_matrix(2, 3, rng), random_matrix(2, 2, rng), random_vector(2, rng), random_spd(2, rng)};
    const Vec x = random_vector(3, rng);
    constexpr std::size_t draws = 100000;

    const AffineGaussianSystem ct = closed_loop_transition(tr, pol);
    CHECK(is_psd(ct.cov));
    CHECK(ct.cov == ct.cov.transpose());
    const Moments mt = sample_moments(draws, 3, [&] {
        const Vec u = pol.mean(x) + draw(pol.S, rng);
        return Vec(tr.Fx * x + tr.Fu * u + tr.f + draw(tr.Qcov, rng));
    });
    check_moments(mt, ct.A * x + ct.b, ct.cov, draws);

    const AffineGaussianSystem ce = closed_loop_emission(em, pol);
    CHECK(is_psd(ce.cov));
    const Moments me = sample_moments(draws, 2, [&] {
        const Vec u = pol.mean(x) + draw(pol.S, rng);
        return Vec(em.Gx * x + em.Gu * u + em.g + draw(em.Rcov, rng));
    });
    check_moments(me, ce.A * x + ce.b, ce.cov, draws);
}

}
