#include "support.hpp"

#include "apcd/simulator.hpp"

#include <Eigen/Eigenvalues>
#include <numbers>
#include <set>

using namespace apcd;
using namespace apcd::test;

namespace {

NoiseBank zero_bank(const Dims& d, std::size_t runs) {
    NoiseBank bank;
    RunNoise run;
    run.initial = Vec::Zero(static_cast<Eigen::Index>(d.n_x));
    run.process.assign(d.steps - 1, Vec::Zero(static_cast<Eigen::Index>(d.n_x)));
    run.policy.assign(d.steps, Vec::Zero(static_cast<Eigen::Index>(d.n_u)));
    run.measurement.assign(d.steps, Vec::Zero(static_cast<Eigen::Index>(d.n_z)));
    bank.runs.assign(runs, run);
    return bank;
}

ControlLaw constant_law(Vec u) {
    return {[u = std::move(u)](std::size_t, const Vec&) { return u; }, {}};
}

double condition_number(const Mat& spd) {
    const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(spd).eigenvalues();
    return ev.maxCoeff() / ev.minCoeff();
}

}  // namespace

TEST_SUITE("simulator") {

TEST_CASE("make_random_spd is symmetric positive definite") {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 20; ++i) {
        const Mat A = make_random_spd(2, vec({1, 1}), rng);
        CHECK(A == A.transpose());
        CHECK(is_pd(A));
        CHECK(A(0, 0) == doctest::Approx(kUnitScaleVariance));
    }
    CHECK(is_pd(make_random_spd(5, Vec::Constant(5, 3.0), rng)));
    CHECK_THROWS_AS((void)make_random_spd(2, vec({1, -1}), rng), std::invalid_argument);
    CHECK_THROWS_AS((void)make_random_spd(3, vec({1, 1}), rng), std::invalid_argument);
}

TEST_CASE("noise scale factors multiply the unit-scale construction") {
    std::mt19937_64 unit_rng(7), input_rng(7), meas_rng(7);
    const Mat unit = make_random_spd(2, vec({1, 1}), unit_rng);
    const Mat input = make_random_spd(2, vec({10, 100}), input_rng);
    const Mat meas = make_random_spd(2, vec({0.1, 0.1}), meas_rng);
    CHECK(input(0, 0) / unit(0, 0) == doctest::Approx(1e2));
    CHECK(input(1, 1) / unit(1, 1) == doctest::Approx(1e4));
    CHECK(input(0, 1) / unit(0, 1) == doctest::Approx(1e3));
    CHECK((meas - 1e-2 * unit).norm() <= 1e-15);
}

TEST_CASE("benchmark model structure") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{});
    const ChmmModel& m = prob.model;
    CHECK(validate_model(m).empty());
    CHECK(m.dims.n_x == 4);
    CHECK(m.dims.n_u == 2);
    CHECK(m.dims.n_z == 2);
    CHECK(m.dims.steps == 1001);
    CHECK(m.dims.dt * static_cast<double>(m.dims.steps - 1) == doctest::Approx(2.0));
    CHECK(m.prior.sigma0 == 0.1 * Mat::Identity(4, 4));
    CHECK(m.emissions[0].Gu.isZero());
    CHECK(condition_number(prob.input_noise) > 10.0);
    // Force noise scaled by dt^2 lands in the velocity block.
    const Mat& Q = m.transitions[0].Qcov;
    CHECK((Q.bottomRightCorner(2, 2) - 4e-6 * prob.input_noise).norm() <= 1e-15);
    CHECK(Q.topLeftCorner(2, 2) == 1e-12 * Mat::Identity(2, 2));
    CHECK(prob.cost.reference.size() == 1001);
    CHECK(prob.cost.Rp == 1e4 * Mat::Identity(2, 2));
    CHECK(prob.cost.Rv == Mat::Identity(2, 2));

    BenchmarkSpec desk;
    desk.horizon = 0.5;
    CHECK(build_tracking_model(desk).model.dims.steps == 251);
    BenchmarkSpec bad;
    bad.lambda = 0.0;
    CHECK_THROWS_AS((void)build_tracking_model(bad), std::invalid_argument);
}

TEST_CASE("zero force leaves a mass at rest") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{});
    ChmmModel m = prob.model;
    m.prior.mu0 = vec({1, 0, 0, 0});
    const SimulationResult sim = simulate(m, constant_law(Vec::Zero(2)), zero_bank(m.dims, 1), 0);
    CHECK(sim.trajectory.states.back() == vec({1, 0, 0, 0}));
}

TEST_CASE("constant force follows the discrete kinematics") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{});
    const ChmmModel& m = prob.model;
    const SimulationResult sim = simulate(m, constant_law(vec({1, 0})), zero_bank(m.dims, 1), 0);
    const double n = static_cast<double>(m.dims.steps - 1);
    const double dt = m.dims.dt;
    const double p_T = sim.trajectory.states.back()(0);
    // p_n = dt^2 * sum_{j<n} j
    CHECK(p_T == doctest::Approx(dt * dt * n * (n - 1.0) / 2.0).epsilon(1e-12));
    CHECK(std::abs(p_T - 0.5 * 2.0 * 2.0) <= 0.01 * 2.0);
    CHECK(sim.trajectory.states.back()(1) == 0.0);
}

TEST_CASE("noise-free simulation is the deterministic recursion") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{.horizon = 0.1});
    ChmmModel m = prob.model;
    m.prior.mu0 = vec({0.1, -0.2, 0.3, 0.0});
    const LinearPolicy pol = lqer_synthesize(m, prob.cost);
    const SimulationResult sim = simulate(m, deterministic_law(pol), zero_bank(m.dims, 1), 0);
    Vec x = m.prior.mu0;
    for (std::size_t t = 0; t < m.dims.steps; ++t) {
        REQUIRE(sim.trajectory.states[t] == x);
        const Vec u = pol.mean_control(t, x);
        CHECK(sim.trajectory.controls[t] == u);
        CHECK(sim.measurements.z[t] == m.emissions[t].Gx * x);
        if (t + 1 < m.dims.steps) x = m.transitions[t].Fx * x + m.transitions[t].Fu * u;
    }
}

TEST_CASE("LQER regulates to the origin on a zero reference") {
    BenchmarkSpec spec;
    spec.reference = ReferenceKind::Line;
    spec.reference_scale = 0.0;
    const TrackingProblem prob = build_tracking_model(spec);
    ChmmModel m = prob.model;
    m.prior.mu0 = vec({0.3, -0.2, 1.0, 0.5});
    const LinearPolicy pol = lqer_synthesize(m, prob.cost);
    const SimulationResult sim = simulate(m, deterministic_law(pol), zero_bank(m.dims, 1), 0);
    CHECK(sim.trajectory.states.back().norm() < 1e-3 * m.prior.mu0.norm());
}

TEST_CASE("simulation is bit-for-bit deterministic") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{.horizon = 0.2});
    const LinearPolicy pol = lqer_synthesize(prob.model, prob.cost);
    const NoiseBank bank = make_noise_bank(99, prob.model.dims, 3);
    const SimulationResult a = simulate(prob.model, deterministic_law(pol), bank, 2);
    const SimulationResult b = simulate(prob.model, deterministic_law(pol), make_noise_bank(99, prob.model.dims, 3), 2);
    CHECK(a.trajectory.states == b.trajectory.states);
    CHECK(a.measurements.z == b.measurements.z);
}

TEST_CASE("measurement residuals have the model covariance") {
    BenchmarkSpec spec;
    spec.horizon = 20.0;  // 10001 steps
    const TrackingProblem prob = build_tracking_model(spec);
    const LinearPolicy pol = lqer_synthesize(prob.model, prob.cost);
    const SimulationResult sim = simulate(prob.model, deterministic_law(pol), make_noise_bank(5, prob.model.dims, 1), 0);
    Mat cov = Mat::Zero(2, 2);
    for (std::size_t t = 0; t < prob.model.dims.steps; ++t) {
        const Vec r = sim.measurements.z[t] - sim.trajectory.states[t].head(2);
        cov += r * r.transpose();
    }
    cov /= static_cast<double>(prob.model.dims.steps);
    CHECK(rel_diff(cov, prob.measurement_noise, 0.0) <= 0.05);
}

TEST_CASE("stochastic law adds scaled policy noise") {
    const ChmmModel m = scalar_model({.steps = 4, .K = 0.5, .k = 1.0, .S = 4.0});
    const NoiseBank bank = make_noise_bank(3, m.dims, 1);
    const SimulationResult sim = simulate(m, stochastic_law(m.prior_policy), bank, 0);
    for (std::size_t t = 0; t < 4; ++t) {
        const double mean = 0.5 * sim.trajectory.states[t](0) + 1.0;
        CHECK(sim.trajectory.controls[t](0) == doctest::Approx(mean + 2.0 * bank.runs[0].policy[t](0)));
    }
}

TEST_CASE("divergence is reported with its step") {
    const ChmmModel m = scalar_model({.steps = 50, .Fx = 1e80, .mu0 = 1.0});
    try {
        (void)simulate(m, constant_law(vec({0})), zero_bank(m.dims, 1), 0);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step() == std::optional<std::size_t>(4));
    }
}

TEST_CASE("simulate checks the bank") {
    const ChmmModel m = scalar_model({.steps = 4});
    CHECK_THROWS_AS((void)simulate(m, constant_law(vec({0})), zero_bank(m.dims, 1), 1), std::out_of_range);
    Dims other = m.dims;
    other.steps = 5;
    CHECK_THROWS_AS((void)simulate(m, constant_law(vec({0})), zero_bank(other, 1), 0), std::invalid_argument);
}

TEST_CASE("reference paths") {
    const double dt = 0.01;
    const std::size_t steps = 201;
    const auto line = generate_reference_path(ReferenceKind::Line, steps, dt, 3.0);
    for (std::size_t t = 0; t < steps; ++t) {
        CHECK(line[t](0) == doctest::Approx(3.0 * static_cast<double>(t) / 200.0));
        CHECK(line[t](1) == 0.0);
    }
    const auto circle = generate_reference_path(ReferenceKind::Circle, steps, dt, 2.0, 1.5);
    const Vec center = vec({-1.0, 0.0});
    for (const Vec& p : circle) CHECK((p - center).norm() == doctest::Approx(1.0).epsilon(1e-12));

    const double period = 2.0;
    const auto liss = generate_reference_path(ReferenceKind::Lissajous, steps, dt, 1.0, period);
    const double bound = 2.0 * std::numbers::pi / period;  // |dp/dt| <= w * scale
    for (std::size_t t = 0; t + 1 < steps; ++t) CHECK((liss[t + 1] - liss[t]).norm() / dt <= bound * (1.0 + 1e-9));
    for (const auto kind : {ReferenceKind::Line, ReferenceKind::Circle, ReferenceKind::Lissajous}) {
        CHECK(generate_reference_path(kind, steps, dt).front().norm() < 1e-15);
    }
}

TEST_CASE("reference kind names") {
    for (const auto kind : {ReferenceKind::Line, ReferenceKind::Circle, ReferenceKind::Lissajous}) {
        CHECK(parse_reference_kind(to_string(kind)) == kind);
    }
    CHECK_THROWS_WITH_AS((void)parse_reference_kind("spiral"), "unknown reference path kind 'spiral'",
                         std::invalid_argument);
}

TEST_CASE("datasets: size, distinct runs and thread independence") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{.horizon = 0.1});
    const LinearPolicy pol = lqer_synthesize(prob.model, prob.cost);
    const Dataset one = generate_dataset(prob.model, deterministic_law(pol), 1, 4);
    CHECK(one.size() == 1);
    CHECK(one.bank.size() == 1);

    const Dataset a = generate_dataset(prob.model, deterministic_law(pol), 100, 4, 1);
    const Dataset b = generate_dataset(prob.model, deterministic_law(pol), 100, 4, 8);
    REQUIRE(a.size() == 100);
    std::set<std::vector<double>> seen;
    for (std::size_t r = 0; r < a.size(); ++r) {
        CHECK(a.measurements[r].z == b.measurements[r].z);
        std::vector<double> flat;
        for (const Vec& z : a.measurements[r].z) flat.insert(flat.end(), z.data(), z.data() + z.size());
        seen.insert(flat);
    }
    CHECK(seen.size() == 100);
    const auto seqs = a.sequences({3, 7});
    CHECK(seqs.size() == 2);
    CHECK(seqs[1] == a.measurements[7].z);
    CHECK_THROWS_AS((void)generate_dataset(prob.model, deterministic_law(pol), 0, 4), std::invalid_argument);
}

TEST_CASE("isotropic prior policy override") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{.horizon = 0.1});
    const ChmmModel m = with_isotropic_prior_policy(prob.model, 3.0);
    for (const auto& step : m.prior_policy.steps) CHECK(step.S == 3.0 * Mat::Identity(2, 2));
    CHECK_THROWS_AS((void)with_isotropic_prior_policy(prob.model, 0.0), std::invalid_argument);
}

}
