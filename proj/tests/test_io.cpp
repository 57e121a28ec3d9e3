#include "support.hpp"

#include "apcd/config.hpp"
#include "apcd/io.hpp"
#include "apcd/verification.hpp"

#include <fstream>

using namespace apcd;
using namespace apcd::test;

namespace {

void check_same_model(const ChmmModel& a, const ChmmModel& b) {
    CHECK(a.dims.steps == b.dims.steps);
    CHECK(a.dims.dt == b.dims.dt);
    CHECK(a.prior.mu0 == b.prior.mu0);
    CHECK(a.prior.sigma0 == b.prior.sigma0);
    for (std::size_t t = 0; t < a.transitions.size(); ++t) {
        CHECK(a.transitions[t].Fx == b.transitions[t].Fx);
        CHECK(a.transitions[t].Qcov == b.transitions[t].Qcov);
    }
    for (std::size_t t = 0; t < a.emissions.size(); ++t) {
        CHECK(a.emissions[t].Gu == b.emissions[t].Gu);
        CHECK(a.emissions[t].Rcov == b.emissions[t].Rcov);
        CHECK(a.prior_policy[t].K == b.prior_policy[t].K);
        CHECK(a.prior_policy[t].S == b.prior_policy[t].S);
    }
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string format_error(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const FormatError& e) {
        return e.what();
    }
    return "<no error>";
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("matrices are row-major arrays") {
    const Mat m = mat({{1, 2, 3}, {4, 5, 6}});
    const Json j = matrix_to_json(m);
    CHECK(j == Json::parse("[1,2,3,4,5,6]"));
    CHECK(matrix_from_json(j, 2, 3, "m") == m);
    CHECK(format_error([&] { (void)matrix_from_json(j, 3, 3, "a.b"); }) == "a.b: expected 9 entries (3x3), got 6");
    CHECK(format_error([&] { (void)matrix_from_json(Json::parse("[1,\"x\"]"), 1, 2, "m"); }) == "m[1]: not a number");
    CHECK(format_error([&] { (void)vector_from_json(Json::parse("{}"), 1, "v"); }) == "v: expected a row-major number array");
}

TEST_CASE("random models round-trip exactly") {
    std::mt19937_64 rng(61);
    for (int i = 0; i < 5; ++i) {
        const ChmmModel m = random_model(rng);
        const Json j = model_to_json(m);
        CHECK(j["schema"] == kModelSchema);
        CHECK_FALSE(j["transitions"]["broadcast"].get<bool>());
        check_same_model(model_from_json(Json::parse(j.dump())), m);
    }
}

TEST_CASE("time-invariant steps are stored once") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{.horizon = 0.1});
    const Json j = model_to_json(prob.model);
    CHECK(j["transitions"]["broadcast"].get<bool>());
    CHECK(j["transitions"]["steps"].size() == 1);
    CHECK(j["emissions"]["steps"].size() == 1);
    check_same_model(model_from_json(j), prob.model);
}

TEST_CASE("model parsing diagnostics") {
    ChmmModel varying = scalar_model({.steps = 3});
    varying.transitions[1].f(0) = 0.5;
    varying.emissions[2].g(0) = -0.5;
    const Json good = model_to_json(varying);
    REQUIRE_FALSE(good["emissions"]["broadcast"].get<bool>());
    Json j = good;
    j["schema"] = "other";
    CHECK(format_error([&] { (void)model_from_json(j); }) == "schema: expected chmm-model/v1");
    j = good;
    j["emissions"]["steps"][1]["Rcov"] = Json::parse("[1, 2]");
    CHECK(format_error([&] { (void)model_from_json(j); }) == "emissions.steps[1].Rcov: expected 1 entries (1x1), got 2");
    j = good;
    j["transitions"]["steps"].erase(0);
    CHECK(format_error([&] { (void)model_from_json(j); }) == "transitions.steps: expected 2 steps, got 1");
    j = good;
    j["prior"].erase("sigma0");
    CHECK(format_error([&] { (void)model_from_json(j); }) == "prior: missing field 'sigma0'");
    j = good;
    j["transitions"]["steps"][0]["Qcov"] = Json::parse("[-1]");
    j["transitions"]["steps"][1]["Qcov"] = Json::parse("[1]");
    CHECK(format_error([&] { (void)model_from_json(j); }) == "model fails validation: [Qcov not PSD, t=0]");
    j = good;
    j["dims"]["steps"] = 1;
    CHECK(format_error([&] { (void)model_from_json(j); }) == "dims: invalid dimensions");
    j = model_to_json(scalar_model({.steps = 3}));
    j["emissions"]["steps"].push_back(j["emissions"]["steps"][0]);
    CHECK(format_error([&] { (void)model_from_json(j); }) == "emissions.steps: broadcast requires exactly one step");
}

TEST_CASE("linear and mixture policies round-trip") {
    std::mt19937_64 rng(62);
    const ChmmModel m = random_model(rng);
    const Measurements z1 = sample_measurements(m, rng);
    const Measurements z2 = sample_measurements(m, rng);

    const StoredPolicy linear{"natural", {extract_natural(m, {z1, z2})}, {}};
    const StoredPolicy back = policy_from_json(Json::parse(policy_to_json(linear).dump()));
    CHECK(back.method == "natural");
    CHECK_FALSE(back.is_mixture());
    REQUIRE(back.components.size() == 1);
    for (std::size_t t = 0; t < m.dims.steps; ++t) {
        CHECK(back.components[0][t].K == linear.components[0][t].K);
        CHECK(back.components[0][t].k == linear.components[0][t].k);
        CHECK(back.components[0][t].S == linear.components[0][t].S);
    }

    const MixturePolicy mix = extract_vanilla(m, {z1, z2});
    const StoredPolicy stored{"vanilla", mix.components(), mix.weight_marginals()};
    const Json j = policy_to_json(stored);
    CHECK(j["kind"] == "mixture");
    const StoredPolicy mback = policy_from_json(j);
    REQUIRE(mback.is_mixture());
    const MixturePolicy rebuilt(mback.components, mback.weight_marginals);
    const Vec x = random_vector(static_cast<Eigen::Index>(m.dims.n_x), rng);
    CHECK(mixture_mean_control(rebuilt, 1, x) == mixture_mean_control(mix, 1, x));

    Json bad = j;
    bad["components"][1]["weight_marginals"].erase(0);
    CHECK(format_error([&] { (void)policy_from_json(bad); }) == "components[1].weight_marginals: length mismatch");
    CHECK_THROWS_AS((void)policy_to_json(StoredPolicy{}), std::invalid_argument);
}

TEST_CASE("cost round-trip") {
    const TrackingProblem prob = build_tracking_model(BenchmarkSpec{.horizon = 0.1});
    const LqerCost c = cost_from_json(Json::parse(cost_to_json(prob.cost).dump()));
    CHECK(c.Rp == prob.cost.Rp);
    CHECK(c.Ru == prob.cost.Ru);
    CHECK(c.lambda == prob.cost.lambda);
    CHECK(c.reference == prob.cost.reference);
}

TEST_CASE("dataset directory round-trip") {
    TempDir dir("dataset");
    BenchmarkSpec spec;
    spec.horizon = 0.02;
    const TrackingProblem prob = build_tracking_model(spec);
    const LinearPolicy demo = lqer_synthesize(prob.model, prob.cost);
    const Dataset ds = generate_dataset(prob.model, deterministic_law(demo), 3, 17);
    write_dataset(dir.path(), prob.model, prob.cost, demo, ds);

    for (const char* name : {"model.json", "cost.json", "demo-policy.json", "bank-seed.txt", "run_0_states.csv",
                             "run_2_measurements.csv"}) {
        CHECK(std::filesystem::exists(dir.path() / name));
    }
    CHECK(read_text(dir.path() / "run_0_measurements.csv").rfind("t,z1,z2\n0,", 0) == 0);
    CHECK(read_text(dir.path() / "run_0_states.csv").rfind("t,x1,x2,x3,x4\n", 0) == 0);

    const DatasetFiles files = read_dataset(dir.path());
    CHECK(files.bank_seed == 17);
    REQUIRE(files.measurements.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(files.measurements[r].z == ds.measurements[r].z);
        CHECK(files.trajectories[r].states == ds.trajectories[r].states);
    }
    check_same_model(files.model, prob.model);
    CHECK(files.demo_policy[0].K == demo[0].K);

    CHECK_THROWS_AS((void)read_dataset(dir.path() / "missing"), FormatError);
}

TEST_CASE("config overlays the defaults and rejects unknown fields") {
    const Json j = parse_config_text(R"({
        "benchmark": {"horizon": 0.25, "reference": "circle", "input_noise_scales": [1, 2]},
        "sweep": {"n_grid": [1, 3], "runs": 12, "pool": 6, "seed": 9}
    })",
                                     "cfg.json");
    const SweepConfig c = sweep_config_from_json(j, SweepConfig::desk_scale());
    CHECK(c.bench.horizon == 0.25);
    CHECK(c.bench.reference == ReferenceKind::Circle);
    CHECK(c.bench.input_noise_scales == vec({1, 2}));
    CHECK(c.bench.dt == 2e-3);
    CHECK(c.n_grid == std::vector<std::size_t>{1, 3});
    CHECK(c.runs == 12);
    CHECK(c.pool == 6);
    CHECK(c.seed == 9);
    CHECK(c.f_bar == 0.01);

    const SweepConfig again = sweep_config_from_json(sweep_config_to_json(c), SweepConfig::full_scale());
    CHECK(sweep_config_to_json(again) == sweep_config_to_json(c));

    auto err = [](const std::string& text) {
        return format_error([&] { (void)sweep_config_from_json(parse_config_text(text, "c.json"), SweepConfig{}); });
    };
    CHECK(err(R"({"sweep": {"bogus": 1}})") == "sweep: unknown field 'bogus'");
    CHECK(err(R"({"model": {}})") == "config: unknown field 'model'");
    CHECK(err(R"({"sweep": {"runs": -3}})") == "sweep.runs: expected a non-negative integer");
    CHECK(err(R"({"sweep": {"n_grid": [1, "2"]}})") == "sweep.n_grid: expected an array of non-negative integers");
    CHECK(err(R"({"benchmark": {"lambda": "big"}})") == "benchmark.lambda: expected a number");
    CHECK(err(R"({"benchmark": {"reference": "spiral"}})") == "benchmark.reference: unknown reference path kind 'spiral'");
    CHECK(err(R"({"benchmark": {"input_noise_scales": [1]}})") ==
          "benchmark.input_noise_scales: expected 2 entries (2x1), got 1");
}

TEST_CASE("config syntax errors carry line and column") {
    const std::string msg = format_error([] { (void)parse_config_text("{\n  \"sweep\": {\n    \"runs\": 4,,\n", "run.json"); });
    CHECK(msg.rfind("run.json:3:15: invalid JSON", 0) == 0);
    CHECK(format_error([] { (void)read_config_file("/nonexistent/cfg.json"); }) == "cannot open config /nonexistent/cfg.json");
}

TEST_CASE("digests") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    // Key order in the source text does not matter.
    CHECK(config_digest(Json::parse(R"({"a": 1, "b": [2, 3]})")) == config_digest(Json::parse(R"({"b": [2, 3], "a": 1})")));
    CHECK(config_digest(Json::parse(R"({"a": 1})")) != config_digest(Json::parse(R"({"a": 2})")));
}

}
