#include "apcd/config.hpp"
#include "apcd/harness.hpp"
#include "apcd/io.hpp"
#include "apcd/parallel.hpp"
#include "apcd/verification.hpp"

#include "CLI11.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace apcd;

namespace {

constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string utc_now() { return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::now())); }

struct Manifest {
    Manifest(std::string cmd, Json cfg, std::uint64_t s) : command(std::move(cmd)), config(std::move(cfg)), seed(s) {}

    std::string command;
    Json config;
    std::uint64_t seed = 0;
    std::string started_at = utc_now();
    std::vector<std::string> outputs;

    void write(const fs::path& path) const {
        write_json_file(path, Json{{"tool", "apcd"},
                                   {"version", kVersion},
                                   {"command", command},
                                   {"config", config},
                                   {"config_digest", config_digest(config)},
                                   {"seed", seed},
                                   {"started_at", started_at},
                                   {"finished_at", utc_now()},
                                   {"outputs", outputs}});
    }
};

// Options shared by the commands that build the benchmark from a config.
struct ScaleOptions {
    std::string config_path;
    bool full_scale = false;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> runs;
    std::optional<std::size_t> pool;
    std::optional<std::uint64_t> seed;
    std::optional<double> sigma_sq;
    std::vector<std::size_t> n_grid;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        cmd->add_flag("--full-scale", full_scale, "full scale (1001 steps, M = 100, pool = 50)");
        cmd->add_option("--steps", steps, "time steps T + 1 (sets the horizon)")->check(CLI::Range(2, 100000));
        cmd->add_option("--runs", runs, "number of experiments M")->check(CLI::PositiveNumber);
        cmd->add_option("--pool", pool, "sequences eligible for extraction")->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "dataset and subset seed");
    }

    // `with_grid` = false skips the N-grid checks for commands that never sweep.
    SweepConfig resolve(SweepConfig base, bool with_grid = true) const {
        SweepConfig c = config_path.empty() ? base : sweep_config_from_json(read_config_file(config_path), base);
        if (steps) c.bench.horizon = c.bench.dt * static_cast<double>(*steps - 1);
        if (runs) {
            c.runs = *runs;
            if (!pool && c.pool > c.runs) c.pool = std::max<std::size_t>(1, c.runs / 2);
        }
        if (pool) c.pool = *pool;
        if (seed) c.seed = *seed;
        if (sigma_sq) c.sigma_sq = {*sigma_sq};
        if (!n_grid.empty()) c.n_grid = n_grid;
        try {
            SweepConfig check = c;
            if (!with_grid) check.n_grid = {1};
            check.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

void configure_logging(const std::string& level) {
    auto logger = spdlog::stderr_logger_mt("apcd");
    logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(level));
}

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

std::vector<std::size_t> pick_subset(std::size_t pool, std::size_t n, std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(n)};
    std::mt19937_64 rng(seq);
    return sample_subsets(pool, n, 1, rng).front();
}

// ---- gen ------------------------------------------------------------------

struct GenArgs {
    ScaleOptions scale;
    std::string out;
    std::size_t jobs = default_jobs();
};

int cmd_gen(const GenArgs& a) {
    SweepConfig base = SweepConfig::full_scale();
    const SweepConfig c = a.scale.resolve(base, false);
    Manifest manifest{"gen", sweep_config_to_json(c), c.seed};

    const auto t0 = std::chrono::steady_clock::now();
    const TrackingProblem problem = build_tracking_model(c.bench);
    const LinearPolicy demo = lqer_synthesize(problem.model, problem.cost);
    const Dataset dataset = generate_dataset(problem.model, deterministic_law(demo), c.runs, c.seed, a.jobs);
    spdlog::info("stage=gen steps={} runs={} elapsed_ms={:.1f}", problem.model.dims.steps, c.runs, ms_since(t0));

    const fs::path dir(a.out);
    write_dataset(dir, problem.model, problem.cost, demo, dataset);
    manifest.outputs = {(dir / "model.json").string(), (dir / "cost.json").string(), (dir / "demo-policy.json").string(),
                        fmt::format("{}/run_<i>_{{states,measurements}}.csv", dir.string())};
    manifest.write(dir / "manifest.json");
    spdlog::info("stage=write dir={} runs={}", dir.string(), dataset.size());
    return kOk;
}

// ---- extract --------------------------------------------------------------

struct ExtractArgs {
    std::string dataset;
    std::string method;
    std::size_t n = 0;
    double sigma_sq = 1e4;
    std::uint64_t seed = 1;
    std::optional<std::size_t> pool;
    std::string out;
    std::size_t jobs = default_jobs();
};

int cmd_extract(const ExtractArgs& a) {
    Method method{};
    try {
        method = parse_method(a.method);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (!(a.sigma_sq > 0.0)) throw UsageError("--sigma-sq must be positive");

    const DatasetFiles data = read_dataset(a.dataset);
    const std::size_t runs = data.measurements.size();
    const std::size_t pool = a.pool.value_or(std::max<std::size_t>(1, runs / 2));
    if (pool > runs) throw UsageError(fmt::format("--pool {} exceeds the {} runs in the dataset", pool, runs));
    if (a.n < 1 || a.n > pool) throw UsageError(fmt::format("--n must lie in [1, pool = {}]", pool));

    const std::vector<std::size_t> subset = pick_subset(pool, a.n, a.seed);
    std::vector<Measurements> sequences;
    for (std::size_t i : subset) sequences.push_back(data.measurements[i].z);
    const ChmmModel model = with_isotropic_prior_policy(data.model, a.sigma_sq);

    const auto t0 = std::chrono::steady_clock::now();
    StoredPolicy stored;
    stored.method = to_string(method);
    if (method == Method::Vanilla) {
        const MixturePolicy mix = extract_vanilla(model, sequences, a.jobs);
        stored.components = mix.components();
        stored.weight_marginals = mix.weight_marginals();
    } else {
        stored.components = {extract_natural(model, sequences)};
    }
    spdlog::info("stage=extract method={} N={} sigma_sq={} elapsed_ms={:.1f}", stored.method, a.n, a.sigma_sq, ms_since(t0));

    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_json_file(out, policy_to_json(stored));

    Json config{{"dataset", a.dataset}, {"method", stored.method}, {"n", a.n},     {"sigma_sq", a.sigma_sq},
                {"pool", pool},         {"subset", subset},        {"seed", a.seed}};
    Manifest manifest{"extract", config, a.seed};
    manifest.outputs = {out.string()};
    manifest.write(fs::path(out.string() + ".manifest.json"));
    return kOk;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
    std::string dataset;
    std::vector<std::string> policies;
    std::optional<std::size_t> runs;
    std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const DatasetFiles data = read_dataset(a.dataset);
    const std::size_t runs = a.runs.value_or(data.measurements.size());
    if (runs < 1 || runs > data.measurements.size()) {
        throw UsageError(fmt::format("--runs must lie in [1, {}]", data.measurements.size()));
    }
    const NoiseBank bank = make_noise_bank(data.bank_seed, data.model.dims, runs);

    struct Entry {
        std::string name;
        StoredPolicy policy;
    };
    std::vector<Entry> entries{{"demo", StoredPolicy{"lqer", {data.demo_policy}, {}}}};
    for (const auto& p : a.policies) entries.push_back({fs::path(p).filename().string(), policy_from_json(read_json_file(p))});

    std::ostringstream csv;
    csv << "policy,method,objective,quad_cost,mean_position_error,diverged\n";
    for (const auto& e : entries) {
        for (const auto& c : e.policy.components) {
            if (c.size() != data.model.dims.steps) throw FormatError(e.name + ": policy horizon does not match dataset");
        }
        std::optional<MixturePolicy> mix;
        ControlLaw law;
        if (e.policy.is_mixture()) {
            mix.emplace(e.policy.components, e.policy.weight_marginals);
            law = mixture_law(*mix);
        } else {
            law = deterministic_law(e.policy.components.front());
        }
        const ObjectiveEstimate est = evaluate_objective(data.model, data.cost, law, bank, runs);
        csv << e.name << ',' << e.policy.method << ',' << format_double(est.objective) << ','
            << format_double(est.quad_cost) << ',' << format_double(est.mean_position_error) << ','
            << (est.diverged ? 1 : 0) << '\n';
    }
    if (a.out.empty()) {
        std::cout << csv.str();
    } else {
        open_out(a.out) << csv.str();
    }
    return kOk;
}

// ---- sweep / plot-data ----------------------------------------------------

void write_plot_files(const fs::path& dir, const std::vector<SummaryRow>& summary, std::vector<std::string>& outputs) {
    std::vector<double> sigmas;
    for (const auto& r : summary) {
        if (std::find(sigmas.begin(), sigmas.end(), r.sigma_sq) == sigmas.end()) sigmas.push_back(r.sigma_sq);
    }
    for (double s : sigmas) {
        for (const char* method : {"vanilla", "natural"}) {
            const fs::path path = dir / fmt::format("plot_{}_sigma_{}.csv", method, format_double(s));
            open_out(path) << plot_series_csv(summary, s, method);
            outputs.push_back(path.string());
        }
    }
}

void write_summary_outputs(const fs::path& dir, const std::vector<SweepRow>& rows, std::vector<std::string>& outputs) {
    const auto summary = summarize(rows);
    {
        auto out = open_out(dir / "summary.csv");
        write_summary_csv(out, summary);
    }
    outputs.push_back((dir / "summary.csv").string());
    write_plot_files(dir, summary, outputs);
}

struct SweepArgs {
    ScaleOptions scale;
    std::string out;
    std::size_t jobs = default_jobs();
    bool timing = false;
};

int cmd_sweep(const SweepArgs& a) {
    SweepConfig c = a.scale.resolve(a.scale.full_scale ? SweepConfig::full_scale() : SweepConfig::desk_scale());
    c.jobs = a.jobs;
    c.record_runtime = a.timing;
    Manifest manifest{"sweep", sweep_config_to_json(c), c.seed};

    const fs::path dir(a.out);
    fs::create_directories(dir);
    const fs::path partial = dir / "results.partial.csv";
    std::ofstream partial_out = open_out(partial);
    write_results_csv(partial_out, {}, true);
    partial_out.flush();

    const auto t0 = std::chrono::steady_clock::now();
    std::size_t done = 0;
    const SweepResult result = run_sweep(c, [&](const std::vector<SweepRow>& rows) {
        write_results_csv(partial_out, rows, false);
        partial_out.flush();
        ++done;
        spdlog::debug("stage=cell done={} N={} perm={}", done, rows.front().n, rows.front().perm);
    });
    partial_out.close();
    spdlog::info("stage=sweep rows={} elapsed_ms={:.1f}", result.rows.size(), ms_since(t0));

    {
        auto out = open_out(dir / "results.csv");
        write_results_csv(out, result.rows);
    }
    manifest.outputs.push_back((dir / "results.csv").string());
    write_summary_outputs(dir, result.rows, manifest.outputs);
    // Completion order depends on scheduling; results.csv is the ordered copy.
    fs::remove(partial);
    manifest.write(dir / "manifest.json");
    return kOk;
}

struct PlotArgs {
    std::string results;
    std::string out;
};

int cmd_plot_data(const PlotArgs& a) {
    std::ifstream in(a.results);
    if (!in) throw FormatError("cannot open " + a.results);
    std::vector<SweepRow> rows;
    try {
        rows = read_results_csv(in);
    } catch (const std::runtime_error& e) {
        throw FormatError(e.what());
    }
    Manifest manifest{"plot-data", Json{{"results", a.results}}, 0};
    write_summary_outputs(a.out, rows, manifest.outputs);
    manifest.write(fs::path(a.out) / "manifest.json");
    return kOk;
}

// ---- oracle-check ---------------------------------------------------------

struct OracleArgs {
    std::size_t steps = 10;
    std::size_t trials = 50;
    std::uint64_t seed = OracleSuiteOptions{}.seed;
    std::string out;
};

int cmd_oracle_check(const OracleArgs& a) {
    OracleSuiteOptions o;
    o.max_steps = a.steps;
    o.trials = a.trials;
    o.seed = a.seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_oracle_suite(o);
    std::ostringstream report;
    report << "check,passed,value,threshold,detail\n";
    bool all = true;
    for (const auto& r : results) {
        all = all && r.passed;
        std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  value=" << format_double(r.value)
                  << " threshold=" << format_double(r.threshold) << "  (" << r.detail << ")\n";
        report << '"' << r.name << "\"," << (r.passed ? 1 : 0) << ',' << format_double(r.value) << ','
               << format_double(r.threshold) << ",\"" << r.detail << "\"\n";
    }
    spdlog::info("stage=oracle_check checks={} passed={} elapsed_ms={:.1f}", results.size(), all, ms_since(t0));
    if (!a.out.empty()) open_out(a.out) << report.str();
    return all ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"A-posteriori control distributions: extraction, benchmark and verification"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "simulate the LQER demonstrator and write a dataset directory");
    gen.scale.attach(gen_cmd);
    gen_cmd->add_option("--out", gen.out, "dataset directory")->required();
    gen_cmd->add_option("--jobs", gen.jobs, "worker threads")->check(CLI::PositiveNumber);

    ExtractArgs ex;
    auto* ex_cmd = app.add_subcommand("extract", "extract an APCD policy from N sequences of a dataset");
    ex_cmd->add_option("--dataset", ex.dataset, "dataset directory")->required();
    ex_cmd->add_option("--method", ex.method, "vanilla | natural")->required();
    ex_cmd->add_option("--n", ex.n, "number of measurement sequences")->required();
    ex_cmd->add_option("--sigma-sq", ex.sigma_sq, "prior policy variance")->capture_default_str();
    ex_cmd->add_option("--seed", ex.seed, "subset selection seed")->capture_default_str();
    ex_cmd->add_option("--pool", ex.pool, "sequences eligible for selection (default: half the runs)");
    ex_cmd->add_option("--out", ex.out, "policy JSON file")->required();
    ex_cmd->add_option("--jobs", ex.jobs, "worker threads")->check(CLI::PositiveNumber);

    EvaluateArgs ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "risk objective of stored policies on the dataset's noise bank");
    ev_cmd->add_option("--dataset", ev.dataset, "dataset directory")->required();
    ev_cmd->add_option("--policy", ev.policies, "policy JSON file (repeatable)");
    ev_cmd->add_option("--runs", ev.runs, "validation runs (default: all)");
    ev_cmd->add_option("--out", ev.out, "CSV output (default: stdout)");

    SweepArgs sw;
    auto* sw_cmd = app.add_subcommand("sweep", "sigma^2 x N benchmark sweep");
    sw.scale.attach(sw_cmd);
    sw_cmd->add_option("--sigma-sq", sw.scale.sigma_sq, "single prior variance instead of the grid");
    sw_cmd->add_option("--n", sw.scale.n_grid, "N grid, e.g. --n 1 2 4 8");
    sw_cmd->add_option("--out", sw.out, "output directory")->required();
    sw_cmd->add_option("--jobs", sw.jobs, "worker threads")->check(CLI::PositiveNumber);
    sw_cmd->add_flag("--timing", sw.timing, "record wall-clock runtime_ms (outputs no longer byte-stable)");

    OracleArgs oc;
    auto* oc_cmd = app.add_subcommand("oracle-check", "verify the recursions against the dense joint-Gaussian oracle");
    oc_cmd->add_option("--steps", oc.steps, "maximum horizon of the random models")->capture_default_str()->check(CLI::Range(2, 10));
    oc_cmd->add_option("--trials", oc.trials, "random models per check")->capture_default_str()->check(CLI::PositiveNumber);
    oc_cmd->add_option("--seed", oc.seed, "random model seed")->capture_default_str();
    oc_cmd->add_option("--out", oc.out, "CSV report");

    PlotArgs pl;
    auto* pl_cmd = app.add_subcommand("plot-data", "summary and objective-vs-N series from a results.csv");
    pl_cmd->add_option("--results", pl.results, "results.csv from a sweep")->required()->check(CLI::ExistingFile);
    pl_cmd->add_option("--out", pl.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    configure_logging(log_level);
    try {
        if (*gen_cmd) return cmd_gen(gen);
        if (*ex_cmd) return cmd_extract(ex);
        if (*ev_cmd) return cmd_evaluate(ev);
        if (*sw_cmd) return cmd_sweep(sw);
        if (*oc_cmd) return cmd_oracle_check(oc);
        if (*pl_cmd) return cmd_plot_data(pl);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
