#include "apcd/harness.hpp"

#include "apcd/parallel.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace apcd {

namespace {

using u128 = unsigned __int128;

std::optional<u128> exact_binomial(std::size_t n, std::size_t k) {
    if (k > n) return u128{0};
    k = std::min(k, n - k);
    u128 r = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        const u128 factor = n - k + i;
        if (r > std::numeric_limits<u128>::max() / factor) return std::nullopt;
        r = r * factor / i;
    }
    return r;
}

double log_binomial(std::size_t n, std::size_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

// log(C - p) for a binomial count C, exact while C fits in 62 bits.
struct Count {
    std::optional<u128> exact;
    double log_value = 0.0;

    Count(std::size_t n, std::size_t k) : exact(exact_binomial(n, k)), log_value(log_binomial(n, k)) {
        constexpr u128 limit = u128{1} << 62;
        if (exact && *exact >= limit) exact.reset();
    }

    [[nodiscard]] bool exceeds(std::size_t p) const { return !exact || *exact > p; }

    [[nodiscard]] double log_minus(std::size_t p) const {
        if (exact) return std::log(static_cast<double>(static_cast<std::uint64_t>(*exact - p)));
        return log_value + std::log1p(-static_cast<double>(p) * std::exp(-log_value));
    }
};

double quantile(std::vector<double> sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    if (lo == hi || sorted[lo] == sorted[hi]) return sorted[lo];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::size_t required_permutations(std::size_t pool, std::size_t n, double f_bar) {
    if (n < 1 || n > pool) throw std::invalid_argument("required_permutations needs 1 <= N <= pool");
    if (!(f_bar > 0.0)) throw std::invalid_argument("exclusion bound must be positive");
    if (f_bar >= 1.0 || n == pool) return 1;

    const Count without(pool - 1, n);
    const Count with(pool, n);
    const double log_bound = std::log(f_bar);
    double log_f = 0.0;
    for (std::size_t p = 1;; ++p) {
        if (!without.exceeds(p)) return p;  // q(p) = 0
        log_f += without.log_minus(p) - with.log_minus(p);
        if (log_f <= log_bound) return p;
    }
}

std::vector<std::vector<std::size_t>> sample_subsets(std::size_t pool, std::size_t n, std::size_t count,
                                                     std::mt19937_64& rng) {
    if (n < 1 || n > pool) throw std::invalid_argument("subset size must satisfy 1 <= N <= pool");
    if (const auto total = exact_binomial(pool, n); total && *total < count) {
        throw std::invalid_argument("more distinct subsets requested than exist");
    }
    std::vector<std::size_t> indices(pool);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::set<std::vector<std::size_t>> seen;
    std::vector<std::vector<std::size_t>> out;
    out.reserve(count);
    while (out.size() < count) {
        // partial Fisher-Yates
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
            std::swap(indices[i], indices[pick(rng)]);
        }
        std::vector<std::size_t> subset(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n));
        std::sort(subset.begin(), subset.end());
        if (seen.insert(subset).second) out.push_back(std::move(subset));
    }
    return out;
}

ObjectiveEstimate evaluate_objective(const ChmmModel& model, const LqerCost& cost, const ControlLaw& law,
                                     const NoiseBank& bank, std::size_t runs) {
    if (runs > bank.size()) throw std::out_of_range("noise bank does not cover the requested runs");
    if (runs == 0) throw std::invalid_argument("evaluate_objective needs at least one run");
    const std::size_t steps = model.dims.steps;
    ObjectiveEstimate out;
    out.run_costs.reserve(runs);
    double error_sum = 0.0;
    for (std::size_t r = 0; r < runs; ++r) {
        double J = 0.0;
        double err = 0.0;
        try {
            const SimulationResult sim = simulate(model, law, bank, r);
            const auto& xs = sim.trajectory.states;
            const auto& us = sim.trajectory.controls;
            for (std::size_t t = 0; t < steps; ++t) {
                J += cost.stage_cost(t, xs[t], us[t]);
                err += (xs[t].head(static_cast<Eigen::Index>(cost.position_dim())) - cost.reference[t]).norm();
            }
        } catch (const DivergenceError&) {
            J = std::numeric_limits<double>::infinity();
            err = std::numeric_limits<double>::infinity();
        }
        if (!std::isfinite(J)) out.diverged = true;
        out.run_costs.push_back(J);
        error_sum += err / static_cast<double>(steps);
    }
    const double M = static_cast<double>(runs);
    out.quad_cost = std::accumulate(out.run_costs.begin(), out.run_costs.end(), 0.0) / M;
    out.mean_position_error = error_sum / M;
    if (out.diverged) {
        out.objective = std::numeric_limits<double>::infinity();
        return out;
    }
    const double lambda = cost.lambda;
    const double top = lambda * *std::max_element(out.run_costs.begin(), out.run_costs.end());
    double acc = 0.0;
    for (double J : out.run_costs) acc += std::exp(lambda * J - top);
    out.objective = (top + std::log(acc / M)) / lambda;
    return out;
}

SweepConfig SweepConfig::desk_scale() {
    SweepConfig c;
    c.bench.horizon = 0.5;
    c.runs = 40;
    c.pool = 20;
    c.sigma_sq = {1e4};
    c.n_grid = {1, 2, 4, 8};
    return c;
}

SweepConfig SweepConfig::full_scale() {
    SweepConfig c;
    c.bench.horizon = 2.0;
    c.runs = 100;
    c.pool = 50;
    c.sigma_sq = {1e2, 1e3, 1e4, 1e5, 1e6};
    c.n_grid = {1, 2, 3, 5, 10, 20};
    return c;
}

void SweepConfig::validate() const {
    if (sigma_sq.empty() || n_grid.empty()) throw std::invalid_argument("sweep grids must not be empty");
    for (double s : sigma_sq) {
        if (!(s > 0.0)) throw std::invalid_argument("sigma_sq values must be positive");
    }
    if (pool > runs) throw std::invalid_argument("pool must not exceed the number of runs M");
    for (std::size_t n : n_grid) {
        if (n < 1 || n > pool) throw std::invalid_argument(fmt::format("N = {} outside [1, pool = {}]", n, pool));
    }
    if (!(f_bar > 0.0 && f_bar < 1.0)) throw std::invalid_argument("f_bar must lie in (0, 1)");
}

SweepResult run_sweep(const SweepConfig& config, const RowSink& sink) {
    using Clock = std::chrono::steady_clock;
    config.validate();

    const auto t_setup = Clock::now();
    const TrackingProblem problem = build_tracking_model(config.bench);
    const LinearPolicy demo = lqer_synthesize(problem.model, problem.cost);
    const ControlLaw demo_law = deterministic_law(demo);
    const Dataset dataset = generate_dataset(problem.model, demo_law, config.runs, config.seed, config.jobs);
    const ObjectiveEstimate baseline = evaluate_objective(problem.model, problem.cost, demo_law, dataset.bank, config.runs);
    spdlog::info("stage=setup steps={} runs={} lqer_objective={} elapsed_ms={}", problem.model.dims.steps, config.runs,
                 baseline.objective, std::chrono::duration<double, std::milli>(Clock::now() - t_setup).count());

    std::vector<ChmmModel> models;
    models.reserve(config.sigma_sq.size());
    for (double s : config.sigma_sq) models.push_back(with_isotropic_prior_policy(problem.model, s));

    struct Cell {
        std::size_t sigma_index;
        std::size_t n;
        std::size_t perm;
        std::vector<std::size_t> subset;
    };
    std::vector<Cell> cells;
    for (std::size_t si = 0; si < config.sigma_sq.size(); ++si) {
        for (std::size_t n : config.n_grid) {
            const std::size_t P = required_permutations(config.pool, n, config.f_bar);
            std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                              static_cast<std::uint32_t>(si), static_cast<std::uint32_t>(n)};
            std::mt19937_64 rng(seq);
            auto subsets = sample_subsets(config.pool, n, P, rng);
            for (std::size_t p = 0; p < subsets.size(); ++p) cells.push_back({si, n, p, std::move(subsets[p])});
        }
    }
    spdlog::info("stage=plan cells={}", cells.size());

    std::vector<std::vector<SweepRow>> cell_rows(cells.size());
    std::mutex sink_mutex;
    parallel_for(cells.size(), config.jobs, [&](std::size_t c) {
        const Cell& cell = cells[c];
        const ChmmModel& model = models[cell.sigma_index];
        const double sigma_sq = config.sigma_sq[cell.sigma_index];
        const auto sequences = dataset.sequences(cell.subset);
        auto row = [&](const char* method, const ObjectiveEstimate& est, double ms) {
            return SweepRow{sigma_sq, cell.n, cell.perm, method, est.objective, est.quad_cost,
                            config.record_runtime ? ms : 0.0, est.diverged};
        };
        auto failed = [&](const char* method, const NumericalError& e) {
            spdlog::warn("event=extraction_failed method={} sigma_sq={} N={} perm={} what=\"{}\"", method, sigma_sq,
                         cell.n, cell.perm, e.what());
            ObjectiveEstimate est;
            est.objective = est.quad_cost = std::numeric_limits<double>::infinity();
            est.diverged = true;
            return est;
        };

        std::vector<SweepRow> rows;
        {
            const auto t0 = Clock::now();
            ObjectiveEstimate est;
            try {
                const MixturePolicy mix = extract_vanilla(model, sequences, 1);
                est = evaluate_objective(model, problem.cost, mixture_law(mix), dataset.bank, config.runs);
            } catch (const NumericalError& e) {
                est = failed("vanilla", e);
            }
            rows.push_back(row("vanilla", est, std::chrono::duration<double, std::milli>(Clock::now() - t0).count()));
        }
        {
            const auto t0 = Clock::now();
            ObjectiveEstimate est;
            try {
                const LinearPolicy nat = extract_natural(model, sequences);
                est = evaluate_objective(model, problem.cost, deterministic_law(nat), dataset.bank, config.runs);
            } catch (const NumericalError& e) {
                est = failed("natural", e);
            }
            rows.push_back(row("natural", est, std::chrono::duration<double, std::milli>(Clock::now() - t0).count()));
        }
        rows.push_back(row("lqer", baseline, 0.0));

        if (sink) {
            std::lock_guard lock(sink_mutex);
            sink(rows);
        }
        cell_rows[c] = std::move(rows);
    });

    SweepResult result;
    for (auto& rows : cell_rows) {
        for (auto& r : rows) result.rows.push_back(std::move(r));
    }
    return result;
}

std::string format_double(double v) { return fmt::format("{}", v); }

void write_results_csv(std::ostream& out, const std::vector<SweepRow>& rows, bool with_header) {
    if (with_header) out << "sigma_sq,N,perm,method,objective,quad_cost,runtime_ms,diverged\n";
    for (const auto& r : rows) {
        out << format_double(r.sigma_sq) << ',' << r.n << ',' << r.perm << ',' << r.method << ','
            << format_double(r.objective) << ',' << format_double(r.quad_cost) << ',' << format_double(r.runtime_ms)
            << ',' << (r.diverged ? 1 : 0) << '\n';
    }
}

std::vector<SweepRow> read_results_csv(std::istream& in) {
    std::vector<SweepRow> rows;
    std::string line;
    std::size_t line_no = 0;
    auto parse_double = [&](const std::string& cell) {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0') {
            throw std::runtime_error(fmt::format("results.csv:{}: bad number '{}'", line_no, cell));
        }
        return v;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("sigma_sq,", 0) == 0) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() != 8) throw std::runtime_error(fmt::format("results.csv:{}: expected 8 columns", line_no));
        SweepRow r;
        r.sigma_sq = parse_double(cells[0]);
        r.n = std::stoul(cells[1]);
        r.perm = std::stoul(cells[2]);
        r.method = cells[3];
        r.objective = parse_double(cells[4]);
        r.quad_cost = parse_double(cells[5]);
        r.runtime_ms = parse_double(cells[6]);
        r.diverged = cells[7] == "1";
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows) {
    std::vector<SummaryRow> out;
    std::map<std::tuple<double, std::size_t, std::string>, std::size_t> index;
    std::vector<std::vector<double>> values;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.sigma_sq, r.n, r.method);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, out.size()).first;
            out.push_back(SummaryRow{r.sigma_sq, r.n, r.method, 0, 0.0, 0.0, 0.0, 0});
            values.emplace_back();
        }
        SummaryRow& s = out[it->second];
        ++s.count;
        if (r.diverged) ++s.diverged;
        values[it->second].push_back(r.objective);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::sort(values[i].begin(), values[i].end());
        out[i].median = quantile(values[i], 0.5);
        out[i].q25 = quantile(values[i], 0.25);
        out[i].q75 = quantile(values[i], 0.75);
    }
    return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << "sigma_sq,N,method,count,median,q25,q75,iqr,diverged\n";
    for (const auto& s : rows) {
        out << format_double(s.sigma_sq) << ',' << s.n << ',' << s.method << ',' << s.count << ','
            << format_double(s.median) << ',' << format_double(s.q25) << ',' << format_double(s.q75) << ','
            << format_double(s.q75 - s.q25) << ',' << s.diverged << '\n';
    }
}

std::string plot_series_csv(const std::vector<SummaryRow>& summary, double sigma_sq, const std::string& method) {
    std::ostringstream os;
    os << "N,median,q25,q75,lqer\n";
    for (const auto& s : summary) {
        if (s.sigma_sq != sigma_sq || s.method != method) continue;
        double lqer = std::numeric_limits<double>::quiet_NaN();
        for (const auto& b : summary) {
            if (b.sigma_sq == sigma_sq && b.n == s.n && b.method == "lqer") lqer = b.median;
        }
        os << s.n << ',' << format_double(s.median) << ',' << format_double(s.q25) << ',' << format_double(s.q75) << ','
           << format_double(lqer) << '\n';
    }
    return os.str();
}

}  // namespace apcd
