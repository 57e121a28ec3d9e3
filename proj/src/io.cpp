#include "apcd/io.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace apcd {

namespace fs = std::filesystem;

Json matrix_to_json(const Mat& m) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    }
    return out;
}

Mat matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& path) {
    if (!j.is_array()) throw FormatError(path + ": expected a row-major number array");
    if (static_cast<Eigen::Index>(j.size()) != rows * cols) {
        throw FormatError(fmt::format("{}: expected {} entries ({}x{}), got {}", path, rows * cols, rows, cols, j.size()));
    }
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            const Json& e = j[static_cast<std::size_t>(i * cols + c)];
            if (!e.is_number()) throw FormatError(fmt::format("{}[{}]: not a number", path, i * cols + c));
            m(i, c) = e.get<double>();
        }
    }
    return m;
}

Json vector_to_json(const Vec& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Vec vector_from_json(const Json& j, Eigen::Index size, const std::string& path) {
    return matrix_from_json(j, size, 1, path);
}

namespace {

const Json& field(const Json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(path + ": missing field '" + key + "'");
    return j.at(key);
}

template <typename T>
T number(const Json& j, const char* key, const std::string& path) {
    const Json& v = field(j, key, path);
    if (!v.is_number()) throw FormatError(path + "." + key + ": not a number");
    return v.get<T>();
}

template <typename Step, typename ToJson>
Json steps_to_json(const std::vector<Step>& steps, ToJson&& to_json, bool all_equal) {
    Json out;
    out["broadcast"] = all_equal && !steps.empty();
    Json list = Json::array();
    if (all_equal && !steps.empty()) {
        list.push_back(to_json(steps.front()));
    } else {
        for (const auto& s : steps) list.push_back(to_json(s));
    }
    out["steps"] = std::move(list);
    return out;
}

template <typename Step, typename FromJson>
std::vector<Step> steps_from_json(const Json& j, std::size_t expected, FromJson&& from_json, const std::string& path) {
    const bool bcast = j.is_object() && j.value("broadcast", false);
    const Json& list = field(j, "steps", path);
    if (!list.is_array()) throw FormatError(path + ".steps: expected an array");
    std::vector<Step> out;
    if (bcast) {
        if (list.size() != 1) throw FormatError(path + ".steps: broadcast requires exactly one step");
        return broadcast(from_json(list[0], path + ".steps[0]"), expected);
    }
    if (list.size() != expected) {
        throw FormatError(fmt::format("{}.steps: expected {} steps, got {}", path, expected, list.size()));
    }
    out.reserve(expected);
    for (std::size_t t = 0; t < list.size(); ++t) out.push_back(from_json(list[t], fmt::format("{}.steps[{}]", path, t)));
    return out;
}

bool same(const Mat& a, const Mat& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; }

bool same(const TransitionStep& a, const TransitionStep& b) {
    return same(a.Fx, b.Fx) && same(a.Fu, b.Fu) && same(a.f, b.f) && same(a.Qcov, b.Qcov);
}
bool same(const EmissionStep& a, const EmissionStep& b) {
    return same(a.Gx, b.Gx) && same(a.Gu, b.Gu) && same(a.g, b.g) && same(a.Rcov, b.Rcov);
}
bool same(const PolicyStep& a, const PolicyStep& b) { return same(a.K, b.K) && same(a.k, b.k) && same(a.S, b.S); }

template <typename Step>
bool all_equal(const std::vector<Step>& steps) {
    for (std::size_t i = 1; i < steps.size(); ++i) {
        if (!same(steps[i], steps.front())) return false;
    }
    return true;
}

Json policy_step_to_json(const PolicyStep& p, const char* cov_key) {
    return Json{{"K", matrix_to_json(p.K)}, {"k", vector_to_json(p.k)}, {cov_key, matrix_to_json(p.S)}};
}

PolicyStep policy_step_from_json(const Json& j, const Dims& d, const char* cov_key, const std::string& path) {
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const auto nu = static_cast<Eigen::Index>(d.n_u);
    return PolicyStep{matrix_from_json(field(j, "K", path), nu, nx, path + ".K"),
                      vector_from_json(field(j, "k", path), nu, path + ".k"),
                      matrix_from_json(field(j, cov_key, path), nu, nu, path + "." + cov_key)};
}

Dims dims_from_json(const Json& j, const std::string& path) {
    Dims d;
    d.n_x = number<std::size_t>(j, "n_x", path);
    d.n_u = number<std::size_t>(j, "n_u", path);
    d.n_z = j.contains("n_z") ? number<std::size_t>(j, "n_z", path) : 1;
    d.steps = number<std::size_t>(j, "steps", path);
    d.dt = j.contains("dt") ? number<double>(j, "dt", path) : 1.0;
    if (d.n_x < 1 || d.n_u < 1 || d.n_z < 1 || d.steps < 2) throw FormatError(path + ": invalid dimensions");
    return d;
}

}  // namespace

Json model_to_json(const ChmmModel& model) {
    const Dims& d = model.dims;
    Json j;
    j["schema"] = kModelSchema;
    j["dims"] = {{"n_x", d.n_x}, {"n_u", d.n_u}, {"n_z", d.n_z}, {"steps", d.steps}, {"dt", d.dt}};
    j["prior"] = {{"mu0", vector_to_json(model.prior.mu0)}, {"sigma0", matrix_to_json(model.prior.sigma0)}};
    j["transitions"] = steps_to_json(
        model.transitions,
        [](const TransitionStep& s) {
            return Json{{"Fx", matrix_to_json(s.Fx)}, {"Fu", matrix_to_json(s.Fu)}, {"f", vector_to_json(s.f)},
                        {"Qcov", matrix_to_json(s.Qcov)}};
        },
        all_equal(model.transitions));
    j["emissions"] = steps_to_json(
        model.emissions,
        [](const EmissionStep& s) {
            return Json{{"Gx", matrix_to_json(s.Gx)}, {"Gu", matrix_to_json(s.Gu)}, {"g", vector_to_json(s.g)},
                        {"Rcov", matrix_to_json(s.Rcov)}};
        },
        all_equal(model.emissions));
    j["prior_policy"] = steps_to_json(
        model.prior_policy.steps, [](const PolicyStep& s) { return policy_step_to_json(s, "S"); },
        all_equal(model.prior_policy.steps));
    return j;
}

ChmmModel model_from_json(const Json& j) {
    if (j.value("schema", std::string{}) != kModelSchema) throw FormatError(std::string("schema: expected ") + kModelSchema);
    ChmmModel m;
    m.dims = dims_from_json(field(j, "dims", "model"), "dims");
    const Dims& d = m.dims;
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const auto nu = static_cast<Eigen::Index>(d.n_u);
    const auto nz = static_cast<Eigen::Index>(d.n_z);

    const Json& prior = field(j, "prior", "model");
    m.prior.mu0 = vector_from_json(field(prior, "mu0", "prior"), nx, "prior.mu0");
    m.prior.sigma0 = matrix_from_json(field(prior, "sigma0", "prior"), nx, nx, "prior.sigma0");

    m.transitions = steps_from_json<TransitionStep>(
        field(j, "transitions", "model"), d.steps - 1,
        [&](const Json& s, const std::string& p) {
            return TransitionStep{matrix_from_json(field(s, "Fx", p), nx, nx, p + ".Fx"),
                                  matrix_from_json(field(s, "Fu", p), nx, nu, p + ".Fu"),
                                  vector_from_json(field(s, "f", p), nx, p + ".f"),
                                  matrix_from_json(field(s, "Qcov", p), nx, nx, p + ".Qcov")};
        },
        "transitions");
    m.emissions = steps_from_json<EmissionStep>(
        field(j, "emissions", "model"), d.steps,
        [&](const Json& s, const std::string& p) {
            return EmissionStep{matrix_from_json(field(s, "Gx", p), nz, nx, p + ".Gx"),
                                matrix_from_json(field(s, "Gu", p), nz, nu, p + ".Gu"),
                                vector_from_json(field(s, "g", p), nz, p + ".g"),
                                matrix_from_json(field(s, "Rcov", p), nz, nz, p + ".Rcov")};
        },
        "emissions");
    m.prior_policy.steps = steps_from_json<PolicyStep>(
        field(j, "prior_policy", "model"), d.steps,
        [&](const Json& s, const std::string& p) { return policy_step_from_json(s, d, "S", p); }, "prior_policy");

    const ValidationReport report = validate_model(m);
    if (!report.empty()) {
        std::string msg = "model fails validation:";
        for (const auto& issue : report) msg += " [" + issue.to_string() + "]";
        throw FormatError(msg);
    }
    return m;
}

Json policy_to_json(const StoredPolicy& policy) {
    if (policy.components.empty()) throw std::invalid_argument("policy has no components");
    const LinearPolicy& first = policy.components.front();
    Json j;
    j["schema"] = kPolicySchema;
    j["method"] = policy.method;
    j["kind"] = policy.is_mixture() ? "mixture" : "linear";
    j["dims"] = {{"n_x", first[0].K.cols()}, {"n_u", first[0].K.rows()}, {"steps", first.size()}};
    Json comps = Json::array();
    for (std::size_t n = 0; n < policy.components.size(); ++n) {
        Json c;
        Json steps = Json::array();
        for (const auto& s : policy.components[n].steps) steps.push_back(policy_step_to_json(s, "Sigma"));
        c["steps"] = std::move(steps);
        if (policy.is_mixture()) {
            Json marg = Json::array();
            for (const auto& g : policy.weight_marginals[n]) {
                marg.push_back({{"mean", vector_to_json(g.mean)}, {"cov", matrix_to_json(g.cov)}});
            }
            c["weight_marginals"] = std::move(marg);
        }
        comps.push_back(std::move(c));
    }
    j["components"] = std::move(comps);
    return j;
}

StoredPolicy policy_from_json(const Json& j) {
    if (j.value("schema", std::string{}) != kPolicySchema) throw FormatError(std::string("schema: expected ") + kPolicySchema);
    const Json& dj = field(j, "dims", "policy");
    Dims d;
    d.n_x = number<std::size_t>(dj, "n_x", "dims");
    d.n_u = number<std::size_t>(dj, "n_u", "dims");
    d.steps = number<std::size_t>(dj, "steps", "dims");
    const auto nx = static_cast<Eigen::Index>(d.n_x);

    StoredPolicy out;
    out.method = j.value("method", std::string{});
    const bool mixture = j.value("kind", std::string{"linear"}) == "mixture";
    const Json& comps = field(j, "components", "policy");
    if (!comps.is_array() || comps.empty()) throw FormatError("components: expected a non-empty array");
    for (std::size_t n = 0; n < comps.size(); ++n) {
        const std::string path = fmt::format("components[{}]", n);
        const Json& steps = field(comps[n], "steps", path);
        if (!steps.is_array() || steps.size() != d.steps) throw FormatError(path + ".steps: length does not match dims.steps");
        LinearPolicy pol;
        for (std::size_t t = 0; t < steps.size(); ++t) {
            pol.steps.push_back(policy_step_from_json(steps[t], d, "Sigma", fmt::format("{}.steps[{}]", path, t)));
        }
        out.components.push_back(std::move(pol));
        if (mixture) {
            const Json& marg = field(comps[n], "weight_marginals", path);
            if (!marg.is_array() || marg.size() != d.steps) throw FormatError(path + ".weight_marginals: length mismatch");
            std::vector<GaussianMarginal> list;
            for (std::size_t t = 0; t < marg.size(); ++t) {
                const std::string mp = fmt::format("{}.weight_marginals[{}]", path, t);
                list.push_back({vector_from_json(field(marg[t], "mean", mp), nx, mp + ".mean"),
                                matrix_from_json(field(marg[t], "cov", mp), nx, nx, mp + ".cov")});
            }
            out.weight_marginals.push_back(std::move(list));
        }
    }
    return out;
}

Json cost_to_json(const LqerCost& cost) {
    Json ref = Json::array();
    for (const auto& p : cost.reference) ref.push_back(vector_to_json(p));
    return Json{{"position_dim", cost.Rp.rows()},
                {"velocity_dim", cost.Rv.rows()},
                {"control_dim", cost.Ru.rows()},
                {"Rp", matrix_to_json(cost.Rp)},
                {"Rv", matrix_to_json(cost.Rv)},
                {"Ru", matrix_to_json(cost.Ru)},
                {"lambda", cost.lambda},
                {"reference", std::move(ref)}};
}

LqerCost cost_from_json(const Json& j) {
    const auto np = number<Eigen::Index>(j, "position_dim", "cost");
    const auto nv = number<Eigen::Index>(j, "velocity_dim", "cost");
    const auto nu = number<Eigen::Index>(j, "control_dim", "cost");
    LqerCost c;
    c.Rp = matrix_from_json(field(j, "Rp", "cost"), np, np, "cost.Rp");
    c.Rv = matrix_from_json(field(j, "Rv", "cost"), nv, nv, "cost.Rv");
    c.Ru = matrix_from_json(field(j, "Ru", "cost"), nu, nu, "cost.Ru");
    c.lambda = number<double>(j, "lambda", "cost");
    const Json& ref = field(j, "reference", "cost");
    if (!ref.is_array()) throw FormatError("cost.reference: expected an array");
    for (std::size_t t = 0; t < ref.size(); ++t) c.reference.push_back(vector_from_json(ref[t], np, fmt::format("cost.reference[{}]", t)));
    return c;
}

Json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

namespace {

void write_rows(const fs::path& path, const std::string& header, const std::vector<Vec>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << header << '\n';
    for (std::size_t t = 0; t < rows.size(); ++t) {
        out << t;
        for (Eigen::Index i = 0; i < rows[t].size(); ++i) out << ',' << fmt::format("{}", rows[t](i));
        out << '\n';
    }
}

std::vector<Vec> read_rows(const fs::path& path, Eigen::Index width) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<Vec> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // t
        Vec v(width);
        for (Eigen::Index i = 0; i < width; ++i) {
            if (!std::getline(ss, cell, ',')) throw FormatError(fmt::format("{}:{}: too few columns", path.string(), line_no));
            char* end = nullptr;
            v(i) = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw FormatError(fmt::format("{}:{}: not a number '{}'", path.string(), line_no, cell));
        }
        rows.push_back(std::move(v));
    }
    return rows;
}

std::string header(const char* prefix, Eigen::Index n) {
    std::string h = "t";
    for (Eigen::Index i = 1; i <= n; ++i) h += fmt::format(",{}{}", prefix, i);
    return h;
}

}  // namespace

void write_dataset(const fs::path& dir, const ChmmModel& model, const LqerCost& cost, const LinearPolicy& demo_policy,
                   const Dataset& dataset) {
    fs::create_directories(dir);
    write_json_file(dir / "model.json", model_to_json(model));
    write_json_file(dir / "cost.json", cost_to_json(cost));
    write_json_file(dir / "demo-policy.json", policy_to_json(StoredPolicy{"lqer", {demo_policy}, {}}));
    {
        std::ofstream seed(dir / "bank-seed.txt");
        seed << dataset.bank.seed << '\n';
    }
    write_json_file(dir / "dataset.json", Json{{"runs", dataset.size()}, {"bank_seed", dataset.bank.seed}});
    const auto nx = static_cast<Eigen::Index>(model.dims.n_x);
    const auto nz = static_cast<Eigen::Index>(model.dims.n_z);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        write_rows(dir / fmt::format("run_{}_states.csv", i), header("x", nx), dataset.trajectories[i].states);
        write_rows(dir / fmt::format("run_{}_measurements.csv", i), header("z", nz), dataset.measurements[i].z);
    }
}

DatasetFiles read_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("dataset directory not found: " + dir.string());
    DatasetFiles out;
    out.model = model_from_json(read_json_file(dir / "model.json"));
    out.cost = cost_from_json(read_json_file(dir / "cost.json"));
    const StoredPolicy demo = policy_from_json(read_json_file(dir / "demo-policy.json"));
    out.demo_policy = demo.components.front();
    {
        std::ifstream seed(dir / "bank-seed.txt");
        if (!(seed >> out.bank_seed)) throw FormatError("bank-seed.txt: expected an unsigned integer");
    }
    const Json meta = read_json_file(dir / "dataset.json");
    const auto runs = number<std::size_t>(meta, "runs", "dataset");
    const auto nx = static_cast<Eigen::Index>(out.model.dims.n_x);
    const auto nz = static_cast<Eigen::Index>(out.model.dims.n_z);
    for (std::size_t i = 0; i < runs; ++i) {
        Trajectory traj;
        traj.states = read_rows(dir / fmt::format("run_{}_states.csv", i), nx);
        MeasurementSequence meas{read_rows(dir / fmt::format("run_{}_measurements.csv", i), nz)};
        if (meas.z.size() != out.model.dims.steps) throw FormatError(fmt::format("run {}: measurement length mismatch", i));
        out.trajectories.push_back(std::move(traj));
        out.measurements.push_back(std::move(meas));
    }
    return out;
}

}  // namespace apcd
