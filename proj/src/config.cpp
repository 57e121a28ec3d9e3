#include "apcd/config.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace apcd {

namespace {

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& path) {
    if (!j.is_object()) throw FormatError(path + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw FormatError(fmt::format("{}: unknown field '{}'", path, key));
    }
}

void read_double(const Json& j, const char* key, double& out, const std::string& path) {
    if (!j.contains(key)) return;
    const Json& v = j.at(key);
    if (!v.is_number()) throw FormatError(fmt::format("{}.{}: expected a number", path, key));
    out = v.get<double>();
}

template <typename T>
void read_unsigned(const Json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    const Json& v = j.at(key);
    if (!v.is_number_unsigned()) throw FormatError(fmt::format("{}.{}: expected a non-negative integer", path, key));
    out = v.get<T>();
}

void read_vec2(const Json& j, const char* key, Vec& out, const std::string& path) {
    if (j.contains(key)) out = vector_from_json(j.at(key), 2, path + "." + key);
}

}  // namespace

Json benchmark_to_json(const BenchmarkSpec& s) {
    return Json{{"dt", s.dt},
                {"horizon", s.horizon},
                {"mass", s.mass},
                {"rp", s.rp},
                {"rv", s.rv},
                {"ru", s.ru},
                {"lambda", s.lambda},
                {"sigma0_sq", s.sigma0_sq},
                {"prior_sigma_sq", s.prior_sigma_sq},
                {"reference", to_string(s.reference)},
                {"reference_scale", s.reference_scale},
                {"reference_period", s.reference_period},
                {"input_noise_scales", vector_to_json(s.input_noise_scales)},
                {"measurement_noise_scales", vector_to_json(s.measurement_noise_scales)},
                {"model_seed", s.model_seed}};
}

BenchmarkSpec benchmark_from_json(const Json& j, BenchmarkSpec s, const std::string& path) {
    reject_unknown(j,
                   {"dt", "horizon", "mass", "rp", "rv", "ru", "lambda", "sigma0_sq", "prior_sigma_sq", "reference",
                    "reference_scale", "reference_period", "input_noise_scales", "measurement_noise_scales", "model_seed"},
                   path);
    read_double(j, "dt", s.dt, path);
    read_double(j, "horizon", s.horizon, path);
    read_double(j, "mass", s.mass, path);
    read_double(j, "rp", s.rp, path);
    read_double(j, "rv", s.rv, path);
    read_double(j, "ru", s.ru, path);
    read_double(j, "lambda", s.lambda, path);
    read_double(j, "sigma0_sq", s.sigma0_sq, path);
    read_double(j, "prior_sigma_sq", s.prior_sigma_sq, path);
    read_double(j, "reference_scale", s.reference_scale, path);
    read_double(j, "reference_period", s.reference_period, path);
    read_vec2(j, "input_noise_scales", s.input_noise_scales, path);
    read_vec2(j, "measurement_noise_scales", s.measurement_noise_scales, path);
    read_unsigned(j, "model_seed", s.model_seed, path);
    if (j.contains("reference")) {
        const Json& v = j.at("reference");
        if (!v.is_string()) throw FormatError(path + ".reference: expected a string");
        try {
            s.reference = parse_reference_kind(v.get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw FormatError(path + ".reference: " + e.what());
        }
    }
    return s;
}

Json sweep_config_to_json(const SweepConfig& c) {
    return Json{{"benchmark", benchmark_to_json(c.bench)},
                {"sweep",
                 {{"sigma_sq", c.sigma_sq},
                  {"n_grid", c.n_grid},
                  {"runs", c.runs},
                  {"pool", c.pool},
                  {"f_bar", c.f_bar},
                  {"seed", c.seed}}}};
}

SweepConfig sweep_config_from_json(const Json& j, SweepConfig c) {
    reject_unknown(j, {"benchmark", "sweep"}, "config");
    if (j.contains("benchmark")) c.bench = benchmark_from_json(j.at("benchmark"), c.bench);
    if (!j.contains("sweep")) return c;
    const Json& s = j.at("sweep");
    const std::string path = "sweep";
    reject_unknown(s, {"sigma_sq", "n_grid", "runs", "pool", "f_bar", "seed"}, path);
    if (s.contains("sigma_sq")) {
        const Json& v = s.at("sigma_sq");
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number(); })) {
            throw FormatError(path + ".sigma_sq: expected an array of numbers");
        }
        c.sigma_sq = v.get<std::vector<double>>();
    }
    if (s.contains("n_grid")) {
        const Json& v = s.at("n_grid");
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number_unsigned(); })) {
            throw FormatError(path + ".n_grid: expected an array of non-negative integers");
        }
        c.n_grid = v.get<std::vector<std::size_t>>();
    }
    read_unsigned(s, "runs", c.runs, path);
    read_unsigned(s, "pool", c.pool, path);
    read_double(s, "f_bar", c.f_bar, path);
    read_unsigned(s, "seed", c.seed, path);
    return c;
}

Json parse_config_text(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        // Translate the byte offset into line:column.
        const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(at), '\n'));
        const std::size_t last_nl = text.rfind('\n', at == 0 ? 0 : at - 1);
        const std::size_t column = last_nl == std::string::npos ? at + 1 : at - last_nl;
        throw FormatError(fmt::format("{}:{}:{}: invalid JSON ({})", source, line, column, e.what()));
    }
}

Json read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
    return out;
}

// nlohmann objects are key-sorted, so dump() is already canonical.
std::string config_digest(const Json& config) { return sha256_hex(config.dump()); }

}  // namespace apcd
