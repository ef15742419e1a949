#include "nlsid/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "nlsid/error.hpp"

namespace nlsid::io {

namespace {

Json complex_to_json(Complex c) { return Json::array({c.real(), c.imag()}); }

Complex complex_from_json(const Json& j, const std::string& ctx) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(ctx + ": complex values are [re, im] pairs");
    return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
T get_as(const Json& j, const char* key, const std::string& ctx) {
    const Json& v = require(j, key, ctx);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(ctx + ": field '" + key + "' has the wrong type");
    }
}

Json doubles(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(x);
    return a;
}

std::vector<double> doubles_from(const Json& j, const std::string& ctx) {
    if (!j.is_array()) throw ConfigError(ctx + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : j) {
        if (!x.is_number()) throw ConfigError(ctx + ": expected an array of numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

Json hyper_to_json(const KernelHyper& h) {
    return Json{{"scale", h.scale}, {"decay", h.decay}, {"correlation", h.correlation}};
}

KernelHyper hyper_from_json(const Json& j, const std::string& ctx) {
    reject_unknown_keys(j, {"scale", "decay", "correlation"}, ctx);
    KernelHyper h;
    h.scale = get_as<double>(j, "scale", ctx);
    h.decay = get_as<double>(j, "decay", ctx);
    h.correlation = get_as<double>(j, "correlation", ctx);
    return h;
}

Json correlation_to_json(const CorrelationTest& t) {
    return Json{{"values", doubles(t.values)},
                {"bound", t.bound},
                {"exceedances", t.exceedances},
                {"allowed", t.allowed},
                {"pass", t.pass}};
}

}  // namespace

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (!ok.count(k)) throw ConfigError(context + ": unknown key '" + k + "'");
    }
}

const Json& require(const Json& j, const char* key, const std::string& context) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(context + ": missing required field '" + key + "'");
    return j.at(key);
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
        rows.push_back(std::move(r));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& ctx) {
    if (!j.is_array()) throw ConfigError(ctx + ": matrices are arrays of rows");
    if (j.empty()) return {};
    const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto row = doubles_from(j[i], ctx);
        if (row.size() != cols) throw ConfigError(ctx + ": ragged matrix rows");
        for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
    }
    return m;
}

Json vector_to_json(const Eigen::VectorXd& v) { return doubles(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const Json& j, const std::string& ctx) {
    const auto v = doubles_from(j, ctx);
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json to_json(const MultisineSpec& s) {
    return Json{{"sample_rate_hz", s.sample_rate_hz},
                {"period_samples", s.period_samples},
                {"grid_kind", to_string(s.grid_kind)},
                {"rng_seed", s.rng_seed},
                {"excited_lines", s.excited_lines},
                {"amplitudes", doubles(s.amplitudes)},
                {"phases", doubles(s.phases)}};
}

MultisineSpec multisine_from_json(const Json& j) {
    const std::string ctx = "multisine";
    reject_unknown_keys(j, {"sample_rate_hz", "period_samples", "grid_kind", "rng_seed", "excited_lines", "amplitudes",
                            "phases"},
                        ctx);
    MultisineSpec s;
    s.sample_rate_hz = get_as<double>(j, "sample_rate_hz", ctx);
    s.period_samples = get_as<std::size_t>(j, "period_samples", ctx);
    s.grid_kind = grid_kind_from_string(get_as<std::string>(j, "grid_kind", ctx));
    s.rng_seed = get_as<std::uint64_t>(j, "rng_seed", ctx);
    s.excited_lines = get_as<std::vector<std::size_t>>(j, "excited_lines", ctx);
    s.amplitudes = doubles_from(require(j, "amplitudes", ctx), ctx);
    s.phases = doubles_from(require(j, "phases", ctx), ctx);
    s.validate();
    return s;
}

Json to_json(const PolyMap& p) {
    Json ex = Json::array();
    for (const auto& e : p.basis.exponents()) ex.push_back(e);
    return Json{{"n_vars", p.basis.num_vars()},
                {"d_min", p.basis.degree_min()},
                {"d_max", p.basis.degree_max()},
                {"exponents", ex},
                {"coeffs", matrix_to_json(p.coefficients)}};
}

PolyMap polymap_from_json(const Json& j) {
    const std::string ctx = "polymap";
    reject_unknown_keys(j, {"n_vars", "d_min", "d_max", "exponents", "coeffs"}, ctx);
    const int n = get_as<int>(j, "n_vars", ctx), lo = get_as<int>(j, "d_min", ctx), hi = get_as<int>(j, "d_max", ctx);
    if (n == 0 && hi == 0) return {};
    auto ex = get_as<std::vector<Exponents>>(j, "exponents", ctx);
    auto basis = MonomialBasis::from_exponents(n, lo, hi, std::move(ex));
    Eigen::MatrixXd c = matrix_from_json(require(j, "coeffs", ctx), ctx);
    if (c.size() == 0) c.resize(0, static_cast<Eigen::Index>(basis.size()));
    return PolyMap(std::move(basis), std::move(c));
}

Json to_json(const NarxModel& m) {
    return Json{{"na", m.na},
                {"nb", m.nb},
                {"direct_term", m.direct_term},
                {"regressors", m.regressor_layout},
                {"training_rms", m.training_rms},
                {"map", to_json(m.map)},
                {"warnings", m.warnings}};
}

NarxModel narx_from_json(const Json& j) {
    const std::string ctx = "narx model";
    reject_unknown_keys(j, {"na", "nb", "direct_term", "regressors", "training_rms", "map", "warnings"}, ctx);
    NarxModel m;
    m.na = get_as<int>(j, "na", ctx);
    m.nb = get_as<int>(j, "nb", ctx);
    m.direct_term = get_as<bool>(j, "direct_term", ctx);
    m.regressor_layout = narx_regressor_layout(m.na, m.nb, m.direct_term);
    m.training_rms = get_as<double>(j, "training_rms", ctx);
    m.map = polymap_from_json(require(j, "map", ctx));
    if (j.contains("warnings")) m.warnings = get_as<std::vector<std::string>>(j, "warnings", ctx);
    if (m.map.num_vars() != static_cast<int>(m.num_regressors()) || m.map.num_outputs() != 1)
        throw ConfigError(ctx + ": map does not match the regressor layout");
    return m;
}

Json to_json(const DecoupledFunction& d) {
    Json br = Json::array();
    for (const auto& b : d.branches) br.push_back(doubles(b));
    return Json{{"W", matrix_to_json(d.W)}, {"V", matrix_to_json(d.V)}, {"branches", br}};
}

DecoupledFunction decoupled_from_json(const Json& j) {
    const std::string ctx = "decoupled function";
    reject_unknown_keys(j, {"W", "V", "branches"}, ctx);
    DecoupledFunction d;
    d.W = matrix_from_json(require(j, "W", ctx), ctx);
    d.V = matrix_from_json(require(j, "V", ctx), ctx);
    for (const auto& b : require(j, "branches", ctx)) d.branches.push_back(doubles_from(b, ctx));
    d.validate();
    return d;
}

Json to_json(const PnlssModel& m) {
    Json j{{"A", matrix_to_json(m.A)},
           {"B", vector_to_json(m.B)},
           {"C", vector_to_json(m.C.transpose())},
           {"D", m.D},
           {"E", to_json(m.E)},
           {"F", to_json(m.F)},
           {"x0", vector_to_json(m.x0)}};
    if (m.state_decoupled) j["E_decoupled"] = to_json(*m.state_decoupled);
    return j;
}

PnlssModel pnlss_from_json(const Json& j) {
    const std::string ctx = "pnlss model";
    reject_unknown_keys(j, {"A", "B", "C", "D", "E", "F", "x0", "E_decoupled"}, ctx);
    PnlssModel m;
    m.A = matrix_from_json(require(j, "A", ctx), ctx);
    m.B = vector_from_json(require(j, "B", ctx), ctx);
    m.C = vector_from_json(require(j, "C", ctx), ctx).transpose();
    m.D = get_as<double>(j, "D", ctx);
    m.E = polymap_from_json(require(j, "E", ctx));
    m.F = polymap_from_json(require(j, "F", ctx));
    m.x0 = vector_from_json(require(j, "x0", ctx), ctx);
    if (j.contains("E_decoupled")) m.state_decoupled = decoupled_from_json(j.at("E_decoupled"));
    m.validate();
    return m;
}

Json to_json(const VolterraModel& m) {
    std::vector<double> upper;
    if (m.degree == 2)
        for (int i = 0; i < m.m; ++i)
            for (int k = i; k < m.m; ++k) upper.push_back(m.h2(i, k));
    return Json{{"m", m.m},
                {"degree", m.degree},
                {"h0", m.h0},
                {"h1", vector_to_json(m.h1)},
                {"h2_upper", doubles(upper)},
                {"hyper",
                 Json{{"family", to_string(m.family)},
                      {"first", hyper_to_json(m.first)},
                      {"second", hyper_to_json(m.second)},
                      {"log_marginal_likelihood",
                       std::isfinite(m.log_marginal_likelihood) ? Json(m.log_marginal_likelihood) : Json()}}},
                {"warnings", m.warnings}};
}

VolterraModel volterra_from_json(const Json& j) {
    const std::string ctx = "volterra model";
    reject_unknown_keys(j, {"m", "degree", "h0", "h1", "h2_upper", "hyper", "warnings"}, ctx);
    VolterraModel m;
    m.m = get_as<int>(j, "m", ctx);
    m.degree = get_as<int>(j, "degree", ctx);
    m.h0 = get_as<double>(j, "h0", ctx);
    m.h1 = vector_from_json(require(j, "h1", ctx), ctx);
    const auto upper = doubles_from(require(j, "h2_upper", ctx), ctx);
    m.h2 = Eigen::MatrixXd::Zero(m.m, m.m);
    if (m.degree == 2) {
        if (upper.size() != static_cast<std::size_t>(m.m * (m.m + 1) / 2))
            throw ConfigError(ctx + ": h2_upper must have m(m+1)/2 entries");
        std::size_t c = 0;
        for (int i = 0; i < m.m; ++i)
            for (int k = i; k < m.m; ++k) m.h2(i, k) = m.h2(k, i) = upper[c++];
    }
    const Json& h = require(j, "hyper", ctx);
    reject_unknown_keys(h, {"family", "first", "second", "log_marginal_likelihood"}, ctx + " hyper");
    m.family = kernel_family_from_string(get_as<std::string>(h, "family", ctx));
    m.first = hyper_from_json(require(h, "first", ctx), ctx);
    m.second = hyper_from_json(require(h, "second", ctx), ctx);
    if (h.contains("log_marginal_likelihood") && h.at("log_marginal_likelihood").is_number())
        m.log_marginal_likelihood = h.at("log_marginal_likelihood").get<double>();
    if (j.contains("warnings")) m.warnings = get_as<std::vector<std::string>>(j, "warnings", ctx);
    m.validate();
    return m;
}

Json to_json(const BlaModel& b) {
    Json frf = Json::array();
    for (const auto& c : b.frf) frf.push_back(complex_to_json(c));
    return Json{{"sample_rate_hz", b.sample_rate_hz},
                {"period_samples", b.period_samples},
                {"num_realizations", b.num_realizations},
                {"num_periods", b.num_periods},
                {"lines", b.lines},
                {"frf", frf},
                {"frf_variance_total", doubles(b.frf_variance_total)},
                {"frf_variance_noise", doubles(b.frf_variance_noise)}};
}

BlaModel bla_from_json(const Json& j) {
    const std::string ctx = "bla model";
    reject_unknown_keys(j, {"sample_rate_hz", "period_samples", "num_realizations", "num_periods", "lines", "frf",
                            "frf_variance_total", "frf_variance_noise"},
                        ctx);
    BlaModel b;
    b.sample_rate_hz = get_as<double>(j, "sample_rate_hz", ctx);
    b.period_samples = get_as<std::size_t>(j, "period_samples", ctx);
    b.num_realizations = get_as<std::size_t>(j, "num_realizations", ctx);
    b.num_periods = get_as<std::size_t>(j, "num_periods", ctx);
    b.lines = get_as<std::vector<std::size_t>>(j, "lines", ctx);
    for (const auto& c : require(j, "frf", ctx)) b.frf.push_back(complex_from_json(c, ctx));
    b.frf_variance_total = doubles_from(require(j, "frf_variance_total", ctx), ctx);
    b.frf_variance_noise = doubles_from(require(j, "frf_variance_noise", ctx), ctx);
    if (b.frf.size() != b.lines.size() || b.frf_variance_total.size() != b.lines.size() ||
        b.frf_variance_noise.size() != b.lines.size())
        throw ConfigError(ctx + ": per-line arrays differ in length");
    return b;
}

Json to_json(const DistortionReport& r) {
    std::map<std::string, std::size_t> counts;
    for (auto c : {LineClass::excited, LineClass::odd_detection, LineClass::even, LineClass::out_of_band})
        counts[to_string(c)] = r.count(c);
    return Json{{"threshold_db", r.threshold_db},
                {"num_periods", r.num_periods},
                {"even_excess_db", r.even_excess_db},
                {"odd_excess_db", r.odd_excess_db},
                {"distortion_excess_db", r.distortion_excess_db},
                {"line_counts", counts},
                {"warnings", r.warnings}};
}

Json to_json(const ProcessNoiseReport& r) {
    return Json{{"stationarity_ratio", r.stationarity_ratio},
                {"threshold", r.threshold},
                {"verdict", to_string(r.verdict)}};
}

Json to_json(const FitReport& r) {
    return Json{{"status", to_string(r.status)},
                {"iterations", r.iterations},
                {"final_cost", r.final_cost},
                {"final_rms", r.final_rms},
                {"cost_history", doubles(r.cost_history)}};
}

Json to_json(const ValidationReport& r) {
    Json j{{"fit_percent", r.fit_percent},
           {"rms_error", r.rms_error},
           {"autocorr", correlation_to_json(r.tests.autocorr)},
           {"crosscorr", correlation_to_json(r.tests.crosscorr)},
           {"whiteness_pass", r.tests.autocorr.pass},
           {"crosscorr_pass", r.tests.crosscorr.pass},
           {"notes", r.tests.notes}};
    if (r.coverage) {
        j["domain_coverage"] = r.coverage->fraction_inside;
        j["coverage_radius"] = r.coverage->radius;
        j["extrapolation_flag"] = r.coverage->extrapolation_flag;
    }
    return j;
}

Json to_json(const VariabilityReport& r) {
    Json reals = Json::array();
    for (const auto& v : r.realizations) reals.push_back(doubles(v));
    return Json{{"empirical_std", doubles(r.empirical_std)},
                {"theory_std", doubles(r.theory_std)},
                {"ratio", doubles(r.ratio)},
                {"median_ratio", r.median_ratio},
                {"structural_error_flag", r.structural_error_flag},
                {"failures", r.failures},
                {"warnings", r.warnings},
                {"realizations", reals}};
}

Json to_json(const ApproxReport& r) {
    return Json{{"train_rms", r.train_rms},
                {"heldout_rms", r.heldout_rms},
                {"iterations", r.iterations},
                {"status", to_string(r.status)}};
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

void write_record_csv(const std::filesystem::path& path, const SignalRecord& rec) {
    rec.validate();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << "# fs=" << format_double(rec.sample_rate_hz) << ", period=" << rec.period_samples
        << ", periods=" << rec.num_periods << '\n';
    out << "sample,input,output\n";
    for (std::size_t i = 0; i < rec.size(); ++i)
        out << i << ',' << format_double(rec.input[i]) << ',' << format_double(rec.output[i]) << '\n';
}

SignalRecord read_record_csv(const std::filesystem::path& path, double sample_rate_hz, std::size_t period_samples) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    SignalRecord rec;
    rec.label = path.filename().string();
    rec.sample_rate_hz = sample_rate_hz > 0.0 ? sample_rate_hz : 1.0;
    rec.period_samples = period_samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            double fs = 0.0;
            std::size_t n = 0, p = 0;
            if (std::sscanf(line.c_str(), "# fs=%lf, period=%zu, periods=%zu", &fs, &n, &p) == 3) {
                if (sample_rate_hz <= 0.0) rec.sample_rate_hz = fs;
                if (period_samples == 0) rec.period_samples = n;
            }
            continue;
        }
        std::vector<double> fields;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            double v = 0.0;
            const char* b = cell.data();
            const char* e = b + cell.size();
            while (b < e && *b == ' ') ++b;
            const auto r = std::from_chars(b, e, v);
            if (r.ec != std::errc()) {
                numeric = false;
                break;
            }
            fields.push_back(v);
        }
        if (!numeric) {
            if (rec.input.empty()) continue;  // header row
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
        }
        if (fields.size() == 3) {
            rec.input.push_back(fields[1]);
            rec.output.push_back(fields[2]);
        } else if (fields.size() == 2) {
            rec.input.push_back(fields[0]);
            rec.output.push_back(fields[1]);
        } else {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 2 or 3 columns");
        }
    }
    if (rec.period_samples == 0) throw ConfigError(path.string() + ": period length unknown");
    if (rec.input.size() % rec.period_samples != 0)
        throw ConfigError(path.string() + ": record length is not a multiple of the period");
    rec.num_periods = rec.input.size() / rec.period_samples;
    rec.validate();
    return rec;
}

void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& headers,
                       const std::vector<std::vector<double>>& columns) {
    if (headers.size() != columns.size()) throw ConfigError("csv: one header per column is required");
    const std::size_t n = columns.empty() ? 0 : columns.front().size();
    for (const auto& c : columns)
        if (c.size() != n) throw ConfigError("csv: columns differ in length");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    for (std::size_t k = 0; k < headers.size(); ++k) out << (k ? "," : "") << headers[k];
    out << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << format_double(columns[k][i]);
        out << '\n';
    }
}

}  // namespace nlsid::io
