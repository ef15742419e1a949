#include "nlsid/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "nlsid/error.hpp"
#include "nlsid/parallel.hpp"
#include "nlsid/simulators.hpp"

namespace nlsid::cli {

namespace fs = std::filesystem;
using io::Json;

namespace {

constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------- config helpers

void check_config(const Json& cfg, std::initializer_list<const char*> keys, const std::string& cmd) {
    if (!cfg.is_object()) throw ConfigError(cmd + ": config must be a JSON object");
    std::vector<const char*> allowed(keys);
    allowed.push_back("schema_version");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : cfg.items()) {
        (void)v;
        if (!ok.count(k)) throw ConfigError(cmd + ": unknown key '" + k + "'");
    }
    const Json& ver = io::require(cfg, "schema_version", cmd);
    if (!ver.is_number_integer() || ver.get<int>() != kSchemaVersion)
        throw ConfigError(cmd + ": unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
}

template <class T>
T get(const Json& j, const char* key, const std::string& ctx) {
    const Json& v = io::require(j, key, ctx);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(ctx + ": field '" + key + "' has the wrong type");
    }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& ctx) {
    return j.contains(key) ? get<T>(j, key, ctx) : fallback;
}

std::uint64_t seed_of(const Json& cfg, const RunOptions& opt, const std::string& ctx) {
    if (opt.seed) return *opt.seed;
    if (!cfg.contains("seed")) throw ConfigError(ctx + ": missing required field 'seed'");
    return get<std::uint64_t>(cfg, "seed", ctx);
}

fs::path resolve(const RunOptions& opt, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : opt.base_dir / path;
}

// SplitMix64 step; derives independent stream seeds from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

MultisineSpec excitation_from_json(const Json& j, std::uint64_t seed) {
    const std::string ctx = "excitation";
    io::reject_unknown_keys(j, {"sample_rate_hz", "period_samples", "first_line", "last_line", "grid_kind", "rms",
                                "detection_group", "lines"},
                            ctx);
    const double rms_level = get_or<double>(j, "rms", 1.0, ctx);
    if (!(rms_level > 0.0)) throw ConfigError(ctx + ": rms must be positive");
    if (j.contains("lines")) {
        MultisineSpec s;
        s.sample_rate_hz = get_or<double>(j, "sample_rate_hz", 1.0, ctx);
        s.period_samples = get<std::size_t>(j, "period_samples", ctx);
        s.grid_kind = grid_kind_from_string(get_or<std::string>(j, "grid_kind", "full", ctx));
        s.excited_lines = get<std::vector<std::size_t>>(j, "lines", ctx);
        if (s.excited_lines.empty()) throw ConfigError(ctx + ": lines must not be empty");
        const double amp = rms_level * std::sqrt(2.0 / static_cast<double>(s.excited_lines.size()));
        s.amplitudes.assign(s.excited_lines.size(), amp);
        s.phases.assign(s.excited_lines.size(), 0.0);
        s.validate();
        return random_phases(s, seed);
    }
    MultisineDesign d;
    d.sample_rate_hz = get_or<double>(j, "sample_rate_hz", 1.0, ctx);
    d.period_samples = get<std::size_t>(j, "period_samples", ctx);
    d.first_line = get_or<std::size_t>(j, "first_line", 1, ctx);
    d.last_line = get<std::size_t>(j, "last_line", ctx);
    d.grid_kind = grid_kind_from_string(get_or<std::string>(j, "grid_kind", "full", ctx));
    d.rms = rms_level;
    d.detection_group = get_or<std::size_t>(j, "detection_group", 4, ctx);
    d.seed = seed;
    auto s = make_multisine(d);
    s.validate();
    return s;
}

RationalFilter filter_from_json(const Json& j, const std::string& ctx) {
    io::reject_unknown_keys(j, {"num", "den"}, ctx);
    RationalFilter f;
    f.num = get<std::vector<double>>(j, "num", ctx);
    f.den = get_or<std::vector<double>>(j, "den", {1.0}, ctx);
    f.validate();
    return f;
}

using Simulator = std::function<SignalRecord(std::span<const double>, const NoiseSpec&, std::size_t, double)>;

Simulator system_from_json(const Json& j) {
    const std::string ctx = "system";
    const auto type = get<std::string>(j, "type", ctx);
    if (type == "duffing") {
        io::reject_unknown_keys(j, {"type", "damping", "stiffness", "cubic_stiffness", "input_gain", "oversample",
                                    "resonance_fraction", "zeta"},
                                ctx);
        DuffingParams p;
        if (j.contains("resonance_fraction") || j.contains("zeta")) {
            // Resonance given relative to fs; the physical parameters follow from the record's fs.
            const double frac = get_or<double>(j, "resonance_fraction", 0.1, ctx);
            const double zeta = get_or<double>(j, "zeta", 0.05, ctx);
            const double k3 = get_or<double>(j, "cubic_stiffness", 0.0, ctx);
            const int os = get_or<int>(j, "oversample", 16, ctx);
            return [=](std::span<const double> u, const NoiseSpec& n, std::size_t N, double fs) {
                auto s = DuffingParams::with_resonance(fs, frac, zeta, k3);
                s.oversample = os;
                return simulate_duffing(s, u, fs, n, N);
            };
        }
        p.damping = get<double>(j, "damping", ctx);
        p.stiffness = get<double>(j, "stiffness", ctx);
        p.cubic_stiffness = get_or<double>(j, "cubic_stiffness", 0.0, ctx);
        p.input_gain = get_or<double>(j, "input_gain", 1.0, ctx);
        p.oversample = get_or<int>(j, "oversample", 16, ctx);
        p.validate();
        return [p](std::span<const double> u, const NoiseSpec& n, std::size_t N, double fs) {
            return simulate_duffing(p, u, fs, n, N);
        };
    }
    if (type == "tanks") {
        io::reject_unknown_keys(j, {"type", "k1", "k2", "k3", "k4", "x1_max", "x2_max", "spill_fraction", "oversample"},
                                ctx);
        TanksParams p;
        p.k1 = get<double>(j, "k1", ctx);
        p.k2 = get<double>(j, "k2", ctx);
        p.k3 = get<double>(j, "k3", ctx);
        p.k4 = get<double>(j, "k4", ctx);
        p.x1_max = get_or<double>(j, "x1_max", 10.0, ctx);
        p.x2_max = get_or<double>(j, "x2_max", 10.0, ctx);
        p.spill_fraction = get_or<double>(j, "spill_fraction", 0.0, ctx);
        p.oversample = get_or<int>(j, "oversample", 16, ctx);
        p.validate();
        return [p](std::span<const double> u, const NoiseSpec& n, std::size_t N, double fs) {
            return simulate_tanks(p, u, fs, n, N);
        };
    }
    if (type == "static") {
        io::reject_unknown_keys(j, {"type", "poly"}, ctx);
        const auto poly = get<std::vector<double>>(j, "poly", ctx);
        if (poly.empty()) throw ConfigError(ctx + ": poly must not be empty");
        return [poly](std::span<const double> u, const NoiseSpec& n, std::size_t N, double fs) {
            return simulate_static(poly, u, n, N, fs);
        };
    }
    if (type == "block_oriented") {
        io::reject_unknown_keys(j, {"type", "structure", "first", "second", "nonlinearity"}, ctx);
        BlockOrientedSpec s;
        s.structure = block_structure_from_string(get<std::string>(j, "structure", ctx));
        s.first = filter_from_json(io::require(j, "first", ctx), ctx + ".first");
        if (j.contains("second")) s.second = filter_from_json(j.at("second"), ctx + ".second");
        s.nonlinearity = get<std::vector<double>>(j, "nonlinearity", ctx);
        s.validate();
        return [s](std::span<const double> u, const NoiseSpec& n, std::size_t N, double fs) {
            return simulate_block_oriented(s, u, n, N, fs);
        };
    }
    throw ConfigError(ctx + ": unknown type '" + type + "' (duffing, tanks, static, block_oriented)");
}

NoiseSpec noise_from_json(const Json* j) {
    NoiseSpec n;
    if (!j) return n;
    const std::string ctx = "noise";
    io::reject_unknown_keys(*j, {"measurement_std", "process_std", "process_entry"}, ctx);
    n.measurement_std = get_or<double>(*j, "measurement_std", 0.0, ctx);
    n.process_std = get_or<double>(*j, "process_std", 0.0, ctx);
    const auto entry = get_or<std::string>(*j, "process_entry", n.process_std > 0.0 ? "before_nonlinearity" : "none", ctx);
    if (entry == "none") n.process_entry = ProcessEntry::none;
    else if (entry == "before_nonlinearity") n.process_entry = ProcessEntry::before_nonlinearity;
    else throw ConfigError(ctx + ": unknown process_entry '" + entry + "'");
    return n;
}

struct Realization {
    MultisineSpec spec;
    SignalRecord record;
};

// Realization r keeps the line grid and redraws the phases (r > 0) and the noise streams.
std::vector<Realization> simulate_realizations(const MultisineSpec& base, const Simulator& sim, NoiseSpec noise,
                                               std::size_t periods, std::size_t count, std::uint64_t seed,
                                               std::uint64_t first_index = 0) {
    if (periods < 1) throw ConfigError("simulate: periods must be at least 1");
    std::vector<Realization> out(count);
    parallel_for(count, [&](std::size_t i) {
        const std::uint64_t r = first_index + i;
        Realization& z = out[i];
        z.spec = r == 0 ? base : random_phases(base, derive_seed(seed, 2 * r));
        const auto period = design_multisine(z.spec);
        const auto u = repeat_periods(period, periods);
        NoiseSpec n = noise;
        n.seed = derive_seed(seed, 2 * r + 1);
        z.record = sim(u, n, z.spec.period_samples, z.spec.sample_rate_hz);
        z.record.label = "realization_" + std::to_string(r);
    });
    return out;
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i);
    return stem + "_" + buf + ext;
}

SignalRecord load_record(const RunOptions& opt, const Json& cfg, const char* key, const std::string& ctx) {
    return io::read_record_csv(resolve(opt, get<std::string>(cfg, key, ctx)));
}

std::size_t discard_of(const Json& cfg, const std::string& ctx, std::size_t fallback = 1) {
    return get_or<std::size_t>(cfg, "discard_periods", fallback, ctx);
}

SignalRecord drop(const SignalRecord& rec, std::size_t periods) {
    return periods == 0 ? rec : rec.drop_periods(periods);
}

std::vector<double> magnitudes_db(const std::vector<Complex>& v) {
    std::vector<double> out;
    for (const auto& c : v) out.push_back(20.0 * std::log10(std::abs(c)));
    return out;
}

// ---------------------------------------------------------------- commands

void cmd_design(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "design";
    check_config(cfg, {"seed", "excitation", "periods"}, ctx);
    const auto seed = seed_of(cfg, opt, ctx);
    const auto spec = excitation_from_json(io::require(cfg, "excitation", ctx), seed);
    const auto periods = get_or<std::size_t>(cfg, "periods", 1, ctx);
    if (periods < 1) throw ConfigError(ctx + ": periods must be at least 1");
    const auto u = repeat_periods(design_multisine(spec), periods);
    std::vector<double> idx(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) idx[i] = static_cast<double>(i);
    io::write_json(opt.out / "multisine.json", io::to_json(spec));
    io::write_columns_csv(opt.out / "signal.csv", {"sample", "input"}, {idx, u});
}

void cmd_simulate(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "simulate";
    check_config(cfg, {"seed", "excitation", "multisine", "system", "noise", "periods", "realizations"}, ctx);
    const auto seed = seed_of(cfg, opt, ctx);
    MultisineSpec base;
    if (cfg.contains("multisine")) base = io::multisine_from_json(io::read_json(resolve(opt, get<std::string>(cfg, "multisine", ctx))));
    else base = excitation_from_json(io::require(cfg, "excitation", ctx), seed);
    const auto sim = system_from_json(io::require(cfg, "system", ctx));
    const auto noise = noise_from_json(cfg.contains("noise") ? &cfg.at("noise") : nullptr);
    const auto periods = get_or<std::size_t>(cfg, "periods", 2, ctx);
    const auto count = get_or<std::size_t>(cfg, "realizations", 1, ctx);
    if (count < 1) throw ConfigError(ctx + ": realizations must be at least 1");
    const auto reals = simulate_realizations(base, sim, noise, periods, count, seed);
    Json files = Json::array();
    for (std::size_t i = 0; i < reals.size(); ++i) {
        io::write_record_csv(opt.out / indexed("record", i, ".csv"), reals[i].record);
        io::write_json(opt.out / indexed("multisine", i, ".json"), io::to_json(reals[i].spec));
        files.push_back(Json{{"record", indexed("record", i, ".csv")}, {"multisine", indexed("multisine", i, ".json")}});
    }
    io::write_json(opt.out / "records.json", Json{{"realizations", files}});
}

Json analyze_record(const SignalRecord& rec, const MultisineSpec& spec, std::size_t discard, double threshold_db,
                    const fs::path& out) {
    const auto stats = sample_statistics(rec, discard);
    const auto rep = classify_lines(spec, stats, threshold_db);
    const auto pn = detect_process_noise(rec, 0, 4.0, discard);
    std::vector<double> line, freq, mag, floor, cls;
    for (const auto& l : rep.lines) {
        line.push_back(static_cast<double>(l.line));
        freq.push_back(l.frequency_hz);
        mag.push_back(l.magnitude);
        floor.push_back(l.noise_floor);
        cls.push_back(static_cast<double>(static_cast<int>(l.cls)));
    }
    io::write_columns_csv(out / "lines.csv", {"line", "frequency_hz", "magnitude", "noise_floor", "class"},
                          {line, freq, mag, floor, cls});
    Json j = io::to_json(rep);
    j["class_codes"] = Json{{"0", "excited"}, {"1", "odd_detection"}, {"2", "even"}, {"3", "out_of_band"}};
    j["process_noise"] = io::to_json(pn);
    io::write_json(out / "distortion.json", j);
    return j;
}

void cmd_analyze(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "analyze";
    check_config(cfg, {"record", "multisine", "discard_periods", "threshold_db"}, ctx);
    const auto rec = load_record(opt, cfg, "record", ctx);
    const auto spec = io::multisine_from_json(io::read_json(resolve(opt, get<std::string>(cfg, "multisine", ctx))));
    (void)analyze_record(rec, spec, discard_of(cfg, ctx, 0), get_or<double>(cfg, "threshold_db", 6.0, ctx), opt.out);
}

void write_bla(const BlaModel& bla, const fs::path& out) {
    std::vector<double> f, ph;
    for (std::size_t i = 0; i < bla.lines.size(); ++i) {
        f.push_back(bla.frequency(i));
        ph.push_back(std::arg(bla.frf[i]));
    }
    io::write_json(out / "bla.json", io::to_json(bla));
    io::write_columns_csv(out / "bla.csv", {"frequency_hz", "magnitude_db", "phase_rad", "var_total", "var_noise"},
                          {f, magnitudes_db(bla.frf), ph, bla.frf_variance_total, bla.frf_variance_noise});
}

void cmd_bla(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "bla";
    check_config(cfg, {"records", "multisine", "discard_periods"}, ctx);
    std::vector<SignalRecord> recs;
    for (const auto& p : get<std::vector<std::string>>(cfg, "records", ctx)) recs.push_back(io::read_record_csv(resolve(opt, p)));
    if (recs.empty()) throw ConfigError(ctx + ": records must not be empty");
    const auto spec = io::multisine_from_json(io::read_json(resolve(opt, get<std::string>(cfg, "multisine", ctx))));
    BlaOptions bo;
    bo.discard_periods = discard_of(cfg, ctx);
    write_bla(estimate_bla_spectral(recs, spec, bo), opt.out);
}

NarxOptions narx_options(const Json& j, const std::string& ctx) {
    NarxOptions o;
    o.na = get_or<int>(j, "na", o.na, ctx);
    o.nb = get_or<int>(j, "nb", o.nb, ctx);
    o.degree = get_or<int>(j, "degree", o.degree, ctx);
    o.direct_term = get_or<bool>(j, "direct_term", o.direct_term, ctx);
    o.include_constant = get_or<bool>(j, "include_constant", o.include_constant, ctx);
    return o;
}

void cmd_fit_narx(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "fit-narx";
    check_config(cfg, {"record", "na", "nb", "degree", "direct_term", "include_constant", "discard_periods"}, ctx);
    const auto rec = drop(load_record(opt, cfg, "record", ctx), discard_of(cfg, ctx, 0));
    io::write_json(opt.out / "narx.json", io::to_json(fit_narx(rec, narx_options(cfg, ctx))));
}

struct PnlssSettings {
    int state_dim = 2;
    int state_degree = 3;
    int output_degree = 0;
    PnlssFitOptions fit;
};

PnlssSettings pnlss_settings(const Json& j, const std::string& ctx) {
    PnlssSettings s;
    s.state_dim = get_or<int>(j, "state_dim", s.state_dim, ctx);
    s.state_degree = get_or<int>(j, "state_degree", s.state_degree, ctx);
    s.output_degree = get_or<int>(j, "output_degree", s.output_degree, ctx);
    const auto dom = get_or<std::string>(j, "domain", "frequency", ctx);
    if (dom == "frequency") s.fit.domain = CostDomain::frequency;
    else if (dom == "time") s.fit.domain = CostDomain::time;
    else throw ConfigError(ctx + ": domain must be 'frequency' or 'time'");
    s.fit.max_iterations = get_or<int>(j, "max_iterations", s.fit.max_iterations, ctx);
    return s;
}

PnlssFit fit_pnlss_from_bla(const BlaModel& bla, const SignalRecord& train, const PnlssSettings& s, Json& linear_out) {
    auto init = init_linear_from_bla(bla, s.state_dim, train);
    linear_out = io::to_json(init.model);
    PnlssModel start = init.model;
    start.set_nonlinear_degrees(s.state_degree, s.output_degree);
    return fit_pnlss(start, train, s.fit);
}

void cmd_fit_pnlss(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "fit-pnlss";
    check_config(cfg, {"record", "bla", "state_dim", "state_degree", "output_degree", "domain", "max_iterations",
                       "discard_periods"},
                 ctx);
    const auto train = drop(load_record(opt, cfg, "record", ctx), discard_of(cfg, ctx));
    const auto bla = io::bla_from_json(io::read_json(resolve(opt, get<std::string>(cfg, "bla", ctx))));
    Json linear;
    const auto fit = fit_pnlss_from_bla(bla, train, pnlss_settings(cfg, ctx), linear);
    io::write_json(opt.out / "linear.json", linear);
    io::write_json(opt.out / "pnlss.json", io::to_json(fit.model));
    io::write_json(opt.out / "pnlss_fit.json", io::to_json(fit.report));
}

RegularizerSpec regularizer_from_json(const Json* j) {
    RegularizerSpec r;
    if (!j) return r;
    const std::string ctx = "regularizer";
    io::reject_unknown_keys(*j, {"family", "tuning", "first", "second", "scale_grid", "decay_grid", "correlation_grid",
                                 "constant_variance"},
                            ctx);
    r.family = kernel_family_from_string(get_or<std::string>(*j, "family", to_string(r.family), ctx));
    r.tuning = tuning_from_string(get_or<std::string>(*j, "tuning", to_string(r.tuning), ctx));
    auto hyper = [&](const char* key, KernelHyper h) {
        if (!j->contains(key)) return h;
        const Json& s = j->at(key);
        io::reject_unknown_keys(s, {"scale", "decay", "correlation"}, ctx + "." + key);
        h.scale = get_or<double>(s, "scale", h.scale, ctx);
        h.decay = get_or<double>(s, "decay", h.decay, ctx);
        h.correlation = get_or<double>(s, "correlation", h.correlation, ctx);
        return h;
    };
    r.first = hyper("first", r.first);
    r.second = hyper("second", r.second);
    r.scale_grid = get_or<std::vector<double>>(*j, "scale_grid", r.scale_grid, ctx);
    r.decay_grid = get_or<std::vector<double>>(*j, "decay_grid", r.decay_grid, ctx);
    r.correlation_grid = get_or<std::vector<double>>(*j, "correlation_grid", r.correlation_grid, ctx);
    r.constant_variance = get_or<double>(*j, "constant_variance", r.constant_variance, ctx);
    return r;
}

void cmd_fit_volterra(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "fit-volterra";
    check_config(cfg, {"record", "m", "degree", "regularizer", "discard_periods"}, ctx);
    const auto rec = drop(load_record(opt, cfg, "record", ctx), discard_of(cfg, ctx, 0));
    const auto reg = regularizer_from_json(cfg.contains("regularizer") ? &cfg.at("regularizer") : nullptr);
    const auto mdl = fit_volterra(rec, get<int>(cfg, "m", ctx), get_or<int>(cfg, "degree", 2, ctx), reg);
    io::write_json(opt.out / "volterra.json", io::to_json(mdl));
}

void cmd_decouple(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "decouple";
    check_config(cfg, {"seed", "polymap", "pnlss", "rank", "branch_degree", "mode", "num_points", "test_points",
                       "domain", "output_weights", "max_iterations"},
                 ctx);
    const auto seed = seed_of(cfg, opt, ctx);
    std::optional<PnlssModel> pnlss;
    PolyMap f;
    if (cfg.contains("pnlss")) {
        pnlss = io::pnlss_from_json(io::read_json(resolve(opt, get<std::string>(cfg, "pnlss", ctx))));
        f = pnlss->E;
        if (f.empty()) throw ConfigError(ctx + ": the PNLSS model has no state polynomial");
    } else {
        f = io::polymap_from_json(io::read_json(resolve(opt, get<std::string>(cfg, "polymap", ctx))));
    }
    ApproxOptions ao;
    ao.base.seed = seed;
    ao.base.num_points = get_or<std::size_t>(cfg, "num_points", ao.base.num_points, ctx);
    ao.base.test_points = get_or<std::size_t>(cfg, "test_points", ao.base.test_points, ctx);
    ao.output_weights = get_or<std::vector<double>>(cfg, "output_weights", {}, ctx);
    ao.max_iterations = get_or<int>(cfg, "max_iterations", ao.max_iterations, ctx);
    if (cfg.contains("domain")) {
        const Json& d = cfg.at("domain");
        io::reject_unknown_keys(d, {"type", "lower", "upper", "record"}, ctx + ".domain");
        const auto type = get<std::string>(d, "type", ctx + ".domain");
        if (type == "box") {
            PointCloud c;
            c.lower = io::vector_from_json(io::require(d, "lower", ctx), ctx);
            c.upper = io::vector_from_json(io::require(d, "upper", ctx), ctx);
            ao.base.domain = c;
        } else if (type == "empirical_range" || type == "trajectory") {
            if (!pnlss) throw ConfigError(ctx + ": trajectory domains need a PNLSS model");
            const auto rec = load_record(opt, d, "record", ctx + ".domain");
            const auto z = state_input_samples(*pnlss, rec.input);
            if (type == "trajectory") {
                PointCloud c;
                c.points = z;
                ao.base.domain = c;
            } else {
                ao.base.domain = PointCloud::empirical_range(z);
            }
        } else {
            throw ConfigError(ctx + ": domain type must be box, empirical_range or trajectory");
        }
    }
    const int rank = get<int>(cfg, "rank", ctx);
    const auto mode = get_or<std::string>(cfg, "mode", "approx", ctx);
    DecoupledFunction result;
    Json report;
    if (mode == "exact") {
        ao.base.branch_degree = get_or<int>(cfg, "branch_degree", 0, ctx);
        const auto r = decouple_exact(f, rank, ao.base);
        result = r.function;
        report = Json{{"status", to_string(r.status)},
                      {"max_residual", r.max_residual},
                      {"rms_residual", r.rms_residual},
                      {"cpd_relative_error", r.cpd.relative_error},
                      {"cpd_sweeps", r.cpd.sweeps},
                      {"cpd_restarts", r.cpd.restarts}};
    } else if (mode == "approx") {
        const auto r = decouple_approx(f, rank, get<int>(cfg, "branch_degree", ctx), ao);
        result = r.function;
        report = io::to_json(r.report);
    } else if (mode == "sweep") {
        const auto all = decouple_sweep(f, rank, get<int>(cfg, "branch_degree", ctx), ao);
        std::vector<double> rr, tr, ho;
        Json reps = Json::array();
        for (std::size_t i = 0; i < all.size(); ++i) {
            rr.push_back(static_cast<double>(i + 1));
            tr.push_back(all[i].report.train_rms);
            ho.push_back(all[i].report.heldout_rms);
            reps.push_back(io::to_json(all[i].report));
        }
        io::write_columns_csv(opt.out / "sweep.csv", {"rank", "train_rms", "heldout_rms"}, {rr, tr, ho});
        result = all.back().function;
        report = Json{{"ranks", reps}};
    } else {
        throw ConfigError(ctx + ": mode must be exact, approx or sweep");
    }
    io::write_json(opt.out / "decoupled.json", io::to_json(result));
    io::write_json(opt.out / "decouple_report.json", report);
    if (pnlss) io::write_json(opt.out / "pnlss_decoupled.json", io::to_json(with_decoupled_state_map(*pnlss, result)));
}

// Simulated model output on a record; entries before `valid_from` are unusable.
struct Prediction {
    std::vector<double> yhat;
    std::size_t valid_from = 0;
};

Prediction predict(const std::string& type, const Json& model, const SignalRecord& rec, std::size_t discard) {
    Prediction p;
    const std::size_t skip = discard * rec.period_samples;
    if (type == "pnlss") {
        auto m = io::pnlss_from_json(model);
        m.x0.setZero();
        const auto sim = simulate_pnlss(m, rec.input);
        if (sim.status == SimStatus::diverged)
            throw DivergenceError("validate: PNLSS simulation diverged", sim.divergence_index);
        p.yhat = sim.output;
        p.valid_from = skip;
    } else if (type == "narx") {
        const auto m = io::narx_from_json(model);
        const std::vector<double> init(rec.output.begin(), rec.output.begin() + m.na);
        const auto sim = simulate_free_run(m, rec.input, init);
        if (sim.status == SimStatus::diverged)
            throw DivergenceError("validate: NARX simulation diverged", sim.divergence_index);
        p.yhat = sim.output;
        p.valid_from = std::max<std::size_t>(skip, m.max_lag());
    } else if (type == "volterra") {
        const auto m = io::volterra_from_json(model);
        const auto t = eval_volterra(m, rec.input);
        p.yhat = t.values;
        p.valid_from = std::max(skip, t.first_valid);
    } else if (type == "bla") {
        const auto res = stochastic_residual(rec, io::bla_from_json(model));
        p.yhat.resize(rec.size());
        for (std::size_t i = 0; i < rec.size(); ++i) p.yhat[i] = rec.output[i] - res.residual[i];
        p.valid_from = skip;
    } else {
        throw ConfigError("validate: model_type must be pnlss, narx, volterra or bla");
    }
    if (p.valid_from >= rec.size()) throw ConfigError("validate: nothing left after discarding the transient");
    return p;
}

Json validate_prediction(const SignalRecord& rec, const Prediction& p, int max_lag, const fs::path& out,
                         const std::string& stem) {
    const auto from = static_cast<std::ptrdiff_t>(p.valid_from);
    const std::vector<double> y(rec.output.begin() + from, rec.output.end());
    const std::vector<double> u(rec.input.begin() + from, rec.input.end());
    const std::vector<double> yh(p.yhat.begin() + from, p.yhat.end());
    const auto rep = validate_model(y, yh, u, max_lag);
    std::vector<double> lags;
    for (int l = 1; l <= max_lag; ++l) lags.push_back(l);
    io::write_columns_csv(out / (stem + "_correlations.csv"), {"lag", "autocorr", "crosscorr"},
                          {lags, rep.tests.autocorr.values, rep.tests.crosscorr.values});
    std::vector<double> idx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) idx[i] = static_cast<double>(p.valid_from + i);
    io::write_columns_csv(out / (stem + "_prediction.csv"), {"sample", "output", "model"}, {idx, y, yh});
    Json j = io::to_json(rep);
    io::write_json(out / (stem + ".json"), j);
    return j;
}

void cmd_validate(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "validate";
    check_config(cfg, {"record", "model", "model_type", "max_lag", "discard_periods", "train_record"}, ctx);
    const auto rec = load_record(opt, cfg, "record", ctx);
    const auto type = get<std::string>(cfg, "model_type", ctx);
    const Json model = io::read_json(resolve(opt, get<std::string>(cfg, "model", ctx)));
    const auto discard = discard_of(cfg, ctx);
    const int max_lag = get_or<int>(cfg, "max_lag", 25, ctx);
    Json j = validate_prediction(rec, predict(type, model, rec, discard), max_lag, opt.out, "validation");
    if (cfg.contains("train_record")) {
        if (type != "pnlss") throw ConfigError(ctx + ": domain coverage needs a PNLSS model");
        auto m = io::pnlss_from_json(model);
        m.x0.setZero();
        const auto train = load_record(opt, cfg, "train_record", ctx);
        const auto cov = domain_coverage(state_input_samples(m, train.input), state_input_samples(m, rec.input));
        j["domain_coverage"] = cov.fraction_inside;
        j["coverage_radius"] = cov.radius;
        j["extrapolation_flag"] = cov.extrapolation_flag;
        io::write_json(opt.out / "validation.json", j);
    }
}

// ---------------------------------------------------------------- pipeline

struct Stage {
    std::string name;
    std::vector<std::string> outputs;
    std::function<void(const fs::path&)> run;
};

template <class E>
[[noreturn]] void rethrow_with_stage(const std::string& stage, const E& e) {
    throw E("stage '" + stage + "': " + e.what());
}

void cmd_pipeline(const Json& cfg, const RunOptions& opt) {
    const std::string ctx = "pipeline";
    check_config(cfg, {"seed", "excitation", "system", "noise", "periods", "realizations", "discard_periods",
                       "threshold_db", "model"},
                 ctx);
    const auto seed = seed_of(cfg, opt, ctx);
    const Json& exc = io::require(cfg, "excitation", ctx);
    const Json& sys = io::require(cfg, "system", ctx);
    const Json noise_cfg = cfg.contains("noise") ? cfg.at("noise") : Json::object();
    const auto periods = get_or<std::size_t>(cfg, "periods", 4, ctx);
    const auto count = get_or<std::size_t>(cfg, "realizations", 4, ctx);
    const auto discard = discard_of(cfg, ctx);
    const double threshold = get_or<double>(cfg, "threshold_db", 6.0, ctx);
    const Json model_cfg = cfg.contains("model") ? cfg.at("model") : Json{{"type", "pnlss"}};
    if (count < 1) throw ConfigError(ctx + ": realizations must be at least 1");
    if (periods < discard + 2) throw ConfigError(ctx + ": need at least discard_periods + 2 periods");
    const auto model_type = get_or<std::string>(model_cfg, "type", "pnlss", ctx + ".model");
    if (model_type == "pnlss")
        io::reject_unknown_keys(model_cfg, {"type", "state_dim", "state_degree", "output_degree", "domain", "max_iterations"},
                                ctx + ".model");
    else if (model_type == "narx")
        io::reject_unknown_keys(model_cfg, {"type", "na", "nb", "degree", "direct_term", "include_constant"}, ctx + ".model");
    else if (model_type == "volterra")
        io::reject_unknown_keys(model_cfg, {"type", "m", "degree", "regularizer"}, ctx + ".model");
    else
        throw ConfigError(ctx + ": model type must be pnlss, narx or volterra");
    {
        const auto g = grid_kind_from_string(get_or<std::string>(exc, "grid_kind", "full", ctx));
        if (g == GridKind::full) throw ConfigError(ctx + ": the distortion analysis needs an odd grid_kind");
    }
    const Simulator sim = system_from_json(sys);
    const NoiseSpec noise = noise_from_json(&noise_cfg);

    const fs::path dir = opt.out;
    fs::create_directories(dir);
    auto rec_name = [](std::size_t i) { return indexed("simulate/record", i, ".csv"); };

    std::vector<Stage> stages;
    stages.push_back({"design", {"design/multisine.json"}, [&](const fs::path& d) {
                          io::write_json(d / "design/multisine.json", io::to_json(excitation_from_json(exc, seed)));
                      }});
    std::vector<std::string> sim_outputs;
    for (std::size_t i = 0; i <= count; ++i) sim_outputs.push_back(rec_name(i));
    stages.push_back({"simulate", sim_outputs, [&](const fs::path& d) {
                          const auto base = io::multisine_from_json(io::read_json(d / "design/multisine.json"));
                          // count estimation realizations plus one fresh validation realization
                          const auto reals = simulate_realizations(base, sim, noise, periods, count + 1, seed);
                          for (std::size_t i = 0; i < reals.size(); ++i) io::write_record_csv(d / rec_name(i), reals[i].record);
                      }});
    stages.push_back({"analyze", {"analyze/distortion.json", "analyze/lines.csv"}, [&](const fs::path& d) {
                          const auto spec = io::multisine_from_json(io::read_json(d / "design/multisine.json"));
                          fs::create_directories(d / "analyze");
                          (void)analyze_record(io::read_record_csv(d / rec_name(0)), spec, discard, threshold, d / "analyze");
                      }});
    stages.push_back({"bla", {"bla/bla.json", "bla/bla.csv"}, [&](const fs::path& d) {
                          const auto spec = io::multisine_from_json(io::read_json(d / "design/multisine.json"));
                          std::vector<SignalRecord> recs;
                          for (std::size_t i = 0; i < count; ++i) recs.push_back(io::read_record_csv(d / rec_name(i)));
                          BlaOptions bo;
                          bo.discard_periods = discard;
                          fs::create_directories(d / "bla");
                          write_bla(estimate_bla_spectral(recs, spec, bo), d / "bla");
                      }});
    stages.push_back({"fit", {"fit/model.json"}, [&](const fs::path& d) {
                          const auto train = io::read_record_csv(d / rec_name(0)).drop_periods(discard);
                          fs::create_directories(d / "fit");
                          Json model;
                          if (model_type == "pnlss") {
                              const auto bla = io::bla_from_json(io::read_json(d / "bla/bla.json"));
                              Json linear;
                              const auto fit = fit_pnlss_from_bla(bla, train, pnlss_settings(model_cfg, ctx), linear);
                              io::write_json(d / "fit/fit_report.json", io::to_json(fit.report));
                              model = io::to_json(fit.model);
                          } else if (model_type == "narx") {
                              model = io::to_json(fit_narx(train, narx_options(model_cfg, ctx)));
                          } else {
                              const auto reg = regularizer_from_json(model_cfg.contains("regularizer") ? &model_cfg.at("regularizer") : nullptr);
                              model = io::to_json(fit_volterra(train, get<int>(model_cfg, "m", ctx),
                                                               get_or<int>(model_cfg, "degree", 2, ctx), reg));
                          }
                          io::write_json(d / "fit/model.json", model);
                      }});
    stages.push_back({"validate", {"validate/model.json", "validate/bla.json", "summary.json"}, [&](const fs::path& d) {
                          const auto val = io::read_record_csv(d / rec_name(count));
                          fs::create_directories(d / "validate");
                          const Json mv = validate_prediction(val, predict(model_type, io::read_json(d / "fit/model.json"), val, discard),
                                                              25, d / "validate", "model");
                          const Json bv = validate_prediction(val, predict("bla", io::read_json(d / "bla/bla.json"), val, discard),
                                                              25, d / "validate", "bla");
                          const Json dist = io::read_json(d / "analyze/distortion.json");
                          const double excess = dist.at("distortion_excess_db").get<double>();
                          std::string verdict = "linear adequate";
                          if (excess > threshold) {
                              char buf[96];
                              std::snprintf(buf, sizeof buf, "nonlinear recommended, headroom %.1f dB", excess);
                              verdict = buf;
                          }
                          io::write_json(d / "summary.json",
                                         Json{{"verdict", verdict},
                                              {"distortion_excess_db", excess},
                                              {"threshold_db", threshold},
                                              {"model_type", model_type},
                                              {"model_rms_error", mv.at("rms_error")},
                                              {"bla_rms_error", bv.at("rms_error")},
                                              {"model_fit_percent", mv.at("fit_percent")},
                                              {"bla_fit_percent", bv.at("fit_percent")}});
                      }});

    // Stage hash: the config slices a stage depends on, chained through the previous stage.
    const std::map<std::string, Json> inputs{
        {"design", Json{{"excitation", exc}, {"seed", seed}}},
        {"simulate", Json{{"system", sys}, {"noise", noise_cfg}, {"periods", periods}, {"realizations", count}}},
        {"analyze", Json{{"discard_periods", discard}, {"threshold_db", threshold}}},
        {"bla", Json{{"discard_periods", discard}}},
        {"fit", model_cfg},
        {"validate", Json{{"threshold_db", threshold}}}};

    Json previous = Json::object();
    const fs::path manifest_path = dir / "manifest.json";
    if (opt.resume && fs::exists(manifest_path)) {
        const Json m = io::read_json(manifest_path);
        if (m.contains("stages"))
            for (const auto& s : m.at("stages")) previous[s.at("name").get<std::string>()] = s.at("hash");
    }
    Json manifest{{"schema_version", kSchemaVersion}, {"stages", Json::array()}};
    std::uint64_t chain = 0;
    bool upstream_ran = false;
    for (const auto& st : stages) {
        chain = fnv1a(std::to_string(chain) + st.name + inputs.at(st.name).dump());
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(chain));
        bool have = opt.resume && !upstream_ran && previous.contains(st.name) && previous.at(st.name) == hex;
        for (const auto& o : st.outputs) have = have && fs::exists(dir / o);
        if (!have) {
            upstream_ran = true;
            try {
                st.run(dir);
            } catch (const DivergenceError& e) {
                throw DivergenceError("stage '" + st.name + "': " + e.what(), e.index());
            } catch (const ConfigError& e) {
                rethrow_with_stage(st.name, e);
            } catch (const NumericError& e) {
                rethrow_with_stage(st.name, e);
            } catch (const std::exception& e) {
                throw NumericError("stage '" + st.name + "': " + e.what());
            }
        }
        manifest["stages"].push_back(Json{{"name", st.name}, {"hash", hex}, {"outputs", st.outputs}, {"ran", !have}});
        Json stable = manifest;
        for (auto& s : stable["stages"]) s.erase("ran");
        io::write_json(manifest_path, stable);
    }
}

const std::map<std::string, void (*)(const Json&, const RunOptions&)>& dispatch() {
    static const std::map<std::string, void (*)(const Json&, const RunOptions&)> table{
        {"design", cmd_design},         {"simulate", cmd_simulate},         {"analyze", cmd_analyze},
        {"bla", cmd_bla},               {"fit-narx", cmd_fit_narx},         {"fit-pnlss", cmd_fit_pnlss},
        {"fit-volterra", cmd_fit_volterra}, {"decouple", cmd_decouple},     {"validate", cmd_validate},
        {"pipeline", cmd_pipeline}};
    return table;
}

}  // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"design",       "simulate", "analyze",  "bla",      "fit-narx",
                                                "fit-pnlss",    "fit-volterra", "decouple", "validate", "pipeline"};
    return names;
}

std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void run_command(const std::string& command, const Json& config, const RunOptions& options) {
    const auto it = dispatch().find(command);
    if (it == dispatch().end()) throw ConfigError("unknown command '" + command + "'");
    fs::create_directories(options.out);
    it->second(config, options);
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return config_error;
    if (dynamic_cast<const DivergenceError*>(&e)) return divergence;
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return config_error;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return config_error;
    return numeric_failure;
}

int main_entry(int argc, char** argv) {
    CLI::App app{"Nonlinear system identification toolkit"};
    app.require_subcommand(1);
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool resume = false;
    for (const auto& name : command_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "JSON config file")->required();
        sub->add_option("--out", out, "Output directory");
        sub->add_option("--seed", seed, "Override the config seed");
        sub->add_option("--threads", threads, "Worker threads (default: NLSID_THREADS or all cores)");
        if (name == "pipeline") sub->add_flag("--resume", resume, "Re-run only stages whose outputs are stale");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config_error;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (threads) {
            set_thread_count(*threads);
        } else if (const char* env = std::getenv("NLSID_THREADS")) {
            char* end = nullptr;
            const unsigned long n = std::strtoul(env, &end, 10);
            if (end == env || *end != '\0') throw ConfigError("NLSID_THREADS must be a non-negative integer");
            set_thread_count(static_cast<unsigned>(n));
        }
        RunOptions opt;
        opt.out = out;
        opt.seed = seed;
        opt.resume = resume;
        opt.base_dir = fs::path(config).parent_path();
        if (opt.base_dir.empty()) opt.base_dir = ".";
        run_command(command, io::read_json(config), opt);
    } catch (const std::exception& e) {
        std::cerr << "nlsid " << command << ": " << e.what() << '\n';
        return exit_code_for(e);
    }
    return ok;
}

}  // namespace nlsid::cli
