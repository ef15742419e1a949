#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "nlsid/io.hpp"
#include "nlsid/signals.hpp"

using namespace nlsid;
namespace fs = std::filesystem;
using Json = io::Json;

namespace {

struct Run {
    int code = -1;
    std::string err;
};

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nlsid_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Run run_cli(const std::string& args, const fs::path& dir) {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + NLSID_CLI_PATH + "\" " + args + " 2> \"" + err.string() + "\" > /dev/null";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream f(err);
    std::stringstream ss;
    ss << f.rdbuf();
    r.err = ss.str();
    return r;
}

fs::path write_config(const fs::path& dir, const Json& j) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

// Second column of a `sample,input` table.
std::vector<double> read_signal(const fs::path& p) {
    std::ifstream f(p);
    std::string line;
    std::getline(f, line);
    std::vector<double> v;
    while (std::getline(f, line)) v.push_back(std::stod(line.substr(line.find(',') + 1)));
    return v;
}

Json design_config(const Json& excitation) {
    return Json{{"schema_version", 1}, {"seed", 5}, {"excitation", excitation}};
}

Json pipeline_config(const Json& system, double rms, const Json& model) {
    return Json{{"schema_version", 1},
                {"seed", 3},
                {"excitation",
                 {{"period_samples", 512}, {"last_line", 100}, {"grid_kind", "odd_random_skip"}, {"rms", rms}}},
                {"system", system},
                {"noise", {{"measurement_std", 1e-3}}},
                {"periods", 9},
                {"realizations", 2},
                {"discard_periods", 1},
                {"model", model}};
}

std::string verdict_of(const fs::path& out) { return io::read_json(out / "summary.json").at("verdict").get<std::string>(); }

}  // namespace

TEST(Cli, DesignOddGridHasNoEvenEnergy) {
    const auto dir = fresh_dir("design");
    const auto cfg = write_config(
        dir, design_config({{"period_samples", 256}, {"last_line", 61}, {"grid_kind", "odd_random_skip"}}));
    const auto r = run_cli("design --config " + cfg.string() + " --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto u = read_signal(dir / "out" / "signal.csv");
    ASSERT_EQ(u.size(), 256u);
    const auto X = dft(u).bins;
    double even = 0.0, total = 0.0;
    for (std::size_t k = 1; k < 128; ++k) {
        total += std::norm(X[k]);
        if (k % 2 == 0) even += std::norm(X[k]);
    }
    EXPECT_LT(even, 1e-20 * total);
}

TEST(Cli, ExplicitLinesWithOneHertzResolution) {
    const auto dir = fresh_dir("lines");
    const std::vector<std::size_t> lines{1, 3, 5, 7, 9, 11, 13, 15, 19, 23};
    const auto cfg = write_config(dir, design_config({{"sample_rate_hz", 64.0},
                                                      {"period_samples", 64},
                                                      {"grid_kind", "odd_random_skip"},
                                                      {"lines", lines}}));
    ASSERT_EQ(run_cli("design --config " + cfg.string() + " --out " + (dir / "out").string(), dir).code, 0);
    const auto spec = io::multisine_from_json(io::read_json(dir / "out" / "multisine.json"));
    EXPECT_EQ(spec.excited_lines, lines);
    EXPECT_DOUBLE_EQ(spec.f0(), 1.0);
    const auto X = dft(read_signal(dir / "out" / "signal.csv")).bins;
    for (std::size_t k = 1; k < 32; ++k) {
        const bool excited = std::find(lines.begin(), lines.end(), k) != lines.end();
        if (excited)
            EXPECT_GT(std::abs(X[k]), 1.0) << k;
        else
            EXPECT_LT(std::abs(X[k]), 1e-10) << k;
    }
}

TEST(Cli, ConfigErrorsExitWithTwo) {
    const auto dir = fresh_dir("errors");
    const Json exc{{"period_samples", 64}, {"last_line", 21}};
    Json no_seed = design_config(exc);
    no_seed.erase("seed");
    auto r = run_cli("design --config " + write_config(dir, no_seed).string() + " --out " + dir.string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("missing required field 'seed'"), std::string::npos) << r.err;

    // --seed on the command line supplies it
    EXPECT_EQ(run_cli("design --seed 4 --config " + write_config(dir, no_seed).string() + " --out " + dir.string(), dir).code,
              0);

    Json unknown = design_config(exc);
    unknown["sead"] = 1;
    r = run_cli("design --config " + write_config(dir, unknown).string() + " --out " + dir.string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("sead"), std::string::npos);

    Json schema = design_config(exc);
    schema["schema_version"] = 2;
    EXPECT_EQ(run_cli("design --config " + write_config(dir, schema).string() + " --out " + dir.string(), dir).code, 2);

    EXPECT_EQ(run_cli("design --config " + (dir / "nope.json").string(), dir).code, 2);
    EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
}

TEST(Cli, PipelineOnALinearSystem) {
    const auto dir = fresh_dir("pipe_linear");
    const auto cfg = write_config(dir, pipeline_config({{"type", "static"}, {"poly", {0.0, 2.0}}}, 1.0,
                                                       {{"type", "narx"}, {"na", 0}, {"nb", 0}, {"degree", 1}}));
    const auto r = run_cli("pipeline --config " + cfg.string() + " --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(verdict_of(dir / "out"), "linear adequate");
    const auto manifest = io::read_json(dir / "out" / "manifest.json");
    ASSERT_EQ(manifest.at("stages").size(), 6u);
    EXPECT_EQ(manifest.at("stages")[0].at("name"), "design");
    EXPECT_EQ(manifest.at("stages")[5].at("name"), "validate");
}

TEST(Cli, PipelineOnADrivenDuffingRecommendsANonlinearModel) {
    const auto dir = fresh_dir("pipe_duffing");
    const auto cfg = write_config(
        dir, pipeline_config({{"type", "duffing"}, {"resonance_fraction", 0.1}, {"zeta", 0.05}, {"cubic_stiffness", 0.01}},
                             0.5, {{"type", "pnlss"}, {"state_dim", 2}, {"state_degree", 3}, {"max_iterations", 5}}));
    const auto r = run_cli("pipeline --config " + cfg.string() + " --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto v = verdict_of(dir / "out");
    EXPECT_EQ(v.rfind("nonlinear recommended, headroom ", 0), 0u) << v;
    EXPECT_NE(v.find(" dB"), std::string::npos);
    const auto summary = io::read_json(dir / "out" / "summary.json");
    EXPECT_LT(summary.at("model_rms_error").get<double>(), 0.5 * summary.at("bla_rms_error").get<double>());
}

TEST(Cli, ResumeRerunsOnlyStaleStages) {
    const auto dir = fresh_dir("resume");
    const auto out = dir / "out";
    const auto cfg = write_config(dir, pipeline_config({{"type", "static"}, {"poly", {0.0, 1.0, 0.0, 0.2}}}, 1.0,
                                                       {{"type", "narx"}, {"na", 0}, {"nb", 1}, {"degree", 3}}));
    const std::string args = "pipeline --resume --config " + cfg.string() + " --out " + out.string();
    ASSERT_EQ(run_cli(args, dir).code, 0);
    const auto manifest = io::read_json(out / "manifest.json");
    const auto design_time = fs::last_write_time(out / "design/multisine.json");
    const auto fit_time = fs::last_write_time(out / "fit/model.json");

    // Nothing stale: every output stays untouched.
    ASSERT_EQ(run_cli(args, dir).code, 0);
    EXPECT_EQ(fs::last_write_time(out / "design/multisine.json"), design_time);
    EXPECT_EQ(fs::last_write_time(out / "fit/model.json"), fit_time);
    EXPECT_EQ(io::read_json(out / "manifest.json"), manifest);

    // A missing output reruns its stage and everything downstream of it.
    fs::remove(out / "summary.json");
    ASSERT_EQ(run_cli(args, dir).code, 0);
    EXPECT_TRUE(fs::exists(out / "summary.json"));
    EXPECT_EQ(fs::last_write_time(out / "design/multisine.json"), design_time);
    EXPECT_EQ(fs::last_write_time(out / "fit/model.json"), fit_time);

    // A changed model config invalidates fit and validate but not the earlier stages.
    Json changed = io::read_json(cfg);
    changed["model"]["degree"] = 2;
    write_config(dir, changed);
    ASSERT_EQ(run_cli(args, dir).code, 0);
    EXPECT_EQ(fs::last_write_time(out / "design/multisine.json"), design_time);
    EXPECT_NE(fs::last_write_time(out / "fit/model.json"), fit_time);
    const auto after = io::read_json(out / "manifest.json");
    EXPECT_EQ(after.at("stages")[2].at("hash"), manifest.at("stages")[2].at("hash"));
    EXPECT_NE(after.at("stages")[4].at("hash"), manifest.at("stages")[4].at("hash"));
}
