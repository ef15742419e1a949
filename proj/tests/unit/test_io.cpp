#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "nlsid/error.hpp"
#include "nlsid/io.hpp"
#include "nlsid/simulators.hpp"

using namespace nlsid;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("nlsid_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

PolyMap random_map(int outputs, int vars, int dmin, int dmax, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    MonomialBasis b(vars, dmin, dmax);
    Eigen::MatrixXd c(outputs, static_cast<Eigen::Index>(b.size()));
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = nd(gen);
    return PolyMap(b, c);
}

PnlssModel small_pnlss() {
    Eigen::Matrix2d A;
    A << 0.5, 0.1, -0.2, 0.3;
    PnlssModel m = PnlssModel::linear(A, Eigen::Vector2d(1.0, 1.0 / 3.0), Eigen::RowVector2d(0.7, -0.1), 0.05, 3, 2);
    m.E = random_map(2, 3, 2, 3, 1);
    m.F = random_map(1, 3, 2, 2, 2);
    m.x0 = Eigen::Vector2d(1e-300, -0.1);
    return m;
}

}  // namespace

TEST(FormatDouble, ShortestRoundTrip) {
    EXPECT_EQ(io::format_double(0.1), "0.1");
    EXPECT_EQ(io::format_double(1.0), "1");
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> exps(-300.0, 300.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = std::pow(10.0, exps(gen)) * (i % 2 ? -1.0 : 1.0) / 3.0;
        EXPECT_EQ(std::strtod(io::format_double(v).c_str(), nullptr), v);
    }
    const double tiny = std::numeric_limits<double>::denorm_min();
    EXPECT_EQ(std::strtod(io::format_double(tiny).c_str(), nullptr), tiny);
}

TEST(Json, UnknownKeysAreRejectedByName) {
    const io::Json j = {{"a", 1}, {"typo", 2}};
    try {
        io::reject_unknown_keys(j, {"a", "b"}, "config");
        FAIL() << "no exception";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("typo"), std::string::npos);
    }
    EXPECT_NO_THROW(io::reject_unknown_keys(j, {"a", "typo"}, "config"));
    EXPECT_THROW((void)io::require(j, "b", "config"), ConfigError);
}

TEST(Json, MultisineRoundTrip) {
    MultisineDesign d;
    d.period_samples = 256;
    d.last_line = 61;
    d.grid_kind = GridKind::odd_random_skip;
    d.sample_rate_hz = 250.0;
    d.seed = 9;
    const auto s = make_multisine(d);
    const auto back = io::multisine_from_json(io::to_json(s));
    EXPECT_EQ(back.excited_lines, s.excited_lines);
    EXPECT_EQ(back.amplitudes, s.amplitudes);
    EXPECT_EQ(back.phases, s.phases);
    EXPECT_EQ(back.grid_kind, s.grid_kind);
    EXPECT_EQ(back.sample_rate_hz, 250.0);
    EXPECT_EQ(back.period_samples, 256u);
}

TEST(Json, PolyMapAndDecoupledRoundTrip) {
    const auto p = random_map(2, 3, 0, 3, 4);
    const auto q = io::polymap_from_json(io::to_json(p));
    EXPECT_EQ(q.basis.exponents(), p.basis.exponents());
    EXPECT_EQ(q.coefficients, p.coefficients);

    DecoupledFunction d;
    d.W = Eigen::Matrix2d::Random();
    d.V = Eigen::Matrix2d::Random();
    d.branches = {{0.1, 0.2, 0.3}, {1.0 / 7.0, -2.0}};
    const auto e = io::decoupled_from_json(io::to_json(d));
    EXPECT_EQ(e.W, d.W);
    EXPECT_EQ(e.V, d.V);
    EXPECT_EQ(e.branches, d.branches);
}

TEST(Json, PnlssRoundTripIsBitExact) {
    const auto m = small_pnlss();
    const auto back = io::pnlss_from_json(io::to_json(m));
    EXPECT_EQ(back.A, m.A);
    EXPECT_EQ(back.B, m.B);
    EXPECT_EQ(back.C, m.C);
    EXPECT_EQ(back.D, m.D);
    EXPECT_EQ(back.E.coefficients, m.E.coefficients);
    EXPECT_EQ(back.F.coefficients, m.F.coefficients);
    EXPECT_EQ(back.x0, m.x0);
    EXPECT_EQ(io::to_json(back).dump(), io::to_json(m).dump());

    auto md = m;
    DecoupledFunction d;
    d.W = Eigen::MatrixXd::Ones(2, 1);
    d.V = Eigen::MatrixXd::Ones(3, 1);
    d.branches = {{0.0, 0.0, 0.5}};
    md.state_decoupled = d;
    const auto bd = io::pnlss_from_json(io::to_json(md));
    ASSERT_TRUE(bd.state_decoupled);
    EXPECT_EQ(bd.state_decoupled->branches, d.branches);
}

TEST(Json, NarxVolterraAndBlaRoundTrip) {
    NarxModel n;
    n.na = 2;
    n.nb = 1;
    n.direct_term = true;
    n.map = random_map(1, 4, 1, 2, 5);
    n.regressor_layout = {"y(t-1)", "y(t-2)", "u(t)", "u(t-1)"};
    const auto nb = io::narx_from_json(io::to_json(n));
    EXPECT_EQ(nb.map.coefficients, n.map.coefficients);
    EXPECT_EQ(nb.regressor_layout, n.regressor_layout);
    EXPECT_EQ(nb.na, 2);

    VolterraModel v;
    v.m = 3;
    v.h0 = 0.25;
    v.h1 = Eigen::Vector3d(1.0, 0.1, 0.01);
    v.h2 = Eigen::Matrix3d::Identity() / 3.0;
    v.family = KernelFamily::tc;
    v.first = {2.0, 0.7, 0.0};
    const auto vb = io::volterra_from_json(io::to_json(v));
    EXPECT_EQ(vb.h1, v.h1);
    EXPECT_EQ(vb.h2, v.h2);
    EXPECT_EQ(vb.family, KernelFamily::tc);
    EXPECT_EQ(vb.first.scale, 2.0);

    BlaModel b;
    b.sample_rate_hz = 10.0;
    b.period_samples = 64;
    b.lines = {1, 2, 3};
    b.frf = {{1.0, -0.5}, {0.3, 0.1}, {0.0, 1.0 / 3.0}};
    b.frf_variance_total = {1e-3, 2e-3, 3e-3};
    b.frf_variance_noise = {1e-4, 2e-4, 3e-4};
    b.num_realizations = 4;
    b.num_periods = 2;
    const auto bb = io::bla_from_json(io::to_json(b));
    EXPECT_EQ(bb.lines, b.lines);
    EXPECT_EQ(bb.frf, b.frf);
    EXPECT_EQ(bb.frf_variance_noise, b.frf_variance_noise);
    EXPECT_EQ(bb.num_periods, 2u);
}

TEST(Json, FileRoundTripAndMalformedInput) {
    const auto dir = scratch_dir("json");
    const auto m = small_pnlss();
    io::write_json(dir / "m.json", io::to_json(m));
    EXPECT_EQ(io::pnlss_from_json(io::read_json(dir / "m.json")).A, m.A);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW((void)io::read_json(dir / "bad.json"), ConfigError);
    EXPECT_THROW((void)io::read_json(dir / "missing.json"), std::exception);
    io::Json j = io::to_json(m);
    j["A"] = io::Json::array({io::Json::array({1.0, 2.0})});
    EXPECT_THROW((void)io::pnlss_from_json(j), ConfigError);
}

TEST(Csv, RecordRoundTrip) {
    const auto dir = scratch_dir("csv");
    SignalRecord rec;
    rec.sample_rate_hz = 125.0;
    rec.period_samples = 16;
    rec.num_periods = 3;
    rec.input = white_noise(48, 1.0, 1);
    rec.output = white_noise(48, 1e-5, 2);
    io::write_record_csv(dir / "r.csv", rec);
    const auto back = io::read_record_csv(dir / "r.csv");
    EXPECT_EQ(back.input, rec.input);
    EXPECT_EQ(back.output, rec.output);
    EXPECT_EQ(back.period_samples, 16u);
    EXPECT_EQ(back.num_periods, 3u);
    EXPECT_EQ(back.sample_rate_hz, 125.0);
}

TEST(Csv, PlainTwoColumnFileNeedsAPeriod) {
    const auto dir = scratch_dir("plain");
    {
        std::ofstream f(dir / "p.csv");
        f << "input,output\n";
        for (int t = 0; t < 8; ++t) f << t << "," << 2 * t << "\n";
    }
    const auto rec = io::read_record_csv(dir / "p.csv", 1.0, 4);
    EXPECT_EQ(rec.num_periods, 2u);
    EXPECT_EQ(rec.output[3], 6.0);
    EXPECT_THROW((void)io::read_record_csv(dir / "p.csv", 1.0, 3), ConfigError);
}

TEST(Csv, ColumnsMustShareALength) {
    const auto dir = scratch_dir("cols");
    EXPECT_NO_THROW(io::write_columns_csv(dir / "ok.csv", {"a", "b"}, {{1.0, 2.0}, {3.0, 4.0}}));
    EXPECT_THROW(io::write_columns_csv(dir / "bad.csv", {"a", "b"}, {{1.0, 2.0}, {3.0}}), ConfigError);
}
