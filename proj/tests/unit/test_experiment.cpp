#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qtat/experiment.hpp"
#include "qtat/field_io.hpp"

using namespace qtat;
namespace fs = std::filesystem;

#ifndef QTAT_TEST_DATA
#define QTAT_TEST_DATA "."
#endif

namespace {

fs::path scratch(const std::string &name) {
    fs::path p = fs::temp_directory_path() / ("qtat_unit_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path &p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

ExperimentManifest small(const std::string &name) {
    ExperimentManifest m;
    m.grid.n = 48;
    m.output_dir = scratch(name).string();
    return m;
}

}  // namespace

TEST_CASE("manifest round trip and hash") {
    ExperimentManifest m;
    m.grid.n = 100;
    m.k = 5.5;
    m.noise.sigma = 2.5e-4;
    m.noise.covariance = CovarianceKind::Exponential;
    m.phantom.kind = PhantomKind::SmoothInclusion;
    m.phantom.features = {{{0.1, -0.2}, 0.03, 0.02, 0.15}};
    m.sweep.sigmas = {1e-4, 3e-4};
    m.seed = 18446744073709551615ULL;
    const json j = to_json(m);
    const ExperimentManifest back = manifest_from_json(json::parse(j.dump()));
    CHECK(to_json(back) == j);
    CHECK(manifest_hash(back) == manifest_hash(m));
    CHECK(manifest_hash(m).size() == 16);

    ExperimentManifest moved = m;
    moved.output_dir = "elsewhere";
    CHECK(manifest_hash(moved) == manifest_hash(m));
    moved.seed = 1;
    CHECK(manifest_hash(moved) != manifest_hash(m));
}

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("manifest schema errors") {
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 1}, {"surprise", 0}}), ConfigError);
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 2}}), ConfigError);
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 1}, {"grid", {{"n", -3}}}}), ConfigError);
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 1}, {"grid", {{"n", 64.5}}}}), ConfigError);
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 1}, {"k", "six"}}), ConfigError);
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 1}, {"noise", {{"p", 0.5}}}}), ParameterError);
    CHECK_THROWS_AS(manifest_from_json(json{{"version", 1}, {"phantom", {{"kind", "blob"}}}}), ConfigError);
    CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), FileNotFoundError);
    CHECK_NOTHROW(manifest_from_json(json{{"version", 1}}));
}

TEST_CASE("phantoms stay within bounds and are smooth") {
    Grid g(2, 64, 0.5);
    auto q = default_phantom().sample(g);
    CHECK(min_value(q) >= 0.03 - 1e-12);
    CHECK(max_value(q) <= 0.0601);

    Phantom inc;
    inc.kind = PhantomKind::SmoothInclusion;
    inc.features = {{{0.0, 0.0}, 0.03, 0.02, 0.2}};
    auto qi = inc.sample(g);
    CHECK(qi[g.ravel({32, 32, 0})] == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(qi[0] == doctest::Approx(0.03).epsilon(1e-3));

    Phantom hot = default_phantom();
    hot.features[0].amplitude = 0.2;
    CHECK_THROWS_AS(hot.sample(g), ParameterError);

    Phantom flat;
    flat.kind = PhantomKind::Constant;
    flat.background = 0.04;
    const RealField qf = flat.sample(g);
    for (double v : qf.values()) CHECK(v == 0.04);
    CHECK(phantom_kind_from_string("smooth_inclusion") == PhantomKind::SmoothInclusion);
}

TEST_CASE("midline slices") {
    Grid g(2, 33, 0.5);
    Phantom flat;
    flat.kind = PhantomKind::Constant;
    const std::string t = midline_table({{"q_o", flat.sample(g)}}, "");
    std::istringstream is(t);
    std::string line;
    std::getline(is, line);
    CHECK(line == "# x q_o");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        CHECK(line.substr(line.find(' ') + 1) == "0.029999999999999999");
    }
    CHECK(rows == 33);
}

TEST_CASE("default phantom midline matches the stored regression file") {
    Grid g(2, 65, 0.5);
    const std::string t = midline_table({{"q_o", default_phantom().sample(g)}}, "");
    CHECK(t == slurp(fs::path(QTAT_TEST_DATA) / "midline_default_65.dat"));
}

TEST_CASE("log-log slope") {
    CHECK(loglog_slope({1, 2, 4}, {3, 12, 48}) == doctest::Approx(2.0));
    CHECK(loglog_slope({0.01, 0.02}, {5, 5 * std::pow(2.0, 0.7)}) == doctest::Approx(0.7));
    CHECK_THROWS_AS(loglog_slope({1}, {1}), ConfigError);
    CHECK_THROWS_AS(loglog_slope({1, 1}, {1, 2}), ParameterError);
}

TEST_CASE("pipeline without refinement omits the block; reports are deterministic") {
    ExperimentManifest m = small("pipe_a");
    m.refine_enabled = false;
    auto r = run_pipeline(m);
    CHECK(r.exit_code == kExitOk);
    CHECK_FALSE(r.report.contains("refinement"));
    CHECK(r.report["manifest_hash"] == manifest_hash(m));
    CHECK(fs::exists(fs::path(m.output_dir) / "q_s.qtaf"));

    ExperimentManifest m2 = m;
    m2.output_dir = scratch("pipe_b").string();
    run_pipeline(m2);
    auto ra = json::parse(slurp(fs::path(m.output_dir) / "report.json"));
    auto rb = json::parse(slurp(fs::path(m2.output_dir) / "report.json"));
    ra["manifest"].erase("output_dir");
    rb["manifest"].erase("output_dir");
    CHECK(ra == rb);
    CHECK(slurp(fs::path(m.output_dir) / "q_s.qtaf") == slurp(fs::path(m2.output_dir) / "q_s.qtaf"));
    auto idx = json::parse(slurp(fs::path(m.output_dir) / "fields.json"));
    CHECK(idx["manifest_hash"] == manifest_hash(m));
    CHECK(idx["fields"].contains("Es_1.qtaf"));
}

TEST_CASE("staged commands reproduce the pipeline fields") {
    ExperimentManifest m = small("staged");
    run_pipeline(m, {true, 1});
    ExperimentManifest s = m;
    s.output_dir = scratch("staged_b").string();
    CHECK(run_forward(s).exit_code == 0);
    CHECK(run_acquire(s, {true, 1}).exit_code == 0);
    CHECK(run_invert(s).exit_code == 0);
    CHECK(run_refine(s).exit_code == 0);
    for (const char *f : {"q_true.qtaf", "Es_2.qtaf", "W_6.qtaf", "q_s.qtaf", "q_star_clipped.qtaf"}) {
        CHECK(slurp(fs::path(m.output_dir) / f) == slurp(fs::path(s.output_dir) / f));
    }
    auto files = export_plotdata(s.output_dir, s.output_dir + "/plot");
    CHECK(files.size() == 1);
    const std::string mid = slurp(files.front());
    CHECK(mid.find("# manifest_hash " + manifest_hash(m)) == 0);
}

TEST_CASE("improper probe sets stop the pipeline with the properness code") {
    ExperimentManifest m = small("improper");
    m.probes.thresholds.tau_u = 0.99;
    CHECK(run_pipeline(m).exit_code == kExitImproper);
    m.continue_on_improper = true;
    CHECK(run_pipeline(m).exit_code == kExitOk);
}

TEST_CASE("export needs the phantom field") {
    CHECK_THROWS_AS(export_plotdata(scratch("missing").string(), scratch("missing_out").string()), FileNotFoundError);
}

TEST_CASE("sweep: sigma = 0 rows do not depend on the realization") {
    ExperimentManifest m = small("sweep");
    m.refine_enabled = false;
    m.sweep.sigmas = {0.0, 1e-3};
    m.sweep.deltas_h = {3.0};
    m.sweep.realizations = 3;
    auto res = run_sweep(m, {false, 2});
    REQUIRE(res.rows.size() == 6);
    for (std::size_t r = 1; r < 3; ++r) CHECK(res.rows[r].mse_qs == res.rows[0].mse_qs);
    CHECK(res.rows[0].noise_mse == 0.0);
    CHECK(res.rows[3].mse_qs != res.rows[4].mse_qs);
    CHECK(res.summary["slope_fits"].is_string());
    const std::string csv = slurp(fs::path(m.output_dir) / "sweep.csv");
    CHECK(csv.rfind("# manifest_hash " + manifest_hash(m), 0) == 0);
}
