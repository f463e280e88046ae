#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qtat/inversion.hpp"
#include "qtat/phantom.hpp"
#include "qtat/refine.hpp"

namespace qtat {

inline constexpr const char *kToolkitVersion = "1.0.0";
inline constexpr int kManifestVersion = 1;

using json = nlohmann::json;

struct GridSpec {
    int dimension = 2;
    std::size_t n = 256;
    double half_width = 0.5;
};

struct ProbeSpec {
    double n = 1.0;
    ProbeKind kind = ProbeKind::HelmholtzAdapted;
    PropernessThresholds thresholds;
};

struct SweepSpec {
    std::vector<double> sigmas{1e-3};
    // Correlation lengths in grid spacings.
    std::vector<double> deltas_h{4.0};
    std::size_t realizations = 20;
};

struct ExperimentManifest {
    int version = kManifestVersion;
    GridSpec grid;
    double k = 6.0;
    Phantom phantom = default_phantom();
    ProbeSpec probes;
    // noise.delta is ignored; the correlation length is delta_h grid spacings.
    NoiseSpec noise;
    double delta_h = 4.0;
    InversionOptions inversion;
    RefineOptions refine;
    bool refine_enabled = true;
    bool continue_on_improper = false;
    SweepSpec sweep;
    std::string output_dir = "out";
    std::uint64_t seed = 0;

    Grid make_grid() const;
    // noise with delta resolved and seed copied in.
    NoiseSpec noise_spec() const;
    NoiseSpec noise_spec(double sigma, double delta_h) const;
    std::vector<ProbeVector> probe_family() const;
    // Throws ConfigError / ParameterError.
    void validate() const;
};

json to_json(const ExperimentManifest &m);
// Unknown keys and type mismatches are ConfigErrors; missing keys keep defaults.
ExperimentManifest manifest_from_json(const json &j);
ExperimentManifest load_manifest(const std::string &path);
void save_manifest(const std::string &path, const ExperimentManifest &m);

// FNV-1a 64 of the canonical JSON (sorted keys), output_dir excluded; 16 hex digits.
std::string manifest_hash(const ExperimentManifest &m);
std::string fnv1a_hex(const std::string &bytes);

// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitImproper = 2, kExitSolver = 3, kExitConfig = 4 };

struct RunOptions {
    bool dump_noise = false;
    unsigned threads = 1;
};

struct StageResult {
    json report;
    int exit_code = kExitOk;
};

// Individual stages read and write QTAF1 fields in m.output_dir, record them in
// fields.json and return a JSON report carrying the manifest hash.
StageResult run_forward(const ExperimentManifest &m);
StageResult run_acquire(const ExperimentManifest &m, const RunOptions &options = {});
StageResult run_invert(const ExperimentManifest &m);
StageResult run_refine(const ExperimentManifest &m);

// All stages in memory; writes every intermediate field and report.json.
StageResult run_pipeline(const ExperimentManifest &m, const RunOptions &options = {});

struct SweepRow {
    double sigma = 0.0;
    double delta = 0.0;
    double delta_h = 0.0;
    double p = 0.0;
    std::size_t realization = 0;
    std::string status = "ok";
    double mse_qs = 0.0;
    double mse_qstar = 0.0;
    double mse_qhat = 0.0;
    // ||q_s - q_delta||^2 with q_delta the noiseless reconstruction of the cell.
    double noise_mse = 0.0;
    bool improved = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    json summary;
};

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double> &x, const std::vector<double> &y);

// Writes sweep.csv and sweep_summary.json.
SweepResult run_sweep(const ExperimentManifest &m, const RunOptions &options = {});
// First line is a "# manifest_hash ... toolkit_version ..." comment.
void write_sweep_csv(const std::string &path, const std::vector<SweepRow> &rows, const std::string &hash);

// Reads fields from `dir`, writes midline.dat (and error_vs_delta.dat when a
// sweep summary exists) into `out_dir`. Returns the files written.
std::vector<std::string> export_plotdata(const std::string &dir, const std::string &out_dir);
// Midline along axis 0 through the centre node; one row per node.
std::string midline_table(const std::vector<std::pair<std::string, RealField>> &columns, const std::string &header);

}  // namespace qtat
