#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "qtat/experiment.hpp"

using namespace qtat;

namespace {

struct Flags {
    std::string manifest;
    std::string out;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool dump_noise = false;
    bool no_refine = false;
    std::string export_dir;
};

ExperimentManifest resolve(const Flags &f) {
    ExperimentManifest m = f.manifest.empty() ? ExperimentManifest{} : load_manifest(f.manifest);
    if (!f.out.empty()) m.output_dir = f.out;
    if (f.seed) m.seed = *f.seed;
    if (f.no_refine) m.refine_enabled = false;
    m.validate();
    return m;
}

void print(const json &j) { std::cout << j.dump(2) << "\n"; }

int dispatch(const std::string &cmd, const Flags &f) {
    if (cmd == "export") {
        const ExperimentManifest m = resolve(f);
        const std::string dest = f.export_dir.empty() ? m.output_dir + "/plot" : f.export_dir;
        for (const auto &p : export_plotdata(m.output_dir, dest)) std::cout << p << "\n";
        return kExitOk;
    }
    const ExperimentManifest m = resolve(f);
    RunOptions opt;
    opt.dump_noise = f.dump_noise;
    opt.threads = f.threads;
    StageResult r;
    if (cmd == "forward") r = run_forward(m);
    else if (cmd == "acquire") r = run_acquire(m, opt);
    else if (cmd == "invert") r = run_invert(m);
    else if (cmd == "refine") r = run_refine(m);
    else if (cmd == "pipeline") r = run_pipeline(m, opt);
    else if (cmd == "sweep") {
        const SweepResult s = run_sweep(m, opt);
        print(s.summary);
        return s.summary.value("status", "") == "improper" ? kExitImproper : kExitOk;
    }
    print(r.report);
    return r.exit_code;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Quantitative thermoacoustic reconstruction toolkit"};
    app.set_version_flag("--version", kToolkitVersion);
    app.require_subcommand(1);
    Flags f;
    std::uint64_t seed = 0;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"forward", "Solve the forward problem for every probe"},
        {"acquire", "Form energies, check properness, add noise and smooth"},
        {"invert", "Exact formula on noiseless and smoothed data"},
        {"refine", "Linearised least-squares refinement of q^s"},
        {"pipeline", "All stages with a JSON report"},
        {"sweep", "Monte-Carlo sweep over sigma and delta"},
        {"export", "Gnuplot-ready slices and error tables"},
    };
    for (const auto &[name, help] : commands) {
        CLI::App *sub = app.add_subcommand(name, help);
        sub->add_option("--manifest", f.manifest, "Experiment manifest (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--out", f.out, "Output directory (overrides the manifest)");
        sub->add_option("--seed", seed, "RNG seed (overrides the manifest)");
        sub->add_option("--threads", f.threads, "Worker threads for sweeps")
            ->check(CLI::Range(1u, std::max(1u, 4 * std::thread::hardware_concurrency())));
        sub->add_flag("--dump-noise", f.dump_noise, "Write the noise fields as QTAF1");
        sub->add_flag("--no-refine", f.no_refine, "Skip the refinement stage");
        if (name == "export") sub->add_option("--plot-dir", f.export_dir, "Destination (default OUT/plot)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    for (CLI::App *sub : app.get_subcommands()) {
        if (sub->count("--seed")) f.seed = seed;
        try {
            return dispatch(sub->get_name(), f);
        } catch (const SolverError &e) {
            std::cerr << "solver failure: " << e.what() << " (residual " << e.residual() << ")\n";
            return kExitSolver;
        } catch (const ConfigError &e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitConfig;
        } catch (const ParameterError &e) {
            std::cerr << "parameter error: " << e.what() << "\n";
            return kExitConfig;
        }
    }
    return kExitConfig;
}
