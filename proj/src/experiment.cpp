#include "qtat/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "qtat/field_io.hpp"

namespace qtat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- manifest

Grid ExperimentManifest::make_grid() const { return Grid(grid.dimension, grid.n, grid.half_width); }

NoiseSpec ExperimentManifest::noise_spec(double sigma, double dh) const {
    NoiseSpec s = noise;
    s.sigma = sigma;
    s.delta = dh * make_grid().min_spacing();
    s.seed = seed;
    return s;
}

NoiseSpec ExperimentManifest::noise_spec() const { return noise_spec(noise.sigma, delta_h); }

std::vector<ProbeVector> ExperimentManifest::probe_family() const {
    return make_probe_family(probes.n, grid.dimension, k, probes.kind);
}

void ExperimentManifest::validate() const {
    if (version != kManifestVersion) throw ConfigError("unsupported manifest version " + std::to_string(version));
    if (grid.dimension != 2 && grid.dimension != 3) throw ConfigError("grid dimension must be 2 or 3");
    if (grid.n < 8) throw ConfigError("grid needs at least 8 nodes per axis");
    if (!(grid.half_width > 0.0)) throw ConfigError("grid half_width must be positive");
    if (!(k > 0.0)) throw ParameterError("wavenumber k must be positive");
    if (!(probes.n > 0.0)) throw ParameterError("probe scale n must be positive");
    phantom.validate(grid.dimension);
    if (!(delta_h >= 2.0)) throw ParameterError("delta_h must be at least 2 grid spacings");
    noise_spec().validate(grid.dimension);
    if (!(refine.q_min < refine.q_max)) throw ParameterError("refine bounds need q_min < q_max");
    if (refine.cg_max_iterations < 1 || refine.max_iters < 1) throw ConfigError("refine iteration counts must be >= 1");
    if (inversion.stencil_accuracy < 2 || inversion.stencil_accuracy % 2) {
        throw ConfigError("stencil_accuracy must be even and >= 2");
    }
    for (double s : sweep.sigmas) {
        if (!(s >= 0.0)) throw ParameterError("sweep sigmas must be non-negative");
    }
    for (double d : sweep.deltas_h) {
        if (!(d >= 2.0)) throw ParameterError("sweep deltas_h must be at least 2");
    }
}

namespace {

// Object reader that rejects keys nobody asked for.
class Reader {
public:
    Reader(const json &j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
        if (!j_.is_object()) throw ConfigError(ctx_ + ": expected an object");
    }

    template <typename T>
    void get(const char *key, T &out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
            if (std::is_unsigned_v<T> && !it->is_number_unsigned()) {
                throw ConfigError(path(key) + ": expected a non-negative integer");
            }
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception &e) {
            throw ConfigError(path(key) + ": " + e.what());
        }
    }

    const json *child(const char *key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const std::string &key) const { return ctx_ + "." + key; }

    void finish() const {
        for (const auto &item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError(ctx_ + ": unknown key '" + item.key() + "'");
        }
    }

private:
    const json &j_;
    std::string ctx_;
    std::set<std::string> seen_;
};

json phantom_json(const Phantom &p) {
    json features = json::array();
    for (const auto &f : p.features) {
        features.push_back({{"center", f.center}, {"width", f.width}, {"amplitude", f.amplitude}, {"radius", f.radius}});
    }
    return {{"kind", to_string(p.kind)},
            {"background", p.background},
            {"bounds", {p.q_min, p.q_max}},
            {"features", features}};
}

Phantom phantom_from_json(const json &j) {
    Phantom p;
    Reader r(j, "phantom");
    std::string kind = to_string(p.kind);
    r.get("kind", kind);
    p.kind = phantom_kind_from_string(kind);
    r.get("background", p.background);
    std::vector<double> bounds{p.q_min, p.q_max};
    r.get("bounds", bounds);
    if (bounds.size() != 2) throw ConfigError("phantom.bounds: expected [q_min, q_max]");
    p.q_min = bounds[0];
    p.q_max = bounds[1];
    if (const json *fj = r.child("features")) {
        if (!fj->is_array()) throw ConfigError("phantom.features: expected an array");
        p.features.clear();
        for (const auto &item : *fj) {
            PhantomFeature f;
            Reader fr(item, "phantom.features[]");
            fr.get("center", f.center);
            fr.get("width", f.width);
            fr.get("amplitude", f.amplitude);
            fr.get("radius", f.radius);
            fr.finish();
            p.features.push_back(std::move(f));
        }
    }
    r.finish();
    return p;
}

}  // namespace

json to_json(const ExperimentManifest &m) {
    const NoiseSpec &n = m.noise;
    const InversionOptions &inv = m.inversion;
    const RefineOptions &rf = m.refine;
    return {
        {"version", m.version},
        {"grid", {{"dimension", m.grid.dimension}, {"n", m.grid.n}, {"half_width", m.grid.half_width}}},
        {"k", m.k},
        {"phantom", phantom_json(m.phantom)},
        {"probes",
         {{"n", m.probes.n},
          {"kind", to_string(m.probes.kind)},
          {"tau_u", m.probes.thresholds.tau_u},
          {"tau_det", m.probes.thresholds.tau_det}}},
        {"noise",
         {{"sigma", n.sigma},
          {"sigma_relative", n.sigma_relative},
          {"delta_h", m.delta_h},
          {"p", n.p},
          {"covariance", to_string(n.covariance)},
          {"clip_bound", n.clip_bound},
          {"length_scale", n.length_scale},
          {"demodulate", n.demodulate}}},
        {"inversion",
         {{"e_floor", inv.e_floor},
          {"cond_max", inv.cond_max},
          {"solve_tolerance", inv.solve_tolerance},
          {"stencil_accuracy", inv.stencil_accuracy},
          {"boundary_layer", inv.boundary_layer},
          {"corner_radius", inv.corner_radius}}},
        {"refine",
         {{"enabled", m.refine_enabled},
          {"lambda_rel", rf.lambda_rel},
          {"cg_tolerance", rf.cg_tolerance},
          {"cg_max_iterations", rf.cg_max_iterations},
          {"q_min", rf.q_min},
          {"q_max", rf.q_max},
          {"max_iters", rf.max_iters},
          {"min_decrease", rf.min_decrease},
          {"max_halvings", rf.max_halvings}}},
        {"sweep",
         {{"sigmas", m.sweep.sigmas}, {"deltas_h", m.sweep.deltas_h}, {"realizations", m.sweep.realizations}}},
        {"continue_on_improper", m.continue_on_improper},
        {"output_dir", m.output_dir},
        {"seed", m.seed},
    };
}

ExperimentManifest manifest_from_json(const json &j) {
    ExperimentManifest m;
    Reader r(j, "manifest");
    r.get("version", m.version);
    if (m.version != kManifestVersion) throw ConfigError("unsupported manifest version " + std::to_string(m.version));
    if (const json *g = r.child("grid")) {
        Reader gr(*g, "grid");
        gr.get("dimension", m.grid.dimension);
        gr.get("n", m.grid.n);
        gr.get("half_width", m.grid.half_width);
        gr.finish();
    }
    r.get("k", m.k);
    if (const json *p = r.child("phantom")) m.phantom = phantom_from_json(*p);
    else if (m.grid.dimension != 2) m.phantom = default_phantom(m.grid.dimension);
    if (const json *p = r.child("probes")) {
        Reader pr(*p, "probes");
        pr.get("n", m.probes.n);
        std::string kind = to_string(m.probes.kind);
        pr.get("kind", kind);
        m.probes.kind = probe_kind_from_string(kind);
        pr.get("tau_u", m.probes.thresholds.tau_u);
        pr.get("tau_det", m.probes.thresholds.tau_det);
        pr.finish();
    }
    if (const json *n = r.child("noise")) {
        Reader nr(*n, "noise");
        nr.get("sigma", m.noise.sigma);
        nr.get("sigma_relative", m.noise.sigma_relative);
        nr.get("delta_h", m.delta_h);
        nr.get("p", m.noise.p);
        std::string cov = to_string(m.noise.covariance);
        nr.get("covariance", cov);
        m.noise.covariance = covariance_from_string(cov);
        nr.get("clip_bound", m.noise.clip_bound);
        nr.get("length_scale", m.noise.length_scale);
        nr.get("demodulate", m.noise.demodulate);
        nr.finish();
    }
    if (const json *v = r.child("inversion")) {
        Reader ir(*v, "inversion");
        ir.get("e_floor", m.inversion.e_floor);
        ir.get("cond_max", m.inversion.cond_max);
        ir.get("solve_tolerance", m.inversion.solve_tolerance);
        ir.get("stencil_accuracy", m.inversion.stencil_accuracy);
        ir.get("boundary_layer", m.inversion.boundary_layer);
        ir.get("corner_radius", m.inversion.corner_radius);
        ir.finish();
    }
    if (const json *v = r.child("refine")) {
        Reader fr(*v, "refine");
        fr.get("enabled", m.refine_enabled);
        fr.get("lambda_rel", m.refine.lambda_rel);
        fr.get("cg_tolerance", m.refine.cg_tolerance);
        fr.get("cg_max_iterations", m.refine.cg_max_iterations);
        fr.get("q_min", m.refine.q_min);
        fr.get("q_max", m.refine.q_max);
        fr.get("max_iters", m.refine.max_iters);
        fr.get("min_decrease", m.refine.min_decrease);
        fr.get("max_halvings", m.refine.max_halvings);
        fr.finish();
    }
    if (const json *v = r.child("sweep")) {
        Reader sr(*v, "sweep");
        sr.get("sigmas", m.sweep.sigmas);
        sr.get("deltas_h", m.sweep.deltas_h);
        sr.get("realizations", m.sweep.realizations);
        sr.finish();
    }
    r.get("continue_on_improper", m.continue_on_improper);
    r.get("output_dir", m.output_dir);
    r.get("seed", m.seed);
    r.finish();
    m.validate();
    return m;
}

ExperimentManifest load_manifest(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw FileNotFoundError("manifest not found: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception &e) {
        throw ConfigError("manifest " + path + ": " + e.what());
    }
    return manifest_from_json(j);
}

void save_manifest(const std::string &path, const ExperimentManifest &m) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os << to_json(m).dump(2) << "\n";
}

std::string fnv1a_hex(const std::string &bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string manifest_hash(const ExperimentManifest &m) {
    json j = to_json(m);
    j.erase("output_dir");
    return fnv1a_hex(j.dump());
}

// ---------------------------------------------------------------- helpers

namespace {

void write_json(const fs::path &path, const json &j) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << j.dump(2) << "\n";
}

json read_json(const fs::path &path) {
    std::ifstream is(path);
    if (!is) throw FileNotFoundError("file not found: " + path.string());
    try {
        json j;
        is >> j;
        return j;
    } catch (const json::exception &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

json stamp(const ExperimentManifest &m, const std::string &stage) {
    return {{"stage", stage}, {"toolkit_version", kToolkitVersion}, {"manifest_hash", manifest_hash(m)}};
}

// Field writer that keeps fields.json (name -> description) in sync. QTAF1
// has no metadata slot, so provenance lives in this sidecar.
class FieldStore {
public:
    explicit FieldStore(const ExperimentManifest &m) : dir_(m.output_dir), hash_(manifest_hash(m)) {
        fs::create_directories(dir_);
        const fs::path idx = dir_ / "fields.json";
        if (fs::exists(idx)) {
            json j = read_json(idx);
            if (j.value("manifest_hash", "") == hash_ && j.contains("fields")) index_ = j["fields"];
        }
    }

    template <typename F>
    void save(const std::string &name, const F &f, const std::string &what) {
        qtaf::save((dir_ / name).string(), f);
        index_[name] = what;
    }

    RealField load_real(const std::string &name) const { return qtaf::load_real((dir_ / name).string()); }
    ComplexField load_complex(const std::string &name) const { return qtaf::load_complex((dir_ / name).string()); }
    bool has(const std::string &name) const { return fs::exists(dir_ / name); }

    void flush() const {
        write_json(dir_ / "fields.json",
                   {{"toolkit_version", kToolkitVersion}, {"manifest_hash", hash_}, {"fields", index_}});
    }
    const fs::path &dir() const { return dir_; }

private:
    fs::path dir_;
    std::string hash_;
    json index_ = json::object();
};

std::string indexed(const std::string &stem, std::size_t j) { return stem + "_" + std::to_string(j) + ".qtaf"; }

json properness_json(const PropernessReport &p) {
    return {{"min_abs_u1", p.min_abs_u1},
            {"min_abs_det", p.min_abs_det},
            {"min_abs_u1_raw", p.min_abs_u1_raw},
            {"min_abs_det_raw", p.min_abs_det_raw},
            {"is_proper", p.is_proper}};
}

json error_json(const RealField &estimate, const RealField *truth) {
    json j = json::object();
    if (!truth) return j;
    const double e = l2_norm(estimate - *truth);
    j["l2_error"] = e;
    j["rel_error"] = e / l2_norm(*truth);
    j["max_error"] = max_abs(estimate - *truth);
    return j;
}

json reconstruction_json(const ExactReconstruction &rec, const RealField *truth) {
    json j = error_json(rec.q_hat, truth);
    j["coverage_interior"] = rec.coverage_interior;
    j["max_solve_residual"] = rec.max_solve_residual;
    j["median_cond"] = rec.median_cond;
    j["max_cond"] = rec.max_cond;
    j["floored_nodes"] = rec.floored;
    return j;
}

json refinement_json(const RefinementResult &res, const RealField *truth) {
    json j;
    if (truth) {
        j["qstar_l2_error"] = l2_norm(res.q_star - *truth);
        j["qhat_star_l2_error"] = l2_norm(res.q_star_clipped - *truth);
        j["qhat_star_rel_error"] = l2_norm(res.q_star_clipped - *truth) / l2_norm(*truth);
    }
    j["eta"] = res.eta;
    j["condition_423_ok"] = res.condition_423_ok;
    j["residual_history"] = res.residual_history;
    j["cg_iterations"] = res.ls_iterations;
    j["cg_relative_residual"] = res.cg_relative_residual;
    j["outer_iterations"] = res.outer_iterations;
    j["lambda"] = res.lambda;
    j["stagnated"] = res.stagnated;
    j["solve_failed"] = res.solve_failed;
    return j;
}

MeasurementSet assemble_measurements(const ExperimentManifest &m, const RealField &q, std::vector<ComplexField> u) {
    const Grid &grid = q.grid();
    MeasurementSet ms;
    ms.probes = m.probe_family();
    if (u.size() != ms.probes.size()) throw ConfigError("need one solved field per probe");
    for (const auto &p : ms.probes) ms.g.push_back(probe_boundary_data(p, m.k, grid));
    ms.u = std::move(u);
    for (const auto &f : ms.u) {
        if (f.grid() != grid) throw ConfigError("solved field not on the grid of q");
    }
    ms.properness = check_proper(ms.u, m.probes.thresholds);
    ms.E.push_back(to_complex(energy(q, ms.u[0])));
    for (std::size_t j = 1; j < ms.u.size(); ++j) ms.E.push_back(polarize(q, ms.u[0], ms.u[j]));
    return ms;
}

RefinementResult refine_from(const ExperimentManifest &m, const RealField &q_s, const ComplexField &E1s) {
    const BoundaryTrace g = probe_boundary_data(m.probe_family().front(), m.k, q_s.grid());
    const double k = m.k;
    const SolveOptions so = m.refine.solve;
    DerivativeFactory factory = [&](const RealField &q) { return DerivativeOperator(q, k, g, so); };
    return iterate_refinement(factory, q_s, E1s, m.refine);
}

json noise_json(const NoiseSpec &spec, double sigma_abs) {
    return {{"sigma_abs", sigma_abs},
            {"delta", spec.delta},
            {"window", spec.window()},
            {"demodulate", spec.demodulate},
            {"covariance", to_string(spec.covariance)}};
}

void save_noisy(FieldStore &store, const NoisyMeasurementSet &noisy, bool dump_noise) {
    for (std::size_t j = 0; j < noisy.Em.size(); ++j) {
        store.save(indexed("Em", j + 1), noisy.Em[j], "measured energy E^m_" + std::to_string(j + 1));
        store.save(indexed("Es", j + 1), noisy.Es[j], "smoothed energy E^s_" + std::to_string(j + 1));
    }
    if (dump_noise) {
        for (std::size_t i = 0; i < noisy.W.size(); ++i) {
            store.save(indexed("W", i), noisy.W[i], "clipped noise field (W_1, then W_j, W_1j, W_1j' per j)");
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- stages

StageResult run_forward(const ExperimentManifest &m) {
    m.validate();
    const Grid grid = m.make_grid();
    const RealField q = m.phantom.sample(grid);
    const MeasurementSet ms = measure(q, m.k, m.probe_family(), m.probes.thresholds);
    FieldStore store(m);
    store.save("q_true.qtaf", q, "phantom q_o");
    for (std::size_t j = 0; j < ms.u.size(); ++j) store.save(indexed("u", j + 1), ms.u[j], "solution u_j");
    store.flush();
    StageResult r{stamp(m, "forward")};
    r.report["q_range"] = {min_value(q), max_value(q)};
    r.report["properness"] = properness_json(ms.properness);
    r.report["divergence_identity_residual"] = check_divergence_identity(ms.u[0], q, m.k);
    write_json(store.dir() / "forward.json", r.report);
    return r;
}

StageResult run_acquire(const ExperimentManifest &m, const RunOptions &opt) {
    m.validate();
    FieldStore store(m);
    const RealField q = store.load_real("q_true.qtaf");
    if (q.grid() != m.make_grid()) throw ConfigError("q_true.qtaf does not match the manifest grid");
    std::vector<ComplexField> u;
    for (int j = 1; j <= m.grid.dimension + 1; ++j) u.push_back(store.load_complex(indexed("u", j)));
    const MeasurementSet ms = assemble_measurements(m, q, std::move(u));
    StageResult r{stamp(m, "acquire")};
    r.report["properness"] = properness_json(ms.properness);
    if (!ms.properness.is_proper && !m.continue_on_improper) {
        r.report["status"] = "improper";
        r.exit_code = kExitImproper;
        write_json(store.dir() / "acquire.json", r.report);
        return r;
    }
    const NoiseSpec spec = m.noise_spec();
    const NoisyMeasurementSet noisy = corrupt(ms, spec, 0, opt.dump_noise);
    for (std::size_t j = 0; j < ms.E.size(); ++j) store.save(indexed("E", j + 1), ms.E[j], "noiseless energy E_j");
    save_noisy(store, noisy, opt.dump_noise);
    store.flush();
    r.report["status"] = ms.properness.is_proper ? "ok" : "improper_continued";
    r.report["noise"] = noise_json(spec, noisy.sigma);
    write_json(store.dir() / "acquire.json", r.report);
    return r;
}

StageResult run_invert(const ExperimentManifest &m) {
    m.validate();
    FieldStore store(m);
    const int n = m.grid.dimension + 1;
    std::optional<RealField> truth;
    if (store.has("q_true.qtaf")) truth = store.load_real("q_true.qtaf");
    const RealField *tp = truth ? &*truth : nullptr;
    StageResult r{stamp(m, "invert")};
    if (store.has(indexed("E", 1))) {
        std::vector<ComplexField> E;
        for (int j = 1; j <= n; ++j) E.push_back(store.load_complex(indexed("E", j)));
        const ExactReconstruction rec = reconstruct(E, m.k, m.inversion);
        store.save("q_exact.qtaf", rec.q_hat, "exact formula on noiseless data");
        r.report["exact"] = reconstruction_json(rec, tp);
    }
    std::vector<ComplexField> Es;
    for (int j = 1; j <= n; ++j) Es.push_back(store.load_complex(indexed("Es", j)));
    const ExactReconstruction guess = reconstruct(Es, m.k, m.inversion);
    store.save("q_s.qtaf", guess.q_hat, "initial guess q^s");
    store.flush();
    r.report["initial_guess"] = reconstruction_json(guess, tp);
    write_json(store.dir() / "invert.json", r.report);
    return r;
}

StageResult run_refine(const ExperimentManifest &m) {
    m.validate();
    FieldStore store(m);
    StageResult r{stamp(m, "refine")};
    if (!m.refine_enabled) {
        r.report["status"] = "disabled";
        write_json(store.dir() / "refine.json", r.report);
        return r;
    }
    const RealField q_s = store.load_real("q_s.qtaf");
    const ComplexField E1s = store.load_complex(indexed("Es", 1));
    std::optional<RealField> truth;
    if (store.has("q_true.qtaf")) truth = store.load_real("q_true.qtaf");
    const RefinementResult res = refine_from(m, q_s, E1s);
    if (res.solve_failed) throw SolverError("forward solve failed during refinement", 0.0);
    store.save("q_star.qtaf", res.q_star, "refined q_*");
    store.save("q_star_clipped.qtaf", res.q_star_clipped, "clipped refinement");
    store.flush();
    r.report["status"] = "ok";
    r.report["refinement"] = refinement_json(res, truth ? &*truth : nullptr);
    if (truth) r.report["initial_guess_l2_error"] = l2_norm(q_s - *truth);
    write_json(store.dir() / "refine.json", r.report);
    return r;
}

StageResult run_pipeline(const ExperimentManifest &m, const RunOptions &opt) {
    m.validate();
    const Grid grid = m.make_grid();
    const RealField q = m.phantom.sample(grid);
    const MeasurementSet ms = measure(q, m.k, m.probe_family(), m.probes.thresholds);
    FieldStore store(m);
    store.save("q_true.qtaf", q, "phantom q_o");
    for (std::size_t j = 0; j < ms.u.size(); ++j) store.save(indexed("u", j + 1), ms.u[j], "solution u_j");

    StageResult r{stamp(m, "pipeline")};
    r.report["manifest"] = to_json(m);
    r.report["forward"] = {{"q_range", {min_value(q), max_value(q)}},
                           {"divergence_identity_residual", check_divergence_identity(ms.u[0], q, m.k)}};
    r.report["properness"] = properness_json(ms.properness);
    if (!ms.properness.is_proper && !m.continue_on_improper) {
        r.report["status"] = "improper";
        r.exit_code = kExitImproper;
        store.flush();
        write_json(store.dir() / "report.json", r.report);
        return r;
    }
    for (std::size_t j = 0; j < ms.E.size(); ++j) store.save(indexed("E", j + 1), ms.E[j], "noiseless energy E_j");

    const NoiseSpec spec = m.noise_spec();
    const NoisyMeasurementSet noisy = corrupt(ms, spec, 0, opt.dump_noise);
    save_noisy(store, noisy, opt.dump_noise);
    r.report["noise"] = noise_json(spec, noisy.sigma);

    const ExactReconstruction exact = reconstruct(ms.E, m.k, m.inversion);
    store.save("q_exact.qtaf", exact.q_hat, "exact formula on noiseless data");
    r.report["exact"] = reconstruction_json(exact, &q);

    const ExactReconstruction guess = reconstruct(noisy.Es, m.k, m.inversion);
    store.save("q_s.qtaf", guess.q_hat, "initial guess q^s");
    r.report["initial_guess"] = reconstruction_json(guess, &q);

    if (m.refine_enabled) {
        const RefinementResult res = refine_from(m, guess.q_hat, noisy.Es[0]);
        if (res.solve_failed) throw SolverError("forward solve failed during refinement", 0.0);
        store.save("q_star.qtaf", res.q_star, "refined q_*");
        store.save("q_star_clipped.qtaf", res.q_star_clipped, "clipped refinement");
        r.report["refinement"] = refinement_json(res, &q);
    }
    r.report["status"] = ms.properness.is_proper ? "ok" : "improper_continued";
    store.flush();
    write_json(store.dir() / "report.json", r.report);
    return r;
}

// ---------------------------------------------------------------- sweep

double loglog_slope(const std::vector<double> &x, const std::vector<double> &y) {
    if (x.size() != y.size() || x.size() < 2) throw ConfigError("slope fit needs at least two points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0 && y[i] > 0.0)) throw ParameterError("log-log fit needs positive values");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double den = n * sxx - sx * sx;
    if (!(den > 0.0)) throw ParameterError("slope fit needs distinct abscissae");
    return (n * sxy - sx * sy) / den;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Cell {
    double sigma;
    double delta_h;
};

}  // namespace

void write_sweep_csv(const std::string &path, const std::vector<SweepRow> &rows, const std::string &hash) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os << "# manifest_hash " << hash << " toolkit_version " << kToolkitVersion << "\n";
    os << "sigma,delta,delta_h,p,realization,status,mse_qs,mse_qstar,mse_qhat,noise_mse,improved\n";
    for (const auto &r : rows) {
        std::string status = r.status;
        for (auto &c : status) {
            if (c == ',' || c == '\n') c = ';';
        }
        os << fmt(r.sigma) << ',' << fmt(r.delta) << ',' << fmt(r.delta_h) << ',' << fmt(r.p) << ',' << r.realization
           << ',' << status << ',' << fmt(r.mse_qs) << ',' << fmt(r.mse_qstar) << ',' << fmt(r.mse_qhat) << ','
           << fmt(r.noise_mse) << ',' << (r.improved ? 1 : 0) << '\n';
    }
}

SweepResult run_sweep(const ExperimentManifest &m, const RunOptions &opt) {
    m.validate();
    if (m.sweep.sigmas.empty() || m.sweep.deltas_h.empty() || m.sweep.realizations == 0) {
        throw ConfigError("sweep lists must be non-empty");
    }
    const Grid grid = m.make_grid();
    const RealField q = m.phantom.sample(grid);
    const MeasurementSet ms = measure(q, m.k, m.probe_family(), m.probes.thresholds);
    SweepResult out;
    out.summary = stamp(m, "sweep");
    out.summary["properness"] = properness_json(ms.properness);
    if (!ms.properness.is_proper && !m.continue_on_improper) {
        out.summary["status"] = "improper";
        return out;
    }
    const double nq2 = std::pow(l2_norm(q), 2);
    out.summary["q_l2_norm_squared"] = nq2;

    // Noiseless reconstruction per correlation length.
    std::map<double, std::optional<RealField>> q_delta;
    for (double dh : m.sweep.deltas_h) {
        try {
            q_delta[dh] = reconstruct(corrupt(ms, m.noise_spec(0.0, dh), 0).Es, m.k, m.inversion).q_hat;
        } catch (const std::exception &) {
            q_delta[dh] = std::nullopt;
        }
    }

    std::vector<Cell> cells;
    for (double s : m.sweep.sigmas) {
        for (double dh : m.sweep.deltas_h) cells.push_back({s, dh});
    }
    const std::size_t R = m.sweep.realizations;
    out.rows.resize(cells.size() * R);
    const BoundaryTrace g1 = ms.g.front();
    const double k = m.k;

    auto work = [&](std::size_t task) {
        const Cell &c = cells[task / R];
        SweepRow &row = out.rows[task];
        const NoiseSpec spec = m.noise_spec(c.sigma, c.delta_h);
        row.sigma = c.sigma;
        row.delta = spec.delta;
        row.delta_h = c.delta_h;
        row.p = spec.p;
        row.realization = task % R;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.mse_qstar = row.mse_qhat = row.noise_mse = nan;
        try {
            const NoisyMeasurementSet noisy = corrupt(ms, spec, row.realization);
            const RealField qs = reconstruct(noisy.Es, k, m.inversion).q_hat;
            row.mse_qs = std::pow(l2_norm(qs - q), 2);
            if (const auto &qd = q_delta.at(c.delta_h)) row.noise_mse = std::pow(l2_norm(qs - *qd), 2);
            if (m.refine_enabled) {
                const SolveOptions so = m.refine.solve;
                DerivativeFactory factory = [&](const RealField &qq) { return DerivativeOperator(qq, k, g1, so); };
                const RefinementResult res = iterate_refinement(factory, qs, noisy.Es[0], m.refine);
                if (res.solve_failed) throw SolverError("forward solve failed during refinement", 0.0);
                row.mse_qstar = std::pow(l2_norm(res.q_star - q), 2);
                row.mse_qhat = std::pow(l2_norm(res.q_star_clipped - q), 2);
                row.improved = row.mse_qhat < row.mse_qs;
            }
        } catch (const std::exception &e) {
            row.status = std::string("error: ") + e.what();
            row.mse_qs = nan;
        }
    };

    const unsigned nthreads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(out.rows.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < out.rows.size(); t = next++) work(t);
    };
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto &t : pool) t.join();
    }

    // Cell means over successful realisations.
    json jcells = json::array();
    std::vector<double> mean_qs(cells.size()), mean_noise(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        double s_qs = 0, s_qstar = 0, s_qhat = 0, s_noise = 0;
        std::size_t ok = 0, improved = 0, clip_ok = 0;
        for (std::size_t r = 0; r < R; ++r) {
            const SweepRow &row = out.rows[c * R + r];
            if (row.status != "ok") continue;
            ++ok;
            s_qs += row.mse_qs;
            s_noise += row.noise_mse;
            if (m.refine_enabled) {
                s_qstar += row.mse_qstar;
                s_qhat += row.mse_qhat;
                improved += row.improved;
                clip_ok += row.mse_qhat <= row.mse_qstar;
            }
        }
        const double d = ok ? static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
        mean_qs[c] = s_qs / d;
        mean_noise[c] = s_noise / d;
        json jc = {{"sigma", cells[c].sigma},
                   {"delta_h", cells[c].delta_h},
                   {"delta", m.noise_spec(cells[c].sigma, cells[c].delta_h).delta},
                   {"realizations_ok", ok},
                   {"realizations_failed", R - ok},
                   {"mean_mse_qs", mean_qs[c]},
                   {"mean_noise_mse", mean_noise[c]}};
        if (m.refine_enabled) {
            jc["mean_mse_qstar"] = s_qstar / d;
            jc["mean_mse_qhat"] = s_qhat / d;
            jc["improvement_fraction"] = improved / d;
            jc["clipping_fraction"] = clip_ok / d;
        }
        jcells.push_back(jc);
    }
    out.summary["cells"] = jcells;

    json slopes = {{"delta", json::array()}, {"sigma", json::array()}};
    if (R < 20) {
        out.summary["slope_fits"] = "skipped: fewer than 20 realizations";
    } else {
        const int d = m.grid.dimension;
        const double predicted_delta = d - (d + 6) * m.noise.p;
        auto fit = [](const std::vector<double> &x, const std::vector<double> &y) -> json {
            try {
                return loglog_slope(x, y);
            } catch (const std::exception &) {
                return nullptr;
            }
        };
        for (double s : m.sweep.sigmas) {
            std::vector<double> x, yq, yn;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                if (cells[c].sigma != s) continue;
                x.push_back(m.noise_spec(s, cells[c].delta_h).delta);
                yq.push_back(mean_qs[c]);
                yn.push_back(mean_noise[c]);
            }
            if (x.size() < 2 || s == 0.0) continue;
            slopes["delta"].push_back(
                {{"sigma", s}, {"slope_mse_qs", fit(x, yq)}, {"slope_noise_mse", fit(x, yn)}, {"predicted", predicted_delta}});
        }
        for (double dh : m.sweep.deltas_h) {
            std::vector<double> x, yq, yn;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                if (cells[c].delta_h != dh || cells[c].sigma == 0.0) continue;
                x.push_back(cells[c].sigma);
                yq.push_back(mean_qs[c]);
                yn.push_back(mean_noise[c]);
            }
            if (x.size() < 2) continue;
            slopes["sigma"].push_back(
                {{"delta_h", dh}, {"slope_mse_qs", fit(x, yq)}, {"slope_noise_mse", fit(x, yn)}, {"predicted", 2.0}});
        }
        out.summary["slope_fits"] = slopes;
    }
    out.summary["status"] = "ok";

    fs::create_directories(m.output_dir);
    write_sweep_csv((fs::path(m.output_dir) / "sweep.csv").string(), out.rows, manifest_hash(m));
    write_json(fs::path(m.output_dir) / "sweep_summary.json", out.summary);
    return out;
}

// ---------------------------------------------------------------- export

std::string midline_table(const std::vector<std::pair<std::string, RealField>> &columns, const std::string &header) {
    if (columns.empty()) throw ConfigError("no columns to export");
    const Grid &g = columns.front().second.grid();
    for (const auto &c : columns) {
        if (c.second.grid() != g) throw ConfigError("exported fields live on different grids");
    }
    std::ostringstream os;
    os << header;
    os << "# x";
    for (const auto &c : columns) os << ' ' << c.first;
    os << '\n';
    std::array<std::size_t, 3> ijk{0, 0, 0};
    for (int a = 1; a < g.dimension(); ++a) ijk[a] = g.count(a) / 2;
    for (std::size_t i = 0; i < g.count(0); ++i) {
        ijk[0] = i;
        const std::size_t idx = g.ravel(ijk);
        os << fmt(g.coordinate(0, i));
        for (const auto &c : columns) os << ' ' << fmt(c.second[idx]);
        os << '\n';
    }
    return os.str();
}

std::vector<std::string> export_plotdata(const std::string &dir, const std::string &out_dir) {
    const fs::path in(dir);
    if (!fs::exists(in / "q_true.qtaf")) throw FileNotFoundError("file not found: " + (in / "q_true.qtaf").string());
    std::string hash = "unknown";
    if (fs::exists(in / "fields.json")) hash = read_json(in / "fields.json").value("manifest_hash", hash);
    const std::string header =
        std::string("# manifest_hash ") + hash + " toolkit_version " + kToolkitVersion + "\n";

    std::vector<std::pair<std::string, RealField>> cols;
    cols.emplace_back("q_o", qtaf::load_real((in / "q_true.qtaf").string()));
    for (const auto &[file, name] : {std::pair{"q_s.qtaf", "q_s"}, std::pair{"q_star_clipped.qtaf", "q_hat_star"}}) {
        if (fs::exists(in / file)) cols.emplace_back(name, qtaf::load_real((in / file).string()));
    }
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    const fs::path mid = fs::path(out_dir) / "midline.dat";
    {
        std::ofstream os(mid);
        if (!os) throw ConfigError("cannot open for writing: " + mid.string());
        os << midline_table(cols, header);
    }
    written.push_back(mid.string());

    if (fs::exists(in / "sweep_summary.json")) {
        const json s = read_json(in / "sweep_summary.json");
        const fs::path ed = fs::path(out_dir) / "error_vs_delta.dat";
        std::ofstream os(ed);
        if (!os) throw ConfigError("cannot open for writing: " + ed.string());
        os << "# manifest_hash " << s.value("manifest_hash", std::string("unknown")) << " toolkit_version "
           << kToolkitVersion << "\n";
        os << "# one block per sigma: delta mean_mse_qs mean_noise_mse mean_mse_qhat\n";
        std::map<double, std::vector<const json *>> by_sigma;
        for (const auto &c : s.at("cells")) by_sigma[c.at("sigma").get<double>()].push_back(&c);
        bool first = true;
        for (const auto &[sigma, cs] : by_sigma) {
            if (!first) os << "\n\n";
            first = false;
            os << "# sigma " << fmt(sigma) << "\n";
            for (const json *c : cs) {
                auto num = [&](const char *key) {
                    return c->contains(key) && (*c)[key].is_number() ? fmt((*c)[key].get<double>()) : std::string("nan");
                };
                os << num("delta") << ' ' << num("mean_mse_qs") << ' ' << num("mean_noise_mse") << ' '
                   << num("mean_mse_qhat") << '\n';
            }
        }
        written.push_back(ed.string());
    }
    return written;
}

}  // namespace qtat
