// plumekit command-line interface: spectral recalibration, matched-filter
// XCH4 retrieval, synthetic plume generation, detection and evaluation,
// exposed as subcommands with JSON configs and mandatory seeds.

#include <plumekit/plumekit.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---- logging ----

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };

LogLevel log_threshold() {
    static const LogLevel level = [] {
        const char* env = std::getenv("PLUMEKIT_LOG");
        if (!env)
            return LogLevel::info;
        const std::string v(env);
        if (v == "debug")
            return LogLevel::debug;
        if (v == "warn")
            return LogLevel::warn;
        if (v == "error")
            return LogLevel::error;
        return LogLevel::info;
    }();
    return level;
}

void logmsg(LogLevel level, const std::string& msg) {
    static const char* names[] = {"debug", "info", "warn", "error"};
    if (level >= log_threshold())
        std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

void log_info(const std::string& msg) { logmsg(LogLevel::info, msg); }
void log_warn(const std::string& msg) { logmsg(LogLevel::warn, msg); }

// Thrown for bad inputs and configs; maps to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& field) {
    if (path.empty())
        throw ValidationError("missing required path: " + field);
    if (!fs::exists(path))
        throw ValidationError(field + ": file not found: " + path);
}

// Input paths inside a spec or manifest resolve relative to that file.
std::string resolve_from(const fs::path& base_file, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute())
        return path;
    return (base_file.parent_path() / path).string();
}

// ---- run report ----

class RunReport {
public:
    explicit RunReport(std::string subcommand) : start_(clock::now()) {
        doc_["tool"] = "plumekit";
        doc_["version"] = plumekit::version;
        doc_["subcommand"] = std::move(subcommand);
        doc_["params"] = ordered_json::object();
        doc_["timings_ms"] = ordered_json::object();
        doc_["warnings"] = ordered_json::array();
        doc_["outputs"] = ordered_json::array();
    }

    template <class T>
    void param(const std::string& key, const T& value) {
        doc_["params"][key] = value;
    }
    void warning(const std::string& msg) {
        doc_["warnings"].push_back(msg);
        log_warn(msg);
    }
    void output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }

    // Time a named stage.
    template <class Fn>
    auto stage(const std::string& name, Fn&& fn) {
        const auto t0 = clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            doc_["timings_ms"][name] = elapsed_ms(t0);
        } else {
            auto result = fn();
            doc_["timings_ms"][name] = elapsed_ms(t0);
            return result;
        }
    }

    void write(const fs::path& path) {
        doc_["timings_ms"]["total"] = elapsed_ms(start_);
        const std::string text = doc_.dump(2) + "\n";
        plumekit::detail::write_all_bytes(path, text.data(), text.size());
        log_info("run report: " + path.string());
    }

private:
    using clock = std::chrono::steady_clock;
    static double elapsed_ms(clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
    ordered_json doc_;
    clock::time_point start_;
};

fs::path report_path_for(const fs::path& primary_output) {
    fs::path p = primary_output;
    p += ".run.json";
    return p;
}

// ---- config merging: flags win over --config values ----

json load_config(const std::string& path) {
    if (path.empty())
        return json::object();
    require_file(path, "--config");
    return plumekit::detail::parse_json_file(path);
}

template <class T>
void merge(const CLI::App& cmd, const json& cfg, const std::string& flag,
           const std::string& key, T& target) {
    if (cmd.count(flag) == 0 && cfg.contains(key))
        target = cfg.at(key).get<T>();
}

// ---- small parsers ----

plumekit::BandWindow parse_window(const std::string& text, std::size_t bands) {
    if (text.empty())
        return {0, bands};
    const auto colon = text.find(':');
    if (colon == std::string::npos)
        throw ValidationError("--window: expected b0:b1, got " + text);
    try {
        const std::size_t b0 = std::stoul(text.substr(0, colon));
        const std::size_t b1 = std::stoul(text.substr(colon + 1));
        return {b0, b1};
    } catch (const std::exception&) {
        throw ValidationError("--window: expected b0:b1, got " + text);
    }
}

std::vector<double> parse_grid(const std::string& text, const std::string& flag) {
    // start:stop:step, stop inclusive within a half-step tolerance
    std::vector<double> parts;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t colon = text.find(':', pos);
        const std::string tok =
            colon == std::string::npos ? text.substr(pos) : text.substr(pos, colon - pos);
        try {
            parts.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ValidationError(flag + ": expected start:stop:step, got " + text);
        }
        if (colon == std::string::npos)
            break;
        pos = colon + 1;
    }
    if (parts.size() == 1)
        return parts;
    if (parts.size() != 3 || parts[2] <= 0.0)
        throw ValidationError(flag + ": expected start:stop:step, got " + text);
    std::vector<double> grid;
    for (double v = parts[0]; v <= parts[1] + 0.5 * parts[2]; v += parts[2])
        grid.push_back(std::min(v, parts[1]));
    return grid;
}

Eigen::VectorXd linspace_centers(double start, double step, std::size_t count) {
    Eigen::VectorXd c(count);
    for (std::size_t b = 0; b < count; ++b)
        c[b] = start + step * static_cast<double>(b);
    return c;
}

// ---- evaluation serialization ----

ordered_json report_to_json(const plumekit::EvalReport& r) {
    ordered_json j;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["iou"] = r.iou;
    j["miou"] = r.miou;
    j["counts"] = {{"n_pred", r.counts.n_pred},
                   {"n_true", r.counts.n_true},
                   {"tp_pred", r.counts.tp_pred},
                   {"matched_true", r.counts.matched_true}};
    j["flags"] = {{"precision_vacuous", r.precision_vacuous},
                  {"recall_vacuous", r.recall_vacuous},
                  {"miou_vacuous", r.miou_vacuous}};
    return j;
}

std::string format_sweep_csv(const std::vector<plumekit::SweepRow>& rows) {
    std::string csv = "low,high,precision,recall,f1,iou,miou,n_pred,n_true\n";
    for (const auto& r : rows) {
        csv += plumekit::detail::format_double(r.low) + ",";
        csv += plumekit::detail::format_double(r.high) + ",";
        csv += plumekit::detail::format_double(r.precision) + ",";
        csv += plumekit::detail::format_double(r.recall) + ",";
        csv += plumekit::detail::format_double(r.f1) + ",";
        csv += plumekit::detail::format_double(r.iou) + ",";
        csv += plumekit::detail::format_double(r.miou) + ",";
        csv += std::to_string(r.n_pred) + ",";
        csv += std::to_string(r.n_true) + "\n";
    }
    return csv;
}

// ---- recalibrate ----

struct RecalibrateOpts {
    std::string config, cube, transmittance, out;
    double half_width = 3.0;
    double solar_scale = 1.0;
};

int run_recalibrate(const CLI::App& cmd, RecalibrateOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--cube", "cube", o.cube);
    merge(cmd, cfg, "--transmittance", "transmittance", o.transmittance);
    merge(cmd, cfg, "--out", "out", o.out);
    merge(cmd, cfg, "--half-width", "half_width", o.half_width);
    merge(cmd, cfg, "--solar-scale", "solar_scale", o.solar_scale);
    require_file(o.cube, "--cube");
    require_file(o.transmittance, "--transmittance");
    if (o.out.empty())
        throw ValidationError("missing required path: --out");
    if (o.half_width <= 0.0)
        throw ValidationError("--half-width must be > 0");

    RunReport report("recalibrate");
    report.param("cube", o.cube);
    report.param("transmittance", o.transmittance);
    report.param("half_width", o.half_width);
    report.param("solar_scale", o.solar_scale);

    const plumekit::HyperCube cube =
        report.stage("load", [&] { return plumekit::load_cube(o.cube); });
    const plumekit::SpectralTable table = plumekit::load_table(o.transmittance);
    const plumekit::ReferenceSpectrum ref = plumekit::simulate_reference(table, o.solar_scale);
    const plumekit::RecalibrationResult result = report.stage(
        "recalibrate", [&] { return plumekit::recalibrate_cube(cube, ref, o.half_width); });

    ordered_json out;
    out["half_width_nm"] = o.half_width;
    out["columns"] = ordered_json::array();
    for (std::size_t c = 0; c < result.columns.size(); ++c) {
        const auto& col = result.columns[c];
        ordered_json jc;
        jc["col"] = c;
        jc["delta_nm"] = col.delta_nm;
        jc["residual"] = std::isfinite(col.residual) ? col.residual : -1.0;
        jc["ok"] = col.ok;
        if (!col.ok) {
            jc["error"] = col.message;
            report.warning("column " + std::to_string(c) + " failed: " + col.message);
        }
        out["columns"].push_back(std::move(jc));
    }
    const std::string text = out.dump(2) + "\n";
    plumekit::detail::write_all_bytes(o.out, text.data(), text.size());
    report.output(o.out);
    log_info("recalibrated " + std::to_string(result.columns.size()) + " columns, " +
             std::to_string(result.failed_count()) + " failed");
    report.write(report_path_for(o.out));
    return 0;
}

// ---- retrieve ----

struct RetrieveOpts {
    std::string config, cube, jacobian, out, report_out, window;
    double shrinkage = 0.05;
    unsigned threads = 1;
};

int run_retrieve(const CLI::App& cmd, RetrieveOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--cube", "cube", o.cube);
    merge(cmd, cfg, "--jacobian", "jacobian", o.jacobian);
    merge(cmd, cfg, "--out", "out", o.out);
    merge(cmd, cfg, "--report", "report", o.report_out);
    merge(cmd, cfg, "--window", "window", o.window);
    merge(cmd, cfg, "--shrinkage", "shrinkage", o.shrinkage);
    merge(cmd, cfg, "--threads", "threads", o.threads);
    require_file(o.cube, "--cube");
    require_file(o.jacobian, "--jacobian");
    if (o.out.empty())
        throw ValidationError("missing required path: --out");
    if (!(o.shrinkage >= 0.0 && o.shrinkage < 1.0))
        throw ValidationError("--shrinkage must be in [0,1)");

    RunReport report("retrieve");
    report.param("cube", o.cube);
    report.param("jacobian", o.jacobian);
    report.param("shrinkage", o.shrinkage);
    report.param("window", o.window.empty() ? "all" : o.window);
    report.param("threads", o.threads);

    const plumekit::HyperCube cube =
        report.stage("load", [&] { return plumekit::load_cube(o.cube); });
    const plumekit::UnitAbsorptionSpectrum k = plumekit::load_jacobian(o.jacobian);
    const plumekit::BandWindow window = parse_window(o.window, cube.bands);

    const plumekit::RetrievalOutput result = report.stage("matched_filter", [&] {
        return plumekit::retrieve_xch4(cube, k, o.shrinkage, window, o.threads);
    });
    if (result.report.degenerate_count() > 0)
        report.warning(std::to_string(result.report.degenerate_count()) +
                       " degenerate columns filled with sentinel");

    plumekit::save_map(result.map, o.out);
    report.output(o.out);

    if (!o.report_out.empty()) {
        ordered_json jr;
        jr["shrinkage"] = o.shrinkage;
        jr["window"] = {result.report.window.first, result.report.window.last};
        jr["columns"] = ordered_json::array();
        for (std::size_t c = 0; c < result.report.columns.size(); ++c) {
            const auto& col = result.report.columns[c];
            ordered_json jc;
            jc["col"] = c;
            jc["condition"] = std::isfinite(col.condition) ? col.condition : -1.0;
            jc["degenerate"] = col.degenerate;
            if (col.degenerate)
                jc["error"] = col.message;
            jr["columns"].push_back(std::move(jc));
        }
        const std::string text = jr.dump(2) + "\n";
        plumekit::detail::write_all_bytes(o.report_out, text.data(), text.size());
        report.output(o.report_out);
    }
    report.write(report_path_for(o.out));
    return 0;
}

// ---- simulate ----

struct SimulateOpts {
    std::string config, spec, out, truth, cube;
};

plumekit::GaussianPlumeSpec parse_source(const json& js) {
    plumekit::GaussianPlumeSpec s;
    s.source_strength = js.value("strength", 1.0);
    s.wind_speed = js.value("wind_speed", 1.0);
    s.wind_dir_deg = js.value("wind_dir_deg", 0.0);
    s.source_row = js.value("row", 0.0);
    s.source_col = js.value("col", 0.0);
    s.dispersion_coeff = js.value("dispersion_coeff", 0.08);
    s.dispersion_exp = js.value("dispersion_exp", 0.9);
    s.pixel_size_m = js.value("pixel_size_m", 30.0);
    return s;
}

// Toy forward model: per-band radiance = reference spectrum x (1 + E k),
// with optional per-column wavelength shifts applied to the true physics
// while the header keeps the declared calibration.
plumekit::HyperCube forward_model_cube(const plumekit::EnhancementMap& xch4, const json& jc,
                                       const fs::path& spec_path, std::uint64_t seed,
                                       RunReport& report) {
    const std::string t_path = resolve_from(spec_path, jc.value("transmittance", ""));
    const std::string x_path = resolve_from(spec_path, jc.value("cross_section", ""));
    require_file(t_path, "cube.transmittance");
    require_file(x_path, "cube.cross_section");
    const plumekit::SpectralTable t0 = plumekit::load_table(t_path);
    const plumekit::SpectralTable xsec = plumekit::load_table(x_path);

    if (!jc.contains("centers_nm"))
        throw ValidationError("cube.centers_nm block required");
    const json& jcent = jc.at("centers_nm");
    const std::size_t bands = jcent.value("count", std::size_t{0});
    if (bands < 2)
        throw ValidationError("cube.centers_nm.count must be >= 2");
    const Eigen::VectorXd centers =
        linspace_centers(jcent.value("start", 1540.0), jcent.value("step", 2.0), bands);
    const double fwhm_nm = jc.value("fwhm_nm", 2.5);
    const double solar_scale = jc.value("solar_scale", 1.0);
    const double delta_ppb = jc.value("delta_ppb", 1000.0);
    const double noise_rel = jc.value("radiance_noise_rel", 0.002);
    const Eigen::VectorXd fwhm = Eigen::VectorXd::Constant(bands, fwhm_nm);

    // per-column true wavelength shift: scalar, array, or uniform range
    std::vector<double> shifts(xch4.cols, 0.0);
    if (jc.contains("column_shift_nm")) {
        const json& js = jc.at("column_shift_nm");
        if (js.is_number()) {
            std::fill(shifts.begin(), shifts.end(), js.get<double>());
        } else if (js.is_array()) {
            if (js.size() != xch4.cols)
                throw ValidationError("cube.column_shift_nm array length != cols");
            for (std::size_t c = 0; c < shifts.size(); ++c)
                shifts[c] = js[c].get<double>();
        } else if (js.is_object() && js.contains("uniform")) {
            plumekit::Rng rng(plumekit::derive_seed(seed, 0xCA11B));
            const double lo = js["uniform"][0].get<double>();
            const double hi = js["uniform"][1].get<double>();
            for (double& s : shifts)
                s = rng.uniform(lo, hi);
        } else {
            throw ValidationError("cube.column_shift_nm: expected number, array, or "
                                  "{\"uniform\": [lo, hi]}");
        }
    }

    const plumekit::ReferenceSpectrum ref = plumekit::simulate_reference(t0, solar_scale);
    plumekit::HyperCube cube;
    cube.rows = xch4.rows;
    cube.cols = xch4.cols;
    cube.bands = bands;
    cube.data.assign(cube.rows * cube.cols * bands, 0.0f);
    cube.calib.centers = centers.transpose().replicate(cube.cols, 1); // declared
    cube.calib.fwhm = fwhm.transpose().replicate(cube.cols, 1);

    plumekit::Rng noise(plumekit::derive_seed(seed, 0xF0));
    for (std::size_t c = 0; c < cube.cols; ++c) {
        const Eigen::VectorXd true_centers = (centers.array() + shifts[c]).matrix();
        const Eigen::VectorXd mu0 = plumekit::convolve_srf(ref, true_centers, fwhm);
        const plumekit::UnitAbsorptionSpectrum k =
            plumekit::methane_jacobian(t0, xsec, true_centers, fwhm, delta_ppb);
        for (std::size_t r = 0; r < cube.rows; ++r) {
            const double enh = xch4.at(r, c);
            for (std::size_t b = 0; b < bands; ++b) {
                const double clean = mu0[b] * (1.0 + enh * k.k_per_ppb[b]);
                const double v = clean * (1.0 + noise_rel * noise.normal());
                cube.at(r, c, b) = static_cast<float>(std::max(0.0, v));
            }
        }
    }
    report.param("cube_bands", bands);
    report.param("cube_noise_rel", noise_rel);
    return cube;
}

int run_simulate(const CLI::App& cmd, SimulateOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--spec", "spec", o.spec);
    merge(cmd, cfg, "--out", "out", o.out);
    merge(cmd, cfg, "--truth", "truth", o.truth);
    merge(cmd, cfg, "--cube", "cube", o.cube);
    require_file(o.spec, "--spec");
    if (o.out.empty())
        throw ValidationError("missing required path: --out");
    if (o.truth.empty())
        throw ValidationError("missing required path: --truth");

    const json spec = plumekit::detail::parse_json_file(o.spec);
    if (!spec.contains("seed"))
        throw ValidationError("scene spec: \"seed\" is mandatory (no wall-clock default)");
    const std::uint64_t seed = spec.at("seed").get<std::uint64_t>();
    const std::size_t rows = spec.value("rows", std::size_t{64});
    const std::size_t cols = spec.value("cols", std::size_t{64});
    const double noise_std = spec.value("noise_std", 0.0);
    const double mask_floor = spec.value("mask_floor_frac", 0.01);
    if (!spec.contains("sources") || !spec["sources"].is_array() || spec["sources"].empty())
        throw ValidationError("scene spec: \"sources\" array required");

    RunReport report("simulate");
    report.param("spec", o.spec);
    report.param("seed", seed);
    report.param("rows", rows);
    report.param("cols", cols);
    report.param("noise_std", noise_std);

    std::vector<plumekit::GaussianPlumeSpec> sources;
    for (const json& js : spec["sources"])
        sources.push_back(parse_source(js));

    const plumekit::SyntheticSample scene = report.stage("simulate", [&] {
        return plumekit::make_oracle_scene(sources, rows, cols, noise_std, seed, mask_floor);
    });
    plumekit::save_map(scene.map, o.out);
    report.output(o.out);
    plumekit::save_masks(scene.truth, o.truth);
    report.output(o.truth);
    log_info("scene with " + std::to_string(scene.truth.instances.size()) +
             " truth instances");

    if (!o.cube.empty()) {
        if (!spec.contains("cube"))
            throw ValidationError("scene spec: \"cube\" block required for --cube output");
        const plumekit::HyperCube cube = report.stage("forward_model", [&] {
            return forward_model_cube(scene.map, spec.at("cube"), o.spec, seed, report);
        });
        plumekit::save_cube(cube, o.cube);
        report.output(o.cube);
    }
    report.write(report_path_for(o.out));
    return 0;
}

// ---- synth ----

struct SynthOpts {
    std::string config, manifest;
    std::size_t count = 0;
};

int run_synth(const CLI::App& cmd, SynthOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--manifest", "manifest", o.manifest);
    merge(cmd, cfg, "--count", "count", o.count);
    require_file(o.manifest, "--manifest");
    if (o.count == 0)
        throw ValidationError("--count must be >= 1");

    const json man = plumekit::detail::parse_json_file(o.manifest);
    if (!man.contains("seed"))
        throw ValidationError("manifest: \"seed\" is mandatory (no wall-clock default)");
    const std::uint64_t seed = man.at("seed").get<std::uint64_t>();
    const std::string templates_dir = resolve_from(o.manifest, man.value("templates_dir", ""));
    const std::string backgrounds_dir =
        resolve_from(o.manifest, man.value("backgrounds_dir", ""));
    const std::string out_dir = man.value("out_dir", ""); // outputs stay cwd-relative
    require_file(templates_dir, "manifest.templates_dir");
    require_file(backgrounds_dir, "manifest.backgrounds_dir");
    if (out_dir.empty())
        throw ValidationError("manifest.out_dir required");
    if (!man.contains("stages") || !man["stages"].is_array() || man["stages"].empty())
        throw ValidationError("manifest.stages array required");
    std::size_t lo_plumes = 1, hi_plumes = 1;
    if (man.contains("n_plumes_range")) {
        lo_plumes = man["n_plumes_range"][0].get<std::size_t>();
        hi_plumes = man["n_plumes_range"][1].get<std::size_t>();
        if (lo_plumes > hi_plumes)
            throw ValidationError("manifest.n_plumes_range: lo > hi");
    }

    RunReport report("synth");
    report.param("manifest", o.manifest);
    report.param("seed", seed);
    report.param("count", o.count);

    // donor templates: every *.masks.json with a sibling *.map.json
    std::vector<plumekit::PlumeTemplate> templates;
    std::vector<fs::path> mask_files;
    for (const auto& entry : fs::directory_iterator(templates_dir))
        if (entry.path().string().ends_with(".masks.json"))
            mask_files.push_back(entry.path());
    std::sort(mask_files.begin(), mask_files.end());
    for (const fs::path& mask_path : mask_files) {
        std::string stem = mask_path.string();
        stem.resize(stem.size() - std::string(".masks.json").size());
        const fs::path map_path = stem + ".map.json";
        if (!fs::exists(map_path)) {
            report.warning("donor " + mask_path.string() + " has no companion map, skipped");
            continue;
        }
        const auto masks = plumekit::load_masks(mask_path);
        const auto values = plumekit::load_enhancement_map(map_path);
        for (auto& tpl : plumekit::extract_templates(masks, values, mask_path.stem().string()))
            templates.push_back(std::move(tpl));
    }
    if (templates.empty())
        throw ValidationError("no donor templates found in " + templates_dir);

    std::vector<plumekit::EnhancementMap> backgrounds;
    std::vector<fs::path> bg_files;
    for (const auto& entry : fs::directory_iterator(backgrounds_dir))
        if (entry.path().string().ends_with(".map.json"))
            bg_files.push_back(entry.path());
    std::sort(bg_files.begin(), bg_files.end());
    for (const fs::path& p : bg_files)
        backgrounds.push_back(plumekit::load_enhancement_map(p));
    if (backgrounds.empty())
        throw ValidationError("no backgrounds found in " + backgrounds_dir);

    // empirical prior over per-donor gamma fits
    plumekit::GammaPrior prior;
    for (const auto& tpl : templates) {
        try {
            prior.entries.push_back(plumekit::fit_gamma(tpl.values));
        } catch (const std::exception& e) {
            report.warning("gamma fit failed for " + tpl.source_id + ": " + e.what());
        }
    }
    if (prior.entries.empty())
        throw ValidationError("no donor produced a valid gamma fit");
    report.param("n_templates", templates.size());
    report.param("n_backgrounds", backgrounds.size());

    // stage schedule: fractions normalized, consumed in sample order
    struct Stage {
        double cumulative;
        double sbr_min;
    };
    std::vector<Stage> stages;
    double total = 0.0;
    for (const json& js : man["stages"])
        total += js.at("fraction").get<double>();
    if (!(total > 0.0))
        throw ValidationError("manifest.stages fractions must sum > 0");
    double cum = 0.0;
    for (const json& js : man["stages"]) {
        cum += js.at("fraction").get<double>() / total;
        stages.push_back({cum, js.at("sbr_min").get<double>()});
    }

    report.stage("generate", [&] {
        for (std::size_t i = 0; i < o.count; ++i) {
            const double frac = (static_cast<double>(i) + 0.5) / static_cast<double>(o.count);
            double sbr_min = stages.back().sbr_min;
            for (const Stage& s : stages) {
                if (frac <= s.cumulative) {
                    sbr_min = s.sbr_min;
                    break;
                }
            }
            const std::uint64_t sample_seed = plumekit::derive_seed(seed, i);
            plumekit::Rng pick(plumekit::derive_seed(seed, 0x5EED + i));
            const std::size_t n_plumes =
                lo_plumes + pick.uniform_index(hi_plumes - lo_plumes + 1);
            const plumekit::SyntheticSample sample = plumekit::generate_sample(
                templates, backgrounds, prior, sbr_min, n_plumes, sample_seed);
            for (const std::string& w : sample.warnings)
                report.warning("sample " + std::to_string(i) + ": " + w);

            char name[32];
            std::snprintf(name, sizeof(name), "sample_%05zu", i);
            const fs::path base = fs::path(out_dir) / name;
            plumekit::save_map(sample.map, base.string() + ".map.json");
            plumekit::save_masks(sample.truth, base.string() + ".masks.json");
            ordered_json meta;
            meta["seed"] = sample.rng_seed;
            meta["sbr_min"] = sbr_min;
            meta["n_plumes_requested"] = n_plumes;
            meta["sbr"] = sample.sbr;
            meta["warnings"] = sample.warnings;
            const std::string text = meta.dump(2) + "\n";
            plumekit::detail::write_all_bytes(base.string() + ".meta.json", text.data(),
                                              text.size());
        }
    });
    log_info("wrote " + std::to_string(o.count) + " samples to " + out_dir);
    report.output(out_dir);
    report.write(fs::path(out_dir) / "synth.run.json");
    return 0;
}

// ---- detect ----

struct DetectOpts {
    std::string config, prob, xch4, out, prob_out;
    double low = 0.5, high = 0.9;
    int connectivity = 8;
    bool baseline = false;
};

int run_detect(const CLI::App& cmd, DetectOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--prob", "prob", o.prob);
    merge(cmd, cfg, "--xch4", "xch4", o.xch4);
    merge(cmd, cfg, "--out", "out", o.out);
    merge(cmd, cfg, "--prob-out", "prob_out", o.prob_out);
    merge(cmd, cfg, "--low", "low", o.low);
    merge(cmd, cfg, "--high", "high", o.high);
    merge(cmd, cfg, "--connectivity", "connectivity", o.connectivity);
    if (cmd.count("--baseline") == 0 && cfg.contains("baseline"))
        o.baseline = cfg["baseline"].get<bool>();
    if (o.out.empty())
        throw ValidationError("missing required path: --out");
    if (o.baseline != o.prob.empty())
        throw ValidationError("use either --prob <map> or --xch4 <map> --baseline");
    if (o.connectivity != 4 && o.connectivity != 8)
        throw ValidationError("--connectivity must be 4 or 8");

    RunReport report("detect");
    report.param("low", o.low);
    report.param("high", o.high);
    report.param("connectivity", o.connectivity);
    report.param("baseline", o.baseline);

    plumekit::ProbabilityMap prob;
    if (o.baseline) {
        require_file(o.xch4, "--xch4");
        report.param("xch4", o.xch4);
        const plumekit::EnhancementMap map = plumekit::load_enhancement_map(o.xch4);
        prob = report.stage("baseline_probability",
                            [&] { return plumekit::baseline_probability(map); });
        if (!o.prob_out.empty()) {
            plumekit::save_map(prob, o.prob_out);
            report.output(o.prob_out);
        }
    } else {
        require_file(o.prob, "--prob");
        report.param("prob", o.prob);
        prob = plumekit::load_probability_map(o.prob);
    }

    const plumekit::InstanceMaskSet masks = report.stage("hysteresis", [&] {
        return plumekit::hysteresis_threshold(prob, {o.low, o.high}, o.connectivity);
    });
    plumekit::save_masks(masks, o.out);
    report.output(o.out);
    log_info(std::to_string(masks.instances.size()) + " detections");
    report.write(report_path_for(o.out));
    return 0;
}

// ---- evaluate ----

struct EvaluateOpts {
    std::string config, out;
    std::vector<std::string> pred, truth;
};

int run_evaluate(const CLI::App& cmd, EvaluateOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--pred", "pred", o.pred);
    merge(cmd, cfg, "--truth", "truth", o.truth);
    merge(cmd, cfg, "--out", "out", o.out);
    if (o.pred.empty() || o.truth.empty())
        throw ValidationError("--pred and --truth mask lists required");
    if (o.pred.size() != o.truth.size())
        throw ValidationError("--pred and --truth must have the same length");
    if (o.out.empty())
        throw ValidationError("missing required path: --out");
    for (const auto& p : o.pred)
        require_file(p, "--pred");
    for (const auto& t : o.truth)
        require_file(t, "--truth");

    RunReport report("evaluate");
    report.param("n_scenes", o.pred.size());

    plumekit::DatasetAccumulator acc;
    report.stage("evaluate", [&] {
        for (std::size_t i = 0; i < o.pred.size(); ++i)
            acc.add(plumekit::load_masks(o.pred[i]), plumekit::load_masks(o.truth[i]));
    });
    const plumekit::EvalReport r = acc.report();
    const std::string text = report_to_json(r).dump(2) + "\n";
    plumekit::detail::write_all_bytes(o.out, text.data(), text.size());
    report.output(o.out);
    log_info("precision " + plumekit::detail::format_double(r.precision) + ", recall " +
             plumekit::detail::format_double(r.recall) + ", iou " +
             plumekit::detail::format_double(r.iou));
    report.write(report_path_for(o.out));
    return 0;
}

// ---- sweep ----

struct SweepOpts {
    std::string config, out, low_grid = "0:1:0.05", high_grid = "0:1:0.05";
    std::vector<std::string> prob, truth;
    int connectivity = 8;
};

int run_sweep(const CLI::App& cmd, SweepOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--prob", "prob", o.prob);
    merge(cmd, cfg, "--truth", "truth", o.truth);
    merge(cmd, cfg, "--out", "out", o.out);
    merge(cmd, cfg, "--low-grid", "low_grid", o.low_grid);
    merge(cmd, cfg, "--high-grid", "high_grid", o.high_grid);
    merge(cmd, cfg, "--connectivity", "connectivity", o.connectivity);
    if (o.prob.empty() || o.truth.empty())
        throw ValidationError("--prob and --truth lists required");
    if (o.prob.size() != o.truth.size())
        throw ValidationError("--prob and --truth must have the same length");
    if (o.out.empty())
        throw ValidationError("missing required path: --out");
    for (const auto& p : o.prob)
        require_file(p, "--prob");
    for (const auto& t : o.truth)
        require_file(t, "--truth");

    RunReport report("sweep");
    report.param("n_scenes", o.prob.size());
    report.param("low_grid", o.low_grid);
    report.param("high_grid", o.high_grid);
    report.param("connectivity", o.connectivity);

    std::vector<plumekit::ProbabilityMap> probs;
    std::vector<plumekit::InstanceMaskSet> truths;
    for (std::size_t i = 0; i < o.prob.size(); ++i) {
        probs.push_back(plumekit::load_probability_map(o.prob[i]));
        truths.push_back(plumekit::load_masks(o.truth[i]));
    }
    const std::vector<plumekit::SweepRow> rows = report.stage("sweep", [&] {
        return plumekit::sweep(probs, truths, parse_grid(o.low_grid, "--low-grid"),
                               parse_grid(o.high_grid, "--high-grid"), o.connectivity);
    });
    const std::string csv = format_sweep_csv(rows);
    plumekit::detail::write_all_bytes(o.out, csv.data(), csv.size());
    report.output(o.out);

    const plumekit::SweepRow best = plumekit::select_best(rows, "iou");
    log_info("best iou " + plumekit::detail::format_double(best.iou) + " at low " +
             plumekit::detail::format_double(best.low) + ", high " +
             plumekit::detail::format_double(best.high));
    report.param("best_low", best.low);
    report.param("best_high", best.high);
    report.param("best_iou", best.iou);
    report.write(report_path_for(o.out));
    return 0;
}

// ---- pipeline ----

struct PipelineOpts {
    std::string config, cube, xch4, truth, out_dir;
    std::string transmittance, cross_section;
    double solar_scale = 1.0;
    double half_width = 3.0;
    double delta_ppb = 1000.0;
    double shrinkage = 0.05;
    double low = 0.45, high = 0.7;
    int connectivity = 8;
    unsigned threads = 1;
};

int run_pipeline(const CLI::App& cmd, PipelineOpts& o) {
    const json cfg = load_config(o.config);
    merge(cmd, cfg, "--cube", "cube", o.cube);
    merge(cmd, cfg, "--xch4", "xch4", o.xch4);
    merge(cmd, cfg, "--truth", "truth", o.truth);
    merge(cmd, cfg, "--out-dir", "out_dir", o.out_dir);
    merge(cmd, cfg, "--transmittance", "transmittance", o.transmittance);
    merge(cmd, cfg, "--cross-section", "cross_section", o.cross_section);
    merge(cmd, cfg, "--solar-scale", "solar_scale", o.solar_scale);
    merge(cmd, cfg, "--half-width", "half_width", o.half_width);
    merge(cmd, cfg, "--delta-ppb", "delta_ppb", o.delta_ppb);
    merge(cmd, cfg, "--shrinkage", "shrinkage", o.shrinkage);
    merge(cmd, cfg, "--low", "low", o.low);
    merge(cmd, cfg, "--high", "high", o.high);
    merge(cmd, cfg, "--connectivity", "connectivity", o.connectivity);
    merge(cmd, cfg, "--threads", "threads", o.threads);
    if (o.out_dir.empty())
        throw ValidationError("missing required path: --out-dir");
    if (o.cube.empty() == o.xch4.empty())
        throw ValidationError("exactly one of --cube or --xch4 required");

    RunReport report("pipeline");
    const fs::path out(o.out_dir);
    fs::create_directories(out);

    plumekit::EnhancementMap xch4;
    if (!o.cube.empty()) {
        require_file(o.cube, "--cube");
        require_file(o.transmittance, "--transmittance");
        require_file(o.cross_section, "--cross-section");
        report.param("cube", o.cube);
        report.param("half_width", o.half_width);
        report.param("shrinkage", o.shrinkage);

        const plumekit::HyperCube cube =
            report.stage("load", [&] { return plumekit::load_cube(o.cube); });
        const plumekit::SpectralTable t0 = plumekit::load_table(o.transmittance);
        const plumekit::SpectralTable xsec = plumekit::load_table(o.cross_section);
        const plumekit::ReferenceSpectrum ref =
            plumekit::simulate_reference(t0, o.solar_scale);

        const plumekit::RecalibrationResult recal = report.stage("recalibrate", [&] {
            return plumekit::recalibrate_cube(cube, ref, o.half_width);
        });
        if (recal.failed_count() > 0)
            report.warning(std::to_string(recal.failed_count()) +
                           " columns failed recalibration, using declared calibration");
        {
            ordered_json jr;
            jr["columns"] = ordered_json::array();
            for (std::size_t c = 0; c < recal.columns.size(); ++c)
                jr["columns"].push_back({{"col", c},
                                         {"delta_nm", recal.columns[c].delta_nm},
                                         {"ok", recal.columns[c].ok}});
            const std::string text = jr.dump(2) + "\n";
            plumekit::detail::write_all_bytes(out / "recalibration.json", text.data(),
                                              text.size());
            report.output(out / "recalibration.json");
        }

        // per-column jacobian at the recalibrated centers
        const Eigen::MatrixXd k_cols = report.stage("jacobian", [&] {
            Eigen::MatrixXd k(cube.cols, cube.bands);
            for (std::size_t c = 0; c < cube.cols; ++c) {
                const double shift = recal.columns[c].ok ? recal.columns[c].delta_nm : 0.0;
                const Eigen::VectorXd centers =
                    (cube.calib.centers.row(c).transpose().array() + shift).matrix();
                k.row(c) = plumekit::methane_jacobian(t0, xsec, centers,
                                                      cube.calib.fwhm.row(c).transpose(),
                                                      o.delta_ppb)
                               .k_per_ppb.transpose();
            }
            return k;
        });

        const plumekit::RetrievalOutput retrieval = report.stage("matched_filter", [&] {
            return plumekit::retrieve_xch4(cube, k_cols, o.shrinkage, {}, o.threads);
        });
        if (retrieval.report.degenerate_count() > 0)
            report.warning(std::to_string(retrieval.report.degenerate_count()) +
                           " degenerate columns");
        xch4 = retrieval.map;
        plumekit::save_map(xch4, out / "xch4.map.json");
        report.output(out / "xch4.map.json");
    } else {
        require_file(o.xch4, "--xch4");
        report.param("xch4", o.xch4);
        xch4 = plumekit::load_enhancement_map(o.xch4);
    }

    const plumekit::ProbabilityMap prob = report.stage(
        "baseline_probability", [&] { return plumekit::baseline_probability(xch4); });
    plumekit::save_map(prob, out / "probability.map.json");
    report.output(out / "probability.map.json");

    report.param("low", o.low);
    report.param("high", o.high);
    const plumekit::InstanceMaskSet detections = report.stage("hysteresis", [&] {
        return plumekit::hysteresis_threshold(prob, {o.low, o.high}, o.connectivity);
    });
    plumekit::save_masks(detections, out / "detections.masks.json");
    report.output(out / "detections.masks.json");
    log_info(std::to_string(detections.instances.size()) + " detections");

    if (!o.truth.empty()) {
        require_file(o.truth, "--truth");
        const plumekit::InstanceMaskSet truth = plumekit::load_masks(o.truth);
        plumekit::DatasetAccumulator acc;
        acc.add(detections, truth);
        const plumekit::EvalReport r = acc.report();
        const std::string text = report_to_json(r).dump(2) + "\n";
        plumekit::detail::write_all_bytes(out / "evaluation.json", text.data(), text.size());
        report.output(out / "evaluation.json");
        log_info("precision " + plumekit::detail::format_double(r.precision) + ", recall " +
                 plumekit::detail::format_double(r.recall));
    }
    report.write(out / "run.json");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"methane plume retrieval and detection toolkit"};
    app.require_subcommand(1);

    RecalibrateOpts rc;
    CLI::App* recalibrate = app.add_subcommand(
        "recalibrate", "fit per-column wavelength offsets against a reference spectrum");
    recalibrate->add_option("--config", rc.config, "JSON config (flags win)");
    recalibrate->add_option("--cube", rc.cube, "input cube header");
    recalibrate->add_option("--transmittance", rc.transmittance, "transmittance CSV");
    recalibrate->add_option("--half-width", rc.half_width, "search half-width, nm");
    recalibrate->add_option("--solar-scale", rc.solar_scale, "reference radiance scale");
    recalibrate->add_option("--out", rc.out, "output JSON");

    RetrieveOpts rt;
    CLI::App* retrieve =
        app.add_subcommand("retrieve", "per-column matched-filter XCH4 retrieval");
    retrieve->add_option("--config", rt.config, "JSON config (flags win)");
    retrieve->add_option("--cube", rt.cube, "input cube header");
    retrieve->add_option("--jacobian", rt.jacobian, "unit absorption CSV");
    retrieve->add_option("--shrinkage", rt.shrinkage, "covariance shrinkage in [0,1)");
    retrieve->add_option("--window", rt.window, "band window b0:b1");
    retrieve->add_option("--threads", rt.threads, "worker threads (0 = auto)");
    retrieve->add_option("--out", rt.out, "output map header");
    retrieve->add_option("--report", rt.report_out, "per-column report JSON");

    SimulateOpts sim;
    CLI::App* simulate =
        app.add_subcommand("simulate", "deterministic Gaussian-plume oracle scene");
    simulate->add_option("--config", sim.config, "JSON config (flags win)");
    simulate->add_option("--spec", sim.spec, "scene spec JSON");
    simulate->add_option("--out", sim.out, "output map header");
    simulate->add_option("--truth", sim.truth, "output truth mask JSON");
    simulate->add_option("--cube", sim.cube, "also emit a forward-modeled radiance cube");

    SynthOpts sy;
    CLI::App* synth =
        app.add_subcommand("synth", "generate synthetic training samples by plume transfer");
    synth->add_option("--config", sy.config, "JSON config (flags win)");
    synth->add_option("--manifest", sy.manifest, "dataset manifest JSON");
    synth->add_option("--count", sy.count, "number of samples");

    DetectOpts dt;
    CLI::App* detect = app.add_subcommand("detect", "hysteresis thresholding of plume maps");
    detect->add_option("--config", dt.config, "JSON config (flags win)");
    detect->add_option("--prob", dt.prob, "probability map header");
    detect->add_option("--xch4", dt.xch4, "enhancement map header (with --baseline)");
    detect->add_flag("--baseline", dt.baseline, "derive probabilities with the surrogate");
    detect->add_option("--low", dt.low, "low threshold");
    detect->add_option("--high", dt.high, "high threshold");
    detect->add_option("--connectivity", dt.connectivity, "4 or 8");
    detect->add_option("--out", dt.out, "output mask JSON");
    detect->add_option("--prob-out", dt.prob_out, "save derived probability map");

    EvaluateOpts ev;
    CLI::App* evaluate = app.add_subcommand("evaluate", "mask-basis detection metrics");
    evaluate->add_option("--config", ev.config, "JSON config (flags win)");
    evaluate->add_option("--pred", ev.pred, "predicted mask JSONs");
    evaluate->add_option("--truth", ev.truth, "ground-truth mask JSONs");
    evaluate->add_option("--out", ev.out, "output metrics JSON");

    SweepOpts sw;
    CLI::App* sweepcmd = app.add_subcommand("sweep", "hysteresis threshold trade-off sweep");
    sweepcmd->add_option("--config", sw.config, "JSON config (flags win)");
    sweepcmd->add_option("--prob", sw.prob, "probability map headers");
    sweepcmd->add_option("--truth", sw.truth, "ground-truth mask JSONs");
    sweepcmd->add_option("--low-grid", sw.low_grid, "low grid start:stop:step");
    sweepcmd->add_option("--high-grid", sw.high_grid, "high grid start:stop:step");
    sweepcmd->add_option("--connectivity", sw.connectivity, "4 or 8");
    sweepcmd->add_option("--out", sw.out, "output CSV");

    PipelineOpts pl;
    CLI::App* pipeline = app.add_subcommand(
        "pipeline", "recalibrate, retrieve, detect, and evaluate in one pass");
    pipeline->add_option("--config", pl.config, "JSON config (flags win)");
    pipeline->add_option("--cube", pl.cube, "input cube header (full chain)");
    pipeline->add_option("--xch4", pl.xch4, "input map header (detection only)");
    pipeline->add_option("--truth", pl.truth, "truth mask JSON for evaluation");
    pipeline->add_option("--transmittance", pl.transmittance, "transmittance CSV");
    pipeline->add_option("--cross-section", pl.cross_section, "methane cross-section CSV");
    pipeline->add_option("--solar-scale", pl.solar_scale, "reference radiance scale");
    pipeline->add_option("--half-width", pl.half_width, "recalibration half-width, nm");
    pipeline->add_option("--delta-ppb", pl.delta_ppb, "jacobian perturbation, ppb");
    pipeline->add_option("--shrinkage", pl.shrinkage, "covariance shrinkage");
    pipeline->add_option("--low", pl.low, "hysteresis low threshold");
    pipeline->add_option("--high", pl.high, "hysteresis high threshold");
    pipeline->add_option("--connectivity", pl.connectivity, "4 or 8");
    pipeline->add_option("--threads", pl.threads, "worker threads (0 = auto)");
    pipeline->add_option("--out-dir", pl.out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (recalibrate->parsed())
            return run_recalibrate(*recalibrate, rc);
        if (retrieve->parsed())
            return run_retrieve(*retrieve, rt);
        if (simulate->parsed())
            return run_simulate(*simulate, sim);
        if (synth->parsed())
            return run_synth(*synth, sy);
        if (detect->parsed())
            return run_detect(*detect, dt);
        if (evaluate->parsed())
            return run_evaluate(*evaluate, ev);
        if (sweepcmd->parsed())
            return run_sweep(*sweepcmd, sw);
        if (pipeline->parsed())
            return run_pipeline(*pipeline, pl);
    } catch (const ValidationError& e) {
        logmsg(LogLevel::error, e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        logmsg(LogLevel::error, e.what());
        return 1;
    } catch (const std::exception& e) {
        logmsg(LogLevel::error, e.what());
        return 2;
    }
    return 0;
}
