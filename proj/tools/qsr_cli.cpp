// qsr: command-line front end.
//
// Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <qsr/qsr.hpp>

using namespace qsr;
using nlohmann::json;

namespace {

constexpr int exit_input = 2;
constexpr int exit_numeric = 3;

// Flags shared by every subcommand that builds a PipelineConfig. Unset
// optionals leave the config file (or built-in default) untouched.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backend;
    std::optional<std::size_t> k_max, nls_iters, pade_m, pade_n, n_max, lanczos_k;
    std::optional<double> sv_tol, sv_floor, omp_tol, residual_tol, eta;
    std::optional<std::string> rules;

    void attach(CLI::App* app, bool spectral) {
        app->add_option("-c,--config", config, "JSON config file");
        app->add_option("--seed", seed, "random seed (overrides the config)");
        if (!spectral) return;
        app->add_option("--backend", backend, "pade_z, lanczos or matrix_pencil");
        app->add_option("--k-max", k_max, "maximum number of atoms");
        app->add_option("--sv-tol", sv_tol, "relative singular value cut");
        app->add_option("--sv-floor", sv_floor, "absolute singular value cut");
        app->add_option("--nls-iters", nls_iters, "refinement iterations");
        app->add_option("--omp-tol", omp_tol, "pursuit residual tolerance");
        app->add_option("--pade-m", pade_m, "fixed numerator order");
        app->add_option("--pade-n", pade_n, "fixed denominator order");
        app->add_option("--n-max", n_max, "largest denominator order in the sweep");
        app->add_option("--residual-tol", residual_tol, "order sweep tolerance");
        app->add_option("--eta", eta, "Lorentzian broadening of the Ritz density");
        app->add_option("--lanczos-k", lanczos_k, "Krylov dimension");
    }

    PipelineConfig build(bool need_binning, const PipelineConfig* fallback = nullptr) const {
        PipelineConfig c;
        if (!config.empty()) c = load_config(config);
        else if (fallback) c = *fallback;
        else if (need_binning) throw ConfigError("this command needs --config with a binning section");
        if (seed) c.seed = *seed;
        if (backend) c.backend = backend_from_string(*backend);
        if (k_max) c.sparse.k_max = *k_max;
        if (sv_tol) c.sparse.sv_tol = *sv_tol;
        if (sv_floor) c.sparse.sv_floor = *sv_floor;
        if (nls_iters) c.sparse.nls_iters = *nls_iters;
        if (omp_tol) c.sparse.omp_tol = *omp_tol;
        if (pade_m) c.pade.m = *pade_m;
        if (pade_n) c.pade.n = *pade_n;
        if (n_max) c.pade.n_max = *n_max;
        if (residual_tol) c.pade.residual_tol = *residual_tol;
        if (eta) c.lanczos.eta = *eta;
        if (lanczos_k) c.lanczos.k = *lanczos_k;
        if (rules) {
            c.rules_path = *rules;
            c.rules = parse_rules(detail::read_file(*rules));
        }
        if (need_binning) c.validate();
        else c.validate_spectral();
        return c;
    }
};

json read_json(const std::string& path) {
    try {
        return json::parse(detail::read_file(path));
    } catch (const json::parse_error& e) {
        throw InputError("'" + path + "': " + e.what());
    }
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text << '\n';
}

Eigen::VectorXd start_vector(const std::string& path, std::size_t dim) {
    if (path.empty()) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dim));
    const auto j = read_json(path);
    if (!j.is_array()) throw InputError("start vector must be a JSON array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw InputError("start vector entries must be numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    if (static_cast<std::size_t>(v.size()) != dim)
        throw InputError("start vector has " + std::to_string(v.size()) + " entries, operator has dimension " +
                         std::to_string(dim));
    return v;
}

// Signal or operator input, whichever the backend wants.
struct SpectralInput {
    std::string signal, op, start;

    void attach(CLI::App* app) {
        app->add_option("-s,--signal", signal, "signal file (.json or t,value CSV)");
        app->add_option("--operator", op, "symmetric matrix (.json or CSV) for the lanczos backend");
        app->add_option("--start", start, "JSON start vector for the lanczos backend (default all ones)");
    }

    RunResult estimate(const PipelineConfig& cfg) const {
        if (cfg.backend == Backend::lanczos) {
            if (op.empty()) throw ConfigError("the lanczos backend needs --operator");
            const auto h = load_operator(op);
            return estimate_hermitian(h, start_vector(start, h.dim()), cfg);
        }
        if (signal.empty()) throw ConfigError("backend " + to_string(cfg.backend) + " needs --signal");
        return qsr::estimate(load_signal(signal), cfg);
    }

    RunResult run(const PipelineConfig& cfg) const {
        if (cfg.backend == Backend::lanczos) {
            if (op.empty()) throw ConfigError("the lanczos backend needs --operator");
            const auto h = load_operator(op);
            return run_hermitian(h, start_vector(start, h.dim()), cfg);
        }
        if (signal.empty()) throw ConfigError("backend " + to_string(cfg.backend) + " needs --signal");
        return qsr::run(load_signal(signal), cfg);
    }
};

std::vector<double> default_grid(const SparseSpectrum& sp, double fallback_hi, std::size_t points) {
    double lo = 0.0, hi = fallback_hi;
    if (!sp.atoms.empty()) {
        lo = sp.atoms.front().omega - 5.0 * sp.atoms.front().gamma;
        hi = sp.atoms.back().omega + 5.0 * sp.atoms.back().gamma;
        for (const auto& a : sp.atoms) {
            lo = std::min(lo, a.omega - 5.0 * a.gamma);
            hi = std::max(hi, a.omega + 5.0 * a.gamma);
        }
    }
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return g;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rational spectral estimation, predicate projection and rule inference"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string out;
    bool timings = false;
    app.add_option("-o,--out", out, "output file (default stdout)");

    // estimate
    Overrides est_o;
    SpectralInput est_in;
    std::string spectrum_csv;
    std::size_t grid_points = 512;
    auto* est = app.add_subcommand("estimate", "signal or operator -> atoms JSON (+ spectrum CSV)");
    est_o.attach(est, true);
    est_in.attach(est);
    est->add_option("--spectrum-csv", spectrum_csv, "also write the atom spectrum on a grid");
    est->add_option("--grid-points", grid_points, "grid size for --spectrum-csv")->check(CLI::Range(2, 1000000));
    est->add_flag("--timings", timings, "include stage timings");

    // project
    Overrides proj_o;
    std::string atoms_path;
    auto* proj = app.add_subcommand("project", "atoms JSON -> predicate names");
    proj_o.attach(proj, false);
    proj->add_option("-a,--atoms", atoms_path, "atoms JSON (bare or inside a run result)")->required();

    // reason
    Overrides rsn_o;
    std::string preds_path;
    auto* rsn = app.add_subcommand("reason", "predicates + rules -> derived set and proof trace");
    rsn_o.attach(rsn, false);
    rsn->add_option("-p,--predicates", preds_path, "JSON array of predicate names")->required();
    rsn->add_option("-r,--rules", rsn_o.rules, "rule file (overrides the config)");

    // run
    Overrides run_o;
    SpectralInput run_in;
    auto* runc = app.add_subcommand("run", "end to end: estimate, project, reason");
    run_o.attach(runc, true);
    run_in.attach(runc);
    runc->add_option("-r,--rules", run_o.rules, "rule file (overrides the config)");
    runc->add_flag("--timings", timings, "include stage timings");

    // detect
    Overrides det_o;
    std::string det_signal, alert = "anomaly";
    std::size_t window = 128, stride = 32;
    unsigned threads = 1;
    auto* det = app.add_subcommand("detect", "sliding-window anomaly detection");
    det_o.attach(det, true);
    det->add_option("-s,--signal", det_signal, "signal file")->required();
    det->add_option("-r,--rules", det_o.rules, "rule file (overrides the config)");
    det->add_option("--window", window, "window length in samples");
    det->add_option("--stride", stride, "window step in samples");
    det->add_option("--alert", alert, "predicate that flags a window");
    det->add_option("--threads", threads, "windows evaluated concurrently");

    // synth
    std::optional<std::uint64_t> syn_seed;
    std::string regime = "underdamped_low", format = "csv";
    std::size_t syn_n = 256;
    double syn_noise = 0.0, syn_dt = 0.05;
    std::optional<std::size_t> cp_at;
    double cp_omega = 3.0, cp_shift = 0.2, cp_gamma = 0.02;
    auto* syn = app.add_subcommand("synth", "generate a benchmark or changepoint signal");
    syn->add_option("--seed", syn_seed, "random seed");
    syn->add_option("--regime", regime, "one of the 8 regimes, or 'changepoint'");
    syn->add_option("-n,--samples", syn_n, "number of samples");
    syn->add_option("--noise", syn_noise, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);
    syn->add_option("--dt", syn_dt, "sample spacing")->check(CLI::PositiveNumber);
    syn->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    syn->add_option("--at", cp_at, "changepoint sample (changepoint only; omit for a clean signal)");
    syn->add_option("--omega", cp_omega, "base frequency (changepoint only)");
    syn->add_option("--shift", cp_shift, "relative frequency jump (changepoint only)");
    syn->add_option("--gamma", cp_gamma, "damping (changepoint only)");

    // bench
    Overrides bch_o;
    BenchSettings bs;
    auto* bch = app.add_subcommand("bench", "regime classification benchmark with a confusion report");
    bch_o.attach(bch, true);
    bch->add_option("--samples", bs.samples, "number of generated samples");
    bch->add_option("-n,--length", bs.n, "samples per signal");
    bch->add_option("--noise", bs.noise_sigma, "Gaussian noise sigma")->check(CLI::NonNegativeNumber);
    bch->add_flag("--timings", timings, "include wall time");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_input;
    }

    try {
        if (*est) {
            const auto cfg = est_o.build(false);
            const auto rr = est_in.estimate(cfg);
            json j{{"atoms", rr.atoms}};
            auto full = result_to_json(rr, timings);
            for (const char* k : {"diagnostics", "order", "rational", "multiple_pole", "ritz"})
                if (full.contains(k)) j[k] = full[k];
            emit(out, j.dump(2));
            if (!spectrum_csv.empty()) {
                std::ofstream csv(spectrum_csv);
                if (!csv) throw InputError("cannot write '" + spectrum_csv + "'");
                write_spectrum_csv(csv, rr.atoms, default_grid(rr.atoms, 10.0, grid_points));
            }
        } else if (*proj) {
            const auto cfg = proj_o.build(true);
            auto j = read_json(atoms_path);
            if (j.is_object() && j.contains("atoms") && j["atoms"].is_object()) j = j["atoms"];
            SparseSpectrum sp;
            try {
                sp = j.get<SparseSpectrum>();
            } catch (const json::exception& e) {
                throw InputError(std::string("atoms: ") + e.what());
            }
            emit(out, json{{"predicates", project(sp, cfg.binning)}}.dump(2));
        } else if (*rsn) {
            const auto cfg = rsn_o.build(false);
            SymbolSet facts;
            try {
                facts = read_json(preds_path).get<SymbolSet>();
            } catch (const json::exception& e) {
                throw InputError(std::string("predicates: ") + e.what());
            }
            const auto inf = infer(cfg.rules, facts);
            emit(out, json{{"derived", inf.derived}, {"trace", inf.trace}}.dump(2));
        } else if (*runc) {
            const auto cfg = run_o.build(true);
            emit(out, result_to_json(run_in.run(cfg), timings).dump(2));
        } else if (*det) {
            const auto cfg = det_o.build(true);
            const auto x = load_signal(det_signal);
            if (window < 2 || window > x.size() || stride < 1)
                throw ArgumentError("need 2 <= window <= signal length and stride >= 1");
            const auto hits = detect_anomalies(x, cfg, window, stride, alert, threads);
            json h = json::array();
            for (const auto& w : hits) h.push_back({{"start", w.start}, {"result", result_to_json(w.result)}});
            emit(out, json{{"windows", window_count(x.size(), window, stride)},
                           {"window", window},
                           {"stride", stride},
                           {"flagged", std::move(h)}}
                          .dump(2));
        } else if (*syn) {
            const std::uint64_t seed = syn_seed.value_or(0);
            json meta;
            const TimeSeries series = [&] {
                if (regime != "changepoint")
                    return synth_oscillator(regime_from_string(regime), syn_n, syn_noise, seed, syn_dt).series;
                const auto cp = synth_changepoint(syn_n, cp_at, cp_omega, cp_shift, cp_gamma, syn_noise, seed, syn_dt);
                meta = {{"changepoint", cp.changepoint ? json(*cp.changepoint) : json(nullptr)},
                        {"omega_before", cp.omega_before},
                        {"omega_after", cp.omega_after}};
                return cp.series;
            }();
            if (format == "json") {
                auto j = to_json(series);
                if (!meta.is_null()) j["truth"] = meta;
                emit(out, j.dump());
            } else {
                std::ostringstream csv;
                write_signal_csv(csv, series);
                std::string text = csv.str();
                text.pop_back();
                emit(out, text);
            }
        } else if (*bch) {
            const auto builtin = benchmark_config();
            const auto cfg = bch_o.build(true, &builtin);
            bs.seed = cfg.seed;
            const auto rep = run_benchmark(cfg, bs);
            auto j = report_to_json(rep, timings);
            j["samples"] = bs.samples;
            j["noise_sigma"] = bs.noise_sigma;
            j["seed"] = bs.seed;
            emit(out, j.dump(2));
        }
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.numeric() ? exit_numeric : exit_input;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_input;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_input;
    }
    return 0;
}
