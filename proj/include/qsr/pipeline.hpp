#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"
#include "lanczos.hpp"
#include "pade.hpp"
#include "rules.hpp"
#include "signal.hpp"
#include "signal_io.hpp"
#include "sparse.hpp"
#include "symbolic.hpp"

namespace qsr {

enum class Backend { pade_z, lanczos, matrix_pencil };

inline std::string to_string(Backend b) {
    switch (b) {
    case Backend::pade_z: return "pade_z";
    case Backend::lanczos: return "lanczos";
    case Backend::matrix_pencil: return "matrix_pencil";
    }
    return "?";
}

inline Backend backend_from_string(const std::string& s) {
    if (s == "pade_z") return Backend::pade_z;
    if (s == "lanczos") return Backend::lanczos;
    if (s == "matrix_pencil") return Backend::matrix_pencil;
    throw ConfigError("unknown backend '" + s + "' (expected pade_z, lanczos or matrix_pencil)");
}

/// Fixed [m/n] when both orders are set, otherwise an automatic sweep.
struct PadeSettings {
    std::optional<std::size_t> m;
    std::optional<std::size_t> n;
    std::size_t n_max = 8;
    double residual_tol = 1e-8;
};

struct LanczosSettings {
    std::size_t k = 50;
    double eta = 0.05;
    bool reorthogonalize = true;
};

struct SparseSettings {
    std::size_t k_max = 4;   ///< atoms (pencil: oscillating modes, each two exponentials)
    double sv_tol = 1e-8;    ///< relative singular value cut
    double sv_floor = 0.0;   ///< absolute singular value cut
    std::size_t nls_iters = 50;
    double omp_tol = 1e-3;
};

inline constexpr std::size_t max_pade_order = 64;

struct PipelineConfig {
    PreprocessConfig preprocess;
    Backend backend = Backend::matrix_pencil;
    PadeSettings pade;
    LanczosSettings lanczos;
    SparseSettings sparse;
    BinningConfig binning;
    std::string rules_path;
    RuleSet rules;
    std::uint64_t seed = 0;

    void validate() const {
        binning.validate();
        validate_spectral();
    }

    /// Everything but the binning; enough for the estimation stages.
    void validate_spectral() const {
        if (pade.m.has_value() != pade.n.has_value())
            throw ConfigError("pade needs both m and n, or neither for the automatic sweep");
        if (pade.m && (*pade.m > max_pade_order || *pade.n > max_pade_order))
            throw ConfigError("pade orders must not exceed 64");
        if (pade.n && *pade.n == 0) throw ConfigError("pade denominator order n must be at least 1");
        if (pade.n_max < 1 || pade.n_max > max_pade_order) throw ConfigError("pade n_max must be in [1, 64]");
        if (!(pade.residual_tol >= 0.0)) throw ConfigError("pade residual_tol must be non-negative");
        if (lanczos.k < 1) throw ConfigError("lanczos k must be at least 1");
        if (!(lanczos.eta > 0.0)) throw ConfigError("lanczos eta must be positive");
        if (sparse.k_max < 1) throw ConfigError("sparse k_max must be at least 1");
        if (!(sparse.sv_tol >= 0.0) || !(sparse.sv_floor >= 0.0))
            throw ConfigError("singular value thresholds must be non-negative");
        if (!(sparse.omp_tol >= 0.0)) throw ConfigError("omp_tol must be non-negative");
    }
};

namespace detail {

template <class T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
            throw ConfigError("unknown field '" + key + "' in " + where);
}

} // namespace detail

/// Reads a config object. `rules_path` is resolved against `base_dir`; an
/// inline `rules` string may be given instead.
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    using detail::json_get;
    detail::reject_unknown(j, {"preprocess", "backend", "pade", "lanczos", "sparse", "binning", "rules_path", "rules", "seed"},
                           "config");
    PipelineConfig c;
    if (j.contains("preprocess")) {
        const auto& p = j["preprocess"];
        detail::reject_unknown(p, {"window", "detrend", "zero_pad_to"}, "preprocess");
        const auto w = json_get<std::string>(p, "window", "none");
        if (w == "none") c.preprocess.window = Window::none;
        else if (w == "hann") c.preprocess.window = Window::hann;
        else throw ConfigError("unknown window '" + w + "'");
        c.preprocess.detrend = json_get<bool>(p, "detrend", false);
        if (p.contains("zero_pad_to") && !p["zero_pad_to"].is_null())
            c.preprocess.zero_pad_to = json_get<std::size_t>(p, "zero_pad_to", 0);
    }
    c.backend = backend_from_string(json_get<std::string>(j, "backend", "matrix_pencil"));
    if (j.contains("pade")) {
        const auto& p = j["pade"];
        detail::reject_unknown(p, {"m", "n", "n_max", "residual_tol"}, "pade");
        if (p.contains("m")) c.pade.m = json_get<std::size_t>(p, "m", 0);
        if (p.contains("n")) c.pade.n = json_get<std::size_t>(p, "n", 0);
        c.pade.n_max = json_get<std::size_t>(p, "n_max", c.pade.n_max);
        c.pade.residual_tol = json_get<double>(p, "residual_tol", c.pade.residual_tol);
    }
    if (j.contains("lanczos")) {
        const auto& l = j["lanczos"];
        detail::reject_unknown(l, {"k", "eta", "reorthogonalize"}, "lanczos");
        c.lanczos.k = json_get<std::size_t>(l, "k", c.lanczos.k);
        c.lanczos.eta = json_get<double>(l, "eta", c.lanczos.eta);
        c.lanczos.reorthogonalize = json_get<bool>(l, "reorthogonalize", c.lanczos.reorthogonalize);
    }
    if (j.contains("sparse")) {
        const auto& s = j["sparse"];
        detail::reject_unknown(s, {"k_max", "sv_tol", "sv_floor", "nls_iters", "omp_tol"}, "sparse");
        c.sparse.k_max = json_get<std::size_t>(s, "k_max", c.sparse.k_max);
        c.sparse.sv_tol = json_get<double>(s, "sv_tol", c.sparse.sv_tol);
        c.sparse.sv_floor = json_get<double>(s, "sv_floor", c.sparse.sv_floor);
        c.sparse.nls_iters = json_get<std::size_t>(s, "nls_iters", c.sparse.nls_iters);
        c.sparse.omp_tol = json_get<double>(s, "omp_tol", c.sparse.omp_tol);
    }
    if (!j.contains("binning")) throw ConfigError("config needs a 'binning' section");
    try {
        c.binning = j["binning"].get<BinningConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("binning: ") + e.what());
    }
    if (j.contains("rules_path") && j.contains("rules"))
        throw ConfigError("give either 'rules_path' or inline 'rules', not both");
    if (j.contains("rules_path")) {
        c.rules_path = json_get<std::string>(j, "rules_path", "");
        std::filesystem::path p(c.rules_path);
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.rules = parse_rules(detail::read_file(p.string()));
    } else if (j.contains("rules")) {
        c.rules = parse_rules(json_get<std::string>(j, "rules", ""));
    }
    c.seed = json_get<std::uint64_t>(j, "seed", 0);
    c.validate();
    return c;
}

inline PipelineConfig load_config(const std::string& path) {
    const std::string text = detail::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path + "': " + e.what());
    }
    return config_from_json(j, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------

struct OrderChoice {
    std::size_t m = 0;
    std::size_t n = 0;
    double residual = 0.0;
    bool converged = false;
};

/// Tries n = 1..n_max with m = n - 1 and keeps the first order whose
/// re-expansion reproduces every given coefficient to residual_tol ||c||.
/// Orders that need more coefficients than available, or whose moment
/// system fails, are skipped. With no acceptable order the one with the
/// smallest residual is returned and `converged` is false.
inline OrderChoice auto_order_sweep(std::span<const double> c, std::size_t n_max, double residual_tol) {
    if (n_max < 1) throw ArgumentError("n_max must be at least 1");
    double cnorm = 0.0;
    for (double v : c) cnorm += v * v;
    cnorm = std::sqrt(cnorm);

    OrderChoice best;
    best.residual = std::numeric_limits<double>::infinity();
    for (std::size_t n = 1; n <= n_max; ++n) {
        const std::size_t m = n - 1;
        if (m + n + 1 > c.size()) break;
        RationalApprox r;
        try {
            r = fit_pade(c, m, n);
        } catch (const NumericError&) {
            continue;
        }
        const auto t = taylor_coefficients(r, c.size());
        double res = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) res += (t[i] - c[i]) * (t[i] - c[i]);
        res = std::sqrt(res);
        if (!std::isfinite(res)) res = std::numeric_limits<double>::infinity();
        if (res <= residual_tol * cnorm) return {m, n, res, true};
        if (res < best.residual || best.n == 0) best = {m, n, res, false};
    }
    if (best.n == 0) best = {0, 1, std::numeric_limits<double>::infinity(), false};
    return best;
}

// ---------------------------------------------------------------------------

struct StageDiagnostics {
    std::string stage;
    double residual = 0.0;
    double millis = 0.0;
};

struct RunResult {
    SparseSpectrum atoms;
    SymbolSet predicates;
    SymbolSet derived;
    ProofTrace trace;
    std::vector<StageDiagnostics> diagnostics;
    std::optional<OrderChoice> order;
    std::optional<RationalApprox> rational;
    bool multiple_pole = false;
    std::optional<RitzSpectrum> ritz;
};

namespace detail {

// Runs one stage, timing it and tagging escaping errors with its name.
template <class F>
auto run_stage(std::vector<StageDiagnostics>& diag, const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto done = [&] {
        const auto dt = std::chrono::steady_clock::now() - t0;
        diag.push_back({stage, 0.0, std::chrono::duration<double, std::milli>(dt).count()});
    };
    try {
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            done();
        } else {
            auto out = f();
            done();
            return out;
        }
    } catch (const StageError&) {
        throw;
    } catch (const NumericError& e) {
        throw StageError(stage, e.what(), true);
    } catch (const InputError& e) {
        throw StageError(stage, e.what(), false);
    }
}

inline SparseSpectrum pade_atoms(const TimeSeries& x, const PipelineConfig& cfg, RunResult& rr) {
    const auto c = x.samples();
    OrderChoice oc;
    if (cfg.pade.m) {
        oc.m = *cfg.pade.m;
        oc.n = *cfg.pade.n;
    } else {
        oc = auto_order_sweep(c, std::min(cfg.pade.n_max, (c.size() - 1) / 2), cfg.pade.residual_tol);
    }
    const auto r = fit_pade(c, oc.m, oc.n);
    if (cfg.pade.m) {
        const auto t = taylor_coefficients(r, c.size());
        double res = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) res += (t[i] - c[i]) * (t[i] - c[i]);
        oc.residual = std::sqrt(res);
        oc.converged = true;
    }
    const auto poles = extract_poles(r);
    // pole s of F(z) = sum c_k / (1 - mu_k z) sits at 1/mu_k with residue -c_k / mu_k
    PoleSet modes;
    for (std::size_t i = 0; i < poles.poles.size(); ++i) {
        const cplx s = poles.poles[i];
        if (s == cplx(0.0)) continue;
        modes.poles.push_back(1.0 / s);
        modes.residues.push_back(-poles.residues[i] / s);
    }
    auto sp = atoms_from_poles(modes, x.dt());
    sp.diag.model_order = poles.poles.size();
    sp.residual_norm = oc.residual;
    rr.order = oc;
    rr.rational = r;
    rr.multiple_pole = poles.multiple_pole;
    return sp;
}

} // namespace detail

/// Greedy Lorentzian pursuit on the eta-broadened Ritz density, then joint
/// refinement. Fitted widths are deconvolved (gamma - eta, floored at
/// eta / 10) and amplitudes are reported as the fitted peak area over pi,
/// which for an isolated peak is the Ritz weight.
inline SparseSpectrum extract_peaks(const RitzSpectrum& ritz, double eta, const SparseSettings& s) {
    if (ritz.lambdas.empty()) return {};
    const double lo = ritz.lambdas.front() - 20.0 * eta;
    const double hi = ritz.lambdas.back() + 20.0 * eta;
    const double step = std::max(eta / 4.0, (hi - lo) / 4000.0);
    std::vector<double> grid;
    for (double w = lo; w <= hi + 0.5 * step; w += step) grid.push_back(w);
    const auto density = spectral_density(ritz, grid, eta);

    DictionaryConfig dc;
    dc.omega_min = ritz.lambdas.front() - 2.0 * eta;
    dc.omega_max = ritz.lambdas.back() + 2.0 * eta;
    dc.n_omega = static_cast<std::size_t>(std::ceil((dc.omega_max - dc.omega_min) / (2.0 * step))) + 1;
    dc.gamma_min = eta;
    dc.gamma_max = 4.0 * eta;
    dc.n_gamma = 3;
    const auto dict = make_dictionary(dc);

    auto sp = fit_omp(grid, density, dict, s.k_max, s.omp_tol);
    if (!sp.atoms.empty() && s.nls_iters > 0) {
        const auto iters = sp.diag.iterations;
        sp = refine_nls(sp, grid, density, s.nls_iters);
        // two dictionary neighbours of an off-grid peak converge onto it;
        // closer than eta / 10 they are one peak at this broadening
        const auto before = sp.atoms.size();
        std::vector<LorentzianAtom> merged;
        for (const auto& a : sp.atoms) {
            if (!merged.empty() && a.omega - merged.back().omega < eta / 10.0) {
                auto& b = merged.back();
                const double ma = a.amp * a.gamma, mb = b.amp * b.gamma;
                b.omega = (ma * a.omega + mb * b.omega) / (ma + mb);
                b.gamma = (ma * a.gamma + mb * b.gamma) / (ma + mb);
                b.amp = (ma + mb) / b.gamma;
            } else {
                merged.push_back(a);
            }
        }
        sp.atoms = std::move(merged);
        // shoulders left by an off-grid start carry almost no mass
        double mass = 0.0;
        for (const auto& a : sp.atoms) mass += a.amp * a.gamma;
        std::erase_if(sp.atoms, [&](const LorentzianAtom& a) { return a.amp * a.gamma < s.omp_tol * mass; });
        if (!sp.atoms.empty() && sp.atoms.size() < before) {
            const auto more = sp.diag.iterations;
            sp = refine_nls(sp, grid, density, s.nls_iters);
            sp.diag.iterations += more;
        }
        sp.diag.iterations += iters;
    }
    for (auto& a : sp.atoms) {
        const double g = a.gamma;
        a.amp = a.amp * std::numbers::pi * g;
        a.gamma = std::max(g - eta, eta / 10.0);
    }
    normalize_atoms(sp.atoms);
    sp.diag.model_order = sp.atoms.size();
    return sp;
}

namespace detail {

inline void finish(RunResult& rr, const PipelineConfig& cfg) {
    rr.predicates = run_stage(rr.diagnostics, "project", [&] { return project(rr.atoms, cfg.binning); });
    auto inf = run_stage(rr.diagnostics, "infer", [&] { return infer(cfg.rules, rr.predicates); });
    rr.derived = std::move(inf.derived);
    rr.trace = std::move(inf.trace);
}

} // namespace detail

/// preprocess -> spectral estimate -> atoms, without projection.
inline RunResult estimate(const TimeSeries& x, const PipelineConfig& cfg) {
    cfg.validate_spectral();
    if (cfg.backend == Backend::lanczos)
        throw ConfigError("the lanczos backend takes an operator and start vector; use run_hermitian");
    RunResult rr;
    const auto xp = detail::run_stage(rr.diagnostics, "preprocess", [&] { return preprocess(x, cfg.preprocess); });
    rr.atoms = detail::run_stage(rr.diagnostics, "estimate", [&] {
        if (cfg.backend == Backend::pade_z) return detail::pade_atoms(xp, cfg, rr);
        return fit_matrix_pencil(xp, 2 * cfg.sparse.k_max, cfg.sparse.sv_tol, cfg.sparse.sv_floor);
    });
    rr.diagnostics.back().residual = rr.atoms.residual_norm;
    return rr;
}

/// Lanczos from q1, Ritz density, peak extraction. No preprocessing.
template <HermitianOperator Op>
RunResult estimate_hermitian(const Op& H, const Eigen::VectorXd& q1, const PipelineConfig& cfg) {
    cfg.validate_spectral();
    if (cfg.backend != Backend::lanczos) throw ConfigError("run_hermitian requires backend = lanczos");
    if (cfg.lanczos.k > H.dim())
        throw ConfigError("lanczos k = " + std::to_string(cfg.lanczos.k) + " exceeds operator dimension " +
                          std::to_string(H.dim()));
    RunResult rr;
    const auto t = detail::run_stage(rr.diagnostics, "lanczos", [&] {
        return lanczos_tridiag(H, q1, cfg.lanczos.k, cfg.lanczos.reorthogonalize);
    });
    rr.diagnostics.back().residual = t.residual_norm;
    rr.ritz = detail::run_stage(rr.diagnostics, "ritz", [&] { return tridiag_eigen(t); });
    rr.atoms = detail::run_stage(rr.diagnostics, "peaks", [&] {
        return extract_peaks(*rr.ritz, cfg.lanczos.eta, cfg.sparse);
    });
    rr.diagnostics.back().residual = rr.atoms.residual_norm;
    return rr;
}

/// preprocess -> spectral estimate -> atoms -> predicates -> inference.
inline RunResult run(const TimeSeries& x, const PipelineConfig& cfg) {
    cfg.binning.validate();
    auto rr = estimate(x, cfg);
    detail::finish(rr, cfg);
    return rr;
}

/// The Lanczos branch end to end.
template <HermitianOperator Op>
RunResult run_hermitian(const Op& H, const Eigen::VectorXd& q1, const PipelineConfig& cfg) {
    cfg.binning.validate();
    auto rr = estimate_hermitian(H, q1, cfg);
    detail::finish(rr, cfg);
    return rr;
}

struct WindowHit {
    std::size_t start = 0;
    RunResult result;
};

inline std::size_t window_count(std::size_t n, std::size_t window, std::size_t stride) {
    return (n - window) / stride + 1;
}

/// Runs the pipeline on x[s, s + window) for s = 0, stride, ... and keeps
/// the windows whose derived set contains `alert_head`, ordered by start.
/// Windows are independent, so `threads` > 1 evaluates them concurrently.
inline std::vector<WindowHit> detect_anomalies(const TimeSeries& x, const PipelineConfig& cfg, std::size_t window,
                                               std::size_t stride, const std::string& alert_head,
                                               unsigned threads = 1) {
    if (window < 2 || window > x.size())
        throw ArgumentError("window must be in [2, " + std::to_string(x.size()) + "]");
    if (stride < 1) throw ArgumentError("stride must be at least 1");
    if (!is_identifier(alert_head)) throw ArgumentError("invalid alert predicate '" + alert_head + "'");
    cfg.validate();

    const std::size_t count = window_count(x.size(), window, stride);
    std::vector<std::optional<RunResult>> results(count);
    const auto eval = [&](std::size_t i) {
        auto r = run(x.slice(i * stride, window), cfg);
        if (r.derived.contains(alert_head)) results[i] = std::move(r);
    };
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) eval(i);
    } else {
        std::vector<std::future<void>> jobs;
        for (unsigned t = 0; t < threads; ++t)
            jobs.push_back(std::async(std::launch::async, [&, t] {
                for (std::size_t i = t; i < count; i += threads) eval(i);
            }));
        for (auto& j : jobs) j.get();
    }

    std::vector<WindowHit> hits;
    for (std::size_t i = 0; i < count; ++i)
        if (results[i]) hits.push_back({i * stride, std::move(*results[i])});
    return hits;
}

// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const OrderChoice& o) {
    j = nlohmann::json{{"m", o.m}, {"n", o.n}, {"converged", o.converged}};
    if (std::isfinite(o.residual)) j["residual"] = o.residual;
    else j["residual"] = nullptr;
}

/// Timings are left out unless asked for so that output is reproducible.
inline nlohmann::json result_to_json(const RunResult& r, bool with_timings = false) {
    nlohmann::json j;
    j["atoms"] = r.atoms;
    j["predicates"] = r.predicates;
    j["derived"] = r.derived;
    j["trace"] = r.trace;
    auto diag = nlohmann::json::array();
    for (const auto& d : r.diagnostics) {
        nlohmann::json e{{"stage", d.stage}, {"residual", d.residual}};
        if (with_timings) e["millis"] = d.millis;
        diag.push_back(std::move(e));
    }
    j["diagnostics"] = std::move(diag);
    if (r.order) j["order"] = *r.order;
    if (r.rational) {
        j["rational"] = *r.rational;
        j["multiple_pole"] = r.multiple_pole;
    }
    if (r.ritz) j["ritz"] = *r.ritz;
    return j;
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["preprocess"] = {{"window", c.preprocess.window == Window::hann ? "hann" : "none"},
                       {"detrend", c.preprocess.detrend}};
    if (c.preprocess.zero_pad_to) j["preprocess"]["zero_pad_to"] = *c.preprocess.zero_pad_to;
    j["backend"] = to_string(c.backend);
    if (c.pade.m) j["pade"] = {{"m", *c.pade.m}, {"n", *c.pade.n}};
    else j["pade"] = {{"n_max", c.pade.n_max}, {"residual_tol", c.pade.residual_tol}};
    j["lanczos"] = {{"k", c.lanczos.k}, {"eta", c.lanczos.eta}, {"reorthogonalize", c.lanczos.reorthogonalize}};
    j["sparse"] = {{"k_max", c.sparse.k_max},
                   {"sv_tol", c.sparse.sv_tol},
                   {"sv_floor", c.sparse.sv_floor},
                   {"nls_iters", c.sparse.nls_iters},
                   {"omp_tol", c.sparse.omp_tol}};
    j["binning"] = c.binning;
    j["rules"] = to_string(c.rules);
    j["seed"] = c.seed;
    return j;
}

} // namespace qsr
