#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "rules.hpp"
#include "signal.hpp"
#include "symbolic.hpp"

namespace qsr {

enum class Regime {
    underdamped_low,
    underdamped_high,
    overdamped,
    near_critical,
    two_mode_close,
    two_mode_far,
    high_q_resonance,
    noisy_negligible,
};

inline constexpr std::array<Regime, 8> all_regimes{
    Regime::underdamped_low, Regime::underdamped_high, Regime::overdamped,       Regime::near_critical,
    Regime::two_mode_close,  Regime::two_mode_far,     Regime::high_q_resonance, Regime::noisy_negligible,
};

inline std::string to_string(Regime r) {
    switch (r) {
    case Regime::underdamped_low: return "underdamped_low";
    case Regime::underdamped_high: return "underdamped_high";
    case Regime::overdamped: return "overdamped";
    case Regime::near_critical: return "near_critical";
    case Regime::two_mode_close: return "two_mode_close";
    case Regime::two_mode_far: return "two_mode_far";
    case Regime::high_q_resonance: return "high_q_resonance";
    case Regime::noisy_negligible: return "noisy_negligible";
    }
    return "?";
}

inline Regime regime_from_string(const std::string& s) {
    for (Regime r : all_regimes)
        if (to_string(r) == s) return r;
    throw ArgumentError("unknown regime '" + s + "'");
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(CounterRng& rng) const { return rng.uniform(lo, hi); }
};

/// Parameter box of one regime. Single-mode regimes use the first mode
/// only. two_mode_close draws the second frequency as an offset above the
/// first; overdamped reads `gamma` and `gamma2` as its slow and fast rates.
struct RegimeParams {
    Range amp;
    Range omega;
    Range gamma;
    Range amp2;
    Range omega2;
    Range gamma2;
};

inline RegimeParams default_params(Regime r) {
    const Range unit{0.8, 1.2};
    const Range moderate{0.15, 0.35};
    const Range low{1.8, 2.8};
    const Range high{6.5, 8.5};
    switch (r) {
    case Regime::underdamped_low: return {unit, low, moderate, {}, {}, {}};
    case Regime::underdamped_high: return {unit, high, moderate, {}, {}, {}};
    case Regime::overdamped: return {unit, {0.0, 0.0}, {0.3, 0.8}, {}, {}, {2.0, 4.0}};
    case Regime::near_critical: return {{2.5, 3.5}, low, {1.0, 1.5}, {}, {}, {}};
    case Regime::two_mode_close: return {unit, {3.4, 3.9}, moderate, unit, {0.8, 1.1}, moderate};
    case Regime::two_mode_far: return {unit, low, moderate, unit, high, moderate};
    case Regime::high_q_resonance: return {unit, high, {0.01, 0.04}, {}, {}, {}};
    case Regime::noisy_negligible: return {{0.002, 0.006}, {1.8, 8.5}, moderate, {}, {}, {}};
    }
    return {};
}

struct LabeledSeries {
    TimeSeries series;
    Regime label;
};

/// One draw from a regime's box plus white Gaussian noise. Each mode is
/// a e^{-gamma t} cos(omega t), so x(0) is the summed initial amplitude.
inline LabeledSeries synth_oscillator(Regime regime, const RegimeParams& p, std::size_t n, double noise_sigma,
                                      std::uint64_t seed, double dt = 0.05) {
    if (n < 64) throw ArgumentError("synth_oscillator needs n >= 64");
    if (!(noise_sigma >= 0.0)) throw ArgumentError("noise_sigma must be non-negative");
    if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
    CounterRng rng(seed, static_cast<std::uint64_t>(regime));

    const double a1 = p.amp.draw(rng);
    const double w1 = p.omega.draw(rng);
    const double g1 = p.gamma.draw(rng);
    double a2 = 0.0, w2 = 0.0, g2 = 0.0;
    if (regime == Regime::two_mode_close || regime == Regime::two_mode_far) {
        a2 = p.amp2.draw(rng);
        w2 = p.omega2.draw(rng);
        g2 = p.gamma2.draw(rng);
        if (regime == Regime::two_mode_close) w2 += w1;
    } else if (regime == Regime::overdamped) {
        g2 = p.gamma2.draw(rng);
    }

    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        double v;
        if (regime == Regime::overdamped)
            v = a1 * (g2 * std::exp(-g1 * t) - g1 * std::exp(-g2 * t)) / (g2 - g1);
        else
            v = a1 * std::exp(-g1 * t) * std::cos(w1 * t) + a2 * std::exp(-g2 * t) * std::cos(w2 * t);
        x[i] = v;
    }
    if (noise_sigma > 0.0) {
        CounterRng noise(seed, 1000 + static_cast<std::uint64_t>(regime));
        for (double& v : x) v += noise_sigma * noise.normal();
    }
    return {TimeSeries(std::move(x), dt, to_string(regime)), regime};
}

inline LabeledSeries synth_oscillator(Regime regime, std::size_t n, double noise_sigma, std::uint64_t seed,
                                      double dt = 0.05) {
    return synth_oscillator(regime, default_params(regime), n, noise_sigma, seed, dt);
}

// ---------------------------------------------------------------------------
// Reference binning and rules for the eight regimes.

inline BinningConfig benchmark_binning() {
    BinningConfig b;
    b.omega_bins = {{0.0, 0.5, 1.5, 3.2, 4.1, 5.5, 10.0}, {"zero", "slow", "low", "mid_a", "mid_b", "high", "fast"}};
    b.gamma_bins = {{0.0, 0.06, 0.9}, {"narrow", "moderate", "broad"}};
    b.amp_bins = {{0.0, 1.0}, {"weak", "strong"}};
    b.negligible_eps = 0.1;
    return b;
}

inline const char* benchmark_rules_text() {
    return R"(# oscillation present at any nonzero frequency
resonance_slow => oscillating @osc_slow
resonance_low => oscillating @osc_low
resonance_mid_a => oscillating @osc_mid_a
resonance_mid_b => oscillating @osc_mid_b
resonance_high => oscillating @osc_high
resonance_fast => oscillating @osc_fast
resonance_zero => has_signal @sig_zero
oscillating => has_signal @sig_osc

# one class per regime
resonance_zero & !oscillating => overdamped @overdamped
resonance_low & width_moderate & !width_broad & !resonance_high & !resonance_zero => underdamped_low @underdamped_low
resonance_low & width_broad & !width_moderate & !resonance_high => near_critical @near_critical
resonance_high & width_moderate & !width_narrow & !resonance_low => underdamped_high @underdamped_high
resonance_high & width_narrow & !resonance_low => high_q_resonance @high_q_resonance
resonance_mid_a & resonance_mid_b => two_mode_close @two_mode_close
resonance_low & resonance_high => two_mode_far @two_mode_far
!has_signal => noisy_negligible @noisy_negligible
)";
}

/// Pencil backend with a singular value floor above the noise level of
/// sigma = 0.05 on 256 samples.
inline PipelineConfig benchmark_config() {
    PipelineConfig c;
    c.backend = Backend::matrix_pencil;
    c.sparse.k_max = 4;
    c.sparse.sv_tol = 1e-8;
    c.sparse.sv_floor = 2.5;
    c.binning = benchmark_binning();
    c.rules = parse_rules(benchmark_rules_text());
    return c;
}

/// The single regime class in `derived`, or nullopt when none or several.
inline std::optional<Regime> decided_class(const SymbolSet& derived) {
    std::optional<Regime> out;
    for (Regime r : all_regimes) {
        if (!derived.contains(to_string(r))) continue;
        if (out) return std::nullopt;
        out = r;
    }
    return out;
}

struct BenchSettings {
    std::size_t samples = 500;
    std::size_t n = 256;
    double dt = 0.05;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
};

struct BenchReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t decided = 0;
    std::size_t replayed = 0;  ///< decisions whose trace replays
    std::size_t failures = 0;  ///< runs that raised a stage error
    double seconds = 0.0;
    /// confusion[truth][predicted]; "undecided" when no single class fired
    std::map<std::string, std::map<std::string, std::size_t>> confusion;

    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Sample i draws regime i mod 8 with a seed taken from stream i of the
/// benchmark seed.
inline BenchReport run_benchmark(const PipelineConfig& cfg, const BenchSettings& s) {
    const auto t0 = std::chrono::steady_clock::now();
    BenchReport rep;
    for (std::size_t i = 0; i < s.samples; ++i) {
        const Regime truth = all_regimes[i % all_regimes.size()];
        const std::uint64_t sample_seed = CounterRng(s.seed, i).next_u64();
        const auto ls = synth_oscillator(truth, s.n, s.noise_sigma, sample_seed, s.dt);
        ++rep.total;
        std::string predicted = "undecided";
        try {
            const auto rr = run(ls.series, cfg);
            if (const auto d = decided_class(rr.derived)) {
                ++rep.decided;
                predicted = to_string(*d);
                if (*d == truth) ++rep.correct;
                if (replay(rr.trace, rr.predicates, cfg.rules)) ++rep.replayed;
            }
        } catch (const StageError&) {
            ++rep.failures;
            predicted = "error";
        }
        ++rep.confusion[to_string(truth)][predicted];
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline nlohmann::json report_to_json(const BenchReport& r, bool with_timing = false) {
    nlohmann::json j{{"total", r.total},       {"correct", r.correct},   {"accuracy", r.accuracy()},
                     {"decided", r.decided},   {"replayed", r.replayed}, {"failures", r.failures},
                     {"confusion", r.confusion}};
    if (with_timing) j["seconds"] = r.seconds;
    return j;
}

// ---------------------------------------------------------------------------
// Changepoint signals for the anomaly harness.

struct ChangepointSignal {
    TimeSeries series;
    std::optional<std::size_t> changepoint;
    double omega_before = 0.0;
    double omega_after = 0.0;
};

/// Lightly damped cosine with continuous phase whose frequency jumps by
/// `shift` (relative) at sample j; shift = 0 gives a clean stationary
/// signal. Damping keeps every window's poles strictly inside the unit
/// circle.
inline ChangepointSignal synth_changepoint(std::size_t n, std::optional<std::size_t> j, double omega, double shift,
                                           double gamma, double noise_sigma, std::uint64_t seed, double dt = 0.05) {
    if (n < 64) throw ArgumentError("changepoint signal needs n >= 64");
    if (j && *j >= n) throw ArgumentError("changepoint index out of range");
    if (!(gamma > 0.0)) throw ArgumentError("gamma must be positive");
    CounterRng noise(seed, 7);
    const double w2 = j ? omega * (1.0 + shift) : omega;
    std::vector<double> x(n);
    double phase = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        x[i] = std::exp(-gamma * t) * std::cos(phase) + (noise_sigma > 0.0 ? noise_sigma * noise.normal() : 0.0);
        phase += (j && i + 1 >= *j ? w2 : omega) * dt;
    }
    return {TimeSeries(std::move(x), dt), j, omega, w2};
}

} // namespace qsr
