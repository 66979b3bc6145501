#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <qsr/bench.hpp>
#include <qsr/pipeline.hpp>

#include "oracles.hpp"

using namespace qsr;

namespace {

PipelineConfig resonance_config(Backend backend) {
    PipelineConfig c;
    c.backend = backend;
    c.binning.omega_bins = {{0.0, 1.0}, {"low", "high"}};
    c.binning.gamma_bins = {{0.0, 0.5}, {"narrow", "broad"}};
    c.binning.amp_bins = {{0.0, 1.0}, {"weak", "strong"}};
    c.binning.negligible_eps = 1e-3;
    c.rules = parse_rules("resonance_high & width_narrow => unstable_resonance");
    return c;
}

TimeSeries resonance_signal(std::size_t n = 200) {
    return TimeSeries(oracle::damped_cosines({{1.0, 3.0, 0.2}}, n, 0.05), 0.05);
}

} // namespace

TEST(Run, UnstableResonanceRule) {
    const auto rr = run(resonance_signal(), resonance_config(Backend::matrix_pencil));
    ASSERT_EQ(rr.atoms.atoms.size(), 1u);
    EXPECT_NEAR(rr.atoms.atoms[0].omega, 3.0, 1e-8);
    EXPECT_NEAR(rr.atoms.atoms[0].gamma, 0.2, 1e-8);
    EXPECT_TRUE(rr.derived.contains("unstable_resonance"));
    EXPECT_TRUE(replay(rr.trace, rr.predicates, resonance_config(Backend::matrix_pencil).rules));
    for (const auto& n : rr.predicates.names()) EXPECT_TRUE(rr.derived.contains(n));
}

TEST(Run, ZeroSignal) {
    for (Backend b : {Backend::matrix_pencil, Backend::pade_z}) {
        const auto rr = run(TimeSeries(std::vector<double>(64, 0.0), 0.1), resonance_config(b));
        EXPECT_TRUE(rr.atoms.atoms.empty());
        EXPECT_TRUE(rr.predicates.empty());
        EXPECT_TRUE(rr.derived.empty());
        EXPECT_TRUE(rr.trace.firings.empty());
    }
}

TEST(Run, PadeAndPencilAgree) {
    const auto x = resonance_signal();
    const auto a = run(x, resonance_config(Backend::pade_z));
    const auto b = run(x, resonance_config(Backend::matrix_pencil));
    EXPECT_EQ(a.predicates, b.predicates);
    ASSERT_EQ(a.atoms.atoms.size(), 1u);
    EXPECT_NEAR(a.atoms.atoms[0].omega, b.atoms.atoms[0].omega, 1e-6);
    EXPECT_NEAR(a.atoms.atoms[0].gamma, b.atoms.atoms[0].gamma, 1e-6);
    EXPECT_NEAR(a.atoms.atoms[0].amp, b.atoms.atoms[0].amp, 1e-6);
    ASSERT_TRUE(a.order.has_value());
    EXPECT_EQ(a.order->n, 2u);
    EXPECT_TRUE(a.order->converged);
}

TEST(Run, PadeFixedOrder) {
    auto cfg = resonance_config(Backend::pade_z);
    cfg.pade.m = 1;
    cfg.pade.n = 2;
    const auto rr = run(resonance_signal(), cfg);
    ASSERT_EQ(rr.atoms.atoms.size(), 1u);
    EXPECT_NEAR(rr.atoms.atoms[0].omega, 3.0, 1e-8);
}

TEST(Run, StageErrorsNameTheStage) {
    auto cfg = resonance_config(Backend::pade_z);
    cfg.pade.m = 40;
    cfg.pade.n = 40;
    try {
        run(resonance_signal(64), cfg);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "estimate");
        EXPECT_FALSE(e.numeric());
    }
    auto pre = resonance_config(Backend::matrix_pencil);
    pre.preprocess.zero_pad_to = 10;
    try {
        run(resonance_signal(64), pre);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "preprocess");
    }
}

TEST(Run, LanczosBackendNeedsOperator) {
    EXPECT_THROW(run(resonance_signal(), resonance_config(Backend::lanczos)), ConfigError);
}

TEST(Run, DeterministicSerialization) {
    const auto cfg = resonance_config(Backend::pade_z);
    const auto a = result_to_json(run(resonance_signal(), cfg)).dump();
    const auto b = result_to_json(run(resonance_signal(), cfg)).dump();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.find("millis"), std::string::npos);
    EXPECT_NE(result_to_json(run(resonance_signal(), cfg), true).dump().find("millis"), std::string::npos);
}

// ---------------------------------------------------------------------------

namespace {

PipelineConfig lanczos_config(std::size_t k, double eta, std::size_t k_max) {
    auto c = resonance_config(Backend::lanczos);
    c.lanczos.k = k;
    c.lanczos.eta = eta;
    c.sparse.k_max = k_max;
    c.binning.amp_bins = {{0.0}, {"any"}};
    c.rules = RuleSet{};
    return c;
}

} // namespace

TEST(RunHermitian, TwoByTwo) {
    DenseSymmetricOp h(Eigen::Vector2d(1, 5).asDiagonal());
    const auto rr = run_hermitian(h, Eigen::Vector2d(1, 1) / std::sqrt(2.0), lanczos_config(2, 0.05, 4));
    ASSERT_EQ(rr.atoms.atoms.size(), 2u);
    EXPECT_NEAR(rr.atoms.atoms[0].omega, 1.0, 1e-6);
    EXPECT_NEAR(rr.atoms.atoms[1].omega, 5.0, 1e-6);
    EXPECT_NEAR(rr.atoms.atoms[0].amp, 0.5, 1e-4);
    EXPECT_NEAR(rr.atoms.atoms[1].amp, 0.5, 1e-4);
    ASSERT_TRUE(rr.ritz.has_value());
    EXPECT_NEAR(rr.ritz->weights[0], 0.5, 1e-12);
}

TEST(RunHermitian, EigenvectorGivesOneAtom) {
    DenseSymmetricOp h(Eigen::Vector3d(1, 2, 4).asDiagonal());
    const auto rr = run_hermitian(h, Eigen::Vector3d(0, 1, 0), lanczos_config(3, 0.05, 4));
    ASSERT_EQ(rr.atoms.atoms.size(), 1u);
    EXPECT_NEAR(rr.atoms.atoms[0].omega, 2.0, 1e-6);
    EXPECT_NEAR(rr.atoms.atoms[0].amp, 1.0, 1e-4);
}

TEST(RunHermitian, RandomFiftyMatchesDenseEigenvalues) {
    std::mt19937_64 rng(50);
    std::uniform_real_distribution<double> gap(0.6, 1.0);
    std::vector<double> lambdas{0.0};
    for (int i = 1; i < 50; ++i) lambdas.push_back(lambdas.back() + gap(rng));
    const Eigen::MatrixXd m = oracle::with_spectrum(lambdas, rng);
    const Eigen::VectorXd q1 = oracle::random_vector(50, rng);
    const double eta = 0.05;
    const auto rr = run_hermitian(DenseSymmetricOp(m), q1, lanczos_config(50, eta, 60));
    const auto dense = oracle::dense_spectrum(m, q1);

    // every eigenvalue carrying visible weight is matched by an atom center
    std::size_t matched = 0, visible = 0;
    for (std::size_t j = 0; j < dense.lambdas.size(); ++j) {
        if (dense.weights[j] < 1e-3) continue;
        ++visible;
        double best = 1e300;
        for (const auto& a : rr.atoms.atoms) best = std::min(best, std::abs(a.omega - dense.lambdas[j]));
        if (best <= eta / 10) ++matched;
    }
    EXPECT_GT(visible, 30u);
    EXPECT_EQ(matched, visible);
    for (const auto& a : rr.atoms.atoms) {
        double best = 1e300;
        for (double l : dense.lambdas) best = std::min(best, std::abs(a.omega - l));
        EXPECT_LE(best, eta / 10);
    }
}

TEST(RunHermitian, Configuration) {
    DenseSymmetricOp h(Eigen::Vector2d(1, 5).asDiagonal());
    EXPECT_THROW(run_hermitian(h, Eigen::Vector2d(1, 1), resonance_config(Backend::pade_z)), ConfigError);
    EXPECT_THROW(run_hermitian(h, Eigen::Vector2d(1, 1), lanczos_config(3, 0.05, 4)), ConfigError);
}

// ---------------------------------------------------------------------------

namespace {

PipelineConfig shift_config() {
    PipelineConfig c;
    c.backend = Backend::matrix_pencil;
    c.sparse.k_max = 2;
    c.binning.omega_bins = {{0.0, 3.15}, {"base", "shifted"}};
    c.binning.gamma_bins = {{0.0}, {"any"}};
    c.binning.amp_bins = {{0.0}, {"any"}};
    c.binning.negligible_eps = 0.05;
    c.rules = parse_rules("resonance_shifted => anomaly");
    return c;
}

} // namespace

TEST(DetectAnomalies, AlignedChangepoint) {
    const std::size_t window = 64, j = 320;
    const auto sig = synth_changepoint(640, j, 3.0, 0.2, 0.02, 0.0, 1);
    const auto hits = detect_anomalies(sig.series, shift_config(), window, window, "anomaly");
    ASSERT_FALSE(hits.empty());
    EXPECT_EQ(hits.front().start, j);
    for (const auto& h : hits) EXPECT_EQ(h.start % window, 0u);
}

TEST(DetectAnomalies, CleanSignalHasNoFlags) {
    const auto sig = synth_changepoint(640, std::nullopt, 3.0, 0.0, 0.02, 0.0, 1);
    EXPECT_TRUE(detect_anomalies(sig.series, shift_config(), 128, 32, "anomaly").empty());
}

TEST(DetectAnomalies, ThreadedMatchesSequential) {
    const auto sig = synth_changepoint(640, 300, 3.0, 0.2, 0.02, 0.0, 2);
    const auto a = detect_anomalies(sig.series, shift_config(), 128, 16, "anomaly", 1);
    const auto b = detect_anomalies(sig.series, shift_config(), 128, 16, "anomaly", 3);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].start, b[i].start);
        EXPECT_EQ(result_to_json(a[i].result).dump(), result_to_json(b[i].result).dump());
    }
    ASSERT_FALSE(a.empty());
    EXPECT_LE(a.front().start, 300u);
    EXPECT_GT(a.front().start + 128, 300u);
}

TEST(DetectAnomalies, Arguments) {
    const auto sig = synth_changepoint(128, std::nullopt, 3.0, 0.0, 0.02, 0.0, 1);
    EXPECT_THROW(detect_anomalies(sig.series, shift_config(), 129, 1, "anomaly"), ArgumentError);
    EXPECT_THROW(detect_anomalies(sig.series, shift_config(), 64, 0, "anomaly"), ArgumentError);
    EXPECT_EQ(window_count(128, 64, 16), 5u);
    EXPECT_EQ(window_count(130, 64, 16), 5u);
    EXPECT_EQ(window_count(64, 64, 7), 1u);
}

// ---------------------------------------------------------------------------

TEST(SynthOscillator, InitialValueAndDeterminism) {
    auto p = default_params(Regime::underdamped_low);
    p.amp = {1.3, 1.3};
    const auto a = synth_oscillator(Regime::underdamped_low, p, 128, 0.0, 9);
    EXPECT_DOUBLE_EQ(a.series[0], 1.3);
    EXPECT_EQ(a.label, Regime::underdamped_low);

    const auto b = synth_oscillator(Regime::two_mode_far, 128, 0.05, 77);
    const auto c = synth_oscillator(Regime::two_mode_far, 128, 0.05, 77);
    EXPECT_EQ(b.series, c.series);
    EXPECT_NE(b.series, synth_oscillator(Regime::two_mode_far, 128, 0.05, 78).series);
    EXPECT_THROW(synth_oscillator(Regime::overdamped, 32, 0.0, 1), ArgumentError);
}

TEST(SynthOscillator, ReferenceRulesClassifyNoiselessDraws) {
    const auto cfg = benchmark_config();
    for (Regime r : all_regimes) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto ls = synth_oscillator(r, 256, 0.0, seed);
            const auto rr = run(ls.series, cfg);
            const auto d = decided_class(rr.derived);
            ASSERT_TRUE(d.has_value()) << to_string(r) << " seed " << seed;
            EXPECT_EQ(*d, r) << "seed " << seed;
            EXPECT_TRUE(replay(rr.trace, rr.predicates, cfg.rules));
        }
    }
}

TEST(SynthOscillator, RegimeNames) {
    for (Regime r : all_regimes) EXPECT_EQ(regime_from_string(to_string(r)), r);
    EXPECT_THROW(regime_from_string("chaotic"), ArgumentError);
}

// ---------------------------------------------------------------------------

TEST(AutoOrder, OnePoleSeries) {
    std::vector<double> c(20);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = std::pow(0.7, static_cast<double>(k));
    const auto o = auto_order_sweep(c, 6, 1e-10);
    EXPECT_EQ(o.n, 1u);
    EXPECT_EQ(o.m, 0u);
    EXPECT_TRUE(o.converged);
}

TEST(AutoOrder, InfiniteToleranceTakesFirst) {
    const std::vector<double> c{0.3, -1.0, 2.0, 0.5, 0.1};
    EXPECT_EQ(auto_order_sweep(c, 2, std::numeric_limits<double>::infinity()).n, 1u);
}

TEST(AutoOrder, NoiseFallsBack) {
    CounterRng rng(4);
    std::vector<double> c(40);
    for (double& v : c) v = rng.normal();
    const auto o = auto_order_sweep(c, 6, 1e-10);
    EXPECT_FALSE(o.converged);
    EXPECT_GE(o.n, 1u);
    EXPECT_LE(o.n, 6u);
}

// ---------------------------------------------------------------------------

TEST(Config, ParsesFullObject) {
    const auto j = nlohmann::json::parse(R"({
        "preprocess": {"window": "hann", "detrend": true, "zero_pad_to": 300},
        "backend": "pade_z",
        "pade": {"m": 1, "n": 2},
        "lanczos": {"k": 10, "eta": 0.1, "reorthogonalize": false},
        "sparse": {"k_max": 3, "sv_tol": 1e-6, "sv_floor": 0.5, "nls_iters": 20, "omp_tol": 1e-4},
        "binning": {"omega": {"edges": [0, 1], "labels": ["low", "high"]},
                    "gamma": {"edges": [0], "labels": ["any"]},
                    "amp": {"edges": [0], "labels": ["any"]},
                    "negligible_eps": 0.01},
        "rules": "resonance_high => ringing",
        "seed": 12
    })");
    const auto c = config_from_json(j);
    EXPECT_EQ(c.preprocess.window, Window::hann);
    EXPECT_TRUE(c.preprocess.detrend);
    EXPECT_EQ(c.preprocess.zero_pad_to, 300u);
    EXPECT_EQ(c.backend, Backend::pade_z);
    EXPECT_EQ(c.pade.n, 2u);
    EXPECT_FALSE(c.lanczos.reorthogonalize);
    EXPECT_EQ(c.sparse.sv_floor, 0.5);
    EXPECT_EQ(c.rules.rules().size(), 1u);
    EXPECT_EQ(c.seed, 12u);

    const auto again = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(again).dump(), config_to_json(c).dump());
}

TEST(Config, Rejections) {
    const auto base = config_to_json(resonance_config(Backend::matrix_pencil));
    auto j = base;
    j["colour"] = "blue";
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["backend"] = "fft";
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["pade"] = {{"m", 2}};
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["pade"] = {{"m", 65}, {"n", 2}};
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["rules"] = "a & !b => b";
    EXPECT_THROW(config_from_json(j), StratificationError);
    j = base;
    j["rules_path"] = "x.rules";
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j.erase("binning");
    EXPECT_THROW(config_from_json(j), ConfigError);
    j = base;
    j["sparse"] = {{"k_max", "four"}};
    EXPECT_THROW(config_from_json(j), ConfigError);
}

TEST(Config, ShippedBenchmarkFiles) {
    const std::string dir = QSR_SOURCE_DIR "/configs/";
    const auto c = load_config(dir + "benchmark.json");
    EXPECT_EQ(c.rules, parse_rules(benchmark_rules_text()));
    EXPECT_EQ(config_to_json(c).dump(), config_to_json(benchmark_config()).dump());
    EXPECT_THROW(load_config(dir + "does_not_exist.json"), InputError);
}
