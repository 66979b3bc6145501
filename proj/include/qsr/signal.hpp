#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace qsr {

/// Uniformly sampled real signal. Immutable once constructed; the
/// constructor enforces at least two finite samples and dt > 0.
class TimeSeries {
public:
    TimeSeries(std::vector<double> samples, double dt,
               std::optional<std::string> label = std::nullopt)
        : samples_(std::move(samples)), dt_(dt), label_(std::move(label)) {
        if (samples_.size() < 2)
            throw ArgumentError("time series needs at least 2 samples, got " +
                                std::to_string(samples_.size()));
        if (!(dt_ > 0.0) || !std::isfinite(dt_))
            throw ArgumentError("time series step dt must be positive and finite");
        for (std::size_t i = 0; i < samples_.size(); ++i)
            if (!std::isfinite(samples_[i]))
                throw InputError("non-finite sample at index " + std::to_string(i));
    }

    std::span<const double> samples() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    double operator[](std::size_t i) const { return samples_[i]; }
    double dt() const noexcept { return dt_; }
    const std::optional<std::string>& label() const noexcept { return label_; }

    TimeSeries slice(std::size_t start, std::size_t count) const {
        if (start + count > samples_.size())
            throw ArgumentError("slice out of range");
        return TimeSeries({samples_.begin() + static_cast<std::ptrdiff_t>(start),
                           samples_.begin() + static_cast<std::ptrdiff_t>(start + count)},
                          dt_, label_);
    }

    bool operator==(const TimeSeries&) const = default;

private:
    std::vector<double> samples_;
    double dt_;
    std::optional<std::string> label_;
};

enum class Window { none, hann };

struct PreprocessConfig {
    Window window = Window::none;
    bool detrend = false;
    std::optional<std::size_t> zero_pad_to;
};

/// Hann taper w_n = 0.5 (1 - cos(2 pi n / (N - 1))).
inline std::vector<double> hann_weights(std::size_t n) {
    std::vector<double> w(n, 1.0);
    if (n < 2) return w;
    const double denom = static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / denom));
    return w;
}

/// Mean removal, then taper, then zero padding. dt and label carry over.
inline TimeSeries preprocess(const TimeSeries& x, const PreprocessConfig& cfg) {
    std::vector<double> out(x.samples().begin(), x.samples().end());
    if (cfg.zero_pad_to && *cfg.zero_pad_to < out.size())
        throw ArgumentError("zero_pad_to (" + std::to_string(*cfg.zero_pad_to) +
                            ") is shorter than the signal (" + std::to_string(out.size()) + ")");

    if (cfg.detrend) {
        const double mean = std::accumulate(out.begin(), out.end(), 0.0) /
                            static_cast<double>(out.size());
        for (double& v : out) v -= mean;
    }
    if (cfg.window == Window::hann) {
        const auto w = hann_weights(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= w[i];
    }
    if (cfg.zero_pad_to) out.resize(*cfg.zero_pad_to, 0.0);
    return TimeSeries(std::move(out), x.dt(), x.label());
}

/// Unbiased autocorrelation C[l] = 1/(N-l) sum_n x[n] x[n+l], l = 0..max_lag.
/// No mean removal happens here.
inline TimeSeries autocorrelation(const TimeSeries& x, std::size_t max_lag) {
    const std::size_t n = x.size();
    if (max_lag < 1 || max_lag >= n)
        throw ArgumentError("max_lag must satisfy 1 <= max_lag < " + std::to_string(n) +
                            ", got " + std::to_string(max_lag));
    const auto s = x.samples();
    std::vector<double> c(max_lag + 1, 0.0);
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) acc += s[i] * s[i + lag];
        c[lag] = acc / static_cast<double>(n - lag);
    }
    return TimeSeries(std::move(c), x.dt(), x.label());
}

} // namespace qsr
