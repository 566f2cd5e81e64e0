#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tsanet/tensor.hpp"

namespace testutil {

/// Central finite-difference check of every element of every leaf against the
/// analytic gradient of loss_fn(). loss_fn must rebuild the graph from the
/// leaves' current values on every call. Returns the worst relative error,
/// with a small floor in the denominator so near-zero gradients compare
/// absolutely.
inline double max_grad_error(const std::function<tsanet::Tensor()>& loss_fn,
                             const std::vector<tsanet::Tensor>& leaves, double h = 1e-5) {
    for (const auto& leaf : leaves) const_cast<tsanet::Tensor&>(leaf).zero_grad();
    tsanet::Tensor loss = loss_fn();
    tsanet::backward(loss);

    double worst = 0.0;
    for (const auto& leaf : leaves) {
        tsanet::Tensor l = leaf;
        const std::vector<double> analytic =
            l.has_grad() ? l.grad() : std::vector<double>(l.value().size(), 0.0);
        for (size_t i = 0; i < l.value().size(); ++i) {
            const double saved = l.value()[i];
            l.mutable_value()[i] = saved + h;
            const double up = loss_fn().item();
            l.mutable_value()[i] = saved - h;
            const double down = loss_fn().item();
            l.mutable_value()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double err = std::abs(fd - analytic[i]) /
                               std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/// Fresh scratch directory under the build tree.
inline std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("tsanet_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

/// Dominant beat rate of a pulse train, in bpm, from the autocorrelation peak
/// over physiological lags (40..180 bpm). Independent of the generator.
inline double autocorr_rate_bpm(const std::vector<double>& x, double fs) {
    const int64_t n = static_cast<int64_t>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);

    const int64_t lag_min = static_cast<int64_t>(fs * 60.0 / 180.0);
    const int64_t lag_max = static_cast<int64_t>(fs * 60.0 / 40.0);
    double best = -1e300;
    int64_t best_lag = lag_min;
    for (int64_t lag = lag_min; lag <= lag_max && lag < n; ++lag) {
        double acc = 0.0;
        for (int64_t i = 0; i + lag < n; ++i) acc += (x[i] - mean) * (x[i + lag] - mean);
        acc /= static_cast<double>(n - lag);
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    return 60.0 * fs / static_cast<double>(best_lag);
}

} // namespace testutil
