// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used only by tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "chirploc/autodiff.hpp"
#include "chirploc/random.hpp"
#include "chirploc/synth.hpp"

namespace oracle {

using chirploc::ad::Tensor;

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
    double diff = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Largest relative error between backprop gradients and central differences
/// over every input in `inputs` (which must be parameters).
inline double gradcheck(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
    for (const auto& x : inputs) {
        const_cast<Tensor<double>&>(x).zero_grad();
    }
    f(inputs).backward();
    double worst = 0.0;
    for (const auto& x : inputs) {
        std::vector<double> analytic(x.numel(), 0.0);
        if (x.has_grad()) {
            std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
        }
        std::vector<double> numeric(x.numel());
        auto vals = const_cast<Tensor<double>&>(x).mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + h;
            const double up = f(inputs).item();
            vals[i] = keep - h;
            const double down = f(inputs).item();
            vals[i] = keep;
            numeric[i] = (up - down) / (2.0 * h);
        }
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

inline std::vector<double> random_values(std::size_t n, chirploc::RandomState& rng, double lo = -1.0,
                                         double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return v;
}

/// Direct nested-loop rendering of one chirp onto a zero matrix.
inline std::vector<double> brute_force_render(const chirploc::ChirpParams& p, const chirploc::SynthConfig& c) {
    const auto nf = static_cast<long>(c.n_f);
    const auto nt = static_cast<long>(c.n_t);
    auto clampl = [](long v, long lo, long hi) { return std::min(std::max(v, lo), hi); };
    const long ts = clampl(static_cast<long>(std::ceil(p.t0 / c.duration * static_cast<double>(nt))), 0, nt - 1);
    const long te =
        clampl(static_cast<long>(std::ceil((p.t0 + p.dt) / c.duration * static_cast<double>(nt))), 0, nt - 1);
    const long fs = clampl(static_cast<long>(std::ceil(p.f0 / c.f_max * static_cast<double>(nf))), 1, nf - 1);
    const long fe = clampl(std::lround(p.f1 / c.f_max * static_cast<double>(nf)), 1, nf - 1);

    std::vector<double> out(c.n_f * c.n_t, 0.0);
    for (long t = ts; t <= te; ++t) {
        const double tau = te == ts ? 0.0 : static_cast<double>(t - ts) / static_cast<double>(te - ts);
        double fb = 0.0;
        if (p.type == chirploc::ChirpType::Linear) {
            fb = static_cast<double>(fs) + static_cast<double>(fe - fs) * tau;
        } else {
            fb = static_cast<double>(fs) * std::pow(static_cast<double>(fe) / static_cast<double>(fs), tau);
        }
        for (long f = 0; f < nf; ++f) {
            const double d = static_cast<double>(f) - fb;
            out[static_cast<std::size_t>(f * nt + t)] += std::exp(-d * d / (2.0 * c.sigma_spread * c.sigma_spread));
        }
    }
    return out;
}

/// One-parameter AdamW step written out in scalar form.
struct ScalarAdamW {
    double lr;
    double b1;
    double b2;
    double eps;
    double wd;
    double m = 0.0;
    double v = 0.0;
    int t = 0;

    double step(double theta, double g) {
        ++t;
        theta = theta - lr * wd * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, t));
        const double vhat = v / (1.0 - std::pow(b2, t));
        return theta - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace oracle
