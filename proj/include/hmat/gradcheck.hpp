#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hmat/ops.hpp"
#include "hmat/tensor.hpp"

namespace hmat {

struct GradcheckOptions {
    double step = 1e-5;
    double tol = 1e-6;
    /// Entries probed per input; 0 probes every entry.
    std::size_t max_entries_per_input = 0;
    std::uint64_t seed = 1;
};

struct GradcheckReport {
    double max_error = 0.0;
    std::size_t checked = 0;
    /// Entries that only agreed after shrinking the step (a leaky-ReLU kink
    /// lay within one step of the probe point).
    std::size_t refined = 0;
    std::string worst;
    bool passed = true;
};

/// Error measure shared by every check: |a - n| / max(1, |a|, |n|).
inline double gradient_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares reverse-mode gradients of `f` against central differences in
/// wide precision. Non-scalar outputs are reduced with fixed random weights.
/// Inputs are used as leaves and perturbed in place, then restored.
template <typename F>
GradcheckReport gradcheck(F&& f, std::vector<Tensor<double>> inputs, const GradcheckOptions& opt = {}) {
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    std::vector<double> weights;
    auto reduce = [&](const Tensor<double>& y) -> double {
        if (weights.empty()) {
            weights.resize(y.size());
            for (auto& w : weights) w = y.size() == 1 ? 1.0 : unit(rng);
        }
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
        return s;
    };

    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        Tensor<double> y = f(inputs);
        reduce(y);
        auto w = Tensor<double>::from(y.shape(), weights);
        Tensor<double> loss = y.size() == 1 ? y : ops::sum(ops::mul(y, w));
        loss.backward();
    }

    GradcheckReport rep;
    auto eval = [&]() {
        NoGradGuard ng;
        return reduce(f(inputs));
    };
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& t = inputs[k];
        const auto analytic = t.grad();
        std::vector<std::size_t> probe(t.size());
        for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
        if (opt.max_entries_per_input && probe.size() > opt.max_entries_per_input) {
            std::shuffle(probe.begin(), probe.end(), rng);
            probe.resize(opt.max_entries_per_input);
            std::sort(probe.begin(), probe.end());
        }
        auto data = t.mutable_data();
        for (std::size_t i : probe) {
            const double orig = data[i];
            double err = 0;
            double num = 0;
            bool ok = false;
            for (double h : {opt.step, opt.step * 0.1, opt.step * 0.01}) {
                data[i] = orig + h;
                const double fp = eval();
                data[i] = orig - h;
                const double fm = eval();
                data[i] = orig;
                num = (fp - fm) / (2 * h);
                err = gradient_error(analytic[i], num);
                if (err < opt.tol) {
                    ok = true;
                    if (h != opt.step) ++rep.refined;
                    break;
                }
            }
            ++rep.checked;
            if (err > rep.max_error || !ok) {
                rep.max_error = std::max(rep.max_error, err);
                rep.worst = "input " + std::to_string(k) + " entry " + std::to_string(i) +
                            ": analytic " + std::to_string(analytic[i]) + " numeric " + std::to_string(num);
            }
            if (!ok) rep.passed = false;
        }
    }
    return rep;
}

}  // namespace hmat
