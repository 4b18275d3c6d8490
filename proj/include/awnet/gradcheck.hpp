// Finite-difference gradient verification. f64 only: central differences at
// f32 drown in rounding noise.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "awnet/tensor.hpp"

namespace awnet {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per element.
// f must be deterministic; evaluations run with gradients disabled.
inline Tensor<double> finite_difference_grad(
    const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
    double h = 1e-5) {
    NoGradGuard stop_recording;
    std::vector<double> base(x.data().begin(), x.data().end());
    std::vector<double> grad(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += h;
        minus[i] -= h;
        const double fp = f(Tensor<double>::from_vector(x.shape(), std::move(plus)));
        const double fm = f(Tensor<double>::from_vector(x.shape(), std::move(minus)));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor<double>::from_vector(x.shape(), std::move(grad));
}

// |a - f| relative to max(|a|, |f|), with an absolute floor so that
// near-zero gradients do not blow up the ratio.
inline double grad_discrepancy(std::span<const double> analytic,
                               std::span<const double> numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], f = numeric[i];
        const double diff = std::abs(a - f);
        if (diff <= 1e-8) continue;
        const double rel = diff / std::max(std::abs(a), std::abs(f));
        worst = std::max(worst, rel);
    }
    return worst;
}

// Checks d loss / d x against central differences where loss = scalar_fn(x)
// and x is treated as the only variable. Returns the worst relative error.
inline double check_input_gradient(
    const std::function<Tensor<double>(const Tensor<double>&)>& scalar_fn,
    const Tensor<double>& x0, double h = 1e-5) {
    Tensor<double> x = x0.detach();
    x.set_requires_grad(true);
    Tensor<double> loss = scalar_fn(x);
    loss.backward();
    Tensor<double> fd = finite_difference_grad(
        [&](const Tensor<double>& probe) { return scalar_fn(probe).item(); }, x0, h);
    return grad_discrepancy(x.grad(), fd.data());
}

// Checks the gradient of an in-graph leaf (a model parameter) by nudging its
// storage in place around a deterministic re-evaluation. Restores the value.
inline double check_leaf_gradient(const std::function<Tensor<double>()>& scalar_fn,
                                  Tensor<double> leaf, double h = 1e-5) {
    leaf.zero_grad();
    Tensor<double> loss = scalar_fn();
    loss.backward();
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

    std::vector<double> fd(leaf.numel());
    {
        NoGradGuard stop_recording;
        auto values = leaf.mutable_data();
        for (std::size_t i = 0; i < fd.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double fp = scalar_fn().item();
            values[i] = saved - h;
            const double fm = scalar_fn().item();
            values[i] = saved;
            fd[i] = (fp - fm) / (2.0 * h);
        }
    }
    return grad_discrepancy(analytic, fd);
}

// Directional probe: compares <grad, d> against a central difference along a
// random direction d over a set of leaves. Two evaluations regardless of the
// parameter count, which keeps whole-model checks tractable.
inline double check_directional_gradient(const std::function<Tensor<double>()>& scalar_fn,
                                         std::vector<Tensor<double>> leaves, Rng& rng,
                                         double h = 1e-6) {
    for (auto& leaf : leaves) leaf.zero_grad();
    Tensor<double> loss = scalar_fn();
    loss.backward();

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<std::vector<double>> dirs;
    double norm2 = 0.0;
    for (auto& leaf : leaves) {
        std::vector<double> d(leaf.numel());
        for (auto& v : d) {
            v = unit(rng);
            norm2 += v * v;
        }
        dirs.push_back(std::move(d));
    }
    const double inv_norm = 1.0 / std::sqrt(norm2);
    double analytic = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto g = leaves[li].grad();  // empty when no gradient reached this leaf
        for (std::size_t i = 0; i < dirs[li].size(); ++i) {
            dirs[li][i] *= inv_norm;
            if (!g.empty()) analytic += g[i] * dirs[li][i];
        }
    }

    double fp, fm;
    {
        NoGradGuard stop_recording;
        auto shift = [&](double sign) {
            for (std::size_t li = 0; li < leaves.size(); ++li) {
                auto values = leaves[li].mutable_data();
                for (std::size_t i = 0; i < dirs[li].size(); ++i)
                    values[i] += sign * h * dirs[li][i];
            }
        };
        shift(+1.0);
        fp = scalar_fn().item();
        shift(-2.0);
        fm = scalar_fn().item();
        shift(+1.0);
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double diff = std::abs(analytic - numeric);
    if (diff <= 1e-8) return 0.0;
    return diff / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

}  // namespace awnet
