#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vitloc/tensor.hpp"

namespace vitloc {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Per-parameter first/second moment buffers (Adam only) plus step count.
template <typename T>
struct OptimizerState {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
};

/// One deterministic update over a parameter list. State is lazily sized on
/// the first call and must then keep matching the parameter shapes.
template <typename T>
void optimizer_step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
                    OptimizerState<T>& state, const OptimizerConfig& cfg) {
    if (params.size() != grads.size()) {
        throw ShapeError("optimizer_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i])) {
            throw ShapeError("optimizer_step: grad shape " + grads[i].shape_str() +
                             " does not match param " + params[i]->shape_str());
        }
    }
    if (cfg.kind == OptimizerKind::sgd) {
        const T lr = static_cast<T>(cfg.learning_rate);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            const Tensor<T>& g = grads[i];
            for (std::size_t j = 0; j < p.numel(); ++j) p[j] -= lr * g[j];
        }
        ++state.step;
        return;
    }
    if (state.m.empty()) {
        for (const Tensor<T>* p : params) {
            state.m.push_back(Tensor<T>::zeros(p->shape()));
            state.v.push_back(Tensor<T>::zeros(p->shape()));
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match param count");
    ++state.step;
    const T lr = static_cast<T>(cfg.learning_rate);
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.eps);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = grads[i];
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace vitloc
