#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sat/common.hpp"
#include "sat/tensor.hpp"

namespace sat {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
struct LayerNormParams {
    Tensor<T> gain;
    Tensor<T> bias;

    static LayerNormParams init(int64_t width) {
        LayerNormParams p;
        p.gain = Tensor<T>::filled({width}, T(1), true);
        p.bias = Tensor<T>::zeros({width}, true);
        return p;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".gain", gain);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// Two linear layers with a GELU between them.
template <typename T>
struct Mlp2 {
    Tensor<T> w1, b1, w2, b2;

    static Mlp2 init(int64_t in, int64_t hidden, int64_t out, Rng& rng) {
        Mlp2 m;
        m.w1 = Tensor<T>::randn({in, hidden}, rng, xavier(in, hidden), true);
        m.b1 = Tensor<T>::zeros({hidden}, true);
        m.w2 = Tensor<T>::randn({hidden, out}, rng, xavier(hidden, out), true);
        m.b2 = Tensor<T>::zeros({out}, true);
        return m;
    }

    // Final layer starts at zero; used for the re-attention gate so fresh
    // models emit the neutral 0.5 everywhere.
    static Mlp2 init_zero_final(int64_t in, int64_t hidden, int64_t out, Rng& rng) {
        Mlp2 m = init(in, hidden, out, rng);
        m.w2 = Tensor<T>::zeros({hidden, out}, true);
        return m;
    }

    static double xavier(int64_t in, int64_t out) { return std::sqrt(2.0 / static_cast<double>(in + out)); }

    Tensor<T> forward(const Tensor<T>& x) const { return linear(gelu(linear(x, w1, b1)), w2, b2); }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".w1", w1);
        out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2);
        out.emplace_back(prefix + ".b2", b2);
    }
};

}  // namespace sat
