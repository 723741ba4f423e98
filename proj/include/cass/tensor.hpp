#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cass/common.hpp"

namespace cass {

// Dense row-major (N, C, H, W) tensor. Default builds run the model in
// float; gradient-check builds instantiate the same code with double.
template <typename T>
struct TensorT {
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<T> data;
    std::vector<T> grad;  // empty unless alloc_grad() was called

    TensorT() = default;

    TensorT(int n, int c, int h, int w, T fill = T(0)) : shape{n, c, h, w} {
        if (n <= 0 || c <= 0 || h <= 0 || w <= 0) {
            throw DimensionError("tensor dims must be positive, got (" + std::to_string(n) + "," +
                                 std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")");
        }
        data.assign(static_cast<std::size_t>(size_of(shape)), fill);
    }

    static std::int64_t size_of(const std::array<int, 4>& s) {
        return std::int64_t{1} * s[0] * s[1] * s[2] * s[3];
    }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }

    std::int64_t index(int in, int ic, int ih, int iw) const {
        return ((std::int64_t{in} * shape[1] + ic) * shape[2] + ih) * shape[3] + iw;
    }

    T& at(int in, int ic, int ih, int iw) { return data[static_cast<std::size_t>(index(in, ic, ih, iw))]; }
    const T& at(int in, int ic, int ih, int iw) const {
        return data[static_cast<std::size_t>(index(in, ic, ih, iw))];
    }

    bool has_grad() const { return !grad.empty(); }

    void alloc_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        grad.assign(data.size(), T(0));
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

template <typename T>
std::string shape_str(const TensorT<T>& t) {
    return "(" + std::to_string(t.shape[0]) + "," + std::to_string(t.shape[1]) + "," +
           std::to_string(t.shape[2]) + "," + std::to_string(t.shape[3]) + ")";
}

using Tensor = TensorT<float>;

// Named model parameter: the trainer sees value/grad pairs, the weight file
// sees name/shape pairs. Non-trainable entries carry batch-norm running stats.
template <typename T>
struct ParamRef {
    std::string name;
    TensorT<T>* tensor = nullptr;
    bool trainable = true;
};

}  // namespace cass
