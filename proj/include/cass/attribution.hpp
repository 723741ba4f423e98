#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cass/model.hpp"
#include "cass/preprocess.hpp"
#include "cass/tensor.hpp"

namespace cass {

// Signed per-pixel attribution of one class logit, with the completeness gap
// measured and carried along rather than hidden.
struct AttributionMap {
    int h = 0;
    int w = 0;
    std::vector<float> values;
    int target_class = 0;
    std::string baseline_desc = "zero";
    int steps = 0;
    double completeness_gap = 0.0;  // |sum(values) - (F(x) - F(baseline))|
    double output_delta = 0.0;      // F(x) - F(baseline)
};

// Scalar function of an image: returns F(x) and writes dF/dx into grad.
template <typename T>
using ValueAndGrad = std::function<T(const TensorT<T>&, TensorT<T>&)>;

// Right-Riemann approximation of the path integral from baseline to image:
//   IG_i = (x_i - x'_i) * (1/m) * sum_{k=1..m} dF/dx_i at x' + (k/m)(x - x').
template <typename T>
AttributionMap integrated_gradients(const ValueAndGrad<T>& target, const TensorT<T>& image,
                                    const TensorT<T>& baseline, int target_class, int steps = 50) {
    if (!image.same_shape(baseline)) {
        throw DimensionError("integrated_gradients: baseline " + shape_str(baseline) +
                             " does not match image " + shape_str(image));
    }
    if (steps < 1) throw ArgumentError("integrated_gradients: steps must be >= 1");

    const std::size_t n = image.data.size();
    std::vector<double> grad_sum(n, 0.0);
    TensorT<T> point = baseline;
    TensorT<T> grad;
    double f_image = 0.0;
    for (int k = 1; k <= steps; ++k) {
        const double alpha = static_cast<double>(k) / steps;
        for (std::size_t i = 0; i < n; ++i) {
            point.data[i] = static_cast<T>(static_cast<double>(baseline.data[i]) +
                                           alpha * (static_cast<double>(image.data[i]) -
                                                    static_cast<double>(baseline.data[i])));
        }
        const double value = static_cast<double>(target(point, grad));
        if (k == steps) f_image = value;
        for (std::size_t i = 0; i < n; ++i) grad_sum[i] += static_cast<double>(grad.data[i]);
    }
    const double f_baseline = static_cast<double>(target(baseline, grad));

    AttributionMap map;
    map.h = image.h();
    map.w = image.w();
    map.target_class = target_class;
    map.steps = steps;
    map.values.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ig = (static_cast<double>(image.data[i]) - static_cast<double>(baseline.data[i])) *
                          grad_sum[i] / steps;
        map.values[i] = static_cast<float>(ig);
        total += ig;
    }
    map.output_delta = f_image - f_baseline;
    map.completeness_gap = std::abs(total - map.output_delta);
    return map;
}

// Eval-mode logit of `target_class` as a differentiable target. Parameter
// grads accumulated along the way are scrubbed after each call.
template <typename T>
ValueAndGrad<T> logit_target(ModelT<T>& model, int target_class) {
    if (target_class < 0 || target_class >= model.config().num_classes) {
        throw DomainError("logit_target: class " + std::to_string(target_class) + " out of range");
    }
    return [&model, target_class](const TensorT<T>& x, TensorT<T>& grad) -> T {
        auto logits = model.forward(x, ops::BnMode::Eval);
        TensorT<T> glogits(logits.shape[0], logits.shape[1], 1, 1, T(0));
        glogits.at(0, target_class, 0, 0) = T(1);
        grad = model.backward(glogits);
        model.zero_grads();
        return logits.at(0, target_class, 0, 0);
    };
}

// |values| normalized by the clipped 99th-percentile magnitude, alpha-blended
// at 0.5 as a red overlay onto the grayscale underlay.
struct Heatmap {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> rgb;
    bool all_zero = false;
};

Heatmap render_heatmap(const AttributionMap& map, const CleanImage& underlay);

// Raw map: 16-byte header (magic "CASSIG1\0", u32 height, u32 width, LE),
// then row-major f32 LE values.
void write_attribution_binary(const AttributionMap& map, const std::string& path);
AttributionMap read_attribution_binary(const std::string& path);

}  // namespace cass
