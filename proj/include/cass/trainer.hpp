#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cass/common.hpp"
#include "cass/model.hpp"
#include "cass/ops.hpp"
#include "cass/optimizer.hpp"

namespace cass {

// ---------------------------------------------------------------------------
// augmentation: scale, rotate, blur, brightness, transpose on a single-channel
// image in [0,1]
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool scale = true;
    bool rotate = true;
    bool blur = true;
    bool brightness = true;
    bool transpose = true;

    bool any() const { return scale || rotate || blur || brightness || transpose; }
};

namespace detail {

template <typename T>
T bilinear_at(const TensorT<T>& img, double y, double x) {
    const int H = img.h(), W = img.w();
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;  // zero fill outside
        return static_cast<double>(img.at(0, 0, yy, xx));
    };
    const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                     fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
    return static_cast<T>(v);
}

template <typename T>
TensorT<T> resample(const TensorT<T>& img, int out_h, int out_w) {
    TensorT<T> out(1, 1, out_h, out_w);
    const double sy = static_cast<double>(img.h()) / out_h;
    const double sx = static_cast<double>(img.w()) / out_w;
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            out.at(0, 0, y, x) = bilinear_at(img, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
        }
    }
    return out;
}

template <typename T>
TensorT<T> recenter(const TensorT<T>& img, int out_h, int out_w) {
    TensorT<T> out(1, 1, out_h, out_w, T(0));
    const int dy = (img.h() - out_h) / 2;
    const int dx = (img.w() - out_w) / 2;
    for (int y = 0; y < out_h; ++y) {
        const int sy = y + dy;
        if (sy < 0 || sy >= img.h()) continue;
        for (int x = 0; x < out_w; ++x) {
            const int sx = x + dx;
            if (sx < 0 || sx >= img.w()) continue;
            out.at(0, 0, y, x) = img.at(0, 0, sy, sx);
        }
    }
    return out;
}

template <typename T>
TensorT<T> gaussian_blur(const TensorT<T>& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= sum;

    const int H = img.h(), W = img.w();
    TensorT<T> tmp(1, 1, H, W), out(1, 1, H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, W - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(0, 0, y, xx);
            }
            tmp.at(0, 0, y, x) = static_cast<T>(acc);
        }
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, H - 1);
                acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(0, 0, yy, x);
            }
            out.at(0, 0, y, x) = static_cast<T>(acc);
        }
    }
    return out;
}

}  // namespace detail

// Random composition of the enabled transforms, in the fixed order
// scale -> rotate -> blur -> brightness -> transpose. With every toggle off
// this is the exact identity.
template <typename T>
TensorT<T> augment(const TensorT<T>& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (image.n() != 1 || image.c() != 1) {
        throw DimensionError("augment: expected a single (1,1,H,W) image, got " + shape_str(image));
    }
    if (cfg.transpose && image.h() != image.w()) {
        throw DimensionError("augment: transpose enabled on non-square image " + shape_str(image));
    }
    if (!cfg.any()) return image;

    TensorT<T> img = image;
    const int H = image.h(), W = image.w();

    if (cfg.scale) {
        std::uniform_real_distribution<double> dist(0.9, 1.1);
        const double s = dist(rng);
        const int nh = std::max(1, static_cast<int>(std::lround(H * s)));
        const int nw = std::max(1, static_cast<int>(std::lround(W * s)));
        if (nh != H || nw != W) {
            img = detail::recenter(detail::resample(img, nh, nw), H, W);
        }
    }
    if (cfg.rotate) {
        std::uniform_real_distribution<double> dist(-10.0, 10.0);
        const double theta = dist(rng) * M_PI / 180.0;
        const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
        const double c = std::cos(theta), s = std::sin(theta);
        TensorT<T> rot(1, 1, H, W);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double dy = y - cy, dx = x - cx;
                rot.at(0, 0, y, x) = detail::bilinear_at(img, c * dy - s * dx + cy, s * dy + c * dx + cx);
            }
        }
        img = std::move(rot);
    }
    if (cfg.blur) {
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        const double sigma = dist(rng);
        if (sigma > 0.05) img = detail::gaussian_blur(img, sigma);
    }
    if (cfg.brightness) {
        std::uniform_real_distribution<double> dist(0.8, 1.2);
        const double b = dist(rng);
        for (auto& v : img.data) v = static_cast<T>(std::clamp(static_cast<double>(v) * b, 0.0, 1.0));
    }
    if (cfg.transpose) {
        if (rng() % 2 == 0) {
            TensorT<T> tr(1, 1, W, H);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) tr.at(0, 0, x, y) = img.at(0, 0, y, x);
            img = std::move(tr);
        }
    }
    for (auto& v : img.data) v = static_cast<T>(std::clamp(static_cast<double>(v), 0.0, 1.0));
    return img;
}

// ---------------------------------------------------------------------------
// gradient accumulation
// ---------------------------------------------------------------------------

template <typename T>
struct Batch {
    TensorT<T> images;
    std::vector<int> labels;
};

struct StepStats {
    double loss = 0.0;
    int correct = 0;
    int total = 0;
};

template <typename T>
std::vector<ParamView<T>> param_views(ModelT<T>& model) {
    std::vector<ParamView<T>> views;
    for (auto& p : model.trainable_params()) {
        views.push_back({p.name, &p.value->data, &p.grad->data});
    }
    return views;
}

// Sums micro-batch gradients scaled by 1/k, then applies one optimizer step.
// Batch-norm running stats advance per micro-batch in Train mode.
template <typename T>
StepStats accumulate_and_step(ModelT<T>& model, const std::vector<Batch<T>>& micro_batches,
                              AdamT<T>& opt, double lr, ops::BnMode bn_mode) {
    if (micro_batches.empty()) throw ArgumentError("accumulate_and_step: empty micro-batch list");
    const T inv_k = T(1) / static_cast<T>(micro_batches.size());
    model.zero_grads();
    StepStats stats;
    for (const auto& mb : micro_batches) {
        auto logits = model.forward(mb.images, bn_mode);
        auto ce = ops::softmax_cross_entropy(logits, mb.labels);
        stats.loss += static_cast<double>(ce.loss);
        for (int n = 0; n < logits.n(); ++n) {
            int best = 0;
            for (int k = 1; k < logits.c(); ++k) {
                if (ce.probs.at(n, k, 0, 0) >= ce.probs.at(n, best, 0, 0)) best = k;
            }
            if (best == mb.labels[static_cast<std::size_t>(n)]) ++stats.correct;
            ++stats.total;
        }
        auto glogits = ops::softmax_cross_entropy_backward(ce.probs, mb.labels);
        for (auto& g : glogits.data) g *= inv_k;
        model.backward(glogits);
    }
    auto views = param_views(model);
    opt.step(views, lr);
    model.zero_grads();
    stats.loss /= static_cast<double>(micro_batches.size());
    return stats;
}

// ---------------------------------------------------------------------------
// learning-rate range test
// ---------------------------------------------------------------------------

struct LrRangeResult {
    std::vector<double> lrs;
    std::vector<double> losses;  // smoothed
    double suggested_min = 0.0;
    double suggested_max = 0.0;
};

// Problem interface: snapshot() / restore(state) and step(lr) -> loss.
// Linearly sweeps lr over `iterations` steps, smooths the loss with a
// bias-corrected EMA, stops once the smoothed loss exceeds 4x the best, and
// restores the problem state afterward.
template <typename Problem>
LrRangeResult lr_range_test(Problem& problem, double lr_lo, double lr_hi, int iterations,
                            double smoothing = 0.98, double divergence_factor = 4.0) {
    if (!(lr_lo > 0.0) || !(lr_lo < lr_hi)) {
        throw ArgumentError("lr_range_test: need 0 < lr_lo < lr_hi");
    }
    if (iterations < 2) throw ArgumentError("lr_range_test: need at least 2 iterations");

    auto state = problem.snapshot();
    LrRangeResult res;
    double ema = 0.0;
    double best = std::numeric_limits<double>::infinity();
    double best_lr = lr_lo;
    try {
        for (int i = 0; i < iterations; ++i) {
            const double lr = lr_lo + (lr_hi - lr_lo) * static_cast<double>(i) /
                                          static_cast<double>(iterations - 1);
            const double raw = problem.step(lr);
            const bool finite = std::isfinite(raw);
            ema = smoothing * ema + (1.0 - smoothing) * (finite ? raw : 0.0);
            const double smoothed = ema / (1.0 - std::pow(smoothing, static_cast<double>(i + 1)));
            if (!finite || (i > 0 && smoothed > divergence_factor * best)) {
                if (i == 0) {
                    throw RangeError("lr_range_test: diverged on the first iteration");
                }
                break;
            }
            res.lrs.push_back(lr);
            res.losses.push_back(smoothed);
            if (smoothed < best) {
                best = smoothed;
                best_lr = lr;
            }
        }
    } catch (...) {
        problem.restore(state);
        throw;
    }
    problem.restore(state);
    if (res.lrs.empty()) throw RangeError("lr_range_test: no usable iterations");
    res.suggested_max = best_lr;
    res.suggested_min = best_lr / 10.0;
    return res;
}

// The production problem: one Adam step per iteration over cycling micro-batches.
template <typename T>
class ModelLrProblem {
public:
    ModelLrProblem(ModelT<T>& model, const std::vector<Batch<T>>& batches, AdamConfig adam = {})
        : model_(model), batches_(batches), opt_(adam) {
        if (batches.empty()) throw ArgumentError("lr_range_test: no batches");
    }

    std::vector<std::vector<T>> snapshot() { return model_.snapshot_state(); }
    void restore(const std::vector<std::vector<T>>& s) { model_.restore_state(s); }

    double step(double lr) {
        const auto& mb = batches_[cursor_++ % batches_.size()];
        model_.zero_grads();
        auto logits = model_.forward(mb.images, ops::BnMode::Train);
        auto ce = ops::softmax_cross_entropy(logits, mb.labels);
        model_.backward(ops::softmax_cross_entropy_backward(ce.probs, mb.labels));
        auto views = param_views(model_);
        opt_.step(views, lr);
        model_.zero_grads();
        return static_cast<double>(ce.loss);
    }

private:
    ModelT<T>& model_;
    const std::vector<Batch<T>>& batches_;
    AdamT<T> opt_;
    std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 1e-4;
    AdamConfig adam;
    int micro_batch = 16;
    int accumulation_steps = 1;
    int epochs = 10;
    bool augment_enabled = true;
    AugmentConfig augment;
    bool balance = false;
    std::uint64_t seed = 1;

    void validate() const {
        if (learning_rate <= 0.0) throw ArgumentError("train: learning_rate must be > 0");
        if (micro_batch < 1 || accumulation_steps < 1) {
            throw ArgumentError("train: micro_batch and accumulation_steps must be >= 1");
        }
        if (epochs < 1) throw ArgumentError("train: epochs must be >= 1");
    }
};

template <typename T>
struct Sample {
    TensorT<T> image;  // (1, C, H, W)
    int label = 0;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double acc = 0.0;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
};

inline std::string to_jsonl(const TrainLog& log) {
    std::ostringstream os;
    os.precision(10);
    for (const auto& e : log.epochs) {
        os << "{\"epoch\":" << e.epoch << ",\"loss\":" << e.loss << ",\"acc\":" << e.acc
           << ",\"lr\":" << e.lr << "}\n";
    }
    return os.str();
}

template <typename T>
TrainLog train(ModelT<T>& model, const std::vector<Sample<T>>& samples, const TrainConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw ArgumentError("train: empty dataset");
    const int classes = model.config().num_classes;
    for (const auto& s : samples) {
        if (s.label < 0 || s.label >= classes) {
            throw DomainError("train: label " + std::to_string(s.label) + " outside [0," +
                              std::to_string(classes) + ")");
        }
    }

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.balance) {
        // duplicate minority-class samples until every class matches the largest
        std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
        for (std::size_t i = 0; i < samples.size(); ++i) {
            by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
        }
        std::size_t largest = 0;
        for (const auto& v : by_class) largest = std::max(largest, v.size());
        for (const auto& v : by_class) {
            if (v.empty()) continue;
            for (std::size_t want = v.size(); want < largest; ++want) {
                order.push_back(v[want % v.size()]);
            }
        }
    }

    std::mt19937_64 rng(cfg.seed);
    AdamT<T> opt(cfg.adam);
    TrainLog log;
    const auto& shape = model.config();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::int64_t loss_batches = 0;
        std::int64_t correct = 0, total = 0;

        std::size_t pos = 0;
        while (pos < order.size()) {
            std::vector<Batch<T>> group;
            for (int a = 0; a < cfg.accumulation_steps && pos < order.size(); ++a) {
                const int take =
                    static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.micro_batch),
                                                           order.size() - pos));
                Batch<T> mb;
                mb.images = TensorT<T>(take, shape.in_channels, shape.in_h, shape.in_w);
                mb.labels.resize(static_cast<std::size_t>(take));
                for (int i = 0; i < take; ++i) {
                    const auto& s = samples[order[pos++]];
                    TensorT<T> img = s.image;
                    if (cfg.augment_enabled) img = augment(img, cfg.augment, rng);
                    std::copy(img.data.begin(), img.data.end(),
                              mb.images.data.begin() +
                                  static_cast<std::ptrdiff_t>(mb.images.index(i, 0, 0, 0)));
                    mb.labels[static_cast<std::size_t>(i)] = s.label;
                }
                group.push_back(std::move(mb));
            }
            StepStats stats;
            try {
                stats = accumulate_and_step(model, group, opt, cfg.learning_rate, ops::BnMode::Train);
            } catch (const Error& e) {
                throw Error("epoch " + std::to_string(epoch) + ": " + e.what());
            }
            loss_sum += stats.loss;
            ++loss_batches;
            correct += stats.correct;
            total += stats.total;
        }
        log.epochs.push_back({epoch, loss_sum / static_cast<double>(loss_batches),
                              static_cast<double>(correct) / static_cast<double>(total),
                              cfg.learning_rate});
        log_info("epoch " + std::to_string(epoch) + " loss " +
                 std::to_string(log.epochs.back().loss) + " acc " +
                 std::to_string(log.epochs.back().acc));
    }
    return log;
}

}  // namespace cass
