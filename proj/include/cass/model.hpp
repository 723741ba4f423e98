#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "cass/common.hpp"
#include "cass/ops.hpp"
#include "cass/tensor.hpp"

namespace cass {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct BlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    bool downsample = false;
    int shuffle_groups = 2;

    void validate() const {
        if (in_channels <= 0 || out_channels <= 0) {
            throw DimensionError("block: channel counts must be positive");
        }
        if (!downsample) {
            if (in_channels != out_channels) {
                throw DimensionError("block: non-downsampling block needs in==out channels, got " +
                                     std::to_string(in_channels) + " vs " +
                                     std::to_string(out_channels));
            }
            if (in_channels % 2 != 0) {
                throw DimensionError("block: odd channel count " + std::to_string(in_channels));
            }
        }
        if (out_channels % 2 != 0) {
            throw DimensionError("block: odd output channel count " + std::to_string(out_channels));
        }
        if (out_channels % shuffle_groups != 0) {
            throw DimensionError("block: out channels not divisible by shuffle groups");
        }
    }
};

struct StemSpec {
    int out_channels = 24;
    int kernel = 3;
    int stride = 2;
    int padding = 1;
    int pool_kernel = 3;
    int pool_stride = 2;
    int pool_padding = 1;
};

struct StageSpec {
    int blocks = 2;        // first one downsamples
    int out_channels = 0;
};

struct ModelConfig {
    int in_channels = 1;
    int in_h = 64;
    int in_w = 64;
    StemSpec stem;
    std::vector<StageSpec> stages{{2, 48}, {2, 96}};
    int num_classes = 3;
    int shuffle_groups = 2;
    std::uint64_t seed = 1;

    // Small grayscale configuration that trains on a CPU in minutes.
    static ModelConfig desk_default() { return ModelConfig{}; }

    nlohmann::json to_json() const {
        nlohmann::json stages_j = nlohmann::json::array();
        for (const auto& s : stages) stages_j.push_back({s.blocks, s.out_channels});
        return nlohmann::json{
            {"input", {in_channels, in_h, in_w}},
            {"stem",
             {{"channels", stem.out_channels},
              {"kernel", stem.kernel},
              {"stride", stem.stride},
              {"padding", stem.padding},
              {"pool_kernel", stem.pool_kernel},
              {"pool_stride", stem.pool_stride},
              {"pool_padding", stem.pool_padding}}},
            {"stages", stages_j},
            {"num_classes", num_classes},
            {"shuffle_groups", shuffle_groups},
            {"seed", seed}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig cfg;
        const auto& in = j.at("input");
        cfg.in_channels = in.at(0).get<int>();
        cfg.in_h = in.at(1).get<int>();
        cfg.in_w = in.at(2).get<int>();
        const auto& st = j.at("stem");
        cfg.stem.out_channels = st.at("channels").get<int>();
        cfg.stem.kernel = st.at("kernel").get<int>();
        cfg.stem.stride = st.at("stride").get<int>();
        cfg.stem.padding = st.at("padding").get<int>();
        cfg.stem.pool_kernel = st.at("pool_kernel").get<int>();
        cfg.stem.pool_stride = st.at("pool_stride").get<int>();
        cfg.stem.pool_padding = st.at("pool_padding").get<int>();
        cfg.stages.clear();
        for (const auto& s : j.at("stages")) {
            cfg.stages.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
        }
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.shuffle_groups = j.at("shuffle_groups").get<int>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        return cfg;
    }
};

// ---------------------------------------------------------------------------
// layers: forward caches what its own backward needs, backward accumulates
// parameter grads and returns the input grad
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    TensorT<T> weight;
    TensorT<T> wgrad;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    TensorT<T> x_cache;

    void init(int cout, int cin_g, int k, int s, int p, int g, std::mt19937_64& rng) {
        stride = s;
        padding = p;
        groups = g;
        weight = TensorT<T>(cout, cin_g, k, k);
        wgrad = TensorT<T>(cout, cin_g, k, k);
        const double stddev = std::sqrt(2.0 / (static_cast<double>(cin_g) * k * k));
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : weight.data) v = static_cast<T>(dist(rng));
    }

    TensorT<T> forward(const TensorT<T>& x) {
        x_cache = x;
        return ops::conv2d_forward(x, weight, static_cast<const std::vector<T>*>(nullptr), stride,
                                   padding, groups);
    }

    TensorT<T> backward(const TensorT<T>& gout) {
        auto g = ops::conv2d_backward(gout, x_cache, weight, false, stride, padding, groups);
        for (std::size_t i = 0; i < wgrad.data.size(); ++i) wgrad.data[i] += g.weight.data[i];
        return std::move(g.input);
    }
};

template <typename T>
struct BnLayer {
    TensorT<T> gamma, beta, ggamma, gbeta;
    TensorT<T> running_mean, running_var;
    T momentum = T(0.1);
    T epsilon = static_cast<T>(1e-5);
    ops::BnCache<T> cache;

    void init(int channels) {
        gamma = TensorT<T>(channels, 1, 1, 1, T(1));
        beta = TensorT<T>(channels, 1, 1, 1, T(0));
        ggamma = TensorT<T>(channels, 1, 1, 1, T(0));
        gbeta = TensorT<T>(channels, 1, 1, 1, T(0));
        running_mean = TensorT<T>(channels, 1, 1, 1, T(0));
        running_var = TensorT<T>(channels, 1, 1, 1, T(1));
    }

    TensorT<T> forward(const TensorT<T>& x, ops::BnMode mode) {
        return ops::batch_norm_forward(x, gamma.data, beta.data, running_mean.data,
                                       running_var.data, mode, momentum, epsilon, &cache);
    }

    TensorT<T> backward(const TensorT<T>& gout) {
        auto g = ops::batch_norm_backward(gout, cache);
        for (std::size_t i = 0; i < ggamma.data.size(); ++i) {
            ggamma.data[i] += g.gamma[i];
            gbeta.data[i] += g.beta[i];
        }
        return std::move(g.input);
    }
};

template <typename T>
struct LinearLayer {
    TensorT<T> weight, wgrad;
    TensorT<T> bias, bgrad;
    TensorT<T> x_cache;

    void init(int out_features, int in_features, std::mt19937_64& rng) {
        weight = TensorT<T>(out_features, in_features, 1, 1);
        wgrad = TensorT<T>(out_features, in_features, 1, 1);
        bias = TensorT<T>(out_features, 1, 1, 1, T(0));
        bgrad = TensorT<T>(out_features, 1, 1, 1, T(0));
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_features));
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : weight.data) v = static_cast<T>(dist(rng));
    }

    TensorT<T> forward(const TensorT<T>& x) {
        x_cache = x;
        return ops::linear_forward(x, weight, bias.data);
    }

    TensorT<T> backward(const TensorT<T>& gout) {
        auto g = ops::linear_backward(gout, x_cache, weight);
        for (std::size_t i = 0; i < wgrad.data.size(); ++i) wgrad.data[i] += g.weight.data[i];
        for (std::size_t i = 0; i < bgrad.data.size(); ++i) bgrad.data[i] += g.bias[i];
        return std::move(g.input);
    }
};

// Residual unit: identity half alongside 1x1 conv-BN-ReLU, 3x3 depthwise
// conv-BN, 1x1 conv-BN-ReLU, then concat and channel shuffle.
template <typename T>
struct BasicBlock {
    BlockSpec spec;
    Conv2dLayer<T> conv1, conv2;
    Conv2dLayer<T> dwconv;
    BnLayer<T> bn1, bn2, bn3;
    TensorT<T> relu1_in, relu2_in;

    void init(const BlockSpec& s, std::mt19937_64& rng) {
        spec = s;
        spec.validate();
        const int half = s.in_channels / 2;
        conv1.init(half, half, 1, 1, 0, 1, rng);
        bn1.init(half);
        dwconv.init(half, 1, 3, 1, 1, half, rng);
        bn2.init(half);
        conv2.init(half, half, 1, 1, 0, 1, rng);
        bn3.init(half);
    }

    TensorT<T> forward(const TensorT<T>& x, ops::BnMode mode) {
        auto [a, b] = ops::channel_split(x);
        relu1_in = bn1.forward(conv1.forward(b), mode);
        auto t = ops::relu(relu1_in);
        t = bn2.forward(dwconv.forward(t), mode);
        relu2_in = bn3.forward(conv2.forward(t), mode);
        auto branch = ops::relu(relu2_in);
        return ops::channel_shuffle(ops::concat_channels(a, branch), spec.shuffle_groups);
    }

    TensorT<T> backward(const TensorT<T>& gout) {
        auto g = ops::channel_shuffle_backward(gout, spec.shuffle_groups);
        auto [ga, gbranch] = ops::concat_channels_backward(g, spec.in_channels / 2);
        auto gb = bn3.backward(ops::relu_backward(gbranch, relu2_in));
        gb = conv2.backward(gb);
        gb = dwconv.backward(bn2.backward(gb));
        gb = conv1.backward(bn1.backward(ops::relu_backward(gb, relu1_in)));
        return ops::channel_split_backward(ga, gb);
    }
};

// Spatial downsampling unit: no split, both branches see the full input and
// stride 2 in their depthwise stage; concat doubles the channel budget.
template <typename T>
struct DownBlock {
    BlockSpec spec;
    // branch 1: dw(stride2)-BN, 1x1 conv-BN-ReLU
    Conv2dLayer<T> b1_dw, b1_conv;
    BnLayer<T> b1_bn1, b1_bn2;
    // branch 2: 1x1 conv-BN-ReLU, dw(stride2)-BN, 1x1 conv-BN-ReLU
    Conv2dLayer<T> b2_conv1, b2_dw, b2_conv2;
    BnLayer<T> b2_bn1, b2_bn2, b2_bn3;
    TensorT<T> b1_relu_in, b2_relu1_in, b2_relu2_in;

    void init(const BlockSpec& s, std::mt19937_64& rng) {
        spec = s;
        spec.validate();
        const int half = s.out_channels / 2;
        b1_dw.init(s.in_channels, 1, 3, 2, 1, s.in_channels, rng);
        b1_bn1.init(s.in_channels);
        b1_conv.init(half, s.in_channels, 1, 1, 0, 1, rng);
        b1_bn2.init(half);
        b2_conv1.init(half, s.in_channels, 1, 1, 0, 1, rng);
        b2_bn1.init(half);
        b2_dw.init(half, 1, 3, 2, 1, half, rng);
        b2_bn2.init(half);
        b2_conv2.init(half, half, 1, 1, 0, 1, rng);
        b2_bn3.init(half);
    }

    TensorT<T> forward(const TensorT<T>& x, ops::BnMode mode) {
        if (x.h() < 2 || x.w() < 2) {
            throw DimensionError("downsample block: spatial dims must be >= 2, got " +
                                 shape_str(x));
        }
        auto t1 = b1_bn1.forward(b1_dw.forward(x), mode);
        b1_relu_in = b1_bn2.forward(b1_conv.forward(t1), mode);
        auto branch1 = ops::relu(b1_relu_in);

        b2_relu1_in = b2_bn1.forward(b2_conv1.forward(x), mode);
        auto t2 = ops::relu(b2_relu1_in);
        t2 = b2_bn2.forward(b2_dw.forward(t2), mode);
        b2_relu2_in = b2_bn3.forward(b2_conv2.forward(t2), mode);
        auto branch2 = ops::relu(b2_relu2_in);

        return ops::channel_shuffle(ops::concat_channels(branch1, branch2), spec.shuffle_groups);
    }

    TensorT<T> backward(const TensorT<T>& gout) {
        auto g = ops::channel_shuffle_backward(gout, spec.shuffle_groups);
        auto [g1, g2] = ops::concat_channels_backward(g, spec.out_channels / 2);

        auto gb1 = b1_bn2.backward(ops::relu_backward(g1, b1_relu_in));
        gb1 = b1_bn1.backward(b1_conv.backward(gb1));
        gb1 = b1_dw.backward(gb1);

        auto gb2 = b2_bn3.backward(ops::relu_backward(g2, b2_relu2_in));
        gb2 = b2_dw.backward(b2_bn2.backward(b2_conv2.backward(gb2)));
        gb2 = b2_conv1.backward(b2_bn1.backward(ops::relu_backward(gb2, b2_relu1_in)));

        for (std::size_t i = 0; i < gb1.data.size(); ++i) gb1.data[i] += gb2.data[i];
        return gb1;
    }
};

// ---------------------------------------------------------------------------
// the classifier network
// ---------------------------------------------------------------------------

template <typename T>
class ModelT {
public:
    explicit ModelT(const ModelConfig& cfg) : cfg_(cfg) {
        if (cfg.num_classes < 2) throw DimensionError("model: num_classes must be >= 2");
        if (cfg.stages.empty()) throw DimensionError("model: at least one stage required");
        std::mt19937_64 rng(cfg.seed);

        stem_conv_.init(cfg.stem.out_channels, cfg.in_channels, cfg.stem.kernel, cfg.stem.stride,
                        cfg.stem.padding, 1, rng);
        stem_bn_.init(cfg.stem.out_channels);

        int channels = cfg.stem.out_channels;
        for (const auto& st : cfg.stages) {
            if (st.blocks < 1) throw DimensionError("model: stage needs >= 1 block");
            Stage stage;
            DownBlock<T> down;
            down.init({channels, st.out_channels, true, cfg.shuffle_groups}, rng);
            stage.down = std::move(down);
            channels = st.out_channels;
            for (int b = 1; b < st.blocks; ++b) {
                BasicBlock<T> blk;
                blk.init({channels, channels, false, cfg.shuffle_groups}, rng);
                stage.blocks.push_back(std::move(blk));
            }
            stages_.push_back(std::move(stage));
        }
        fc_.init(cfg.num_classes, channels, rng);
        register_params();
    }

    const ModelConfig& config() const { return cfg_; }

    TensorT<T> forward(const TensorT<T>& x, ops::BnMode mode) {
        if (x.c() != cfg_.in_channels || x.h() != cfg_.in_h || x.w() != cfg_.in_w) {
            throw DimensionError("model: input " + shape_str(x) + " does not match configured (" +
                                 std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.in_h) +
                                 "," + std::to_string(cfg_.in_w) + ")");
        }
        stem_relu_in_ = stem_bn_.forward(stem_conv_.forward(x), mode);
        auto t = ops::relu(stem_relu_in_);
        pool_in_shape_ = t.shape;
        auto pooled = ops::max_pool_forward(t, cfg_.stem.pool_kernel, cfg_.stem.pool_stride,
                                            cfg_.stem.pool_padding);
        pool_argmax_ = std::move(pooled.argmax);
        t = std::move(pooled.output);
        for (auto& stage : stages_) {
            t = stage.down.forward(t, mode);
            for (auto& blk : stage.blocks) t = blk.forward(t, mode);
        }
        gap_in_shape_ = t.shape;
        return fc_.forward(ops::global_avg_pool(t));
    }

    // Walks the caches of the most recent forward; accumulates into param grads.
    TensorT<T> backward(const TensorT<T>& glogits) {
        auto g = fc_.backward(glogits);
        g = ops::global_avg_pool_backward(g, gap_in_shape_);
        for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
            for (auto blk = it->blocks.rbegin(); blk != it->blocks.rend(); ++blk) {
                g = blk->backward(g);
            }
            g = it->down.backward(g);
        }
        g = ops::max_pool_backward(g, pool_in_shape_, pool_argmax_);
        g = ops::relu_backward(g, stem_relu_in_);
        g = stem_bn_.backward(g);
        return stem_conv_.backward(g);
    }

    std::vector<ParamRef<T>>& params() { return params_; }
    const std::vector<ParamRef<T>>& params() const { return params_; }

    void zero_grads() {
        for (auto& p : grads_) p->data.assign(p->data.size(), T(0));
    }

    std::int64_t trainable_param_count() const {
        std::int64_t total = 0;
        for (const auto& p : params_) {
            if (p.trainable) total += p.tensor->size();
        }
        return total;
    }

    // Values of all state (weights + running stats), for snapshot/restore.
    std::vector<std::vector<T>> snapshot_state() const {
        std::vector<std::vector<T>> s;
        s.reserve(params_.size());
        for (const auto& p : params_) s.push_back(p.tensor->data);
        return s;
    }

    void restore_state(const std::vector<std::vector<T>>& s) {
        if (s.size() != params_.size()) throw ArgumentError("restore_state: entry count mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i].size() != params_[i].tensor->data.size()) {
                throw ArgumentError("restore_state: size mismatch at " + params_[i].name);
            }
            params_[i].tensor->data = s[i];
        }
    }

    // Gradient tensor paired with params()[i]; empty for non-trainable entries.
    TensorT<T>* grad_of(std::size_t i) { return i < grads_.size() ? grads_[i] : nullptr; }

private:
    struct Stage {
        DownBlock<T> down;
        std::vector<BasicBlock<T>> blocks;
    };

    void add_param(const std::string& name, TensorT<T>* value, TensorT<T>* grad, bool trainable) {
        for (const auto& p : params_) {
            if (p.name == name) throw ArgumentError("duplicate parameter name " + name);
        }
        params_.push_back({name, value, trainable});
        grads_raw_.push_back(grad);
    }

    void add_bn(const std::string& prefix, BnLayer<T>& bn) {
        add_param(prefix + ".gamma", &bn.gamma, &bn.ggamma, true);
        add_param(prefix + ".beta", &bn.beta, &bn.gbeta, true);
        add_param(prefix + ".running_mean", &bn.running_mean, nullptr, false);
        add_param(prefix + ".running_var", &bn.running_var, nullptr, false);
    }

    void register_params() {
        add_param("stem.conv.weight", &stem_conv_.weight, &stem_conv_.wgrad, true);
        add_bn("stem.bn", stem_bn_);
        for (std::size_t s = 0; s < stages_.size(); ++s) {
            const std::string sp = "stage" + std::to_string(s + 1);
            auto& d = stages_[s].down;
            add_param(sp + ".block0.branch1.dwconv.weight", &d.b1_dw.weight, &d.b1_dw.wgrad, true);
            add_bn(sp + ".block0.branch1.bn1", d.b1_bn1);
            add_param(sp + ".block0.branch1.conv.weight", &d.b1_conv.weight, &d.b1_conv.wgrad, true);
            add_bn(sp + ".block0.branch1.bn2", d.b1_bn2);
            add_param(sp + ".block0.branch2.conv1.weight", &d.b2_conv1.weight, &d.b2_conv1.wgrad, true);
            add_bn(sp + ".block0.branch2.bn1", d.b2_bn1);
            add_param(sp + ".block0.branch2.dwconv.weight", &d.b2_dw.weight, &d.b2_dw.wgrad, true);
            add_bn(sp + ".block0.branch2.bn2", d.b2_bn2);
            add_param(sp + ".block0.branch2.conv2.weight", &d.b2_conv2.weight, &d.b2_conv2.wgrad, true);
            add_bn(sp + ".block0.branch2.bn3", d.b2_bn3);
            for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
                const std::string bp = sp + ".block" + std::to_string(b + 1);
                auto& blk = stages_[s].blocks[b];
                add_param(bp + ".branch2.conv1.weight", &blk.conv1.weight, &blk.conv1.wgrad, true);
                add_bn(bp + ".branch2.bn1", blk.bn1);
                add_param(bp + ".branch2.dwconv.weight", &blk.dwconv.weight, &blk.dwconv.wgrad, true);
                add_bn(bp + ".branch2.bn2", blk.bn2);
                add_param(bp + ".branch2.conv2.weight", &blk.conv2.weight, &blk.conv2.wgrad, true);
                add_bn(bp + ".branch2.bn3", blk.bn3);
            }
        }
        add_param("fc.weight", &fc_.weight, &fc_.wgrad, true);
        add_param("fc.bias", &fc_.bias, &fc_.bgrad, true);

        // grads_ mirrors params_ but only holds the trainable entries' buffers
        grads_.clear();
        for (auto* g : grads_raw_) {
            if (g) grads_.push_back(g);
        }
    }

    ModelConfig cfg_;
    Conv2dLayer<T> stem_conv_;
    BnLayer<T> stem_bn_;
    std::vector<Stage> stages_;
    LinearLayer<T> fc_;
    std::vector<ParamRef<T>> params_;
    std::vector<TensorT<T>*> grads_raw_;  // parallel to params_, nullptr for frozen entries
    std::vector<TensorT<T>*> grads_;

    TensorT<T> stem_relu_in_;
    std::array<int, 4> pool_in_shape_{};
    std::vector<std::int64_t> pool_argmax_;
    std::array<int, 4> gap_in_shape_{};

public:
    // (name, value, grad) triples for the optimizer; grad == nullptr means frozen.
    struct NamedParam {
        std::string name;
        TensorT<T>* value;
        TensorT<T>* grad;
    };

    std::vector<NamedParam> trainable_params() {
        std::vector<NamedParam> out;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (grads_raw_[i]) out.push_back({params_[i].name, params_[i].tensor, grads_raw_[i]});
        }
        return out;
    }
};

using Model = ModelT<float>;

// ---------------------------------------------------------------------------
// CASS-W1 weight file:
//   8-byte magic "CASSW1\0\0" | u32 LE header length | UTF-8 JSON header
//   {version, config, parameters:[{name, shape, offset}]} | f32 LE payload |
//   u32 LE CRC32 of the payload
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "weight file writer assumes a little-endian host");

inline constexpr char kWeightMagic[8] = {'C', 'A', 'S', 'S', 'W', '1', '\0', '\0'};

template <typename T>
void save_weights(const ModelT<T>& model, const std::string& path) {
    const auto& params = model.params();
    nlohmann::json header;
    header["version"] = 1;
    header["config"] = model.config().to_json();
    nlohmann::json plist = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params) {
        plist.push_back({{"name", p.name},
                         {"shape", {p.tensor->shape[0], p.tensor->shape[1], p.tensor->shape[2],
                                    p.tensor->shape[3]}},
                         {"offset", offset}});
        offset += static_cast<std::uint64_t>(p.tensor->size()) * sizeof(float);
    }
    header["parameters"] = plist;
    const std::string hs = header.dump();

    std::vector<float> payload;
    payload.reserve(offset / sizeof(float));
    for (const auto& p : params) {
        for (T v : p.tensor->data) payload.push_back(static_cast<float>(v));
    }
    const auto* payload_bytes = reinterpret_cast<const unsigned char*>(payload.data());
    const std::size_t payload_len = payload.size() * sizeof(float);
    const std::uint32_t crc =
        static_cast<std::uint32_t>(crc32(0L, payload_bytes, static_cast<uInt>(payload_len)));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(kWeightMagic, 8);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload_len));
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw FormatError("short write to " + path);
}

template <typename T = float>
ModelT<T> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kWeightMagic, 8) != 0) {
        throw FormatError(path + ": not a CASS-W1 weight file");
    }
    std::uint32_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), 4)) throw FormatError(path + ": truncated header length");
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), hlen)) throw FormatError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad header JSON: " + e.what());
    }
    if (header.at("version").get<int>() != 1) {
        throw FormatError(path + ": unknown version " + header.at("version").dump());
    }
    const ModelConfig cfg = ModelConfig::from_json(header.at("config"));

    // read the remainder: payload + 4-byte CRC
    std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (rest.size() < 4) throw FormatError(path + ": truncated payload");
    const std::size_t payload_len = rest.size() - 4;
    if (payload_len % sizeof(float) != 0) throw FormatError(path + ": payload not float-aligned");
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, rest.data() + payload_len, 4);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const unsigned char*>(rest.data()), static_cast<uInt>(payload_len)));
    if (crc != stored_crc) {
        throw FormatError(path + ": payload checksum mismatch");
    }

    ModelT<T> model(cfg);
    auto& params = model.params();
    const auto& plist = header.at("parameters");
    if (plist.size() != params.size()) {
        throw FormatError(path + ": file has " + std::to_string(plist.size()) +
                          " parameters, model expects " + std::to_string(params.size()));
    }
    for (const auto& entry : plist) {
        const std::string name = entry.at("name").get<std::string>();
        ParamRef<T>* target = nullptr;
        for (auto& p : params) {
            if (p.name == name) {
                target = &p;
                break;
            }
        }
        if (!target) throw FormatError(path + ": unknown parameter " + name);
        const auto& sh = entry.at("shape");
        std::array<int, 4> shape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>(),
                                 sh.at(3).get<int>()};
        if (shape != target->tensor->shape) {
            throw FormatError(path + ": shape disagreement for " + name);
        }
        const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t need = off + static_cast<std::uint64_t>(target->tensor->size()) * sizeof(float);
        if (need > payload_len) throw FormatError(path + ": parameter " + name + " exceeds payload");
        const float* src = reinterpret_cast<const float*>(rest.data() + off);
        for (std::int64_t i = 0; i < target->tensor->size(); ++i) {
            target->tensor->data[static_cast<std::size_t>(i)] = static_cast<T>(src[i]);
        }
    }
    return model;
}

}  // namespace cass
