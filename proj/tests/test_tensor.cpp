#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "cass/ops.hpp"
#include "cass/tensor.hpp"
#include "gradcheck.hpp"

using cass::DimensionError;
using cass::DomainError;
using cass::TensorT;
using D = TensorT<double>;
namespace ops = cass::ops;
using casstest::fill_uniform;
using casstest::max_grad_rel_err;
using casstest::weighted_sum;

TEST_CASE("conv2d: 1x1 kernel scales a constant image") {
    D x(1, 1, 2, 2, 3.0);
    D w(1, 1, 1, 1, 2.0);
    auto y = ops::conv2d_forward(x, w, static_cast<const std::vector<double>*>(nullptr), 1, 0, 1);
    CHECK(y.shape == std::array<int, 4>{1, 1, 2, 2});
    for (double v : y.data) CHECK(v == doctest::Approx(6.0));
}

TEST_CASE("conv2d: identity-center 3x3 kernel with padding 1 reproduces the input") {
    std::mt19937_64 rng(7);
    D x(1, 1, 3, 3);
    fill_uniform(x, rng);
    D w(1, 1, 3, 3, 0.0);
    w.at(0, 0, 1, 1) = 1.0;
    auto y = ops::conv2d_forward(x, w, static_cast<const std::vector<double>*>(nullptr), 1, 1, 1);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d: output shape follows the stride/padding arithmetic") {
    D x(2, 4, 7, 9);
    D w(6, 2, 3, 3);
    auto y = ops::conv2d_forward(x, w, static_cast<const std::vector<double>*>(nullptr), 2, 1, 2);
    CHECK(y.shape == std::array<int, 4>{2, 6, 4, 5});
}

TEST_CASE("conv2d: grouped gradient check against finite differences") {
    std::mt19937_64 rng(42);
    D x(2, 4, 5, 5), w(4, 2, 3, 3), gout;
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    std::vector<double> bias(4);
    fill_uniform(bias, rng);
    auto fwd = [&] { return ops::conv2d_forward(x, w, &bias, 1, 1, 2); };
    auto out = fwd();
    D up(out.shape[0], out.shape[1], out.shape[2], out.shape[3]);
    fill_uniform(up, rng);
    auto grads = ops::conv2d_backward(up, x, w, true, 1, 1, 2);
    auto loss = [&] { return weighted_sum(fwd(), up); };

    CHECK(max_grad_rel_err<double>(w.data, grads.weight.data, loss) < 1e-6);
    CHECK(max_grad_rel_err<double>(x.data, grads.input.data, loss) < 1e-6);
    CHECK(max_grad_rel_err<double>(bias, grads.bias, loss) < 1e-6);
}

TEST_CASE("conv2d: shape mismatches name the offending axis") {
    D x(1, 3, 4, 4);
    D w(2, 2, 3, 3);  // expects Cin/groups == 3
    CHECK_THROWS_AS(
        ops::conv2d_forward(x, w, static_cast<const std::vector<double>*>(nullptr), 1, 1, 1),
        DimensionError);
    D w2(2, 3, 9, 9);  // kernel larger than padded input
    CHECK_THROWS_AS(
        ops::conv2d_forward(x, w2, static_cast<const std::vector<double>*>(nullptr), 1, 1, 1),
        DimensionError);
    D x2(1, 3, 4, 4);
    D w3(3, 1, 1, 1);
    CHECK_THROWS_AS(
        ops::conv2d_forward(x2, w3, static_cast<const std::vector<double>*>(nullptr), 1, 0, 2),
        DimensionError);  // C=3 not divisible by groups=2
}

TEST_CASE("depthwise: identity kernels reproduce the input") {
    std::mt19937_64 rng(11);
    D x(2, 3, 4, 4);
    fill_uniform(x, rng);
    D w(3, 1, 3, 3, 0.0);
    for (int c = 0; c < 3; ++c) w.at(c, 0, 1, 1) = 1.0;
    auto y = ops::depthwise_conv2d_forward(x, w, 1, 1);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("depthwise: channels stay independent") {
    std::mt19937_64 rng(12);
    D x(1, 2, 2, 2);
    fill_uniform(x, rng, 0.1, 1.0);
    D w(2, 1, 1, 1);
    w.at(0, 0, 0, 0) = 0.0;
    w.at(1, 0, 0, 0) = 1.0;
    auto y = ops::depthwise_conv2d_forward(x, w, 1, 0);
    for (int h = 0; h < 2; ++h) {
        for (int ww = 0; ww < 2; ++ww) {
            CHECK(y.at(0, 0, h, ww) == 0.0);
            CHECK(y.at(0, 1, h, ww) == doctest::Approx(x.at(0, 1, h, ww)));
        }
    }
}

TEST_CASE("depthwise: gradient check and channel-count validation") {
    std::mt19937_64 rng(13);
    D x(2, 3, 5, 5), w(3, 1, 3, 3);
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    auto fwd = [&] { return ops::depthwise_conv2d_forward(x, w, 2, 1); };
    auto out = fwd();
    D up(out.shape[0], out.shape[1], out.shape[2], out.shape[3]);
    fill_uniform(up, rng);
    auto grads = ops::depthwise_conv2d_backward(up, x, w, 2, 1);
    auto loss = [&] { return weighted_sum(fwd(), up); };
    CHECK(max_grad_rel_err<double>(w.data, grads.weight.data, loss) < 1e-6);
    CHECK(max_grad_rel_err<double>(x.data, grads.input.data, loss) < 1e-6);

    D wbad(4, 1, 3, 3);
    CHECK_THROWS_AS(ops::depthwise_conv2d_forward(x, wbad, 1, 1), DimensionError);
}

TEST_CASE("batch_norm: train mode normalizes each channel") {
    std::mt19937_64 rng(21);
    D x(4, 3, 5, 5);
    fill_uniform(x, rng, -3.0, 7.0);
    std::vector<double> gamma(3, 1.0), beta(3, 0.0), rm(3, 0.0), rv(3, 1.0);
    auto y = ops::batch_norm_forward(x, gamma, beta, rm, rv, ops::BnMode::Train, 0.1, 1e-5,
                                     static_cast<ops::BnCache<double>*>(nullptr));
    const std::int64_t m = 4 * 5 * 5;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 4; ++n)
            for (int h = 0; h < 5; ++h)
                for (int w = 0; w < 5; ++w) mean += y.at(n, c, h, w);
        mean /= static_cast<double>(m);
        for (int n = 0; n < 4; ++n)
            for (int h = 0; h < 5; ++h)
                for (int w = 0; w < 5; ++w) var += (y.at(n, c, h, w) - mean) * (y.at(n, c, h, w) - mean);
        var /= static_cast<double>(m);
        CHECK(std::abs(mean) < 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // up to the epsilon in the denominator
    }
}

TEST_CASE("batch_norm: eval mode closed form") {
    D x(1, 1, 1, 2, 1.0);
    std::vector<double> gamma{2.0}, beta{3.0}, rm{0.0}, rv{1.0};
    auto y = ops::batch_norm_forward(x, gamma, beta, rm, rv, ops::BnMode::Eval, 0.1, 1e-5,
                                     static_cast<ops::BnCache<double>*>(nullptr));
    const double expected = 2.0 * (1.0 / std::sqrt(1.0 + 1e-5)) + 3.0;
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("batch_norm: gradient check for input, gamma and beta") {
    std::mt19937_64 rng(22);
    D x(3, 2, 4, 4);
    fill_uniform(x, rng, -2.0, 2.0);
    std::vector<double> gamma(2), beta(2);
    fill_uniform(gamma, rng, 0.5, 1.5);
    fill_uniform(beta, rng, -0.5, 0.5);
    D up(3, 2, 4, 4);
    fill_uniform(up, rng);

    auto fwd = [&] {
        std::vector<double> rm(2, 0.0), rv(2, 1.0);  // fresh stats: pure function of inputs
        return ops::batch_norm_forward(x, gamma, beta, rm, rv, ops::BnMode::Train, 0.1, 1e-5,
                                       static_cast<ops::BnCache<double>*>(nullptr));
    };
    std::vector<double> rm(2, 0.0), rv(2, 1.0);
    ops::BnCache<double> cache;
    ops::batch_norm_forward(x, gamma, beta, rm, rv, ops::BnMode::Train, 0.1, 1e-5, &cache);
    auto grads = ops::batch_norm_backward(up, cache);
    auto loss = [&] { return weighted_sum(fwd(), up); };

    CHECK(max_grad_rel_err<double>(x.data, grads.input.data, loss) < 1e-5);
    CHECK(max_grad_rel_err<double>(gamma, grads.gamma, loss) < 1e-5);
    CHECK(max_grad_rel_err<double>(beta, grads.beta, loss) < 1e-5);
}

TEST_CASE("batch_norm: eval-mode backward is a per-channel scale") {
    std::mt19937_64 rng(23);
    D x(2, 2, 3, 3);
    fill_uniform(x, rng);
    std::vector<double> gamma{1.3, 0.7}, beta{0.1, -0.2}, rm{0.2, -0.1}, rv{1.5, 0.8};
    D up(2, 2, 3, 3);
    fill_uniform(up, rng);
    auto fwd = [&] {
        std::vector<double> rm2 = rm, rv2 = rv;
        return ops::batch_norm_forward(x, gamma, beta, rm2, rv2, ops::BnMode::Eval, 0.1, 1e-5,
                                       static_cast<ops::BnCache<double>*>(nullptr));
    };
    std::vector<double> rm2 = rm, rv2 = rv;
    ops::BnCache<double> cache;
    ops::batch_norm_forward(x, gamma, beta, rm2, rv2, ops::BnMode::Eval, 0.1, 1e-5, &cache);
    auto grads = ops::batch_norm_backward(up, cache);
    auto loss = [&] { return weighted_sum(fwd(), up); };
    CHECK(max_grad_rel_err<double>(x.data, grads.input.data, loss) < 1e-6);
}

TEST_CASE("batch_norm: degenerate train batch is rejected") {
    D x(1, 2, 1, 1, 1.0);
    std::vector<double> gamma(2, 1.0), beta(2, 0.0), rm(2, 0.0), rv(2, 1.0);
    CHECK_THROWS_AS(ops::batch_norm_forward(x, gamma, beta, rm, rv, ops::BnMode::Train, 0.1, 1e-5,
                                            static_cast<ops::BnCache<double>*>(nullptr)),
                    DomainError);
}

namespace {

// Independent oracle: materialize the reshape(g, C/g) -> transpose -> flatten
// permutation and apply it per channel.
std::vector<int> shuffle_permutation(int channels, int groups) {
    std::vector<int> perm(static_cast<std::size_t>(channels));
    const int per = channels / groups;
    int out = 0;
    for (int j = 0; j < per; ++j) {
        for (int k = 0; k < groups; ++k) perm[static_cast<std::size_t>(out++)] = k * per + j;
    }
    return perm;
}

D labeled_channels(int channels) {
    D x(1, channels, 2, 2);
    for (int c = 0; c < channels; ++c) {
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) x.at(0, c, h, w) = static_cast<double>(c);
    }
    return x;
}

}  // namespace

TEST_CASE("channel_shuffle: groups=1 is the identity") {
    std::mt19937_64 rng(31);
    D x(2, 6, 3, 3);
    fill_uniform(x, rng);
    auto y = ops::channel_shuffle(x, 1);
    CHECK(y.data == x.data);
}

TEST_CASE("channel_shuffle: C=6 groups=2 interleaves 0,3,1,4,2,5") {
    auto x = labeled_channels(6);
    auto y = ops::channel_shuffle(x, 2);
    const std::vector<int> expected{0, 3, 1, 4, 2, 5};
    for (int c = 0; c < 6; ++c) CHECK(y.at(0, c, 0, 0) == doctest::Approx(expected[static_cast<std::size_t>(c)]));
}

TEST_CASE("channel_shuffle: matches the reshape-transpose oracle") {
    std::mt19937_64 rng(32);
    for (int channels = 2; channels <= 12; ++channels) {
        for (int g = 1; g <= channels; ++g) {
            if (channels % g != 0) continue;
            D x(1, channels, 2, 3);
            fill_uniform(x, rng);
            auto y = ops::channel_shuffle(x, g);
            auto perm = shuffle_permutation(channels, g);
            for (int c = 0; c < channels; ++c) {
                for (int h = 0; h < 2; ++h) {
                    for (int w = 0; w < 3; ++w) {
                        CHECK(y.at(0, c, h, w) == x.at(0, perm[static_cast<std::size_t>(c)], h, w));
                    }
                }
            }
        }
    }
}

TEST_CASE("channel_shuffle: shuffle(g) then shuffle(C/g) is the identity, exhaustive C<=12") {
    std::mt19937_64 rng(33);
    for (int channels = 1; channels <= 12; ++channels) {
        for (int g = 1; g <= channels; ++g) {
            if (channels % g != 0) continue;
            D x(1, channels, 2, 2);
            fill_uniform(x, rng);
            auto y = ops::channel_shuffle(ops::channel_shuffle(x, g), channels / g);
            CHECK(y.data == x.data);
        }
    }
}

TEST_CASE("channel_shuffle: inverse law property-tested on larger random channel counts") {
    std::mt19937_64 rng(34);
    std::uniform_int_distribution<int> cdist(13, 64);
    for (int it = 0; it < 50; ++it) {
        const int channels = cdist(rng);
        std::vector<int> divisors;
        for (int g = 1; g <= channels; ++g)
            if (channels % g == 0) divisors.push_back(g);
        const int g = divisors[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, static_cast<int>(divisors.size()) - 1)(rng))];
        D x(1, channels, 2, 2);
        fill_uniform(x, rng);
        auto y = ops::channel_shuffle(ops::channel_shuffle(x, g), channels / g);
        CHECK(y.data == x.data);

        // permutation: value multiset unchanged
        auto a = x.data, b = ops::channel_shuffle(x, g).data;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("channel_shuffle: indivisible group count is rejected") {
    D x(1, 6, 2, 2);
    CHECK_THROWS_AS(ops::channel_shuffle(x, 4), DimensionError);
}

TEST_CASE("channel_split/concat: halves preserve order and round trip") {
    auto x = labeled_channels(4);
    auto [a, b] = ops::channel_split(x);
    CHECK(a.c() == 2);
    CHECK(a.at(0, 0, 0, 0) == 0.0);
    CHECK(a.at(0, 1, 0, 0) == 1.0);
    CHECK(b.at(0, 0, 0, 0) == 2.0);
    CHECK(b.at(0, 1, 0, 0) == 3.0);

    std::mt19937_64 rng(41);
    D r(2, 8, 3, 3);
    fill_uniform(r, rng);
    auto [ra, rb] = ops::channel_split(r);
    auto rr = ops::concat_channels(ra, rb);
    CHECK(rr.data == r.data);

    D odd(1, 3, 2, 2);
    CHECK_THROWS_AS(ops::channel_split(odd), DimensionError);
}

TEST_CASE("concat_channels: backward routes the output grad to the matching halves") {
    std::mt19937_64 rng(42);
    D a(1, 2, 3, 3), b(1, 3, 3, 3);
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    auto out = ops::concat_channels(a, b);
    D up(out.shape[0], out.shape[1], out.shape[2], out.shape[3]);
    fill_uniform(up, rng);
    auto [ga, gb] = ops::concat_channels_backward(up, a.c());
    auto loss = [&] { return weighted_sum(ops::concat_channels(a, b), up); };
    CHECK(max_grad_rel_err<double>(a.data, ga.data, loss) < 1e-6);
    CHECK(max_grad_rel_err<double>(b.data, gb.data, loss) < 1e-6);
}

TEST_CASE("relu: clamps negatives and routes grads through positives only") {
    D x(1, 3, 1, 1);
    x.data = {-1.0, 0.0, 2.0};
    auto y = ops::relu(x);
    CHECK(y.data == std::vector<double>{0.0, 0.0, 2.0});

    std::mt19937_64 rng(51);
    D r(2, 3, 4, 4);
    fill_uniform(r, rng);
    D up(2, 3, 4, 4);
    fill_uniform(up, rng);
    auto gin = ops::relu_backward(up, r);
    auto loss = [&] { return weighted_sum(ops::relu(r), up); };
    CHECK(max_grad_rel_err<double>(r.data, gin.data, loss) < 1e-6);
}

TEST_CASE("global_avg_pool: constant map pools to the constant") {
    D x(2, 3, 4, 5, 2.5);
    auto y = ops::global_avg_pool(x);
    CHECK(y.shape == std::array<int, 4>{2, 3, 1, 1});
    for (double v : y.data) CHECK(v == doctest::Approx(2.5));

    std::mt19937_64 rng(52);
    D r(2, 2, 3, 3);
    fill_uniform(r, rng);
    D up(2, 2, 1, 1);
    fill_uniform(up, rng);
    auto gin = ops::global_avg_pool_backward(up, r.shape);
    auto loss = [&] { return weighted_sum(ops::global_avg_pool(r), up); };
    CHECK(max_grad_rel_err<double>(r.data, gin.data, loss) < 1e-6);
}

TEST_CASE("max_pool: forward window maxima and argmax-routed backward") {
    D x(1, 1, 4, 4);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) x.at(0, 0, h, w) = h * 4 + w;
    auto res = ops::max_pool_forward(x, 2, 2);
    CHECK(res.output.shape == std::array<int, 4>{1, 1, 2, 2});
    CHECK(res.output.at(0, 0, 0, 0) == 5.0);
    CHECK(res.output.at(0, 0, 1, 1) == 15.0);

    std::mt19937_64 rng(53);
    D r(2, 2, 5, 5);
    fill_uniform(r, rng);  // distinct values: argmax stable under the FD step
    auto fwd = [&] { return ops::max_pool_forward(r, 3, 2, 1).output; };
    auto out = fwd();
    D up(out.shape[0], out.shape[1], out.shape[2], out.shape[3]);
    fill_uniform(up, rng);
    auto cache = ops::max_pool_forward(r, 3, 2, 1);
    auto gin = ops::max_pool_backward(up, r.shape, cache.argmax);
    auto loss = [&] { return weighted_sum(fwd(), up); };
    CHECK(max_grad_rel_err<double>(r.data, gin.data, loss) < 1e-6);
}

TEST_CASE("linear: gradient check") {
    std::mt19937_64 rng(61);
    D x(3, 5, 1, 1), w(4, 5, 1, 1);
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    std::vector<double> bias(4);
    fill_uniform(bias, rng);
    auto fwd = [&] { return ops::linear_forward(x, w, bias); };
    auto out = fwd();
    CHECK(out.shape == std::array<int, 4>{3, 4, 1, 1});
    D up(3, 4, 1, 1);
    fill_uniform(up, rng);
    auto grads = ops::linear_backward(up, x, w);
    auto loss = [&] { return weighted_sum(fwd(), up); };
    CHECK(max_grad_rel_err<double>(x.data, grads.input.data, loss) < 1e-6);
    CHECK(max_grad_rel_err<double>(w.data, grads.weight.data, loss) < 1e-6);
    CHECK(max_grad_rel_err<double>(bias, grads.bias, loss) < 1e-6);
}

TEST_CASE("softmax_cross_entropy: uniform logits give 1/3 probabilities and ln 3 loss") {
    D logits(2, 3, 1, 1, 0.7);
    auto res = ops::softmax_cross_entropy(logits, {0, 2});
    for (double p : res.probs.data) CHECK(p == doctest::Approx(1.0 / 3.0));
    CHECK(res.loss == doctest::Approx(std::log(3.0)));
}

TEST_CASE("softmax_cross_entropy: saturated true logit gives ~zero loss and grads") {
    D logits(1, 3, 1, 1, 0.0);
    logits.at(0, 0, 0, 0) = 1000.0;
    auto res = ops::softmax_cross_entropy(logits, {0});
    CHECK(res.loss < 1e-12);
    auto g = ops::softmax_cross_entropy_backward(res.probs, {0});
    for (double v : g.data) CHECK(std::abs(v) < 1e-12);
    CHECK(res.probs.all_finite());
}

TEST_CASE("softmax_cross_entropy: rows sum to one, loss non-negative, grads match FD") {
    std::mt19937_64 rng(71);
    D logits(4, 3, 1, 1);
    fill_uniform(logits, rng, -3.0, 3.0);
    std::vector<int> labels{0, 1, 2, 1};
    auto res = ops::softmax_cross_entropy(logits, labels);
    CHECK(res.loss >= 0.0);
    for (int n = 0; n < 4; ++n) {
        double row = 0.0;
        for (int k = 0; k < 3; ++k) row += res.probs.at(n, k, 0, 0);
        CHECK(std::abs(row - 1.0) < 1e-9);
    }
    auto analytic = ops::softmax_cross_entropy_backward(res.probs, labels);
    auto loss = [&] {
        return static_cast<double>(ops::softmax_cross_entropy(logits, labels).loss);
    };
    CHECK(max_grad_rel_err<double>(logits.data, analytic.data, loss) < 1e-6);
}

TEST_CASE("softmax_cross_entropy: out-of-range label is rejected") {
    D logits(1, 3, 1, 1, 0.0);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {3}), DomainError);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(logits, {-1}), DomainError);
}

TEST_CASE("operators keep finite inputs finite at extreme magnitudes") {
    std::mt19937_64 rng(81);
    for (int it = 0; it < 20; ++it) {
        std::uniform_real_distribution<double> mag(1.0, 1e6);
        const double scale = mag(rng);
        D x(2, 4, 6, 6);
        fill_uniform(x, rng, -scale, scale);
        D w(4, 2, 3, 3);
        fill_uniform(w, rng, -1.0, 1.0);
        auto conv = ops::conv2d_forward(x, w, static_cast<const std::vector<double>*>(nullptr), 1, 1, 2);
        CHECK(conv.all_finite());
        CHECK(ops::relu(x).all_finite());
        CHECK(ops::channel_shuffle(x, 2).all_finite());
        CHECK(ops::global_avg_pool(x).all_finite());
        CHECK(ops::max_pool_forward(x, 2, 2).output.all_finite());

        std::vector<double> gamma(4, 1.0), beta(4, 0.0), rm(4, 0.0), rv(4, 1.0);
        auto bn = ops::batch_norm_forward(x, gamma, beta, rm, rv, ops::BnMode::Train, 0.1, 1e-5,
                                          static_cast<ops::BnCache<double>*>(nullptr));
        CHECK(bn.all_finite());

        D logits(2, 3, 1, 1);
        fill_uniform(logits, rng, -scale, scale);
        auto ce = ops::softmax_cross_entropy(logits, {0, 1});
        CHECK(std::isfinite(ce.loss));
        CHECK(ce.probs.all_finite());
    }
}
