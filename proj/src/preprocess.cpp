#include "cass/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "cass/common.hpp"

namespace cass {

namespace {

constexpr int kNeighbors8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                   {0, 1},   {1, -1}, {1, 0},  {1, 1}};

}  // namespace

std::vector<std::uint8_t> detect_text_mask(const ImageU8& img, double threshold_quantile) {
    if (img.px.empty()) throw DimensionError("detect_text_mask: empty image");
    if (threshold_quantile <= 0.0 || threshold_quantile > 1.0) {
        throw DomainError("detect_text_mask: quantile must be in (0,1]");
    }
    const std::size_t n = img.px.size();
    std::vector<std::uint8_t> mask(n, 0);

    const auto [mn, mx] = std::minmax_element(img.px.begin(), img.px.end());
    if (*mn == *mx) return mask;  // constant image: nothing to remove

    const double threshold = threshold_quantile * 255.0;
    std::vector<std::uint8_t> candidate(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<double>(img.px[i]) >= threshold) candidate[i] = 1;
    }

    // keep 8-connected components of size >= 2
    std::vector<std::uint8_t> seen(n, 0);
    std::vector<std::size_t> component;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const std::size_t start = static_cast<std::size_t>(y) * img.w + x;
            if (!candidate[start] || seen[start]) continue;
            component.clear();
            std::deque<std::pair<int, int>> queue{{y, x}};
            seen[start] = 1;
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                component.push_back(static_cast<std::size_t>(cy) * img.w + cx);
                for (const auto& d : kNeighbors8) {
                    const int ny = cy + d[0], nx = cx + d[1];
                    if (ny < 0 || ny >= img.h || nx < 0 || nx >= img.w) continue;
                    const std::size_t ni = static_cast<std::size_t>(ny) * img.w + nx;
                    if (candidate[ni] && !seen[ni]) {
                        seen[ni] = 1;
                        queue.emplace_back(ny, nx);
                    }
                }
            }
            if (component.size() >= 2) {
                for (std::size_t i : component) mask[i] = 1;
            }
        }
    }
    return mask;
}

CleanImage inpaint_neighbors(const RawMprImage& img, const std::vector<std::uint8_t>& mask) {
    const int h = img.pixels.h, w = img.pixels.w;
    if (mask.size() != img.pixels.px.size()) {
        throw DimensionError("inpaint_neighbors: mask size " + std::to_string(mask.size()) +
                             " != image size " + std::to_string(img.pixels.px.size()));
    }
    const std::size_t masked =
        static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    if (masked == mask.size()) {
        throw InpaintError("inpaint_neighbors: fully masked image has no source pixels");
    }

    std::vector<double> work(img.pixels.px.size());
    for (std::size_t i = 0; i < work.size(); ++i) work[i] = static_cast<double>(img.pixels.px[i]);

    if (masked > 0) {
        std::vector<std::uint8_t> known(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) known[i] = mask[i] ? 0 : 1;
        std::vector<std::uint8_t> queued(mask.size(), 0);
        std::deque<std::pair<int, int>> queue;

        // seed with the mask boundary in row-major order
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (!mask[i]) continue;
                for (const auto& d : kNeighbors8) {
                    const int ny = y + d[0], nx = x + d[1];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (known[static_cast<std::size_t>(ny) * w + nx]) {
                        queue.emplace_back(y, x);
                        queued[i] = 1;
                        break;
                    }
                }
            }
        }
        while (!queue.empty()) {
            auto [y, x] = queue.front();
            queue.pop_front();
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            double sum = 0.0;
            int count = 0;
            for (const auto& d : kNeighbors8) {
                const int ny = y + d[0], nx = x + d[1];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                if (known[ni]) {
                    sum += work[ni];
                    ++count;
                }
            }
            work[i] = sum / count;  // BFS order guarantees count >= 1
            known[i] = 1;
            for (const auto& d : kNeighbors8) {
                const int ny = y + d[0], nx = x + d[1];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                if (!known[ni] && !queued[ni]) {
                    queued[ni] = 1;
                    queue.emplace_back(ny, nx);
                }
            }
        }
    }

    CleanImage out;
    out.h = h;
    out.w = w;
    out.view_index = img.view_index;
    out.branch_id = img.branch_id;
    out.patient_id = img.patient_id;
    out.px.resize(work.size());
    for (std::size_t i = 0; i < work.size(); ++i) {
        if (mask[i]) {
            out.px[i] = static_cast<float>(work[i] / 255.0);
        } else {
            out.px[i] = static_cast<float>(img.pixels.px[i]) / 255.0f;
        }
    }
    return out;
}

CleanImage preprocess(const RawMprImage& img, double threshold_quantile) {
    const auto mask = detect_text_mask(img.pixels, threshold_quantile);
    return inpaint_neighbors(img, mask);
}

ImageU8 requantize(const CleanImage& img) {
    ImageU8 out;
    out.h = img.h;
    out.w = img.w;
    out.px.resize(img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        const double v = std::clamp(static_cast<double>(img.px[i]), 0.0, 1.0);
        out.px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

Tensor to_tensor(const CleanImage& img) {
    Tensor t(1, 1, img.h, img.w);
    std::copy(img.px.begin(), img.px.end(), t.data.begin());
    return t;
}

}  // namespace cass
