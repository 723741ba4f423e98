#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cass/image_io.hpp"
#include "cass/tensor.hpp"

namespace cass {

// One raw view of a branch, as produced by the generator or read from disk.
struct RawMprImage {
    ImageU8 pixels;
    int view_index = 0;
    std::string branch_id;
    std::string patient_id;
};

// Cleaned image in [0,1] with its provenance kept for the prediction records.
struct CleanImage {
    int h = 0;
    int w = 0;
    std::vector<float> px;
    int view_index = 0;
    std::string branch_id;
    std::string patient_id;

    float at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

// Burned-in text sits at the top of the intensity scale. The mask marks
// 8-connected components of pixels at or above threshold_quantile of the
// 8-bit range; lone pixels (components smaller than 2) are treated as noise.
// A constant image yields an empty mask.
std::vector<std::uint8_t> detect_text_mask(const ImageU8& img, double threshold_quantile = 0.999);

// Replaces each masked pixel with the mean of its already-known 8-neighbors,
// flood-filling inward from the mask boundary, then rescales into [0,1].
// Unmasked pixels pass through untouched (up to the final /255).
CleanImage inpaint_neighbors(const RawMprImage& img, const std::vector<std::uint8_t>& mask);

// detect_text_mask then inpaint_neighbors; a pure /255 rescale when nothing
// is detected.
CleanImage preprocess(const RawMprImage& img, double threshold_quantile = 0.999);

ImageU8 requantize(const CleanImage& img);
Tensor to_tensor(const CleanImage& img);

}  // namespace cass
