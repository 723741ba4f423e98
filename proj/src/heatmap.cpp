#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cass/attribution.hpp"
#include "cass/common.hpp"

namespace cass {

Heatmap render_heatmap(const AttributionMap& map, const CleanImage& underlay) {
    if (map.h != underlay.h || map.w != underlay.w) {
        throw DimensionError("render_heatmap: map " + std::to_string(map.h) + "x" +
                             std::to_string(map.w) + " does not match underlay " +
                             std::to_string(underlay.h) + "x" + std::to_string(underlay.w));
    }
    Heatmap out;
    out.h = map.h;
    out.w = map.w;
    out.rgb.resize(static_cast<std::size_t>(map.h) * map.w * 3);

    std::vector<float> mags(map.values.size());
    for (std::size_t i = 0; i < map.values.size(); ++i) mags[i] = std::abs(map.values[i]);
    const float peak = *std::max_element(mags.begin(), mags.end());

    if (peak <= 0.0f) {
        out.all_zero = true;
        log_info("render_heatmap: all-zero attribution map, emitting the plain underlay");
        for (std::size_t i = 0; i < map.values.size(); ++i) {
            const auto g = static_cast<std::uint8_t>(
                std::lround(std::clamp(underlay.px[i], 0.0f, 1.0f) * 255.0f));
            out.rgb[i * 3 + 0] = g;
            out.rgb[i * 3 + 1] = g;
            out.rgb[i * 3 + 2] = g;
        }
        return out;
    }

    // 99th-percentile magnitude, falling back to the peak for sparse maps
    std::vector<float> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    float norm = sorted[static_cast<std::size_t>(0.99 * (static_cast<double>(sorted.size()) - 1))];
    if (norm <= 0.0f) norm = peak;

    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = std::min(1.0, static_cast<double>(mags[i]) / norm);
        const double g = std::clamp(static_cast<double>(underlay.px[i]), 0.0, 1.0) * 255.0;
        const double keep = 1.0 - 0.5 * v;
        out.rgb[i * 3 + 0] = static_cast<std::uint8_t>(std::lround(keep * g + 0.5 * v * 255.0));
        out.rgb[i * 3 + 1] = static_cast<std::uint8_t>(std::lround(keep * g));
        out.rgb[i * 3 + 2] = static_cast<std::uint8_t>(std::lround(keep * g));
    }
    return out;
}

namespace {
constexpr char kAttrMagic[8] = {'C', 'A', 'S', 'S', 'I', 'G', '1', '\0'};
}

void write_attribution_binary(const AttributionMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(kAttrMagic, 8);
    const std::uint32_t h = static_cast<std::uint32_t>(map.h);
    const std::uint32_t w = static_cast<std::uint32_t>(map.w);
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(map.values.data()),
              static_cast<std::streamsize>(map.values.size() * sizeof(float)));
    if (!out) throw FormatError("short write to " + path);
}

AttributionMap read_attribution_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kAttrMagic, 8) != 0) {
        throw FormatError(path + ": not an attribution map file");
    }
    std::uint32_t h = 0, w = 0;
    if (!in.read(reinterpret_cast<char*>(&h), 4) || !in.read(reinterpret_cast<char*>(&w), 4)) {
        throw FormatError(path + ": truncated header");
    }
    AttributionMap map;
    map.h = static_cast<int>(h);
    map.w = static_cast<int>(w);
    map.values.resize(static_cast<std::size_t>(h) * w);
    if (!in.read(reinterpret_cast<char*>(map.values.data()),
                 static_cast<std::streamsize>(map.values.size() * sizeof(float)))) {
        throw FormatError(path + ": truncated values");
    }
    return map;
}

}  // namespace cass
