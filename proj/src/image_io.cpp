#include "cass/image_io.hpp"

#include <cctype>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace cass {

namespace {

// Skips whitespace and '#' comment lines between PGM header tokens.
int next_pgm_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError(path + ": malformed PGM header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

}  // namespace

ImageU8 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[2];
    if (!in.read(magic, 2) || magic[0] != 'P' || magic[1] != '5') {
        throw FormatError(path + ": not a binary PGM (P5) file");
    }
    ImageU8 img;
    img.w = next_pgm_token(in, path);
    img.h = next_pgm_token(in, path);
    const int maxval = next_pgm_token(in, path);
    if (img.w <= 0 || img.h <= 0 || maxval != 255) {
        throw FormatError(path + ": unsupported PGM geometry or maxval");
    }
    img.px.resize(static_cast<std::size_t>(img.w) * img.h);
    if (!in.read(reinterpret_cast<char*>(img.px.data()),
                 static_cast<std::streamsize>(img.px.size()))) {
        throw FormatError(path + ": truncated PGM pixel data");
    }
    return img;
}

void write_pgm(const ImageU8& img, const std::string& path) {
    if (img.w <= 0 || img.h <= 0 ||
        img.px.size() != static_cast<std::size_t>(img.w) * img.h) {
        throw DimensionError("write_pgm: inconsistent image dimensions");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.px.data()),
              static_cast<std::streamsize>(img.px.size()));
    if (!out) throw FormatError("short write to " + path);
}

namespace {

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> head;
    put_be32(head, static_cast<std::uint32_t>(data.size()));
    out.write(reinterpret_cast<const char*>(head.data()), 4);
    out.write(type, 4);
    if (!data.empty()) {
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
    }
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const unsigned char*>(type), 4));
    if (!data.empty()) {
        crc = static_cast<std::uint32_t>(crc32(crc, data.data(), static_cast<uInt>(data.size())));
    }
    std::vector<std::uint8_t> tail;
    put_be32(tail, crc);
    out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png_rgb(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb) {
    if (h <= 0 || w <= 0 || rgb.size() != static_cast<std::size_t>(h) * w * 3) {
        throw DimensionError("write_png_rgb: buffer does not match " + std::to_string(h) + "x" +
                             std::to_string(w) + " RGB");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");

    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(w));
    put_be32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    write_chunk(out, "IHDR", ihdr);

    // filter byte 0 in front of each scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(h) * (static_cast<std::size_t>(w) * 3 + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);
        const std::uint8_t* row = rgb.data() + static_cast<std::size_t>(y) * w * 3;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(w) * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw FormatError("png deflate failed for " + path);
    }
    comp.resize(comp_len);
    write_chunk(out, "IDAT", comp);
    write_chunk(out, "IEND", {});
    if (!out) throw FormatError("short write to " + path);
}

}  // namespace cass
