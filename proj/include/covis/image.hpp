#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covis/common.hpp"

namespace covis {

// Grayscale image, values in [0,1], row-major.
struct Image {
    std::int64_t w = 0, h = 0;
    std::vector<double> pix;

    static Image blank(std::int64_t w, std::int64_t h);
    double& at(std::int64_t y, std::int64_t x) { return pix[static_cast<std::size_t>(y * w + x)]; }
    double at(std::int64_t y, std::int64_t x) const {
        return pix[static_cast<std::size_t>(y * w + x)];
    }
};

// 8-bit RGB image for overlays.
struct RgbImage {
    std::int64_t w = 0, h = 0;
    std::vector<std::uint8_t> data;  // 3 bytes per pixel

    static RgbImage blank(std::int64_t w, std::int64_t h);
    void set(std::int64_t y, std::int64_t x, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// Depth in meters, 0 = invalid.
struct DepthMap {
    std::int64_t w = 0, h = 0;
    std::vector<double> depth;

    double at(std::int64_t y, std::int64_t x) const {
        return depth[static_cast<std::size_t>(y * w + x)];
    }
};

// Binary PGM (P5) / PPM (P6), 8-bit, maxval 255. Gray values are scaled by
// 1/255; PPM channels are averaged to gray.
Image load_image(const std::string& path);
void save_pgm(const std::string& path, const Image& img);
void save_ppm(const std::string& path, const RgbImage& img);

// 16-bit big-endian PGM with the integer depth scale declared in a header
// comment ("# depth-scale N"); stored value = meters * N.
DepthMap load_depth(const std::string& path);
void save_depth(const std::string& path, const DepthMap& d, std::int64_t scale);

struct Match {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0, conf = 0;
};

struct MatchFile {
    std::int64_t w = 0, h = 0;
    std::vector<Match> matches;
};

// Text format: header "dims W H", then one "x1 y1 x2 y2 confidence" per line
// at 6 decimal places.
void save_matches(const std::string& path, const MatchFile& mf);
MatchFile load_matches(const std::string& path);

}  // namespace covis
