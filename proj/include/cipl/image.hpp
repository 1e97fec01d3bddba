#pragma once

#include <string>
#include <vector>

namespace cipl {

// Planar pixel grid, row-major H*W*ch, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int ch) : height(h), width(w), channels(ch) {
        pixels.assign(static_cast<size_t>(h) * w * ch, 0.0f);
    }

    float& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

// Binary PGM (P5) for single-channel, PPM (P6) for three-channel; 8-bit.
void write_image(const Image& img, const std::string& path);
Image read_image(const std::string& path);

}  // namespace cipl
