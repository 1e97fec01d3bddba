#include "cipl/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "cipl/error.hpp"

namespace cipl {

void write_image(const Image& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("image write supports 1 or 3 channels, got " + std::to_string(img.channels));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
                row[static_cast<size_t>(x) * img.channels + c] =
                    static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("short write to " + path);
}

namespace {

// Skips whitespace and '#' comments between header tokens.
std::string next_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (!std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            while ((ch = in.get()) != EOF && !std::isspace(static_cast<unsigned char>(ch)))
                tok.push_back(static_cast<char>(ch));
            break;
        }
    }
    return tok;
}

}  // namespace

Image read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const std::string magic = next_token(f);
    int channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw IoError(path + ": not a binary PGM/PPM file (magic '" + magic + "')");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token(f));
        h = std::stoi(next_token(f));
        maxval = std::stoi(next_token(f));
    } catch (const std::exception&) {
        throw IoError(path + ": malformed header");
    }
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path + ": unsupported header");
    Image img(h, w, channels);
    std::vector<std::uint8_t> raw(static_cast<size_t>(w) * h * channels);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError(path + ": truncated pixel data");
    for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
    return img;
}

}  // namespace cipl
