#include "cipl/augment.hpp"

#include <algorithm>
#include <cmath>

namespace cipl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Mirror a continuous coordinate into [0, n-1].
double reflect(double v, int n) {
    if (n == 1) return 0.0;
    const double period = 2.0 * (n - 1);
    v = std::fmod(v, period);
    if (v < 0) v += period;
    return v > n - 1 ? period - v : v;
}

float sample_bilinear(const Image& img, double y, double x, int c) {
    y = reflect(y, img.height);
    x = reflect(x, img.width);
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const double fy = y - y0, fx = x - x0;
    const double v00 = img.at(y0, x0, c), v01 = img.at(y0, x1, c);
    const double v10 = img.at(y1, x0, c), v11 = img.at(y1, x1, c);
    return static_cast<float>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                              (v10 * (1 - fx) + v11 * fx) * fy);
}

struct Affine {
    // dest = L * (src - center) + center + t
    double a = 1, b = 0, c = 0, d = 1;  // L
    double tx = 0, ty = 0;
    double cx = 0, cy = 0;

    void apply(double sx, double sy, double& dx, double& dy) const {
        dx = a * (sx - cx) + b * (sy - cy) + cx + tx;
        dy = c * (sx - cx) + d * (sy - cy) + cy + ty;
    }

    void apply_inverse(double dx, double dy, double& sx, double& sy) const {
        const double det = a * d - b * c;
        const double ux = dx - cx - tx, uy = dy - cy - ty;
        sx = (d * ux - b * uy) / det + cx;
        sy = (-c * ux + a * uy) / det + cy;
    }
};

Affine make_affine(const Step1Params& p, int height, int width) {
    Affine m;
    m.cx = (width - 1) / 2.0;
    m.cy = (height - 1) / 2.0;
    const double th = p.rot_deg * kPi / 180.0;
    const double sh = std::tan(p.shear_deg * kPi / 180.0);
    const double fs = p.hflip ? -1.0 : 1.0;
    // L = R(th) * Shear(sh) * Scale * Flip
    const double r00 = std::cos(th), r01 = -std::sin(th);
    const double r10 = std::sin(th), r11 = std::cos(th);
    const double s00 = p.scale * fs, s01 = sh * p.scale;
    const double s11 = p.scale;
    m.a = r00 * s00;
    m.b = r00 * s01 + r01 * s11;
    m.c = r10 * s00;
    m.d = r10 * s01 + r11 * s11;
    m.tx = p.tx * width;
    m.ty = p.ty * height;
    return m;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    Image out(out_h, out_w, src.channels);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const double srcy = (y + 0.5) * sy - 0.5;
            const double srcx = (x + 0.5) * sx - 0.5;
            for (int c = 0; c < src.channels; ++c)
                out.at(y, x, c) = sample_bilinear(src, srcy, srcx, c);
        }
    return out;
}

Image box_blur3(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float acc = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, img.height - 1);
                        const int xx = std::clamp(x + dx, 0, img.width - 1);
                        acc += img.at(yy, xx, c);
                    }
                out.at(y, x, c) = acc / 9.0f;
            }
    return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    const float d = mx - mn;
    s = mx > 0 ? d / mx : 0;
    if (d <= 0) {
        h = 0;
        return;
    }
    if (mx == r)
        h = std::fmod((g - b) / d, 6.0f);
    else if (mx == g)
        h = (b - r) / d + 2.0f;
    else
        h = (r - g) / d + 4.0f;
    h /= 6.0f;
    if (h < 0) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float hh = std::fmod(h, 1.0f) * 6.0f;
    const int i = static_cast<int>(hh) % 6;
    const float f = hh - std::floor(hh);
    const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace

Step1Params draw_step1(Rng& rng) {
    Step1Params p;
    p.scale = rng.uniform(0.9, 1.1);
    p.shear_deg = rng.uniform(-5.0, 5.0);
    p.rot_deg = rng.uniform(-10.0, 10.0);
    p.tx = rng.uniform(-0.05, 0.05);
    p.ty = rng.uniform(-0.05, 0.05);
    p.hflip = rng.bernoulli(0.5);
    return p;
}

Step2Params draw_step2(Rng& rng) {
    Step2Params p;
    p.contrast = rng.uniform(0.8, 1.2);
    p.brightness = rng.uniform(0.8, 1.2);
    p.sharpness = rng.uniform(-0.2, 0.2);
    p.hue = rng.uniform(-0.05, 0.05);
    p.crop_area = rng.uniform(0.95, 1.0);
    p.crop_aspect = rng.uniform(0.95, 1.05);
    p.crop_fx = rng.uniform();
    p.crop_fy = rng.uniform();
    return p;
}

Image apply_step1(const Image& img, const Step1Params& p) {
    const Affine m = make_affine(p, img.height, img.width);
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double sx, sy;
            m.apply_inverse(x, y, sx, sy);
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = sample_bilinear(img, sy, sx, c);
        }
    return out;
}

Box transform_box(const Box& b, const Step1Params& p, int height, int width) {
    const Affine m = make_affine(p, height, width);
    double xs[4] = {double(b.x), double(b.x + b.w), double(b.x), double(b.x + b.w)};
    double ys[4] = {double(b.y), double(b.y), double(b.y + b.h), double(b.y + b.h)};
    double minx = 1e30, miny = 1e30, maxx = -1e30, maxy = -1e30;
    for (int i = 0; i < 4; ++i) {
        double dx, dy;
        m.apply(xs[i], ys[i], dx, dy);
        minx = std::min(minx, dx);
        maxx = std::max(maxx, dx);
        miny = std::min(miny, dy);
        maxy = std::max(maxy, dy);
    }
    Box out;
    out.x = std::clamp(static_cast<int>(std::lround(minx)), 0, width - 1);
    out.y = std::clamp(static_cast<int>(std::lround(miny)), 0, height - 1);
    out.w = std::clamp(static_cast<int>(std::lround(maxx)) - out.x, 1, width - out.x);
    out.h = std::clamp(static_cast<int>(std::lround(maxy)) - out.y, 1, height - out.y);
    return out;
}

Image apply_step2(const Image& img, const Step2Params& p) {
    Image out = img;
    // contrast about the per-channel mean, then brightness
    for (int c = 0; c < img.channels; ++c) {
        double mean = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) mean += img.at(y, x, c);
        mean /= static_cast<double>(img.height) * img.width;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double v = mean + (img.at(y, x, c) - mean) * p.contrast;
                out.at(y, x, c) = static_cast<float>(v * p.brightness);
            }
    }
    if (p.sharpness != 0.0) {
        const Image blurred = box_blur3(out);
        for (size_t i = 0; i < out.pixels.size(); ++i)
            out.pixels[i] += static_cast<float>(p.sharpness) * (out.pixels[i] - blurred.pixels[i]);
    }
    if (p.hue != 0.0 && img.channels == 3) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                float h, s, v;
                rgb_to_hsv(out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2), h, s, v);
                h = std::fmod(h + static_cast<float>(p.hue) + 1.0f, 1.0f);
                hsv_to_rgb(h, s, v, out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2));
            }
    }
    for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);

    const int W = img.width, H = img.height;
    int cw = static_cast<int>(std::lround(W * std::sqrt(p.crop_area * p.crop_aspect)));
    int ch = static_cast<int>(std::lround(H * std::sqrt(p.crop_area / p.crop_aspect)));
    cw = std::clamp(cw, 1, W);
    ch = std::clamp(ch, 1, H);
    const int x0 = static_cast<int>(std::floor(p.crop_fx * (W - cw)));
    const int y0 = static_cast<int>(std::floor(p.crop_fy * (H - ch)));
    if (cw == W && ch == H) return out;
    Image crop(ch, cw, img.channels);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < img.channels; ++c) crop.at(y, x, c) = out.at(y0 + y, x0 + x, c);
    return resize_bilinear(crop, H, W);
}

TwoViews two_view_augment(const Image& img, Rng& rng) {
    TwoViews tv;
    tv.step1 = draw_step1(rng);
    tv.step2_view1 = draw_step2(rng);
    tv.step2_view2 = draw_step2(rng);
    const Image base = apply_step1(img, tv.step1);
    tv.view1 = apply_step2(base, tv.step2_view1);
    tv.view2 = apply_step2(base, tv.step2_view2);
    return tv;
}

Image augment_single(const Image& img, Rng& rng) {
    const Step1Params s1 = draw_step1(rng);
    const Step2Params s2 = draw_step2(rng);
    return apply_step2(apply_step1(img, s1), s2);
}

}  // namespace cipl
