#pragma once

#include "cipl/image.hpp"
#include "cipl/rng.hpp"

namespace cipl {

struct Box {
    int x = 0, y = 0, w = 0, h = 0;
};

// Shared location-oriented transform (step 1): both views of an image get
// the same draw, so their content stays spatially aligned.
struct Step1Params {
    double scale = 1.0;      // [0.9, 1.1]
    double shear_deg = 0.0;  // |.| <= 5
    double rot_deg = 0.0;    // |.| <= 10
    double tx = 0.0;         // translation, fraction of extent, |.| <= 0.05
    double ty = 0.0;
    bool hflip = false;
};

// Per-view colour jitter plus a mild crop (step 2).
struct Step2Params {
    double contrast = 1.0;    // [0.8, 1.2]
    double brightness = 1.0;  // [0.8, 1.2]
    double sharpness = 0.0;   // [-0.2, 0.2]
    double hue = 0.0;         // [-0.05, 0.05] of the hue circle, 3-channel only
    double crop_area = 1.0;   // [0.95, 1.0]
    double crop_aspect = 1.0; // [0.95, 1.05]
    double crop_fx = 0.0;     // top-left position as fraction of slack
    double crop_fy = 0.0;
};

Step1Params draw_step1(Rng& rng);
Step2Params draw_step2(Rng& rng);

Image apply_step1(const Image& img, const Step1Params& p);
Image apply_step2(const Image& img, const Step2Params& p);

// Box endpoints pushed through the same affine map, then clipped.
Box transform_box(const Box& b, const Step1Params& p, int height, int width);

struct TwoViews {
    Image view1;
    Image view2;
    Step1Params step1;
    Step2Params step2_view1;
    Step2Params step2_view2;
};

// Step 1 once, step 2 independently per view.
TwoViews two_view_augment(const Image& img, Rng& rng);

// Step 1 + a single step 2 (the non-view pair member x_a).
Image augment_single(const Image& img, Rng& rng);

}  // namespace cipl
