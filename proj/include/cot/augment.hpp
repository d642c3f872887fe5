#pragma once

// Spatial, occlusion and appearance transforms of a stereo pair together
// with the matching transforms of the teacher disparity and occlusion maps.
//
// Spatial: a crop followed by a horizontal rescale by s. Output pixel x_o
// samples the source at  crop_x + (x_o + 0.5) / s - 0.5  (linear
// interpolation, border clamped); rows are copied from crop_y on. Disparities
// scale by s.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cot/tensor.hpp"

namespace cot {

struct OcclusionRect {
    int x = 0, y = 0, width = 0, height = 0;  // output coordinates of the right view
    std::array<float, 3> fill{0.5f, 0.5f, 0.5f};
};

struct AugmentationSpec {
    double crop_x = 0;
    int crop_y = 0;
    int out_width = 0;
    int out_height = 0;
    double scale = 1.0;
    std::vector<OcclusionRect> rects;
    double brightness = 0.0;
    double contrast = 1.0;
    std::array<double, 3> gamma{1.0, 1.0, 1.0};
    std::uint64_t rng_seed = 0;
};

// Full frame, s = 1, no rectangles, neutral appearance.
AugmentationSpec identity_spec(int height, int width);

struct AugmentBounds {
    int width = 0;
    int height = 0;
    double min_crop_fraction = 0.75;
    double min_scale = 0.8;
    double max_scale = 1.2;
    int max_rects = 2;
    int min_rect_size = 6;
    int max_rect_size = 20;
    double max_brightness = 0.08;
    double min_contrast = 0.85;
    double max_contrast = 1.15;
    double min_gamma = 0.85;
    double max_gamma = 1.15;
};

// Draws a spec from a fresh generator seeded by rng(); always valid for the
// bounds' image size.
AugmentationSpec sample_spec(std::mt19937_64& rng, const AugmentBounds& bounds);

// Throws DegenerateCrop when the output is smaller than 8 px or not a
// multiple of 4 in either direction, InvalidSpec for other violations.
void validate(const AugmentationSpec& spec, int height, int width);

// One-line key=value rendering for run logs.
std::string describe(const AugmentationSpec& spec);

template <typename T>
struct AugmentedSample {
    Tensor<T> i_left;     // N x 3 x h x w
    Tensor<T> i_right;
    Tensor<T> d_teacher;  // N x 1 x h x w, values scaled by s
    Tensor<T> o_tilde;    // N x 1 x h x w in [0, 1]
    Tensor<T> footprint;  // 1 where the teacher match lands in an injected rectangle
};

// o_tilde = max(1 - O_t, footprint), set to 0 where O_t > 0.5, with O_t the
// spatially transformed teacher occlusion. Outputs never require grad.
template <typename T>
AugmentedSample<T> apply(const AugmentationSpec& spec, const Tensor<T>& i_left, const Tensor<T>& i_right,
                         const Tensor<T>& d, const Tensor<T>& o);

// Spatial transform alone (values unscaled); used for images and maps.
template <typename T>
Tensor<T> resample(const AugmentationSpec& spec, const Tensor<T>& x);

}  // namespace cot
