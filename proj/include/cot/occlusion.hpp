#pragma once

// Occlusion probability maps (1 = occluded) from left-right consistency, and
// the dynamic-threshold omission rule used during co-teaching.

#include <filesystem>

#include "cot/tensor.hpp"

namespace cot {

struct OcclusionParams {
    double gamma1 = 0.1;  // relative tolerance
    double gamma2 = 1.0;  // absolute tolerance (px)
};

// O(p) = clamp(|Dl(p) - Dr^(p)| / (gamma1 (Dl(p) + Dr^(p)) + gamma2), 0, 1),
// Dr^ = right disparity sampled at x - Dl(p). Out-of-view samples get O = 1.
// Inputs are N x 1 x H x W; the result never requires grad.
template <typename T>
Tensor<T> estimate_occlusion(const Tensor<T>& d_left, const Tensor<T>& d_right, const OcclusionParams& params = {});

// Values strictly greater than r become 1, others are kept. Throws
// ThresholdOutOfRange unless 0 <= r <= 1.
template <typename T>
Tensor<T> apply_dynamic_threshold(const Tensor<T>& o, double r);

// 8-bit grayscale PNG of sample n, value round(255 O).
void write_occlusion_png(const std::filesystem::path& path, const Tensor<float>& o, int n = 0);

}  // namespace cot
