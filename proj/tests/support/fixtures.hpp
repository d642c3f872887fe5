#pragma once

// Random inputs shared by the gradient checks.

#include <cmath>
#include <random>

#include "support/gradcheck.hpp"

namespace cot::testing {

// Values kept away from 0 so abs/min/max kinks stay outside the FD stencil.
inline Tensor<double> away_from_zero(std::mt19937_64& rng, Shape shape) {
    auto t = random_tensor(rng, std::move(shape), 0.1, 1.0);
    std::bernoulli_distribution flip(0.5);
    for (auto& v : t.mutable_values())
        if (flip(rng)) v = -v;
    return t;
}

// Smooth random image: a few sinusoids keep SSIM away from its degenerate flat regime.
inline Tensor<double> smooth_image(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(3 * h * w);
    for (int c = 0; c < 3; ++c) {
        const double fx = 0.3 + u(rng), fy = 0.2 + u(rng), ph = 6.0 * u(rng);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                v[(c * h + y) * w + x] = 0.5 + 0.3 * std::sin(fx * x + ph) * std::cos(fy * y) + 0.1 * u(rng);
    }
    return Tensor<double>::from({1, 3, h, w}, std::move(v));
}

// Finite differences are meaningless across the |.| kink of the L1 term and
// across integer sample positions of the bilinear warp; instances that land
// that close to either are redrawn.
inline bool near_kink(const Tensor<double>& l, const Tensor<double>& r, const Tensor<double>& d) {
    NoGradGuard no_grad;
    auto warped = warp_horizontal(r, d).output;
    for (std::size_t i = 0; i < l.numel(); ++i)
        if (std::abs(l.at(i) - warped.at(i)) < 1e-3) return true;
    const int w = d.dim(3);
    for (std::size_t i = 0; i < d.numel(); ++i) {
        const double xs = static_cast<double>(i % w) - d.at(i);
        if (std::abs(xs - std::round(xs)) < 1e-3) return true;
    }
    return false;
}

}  // namespace cot::testing
