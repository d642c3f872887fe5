#pragma once

// Unsupervised stereo losses: occlusion-aware photometric reconstruction,
// edge-aware smoothness and the augmentation-consistency term.
//
// Images are N x 3 x H x W, disparities and occlusion maps N x 1 x H x W.

#include "cot/tensor.hpp"

namespace cot {

struct LossWeights {
    double alpha = 0.85;   // SSIM share of the photometric error
    // Larger weights (0.1 / 0.5) let the smoothness and augmentation terms
    // dominate early training on the synthetic scenes and the disparity
    // collapses to a constant.
    double lambda1 = 0.01;  // smoothness
    double lambda2 = 0.01;  // augmentation consistency
};

// Throws InvalidConfig.
void validate(const LossWeights& w);

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// A normalized loss term. When every weight is zero the term is skipped:
// value is a constant 0 and empty_normalizer is set (the EmptyNormalizer
// condition, reported instead of thrown).
template <typename T>
struct LossTerm {
    Tensor<T> value;
    bool empty_normalizer = false;
};

// Per-pixel, per-channel SSIM with 3x3 box statistics (replicate border).
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b);

// e(p) = alpha (1 - mean_c SSIM) / 2 + (1 - alpha) mean_c |I_l - I_r(x - d)|,
// averaged with weights stop_gradient(1 - o) over pixels whose warp sample is
// inside the right view. `o` should already be thresholded.
template <typename T>
LossTerm<T> photometric_loss(const Tensor<T>& i_left, const Tensor<T>& i_right, const Tensor<T>& d,
                             const Tensor<T>& o, double alpha);

// sum_p |dD/dx| exp(-mean_c |dI/dx|) + |dD/dy| exp(-mean_c |dI/dy|), divided by
// the pixel count. Forward differences; the last column/row contributes 0.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& i_left, const Tensor<T>& d);

// x^2 / 2 below 1, x - 0.5 from 1 on. Throws NegativeInput for x < 0.
double smooth_l1(double x);

// Elementwise version for x >= 0.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x);

// sum_p l(|sg(teacher) - student|) sg(o_tilde) / sum_p sg(o_tilde).
template <typename T>
LossTerm<T> data_augmentation_loss(const Tensor<T>& d_teacher, const Tensor<T>& d_student, const Tensor<T>& o_tilde);

// Inputs of the augmentation term, all in the augmented frame.
template <typename T>
struct AugmentedTerms {
    Tensor<T> d_teacher;  // transformed prediction on the original pair
    Tensor<T> d_student;  // prediction on the augmented pair
    Tensor<T> o_tilde;    // confidence weights from the other network
};

template <typename T>
struct LossBreakdown {
    Tensor<T> ph, sm, da, total;
    bool ph_skipped = false;
    bool da_skipped = false;
};

// total = ph + lambda1 sm + lambda2 da. `o_other` is the other network's
// thresholded occlusion map; pass aug = nullptr to leave the da term at 0.
template <typename T>
LossBreakdown<T> hybrid_loss(const Tensor<T>& i_left, const Tensor<T>& i_right, const Tensor<T>& d,
                             const Tensor<T>& o_other, const AugmentedTerms<T>* aug, const LossWeights& weights);

}  // namespace cot
