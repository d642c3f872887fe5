#include "cot/losses.hpp"

#include <cmath>

#include "cot/ops.hpp"

namespace cot {

void validate(const LossWeights& w) {
    if (!(w.alpha >= 0.0 && w.alpha <= 1.0)) throw Error(Errc::InvalidConfig, "alpha must lie in [0, 1]");
    if (!(w.lambda1 >= 0.0) || !(w.lambda2 >= 0.0)) throw Error(Errc::InvalidConfig, "loss weights must be >= 0");
}

namespace {

template <typename T>
void require_map(const Tensor<T>& t, const Tensor<T>& image, const char* what) {
    if (!t.defined() || t.rank() != 4 || t.dim(1) != 1 || t.dim(0) != image.dim(0) || t.dim(2) != image.dim(2) ||
        t.dim(3) != image.dim(3)) {
        throw Error(Errc::ShapeMismatch, std::string(what) + ": expected N x 1 x H x W matching the image, got " +
                                             (t.defined() ? shape_str(t.shape()) : "undefined"));
    }
}

template <typename T>
void require_image(const Tensor<T>& t, const char* what) {
    if (!t.defined() || t.rank() != 4) throw Error(Errc::ShapeMismatch, std::string(what) + ": expected NCHW image");
}

template <typename T>
double total_of(const Tensor<T>& t) {
    double s = 0;
    for (T v : t.values()) s += static_cast<double>(v);
    return s;
}

// Weighted mean with a constant normalizer.
template <typename T>
LossTerm<T> normalized(const Tensor<T>& per_pixel, const Tensor<T>& weight) {
    const double norm = total_of(weight);
    if (!(norm > 0.0)) return {Tensor<T>::scalar(T(0)), true};
    return {mul(sum(mul(per_pixel, weight)), static_cast<T>(1.0 / norm)), false};
}

}  // namespace

template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
        throw Error(Errc::ShapeMismatch, "ssim: inputs must share a shape");
    }
    const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
    auto mu_a = box_filter3(a);
    auto mu_b = box_filter3(b);
    auto mu_aa = mu_a * mu_a;
    auto mu_bb = mu_b * mu_b;
    auto mu_ab = mu_a * mu_b;
    auto var_a = box_filter3(a * a) - mu_aa;
    auto var_b = box_filter3(b * b) - mu_bb;
    auto cov = box_filter3(a * b) - mu_ab;
    auto num = (mu_ab * T(2) + c1) * (cov * T(2) + c2);
    auto den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2);
    return num / den;
}

template <typename T>
LossTerm<T> photometric_loss(const Tensor<T>& i_left, const Tensor<T>& i_right, const Tensor<T>& d,
                             const Tensor<T>& o, double alpha) {
    require_image(i_left, "photometric_loss");
    if (i_left.shape() != i_right.shape()) throw Error(Errc::ShapeMismatch, "photometric_loss: left/right shapes differ");
    require_map(d, i_left, "photometric_loss disparity");
    require_map(o, i_left, "photometric_loss occlusion");
    const T a = static_cast<T>(alpha);
    auto warped = warp_horizontal(i_right, d);
    auto structural = (T(1) - mean(ssim(i_left, warped.output), 1)) * (a / T(2));
    auto absolute = mean(abs(i_left - warped.output), 1) * (T(1) - a);
    auto weight = stop_gradient(T(1) - o) * warped.valid;
    return normalized(structural + absolute, weight);
}

template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& i_left, const Tensor<T>& d) {
    require_image(i_left, "smoothness_loss");
    require_map(d, i_left, "smoothness_loss disparity");
    auto wx = exp(-mean(abs(diff_x(i_left)), 1));
    auto wy = exp(-mean(abs(diff_y(i_left)), 1));
    auto per_pixel = abs(diff_x(d)) * wx + abs(diff_y(d)) * wy;
    return mean(per_pixel);
}

double smooth_l1(double x) {
    if (x < 0.0 || std::isnan(x)) throw Error(Errc::NegativeInput, "smooth_l1 expects x >= 0");
    return x < 1.0 ? 0.5 * x * x : x - 0.5;
}

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x) {
    // 0.5 m^2 + (x - m) with m = min(x, 1) covers both branches.
    auto m = minimum(x, T(1));
    return m * m * T(0.5) + (x - m);
}

template <typename T>
LossTerm<T> data_augmentation_loss(const Tensor<T>& d_teacher, const Tensor<T>& d_student, const Tensor<T>& o_tilde) {
    if (!d_teacher.defined() || !d_student.defined() || !o_tilde.defined() || d_teacher.shape() != d_student.shape() ||
        o_tilde.shape() != d_student.shape()) {
        throw Error(Errc::ShapeMismatch, "data_augmentation_loss: teacher, student and weights must share a shape");
    }
    auto per_pixel = smooth_l1(abs(stop_gradient(d_teacher) - d_student));
    return normalized(per_pixel, stop_gradient(o_tilde));
}

template <typename T>
LossBreakdown<T> hybrid_loss(const Tensor<T>& i_left, const Tensor<T>& i_right, const Tensor<T>& d,
                             const Tensor<T>& o_other, const AugmentedTerms<T>* aug, const LossWeights& weights) {
    validate(weights);
    LossBreakdown<T> out;
    auto ph = photometric_loss(i_left, i_right, d, o_other, weights.alpha);
    out.ph = ph.value;
    out.ph_skipped = ph.empty_normalizer;
    out.sm = smoothness_loss(i_left, d);
    if (aug) {
        auto da = data_augmentation_loss(aug->d_teacher, aug->d_student, aug->o_tilde);
        out.da = da.value;
        out.da_skipped = da.empty_normalizer;
    } else {
        out.da = Tensor<T>::scalar(T(0));
    }
    out.total = out.ph + out.sm * static_cast<T>(weights.lambda1) + out.da * static_cast<T>(weights.lambda2);
    return out;
}

#define COT_INSTANTIATE_LOSSES(T)                                                                                 \
    template Tensor<T> ssim(const Tensor<T>&, const Tensor<T>&);                                                  \
    template LossTerm<T> photometric_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          double);                                                                \
    template Tensor<T> smoothness_loss(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> smooth_l1(const Tensor<T>&);                                                               \
    template LossTerm<T> data_augmentation_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
    template LossBreakdown<T> hybrid_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          const AugmentedTerms<T>*, const LossWeights&);

COT_INSTANTIATE_LOSSES(float)
COT_INSTANTIATE_LOSSES(double)
#undef COT_INSTANTIATE_LOSSES

}  // namespace cot
