#include "cot/occlusion.hpp"

#include <algorithm>
#include <cmath>

#include "cot/image.hpp"
#include "cot/ops.hpp"

namespace cot {

template <typename T>
Tensor<T> estimate_occlusion(const Tensor<T>& d_left, const Tensor<T>& d_right, const OcclusionParams& params) {
    if (!d_left.defined() || !d_right.defined() || d_left.shape() != d_right.shape() || d_left.rank() != 4 ||
        d_left.dim(1) != 1) {
        throw Error(Errc::ShapeMismatch, "estimate_occlusion: expected equal N x 1 x H x W maps");
    }
    NoGradGuard no_grad;
    auto warped = warp_horizontal(stop_gradient(d_right), stop_gradient(d_left));
    auto dl = d_left.values();
    auto dr = warped.output.values();
    auto valid = warped.valid.values();
    const T g1 = static_cast<T>(params.gamma1), g2 = static_cast<T>(params.gamma2);
    std::vector<T> o(dl.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (valid[i] == T(0)) {
            o[i] = T(1);
            continue;
        }
        const T denom = g1 * (dl[i] + dr[i]) + g2;
        o[i] = std::clamp(std::abs(dl[i] - dr[i]) / denom, T(0), T(1));
    }
    return Tensor<T>::from(d_left.shape(), std::move(o));
}

template <typename T>
Tensor<T> apply_dynamic_threshold(const Tensor<T>& o, double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw Error(Errc::ThresholdOutOfRange, "threshold must lie in [0, 1]");
    std::vector<T> out(o.values().begin(), o.values().end());
    const T rt = static_cast<T>(r);
    for (T& v : out)
        if (v > rt) v = T(1);
    return Tensor<T>::from(o.shape(), std::move(out));
}

void write_occlusion_png(const std::filesystem::path& path, const Tensor<float>& o, int n) {
    Image img = from_tensor(o, n);
    for (float& v : img.data) v = std::round(255.0f * std::clamp(v, 0.0f, 1.0f)) / 255.0f;
    write_png(path, img);
}

template Tensor<float> estimate_occlusion(const Tensor<float>&, const Tensor<float>&, const OcclusionParams&);
template Tensor<double> estimate_occlusion(const Tensor<double>&, const Tensor<double>&, const OcclusionParams&);
template Tensor<float> apply_dynamic_threshold(const Tensor<float>&, double);
template Tensor<double> apply_dynamic_threshold(const Tensor<double>&, double);

}  // namespace cot
