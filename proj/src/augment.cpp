#include "cot/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cot {

AugmentationSpec identity_spec(int height, int width) {
    AugmentationSpec s;
    s.out_width = width;
    s.out_height = height;
    return s;
}

namespace {

int round_down4(double v) { return static_cast<int>(std::floor(v / 4.0)) * 4; }

}  // namespace

AugmentationSpec sample_spec(std::mt19937_64& outer, const AugmentBounds& b) {
    AugmentationSpec s;
    s.rng_seed = outer();
    std::mt19937_64 rng(s.rng_seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto integer = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng); };

    s.scale = uniform(b.min_scale, b.max_scale);
    const int min_h = std::max(8, round_down4(b.min_crop_fraction * b.height));
    s.out_height = 4 * integer(min_h / 4, b.height / 4);
    // Source span out_width / s must fit inside the frame.
    const int max_w = std::min(round_down4(b.width * s.scale), round_down4(b.width));
    const int min_w = std::min(max_w, std::max(8, round_down4(b.min_crop_fraction * b.width * s.scale)));
    s.out_width = 4 * integer(min_w / 4, max_w / 4);
    s.crop_x = uniform(0.0, std::max(0.0, b.width - s.out_width / s.scale));
    s.crop_y = integer(0, b.height - s.out_height);

    const int n_rects = integer(0, b.max_rects);
    for (int k = 0; k < n_rects; ++k) {
        OcclusionRect r;
        r.width = std::min(s.out_width, integer(b.min_rect_size, b.max_rect_size));
        r.height = std::min(s.out_height, integer(b.min_rect_size, b.max_rect_size));
        r.x = integer(0, s.out_width - r.width);
        r.y = integer(0, s.out_height - r.height);
        for (auto& c : r.fill) c = static_cast<float>(uniform(0.0, 1.0));
        s.rects.push_back(r);
    }
    s.brightness = uniform(-b.max_brightness, b.max_brightness);
    s.contrast = uniform(b.min_contrast, b.max_contrast);
    for (auto& g : s.gamma) g = uniform(b.min_gamma, b.max_gamma);
    return s;
}

void validate(const AugmentationSpec& s, int height, int width) {
    if (s.out_width < 8 || s.out_height < 8 || s.out_width % 4 || s.out_height % 4) {
        throw Error(Errc::DegenerateCrop, "augmented size " + std::to_string(s.out_height) + "x" +
                                              std::to_string(s.out_width) + " must be >= 8 and a multiple of 4");
    }
    if (!(s.scale > 0.0) || !std::isfinite(s.scale)) throw Error(Errc::InvalidSpec, "scale must be positive");
    const double span = s.out_width / s.scale;
    if (!(s.crop_x >= 0.0) || s.crop_x + span > width + 1e-9 || s.crop_y < 0 || s.crop_y + s.out_height > height) {
        throw Error(Errc::InvalidSpec, "crop rectangle leaves the image");
    }
    for (const auto& r : s.rects) {
        if (r.width <= 0 || r.height <= 0 || r.x < 0 || r.y < 0 || r.x + r.width > s.out_width ||
            r.y + r.height > s.out_height) {
            throw Error(Errc::InvalidSpec, "occlusion rectangle leaves the augmented frame");
        }
    }
    if (!(s.contrast > 0.0)) throw Error(Errc::InvalidSpec, "contrast must be positive");
    for (double g : s.gamma)
        if (!(g > 0.0)) throw Error(Errc::InvalidSpec, "gamma must be positive");
}

std::string describe(const AugmentationSpec& s) {
    std::ostringstream os;
    os.precision(17);
    os << "seed=" << s.rng_seed << " crop_x=" << s.crop_x << " crop_y=" << s.crop_y << " out=" << s.out_height
       << "x" << s.out_width << " scale=" << s.scale << " brightness=" << s.brightness << " contrast=" << s.contrast
       << " gamma=" << s.gamma[0] << "," << s.gamma[1] << "," << s.gamma[2] << " rects=";
    for (std::size_t k = 0; k < s.rects.size(); ++k) {
        const auto& r = s.rects[k];
        os << (k ? ";" : "") << r.x << "," << r.y << "," << r.width << "," << r.height;
    }
    return os.str();
}

template <typename T>
Tensor<T> resample(const AugmentationSpec& s, const Tensor<T>& x) {
    if (!x.defined() || x.rank() != 4) throw Error(Errc::ShapeMismatch, "resample: expected NCHW tensor");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    validate(s, h, w);
    const int oh = s.out_height, ow = s.out_width;
    // Column taps are shared by every row and channel.
    std::vector<int> x0(ow), x1(ow);
    std::vector<T> frac(ow);
    for (int xo = 0; xo < ow; ++xo) {
        const double xs = std::clamp(s.crop_x + (xo + 0.5) / s.scale - 0.5, 0.0, static_cast<double>(w - 1));
        const double f = std::floor(xs);
        x0[xo] = static_cast<int>(f);
        x1[xo] = std::min(x0[xo] + 1, w - 1);
        frac[xo] = static_cast<T>(xs - f);
    }
    auto in = x.values();
    std::vector<T> out(static_cast<std::size_t>(n) * c * oh * ow);
    std::size_t o = 0;
    for (int b = 0; b < n * c; ++b)
        for (int yo = 0; yo < oh; ++yo) {
            const T* row = in.data() + (static_cast<std::size_t>(b) * h + s.crop_y + yo) * w;
            for (int xo = 0; xo < ow; ++xo, ++o) {
                const T f = frac[xo];
                out[o] = f == T(0) ? row[x0[xo]] : row[x0[xo]] * (T(1) - f) + row[x1[xo]] * f;
            }
        }
    return Tensor<T>::from({n, c, oh, ow}, std::move(out));
}

template <typename T>
AugmentedSample<T> apply(const AugmentationSpec& s, const Tensor<T>& i_left, const Tensor<T>& i_right,
                         const Tensor<T>& d, const Tensor<T>& o) {
    if (!i_left.defined() || !i_right.defined() || i_left.shape() != i_right.shape() || i_left.rank() != 4) {
        throw Error(Errc::ShapeMismatch, "augment: left/right images must share an NCHW shape");
    }
    const Shape map_shape{i_left.dim(0), 1, i_left.dim(2), i_left.dim(3)};
    if (!d.defined() || !o.defined() || d.shape() != map_shape || o.shape() != map_shape) {
        throw Error(Errc::ShapeMismatch, "augment: disparity/occlusion must be N x 1 x H x W like the images");
    }
    NoGradGuard no_grad;
    AugmentedSample<T> out;

    const bool neutral = s.brightness == 0.0 && s.contrast == 1.0 && s.gamma == std::array<double, 3>{1.0, 1.0, 1.0};
    auto appearance = [&](Tensor<T> img) {
        if (neutral) return img;
        auto v = img.mutable_values();
        const std::size_t plane = static_cast<std::size_t>(img.dim(2)) * img.dim(3);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double g = s.gamma[(i / plane) % 3];
            const double lin = std::clamp(static_cast<double>(v[i]) * s.contrast + s.brightness, 0.0, 1.0);
            v[i] = static_cast<T>(std::pow(lin, g));
        }
        return img;
    };
    out.i_left = appearance(resample(s, i_left));
    out.i_right = appearance(resample(s, i_right));

    const int n = out.i_right.dim(0), h = s.out_height, w = s.out_width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    {
        auto r = out.i_right.mutable_values();
        for (const auto& rect : s.rects)
            for (int b = 0; b < n; ++b)
                for (int c = 0; c < 3; ++c)
                    for (int y = rect.y; y < rect.y + rect.height; ++y)
                        for (int x = rect.x; x < rect.x + rect.width; ++x)
                            r[(static_cast<std::size_t>(b) * 3 + c) * plane + static_cast<std::size_t>(y) * w + x] =
                                static_cast<T>(rect.fill[c]);
    }

    out.d_teacher = resample(s, d);
    if (s.scale != 1.0)
        for (T& v : out.d_teacher.mutable_values()) v *= static_cast<T>(s.scale);
    auto o_t = resample(s, o);

    std::vector<T> foot(static_cast<std::size_t>(n) * plane, T(0));
    std::vector<T> tilde(foot.size());
    auto dv = out.d_teacher.values();
    auto ov = o_t.values();
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(b) * plane + static_cast<std::size_t>(y) * w + x;
                const double xr = x - static_cast<double>(dv[i]);
                for (const auto& rect : s.rects)
                    if (y >= rect.y && y < rect.y + rect.height && xr >= rect.x && xr < rect.x + rect.width) foot[i] = T(1);
                tilde[i] = ov[i] > T(0.5) ? T(0) : std::max(T(1) - ov[i], foot[i]);
            }
    out.footprint = Tensor<T>::from({n, 1, h, w}, std::move(foot));
    out.o_tilde = Tensor<T>::from({n, 1, h, w}, std::move(tilde));
    return out;
}

template AugmentedSample<float> apply(const AugmentationSpec&, const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&, const Tensor<float>&);
template AugmentedSample<double> apply(const AugmentationSpec&, const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, const Tensor<double>&);
template Tensor<float> resample(const AugmentationSpec&, const Tensor<float>&);
template Tensor<double> resample(const AugmentationSpec&, const Tensor<double>&);

}  // namespace cot
