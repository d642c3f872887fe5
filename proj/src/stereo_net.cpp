#include "cot/stereo_net.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"
#include "cot/ops.hpp"

namespace cot {

void validate(const ArchConfig& arch) {
    if (arch.feature_channels < 1 || arch.aggregation_channels < 1 || arch.refine_channels < 1) {
        throw Error(Errc::InvalidArch, "channel widths must be >= 1");
    }
    if (arch.max_disparity % kDownsample != 0 || arch.coarse_disparities() < 2) {
        throw Error(Errc::InvalidArch, "max_disparity must be a multiple of 4 and >= 8, got " +
                                           std::to_string(arch.max_disparity));
    }
}

std::vector<LayerSpec> layer_specs(const ArchConfig& arch) {
    const int c = arch.feature_channels;
    const int d = arch.coarse_disparities();
    const int a = arch.aggregation_channels;
    const int r = arch.refine_channels;
    const double relu_gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
    // Residual heads start small so the initial network is close to plain
    // soft-argmin over the raw matching cost.
    const double head_gain = 0.1;
    // Unit-gain matching features give costs that differ by ~0.1 across
    // hypotheses, so the initial soft-argmin is nearly uniform and every pixel
    // predicts the middle of the range. A larger gain makes it selective.
    const double match_gain = 10.0;
    return {
        {"feat1", 3, c, 3, 2, relu_gain},
        {"feat2", c, c, 3, 2, relu_gain},
        {"feat3", c, c, 3, 1, match_gain},
        {"agg1", d, a, 3, 1, relu_gain},
        {"agg2", a, a, 3, 1, relu_gain},
        {"agg3", a, a, 3, 1, relu_gain},
        {"agg4", a, d, 3, 1, head_gain},
        {"refine1", 4, r, 3, 1, relu_gain},
        {"refine2", r, 1, 3, 1, head_gain},
    };
}

template <typename T>
const Tensor<T>& NetworkParams<T>::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw Error(Errc::InvalidArch, "no parameter named " + name);
}

template <typename T>
std::size_t NetworkParams<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
}

template <typename T>
void NetworkParams<T>::zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
}

template <typename T>
NetworkParams<T> init_params(std::uint64_t seed, const ArchConfig& arch) {
    validate(arch);
    NetworkParams<T> params;
    params.arch = arch;
    params.init_seed = seed;
    std::mt19937_64 rng(seed);
    for (const auto& layer : layer_specs(arch)) {
        const int fan_in = layer.in_channels * layer.kernel * layer.kernel;
        // Uniform(-b, b) has variance b^2 / 3.
        const double bound = layer.gain * std::sqrt(3.0 / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        const Shape wshape{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel};
        std::vector<T> w(shape_numel(wshape));
        for (auto& v : w) v = static_cast<T>(u(rng));
        params.tensors.emplace_back(layer.name + ".weight", Tensor<T>::from(wshape, std::move(w), true));
        params.tensors.emplace_back(layer.name + ".bias", Tensor<T>::zeros({layer.out_channels}, true));
    }
    return params;
}

template <typename To, typename From>
NetworkParams<To> convert_params(const NetworkParams<From>& params, bool requires_grad) {
    NetworkParams<To> out;
    out.arch = params.arch;
    out.init_seed = params.init_seed;
    for (const auto& [name, t] : params.tensors) {
        std::vector<To> v(t.values().begin(), t.values().end());
        out.tensors.emplace_back(name, Tensor<To>::from(t.shape(), std::move(v), requires_grad));
    }
    return out;
}

namespace {

template <typename T>
Tensor<T> apply_conv(const NetworkParams<T>& params, const std::string& layer, const Tensor<T>& x, int stride) {
    return conv2d(x, params.get(layer + ".weight"), params.get(layer + ".bias"), stride, 1);
}

template <typename T>
Tensor<T> lrelu(const Tensor<T>& x) {
    return leaky_relu(x, static_cast<T>(kLeakySlope));
}

template <typename T>
void check_image(const Tensor<T>& image, const char* what) {
    if (!image.defined() || image.rank() != 4 || image.dim(1) != 3) {
        throw Error(Errc::ShapeMismatch, std::string(what) + ": expected N x 3 x H x W image");
    }
    if (image.dim(2) % kDownsample != 0 || image.dim(3) % kDownsample != 0 || image.dim(2) < kDownsample ||
        image.dim(3) < kDownsample) {
        throw Error(Errc::ShapeMismatch, std::string(what) + ": H and W must be positive multiples of 4, got " +
                                             shape_str(image.shape()));
    }
}

}  // namespace

template <typename T>
Tensor<T> extract_features(const NetworkParams<T>& params, const Tensor<T>& image) {
    check_image(image, "extract_features");
    auto x = lrelu(apply_conv(params, "feat1", image, 2));
    x = lrelu(apply_conv(params, "feat2", x, 2));
    return apply_conv(params, "feat3", x, 1);
}

template <typename T>
CostVolume<T> build_cost_volume(const Tensor<T>& f_left, const Tensor<T>& f_right, int coarse_disparities) {
    auto r = cost_volume_absdiff(f_left, f_right, coarse_disparities);
    return {std::move(r.cost), std::move(r.valid)};
}

template <typename T>
Tensor<T> forward(const NetworkParams<T>& params, const Tensor<T>& left, const Tensor<T>& right) {
    check_image(left, "forward left");
    check_image(right, "forward right");
    if (left.shape() != right.shape()) {
        throw Error(Errc::ShapeMismatch, "forward: " + shape_str(left.shape()) + " vs " + shape_str(right.shape()));
    }
    const ArchConfig& arch = params.arch;
    auto f_left = extract_features(params, left);
    auto f_right = extract_features(params, right);
    auto volume = build_cost_volume(f_left, f_right, arch.coarse_disparities());

    auto a = lrelu(apply_conv(params, "agg1", volume.cost, 1));
    a = lrelu(apply_conv(params, "agg2", a, 1));
    a = lrelu(apply_conv(params, "agg3", a, 1));
    auto cost = add(volume.cost, apply_conv(params, "agg4", a, 1));

    auto coarse = soft_argmin(cost);
    auto up = mul(upsample_bilinear(coarse, kDownsample), static_cast<T>(kDownsample));

    auto guide = concat_channels<T>({div(up, static_cast<T>(arch.max_disparity)), left});
    auto r = lrelu(apply_conv(params, "refine1", guide, 1));
    r = apply_conv(params, "refine2", r, 1);
    return clamp(add(up, r), T(0), static_cast<T>(arch.disparity_limit()));
}

template <typename T>
Tensor<T> forward_right(const NetworkParams<T>& params, const Tensor<T>& left, const Tensor<T>& right) {
    return flip_horizontal(forward(params, flip_horizontal(right), flip_horizontal(left)));
}

// ---------------------------------------------------------------------------

namespace {
constexpr const char* kNetMagic = "COTSNET1";
}

void write_params(std::ostream& os, const NetworkParams<float>& params) {
    os.write(kNetMagic, 8);
    binio::put_u32(os, static_cast<std::uint32_t>(params.arch.feature_channels));
    binio::put_u32(os, static_cast<std::uint32_t>(params.arch.max_disparity));
    binio::put_u32(os, static_cast<std::uint32_t>(params.arch.aggregation_channels));
    binio::put_u32(os, static_cast<std::uint32_t>(params.arch.refine_channels));
    binio::put_u64(os, params.init_seed);
    binio::put_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) {
        binio::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        binio::put_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) binio::put_u32(os, static_cast<std::uint32_t>(d));
        for (float v : t.values()) binio::put_f32(os, v);
    }
    if (!os) throw Error(Errc::Io, "failed writing parameters");
}

NetworkParams<float> read_params(std::istream& is) {
    binio::expect_magic(is, kNetMagic);
    ArchConfig arch;
    arch.feature_channels = static_cast<int>(binio::get_u32(is));
    arch.max_disparity = static_cast<int>(binio::get_u32(is));
    arch.aggregation_channels = static_cast<int>(binio::get_u32(is));
    arch.refine_channels = static_cast<int>(binio::get_u32(is));
    const std::uint64_t seed = binio::get_u64(is);
    try {
        validate(arch);
    } catch (const Error& e) {
        throw Error(Errc::MalformedHeader, e.what());
    }
    // The layout is fixed by the arch; use a fresh instance as the schema.
    NetworkParams<float> params = init_params<float>(seed, arch);
    const std::uint32_t count = binio::get_u32(is);
    if (count != params.tensors.size()) throw Error(Errc::MalformedHeader, "unexpected tensor count");
    for (auto& [name, t] : params.tensors) {
        const std::uint32_t len = binio::get_u32(is);
        if (len > 256) throw Error(Errc::MalformedHeader, "tensor name too long");
        std::string got(len, '\0');
        binio::read_exact(is, got.data(), len);
        if (got != name) throw Error(Errc::MalformedHeader, "expected tensor " + name + ", found " + got);
        const std::uint32_t rank = binio::get_u32(is);
        if (rank != static_cast<std::uint32_t>(t.rank())) throw Error(Errc::MalformedHeader, "rank mismatch for " + name);
        for (int d : t.shape()) {
            if (binio::get_u32(is) != static_cast<std::uint32_t>(d)) {
                throw Error(Errc::MalformedHeader, "shape mismatch for " + name);
            }
        }
        for (float& v : t.mutable_values()) v = binio::get_f32(is);
    }
    return params;
}

void save_params(const std::filesystem::path& path, const NetworkParams<float>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(Errc::Io, "cannot open " + path.string());
    write_params(os, params);
}

NetworkParams<float> load_params(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::Io, "cannot open " + path.string());
    return read_params(is);
}

#define COT_INSTANTIATE_NET(T)                                                                        \
    template struct NetworkParams<T>;                                                                 \
    template NetworkParams<T> init_params<T>(std::uint64_t, const ArchConfig&);                       \
    template Tensor<T> extract_features(const NetworkParams<T>&, const Tensor<T>&);                   \
    template CostVolume<T> build_cost_volume(const Tensor<T>&, const Tensor<T>&, int);                \
    template Tensor<T> forward(const NetworkParams<T>&, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> forward_right(const NetworkParams<T>&, const Tensor<T>&, const Tensor<T>&);

COT_INSTANTIATE_NET(float)
COT_INSTANTIATE_NET(double)
#undef COT_INSTANTIATE_NET

template NetworkParams<double> convert_params(const NetworkParams<float>&, bool);
template NetworkParams<float> convert_params(const NetworkParams<double>&, bool);
template NetworkParams<float> convert_params(const NetworkParams<float>&, bool);

}  // namespace cot
