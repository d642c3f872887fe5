#pragma once

// Compact cost-volume stereo matcher.
//
//   features   3 convs (stride 2, 2, 1), shared between views, 1/4 resolution
//   matching   per-channel mean |f_l(x) - f_r(x-d)| over coarse hypotheses
//   aggregate  4 convs over the cost volume (hypotheses as channels), residual
//   regress    soft-argmin, bilinear x4 upsample, values scaled x4
//   refine     2 convs on [disparity, left image], residual, clamped to range
//
// Disparity is left-referenced. The right-view disparity comes from running
// the same network on the mirrored, swapped pair.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cot/tensor.hpp"

namespace cot {

struct ArchConfig {
    int feature_channels = 16;
    // Full-resolution disparity budget; the matcher works on max_disparity / 4
    // hypotheses at quarter resolution.
    int max_disparity = 64;
    int aggregation_channels = 32;
    int refine_channels = 16;

    int coarse_disparities() const { return max_disparity / 4; }
    // Upper bound of forward() output.
    double disparity_limit() const { return 4.0 * (coarse_disparities() - 1); }
    bool operator==(const ArchConfig&) const = default;
};

// Throws InvalidArch.
void validate(const ArchConfig& arch);

inline constexpr int kDownsample = 4;
inline constexpr double kLeakySlope = 0.1;

struct LayerSpec {
    std::string name;
    int in_channels;
    int out_channels;
    int kernel;
    int stride;
    // Variance of the init distribution is gain^2 / fan_in.
    double gain;
};

// Layer table in parameter order.
std::vector<LayerSpec> layer_specs(const ArchConfig& arch);

template <typename T>
struct NetworkParams {
    ArchConfig arch;
    std::uint64_t init_seed = 0;
    // "<layer>.weight" / "<layer>.bias", in layer_specs order.
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    const Tensor<T>& get(const std::string& name) const;
    std::size_t scalar_count() const;
    void zero_grad();
};

template <typename T>
NetworkParams<T> init_params(std::uint64_t seed, const ArchConfig& arch);

// Deep copy into another precision, optionally tracking gradients.
template <typename To, typename From>
NetworkParams<To> convert_params(const NetworkParams<From>& params, bool requires_grad = true);

template <typename T>
struct CostVolume {
    Tensor<T> cost;   // N x D x h x w
    Tensor<T> valid;  // 1 x D x h x w
};

// image: N x 3 x H x W with H, W divisible by 4.
template <typename T>
Tensor<T> extract_features(const NetworkParams<T>& params, const Tensor<T>& image);

template <typename T>
CostVolume<T> build_cost_volume(const Tensor<T>& f_left, const Tensor<T>& f_right, int coarse_disparities);

// N x 1 x H x W disparity in [0, arch.disparity_limit()].
template <typename T>
Tensor<T> forward(const NetworkParams<T>& params, const Tensor<T>& left, const Tensor<T>& right);

// Right-referenced disparity via the mirror trick.
template <typename T>
Tensor<T> forward_right(const NetworkParams<T>& params, const Tensor<T>& left, const Tensor<T>& right);

// Little-endian binary parameter file:
//   "COTSNET1" | u32 feature_channels, max_disparity, aggregation_channels,
//   refine_channels | u64 init_seed | u32 tensor count |
//   per tensor: u32 name length, name, u32 rank, u32 dims[rank], f32 values.
void write_params(std::ostream& os, const NetworkParams<float>& params);
NetworkParams<float> read_params(std::istream& is);
void save_params(const std::filesystem::path& path, const NetworkParams<float>& params);
NetworkParams<float> load_params(const std::filesystem::path& path);

}  // namespace cot
