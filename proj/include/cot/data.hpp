#pragma once

// Synthetic layered stereo scenes with exact ground truth, plus the disparity
// file codecs used by Scene Flow (PFM) and KITTI (16-bit PNG).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cot/image.hpp"

namespace cot {

struct StereoSample {
    std::string id;
    Image left;   // 3 x H x W, values in [0,1]
    Image right;
    std::optional<std::vector<float>> gt_disparity;        // H x W
    std::optional<std::vector<std::uint8_t>> gt_occlusion;  // H x W, 1 = occluded

    int height() const { return left.height; }
    int width() const { return left.width; }
};

void validate(const StereoSample& sample);

struct SceneLayer {
    double disparity = 0;
    // Rectangle in left-image pixels. Ignored for the background layer, which
    // is an unbounded plane.
    int x = 0, y = 0, width = 0, height = 0;
    std::uint64_t texture_seed = 0;
};

struct SyntheticSceneSpec {
    int width = 128;
    int height = 96;
    // Back to front: layers[0] is the background, later layers are nearer and
    // must have strictly larger disparity.
    std::vector<SceneLayer> layers;
    double noise_sigma = 0.005;
    std::uint64_t noise_seed = 0;
};

struct SceneRanges {
    int width = 128;
    int height = 96;
    double min_disparity = 2.0;
    double max_disparity = 40.0;
    int min_foreground = 1;
    int max_foreground = 3;
    double noise_sigma = 0.005;
};

// Throws InvalidSpec.
void validate(const SyntheticSceneSpec& spec);

SyntheticSceneSpec random_scene_spec(std::mt19937_64& rng, const SceneRanges& ranges);

// Renders both views with painter's-algorithm compositing. Throws InvalidSpec.
StereoSample generate_scene(const SyntheticSceneSpec& spec, std::string id = "scene");

std::vector<StereoSample> generate_dataset(std::size_t count, std::uint64_t seed, const SceneRanges& ranges);

// Band-limited RGB value noise attached to a layer, defined on the whole plane.
void layer_texture(std::uint64_t seed, double u, double v, float rgb[3]);

// Grayscale PFM ("Pf"). save writes little-endian (negative scale).
DisparityMap load_pfm(const std::filesystem::path& path);
void save_pfm(const std::filesystem::path& path, const DisparityMap& map);
DisparityMap parse_pfm(const std::string& bytes);
std::string encode_pfm(const DisparityMap& map);

// KITTI 16-bit PNG: disparity = stored / 256, stored 0 = invalid.
DisparityMap load_kitti_png(const std::filesystem::path& path);
void save_kitti_png(const std::filesystem::path& path, const DisparityMap& map);

// Seeded Fisher-Yates permutation of [0, n); deterministic per (seed, epoch).
std::vector<std::size_t> shuffle_dataset(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

// Directory layout: left/<id>.png, right/<id>.png, optional disp/<id>.pfm or
// disp/<id>.png (KITTI), optional occ/<id>.png (nonzero = occluded).
void save_dataset(const std::filesystem::path& dir, const std::vector<StereoSample>& samples);
std::vector<StereoSample> load_dataset(const std::filesystem::path& dir);

}  // namespace cot
