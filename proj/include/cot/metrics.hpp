#pragma once

// Disparity accuracy: average end-point error and bad-pixel rate, over all
// valid pixels ("All") and over valid non-occluded pixels ("Noc").

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cot {

inline constexpr double kBadPixelTolerance = 3.0;

struct EvalReport {
    double aepe_all = 0;
    double aepe_noc = 0;
    double f1_all = 0;  // percent
    double f1_noc = 0;  // percent
    std::size_t valid_pixel_count = 0;
    std::size_t noc_pixel_count = 0;
};

// Mean |pred - gt| over valid pixels. Throws EmptyMask, ShapeMismatch.
double aepe(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid);

// 100 * |{valid p : |pred - gt| > tol}| / |valid|. An error of exactly tol is good.
double f1_bad(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid,
              double tol = kBadPixelTolerance);

// Both splits for one map. Throws MissingOcclusionTruth when gt_occlusion is empty.
EvalReport split_noc(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid,
                     std::span<const std::uint8_t> gt_occlusion);

// Pixel-pooled accumulation across many maps.
class EvalAccumulator {
public:
    explicit EvalAccumulator(double tol = kBadPixelTolerance) : tol_(tol) {}

    // Empty gt_occlusion means every valid pixel is counted as non-occluded.
    void add(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid,
             std::span<const std::uint8_t> gt_occlusion);
    EvalReport report() const;

private:
    double tol_;
    double abs_all_ = 0, abs_noc_ = 0;
    std::size_t bad_all_ = 0, bad_noc_ = 0, n_all_ = 0, n_noc_ = 0;
};

// Valid where gt is finite and positive.
std::vector<std::uint8_t> gt_validity(std::span<const float> gt);

std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& r);
std::string eval_summary(const EvalReport& r);

}  // namespace cot
