#include "cot/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "cot/error.hpp"

namespace cot {

namespace {

void check_sizes(std::size_t pred, std::size_t gt, std::size_t valid) {
    if (pred != gt || gt != valid) throw Error(Errc::ShapeMismatch, "metrics: pred/gt/mask sizes differ");
}

}  // namespace

double aepe(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid) {
    EvalAccumulator acc;
    acc.add(pred, gt, valid, {});
    return acc.report().aepe_all;
}

double f1_bad(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid,
              double tol) {
    EvalAccumulator acc(tol);
    acc.add(pred, gt, valid, {});
    return acc.report().f1_all;
}

EvalReport split_noc(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid,
                     std::span<const std::uint8_t> gt_occlusion) {
    if (gt_occlusion.empty()) throw Error(Errc::MissingOcclusionTruth, "split_noc needs ground-truth occlusion");
    EvalAccumulator acc;
    acc.add(pred, gt, valid, gt_occlusion);
    return acc.report();
}

void EvalAccumulator::add(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> valid,
                          std::span<const std::uint8_t> gt_occlusion) {
    check_sizes(pred.size(), gt.size(), valid.size());
    if (!gt_occlusion.empty() && gt_occlusion.size() != gt.size()) {
        throw Error(Errc::ShapeMismatch, "metrics: occlusion mask size differs");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!valid[i]) continue;
        const double err = std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
        const bool bad = err > tol_;
        abs_all_ += err;
        bad_all_ += bad;
        ++n_all_;
        if (gt_occlusion.empty() || !gt_occlusion[i]) {
            abs_noc_ += err;
            bad_noc_ += bad;
            ++n_noc_;
        }
    }
}

EvalReport EvalAccumulator::report() const {
    if (n_all_ == 0) throw Error(Errc::EmptyMask, "metrics: no valid pixels");
    EvalReport r;
    r.valid_pixel_count = n_all_;
    r.noc_pixel_count = n_noc_;
    r.aepe_all = abs_all_ / static_cast<double>(n_all_);
    r.f1_all = 100.0 * static_cast<double>(bad_all_) / static_cast<double>(n_all_);
    if (n_noc_ > 0) {
        r.aepe_noc = abs_noc_ / static_cast<double>(n_noc_);
        r.f1_noc = 100.0 * static_cast<double>(bad_noc_) / static_cast<double>(n_noc_);
    }
    return r;
}

std::vector<std::uint8_t> gt_validity(std::span<const float> gt) {
    std::vector<std::uint8_t> v(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) v[i] = std::isfinite(gt[i]) && gt[i] > 0.0f;
    return v;
}

std::string eval_csv_header() { return "aepe_all,aepe_noc,f1_all,f1_noc,valid_pixels,noc_pixels"; }

std::string eval_csv_row(const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.4f,%.4f,%zu,%zu", r.aepe_all, r.aepe_noc, r.f1_all, r.f1_noc,
                  r.valid_pixel_count, r.noc_pixel_count);
    return buf;
}

std::string eval_summary(const EvalReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "            All        Noc\n"
                  "AEPE (px)   %-10.3f %-10.3f\n"
                  "F1 (%%)      %-10.2f %-10.2f\n"
                  "pixels      %-10zu %-10zu\n",
                  r.aepe_all, r.aepe_noc, r.f1_all, r.f1_noc, r.valid_pixel_count, r.noc_pixel_count);
    return buf;
}

}  // namespace cot
