// Acceptance run: one PASS/FAIL line per criterion. `--only 1,4,7` restricts
// the run; the desk-scale training criteria (8 and 9) take tens of minutes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cot/data.hpp"
#include "cot/error.hpp"
#include "cot/losses.hpp"
#include "cot/metrics.hpp"
#include "cot/occlusion.hpp"
#include "cot/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/metric_oracle.hpp"
#include "support/scene_checks.hpp"

using namespace cot;
using namespace cot::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// 1 ---------------------------------------------------------------------------

Outcome schedule_exactness() {
    const double tau = 0.7;
    const int t_max = 40;
    CoTeachConfig c;
    c.t_max = t_max;
    const int t_k = c.effective_t_k();
    if (t_k != 8) return {false, fmt("T_k = %d, expected 0.2 * 40 = 8", t_k)};
    int mismatches = 0;
    for (int t = 0; t <= t_max; ++t) {
        const double ref = t < t_k ? 1.0 - tau * (static_cast<double>(t) / t_k) : 1.0 - tau;
        mismatches += schedule_r(t, tau, t_k) != ref;
    }
    double worst_tail = 0;
    for (int t = t_k; t <= t_max; ++t) worst_tail = std::max(worst_tail, std::abs(schedule_r(t, tau, t_k) - 0.3));
    const bool ok = mismatches == 0 && worst_tail <= 1e-15 && schedule_r(0, tau, t_k) == 1.0;
    return {ok, fmt("%d/%d epochs differ from 1 - tau min(T/T_k, 1); max |R(T>=T_k) - 0.3| = %.1e", mismatches,
                    t_max + 1, worst_tail)};
}

// 2 ---------------------------------------------------------------------------

Outcome smooth_l1_contract() {
    const double quad = 0.5 * 1.0 * 1.0, lin = 1.0 - 0.5;
    bool ok = smooth_l1(1.0) == 0.5 && quad == 0.5 && lin == 0.5 && smooth_l1(0.0) == 0.0 && smooth_l1(2.0) == 1.5;
    double jump = 0, kink = 0;
    for (double h : {1e-3, 1e-5, 1e-7}) {
        jump = std::max(jump, std::abs(smooth_l1(1.0 + h) - smooth_l1(1.0 - h)) / h);
        const double left = (smooth_l1(1.0) - smooth_l1(1.0 - h)) / h;
        const double right = (smooth_l1(1.0 + h) - smooth_l1(1.0)) / h;
        kink = std::max(kink, std::abs(left - right));
    }
    // |l(1+h) - l(1-h)| / h -> 2 l'(1) = 2 and one-sided slopes agree to O(h).
    ok = ok && jump < 2.0 + 1e-3 && kink < 2e-3;
    return {ok, fmt("l(0)=%g l(1)=%g l(2)=%g; max slope gap at x=1 %.2e", smooth_l1(0.0), smooth_l1(1.0),
                    smooth_l1(2.0), kink)};
}

// 3 ---------------------------------------------------------------------------

struct GradRecord {
    std::string name;
    double worst = 0;
    int instances = 0;
    double tol = 0;
};

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    std::vector<GradRecord> recs;
    auto run = [&](const std::string& name, double tol, int n, const std::function<double(std::mt19937_64&)>& one) {
        std::mt19937_64 rng(std::hash<std::string>{}(name));
        GradRecord r{name, 0, 0, tol};
        for (int k = 0; k < n; ++k, ++r.instances) r.worst = std::max(r.worst, one(rng));
        recs.push_back(r);
    };
    constexpr int N = 20;
    constexpr double kOp = 1e-5, kLoss = 1e-3;
    using In = const std::vector<Tensor<double>>&;

    run("add/sub/mul/div", kOp, N, [](auto& rng) {
        auto a = random_tensor(rng, {2, 5});
        auto b = random_tensor(rng, {2, 5}, 0.5, 2.0);
        auto s = random_tensor(rng, {}, 0.5, 2.0);
        return std::max({gradcheck([](In in) { return probe(add(in[0], in[1])); }, {a, b}, {0, 1}),
                         gradcheck([](In in) { return probe(sub(in[0], in[1])); }, {a, b}, {0, 1}),
                         gradcheck([](In in) { return probe(mul(in[0], in[1])); }, {a, s}, {0, 1}),
                         gradcheck([](In in) { return probe(div(in[0], in[1])); }, {a, b}, {0, 1}),
                         gradcheck([](In in) { return probe(rsub(0.7, div(in[0], 4.0))); }, {a}, {0})});
    });
    run("exp/neg", kOp, N, [](auto& rng) {
        auto a = random_tensor(rng, {3, 4});
        return gradcheck([](In in) { return probe(neg(exp(in[0]))); }, {a}, {0});
    });
    run("abs/min/max/clamp/leaky_relu", kOp, N, [](auto& rng) {
        auto a = away_from_zero(rng, {3, 4});
        auto b = away_from_zero(rng, {3, 4});
        return std::max({gradcheck([](In in) { return probe(abs(in[0])); }, {a}, {0}),
                         gradcheck([](In in) { return probe(minimum(in[0], in[1])); }, {a, b}, {0, 1}),
                         gradcheck([](In in) { return probe(maximum(in[0], 0.05)); }, {a}, {0}),
                         gradcheck([](In in) { return probe(clamp(in[0], -0.5, 0.55)); }, {a}, {0}),
                         gradcheck([](In in) { return probe(leaky_relu(in[0], 0.1)); }, {a}, {0})});
    });
    run("sum/mean", kOp, N, [](auto& rng) {
        auto a = random_tensor(rng, {2, 3, 4});
        return std::max({gradcheck([](In in) { return mean(mul(in[0], in[0])); }, {a}, {0}),
                         gradcheck([](In in) { return probe(sum(in[0], 1)); }, {a}, {0}),
                         gradcheck([](In in) { return probe(mean(in[0], 2, false)); }, {a}, {0})});
    });
    run("stop_gradient", kOp, N, [](auto& rng) {
        auto a = random_tensor(rng, {2, 3});
        return gradcheck([](In in) { return probe(add(in[0], stop_gradient(in[1]))); }, {a, a}, {0});
    });
    run("conv2d", kOp, N, [](auto& rng) {
        const int stride = 1 + static_cast<int>(rng() % 2);
        auto x = random_tensor(rng, {2, 3, 8, 8});
        auto w = random_tensor(rng, {2, 3, 3, 3});
        auto b = random_tensor(rng, {2});
        return gradcheck([stride](In in) { return probe(conv2d(in[0], in[1], in[2], stride, 1)); }, {x, w, b},
                         {0, 1, 2});
    });
    run("warp_horizontal", kOp, N, [](auto& rng) {
        Tensor<double> src, d;
        do {
            src = random_tensor(rng, {1, 2, 8, 8}, 0, 1);
            d = random_tensor(rng, {1, 1, 8, 8}, 0.1, 3.9);
        } while (near_kink(Tensor<double>::full({1, 2, 8, 8}, -1.0), src, d));
        return gradcheck([](In in) { return probe(warp_horizontal(in[0], in[1]).output); }, {src, d}, {0, 1});
    });
    run("soft_argmin", kOp, N, [](auto& rng) {
        auto cost = random_tensor(rng, {2, 4, 3, 3}, -2, 2);
        return gradcheck([](In in) { return probe(soft_argmin(in[0])); }, {cost}, {0});
    });
    run("cost_volume_absdiff", kOp, N, [](auto& rng) {
        auto fl = away_from_zero(rng, {1, 3, 4, 6});
        auto fr = random_tensor(rng, {1, 3, 4, 6}, 2.0, 3.0);
        return gradcheck([](In in) { return probe(cost_volume_absdiff(in[0], in[1], 3).cost); }, {fl, fr}, {0, 1});
    });
    run("upsample/box/diff/flip/concat", kOp, N, [](auto& rng) {
        auto s = random_tensor(rng, {1, 2, 3, 4});
        auto o = random_tensor(rng, {1, 1, 3, 4});
        return std::max({gradcheck([](In in) { return probe(upsample_bilinear(in[0], 4)); }, {s}, {0}),
                         gradcheck([](In in) { return probe(box_filter3(in[0])); }, {s}, {0}),
                         gradcheck([](In in) { return probe(diff_x(in[0])); }, {s}, {0}),
                         gradcheck([](In in) { return probe(diff_y(in[0])); }, {s}, {0}),
                         gradcheck([](In in) { return probe(flip_horizontal(in[0])); }, {s}, {0}),
                         gradcheck([](In in) { return probe(concat_channels<double>({in[0], in[1]})); }, {s, o},
                                   {0, 1})});
    });
    run("ssim", kLoss, N, [](auto& rng) {
        auto a = smooth_image(rng, 8, 8);
        auto b = smooth_image(rng, 8, 8);
        return gradcheck([](In in) { return probe(ssim(in[0], in[1])); }, {a, b}, {0, 1});
    });
    run("photometric loss", kLoss, N, [](auto& rng) {
        Tensor<double> l, r, d;
        do {
            l = smooth_image(rng, 12, 12);
            r = smooth_image(rng, 12, 12);
            d = random_tensor(rng, {1, 1, 12, 12}, 0.3, 3.7);
        } while (near_kink(l, r, d));
        auto o = random_tensor(rng, {1, 1, 12, 12}, 0.0, 1.0);
        return gradcheck([](In in) { return photometric_loss(in[0], in[1], in[2], in[3], 0.85).value; }, {l, r, d, o},
                         {0, 1, 2});
    });
    run("smoothness loss", kLoss, N, [](auto& rng) {
        auto img = random_tensor(rng, {1, 3, 6, 6}, 0.0, 1.0);
        auto d = random_tensor(rng, {1, 1, 6, 6}, 0.0, 8.0);
        return gradcheck([](In in) { return smoothness_loss(in[0], in[1]); }, {img, d}, {0, 1});
    });
    run("smooth_l1", kLoss, N, [](auto& rng) {
        auto x = random_tensor(rng, {4, 4}, 0.0, 3.0);
        for (auto& v : x.mutable_values())
            if (std::abs(v - 1.0) < 1e-3) v += 0.01;
        return gradcheck([](In in) { return probe(smooth_l1(in[0])); }, {x}, {0});
    });
    run("data augmentation loss", kLoss, N, [](auto& rng) {
        auto t = random_tensor(rng, {1, 1, 6, 6}, 0.0, 10.0);
        auto s = random_tensor(rng, {1, 1, 6, 6}, 0.0, 10.0);
        auto w = random_tensor(rng, {1, 1, 6, 6}, 0.0, 1.0);
        return gradcheck([](In in) { return data_augmentation_loss(in[0], in[1], in[2]).value; }, {t, s, w}, {1});
    });
    run("hybrid loss", kLoss, N, [](auto& rng) {
        Tensor<double> l, r, d;
        do {
            l = smooth_image(rng, 8, 8);
            r = smooth_image(rng, 8, 8);
            d = random_tensor(rng, {1, 1, 8, 8}, 0.3, 2.7);
        } while (near_kink(l, r, d));
        auto o = random_tensor(rng, {1, 1, 8, 8}, 0.0, 1.0);
        auto teacher = random_tensor(rng, {1, 1, 8, 8}, 0.0, 4.0);
        auto student = random_tensor(rng, {1, 1, 8, 8}, 0.0, 4.0);
        auto ot = random_tensor(rng, {1, 1, 8, 8}, 0.0, 1.0);
        return gradcheck(
            [&](In in) {
                AugmentedTerms<double> aug{teacher, in[1], ot};
                return hybrid_loss(l, r, in[0], o, &aug, LossWeights{}).total;
            },
            {d, student}, {0, 1});
    });

    const double secs = seconds_since(t0);
    bool ok = secs < 120.0;
    std::string failed;
    double worst_op = 0, worst_loss = 0;
    for (const auto& r : recs) {
        (r.tol == kOp ? worst_op : worst_loss) = std::max(r.tol == kOp ? worst_op : worst_loss, r.worst);
        if (r.worst >= r.tol || r.instances < 20) {
            ok = false;
            failed += " " + r.name + fmt("(%.1e)", r.worst);
        }
    }
    return {ok, fmt("%zu groups x 20 instances; worst rel err ops %.1e (< 1e-5), losses %.1e (< 1e-3); %.1f s (< 120)",
                    recs.size(), worst_op, worst_loss, secs) +
                    (failed.empty() ? "" : "; failing:" + failed)};
}

// 4 ---------------------------------------------------------------------------

CoTeachConfig small_config() {
    CoTeachConfig c;
    c.arch.feature_channels = 4;
    c.arch.max_disparity = 16;
    c.arch.aggregation_channels = 6;
    c.arch.refine_channels = 4;
    c.batch = 1;
    return c;
}

Outcome swap_wiring() {
    const auto c = small_config();
    SceneRanges ranges;
    ranges.width = 32;
    ranges.height = 16;
    ranges.max_disparity = 10;
    ranges.min_disparity = 1;
    const auto ds = generate_dataset(1, 77, ranges);
    auto left = to_tensor<float>({&ds[0].left}), right = to_tensor<float>({&ds[0].right});
    auto pa = init_params<float>(1, c.arch), pb = init_params<float>(2, c.arch);
    const auto spec = iteration_spec(c, 0, 0, 16, 32);
    const double r = 0.6;

    // Gradient isolation, both directions.
    std::size_t leaked = 0;
    for (int side = 0; side < 2; ++side) {
        pa.zero_grad();
        pb.zero_grad();
        auto oa = forward_outputs(pa, left, right, &spec, r, c);
        auto ob = forward_outputs(pb, left, right, &spec, r, c);
        auto loss = side == 0 ? co_teaching_loss(oa, ob, left, right, c) : co_teaching_loss(ob, oa, left, right, c);
        backward(loss.total);
        for (const auto& [name, t] : (side == 0 ? pb : pa).tensors)
            if (t.has_grad())
                for (float g : t.grad()) leaked += g != 0.0f;
    }

    NoGradGuard no_grad;
    auto oa = forward_outputs(pa, left, right, &spec, r, c);
    auto ob = forward_outputs(pb, left, right, &spec, r, c);
    auto value = [&](const NetOutputs<float>& self, const NetOutputs<float>& other) {
        return co_teaching_loss(self, other, left, right, c).total.item();
    };
    auto perturbed = [](NetOutputs<float> o) {
        auto v = std::vector<float>(o.o.values().begin(), o.o.values().end());
        for (std::size_t i = 0; i < v.size(); i += 3) v[i] = v[i] > 0.5f ? 0.0f : 1.0f;
        o.o = Tensor<float>::from(o.o.shape(), std::move(v));
        o.aug.o_tilde = Tensor<float>::full(o.aug.o_tilde.shape(), 1.0f);
        return o;
    };
    const float la = value(oa, ob), lb = value(ob, oa);
    const bool a_sees_b = value(oa, perturbed(ob)) != la;
    const bool a_ignores_a = value(perturbed(oa), ob) == la;
    const bool b_sees_a = value(ob, perturbed(oa)) != lb;
    const bool b_ignores_b = value(perturbed(ob), oa) == lb;
    const bool ok = leaked == 0 && a_sees_b && a_ignores_a && b_sees_a && b_ignores_b;
    return {ok, fmt("nonzero cross-network grads %zu; O^B moves L^A %s, O^A moves L^A %s, O^A moves L^B %s, "
                    "O^B moves L^B %s",
                    leaked, a_sees_b ? "yes" : "no", a_ignores_a ? "no" : "yes", b_sees_a ? "yes" : "no",
                    b_ignores_b ? "no" : "yes")};
}

// 5 ---------------------------------------------------------------------------

Outcome occlusion_omission() {
    std::mt19937_64 rng(505);
    const int H = 16, W = 16;
    int unchanged = 0, controls = 0;
    const int trials = 20;
    for (int k = 0; k < trials; ++k) {
        auto l = smooth_image(rng, H, W);
        auto r = smooth_image(rng, H, W);
        auto d = random_tensor(rng, {1, 1, H, W}, 0.5, 3.5);
        // Raw occlusion below R everywhere except a 7x7 block above it.
        const double R = 0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng);
        auto o_raw = random_tensor(rng, {1, 1, H, W}, 0.0, R * 0.99);
        const int cy = 4 + static_cast<int>(rng() % 8), cx = 4 + static_cast<int>(rng() % 8);
        for (int y = cy - 3; y <= cy + 3; ++y)
            for (int x = cx - 3; x <= cx + 3; ++x) o_raw.mutable_values()[y * W + x] = R + (1.0 - R) * 0.5;
        const auto o = apply_dynamic_threshold(o_raw, R);
        const auto loss = [&](const Tensor<double>& li, const Tensor<double>& di, const Tensor<double>& oi) {
            return photometric_loss(li, r, di, oi, 0.85).value.item();
        };
        const double base = loss(l, d, o);
        // The centre's disparity and left colour reach only its 3x3 SSIM window.
        auto d2 = Tensor<double>::from(d.shape(), {d.values().begin(), d.values().end()});
        d2.mutable_values()[cy * W + cx] += 0.37;
        auto l2 = Tensor<double>::from(l.shape(), {l.values().begin(), l.values().end()});
        for (int c = 0; c < 3; ++c) l2.mutable_values()[(c * H + cy) * W + cx] += 0.25;
        unchanged += loss(l, d2, o) == base && loss(l2, d, o) == base;
        // Control: the same perturbation matters once nothing is omitted.
        const auto open = apply_dynamic_threshold(o_raw, 1.0);
        controls += loss(l, d2, open) != loss(l, d, open);
    }
    return {unchanged == trials && controls == trials,
            fmt("%d/%d instances bit-identical after perturbing O=1 pixels; %d/%d controls change", unchanged, trials,
                controls, trials)};
}

// 6 ---------------------------------------------------------------------------

Outcome metric_oracles() {
    std::mt19937_64 rng(606);
    int exact = 0, partitions = 0;
    for (int k = 0; k < 100; ++k) {
        const auto f = random_metric_fixture(rng, 16, 16);
        const auto ref = naive_metrics(f);
        const auto rep = split_noc(f.pred, f.gt, f.valid, f.occ);
        exact += aepe(f.pred, f.gt, f.valid) == ref.aepe_all && f1_bad(f.pred, f.gt, f.valid) == ref.f1_all &&
                 rep.aepe_all == ref.aepe_all && rep.f1_all == ref.f1_all && rep.aepe_noc == ref.aepe_noc &&
                 rep.f1_noc == ref.f1_noc;
        partitions += rep.noc_pixel_count + ref.n_occ == rep.valid_pixel_count && rep.valid_pixel_count == ref.n_all;
    }
    return {exact == 100 && partitions == 100,
            fmt("%d/100 fixtures exactly equal to the double-loop reference; %d/100 Noc + Occ = All", exact,
                partitions)};
}

// 7 ---------------------------------------------------------------------------

Outcome generator_consistency() {
    const auto scenes = generate_dataset(50, 707, SceneRanges{});
    double worst = 0;
    for (const auto& s : scenes) worst = std::max(worst, warp_consistency(s).mean_abs_diff);
    return {worst < 0.02, fmt("50 scenes, max mean |warp(right, gt) - left| on non-occluded pixels = %.4f (< 0.02)",
                              worst)};
}

// 8 and 9 ---------------------------------------------------------------------

struct RunResult {
    char preset;
    int seed;
    double untrained_a = 0, final_a = 0, final_b = 0, seconds = 0;
};

struct TrainingStudy {
    std::vector<RunResult> runs;
    double wall_seconds = 0;
    bool done = false;
};

TrainingStudy& study() {
    static TrainingStudy s;
    if (s.done) return s;
    const auto t0 = Clock::now();
    const auto test = generate_dataset(20, 999999, SceneRanges{});
    std::vector<RunResult> jobs;
    for (int seed = 0; seed < 3; ++seed)
        for (char p : {'g', 'b', 'a'}) jobs.push_back({p, seed});
    std::mutex mu;
    std::size_t next = 0;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next == jobs.size()) return;
                i = next++;
            }
            auto& job = jobs[i];
            const auto t_run = Clock::now();
            CoTeachConfig c = apply_ablation(CoTeachConfig{}, job.preset);
            c.t_max = 40;
            c.seed_a = 11 + 2 * job.seed;
            c.seed_b = 12 + 2 * job.seed;
            c.data_seed = job.seed;
            const auto train_set = generate_dataset(50, 1000 + job.seed, SceneRanges{});
            auto state = init_train_state(c);
            job.untrained_a = evaluate(state.params_a, test).aepe_all;
            state = train(train_set, c, {}, std::move(state));
            job.final_a = evaluate(state.params_a, test).aepe_all;
            job.final_b = evaluate(state.params_b, test).aepe_all;
            job.seconds = seconds_since(t_run);
            std::lock_guard lock(mu);
            std::printf("  run %c seed %d: AEPE A %.3f -> %.3f, B %.3f (%.0f s)\n", job.preset, job.seed,
                        job.untrained_a, job.final_a, job.final_b, job.seconds);
            std::fflush(stdout);
        }
    };
    const unsigned n_threads = std::clamp(std::thread::hardware_concurrency(), 1u, 9u);
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n_threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    s.runs = jobs;
    s.wall_seconds = seconds_since(t0);
    s.done = true;
    return s;
}

double median_final(const TrainingStudy& s, char preset) {
    std::vector<double> v;
    for (const auto& r : s.runs)
        if (r.preset == preset) v.push_back(r.final_a);
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

Outcome ablation_trend() {
    const auto& s = study();
    const double g = median_final(s, 'g'), b = median_final(s, 'b'), a = median_final(s, 'a');
    const double gain = 1.0 - g / a;
    const bool ok = g < b && b < a && gain >= 0.15 && s.wall_seconds < 45 * 60;
    return {ok, fmt("median final AEPE g %.3f, b %.3f, a %.3f; g better than a by %.1f%% (>= 15%%); %.1f min (< 45)", g,
                    b, a, 100.0 * gain, s.wall_seconds / 60.0)};
}

Outcome convergence() {
    const auto& s = study();
    bool ok = true;
    double worst_reduction = 1, worst_gap = 0;
    for (const auto& r : s.runs) {
        if (r.preset != 'g') continue;
        const double reduction = 1.0 - r.final_a / r.untrained_a;
        const double gap = std::abs(r.final_a - r.final_b) / std::min(r.final_a, r.final_b);
        worst_reduction = std::min(worst_reduction, reduction);
        worst_gap = std::max(worst_gap, gap);
        ok = ok && reduction >= 0.5 && gap <= 0.2;
    }
    return {ok, fmt("setup g over 3 seeds: smallest AEPE reduction vs untrained %.1f%% (>= 50%%); largest A/B gap "
                    "%.1f%% (<= 20%%)",
                    100.0 * worst_reduction, 100.0 * worst_gap)};
}

// 10 --------------------------------------------------------------------------

Outcome format_fidelity() {
    const auto dir = fs::temp_directory_path() / "cot_acceptance_formats";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::mt19937_64 rng(1010);

    int pfm_exact = 0;
    for (int k = 0; k < 10; ++k) {
        DisparityMap m(5 + k, 7 + 2 * k);
        std::uniform_real_distribution<float> u(-300.0f, 300.0f);
        for (auto& v : m.values) v = u(rng);
        m.values[0] = std::numeric_limits<float>::denorm_min();
        m.values[1] = -0.0f;
        save_pfm(dir / "m.pfm", m);
        const auto back = load_pfm(dir / "m.pfm");
        pfm_exact += back.values.size() == m.values.size() &&
                     std::memcmp(back.values.data(), m.values.data(), m.values.size() * sizeof(float)) == 0;
    }

    double kitti_worst = 0;
    bool kitti_valid = true;
    for (int k = 0; k < 10; ++k) {
        DisparityMap m(12, 20);
        std::uniform_real_distribution<float> u(0.01f, 255.9f);
        for (auto& v : m.values) v = u(rng);
        m.valid[3] = 0;
        save_kitti_png(dir / "k.png", m);
        const auto back = load_kitti_png(dir / "k.png");
        for (std::size_t i = 0; i < m.values.size(); ++i) {
            kitti_valid = kitti_valid && back.valid[i] == m.valid[i];
            if (m.valid[i]) kitti_worst = std::max(kitti_worst, double(std::abs(back.values[i] - m.values[i])));
        }
    }

    // Corrupted fixtures.
    auto write = [&](const std::string& name, const std::string& bytes) {
        std::ofstream(dir / name, std::ios::binary) << bytes;
        return dir / name;
    };
    std::string good_pfm;
    {
        DisparityMap m(4, 4, 2.5f);
        good_pfm = encode_pfm(m);
    }
    write_png16(dir / "good16.png", std::vector<std::uint16_t>(64, 1000), 8, 8);
    std::string good_png;
    {
        std::ifstream is(dir / "good16.png", std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        good_png = ss.str();
    }
    write_png(dir / "gray8.png", Image(1, 4, 4, 0.5f));
    write_png(dir / "rgb8.png", Image(3, 4, 4, 0.5f));

    std::vector<std::pair<std::string, std::function<void()>>> corpus = {
        {"empty pfm", [&] { load_pfm(write("empty.pfm", "")); }},
        {"colour pfm", [&] { load_pfm(write("color.pfm", "PF\n2 2\n-1\n")); }},
        {"wrong magic", [&] { load_pfm(write("magic.pfm", "P6\n2 2\n-1\n")); }},
        {"non-numeric size", [&] { load_pfm(write("size.pfm", "Pf\nx 2\n-1\n")); }},
        {"zero scale", [&] { load_pfm(write("scale.pfm", "Pf\n2 2\n0\n")); }},
        {"truncated pfm payload", [&] { load_pfm(write("trunc.pfm", good_pfm.substr(0, good_pfm.size() - 9))); }},
        {"8-bit kitti png", [&] { load_kitti_png(dir / "gray8.png"); }},
        {"rgb kitti png", [&] { load_kitti_png(dir / "rgb8.png"); }},
        {"non-png bytes", [&] { load_kitti_png(write("junk.png", "definitely not a png")); }},
        {"truncated png", [&] { load_kitti_png(write("trunc.png", good_png.substr(0, good_png.size() / 2))); }},
    };
    int typed = 0;
    std::string untyped;
    for (const auto& [name, f] : corpus) {
        try {
            f();
            untyped += " " + name + "(accepted)";
        } catch (const Error&) {
            ++typed;
        } catch (const std::exception& e) {
            untyped += " " + name + "(" + e.what() + ")";
        }
    }
    const bool ok = pfm_exact == 10 && kitti_valid && kitti_worst <= 1.0 / 512.0 && typed == 10;
    return {ok, fmt("PFM %d/10 bit-exact; KITTI max error %.5f px (<= 1/512), validity %s; %d/10 corrupted fixtures "
                    "raise typed errors",
                    pfm_exact, kitti_worst, kitti_valid ? "kept" : "lost", typed) +
                    untyped};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
        }
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"schedule exactness", schedule_exactness},
        {"smooth-L1 branch contract", smooth_l1_contract},
        {"gradient suite", gradient_suite},
        {"swap wiring", swap_wiring},
        {"occlusion omission", occlusion_omission},
        {"metric oracles", metric_oracles},
        {"generator self-consistency", generator_consistency},
        {"desk-scale ablation trend", ablation_trend},
        {"convergence sanity", convergence},
        {"format fidelity", format_fidelity},
    };
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw ") + e.what()};
        }
        failures += !o.pass;
        std::printf("criterion %d %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
