#include <doctest.h>

#include <cmath>

#include "cot/augment.hpp"
#include "cot/error.hpp"
#include "support/gradcheck.hpp"

using namespace cot;
using cot::testing::random_tensor;

namespace {

AugmentBounds bounds(int h, int w) {
    AugmentBounds b;
    b.height = h;
    b.width = w;
    return b;
}

bool same_values(const Tensor<double>& a, const Tensor<double>& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_CASE("sample_spec is deterministic and always in bounds") {
    std::mt19937_64 a(42), b(42);
    auto sa = sample_spec(a, bounds(96, 128));
    auto sb = sample_spec(b, bounds(96, 128));
    CHECK(describe(sa) == describe(sb));

    std::mt19937_64 rng(1);
    for (int k = 0; k < 1000; ++k) {
        auto s = sample_spec(rng, bounds(96, 128));
        CHECK_NOTHROW(validate(s, 96, 128));
        CHECK(s.scale >= 0.8);
        CHECK(s.scale <= 1.2);
        CHECK(s.crop_x + s.out_width / s.scale <= 128.0 + 1e-9);
    }
    std::mt19937_64 small(3);
    for (int k = 0; k < 200; ++k) CHECK_NOTHROW(validate(sample_spec(small, bounds(16, 16)), 16, 16));
}

TEST_CASE("identity spec is a fixed point") {
    std::mt19937_64 rng(2);
    auto l = random_tensor(rng, {2, 3, 12, 16}, 0.0, 1.0);
    auto r = random_tensor(rng, {2, 3, 12, 16}, 0.0, 1.0);
    auto d = random_tensor(rng, {2, 1, 12, 16}, 0.0, 8.0);
    auto o = random_tensor(rng, {2, 1, 12, 16}, 0.0, 0.5);
    auto out = apply(identity_spec(12, 16), l, r, d, o);
    CHECK(same_values(out.i_left, l));
    CHECK(same_values(out.i_right, r));
    CHECK(same_values(out.d_teacher, d));
    for (std::size_t i = 0; i < o.numel(); ++i) CHECK(out.o_tilde.at(i) == 1.0 - o.at(i));

    // Unreliable teacher pixels are zeroed rather than mapped to 1 - O.
    auto high = random_tensor(rng, {2, 1, 12, 16}, 0.0, 1.0);
    auto out2 = apply(identity_spec(12, 16), l, r, d, high);
    for (std::size_t i = 0; i < high.numel(); ++i)
        CHECK(out2.o_tilde.at(i) == (high.at(i) > 0.5 ? 0.0 : 1.0 - high.at(i)));
}

TEST_CASE("horizontal rescale multiplies disparity") {
    auto spec = identity_spec(8, 40);
    spec.scale = 1.1;
    spec.out_width = 40;
    spec.crop_x = 2.0;
    auto l = Tensor<double>::zeros({1, 3, 8, 40});
    auto d = Tensor<double>::full({1, 1, 8, 40}, 10.0);
    auto out = apply(spec, l, l, d, Tensor<double>::zeros({1, 1, 8, 40}));
    for (double v : out.d_teacher.values()) CHECK(v == doctest::Approx(11.0).epsilon(1e-12));

    // On a linear ramp interpolation is exact: D~(x) = s * D(x_src).
    std::vector<double> ramp(8 * 40);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 40; ++x) ramp[y * 40 + x] = 0.25 * x + y;
    auto dr = Tensor<double>::from({1, 1, 8, 40}, ramp);
    for (double s : {0.8, 0.93, 1.2}) {
        auto sp = identity_spec(8, 40);
        sp.scale = s;
        sp.out_width = 28;
        sp.out_height = 8;
        sp.crop_x = 0.5;
        auto res = apply(sp, l, l, dr, Tensor<double>::zeros({1, 1, 8, 40}));
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 28; ++x) {
                const double xs = 0.5 + (x + 0.5) / s - 0.5;
                CHECK(res.d_teacher.at(static_cast<std::size_t>(y * 28 + x)) ==
                      doctest::Approx(s * (0.25 * xs + y)).epsilon(1e-5));
            }
    }
}

TEST_CASE("crop offsets rows and columns") {
    std::mt19937_64 rng(4);
    auto img = random_tensor(rng, {1, 3, 16, 20}, 0.0, 1.0);
    auto spec = identity_spec(8, 12);
    spec.crop_x = 5;
    spec.crop_y = 3;
    auto out = resample(spec, img);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 12; ++x)
                CHECK(out.at(static_cast<std::size_t>((c * 8 + y) * 12 + x)) ==
                      img.at(static_cast<std::size_t>((c * 16 + y + 3) * 20 + x + 5)));
}

TEST_CASE("appearance applies to both views and rectangles only to the right") {
    auto l = Tensor<double>::full({1, 3, 8, 16}, 0.5);
    auto spec = identity_spec(8, 16);
    spec.brightness = 0.1;
    spec.contrast = 1.2;
    spec.gamma = {1.0, 2.0, 0.5};
    spec.rects.push_back({4, 2, 3, 3, {0.0f, 0.25f, 1.0f}});
    auto d = Tensor<double>::zeros({1, 1, 8, 16});
    auto out = apply(spec, l, l, d, d);
    const double base = 0.5 * 1.2 + 0.1;
    CHECK(out.i_left.at(0) == doctest::Approx(base));
    CHECK(out.i_left.at(128) == doctest::Approx(base * base));
    CHECK(out.i_left.at(256) == doctest::Approx(std::sqrt(base)));
    CHECK(out.i_right.at(0) == out.i_left.at(0));
    const std::size_t in_rect = 3 * 16 + 5;
    CHECK(out.i_right.at(in_rect) == 0.0);
    CHECK(out.i_right.at(128 + in_rect) == 0.25);
    CHECK(out.i_left.at(in_rect) == doctest::Approx(base));
}

TEST_CASE("injected rectangles mark the teacher footprint in o_tilde") {
    const int H = 16, W = 32;
    auto img = Tensor<double>::full({1, 3, H, W}, 0.3);
    auto d = Tensor<double>::full({1, 1, H, W}, 4.0);
    std::vector<double> ov(H * W, 0.1);
    ov[1 * W + 2] = 0.9;   // teacher outlier far from the rectangle
    ov[5 * W + 14] = 0.7;  // teacher outlier inside the footprint
    auto o = Tensor<double>::from({1, 1, H, W}, ov);
    auto spec = identity_spec(H, W);
    spec.rects.push_back({8, 4, 6, 5});
    auto out = apply(spec, img, img, d, o);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y * W + x);
            const bool in_foot = y >= 4 && y < 9 && x - 4 >= 8 && x - 4 < 14;
            CHECK(out.footprint.at(i) == (in_foot ? 1.0 : 0.0));
            const double expected = ov[i] > 0.5 ? 0.0 : (in_foot ? 1.0 : 1.0 - ov[i]);
            CHECK(out.o_tilde.at(i) == doctest::Approx(expected));
            CHECK(out.o_tilde.at(i) >= 0.0);
            CHECK(out.o_tilde.at(i) <= 1.0);
        }
}

TEST_CASE("augmentation rejects degenerate and out-of-bounds specs") {
    auto img = Tensor<double>::zeros({1, 3, 16, 16});
    auto d = Tensor<double>::zeros({1, 1, 16, 16});
    auto expect = [&](AugmentationSpec s, Errc code) {
        try {
            apply(s, img, img, d, d);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == code);
        }
    };
    auto s = identity_spec(16, 16);
    s.out_width = 4;
    expect(s, Errc::DegenerateCrop);
    s = identity_spec(16, 16);
    s.out_height = 10;
    expect(s, Errc::DegenerateCrop);
    s = identity_spec(16, 16);
    s.crop_x = 1.0;
    expect(s, Errc::InvalidSpec);
    s = identity_spec(16, 16);
    s.rects.push_back({12, 0, 8, 4});
    expect(s, Errc::InvalidSpec);
    s = identity_spec(16, 16);
    CHECK_THROWS_AS(apply(s, img, img, Tensor<double>::zeros({1, 1, 16, 8}), d), Error);
}
