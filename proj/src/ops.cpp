#include "cot/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace cot {

namespace {

template <typename T>
using Node = detail::Node<T>;

template <typename T>
Node<T>* raw(const Tensor<T>& t) {
    return t.node().get();
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* what) {
    if (!t.defined()) throw Error(Errc::ShapeMismatch, std::string(what) + ": undefined tensor");
}

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
    require_defined(t, what);
    if (t.rank() != rank) {
        throw Error(Errc::ShapeMismatch,
                    std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
    }
}

// Result shape for scalar-or-equal broadcasting.
template <typename T>
Shape broadcast_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    require_defined(a, what);
    require_defined(b, what);
    if (a.shape() == b.shape()) return a.shape();
    if (b.numel() == 1) return a.shape();
    if (a.numel() == 1) return b.shape();
    throw Error(Errc::ShapeMismatch,
                std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// f(x, y) -> value; grad(x, y, out) -> {d out/dx, d out/dy}.
template <typename T, typename F, typename G>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* what, F f, G grad) {
    Shape shape = broadcast_shape(a, b, what);
    const std::size_t n = shape_numel(shape);
    const bool a_scalar = a.numel() == 1 && n != 1;
    const bool b_scalar = b.numel() == 1 && n != 1;
    auto av = a.values();
    auto bv = b.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    Node<T>* an = raw(a);
    Node<T>* bn = raw(b);
    return make_result<T>(std::move(shape), std::move(out), {a, b}, [=](Node<T>& self) {
        const auto& g = self.grad;
        const auto& x = an->value;
        const auto& y = bn->value;
        T* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
        T* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ia = a_scalar ? 0 : i;
            const std::size_t ib = b_scalar ? 0 : i;
            auto [dx, dy] = grad(x[ia], y[ib], self.value[i]);
            if (ga) ga[ia] += g[i] * dx;
            if (gb) gb[ib] += g[i] * dy;
        }
    });
}

// f(x) -> value; grad(x, out) -> d out/dx.
template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& a, const char* what, F f, G grad) {
    require_defined(a, what);
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    Node<T>* an = raw(a);
    return make_result<T>(a.shape(), std::move(out), {a}, [=](Node<T>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * grad(an->value[i], self.value[i]);
    });
}

template <typename T>
void check_divisor(std::span<const T> v) {
    for (T x : v) {
        if (!(std::abs(x) >= T(1e-12))) throw Error(Errc::DivisionByNearZero, "divisor magnitude below 1e-12");
    }
}

template <typename T>
T sign(T x) {
    return T((x > T(0)) - (x < T(0)));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, "add", [](T x, T y) { return x + y; },
                  [](T, T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, "sub", [](T x, T y) { return x - y; },
                  [](T, T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, "mul", [](T x, T y) { return x * y; },
                  [](T x, T y, T) { return std::pair<T, T>{y, x}; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(b, "div");
    check_divisor(b.values());
    return binary(a, b, "div", [](T x, T y) { return x / y; },
                  [](T, T y, T out) { return std::pair<T, T>{T(1) / y, -out / y}; });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, "minimum", [](T x, T y) { return y < x ? y : x; },
                  [](T x, T y, T) { return y < x ? std::pair<T, T>{T(0), T(1)} : std::pair<T, T>{T(1), T(0)}; });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, "maximum", [](T x, T y) { return y > x ? y : x; },
                  [](T x, T y, T) { return y > x ? std::pair<T, T>{T(0), T(1)} : std::pair<T, T>{T(1), T(0)}; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
    return unary(a, "add", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T s) {
    return unary(a, "mul", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> rsub(T s, const Tensor<T>& a) {
    return unary(a, "rsub", [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, T s) {
    check_divisor(std::span<const T>(&s, 1));
    return unary(a, "div", [s](T x) { return x / s; }, [s](T, T) { return T(1) / s; });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, T s) {
    return unary(a, "minimum", [s](T x) { return s < x ? s : x; }, [s](T x, T) { return s < x ? T(0) : T(1); });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, T s) {
    return unary(a, "maximum", [s](T x) { return s > x ? s : x; }, [s](T x, T) { return s > x ? T(0) : T(1); });
}

template <typename T>
Tensor<T> greater(const Tensor<T>& a, const Tensor<T>& b) {
    Shape shape = broadcast_shape(a, b, "greater");
    const std::size_t n = shape_numel(shape);
    const bool a_scalar = a.numel() == 1 && n != 1;
    const bool b_scalar = b.numel() == 1 && n != 1;
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.at(a_scalar ? 0 : i) > b.at(b_scalar ? 0 : i) ? T(1) : T(0);
    return Tensor<T>::from(std::move(shape), std::move(out));
}

template <typename T>
Tensor<T> greater(const Tensor<T>& a, T s) {
    require_defined(a, "greater");
    std::vector<T> out(a.numel());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > s ? T(1) : T(0);
    return Tensor<T>::from(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return unary(a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return unary(a, "abs", [](T x) { return std::abs(x); }, [](T x, T) { return sign(x); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T out) { return out; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope) {
    return unary(a, "leaky_relu", [negative_slope](T x) { return x > T(0) ? x : x * negative_slope; },
                 [negative_slope](T x, T) { return x > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return unary(a, "clamp", [lo, hi](T x) { return std::clamp(x, lo, hi); },
                 [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
    require_defined(a, "stop_gradient");
    return Tensor<T>::from(a.shape(), std::vector<T>(a.values().begin(), a.values().end()), false);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    require_defined(a, "sum");
    T total = T(0);
    for (T v : a.values()) total += v;
    Node<T>* an = raw(a);
    return make_result<T>(Shape{}, {total}, {a}, [an](Node<T>& self) {
        auto& ga = an->ensure_grad();
        const T g = self.grad[0];
        for (T& v : ga) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    require_defined(a, "mean");
    if (a.numel() == 0) throw Error(Errc::ShapeMismatch, "mean of empty tensor");
    return mul(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim) {
    require_defined(a, "sum");
    if (axis < 0) axis += a.rank();
    if (axis < 0 || axis >= a.rank()) throw Error(Errc::ShapeMismatch, "sum: axis out of range");
    const Shape& s = a.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t len = static_cast<std::size_t>(s[axis]);
    Shape out_shape = s;
    if (keepdim) out_shape[axis] = 1;
    else out_shape.erase(out_shape.begin() + axis);
    std::vector<T> out(outer * inner, T(0));
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + k) * inner + i];
    Node<T>* an = raw(a);
    return make_result<T>(std::move(out_shape), std::move(out), {a}, [=](Node<T>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < len; ++k)
                for (std::size_t i = 0; i < inner; ++i) ga[(o * len + k) * inner + i] += self.grad[o * inner + i];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim) {
    require_defined(a, "mean");
    const int ax = axis < 0 ? axis + a.rank() : axis;
    if (ax < 0 || ax >= a.rank() || a.dim(ax) == 0) throw Error(Errc::ShapeMismatch, "mean: bad axis");
    return mul(sum(a, ax, keepdim), T(1) / static_cast<T>(a.dim(ax)));
}

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM

namespace {

struct ConvGeom {
    int n, c, h, w, o, kh, kw, stride, pad, ho, wo;
    std::size_t k() const { return static_cast<std::size_t>(c) * kh * kw; }
    std::size_t p() const { return static_cast<std::size_t>(ho) * wo; }
};

template <typename T>
void im2col(const T* img, const ConvGeom& g, T* cols) {
    for (int ci = 0; ci < g.c; ++ci)
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
                T* row = cols + ((static_cast<std::size_t>(ci) * g.kh + ky) * g.kw + kx) * g.p();
                const T* plane = img + static_cast<std::size_t>(ci) * g.h * g.w;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    T* dst = row + static_cast<std::size_t>(oy) * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* img) {
    for (int ci = 0; ci < g.c; ++ci)
        for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
                const T* row = cols + ((static_cast<std::size_t>(ci) * g.kh + ky) * g.kw + kx) * g.p();
                T* plane = img + static_cast<std::size_t>(ci) * g.h * g.w;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.wo;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    if (stride < 1 || padding < 0) throw Error(Errc::ShapeMismatch, "conv2d: bad stride/padding");
    ConvGeom g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.o = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (weight.dim(1) != g.c) {
        throw Error(Errc::ShapeMismatch,
                    "conv2d: input channels " + std::to_string(g.c) + " vs weight " + shape_str(weight.shape()));
    }
    const int span_h = g.h + 2 * padding - g.kh;
    const int span_w = g.w + 2 * padding - g.kw;
    if (span_h < 0 || span_w < 0) throw Error(Errc::ShapeMismatch, "conv2d: output spatial size < 1");
    g.ho = span_h / stride + 1;
    g.wo = span_w / stride + 1;
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.o)) {
        throw Error(Errc::ShapeMismatch, "conv2d: bias shape " + shape_str(bias.shape()));
    }

    const std::size_t k = g.k(), p = g.p();
    const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(g.o) * p;
    std::vector<T> out(static_cast<std::size_t>(g.n) * out_stride);
    std::vector<T> cols(k * p);
    ConstMapMat<T> wmat(weight.values().data(), g.o, static_cast<Eigen::Index>(k));
    for (int ni = 0; ni < g.n; ++ni) {
        im2col(input.values().data() + ni * in_stride, g, cols.data());
        MapMat<T> y(out.data() + ni * out_stride, g.o, static_cast<Eigen::Index>(p));
        y.noalias() = wmat * ConstMapMat<T>(cols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
        if (has_bias) {
            for (int oc = 0; oc < g.o; ++oc) y.row(oc).array() += bias.values()[oc];
        }
    }

    Node<T>* xn = raw(input);
    Node<T>* wn = raw(weight);
    Node<T>* bn = has_bias ? raw(bias) : nullptr;
    std::vector<Tensor<T>> inputs{input, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result<T>(Shape{g.n, g.o, g.ho, g.wo}, std::move(out), std::move(inputs), [=](Node<T>& self) {
        std::vector<T> col_buf(k * p);
        ConstMapMat<T> wm(wn->value.data(), g.o, static_cast<Eigen::Index>(k));
        for (int ni = 0; ni < g.n; ++ni) {
            ConstMapMat<T> dy(self.grad.data() + ni * out_stride, g.o, static_cast<Eigen::Index>(p));
            if (wn->requires_grad) {
                im2col(xn->value.data() + ni * in_stride, g, col_buf.data());
                MapMat<T> dw(wn->ensure_grad().data(), g.o, static_cast<Eigen::Index>(k));
                dw.noalias() +=
                    dy * ConstMapMat<T>(col_buf.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p))
                             .transpose();
            }
            if (bn && bn->requires_grad) {
                auto& db = bn->ensure_grad();
                for (int oc = 0; oc < g.o; ++oc) db[oc] += dy.row(oc).sum();
            }
            if (xn->requires_grad) {
                MapMat<T> dcols(col_buf.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
                dcols.noalias() = wm.transpose() * dy;
                col2im(col_buf.data(), g, xn->ensure_grad().data() + ni * in_stride);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Horizontal warp

template <typename T>
WarpResult<T> warp_horizontal(const Tensor<T>& source, const Tensor<T>& disparity) {
    require_rank(source, 4, "warp_horizontal source");
    require_rank(disparity, 4, "warp_horizontal disparity");
    const int n = source.dim(0), c = source.dim(1), h = source.dim(2), w = source.dim(3);
    if (disparity.dim(0) != n || disparity.dim(1) != 1 || disparity.dim(2) != h || disparity.dim(3) != w) {
        throw Error(Errc::ShapeMismatch,
                    "warp_horizontal: disparity " + shape_str(disparity.shape()) + " vs source " + shape_str(source.shape()));
    }
    for (T d : disparity.values()) {
        if (!std::isfinite(d)) throw Error(Errc::NonFiniteDisparity, "warp_horizontal: non-finite disparity");
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    // Per output pixel: left index, interpolation weight, in-range flag.
    std::vector<int> x0s(static_cast<std::size_t>(n) * plane);
    std::vector<T> fracs(x0s.size());
    std::vector<T> valid(x0s.size());
    auto dv = disparity.values();
    const T max_x = static_cast<T>(w - 1);
    for (std::size_t i = 0; i < x0s.size(); ++i) {
        const int x = static_cast<int>(i % static_cast<std::size_t>(w));
        const T xs = static_cast<T>(x) - dv[i];
        const bool inside = xs >= T(0) && xs <= max_x;
        const T xc = std::clamp(xs, T(0), max_x);
        int x0 = static_cast<int>(std::floor(xc));
        if (x0 >= w - 1) x0 = std::max(w - 2, 0);
        x0s[i] = x0;
        fracs[i] = w > 1 ? xc - static_cast<T>(x0) : T(0);
        valid[i] = inside ? T(1) : T(0);
    }
    std::vector<T> out(source.numel());
    auto sv = source.values();
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t di = ni * plane + p;
                const std::size_t row = (static_cast<std::size_t>(ni) * c + ci) * plane + (p / w) * w;
                const int x0 = x0s[di];
                const int x1 = std::min(x0 + 1, w - 1);
                const T f = fracs[di];
                out[row + p % w] = (T(1) - f) * sv[row + x0] + f * sv[row + x1];
            }
    Node<T>* sn = raw(source);
    Node<T>* dn = raw(disparity);
    Tensor<T> output = make_result<T>(source.shape(), std::move(out), {source, disparity},
        [=, x0s = std::move(x0s), fracs = fracs, valid = valid](Node<T>& self) {
            T* gs = sn->requires_grad ? sn->ensure_grad().data() : nullptr;
            T* gd = dn->requires_grad ? dn->ensure_grad().data() : nullptr;
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t di = ni * plane + p;
                        const std::size_t row = (static_cast<std::size_t>(ni) * c + ci) * plane + (p / w) * w;
                        const T g = self.grad[row + p % w];
                        const int x0 = x0s[di];
                        const int x1 = std::min(x0 + 1, w - 1);
                        const T f = fracs[di];
                        if (gs) {
                            gs[row + x0] += (T(1) - f) * g;
                            gs[row + x1] += f * g;
                        }
                        // Clamped samples are flat in the disparity.
                        if (gd && valid[di] > T(0)) {
                            const auto& s = sn->value;
                            gd[di] -= g * (s[row + x1] - s[row + x0]);
                        }
                    }
        });
    return {std::move(output), Tensor<T>::from(Shape{n, 1, h, w}, std::move(valid))};
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> soft_argmin(const Tensor<T>& cost) {
    require_rank(cost, 4, "soft_argmin");
    const int n = cost.dim(0), d = cost.dim(1), h = cost.dim(2), w = cost.dim(3);
    if (d < 2) throw Error(Errc::ShapeMismatch, "soft_argmin: need at least 2 disparity hypotheses");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto cv = cost.values();
    std::vector<T> prob(cost.numel());
    std::vector<T> out(static_cast<std::size_t>(n) * plane);
    for (int ni = 0; ni < n; ++ni)
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = static_cast<std::size_t>(ni) * d * plane + p;
            T lowest = std::numeric_limits<T>::infinity();
            for (int k = 0; k < d; ++k) lowest = std::min(lowest, cv[base + k * plane]);
            T z = T(0);
            for (int k = 0; k < d; ++k) {
                const T e = std::exp(lowest - cv[base + k * plane]);
                prob[base + k * plane] = e;
                z += e;
            }
            T expectation = T(0);
            for (int k = 0; k < d; ++k) {
                T& pk = prob[base + k * plane];
                pk /= z;
                expectation += static_cast<T>(k) * pk;
            }
            out[ni * plane + p] = expectation;
        }
    Node<T>* cn = raw(cost);
    return make_result<T>(Shape{n, 1, h, w}, std::move(out), {cost}, [=, prob = std::move(prob)](Node<T>& self) {
        auto& gc = cn->ensure_grad();
        for (int ni = 0; ni < n; ++ni)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t base = static_cast<std::size_t>(ni) * d * plane + p;
                const T g = self.grad[ni * plane + p];
                const T e = self.value[ni * plane + p];
                for (int k = 0; k < d; ++k) {
                    const std::size_t idx = base + k * plane;
                    gc[idx] -= g * prob[idx] * (static_cast<T>(k) - e);
                }
            }
    });
}

template <typename T>
CostVolumeResult<T> cost_volume_absdiff(const Tensor<T>& left, const Tensor<T>& right, int num_disparities) {
    require_rank(left, 4, "cost_volume left");
    require_rank(right, 4, "cost_volume right");
    if (left.shape() != right.shape()) {
        throw Error(Errc::ShapeMismatch, "cost_volume: " + shape_str(left.shape()) + " vs " + shape_str(right.shape()));
    }
    if (num_disparities < 1) throw Error(Errc::ShapeMismatch, "cost_volume: need at least one disparity");
    const int n = left.dim(0), c = left.dim(1), h = left.dim(2), w = left.dim(3);
    const int nd = num_disparities;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T inv_c = T(1) / static_cast<T>(c);
    auto lv = left.values();
    auto rv = right.values();
    std::vector<T> out(static_cast<std::size_t>(n) * nd * plane, T(0));
    for (int ni = 0; ni < n; ++ni)
        for (int d = 0; d < nd; ++d) {
            T* dst = out.data() + (static_cast<std::size_t>(ni) * nd + d) * plane;
            for (int ci = 0; ci < c; ++ci) {
                const T* l = lv.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
                const T* r = rv.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const int xr = std::max(x - d, 0);
                        dst[y * w + x] += std::abs(l[y * w + x] - r[y * w + xr]);
                    }
            }
            for (std::size_t p = 0; p < plane; ++p) dst[p] *= inv_c;
        }
    std::vector<T> valid(static_cast<std::size_t>(nd) * plane);
    for (int d = 0; d < nd; ++d)
        for (std::size_t p = 0; p < plane; ++p) valid[d * plane + p] = static_cast<int>(p % w) - d >= 0 ? T(1) : T(0);

    Node<T>* ln = raw(left);
    Node<T>* rn = raw(right);
    Tensor<T> cost = make_result<T>(Shape{n, nd, h, w}, std::move(out), {left, right}, [=](Node<T>& self) {
        T* gl = ln->requires_grad ? ln->ensure_grad().data() : nullptr;
        T* gr = rn->requires_grad ? rn->ensure_grad().data() : nullptr;
        for (int ni = 0; ni < n; ++ni)
            for (int d = 0; d < nd; ++d) {
                const T* g = self.grad.data() + (static_cast<std::size_t>(ni) * nd + d) * plane;
                for (int ci = 0; ci < c; ++ci) {
                    const std::size_t off = (static_cast<std::size_t>(ni) * c + ci) * plane;
                    const T* l = ln->value.data() + off;
                    const T* r = rn->value.data() + off;
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) {
                            const int xr = std::max(x - d, 0);
                            const T s = sign(l[y * w + x] - r[y * w + xr]) * g[y * w + x] * inv_c;
                            if (gl) gl[off + y * w + x] += s;
                            if (gr) gr[off + y * w + xr] -= s;
                        }
                }
            }
    });
    return {std::move(cost), Tensor<T>::from(Shape{1, nd, h, w}, std::move(valid))};
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, int factor) {
    require_rank(a, 4, "upsample_bilinear");
    if (factor < 1) throw Error(Errc::ShapeMismatch, "upsample_bilinear: factor < 1");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const int oh = h * factor, ow = w * factor;
    struct Tap {
        int i0, i1;
        T f;
    };
    auto taps = [factor](int out_len, int in_len) {
        std::vector<Tap> t(static_cast<std::size_t>(out_len));
        for (int o = 0; o < out_len; ++o) {
            T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
            src = std::clamp(src, T(0), static_cast<T>(in_len - 1));
            const int i0 = std::min(static_cast<int>(std::floor(src)), in_len - 1);
            const int i1 = std::min(i0 + 1, in_len - 1);
            t[o] = {i0, i1, src - static_cast<T>(i0)};
        }
        return t;
    };
    const auto ty = taps(oh, h);
    const auto tx = taps(ow, w);
    const std::size_t planes = static_cast<std::size_t>(n) * c;
    std::vector<T> out(planes * oh * ow);
    auto av = a.values();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = av.data() + pl * h * w;
        T* dst = out.data() + pl * oh * ow;
        for (int y = 0; y < oh; ++y) {
            const Tap& vy = ty[y];
            for (int x = 0; x < ow; ++x) {
                const Tap& vx = tx[x];
                const T top = (T(1) - vx.f) * src[vy.i0 * w + vx.i0] + vx.f * src[vy.i0 * w + vx.i1];
                const T bot = (T(1) - vx.f) * src[vy.i1 * w + vx.i0] + vx.f * src[vy.i1 * w + vx.i1];
                dst[y * ow + x] = (T(1) - vy.f) * top + vy.f * bot;
            }
        }
    }
    Node<T>* an = raw(a);
    return make_result<T>(Shape{n, c, oh, ow}, std::move(out), {a}, [=](Node<T>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* g = self.grad.data() + pl * oh * ow;
            T* dst = ga.data() + pl * h * w;
            for (int y = 0; y < oh; ++y) {
                const Tap& vy = ty[y];
                for (int x = 0; x < ow; ++x) {
                    const Tap& vx = tx[x];
                    const T gv = g[y * ow + x];
                    dst[vy.i0 * w + vx.i0] += (T(1) - vy.f) * (T(1) - vx.f) * gv;
                    dst[vy.i0 * w + vx.i1] += (T(1) - vy.f) * vx.f * gv;
                    dst[vy.i1 * w + vx.i0] += vy.f * (T(1) - vx.f) * gv;
                    dst[vy.i1 * w + vx.i1] += vy.f * vx.f * gv;
                }
            }
        }
    });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw Error(Errc::ShapeMismatch, "concat_channels: no inputs");
    for (const auto& p : parts) require_rank(p, 4, "concat_channels");
    const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int c_total = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw Error(Errc::ShapeMismatch, "concat_channels: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        }
        c_total += p.dim(1);
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> out(static_cast<std::size_t>(n) * c_total * plane);
    std::vector<Node<T>*> nodes;
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        const int c = p.dim(1);
        for (int ni = 0; ni < n; ++ni)
            std::copy_n(p.values().data() + static_cast<std::size_t>(ni) * c * plane, c * plane,
                        out.data() + (static_cast<std::size_t>(ni) * c_total + off) * plane);
        nodes.push_back(raw(p));
        offsets.push_back(off);
        off += c;
    }
    return make_result<T>(Shape{n, c_total, h, w}, std::move(out), parts, [=](Node<T>& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            Node<T>* pn = nodes[i];
            if (!pn->requires_grad) continue;
            const int c = pn->shape[1];
            auto& gp = pn->ensure_grad();
            for (int ni = 0; ni < n; ++ni) {
                const T* src = self.grad.data() + (static_cast<std::size_t>(ni) * c_total + offsets[i]) * plane;
                T* dst = gp.data() + static_cast<std::size_t>(ni) * c * plane;
                for (std::size_t k = 0; k < c * plane; ++k) dst[k] += src[k];
            }
        }
    });
}

template <typename T>
Tensor<T> box_filter3(const Tensor<T>& a) {
    require_rank(a, 4, "box_filter3");
    const int h = a.dim(2), w = a.dim(3);
    const std::size_t planes = static_cast<std::size_t>(a.dim(0)) * a.dim(1);
    const T ninth = T(1) / T(9);
    std::vector<T> out(a.numel());
    auto av = a.values();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = av.data() + pl * h * w;
        T* dst = out.data() + pl * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                T s = T(0);
                for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = std::clamp(y + dy, 0, h - 1);
                    for (int dx = -1; dx <= 1; ++dx) s += src[yy * w + std::clamp(x + dx, 0, w - 1)];
                }
                dst[y * w + x] = s * ninth;
            }
    }
    Node<T>* an = raw(a);
    return make_result<T>(a.shape(), std::move(out), {a}, [=](Node<T>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* g = self.grad.data() + pl * h * w;
            T* dst = ga.data() + pl * h * w;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const T gv = g[y * w + x] * ninth;
                    for (int dy = -1; dy <= 1; ++dy) {
                        const int yy = std::clamp(y + dy, 0, h - 1);
                        for (int dx = -1; dx <= 1; ++dx) dst[yy * w + std::clamp(x + dx, 0, w - 1)] += gv;
                    }
                }
        }
    });
}

namespace {

// along_x selects the W axis, otherwise H.
template <typename T>
Tensor<T> forward_diff(const Tensor<T>& a, bool along_x) {
    require_rank(a, 4, along_x ? "diff_x" : "diff_y");
    const int h = a.dim(2), w = a.dim(3);
    const std::size_t planes = static_cast<std::size_t>(a.dim(0)) * a.dim(1);
    const int step = along_x ? 1 : w;
    auto has_next = [=](int y, int x) { return along_x ? x + 1 < w : y + 1 < h; };
    std::vector<T> out(a.numel(), T(0));
    auto av = a.values();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = av.data() + pl * h * w;
        T* dst = out.data() + pl * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (has_next(y, x)) dst[y * w + x] = src[y * w + x + step] - src[y * w + x];
    }
    Node<T>* an = raw(a);
    return make_result<T>(a.shape(), std::move(out), {a}, [=](Node<T>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
            const T* g = self.grad.data() + pl * h * w;
            T* dst = ga.data() + pl * h * w;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (has_next(y, x)) {
                        dst[y * w + x + step] += g[y * w + x];
                        dst[y * w + x] -= g[y * w + x];
                    }
        }
    });
}

}  // namespace

template <typename T>
Tensor<T> diff_x(const Tensor<T>& a) {
    return forward_diff(a, true);
}

template <typename T>
Tensor<T> diff_y(const Tensor<T>& a) {
    return forward_diff(a, false);
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& a) {
    require_rank(a, 4, "flip_horizontal");
    const int w = a.dim(3);
    const std::size_t rows = a.numel() / static_cast<std::size_t>(std::max(w, 1));
    std::vector<T> out(a.numel());
    auto av = a.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (int x = 0; x < w; ++x) out[r * w + x] = av[r * w + (w - 1 - x)];
    Node<T>* an = raw(a);
    return make_result<T>(a.shape(), std::move(out), {a}, [=](Node<T>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (int x = 0; x < w; ++x) ga[r * w + (w - 1 - x)] += self.grad[r * w + x];
    });
}

#define COT_INSTANTIATE_OPS(T)                                                                         \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> minimum(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> maximum(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> add(const Tensor<T>&, T);                                                       \
    template Tensor<T> mul(const Tensor<T>&, T);                                                       \
    template Tensor<T> rsub(T, const Tensor<T>&);                                                      \
    template Tensor<T> div(const Tensor<T>&, T);                                                       \
    template Tensor<T> minimum(const Tensor<T>&, T);                                                   \
    template Tensor<T> maximum(const Tensor<T>&, T);                                                   \
    template Tensor<T> greater(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> greater(const Tensor<T>&, T);                                                   \
    template Tensor<T> neg(const Tensor<T>&);                                                          \
    template Tensor<T> abs(const Tensor<T>&);                                                          \
    template Tensor<T> exp(const Tensor<T>&);                                                          \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                \
    template Tensor<T> clamp(const Tensor<T>&, T, T);                                                  \
    template Tensor<T> stop_gradient(const Tensor<T>&);                                                \
    template Tensor<T> sum(const Tensor<T>&);                                                          \
    template Tensor<T> mean(const Tensor<T>&);                                                         \
    template Tensor<T> sum(const Tensor<T>&, int, bool);                                               \
    template Tensor<T> mean(const Tensor<T>&, int, bool);                                              \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);         \
    template WarpResult<T> warp_horizontal(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> soft_argmin(const Tensor<T>&);                                                  \
    template CostVolumeResult<T> cost_volume_absdiff(const Tensor<T>&, const Tensor<T>&, int);         \
    template Tensor<T> upsample_bilinear(const Tensor<T>&, int);                                       \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> box_filter3(const Tensor<T>&);                                                  \
    template Tensor<T> diff_x(const Tensor<T>&);                                                       \
    template Tensor<T> diff_y(const Tensor<T>&);                                                       \
    template Tensor<T> flip_horizontal(const Tensor<T>&);

COT_INSTANTIATE_OPS(float)
COT_INSTANTIATE_OPS(double)

#undef COT_INSTANTIATE_OPS

}  // namespace cot
