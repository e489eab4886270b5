#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "advsr/autodiff.hpp"

namespace advsr::ad {
namespace {

using Index = std::int64_t;

[[noreturn]] void reject(std::string_view op, const std::string& why)
{
    throw std::invalid_argument(std::string(op) + ": " + why);
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        reject(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void accumulate(std::vector<double>& dst, std::span<const double> src)
{
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

struct ConvGeometry {
    Index n, c, h, w;      // input
    Index o, k;            // kernel
    Index stride, pad;
    Index hp, wp;          // padded input
    Index ho, wo;          // output
};

// Zero-padded copy of an NCHW tensor.
std::vector<double> pad_input(std::span<const double> x, const ConvGeometry& g)
{
    std::vector<double> out(static_cast<std::size_t>(g.n * g.c * g.hp * g.wp), 0.0);
#pragma omp parallel for schedule(static)
    for (Index plane = 0; plane < g.n * g.c; ++plane) {
        const double* src = x.data() + plane * g.h * g.w;
        double* dst = out.data() + plane * g.hp * g.wp;
        for (Index y = 0; y < g.h; ++y) {
            std::copy_n(src + y * g.w, g.w, dst + (y + g.pad) * g.wp + g.pad);
        }
    }
    return out;
}

// 4-tap Catmull-Rom weights mapping a 2x output coordinate to input samples.
struct CubicTaps {
    std::array<Index, 4> index;
    std::array<double, 4> weight;
};

double catmull_rom(double d)
{
    constexpr double a = -0.5;
    d = std::abs(d);
    if (d <= 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
    if (d < 2.0) return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a;
    return 0.0;
}

std::vector<CubicTaps> upsample_taps(Index in)
{
    std::vector<CubicTaps> taps(static_cast<std::size_t>(2 * in));
    for (Index o = 0; o < 2 * in; ++o) {
        const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        const double base = std::floor(src);
        const double t = src - base;
        CubicTaps& tp = taps[static_cast<std::size_t>(o)];
        for (Index j = 0; j < 4; ++j) {
            const Index idx = static_cast<Index>(base) - 1 + j;
            tp.index[j] = std::clamp<Index>(idx, 0, in - 1);
            tp.weight[j] = catmull_rom(t - static_cast<double>(j - 1));
        }
    }
    return taps;
}

}  // namespace

namespace {

constexpr Index kLane = 8;

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

using Vec8 = double __attribute__((vector_size(64)));

inline Vec8 load8(const double* p)
{
    Vec8 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(double* p, Vec8 v) { std::memcpy(p, &v, sizeof v); }

// out[0..8V) = bias + sum_c sum_ky sum_kx w[c][ky][kx] * in[c][ky][kx + j]
// `in` points at the top-left input sample of the output tile.
template <int V, int K>
inline void correlate_tile(const double* in, Index channels, Index plane_stride, Index row_stride, const double* w,
                           Index k_runtime, double bias, double* out)
{
    const Index k = K > 0 ? K : k_runtime;
    Vec8 acc[V];
    for (int v = 0; v < V; ++v) acc[v] = Vec8{} + bias;
    for (Index c = 0; c < channels; ++c) {
        const double* plane = in + c * plane_stride;
        const double* wc = w + c * k * k;
        for (Index ky = 0; ky < k; ++ky) {
            const double* row = plane + ky * row_stride;
            for (Index kx = 0; kx < k; ++kx) {
                const double wv = wc[ky * k + kx];
                for (int v = 0; v < V; ++v) acc[v] += wv * load8(row + kx + 8 * v);
            }
        }
    }
    for (int v = 0; v < V; ++v) store8(out + 8 * v, acc[v]);
}

template <int K>
void correlate_row(const double* base, Index channels, Index plane_stride, Index row_stride, const double* w, Index k,
                   double b, double* row, Index wide)
{
    Index x0 = 0;
    for (; x0 + 32 <= wide; x0 += 32) correlate_tile<4, K>(base + x0, channels, plane_stride, row_stride, w, k, b, row + x0);
    for (; x0 + 16 <= wide; x0 += 16) correlate_tile<2, K>(base + x0, channels, plane_stride, row_stride, w, k, b, row + x0);
    for (; x0 < wide; x0 += 8) correlate_tile<1, K>(base + x0, channels, plane_stride, row_stride, w, k, b, row + x0);
}

// Stride-1 correlation of one sample. `in` holds `channels` planes of
// `rows` x `row_stride`, already padded so every output tile reads in bounds
// (row_stride >= round_up(wo, 8) + k - 1). Weights are [out][in][k][k].
void correlate_sample(const double* in, Index channels, Index rows, Index row_stride, const double* weights,
                      const double* bias, Index out_channels, Index k, double* out, Index ho, Index wo)
{
    const Index plane_stride = rows * row_stride;
    const Index wide = round_up(wo, kLane);
    std::vector<double> row(static_cast<std::size_t>(wide));
    for (Index o = 0; o < out_channels; ++o) {
        const double* w = weights + o * channels * k * k;
        const double b = bias ? bias[o] : 0.0;
        for (Index oy = 0; oy < ho; ++oy) {
            const double* base = in + oy * row_stride;
            switch (k) {
            case 3: correlate_row<3>(base, channels, plane_stride, row_stride, w, k, b, row.data(), wide); break;
            case 5: correlate_row<5>(base, channels, plane_stride, row_stride, w, k, b, row.data(), wide); break;
            default: correlate_row<0>(base, channels, plane_stride, row_stride, w, k, b, row.data(), wide); break;
            }
            std::copy_n(row.data(), wo, out + (o * ho + oy) * wo);
        }
    }
}

// Copies C planes of h x w into zeroed planes with `pad` border and a row
// stride wide enough for correlate_sample.
std::vector<double> pad_planes(const double* src, Index planes, Index h, Index w, Index pad, Index rows, Index stride)
{
    std::vector<double> out(static_cast<std::size_t>(planes * rows * stride), 0.0);
    for (Index p = 0; p < planes; ++p) {
        for (Index y = 0; y < h; ++y) {
            std::copy_n(src + (p * h + y) * w, w, out.data() + p * rows * stride + (y + pad) * stride + pad);
        }
    }
    return out;
}

// gk[ky][kx] += sum_y sum_x g[y][x] * in[y + ky][x + kx] over one (o, c)
// pair and all samples. Gradient rows are zero beyond wo so tile overrun is
// harmless. Lane sums are reduced in a fixed order.
template <int K>
void weight_grad_pair(const double* g, Index g_row_stride, Index g_sample_stride, const double* x, Index x_row_stride,
                      Index x_sample_stride, Index samples, Index ho, Index wide, Index k_runtime, double* gk)
{
    const Index k = K > 0 ? K : k_runtime;
    constexpr int kMaxTaps = 8;
    if (k > kMaxTaps) {
        for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
                double s = 0.0;
                for (Index n = 0; n < samples; ++n)
                    for (Index oy = 0; oy < ho; ++oy) {
                        const double* grow = g + n * g_sample_stride + oy * g_row_stride;
                        const double* xrow = x + n * x_sample_stride + (oy + ky) * x_row_stride + kx;
                        for (Index j = 0; j < wide; ++j) s += grow[j] * xrow[j];
                    }
                gk[ky * k + kx] += s;
            }
        return;
    }
    for (Index ky = 0; ky < k; ++ky) {
        Vec8 acc[kMaxTaps] = {};
        for (Index n = 0; n < samples; ++n) {
            for (Index oy = 0; oy < ho; ++oy) {
                const double* grow = g + n * g_sample_stride + oy * g_row_stride;
                const double* xrow = x + n * x_sample_stride + (oy + ky) * x_row_stride;
                for (Index x0 = 0; x0 < wide; x0 += kLane) {
                    const Vec8 gt = load8(grow + x0);
                    for (Index kx = 0; kx < k; ++kx) acc[kx] += gt * load8(xrow + x0 + kx);
                }
            }
        }
        for (Index kx = 0; kx < k; ++kx) {
            double s = 0.0;
            for (int j = 0; j < kLane; ++j) s += acc[kx][j];
            gk[ky * k + kx] += s;
        }
    }
}

Var conv2d_stride1(Tape& tape, Var input, Var kernel, Var bias, const ConvGeometry& g)
{
    const Tensor& x = tape.value(input);
    const Tensor& k = tape.value(kernel);
    const Tensor& b = tape.value(bias);

    // Forward input layout: padded planes with a lane-aligned row stride.
    const Index wide = round_up(g.wo, kLane);
    const Index x_stride = wide + g.k - 1;
    const Index x_rows = g.hp;
    auto padded = std::make_shared<std::vector<double>>(
        pad_planes(x.data().data(), g.n * g.c, g.h, g.w, g.pad, x_rows, x_stride));

    Tensor out(Shape{static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.o), static_cast<std::size_t>(g.ho),
                     static_cast<std::size_t>(g.wo)});
    {
        const double* xp = padded->data();
        const double* kw = k.data().data();
        const double* bw = b.data().data();
        double* y = out.data().data();
#pragma omp parallel for schedule(static)
        for (Index n = 0; n < g.n; ++n) {
            correlate_sample(xp + n * g.c * x_rows * x_stride, g.c, x_rows, x_stride, kw, bw, g.o, g.k,
                             y + n * g.o * g.ho * g.wo, g.ho, g.wo);
        }
    }

    return tape.record("conv2d", std::move(out), {input, kernel, bias},
                       [input, kernel, bias, g, padded, x_rows, x_stride, wide](Tape& t, std::span<const double> gout) {
        const double* go = gout.data();
        if (t.needs_grad(input)) {
            // Input gradient is the full correlation of the output gradient
            // with the spatially flipped, channel-transposed kernel.
            const double* kw = t.value(kernel).data().data();
            std::vector<double> flipped(static_cast<std::size_t>(g.c * g.o * g.k * g.k));
            for (Index o = 0; o < g.o; ++o)
                for (Index c = 0; c < g.c; ++c)
                    for (Index ky = 0; ky < g.k; ++ky)
                        for (Index kx = 0; kx < g.k; ++kx)
                            flipped[static_cast<std::size_t>(((c * g.o + o) * g.k + (g.k - 1 - ky)) * g.k + (g.k - 1 - kx))] =
                                kw[((o * g.c + c) * g.k + ky) * g.k + kx];
            const Index back_pad = g.k - 1 - g.pad;
            const Index g_rows = g.ho + 2 * back_pad;
            const Index g_stride = round_up(g.w, kLane) + g.k - 1;
            const std::vector<double> gpad = pad_planes(go, g.n * g.o, g.ho, g.wo, back_pad, g_rows, g_stride);
            std::vector<double> gx(static_cast<std::size_t>(g.n * g.c * g.h * g.w));
#pragma omp parallel for schedule(static)
            for (Index n = 0; n < g.n; ++n) {
                correlate_sample(gpad.data() + n * g.o * g_rows * g_stride, g.o, g_rows, g_stride, flipped.data(), nullptr,
                                 g.c, g.k, gx.data() + n * g.c * g.h * g.w, g.h, g.w);
            }
            accumulate(t.adjoint(input), gx);
        }
        if (t.needs_grad(kernel)) {
            auto& gk = t.adjoint(kernel);
            // Output gradient with lane-aligned, zero-filled rows.
            const std::vector<double> gwide = pad_planes(go, g.n * g.o, g.ho, g.wo, 0, g.ho, wide);
            const double* xp = padded->data();
#pragma omp parallel for schedule(static)
            for (Index oc = 0; oc < g.o * g.c; ++oc) {
                const Index o = oc / g.c;
                const Index c = oc % g.c;
                const double* gsrc = gwide.data() + o * g.ho * wide;
                const double* xsrc = xp + c * x_rows * x_stride;
                double* dst = gk.data() + oc * g.k * g.k;
                const Index gs = g.o * g.ho * wide, xs = g.c * x_rows * x_stride;
                switch (g.k) {
                case 3: weight_grad_pair<3>(gsrc, wide, gs, xsrc, x_stride, xs, g.n, g.ho, wide, g.k, dst); break;
                case 5: weight_grad_pair<5>(gsrc, wide, gs, xsrc, x_stride, xs, g.n, g.ho, wide, g.k, dst); break;
                default: weight_grad_pair<0>(gsrc, wide, gs, xsrc, x_stride, xs, g.n, g.ho, wide, g.k, dst); break;
                }
            }
        }
        if (t.needs_grad(bias)) {
            auto& gb = t.adjoint(bias);
            for (Index o = 0; o < g.o; ++o) {
                double s = 0.0;
                for (Index n = 0; n < g.n; ++n) {
                    const double* plane = go + (n * g.o + o) * g.ho * g.wo;
                    for (Index i = 0; i < g.ho * g.wo; ++i) s += plane[i];
                }
                gb[static_cast<std::size_t>(o)] += s;
            }
        }
    });
}

}  // namespace

Var conv2d(Tape& tape, Var input, Var kernel, Var bias, int stride, int padding)
{
    const Tensor& x = tape.value(input);
    const Tensor& k = tape.value(kernel);
    const Tensor& b = tape.value(bias);
    if (x.rank() != 4 || k.rank() != 4 || k.dim(2) != k.dim(3)) {
        reject("conv2d", "expected NCHW input and OIKK kernel, got " + shape_str(x.shape()) + " and " +
                             shape_str(k.shape()));
    }
    if (x.dim(1) != k.dim(1)) {
        reject("conv2d", "input channels of " + shape_str(x.shape()) + " do not match kernel " +
                             shape_str(k.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != k.dim(0)) {
        reject("conv2d", "bias " + shape_str(b.shape()) + " does not match kernel " + shape_str(k.shape()));
    }
    if (stride < 1 || padding < 0) reject("conv2d", "stride must be positive and padding non-negative");

    ConvGeometry g{};
    g.n = static_cast<Index>(x.dim(0));
    g.c = static_cast<Index>(x.dim(1));
    g.h = static_cast<Index>(x.dim(2));
    g.w = static_cast<Index>(x.dim(3));
    g.o = static_cast<Index>(k.dim(0));
    g.k = static_cast<Index>(k.dim(2));
    g.stride = stride;
    g.pad = padding;
    g.hp = g.h + 2 * g.pad;
    g.wp = g.w + 2 * g.pad;
    if (g.hp < g.k || g.wp < g.k) {
        reject("conv2d", "padded input " + shape_str(x.shape()) + " smaller than kernel " + shape_str(k.shape()));
    }
    g.ho = (g.hp - g.k) / g.stride + 1;
    g.wo = (g.wp - g.k) / g.stride + 1;
    if (g.stride == 1 && g.pad <= g.k - 1) return conv2d_stride1(tape, input, kernel, bias, g);

    auto padded = std::make_shared<std::vector<double>>(pad_input(x.data(), g));
    Tensor out(Shape{x.dim(0), k.dim(0), static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
    {
        const double* xp = padded->data();
        const double* kw = k.data().data();
        const double* bw = b.data().data();
        double* y = out.data().data();
#pragma omp parallel for schedule(static)
        for (Index no = 0; no < g.n * g.o; ++no) {
            const Index n = no / g.o;
            const Index o = no % g.o;
            double* dst = y + no * g.ho * g.wo;
            std::fill_n(dst, g.ho * g.wo, bw[o]);
            for (Index c = 0; c < g.c; ++c) {
                const double* plane = xp + (n * g.c + c) * g.hp * g.wp;
                const double* wk = kw + (o * g.c + c) * g.k * g.k;
                for (Index ky = 0; ky < g.k; ++ky) {
                    for (Index kx = 0; kx < g.k; ++kx) {
                        const double wv = wk[ky * g.k + kx];
                        for (Index oy = 0; oy < g.ho; ++oy) {
                            const double* src = plane + (oy * g.stride + ky) * g.wp + kx;
                            double* row = dst + oy * g.wo;
                            if (g.stride == 1) {
                                for (Index ox = 0; ox < g.wo; ++ox) row[ox] += wv * src[ox];
                            } else {
                                for (Index ox = 0; ox < g.wo; ++ox) row[ox] += wv * src[ox * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    return tape.record("conv2d", std::move(out), {input, kernel, bias},
                       [input, kernel, bias, g, padded](Tape& t, std::span<const double> gout) {
        const double* go = gout.data();
        if (t.needs_grad(input)) {
            const double* kw = t.value(kernel).data().data();
            std::vector<double> gpad(static_cast<std::size_t>(g.n * g.c * g.hp * g.wp), 0.0);
#pragma omp parallel for schedule(static)
            for (Index nc = 0; nc < g.n * g.c; ++nc) {
                const Index n = nc / g.c;
                const Index c = nc % g.c;
                double* plane = gpad.data() + nc * g.hp * g.wp;
                for (Index o = 0; o < g.o; ++o) {
                    const double* src = go + (n * g.o + o) * g.ho * g.wo;
                    const double* wk = kw + (o * g.c + c) * g.k * g.k;
                    for (Index ky = 0; ky < g.k; ++ky) {
                        for (Index kx = 0; kx < g.k; ++kx) {
                            const double wv = wk[ky * g.k + kx];
                            for (Index oy = 0; oy < g.ho; ++oy) {
                                double* dst = plane + (oy * g.stride + ky) * g.wp + kx;
                                const double* row = src + oy * g.wo;
                                if (g.stride == 1) {
                                    for (Index ox = 0; ox < g.wo; ++ox) dst[ox] += wv * row[ox];
                                } else {
                                    for (Index ox = 0; ox < g.wo; ++ox) dst[ox * g.stride] += wv * row[ox];
                                }
                            }
                        }
                    }
                }
            }
            auto& gx = t.adjoint(input);
            for (Index nc = 0; nc < g.n * g.c; ++nc) {
                const double* plane = gpad.data() + nc * g.hp * g.wp;
                double* dst = gx.data() + nc * g.h * g.w;
                for (Index y = 0; y < g.h; ++y) {
                    const double* src = plane + (y + g.pad) * g.wp + g.pad;
                    for (Index xx = 0; xx < g.w; ++xx) dst[y * g.w + xx] += src[xx];
                }
            }
        }
        if (t.needs_grad(kernel)) {
            auto& gk = t.adjoint(kernel);
            const double* xp = padded->data();
#pragma omp parallel for schedule(static)
            for (Index oc = 0; oc < g.o * g.c; ++oc) {
                const Index o = oc / g.c;
                const Index c = oc % g.c;
                // Row accumulator keeps the inner loop elementwise; the final
                // horizontal sum runs in a fixed order.
                std::vector<double> acc(static_cast<std::size_t>(g.wo));
                for (Index ky = 0; ky < g.k; ++ky) {
                    for (Index kx = 0; kx < g.k; ++kx) {
                        std::fill(acc.begin(), acc.end(), 0.0);
                        for (Index n = 0; n < g.n; ++n) {
                            const double* gplane = go + (n * g.o + o) * g.ho * g.wo;
                            const double* xplane = xp + (n * g.c + c) * g.hp * g.wp;
                            for (Index oy = 0; oy < g.ho; ++oy) {
                                const double* grow = gplane + oy * g.wo;
                                const double* xrow = xplane + (oy * g.stride + ky) * g.wp + kx;
                                if (g.stride == 1) {
                                    for (Index ox = 0; ox < g.wo; ++ox) acc[ox] += grow[ox] * xrow[ox];
                                } else {
                                    for (Index ox = 0; ox < g.wo; ++ox) acc[ox] += grow[ox] * xrow[ox * g.stride];
                                }
                            }
                        }
                        double s = 0.0;
                        for (double v : acc) s += v;
                        gk[static_cast<std::size_t>((oc * g.k + ky) * g.k + kx)] += s;
                    }
                }
            }
        }
        if (t.needs_grad(bias)) {
            auto& gb = t.adjoint(bias);
            for (Index o = 0; o < g.o; ++o) {
                double s = 0.0;
                for (Index n = 0; n < g.n; ++n) {
                    const double* plane = go + (n * g.o + o) * g.ho * g.wo;
                    for (Index i = 0; i < g.ho * g.wo; ++i) s += plane[i];
                }
                gb[static_cast<std::size_t>(o)] += s;
            }
        }
    });
}

Var relu(Tape& tape, Var x)
{
    const Tensor& in = tape.value(x);
    Tensor out(in.shape());
    auto src = in.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
    return tape.record("relu", std::move(out), {x}, [x](Tape& t, std::span<const double> gout) {
        auto xin = t.value(x).data();
        auto& gx = t.adjoint(x);
        for (std::size_t i = 0; i < gout.size(); ++i) {
            if (xin[i] > 0.0) gx[i] += gout[i];
        }
    });
}

Var maxpool2x2(Tape& tape, Var x)
{
    const Tensor& in = tape.value(x);
    if (in.rank() != 4) reject("maxpool2x2", "expected NCHW input, got " + shape_str(in.shape()));
    const std::size_t h = in.dim(2), w = in.dim(3);
    if (h % 2 != 0 || w % 2 != 0) reject("maxpool2x2", "spatial dims must be even, got " + shape_str(in.shape()));
    const std::size_t planes = in.dim(0) * in.dim(1);
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor out(Shape{in.dim(0), in.dim(1), ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    auto src = in.data();
    auto dst = out.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::size_t base = p * h * w + 2 * oy * w + 2 * ox;
                const std::array<std::size_t, 4> cand{base, base + 1, base + w, base + w + 1};
                std::size_t best = cand[0];
                for (std::size_t j = 1; j < 4; ++j) {
                    if (src[cand[j]] > src[best]) best = cand[j];
                }
                const std::size_t oi = p * ho * wo + oy * wo + ox;
                dst[oi] = src[best];
                (*argmax)[oi] = best;
            }
        }
    }
    return tape.record("maxpool2x2", std::move(out), {x}, [x, argmax](Tape& t, std::span<const double> gout) {
        auto& gx = t.adjoint(x);
        for (std::size_t i = 0; i < gout.size(); ++i) gx[(*argmax)[i]] += gout[i];
    });
}

Var dense(Tape& tape, Var input, Var weight, Var bias)
{
    const Tensor& x = tape.value(input);
    const Tensor& wt = tape.value(weight);
    const Tensor& b = tape.value(bias);
    if (x.rank() != 2 || wt.rank() != 2 || x.dim(1) != wt.dim(0)) {
        reject("dense", "inner dimensions disagree: input " + shape_str(x.shape()) + ", weight " +
                            shape_str(wt.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != wt.dim(1)) {
        reject("dense", "bias " + shape_str(b.shape()) + " does not match weight " + shape_str(wt.shape()));
    }
    const std::size_t n = x.dim(0), d = x.dim(1), m = wt.dim(1);
    Tensor out(Shape{n, m});
    {
        auto xs = x.data();
        auto ws = wt.data();
        auto bs = b.data();
        auto ys = out.data();
        for (std::size_t i = 0; i < n; ++i) {
            double* row = ys.data() + i * m;
            std::copy(bs.begin(), bs.end(), row);
            for (std::size_t j = 0; j < d; ++j) {
                const double xv = xs[i * d + j];
                const double* wrow = ws.data() + j * m;
                for (std::size_t c = 0; c < m; ++c) row[c] += xv * wrow[c];
            }
        }
    }
    return tape.record("dense", std::move(out), {input, weight, bias},
                       [input, weight, bias, n, d, m](Tape& t, std::span<const double> gout) {
        if (t.needs_grad(input)) {
            auto ws = t.value(weight).data();
            auto& gx = t.adjoint(input);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < m; ++c) s += gout[i * m + c] * ws[j * m + c];
                    gx[i * d + j] += s;
                }
            }
        }
        if (t.needs_grad(weight)) {
            auto xs = t.value(input).data();
            auto& gw = t.adjoint(weight);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double xv = xs[i * d + j];
                    for (std::size_t c = 0; c < m; ++c) gw[j * m + c] += xv * gout[i * m + c];
                }
            }
        }
        if (t.needs_grad(bias)) {
            auto& gb = t.adjoint(bias);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < m; ++c) gb[c] += gout[i * m + c];
            }
        }
    });
}

Var bicubic_upsample2x(Tape& tape, Var x)
{
    const Tensor& in = tape.value(x);
    if (in.rank() != 4) reject("bicubic_upsample2x", "expected NCHW input, got " + shape_str(in.shape()));
    if (in.dim(2) < 2 || in.dim(3) < 2) {
        reject("bicubic_upsample2x", "spatial dims must be >= 2, got " + shape_str(in.shape()));
    }
    const Index planes = static_cast<Index>(in.dim(0) * in.dim(1));
    const Index h = static_cast<Index>(in.dim(2));
    const Index w = static_cast<Index>(in.dim(3));
    auto rows = std::make_shared<std::vector<CubicTaps>>(upsample_taps(h));
    auto cols = std::make_shared<std::vector<CubicTaps>>(upsample_taps(w));

    Tensor out(Shape{in.dim(0), in.dim(1), static_cast<std::size_t>(2 * h), static_cast<std::size_t>(2 * w)});
    {
        const double* src = in.data().data();
        double* dst = out.data().data();
#pragma omp parallel for schedule(static)
        for (Index p = 0; p < planes; ++p) {
            std::vector<double> tmp(static_cast<std::size_t>(h * 2 * w));
            const double* plane = src + p * h * w;
            for (Index y = 0; y < h; ++y) {
                for (Index ox = 0; ox < 2 * w; ++ox) {
                    const CubicTaps& tp = (*cols)[static_cast<std::size_t>(ox)];
                    double s = 0.0;
                    for (int j = 0; j < 4; ++j) s += tp.weight[j] * plane[y * w + tp.index[j]];
                    tmp[static_cast<std::size_t>(y * 2 * w + ox)] = s;
                }
            }
            double* oplane = dst + p * 4 * h * w;
            for (Index oy = 0; oy < 2 * h; ++oy) {
                const CubicTaps& tp = (*rows)[static_cast<std::size_t>(oy)];
                for (Index ox = 0; ox < 2 * w; ++ox) {
                    double s = 0.0;
                    for (int j = 0; j < 4; ++j) s += tp.weight[j] * tmp[static_cast<std::size_t>(tp.index[j] * 2 * w + ox)];
                    oplane[oy * 2 * w + ox] = s;
                }
            }
        }
    }
    return tape.record("bicubic_upsample2x", std::move(out), {x},
                       [x, rows, cols, planes, h, w](Tape& t, std::span<const double> gout) {
        auto& gx = t.adjoint(x);
#pragma omp parallel for schedule(static)
        for (Index p = 0; p < planes; ++p) {
            std::vector<double> gtmp(static_cast<std::size_t>(h * 2 * w), 0.0);
            const double* gplane = gout.data() + p * 4 * h * w;
            for (Index oy = 0; oy < 2 * h; ++oy) {
                const CubicTaps& tp = (*rows)[static_cast<std::size_t>(oy)];
                for (int j = 0; j < 4; ++j) {
                    double* trow = gtmp.data() + tp.index[j] * 2 * w;
                    for (Index ox = 0; ox < 2 * w; ++ox) trow[ox] += tp.weight[j] * gplane[oy * 2 * w + ox];
                }
            }
            double* dst = gx.data() + p * h * w;
            for (Index y = 0; y < h; ++y) {
                for (Index ox = 0; ox < 2 * w; ++ox) {
                    const CubicTaps& tp = (*cols)[static_cast<std::size_t>(ox)];
                    const double gv = gtmp[static_cast<std::size_t>(y * 2 * w + ox)];
                    for (int j = 0; j < 4; ++j) dst[y * w + tp.index[j]] += tp.weight[j] * gv;
                }
            }
        }
    });
}

Var softmax(Tape& tape, Var logits)
{
    const Tensor& z = tape.value(logits);
    if (z.rank() != 2 || z.dim(1) < 2) reject("softmax", "expected NxC logits with C >= 2, got " + shape_str(z.shape()));
    const std::size_t n = z.dim(0), c = z.dim(1);
    Tensor out(z.shape());
    auto zs = z.data();
    auto ps = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = zs.data() + i * c;
        double* prow = ps.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            total += prow[j];
        }
        for (std::size_t j = 0; j < c; ++j) prow[j] /= total;
    }
    auto probs = std::make_shared<std::vector<double>>(ps.begin(), ps.end());
    return tape.record("softmax", std::move(out), {logits}, [logits, probs, n, c](Tape& t, std::span<const double> gout) {
        auto& gz = t.adjoint(logits);
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = probs->data() + i * c;
            const double* g = gout.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * p[j];
            for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += p[j] * (g[j] - dot);
        }
    });
}

Var ce_soft_labels(Tape& tape, Var probs, Var labels)
{
    const Tensor& p = tape.value(probs);
    const Tensor& y = tape.value(labels);
    if (p.rank() != 2 || y.rank() != 2 || p.dim(0) != y.dim(0)) {
        reject("ce_soft_labels", "row count mismatch: probs " + shape_str(p.shape()) + ", labels " + shape_str(y.shape()));
    }
    require_same_shape("ce_soft_labels", p, y);
    const std::size_t n = p.dim(0);
    const double inv_n = 1.0 / static_cast<double>(n);
    auto ps = p.data();
    auto ys = y.data();
    double total = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) total -= ys[i] * std::log(ps[i] + kLogEpsilon);
    return tape.record("ce_soft_labels", Tensor::scalar(total * inv_n), {probs, labels},
                       [probs, labels, inv_n](Tape& t, std::span<const double> gout) {
        const double g = gout[0] * inv_n;
        auto ps = t.value(probs).data();
        auto ys = t.value(labels).data();
        if (t.needs_grad(probs)) {
            auto& gp = t.adjoint(probs);
            for (std::size_t i = 0; i < ps.size(); ++i) gp[i] -= g * ys[i] / (ps[i] + kLogEpsilon);
        }
        if (t.needs_grad(labels)) {
            auto& gy = t.adjoint(labels);
            for (std::size_t i = 0; i < ps.size(); ++i) gy[i] -= g * std::log(ps[i] + kLogEpsilon);
        }
    });
}

Var l1_mean(Tape& tape, Var a, Var b)
{
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape("l1_mean", av, bv);
    if (av.numel() == 0) reject("l1_mean", "empty operands");
    const double inv = 1.0 / static_cast<double>(av.numel());
    auto as = av.data();
    auto bs = bv.data();
    double total = 0.0;
    for (std::size_t i = 0; i < as.size(); ++i) total += std::abs(as[i] - bs[i]);
    return tape.record("l1_mean", Tensor::scalar(total * inv), {a, b}, [a, b, inv](Tape& t, std::span<const double> gout) {
        const double g = gout[0] * inv;
        auto as = t.value(a).data();
        auto bs = t.value(b).data();
        const bool ga = t.needs_grad(a);
        const bool gb = t.needs_grad(b);
        std::vector<double>* da = ga ? &t.adjoint(a) : nullptr;
        std::vector<double>* db = gb ? &t.adjoint(b) : nullptr;
        for (std::size_t i = 0; i < as.size(); ++i) {
            const double diff = as[i] - bs[i];
            const double s = diff > 0.0 ? g : (diff < 0.0 ? -g : 0.0);
            if (da) (*da)[i] += s;
            if (db) (*db)[i] -= s;
        }
    });
}

Var add(Tape& tape, Var a, Var b)
{
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape("add", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> gout) {
        if (t.needs_grad(a)) accumulate(t.adjoint(a), gout);
        if (t.needs_grad(b)) accumulate(t.adjoint(b), gout);
    });
}

Var scale(Tape& tape, Var x, double factor)
{
    const Tensor& in = tape.value(x);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = in[i] * factor;
    return tape.record("scale", std::move(out), {x}, [x, factor](Tape& t, std::span<const double> gout) {
        auto& gx = t.adjoint(x);
        for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i] * factor;
    });
}

Var sum(Tape& tape, Var x)
{
    double total = 0.0;
    for (double v : tape.value(x).data()) total += v;
    return tape.record("sum", Tensor::scalar(total), {x}, [x](Tape& t, std::span<const double> gout) {
        auto& gx = t.adjoint(x);
        for (double& g : gx) g += gout[0];
    });
}

Var square(Tape& tape, Var x)
{
    const Tensor& in = tape.value(x);
    Tensor out(in.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = in[i] * in[i];
    return tape.record("square", std::move(out), {x}, [x](Tape& t, std::span<const double> gout) {
        auto xin = t.value(x).data();
        auto& gx = t.adjoint(x);
        for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += 2.0 * xin[i] * gout[i];
    });
}

Var reshape(Tape& tape, Var x, Shape shape)
{
    const Tensor& in = tape.value(x);
    if (shape_numel(shape) != in.numel()) {
        reject("reshape", "cannot view " + shape_str(in.shape()) + " as " + shape_str(shape));
    }
    return tape.record("reshape", in.reshaped(std::move(shape)), {x}, [x](Tape& t, std::span<const double> gout) {
        accumulate(t.adjoint(x), gout);
    });
}

}  // namespace advsr::ad
