#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "efe/tensor.hpp"
#include "tensor_detail.hpp"

namespace efe {

namespace {

using detail::emit;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
    std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
    std::size_t rows() const { return c * k * k; }
    std::size_t plane() const { return oh * ow; }
    std::size_t cols() const { return n * plane(); }
};

// cols is (C*K*K) x (N*OH*OW), row-major.
void im2col(const ConvGeometry& g, std::span<const double> x, std::vector<double>& cols) {
    cols.assign(g.rows() * g.cols(), 0.0);
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = cols.data() + ((c * g.k + ky) * g.k + kx) * ncols;
                for (std::size_t b = 0; b < g.n; ++b) {
                    const double* img = x.data() + (b * g.c + c) * g.h * g.w;
                    double* dst = row + b * g.plane();
                    for (std::size_t oy = 0; oy < g.oh; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                        const double* src = img + static_cast<std::size_t>(iy) * g.w;
                        for (std::size_t ox = 0; ox < g.ow; ++ox) {
                            const long ix =
                                static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                            dst[oy * g.ow + ox] = src[ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const std::vector<double>& cols, std::span<double> gx) {
    const std::size_t ncols = g.cols();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = cols.data() + ((c * g.k + ky) * g.k + kx) * ncols;
                for (std::size_t b = 0; b < g.n; ++b) {
                    double* img = gx.data() + (b * g.c + c) * g.h * g.w;
                    const double* src = row + b * g.plane();
                    for (std::size_t oy = 0; oy < g.oh; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                        double* dst = img + static_cast<std::size_t>(iy) * g.w;
                        for (std::size_t ox = 0; ox < g.ow; ++ox) {
                            const long ix =
                                static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                            dst[ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

// Direct stride-1 convolution. Each zero-padded input plane is addressed
// flat, so output position q = y * wp + x reads input q + ky * wp + kx for
// every tap; columns x >= ow of the flat output are scratch and discarded.
// Kernels keep a block of output channels times kLanes positions in
// registers.

constexpr std::size_t kLanes = 8;

using Lanes = Eigen::Array<double, kLanes, 1>;
using LanesMap = Eigen::Map<const Lanes>;
using LanesOut = Eigen::Map<Lanes>;

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

struct FlatLayout {
    std::size_t k, h, w, pad, hp, wp, oh, ow, q, stride;

    FlatLayout(std::size_t k_, std::size_t h_, std::size_t w_, std::size_t pad_)
        : k(k_), h(h_), w(w_), pad(pad_), hp(h_ + 2 * pad_), wp(w_ + 2 * pad_) {
        oh = hp - k + 1;
        ow = wp - k + 1;
        q = round_up(oh * wp, kLanes);
        stride = round_up(std::max(hp * wp, q + (k - 1) * (wp + 1)), kLanes);
    }

    void pad_planes(const double* src, std::size_t planes, std::vector<double>& dst) const {
        dst.assign(planes * stride, 0.0);
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t y = 0; y < h; ++y) {
                const double* s = src + (p * h + y) * w;
                std::copy(s, s + w, dst.data() + p * stride + (y + pad) * wp + pad);
            }
        }
    }
};

// out[o][q] = sum_{c,t} wt[(c * kk + t) * outs + o] * in[c][q + off[t]]
template <std::size_t OB>
void flat_correlate_block(const double* in, std::size_t in_stride, std::size_t ins, const double* wt,
                          std::size_t outs, std::size_t o0, const std::vector<std::size_t>& off, std::size_t q,
                          double* out, std::size_t out_stride) {
    const std::size_t kk = off.size();
    for (std::size_t q0 = 0; q0 < q; q0 += kLanes) {
        Lanes acc[OB];
        for (auto& a : acc) a.setZero();
        for (std::size_t c = 0; c < ins; ++c) {
            const double* plane = in + c * in_stride + q0;
            const double* wc = wt + c * kk * outs + o0;
            for (std::size_t t = 0; t < kk; ++t) {
                const Lanes src = LanesMap(plane + off[t]);
                const double* wv = wc + t * outs;
                for (std::size_t oi = 0; oi < OB; ++oi) acc[oi] += wv[oi] * src;
            }
        }
        for (std::size_t oi = 0; oi < OB; ++oi) LanesOut(out + (o0 + oi) * out_stride + q0) = acc[oi];
    }
}

void flat_correlate(const double* in, std::size_t in_stride, std::size_t ins, const double* wt,
                    std::size_t outs, const std::vector<std::size_t>& off, std::size_t q, double* out,
                    std::size_t out_stride) {
    std::size_t o = 0;
    for (; o + 8 <= outs; o += 8) flat_correlate_block<8>(in, in_stride, ins, wt, outs, o, off, q, out, out_stride);
    if (o + 4 <= outs) {
        flat_correlate_block<4>(in, in_stride, ins, wt, outs, o, off, q, out, out_stride);
        o += 4;
    }
    if (o + 2 <= outs) {
        flat_correlate_block<2>(in, in_stride, ins, wt, outs, o, off, q, out, out_stride);
        o += 2;
    }
    if (o < outs) flat_correlate_block<1>(in, in_stride, ins, wt, outs, o, off, q, out, out_stride);
}

// gw[o][c][t] += sum_q go[o][q] * in[c][q + off[t]], all KK taps of a
// channel accumulated in one sweep.
template <std::size_t OB, std::size_t KK>
void flat_weight_grad_block(const double* in, std::size_t in_stride, std::size_t ins, const double* go,
                            std::size_t go_stride, std::size_t o0, const std::vector<std::size_t>& off,
                            std::size_t q, double* gw) {
    std::size_t offs[KK];
    std::copy(off.begin(), off.end(), offs);
    for (std::size_t c = 0; c < ins; ++c) {
        const double* plane = in + c * in_stride;
        Lanes acc[OB][KK];
        for (auto& row : acc)
            for (auto& a : row) a.setZero();
        for (std::size_t q0 = 0; q0 < q; q0 += kLanes) {
            Lanes g[OB];
            for (std::size_t oi = 0; oi < OB; ++oi) g[oi] = LanesMap(go + (o0 + oi) * go_stride + q0);
            for (std::size_t t = 0; t < KK; ++t) {
                const Lanes x = LanesMap(plane + offs[t] + q0);
                for (std::size_t oi = 0; oi < OB; ++oi) acc[oi][t] += g[oi] * x;
            }
        }
        for (std::size_t oi = 0; oi < OB; ++oi)
            for (std::size_t t = 0; t < KK; ++t) gw[((o0 + oi) * ins + c) * KK + t] += acc[oi][t].sum();
    }
}

// Any kernel size, one tap and one output channel at a time.
void flat_weight_grad_generic(const double* in, std::size_t in_stride, std::size_t ins, const double* go,
                              std::size_t go_stride, std::size_t outs, const std::vector<std::size_t>& off,
                              std::size_t q, double* gw) {
    const std::size_t kk = off.size();
    for (std::size_t o = 0; o < outs; ++o) {
        for (std::size_t c = 0; c < ins; ++c) {
            for (std::size_t t = 0; t < kk; ++t) {
                Lanes acc = Lanes::Zero();
                for (std::size_t q0 = 0; q0 < q; q0 += kLanes) {
                    acc += LanesMap(go + o * go_stride + q0) * LanesMap(in + c * in_stride + off[t] + q0);
                }
                gw[(o * ins + c) * kk + t] += acc.sum();
            }
        }
    }
}

template <std::size_t KK>
void flat_weight_grad_fixed(const double* in, std::size_t in_stride, std::size_t ins, const double* go,
                            std::size_t go_stride, std::size_t outs, const std::vector<std::size_t>& off,
                            std::size_t q, double* gw) {
    constexpr std::size_t kBlock = KK > 1 ? 2 : 4;
    std::size_t o = 0;
    for (; o + kBlock <= outs; o += kBlock) {
        flat_weight_grad_block<kBlock, KK>(in, in_stride, ins, go, go_stride, o, off, q, gw);
    }
    for (; o < outs; ++o) flat_weight_grad_block<1, KK>(in, in_stride, ins, go, go_stride, o, off, q, gw);
}

void flat_weight_grad(const double* in, std::size_t in_stride, std::size_t ins, const double* go,
                      std::size_t go_stride, std::size_t outs, const std::vector<std::size_t>& off, std::size_t q,
                      double* gw) {
    switch (off.size()) {
        case 1: flat_weight_grad_fixed<1>(in, in_stride, ins, go, go_stride, outs, off, q, gw); return;
        case 9: flat_weight_grad_fixed<9>(in, in_stride, ins, go, go_stride, outs, off, q, gw); return;
        default: flat_weight_grad_generic(in, in_stride, ins, go, go_stride, outs, off, q, gw); return;
    }
}

struct DirectPlan {
    FlatLayout fwd;   // input planes -> output
    FlatLayout bwd;   // output-gradient planes -> input gradient
    std::vector<std::size_t> fwd_off, bwd_off;

    explicit DirectPlan(const ConvGeometry& g)
        : fwd(g.k, g.h, g.w, g.pad), bwd(g.k, g.oh, g.ow, g.k - 1 - g.pad) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                fwd_off.push_back(ky * fwd.wp + kx);
                bwd_off.push_back(ky * bwd.wp + kx);
            }
        }
    }
};

void direct_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
    const DirectPlan plan(g);
    const auto& L = plan.fwd;
    const std::size_t kk = g.k * g.k;
    // Weights as [c][t][o] so a block of output channels is contiguous.
    std::vector<double> wt(w.size());
    for (std::size_t o = 0; o < g.o; ++o)
        for (std::size_t c = 0; c < g.c; ++c)
            for (std::size_t t = 0; t < kk; ++t) wt[(c * kk + t) * g.o + o] = w[(o * g.c + c) * kk + t];
    std::vector<double> padded, flat(g.o * L.q);
    for (std::size_t b = 0; b < g.n; ++b) {
        L.pad_planes(x.data() + b * g.c * g.h * g.w, g.c, padded);
        flat_correlate(padded.data(), L.stride, g.c, wt.data(), g.o, plan.fwd_off, L.q, flat.data(), L.q);
        for (std::size_t o = 0; o < g.o; ++o) {
            const double bo = bias.empty() ? 0.0 : bias[o];
            double* dst = out.data() + (b * g.o + o) * g.plane();
            for (std::size_t y = 0; y < g.oh; ++y) {
                const double* src = flat.data() + o * L.q + y * L.wp;
                for (std::size_t xx = 0; xx < g.ow; ++xx) dst[y * g.ow + xx] = src[xx] + bo;
            }
        }
    }
}

void direct_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad, std::span<double> gx, std::span<double> gw,
                     std::span<double> gb) {
    const DirectPlan plan(g);
    const std::size_t kk = g.k * g.k;
    // The input gradient correlates the output gradient, padded by k-1-pad,
    // with the spatially flipped kernel; weights laid out as [o][t][c].
    std::vector<double> wflip(w.size());
    for (std::size_t o = 0; o < g.o; ++o)
        for (std::size_t c = 0; c < g.c; ++c)
            for (std::size_t t = 0; t < kk; ++t) wflip[(o * kk + t) * g.c + c] = w[(o * g.c + c) * kk + kk - 1 - t];
    const auto& F = plan.fwd;
    const auto& B = plan.bwd;
    std::vector<double> padded, go_flat, go_pad, gx_flat(gx.empty() ? 0 : g.c * B.q);
    for (std::size_t b = 0; b < g.n; ++b) {
        const double* go_b = grad.data() + b * g.o * g.plane();
        if (!gb.empty()) {
            for (std::size_t o = 0; o < g.o; ++o) {
                double s = 0.0;
                for (std::size_t i = 0; i < g.plane(); ++i) s += go_b[o * g.plane() + i];
                gb[o] += s;
            }
        }
        if (!gw.empty()) {
            F.pad_planes(x.data() + b * g.c * g.h * g.w, g.c, padded);
            // Output gradient in the forward flat layout, zero in scratch columns.
            go_flat.assign(g.o * F.q, 0.0);
            for (std::size_t o = 0; o < g.o; ++o)
                for (std::size_t y = 0; y < g.oh; ++y)
                    std::copy(go_b + (o * g.oh + y) * g.ow, go_b + (o * g.oh + y + 1) * g.ow,
                              go_flat.data() + o * F.q + y * F.wp);
            flat_weight_grad(padded.data(), F.stride, g.c, go_flat.data(), F.q, g.o, plan.fwd_off, F.q, gw.data());
        }
        if (!gx.empty()) {
            B.pad_planes(go_b, g.o, go_pad);
            flat_correlate(go_pad.data(), B.stride, g.o, wflip.data(), g.c, plan.bwd_off, B.q, gx_flat.data(),
                           B.q);
            for (std::size_t c = 0; c < g.c; ++c) {
                double* dst = gx.data() + (b * g.c + c) * g.h * g.w;
                for (std::size_t y = 0; y < g.h; ++y) {
                    const double* src = gx_flat.data() + c * B.q + y * B.wp;
                    for (std::size_t xx = 0; xx < g.w; ++xx) dst[y * g.w + xx] += src[xx];
                }
            }
        }
    }
}

bool use_direct(const ConvGeometry& g) { return g.stride == 1 && g.pad < g.k && g.rows() <= 400; }

std::size_t chunk_size(const ConvGeometry& g) {
    constexpr std::size_t kBudget = 1u << 17;  // doubles in the patch matrix
    const std::size_t per_sample = std::max<std::size_t>(1, g.rows() * g.plane());
    return std::clamp<std::size_t>(kBudget / per_sample, 1, std::max<std::size_t>(g.n, 1));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        detail::shape_mismatch("matmul", a.shape(), b.shape());
    }
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    MapMat(out.data(), static_cast<long>(m), static_cast<long>(n)).noalias() =
        CMapMat(a.data().data(), static_cast<long>(m), static_cast<long>(k)) *
        CMapMat(b.data().data(), static_cast<long>(k), static_cast<long>(n));
    auto backward = [a, b, m, k, n](std::span<const double> g, Tape& tape) {
        const CMapMat G(g.data(), static_cast<long>(m), static_cast<long>(n));
        if (auto ga = tape.grad_of(a); !ga.empty()) {
            MapMat(ga.data(), static_cast<long>(m), static_cast<long>(k)).noalias() +=
                G * CMapMat(b.data().data(), static_cast<long>(k), static_cast<long>(n)).transpose();
        }
        if (auto gb = tape.grad_of(b); !gb.empty()) {
            MapMat(gb.data(), static_cast<long>(k), static_cast<long>(n)).noalias() +=
                CMapMat(a.data().data(), static_cast<long>(m), static_cast<long>(k)).transpose() * G;
        }
    };
    return emit("matmul", {m, n}, std::move(out), {&a, &b}, std::move(backward));
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    if (input.rank() != 4 || weight.rank() != 4 || weight.dim(1) != input.dim(1) ||
        weight.dim(2) != weight.dim(3)) {
        detail::shape_mismatch("conv2d", input.shape(), weight.shape());
    }
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
        detail::shape_mismatch("conv2d(bias)", weight.shape(), bias.shape());
    }
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    ConvGeometry g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.o = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.pad = padding;
    if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
        detail::shape_mismatch("conv2d", input.shape(), weight.shape());
    }
    g.oh = (g.h + 2 * padding - g.k) / stride + 1;
    g.ow = (g.w + 2 * padding - g.k) / stride + 1;

    if (use_direct(g)) {
        std::vector<double> out(g.n * g.o * g.plane());
        direct_forward(g, input.data(), weight.data(), bias.data(), out);
        auto backward = [input, weight, bias, g](std::span<const double> grad, Tape& tape) {
            direct_backward(g, input.data(), weight.data(), grad, tape.grad_of(input),
                            tape.grad_of(weight), tape.grad_of(bias));
        };
        return emit("conv2d", {g.n, g.o, g.oh, g.ow}, std::move(out), {&input, &weight, &bias},
                    std::move(backward));
    }

    // Samples are processed in chunks so the unfolded patch matrix stays
    // cache-sized; the backward pass re-unfolds instead of storing it.
    const std::size_t chunk = chunk_size(g);
    const long rows = static_cast<long>(g.rows());
    const long outc = static_cast<long>(g.o);
    const auto bvals = bias.data();
    std::vector<double> out(g.n * g.o * g.plane());
    std::vector<double> cols;
    RowMat prod;
    for (std::size_t b0 = 0; b0 < g.n; b0 += chunk) {
        ConvGeometry part = g;
        part.n = std::min(chunk, g.n - b0);
        im2col(part, input.data().subspan(b0 * g.c * g.h * g.w), cols);
        const long ncols = static_cast<long>(part.cols());
        prod.noalias() = CMapMat(weight.data().data(), outc, rows) * CMapMat(cols.data(), rows, ncols);
        for (std::size_t b = 0; b < part.n; ++b) {
            for (std::size_t o = 0; o < g.o; ++o) {
                const double shift = bvals.empty() ? 0.0 : bvals[o];
                const double* src = prod.data() + o * part.cols() + b * g.plane();
                double* dst = out.data() + ((b0 + b) * g.o + o) * g.plane();
                for (std::size_t l = 0; l < g.plane(); ++l) dst[l] = src[l] + shift;
            }
        }
    }

    auto backward = [input, weight, bias, g, chunk](std::span<const double> grad, Tape& tape) {
        const long rows = static_cast<long>(g.rows());
        const long outc = static_cast<long>(g.o);
        const auto gw = tape.grad_of(weight);
        const auto gb = tape.grad_of(bias);
        const auto gx = tape.grad_of(input);
        std::vector<double> cols, dcols;
        RowMat gm;
        for (std::size_t b0 = 0; b0 < g.n; b0 += chunk) {
            ConvGeometry part = g;
            part.n = std::min(chunk, g.n - b0);
            const long ncols = static_cast<long>(part.cols());
            gm.resize(outc, ncols);
            for (std::size_t b = 0; b < part.n; ++b) {
                for (std::size_t o = 0; o < g.o; ++o) {
                    const double* src = grad.data() + ((b0 + b) * g.o + o) * g.plane();
                    std::copy(src, src + g.plane(), gm.data() + o * part.cols() + b * g.plane());
                }
            }
            if (!gw.empty()) {
                im2col(part, input.data().subspan(b0 * g.c * g.h * g.w), cols);
                MapMat(gw.data(), outc, rows).noalias() +=
                    gm * CMapMat(cols.data(), rows, ncols).transpose();
            }
            if (!gb.empty()) {
                for (std::size_t o = 0; o < g.o; ++o) gb[o] += gm.row(static_cast<long>(o)).sum();
            }
            if (!gx.empty()) {
                dcols.resize(part.rows() * part.cols());
                MapMat(dcols.data(), rows, ncols).noalias() =
                    CMapMat(weight.data().data(), outc, rows).transpose() * gm;
                col2im(part, dcols, gx.subspan(b0 * g.c * g.h * g.w));
            }
        }
    };
    return emit("conv2d", {g.n, g.o, g.oh, g.ow}, std::move(out), {&input, &weight, &bias},
                std::move(backward));
}

Tensor upsample_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w) {
    if (input.rank() != 4 || out_h == 0 || out_w == 0) {
        throw ShapeError("upsample_nearest: expected N x C x H x W input, got " +
                         shape_str(input.shape()));
    }
    const std::size_t planes = input.dim(0) * input.dim(1);
    const std::size_t h = input.dim(2), w = input.dim(3);
    std::vector<std::size_t> src_index(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            src_index[y * out_w + x] = (y * h / out_h) * w + (x * w / out_w);
        }
    }
    const auto xs = input.data();
    std::vector<double> out(planes * out_h * out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < src_index.size(); ++i) {
            out[p * src_index.size() + i] = xs[p * h * w + src_index[i]];
        }
    }
    auto backward = [input, src_index = std::move(src_index), planes, h, w](std::span<const double> g,
                                                                            Tape& tape) {
        const auto gx = tape.grad_of(input);
        if (gx.empty()) return;
        const std::size_t plane_out = src_index.size();
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t i = 0; i < plane_out; ++i) gx[p * h * w + src_index[i]] += g[p * plane_out + i];
        }
    };
    return emit("upsample_nearest", {input.dim(0), input.dim(1), out_h, out_w}, std::move(out),
                {&input}, std::move(backward));
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& base = parts[0].shape();
    std::size_t channels = 0;
    for (const auto& p : parts) {
        if (p.rank() != 4 || p.dim(0) != base[0] || p.dim(2) != base[2] || p.dim(3) != base[3]) {
            detail::shape_mismatch("concat_channels", base, p.shape());
        }
        channels += p.dim(1);
    }
    const std::size_t n = base[0], plane = base[2] * base[3];
    std::vector<double> out(n * channels * plane);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const auto x = p.data();
        const std::size_t c = p.dim(1);
        for (std::size_t b = 0; b < n; ++b) {
            std::copy(x.begin() + static_cast<long>(b * c * plane),
                      x.begin() + static_cast<long>((b + 1) * c * plane),
                      out.begin() + static_cast<long>((b * channels + off) * plane));
        }
        off += c;
    }
    std::vector<Tensor> held(parts.begin(), parts.end());
    auto backward = [held, offsets, n, channels, plane](std::span<const double> g, Tape& tape) {
        for (std::size_t j = 0; j < held.size(); ++j) {
            const auto gp = tape.grad_of(held[j]);
            if (gp.empty()) continue;
            const std::size_t c = held[j].dim(1);
            for (std::size_t b = 0; b < n; ++b) {
                const double* src = g.data() + (b * channels + offsets[j]) * plane;
                double* dst = gp.data() + b * c * plane;
                for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
            }
        }
    };
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (!p.tracked()) continue;
        if (tape && tape != p.tape()) {
            throw std::logic_error("concat_channels: operands are recorded on different tapes");
        }
        tape = p.tape();
    }
    Shape shape{n, channels, base[2], base[3]};
    if (!tape) return Tensor(std::move(shape), std::move(out));
    std::vector<const Tensor*> ps;
    for (const auto& p : parts) ps.push_back(&p);
    return tape->record(std::move(shape), std::move(out), ps, std::move(backward));
}

Tensor spatial_softmax(const Tensor& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("spatial_softmax: temperature must be > 0");
    if (logits.rank() < 2) {
        throw ShapeError("spatial_softmax: expected at least 2 dims, got " + shape_str(logits.shape()));
    }
    const std::size_t plane = logits.shape()[logits.rank() - 2] * logits.shape()[logits.rank() - 1];
    const std::size_t maps = plane ? logits.numel() / plane : 0;
    const auto x = logits.data();
    for (double v : x) {
        if (!std::isfinite(v)) throw std::domain_error("spatial_softmax: non-finite input");
    }
    std::vector<double> out(x.size());
    for (std::size_t m = 0; m < maps; ++m) {
        const double* src = x.data() + m * plane;
        double* dst = out.data() + m * plane;
        const double peak = *std::max_element(src, src + plane);
        double total = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            dst[i] = std::exp((src[i] - peak) / temperature);
            total += dst[i];
        }
        for (std::size_t i = 0; i < plane; ++i) dst[i] /= total;
    }
    auto y = std::make_shared<std::vector<double>>(out);
    auto backward = [logits, y, plane, maps, temperature](std::span<const double> g, Tape& tape) {
        const auto gx = tape.grad_of(logits);
        if (gx.empty()) return;
        for (std::size_t m = 0; m < maps; ++m) {
            const double* ym = y->data() + m * plane;
            const double* gm = g.data() + m * plane;
            double inner = 0.0;
            for (std::size_t i = 0; i < plane; ++i) inner += gm[i] * ym[i];
            for (std::size_t i = 0; i < plane; ++i) {
                gx[m * plane + i] += ym[i] * (gm[i] - inner) / temperature;
            }
        }
    };
    return emit("spatial_softmax", logits.shape(), std::move(out), {&logits}, std::move(backward));
}

}  // namespace efe
