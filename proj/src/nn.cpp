#include "gidnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gidnet/data.hpp"

namespace gidnet::nn {

LinearParams init_linear(std::mt19937_64& rng, int out_dim, int in_dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(static_cast<std::size_t>(out_dim) * in_dim);
    for (double& v : w) v = dist(rng);
    return LinearParams{Tensor::of({out_dim, in_dim}, std::move(w), true), Tensor::zeros({out_dim}, true)};
}

Conv2dParams init_conv2d(std::mt19937_64& rng, int out_ch, int in_ch, int kernel, int stride, int padding) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch) * kernel * kernel);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel);
    for (double& v : w) v = dist(rng);
    Conv2dParams p;
    p.kernels = Tensor::of({out_ch, in_ch, kernel, kernel}, std::move(w), true);
    p.bias = Tensor::zeros({out_ch}, true);
    p.stride = stride;
    p.padding = padding;
    return p;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
    const bool vector_input = x.rank() == 1;
    if (x.rank() != 1 && x.rank() != 2) {
        throw DimensionError("linear expects a vector or matrix, got " + shape_str(x.shape()));
    }
    const int in = vector_input ? x.shape()[0] : x.shape()[1];
    if (in != p.in_dim()) {
        throw DimensionError("linear input dim " + std::to_string(in) + " does not match weight " +
                             shape_str(p.weight.shape()));
    }
    const int batch = vector_input ? 1 : x.shape()[0];
    const int out = p.out_dim();

    std::vector<double> y(static_cast<std::size_t>(batch) * out);
    const auto xd = x.data();
    const auto wd = p.weight.data();
    const auto bd = p.bias.data();
    for (int b = 0; b < batch; ++b) {
        for (int o = 0; o < out; ++o) {
            double acc = bd[o];
            const std::size_t xrow = static_cast<std::size_t>(b) * in;
            const std::size_t wrow = static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += xd[xrow + i] * wd[wrow + i];
            y[static_cast<std::size_t>(b) * out + o] = acc;
        }
    }

    auto xn = x.node();
    auto wn = p.weight.node();
    auto bn = p.bias.node();
    Shape out_shape = vector_input ? Shape{out} : Shape{batch, out};
    return Tensor::make("linear", std::move(out_shape), std::move(y), {x, p.weight, p.bias},
                        [xn, wn, bn, batch, in, out](detail::Node& self) {
                            const auto& g = self.grad;
                            if (xn->requires_grad) {
                                xn->ensure_grad();  // dx = dy W
                                for (int b = 0; b < batch; ++b)
                                    for (int i = 0; i < in; ++i) {
                                        double acc = 0.0;
                                        for (int o = 0; o < out; ++o)
                                            acc += g[static_cast<std::size_t>(b) * out + o] *
                                                   wn->data[static_cast<std::size_t>(o) * in + i];
                                        xn->grad[static_cast<std::size_t>(b) * in + i] += acc;
                                    }
                            }
                            if (wn->requires_grad) {
                                wn->ensure_grad();  // dW = dy^T x
                                for (int o = 0; o < out; ++o)
                                    for (int i = 0; i < in; ++i) {
                                        double acc = 0.0;
                                        for (int b = 0; b < batch; ++b)
                                            acc += g[static_cast<std::size_t>(b) * out + o] *
                                                   xn->data[static_cast<std::size_t>(b) * in + i];
                                        wn->grad[static_cast<std::size_t>(o) * in + i] += acc;
                                    }
                            }
                            if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (int o = 0; o < out; ++o) {
                                    double acc = 0.0;
                                    for (int b = 0; b < batch; ++b) acc += g[static_cast<std::size_t>(b) * out + o];
                                    bn->grad[o] += acc;
                                }
                            }
                        });
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
    if (x.rank() != 3) throw DimensionError("conv2d expects [ch x h x w], got " + shape_str(x.shape()));
    const int in_ch = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (in_ch != p.in_channels()) {
        throw DimensionError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernels " +
                             shape_str(p.kernels.shape()));
    }
    const int out_ch = p.out_channels();
    const int kh = p.kernels.shape()[2], kw = p.kernels.shape()[3];
    const int stride = p.stride, pad = p.padding;
    if (h + 2 * pad < kh || w + 2 * pad < kw) {
        throw DimensionError("conv2d input smaller than kernel extent");
    }
    if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) {
        throw ConfigError("conv2d output size is not integral for input " + shape_str(x.shape()));
    }
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;

    std::vector<double> y(static_cast<std::size_t>(out_ch) * oh * ow);
    const auto xd = x.data();
    const auto kd = p.kernels.data();
    const auto bd = p.bias.data();
    for (int o = 0; o < out_ch; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = bd[o];
                const int y0 = oy * stride - pad;
                const int x0 = ox * stride - pad;
                for (int c = 0; c < in_ch; ++c) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = y0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = x0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += xd[(static_cast<std::size_t>(c) * h + iy) * w + ix] *
                                   kd[((static_cast<std::size_t>(o) * in_ch + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                y[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] = acc;
            }
        }
    }

    auto xn = x.node();
    auto kn = p.kernels.node();
    auto bn = p.bias.node();
    return Tensor::make(
        "conv2d", {out_ch, oh, ow}, std::move(y), {x, p.kernels, p.bias},
        [xn, kn, bn, in_ch, h, w, out_ch, kh, kw, stride, pad, oh, ow](detail::Node& self) {
            const auto& g = self.grad;
            if (xn->requires_grad) xn->ensure_grad();
            if (kn->requires_grad) kn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int o = 0; o < out_ch; ++o) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        const double go = g[(static_cast<std::size_t>(o) * oh + oy) * ow + ox];
                        if (go == 0.0) continue;
                        if (bn->requires_grad) bn->grad[o] += go;
                        const int y0 = oy * stride - pad;
                        const int x0 = ox * stride - pad;
                        for (int c = 0; c < in_ch; ++c) {
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = y0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = x0 + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    const std::size_t xi = (static_cast<std::size_t>(c) * h + iy) * w + ix;
                                    const std::size_t ki =
                                        ((static_cast<std::size_t>(o) * in_ch + c) * kh + ky) * kw + kx;
                                    if (xn->requires_grad) xn->grad[xi] += go * kn->data[ki];
                                    if (kn->requires_grad) kn->grad[ki] += go * xn->data[xi];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor roi_pool(const Tensor& featmap, const data::Box& box, std::pair<int, int> image_size, int out_h,
                int out_w) {
    if (featmap.rank() != 3) throw DimensionError("roi_pool expects [ch x h x w]");
    if (!box.valid()) throw InputError("roi_pool box has non-positive area");
    if (out_h <= 0 || out_w <= 0) throw ConfigError("roi_pool output size must be positive");
    const int ch = featmap.shape()[0], fh = featmap.shape()[1], fw = featmap.shape()[2];
    const auto [img_h, img_w] = image_size;
    if (box.x1 < 0 || box.y1 < 0 || box.x2 > img_w || box.y2 > img_h) {
        throw InputError("roi_pool box lies outside the image");
    }
    const double sy = static_cast<double>(img_h) / fh;
    const double sx = static_cast<double>(img_w) / fw;

    // Projected region in feature cells, at least one cell wide/tall.
    int ry0 = std::clamp(static_cast<int>(std::floor(box.y1 / sy)), 0, fh - 1);
    int rx0 = std::clamp(static_cast<int>(std::floor(box.x1 / sx)), 0, fw - 1);
    int ry1 = std::clamp(static_cast<int>(std::ceil(box.y2 / sy)), ry0 + 1, fh);
    int rx1 = std::clamp(static_cast<int>(std::ceil(box.x2 / sx)), rx0 + 1, fw);
    const int rh = ry1 - ry0, rw = rx1 - rx0;

    auto bin_range = [](int b, int bins, int extent) {
        int lo = b * extent / bins;
        int hi = (b + 1) * extent / bins;
        if (hi <= lo) {  // empty bin: clamp to the nearest cell of the region
            lo = std::min(lo, extent - 1);
            hi = lo + 1;
        }
        return std::pair<int, int>{lo, hi};
    };

    std::vector<double> y(static_cast<std::size_t>(ch) * out_h * out_w);
    std::vector<std::size_t> argmax(y.size());
    const auto xd = featmap.data();
    for (int c = 0; c < ch; ++c) {
        for (int by = 0; by < out_h; ++by) {
            const auto [y0, y1] = bin_range(by, out_h, rh);
            for (int bx = 0; bx < out_w; ++bx) {
                const auto [x0, x1] = bin_range(bx, out_w, rw);
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (int iy = y0; iy < y1; ++iy) {
                    for (int ix = x0; ix < x1; ++ix) {
                        const std::size_t idx = (static_cast<std::size_t>(c) * fh + (ry0 + iy)) * fw + (rx0 + ix);
                        if (xd[idx] > best) {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t oi = (static_cast<std::size_t>(c) * out_h + by) * out_w + bx;
                y[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }

    auto xn = featmap.node();
    return Tensor::make("roi_pool", {ch, out_h, out_w}, std::move(y), {featmap},
                        [xn, argmax](detail::Node& self) {
                            if (!xn->requires_grad) return;
                            xn->ensure_grad();
                            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                xn->grad[argmax[i]] += self.grad[i];
                            }
                        });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("global_avg_pool expects [ch x h x w]");
    const int ch = x.shape()[0];
    const std::size_t hw = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
    std::vector<double> y(ch, 0.0);
    const auto xd = x.data();
    for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += xd[c * hw + i];
        y[c] = acc / static_cast<double>(hw);
    }
    auto xn = x.node();
    return Tensor::make("global_avg_pool", {ch}, std::move(y), {x}, [xn, ch, hw](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int c = 0; c < ch; ++c) {
            const double g = self.grad[c] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) xn->grad[c * hw + i] += g;
        }
    });
}

}  // namespace gidnet::nn
