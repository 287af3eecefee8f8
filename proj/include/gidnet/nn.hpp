#pragma once

#include <random>
#include <utility>

#include "gidnet/tensor.hpp"

namespace gidnet::data {
struct Box;
}

namespace gidnet::nn {

struct LinearParams {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]
    int in_dim() const { return weight.shape()[1]; }
    int out_dim() const { return weight.shape()[0]; }
};

struct Conv2dParams {
    Tensor kernels;  // [out_ch x in_ch x kh x kw]
    Tensor bias;     // [out_ch]
    int stride = 1;
    int padding = 0;
    int in_channels() const { return kernels.shape()[1]; }
    int out_channels() const { return kernels.shape()[0]; }
};

// Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
LinearParams init_linear(std::mt19937_64& rng, int out_dim, int in_dim);
Conv2dParams init_conv2d(std::mt19937_64& rng, int out_ch, int in_ch, int kernel, int stride, int padding);

// x [batch x in] or [in]; returns x W^T + b with matching rank.
Tensor linear(const Tensor& x, const LinearParams& p);

// Cross-correlation of x [in_ch x h x w]; output [out_ch x h' x w'] with
// h' = (h + 2 pad - kh) / stride + 1 (must divide exactly).
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// Max-pools `featmap` over the box projected from image coordinates into an
// out_h x out_w grid with integer bin rounding; empty bins clamp to the
// nearest cell of the projected region.
Tensor roi_pool(const Tensor& featmap, const data::Box& box, std::pair<int, int> image_size, int out_h,
                int out_w);

Tensor global_avg_pool(const Tensor& x);  // [ch x h x w] -> [ch]

}  // namespace gidnet::nn
