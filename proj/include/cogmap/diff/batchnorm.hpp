#pragma once

#include "cogmap/diff/ops.hpp"

namespace cogmap::diff {

// Running statistics for evaluation mode. Updated from batch statistics
// during training forward passes; never touched by the optimizer.
template <class T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    void ensure(int64_t channels) {
        if (running_mean.empty()) {
            running_mean.assign(static_cast<size_t>(channels), T(0));
            running_var.assign(static_cast<size_t>(channels), T(1));
        }
    }
};

// Batch normalization over (N,C,H,W) per channel or (N,F) per feature.
// Built from primitives, so gradients (including through the batch
// statistics) fall out of the op vjps.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training, T eps = T(1e-5),
                     T momentum = T(0.9)) {
    const bool conv = x.shape().size() == 4;
    require(conv || x.shape().size() == 2, "batch_norm: want 2-d or 4-d, got ",
            shape_str(x.shape()));
    const int64_t C = conv ? x.shape()[1] : x.shape()[1];
    require(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
            "batch_norm: scale/shift must have shape [", C, "]");
    state.ensure(C);

    const int64_t N = x.shape()[0];
    const int64_t count = conv ? N * x.shape()[2] * x.shape()[3] : N;
    const T inv_count = T(1) / static_cast<T>(count);

    auto bcast = [&](const Tensor<T>& v) {
        return conv ? broadcast_chan(v, N, x.shape()[2], x.shape()[3]) : broadcast_rows(v, N);
    };
    auto reduce = [&](const Tensor<T>& v) { return conv ? sum_chan(v) : sum_rows(v); };

    Tensor<T> mean, var;
    if (training) {
        mean = scalar_mul(reduce(x), inv_count);
        Tensor<T> xc = sub(x, bcast(mean));
        var = scalar_mul(reduce(mul(xc, xc)), inv_count);
        for (int64_t c = 0; c < C; ++c) {
            state.running_mean[c] =
                momentum * state.running_mean[c] + (T(1) - momentum) * mean.data()[c];
            state.running_var[c] =
                momentum * state.running_var[c] + (T(1) - momentum) * var.data()[c];
        }
        Tensor<T> inv_std = powf_(add_scalar(var, eps), T(-0.5));
        Tensor<T> xhat = mul(xc, bcast(inv_std));
        Tensor<T> scaled = mul(xhat, bcast(gamma));
        return conv ? add_chan(scaled, beta) : add_rows(scaled, beta);
    }
    mean = Tensor<T>::constant({C}, state.running_mean);
    var = Tensor<T>::constant({C}, state.running_var);
    Tensor<T> inv_std = powf_(add_scalar(var, eps), T(-0.5));
    Tensor<T> xhat = mul(sub(x, bcast(mean)), bcast(inv_std));
    Tensor<T> scaled = mul(xhat, bcast(gamma));
    return conv ? add_chan(scaled, beta) : add_rows(scaled, beta);
}

}  // namespace cogmap::diff
