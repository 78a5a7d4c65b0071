#pragma once

#include <algorithm>
#include <cmath>

#include "cogmap/diff/tensor.hpp"

// Dense tensor primitives with reverse-mode derivatives. Every vjp is
// written in terms of these same primitives, so a gradient is an ordinary
// graph value and backward() can be applied to expressions that contain
// gradients (double differentiation).

namespace cogmap::diff {

namespace detail {

// C(m,n) = A(m,k) * B(k,n), row-major. Accumulates if acc.
template <class T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, T(0));
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,n) = A(k,m)^T * B(k,n)
template <class T>
void mm_tn(const T* a, const T* b, T* c, int64_t k, int64_t m, int64_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, T(0));
    for (int64_t kk = 0; kk < k; ++kk) {
        const T* arow = a + kk * m;
        const T* brow = b + kk * n;
        for (int64_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,n) = A(m,k) * B(n,k)^T
template <class T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool acc) {
    if (!acc) std::fill(c, c + m * n, T(0));
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T s = 0;
            for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            crow[j] += s;
        }
    }
}

// col(C*kh*kw, OH*OW) from one image (C,H,W)
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* col) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < kh; ++i) {
            for (int64_t j = 0; j < kw; ++j) {
                T* dst = col + ((c * kh + i) * kw + j) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    int64_t y = oy * stride - pad + i;
                    if (y < 0 || y >= H) {
                        std::fill(dst + oy * OW, dst + (oy + 1) * OW, T(0));
                        continue;
                    }
                    const T* src = x + (c * H + y) * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        int64_t xx = ox * stride - pad + j;
                        dst[oy * OW + ox] = (xx >= 0 && xx < W) ? src[xx] : T(0);
                    }
                }
            }
        }
    }
}

// scatter-add of col(C*kh*kw, OH*OW) back into one image (C,H,W)
template <class T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* x) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t i = 0; i < kh; ++i) {
            for (int64_t j = 0; j < kw; ++j) {
                const T* src = col + ((c * kh + i) * kw + j) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    int64_t y = oy * stride - pad + i;
                    if (y < 0 || y >= H) continue;
                    T* dst = x + (c * H + y) * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        int64_t xx = ox * stride - pad + j;
                        if (xx >= 0 && xx < W) dst[xx] += src[oy * OW + ox];
                    }
                }
            }
        }
    }
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> v(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] += bd[i];
    return make_op<T>(a.shape(), std::move(v), {a, b},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{g, g};
                      });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> v(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= bd[i];
    return make_op<T>(a.shape(), std::move(v), {a, b},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          std::vector<Tensor<T>> out(2);
                          if (self.node()->parents[0].requires_grad()) out[0] = g;
                          if (self.node()->parents[1].requires_grad()) out[1] = neg(g);
                          return out;
                      });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    std::vector<T> v(a.data());
    for (auto& x : v) x = -x;
    return make_op<T>(a.shape(), std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{neg(g)};
                      });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> v(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= bd[i];
    return make_op<T>(a.shape(), std::move(v), {a, b},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          const auto& pa = self.node()->parents[0];
                          const auto& pb = self.node()->parents[1];
                          std::vector<Tensor<T>> out(2);
                          if (pa.requires_grad()) out[0] = mul(g, pb);
                          if (pb.requires_grad()) out[1] = mul(g, pa);
                          return out;
                      });
}

template <class T>
Tensor<T> scalar_mul(const Tensor<T>& a, T c) {
    std::vector<T> v(a.data());
    for (auto& x : v) x *= c;
    return make_op<T>(a.shape(), std::move(v), {a},
                      [c](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{scalar_mul(g, c)};
                      });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    std::vector<T> v(a.data());
    for (auto& x : v) x += c;
    return make_op<T>(a.shape(), std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{g};
                      });
}

template <class T>
Tensor<T> exp_(const Tensor<T>& a) {
    std::vector<T> v(a.data());
    for (auto& x : v) x = std::exp(x);
    return make_op<T>(a.shape(), std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          return std::vector<Tensor<T>>{mul(g, self)};
                      });
}

// a^p with constant exponent; fractional p requires a > 0.
template <class T>
Tensor<T> powf_(const Tensor<T>& a, T p) {
    std::vector<T> v(a.data());
    for (auto& x : v) x = std::pow(x, p);
    return make_op<T>(a.shape(), std::move(v), {a},
                      [p](const Tensor<T>& g, const Tensor<T>& self) {
                          const auto& pa = self.node()->parents[0];
                          return std::vector<Tensor<T>>{
                              scalar_mul(mul(g, powf_(pa, p - T(1))), p)};
                      });
}

template <class T>
Tensor<T> tanh_(const Tensor<T>& a) {
    std::vector<T> v(a.data());
    for (auto& x : v) x = std::tanh(x);
    return make_op<T>(a.shape(), std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          Tensor<T> one_minus_y2 = add_scalar(neg(mul(self, self)), T(1));
                          return std::vector<Tensor<T>>{mul(g, one_minus_y2)};
                      });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    std::vector<T> v(a.data());
    std::vector<T> mask(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        if (v[i] > T(0)) {
            mask[i] = T(1);
        } else {
            mask[i] = slope;
            v[i] *= slope;
        }
    }
    // The mask depends on sign(x) only; its derivative is zero a.e., so it
    // enters the backward as a constant.
    Tensor<T> mask_t = Tensor<T>::constant(a.shape(), std::move(mask));
    return make_op<T>(a.shape(), std::move(v), {a},
                      [mask_t](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{mul(g, mask_t)};
                      });
}

// ---------------------------------------------------------------- shape

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
    require(shape_numel(s) == a.numel(), "reshape: cannot view ", shape_str(a.shape()), " as ",
            shape_str(s));
    Shape old = a.shape();
    return make_op<T>(std::move(s), std::vector<T>(a.data()), {a},
                      [old](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{reshape(g, old)};
                      });
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    require(a.shape().size() == 2, "transpose2d: want 2-d, got ", shape_str(a.shape()));
    int64_t m = a.shape()[0], n = a.shape()[1];
    std::vector<T> v(static_cast<size_t>(m * n));
    const auto& ad = a.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) v[j * m + i] = ad[i * n + j];
    return make_op<T>({n, m}, std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{transpose2d(g)};
                      });
}

template <class T>
Tensor<T> pad_cols(const Tensor<T>& a, int64_t c0, int64_t total);

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int64_t c0, int64_t c1) {
    require(a.shape().size() == 2 && c0 >= 0 && c1 <= a.shape()[1] && c0 < c1,
            "slice_cols: bad range [", c0, ",", c1, ") for ", shape_str(a.shape()));
    int64_t n = a.shape()[0], m = a.shape()[1], w = c1 - c0;
    std::vector<T> v(static_cast<size_t>(n * w));
    const auto& ad = a.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) v[i * w + j] = ad[i * m + c0 + j];
    return make_op<T>({n, w}, std::move(v), {a},
                      [c0, m](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{pad_cols(g, c0, m)};
                      });
}

template <class T>
Tensor<T> pad_cols(const Tensor<T>& a, int64_t c0, int64_t total) {
    require(a.shape().size() == 2 && c0 >= 0 && c0 + a.shape()[1] <= total,
            "pad_cols: bad placement");
    int64_t n = a.shape()[0], w = a.shape()[1];
    std::vector<T> v(static_cast<size_t>(n * total), T(0));
    const auto& ad = a.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) v[i * total + c0 + j] = ad[i * w + j];
    return make_op<T>({n, total}, std::move(v), {a},
                      [c0, w](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{slice_cols(g, c0, c0 + w)};
                      });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> broadcast_scalar(const Tensor<T>& a, Shape s);

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = 0;
    for (T x : a.data()) s += x;
    return make_op<T>({1}, {s}, {a}, [](const Tensor<T>& g, const Tensor<T>& self) {
        return std::vector<Tensor<T>>{broadcast_scalar(g, self.node()->parents[0].shape())};
    });
}

template <class T>
Tensor<T> broadcast_scalar(const Tensor<T>& a, Shape s) {
    require(a.numel() == 1, "broadcast_scalar: source not scalar");
    std::vector<T> v(static_cast<size_t>(shape_numel(s)), a.data()[0]);
    return make_op<T>(std::move(s), std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{sum_all(g)};
                      });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scalar_mul(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Tensor<T> sq_norm(const Tensor<T>& a) {
    return sum_all(mul(a, a));
}

template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& a, int64_t n);

// (N,F) -> (F)
template <class T>
Tensor<T> sum_rows(const Tensor<T>& a) {
    require(a.shape().size() == 2, "sum_rows: want 2-d, got ", shape_str(a.shape()));
    int64_t n = a.shape()[0], f = a.shape()[1];
    std::vector<T> v(static_cast<size_t>(f), T(0));
    const auto& ad = a.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < f; ++j) v[j] += ad[i * f + j];
    return make_op<T>({f}, std::move(v), {a}, [n](const Tensor<T>& g, const Tensor<T>&) {
        return std::vector<Tensor<T>>{broadcast_rows(g, n)};
    });
}

// (F) -> (N,F)
template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& a, int64_t n) {
    require(a.shape().size() == 1, "broadcast_rows: want 1-d, got ", shape_str(a.shape()));
    int64_t f = a.shape()[0];
    std::vector<T> v(static_cast<size_t>(n * f));
    for (int64_t i = 0; i < n; ++i)
        std::copy(a.data().begin(), a.data().end(), v.begin() + i * f);
    return make_op<T>({n, f}, std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{sum_rows(g)};
                      });
}

template <class T>
Tensor<T> broadcast_chan(const Tensor<T>& a, int64_t n, int64_t h, int64_t w);

// (N,C,H,W) -> (C)
template <class T>
Tensor<T> sum_chan(const Tensor<T>& a) {
    require(a.shape().size() == 4, "sum_chan: want 4-d, got ", shape_str(a.shape()));
    int64_t n = a.shape()[0], c = a.shape()[1], hw = a.shape()[2] * a.shape()[3];
    std::vector<T> v(static_cast<size_t>(c), T(0));
    const auto& ad = a.data();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* p = ad.data() + (i * c + ch) * hw;
            T s = 0;
            for (int64_t k = 0; k < hw; ++k) s += p[k];
            v[ch] += s;
        }
    int64_t h = a.shape()[2], w = a.shape()[3];
    return make_op<T>({c}, std::move(v), {a},
                      [n, h, w](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{broadcast_chan(g, n, h, w)};
                      });
}

// (C) -> (N,C,H,W)
template <class T>
Tensor<T> broadcast_chan(const Tensor<T>& a, int64_t n, int64_t h, int64_t w) {
    require(a.shape().size() == 1, "broadcast_chan: want 1-d, got ", shape_str(a.shape()));
    int64_t c = a.shape()[0], hw = h * w;
    std::vector<T> v(static_cast<size_t>(n * c * hw));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch)
            std::fill(v.begin() + (i * c + ch) * hw, v.begin() + (i * c + ch + 1) * hw,
                      a.data()[ch]);
    return make_op<T>({n, c, h, w}, std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{sum_chan(g)};
                      });
}

template <class T>
Tensor<T> broadcast_per_sample(const Tensor<T>& a, Shape inner);

// (N, ...) -> (N)
template <class T>
Tensor<T> sum_per_sample(const Tensor<T>& a) {
    require(a.shape().size() >= 1, "sum_per_sample: want >= 1-d");
    int64_t n = a.shape()[0];
    int64_t inner = a.numel() / n;
    std::vector<T> v(static_cast<size_t>(n), T(0));
    const auto& ad = a.data();
    for (int64_t i = 0; i < n; ++i) {
        const T* p = ad.data() + i * inner;
        T s = 0;
        for (int64_t k = 0; k < inner; ++k) s += p[k];
        v[i] = s;
    }
    Shape in(a.shape().begin() + 1, a.shape().end());
    return make_op<T>({n}, std::move(v), {a},
                      [in](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{broadcast_per_sample(g, in)};
                      });
}

// (N) -> (N, inner...)
template <class T>
Tensor<T> broadcast_per_sample(const Tensor<T>& a, Shape inner) {
    require(a.shape().size() == 1, "broadcast_per_sample: want 1-d");
    int64_t n = a.shape()[0];
    int64_t m = shape_numel(inner);
    std::vector<T> v(static_cast<size_t>(n * m));
    for (int64_t i = 0; i < n; ++i)
        std::fill(v.begin() + i * m, v.begin() + (i + 1) * m, a.data()[i]);
    Shape s;
    s.push_back(n);
    s.insert(s.end(), inner.begin(), inner.end());
    return make_op<T>(std::move(s), std::move(v), {a},
                      [](const Tensor<T>& g, const Tensor<T>&) {
                          return std::vector<Tensor<T>>{sum_per_sample(g)};
                      });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
            "matmul: incompatible shapes ", shape_str(a.shape()), " x ", shape_str(b.shape()));
    int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<T> v(static_cast<size_t>(m * n));
    detail::mm_nn(a.data().data(), b.data().data(), v.data(), m, k, n, false);
    return make_op<T>({m, n}, std::move(v), {a, b},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          const auto& pa = self.node()->parents[0];
                          const auto& pb = self.node()->parents[1];
                          std::vector<Tensor<T>> out(2);
                          if (pa.requires_grad()) out[0] = matmul(g, transpose2d(pb));
                          if (pb.requires_grad()) out[1] = matmul(transpose2d(pa), g);
                          return out;
                      });
}

// (N,F) + (F) row bias
template <class T>
Tensor<T> add_rows(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape().size() == 2 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0],
            "add_rows: incompatible shapes ", shape_str(a.shape()), " + ", shape_str(b.shape()));
    int64_t n = a.shape()[0], f = a.shape()[1];
    std::vector<T> v(a.data());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < f; ++j) v[i * f + j] += b.data()[j];
    return make_op<T>(a.shape(), std::move(v), {a, b},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          std::vector<Tensor<T>> out(2);
                          if (self.node()->parents[0].requires_grad()) out[0] = g;
                          if (self.node()->parents[1].requires_grad()) out[1] = sum_rows(g);
                          return out;
                      });
}

// (N,C,H,W) + (C) channel bias
template <class T>
Tensor<T> add_chan(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape().size() == 4 && b.shape().size() == 1 && a.shape()[1] == b.shape()[0],
            "add_chan: incompatible shapes ", shape_str(a.shape()), " + ", shape_str(b.shape()));
    int64_t n = a.shape()[0], c = a.shape()[1], hw = a.shape()[2] * a.shape()[3];
    std::vector<T> v(a.data());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            T* p = v.data() + (i * c + ch) * hw;
            const T bv = b.data()[ch];
            for (int64_t k = 0; k < hw; ++k) p[k] += bv;
        }
    return make_op<T>(a.shape(), std::move(v), {a, b},
                      [](const Tensor<T>& g, const Tensor<T>& self) {
                          std::vector<Tensor<T>> out(2);
                          if (self.node()->parents[0].requires_grad()) out[0] = g;
                          if (self.node()->parents[1].requires_grad()) out[1] = sum_chan(g);
                          return out;
                      });
}

// ---------------------------------------------------------------- convolution

template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& k, int64_t stride, int64_t pad,
                            int64_t H, int64_t W);
template <class T>
Tensor<T> conv2d_kernel_grad(const Tensor<T>& x, const Tensor<T>& gy, int64_t stride, int64_t pad,
                             int64_t kh, int64_t kw);

// Cross-correlation. x (N,C,H,W), k (F,C,kh,kw) -> (N,F,OH,OW).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, int64_t stride, int64_t pad) {
    require(x.shape().size() == 4 && k.shape().size() == 4, "conv2d: want 4-d input and kernel, got ",
            shape_str(x.shape()), " and ", shape_str(k.shape()));
    require(x.shape()[1] == k.shape()[1], "conv2d: channel mismatch, input ", shape_str(x.shape()),
            " kernel ", shape_str(k.shape()));
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int64_t F = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
    int64_t OH = (H + 2 * pad - kh) / stride + 1;
    int64_t OW = (W + 2 * pad - kw) / stride + 1;
    require(OH > 0 && OW > 0 && H + 2 * pad >= kh && W + 2 * pad >= kw,
            "conv2d: non-positive output extents for input ", shape_str(x.shape()), " kernel ",
            shape_str(k.shape()));
    std::vector<T> v(static_cast<size_t>(N * F * OH * OW));
    std::vector<T> col(static_cast<size_t>(C * kh * kw * OH * OW));
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(x.data().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                       col.data());
        detail::mm_nn(k.data().data(), col.data(), v.data() + n * F * OH * OW, F, C * kh * kw,
                      OH * OW, false);
    }
    return make_op<T>({N, F, OH, OW}, std::move(v), {x, k},
                      [stride, pad, H, W, kh, kw](const Tensor<T>& g, const Tensor<T>& self) {
                          const auto& px = self.node()->parents[0];
                          const auto& pk = self.node()->parents[1];
                          std::vector<Tensor<T>> out(2);
                          if (px.requires_grad())
                              out[0] = conv2d_input_grad(g, pk, stride, pad, H, W);
                          if (pk.requires_grad())
                              out[1] = conv2d_kernel_grad(px, g, stride, pad, kh, kw);
                          return out;
                      });
}

// Adjoint of conv2d in its first argument: gy (N,F,OH,OW), k (F,C,kh,kw) -> (N,C,H,W).
template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& k, int64_t stride, int64_t pad,
                            int64_t H, int64_t W) {
    require(gy.shape().size() == 4 && k.shape().size() == 4 && gy.shape()[1] == k.shape()[0],
            "conv2d_input_grad: incompatible shapes ", shape_str(gy.shape()), " and ",
            shape_str(k.shape()));
    int64_t N = gy.shape()[0], F = gy.shape()[1], OH = gy.shape()[2], OW = gy.shape()[3];
    int64_t C = k.shape()[1], kh = k.shape()[2], kw = k.shape()[3];
    require((H + 2 * pad - kh) / stride + 1 == OH && (W + 2 * pad - kw) / stride + 1 == OW,
            "conv2d_input_grad: geometry mismatch");
    std::vector<T> v(static_cast<size_t>(N * C * H * W), T(0));
    std::vector<T> col(static_cast<size_t>(C * kh * kw * OH * OW));
    for (int64_t n = 0; n < N; ++n) {
        detail::mm_tn(k.data().data(), gy.data().data() + n * F * OH * OW, col.data(), F,
                      C * kh * kw, OH * OW, false);
        detail::col2im(col.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                       v.data() + n * C * H * W);
    }
    return make_op<T>({N, C, H, W}, std::move(v), {gy, k},
                      [stride, pad, kh, kw](const Tensor<T>& g, const Tensor<T>& self) {
                          const auto& pgy = self.node()->parents[0];
                          const auto& pk = self.node()->parents[1];
                          std::vector<Tensor<T>> out(2);
                          if (pgy.requires_grad()) out[0] = conv2d(g, pk, stride, pad);
                          if (pk.requires_grad())
                              out[1] = conv2d_kernel_grad(g, pgy, stride, pad, kh, kw);
                          return out;
                      });
}

// Adjoint of conv2d in its kernel argument: x (N,C,H,W), gy (N,F,OH,OW) -> (F,C,kh,kw).
template <class T>
Tensor<T> conv2d_kernel_grad(const Tensor<T>& x, const Tensor<T>& gy, int64_t stride, int64_t pad,
                             int64_t kh, int64_t kw) {
    require(x.shape().size() == 4 && gy.shape().size() == 4 && x.shape()[0] == gy.shape()[0],
            "conv2d_kernel_grad: incompatible shapes ", shape_str(x.shape()), " and ",
            shape_str(gy.shape()));
    int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    int64_t F = gy.shape()[1], OH = gy.shape()[2], OW = gy.shape()[3];
    require((H + 2 * pad - kh) / stride + 1 == OH && (W + 2 * pad - kw) / stride + 1 == OW,
            "conv2d_kernel_grad: geometry mismatch");
    std::vector<T> v(static_cast<size_t>(F * C * kh * kw), T(0));
    std::vector<T> col(static_cast<size_t>(C * kh * kw * OH * OW));
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(x.data().data() + n * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                       col.data());
        detail::mm_nt(gy.data().data() + n * F * OH * OW, col.data(), v.data(), F, OH * OW,
                      C * kh * kw, true);
    }
    int64_t xh = H, xw = W;
    return make_op<T>({F, C, kh, kw}, std::move(v), {x, gy},
                      [stride, pad, xh, xw](const Tensor<T>& g, const Tensor<T>& self) {
                          const auto& px = self.node()->parents[0];
                          const auto& pgy = self.node()->parents[1];
                          std::vector<Tensor<T>> out(2);
                          if (px.requires_grad())
                              out[0] = conv2d_input_grad(pgy, g, stride, pad, xh, xw);
                          if (pgy.requires_grad()) out[1] = conv2d(px, g, stride, pad);
                          return out;
                      });
}

// Transposed convolution. x (N,Cin,H,W), k (Cin,Cout,kh,kw) -> (N,Cout,(H-1)s-2p+kh, ...).
// Satisfies <conv2d(a,k), b> == <a, deconv2d(b,k)> for matching geometry.
template <class T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& k, int64_t stride, int64_t pad) {
    require(x.shape().size() == 4 && k.shape().size() == 4 && x.shape()[1] == k.shape()[0],
            "deconv2d: channel mismatch, input ", shape_str(x.shape()), " kernel ",
            shape_str(k.shape()));
    int64_t H = x.shape()[2], W = x.shape()[3];
    int64_t kh = k.shape()[2], kw = k.shape()[3];
    int64_t OH = (H - 1) * stride - 2 * pad + kh;
    int64_t OW = (W - 1) * stride - 2 * pad + kw;
    require(OH > 0 && OW > 0, "deconv2d: non-positive output extents");
    return conv2d_input_grad(x, k, stride, pad, OH, OW);
}

}  // namespace cogmap::diff
