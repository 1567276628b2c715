#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "stockcnn/errors.hpp"
#include "stockcnn/rng.hpp"

namespace stockcnn {

// Dense row-major tensor. Image activations use {H, W, C} with channels
// contiguous; convolution kernels use {kh, kw, Cin, Cout}.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(count(shape), T(0));
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive tensor dimension");
            n *= std::size_t(d);
        }
        return n;
    }

    std::size_t size() const { return data.size(); }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }

    int dim(int i) const { return shape[size_t(i)]; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
};

template <typename T>
struct ParamBlock {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;

    explicit ParamBlock(std::string n = {}, std::vector<int> shape = {1})
        : name(std::move(n)), value(shape), grad(shape), adam_m(shape), adam_v(shape) {}
};

// Uniform Xavier/Glorot fill: bound = sqrt(6 / (fan_in + fan_out)).
template <typename T>
inline void xavier_init(Tensor<T>& t, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (double(fan_in) + double(fan_out)));
    for (T& v : t.data) v = T(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// Layers (valid padding, stride 1)
// ---------------------------------------------------------------------------

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename T>
inline std::vector<int> conv2d_out_shape(const std::vector<int>& in, const std::vector<int>& k) {
    require(in.size() == 3 && k.size() == 4, "conv2d expects HWC input and khkwCinCout kernel");
    require(in[2] == k[2], "conv2d channel mismatch: input C=" + std::to_string(in[2]) +
                               " kernel Cin=" + std::to_string(k[2]));
    require(in[0] >= k[0] && in[1] >= k[1],
            "conv2d input " + std::to_string(in[0]) + "x" + std::to_string(in[1]) +
                " smaller than kernel " + std::to_string(k[0]) + "x" + std::to_string(k[1]));
    return {in[0] - k[0] + 1, in[1] - k[1] + 1, k[3]};
}

template <typename T>
inline void conv2d_forward(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& bias,
                           Tensor<T>& out) {
    auto os = conv2d_out_shape<T>(in.shape, kernel.shape);
    require(out.shape == os, "conv2d output shape mismatch");
    const int H = in.dim(0), W = in.dim(1), Cin = in.dim(2);
    const int kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
    const int Ho = os[0], Wo = os[1];
    require(int(bias.size()) == Cout, "conv2d bias size mismatch");

    const T* kp0 = kernel.data.data();
    for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
            T* op = &out.data[(size_t(ho) * Wo + wo) * Cout];
            std::copy(bias.data.begin(), bias.data.end(), op);
            for (int i = 0; i < kh; ++i) {
                const T* ip = &in.data[(size_t(ho + i) * W + wo) * Cin];
                const T* kp = kp0 + size_t(i) * kw * Cin * Cout;
                for (int j = 0; j < kw; ++j) {
                    for (int ci = 0; ci < Cin; ++ci) {
                        const T a = ip[size_t(j) * Cin + ci];
                        const T* kr = kp + (size_t(j) * Cin + ci) * Cout;
                        for (int co = 0; co < Cout; ++co) op[co] += a * kr[co];
                    }
                }
            }
        }
    }
}

// Accumulates into d_kernel/d_bias; overwrites d_in when provided.
template <typename T>
inline void conv2d_backward(const Tensor<T>& in, const Tensor<T>& kernel, const Tensor<T>& d_out,
                            Tensor<T>* d_in, Tensor<T>& d_kernel, Tensor<T>& d_bias) {
    const int W = in.dim(1), Cin = in.dim(2);
    const int kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
    const int Ho = d_out.dim(0), Wo = d_out.dim(1);

    if (d_in) d_in->zero();
    for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
            const T* gp = &d_out.data[(size_t(ho) * Wo + wo) * Cout];
            for (int co = 0; co < Cout; ++co) d_bias.data[size_t(co)] += gp[co];
            for (int i = 0; i < kh; ++i) {
                const T* ip = &in.data[(size_t(ho + i) * W + wo) * Cin];
                T* dip = d_in ? &d_in->data[(size_t(ho + i) * W + wo) * Cin] : nullptr;
                const size_t krow = size_t(i) * kw * Cin * Cout;
                for (int j = 0; j < kw; ++j) {
                    for (int ci = 0; ci < Cin; ++ci) {
                        const size_t koff = krow + (size_t(j) * Cin + ci) * Cout;
                        const T a = ip[size_t(j) * Cin + ci];
                        T* dkr = &d_kernel.data[koff];
                        const T* kr = &kernel.data[koff];
                        T acc = 0;
                        for (int co = 0; co < Cout; ++co) {
                            dkr[co] += a * gp[co];
                            acc += kr[co] * gp[co];
                        }
                        if (dip) dip[size_t(j) * Cin + ci] += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
inline void leaky_relu_forward(const Tensor<T>& in, T slope, Tensor<T>& out) {
    require(in.shape == out.shape, "leaky_relu shape mismatch");
    for (size_t i = 0; i < in.size(); ++i) {
        const T x = in.data[i];
        out.data[i] = x >= T(0) ? x : slope * x;
    }
}

template <typename T>
inline void leaky_relu_backward(const Tensor<T>& in, T slope, const Tensor<T>& d_out,
                                Tensor<T>& d_in) {
    for (size_t i = 0; i < in.size(); ++i)
        d_in.data[i] = d_out.data[i] * (in.data[i] >= T(0) ? T(1) : slope);
}

// Leaky ReLU with the branch chosen by a reference activation. Applying the
// layer with frozen branches makes the surrounding network locally linear,
// which is what a finite-difference probe of the analytic gradient needs at
// points where the true function has kinks nearby.
template <typename T>
inline void leaky_relu_forward_masked(const Tensor<T>& in, const Tensor<T>& ref, T slope,
                                      Tensor<T>& out) {
    for (size_t i = 0; i < in.size(); ++i)
        out.data[i] = ref.data[i] >= T(0) ? in.data[i] : slope * in.data[i];
}

template <typename T>
inline std::vector<int> max_pool_out_shape(const std::vector<int>& in, int ph, int pw) {
    require(in.size() == 3, "max_pool expects HWC input");
    require(ph >= 1 && pw >= 1, "pool window must be positive");
    require(in[0] >= ph && in[1] >= pw, "pool window larger than input");
    return {in[0] / ph, in[1] / pw, in[2]};
}

// Non-overlapping max pool; floor division drops the ragged edge. argmax holds
// the flat input index per output element (first maximum wins ties).
template <typename T>
inline void max_pool_forward(const Tensor<T>& in, int ph, int pw, Tensor<T>& out,
                             std::vector<std::int32_t>& argmax) {
    auto os = max_pool_out_shape<T>(in.shape, ph, pw);
    require(out.shape == os, "max_pool output shape mismatch");
    const int W = in.dim(1), C = in.dim(2);
    const int Ho = os[0], Wo = os[1];
    argmax.assign(out.size(), 0);
    for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
            for (int c = 0; c < C; ++c) {
                T best{};
                std::int32_t best_idx = -1;
                for (int i = 0; i < ph; ++i) {
                    for (int j = 0; j < pw; ++j) {
                        const std::int32_t idx =
                            std::int32_t((size_t(ho * ph + i) * W + size_t(wo * pw + j)) * C + c);
                        const T v = in.data[size_t(idx)];
                        if (best_idx < 0 || v > best) {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                const size_t o = (size_t(ho) * Wo + wo) * C + c;
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

template <typename T>
inline void max_pool_backward(const std::vector<std::int32_t>& argmax, const Tensor<T>& d_out,
                              Tensor<T>& d_in) {
    d_in.zero();
    for (size_t o = 0; o < d_out.size(); ++o) d_in.data[size_t(argmax[o])] += d_out.data[o];
}

// Pooling with a fixed routing (see leaky_relu_forward_masked).
template <typename T>
inline void max_pool_gather(const Tensor<T>& in, const std::vector<std::int32_t>& argmax,
                            Tensor<T>& out) {
    for (size_t o = 0; o < out.size(); ++o) out.data[o] = in.data[size_t(argmax[o])];
}

template <typename T>
inline void linear_forward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias,
                           Tensor<T>& out) {
    require(weight.shape.size() == 2, "linear weight must be 2-D {out,in}");
    const int In = weight.dim(1), Out = weight.dim(0);
    require(int(in.size()) == In, "linear input size " + std::to_string(in.size()) +
                                      " != " + std::to_string(In));
    require(int(out.size()) == Out && int(bias.size()) == Out, "linear output size mismatch");
    for (int o = 0; o < Out; ++o) {
        const T* wr = &weight.data[size_t(o) * In];
        T acc = bias.data[size_t(o)];
        for (int i = 0; i < In; ++i) acc += wr[i] * in.data[size_t(i)];
        out.data[size_t(o)] = acc;
    }
}

template <typename T>
inline void linear_backward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& d_out,
                            Tensor<T>* d_in, Tensor<T>& d_weight, Tensor<T>& d_bias) {
    const int In = weight.dim(1), Out = weight.dim(0);
    if (d_in) d_in->zero();
    for (int o = 0; o < Out; ++o) {
        const T g = d_out.data[size_t(o)];
        d_bias.data[size_t(o)] += g;
        T* dwr = &d_weight.data[size_t(o) * In];
        const T* wr = &weight.data[size_t(o) * In];
        for (int i = 0; i < In; ++i) {
            dwr[i] += g * in.data[size_t(i)];
            if (d_in) d_in->data[size_t(i)] += g * wr[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Numerically stable softmax + cross-entropy for a two-class logit pair.
// Returns the loss; fills probs and (optionally) d_logits = p - onehot(y).
template <typename T>
struct SoftmaxCE {
    T loss;
    T probs[2];
    T d_logits[2];
};

template <typename T>
inline SoftmaxCE<T> softmax_ce(const T* logits, int y) {
    SoftmaxCE<T> r;
    const T mx = std::max(logits[0], logits[1]);
    const T e0 = std::exp(logits[0] - mx);
    const T e1 = std::exp(logits[1] - mx);
    const T z = e0 + e1;
    r.probs[0] = e0 / z;
    r.probs[1] = e1 / z;
    // loss = log(sum exp(l - mx)) - (l_y - mx); never takes log of zero
    r.loss = std::log(z) - (logits[y] - mx);
    r.d_logits[0] = r.probs[0] - (y == 0 ? T(1) : T(0));
    r.d_logits[1] = r.probs[1] - (y == 1 ? T(1) : T(0));
    return r;
}

template <typename T>
inline T mse_loss(T pred, T target) {
    const T d = pred - target;
    return d * d;
}

// d/dpred of (pred-target)^2, scaled (use 1/batch for a batch-mean loss).
template <typename T>
inline T mse_grad(T pred, T target, T scale) {
    return T(2) * (pred - target) * scale;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update for a block. `t` is the 1-based global step.
template <typename T>
inline void adam_step(ParamBlock<T>& p, const AdamConfig& cfg, long t) {
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T corr1 = T(1.0 - std::pow(cfg.beta1, double(t)));
    const T corr2 = T(1.0 - std::pow(cfg.beta2, double(t)));
    const T lr = T(cfg.lr), eps = T(cfg.eps);
    for (size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad.data[i];
        p.adam_m.data[i] = b1 * p.adam_m.data[i] + (T(1) - b1) * g;
        p.adam_v.data[i] = b2 * p.adam_v.data[i] + (T(1) - b2) * g * g;
        const T mhat = p.adam_m.data[i] / corr1;
        const T vhat = p.adam_v.data[i] / corr2;
        p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace stockcnn
