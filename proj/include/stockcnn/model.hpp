#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stockcnn/chart.hpp"
#include "stockcnn/errors.hpp"
#include "stockcnn/multiscale.hpp"
#include "stockcnn/nn.hpp"
#include "stockcnn/seq_features.hpp"

namespace stockcnn {

struct ModelConfig {
    std::string kind = "smsfr";  // "msr" (images only) or "smsfr" (+ sequence, + regression head)
    int n = 20;                  // window days
    int fusion_dim = 256;        // concatenated image feature width
    int seq_dim = 128;           // sequence branch output width
    int head_hidden = 128;
    double lambda = 1.0;         // regression loss weight
    double leaky_slope = 0.01;
    std::uint64_t seed = 1;
    ChartGeometry geometry;
    std::string precision = "float32";  // training scalar type ("float32"/"float64")

    int submap_count() const { return num_submaps(n); }
    bool has_sequence_branch() const { return kind == "smsfr"; }

    void validate() const {
        if (kind != "msr" && kind != "smsfr")
            throw ConfigError("model kind must be msr or smsfr, got '" + kind + "'");
        if (fusion_dim < submap_count())
            throw ConfigError("fusion_dim smaller than the sub-map count");
        if (seq_dim < 1 || head_hidden < 1) throw ConfigError("widths must be positive");
        if (lambda < 0) throw ConfigError("lambda must be >= 0");
        if (!(leaky_slope > 0 && leaky_slope < 1)) throw ConfigError("slope must lie in (0,1)");
        if (precision != "float32" && precision != "float64")
            throw ConfigError("precision must be float32 or float64");
        geometry.validate();
        num_submaps(n);  // throws unless n is a positive multiple of 5
    }
};

// Per-sample model input: one image tensor per sub-map ({H,W,1}, values 0/1)
// plus the sequence matrix ({30,12,1}) when the model has a sequence branch.
template <typename T>
struct ModelInput {
    std::vector<Tensor<T>> images;
    Tensor<T> seq;
};

template <typename T>
inline Tensor<T> image_to_tensor(const ChartImage& img) {
    Tensor<T> t({img.height, img.width, 1});
    for (size_t i = 0; i < img.pixels.size(); ++i) t.data[i] = T(img.pixels[i]);
    return t;
}

template <typename T>
inline Tensor<T> seq_to_tensor(const SequenceMatrix& m) {
    Tensor<T> t({kSeqDays, kSeqFeatures, 1});
    for (size_t i = 0; i < m.values.size(); ++i) t.data[i] = T(m.values[i]);
    return t;
}

namespace detail {

// linear_forward over a tensor treated as a flat vector.
template <typename T>
inline void linear_forward_flat(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                                Tensor<T>& out) {
    const int In = w.dim(1), Out = w.dim(0);
    require(int(in.size()) == In, "linear input size mismatch");
    require(int(out.size()) == Out, "linear output size mismatch");
    for (int o = 0; o < Out; ++o) {
        const T* wr = &w.data[size_t(o) * In];
        T acc = b.data[size_t(o)];
        for (int i = 0; i < In; ++i) acc += wr[i] * in.data[size_t(i)];
        out.data[size_t(o)] = acc;
    }
}

template <typename T>
inline void linear_backward_flat(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& d_out,
                                 Tensor<T>* d_in, Tensor<T>& d_w, Tensor<T>& d_b) {
    const int In = w.dim(1), Out = w.dim(0);
    if (d_in) d_in->zero();
    for (int o = 0; o < Out; ++o) {
        const T g = d_out.data[size_t(o)];
        d_b.data[size_t(o)] += g;
        T* dwr = &d_w.data[size_t(o) * In];
        const T* wr = &w.data[size_t(o) * In];
        for (int i = 0; i < In; ++i) {
            dwr[i] += g * in.data[size_t(i)];
            if (d_in) d_in->data[size_t(i)] += g * wr[i];
        }
    }
}

// Shared structure of both convolutional feature extractors: two rounds of
// conv 5x3 -> leaky ReLU -> pool 2x1, then a linear projection.
template <typename T>
struct ConvStack {
    int in_h = 0, in_w = 0, out_dim = 0;
    int c1 = 0, c2 = 0;  // channel counts
    ParamBlock<T> conv1_k, conv1_b, conv2_k, conv2_b, lin_w, lin_b;
    std::vector<int> s_c1, s_p1, s_c2, s_p2;
    int flat = 0;

    ConvStack(const std::string& name, int h, int w, int ch1, int ch2, int out)
        : in_h(h), in_w(w), out_dim(out), c1(ch1), c2(ch2) {
        s_c1 = conv2d_out_shape<T>({h, w, 1}, {5, 3, 1, c1});
        s_p1 = max_pool_out_shape<T>(s_c1, 2, 1);
        s_c2 = conv2d_out_shape<T>(s_p1, {5, 3, c1, c2});
        s_p2 = max_pool_out_shape<T>(s_c2, 2, 1);
        flat = s_p2[0] * s_p2[1] * s_p2[2];

        conv1_k = ParamBlock<T>(name + ".conv1.k", {5, 3, 1, c1});
        conv1_b = ParamBlock<T>(name + ".conv1.b", {c1});
        conv2_k = ParamBlock<T>(name + ".conv2.k", {5, 3, c1, c2});
        conv2_b = ParamBlock<T>(name + ".conv2.b", {c2});
        lin_w = ParamBlock<T>(name + ".lin.w", {out, flat});
        lin_b = ParamBlock<T>(name + ".lin.b", {out});
    }

    void init(Rng& rng) {
        xavier_init(conv1_k.value, 5 * 3 * 1, 5 * 3 * c1, rng);
        xavier_init(conv2_k.value, 5 * 3 * c1, 5 * 3 * c2, rng);
        xavier_init(lin_w.value, flat, out_dim, rng);
    }

    void collect(std::vector<ParamBlock<T>*>& out) {
        out.push_back(&conv1_k);
        out.push_back(&conv1_b);
        out.push_back(&conv2_k);
        out.push_back(&conv2_b);
        out.push_back(&lin_w);
        out.push_back(&lin_b);
    }
};

template <typename T>
struct ConvStackActs {
    Tensor<T> c1, r1, p1, c2, r2, p2, out;
    Tensor<T> d_c1, d_r1, d_p1, d_c2, d_r2, d_p2;
    std::vector<std::int32_t> am1, am2;

    explicit ConvStackActs(const ConvStack<T>& s)
        : c1(s.s_c1), r1(s.s_c1), p1(s.s_p1), c2(s.s_c2), r2(s.s_c2), p2(s.s_p2),
          out({s.out_dim}), d_c1(s.s_c1), d_r1(s.s_c1), d_p1(s.s_p1), d_c2(s.s_c2),
          d_r2(s.s_c2), d_p2(s.s_p2) {}
};

template <typename T>
inline void conv_stack_forward(const ConvStack<T>& s, const Tensor<T>& in, T slope,
                               ConvStackActs<T>& a) {
    conv2d_forward(in, s.conv1_k.value, s.conv1_b.value, a.c1);
    leaky_relu_forward(a.c1, slope, a.r1);
    max_pool_forward(a.r1, 2, 1, a.p1, a.am1);
    conv2d_forward(a.p1, s.conv2_k.value, s.conv2_b.value, a.c2);
    leaky_relu_forward(a.c2, slope, a.r2);
    max_pool_forward(a.r2, 2, 1, a.p2, a.am2);
    linear_forward_flat(a.p2, s.lin_w.value, s.lin_b.value, a.out);
}

// Forward pass with ReLU branches and pool routing pinned to a reference
// forward's activations: the locally linearized graph whose exact gradient is
// what backward computes.
template <typename T>
inline void conv_stack_forward_frozen(const ConvStack<T>& s, const Tensor<T>& in, T slope,
                                      ConvStackActs<T>& a, const ConvStackActs<T>& ref) {
    conv2d_forward(in, s.conv1_k.value, s.conv1_b.value, a.c1);
    leaky_relu_forward_masked(a.c1, ref.c1, slope, a.r1);
    max_pool_gather(a.r1, ref.am1, a.p1);
    conv2d_forward(a.p1, s.conv2_k.value, s.conv2_b.value, a.c2);
    leaky_relu_forward_masked(a.c2, ref.c2, slope, a.r2);
    max_pool_gather(a.r2, ref.am2, a.p2);
    linear_forward_flat(a.p2, s.lin_w.value, s.lin_b.value, a.out);
}

}  // namespace detail

// Gradient buffers aligned with Model::params() ordering, so batch threads can
// accumulate independently and be reduced in a fixed order.
template <typename T>
struct ModelGrads {
    std::vector<Tensor<T>> g;

    void zero() {
        for (auto& t : g) t.zero();
    }
    void add(const ModelGrads& other) {
        for (size_t i = 0; i < g.size(); ++i)
            for (size_t k = 0; k < g[i].size(); ++k) g[i].data[k] += other.g[i].data[k];
    }
};

// Per-sample activation workspace; reusable across samples, one per thread.
template <typename T>
struct Workspace {
    std::vector<detail::ConvStackActs<T>> msf;
    std::unique_ptr<detail::ConvStackActs<T>> ts;
    Tensor<T> fused, h, hr, logits, rhat;
    Tensor<T> d_fused, d_h, d_hr_cls, d_hr_reg, d_logits_t, d_rhat_t;
};

// The two fixed architectures. Every sub-map feeds its own MSF stack
// (conv 5x3 x64 -> pool 2x1 -> conv 5x3 x128 -> pool 2x1 -> linear to its
// weighted share of fusion_dim); SMSFR adds the sequence stack (x128 -> x256
// -> linear to seq_dim) and a scalar regression head beside the softmax head.
template <typename T>
class Model {
  public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const int c = cfg_.submap_count();
        weights_ = feature_weights(c);
        dims_ = weighted_dims(weights_, cfg_.fusion_dim);
        const int h = cfg_.geometry.height();

        for (int i = 0; i < c; ++i) {
            const int w = cfg_.geometry.fixed_width(5, i == 0 ? 1 : 2);
            blocks_.emplace_back("msf" + std::to_string(i + 1), h, w, 64, 128, dims_[size_t(i)]);
        }
        if (cfg_.has_sequence_branch())
            ts_ = std::make_unique<detail::ConvStack<T>>("ts", kSeqDays, kSeqFeatures, 128, 256,
                                                         cfg_.seq_dim);

        const int fused = fused_dim();
        fc1_w_ = ParamBlock<T>("head.fc1.w", {cfg_.head_hidden, fused});
        fc1_b_ = ParamBlock<T>("head.fc1.b", {cfg_.head_hidden});
        cls_w_ = ParamBlock<T>("head.cls.w", {2, cfg_.head_hidden});
        cls_b_ = ParamBlock<T>("head.cls.b", {2});
        if (cfg_.has_sequence_branch()) {
            reg_w_ = ParamBlock<T>("head.reg.w", {1, cfg_.head_hidden});
            reg_b_ = ParamBlock<T>("head.reg.b", {1});
        }

        Rng rng(cfg_.seed);
        for (auto& b : blocks_) b.init(rng);
        if (ts_) ts_->init(rng);
        xavier_init(fc1_w_.value, fused, cfg_.head_hidden, rng);
        xavier_init(cls_w_.value, cfg_.head_hidden, 2, rng);
        if (cfg_.has_sequence_branch()) xavier_init(reg_w_.value, cfg_.head_hidden, 1, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<int>& block_dims() const { return dims_; }
    int fused_dim() const {
        return cfg_.fusion_dim + (cfg_.has_sequence_branch() ? cfg_.seq_dim : 0);
    }
    int image_width(int block_index) const {
        return cfg_.geometry.fixed_width(5, block_index == 0 ? 1 : 2);
    }

    std::vector<ParamBlock<T>*> params() {
        std::vector<ParamBlock<T>*> out;
        for (auto& b : blocks_) b.collect(out);
        if (ts_) ts_->collect(out);
        out.push_back(&fc1_w_);
        out.push_back(&fc1_b_);
        out.push_back(&cls_w_);
        out.push_back(&cls_b_);
        if (cfg_.has_sequence_branch()) {
            out.push_back(&reg_w_);
            out.push_back(&reg_b_);
        }
        return out;
    }

    ModelGrads<T> make_grads() {
        ModelGrads<T> g;
        for (auto* p : params()) g.g.emplace_back(p->value.shape);
        return g;
    }

    Workspace<T> make_workspace() const {
        Workspace<T> ws;
        for (const auto& b : blocks_) ws.msf.emplace_back(b);
        if (ts_) ws.ts = std::make_unique<detail::ConvStackActs<T>>(*ts_);
        const int fused = fused_dim();
        ws.fused = Tensor<T>({fused});
        ws.h = Tensor<T>({cfg_.head_hidden});
        ws.hr = Tensor<T>({cfg_.head_hidden});
        ws.logits = Tensor<T>({2});
        ws.rhat = Tensor<T>({1});
        ws.d_fused = Tensor<T>({fused});
        ws.d_h = Tensor<T>({cfg_.head_hidden});
        ws.d_hr_cls = Tensor<T>({cfg_.head_hidden});
        ws.d_hr_reg = Tensor<T>({cfg_.head_hidden});
        ws.d_logits_t = Tensor<T>({2});
        ws.d_rhat_t = Tensor<T>({1});
        return ws;
    }

    struct Output {
        T logits[2];
        T probs[2];
        T rhat;
    };

    // Pure given parameters; activations land in ws for a later backward.
    Output forward(const ModelInput<T>& in, Workspace<T>& ws) const {
        check_input(in);
        const T slope = T(cfg_.leaky_slope);
        int off = 0;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            detail::conv_stack_forward(blocks_[i], in.images[i], slope, ws.msf[i]);
            std::copy(ws.msf[i].out.data.begin(), ws.msf[i].out.data.end(),
                      ws.fused.data.begin() + off);
            off += blocks_[i].out_dim;
        }
        if (ts_) {
            detail::conv_stack_forward(*ts_, in.seq, slope, *ws.ts);
            std::copy(ws.ts->out.data.begin(), ws.ts->out.data.end(), ws.fused.data.begin() + off);
        }
        detail::linear_forward_flat(ws.fused, fc1_w_.value, fc1_b_.value, ws.h);
        leaky_relu_forward(ws.h, slope, ws.hr);
        detail::linear_forward_flat(ws.hr, cls_w_.value, cls_b_.value, ws.logits);

        Output out;
        out.logits[0] = ws.logits.data[0];
        out.logits[1] = ws.logits.data[1];
        auto sm = softmax_ce(out.logits, 0);
        out.probs[0] = sm.probs[0];
        out.probs[1] = sm.probs[1];
        out.rhat = T(0);
        if (cfg_.has_sequence_branch()) {
            detail::linear_forward_flat(ws.hr, reg_w_.value, reg_b_.value, ws.rhat);
            out.rhat = ws.rhat.data[0];
        }
        return out;
    }

    // Accumulates this sample's parameter gradients into `grads` (aligned with
    // params()). Requires ws to hold the sample's forward activations.
    void backward(const ModelInput<T>& in, Workspace<T>& ws, const T d_logits[2], T d_rhat,
                  ModelGrads<T>& grads) const {
        const T slope = T(cfg_.leaky_slope);
        const size_t ts_base = blocks_.size() * 6;
        const size_t head_base = ts_base + (ts_ ? 6 : 0);

        ws.d_logits_t.data[0] = d_logits[0];
        ws.d_logits_t.data[1] = d_logits[1];
        detail::linear_backward_flat(ws.hr, cls_w_.value, ws.d_logits_t, &ws.d_hr_cls,
                                     grads.g[head_base + 2], grads.g[head_base + 3]);
        if (cfg_.has_sequence_branch()) {
            ws.d_rhat_t.data[0] = d_rhat;
            detail::linear_backward_flat(ws.hr, reg_w_.value, ws.d_rhat_t, &ws.d_hr_reg,
                                         grads.g[head_base + 4], grads.g[head_base + 5]);
            for (size_t i = 0; i < ws.d_hr_cls.size(); ++i)
                ws.d_hr_cls.data[i] += ws.d_hr_reg.data[i];
        }

        leaky_relu_backward(ws.h, slope, ws.d_hr_cls, ws.d_h);
        detail::linear_backward_flat(ws.fused, fc1_w_.value, ws.d_h, &ws.d_fused,
                                     grads.g[head_base + 0], grads.g[head_base + 1]);

        int off = 0;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            conv_stack_backward(blocks_[i], in.images[i], ws.msf[i], slope,
                                ws.d_fused.data.data() + off, grads, i * 6);
            off += blocks_[i].out_dim;
        }
        if (ts_)
            conv_stack_backward(*ts_, in.seq, *ws.ts, slope, ws.d_fused.data.data() + off, grads,
                                ts_base);
    }

    // Convenience for tests and single-sample inference.
    Output predict_one(const ModelInput<T>& in) const {
        Workspace<T> ws = make_workspace();
        return forward(in, ws);
    }

    // Forward through the graph linearized at `ref` (a workspace filled by a
    // regular forward on the same input): ReLU branches and pool routings are
    // pinned, so the result is the locally linear function whose gradient the
    // backward pass computes. Used by finite-difference verification, where
    // probing across a kink would otherwise contaminate the difference.
    Output forward_frozen(const ModelInput<T>& in, Workspace<T>& ws,
                          const Workspace<T>& ref) const {
        check_input(in);
        const T slope = T(cfg_.leaky_slope);
        int off = 0;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            detail::conv_stack_forward_frozen(blocks_[i], in.images[i], slope, ws.msf[i],
                                              ref.msf[i]);
            std::copy(ws.msf[i].out.data.begin(), ws.msf[i].out.data.end(),
                      ws.fused.data.begin() + off);
            off += blocks_[i].out_dim;
        }
        if (ts_) {
            detail::conv_stack_forward_frozen(*ts_, in.seq, slope, *ws.ts, *ref.ts);
            std::copy(ws.ts->out.data.begin(), ws.ts->out.data.end(), ws.fused.data.begin() + off);
        }
        detail::linear_forward_flat(ws.fused, fc1_w_.value, fc1_b_.value, ws.h);
        leaky_relu_forward_masked(ws.h, ref.h, slope, ws.hr);
        detail::linear_forward_flat(ws.hr, cls_w_.value, cls_b_.value, ws.logits);

        Output out;
        out.logits[0] = ws.logits.data[0];
        out.logits[1] = ws.logits.data[1];
        auto sm = softmax_ce(out.logits, 0);
        out.probs[0] = sm.probs[0];
        out.probs[1] = sm.probs[1];
        out.rhat = T(0);
        if (cfg_.has_sequence_branch()) {
            detail::linear_forward_flat(ws.hr, reg_w_.value, reg_b_.value, ws.rhat);
            out.rhat = ws.rhat.data[0];
        }
        return out;
    }

  private:
    void check_input(const ModelInput<T>& in) const {
        if (int(in.images.size()) != int(blocks_.size()))
            throw ConfigError("model expects " + std::to_string(blocks_.size()) +
                              " sub-map images, got " + std::to_string(in.images.size()));
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const auto& s = in.images[i].shape;
            if (s.size() != 3 || s[0] != blocks_[i].in_h || s[1] != blocks_[i].in_w || s[2] != 1)
                throw ShapeError("sub-map " + std::to_string(i + 1) + " image shape mismatch");
        }
        if (ts_ && in.seq.shape != std::vector<int>{kSeqDays, kSeqFeatures, 1})
            throw ShapeError("sequence tensor must be 30x12x1");
    }

    void conv_stack_backward(const detail::ConvStack<T>& s, const Tensor<T>& in,
                             detail::ConvStackActs<T>& a, T slope, const T* d_out_ptr,
                             ModelGrads<T>& grads, size_t base) const {
        Tensor<T> d_out({s.out_dim});
        std::copy(d_out_ptr, d_out_ptr + s.out_dim, d_out.data.begin());
        detail::linear_backward_flat(a.p2, s.lin_w.value, d_out, &a.d_p2, grads.g[base + 4],
                                     grads.g[base + 5]);
        max_pool_backward(a.am2, a.d_p2, a.d_r2);
        leaky_relu_backward(a.c2, slope, a.d_r2, a.d_c2);
        conv2d_backward(a.p1, s.conv2_k.value, a.d_c2, &a.d_p1, grads.g[base + 2],
                        grads.g[base + 3]);
        max_pool_backward(a.am1, a.d_p1, a.d_r1);
        leaky_relu_backward(a.c1, slope, a.d_r1, a.d_c1);
        conv2d_backward(in, s.conv1_k.value, a.d_c1, static_cast<Tensor<T>*>(nullptr),
                        grads.g[base + 0], grads.g[base + 1]);
    }

    ModelConfig cfg_;
    std::vector<double> weights_;
    std::vector<int> dims_;
    std::vector<detail::ConvStack<T>> blocks_;
    std::unique_ptr<detail::ConvStack<T>> ts_;
    ParamBlock<T> fc1_w_, fc1_b_, cls_w_, cls_b_, reg_w_, reg_b_;

    template <typename U>
    friend class ModelIO;
};

}  // namespace stockcnn
