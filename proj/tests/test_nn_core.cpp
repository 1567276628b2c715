#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stockcnn/gradcheck.hpp"
#include "stockcnn/nn.hpp"
#include "stockcnn/rng.hpp"

using namespace stockcnn;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = T(rng.uniform(lo, hi));
    return t;
}

// Independent quadruple-loop convolution oracle.
Tensor<double> conv_oracle(const Tensor<double>& in, const Tensor<double>& k,
                           const Tensor<double>& b) {
    const int H = in.dim(0), W = in.dim(1), Cin = in.dim(2);
    const int kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
    Tensor<double> out({H - kh + 1, W - kw + 1, Cout});
    for (int ho = 0; ho < H - kh + 1; ++ho)
        for (int wo = 0; wo < W - kw + 1; ++wo)
            for (int co = 0; co < Cout; ++co) {
                double acc = b.data[size_t(co)];
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j)
                        for (int ci = 0; ci < Cin; ++ci)
                            acc += in.data[(size_t(ho + i) * W + (wo + j)) * Cin + ci] *
                                   k.data[((size_t(i) * kw + j) * Cin + ci) * Cout + co];
                out.data[(size_t(ho) * (W - kw + 1) + wo) * Cout + co] = acc;
            }
    return out;
}

// Independent max-pool oracle.
Tensor<double> pool_oracle(const Tensor<double>& in, int ph, int pw) {
    const int H = in.dim(0), W = in.dim(1), C = in.dim(2);
    Tensor<double> out({H / ph, W / pw, C});
    for (int ho = 0; ho < H / ph; ++ho)
        for (int wo = 0; wo < W / pw; ++wo)
            for (int c = 0; c < C; ++c) {
                double best = -1e300;
                for (int i = 0; i < ph; ++i)
                    for (int j = 0; j < pw; ++j)
                        best = std::max(best,
                                        in.data[(size_t(ho * ph + i) * W + (wo * pw + j)) * C + c]);
                out.data[(size_t(ho) * (W / pw) + wo) * C + c] = best;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel is the identity") {
    Rng rng(1);
    auto in = random_tensor<double>({4, 5, 1}, rng);
    Tensor<double> k({1, 1, 1, 1});
    k.data[0] = 1.0;
    Tensor<double> b({1});
    Tensor<double> out({4, 5, 1});
    conv2d_forward(in, k, b, out);
    for (size_t i = 0; i < in.size(); ++i) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("conv2d: all-ones 2x2 over all-ones 2x2 gives 4") {
    Tensor<double> in({2, 2, 1});
    std::fill(in.data.begin(), in.data.end(), 1.0);
    Tensor<double> k({2, 2, 1, 1});
    std::fill(k.data.begin(), k.data.end(), 1.0);
    Tensor<double> b({1});
    Tensor<double> out({1, 1, 1});
    conv2d_forward(in, k, b, out);
    CHECK(out.data[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("conv2d matches the quadruple-loop oracle") {
    Rng rng(42);
    auto in = random_tensor<double>({8, 8, 3}, rng);
    auto k = random_tensor<double>({3, 2, 3, 5}, rng);
    auto b = random_tensor<double>({5}, rng);
    Tensor<double> out({6, 7, 5});
    conv2d_forward(in, k, b, out);
    auto want = conv_oracle(in, k, b);
    REQUIRE(out.shape == want.shape);
    for (size_t i = 0; i < out.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("conv2d shape errors") {
    Rng rng(2);
    auto in = random_tensor<double>({4, 4, 2}, rng);
    auto k = random_tensor<double>({5, 3, 2, 1}, rng);  // kernel taller than input
    Tensor<double> b({1});
    CHECK_THROWS_AS(conv2d_out_shape<double>(in.shape, k.shape), ShapeError);
    auto k2 = random_tensor<double>({2, 2, 3, 1}, rng);  // channel mismatch
    CHECK_THROWS_AS(conv2d_out_shape<double>(in.shape, k2.shape), ShapeError);
}

TEST_CASE("conv2d gradients pass central differences") {
    Rng rng(7);
    auto in = random_tensor<double>({6, 5, 2}, rng);
    ParamBlock<double> kernel("k", {3, 2, 2, 4});
    ParamBlock<double> bias("b", {4});
    xavier_init(kernel.value, 3 * 2 * 2, 3 * 2 * 4, rng);
    auto weights = random_tensor<double>({4, 4, 4}, rng);  // fixed loss weights

    Tensor<double> out({4, 4, 4});
    auto loss = [&]() {
        conv2d_forward(in, kernel.value, bias.value, out);
        double acc = 0;
        for (size_t i = 0; i < out.size(); ++i) acc += out.data[i] * weights.data[i];
        return acc;
    };
    auto grads = [&]() {
        kernel.grad.zero();
        bias.grad.zero();
        conv2d_forward(in, kernel.value, bias.value, out);
        conv2d_backward(in, kernel.value, weights, static_cast<Tensor<double>*>(nullptr),
                        kernel.grad, bias.grad);
    };
    auto report = grad_check({&kernel, &bias}, loss, grads, {.tolerance = 1e-4});
    INFO(report.summary());
    CHECK(report.pass);
}

TEST_CASE("conv2d input gradient passes central differences") {
    Rng rng(11);
    ParamBlock<double> input("x", {5, 4, 2});
    for (auto& v : input.value.data) v = rng.uniform(-1, 1);
    auto k = random_tensor<double>({2, 2, 2, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    auto w = random_tensor<double>({4, 3, 3}, rng);
    Tensor<double> out({4, 3, 3});
    Tensor<double> dk(k.shape), db({3});
    auto loss = [&]() {
        conv2d_forward(input.value, k, b, out);
        double acc = 0;
        for (size_t i = 0; i < out.size(); ++i) acc += out.data[i] * w.data[i];
        return acc;
    };
    auto grads = [&]() {
        input.grad.zero();
        dk.zero();
        db.zero();
        conv2d_forward(input.value, k, b, out);
        conv2d_backward(input.value, k, w, &input.grad, dk, db);
    };
    auto report = grad_check({&input}, loss, grads, {.tolerance = 1e-4});
    CHECK(report.pass);
}

TEST_CASE("leaky_relu") {
    Tensor<double> in({1, 1, 4});
    in.data = {2.0, 0.0, -1.0, -50.0};
    Tensor<double> out({1, 1, 4});
    leaky_relu_forward(in, 0.01, out);
    CHECK(out.data[0] == 2.0);
    CHECK(out.data[1] == 0.0);
    CHECK(out.data[2] == doctest::Approx(-0.01));
    CHECK(out.data[3] == doctest::Approx(-0.5));

    Tensor<double> dout({1, 1, 4});
    std::fill(dout.data.begin(), dout.data.end(), 1.0);
    Tensor<double> din({1, 1, 4});
    leaky_relu_backward(in, 0.01, dout, din);
    CHECK(din.data[0] == 1.0);
    CHECK(din.data[1] == 1.0);  // x = 0 takes the positive branch
    CHECK(din.data[2] == doctest::Approx(0.01));
    CHECK(din.data[3] == doctest::Approx(0.01));
}

TEST_CASE("max_pool basics and tie rule") {
    Tensor<double> in({2, 1, 1});
    in.data = {3.0, 7.0};
    Tensor<double> out({1, 1, 1});
    std::vector<std::int32_t> argmax;
    max_pool_forward(in, 2, 1, out, argmax);
    CHECK(out.data[0] == 7.0);
    CHECK(argmax[0] == 1);

    // Tie: gradient routes to the first occurrence.
    in.data = {5.0, 5.0};
    max_pool_forward(in, 2, 1, out, argmax);
    CHECK(argmax[0] == 0);
    Tensor<double> dout({1, 1, 1});
    dout.data[0] = 2.5;
    Tensor<double> din({2, 1, 1});
    max_pool_backward(argmax, dout, din);
    CHECK(din.data[0] == 2.5);
    CHECK(din.data[1] == 0.0);

    CHECK_THROWS_AS(max_pool_out_shape<double>({1, 1, 1}, 2, 1), ShapeError);
}

TEST_CASE("max_pool matches loop oracle on random tensors") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto in = random_tensor<double>({7, 6, 3}, rng);
        Tensor<double> out({3, 6, 3});
        std::vector<std::int32_t> argmax;
        max_pool_forward(in, 2, 1, out, argmax);
        auto want = pool_oracle(in, 2, 1);
        for (size_t i = 0; i < out.size(); ++i) CHECK(out.data[i] == want.data[i]);
    }
}

TEST_CASE("linear basics") {
    // Identity weights, zero bias.
    Tensor<double> in({3});
    in.data = {1.5, -2.0, 0.5};
    ParamBlock<double> w("w", {3, 3});
    for (int i = 0; i < 3; ++i) w.value.data[size_t(i) * 3 + i] = 1.0;
    ParamBlock<double> b("b", {3});
    Tensor<double> out({3});
    linear_forward(in, w.value, b.value, out);
    for (int i = 0; i < 3; ++i) CHECK(out.data[size_t(i)] == in.data[size_t(i)]);

    // Zero weights, bias b.
    w.value.zero();
    b.value.data = {4.0, 5.0, 6.0};
    linear_forward(in, w.value, b.value, out);
    CHECK(out.data[0] == 4.0);
    CHECK(out.data[1] == 5.0);
    CHECK(out.data[2] == 6.0);

    Tensor<double> wrong({4});
    CHECK_THROWS_AS(linear_forward(wrong, w.value, b.value, out), ShapeError);
}

TEST_CASE("linear matches matrix-product oracle and passes gradient check") {
    Rng rng(13);
    auto in = random_tensor<double>({11}, rng);
    ParamBlock<double> w("w", {7, 11});
    ParamBlock<double> b("b", {7});
    xavier_init(w.value, 11, 7, rng);
    Tensor<double> out({7});
    linear_forward(in, w.value, b.value, out);
    for (int o = 0; o < 7; ++o) {
        double acc = b.value.data[size_t(o)];
        for (int i = 0; i < 11; ++i) acc += w.value.data[size_t(o) * 11 + i] * in.data[size_t(i)];
        CHECK(out.data[size_t(o)] == doctest::Approx(acc).epsilon(1e-12));
    }

    auto lw = random_tensor<double>({7}, rng);
    auto loss = [&]() {
        linear_forward(in, w.value, b.value, out);
        double acc = 0;
        for (int o = 0; o < 7; ++o) acc += out.data[size_t(o)] * lw.data[size_t(o)];
        return acc;
    };
    auto grads = [&]() {
        w.grad.zero();
        b.grad.zero();
        linear_forward(in, w.value, b.value, out);
        linear_backward(in, w.value, lw, static_cast<Tensor<double>*>(nullptr), w.grad, b.grad);
    };
    auto report = grad_check({&w, &b}, loss, grads, {.tolerance = 1e-4});
    CHECK(report.pass);
}

TEST_CASE("softmax_ce") {
    double logits[2] = {0.0, 0.0};
    auto r = softmax_ce(logits, 1);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.probs[0] == doctest::Approx(0.5));
    CHECK(r.probs[1] == doctest::Approx(0.5));

    double big[2] = {1000.0, 0.0};
    auto rb = softmax_ce(big, 0);
    CHECK(rb.probs[0] == doctest::Approx(1.0));
    CHECK(rb.probs[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(rb.loss));
    CHECK(rb.loss == doctest::Approx(0.0).epsilon(1e-12));
    // The losing class stays finite too.
    auto rl = softmax_ce(big, 1);
    CHECK(std::isfinite(rl.loss));
    CHECK(rl.loss == doctest::Approx(1000.0).epsilon(1e-9));

    // Probabilities sum to 1 for logits up to |1e4|.
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        double l[2] = {rng.uniform(-1e4, 1e4), rng.uniform(-1e4, 1e4)};
        auto rr = softmax_ce(l, int(rng.below(2)));
        CHECK(rr.probs[0] >= 0.0);
        CHECK(rr.probs[1] >= 0.0);
        CHECK(rr.probs[0] + rr.probs[1] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(std::isfinite(rr.loss));
    }
}

TEST_CASE("softmax_ce gradient vs central differences") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        double l[2] = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
        int y = int(rng.below(2));
        auto r = softmax_ce(l, y);
        const double h = 1e-6;
        for (int k = 0; k < 2; ++k) {
            double lp[2] = {l[0], l[1]}, lm[2] = {l[0], l[1]};
            lp[k] += h;
            lm[k] -= h;
            double fd = (softmax_ce(lp, y).loss - softmax_ce(lm, y).loss) / (2 * h);
            CHECK(r.d_logits[k] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("mse") {
    CHECK(mse_loss(0.03, 0.03) == 0.0);
    CHECK(mse_loss(0.05, 0.03) == doctest::Approx(0.0004).epsilon(1e-12));
    // Gradient vs central differences.
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        double p = rng.uniform(-1, 1), t = rng.uniform(-1, 1);
        const double h = 1e-6;
        double fd = (mse_loss(p + h, t) - mse_loss(p - h, t)) / (2 * h);
        CHECK(mse_grad(p, t, 1.0) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("adam: zero gradient is a fixed point") {
    ParamBlock<double> p("p", {8});
    Rng rng(9);
    for (auto& v : p.value.data) v = rng.uniform(-1, 1);
    auto before = p.value.data;
    for (long t = 1; t <= 5; ++t) adam_step(p, AdamConfig{}, t);
    CHECK(p.value.data == before);
}

TEST_CASE("adam: single constant-gradient step matches closed form") {
    // After one step: m_hat = g, v_hat = g*g, so the update is exactly
    // -lr * g / (|g| + eps), about -lr * sign(g).
    AdamConfig cfg;
    cfg.lr = 1e-3;
    ParamBlock<double> p("p", {3});
    p.value.data = {1.0, -2.0, 0.5};
    p.grad.data = {0.3, -0.7, 2.0};
    auto before = p.value.data;
    adam_step(p, cfg, 1);
    for (int i = 0; i < 3; ++i) {
        double g = p.grad.data[size_t(i)];
        double want = before[size_t(i)] - cfg.lr * g / (std::abs(g) + cfg.eps);
        CHECK(p.value.data[size_t(i)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("adam: identical runs are bitwise identical") {
    auto run = [] {
        ParamBlock<double> p("p", {16});
        Rng rng(77);
        for (auto& v : p.value.data) v = rng.uniform(-1, 1);
        for (long t = 1; t <= 20; ++t) {
            for (size_t i = 0; i < p.grad.size(); ++i)
                p.grad.data[i] = std::sin(double(t) * 0.1 + double(i));
            adam_step(p, AdamConfig{.lr = 1e-2}, t);
        }
        return p.value.data;
    };
    CHECK(run() == run());
}

TEST_CASE("xavier_init bounds, variance, determinism") {
    Rng rng(101);
    Tensor<double> t({3, 3});
    xavier_init(t, 3, 3, rng);  // bound = sqrt(6/6) = 1
    for (double v : t.data) CHECK(std::abs(v) <= 1.0);

    // Sample variance over 1e5 draws within 5% of 2/(fan_in+fan_out).
    Tensor<double> big({100000});
    Rng rng2(55);
    xavier_init(big, 40, 60, rng2);
    double mean = 0;
    for (double v : big.data) mean += v;
    mean /= double(big.size());
    double var = 0;
    for (double v : big.data) var += (v - mean) * (v - mean);
    var /= double(big.size());
    CHECK(var == doctest::Approx(2.0 / 100.0).epsilon(0.05));

    Tensor<double> a({64}), b({64});
    Rng r1(7), r2(7);
    xavier_init(a, 10, 10, r1);
    xavier_init(b, 10, 10, r2);
    CHECK(a.data == b.data);
}

TEST_CASE("grad_check flags a corrupted backward pass") {
    Rng rng(19);
    ParamBlock<double> w("w", {4, 6});
    ParamBlock<double> b("b", {4});
    xavier_init(w.value, 6, 4, rng);
    auto in = random_tensor<double>({6}, rng);
    auto lw = random_tensor<double>({4}, rng);
    Tensor<double> out({4});
    auto loss = [&]() {
        linear_forward(in, w.value, b.value, out);
        double acc = 0;
        for (int o = 0; o < 4; ++o) acc += out.data[size_t(o)] * lw.data[size_t(o)];
        return acc;
    };
    auto bad_grads = [&]() {
        w.grad.zero();
        b.grad.zero();
        linear_forward(in, w.value, b.value, out);
        linear_backward(in, w.value, lw, static_cast<Tensor<double>*>(nullptr), w.grad, b.grad);
        w.grad.data[3] += 0.5;  // deliberate corruption
    };
    auto report = grad_check({&w, &b}, loss, bad_grads, {.tolerance = 1e-4});
    CHECK(!report.pass);
}
