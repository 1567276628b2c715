#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "stockcnn/backtest.hpp"
#include "stockcnn/checkpoint.hpp"
#include "stockcnn/model.hpp"
#include "stockcnn/multiscale.hpp"
#include "stockcnn/seq_features.hpp"

namespace stockcnn {

template <typename T>
struct PreparedSample {
    ModelInput<T> input;
    int y = 0;
    T r = T(0);
};

// Renders a labeled sample into model input tensors (sub-map images, and the
// sequence matrix when the model has a sequence branch).
template <typename T>
inline PreparedSample<T> prepare_sample(const Sample& s, const ModelConfig& cfg) {
    PreparedSample<T> out;
    auto set = decompose(s.window, cfg.n);
    for (const auto& sub : set.maps) {
        ChartImage img = render_ohlct(sub.units, cfg.geometry, sub.resolution);
        out.input.images.push_back(image_to_tensor<T>(img));
    }
    if (cfg.has_sequence_branch()) out.input.seq = seq_to_tensor<T>(build_matrix(s));
    out.y = s.y;
    out.r = T(s.r);
    return out;
}

template <typename T>
inline std::vector<PreparedSample<T>> prepare_samples(const std::vector<Sample>& samples,
                                                      const ModelConfig& cfg) {
    std::vector<PreparedSample<T>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(prepare_sample<T>(s, cfg));
    return out;
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return int(std::clamp(hw, 1u, 8u));
}

// Static contiguous partition; fn(thread_index, begin, end) runs on each part.
// Chunk boundaries depend only on (count, threads), which keeps reductions
// reproducible for a fixed thread count.
inline void parallel_chunks(size_t count, int threads,
                            const std::function<void(int, size_t, size_t)>& fn) {
    const int tn = std::max(1, threads);
    if (tn == 1 || count <= 1) {
        fn(0, 0, count);
        return;
    }
    std::vector<std::thread> pool;
    for (int k = 0; k < tn; ++k) {
        const size_t b = count * size_t(k) / size_t(tn);
        const size_t e = count * size_t(k + 1) / size_t(tn);
        pool.emplace_back([&fn, k, b, e] { fn(k, b, e); });
    }
    for (auto& t : pool) t.join();
}

template <typename T>
inline EvalMetrics evaluate_model(const Model<T>& model,
                                  const std::vector<PreparedSample<T>>& set, int threads) {
    EvalMetrics m;
    if (set.empty()) return m;
    const int tn = resolve_threads(threads);
    const bool has_reg = model.config().has_sequence_branch();

    struct Part {
        double ce = 0, mse = 0;
        long tp = 0, fp = 0, tng = 0, fng = 0;
    };
    std::vector<Part> parts(static_cast<std::size_t>(tn));
    std::vector<Workspace<T>> ws;
    ws.reserve(size_t(tn));
    for (int k = 0; k < tn; ++k) ws.push_back(model.make_workspace());

    parallel_chunks(set.size(), tn, [&](int k, size_t b, size_t e) {
        Part& p = parts[size_t(k)];
        for (size_t i = b; i < e; ++i) {
            auto out = model.forward(set[i].input, ws[size_t(k)]);
            auto sm = softmax_ce(out.logits, set[i].y);
            p.ce += double(sm.loss);
            if (has_reg) p.mse += double(mse_loss(out.rhat, set[i].r));
            const int pred = out.probs[1] > out.probs[0] ? 1 : 0;
            if (pred == 1)
                (set[i].y == 1 ? p.tp : p.fp)++;
            else
                (set[i].y == 0 ? p.tng : p.fng)++;
        }
    });

    long tp = 0, fp = 0, tng = 0, fng = 0;
    for (const Part& p : parts) {  // fixed reduction order
        m.ce += p.ce;
        m.mse += p.mse;
        tp += p.tp;
        fp += p.fp;
        tng += p.tng;
        fng += p.fng;
    }
    const double n = double(set.size());
    m.ce /= n;
    m.mse /= n;
    m.loss = m.ce + model.config().lambda * m.mse;
    m.tp = tp;
    m.fp = fp;
    m.tn = tng;
    m.fn = fng;
    m.accuracy = double(tp + tng) / n;
    auto conf = ppv_npv_from_counts(tp, fp, tng, fng);
    m.ppv = conf.ppv;
    m.npv = conf.npv;
    return m;
}

struct Prediction {
    double p_up = 0;
    double r_hat = 0;
};

template <typename T>
inline std::vector<Prediction> predict_batch(const Model<T>& model,
                                             const std::vector<PreparedSample<T>>& set,
                                             int threads = 0) {
    std::vector<Prediction> out(set.size());
    if (set.empty()) return out;
    const int tn = resolve_threads(threads);
    std::vector<Workspace<T>> ws;
    ws.reserve(size_t(tn));
    for (int k = 0; k < tn; ++k) ws.push_back(model.make_workspace());
    parallel_chunks(set.size(), tn, [&](int k, size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) {
            auto o = model.forward(set[i].input, ws[size_t(k)]);
            out[i] = {double(o.probs[1]), double(o.rhat)};
        }
    });
    return out;
}

struct TrainConfig {
    int max_epochs = 20;   // desk-scale default
    int batch_size = 64;   // desk-scale default; the full-scale preset uses 256
    AdamConfig adam{.lr = 1e-3};
    int patience = 3;
    int early_stop_from = 5;  // patience counts from this epoch on
    double stop_at_val_accuracy = 0.0;  // optional desk-scale stop; 0 disables
    int threads = 0;                    // 0 = auto

    static TrainConfig paper_preset() {
        TrainConfig t;
        t.batch_size = 256;
        t.adam.lr = 3e-5;
        return t;
    }

    void validate() const {
        if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (adam.lr <= 0) throw ConfigError("learning rate must be positive");
    }
};

// Minimizes CE + lambda*MSE (CE only for MSR) with per-epoch seeded shuffling,
// per-epoch validation, and best-validation-loss checkpointing. Patience-based
// early stopping arms at `early_stop_from`. Gradients from batch threads are
// reduced in thread order, so a fixed (seed, data, threads) triple fully
// determines the result.
template <typename T>
inline Checkpoint train_model(const ModelConfig& mcfg,
                              const std::vector<PreparedSample<T>>& train_set,
                              const std::vector<PreparedSample<T>>& val_set,
                              const TrainConfig& tcfg,
                              const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
    tcfg.validate();
    if (train_set.empty() || val_set.empty())
        throw TrainError("training requires non-empty train and validation sets");

    Model<T> model(mcfg);
    const int tn = resolve_threads(tcfg.threads);
    const bool has_reg = mcfg.has_sequence_branch();
    const T lambda = T(mcfg.lambda);

    std::vector<Workspace<T>> ws;
    std::vector<ModelGrads<T>> grads;
    ws.reserve(size_t(tn));
    grads.reserve(size_t(tn));
    for (int k = 0; k < tn; ++k) {
        ws.push_back(model.make_workspace());
        grads.push_back(model.make_grads());
    }
    auto blocks = model.params();

    auto snapshot = [&] {
        std::vector<Tensor<T>> vals;
        vals.reserve(blocks.size());
        for (auto* b : blocks) vals.push_back(b->value);
        return vals;
    };
    auto restore = [&](const std::vector<Tensor<T>>& vals) {
        for (size_t i = 0; i < blocks.size(); ++i) blocks[i]->value = vals[i];
    };

    std::vector<EpochStats> history;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    std::vector<Tensor<T>> best_params = snapshot();

    auto record = [&](int epoch, double train_loss) {
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss;
        st.val = evaluate_model(model, val_set, tn);
        history.push_back(st);
        if (st.val.loss < best_loss) {
            best_loss = st.val.loss;
            best_epoch = epoch;
            best_params = snapshot();
        }
        if (on_epoch) on_epoch(st);
        return st;
    };

    if (tcfg.max_epochs == 0) {
        record(0, std::numeric_limits<double>::quiet_NaN());
    } else {
        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mcfg.seed ^ 0x5DEECE66Dull);
        long adam_t = 0;

        for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            double epoch_loss = 0;
            size_t batches = 0;

            for (size_t start = 0; start < order.size(); start += size_t(tcfg.batch_size)) {
                const size_t stop = std::min(order.size(), start + size_t(tcfg.batch_size));
                const size_t bsz = stop - start;
                const T inv_b = T(1) / T(double(bsz));
                std::vector<double> part_loss(size_t(tn), 0.0);
                for (auto& g : grads) g.zero();

                parallel_chunks(bsz, tn, [&](int k, size_t b, size_t e) {
                    for (size_t i = b; i < e; ++i) {
                        const PreparedSample<T>& s = train_set[order[start + i]];
                        auto out = model.forward(s.input, ws[size_t(k)]);
                        auto sm = softmax_ce(out.logits, s.y);
                        T d_logits[2] = {sm.d_logits[0] * inv_b, sm.d_logits[1] * inv_b};
                        T d_rhat = T(0);
                        double sample_loss = double(sm.loss);
                        if (has_reg) {
                            sample_loss += double(lambda) * double(mse_loss(out.rhat, s.r));
                            d_rhat = lambda * mse_grad(out.rhat, s.r, inv_b);
                        }
                        part_loss[size_t(k)] += sample_loss;
                        model.backward(s.input, ws[size_t(k)], d_logits, d_rhat, grads[size_t(k)]);
                    }
                });

                double batch_loss = 0;
                for (int k = 0; k < tn; ++k) batch_loss += part_loss[size_t(k)];
                if (!std::isfinite(batch_loss))
                    throw TrainError("non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(batches + 1));
                epoch_loss += batch_loss;

                for (int k = 1; k < tn; ++k) grads[0].add(grads[size_t(k)]);
                ++adam_t;
                for (size_t i = 0; i < blocks.size(); ++i) {
                    blocks[i]->grad = grads[0].g[i];
                    adam_step(*blocks[i], tcfg.adam, adam_t);
                }
                ++batches;
            }

            auto st = record(epoch, epoch_loss / double(train_set.size()));

            if (tcfg.stop_at_val_accuracy > 0 && st.val.accuracy >= tcfg.stop_at_val_accuracy)
                break;
            if (epoch >= tcfg.early_stop_from && epoch - best_epoch >= tcfg.patience) break;
        }
    }

    restore(best_params);
    Checkpoint ckpt = make_checkpoint(model);
    ckpt.history = history;
    ckpt.best_epoch = std::max(best_epoch, 0);
    return ckpt;
}

}  // namespace stockcnn
