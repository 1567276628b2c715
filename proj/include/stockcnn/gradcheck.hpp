#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stockcnn/nn.hpp"
#include "stockcnn/rng.hpp"

namespace stockcnn {

struct GradCheckOptions {
    double step = 1e-3;          // central-difference step
    double tolerance = 1e-4;
    int samples_per_block = 0;   // 0 = check every parameter
    std::uint64_t seed = 17;     // index subsampling seed
    double zero_floor = 1e-6;    // below this magnitude, compare absolutely
};

struct BlockReport {
    std::string name;
    double max_rel_err = 0;
    size_t checked = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<BlockReport> blocks;
    bool pass = true;
    double max_rel_err = 0;

    std::string summary() const {
        std::string s;
        for (const auto& b : blocks) {
            s += (b.pass ? "  ok   " : "  FAIL ") + b.name + "  max_rel_err=" +
                 std::to_string(b.max_rel_err) + " (" + std::to_string(b.checked) + " entries)\n";
        }
        return s;
    }
};

// Central finite-difference verification of analytic gradients. `forward_loss`
// evaluates the loss at the current parameters; `compute_grads` fills every
// block's grad buffer (zeroing first is its job). Large blocks can be spot
// checked via samples_per_block; biases and small blocks are cheap to cover
// fully.
inline GradCheckReport grad_check(const std::vector<ParamBlock<double>*>& blocks,
                                  const std::function<double()>& forward_loss,
                                  const std::function<void()>& compute_grads,
                                  const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    {
        const double probe = forward_loss();
        if (!std::isfinite(probe)) throw TrainError("grad check: loss is not finite");
    }
    compute_grads();

    Rng rng(opt.seed);
    for (ParamBlock<double>* block : blocks) {
        BlockReport br;
        br.name = block->name;

        std::vector<size_t> indices;
        const size_t n = block->value.size();
        if (opt.samples_per_block <= 0 || n <= size_t(opt.samples_per_block)) {
            indices.resize(n);
            for (size_t i = 0; i < n; ++i) indices[i] = i;
        } else {
            for (int k = 0; k < opt.samples_per_block; ++k)
                indices.push_back(size_t(rng.below(n)));
        }

        for (size_t idx : indices) {
            const double saved = block->value.data[idx];
            block->value.data[idx] = saved + opt.step;
            const double lp = forward_loss();
            block->value.data[idx] = saved - opt.step;
            const double lm = forward_loss();
            block->value.data[idx] = saved;

            const double fd = (lp - lm) / (2.0 * opt.step);
            const double an = block->grad.data[idx];
            const double denom = std::max(std::abs(fd), std::abs(an));
            double rel;
            if (denom < opt.zero_floor)
                rel = std::abs(fd - an) < 1e-9 ? 0.0 : 1.0;
            else
                rel = std::abs(fd - an) / denom;
            br.max_rel_err = std::max(br.max_rel_err, rel);
            ++br.checked;
        }
        br.pass = br.max_rel_err < opt.tolerance;
        report.max_rel_err = std::max(report.max_rel_err, br.max_rel_err);
        report.pass = report.pass && br.pass;
        report.blocks.push_back(br);
    }
    return report;
}

}  // namespace stockcnn
