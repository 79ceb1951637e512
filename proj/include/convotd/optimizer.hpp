#pragma once

#include <vector>

#include "convotd/util.hpp"

namespace convotd {

/// Adaptive-moment optimizer over a fixed list of tensors. Minimizes: step() moves
/// each parameter against its gradient.
class Adam {
public:
    struct Options {
        double learning_rate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam(std::vector<Mat*> params, Options opts);

    void step(const std::vector<const Mat*>& grads);
    long steps() const { return t_; }

private:
    std::vector<Mat*> params_;
    std::vector<Mat> m_, v_;
    Options opts_;
    long t_ = 0;
};

/// Global L2 norm of a gradient list.
double global_norm(const std::vector<const Mat*>& grads);

/// Scales grads in place so their global norm is at most max_norm. Returns the pre-clip norm.
double clip_global_norm(const std::vector<Mat*>& grads, double max_norm);

}  // namespace convotd
