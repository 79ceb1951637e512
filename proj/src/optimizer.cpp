#include "convotd/optimizer.hpp"

#include <cmath>

namespace convotd {

Adam::Adam(std::vector<Mat*> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (Mat* p : params_) {
        m_.push_back(Mat::Zero(p->rows(), p->cols()));
        v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
}

void Adam::step(const std::vector<const Mat*>& grads) {
    if (grads.size() != params_.size()) throw InputError("Adam: gradient count differs from parameter count");
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Mat& g = *grads[i];
        m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
        v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
        auto m_hat = m_[i].array() / bc1;
        auto v_hat = v_[i].array() / bc2;
        params_[i]->array() -= opts_.learning_rate * m_hat / (v_hat.sqrt() + opts_.epsilon);
    }
}

double global_norm(const std::vector<const Mat*>& grads) {
    double sq = 0;
    for (const Mat* g : grads) sq += g->squaredNorm();
    return std::sqrt(sq);
}

double clip_global_norm(const std::vector<Mat*>& grads, double max_norm) {
    std::vector<const Mat*> view(grads.begin(), grads.end());
    double norm = global_norm(view);
    if (max_norm > 0 && norm > max_norm) {
        double scale = max_norm / norm;
        for (Mat* g : grads) *g *= scale;
    }
    return norm;
}

}  // namespace convotd
