#pragma once

#include <vector>

#include "convotd/model.hpp"

namespace convotd {

/// Per-batch means of the four objective terms, natural log.
/// total = l_z + l_d + l_x - lambda * l_mi is maximized during training.
struct LossBreakdown {
    double l_z = 0, l_d = 0, l_x = 0, l_mi = 0, total = 0;
};

/// KL(N(mu, sigma^2) || N(0, I)) in closed form. Throws NumericError on non-finite input.
double gaussian_kld(const Vec& mu, const Vec& log_sigma);

/// sum_i q_i log(q_i / p_i) with 0 log 0 = 0. Throws InputError when p_i = 0 < q_i.
double categorical_kld(const Vec& q, const Vec& p);

/// 1.0 at stop-flagged vocabulary indices, 0 elsewhere.
Vec stop_mask(const std::vector<bool>& stop_flags);

/// Topic ELBO for one conversation: sum_w c_w log p_w - KL, where p is the topic decoder
/// distribution with stop_penalty subtracted from the stop-word logits.
double loss_z(const BowVector& c_bow, const Vec& theta, const Vec& mu, const Vec& log_sigma,
              const ModelParameters& params, const Vec& stop, double stop_penalty);

/// Discourse ELBO for one message against a uniform prior over roles.
double loss_d(const BowVector& x_bow, const Vec& pi, const Vec& d, const ModelParameters& params);

/// Reconstruction log-likelihood of the target message under beta.
double loss_x(const BowVector& x_bow, const Vec& beta);

/// KL(p(d|z) || marginal), p(d|z) = softmax(aux_w * theta + aux_b).
double mi_loss(const Vec& theta, const ModelParameters& params, const Vec& marginal);

/// Batch of examples in column layout: x holds target messages, c their conversations.
struct ObjectiveBatch {
    Mat x, c;
    std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
};

/// Noise for the reparameterized and Gumbel-softmax samples, one column per example.
struct LatentNoise {
    Mat epsilon;  // K x B standard normal
    Mat gumbel;   // D x B standard Gumbel
};

LatentNoise draw_noise(const ModelConfig& cfg, std::size_t batch, std::mt19937_64& rng);

struct ObjectiveOptions {
    /// Sampled latents when set; otherwise z = mu and d = one-hot(argmax pi).
    const LatentNoise* noise = nullptr;
    /// Replaces the configured p(d) estimate. The batch estimate is treated as a
    /// constant in the gradient, so gradient checks must pin it through this field.
    const Vec* marginal = nullptr;
    /// When set, the gradient of -grad_scale * total is accumulated here.
    ModelParameters* grads = nullptr;
    double grad_scale = 1.0;
};

/// Batched objective. Throws NumericError naming the first non-finite term.
LossBreakdown total_loss(const ObjectiveBatch& batch, const ModelParameters& params, const ModelConfig& cfg,
                         const Vec& stop, const ObjectiveOptions& opts = {});

/// Within-batch mean of pi, or uniform, per cfg.mi_marginal.
Vec mi_marginal(const Mat& pi, const ModelConfig& cfg);

}  // namespace convotd
