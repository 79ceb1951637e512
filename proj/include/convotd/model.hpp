#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "convotd/corpus.hpp"
#include "convotd/util.hpp"

namespace convotd {

enum class MiMarginal { batch, uniform };

struct ModelConfig {
    int topics = 50;           // K
    int roles = 10;            // D
    int vocab_size = 0;        // V
    int topic_hidden = 200;    // H_e
    int disc_hidden = 100;     // H_pi; 0 makes f_pi a single affine map
    double tau = 0.5;          // Gumbel-softmax temperature
    double lambda = 0.01;      // MI trade-off
    double stop_penalty = 5.0; // logit penalty on stop words in the topic likelihood
    MiMarginal mi_marginal = MiMarginal::batch;

    /// Throws InputError when a field is out of range.
    void validate() const;
};

/// All learnable weights. Weight matrices are out x in; biases are n x 1.
/// The two word decoders are stored as K x V and D x V so that each row, after a
/// softmax, is a word distribution; their logits are topic_word' * theta + topic_word_b.
struct ModelParameters {
    Mat enc_w, enc_b;            // f_e: V -> H_e, ReLU
    Mat mu_w, mu_b;              // f_mu: H_e -> K
    Mat logsig_w, logsig_b;      // f_sigma: H_e -> K
    Mat theta_w, theta_b;        // f_theta: K -> K
    Mat disc_hidden_w, disc_hidden_b;  // V -> H_pi, ReLU (empty when H_pi = 0)
    Mat pi_w, pi_b;              // f_pi: H_pi (or V) -> D
    Mat topic_word, topic_word_b;  // K x V, V x 1
    Mat disc_word, disc_word_b;    // D x V, V x 1
    Mat aux_w, aux_b;            // p(d|z): K -> D

    /// Zero-filled parameters of the right shapes.
    static ModelParameters zeros(const ModelConfig& cfg);
    /// Weights uniform in [-scale, scale], biases zero.
    static ModelParameters random(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.05);

    std::vector<std::pair<std::string, Mat*>> tensors();
    std::vector<std::pair<std::string, const Mat*>> tensors() const;

    /// Throws InputError naming the first tensor whose shape disagrees with cfg.
    void check_shapes(const ModelConfig& cfg) const;
    void set_zero();
};

struct TopicLatent {
    Vec mu, log_sigma, z, theta;
};

struct DiscourseLatent {
    Vec pi, d;
};

// ---- single-example operations -------------------------------------------

std::pair<Vec, Vec> encode_topic(const BowVector& c_bow, const ModelParameters& params);
Vec sample_topic(const Vec& mu, const Vec& log_sigma, const Vec& epsilon);
Vec topic_mixture(const Vec& z, const ModelParameters& params);
Vec encode_discourse(const BowVector& x_bow, const ModelParameters& params);
Vec sample_discourse(const Vec& pi, double tau, const Vec& gumbel_noise);
Vec decode(const Vec& theta, const Vec& d, const ModelParameters& params);

Mat topic_word_matrix(const ModelParameters& params);
Mat discourse_word_matrix(const ModelParameters& params);

/// Index of the largest entry, ties to the lowest index.
std::size_t argmax(const Vec& v);
Vec one_hot(std::size_t index, std::size_t size);

struct Inference {
    Vec theta, pi, d_hard;
};

/// Deterministic evaluation path: theta from mu without sampling, one-hot d at argmax(pi).
Inference infer(const BowVector& x_bow, const BowVector& c_bow, const ModelParameters& params);

/// Standard Gumbel(0,1) draws.
Vec gumbel_noise(std::size_t n, std::mt19937_64& rng);
Vec normal_noise(std::size_t n, std::mt19937_64& rng);

// ---- batched passes (one example per column) ------------------------------

Mat dense_columns(const std::vector<const BowVector*>& bows, std::size_t dim);

struct TopicEncoderPass {
    Mat hidden;  // post-ReLU
    Mat mu, log_sigma;
};
TopicEncoderPass topic_encoder_forward(const ModelParameters& p, const Mat& c);
/// Accumulates into grads; c is the input batch the pass was computed from.
void topic_encoder_backward(const ModelParameters& p, const TopicEncoderPass& pass, const Mat& c,
                            const Mat& d_mu, const Mat& d_log_sigma, ModelParameters& grads);

struct DiscourseEncoderPass {
    Mat hidden;  // post-ReLU, empty when H_pi = 0
    Mat pi;
};
DiscourseEncoderPass discourse_encoder_forward(const ModelParameters& p, const Mat& x);
/// d_logits is the gradient with respect to the pre-softmax logits of pi.
void discourse_encoder_backward(const ModelParameters& p, const DiscourseEncoderPass& pass, const Mat& x,
                                const Mat& d_logits, ModelParameters& grads);

/// theta = softmax(f_theta(z)) column-wise, and its backward given d_theta; returns d_z.
Mat mixture_forward(const ModelParameters& p, const Mat& z);
Mat mixture_backward(const ModelParameters& p, const Mat& z, const Mat& theta, const Mat& d_theta,
                     ModelParameters& grads);

/// Deterministic batched inference; columns of theta and pi.
struct BatchInference {
    TopicEncoderPass topic;
    DiscourseEncoderPass disc;
    Mat theta;
};
BatchInference infer_batch(const ModelParameters& p, const Mat& x, const Mat& c);
/// Backward of infer_batch for upstream gradients on theta and pi.
void infer_backward(const ModelParameters& p, const BatchInference& inf, const Mat& x, const Mat& c,
                    const Mat& d_theta, const Mat& d_pi, ModelParameters& grads);

}  // namespace convotd
