#include "convotd/objectives.hpp"

#include <cmath>

namespace convotd {

double gaussian_kld(const Vec& mu, const Vec& log_sigma) {
    if (mu.size() != log_sigma.size()) throw InputError("gaussian_kld: length mismatch");
    if (!mu.allFinite() || !log_sigma.allFinite()) throw NumericError("gaussian_kld: non-finite input");
    auto ls = log_sigma.array();
    return -0.5 * (1.0 + 2.0 * ls - mu.array().square() - (2.0 * ls).exp()).sum();
}

double categorical_kld(const Vec& q, const Vec& p) {
    if (q.size() != p.size()) throw InputError("categorical_kld: length mismatch");
    double kl = 0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        if (q(i) <= 0) continue;
        if (p(i) <= 0) throw InputError("categorical_kld: p has zero mass where q is positive");
        kl += q(i) * std::log(q(i) / p(i));
    }
    return kl;
}

Vec stop_mask(const std::vector<bool>& stop_flags) {
    Vec m = Vec::Zero(static_cast<Eigen::Index>(stop_flags.size()));
    for (std::size_t i = 0; i < stop_flags.size(); ++i)
        if (stop_flags[i]) m(static_cast<Eigen::Index>(i)) = 1.0;
    return m;
}

namespace {
double bow_dot(const BowVector& bow, const Vec& logp) {
    double s = 0;
    for (const auto& [i, c] : bow.entries) s += c * logp(static_cast<Eigen::Index>(i));
    return s;
}
}  // namespace

double loss_z(const BowVector& c_bow, const Vec& theta, const Vec& mu, const Vec& log_sigma,
              const ModelParameters& params, const Vec& stop, double stop_penalty) {
    Vec logits = params.topic_word.transpose() * theta + params.topic_word_b.col(0);
    if (stop.size() == logits.size()) logits -= stop_penalty * stop;
    Vec logp = log_softmax_cols(logits).col(0);
    return bow_dot(c_bow, logp) - gaussian_kld(mu, log_sigma);
}

double loss_d(const BowVector& x_bow, const Vec& pi, const Vec& d, const ModelParameters& params) {
    Vec logits = params.disc_word.transpose() * d + params.disc_word_b.col(0);
    Vec logp = log_softmax_cols(logits).col(0);
    Vec uniform = Vec::Constant(pi.size(), 1.0 / static_cast<double>(pi.size()));
    return bow_dot(x_bow, logp) - categorical_kld(pi, uniform);
}

double loss_x(const BowVector& x_bow, const Vec& beta) {
    double s = 0;
    for (const auto& [i, c] : x_bow.entries) s += c * std::log(std::max(beta(static_cast<Eigen::Index>(i)), kProbFloor));
    return s;
}

double mi_loss(const Vec& theta, const ModelParameters& params, const Vec& marginal) {
    Vec cond = softmax(params.aux_w * theta + params.aux_b.col(0));
    return categorical_kld(cond, marginal);
}

LatentNoise draw_noise(const ModelConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
    LatentNoise n;
    n.epsilon.resize(cfg.topics, static_cast<Eigen::Index>(batch));
    n.gumbel.resize(cfg.roles, static_cast<Eigen::Index>(batch));
    for (std::size_t j = 0; j < batch; ++j) {
        n.epsilon.col(static_cast<Eigen::Index>(j)) = normal_noise(static_cast<std::size_t>(cfg.topics), rng);
        n.gumbel.col(static_cast<Eigen::Index>(j)) = gumbel_noise(static_cast<std::size_t>(cfg.roles), rng);
    }
    return n;
}

Vec mi_marginal(const Mat& pi, const ModelConfig& cfg) {
    if (cfg.mi_marginal == MiMarginal::uniform || pi.cols() == 0)
        return Vec::Constant(cfg.roles, 1.0 / cfg.roles);
    return pi.rowwise().mean();
}

namespace {

// d/dlogits of sum_w counts_w log softmax(logits)_w, column-wise.
Mat loglik_grad(const Mat& counts, const Mat& logp) {
    Mat probs = logp.array().exp();
    Eigen::RowVectorXd totals = counts.colwise().sum();
    return counts - probs * totals.asDiagonal();
}

void require_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite objective term ") + term);
}

}  // namespace

LossBreakdown total_loss(const ObjectiveBatch& batch, const ModelParameters& p, const ModelConfig& cfg,
                         const Vec& stop, const ObjectiveOptions& opts) {
    const Eigen::Index B = batch.x.cols();
    if (B == 0) throw InputError("empty batch");
    if (batch.c.cols() != B) throw InputError("batch x/c column count mismatch");
    const bool sampled = opts.noise != nullptr;
    if (opts.grads && !sampled) throw InputError("gradients require sampled latents");
    const Eigen::Index V = p.topic_word.cols();
    const Eigen::Index D = p.disc_word.rows();
    if (stop.size() != V) throw InputError("stop mask length differs from vocabulary size");

    // Encoders and latents.
    TopicEncoderPass topic = topic_encoder_forward(p, batch.c);
    Mat z = topic.mu;
    if (sampled) z += (topic.log_sigma.array().exp() * opts.noise->epsilon.array()).matrix();
    Mat theta = mixture_forward(p, z);

    DiscourseEncoderPass disc = discourse_encoder_forward(p, batch.x);
    const Mat& pi = disc.pi;
    Mat log_pi = pi.array().max(kProbFloor).log();
    Mat d;
    if (sampled) {
        d = softmax_cols((log_pi + opts.noise->gumbel) / cfg.tau);
    } else {
        d = Mat::Zero(D, B);
        for (Eigen::Index j = 0; j < B; ++j) d(static_cast<Eigen::Index>(argmax(pi.col(j))), j) = 1.0;
    }

    // Decoders.
    Mat topic_logits = p.topic_word.transpose() * theta;
    topic_logits.colwise() += p.topic_word_b.col(0);
    Mat disc_logits = p.disc_word.transpose() * d;
    disc_logits.colwise() += p.disc_word_b.col(0);
    Mat topic_logits_z = topic_logits;
    topic_logits_z.colwise() -= cfg.stop_penalty * stop;

    Mat logp_z = log_softmax_cols(topic_logits_z);
    Mat logp_d = log_softmax_cols(disc_logits);
    Mat logp_x = log_softmax_cols(topic_logits + disc_logits);

    Mat aux = softmax_cols(p.aux_w * theta + p.aux_b * Eigen::RowVectorXd::Ones(B));
    Vec marginal = opts.marginal ? *opts.marginal : mi_marginal(pi, cfg);
    if (marginal.size() != D) throw InputError("MI marginal has wrong length");
    Vec log_marginal = marginal.array().max(kProbFloor).log();
    Mat log_aux = aux.array().max(kProbFloor).log();

    // Terms.
    Eigen::ArrayXXd ls = topic.log_sigma.array();
    double kl_z = -0.5 * (1.0 + 2.0 * ls - topic.mu.array().square() - (2.0 * ls).exp()).sum();
    double kl_d = (pi.array() * log_pi.array()).sum() + static_cast<double>(B) * std::log(static_cast<double>(D));
    double rec_z = (batch.c.array() * logp_z.array()).sum();
    double rec_d = (batch.x.array() * logp_d.array()).sum();
    double rec_x = (batch.x.array() * logp_x.array()).sum();
    double mi = (aux.array() * (log_aux.colwise() - log_marginal).array()).sum();

    const double inv_b = 1.0 / static_cast<double>(B);
    LossBreakdown out;
    out.l_z = (rec_z - kl_z) * inv_b;
    out.l_d = (rec_d - kl_d) * inv_b;
    out.l_x = rec_x * inv_b;
    out.l_mi = mi * inv_b;
    require_finite(out.l_z, "l_z");
    require_finite(out.l_d, "l_d");
    require_finite(out.l_x, "l_x");
    require_finite(out.l_mi, "l_mi");
    out.total = out.l_z + out.l_d + out.l_x - cfg.lambda * out.l_mi;
    require_finite(out.total, "total");

    if (!opts.grads) return out;

    // Backward pass for J = -scale * total.
    ModelParameters& g = *opts.grads;
    const double s = opts.grad_scale * inv_b;

    Mat d_topic_logits_z = -s * loglik_grad(batch.c, logp_z);
    Mat d_disc_logits = -s * loglik_grad(batch.x, logp_d);
    Mat d_sum_logits = -s * loglik_grad(batch.x, logp_x);

    Mat d_topic_logits = d_topic_logits_z + d_sum_logits;
    Mat d_disc_total = d_disc_logits + d_sum_logits;

    g.topic_word.noalias() += theta * d_topic_logits.transpose();
    g.topic_word_b += d_topic_logits.rowwise().sum();
    g.disc_word.noalias() += d * d_disc_total.transpose();
    g.disc_word_b += d_disc_total.rowwise().sum();

    Mat d_theta = p.topic_word * d_topic_logits;
    Mat d_d = p.disc_word * d_disc_total;

    // MI term: +lambda * s * KL(aux || marginal); marginal is constant.
    Mat gap = log_aux.colwise() - log_marginal;
    Mat d_aux_logits = softmax_backward(aux, gap) * (cfg.lambda * s);
    g.aux_w.noalias() += d_aux_logits * theta.transpose();
    g.aux_b += d_aux_logits.rowwise().sum();
    d_theta.noalias() += p.aux_w.transpose() * d_aux_logits;

    // theta -> z -> (mu, log_sigma), plus the Gaussian KL.
    Mat d_z = mixture_backward(p, z, theta, d_theta, g);
    Mat sigma_eps = (topic.log_sigma.array().exp() * opts.noise->epsilon.array()).matrix();
    Mat d_mu = d_z + s * topic.mu;
    Mat d_log_sigma = d_z.cwiseProduct(sigma_eps) + s * ((2.0 * topic.log_sigma.array()).exp() - 1.0).matrix();
    topic_encoder_backward(p, topic, batch.c, d_mu, d_log_sigma, g);

    // d = softmax((log pi + g) / tau), plus the categorical KL against uniform.
    Mat d_d_logits = softmax_backward(d, d_d);
    Mat d_log_pi = d_d_logits / cfg.tau;
    d_log_pi = (pi.array() > kProbFloor).select(d_log_pi, 0.0);
    // u = pi * dJ/dpi, so the softmax backward is u - pi * colsum(u).
    Mat u = d_log_pi + s * pi.cwiseProduct((log_pi.array() + 1.0).matrix());
    Eigen::RowVectorXd u_sum = u.colwise().sum();
    Mat d_pi_logits = u - pi * u_sum.asDiagonal();
    discourse_encoder_backward(p, disc, batch.x, d_pi_logits, g);

    return out;
}

}  // namespace convotd
