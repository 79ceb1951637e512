#include "convotd/model.hpp"

#include <cmath>

namespace convotd {

void ModelConfig::validate() const {
    if (topics < 2) throw InputError("topic count K must be >= 2");
    if (roles < 2) throw InputError("discourse role count D must be >= 2");
    if (vocab_size < 1) throw InputError("vocabulary size V must be >= 1");
    if (topic_hidden < 1) throw InputError("topic encoder width must be >= 1");
    if (disc_hidden < 0) throw InputError("discourse encoder width must be >= 0");
    if (!(tau > 0)) throw InputError("tau must be > 0");
    if (!(lambda >= 0)) throw InputError("lambda must be >= 0");
    if (!(stop_penalty >= 0)) throw InputError("stop penalty must be >= 0");
}

ModelParameters ModelParameters::zeros(const ModelConfig& cfg) {
    cfg.validate();
    const int K = cfg.topics, D = cfg.roles, V = cfg.vocab_size, He = cfg.topic_hidden, Hp = cfg.disc_hidden;
    ModelParameters p;
    p.enc_w = Mat::Zero(He, V);
    p.enc_b = Mat::Zero(He, 1);
    p.mu_w = Mat::Zero(K, He);
    p.mu_b = Mat::Zero(K, 1);
    p.logsig_w = Mat::Zero(K, He);
    p.logsig_b = Mat::Zero(K, 1);
    p.theta_w = Mat::Zero(K, K);
    p.theta_b = Mat::Zero(K, 1);
    p.disc_hidden_w = Mat::Zero(Hp, Hp > 0 ? V : 0);
    p.disc_hidden_b = Mat::Zero(Hp, Hp > 0 ? 1 : 0);
    p.pi_w = Mat::Zero(D, Hp > 0 ? Hp : V);
    p.pi_b = Mat::Zero(D, 1);
    p.topic_word = Mat::Zero(K, V);
    p.topic_word_b = Mat::Zero(V, 1);
    p.disc_word = Mat::Zero(D, V);
    p.disc_word_b = Mat::Zero(V, 1);
    p.aux_w = Mat::Zero(D, K);
    p.aux_b = Mat::Zero(D, 1);
    return p;
}

ModelParameters ModelParameters::random(const ModelConfig& cfg, std::uint64_t seed, double scale) {
    ModelParameters p = zeros(cfg);
    auto rng = make_rng(seed, "model-init");
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& [name, m] : p.tensors()) {
        if (name.ends_with(".bias")) continue;
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = u(rng);
    }
    return p;
}

std::vector<std::pair<std::string, Mat*>> ModelParameters::tensors() {
    return {{"enc_hidden.weight", &enc_w},     {"enc_hidden.bias", &enc_b},
            {"mu.weight", &mu_w},              {"mu.bias", &mu_b},
            {"log_sigma.weight", &logsig_w},   {"log_sigma.bias", &logsig_b},
            {"theta.weight", &theta_w},        {"theta.bias", &theta_b},
            {"disc_hidden.weight", &disc_hidden_w}, {"disc_hidden.bias", &disc_hidden_b},
            {"pi.weight", &pi_w},              {"pi.bias", &pi_b},
            {"topic_word.weight", &topic_word}, {"topic_word.bias", &topic_word_b},
            {"disc_word.weight", &disc_word},  {"disc_word.bias", &disc_word_b},
            {"mi_aux.weight", &aux_w},         {"mi_aux.bias", &aux_b}};
}

std::vector<std::pair<std::string, const Mat*>> ModelParameters::tensors() const {
    std::vector<std::pair<std::string, const Mat*>> out;
    for (auto& [n, m] : const_cast<ModelParameters*>(this)->tensors()) out.emplace_back(n, m);
    return out;
}

void ModelParameters::check_shapes(const ModelConfig& cfg) const {
    ModelParameters ref = zeros(cfg);
    auto mine = tensors();
    auto want = ref.tensors();
    for (std::size_t i = 0; i < mine.size(); ++i) {
        const Mat& a = *mine[i].second;
        const Mat& b = *want[i].second;
        if (a.rows() != b.rows() || a.cols() != b.cols())
            throw InputError("tensor " + mine[i].first + " has shape [" + std::to_string(a.rows()) + "," +
                             std::to_string(a.cols()) + "], expected [" + std::to_string(b.rows()) + "," +
                             std::to_string(b.cols()) + "]");
    }
}

void ModelParameters::set_zero() {
    for (auto& [n, m] : tensors()) m->setZero();
}

// ---- batched passes -------------------------------------------------------

namespace {

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }

Mat relu_grad(const Mat& upstream, const Mat& activated) {
    return (activated.array() > 0.0).select(upstream, 0.0);
}

Mat affine(const Mat& w, const Mat& b, const Mat& x) {
    Mat out = w * x;
    out.colwise() += b.col(0);
    return out;
}

void check_input(const Mat& x, Eigen::Index v, const char* what) {
    if (x.rows() != v)
        throw InputError(std::string(what) + " has length " + std::to_string(x.rows()) + ", expected " +
                         std::to_string(v));
}

}  // namespace

Mat dense_columns(const std::vector<const BowVector*>& bows, std::size_t dim) {
    Mat out = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(bows.size()));
    for (std::size_t j = 0; j < bows.size(); ++j) {
        if (bows[j]->dim != dim) throw InputError("bag-of-words dimension mismatch");
        for (const auto& [i, c] : bows[j]->entries) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
    }
    return out;
}

TopicEncoderPass topic_encoder_forward(const ModelParameters& p, const Mat& c) {
    check_input(c, p.enc_w.cols(), "conversation bag-of-words");
    TopicEncoderPass pass;
    pass.hidden = relu(affine(p.enc_w, p.enc_b, c));
    pass.mu = affine(p.mu_w, p.mu_b, pass.hidden);
    pass.log_sigma = affine(p.logsig_w, p.logsig_b, pass.hidden);
    return pass;
}

void topic_encoder_backward(const ModelParameters& p, const TopicEncoderPass& pass, const Mat& c,
                            const Mat& d_mu, const Mat& d_log_sigma, ModelParameters& g) {
    g.mu_w.noalias() += d_mu * pass.hidden.transpose();
    g.mu_b += d_mu.rowwise().sum();
    g.logsig_w.noalias() += d_log_sigma * pass.hidden.transpose();
    g.logsig_b += d_log_sigma.rowwise().sum();
    Mat d_hidden = p.mu_w.transpose() * d_mu + p.logsig_w.transpose() * d_log_sigma;
    Mat d_pre = relu_grad(d_hidden, pass.hidden);
    g.enc_w.noalias() += d_pre * c.transpose();
    g.enc_b += d_pre.rowwise().sum();
}

DiscourseEncoderPass discourse_encoder_forward(const ModelParameters& p, const Mat& x) {
    DiscourseEncoderPass pass;
    if (p.disc_hidden_w.rows() > 0) {
        check_input(x, p.disc_hidden_w.cols(), "message bag-of-words");
        pass.hidden = relu(affine(p.disc_hidden_w, p.disc_hidden_b, x));
        pass.pi = softmax_cols(affine(p.pi_w, p.pi_b, pass.hidden));
    } else {
        check_input(x, p.pi_w.cols(), "message bag-of-words");
        pass.pi = softmax_cols(affine(p.pi_w, p.pi_b, x));
    }
    return pass;
}

void discourse_encoder_backward(const ModelParameters& p, const DiscourseEncoderPass& pass, const Mat& x,
                                const Mat& d_logits, ModelParameters& g) {
    if (p.disc_hidden_w.rows() > 0) {
        g.pi_w.noalias() += d_logits * pass.hidden.transpose();
        g.pi_b += d_logits.rowwise().sum();
        Mat d_pre = relu_grad(p.pi_w.transpose() * d_logits, pass.hidden);
        g.disc_hidden_w.noalias() += d_pre * x.transpose();
        g.disc_hidden_b += d_pre.rowwise().sum();
    } else {
        g.pi_w.noalias() += d_logits * x.transpose();
        g.pi_b += d_logits.rowwise().sum();
    }
}

Mat mixture_forward(const ModelParameters& p, const Mat& z) {
    return softmax_cols(affine(p.theta_w, p.theta_b, z));
}

Mat mixture_backward(const ModelParameters& p, const Mat& z, const Mat& theta, const Mat& d_theta,
                     ModelParameters& g) {
    Mat d_logits = softmax_backward(theta, d_theta);
    g.theta_w.noalias() += d_logits * z.transpose();
    g.theta_b += d_logits.rowwise().sum();
    return p.theta_w.transpose() * d_logits;
}

BatchInference infer_batch(const ModelParameters& p, const Mat& x, const Mat& c) {
    BatchInference inf;
    inf.topic = topic_encoder_forward(p, c);
    inf.theta = mixture_forward(p, inf.topic.mu);
    inf.disc = discourse_encoder_forward(p, x);
    return inf;
}

void infer_backward(const ModelParameters& p, const BatchInference& inf, const Mat& x, const Mat& c,
                    const Mat& d_theta, const Mat& d_pi, ModelParameters& g) {
    Mat d_mu = mixture_backward(p, inf.topic.mu, inf.theta, d_theta, g);
    Mat zero = Mat::Zero(d_mu.rows(), d_mu.cols());
    topic_encoder_backward(p, inf.topic, c, d_mu, zero, g);
    const Mat& pi = inf.disc.pi;
    Mat d_logits = softmax_backward(pi, d_pi);
    discourse_encoder_backward(p, inf.disc, x, d_logits, g);
}

// ---- single-example operations -------------------------------------------

namespace {
Mat column(const BowVector& bow, const Mat& weight) {
    if (static_cast<Eigen::Index>(bow.dim) != weight.cols())
        throw InputError("bag-of-words has length " + std::to_string(bow.dim) + ", expected " +
                         std::to_string(weight.cols()));
    return dense_columns({&bow}, bow.dim);
}
}  // namespace

std::pair<Vec, Vec> encode_topic(const BowVector& c_bow, const ModelParameters& params) {
    auto pass = topic_encoder_forward(params, column(c_bow, params.enc_w));
    return {pass.mu.col(0), pass.log_sigma.col(0)};
}

Vec sample_topic(const Vec& mu, const Vec& log_sigma, const Vec& epsilon) {
    if (mu.size() != log_sigma.size() || mu.size() != epsilon.size())
        throw InputError("sample_topic: length mismatch");
    return mu.array() + log_sigma.array().exp() * epsilon.array();
}

Vec topic_mixture(const Vec& z, const ModelParameters& params) {
    if (z.size() != params.theta_w.cols()) throw InputError("topic latent has wrong length");
    return mixture_forward(params, z).col(0);
}

Vec encode_discourse(const BowVector& x_bow, const ModelParameters& params) {
    const Mat& first = params.disc_hidden_w.rows() > 0 ? params.disc_hidden_w : params.pi_w;
    return discourse_encoder_forward(params, column(x_bow, first)).pi.col(0);
}

Vec sample_discourse(const Vec& pi, double tau, const Vec& gumbel) {
    if (!(tau > 0)) throw InputError("tau must be > 0");
    if (pi.size() != gumbel.size()) throw InputError("sample_discourse: length mismatch");
    Vec logits = (pi.array().max(kProbFloor).log() + gumbel.array()) / tau;
    return softmax(logits);
}

Vec decode(const Vec& theta, const Vec& d, const ModelParameters& params) {
    if (theta.size() != params.topic_word.rows() || d.size() != params.disc_word.rows())
        throw InputError("decode: latent length mismatch");
    Vec logits = params.topic_word.transpose() * theta + params.topic_word_b.col(0) +
                 params.disc_word.transpose() * d + params.disc_word_b.col(0);
    return softmax(logits);
}

Mat topic_word_matrix(const ModelParameters& params) {
    return softmax_cols(params.topic_word.transpose()).transpose();
}

Mat discourse_word_matrix(const ModelParameters& params) {
    return softmax_cols(params.disc_word.transpose()).transpose();
}

std::size_t argmax(const Vec& v) {
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
    return best;
}

Vec one_hot(std::size_t index, std::size_t size) {
    Vec v = Vec::Zero(static_cast<Eigen::Index>(size));
    v(static_cast<Eigen::Index>(index)) = 1.0;
    return v;
}

Inference infer(const BowVector& x_bow, const BowVector& c_bow, const ModelParameters& params) {
    Inference out;
    auto [mu, log_sigma] = encode_topic(c_bow, params);
    out.theta = topic_mixture(mu, params);
    out.pi = encode_discourse(x_bow, params);
    out.d_hard = one_hot(argmax(out.pi), static_cast<std::size_t>(out.pi.size()));
    return out;
}

Vec gumbel_noise(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec g(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        double v = u(rng);
        v = std::min(std::max(v, 1e-300), 1.0 - 1e-16);
        g(i) = -std::log(-std::log(v));
    }
    return g;
}

Vec normal_noise(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vec e(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = nd(rng);
    return e;
}

}  // namespace convotd
