#include <algorithm>
#include <cmath>

#include "convotd/downstream.hpp"
#include "convotd/optimizer.hpp"
#include "convotd/trainer.hpp"

namespace convotd {

void CnnConfig::validate() const {
    if (embedding_dim < 1) throw InputError("embedding_dim must be positive");
    if (widths.empty()) throw InputError("at least one filter width is required");
    for (int w : widths)
        if (w < 1) throw InputError("filter widths must be positive");
    if (feature_maps < 1) throw InputError("feature_maps must be positive");
    if (epochs < 1) throw InputError("epochs must be positive");
    if (batch_size < 1) throw InputError("batch_size must be positive");
    if (!(learning_rate > 0)) throw InputError("learning_rate must be positive");
    if (topic_weight < 0) throw InputError("topic_weight must be non-negative");
    if (dropout < 0 || dropout >= 1) throw InputError("dropout must be in [0, 1)");
}

CnnParameters CnnParameters::random(const CnnConfig& cfg, std::size_t vocab_size, int extra_features, int n_classes,
                                    std::uint64_t seed, double scale) {
    cfg.validate();
    auto rng = make_rng(seed, "cnn-init");
    std::uniform_real_distribution<double> u(-scale, scale);
    auto fill = [&](Eigen::Index r, Eigen::Index c) {
        Mat m(r, c);
        for (Eigen::Index j = 0; j < c; ++j)
            for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
        return m;
    };
    const Eigen::Index e = cfg.embedding_dim, maps = cfg.feature_maps;
    CnnParameters p;
    p.embedding = fill(static_cast<Eigen::Index>(vocab_size), e);
    for (int w : cfg.widths) {
        p.filter.push_back(fill(w * e, maps));
        p.filter_b.push_back(Mat::Zero(1, maps));
    }
    const Eigen::Index in = maps * static_cast<Eigen::Index>(cfg.widths.size()) + extra_features;
    p.out_w = fill(n_classes, in);
    p.out_b = Mat::Zero(n_classes, 1);
    return p;
}

std::vector<Mat*> CnnParameters::tensors() {
    std::vector<Mat*> out{&embedding};
    for (std::size_t i = 0; i < filter.size(); ++i) {
        out.push_back(&filter[i]);
        out.push_back(&filter_b[i]);
    }
    out.push_back(&out_w);
    out.push_back(&out_b);
    return out;
}

void CnnParameters::set_zero() {
    for (Mat* m : tensors()) m->setZero();
}

namespace {

struct WidthPass {
    Mat windows;                       // rows: (example, position), cols: w * E
    std::vector<std::vector<int>> tok; // token id per row and offset, -1 for padding
    Eigen::MatrixXi arg;               // maps x B, row of the max
    Mat pooled;                        // maps x B, after ReLU
};

struct CnnPass {
    std::vector<WidthPass> widths;
    Mat hidden;  // concatenated pooled features (after dropout) and extra features
    Mat keep;    // inverted-dropout scale per pooled feature, empty at evaluation time
    Mat logits;
};

CnnPass cnn_forward(const CnnParameters& p, const CnnConfig& cfg, const std::vector<const std::vector<int>*>& tokens,
                    const Mat& extra, std::mt19937_64* dropout_rng = nullptr) {
    const std::size_t b = tokens.size();
    const Eigen::Index e = cfg.embedding_dim, maps = cfg.feature_maps;
    const int max_w = *std::max_element(cfg.widths.begin(), cfg.widths.end());
    CnnPass pass;
    const Eigen::Index pooled_rows = maps * static_cast<Eigen::Index>(cfg.widths.size());
    pass.hidden.resize(pooled_rows + extra.rows(), static_cast<Eigen::Index>(b));
    for (std::size_t wi = 0; wi < cfg.widths.size(); ++wi) {
        const int w = cfg.widths[wi];
        WidthPass wp;
        std::vector<std::pair<std::size_t, std::size_t>> span(b);  // first row, row count
        std::size_t rows = 0;
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t len = std::max<std::size_t>(tokens[i]->size(), static_cast<std::size_t>(max_w));
            span[i] = {rows, len - static_cast<std::size_t>(w) + 1};
            rows += span[i].second;
        }
        wp.windows = Mat::Zero(static_cast<Eigen::Index>(rows), w * e);
        wp.tok.assign(rows, std::vector<int>(static_cast<std::size_t>(w), -1));
        for (std::size_t i = 0; i < b; ++i) {
            const auto& seq = *tokens[i];
            for (std::size_t t = 0; t < span[i].second; ++t) {
                const std::size_t r = span[i].first + t;
                for (int j = 0; j < w; ++j) {
                    std::size_t pos = t + static_cast<std::size_t>(j);
                    if (pos >= seq.size()) continue;
                    int id = seq[pos];
                    wp.tok[r][static_cast<std::size_t>(j)] = id;
                    wp.windows.block(static_cast<Eigen::Index>(r), j * e, 1, e) = p.embedding.row(id);
                }
            }
        }
        Mat conv = wp.windows * p.filter[wi];
        conv.rowwise() += p.filter_b[wi].row(0);
        wp.arg.resize(maps, static_cast<Eigen::Index>(b));
        wp.pooled.resize(maps, static_cast<Eigen::Index>(b));
        for (std::size_t i = 0; i < b; ++i) {
            for (Eigen::Index m = 0; m < maps; ++m) {
                Eigen::Index best;
                double v = conv.col(m).segment(static_cast<Eigen::Index>(span[i].first),
                                               static_cast<Eigen::Index>(span[i].second)).maxCoeff(&best);
                wp.arg(m, static_cast<Eigen::Index>(i)) = static_cast<int>(span[i].first) + static_cast<int>(best);
                wp.pooled(m, static_cast<Eigen::Index>(i)) = std::max(v, 0.0);
            }
        }
        pass.hidden.middleRows(static_cast<Eigen::Index>(wi) * maps, maps) = wp.pooled;
        pass.widths.push_back(std::move(wp));
    }
    if (dropout_rng && cfg.dropout > 0) {
        std::bernoulli_distribution keep(1.0 - cfg.dropout);
        pass.keep.resize(pooled_rows, static_cast<Eigen::Index>(b));
        for (Eigen::Index j = 0; j < pass.keep.cols(); ++j)
            for (Eigen::Index i = 0; i < pass.keep.rows(); ++i)
                pass.keep(i, j) = keep(*dropout_rng) ? 1.0 / (1.0 - cfg.dropout) : 0.0;
        pass.hidden.topRows(pooled_rows).array() *= pass.keep.array();
    }
    if (extra.rows() > 0) pass.hidden.bottomRows(extra.rows()) = extra;
    pass.logits = p.out_w * pass.hidden;
    pass.logits.colwise() += p.out_b.col(0);
    return pass;
}

/// Accumulates parameter gradients for upstream d_logits; returns the gradient on the extra features.
Mat cnn_backward(const CnnParameters& p, const CnnConfig& cfg, const CnnPass& pass, const Mat& d_logits,
                 Eigen::Index extra_rows, CnnParameters& g) {
    const Eigen::Index e = cfg.embedding_dim, maps = cfg.feature_maps;
    g.out_w.noalias() += d_logits * pass.hidden.transpose();
    g.out_b.col(0) += d_logits.rowwise().sum();
    Mat d_hidden = p.out_w.transpose() * d_logits;
    if (pass.keep.size()) d_hidden.topRows(pass.keep.rows()).array() *= pass.keep.array();
    for (std::size_t wi = 0; wi < cfg.widths.size(); ++wi) {
        const int w = cfg.widths[wi];
        const auto& wp = pass.widths[wi];
        Mat d_pool = d_hidden.middleRows(static_cast<Eigen::Index>(wi) * maps, maps);
        for (Eigen::Index i = 0; i < d_pool.cols(); ++i) {
            for (Eigen::Index m = 0; m < maps; ++m) {
                if (wp.pooled(m, i) <= 0) continue;
                const double d = d_pool(m, i);
                const int r = wp.arg(m, i);
                g.filter[wi].col(m) += d * wp.windows.row(r).transpose();
                g.filter_b[wi](0, m) += d;
                for (int j = 0; j < w; ++j) {
                    int id = wp.tok[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
                    if (id < 0) continue;
                    g.embedding.row(id) += d * p.filter[wi].col(m).segment(j * e, e).transpose();
                }
            }
        }
    }
    return d_hidden.bottomRows(extra_rows);
}

std::vector<const Mat*> const_view(const std::vector<Mat*>& v) { return {v.begin(), v.end()}; }

}  // namespace

Mat cnn_logits(const CnnParameters& p, const CnnConfig& cfg, const std::vector<const std::vector<int>*>& tokens,
               const Mat& extra) {
    return cnn_forward(p, cfg, tokens, extra).logits;
}

const char* to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::cnn_only: return "cnn";
        case TrainMode::separate: return "separate";
        case TrainMode::joint: return "joint";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& name) {
    if (name == "cnn") return TrainMode::cnn_only;
    if (name == "separate") return TrainMode::separate;
    if (name == "joint") return TrainMode::joint;
    throw InputError("unknown training mode: " + name);
}

JointReport joint_train(const LabeledData& data, ModelParameters& topic_model, const ModelConfig& model_config,
                        const std::vector<bool>& stop_flags, const CnnConfig& cnn_config, TrainMode mode,
                        std::uint64_t seed) {
    cnn_config.validate();
    model_config.validate();
    topic_model.check_shapes(model_config);
    std::set<int> present(data.labels.begin(), data.labels.end());
    if (present.size() < 2) throw InputError("single-class input: a classifier needs at least two classes");

    const bool use_repr = mode != TrainMode::cnn_only && cnn_config.use_representations;
    const int extra_dim = use_repr ? model_config.topics + model_config.roles : 0;
    const std::size_t vocab = static_cast<std::size_t>(model_config.vocab_size);
    const auto split = holdout_split(data.size(), seed);

    CnnParameters cnn = CnnParameters::random(cnn_config, vocab, extra_dim, data.n_classes, derive_seed(seed, "cnn"));
    CnnParameters cnn_grad = cnn;
    auto cnn_tensors = cnn.tensors();
    auto cnn_grad_tensors = cnn_grad.tensors();
    Adam cnn_adam(cnn_tensors, {cnn_config.learning_rate, 0.9, 0.999, 1e-8});

    std::vector<Mat*> topic_tensors, topic_grad_tensors;
    ModelParameters topic_grad = ModelParameters::zeros(model_config);
    for (auto& [n, m] : topic_model.tensors()) topic_tensors.push_back(m);
    for (auto& [n, m] : topic_grad.tensors()) topic_grad_tensors.push_back(m);
    Adam topic_adam(topic_tensors, {cnn_config.learning_rate, 0.9, 0.999, 1e-8});
    const Vec stop = stop_mask(stop_flags);

    Mat frozen;  // rows of [theta; pi] for the separate mode
    if (mode == TrainMode::separate && use_repr) frozen = topic_discourse_features(data, topic_model);

    auto columns = [&](const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
        std::vector<const BowVector*> xs, cs;
        for (std::size_t k = begin; k < end; ++k) {
            xs.push_back(&data.x[idx[k]]);
            cs.push_back(&data.c[idx[k]]);
        }
        return ObjectiveBatch{dense_columns(xs, vocab), dense_columns(cs, vocab)};
    };

    JointReport report;
    report.mode = mode;
    report.n_train = split.train.size();
    report.n_test = split.test.size();
    const std::size_t bs = static_cast<std::size_t>(cnn_config.batch_size);
    long step = 0;
    for (int epoch = 1; epoch <= cnn_config.epochs; ++epoch) {
        auto perm = epoch_order(split.train.size(), derive_seed(seed, "cnn-order"), epoch);
        std::vector<std::size_t> idx(perm.size());
        for (std::size_t k = 0; k < perm.size(); ++k) idx[k] = split.train[perm[k]];
        double ce_sum = 0;
        for (std::size_t begin = 0; begin < idx.size(); begin += bs, ++step) {
            const std::size_t end = std::min(idx.size(), begin + bs);
            const auto b = static_cast<Eigen::Index>(end - begin);
            std::vector<const std::vector<int>*> toks;
            for (std::size_t k = begin; k < end; ++k) toks.push_back(&data.tokens[idx[k]]);

            cnn_grad.set_zero();
            ObjectiveBatch batch;
            BatchInference inf;
            Mat extra(extra_dim, b);
            if (mode == TrainMode::joint && use_repr) {
                topic_grad.set_zero();
                batch = columns(idx, begin, end);
                if (cnn_config.topic_weight > 0) {
                    auto rng = make_rng(seed, "joint-noise", static_cast<std::uint64_t>(step));
                    LatentNoise noise = draw_noise(model_config, static_cast<std::size_t>(b), rng);
                    ObjectiveOptions opts;
                    opts.noise = &noise;
                    opts.grads = &topic_grad;
                    opts.grad_scale = cnn_config.topic_weight;
                    total_loss(batch, topic_model, model_config, stop, opts);
                }
                inf = infer_batch(topic_model, batch.x, batch.c);
                extra << inf.theta, inf.disc.pi;
            } else if (use_repr) {
                for (std::size_t k = begin; k < end; ++k)
                    extra.col(static_cast<Eigen::Index>(k - begin)) = frozen.row(static_cast<Eigen::Index>(idx[k])).transpose();
            }

            auto drop_rng = make_rng(seed, "cnn-dropout", static_cast<std::uint64_t>(step));
            CnnPass pass = cnn_forward(cnn, cnn_config, toks, extra, &drop_rng);
            Mat probs = softmax_cols(pass.logits);
            Mat d_logits = probs;
            for (Eigen::Index j = 0; j < b; ++j) {
                int y = data.labels[idx[begin + static_cast<std::size_t>(j)]];
                ce_sum -= std::log(std::max(probs(y, j), kProbFloor));
                d_logits(y, j) -= 1.0;
            }
            d_logits /= static_cast<double>(b);
            Mat d_extra = cnn_backward(cnn, cnn_config, pass, d_logits, extra_dim, cnn_grad);

            if (mode == TrainMode::joint && use_repr) {
                infer_backward(topic_model, inf, batch.x, batch.c, d_extra.topRows(model_config.topics),
                               d_extra.bottomRows(model_config.roles), topic_grad);
                if (cnn_config.clip_norm > 0) clip_global_norm(topic_grad_tensors, cnn_config.clip_norm);
                topic_adam.step(const_view(topic_grad_tensors));
            }
            if (cnn_config.clip_norm > 0) clip_global_norm(cnn_grad_tensors, cnn_config.clip_norm);
            cnn_adam.step(const_view(cnn_grad_tensors));
        }
        report.epoch_cross_entropy.push_back(ce_sum / static_cast<double>(idx.size()));
    }

    Mat test_extra(extra_dim, static_cast<Eigen::Index>(split.test.size()));
    if (use_repr) {
        Mat feats = mode == TrainMode::separate ? frozen : topic_discourse_features(data, topic_model);
        for (std::size_t k = 0; k < split.test.size(); ++k)
            test_extra.col(static_cast<Eigen::Index>(k)) = feats.row(static_cast<Eigen::Index>(split.test[k])).transpose();
    }
    std::vector<const std::vector<int>*> toks;
    std::vector<int> gold;
    for (auto i : split.test) {
        toks.push_back(&data.tokens[i]);
        gold.push_back(data.labels[i]);
    }
    Mat logits = cnn_logits(cnn, cnn_config, toks, test_extra);
    std::vector<int> pred;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) pred.push_back(static_cast<int>(argmax(Vec(logits.col(j)))));
    report.metrics = classification_metrics(gold, pred, data.n_classes);
    return report;
}

}  // namespace convotd
