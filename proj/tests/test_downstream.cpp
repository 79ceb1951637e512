#include <doctest.h>

#include <cmath>
#include <map>

#include "convotd/downstream.hpp"
#include "test_helpers.hpp"

using namespace convotd;
using namespace testing_helpers;

namespace {

std::vector<ConversationInstance> corpus_from(const std::vector<std::string>& texts) {
    std::vector<RawPost> posts;
    for (std::size_t i = 0; i < texts.size(); ++i) posts.push_back({"m" + std::to_string(i), std::nullopt, texts[i], std::nullopt});
    return build_instances(posts);
}

std::string label_of(const ClassifiedCorpus& cc, std::size_t instance) {
    for (const auto& m : cc.messages)
        if (m.instance == instance) return cc.classes[static_cast<std::size_t>(m.label)];
    return "";
}

ModelConfig tiny_model(int v) {
    ModelConfig cfg;
    cfg.vocab_size = v;
    cfg.topics = 3;
    cfg.roles = 2;
    cfg.topic_hidden = 6;
    cfg.disc_hidden = 4;
    return cfg;
}

CnnConfig tiny_cnn() {
    CnnConfig c;
    c.embedding_dim = 6;
    c.widths = {2, 3};
    c.feature_maps = 4;
    c.epochs = 2;
    c.batch_size = 8;
    return c;
}

// 40 messages over V = 12; class = whether the message uses words 0-5 or 6-11.
LabeledData tiny_labeled(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LabeledData d;
    d.n_classes = 2;
    for (int i = 0; i < 40; ++i) {
        int cls = i % 2;
        std::vector<double> dense(12, 0);
        std::vector<int> toks;
        for (int k = 0; k < 6; ++k) {
            int w = cls * 6 + std::uniform_int_distribution<int>(0, 5)(rng);
            toks.push_back(w);
            dense[static_cast<std::size_t>(w)] += 1;
        }
        d.x.push_back(bow(dense));
        d.c.push_back(bow(dense));
        d.tokens.push_back(toks);
        d.labels.push_back(cls);
    }
    return d;
}

}  // namespace

TEST_CASE("merge map unifies hashtags and hashtag-less messages are dropped") {
    auto corpus = corpus_from({"vote #Trump", "rally #DonaldTrump", "no tags here", "#other stuff"});
    HashtagLabelOptions opt;
    opt.merge_map = {{"#trump", "#donaldtrump"}};
    auto cc = build_hashtag_labels(corpus, opt);
    CHECK(cc.messages.size() == 3);
    CHECK(cc.classes == std::vector<std::string>{"#donaldtrump", "#other"});
    CHECK(cc.class_sizes == std::vector<std::size_t>{2, 1});
    CHECK(label_of(cc, 0) == "#donaldtrump");
    CHECK(label_of(cc, 1) == "#donaldtrump");
    CHECK(label_of(cc, 2).empty());
    CHECK(cc.warnings.size() == 1);  // 2 distinct hashtags < top_k

    opt.merge_map = {{"#a", "#b"}, {"#b", "#c"}};
    CHECK(canonical_hashtags({"#a"}, opt) == std::vector<std::string>{"#c"});
    opt.merge_map = {{"#a", "#b"}, {"#b", "#a"}};
    CHECK_THROWS_AS(canonical_hashtags({"#a"}, opt), InputError);
}

TEST_CASE("multi-hashtag messages take the most frequent tag") {
    std::vector<std::string> texts;
    for (int i = 0; i < 99; ++i) texts.push_back("x #big");
    for (int i = 0; i < 39; ++i) texts.push_back("y #small");
    texts.push_back("both #small #big");
    auto cc = build_hashtag_labels(corpus_from(texts), {});
    REQUIRE(cc.classes.size() == 2);
    CHECK(cc.class_sizes[0] == 100);
    CHECK(label_of(cc, 138) == "#big");

    auto tie = build_hashtag_labels(corpus_from({"#b", "#a", "#b #a"}), {});
    CHECK(tie.classes == std::vector<std::string>{"#a", "#b"});
    CHECK(label_of(tie, 2) == "#a");

    HashtagLabelOptions top1;
    top1.top_k = 1;
    auto cut = build_hashtag_labels(corpus_from(texts), top1);
    CHECK(cut.classes == std::vector<std::string>{"#big"});
    CHECK(cut.messages.size() == 100);

    HashtagLabelOptions blocked;
    blocked.block_list = {"#big"};
    auto b = build_hashtag_labels(corpus_from(texts), blocked);
    CHECK(b.classes == std::vector<std::string>{"#small"});
    CHECK(b.messages.size() == 40);
}

TEST_CASE("build_hashtag_labels is idempotent") {
    auto corpus = corpus_from({"a #x", "b #y #x", "c #z", "d", "e #Y", "#w"});
    HashtagLabelOptions opt;
    opt.merge_map = {{"#w", "#x"}};
    opt.top_k = 2;
    auto first = build_hashtag_labels(corpus, opt);
    // Relabel the retained messages with their class tag only and rebuild.
    std::vector<std::string> texts;
    for (const auto& m : first.messages) texts.push_back("t " + first.classes[static_cast<std::size_t>(m.label)]);
    auto second = build_hashtag_labels(corpus_from(texts), opt);
    CHECK(second.classes == first.classes);
    CHECK(second.class_sizes == first.class_sizes);
    for (std::size_t i = 0; i < first.messages.size(); ++i) CHECK(second.messages[i].label == first.messages[i].label);
    auto again = build_hashtag_labels(corpus, opt);
    CHECK(again.classes == first.classes);
    CHECK(canonical_hashtags(canonical_hashtags({"#w", "#q"}, opt), opt) == canonical_hashtags({"#w", "#q"}, opt));
}

TEST_CASE("features: zero model is uniform, segments are distributions") {
    auto cfg = tiny_model(12);
    auto zero = ModelParameters::zeros(cfg);
    auto f = extract_features(bow(std::vector<double>(12, 1)), bow(std::vector<double>(12, 2)), zero);
    REQUIRE(f.size() == 5);
    CHECK(f.head(3).isApprox(Vec::Constant(3, 1.0 / 3)));
    CHECK(f.tail(2).isApprox(Vec::Constant(2, 0.5)));

    auto params = ModelParameters::random(cfg, 3, 1.0);
    auto data = tiny_labeled(1);
    Mat rows = topic_discourse_features(data, params);
    CHECK(rows.rows() == 40);
    CHECK(rows.cols() == 5);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        CHECK(is_distribution(rows.row(i).head(3).transpose(), 1e-6));
        CHECK(is_distribution(rows.row(i).tail(2).transpose(), 1e-6));
        Vec one = extract_features(data.x[static_cast<std::size_t>(i)], data.c[static_cast<std::size_t>(i)], params);
        CHECK((rows.row(i).transpose() - one).cwiseAbs().maxCoeff() <= 1e-12);
    }
    auto sparse = bow_features(data);
    CHECK(sparse.rows() == 40);
    CHECK(sparse.cols() == 12);
    CHECK(sparse.row(0).sum() == 6);
}

TEST_CASE("classification metrics") {
    auto m = classification_metrics({0, 1, 1}, {0, 0, 1}, 2);
    CHECK(m.accuracy == doctest::Approx(2.0 / 3));
    CHECK(m.per_class_f1[0] == doctest::Approx(2.0 / 3));
    CHECK(m.per_class_f1[1] == doctest::Approx(2.0 / 3));
    CHECK(m.macro_f1 == doctest::Approx(2.0 / 3));
    CHECK(m.confusion(1, 0) == 1);

    auto absent = classification_metrics({0, 0}, {0, 0}, 3);
    CHECK(absent.accuracy == 1.0);
    CHECK(absent.macro_f1 == doctest::Approx(1.0 / 3));

    std::mt19937_64 rng(7);
    for (int t = 0; t < 50; ++t) {
        std::vector<int> gold(30), pred(30), perm{3, 0, 4, 1, 2};
        for (int i = 0; i < 30; ++i) {
            gold[static_cast<std::size_t>(i)] = std::uniform_int_distribution<int>(0, 4)(rng);
            pred[static_cast<std::size_t>(i)] = std::uniform_int_distribution<int>(0, 4)(rng);
        }
        auto a = classification_metrics(gold, pred, 5);
        std::vector<int> pg, pp;
        for (int i = 0; i < 30; ++i) {
            pg.push_back(perm[static_cast<std::size_t>(gold[static_cast<std::size_t>(i)])]);
            pp.push_back(perm[static_cast<std::size_t>(pred[static_cast<std::size_t>(i)])]);
        }
        auto b = classification_metrics(pg, pp, 5);
        CHECK(a.accuracy == b.accuracy);
        CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-14));
        // direct definitions
        CHECK(a.accuracy == doctest::Approx(a.confusion.trace() / 30.0));
        double f1_sum = 0;
        for (int c = 0; c < 5; ++c) {
            double tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < 30; ++i) {
                bool g = gold[static_cast<std::size_t>(i)] == c, p = pred[static_cast<std::size_t>(i)] == c;
                tp += g && p;
                fp += !g && p;
                fn += g && !p;
            }
            f1_sum += tp == 0 ? 0 : 2 * tp / (2 * tp + fp + fn);
        }
        CHECK(a.macro_f1 == doctest::Approx(f1_sum / 5).epsilon(1e-14));
    }
}

TEST_CASE("linear SVM separates a separable set and is deterministic") {
    std::mt19937_64 rng(1);
    Mat x(100, 2);
    std::vector<int> y(100);
    std::uniform_real_distribution<double> u(0.5, 3);
    for (int i = 0; i < 100; ++i) {
        int cls = i % 2;
        x(i, 0) = cls ? u(rng) : -u(rng);
        x(i, 1) = u(rng) - 1.75;
        y[static_cast<std::size_t>(i)] = cls;
    }
    auto report = train_classifier(to_sparse(x), y, 2, 3);
    CHECK(report.n_test == 10);
    CHECK(report.n_train == 90);
    CHECK(report.metrics.accuracy == 1.0);

    LinearSvm a, b;
    a.fit(to_sparse(x), y, 2, 5);
    b.fit(to_sparse(x), y, 2, 5);
    CHECK(a.weights() == b.weights());
    auto pred = a.predict(to_sparse(x));
    CHECK(classification_metrics(y, pred, 2).accuracy == 1.0);

    CHECK_THROWS_WITH_AS(train_classifier(to_sparse(x), std::vector<int>(100, 1), 2, 3), doctest::Contains("single-class"),
                         InputError);
}

TEST_CASE("holdout split") {
    auto s = holdout_split(25, 4);
    CHECK(s.test.size() == 3);
    CHECK(s.train.size() == 22);
    CHECK(holdout_split(3, 1).test.size() == 1);
    auto t = holdout_split(25, 4);
    CHECK(t.test == s.test);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 25);
}

TEST_CASE("uniform prediction over 4 classes has cross-entropy log 4") {
    CnnConfig cfg = tiny_cnn();
    auto p = CnnParameters::random(cfg, 12, 5, 4, 1);
    p.set_zero();
    std::vector<int> toks{1, 2, 3};
    Mat extra = Mat::Constant(5, 1, 0.2);
    Mat logits = cnn_logits(p, cfg, {&toks}, extra);
    REQUIRE(logits.rows() == 4);
    Vec probs = softmax(logits.col(0));
    CHECK(-std::log(probs(2)) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("CNN logits: order-invariant batching, short messages") {
    CnnConfig cfg = tiny_cnn();
    auto p = CnnParameters::random(cfg, 12, 5, 2, 2, 0.5);
    std::vector<int> a{1, 2, 3, 4}, b{7}, empty;
    Mat extra(5, 3);
    std::mt19937_64 rng(1);
    fill_uniform(extra, rng);
    Mat batch = cnn_logits(p, cfg, {&a, &b, &empty}, extra);
    CHECK(batch.allFinite());
    Mat single = cnn_logits(p, cfg, {&b}, extra.col(1));
    CHECK((batch.col(1) - single.col(0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("frozen path: zero topic weight leaves the word decoders unchanged") {
    auto data = tiny_labeled(3);
    auto cfg = tiny_model(12);
    auto stop = std::vector<bool>(12, false);
    auto base = ModelParameters::random(cfg, 4);
    CnnConfig cnn = tiny_cnn();
    cnn.topic_weight = 0;

    auto joint = base;
    auto report = joint_train(data, joint, cfg, stop, cnn, TrainMode::joint, 1);
    CHECK(joint.topic_word == base.topic_word);
    CHECK(joint.disc_word == base.disc_word);
    CHECK(joint.topic_word_b == base.topic_word_b);
    CHECK(joint.disc_word_b == base.disc_word_b);
    CHECK(joint.aux_w == base.aux_w);
    CHECK(joint.enc_w != base.enc_w);  // the cross-entropy gradient reaches the encoders
    CHECK(joint.pi_w != base.pi_w);
    CHECK(report.n_train == 36);
    CHECK(report.n_test == 4);
    CHECK(report.epoch_cross_entropy.size() == 2);

    auto separate = base;
    joint_train(data, separate, cfg, stop, cnn, TrainMode::separate, 1);
    for (std::size_t i = 0; i < base.tensors().size(); ++i) CHECK(*separate.tensors()[i].second == *base.tensors()[i].second);

    cnn.topic_weight = 0.01;
    auto weighted = base;
    joint_train(data, weighted, cfg, stop, cnn, TrainMode::joint, 1);
    CHECK(weighted.topic_word != base.topic_word);
}

TEST_CASE("joint training is deterministic and learns a separable task") {
    auto data = tiny_labeled(5);
    auto cfg = tiny_model(12);
    auto stop = std::vector<bool>(12, false);
    CnnConfig cnn = tiny_cnn();
    cnn.epochs = 15;
    cnn.learning_rate = 1e-2;
    auto p1 = ModelParameters::random(cfg, 4);
    auto p2 = p1;
    auto a = joint_train(data, p1, cfg, stop, cnn, TrainMode::joint, 2);
    auto b = joint_train(data, p2, cfg, stop, cnn, TrainMode::joint, 2);
    CHECK(a.epoch_cross_entropy == b.epoch_cross_entropy);
    CHECK(a.metrics.accuracy == b.metrics.accuracy);
    CHECK(a.epoch_cross_entropy.back() < a.epoch_cross_entropy.front());
    CHECK(a.metrics.accuracy == 1.0);
    CHECK(parse_train_mode("cnn") == TrainMode::cnn_only);
    CHECK(parse_train_mode(to_string(TrainMode::separate)) == TrainMode::separate);
    CHECK_THROWS_AS(parse_train_mode("both"), InputError);
}
