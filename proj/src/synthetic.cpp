#include "convotd/synthetic.hpp"

#include <random>
#include <unordered_map>

#include "convotd/model.hpp"

namespace convotd {

PlantedCorpus generate_planted(const PlantedSpec& s) {
    const int K = s.topics, D = s.roles, V = s.vocab_size;
    if (K * s.topic_core + D * s.role_core > V) throw InputError("planted vocabulary too small for the core blocks");
    PlantedCorpus pc;
    pc.spec = s;
    pc.topic_logits = Mat::Zero(K, V);
    pc.role_logits = Mat::Zero(D, V);
    int next = 0;
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < s.topic_core; ++j, ++next) {
            pc.words.push_back("t" + std::to_string(k) + "w" + std::to_string(j));
            pc.topic_logits(k, next) = s.topic_logit - s.core_step * j;
        }
    for (int r = 0; r < D; ++r)
        for (int j = 0; j < s.role_core; ++j, ++next) {
            pc.words.push_back("d" + std::to_string(r) + "w" + std::to_string(j));
            pc.role_logits(r, next) = s.role_logit - s.core_step * j;
        }
    for (int b = 0; next < V; ++b, ++next) pc.words.push_back("bg" + std::to_string(b));
    pc.topic_word = softmax_cols(pc.topic_logits.transpose()).transpose();
    pc.role_word = softmax_cols(pc.role_logits.transpose()).transpose();

    auto rng = make_rng(s.seed, "planted");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> role_dist(0, D - 1);
    std::uniform_int_distribution<int> other_topic(0, K - 2);
    std::poisson_distribution<int> extra(s.extra_words);
    std::bernoulli_distribution has_tag(s.hashtag_rate), noisy_tag(s.hashtag_noise);

    pc.conversation_theta.resize(K, s.conversations);
    for (int c = 0; c < s.conversations; ++c) {
        Vec z(K);
        for (int k = 0; k < K; ++k) z(k) = normal(rng);
        Vec theta = softmax(s.theta_scale * z);
        pc.conversation_theta.col(c) = theta;
        const int topic = static_cast<int>(argmax(theta));
        Vec topic_part = pc.topic_logits.transpose() * theta;
        std::string parent;
        for (int m = 0; m < s.messages; ++m) {
            const int role = role_dist(rng);
            Vec beta = softmax(topic_part + pc.role_logits.row(role).transpose());
            std::discrete_distribution<int> word(beta.data(), beta.data() + beta.size());
            const int n = s.min_words + extra(rng);
            std::string text;
            for (int i = 0; i < n; ++i) {
                if (i) text += ' ';
                text += pc.words[static_cast<std::size_t>(word(rng))];
            }
            std::string tag;
            if (has_tag(rng)) {
                int t = topic;
                if (noisy_tag(rng)) {
                    t = other_topic(rng);
                    if (t >= topic) ++t;
                }
                tag = "#topic" + std::to_string(t);
                text += ' ' + tag;
            }
            RawPost post;
            post.id = "c" + std::to_string(c) + "m" + std::to_string(m);
            if (!parent.empty()) post.parent_id = parent;
            post.text = text;
            post.label = "role" + std::to_string(role);
            parent = post.id;
            pc.posts.push_back(std::move(post));
            pc.post_role.push_back(role);
            pc.post_topic.push_back(topic);
            pc.post_hashtag.push_back(tag);
        }
    }
    return pc;
}

Mat planted_in_vocab(const Mat& planted, const std::vector<std::string>& planted_words, const Vocabulary& vocab) {
    if (static_cast<std::size_t>(planted.cols()) != planted_words.size())
        throw InputError("planted matrix width differs from planted word list");
    std::unordered_map<std::string, Eigen::Index> col;
    for (std::size_t i = 0; i < planted_words.size(); ++i) col[planted_words[i]] = static_cast<Eigen::Index>(i);
    Mat out = Mat::Zero(planted.rows(), static_cast<Eigen::Index>(vocab.size()));
    for (std::size_t v = 0; v < vocab.size(); ++v) {
        auto it = col.find(vocab.word(v));
        if (it != col.end()) out.col(static_cast<Eigen::Index>(v)) = planted.col(it->second);
    }
    return out;
}

}  // namespace convotd
