#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convotd/corpus.hpp"
#include "convotd/util.hpp"

namespace convotd {

/// Parameters of a planted corpus drawn from the model's own generative story:
/// z ~ N(0, I), theta = softmax(theta_scale * z) per conversation; per message a role
/// d ~ Uniform(D) and words w ~ softmax(L_T' theta + L_D' d).
struct PlantedSpec {
    int topics = 5;
    int roles = 4;
    int vocab_size = 200;
    int topic_core = 10;       // strongly weighted words per topic
    int role_core = 10;        // strongly weighted words per role
    double topic_logit = 4.0;  // logit of the first core word; later ones step down by core_step
    double role_logit = 4.0;
    double core_step = 0.1;
    double theta_scale = 4.0;
    int conversations = 2000;
    int messages = 4;             // messages per conversation (a reply chain)
    int min_words = 8;            // words per message = min_words + Poisson(extra_words)
    double extra_words = 4.0;
    double hashtag_rate = 0.0;    // probability a message carries its conversation's hashtag
    double hashtag_noise = 0.0;   // probability that hashtag is a random other topic's
    std::uint64_t seed = 7;
};

struct PlantedCorpus {
    PlantedSpec spec;
    std::vector<std::string> words;  // planted word ids, index order of the logit matrices
    Mat topic_logits;                // K x V
    Mat role_logits;                 // D x V
    Mat topic_word;                  // softmax of topic_logits rows
    Mat role_word;
    std::vector<RawPost> posts;
    std::vector<int> post_role;                 // planted role per post
    std::vector<int> post_topic;                // dominant planted topic of the post's conversation
    std::vector<std::string> post_hashtag;      // empty when the message has none
    Mat conversation_theta;                     // K x conversations
};

PlantedCorpus generate_planted(const PlantedSpec& spec);

/// Columns of a planted matrix re-indexed to a vocabulary; words missing from the planted
/// set get probability 0, planted words missing from the vocabulary are dropped.
Mat planted_in_vocab(const Mat& planted, const std::vector<std::string>& planted_words, const Vocabulary& vocab);

}  // namespace convotd
