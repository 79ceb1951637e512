#include "convotd/downstream.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace convotd {

namespace {

std::string follow_merges(const std::string& tag, const std::map<std::string, std::string>& merge_map) {
    std::string cur = tag;
    std::set<std::string> seen{cur};
    for (auto it = merge_map.find(cur); it != merge_map.end() && it->second != cur; it = merge_map.find(cur)) {
        cur = it->second;
        if (!seen.insert(cur).second) throw InputError("hashtag merge cycle through " + cur);
    }
    return cur;
}

}  // namespace

std::vector<std::string> canonical_hashtags(const std::vector<std::string>& tags, const HashtagLabelOptions& options) {
    std::vector<std::string> out;
    for (const auto& t : tags) {
        std::string c = follow_merges(t, options.merge_map);
        if (options.block_list.count(c)) continue;
        if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(std::move(c));
    }
    return out;
}

ClassifiedCorpus build_hashtag_labels(const std::vector<ConversationInstance>& corpus,
                                      const HashtagLabelOptions& options) {
    if (options.top_k == 0) throw InputError("top_k must be positive");

    struct Slot {
        std::size_t instance, position;
        std::vector<std::string> tags;
    };
    std::vector<Slot> slots;
    std::unordered_set<std::string> seen_ids;
    std::map<std::string, std::size_t> freq;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& inst = corpus[i];
        for (std::size_t m = 0; m < inst.size(); ++m) {
            if (!seen_ids.insert(inst.ids[m]).second) continue;
            auto tags = canonical_hashtags(inst.hashtags[m], options);
            if (tags.empty()) continue;
            for (const auto& t : tags) ++freq[t];
            slots.push_back({i, m, std::move(tags)});
        }
    }

    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    ClassifiedCorpus out;
    if (ranked.size() < options.top_k && !ranked.empty())
        out.warnings.push_back("only " + std::to_string(ranked.size()) + " distinct hashtags, fewer than top_k = " +
                               std::to_string(options.top_k) + "; keeping all");
    if (ranked.size() > options.top_k) ranked.resize(options.top_k);

    std::unordered_map<std::string, int> label_of;
    for (const auto& [tag, n] : ranked) {
        label_of[tag] = static_cast<int>(out.classes.size());
        out.classes.push_back(tag);
    }
    out.class_sizes.assign(out.classes.size(), 0);

    for (const auto& s : slots) {
        // ranked order is (frequency desc, tag asc), so the smallest label id wins.
        int best = -1;
        for (const auto& t : s.tags) {
            auto it = label_of.find(t);
            if (it != label_of.end() && (best < 0 || it->second < best)) best = it->second;
        }
        if (best < 0) continue;
        out.messages.push_back({s.instance, s.position, best});
        ++out.class_sizes[static_cast<std::size_t>(best)];
    }
    return out;
}

Vec extract_features(const BowVector& x_bow, const BowVector& c_bow, const ModelParameters& params) {
    Inference inf = infer(x_bow, c_bow, params);
    Vec f(inf.theta.size() + inf.pi.size());
    f << inf.theta, inf.pi;
    return f;
}

LabeledData make_labeled_data(const std::vector<ConversationInstance>& corpus, const ClassifiedCorpus& classified,
                              const Vocabulary& vocab) {
    LabeledData data;
    data.n_classes = static_cast<int>(classified.classes.size());
    std::unordered_map<std::size_t, BowVector> conv_cache;
    for (const auto& msg : classified.messages) {
        if (msg.instance >= corpus.size() || msg.position >= corpus[msg.instance].size())
            throw InputError("labeled message refers to a missing instance");
        const auto& inst = corpus[msg.instance];
        auto it = conv_cache.find(msg.instance);
        if (it == conv_cache.end()) it = conv_cache.emplace(msg.instance, vectorize(inst, vocab)).first;
        const auto& tokens = inst.messages[msg.position];
        data.x.push_back(vectorize(tokens, vocab));
        data.c.push_back(it->second);
        std::vector<int> ids;
        for (const auto& t : tokens)
            if (auto idx = vocab.index(t)) ids.push_back(static_cast<int>(*idx));
        data.tokens.push_back(std::move(ids));
        data.labels.push_back(msg.label);
    }
    return data;
}

Mat topic_discourse_features(const LabeledData& data, const ModelParameters& params) {
    const Eigen::Index dim = params.theta_w.rows() + params.pi_w.rows();
    Mat out(static_cast<Eigen::Index>(data.size()), dim);
    parallel_chunks(data.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            out.row(static_cast<Eigen::Index>(i)) = extract_features(data.x[i], data.c[i], params).transpose();
    });
    return out;
}

SparseRows to_sparse(const Mat& dense_rows) { return dense_rows.sparseView(); }

SparseRows bow_features(const LabeledData& data) {
    std::size_t dim = data.x.empty() ? 0 : data.x.front().dim;
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (const auto& [w, n] : data.x[i].entries)
            trips.emplace_back(static_cast<int>(i), static_cast<int>(w), n);
    SparseRows out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(dim));
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

}  // namespace convotd
