#include "convotd/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <unordered_map>

#include "convotd/util.hpp"

namespace convotd {

double npmi(std::size_t joint, std::size_t count_i, std::size_t count_j, std::size_t windows) {
    if (joint == 0 || windows == 0) return -1.0;
    const double n = static_cast<double>(windows);
    const double pij = static_cast<double>(joint) / n;
    if (joint == windows) return 1.0;
    const double pi = static_cast<double>(count_i) / n;
    const double pj = static_cast<double>(count_j) / n;
    const double eps = 1e-12;
    return std::log((pij + eps) / (pi * pj)) / -std::log(pij + eps);
}

namespace {

struct WindowCounts {
    std::size_t windows = 0;
    std::vector<std::size_t> single;
    std::vector<std::size_t> pair;  // T x T, upper triangle used

    explicit WindowCounts(std::size_t t) : single(t, 0), pair(t * t, 0) {}

    void add(const std::vector<std::size_t>& present, std::size_t t) {
        ++windows;
        for (std::size_t a = 0; a < present.size(); ++a) {
            ++single[present[a]];
            for (std::size_t b = a + 1; b < present.size(); ++b) {
                std::size_t i = std::min(present[a], present[b]), j = std::max(present[a], present[b]);
                ++pair[i * t + j];
            }
        }
    }

    void merge(const WindowCounts& o) {
        windows += o.windows;
        for (std::size_t i = 0; i < single.size(); ++i) single[i] += o.single[i];
        for (std::size_t i = 0; i < pair.size(); ++i) pair[i] += o.pair[i];
    }
};

}  // namespace

CoherenceReport npmi_coherence(const std::vector<std::vector<std::string>>& topics,
                               const std::vector<TokenList>& reference, std::size_t window) {
    if (window < 1) throw InputError("coherence window must be >= 1");

    std::unordered_map<std::string, std::size_t> tracked;
    for (const auto& topic : topics)
        for (const auto& w : topic) tracked.emplace(w, tracked.size());
    const std::size_t t = tracked.size();

    WindowCounts total(t);
    std::mutex mu;
    parallel_chunks(reference.size(), [&](std::size_t begin, std::size_t end) {
        WindowCounts local(t);
        std::vector<std::size_t> in_window(t, 0), present;
        for (std::size_t d = begin; d < end; ++d) {
            const auto& doc = reference[d];
            if (doc.empty()) continue;
            std::vector<long> ids(doc.size(), -1);
            for (std::size_t k = 0; k < doc.size(); ++k) {
                auto it = tracked.find(doc[k]);
                if (it != tracked.end()) ids[k] = static_cast<long>(it->second);
            }
            const std::size_t span = std::min(window, doc.size());
            std::fill(in_window.begin(), in_window.end(), 0);
            for (std::size_t k = 0; k < span; ++k)
                if (ids[k] >= 0) ++in_window[static_cast<std::size_t>(ids[k])];
            for (std::size_t start = 0;; ++start) {
                present.clear();
                for (std::size_t k = start; k < start + span; ++k) {
                    if (ids[k] < 0) continue;
                    auto id = static_cast<std::size_t>(ids[k]);
                    if (in_window[id] > 0 && std::find(present.begin(), present.end(), id) == present.end())
                        present.push_back(id);
                }
                local.add(present, t);
                if (start + span >= doc.size()) break;
                if (ids[start] >= 0) --in_window[static_cast<std::size_t>(ids[start])];
                if (ids[start + span] >= 0) ++in_window[static_cast<std::size_t>(ids[start + span])];
            }
        }
        std::lock_guard<std::mutex> lock(mu);
        total.merge(local);
    });

    CoherenceReport report;
    std::vector<bool> missing_seen(t, false);
    double sum = 0;
    std::size_t scored_topics = 0;
    for (const auto& topic : topics) {
        double s = 0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < topic.size(); ++a) {
            for (std::size_t b = a + 1; b < topic.size(); ++b) {
                std::size_t i = tracked.at(topic[a]), j = tracked.at(topic[b]);
                if (total.single[i] == 0 || total.single[j] == 0) {
                    ++report.skipped_pairs;
                    for (std::size_t m : {i, j})
                        if (total.single[m] == 0 && !missing_seen[m]) {
                            missing_seen[m] = true;
                            report.missing_words.push_back(m == i ? topic[a] : topic[b]);
                        }
                    continue;
                }
                std::size_t lo = std::min(i, j), hi = std::max(i, j);
                std::size_t joint = i == j ? total.single[i] : total.pair[lo * t + hi];
                s += npmi(joint, total.single[i], total.single[j], total.windows);
                ++pairs;
            }
        }
        report.scored_pairs += pairs;
        if (pairs == 0) {
            report.per_topic.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            report.per_topic.push_back(s / static_cast<double>(pairs));
            sum += report.per_topic.back();
            ++scored_topics;
        }
    }
    report.mean = scored_topics ? sum / static_cast<double>(scored_topics) : std::numeric_limits<double>::quiet_NaN();
    return report;
}

}  // namespace convotd
