#include "convotd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace convotd {

// ---- top words -------------------------------------------------------------

std::vector<std::size_t> top_indices(const Vec& row, std::size_t n) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(row.size()));
    std::iota(idx.begin(), idx.end(), 0);
    n = std::min(n, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), [&](std::size_t a, std::size_t b) {
        double va = row(static_cast<Eigen::Index>(a)), vb = row(static_cast<Eigen::Index>(b));
        return va != vb ? va > vb : a < b;
    });
    idx.resize(n);
    return idx;
}

TopicSummary top_n_words(const Mat& word_matrix, const Vocabulary& vocab, std::size_t n, bool exclude_stop) {
    const auto V = static_cast<std::size_t>(word_matrix.cols());
    if (V != vocab.size()) throw InputError("word matrix width differs from vocabulary size");
    if (n > V) throw InputError("top-N of " + std::to_string(n) + " exceeds vocabulary size " + std::to_string(V));
    TopicSummary out;
    for (Eigen::Index r = 0; r < word_matrix.rows(); ++r) {
        std::vector<RankedWord> words;
        for (std::size_t i : top_indices(word_matrix.row(r).transpose(), V)) {
            if (words.size() == n) break;
            if (exclude_stop && vocab.is_stop(i)) continue;
            words.push_back({i, vocab.word(i), word_matrix(r, static_cast<Eigen::Index>(i))});
        }
        out.rows.push_back(std::move(words));
    }
    return out;
}

// ---- clustering metrics ----------------------------------------------------

namespace {

struct Contingency {
    std::map<int, std::map<int, double>> joint;  // cluster -> label -> count
    std::map<int, double> clusters, labels;
    double n = 0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& l) {
    if (a.size() != l.size()) throw InputError("assignments and labels differ in length");
    if (a.empty()) throw InputError("assignments must not be empty");
    Contingency c;
    for (std::size_t i = 0; i < a.size(); ++i) {
        c.joint[a[i]][l[i]] += 1;
        c.clusters[a[i]] += 1;
        c.labels[l[i]] += 1;
    }
    c.n = static_cast<double>(a.size());
    return c;
}

double entropy(const std::map<int, double>& counts, double n) {
    double h = 0;
    for (const auto& [k, v] : counts) h -= (v / n) * std::log(v / n);
    return h;
}

// H(labels | clusters)
double cond_label_given_cluster(const Contingency& c) {
    double h = 0;
    for (const auto& [k, row] : c.joint)
        for (const auto& [l, v] : row) h -= (v / c.n) * std::log(v / c.clusters.at(k));
    return h;
}

// H(clusters | labels)
double cond_cluster_given_label(const Contingency& c) {
    double h = 0;
    for (const auto& [k, row] : c.joint)
        for (const auto& [l, v] : row) h -= (v / c.n) * std::log(v / c.labels.at(l));
    return h;
}

}  // namespace

double purity(const std::vector<int>& assignments, const std::vector<int>& labels) {
    Contingency c = contingency(assignments, labels);
    double s = 0;
    for (const auto& [k, row] : c.joint) {
        double best = 0;
        for (const auto& [l, v] : row) best = std::max(best, v);
        s += best;
    }
    return s / c.n;
}

double homogeneity(const std::vector<int>& assignments, const std::vector<int>& labels) {
    Contingency c = contingency(assignments, labels);
    double h = entropy(c.labels, c.n);
    if (h <= 0) return 1.0;
    return 1.0 - cond_label_given_cluster(c) / h;
}

double variation_of_information(const std::vector<int>& assignments, const std::vector<int>& labels) {
    Contingency c = contingency(assignments, labels);
    return std::max(0.0, cond_label_given_cluster(c) + cond_cluster_given_label(c));
}

ClusterScore cluster_scores(const std::vector<int>& assignments, const std::vector<int>& labels) {
    return {purity(assignments, labels), homogeneity(assignments, labels), variation_of_information(assignments, labels)};
}

AlignmentMatrix alignment_matrix(const std::vector<int>& assignments, const std::vector<int>& labels,
                                 std::size_t n_roles, std::size_t n_labels) {
    if (assignments.size() != labels.size()) throw InputError("assignments and labels differ in length");
    if (assignments.empty()) throw InputError("assignments must not be empty");
    AlignmentMatrix out;
    out.fractions = Mat::Zero(static_cast<Eigen::Index>(n_labels), static_cast<Eigen::Index>(n_roles));
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_labels) throw InputError("label id out of range");
        if (assignments[i] < 0 || static_cast<std::size_t>(assignments[i]) >= n_roles) throw InputError("role id out of range");
        out.fractions(labels[i], assignments[i]) += 1.0;
    }
    out.empty_rows.assign(n_labels, false);
    for (Eigen::Index r = 0; r < out.fractions.rows(); ++r) {
        double s = out.fractions.row(r).sum();
        if (s > 0)
            out.fractions.row(r) /= s;
        else
            out.empty_rows[static_cast<std::size_t>(r)] = true;
    }
    return out;
}

// ---- planted recovery -------------------------------------------------------

std::vector<std::size_t> hungarian_max(const Mat& scores) {
    const auto n = static_cast<std::size_t>(scores.rows());
    if (scores.cols() != scores.rows()) throw InputError("assignment requires a square matrix");
    if (n == 0) return {};
    // Minimize cost = -score with the potentials formulation (1-based internally).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<bool> used(n + 1);
    auto cost = [&](std::size_t i, std::size_t j) {
        return -scores(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1));
    };
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), false);
        do {
            used[j0] = true;
            std::size_t i0 = p[j0], j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
    return assignment;
}

ClusterAlignment align_clusters(const Mat& learned, const Mat& planted) {
    if (learned.rows() != planted.rows())
        throw InputError("cannot align " + std::to_string(learned.rows()) + " rows with " +
                         std::to_string(planted.rows()) + " rows");
    if (learned.cols() != planted.cols()) throw InputError("aligned matrices differ in width");
    const Eigen::Index n = learned.rows();
    Mat sim(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double denom = learned.row(i).norm() * planted.row(j).norm();
            sim(i, j) = denom > 0 ? learned.row(i).dot(planted.row(j)) / denom : 0.0;
        }
    ClusterAlignment out;
    out.permutation = hungarian_max(sim);
    const std::size_t top = std::min<std::size_t>(10, static_cast<std::size_t>(learned.cols()));
    double overlap = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto j = static_cast<Eigen::Index>(out.permutation[static_cast<std::size_t>(i)]);
        out.total_similarity += sim(i, j);
        auto a = top_indices(learned.row(i).transpose(), top);
        auto b = top_indices(planted.row(j).transpose(), top);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        std::vector<std::size_t> common;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
        overlap += top ? static_cast<double>(common.size()) / static_cast<double>(top) : 0.0;
    }
    out.mean_top10_overlap = n ? overlap / static_cast<double>(n) : 0.0;
    return out;
}

double jensen_shannon(const Vec& p, const Vec& q) {
    if (p.size() != q.size()) throw InputError("jensen_shannon: length mismatch");
    Vec m = 0.5 * (p + q);
    auto kl = [](const Vec& a, const Vec& b) {
        double s = 0;
        for (Eigen::Index i = 0; i < a.size(); ++i)
            if (a(i) > 0) s += a(i) * std::log(a(i) / b(i));
        return s;
    };
    return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

double mean_topic_discourse_js(const Mat& topic_word, const Mat& discourse_word) {
    double s = 0;
    for (Eigen::Index t = 0; t < topic_word.rows(); ++t)
        for (Eigen::Index d = 0; d < discourse_word.rows(); ++d)
            s += jensen_shannon(topic_word.row(t).transpose(), discourse_word.row(d).transpose());
    return s / static_cast<double>(topic_word.rows() * discourse_word.rows());
}

double silhouette(const Mat& points, const std::vector<int>& clusters) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (clusters.size() != n) throw InputError("silhouette: cluster count differs from point count");
    std::map<int, std::size_t> sizes;
    for (int c : clusters) ++sizes[c];
    if (sizes.size() < 2) throw InputError("silhouette needs at least two clusters");
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<int, double> dist;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) dist[clusters[j]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
        std::size_t own = sizes[clusters[i]];
        if (own <= 1) continue;  // singleton contributes 0
        double a = dist[clusters[i]] / static_cast<double>(own - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [c, sz] : sizes)
            if (c != clusters[i]) b = std::min(b, dist[c] / static_cast<double>(sz));
        double denom = std::max(a, b);
        total += denom > 0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

// ---- word attribution --------------------------------------------------------

std::vector<WordAttribution> word_attribution(const TokenList& message, const Vocabulary& vocab, const Vec& theta,
                                              const Vec& d_hard, const ModelParameters& params) {
    Vec p_topic = softmax(params.topic_word.transpose() * theta + params.topic_word_b.col(0));
    Vec p_disc = softmax(params.disc_word.transpose() * d_hard + params.disc_word_b.col(0));
    std::vector<WordAttribution> out;
    for (const auto& tok : message) {
        WordAttribution a;
        a.token = tok;
        if (auto i = vocab.index(tok)) {
            a.p_topic = p_topic(static_cast<Eigen::Index>(*i));
            a.p_discourse = p_disc(static_cast<Eigen::Index>(*i));
            a.source = a.p_topic > a.p_discourse ? WordSource::topic : WordSource::discourse;
        }
        out.push_back(std::move(a));
    }
    return out;
}

const char* to_string(WordSource s) {
    switch (s) {
        case WordSource::topic: return "topic";
        case WordSource::discourse: return "discourse";
        default: return "unknown";
    }
}

}  // namespace convotd
