#pragma once

#include <optional>
#include <string>
#include <vector>

#include "convotd/corpus.hpp"
#include "convotd/model.hpp"

namespace convotd {

// ---- top words -------------------------------------------------------------

struct RankedWord {
    std::size_t index;
    std::string word;
    double prob;
};

/// Per-row ranked word lists (descending probability, ties by index).
struct TopicSummary {
    std::vector<std::vector<RankedWord>> rows;
};

/// Throws InputError when N exceeds V. With exclude_stop, stop-flagged words are skipped
/// and a row may hold fewer than N words when the vocabulary runs out.
TopicSummary top_n_words(const Mat& word_matrix, const Vocabulary& vocab, std::size_t n, bool exclude_stop);

/// Indices of the n largest entries of a row, ties by lower index.
std::vector<std::size_t> top_indices(const Vec& row, std::size_t n);

// ---- clustering metrics ----------------------------------------------------

/// Contingency-based scores of cluster assignments against gold labels. Both sequences
/// are arbitrary integer ids; entropies use natural log.
double purity(const std::vector<int>& assignments, const std::vector<int>& labels);
double homogeneity(const std::vector<int>& assignments, const std::vector<int>& labels);
double variation_of_information(const std::vector<int>& assignments, const std::vector<int>& labels);

struct ClusterScore {
    double purity = 0, homogeneity = 0, vi = 0;
};
ClusterScore cluster_scores(const std::vector<int>& assignments, const std::vector<int>& labels);

/// Row l, column r: fraction of label-l items assigned role r. Labels must lie in
/// [0, n_labels) and roles in [0, n_roles). Rows without items stay zero and are flagged.
struct AlignmentMatrix {
    Mat fractions;
    std::vector<bool> empty_rows;
};
AlignmentMatrix alignment_matrix(const std::vector<int>& assignments, const std::vector<int>& labels,
                                 std::size_t n_roles, std::size_t n_labels);

// ---- planted recovery -------------------------------------------------------

struct ClusterAlignment {
    std::vector<std::size_t> permutation;  // learned row i matched to planted row permutation[i]
    double total_similarity = 0;
    double mean_top10_overlap = 0;
};

/// Optimal one-to-one matching maximizing summed cosine similarity (Hungarian method).
ClusterAlignment align_clusters(const Mat& learned, const Mat& planted);

/// Maximum-weight perfect matching on a square score matrix; result[i] is the column of row i.
std::vector<std::size_t> hungarian_max(const Mat& scores);

double jensen_shannon(const Vec& p, const Vec& q);

/// Mean Jensen-Shannon divergence over every (topic row, discourse row) pair.
double mean_topic_discourse_js(const Mat& topic_word, const Mat& discourse_word);

/// Mean silhouette coefficient (Euclidean) of points (rows) under the given cluster ids.
double silhouette(const Mat& points, const std::vector<int>& clusters);

// ---- word attribution --------------------------------------------------------

enum class WordSource { topic, discourse, unknown };

struct WordAttribution {
    std::string token;
    WordSource source = WordSource::unknown;
    double p_topic = 0;      // p(w|z)
    double p_discourse = 0;  // p(w|d)
};

/// Tags each token topic when p(w|z) > p(w|d), discourse otherwise (ties included),
/// unknown when out of vocabulary.
std::vector<WordAttribution> word_attribution(const TokenList& message, const Vocabulary& vocab, const Vec& theta,
                                              const Vec& d_hard, const ModelParameters& params);

const char* to_string(WordSource s);

}  // namespace convotd
