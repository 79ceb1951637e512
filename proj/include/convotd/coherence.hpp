#pragma once

#include <string>
#include <vector>

#include "convotd/corpus.hpp"

namespace convotd {

struct CoherenceReport {
    std::vector<double> per_topic;  // NaN when no pair of a topic could be scored
    double mean = 0;                // over topics with a score
    std::size_t scored_pairs = 0;
    std::size_t skipped_pairs = 0;  // pairs with a word absent from the reference corpus
    std::vector<std::string> missing_words;
};

/// Normalized PMI of a word pair from windowed document frequencies. Every contiguous
/// run of `window` tokens of a document is one window (a shorter document is a single
/// window). p(w) and p(w_i, w_j) are the fractions of windows containing the word(s).
/// Joint count 0 scores -1; p(w_i, w_j) = 1 scores 1; otherwise
/// log((p_ij + 1e-12) / (p_i p_j)) / -log(p_ij + 1e-12).
double npmi(std::size_t joint, std::size_t count_i, std::size_t count_j, std::size_t windows);

/// Mean pairwise NPMI over each topic's word list.
CoherenceReport npmi_coherence(const std::vector<std::vector<std::string>>& topics,
                               const std::vector<TokenList>& reference, std::size_t window);

}  // namespace convotd
