#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace convotd {

/// One post as read from the JSON-lines input.
struct RawPost {
    std::string id;
    std::optional<std::string> parent_id;
    std::string text;
    std::optional<std::string> label;  // evaluation only
};

using TokenList = std::vector<std::string>;

/// Reply tree. Every node carries its normalized tokens, the hashtags found in the
/// raw text, and the optional evaluation label.
struct ConversationTree {
    std::string root;
    std::map<std::string, std::vector<std::string>> children;  // ordered by input order
    std::unordered_map<std::string, TokenList> tokens;
    std::unordered_map<std::string, std::vector<std::string>> hashtags;
    std::unordered_map<std::string, std::optional<std::string>> labels;

    std::size_t size() const { return tokens.size(); }
    const std::vector<std::string>& children_of(const std::string& id) const;
};

/// One root-to-leaf path. All vectors are parallel, one entry per message.
struct ConversationInstance {
    std::vector<std::string> ids;
    std::vector<TokenList> messages;
    std::vector<std::vector<std::string>> hashtags;
    std::vector<std::optional<std::string>> labels;

    std::size_t size() const { return ids.size(); }
};

// ---- tokenization ---------------------------------------------------------

/// Rule-based tweet tokenizer.
///  * split on whitespace;
///  * a chunk starting with http://, https:// or www. becomes "URL";
///  * leading and trailing ASCII punctuation is peeled off, one token per character
///    ('#' and '@' directly followed by a word character are kept as prefixes);
///  * a remaining core starting with '#' becomes "HASH", with '@' becomes "MENT";
///  * everything else is lower-cased (ASCII only).
TokenList normalize_tokens(std::string_view text);

/// Lower-cased hashtags (including the leading '#') in surface order.
std::vector<std::string> extract_hashtags(std::string_view text);

/// True when the token consists only of ASCII punctuation.
bool is_punctuation(std::string_view token);

// ---- trees and paths ------------------------------------------------------

/// Groups posts into reply trees. Posts whose parent is absent from the input become
/// roots of their own trees. Trees come out in order of their root's first appearance.
/// Throws InputError on a duplicate or empty id, or on a parent cycle.
std::vector<ConversationTree> build_trees(const std::vector<RawPost>& posts);

/// One instance per leaf, in depth-first order over children.
std::vector<ConversationInstance> flatten_to_paths(const ConversationTree& tree);

/// build_trees followed by flatten_to_paths over every tree.
std::vector<ConversationInstance> build_instances(const std::vector<RawPost>& posts);

// ---- vocabulary -----------------------------------------------------------

class Vocabulary {
public:
    Vocabulary() = default;

    /// Entries must already be in index order; throws InputError on duplicates.
    Vocabulary(std::vector<std::string> words, std::vector<std::int64_t> counts,
               std::vector<bool> stop_flags);

    std::size_t size() const { return words_.size(); }
    bool empty() const { return words_.empty(); }

    std::optional<std::size_t> index(const std::string& word) const;
    const std::string& word(std::size_t i) const { return words_.at(i); }
    std::int64_t count(std::size_t i) const { return counts_.at(i); }
    bool is_stop(std::size_t i) const { return stop_.at(i); }

    const std::vector<std::string>& words() const { return words_; }
    const std::vector<bool>& stop_flags() const { return stop_; }

    /// Hash over the ordered word list; identifies the vocabulary in checkpoints.
    std::string hash() const;

private:
    std::vector<std::string> words_;
    std::vector<std::int64_t> counts_;
    std::vector<bool> stop_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Counts every distinct message once (messages shared by several paths are not
/// double-counted), keeps words with count >= min_count, orders by descending count
/// then lexicographically. Stop flags: stop_list members and punctuation tokens.
Vocabulary build_vocabulary(const std::vector<ConversationInstance>& corpus, std::int64_t min_count,
                            const std::set<std::string>& stop_list);

void save_vocabulary_tsv(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary_tsv(const std::string& path);

/// One word per line; blank lines and lines starting with "//" are ignored.
std::set<std::string> load_word_list(const std::string& path);

// ---- bag of words ---------------------------------------------------------

/// Sparse count vector of dimension V. Entries are sorted by index, counts positive.
struct BowVector {
    std::size_t dim = 0;
    std::vector<std::pair<std::size_t, double>> entries;

    double total() const;
    double at(std::size_t i) const;
    std::vector<double> dense() const;
    BowVector& operator+=(const BowVector& other);
    bool operator==(const BowVector&) const = default;
};

BowVector vectorize(const TokenList& tokens, const Vocabulary& vocab);

/// Element-wise sum of the message vectors. When exclude_index is set that message
/// is left out (context without the target).
BowVector vectorize(const ConversationInstance& conversation, const Vocabulary& vocab,
                    std::optional<std::size_t> exclude_index = std::nullopt);

// ---- splitting ------------------------------------------------------------

struct DatasetSplit {
    std::vector<ConversationInstance> train, dev, test;
};

/// Seeded random partition of instances into train/dev/test. Split sizes use the
/// largest-remainder rule; every split with a non-zero ratio receives at least one
/// instance. Throws InputError when ratios are invalid or there are fewer instances
/// than non-empty splits.
DatasetSplit split_dataset(const std::vector<ConversationInstance>& instances,
                           const std::array<double, 3>& ratios, std::uint64_t seed);

// ---- file formats ---------------------------------------------------------

/// JSON-lines posts: id, parent_id (null for roots), text, optional label.
std::vector<RawPost> read_posts_jsonl(const std::string& path);
void write_posts_jsonl(const std::vector<RawPost>& posts, const std::string& path);

/// JSON-lines instances: ids, tokens, hashtags, labels.
void write_instances_jsonl(const std::vector<ConversationInstance>& instances, const std::string& path);
std::vector<ConversationInstance> read_instances_jsonl(const std::string& path);

}  // namespace convotd
