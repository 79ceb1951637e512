#include "convotd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "convotd/util.hpp"

namespace convotd {

using nlohmann::json;

const std::vector<std::string>& ConversationTree::children_of(const std::string& id) const {
    static const std::vector<std::string> none;
    auto it = children.find(id);
    return it == children.end() ? none : it->second;
}

std::vector<ConversationTree> build_trees(const std::vector<RawPost>& posts) {
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < posts.size(); ++i) {
        if (posts[i].id.empty()) throw InputError("post at position " + std::to_string(i) + " has an empty id");
        if (!by_id.emplace(posts[i].id, i).second) throw InputError("duplicate post id: " + posts[i].id);
    }

    auto parent_of = [&](std::size_t i) -> std::optional<std::size_t> {
        const auto& p = posts[i].parent_id;
        if (!p) return std::nullopt;
        auto it = by_id.find(*p);
        if (it == by_id.end()) return std::nullopt;
        return it->second;
    };

    std::vector<std::vector<std::size_t>> kids(posts.size());
    std::vector<std::size_t> roots;
    for (std::size_t i = 0; i < posts.size(); ++i) {
        if (auto p = parent_of(i))
            kids[*p].push_back(i);
        else
            roots.push_back(i);
    }

    std::vector<int> tree_of(posts.size(), -1);
    std::vector<ConversationTree> forest;
    forest.reserve(roots.size());
    for (std::size_t r : roots) {
        ConversationTree tree;
        tree.root = posts[r].id;
        std::vector<std::size_t> stack{r};
        while (!stack.empty()) {
            std::size_t n = stack.back();
            stack.pop_back();
            tree_of[n] = static_cast<int>(forest.size());
            const RawPost& post = posts[n];
            tree.tokens.emplace(post.id, normalize_tokens(post.text));
            tree.hashtags.emplace(post.id, extract_hashtags(post.text));
            tree.labels.emplace(post.id, post.label);
            if (!kids[n].empty()) {
                auto& list = tree.children[post.id];
                for (std::size_t c : kids[n]) list.push_back(posts[c].id);
                for (auto it = kids[n].rbegin(); it != kids[n].rend(); ++it) stack.push_back(*it);
            }
        }
        forest.push_back(std::move(tree));
    }

    for (std::size_t i = 0; i < posts.size(); ++i) {
        if (tree_of[i] >= 0) continue;
        // Unreached nodes sit on or above a parent cycle; walk up until a node repeats.
        std::vector<std::size_t> walk;
        std::unordered_map<std::size_t, std::size_t> seen;
        std::size_t n = i;
        while (!seen.count(n)) {
            seen[n] = walk.size();
            walk.push_back(n);
            n = *parent_of(n);
        }
        std::string cycle;
        for (std::size_t k = seen[n]; k < walk.size(); ++k) cycle += posts[walk[k]].id + " -> ";
        cycle += posts[n].id;
        throw InputError("parent cycle: " + cycle);
    }
    return forest;
}

std::vector<ConversationInstance> flatten_to_paths(const ConversationTree& tree) {
    std::vector<ConversationInstance> out;
    if (tree.root.empty()) return out;
    std::vector<std::string> path;
    auto emit = [&] {
        ConversationInstance inst;
        for (const auto& id : path) {
            inst.ids.push_back(id);
            auto t = tree.tokens.find(id);
            inst.messages.push_back(t == tree.tokens.end() ? TokenList{} : t->second);
            auto h = tree.hashtags.find(id);
            inst.hashtags.push_back(h == tree.hashtags.end() ? std::vector<std::string>{} : h->second);
            auto l = tree.labels.find(id);
            inst.labels.push_back(l == tree.labels.end() ? std::nullopt : l->second);
        }
        out.push_back(std::move(inst));
    };
    // Iterative DFS: (node, next child index).
    std::vector<std::pair<std::string, std::size_t>> stack{{tree.root, 0}};
    path.push_back(tree.root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto& kids = tree.children_of(node);
        if (kids.empty()) {
            emit();
        }
        if (next < kids.size()) {
            std::string child = kids[next++];
            stack.emplace_back(child, 0);
            path.push_back(child);
        } else {
            stack.pop_back();
            path.pop_back();
        }
    }
    return out;
}

std::vector<ConversationInstance> build_instances(const std::vector<RawPost>& posts) {
    std::vector<ConversationInstance> out;
    for (const auto& tree : build_trees(posts)) {
        auto paths = flatten_to_paths(tree);
        std::move(paths.begin(), paths.end(), std::back_inserter(out));
    }
    return out;
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words, std::vector<std::int64_t> counts,
                       std::vector<bool> stop_flags)
    : words_(std::move(words)), counts_(std::move(counts)), stop_(std::move(stop_flags)) {
    if (counts_.size() != words_.size() || stop_.size() != words_.size())
        throw InputError("vocabulary columns have different lengths");
    for (std::size_t i = 0; i < words_.size(); ++i)
        if (!index_.emplace(words_[i], i).second) throw InputError("duplicate vocabulary word: " + words_[i]);
}

std::optional<std::size_t> Vocabulary::index(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::string Vocabulary::hash() const {
    std::uint64_t h = fnv1a("convotd-vocab");
    for (const auto& w : words_) {
        h = fnv1a(w, h);
        h = fnv1a("\n", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Vocabulary build_vocabulary(const std::vector<ConversationInstance>& corpus, std::int64_t min_count,
                            const std::set<std::string>& stop_list) {
    if (min_count < 1) throw InputError("min_count must be >= 1");
    std::unordered_set<std::string> seen_ids;
    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& inst : corpus) {
        for (std::size_t m = 0; m < inst.size(); ++m) {
            if (!seen_ids.insert(inst.ids[m]).second) continue;
            for (const auto& tok : inst.messages[m]) ++counts[tok];
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (auto& [w, c] : counts)
        if (c >= min_count) kept.emplace_back(w, c);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::vector<std::string> words;
    std::vector<std::int64_t> cnt;
    std::vector<bool> stop;
    for (auto& [w, c] : kept) {
        stop.push_back(stop_list.count(w) > 0 || is_punctuation(w));
        words.push_back(w);
        cnt.push_back(c);
    }
    return Vocabulary(std::move(words), std::move(cnt), std::move(stop));
}

void save_vocabulary_tsv(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "index\tword\tcount\tstop\n";
    for (std::size_t i = 0; i < vocab.size(); ++i)
        out << i << '\t' << vocab.word(i) << '\t' << vocab.count(i) << '\t' << (vocab.is_stop(i) ? 1 : 0) << '\n';
}

Vocabulary load_vocabulary_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read vocabulary " + path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::string> words;
    std::vector<std::int64_t> counts;
    std::vector<bool> stop;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == '\t') {
                cols.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (cols.size() != 4) throw InputError(path + ":" + std::to_string(lineno) + ": expected 4 columns");
        try {
            if (std::stoull(cols[0]) != words.size())
                throw InputError(path + ":" + std::to_string(lineno) + ": index out of order");
            words.push_back(cols[1]);
            counts.push_back(std::stoll(cols[2]));
            stop.push_back(cols[3] == "1");
        } catch (const std::logic_error&) {
            throw InputError(path + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return Vocabulary(std::move(words), std::move(counts), std::move(stop));
}

std::set<std::string> load_word_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read word list " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        std::size_t b = 0;
        while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
        line = line.substr(b);
        if (line.empty() || line.rfind("//", 0) == 0) continue;
        out.insert(line);
    }
    return out;
}

// ---- bag of words ---------------------------------------------------------

double BowVector::total() const {
    double t = 0;
    for (const auto& [i, c] : entries) t += c;
    return t;
}

double BowVector::at(std::size_t i) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), i,
                               [](const auto& e, std::size_t k) { return e.first < k; });
    return (it != entries.end() && it->first == i) ? it->second : 0.0;
}

std::vector<double> BowVector::dense() const {
    std::vector<double> out(dim, 0.0);
    for (const auto& [i, c] : entries) out[i] = c;
    return out;
}

BowVector& BowVector::operator+=(const BowVector& other) {
    if (other.dim != dim) throw InputError("bag-of-words dimension mismatch");
    std::vector<std::pair<std::size_t, double>> merged;
    merged.reserve(entries.size() + other.entries.size());
    auto a = entries.cbegin();
    auto b = other.entries.cbegin();
    while (a != entries.cend() || b != other.entries.cend()) {
        if (b == other.entries.cend() || (a != entries.cend() && a->first < b->first))
            merged.push_back(*a++);
        else if (a == entries.cend() || b->first < a->first)
            merged.push_back(*b++);
        else {
            merged.emplace_back(a->first, a->second + b->second);
            ++a;
            ++b;
        }
    }
    entries = std::move(merged);
    return *this;
}

BowVector vectorize(const TokenList& tokens, const Vocabulary& vocab) {
    std::map<std::size_t, double> counts;
    for (const auto& tok : tokens)
        if (auto i = vocab.index(tok)) counts[*i] += 1.0;
    BowVector out;
    out.dim = vocab.size();
    out.entries.assign(counts.begin(), counts.end());
    return out;
}

BowVector vectorize(const ConversationInstance& conversation, const Vocabulary& vocab,
                    std::optional<std::size_t> exclude_index) {
    BowVector out;
    out.dim = vocab.size();
    for (std::size_t m = 0; m < conversation.size(); ++m) {
        if (exclude_index && *exclude_index == m) continue;
        out += vectorize(conversation.messages[m], vocab);
    }
    return out;
}

// ---- splitting ------------------------------------------------------------

DatasetSplit split_dataset(const std::vector<ConversationInstance>& instances,
                           const std::array<double, 3>& ratios, std::uint64_t seed) {
    double sum = 0;
    std::size_t nonzero = 0;
    for (double r : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw InputError("split ratios must be non-negative");
        sum += r;
        nonzero += r > 0;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InputError("split ratios must sum to 1");
    const std::size_t n = instances.size();
    if (n < nonzero)
        throw InputError("cannot split " + std::to_string(n) + " instances into " + std::to_string(nonzero) + " parts");

    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
        // Tolerate representation error such as 0.1 * 10 = 1.0000000000000002.
        double exact = ratios[s] * static_cast<double>(n);
        sizes[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[s] = exact - static_cast<double>(sizes[s]);
        assigned += sizes[s];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    for (int s = 0; s < 3; ++s) {
        if (ratios[s] > 0 && sizes[s] == 0) {
            auto big = std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
            --sizes[big];
            ++sizes[s];
        }
    }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_rng(seed, "split");
    std::shuffle(perm.begin(), perm.end(), rng);

    DatasetSplit out;
    std::vector<ConversationInstance>* parts[3] = {&out.train, &out.dev, &out.test};
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < sizes[s]; ++k) parts[s]->push_back(instances[perm[pos++]]);
    return out;
}

// ---- file formats ---------------------------------------------------------

std::vector<RawPost> read_posts_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path);
    std::vector<RawPost> posts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id")) throw InputError(path + ":" + std::to_string(lineno) + ": missing id");
        RawPost p;
        const auto& id = j["id"];
        p.id = id.is_string() ? id.get<std::string>() : id.dump();
        if (j.contains("parent_id") && !j["parent_id"].is_null()) {
            const auto& pid = j["parent_id"];
            p.parent_id = pid.is_string() ? pid.get<std::string>() : pid.dump();
        }
        if (j.contains("text") && j["text"].is_string()) p.text = j["text"].get<std::string>();
        if (j.contains("label") && j["label"].is_string()) p.label = j["label"].get<std::string>();
        posts.push_back(std::move(p));
    }
    return posts;
}

void write_posts_jsonl(const std::vector<RawPost>& posts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    for (const auto& p : posts) {
        json j;
        j["id"] = p.id;
        j["parent_id"] = p.parent_id ? json(*p.parent_id) : json(nullptr);
        j["text"] = p.text;
        if (p.label) j["label"] = *p.label;
        out << j.dump() << '\n';
    }
}

void write_instances_jsonl(const std::vector<ConversationInstance>& instances, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    for (const auto& inst : instances) {
        json j;
        j["ids"] = inst.ids;
        j["tokens"] = inst.messages;
        j["hashtags"] = inst.hashtags;
        json labels = json::array();
        for (const auto& l : inst.labels) labels.push_back(l ? json(*l) : json(nullptr));
        j["labels"] = labels;
        out << j.dump() << '\n';
    }
}

std::vector<ConversationInstance> read_instances_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path);
    std::vector<ConversationInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            ConversationInstance inst;
            inst.ids = j.at("ids").get<std::vector<std::string>>();
            inst.messages = j.at("tokens").get<std::vector<TokenList>>();
            if (inst.messages.size() != inst.ids.size()) throw InputError("ids/tokens length mismatch");
            if (j.contains("hashtags"))
                inst.hashtags = j["hashtags"].get<std::vector<std::vector<std::string>>>();
            inst.hashtags.resize(inst.size());
            if (j.contains("labels"))
                for (const auto& l : j["labels"])
                    inst.labels.push_back(l.is_string() ? std::optional<std::string>(l.get<std::string>()) : std::nullopt);
            inst.labels.resize(inst.size());
            out.push_back(std::move(inst));
        } catch (const json::exception& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const InputError& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace convotd
