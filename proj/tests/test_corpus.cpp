#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "convotd/corpus.hpp"
#include "convotd/util.hpp"

using namespace convotd;

namespace {

RawPost post(std::string id, std::optional<std::string> parent, std::string text = "w") {
    return RawPost{std::move(id), std::move(parent), std::move(text), std::nullopt};
}

std::vector<std::vector<std::string>> path_ids(const std::vector<ConversationInstance>& inst) {
    std::vector<std::vector<std::string>> out;
    for (const auto& i : inst) out.push_back(i.ids);
    return out;
}

Vocabulary abc_vocab() { return Vocabulary({"a", "b", "c"}, {3, 2, 1}, {false, false, false}); }

}  // namespace

TEST_CASE("build_trees groups replies and promotes orphans") {
    auto trees = build_trees({post("A", {}), post("B", "A"), post("C", "B"), post("D", "B"), post("E", "missing")});
    REQUIRE(trees.size() == 2);
    CHECK(trees[0].root == "A");
    CHECK(trees[0].size() == 4);
    CHECK(trees[1].root == "E");
    CHECK(trees[1].size() == 1);
    CHECK(path_ids(flatten_to_paths(trees[0])) == std::vector<std::vector<std::string>>{{"A", "B", "C"}, {"A", "B", "D"}});
    CHECK(build_trees({}).empty());
}

TEST_CASE("build_trees rejects duplicate ids and cycles") {
    CHECK_THROWS_WITH_AS(build_trees({post("A", {}), post("A", {})}), doctest::Contains("A"), InputError);
    try {
        build_trees({post("a", "b"), post("b", "a")});
        FAIL("cycle accepted");
    } catch (const InputError& e) {
        std::string msg = e.what();
        CHECK(msg.find("cycle") != std::string::npos);
        CHECK(msg.find("a") != std::string::npos);
        CHECK(msg.find("b") != std::string::npos);
    }
}

TEST_CASE("flatten_to_paths on single node and chain") {
    CHECK(path_ids(build_instances({post("A", {})})) == std::vector<std::vector<std::string>>{{"A"}});
    CHECK(path_ids(build_instances({post("A", {}), post("B", "A"), post("C", "B")})) ==
          std::vector<std::vector<std::string>>{{"A", "B", "C"}});
}

TEST_CASE("random trees: one path per leaf, paths follow parent links") {
    std::mt19937_64 rng(2024);
    for (int t = 0; t < 200; ++t) {
        int n = std::uniform_int_distribution<int>(1, 50)(rng);
        std::vector<RawPost> posts;
        std::map<std::string, std::string> parent;
        std::set<std::string> has_child;
        for (int i = 0; i < n; ++i) {
            std::string id = "n" + std::to_string(i);
            if (i == 0) {
                posts.push_back(post(id, {}));
            } else {
                std::string p = "n" + std::to_string(std::uniform_int_distribution<int>(0, i - 1)(rng));
                posts.push_back(post(id, p));
                parent[id] = p;
                has_child.insert(p);
            }
        }
        std::shuffle(posts.begin(), posts.end(), rng);
        auto trees = build_trees(posts);
        REQUIRE(trees.size() == 1);
        auto paths = flatten_to_paths(trees[0]);
        CHECK(paths.size() == static_cast<std::size_t>(n) - has_child.size());
        std::set<std::string> leaves;
        for (const auto& p : paths) {
            CHECK(p.ids.front() == "n0");
            CHECK(!has_child.count(p.ids.back()));
            leaves.insert(p.ids.back());
            for (std::size_t k = 1; k < p.size(); ++k) CHECK(parent.at(p.ids[k]) == p.ids[k - 1]);
        }
        CHECK(leaves.size() == paths.size());
    }
}

TEST_CASE("normalize_tokens follows the documented rules") {
    CHECK(normalize_tokens("Check https://t.co/x #gun @bob") == TokenList{"check", "URL", "HASH", "MENT"});
    CHECK(normalize_tokens("Gun Control!") == TokenList{"gun", "control", "!"});
    CHECK(normalize_tokens("").empty());
    CHECK(normalize_tokens("(why?) www.x.org") == TokenList{"(", "why", "?", ")", "URL"});
    CHECK(extract_hashtags("so #GunControl, and #vote!") == std::vector<std::string>{"#guncontrol", "#vote"});
}

TEST_CASE("build_vocabulary: min_count boundary, order, stop flags") {
    ConversationInstance inst;
    TokenList msg;
    for (int i = 0; i < 20; ++i) msg.push_back("keep");
    for (int i = 0; i < 19; ++i) msg.push_back("drop");
    for (int i = 0; i < 20; ++i) msg.push_back("the");
    for (int i = 0; i < 25; ++i) msg.push_back("!");
    inst.ids = {"m"};
    inst.messages = {msg};
    inst.hashtags = {{}};
    inst.labels = {std::nullopt};
    auto vocab = build_vocabulary({inst}, 20, {"the"});
    REQUIRE(vocab.size() == 3);
    CHECK(vocab.word(0) == "!");
    CHECK(vocab.word(1) == "keep");  // ties by lexicographic order
    CHECK(vocab.word(2) == "the");
    CHECK(!vocab.index("drop"));
    CHECK(vocab.is_stop(0));
    CHECK(!vocab.is_stop(1));
    CHECK(vocab.is_stop(2));
    for (std::size_t i = 0; i < vocab.size(); ++i) CHECK(*vocab.index(vocab.word(i)) == i);
    CHECK(build_vocabulary({}, 20, {}).size() == 0);
}

TEST_CASE("shared messages are counted once in the vocabulary") {
    auto inst = build_instances({post("A", {}, "x"), post("B", "A", "y"), post("C", "A", "y")});
    REQUIRE(inst.size() == 2);
    auto vocab = build_vocabulary(inst, 1, {});
    CHECK(vocab.count(*vocab.index("x")) == 1);
    CHECK(vocab.count(*vocab.index("y")) == 2);
}

TEST_CASE("vectorize messages and conversations") {
    auto vocab = abc_vocab();
    CHECK(vectorize(TokenList{"a", "a", "b"}, vocab).dense() == std::vector<double>{2, 1, 0});
    CHECK(vectorize(TokenList{"q"}, vocab).dense() == std::vector<double>{0, 0, 0});
    ConversationInstance conv;
    conv.ids = {"1", "2"};
    conv.messages = {{"a"}, {"a", "b"}};
    conv.hashtags = {{}, {}};
    conv.labels = {std::nullopt, std::nullopt};
    CHECK(vectorize(conv, vocab).dense() == std::vector<double>{2, 1, 0});
    CHECK(vectorize(conv, vocab, 0).dense() == std::vector<double>{1, 1, 0});
}

TEST_CASE("vectorize is order invariant and message vectors sum to the conversation") {
    auto vocab = abc_vocab();
    std::mt19937_64 rng(5);
    const TokenList pool{"a", "b", "c", "zz"};
    for (int t = 0; t < 50; ++t) {
        ConversationInstance conv;
        BowVector sum;
        sum.dim = vocab.size();
        int m = std::uniform_int_distribution<int>(1, 5)(rng);
        for (int k = 0; k < m; ++k) {
            TokenList msg;
            int len = std::uniform_int_distribution<int>(0, 8)(rng);
            for (int i = 0; i < len; ++i) msg.push_back(pool[std::uniform_int_distribution<std::size_t>(0, 3)(rng)]);
            TokenList shuffled = msg;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            CHECK(vectorize(msg, vocab) == vectorize(shuffled, vocab));
            sum += vectorize(msg, vocab);
            conv.ids.push_back(std::to_string(k));
            conv.messages.push_back(msg);
            conv.hashtags.emplace_back();
            conv.labels.emplace_back();
        }
        CHECK(vectorize(conv, vocab) == sum);
    }
}

TEST_CASE("split_dataset sizes and determinism") {
    std::vector<ConversationInstance> inst(10);
    for (int i = 0; i < 10; ++i) inst[static_cast<std::size_t>(i)].ids = {std::to_string(i)};
    auto s = split_dataset(inst, {0.8, 0.1, 0.1}, 3);
    CHECK(s.train.size() == 8);
    CHECK(s.dev.size() == 1);
    CHECK(s.test.size() == 1);
    auto all = split_dataset(inst, {1, 0, 0}, 3);
    CHECK(all.train.size() == 10);
    CHECK(all.dev.empty());
    auto again = split_dataset(inst, {0.8, 0.1, 0.1}, 3);
    for (std::size_t i = 0; i < 8; ++i) CHECK(again.train[i].ids == s.train[i].ids);
    std::set<std::string> seen;
    for (const auto* part : {&s.train, &s.dev, &s.test})
        for (const auto& i : *part) CHECK(seen.insert(i.ids[0]).second);
    CHECK(seen.size() == 10);
    std::vector<ConversationInstance> two(2);
    CHECK_THROWS_AS(split_dataset(two, {0.8, 0.1, 0.1}, 1), InputError);
}

TEST_CASE("vocabulary and instances round-trip through files") {
    auto dir = std::filesystem::temp_directory_path() / "convotd_corpus_test";
    std::filesystem::create_directories(dir);
    Vocabulary vocab({"a", "!", "HASH"}, {5, 4, 4}, {false, true, false});
    save_vocabulary_tsv(vocab, (dir / "v.tsv").string());
    auto back = load_vocabulary_tsv((dir / "v.tsv").string());
    CHECK(back.words() == vocab.words());
    CHECK(back.stop_flags() == vocab.stop_flags());
    CHECK(back.hash() == vocab.hash());

    std::vector<RawPost> posts{{"1", std::nullopt, "Hi #Tag", std::string("greet")}, {"2", std::string("1"), "ok", std::nullopt}};
    write_posts_jsonl(posts, (dir / "p.jsonl").string());
    auto inst = build_instances(read_posts_jsonl((dir / "p.jsonl").string()));
    write_instances_jsonl(inst, (dir / "i.jsonl").string());
    auto inst2 = read_instances_jsonl((dir / "i.jsonl").string());
    REQUIRE(inst2.size() == 1);
    CHECK(inst2[0].ids == inst[0].ids);
    CHECK(inst2[0].messages == inst[0].messages);
    CHECK(inst2[0].hashtags[0] == std::vector<std::string>{"#tag"});
    CHECK(inst2[0].labels[0] == std::optional<std::string>("greet"));
    std::filesystem::remove_all(dir);
}
