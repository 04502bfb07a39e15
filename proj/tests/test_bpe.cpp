#include "damt/bpe.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "damt/rng.hpp"
#include "doctest.h"

using namespace damt;

namespace {

// brute-force pair counter over a corpus, independent of the learner
std::map<std::pair<std::string, std::string>, size_t> count_pairs(
    const std::vector<std::string>& sentences) {
    std::map<std::pair<std::string, std::string>, size_t> counts;
    for (const auto& s : sentences) {
        for (const auto& w : split_ws(s)) {
            auto syms = Vocabulary::word_symbols(w);
            for (size_t i = 0; i + 1 < syms.size(); ++i) ++counts[{syms[i], syms[i + 1]}];
        }
    }
    return counts;
}

}  // namespace

TEST_CASE("first merge is the most frequent pair of the tiny corpus") {
    std::vector<std::string> corpus = {"abab", "abab", "abcd"};
    auto pairs = count_pairs(corpus);
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
        if (it->second > best->second) best = it;
    CHECK(best->first == std::pair<std::string, std::string>{"a", "b"});
    CHECK(best->second == 5);

    Vocabulary v = Vocabulary::learn({corpus}, 1, {"l1", "l2"});
    REQUIRE(v.merges.size() == 1);
    CHECK(v.merges[0] == best->first);
}

TEST_CASE("zero merges gives a character-level vocabulary") {
    Vocabulary v = Vocabulary::learn({{"abc ab"}}, 0, {"l1", "l2"});
    CHECK(v.merges.empty());
    // specials + {a, b, c, </w>}
    CHECK(v.size() == Vocabulary::special_tokens().size() + 4);
}

TEST_CASE("specials occupy the lowest ids in fixed order") {
    Vocabulary v = Vocabulary::learn({{"xy"}}, 2, {"l1", "l2"});
    CHECK(v.id_to_token[Vocabulary::kPad] == "<pad>");
    CHECK(v.id_to_token[Vocabulary::kBos] == "<s>");
    CHECK(v.id_to_token[Vocabulary::kEos] == "</s>");
    CHECK(v.id_to_token[Vocabulary::kUnk] == "<unk>");
    CHECK(v.id_to_token[Vocabulary::kMask] == "<mask>");
    for (const auto& [tok, id] : v.token_to_id) CHECK(v.id_to_token[id] == tok);
}

TEST_CASE("one shared vocabulary encodes both languages") {
    std::vector<std::string> l1 = {"baka tomu", "tomu baka"};
    std::vector<std::string> l2 = {"xevi wolo", "wolo xevi"};
    Vocabulary v = Vocabulary::learn({l1, l2}, 32, {"l1", "l2"});
    for (const auto& s : l1) CHECK(v.decode(v.encode(s, "l1")) == s);
    for (const auto& s : l2) CHECK(v.decode(v.encode(s, "l2")) == s);
    CHECK_THROWS_AS(v.encode("baka", "fr"), ConfigError);
}

TEST_CASE("merge application follows the learned order") {
    Vocabulary v = Vocabulary::learn({{"abab", "abab", "abcd"}}, 1, {"l1", "l2"});
    // after merging (a,b) -> "ab": "abab" becomes [ab, ab, </w>]
    auto ids = v.encode("abab", "l1");
    std::vector<std::string> toks;
    for (int id : ids) toks.push_back(v.id_to_token[id]);
    CHECK(toks == std::vector<std::string>{"<s>", "ab", "ab", "</w>", "</s>"});
}

TEST_CASE("encode wraps BOS/EOS and maps unknown symbols to UNK") {
    Vocabulary v = Vocabulary::learn({{"ab"}}, 0, {"l1", "l2"});
    auto ids = v.encode("ab", "l1");
    CHECK(ids.front() == Vocabulary::kBos);
    CHECK(ids.back() == Vocabulary::kEos);

    auto with_unk = v.encode("aq", "l1");
    CHECK(std::count(with_unk.begin(), with_unk.end(), Vocabulary::kUnk) == 1);
    CHECK(v.decode(with_unk) == "a<unk>");
}

TEST_CASE("decode edge cases") {
    Vocabulary v = Vocabulary::learn({{"ab"}}, 0, {"l1", "l2"});
    CHECK(v.decode({}) == "");
    CHECK(v.decode({Vocabulary::kBos, Vocabulary::kEos}) == "");
    CHECK_THROWS_AS(v.decode({int(v.size())}), IndexError);
}

TEST_CASE("round-trip over random base-alphabet sentences") {
    Rng rng(2024);
    const std::string alphabet = "abcdefgh";
    std::vector<std::string> corpus;
    for (int i = 0; i < 60; ++i) {
        std::vector<std::string> words(1 + rng.index(6));
        for (auto& w : words) {
            w.resize(1 + rng.index(5));
            for (auto& c : w) c = alphabet[rng.index(alphabet.size())];
        }
        corpus.push_back(join(words, " "));
    }
    Vocabulary v = Vocabulary::learn({corpus}, 50, {"l1", "l2"});
    for (int i = 0; i < 200; ++i) {
        std::vector<std::string> words(1 + rng.index(7));
        for (auto& w : words) {
            w.resize(1 + rng.index(6));
            for (auto& c : w) c = alphabet[rng.index(alphabet.size())];
        }
        std::string s = join(words, " ");
        CHECK(v.decode(v.encode(s, "l1")) == s);
    }
}

TEST_CASE("learning is deterministic and vocabulary size is accounted for") {
    std::vector<std::string> corpus = {"foo bar baz", "bar bar foo", "qux baz"};
    Vocabulary a = Vocabulary::learn({corpus}, 20, {"l1", "l2"});
    Vocabulary b = Vocabulary::learn({corpus}, 20, {"l1", "l2"});
    CHECK(a.merges == b.merges);
    CHECK(a.id_to_token == b.id_to_token);

    // size = specials + base symbols + successful merges
    std::set<std::string> base;
    for (const auto& s : corpus)
        for (const auto& w : split_ws(s))
            for (const auto& sym : Vocabulary::word_symbols(w)) base.insert(sym);
    CHECK(a.size() == Vocabulary::special_tokens().size() + base.size() + a.merges.size());
}

TEST_CASE("empty corpora are rejected") {
    CHECK_THROWS_AS(Vocabulary::learn({}, 4, {"l1", "l2"}), ConfigError);
    CHECK_THROWS_AS(Vocabulary::learn({{}}, 4, {"l1", "l2"}), ConfigError);
}

TEST_CASE("vocabulary file round-trips bit-exactly") {
    Vocabulary v = Vocabulary::learn({{"hello world", "world hello there"}}, 24, {"l1", "l2"});
    std::string path = (std::filesystem::temp_directory_path() / "damt_vocab_test.txt").string();
    v.save(path);
    Vocabulary w = Vocabulary::load(path);
    CHECK(w.serialize() == v.serialize());
    CHECK(w.merges == v.merges);
    CHECK(w.id_to_token == v.id_to_token);
    CHECK(w.lang_names == v.lang_names);
    CHECK(w.lang_id("l2") == 1);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(Vocabulary::deserialize("not a vocab\n"), FormatError);
}
