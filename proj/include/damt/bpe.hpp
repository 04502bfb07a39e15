#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "damt/common.hpp"

namespace damt {

namespace detail {

// Split a UTF-8 string into codepoint substrings. Corpora are expected to be
// clean UTF-8; stray continuation bytes are kept as single-byte symbols.
inline std::vector<std::string> split_codepoints(const std::string& word) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < word.size()) {
        unsigned char c = word[i];
        size_t len = 1;
        if ((c & 0xE0) == 0xC0)
            len = 2;
        else if ((c & 0xF0) == 0xE0)
            len = 3;
        else if ((c & 0xF8) == 0xF0)
            len = 4;
        if (i + len > word.size()) len = 1;
        out.push_back(word.substr(i, len));
        i += len;
    }
    return out;
}

}  // namespace detail

// Shared subword vocabulary: merge rules learned once over the concatenation
// of both languages' corpora, then applied identically to every language.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kMask = 4;
    static constexpr const char* kEow = "</w>";

    std::vector<std::pair<std::string, std::string>> merges;
    std::vector<std::string> id_to_token;  // specials first, then base symbols, then merges
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> lang_names;

    size_t size() const { return id_to_token.size(); }

    int lang_id(const std::string& name) const {
        for (size_t i = 0; i < lang_names.size(); ++i)
            if (lang_names[i] == name) return int(i);
        throw ConfigError("unknown language '" + name + "'");
    }

    int id_of(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }

    static const std::vector<std::string>& special_tokens() {
        static const std::vector<std::string> s = {"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
        return s;
    }

    // Word as initial symbol sequence: codepoints followed by the end-of-word
    // marker as its own symbol.
    static std::vector<std::string> word_symbols(const std::string& word) {
        std::vector<std::string> syms = detail::split_codepoints(word);
        syms.push_back(kEow);
        return syms;
    }

    std::vector<int> encode(const std::string& text, const std::string& lang) const {
        lang_id(lang);  // validates
        std::vector<int> out;
        out.push_back(kBos);
        for (const std::string& word : split_ws(text)) encode_word(word, out);
        out.push_back(kEos);
        return out;
    }

    // Batch encoding with a per-call word cache; the vocabulary itself stays
    // immutable so concurrent callers are safe.
    std::vector<std::vector<int>> encode_batch(const std::vector<std::string>& sentences,
                                               const std::string& lang) const {
        lang_id(lang);
        std::unordered_map<std::string, std::vector<int>> cache;
        std::vector<std::vector<int>> out;
        out.reserve(sentences.size());
        for (const auto& s : sentences) {
            std::vector<int> ids;
            ids.push_back(kBos);
            for (const std::string& word : split_ws(s)) {
                auto it = cache.find(word);
                if (it == cache.end()) {
                    std::vector<int> wids;
                    encode_word(word, wids);
                    it = cache.emplace(word, std::move(wids)).first;
                }
                ids.insert(ids.end(), it->second.begin(), it->second.end());
            }
            ids.push_back(kEos);
            out.push_back(std::move(ids));
        }
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string flat;
        for (int id : ids) {
            if (id < 0 || size_t(id) >= id_to_token.size())
                throw IndexError("decode: token id " + std::to_string(id) +
                                 " out of range for vocabulary of " +
                                 std::to_string(id_to_token.size()));
            if (id == kPad || id == kBos || id == kEos) continue;
            flat += id_to_token[id];
        }
        // end-of-word markers become word boundaries
        std::string out;
        size_t i = 0;
        const std::string eow = kEow;
        while (i < flat.size()) {
            if (flat.compare(i, eow.size(), eow) == 0) {
                out += ' ';
                i += eow.size();
            } else {
                out += flat[i++];
            }
        }
        return trim(out);
    }

    // Greedy most-frequent-pair merging over word-internal symbol sequences.
    // Ties break to the lexicographically smallest pair so merge lists are
    // reproducible.
    static Vocabulary learn(const std::vector<std::vector<std::string>>& corpora,
                            size_t num_merges, std::vector<std::string> langs) {
        if (corpora.empty()) throw ConfigError("learn_bpe: no corpora given");
        bool any = false;
        for (const auto& c : corpora)
            if (!c.empty()) any = true;
        if (!any) throw ConfigError("learn_bpe: all corpora are empty");

        std::map<std::string, size_t> word_freq;
        for (const auto& corpus : corpora)
            for (const auto& sentence : corpus)
                for (const auto& w : split_ws(sentence)) ++word_freq[w];

        std::vector<std::vector<std::string>> words;
        std::vector<size_t> freqs;
        std::map<std::string, bool> base_set;
        for (const auto& [w, f] : word_freq) {
            words.push_back(word_symbols(w));
            freqs.push_back(f);
            for (const auto& s : words.back()) base_set[s] = true;
        }

        Vocabulary v;
        v.lang_names = std::move(langs);
        for (const auto& s : special_tokens()) v.push_token(s);
        for (const auto& [s, _] : base_set) v.push_token(s);

        for (size_t iter = 0; iter < num_merges; ++iter) {
            std::map<std::pair<std::string, std::string>, size_t> pair_count;
            for (size_t wi = 0; wi < words.size(); ++wi) {
                const auto& syms = words[wi];
                for (size_t i = 0; i + 1 < syms.size(); ++i)
                    pair_count[{syms[i], syms[i + 1]}] += freqs[wi];
            }
            if (pair_count.empty()) break;
            // std::map iterates keys in lexicographic order, so the first
            // maximal entry is the tie-break winner
            auto best = pair_count.begin();
            for (auto it = pair_count.begin(); it != pair_count.end(); ++it)
                if (it->second > best->second) best = it;
            const auto [left, right] = best->first;
            const std::string merged = left + right;
            v.merges.emplace_back(left, right);
            // distinct pair sequences can produce the same surface form
            if (!v.token_to_id.count(merged)) v.push_token(merged);
            for (auto& syms : words) apply_merge(syms, left, right, merged);
        }
        return v;
    }

    // ---- vocabulary file: header, merge rules, tokens in id order ----------

    std::string serialize() const {
        std::string out = "damt-bpe v1 merges=" + std::to_string(merges.size()) +
                          " tokens=" + std::to_string(id_to_token.size()) +
                          " langs=" + join(lang_names, ",") + "\n";
        for (const auto& [l, r] : merges) out += l + " " + r + "\n";
        for (const auto& t : id_to_token) out += t + "\n";
        return out;
    }

    void save(const std::string& path) const { write_file(path, serialize()); }

    static Vocabulary deserialize(const std::string& text) {
        std::istringstream iss(text);
        std::string header;
        if (!std::getline(iss, header)) throw FormatError("vocabulary file: empty");
        auto fields = split_ws(header);
        if (fields.size() != 5 || fields[0] != "damt-bpe" || fields[1] != "v1")
            throw FormatError("vocabulary file: bad header '" + header + "'");
        auto field_val = [&](size_t i, const std::string& key) {
            if (fields[i].rfind(key + "=", 0) != 0)
                throw FormatError("vocabulary file: expected " + key + "= in header");
            return fields[i].substr(key.size() + 1);
        };
        size_t n_merges = std::stoul(field_val(2, "merges"));
        size_t n_tokens = std::stoul(field_val(3, "tokens"));

        Vocabulary v;
        std::string langs_csv;
        {
            const std::string& f = header;
            size_t pos = f.find("langs=");
            langs_csv = trim(f.substr(pos + 6));
        }
        std::istringstream lss(langs_csv);
        std::string lang;
        while (std::getline(lss, lang, ','))
            if (!lang.empty()) v.lang_names.push_back(lang);

        std::string line;
        for (size_t i = 0; i < n_merges; ++i) {
            if (!std::getline(iss, line)) throw FormatError("vocabulary file: truncated merges");
            auto parts = split_ws(line);
            if (parts.size() != 2) throw FormatError("vocabulary file: bad merge '" + line + "'");
            v.merges.emplace_back(parts[0], parts[1]);
        }
        for (size_t i = 0; i < n_tokens; ++i) {
            if (!std::getline(iss, line)) throw FormatError("vocabulary file: truncated tokens");
            v.push_token(trim(line));
        }
        const auto& sp = special_tokens();
        for (size_t i = 0; i < sp.size(); ++i)
            if (i >= v.id_to_token.size() || v.id_to_token[i] != sp[i])
                throw FormatError("vocabulary file: specials out of order");
        for (const auto& [l, r] : v.merges)
            if (!v.token_to_id.count(l + r))
                throw FormatError("vocabulary file: merge output '" + l + r +
                                  "' missing from token list");
        return v;
    }

    static Vocabulary load(const std::string& path) { return deserialize(read_file(path)); }

  private:
    void push_token(const std::string& t) {
        if (token_to_id.count(t))
            throw FormatError("vocabulary: duplicate token '" + t + "'");
        token_to_id[t] = int(id_to_token.size());
        id_to_token.push_back(t);
    }

    static void apply_merge(std::vector<std::string>& syms, const std::string& left,
                            const std::string& right, const std::string& merged) {
        if (syms.size() < 2) return;
        size_t w = 0;
        for (size_t i = 0; i < syms.size();) {
            if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                syms[w++] = merged;
                i += 2;
            } else {
                if (w != i) syms[w] = std::move(syms[i]);
                ++w;
                ++i;
            }
        }
        syms.resize(w);
    }

    void encode_word(const std::string& word, std::vector<int>& out) const {
        std::vector<std::string> syms = word_symbols(word);
        for (const auto& [l, r] : merges) apply_merge(syms, l, r, l + r);
        for (const auto& s : syms) out.push_back(id_of(s));
    }
};

}  // namespace damt
