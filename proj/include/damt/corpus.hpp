#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "damt/common.hpp"
#include "damt/rng.hpp"

namespace damt {

enum class Direction { s2t, t2s };

inline const char* to_string(Direction d) { return d == Direction::s2t ? "s2t" : "t2s"; }

inline Direction direction_from(const std::string& s) {
    if (s == "s2t") return Direction::s2t;
    if (s == "t2s") return Direction::t2s;
    throw ConfigError("unknown direction '" + s + "'");
}

struct ParallelCorpus {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string domain;
    std::string lang1 = "l1";
    std::string lang2 = "l2";

    void validate() const {
        for (size_t i = 0; i < pairs.size(); ++i)
            if (pairs[i].first.empty() || pairs[i].second.empty())
                throw ContractError("parallel corpus '" + domain + "': empty side at pair " +
                                    std::to_string(i));
    }
};

struct MonolingualCorpus {
    std::vector<std::string> sentences;
    std::string domain;
    std::string lang;
};

// ---- corpus files: one sentence per line; parallel corpora are aligned
// ---- .l1/.l2 files ----------------------------------------------------------

inline void save_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    write_file(path, out);
}

inline MonolingualCorpus load_mono(const std::string& path, std::string domain,
                                   std::string lang) {
    MonolingualCorpus c;
    c.sentences = read_lines(path);
    while (!c.sentences.empty() && c.sentences.back().empty()) c.sentences.pop_back();
    c.domain = std::move(domain);
    c.lang = std::move(lang);
    return c;
}

inline void save_parallel(const ParallelCorpus& c, const std::string& prefix) {
    std::vector<std::string> l1, l2;
    l1.reserve(c.pairs.size());
    l2.reserve(c.pairs.size());
    for (const auto& [a, b] : c.pairs) {
        l1.push_back(a);
        l2.push_back(b);
    }
    save_lines(prefix + ".l1", l1);
    save_lines(prefix + ".l2", l2);
}

inline ParallelCorpus load_parallel(const std::string& prefix, std::string domain) {
    auto l1 = read_lines(prefix + ".l1");
    auto l2 = read_lines(prefix + ".l2");
    while (!l1.empty() && l1.back().empty()) l1.pop_back();
    while (!l2.empty() && l2.back().empty()) l2.pop_back();
    if (l1.size() != l2.size())
        throw FormatError("parallel corpus '" + prefix + "': side lengths differ (" +
                          std::to_string(l1.size()) + " vs " + std::to_string(l2.size()) + ")");
    ParallelCorpus c;
    c.domain = std::move(domain);
    for (size_t i = 0; i < l1.size(); ++i) {
        if (l1[i].empty() || l2[i].empty())
            throw FormatError("parallel corpus '" + prefix + "': empty sentence at line " +
                              std::to_string(i + 1));
        c.pairs.emplace_back(l1[i], l2[i]);
    }
    return c;
}

// ---- non-parallel construction and resampling -------------------------------

// Shuffle the pairs, then take source sides from the first half and target
// sides from the second half, so the two monolingual corpora share no pair.
// Odd sizes put the extra pair in the L1 half.
inline std::pair<MonolingualCorpus, MonolingualCorpus> make_nonparallel(const ParallelCorpus& p,
                                                                        uint64_t seed) {
    if (p.pairs.size() < 2)
        throw ConfigError("make_nonparallel: need at least 2 pairs, got " +
                          std::to_string(p.pairs.size()));
    std::vector<size_t> idx(p.pairs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);

    const size_t first_half = (p.pairs.size() + 1) / 2;
    MonolingualCorpus a, b;
    a.domain = b.domain = p.domain;
    a.lang = p.lang1;
    b.lang = p.lang2;
    for (size_t i = 0; i < first_half; ++i) a.sentences.push_back(p.pairs[idx[i]].first);
    for (size_t i = first_half; i < idx.size(); ++i)
        b.sentences.push_back(p.pairs[idx[i]].second);
    return {std::move(a), std::move(b)};
}

// Whole-corpus replication then truncation to exactly target_size.
inline MonolingualCorpus upsample(const MonolingualCorpus& c, size_t target_size) {
    if (target_size < c.sentences.size())
        throw ContractError("upsample: target " + std::to_string(target_size) +
                            " below corpus size " + std::to_string(c.sentences.size()) +
                            " (use subsample)");
    MonolingualCorpus out;
    out.domain = c.domain;
    out.lang = c.lang;
    out.sentences.reserve(target_size);
    for (size_t i = 0; i < target_size; ++i)
        out.sentences.push_back(c.sentences[i % c.sentences.size()]);
    return out;
}

// Seeded uniform sample without replacement, size round(fraction * n),
// original order preserved.
inline ParallelCorpus subsample(const ParallelCorpus& p, double fraction, uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("subsample: fraction must lie in (0, 1], got " +
                          std::to_string(fraction));
    size_t take = size_t(std::llround(fraction * double(p.pairs.size())));
    std::vector<size_t> idx(p.pairs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
    ParallelCorpus out;
    out.domain = p.domain;
    out.lang1 = p.lang1;
    out.lang2 = p.lang2;
    for (size_t i : idx) out.pairs.push_back(p.pairs[i]);
    return out;
}

// ---- synthetic benchmark -----------------------------------------------------

struct DomainProfile {
    std::vector<size_t> types;    // indices into the lexicon
    std::vector<double> weights;  // normalized marginal distribution
    std::vector<double> cdf;
    // Topical co-occurrence: sentences draw most words from one topic's type
    // subset, which gives word types a distributional fingerprint beyond
    // their marginal frequency.
    std::vector<std::vector<size_t>> topic_members;  // positions into `types`
    std::vector<std::vector<double>> topic_cdf;      // per topic, over members
    std::vector<double> topic_weight_cdf;            // over topics
    double topic_leak = 0.0;  // chance a word ignores the sentence topic
    // Collocations: each type has a fixed successor inside its topic (a
    // global cycle restricted to the domain), followed with probability
    // `follow`. Gives individual types a bigram fingerprint.
    std::vector<size_t> next_pos;  // position -> successor position
    double follow = 0.0;
};

// Two constructed languages over a shared lexicon of word types: L1 and L2
// surfaces are a bijection by type index, a fraction of types (digit-like
// anchors) is spelled identically in both, and the reference translation
// applies the substitution followed by a window-w block reversal. The
// reversal is self-inverse, which gives an exact round-trip oracle.
struct SyntheticTaskSpec {
    std::vector<std::string> l1_words, l2_words;
    std::unordered_map<std::string, size_t> l1_index, l2_index;
    std::map<std::string, DomainProfile> domains;
    size_t min_len = 3, max_len = 7;
    size_t window = 2;
    uint64_t seed = 1;

    void validate() const {
        if (l1_words.size() != l2_words.size())
            throw ConfigError("task spec: substitution table is not a bijection");
        std::set<std::string> a(l1_words.begin(), l1_words.end());
        std::set<std::string> b(l2_words.begin(), l2_words.end());
        if (a.size() != l1_words.size() || b.size() != l2_words.size())
            throw ConfigError("task spec: duplicate word surfaces break the bijection");
        if (min_len < 1 || max_len < min_len) throw ConfigError("task spec: bad length range");
        if (window < 1) throw ConfigError("task spec: window must be >= 1");
    }

    const DomainProfile& profile(const std::string& domain) const {
        auto it = domains.find(domain);
        if (it == domains.end()) throw ConfigError("unknown domain '" + domain + "'");
        return it->second;
    }
};

namespace detail {

inline void block_reverse(std::vector<std::string>& words, size_t window) {
    if (window < 2) return;
    for (size_t start = 0; start < words.size(); start += window) {
        size_t end = std::min(start + window, words.size());
        std::reverse(words.begin() + start, words.begin() + end);
    }
}

inline std::string syllable_word(Rng& rng, const std::string& consonants,
                                 const std::string& vowels, size_t n_syllables) {
    std::string w;
    for (size_t i = 0; i < n_syllables; ++i) {
        w += consonants[rng.index(consonants.size())];
        w += vowels[rng.index(vowels.size())];
    }
    return w;
}

}  // namespace detail

inline std::string oracle_translate(const SyntheticTaskSpec& spec, const std::string& sentence,
                                    Direction dir) {
    std::vector<std::string> words = split_ws(sentence);
    if (dir == Direction::s2t) {
        for (auto& w : words) {
            auto it = spec.l1_index.find(w);
            if (it == spec.l1_index.end())
                throw OracleError("oracle: unknown L1 word '" + w + "'");
            w = spec.l2_words[it->second];
        }
        detail::block_reverse(words, spec.window);
    } else {
        detail::block_reverse(words, spec.window);
        for (auto& w : words) {
            auto it = spec.l2_index.find(w);
            if (it == spec.l2_index.end())
                throw OracleError("oracle: unknown L2 word '" + w + "'");
            w = spec.l1_words[it->second];
        }
    }
    return join(words, " ");
}

namespace detail {

inline size_t pick_cdf(const std::vector<double>& cdf, Rng& rng) {
    double u = rng.uniform();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    size_t k = size_t(it - cdf.begin());
    return k >= cdf.size() ? cdf.size() - 1 : k;
}

}  // namespace detail

inline size_t sample_type(const DomainProfile& prof, Rng& rng) {
    return prof.types[detail::pick_cdf(prof.cdf, rng)];
}

inline std::string sample_l1_sentence(const SyntheticTaskSpec& spec, const DomainProfile& prof,
                                      Rng& rng) {
    size_t len = spec.min_len + rng.index(spec.max_len - spec.min_len + 1);
    std::vector<std::string> words(len);
    if (prof.topic_members.empty()) {
        for (auto& w : words) w = spec.l1_words[sample_type(prof, rng)];
        return join(words, " ");
    }
    size_t topic = detail::pick_cdf(prof.topic_weight_cdf, rng);
    size_t prev_pos = prof.types.size();  // none yet
    for (auto& w : words) {
        size_t pos = prev_pos;
        for (int attempt = 0; attempt < 4 && pos == prev_pos; ++attempt) {
            if (prev_pos < prof.types.size() && prof.follow > 0 &&
                rng.bernoulli(prof.follow)) {
                pos = prof.next_pos[prev_pos];
            } else if (rng.bernoulli(prof.topic_leak)) {
                pos = detail::pick_cdf(prof.cdf, rng);
            } else {
                const auto& members = prof.topic_members[topic];
                pos = members[detail::pick_cdf(prof.topic_cdf[topic], rng)];
            }
        }
        w = spec.l1_words[prof.types[pos]];
        prev_pos = pos;
    }
    return join(words, " ");
}

inline ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec,
                                         const std::string& domain, size_t n_sentences,
                                         Rng& rng) {
    const DomainProfile& prof = spec.profile(domain);
    ParallelCorpus out;
    out.domain = domain;
    for (size_t i = 0; i < n_sentences; ++i) {
        std::string l1 = sample_l1_sentence(spec, prof, rng);
        out.pairs.emplace_back(l1, oracle_translate(spec, l1, Direction::s2t));
    }
    return out;
}

// Jensen-Shannon divergence (base 2) between two domains' unigram type
// distributions.
inline double domain_js_divergence(const SyntheticTaskSpec& spec, const std::string& da,
                                   const std::string& db) {
    const DomainProfile& a = spec.profile(da);
    const DomainProfile& b = spec.profile(db);
    std::map<size_t, std::pair<double, double>> dist;
    for (size_t i = 0; i < a.types.size(); ++i) dist[a.types[i]].first += a.weights[i];
    for (size_t i = 0; i < b.types.size(); ++i) dist[b.types[i]].second += b.weights[i];
    double jsd = 0;
    for (const auto& [_, pq] : dist) {
        double p = pq.first, q = pq.second, m = 0.5 * (p + q);
        if (p > 0) jsd += 0.5 * p * std::log2(p / m);
        if (q > 0) jsd += 0.5 * q * std::log2(q / m);
    }
    return jsd;
}

// Materialize a task from generator parameters (flat key=value file).
inline SyntheticTaskSpec make_task_spec(const KvFile& params) {
    SyntheticTaskSpec spec;
    spec.seed = params.get_uint_or("seed", 1);
    spec.min_len = params.get_uint_or("min_len", 3);
    spec.max_len = params.get_uint_or("max_len", 7);
    spec.window = params.get_uint_or("window", 2);
    const size_t n_types = params.get_uint_or("n_types", 180);
    const double anchor_fraction = params.get_double_or("anchor_fraction", 0.2);
    const size_t domain_size = params.get_uint_or("domain_size", 100);
    const double overlap = params.get_double_or("domain_overlap", 0.2);
    const double zipf_alpha = params.get_double_or("zipf_alpha", 1.1);
    const double general_alpha = params.get_double_or("general_alpha", 0.7);
    const size_t n_topics = params.get_uint_or("n_topics", 12);
    const double topic_leak = params.get_double_or("topic_leak", 0.15);
    const double follow = params.get_double_or("collocation_follow", 0.5);
    if (domain_size > n_types)
        throw ConfigError("task spec: domain_size exceeds n_types");

    Rng rng(spec.seed);
    Rng lex_rng = rng.derive("lexicon");

    // digit-like anchors are spelled identically in both languages
    const size_t n_anchors = size_t(std::llround(anchor_fraction * double(n_types)));
    std::set<std::string> used_l1, used_l2;
    for (size_t i = 0; i < n_anchors; ++i) {
        std::string w = std::to_string(10 + i);
        spec.l1_words.push_back(w);
        spec.l2_words.push_back(w);
        used_l1.insert(w);
        used_l2.insert(w);
    }
    const std::string l1_cons = "bdgklmnprst";
    const std::string l2_cons = "cfhjqvwxz";
    const std::string vowels = "aeiou";
    while (spec.l1_words.size() < n_types) {
        std::string w1, w2;
        do {
            w1 = detail::syllable_word(lex_rng, l1_cons, vowels, 2 + lex_rng.index(2));
        } while (used_l1.count(w1));
        do {
            w2 = detail::syllable_word(lex_rng, l2_cons, vowels, 2 + lex_rng.index(2));
        } while (used_l2.count(w2));
        used_l1.insert(w1);
        used_l2.insert(w2);
        spec.l1_words.push_back(w1);
        spec.l2_words.push_back(w2);
    }
    for (size_t i = 0; i < spec.l1_words.size(); ++i) {
        spec.l1_index[spec.l1_words[i]] = i;
        spec.l2_index[spec.l2_words[i]] = i;
    }

    // Topic assignment is global: the same underlying types cluster the same
    // way in both languages and in every domain.
    std::vector<size_t> type_topic(n_types);
    std::vector<std::vector<size_t>> global_topic_order(std::max<size_t>(1, n_topics));
    {
        std::vector<size_t> order(n_types);
        for (size_t i = 0; i < n_types; ++i) order[i] = i;
        Rng topic_rng = rng.derive("topics");
        topic_rng.shuffle(order);
        for (size_t i = 0; i < n_types; ++i) {
            size_t k = i % global_topic_order.size();
            type_topic[order[i]] = k;
            global_topic_order[k].push_back(order[i]);
        }
    }

    auto make_profile = [&](const std::vector<size_t>& types, double alpha, Rng prof_rng) {
        DomainProfile prof;
        prof.types = types;
        prof_rng.shuffle(prof.types);  // domain-specific frequency ranking
        double z = 0;
        prof.weights.resize(prof.types.size());
        for (size_t r = 0; r < prof.types.size(); ++r) {
            prof.weights[r] = 1.0 / std::pow(double(r + 1), alpha);
            z += prof.weights[r];
        }
        double acc = 0;
        prof.cdf.resize(prof.types.size());
        for (size_t r = 0; r < prof.types.size(); ++r) {
            prof.weights[r] /= z;
            acc += prof.weights[r];
            prof.cdf[r] = acc;
        }
        prof.cdf.back() = 1.0;

        prof.topic_leak = topic_leak;
        prof.topic_members.assign(n_topics, {});
        for (size_t pos = 0; pos < prof.types.size(); ++pos)
            prof.topic_members[type_topic[prof.types[pos]]].push_back(pos);
        std::vector<double> topic_mass;
        std::vector<std::vector<size_t>> members;
        for (auto& m : prof.topic_members) {
            if (m.empty()) continue;  // a domain may miss a topic entirely
            double mass = 0;
            std::vector<double> cdf;
            for (size_t pos : m) mass += prof.weights[pos];
            double acc2 = 0;
            for (size_t pos : m) {
                acc2 += prof.weights[pos] / mass;
                cdf.push_back(acc2);
            }
            cdf.back() = 1.0;
            prof.topic_cdf.push_back(std::move(cdf));
            topic_mass.push_back(mass);
            members.push_back(m);
        }
        prof.topic_members = std::move(members);
        double total = 0;
        for (double m : topic_mass) total += m;
        double acc3 = 0;
        for (double m : topic_mass) {
            acc3 += m / total;
            prof.topic_weight_cdf.push_back(acc3);
        }
        if (!prof.topic_weight_cdf.empty()) prof.topic_weight_cdf.back() = 1.0;

        // successor cycle: the global per-topic order restricted to this
        // domain's types
        prof.follow = follow;
        prof.next_pos.assign(prof.types.size(), 0);
        std::map<size_t, size_t> pos_of;
        for (size_t pos = 0; pos < prof.types.size(); ++pos) pos_of[prof.types[pos]] = pos;
        for (const auto& cycle : global_topic_order) {
            std::vector<size_t> present;
            for (size_t t : cycle)
                if (pos_of.count(t)) present.push_back(pos_of[t]);
            for (size_t j = 0; j < present.size(); ++j)
                prof.next_pos[present[j]] = present[(j + 1) % present.size()];
        }
        return prof;
    };

    // source-domain types, then a target domain overlapping in exactly
    // round(overlap * domain_size) types
    std::vector<size_t> all_types(n_types);
    for (size_t i = 0; i < n_types; ++i) all_types[i] = i;
    Rng pick_rng = rng.derive("domains");
    std::vector<size_t> pool = all_types;
    pick_rng.shuffle(pool);
    std::vector<size_t> src_types(pool.begin(), pool.begin() + domain_size);

    const size_t n_shared = size_t(std::llround(overlap * double(domain_size)));
    std::vector<size_t> shared = src_types;
    pick_rng.shuffle(shared);
    shared.resize(n_shared);
    std::vector<size_t> outside;
    {
        std::set<size_t> in_src(src_types.begin(), src_types.end());
        for (size_t t : all_types)
            if (!in_src.count(t)) outside.push_back(t);
        pick_rng.shuffle(outside);
    }
    if (outside.size() < domain_size - n_shared)
        throw ConfigError("task spec: not enough disjoint types for the requested overlap");
    std::vector<size_t> tgt_types = shared;
    tgt_types.insert(tgt_types.end(), outside.begin(),
                     outside.begin() + (domain_size - n_shared));

    spec.domains["src"] = make_profile(src_types, zipf_alpha, rng.derive("profile-src"));
    spec.domains["tgt"] = make_profile(tgt_types, zipf_alpha, rng.derive("profile-tgt"));
    spec.domains["general"] = make_profile(all_types, general_alpha, rng.derive("profile-gen"));
    spec.validate();
    return spec;
}

// Drawing distinct sentences keeps the train/valid/test splits disjoint by
// construction.
inline ParallelCorpus generate_unique(const SyntheticTaskSpec& spec, const std::string& domain,
                                      size_t n, Rng& rng,
                                      std::unordered_set<std::string>& used) {
    const DomainProfile& prof = spec.profile(domain);
    ParallelCorpus out;
    out.domain = domain;
    size_t attempts = 0;
    while (out.pairs.size() < n) {
        std::string l1 = sample_l1_sentence(spec, prof, rng);
        if (++attempts > 200 * n + 10000)
            throw ContractError("generate_unique: sentence space too small for " + domain);
        if (!used.insert(l1).second) continue;
        out.pairs.emplace_back(l1, oracle_translate(spec, l1, Direction::s2t));
    }
    return out;
}

// Materialize the full two-domain benchmark directory: source-domain parallel
// data, target-domain parallel data with its non-parallel halves, validation
// and test splits, general-domain monolingual corpora for pre-training, and
// extra non-parallel sets for the added-data study. Splits are disjoint per
// domain; a manifest records counts, divergence and the seed.
inline KvFile generate_benchmark(const KvFile& params, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    SyntheticTaskSpec spec = make_task_spec(params);
    const size_t n_src = params.get_uint_or("n_src_pairs", 5000);
    const size_t n_tgt = params.get_uint_or("n_tgt_pairs", 5000);
    const size_t n_valid = params.get_uint_or("n_valid", 400);
    const size_t n_test = params.get_uint_or("n_test", 400);
    const size_t n_general = params.get_uint_or("n_general", 6000);
    const size_t n_extra = params.get_uint_or("n_extra", 2500);

    Rng rng = Rng(spec.seed).derive("benchmark");
    std::unordered_set<std::string> used_src, used_tgt, used_gen;

    auto src_train = generate_unique(spec, "src", n_src, rng, used_src);
    auto tgt_train = generate_unique(spec, "tgt", n_tgt, rng, used_tgt);
    auto valid = generate_unique(spec, "tgt", n_valid, rng, used_tgt);
    auto test = generate_unique(spec, "tgt", n_test, rng, used_tgt);
    auto extra_tgt = generate_unique(spec, "tgt", n_extra, rng, used_tgt);
    auto extra_src = generate_unique(spec, "src", n_extra, rng, used_src);
    auto general = generate_unique(spec, "general", n_general, rng, used_gen);

    save_parallel(src_train, out_dir + "/src_train");
    save_parallel(tgt_train, out_dir + "/tgt_train");
    save_parallel(valid, out_dir + "/valid");
    save_parallel(test, out_dir + "/test");

    auto [xtgt, ytgt] = make_nonparallel(tgt_train, Rng(spec.seed).derive("split-tgt").next());
    save_lines(out_dir + "/tgt_mono.l1", xtgt.sentences);
    save_lines(out_dir + "/tgt_mono.l2", ytgt.sentences);

    auto [gen_l1, gen_l2] = make_nonparallel(general, Rng(spec.seed).derive("split-gen").next());
    save_lines(out_dir + "/general.l1", gen_l1.sentences);
    save_lines(out_dir + "/general.l2", gen_l2.sentences);

    auto [ex_tgt_l1, ex_tgt_l2] =
        make_nonparallel(extra_tgt, Rng(spec.seed).derive("split-extra-tgt").next());
    save_lines(out_dir + "/extra_tgt.l1", ex_tgt_l1.sentences);
    save_lines(out_dir + "/extra_tgt.l2", ex_tgt_l2.sentences);
    auto [ex_src_l1, ex_src_l2] =
        make_nonparallel(extra_src, Rng(spec.seed).derive("split-extra-src").next());
    save_lines(out_dir + "/extra_src.l1", ex_src_l1.sentences);
    save_lines(out_dir + "/extra_src.l2", ex_src_l2.sentences);

    KvFile manifest;
    manifest.set("seed", spec.seed);
    manifest.set("window", uint64_t(spec.window));
    manifest.set("n_types", uint64_t(spec.l1_words.size()));
    manifest.set("jsd.src_tgt", domain_js_divergence(spec, "src", "tgt"));
    manifest.set("jsd.src_general", domain_js_divergence(spec, "src", "general"));
    manifest.set("jsd.tgt_general", domain_js_divergence(spec, "tgt", "general"));
    manifest.set("counts.src_train", uint64_t(src_train.pairs.size()));
    manifest.set("counts.tgt_train", uint64_t(tgt_train.pairs.size()));
    manifest.set("counts.tgt_mono_l1", uint64_t(xtgt.sentences.size()));
    manifest.set("counts.tgt_mono_l2", uint64_t(ytgt.sentences.size()));
    manifest.set("counts.valid", uint64_t(valid.pairs.size()));
    manifest.set("counts.test", uint64_t(test.pairs.size()));
    manifest.set("counts.general_l1", uint64_t(gen_l1.sentences.size()));
    manifest.set("counts.general_l2", uint64_t(gen_l2.sentences.size()));
    manifest.set("counts.extra_tgt", uint64_t(ex_tgt_l1.sentences.size()));
    manifest.set("counts.extra_src", uint64_t(ex_src_l1.sentences.size()));
    const KvFile echo = params;
    for (const auto& [k, v] : echo.entries()) manifest.set("param." + k, v);
    manifest.save(out_dir + "/manifest.kv");

    KvFile task_echo = params;
    task_echo.save(out_dir + "/task.kv");
    return manifest;
}

}  // namespace damt
