#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "damt/bleu.hpp"
#include "damt/bpe.hpp"
#include "damt/corpus.hpp"
#include "damt/model.hpp"
#include "damt/objectives.hpp"

namespace damt {

inline size_t decode_threads_from_env() {
    const char* env = std::getenv("DAMT_THREADS");
    if (!env) return 1;
    long v = std::atol(env);
    return v < 1 ? 1 : size_t(v);
}

// Greedy-translate a list of sentences. Decoding fans out across threads when
// asked to; results land in input order regardless, so output is independent
// of the thread count.
template <class S>
std::vector<std::string> translate_sentences(const Seq2SeqModel<S>& m, const Vocabulary& vocab,
                                             const std::vector<std::string>& sentences,
                                             Direction dir, size_t n_threads = 1) {
    const std::string src_lang = dir == Direction::s2t ? "l1" : "l2";
    const int src_id = dir == Direction::s2t ? 0 : 1;
    const int tgt_id = 1 - src_id;
    auto encoded = vocab.encode_batch(sentences, src_lang);

    std::vector<std::string> out(sentences.size());
    auto work = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            size_t content = encoded[i].size() - 2;
            auto ids = greedy_decode(m, encoded[i], src_id, tgt_id, 2 * content + 5);
            out[i] = vocab.decode(ids);
        }
    };
    n_threads = std::max<size_t>(1, std::min(n_threads, sentences.size()));
    if (n_threads == 1) {
        work(0, sentences.size());
    } else {
        std::vector<std::thread> pool;
        size_t chunk = (sentences.size() + n_threads - 1) / n_threads;
        for (size_t t = 0; t < n_threads; ++t) {
            size_t begin = t * chunk;
            size_t end = std::min(sentences.size(), begin + chunk);
            if (begin < end) pool.emplace_back(work, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

// Decode every source sentence of the test corpus, detokenize, score against
// the references.
template <class S>
BleuReport evaluate(const Seq2SeqModel<S>& m, const Vocabulary& vocab,
                    const ParallelCorpus& test, Direction dir, size_t n_threads = 1) {
    if (test.pairs.empty()) throw ContractError("evaluate: empty test corpus");
    std::vector<std::string> sources, refs;
    sources.reserve(test.pairs.size());
    refs.reserve(test.pairs.size());
    for (const auto& [l1, l2] : test.pairs) {
        sources.push_back(dir == Direction::s2t ? l1 : l2);
        refs.push_back(dir == Direction::s2t ? l2 : l1);
    }
    auto hyps = translate_sentences(m, vocab, sources, dir, n_threads);
    return corpus_bleu(hyps, refs);
}

}  // namespace damt
