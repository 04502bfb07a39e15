#pragma once

#include <array>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "damt/common.hpp"

namespace damt {

struct BleuReport {
    double bleu = 0.0;  // 0..1
    std::array<double, 4> precisions{};
    double brevity_penalty = 1.0;
    size_t hyp_tokens = 0;
    size_t ref_tokens = 0;

    double percent() const { return 100.0 * bleu; }
};

namespace detail {

inline std::unordered_map<std::string, size_t> ngram_counts(
    const std::vector<std::string>& tokens, size_t n) {
    std::unordered_map<std::string, size_t> counts;
    if (tokens.size() < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (size_t j = 1; j < n; ++j) {
            key += '\x1f';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace detail

// Corpus-level BLEU over whitespace tokens: clipped n-gram precisions
// aggregated across the corpus, geometric mean over n = 1..max_n, brevity
// penalty exp(1 - r/c) when c < r. Smoothing rule: an order with zero matches
// gets add-1 smoothing, (m+1)/(t+1), provided some lower order matched;
// orders the hypotheses are too short to populate are dropped from the mean.
// No unigram match anywhere means BLEU = 0.
inline BleuReport corpus_bleu(const std::vector<std::string>& hyps,
                              const std::vector<std::string>& refs, size_t max_n = 4) {
    if (hyps.size() != refs.size() || hyps.empty())
        throw ContractError("corpus_bleu: need equal non-zero sentence counts, got " +
                            std::to_string(hyps.size()) + " hypotheses and " +
                            std::to_string(refs.size()) + " references");
    if (max_n < 1 || max_n > 4) throw ConfigError("corpus_bleu: max_n must lie in [1,4]");

    std::array<size_t, 4> matches{}, totals{};
    size_t hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        const auto h = split_ws(hyps[i]);
        const auto r = split_ws(refs[i]);
        hyp_len += h.size();
        ref_len += r.size();
        for (size_t n = 1; n <= max_n; ++n) {
            if (h.size() < n) continue;
            totals[n - 1] += h.size() - n + 1;
            auto hc = detail::ngram_counts(h, n);
            auto rc = detail::ngram_counts(r, n);
            for (const auto& [gram, count] : hc) {
                auto it = rc.find(gram);
                if (it != rc.end()) matches[n - 1] += std::min(count, it->second);
            }
        }
    }

    BleuReport rep;
    rep.hyp_tokens = hyp_len;
    rep.ref_tokens = ref_len;
    if (hyp_len == 0) {
        rep.brevity_penalty = 0.0;
        return rep;
    }
    rep.brevity_penalty =
        hyp_len < ref_len ? std::exp(1.0 - double(ref_len) / double(hyp_len)) : 1.0;

    bool lower_matched = false;
    double log_sum = 0.0;
    size_t orders = 0;
    for (size_t n = 1; n <= max_n; ++n) {
        const size_t m = matches[n - 1], t = totals[n - 1];
        if (t == 0) continue;  // corpus has no n-gram slots of this order
        double p;
        if (m > 0) {
            p = double(m) / double(t);
            lower_matched = true;
        } else if (lower_matched) {
            p = 1.0 / double(t + 1);
        } else {
            return rep;  // bleu stays 0
        }
        rep.precisions[n - 1] = p;
        log_sum += std::log(p);
        ++orders;
    }
    if (orders == 0) return rep;
    rep.bleu = rep.brevity_penalty * std::exp(log_sum / double(orders));
    return rep;
}

}  // namespace damt
