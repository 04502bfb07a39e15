#pragma once

// Brute-force corpus BLEU implementing the same pinned rule as
// damt::corpus_bleu, written independently around sorted n-gram lists.
// Shared between the unit suite and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "damt/common.hpp"

namespace damt::testing {

inline double brute_bleu(const std::vector<std::string>& hyps,
                         const std::vector<std::string>& refs) {
    auto grams = [](const std::vector<std::string>& toks, size_t n) {
        std::vector<std::vector<std::string>> out;
        for (size_t i = 0; i + n <= toks.size(); ++i)
            out.emplace_back(toks.begin() + i, toks.begin() + i + n);
        std::sort(out.begin(), out.end());
        return out;
    };
    double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
    double hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        auto h = split_ws(hyps[i]);
        auto r = split_ws(refs[i]);
        hyp_len += double(h.size());
        ref_len += double(r.size());
        for (size_t n = 1; n <= 4; ++n) {
            auto hg = grams(h, n);
            auto rg = grams(r, n);
            total[n - 1] += double(hg.size());
            size_t a = 0, b = 0;
            while (a < hg.size() && b < rg.size()) {
                if (hg[a] == rg[b]) {
                    match[n - 1] += 1;
                    ++a;
                    ++b;
                } else if (hg[a] < rg[b]) {
                    ++a;
                } else {
                    ++b;
                }
            }
        }
    }
    if (hyp_len == 0) return 0.0;
    double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
    bool lower = false;
    double log_sum = 0;
    size_t orders = 0;
    for (size_t n = 0; n < 4; ++n) {
        if (total[n] == 0) continue;
        double p;
        if (match[n] > 0) {
            p = match[n] / total[n];
            lower = true;
        } else if (lower) {
            p = 1.0 / (total[n] + 1.0);
        } else {
            return 0.0;
        }
        log_sum += std::log(p);
        ++orders;
    }
    if (orders == 0) return 0.0;
    return bp * std::exp(log_sum / double(orders));
}

}  // namespace damt::testing
