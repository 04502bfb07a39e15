#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "damt/common.hpp"
#include "damt/rng.hpp"

namespace damt {

struct NoiseConfig {
    double p_drop = 0.1;
    double p_blank = 0.1;
    size_t window = 3;  // shuffle window k: every displacement stays < k

    void validate() const {
        if (p_drop < 0 || p_drop > 1 || p_blank < 0 || p_blank > 1)
            throw ConfigError("noise: probabilities must lie in [0,1]");
        if (window < 1) throw ConfigError("noise: window must be >= 1");
    }
};

// Word corruption applied to content tokens (no BOS/EOS), in fixed order:
// drop, blank, bounded-displacement shuffle. At least one token survives the
// drop pass. The shuffle samples score_i = i + u_i with u_i uniform on
// [0, window) and stable-sorts by score, which bounds every token's
// displacement below the window size.
inline std::vector<int> corrupt(const NoiseConfig& cfg, const std::vector<int>& ids, Rng& rng,
                                int mask_id) {
    cfg.validate();
    if (ids.empty()) return {};

    std::vector<int> kept;
    kept.reserve(ids.size());
    for (int id : ids)
        if (!rng.bernoulli(cfg.p_drop)) kept.push_back(id);
    if (kept.empty()) kept.push_back(ids[rng.index(ids.size())]);

    for (int& id : kept)
        if (rng.bernoulli(cfg.p_blank)) id = mask_id;

    std::vector<std::pair<double, size_t>> scored(kept.size());
    for (size_t i = 0; i < kept.size(); ++i)
        scored[i] = {double(i) + rng.uniform(0.0, double(cfg.window)), i};
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<int> out(kept.size());
    for (size_t i = 0; i < kept.size(); ++i) out[i] = kept[scored[i].second];
    return out;
}

}  // namespace damt
