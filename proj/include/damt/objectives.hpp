#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "damt/bpe.hpp"
#include "damt/corpus.hpp"
#include "damt/model.hpp"
#include "damt/noise.hpp"
#include "damt/tensor.hpp"

namespace damt {

// Sentences are carried as content token ids; wrapping happens at the loss
// boundary.
inline std::vector<int> wrap_ids(const std::vector<int>& content) {
    std::vector<int> out;
    out.reserve(content.size() + 2);
    out.push_back(Vocabulary::kBos);
    out.insert(out.end(), content.begin(), content.end());
    out.push_back(Vocabulary::kEos);
    return out;
}

inline std::vector<int> strip_wrap(const std::vector<int>& wrapped) {
    if (wrapped.size() < 2 || wrapped.front() != Vocabulary::kBos ||
        wrapped.back() != Vocabulary::kEos)
        throw ContractError("strip_wrap: sequence is not BOS ... EOS");
    return std::vector<int>(wrapped.begin() + 1, wrapped.end() - 1);
}

namespace detail {

// Teacher-forced reconstruction term: encoder sees `enc_content` wrapped,
// decoder reproduces `dec_content`. Returns the per-token mean cross-entropy.
template <class S>
Tensor<S> seq2seq_term(const Seq2SeqModel<S>& m,
                       const std::vector<const std::vector<int>*>& enc_content,
                       const std::vector<const std::vector<int>*>& dec_content, int enc_lang,
                       int dec_lang, bool train, Rng* drop_rng) {
    TokenBatch enc, dec;
    std::vector<int> targets;
    for (size_t i = 0; i < enc_content.size(); ++i) {
        enc.add(wrap_ids(*enc_content[i]), enc_lang);
        std::vector<int> dec_in;
        dec_in.reserve(dec_content[i]->size() + 1);
        dec_in.push_back(Vocabulary::kBos);
        dec_in.insert(dec_in.end(), dec_content[i]->begin(), dec_content[i]->end());
        dec.add(dec_in, dec_lang);
        targets.insert(targets.end(), dec_content[i]->begin(), dec_content[i]->end());
        targets.push_back(Vocabulary::kEos);
    }
    return cross_entropy(seq2seq_logits(m, enc, dec, train, drop_rng), targets);
}

}  // namespace detail

// Language modeling via denoising auto-encoding: reconstruct each clean
// sentence from its corruption, s->s plus t->t, both terms per-token means.
// The source-side term can be dropped by the corresponding ablation.
template <class S>
Tensor<S> loss_lm(const Seq2SeqModel<S>& m, const std::vector<std::vector<int>>& xs,
                  const std::vector<std::vector<int>>& ys, const NoiseConfig& noise,
                  Rng& noise_rng, bool src_term = true, bool tgt_term = true,
                  bool train = false, Rng* drop_rng = nullptr) {
    if (!src_term && !tgt_term) throw ContractError("loss_lm: both terms disabled");
    if ((src_term && xs.empty()) || (tgt_term && ys.empty()))
        throw ContractError("loss_lm: empty batch");

    auto dae_term = [&](const std::vector<std::vector<int>>& sents, int lang) {
        std::vector<std::vector<int>> corrupted(sents.size());
        std::vector<const std::vector<int>*> enc, dec;
        for (size_t i = 0; i < sents.size(); ++i) {
            if (sents[i].empty()) throw ContractError("loss_lm: empty sentence in batch");
            corrupted[i] = corrupt(noise, sents[i], noise_rng, Vocabulary::kMask);
            enc.push_back(&corrupted[i]);
            dec.push_back(&sents[i]);
        }
        return detail::seq2seq_term(m, enc, dec, lang, lang, train, drop_rng);
    };

    Tensor<S> total;
    if (src_term) total = dae_term(xs, 0);
    if (tgt_term) {
        Tensor<S> t = dae_term(ys, 1);
        total = total.defined() ? add(total, t) : t;
    }
    return total;
}

// Supervised translation loss, per-token mean in the given direction.
template <class S>
Tensor<S> loss_sup(const Seq2SeqModel<S>& m,
                   const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                   Direction dir, bool train = false, Rng* drop_rng = nullptr) {
    if (pairs.empty()) throw ContractError("loss_sup: empty batch");
    std::vector<const std::vector<int>*> enc, dec;
    for (const auto& [x, y] : pairs) {
        if (x.empty() || y.empty()) throw ContractError("loss_sup: empty sentence in batch");
        enc.push_back(dir == Direction::s2t ? &x : &y);
        dec.push_back(dir == Direction::s2t ? &y : &x);
    }
    int enc_lang = dir == Direction::s2t ? 0 : 1;
    return detail::seq2seq_term(m, enc, dec, enc_lang, 1 - enc_lang, train, drop_rng);
}

// Reconstruction loss over pre-materialized back-translation pairs:
// -log P_t2s(x | y_hat) + -log P_s2t(y | x_hat). Exposed so the stop-gradient
// contract is testable against on-the-fly generation.
template <class S>
Tensor<S> loss_bt_from_pairs(
    const Seq2SeqModel<S>& m,
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& yhat_x,
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& xhat_y,
    bool train = false, Rng* drop_rng = nullptr) {
    if (yhat_x.empty() && xhat_y.empty())
        throw ContractError("loss_bt: no reconstruction pairs");
    Tensor<S> total;
    if (!yhat_x.empty()) {
        std::vector<const std::vector<int>*> enc, dec;
        for (const auto& [yhat, x] : yhat_x) {
            enc.push_back(&yhat);
            dec.push_back(&x);
        }
        total = detail::seq2seq_term(m, enc, dec, 1, 0, train, drop_rng);
    }
    if (!xhat_y.empty()) {
        std::vector<const std::vector<int>*> enc, dec;
        for (const auto& [xhat, y] : xhat_y) {
            enc.push_back(&xhat);
            dec.push_back(&y);
        }
        Tensor<S> t = detail::seq2seq_term(m, enc, dec, 0, 1, train, drop_rng);
        total = total.defined() ? add(total, t) : t;
    }
    return total;
}

struct BtGenerationReport {
    size_t generated = 0;
    size_t skipped = 0;
};

// Iterative back-translation loss: translate each batch on the fly with the
// current model (no gradients flow through generation), then train both
// reconstruction directions on the synthetic pairs. Pairs whose generation
// comes out empty are skipped; a fully skipped batch is a contract error.
template <class S>
Tensor<S> loss_bt(const Seq2SeqModel<S>& m, const std::vector<std::vector<int>>& xs,
                  const std::vector<std::vector<int>>& ys, const std::string& batch_tag,
                  bool train = false, Rng* drop_rng = nullptr,
                  BtGenerationReport* report = nullptr) {
    if (xs.empty() && ys.empty()) throw ContractError("loss_bt: empty batch " + batch_tag);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> yhat_x, xhat_y;
    BtGenerationReport rep;
    auto gen_limit = [&](size_t n) { return 2 * n + 5; };
    for (const auto& x : xs) {
        std::vector<int> yhat = greedy_decode(m, wrap_ids(x), 0, 1, gen_limit(x.size()));
        if (yhat.empty()) {
            ++rep.skipped;
            continue;
        }
        ++rep.generated;
        yhat_x.emplace_back(std::move(yhat), x);
    }
    for (const auto& y : ys) {
        std::vector<int> xhat = greedy_decode(m, wrap_ids(y), 1, 0, gen_limit(y.size()));
        if (xhat.empty()) {
            ++rep.skipped;
            continue;
        }
        ++rep.generated;
        xhat_y.emplace_back(std::move(xhat), y);
    }
    if (report) *report = rep;
    if (yhat_x.empty() && xhat_y.empty())
        throw ContractError("loss_bt: every generated translation was empty in batch " +
                            batch_tag);
    return loss_bt_from_pairs(m, yhat_x, xhat_y, train, drop_rng);
}

// ---- optimizer ----------------------------------------------------------------

struct AdamConfig {
    double lr = 0.0001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables clipping
};

// Standard bias-corrected Adam over a fixed parameter list. Gradients are
// zeroed after every accepted step; a step with non-finite gradients is
// aborted (parameters untouched, gradients cleared) and reported to the
// caller.
template <class S>
class Adam {
  public:
    Adam(const AdamConfig& cfg, const std::vector<Parameter<S>>& params) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.emplace_back(p.tensor.size(), S(0));
            v_.emplace_back(p.tensor.size(), S(0));
        }
    }

    size_t steps() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    bool step(std::vector<Parameter<S>>& params) {
        if (params.size() != m_.size())
            throw ContractError("adam: parameter list changed size");

        double norm_sq = 0;
        bool finite = true;
        for (auto& p : params) {
            for (S g : p.tensor.grad()) {
                if (!std::isfinite(double(g))) finite = false;
                norm_sq += double(g) * double(g);
            }
        }
        if (!finite || !std::isfinite(norm_sq)) {
            zero_grad(params);
            return false;
        }
        double scale = 1.0;
        if (cfg_.clip_norm > 0) {
            double norm = std::sqrt(norm_sq);
            if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
        }

        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& data = params[pi].tensor.data();
            auto& grad = params[pi].tensor.grad();
            auto& mm = m_[pi];
            auto& vv = v_[pi];
            for (size_t i = 0; i < data.size(); ++i) {
                const double g = double(grad[i]) * scale;
                mm[i] = S(cfg_.beta1 * double(mm[i]) + (1.0 - cfg_.beta1) * g);
                vv[i] = S(cfg_.beta2 * double(vv[i]) + (1.0 - cfg_.beta2) * g * g);
                const double mhat = double(mm[i]) / bc1;
                const double vhat = double(vv[i]) / bc2;
                data[i] = S(double(data[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
        zero_grad(params);
        return true;
    }

  private:
    AdamConfig cfg_;
    size_t step_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

}  // namespace damt
