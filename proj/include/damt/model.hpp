#pragma once

#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <string>
#include <vector>

#include "damt/bpe.hpp"
#include "damt/common.hpp"
#include "damt/rng.hpp"
#include "damt/tensor.hpp"

namespace damt {

struct ModelConfig {
    size_t n_layers = 2;
    size_t n_heads = 4;
    size_t d_model = 64;
    size_t d_ff = 256;
    size_t max_len = 64;
    size_t vocab_size = 0;
    size_t n_langs = 2;
    double dropout = 0.1;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("model: d_model must be a positive multiple of n_heads");
        if (vocab_size < 5) throw ConfigError("model: vocab_size must cover the specials");
        if (n_langs == 0 || n_layers == 0 || d_ff == 0 || max_len == 0)
            throw ConfigError("model: zero-sized dimension");
        if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must lie in [0,1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

// One packed batch: several token blocks laid out back to back, each with its
// own language id. Attention masks keep the blocks independent, so no padding
// is ever needed.
struct TokenBatch {
    std::vector<int> ids;
    std::vector<size_t> offsets{0};
    std::vector<int> langs;

    void add(const std::vector<int>& sentence, int lang) {
        ids.insert(ids.end(), sentence.begin(), sentence.end());
        offsets.push_back(ids.size());
        langs.push_back(lang);
    }
    size_t blocks() const { return langs.size(); }
    size_t rows() const { return ids.size(); }
    size_t block_len(size_t b) const { return offsets[b + 1] - offsets[b]; }
    bool empty() const { return ids.empty(); }
};

template <class S>
struct AttentionParams {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class S>
struct LayerParams {
    Tensor<S> ln1_gain, ln1_bias;
    AttentionParams<S> self_attn;
    bool has_cross = false;
    Tensor<S> cross_ln_gain, cross_ln_bias;
    AttentionParams<S> cross_attn;
    Tensor<S> ln2_gain, ln2_bias;
    Tensor<S> ff_w1, ff_b1, ff_w2, ff_b2;
};

// Shared-parameter Transformer encoder-decoder. One parameter set serves both
// translation directions and both language-modeling directions; language
// embeddings select what the stacks operate on. The output projection is the
// transposed token embedding (no separate matrix).
template <class S>
struct Seq2SeqModel {
    ModelConfig cfg;
    Tensor<S> tok_emb, pos_emb, lang_emb;
    std::vector<LayerParams<S>> encoder, decoder;
    Tensor<S> enc_norm_gain, enc_norm_bias;
    Tensor<S> dec_norm_gain, dec_norm_bias;

    static Seq2SeqModel create(const ModelConfig& cfg) {
        cfg.validate();
        Seq2SeqModel m;
        m.cfg = cfg;
        auto mat = [](size_t r, size_t c) { return Tensor<S>::zeros({r, c}, true); };
        auto vec = [](size_t n) { return Tensor<S>::zeros({n}, true); };
        m.tok_emb = mat(cfg.vocab_size, cfg.d_model);
        m.pos_emb = mat(cfg.max_len, cfg.d_model);
        m.lang_emb = mat(cfg.n_langs, cfg.d_model);
        auto make_layer = [&](bool cross) {
            LayerParams<S> l;
            l.ln1_gain = vec(cfg.d_model);
            l.ln1_bias = vec(cfg.d_model);
            auto attn = [&] {
                AttentionParams<S> a;
                a.wq = mat(cfg.d_model, cfg.d_model);
                a.bq = vec(cfg.d_model);
                a.wk = mat(cfg.d_model, cfg.d_model);
                a.bk = vec(cfg.d_model);
                a.wv = mat(cfg.d_model, cfg.d_model);
                a.bv = vec(cfg.d_model);
                a.wo = mat(cfg.d_model, cfg.d_model);
                a.bo = vec(cfg.d_model);
                return a;
            };
            l.self_attn = attn();
            l.has_cross = cross;
            if (cross) {
                l.cross_ln_gain = vec(cfg.d_model);
                l.cross_ln_bias = vec(cfg.d_model);
                l.cross_attn = attn();
            }
            l.ln2_gain = vec(cfg.d_model);
            l.ln2_bias = vec(cfg.d_model);
            l.ff_w1 = mat(cfg.d_model, cfg.d_ff);
            l.ff_b1 = vec(cfg.d_ff);
            l.ff_w2 = mat(cfg.d_ff, cfg.d_model);
            l.ff_b2 = vec(cfg.d_model);
            return l;
        };
        for (size_t i = 0; i < cfg.n_layers; ++i) m.encoder.push_back(make_layer(false));
        for (size_t i = 0; i < cfg.n_layers; ++i) m.decoder.push_back(make_layer(true));
        m.enc_norm_gain = vec(cfg.d_model);
        m.enc_norm_bias = vec(cfg.d_model);
        m.dec_norm_gain = vec(cfg.d_model);
        m.dec_norm_bias = vec(cfg.d_model);
        return m;
    }

    // Fresh initialization: uniform(-0.02, 0.02) for matrices, zeros for
    // biases and norm offsets, ones for norm gains.
    void init(Rng& rng) {
        for (auto& p : parameters()) {
            bool is_gain = p.name.ends_with("gain");
            bool is_bias = p.name.ends_with("bias") || p.name.ends_with(".bq") ||
                           p.name.ends_with(".bk") || p.name.ends_with(".bv") ||
                           p.name.ends_with(".bo") || p.name.ends_with(".b1") ||
                           p.name.ends_with(".b2");
            for (auto& v : p.tensor.data())
                v = is_gain ? S(1) : is_bias ? S(0) : S(rng.uniform(-0.02, 0.02));
        }
    }

    std::vector<Parameter<S>> parameters() const {
        std::vector<Parameter<S>> out;
        auto push = [&](const std::string& name, const Tensor<S>& t) {
            out.push_back({name, t});
        };
        push("tok_emb", tok_emb);
        push("pos_emb", pos_emb);
        push("lang_emb", lang_emb);
        auto push_stack = [&](const char* stack, const std::vector<LayerParams<S>>& layers) {
            for (size_t i = 0; i < layers.size(); ++i) {
                std::string base = std::string(stack) + ".layer" + std::to_string(i) + ".";
                const LayerParams<S>& l = layers[i];
                push(base + "ln1.gain", l.ln1_gain);
                push(base + "ln1.bias", l.ln1_bias);
                auto push_attn = [&](const std::string& prefix, const AttentionParams<S>& a) {
                    push(prefix + ".wq", a.wq);
                    push(prefix + ".bq", a.bq);
                    push(prefix + ".wk", a.wk);
                    push(prefix + ".bk", a.bk);
                    push(prefix + ".wv", a.wv);
                    push(prefix + ".bv", a.bv);
                    push(prefix + ".wo", a.wo);
                    push(prefix + ".bo", a.bo);
                };
                push_attn(base + "attn", l.self_attn);
                if (l.has_cross) {
                    push(base + "cross_ln.gain", l.cross_ln_gain);
                    push(base + "cross_ln.bias", l.cross_ln_bias);
                    push_attn(base + "cross", l.cross_attn);
                }
                push(base + "ln2.gain", l.ln2_gain);
                push(base + "ln2.bias", l.ln2_bias);
                push(base + "ffn.w1", l.ff_w1);
                push(base + "ffn.b1", l.ff_b1);
                push(base + "ffn.w2", l.ff_w2);
                push(base + "ffn.b2", l.ff_b2);
            }
        };
        push_stack("encoder", encoder);
        push_stack("decoder", decoder);
        push("encoder.norm.gain", enc_norm_gain);
        push("encoder.norm.bias", enc_norm_bias);
        push("decoder.norm.gain", dec_norm_gain);
        push("decoder.norm.bias", dec_norm_bias);
        return out;
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (auto& p : parameters()) n += p.tensor.size();
        return n;
    }
};

namespace detail {

constexpr double kMaskValue = -1e9;

inline void check_batch(const TokenBatch& batch, const ModelConfig& cfg, const char* who) {
    if (batch.blocks() == 0) throw ContractError(std::string(who) + ": empty batch");
    for (size_t b = 0; b < batch.blocks(); ++b) {
        size_t len = batch.block_len(b);
        if (len == 0) throw ContractError(std::string(who) + ": empty block");
        if (len > cfg.max_len)
            throw DimensionError(std::string(who) + ": sequence length " +
                                 std::to_string(len) + " exceeds max_len " +
                                 std::to_string(cfg.max_len));
        if (batch.langs[b] < 0 || size_t(batch.langs[b]) >= cfg.n_langs)
            throw IndexError(std::string(who) + ": language id out of range");
    }
    for (int id : batch.ids)
        if (id < 0 || size_t(id) >= cfg.vocab_size)
            throw IndexError(std::string(who) + ": token id " + std::to_string(id) +
                             " out of vocabulary");
}

// Additive attention mask. Self masks are block-diagonal (optionally causal
// inside a block); cross masks let decoder block b attend encoder block b.
template <class S>
Tensor<S> block_mask(const TokenBatch& q, const TokenBatch& k, bool causal) {
    size_t Rq = q.rows(), Rk = k.rows();
    Tensor<S> mask = Tensor<S>::full({Rq, Rk}, S(kMaskValue));
    S* pm = mask.data().data();
    if (q.blocks() != k.blocks())
        throw DimensionError("attention mask: query and key batches disagree in block count");
    for (size_t b = 0; b < q.blocks(); ++b) {
        for (size_t i = q.offsets[b]; i < q.offsets[b + 1]; ++i) {
            size_t qpos = i - q.offsets[b];
            for (size_t j = k.offsets[b]; j < k.offsets[b + 1]; ++j) {
                size_t kpos = j - k.offsets[b];
                if (!causal || kpos <= qpos) pm[i * Rk + j] = S(0);
            }
        }
    }
    return mask;
}

template <class S>
Tensor<S> multi_head_attention(const AttentionParams<S>& p, const Tensor<S>& q_in,
                               const Tensor<S>& kv_in, const Tensor<S>& mask,
                               size_t n_heads) {
    const size_t d = q_in.cols();
    const size_t dh = d / n_heads;
    Tensor<S> Q = add_rowwise(matmul(q_in, p.wq), p.bq);
    Tensor<S> K = add_rowwise(matmul(kv_in, p.wk), p.bk);
    Tensor<S> V = add_rowwise(matmul(kv_in, p.wv), p.bv);
    const S inv_sqrt = S(1.0 / std::sqrt(double(dh)));
    std::vector<Tensor<S>> heads;
    heads.reserve(n_heads);
    for (size_t h = 0; h < n_heads; ++h) {
        Tensor<S> qh = slice_cols(Q, h * dh, dh);
        Tensor<S> kh = slice_cols(K, h * dh, dh);
        Tensor<S> vh = slice_cols(V, h * dh, dh);
        Tensor<S> scores = add(scale(matmul_nt(qh, kh), inv_sqrt), mask);
        heads.push_back(matmul(softmax(scores, size_t(1)), vh));
    }
    Tensor<S> ctx = n_heads == 1 ? heads[0] : concat_cols(heads);
    return add_rowwise(matmul(ctx, p.wo), p.bo);
}

}  // namespace detail

// Token + position + language embeddings, summed elementwise. Positions
// restart at 0 inside every block.
template <class S>
Tensor<S> embed_batch(const Seq2SeqModel<S>& m, const TokenBatch& batch) {
    detail::check_batch(batch, m.cfg, "embed");
    std::vector<int> pos_ids(batch.rows()), lang_ids(batch.rows());
    for (size_t b = 0; b < batch.blocks(); ++b) {
        for (size_t i = batch.offsets[b]; i < batch.offsets[b + 1]; ++i) {
            pos_ids[i] = int(i - batch.offsets[b]);
            lang_ids[i] = batch.langs[b];
        }
    }
    return add(add(embedding_rows(m.tok_emb, batch.ids), embedding_rows(m.pos_emb, pos_ids)),
               embedding_rows(m.lang_emb, lang_ids));
}

template <class S>
Tensor<S> embed(const Seq2SeqModel<S>& m, const std::vector<int>& ids, int lang) {
    TokenBatch b;
    b.add(ids, lang);
    return embed_batch(m, b);
}

namespace detail {

// Pre-norm residual sublayers. `memory` may be undefined for a decoder-only
// (causal LM) pass, in which case cross-attention is skipped.
template <class S>
Tensor<S> run_stack(const Seq2SeqModel<S>& m, const std::vector<LayerParams<S>>& layers, Tensor<S> x,
                    const Tensor<S>& self_mask, const Tensor<S>& memory,
                    const Tensor<S>& cross_mask, bool train, Rng* drop_rng) {
    const double p = m.cfg.dropout;
    auto maybe_drop = [&](Tensor<S> t) {
        return (train && drop_rng) ? dropout(t, p, *drop_rng, true) : t;
    };
    for (const auto& l : layers) {
        Tensor<S> h = layer_norm(x, l.ln1_gain, l.ln1_bias);
        x = add(x, maybe_drop(multi_head_attention(l.self_attn, h, h, self_mask,
                                                   m.cfg.n_heads)));
        if (l.has_cross && memory.defined()) {
            Tensor<S> hc = layer_norm(x, l.cross_ln_gain, l.cross_ln_bias);
            x = add(x, maybe_drop(multi_head_attention(l.cross_attn, hc, memory, cross_mask,
                                                       m.cfg.n_heads)));
        }
        Tensor<S> hf = layer_norm(x, l.ln2_gain, l.ln2_bias);
        Tensor<S> ff = add_rowwise(
            matmul(relu(add_rowwise(matmul(hf, l.ff_w1), l.ff_b1)), l.ff_w2), l.ff_b2);
        x = add(x, maybe_drop(ff));
    }
    return x;
}

}  // namespace detail

// Encoder pass over a packed batch; returns the normalized memory.
template <class S>
Tensor<S> encode_batch(const Seq2SeqModel<S>& m, const TokenBatch& src, bool train = false,
                       Rng* drop_rng = nullptr) {
    Tensor<S> x = embed_batch(m, src);
    Tensor<S> mask = detail::block_mask<S>(src, src, false);
    x = detail::run_stack(m, m.encoder, x, mask, Tensor<S>(), Tensor<S>(), train, drop_rng);
    return layer_norm(x, m.enc_norm_gain, m.enc_norm_bias);
}

// Teacher-forced seq2seq logits over packed decoder rows. Decoder blocks pair
// up with encoder blocks one to one.
template <class S>
Tensor<S> seq2seq_logits(const Seq2SeqModel<S>& m, const TokenBatch& src, const TokenBatch& dec_in,
                         bool train = false, Rng* drop_rng = nullptr) {
    detail::check_batch(dec_in, m.cfg, "forward");
    if (src.blocks() != dec_in.blocks())
        throw DimensionError("forward: encoder and decoder block counts differ");
    Tensor<S> memory = encode_batch(m, src, train, drop_rng);
    Tensor<S> x = embed_batch(m, dec_in);
    Tensor<S> self_mask = detail::block_mask<S>(dec_in, dec_in, true);
    Tensor<S> cross_mask = detail::block_mask<S>(dec_in, src, false);
    x = detail::run_stack(m, m.decoder, x, self_mask, memory, cross_mask, train, drop_rng);
    x = layer_norm(x, m.dec_norm_gain, m.dec_norm_bias);
    return matmul_nt(x, m.tok_emb);  // tied output projection
}

// Single-sentence teacher-forced form: logits for each position of tgt_ids.
template <class S>
Tensor<S> forward(const Seq2SeqModel<S>& m, const std::vector<int>& src_ids, int src_lang,
                  const std::vector<int>& tgt_ids, int tgt_lang, bool train = false,
                  Rng* drop_rng = nullptr) {
    TokenBatch src, dec;
    src.add(src_ids, src_lang);
    dec.add(tgt_ids, tgt_lang);
    return seq2seq_logits(m, src, dec, train, drop_rng);
}

// Decoder-only causal language model pass (no cross-attention); used by the
// pre-training phase.
template <class S>
Tensor<S> causal_lm_logits(const Seq2SeqModel<S>& m, const TokenBatch& dec_in, bool train = false,
                           Rng* drop_rng = nullptr) {
    detail::check_batch(dec_in, m.cfg, "causal_lm");
    Tensor<S> x = embed_batch(m, dec_in);
    Tensor<S> self_mask = detail::block_mask<S>(dec_in, dec_in, true);
    x = detail::run_stack(m, m.decoder, x, self_mask, Tensor<S>(), Tensor<S>(), train,
                          drop_rng);
    x = layer_norm(x, m.dec_norm_gain, m.dec_norm_bias);
    return matmul_nt(x, m.tok_emb);
}

// ---- incremental greedy decoding --------------------------------------------

namespace detail {

// Row-level kernels for the cached decode path.
template <class S>
void affine_row(const S* x, const Tensor<S>& w, const Tensor<S>& b, S* out) {
    const size_t in = w.rows(), on = w.cols();
    const S* pw = w.data().data();
    const S* pb = b.data().data();
    for (size_t j = 0; j < on; ++j) out[j] = pb[j];
    for (size_t i = 0; i < in; ++i) {
        const S xi = x[i];
        const S* wr = pw + i * on;
        for (size_t j = 0; j < on; ++j) out[j] += xi * wr[j];
    }
}

template <class S>
void layer_norm_row(const S* x, const Tensor<S>& gain, const Tensor<S>& bias, S* out,
                    size_t C) {
    S mu = 0;
    for (size_t c = 0; c < C; ++c) mu += x[c];
    mu /= S(C);
    S var = 0;
    for (size_t c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= S(C);
    const S istd = S(1) / std::sqrt(var + S(1e-5));
    const S* pg = gain.data().data();
    const S* pb = bias.data().data();
    for (size_t c = 0; c < C; ++c) out[c] = (x[c] - mu) * istd * pg[c] + pb[c];
}

// attention of one query row against cached keys/values, per head
template <class S>
void attend_row(const S* q, const std::vector<S>& keys, const std::vector<S>& values,
                size_t n_rows, size_t d, size_t n_heads, S* out) {
    const size_t dh = d / n_heads;
    const S inv_sqrt = S(1.0 / std::sqrt(double(dh)));
    std::vector<S> scores(n_rows);
    for (size_t h = 0; h < n_heads; ++h) {
        const size_t off = h * dh;
        S mx = std::numeric_limits<S>::lowest();
        for (size_t r = 0; r < n_rows; ++r) {
            S s = 0;
            const S* kr = keys.data() + r * d + off;
            for (size_t c = 0; c < dh; ++c) s += q[off + c] * kr[c];
            scores[r] = s * inv_sqrt;
            mx = std::max(mx, scores[r]);
        }
        S z = 0;
        for (size_t r = 0; r < n_rows; ++r) {
            scores[r] = std::exp(scores[r] - mx);
            z += scores[r];
        }
        const S inv_z = S(1) / z;
        for (size_t c = 0; c < dh; ++c) out[off + c] = 0;
        for (size_t r = 0; r < n_rows; ++r) {
            const S a = scores[r] * inv_z;
            const S* vr = values.data() + r * d + off;
            for (size_t c = 0; c < dh; ++c) out[off + c] += a * vr[c];
        }
    }
}

}  // namespace detail

// Greedy decoding with cached self-attention keys/values and precomputed
// cross-attention memory. Deterministic: argmax ties resolve to the lowest
// token id. Non-EOS specials (PAD, BOS, UNK, MASK) are never emitted, and
// output length is capped so the wrapped result still fits max_len. Returns
// generated content tokens, BOS/EOS excluded.
template <class S>
std::vector<int> greedy_decode(const Seq2SeqModel<S>& m, const std::vector<int>& src_ids,
                               int src_lang, int tgt_lang, size_t max_new) {
    if (max_new < 1) throw ContractError("greedy_decode: max_new must be >= 1");
    max_new = std::min(max_new, m.cfg.max_len - 2);
    NoGradGuard ng;
    const size_t d = m.cfg.d_model;
    const size_t n_layers = m.decoder.size();

    TokenBatch src;
    src.add(src_ids, src_lang);
    Tensor<S> memory = encode_batch(m, src, false, nullptr);
    const size_t n_mem = memory.rows();

    // cross-attention K/V are fixed per layer
    std::vector<std::vector<S>> cross_k(n_layers), cross_v(n_layers);
    for (size_t li = 0; li < n_layers; ++li) {
        const auto& a = m.decoder[li].cross_attn;
        cross_k[li].resize(n_mem * d);
        cross_v[li].resize(n_mem * d);
        for (size_t r = 0; r < n_mem; ++r) {
            detail::affine_row(memory.data().data() + r * d, a.wk, a.bk,
                               cross_k[li].data() + r * d);
            detail::affine_row(memory.data().data() + r * d, a.wv, a.bv,
                               cross_v[li].data() + r * d);
        }
    }

    std::vector<std::vector<S>> self_k(n_layers), self_v(n_layers);
    std::vector<int> out;
    std::vector<S> x(d), h(d), q(d), ctx(d), proj(d), ff1(m.cfg.d_ff), tmp(d);
    int prev = Vocabulary::kBos;
    for (size_t step = 0; step < m.cfg.max_len; ++step) {
        // embedding of the previous token at this position
        const S* te = m.tok_emb.data().data() + size_t(prev) * d;
        const S* pe = m.pos_emb.data().data() + step * d;
        const S* le = m.lang_emb.data().data() + size_t(tgt_lang) * d;
        for (size_t c = 0; c < d; ++c) x[c] = te[c] + pe[c] + le[c];

        for (size_t li = 0; li < n_layers; ++li) {
            auto& l = m.decoder[li];
            // self-attention over the cached prefix
            detail::layer_norm_row(x.data(), l.ln1_gain, l.ln1_bias, h.data(), d);
            detail::affine_row(h.data(), l.self_attn.wq, l.self_attn.bq, q.data());
            const size_t cache_rows = self_k[li].size() / d + 1;
            self_k[li].resize(cache_rows * d);
            self_v[li].resize(cache_rows * d);
            detail::affine_row(h.data(), l.self_attn.wk, l.self_attn.bk,
                               self_k[li].data() + (cache_rows - 1) * d);
            detail::affine_row(h.data(), l.self_attn.wv, l.self_attn.bv,
                               self_v[li].data() + (cache_rows - 1) * d);
            detail::attend_row(q.data(), self_k[li], self_v[li], cache_rows, d,
                               m.cfg.n_heads, ctx.data());
            detail::affine_row(ctx.data(), l.self_attn.wo, l.self_attn.bo, proj.data());
            for (size_t c = 0; c < d; ++c) x[c] += proj[c];

            // cross-attention over the encoder memory
            detail::layer_norm_row(x.data(), l.cross_ln_gain, l.cross_ln_bias, h.data(), d);
            detail::affine_row(h.data(), l.cross_attn.wq, l.cross_attn.bq, q.data());
            detail::attend_row(q.data(), cross_k[li], cross_v[li], n_mem, d, m.cfg.n_heads,
                               ctx.data());
            detail::affine_row(ctx.data(), l.cross_attn.wo, l.cross_attn.bo, proj.data());
            for (size_t c = 0; c < d; ++c) x[c] += proj[c];

            // feed-forward
            detail::layer_norm_row(x.data(), l.ln2_gain, l.ln2_bias, h.data(), d);
            detail::affine_row(h.data(), l.ff_w1, l.ff_b1, ff1.data());
            for (auto& v : ff1) v = v > S(0) ? v : S(0);
            detail::affine_row(ff1.data(), l.ff_w2, l.ff_b2, tmp.data());
            for (size_t c = 0; c < d; ++c) x[c] += tmp[c];
        }
        detail::layer_norm_row(x.data(), m.dec_norm_gain, m.dec_norm_bias, h.data(), d);

        // tied projection + argmax, lowest id wins ties
        int best = Vocabulary::kEos;
        S best_logit = std::numeric_limits<S>::lowest();
        const S* pe_tok = m.tok_emb.data().data();
        for (size_t t = 0; t < m.cfg.vocab_size; ++t) {
            if (t == Vocabulary::kPad || t == Vocabulary::kBos || t == Vocabulary::kUnk ||
                t == Vocabulary::kMask)
                continue;
            S logit = 0;
            const S* er = pe_tok + t * d;
            for (size_t c = 0; c < d; ++c) logit += h[c] * er[c];
            if (logit > best_logit) {
                best_logit = logit;
                best = int(t);
            }
        }
        if (best == Vocabulary::kEos) break;
        out.push_back(best);
        prev = best;
        if (out.size() >= max_new) break;
    }
    return out;
}

// ---- checkpoints -------------------------------------------------------------

// Binary format: magic, version, config key=value entries, then per-parameter
// records (name, shape, raw float32 little-endian values). float32 models
// round-trip bitwise.
namespace detail {

constexpr char kCkptMagic[8] = {'D', 'A', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("checkpoint: truncated");
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw FormatError("checkpoint: truncated");
    return v;
}
inline std::string read_str(std::istream& is) {
    uint32_t n = read_u32(is);
    if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw FormatError("checkpoint: truncated");
    return s;
}

inline KvFile config_kv(const ModelConfig& cfg) {
    KvFile kv;
    kv.set("n_layers", uint64_t(cfg.n_layers));
    kv.set("n_heads", uint64_t(cfg.n_heads));
    kv.set("d_model", uint64_t(cfg.d_model));
    kv.set("d_ff", uint64_t(cfg.d_ff));
    kv.set("max_len", uint64_t(cfg.max_len));
    kv.set("vocab_size", uint64_t(cfg.vocab_size));
    kv.set("n_langs", uint64_t(cfg.n_langs));
    kv.set("dropout", cfg.dropout);
    return kv;
}

inline ModelConfig config_from_kv(const KvFile& kv) {
    ModelConfig cfg;
    cfg.n_layers = kv.get_uint("n_layers");
    cfg.n_heads = kv.get_uint("n_heads");
    cfg.d_model = kv.get_uint("d_model");
    cfg.d_ff = kv.get_uint("d_ff");
    cfg.max_len = kv.get_uint("max_len");
    cfg.vocab_size = kv.get_uint("vocab_size");
    cfg.n_langs = kv.get_uint("n_langs");
    cfg.dropout = kv.get_double("dropout");
    return cfg;
}

}  // namespace detail

template <class S>
void save_checkpoint(const Seq2SeqModel<S>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write checkpoint: " + path);
    os.write(detail::kCkptMagic, 8);
    detail::write_u32(os, detail::kCkptVersion);
    auto kv = detail::config_kv(m.cfg);
    detail::write_u32(os, uint32_t(kv.entries().size()));
    for (const auto& [k, v] : kv.entries()) {
        detail::write_str(os, k);
        detail::write_str(os, v);
    }
    auto params = m.parameters();
    detail::write_u32(os, uint32_t(params.size()));
    for (auto& p : params) {
        detail::write_str(os, p.name);
        detail::write_u32(os, uint32_t(p.tensor.shape().size()));
        for (size_t dim : p.tensor.shape()) detail::write_u64(os, dim);
        std::vector<float> raw(p.tensor.size());
        for (size_t i = 0; i < raw.size(); ++i) raw[i] = float(p.tensor.data()[i]);
        os.write(reinterpret_cast<const char*>(raw.data()),
                 std::streamsize(raw.size() * sizeof(float)));
    }
    if (!os) throw ConfigError("checkpoint write failed: " + path);
}

template <class S>
Seq2SeqModel<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_u32(is);
    if (version != detail::kCkptVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    uint32_t n_cfg = detail::read_u32(is);
    KvFile kv;
    for (uint32_t i = 0; i < n_cfg; ++i) {
        std::string k = detail::read_str(is);
        kv.set(k, detail::read_str(is));
    }
    ModelConfig cfg = detail::config_from_kv(kv);
    Seq2SeqModel<S> m = Seq2SeqModel<S>::create(cfg);

    auto params = m.parameters();
    uint32_t n_params = detail::read_u32(is);
    if (n_params != params.size())
        throw FormatError("checkpoint: expected " + std::to_string(params.size()) +
                          " parameters, file has " + std::to_string(n_params));
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = detail::read_str(is);
        if (name != params[i].name)
            throw FormatError("checkpoint: parameter '" + name + "' where '" +
                              params[i].name + "' was expected");
        uint32_t rank = detail::read_u32(is);
        std::vector<size_t> shape(rank);
        for (auto& dim : shape) dim = size_t(detail::read_u64(is));
        if (shape != params[i].tensor.shape())
            throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        std::vector<float> raw(params[i].tensor.size());
        if (!is.read(reinterpret_cast<char*>(raw.data()),
                     std::streamsize(raw.size() * sizeof(float))))
            throw FormatError("checkpoint: truncated parameter data");
        for (size_t j = 0; j < raw.size(); ++j) params[i].tensor.data()[j] = S(raw[j]);
    }
    return m;
}

// Load into an existing structure; the stored architecture must match
// exactly. Dropout is a training-mode knob, not architecture, so the
// destination keeps its own.
template <class S>
void load_checkpoint_into(Seq2SeqModel<S>& m, const std::string& path) {
    Seq2SeqModel<S> loaded = load_checkpoint<S>(path);
    ModelConfig a = loaded.cfg, b = m.cfg;
    a.dropout = b.dropout = 0;
    if (!(a == b)) throw FormatError("checkpoint: config mismatch loading " + path);
    auto dst = m.parameters();
    auto src = loaded.parameters();
    for (size_t i = 0; i < dst.size(); ++i) dst[i].tensor.data() = src[i].tensor.data();
}

}  // namespace damt
