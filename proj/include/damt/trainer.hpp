#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "damt/bpe.hpp"
#include "damt/common.hpp"
#include "damt/corpus.hpp"
#include "damt/eval.hpp"
#include "damt/model.hpp"
#include "damt/noise.hpp"
#include "damt/objectives.hpp"

namespace damt {

enum class Variant { Unadapted, Copy, Back, Ibt, IbtSrc, IbtBack, MtSup };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::Unadapted: return "UNADAPTED";
        case Variant::Copy: return "COPY";
        case Variant::Back: return "BACK";
        case Variant::Ibt: return "IBT";
        case Variant::IbtSrc: return "IBT_SRC";
        case Variant::IbtBack: return "IBT_BACK";
        case Variant::MtSup: return "MT_SUP";
    }
    return "?";
}

inline Variant variant_from(const std::string& s) {
    for (Variant v : {Variant::Unadapted, Variant::Copy, Variant::Back, Variant::Ibt,
                      Variant::IbtSrc, Variant::IbtBack, Variant::MtSup})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown variant '" + s + "'");
}

struct Ablations {
    bool no_pretrain = false;
    bool no_bt = false;
    bool no_lm = false;
    bool no_src_lm = false;
};

struct PlanData {
    std::string vocab;
    std::string src_parallel;       // prefix of .l1/.l2
    std::string tgt_mono_l1;        // X_tgt
    std::string tgt_mono_l2;        // Y_tgt
    std::string tgt_parallel;       // true target-domain pairs (MT_SUP)
    std::string pseudo_parallel;    // prefix; built by BACK when absent
    std::string valid;              // prefix
    std::string test;               // prefix
    std::string pretrain_mono_l1;
    std::string pretrain_mono_l2;
    std::string pretrained_ckpt;
    std::string extra_mono_l1;      // optional extra non-parallel data
    std::string extra_mono_l2;
};

struct ExperimentPlan {
    Variant variant = Variant::Ibt;
    PlanData data;
    ModelConfig model;
    NoiseConfig noise;
    AdamConfig optim;
    bool pretraining_on = true;
    size_t pretraining_steps = 1200;
    double pretraining_lr = 0.0;   // 0: use optim.lr
    size_t pretraining_batch = 0;  // 0: use batch_size
    Ablations ablations;
    size_t batch_size = 8;
    size_t eval_every = 200;
    size_t patience = 5;
    size_t max_steps = 4000;
    size_t ibt_max_steps = 0;   // 0: same as max_steps
    size_t back_max_steps = 0;  // 0: same as max_steps
    uint64_t seed = 1;

    bool uses_pretraining() const { return pretraining_on && !ablations.no_pretrain; }
    bool is_ibt_family() const {
        return variant == Variant::Ibt || variant == Variant::IbtSrc ||
               variant == Variant::IbtBack;
    }

    // The set of per-iteration updates is a pure function of variant and
    // ablations; it is logged in the run manifest.
    std::string updates() const {
        if (!is_ibt_family()) return "sup";
        std::vector<std::string> u;
        if (!ablations.no_lm) u.push_back(ablations.no_src_lm ? "lm(tgt-side)" : "lm");
        if (!ablations.no_bt) u.push_back("bt");
        if (variant != Variant::Ibt) u.push_back("sup");
        return join(u, ",");
    }

    void validate() const {
        model.validate();
        noise.validate();
        if (patience < 1) throw ConfigError("plan: patience must be >= 1");
        if (batch_size < 1 || eval_every < 1 || max_steps < 1)
            throw ConfigError("plan: batch_size, eval_every and max_steps must be positive");
        if (data.vocab.empty() || data.valid.empty() || data.test.empty())
            throw ConfigError("plan: vocab, valid and test datasets are required");
        auto need = [&](const std::string& v, const char* key) {
            if (v.empty())
                throw ConfigError(std::string("plan: variant ") + to_string(variant) +
                                  " requires data." + key);
        };
        switch (variant) {
            case Variant::Unadapted:
            case Variant::Copy:
            case Variant::Back:
                need(data.src_parallel, "src_parallel");
                break;
            case Variant::MtSup:
                need(data.tgt_parallel, "tgt_parallel");
                break;
            case Variant::IbtSrc:
                need(data.src_parallel, "src_parallel");
                break;
            default:
                break;
        }
        if (variant == Variant::Copy) need(data.tgt_mono_l2, "tgt_mono_l2");
        if (variant == Variant::Back || variant == Variant::IbtBack) {
            need(data.tgt_mono_l2, "tgt_mono_l2");
            if (data.pseudo_parallel.empty()) need(data.src_parallel, "src_parallel");
        }
        if (is_ibt_family()) {
            need(data.tgt_mono_l1, "tgt_mono_l1");
            need(data.tgt_mono_l2, "tgt_mono_l2");
            if (variant == Variant::Ibt && ablations.no_lm && ablations.no_bt)
                throw ConfigError("plan: every training update is disabled");
        }
        if (uses_pretraining() && data.pretrained_ckpt.empty() &&
            (data.pretrain_mono_l1.empty() || data.pretrain_mono_l2.empty()))
            throw ConfigError("plan: pre-training enabled but no checkpoint or corpora given");
    }

    KvFile to_kv() const {
        KvFile kv;
        kv.set("variant", std::string(to_string(variant)));
        kv.set("seed", seed);
        kv.set("data.vocab", data.vocab);
        kv.set("data.src_parallel", data.src_parallel);
        kv.set("data.tgt_mono_l1", data.tgt_mono_l1);
        kv.set("data.tgt_mono_l2", data.tgt_mono_l2);
        kv.set("data.tgt_parallel", data.tgt_parallel);
        kv.set("data.pseudo_parallel", data.pseudo_parallel);
        kv.set("data.valid", data.valid);
        kv.set("data.test", data.test);
        kv.set("data.pretrain_mono_l1", data.pretrain_mono_l1);
        kv.set("data.pretrain_mono_l2", data.pretrain_mono_l2);
        kv.set("data.pretrained", data.pretrained_ckpt);
        kv.set("data.extra_mono_l1", data.extra_mono_l1);
        kv.set("data.extra_mono_l2", data.extra_mono_l2);
        kv.set("model.n_layers", uint64_t(model.n_layers));
        kv.set("model.n_heads", uint64_t(model.n_heads));
        kv.set("model.d_model", uint64_t(model.d_model));
        kv.set("model.d_ff", uint64_t(model.d_ff));
        kv.set("model.max_len", uint64_t(model.max_len));
        kv.set("model.vocab_size", uint64_t(model.vocab_size));
        kv.set("model.n_langs", uint64_t(model.n_langs));
        kv.set("model.dropout", model.dropout);
        kv.set("noise.p_drop", noise.p_drop);
        kv.set("noise.p_blank", noise.p_blank);
        kv.set("noise.window", uint64_t(noise.window));
        kv.set("optim.lr", optim.lr);
        kv.set("optim.beta1", optim.beta1);
        kv.set("optim.beta2", optim.beta2);
        kv.set("optim.eps", optim.eps);
        kv.set("optim.clip_norm", optim.clip_norm);
        kv.set("pretraining.enabled", uint64_t(pretraining_on ? 1 : 0));
        kv.set("pretraining.steps", uint64_t(pretraining_steps));
        kv.set("pretraining.lr", pretraining_lr);
        kv.set("pretraining.batch_size", uint64_t(pretraining_batch));
        kv.set("train.batch_size", uint64_t(batch_size));
        kv.set("train.eval_every", uint64_t(eval_every));
        kv.set("train.patience", uint64_t(patience));
        kv.set("train.max_steps", uint64_t(max_steps));
        kv.set("train.ibt_max_steps", uint64_t(ibt_max_steps));
        kv.set("back.max_steps", uint64_t(back_max_steps));
        kv.set("ablation.no_pretrain", uint64_t(ablations.no_pretrain ? 1 : 0));
        kv.set("ablation.no_bt", uint64_t(ablations.no_bt ? 1 : 0));
        kv.set("ablation.no_lm", uint64_t(ablations.no_lm ? 1 : 0));
        kv.set("ablation.no_src_lm", uint64_t(ablations.no_src_lm ? 1 : 0));
        return kv;
    }

    static ExperimentPlan from_kv(const KvFile& kv) {
        ExperimentPlan p;
        p.variant = variant_from(kv.get_or("variant", "IBT"));
        p.seed = kv.get_uint_or("seed", 1);
        p.data.vocab = kv.get_or("data.vocab", "");
        p.data.src_parallel = kv.get_or("data.src_parallel", "");
        p.data.tgt_mono_l1 = kv.get_or("data.tgt_mono_l1", "");
        p.data.tgt_mono_l2 = kv.get_or("data.tgt_mono_l2", "");
        p.data.tgt_parallel = kv.get_or("data.tgt_parallel", "");
        p.data.pseudo_parallel = kv.get_or("data.pseudo_parallel", "");
        p.data.valid = kv.get_or("data.valid", "");
        p.data.test = kv.get_or("data.test", "");
        p.data.pretrain_mono_l1 = kv.get_or("data.pretrain_mono_l1", "");
        p.data.pretrain_mono_l2 = kv.get_or("data.pretrain_mono_l2", "");
        p.data.pretrained_ckpt = kv.get_or("data.pretrained", "");
        p.data.extra_mono_l1 = kv.get_or("data.extra_mono_l1", "");
        p.data.extra_mono_l2 = kv.get_or("data.extra_mono_l2", "");
        p.model.n_layers = kv.get_uint_or("model.n_layers", 2);
        p.model.n_heads = kv.get_uint_or("model.n_heads", 4);
        p.model.d_model = kv.get_uint_or("model.d_model", 64);
        p.model.d_ff = kv.get_uint_or("model.d_ff", 256);
        p.model.max_len = kv.get_uint_or("model.max_len", 64);
        p.model.vocab_size = kv.get_uint_or("model.vocab_size", 0);
        p.model.n_langs = kv.get_uint_or("model.n_langs", 2);
        p.model.dropout = kv.get_double_or("model.dropout", 0.1);
        p.noise.p_drop = kv.get_double_or("noise.p_drop", 0.1);
        p.noise.p_blank = kv.get_double_or("noise.p_blank", 0.1);
        p.noise.window = kv.get_uint_or("noise.window", 3);
        p.optim.lr = kv.get_double_or("optim.lr", 0.0001);
        p.optim.beta1 = kv.get_double_or("optim.beta1", 0.9);
        p.optim.beta2 = kv.get_double_or("optim.beta2", 0.999);
        p.optim.eps = kv.get_double_or("optim.eps", 1e-8);
        p.optim.clip_norm = kv.get_double_or("optim.clip_norm", 5.0);
        p.pretraining_on = kv.get_bool_or("pretraining.enabled", true);
        p.pretraining_steps = kv.get_uint_or("pretraining.steps", 1200);
        p.pretraining_lr = kv.get_double_or("pretraining.lr", 0.0);
        p.pretraining_batch = kv.get_uint_or("pretraining.batch_size", 0);
        p.batch_size = kv.get_uint_or("train.batch_size", 8);
        p.eval_every = kv.get_uint_or("train.eval_every", 200);
        p.patience = kv.get_uint_or("train.patience", 5);
        p.max_steps = kv.get_uint_or("train.max_steps", 4000);
        p.ibt_max_steps = kv.get_uint_or("train.ibt_max_steps", 0);
        p.back_max_steps = kv.get_uint_or("back.max_steps", 0);
        p.ablations.no_pretrain = kv.get_bool_or("ablation.no_pretrain", false);
        p.ablations.no_bt = kv.get_bool_or("ablation.no_bt", false);
        p.ablations.no_lm = kv.get_bool_or("ablation.no_lm", false);
        p.ablations.no_src_lm = kv.get_bool_or("ablation.no_src_lm", false);
        return p;
    }

    static ExperimentPlan load(const std::string& path) { return from_kv(KvFile::load(path)); }
};

struct EvalPoint {
    size_t iteration = 0;
    double loss_lm = std::nan("");
    double loss_bt = std::nan("");
    double loss_sup = std::nan("");
    double val_bleu_s2t = 0;
    double val_bleu_t2s = 0;
};

struct RunResult {
    double best_val_bleu_s2t = 0;
    double test_bleu_s2t = 0;
    double test_bleu_t2s = 0;
    size_t steps = 0;
    std::vector<EvalPoint> history;
    std::string checkpoint_path;
    std::string updates;
};

struct PretrainResult {
    std::vector<double> dae_history;   // training-batch losses (noisy)
    std::vector<double> clm_history;
    std::vector<double> probe_history;  // fixed-batch DAE loss, when probed
    std::string checkpoint_path;
};

struct StepReport {
    std::optional<double> loss_lm;
    std::optional<double> loss_bt;
    std::optional<double> loss_sup;
    size_t bt_generated = 0;
    size_t bt_skipped = 0;
};

namespace detail {

using IdSentences = std::vector<std::vector<int>>;
using IdPairs = std::vector<std::pair<std::vector<int>, std::vector<int>>>;

inline std::vector<int> encode_content(const Vocabulary& v, const std::string& text,
                                       const std::string& lang) {
    return strip_wrap(v.encode(text, lang));
}

inline IdSentences encode_mono(const Vocabulary& v, const std::vector<std::string>& sentences,
                               const std::string& lang) {
    IdSentences out;
    out.reserve(sentences.size());
    for (auto& ids : v.encode_batch(sentences, lang)) out.push_back(strip_wrap(ids));
    return out;
}

inline IdPairs encode_pairs(const Vocabulary& v, const ParallelCorpus& c) {
    IdPairs out;
    out.reserve(c.pairs.size());
    std::vector<std::string> l1, l2;
    for (const auto& [a, b] : c.pairs) {
        l1.push_back(a);
        l2.push_back(b);
    }
    auto e1 = encode_mono(v, l1, "l1");
    auto e2 = encode_mono(v, l2, "l2");
    for (size_t i = 0; i < e1.size(); ++i) out.emplace_back(std::move(e1[i]), std::move(e2[i]));
    return out;
}

// Snapshot/restore of the flat parameter vector, used by best-checkpoint
// restoration.
template <class S>
std::vector<S> snapshot(const std::vector<Parameter<S>>& params) {
    std::vector<S> flat;
    for (const auto& p : params)
        flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
    return flat;
}

template <class S>
void restore(std::vector<Parameter<S>>& params, const std::vector<S>& flat) {
    size_t off = 0;
    for (auto& p : params) {
        std::copy_n(flat.begin() + off, p.tensor.size(), p.tensor.data().begin());
        off += p.tensor.size();
    }
}

}  // namespace detail

// One iteration of the training strategy: up to three sequential updates
// (language modeling, online back-translation, supervised translation), each
// on a freshly sampled batch, gated by the plan's variant and ablations.
class IbtLoop {
  public:
    IbtLoop(const ExperimentPlan& plan, Seq2SeqModel<float>& model,
            const detail::IdSentences& xtgt, const detail::IdSentences& ytgt,
            const detail::IdPairs* sup_pairs,
            std::optional<Direction> sup_dir = std::nullopt)
        : plan_(plan),
          sup_dir_(sup_dir),
          model_(model),
          xtgt_(xtgt),
          ytgt_(ytgt),
          sup_pairs_(sup_pairs),
          params_(model.parameters()),
          opt_(plan.optim, params_),
          sampler_(Rng(plan.seed).derive("ibt-sampler")),
          noise_rng_(Rng(plan.seed).derive("ibt-noise")),
          drop_rng_(Rng(plan.seed).derive("ibt-dropout")) {
        if (!do_lm() && !do_bt() && sup_pairs_ == nullptr)
            throw ConfigError("plan: every training update is disabled");
    }

    bool do_lm() const { return !plan_.ablations.no_lm; }
    bool do_bt() const { return !plan_.ablations.no_bt; }

    StepReport step(size_t iter) {
        StepReport rep;
        if (do_lm()) {
            auto bx = sample(xtgt_);
            auto by = sample(ytgt_);
            auto loss = loss_lm(model_, bx, by, plan_.noise, noise_rng_,
                                !plan_.ablations.no_src_lm, true, true, &drop_rng_);
            rep.loss_lm = loss.item();
            backward(loss);
            opt_.step(params_);
        }
        if (do_bt()) {
            auto bx = sample(xtgt_);
            auto by = sample(ytgt_);
            BtGenerationReport gen;
            try {
                auto loss = loss_bt(model_, bx, by, "iter-" + std::to_string(iter), true,
                                    &drop_rng_, &gen);
                rep.loss_bt = loss.item();
                backward(loss);
                opt_.step(params_);
            } catch (const ContractError&) {
                // every generation came out empty: skip this update and let
                // the other objectives move the model first
            }
            rep.bt_generated = gen.generated;
            rep.bt_skipped = gen.skipped;
        }
        if (sup_pairs_) {
            auto batch = sample(*sup_pairs_);
            Direction d =
                sup_dir_ ? *sup_dir_ : (iter % 2 == 1 ? Direction::s2t : Direction::t2s);
            auto loss = loss_sup(model_, batch, d, true, &drop_rng_);
            rep.loss_sup = loss.item();
            backward(loss);
            opt_.step(params_);
        }
        return rep;
    }

  private:
    template <class T>
    std::vector<T> sample(const std::vector<T>& pool) {
        if (pool.empty()) throw ContractError("ibt step: empty data pool");
        std::vector<T> out;
        out.reserve(plan_.batch_size);
        for (size_t i = 0; i < plan_.batch_size; ++i)
            out.push_back(pool[sampler_.index(pool.size())]);
        return out;
    }

    const ExperimentPlan& plan_;
    std::optional<Direction> sup_dir_;
    Seq2SeqModel<float>& model_;
    const detail::IdSentences& xtgt_;
    const detail::IdSentences& ytgt_;
    const detail::IdPairs* sup_pairs_;
    std::vector<Parameter<float>> params_;
    Adam<float> opt_;
    Rng sampler_;
    Rng noise_rng_;
    Rng drop_rng_;
};

// Desk-scale stand-in for large-scale LM pre-training: trains the shared
// model on general-domain monolingual text with the denoising objective and a
// decoder-only causal LM objective, then writes the checkpoint every
// "with pre-training" run starts from.
inline PretrainResult pretrain(const ExperimentPlan& plan, const std::string& ckpt_path,
                               bool with_probe = false) {
    if (plan.data.pretrain_mono_l1.empty() || plan.data.pretrain_mono_l2.empty())
        throw ConfigError("pretrain: missing general-domain monolingual corpora");
    Vocabulary vocab = Vocabulary::load(plan.data.vocab);
    ModelConfig cfg = plan.model;
    cfg.vocab_size = vocab.size();

    auto l1 = load_mono(plan.data.pretrain_mono_l1, "general", "l1");
    auto l2 = load_mono(plan.data.pretrain_mono_l2, "general", "l2");
    if (l1.sentences.empty() || l2.sentences.empty())
        throw ConfigError("pretrain: empty general-domain corpus");
    auto xs = detail::encode_mono(vocab, l1.sentences, "l1");
    auto ys = detail::encode_mono(vocab, l2.sentences, "l2");

    auto model = Seq2SeqModel<float>::create(cfg);
    Rng root(plan.seed);
    Rng init_rng = root.derive("pretrain-init");
    model.init(init_rng);
    auto params = model.parameters();
    AdamConfig optim = plan.optim;
    if (plan.pretraining_lr > 0) optim.lr = plan.pretraining_lr;
    const size_t batch = plan.pretraining_batch ? plan.pretraining_batch : plan.batch_size;
    Adam<float> opt(optim, params);
    Rng sampler = root.derive("pretrain-sampler");
    Rng noise_rng = root.derive("pretrain-noise");
    Rng drop_rng = root.derive("pretrain-dropout");

    auto sample = [&](const detail::IdSentences& pool) {
        detail::IdSentences out;
        for (size_t i = 0; i < batch; ++i) out.push_back(pool[sampler.index(pool.size())]);
        return out;
    };

    // fixed probe batch: measures model progress without batch-sampling noise
    detail::IdSentences probe_x(xs.begin(), xs.begin() + std::min<size_t>(16, xs.size()));
    detail::IdSentences probe_y(ys.begin(), ys.begin() + std::min<size_t>(16, ys.size()));
    NoiseConfig no_noise{0.0, 0.0, 1};

    PretrainResult res;
    for (size_t step = 0; step < plan.pretraining_steps; ++step) {
        auto bx = sample(xs);
        auto by = sample(ys);
        auto dae = loss_lm(model, bx, by, plan.noise, noise_rng, true, true, true, &drop_rng);
        res.dae_history.push_back(dae.item());
        backward(dae);
        opt.step(params);

        // causal LM: decoder-only next-token prediction, both languages packed
        auto cx = sample(xs);
        auto cy = sample(ys);
        TokenBatch lm_batch;
        std::vector<int> targets;
        auto add_block = [&](const std::vector<int>& sent, int lang) {
            std::vector<int> dec_in = {Vocabulary::kBos};
            dec_in.insert(dec_in.end(), sent.begin(), sent.end());
            lm_batch.add(dec_in, lang);
            targets.insert(targets.end(), sent.begin(), sent.end());
            targets.push_back(Vocabulary::kEos);
        };
        for (const auto& s : cx) add_block(s, 0);
        for (const auto& s : cy) add_block(s, 1);
        auto clm = cross_entropy(causal_lm_logits(model, lm_batch, true, &drop_rng), targets);
        res.clm_history.push_back(clm.item());
        backward(clm);
        opt.step(params);

        if (with_probe) {
            Rng probe_rng(0);  // identity corruption; stream unused
            res.probe_history.push_back(
                loss_lm(model, probe_x, probe_y, no_noise, probe_rng).item());
        }
    }
    save_checkpoint(model, ckpt_path);
    res.checkpoint_path = ckpt_path;
    return res;
}

// One experiment: dispatches the plan's variant, early-stops on validation
// BLEU (s2t), restores the best checkpoint, evaluates on the test set, and
// writes checkpoint + metrics + manifest under out_dir. A manifest is written
// even when the run fails.
class Trainer {
  public:
    Trainer(ExperimentPlan plan, std::string out_dir)
        : plan_(std::move(plan)), out_dir_(std::move(out_dir)) {
        std::filesystem::create_directories(out_dir_);
    }

    RunResult run() {
        auto t0 = std::chrono::steady_clock::now();
        try {
            resolve_vocab();
            plan_.validate();
            load_data();
            RunResult res = dispatch();
            res.updates = plan_.updates();
            auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
            write_metrics(res);
            write_manifest(&res, "", dt.count());
            return res;
        } catch (const std::exception& e) {
            auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
            try {
                write_manifest(nullptr, e.what(), dt.count());
            } catch (...) {
            }
            throw;
        }
    }

  private:
    ExperimentPlan plan_;
    std::string out_dir_;
    Vocabulary vocab_;
    detail::IdSentences xtgt_, ytgt_;
    detail::IdPairs src_pairs_, tgt_pairs_;
    ParallelCorpus valid_, test_;
    std::vector<std::pair<std::string, std::string>> input_hashes_;
    size_t dropped_overlong_ = 0;

    // Sentences that would not fit the position table (wrapped) are dropped
    // from training pools, mirroring the usual corpus length filter.
    detail::IdSentences filter_mono(detail::IdSentences in) {
        detail::IdSentences out;
        const size_t limit = plan_.model.max_len - 2;
        for (auto& s : in) {
            if (s.empty() || s.size() > limit) {
                ++dropped_overlong_;
                continue;
            }
            out.push_back(std::move(s));
        }
        return out;
    }

    detail::IdPairs filter_pairs(detail::IdPairs in) {
        detail::IdPairs out;
        const size_t limit = plan_.model.max_len - 2;
        for (auto& [a, b] : in) {
            if (a.empty() || b.empty() || a.size() > limit || b.size() > limit) {
                ++dropped_overlong_;
                continue;
            }
            out.emplace_back(std::move(a), std::move(b));
        }
        return out;
    }

    void note_input(const std::string& label, const std::string& path) {
        input_hashes_.emplace_back("hash." + label, hash_file(path));
    }

    void resolve_vocab() {
        if (plan_.data.vocab.empty()) throw ConfigError("plan: data.vocab is required");
        vocab_ = Vocabulary::load(plan_.data.vocab);
        note_input("vocab", plan_.data.vocab);
        if (plan_.model.vocab_size == 0) plan_.model.vocab_size = vocab_.size();
        if (plan_.model.vocab_size != vocab_.size())
            throw ConfigError("plan: model.vocab_size disagrees with the vocabulary file");
    }

    void load_data() {
        valid_ = load_parallel(plan_.data.valid, "valid");
        test_ = load_parallel(plan_.data.test, "test");
        note_input("valid.l1", plan_.data.valid + ".l1");
        note_input("valid.l2", plan_.data.valid + ".l2");
        note_input("test.l1", plan_.data.test + ".l1");
        note_input("test.l2", plan_.data.test + ".l2");

        const Variant v = plan_.variant;
        const bool pseudo_ready = !plan_.data.pseudo_parallel.empty() &&
                                  std::filesystem::exists(plan_.data.pseudo_parallel + ".l1");
        const bool needs_src = v == Variant::Unadapted || v == Variant::Copy ||
                               v == Variant::Back || v == Variant::IbtSrc ||
                               (v == Variant::IbtBack && !pseudo_ready);
        if (needs_src) {
            auto src = load_parallel(plan_.data.src_parallel, "src");
            note_input("src_parallel.l1", plan_.data.src_parallel + ".l1");
            note_input("src_parallel.l2", plan_.data.src_parallel + ".l2");
            src_pairs_ = filter_pairs(detail::encode_pairs(vocab_, src));
        }
        if (v == Variant::MtSup) {
            auto tgt = load_parallel(plan_.data.tgt_parallel, "tgt");
            note_input("tgt_parallel.l1", plan_.data.tgt_parallel + ".l1");
            note_input("tgt_parallel.l2", plan_.data.tgt_parallel + ".l2");
            tgt_pairs_ = filter_pairs(detail::encode_pairs(vocab_, tgt));
        }
        if (plan_.is_ibt_family() || v == Variant::Copy || v == Variant::Back) {
            if (!plan_.data.tgt_mono_l1.empty()) {
                auto m = load_mono(plan_.data.tgt_mono_l1, "tgt", "l1");
                note_input("tgt_mono_l1", plan_.data.tgt_mono_l1);
                xtgt_ = filter_mono(detail::encode_mono(vocab_, m.sentences, "l1"));
            }
            if (!plan_.data.tgt_mono_l2.empty()) {
                auto m = load_mono(plan_.data.tgt_mono_l2, "tgt", "l2");
                note_input("tgt_mono_l2", plan_.data.tgt_mono_l2);
                ytgt_ = filter_mono(detail::encode_mono(vocab_, m.sentences, "l2"));
            }
            if (plan_.is_ibt_family() && !plan_.data.extra_mono_l1.empty()) {
                // extra non-parallel data: up-sample the original halves to the
                // extra corpus size, then pool
                auto e1 = load_mono(plan_.data.extra_mono_l1, "extra", "l1");
                auto e2 = load_mono(plan_.data.extra_mono_l2, "extra", "l2");
                note_input("extra_mono_l1", plan_.data.extra_mono_l1);
                note_input("extra_mono_l2", plan_.data.extra_mono_l2);
                auto ex1 = detail::encode_mono(vocab_, e1.sentences, "l1");
                auto ex2 = detail::encode_mono(vocab_, e2.sentences, "l2");
                xtgt_ = pool_with_upsample(xtgt_, ex1);
                ytgt_ = pool_with_upsample(ytgt_, ex2);
            }
        }
    }

    static detail::IdSentences pool_with_upsample(const detail::IdSentences& original,
                                                  const detail::IdSentences& extra) {
        if (extra.empty()) return original;
        detail::IdSentences out;
        size_t target = std::max(original.size(), extra.size());
        for (size_t i = 0; i < target; ++i) out.push_back(original[i % original.size()]);
        out.insert(out.end(), extra.begin(), extra.end());
        return out;
    }

    Seq2SeqModel<float> make_model(Rng& root) {
        auto model = Seq2SeqModel<float>::create(plan_.model);
        if (plan_.uses_pretraining()) {
            std::string ckpt = plan_.data.pretrained_ckpt;
            if (ckpt.empty() || !std::filesystem::exists(ckpt)) {
                if (ckpt.empty()) ckpt = out_dir_ + "/pretrained.ckpt";
                pretrain(plan_, ckpt);
            }
            load_checkpoint_into(model, ckpt);
            note_input("pretrained_ckpt", ckpt);
        } else {
            Rng init_rng = root.derive("init");
            model.init(init_rng);
        }
        return model;
    }

    template <class T>
    static std::vector<T> sample_batch(const std::vector<T>& pool, Rng& rng, size_t n) {
        if (pool.empty()) throw ContractError("sample_batch: empty pool");
        std::vector<T> out;
        out.reserve(n);
        for (size_t i = 0; i < n; ++i) out.push_back(pool[rng.index(pool.size())]);
        return out;
    }

    struct LossAccum {
        double sum = 0;
        size_t n = 0;
        void add(double v) {
            sum += v;
            ++n;
        }
        double mean_and_reset() {
            double m = n ? sum / double(n) : std::nan("");
            sum = 0;
            n = 0;
            return m;
        }
    };

    // Shared evaluation / early-stopping / best-restoration loop around a
    // per-iteration body.
    template <class Body>
    RunResult train_loop(Seq2SeqModel<float>& model, size_t max_steps, Body&& body,
                         LossAccum& lm_acc, LossAccum& bt_acc, LossAccum& sup_acc,
                         Direction stop_dir = Direction::s2t) {
        auto params = model.parameters();
        RunResult res;
        double best = -1.0;
        std::vector<float> best_params = detail::snapshot(params);
        size_t since_best = 0;
        size_t threads = decode_threads_from_env();

        for (size_t iter = 1; iter <= max_steps; ++iter) {
            body(iter);
            res.steps = iter;
            if (iter % plan_.eval_every != 0) continue;

            EvalPoint pt;
            pt.iteration = iter;
            pt.loss_lm = lm_acc.mean_and_reset();
            pt.loss_bt = bt_acc.mean_and_reset();
            pt.loss_sup = sup_acc.mean_and_reset();
            pt.val_bleu_s2t = evaluate(model, vocab_, valid_, Direction::s2t, threads).percent();
            pt.val_bleu_t2s = evaluate(model, vocab_, valid_, Direction::t2s, threads).percent();
            res.history.push_back(pt);

            double metric = stop_dir == Direction::s2t ? pt.val_bleu_s2t : pt.val_bleu_t2s;
            if (metric > best) {
                best = metric;
                best_params = detail::snapshot(params);
                since_best = 0;
            } else {
                ++since_best;
                if (since_best >= plan_.patience) break;
            }
        }
        if (best >= 0) {
            detail::restore(params, best_params);
            if (stop_dir == Direction::s2t) res.best_val_bleu_s2t = best;
        }
        return res;
    }

    void finish(Seq2SeqModel<float>& model, RunResult& res) {
        size_t threads = decode_threads_from_env();
        res.test_bleu_s2t = evaluate(model, vocab_, test_, Direction::s2t, threads).percent();
        res.test_bleu_t2s = evaluate(model, vocab_, test_, Direction::t2s, threads).percent();
        res.checkpoint_path = out_dir_ + "/model.ckpt";
        save_checkpoint(model, res.checkpoint_path);
    }

    // Supervised training on a fixed pair list. `dir` empty means alternate
    // directions batch by batch; a fixed direction also steers early stopping.
    RunResult supervised_run(Seq2SeqModel<float>& model, const detail::IdPairs& pairs,
                             std::optional<Direction> dir, size_t max_steps) {
        auto params = model.parameters();
        Adam<float> opt(plan_.optim, params);
        Rng root(plan_.seed);
        Rng sampler = root.derive("sup-sampler");
        Rng drop_rng = root.derive("sup-dropout");
        LossAccum lm_acc, bt_acc, sup_acc;
        RunResult res = train_loop(
            model, max_steps,
            [&](size_t iter) {
                auto batch = sample_batch(pairs, sampler, plan_.batch_size);
                Direction d = dir ? *dir
                                  : (iter % 2 == 1 ? Direction::s2t : Direction::t2s);
                auto loss = loss_sup(model, batch, d, true, &drop_rng);
                sup_acc.add(loss.item());
                backward(loss);
                opt.step(params);
            },
            lm_acc, bt_acc, sup_acc, dir.value_or(Direction::s2t));
        return res;
    }

    // BACK stage 1: train a target-to-source model on the source-domain
    // parallel data, then translate Y_tgt to pseudo sources.
    ParallelCorpus build_pseudo_corpus() {
        Rng root(plan_.seed);
        auto t2s_model = make_model(root);
        size_t steps = plan_.back_max_steps ? plan_.back_max_steps : plan_.max_steps;
        supervised_run(t2s_model, src_pairs_, Direction::t2s, steps);
        save_checkpoint(t2s_model, out_dir_ + "/t2s.ckpt");

        auto y_mono = load_mono(plan_.data.tgt_mono_l2, "tgt", "l2");
        auto pseudo_sources = translate_sentences(t2s_model, vocab_, y_mono.sentences,
                                                  Direction::t2s, decode_threads_from_env());
        ParallelCorpus pseudo;
        pseudo.domain = "pseudo";
        for (size_t i = 0; i < y_mono.sentences.size(); ++i) {
            if (pseudo_sources[i].empty()) continue;  // empty generations are dropped
            pseudo.pairs.emplace_back(pseudo_sources[i], y_mono.sentences[i]);
        }
        if (pseudo.pairs.empty())
            throw ContractError("back-translation produced no usable pseudo pairs");
        return pseudo;
    }

    detail::IdPairs ensure_pseudo_pairs() {
        std::string prefix = plan_.data.pseudo_parallel;
        if (!prefix.empty() && std::filesystem::exists(prefix + ".l1")) {
            auto pseudo = load_parallel(prefix, "pseudo");
            note_input("pseudo_parallel.l1", prefix + ".l1");
            note_input("pseudo_parallel.l2", prefix + ".l2");
            return filter_pairs(detail::encode_pairs(vocab_, pseudo));
        }
        ParallelCorpus pseudo = build_pseudo_corpus();
        if (prefix.empty()) prefix = out_dir_ + "/pseudo";
        save_parallel(pseudo, prefix);
        note_input("pseudo_parallel.l1", prefix + ".l1");
        note_input("pseudo_parallel.l2", prefix + ".l2");
        return filter_pairs(detail::encode_pairs(vocab_, pseudo));
    }

    static detail::IdPairs upsample_pairs(const detail::IdPairs& pairs, size_t target) {
        detail::IdPairs out;
        out.reserve(target);
        for (size_t i = 0; i < target; ++i) out.push_back(pairs[i % pairs.size()]);
        return out;
    }

    // Algorithm-style iteration via IbtLoop: one LM update, one
    // back-translation update, one supervised update, gated by the plan.
    RunResult ibt_run(Seq2SeqModel<float>& model, const detail::IdPairs* sup_pairs,
                      std::optional<Direction> sup_dir = std::nullopt) {
        IbtLoop loop(plan_, model, xtgt_, ytgt_, sup_pairs, sup_dir);
        LossAccum lm_acc, bt_acc, sup_acc;
        return train_loop(
            model, plan_.ibt_max_steps ? plan_.ibt_max_steps : plan_.max_steps,
            [&](size_t iter) {
                StepReport rep = loop.step(iter);
                if (rep.loss_lm) lm_acc.add(*rep.loss_lm);
                if (rep.loss_bt) bt_acc.add(*rep.loss_bt);
                if (rep.loss_sup) sup_acc.add(*rep.loss_sup);
            },
            lm_acc, bt_acc, sup_acc);
    }

    RunResult dispatch() {
        Rng root(plan_.seed);
        switch (plan_.variant) {
            case Variant::Unadapted: {
                auto model = make_model(root);
                RunResult res = supervised_run(model, src_pairs_, std::nullopt, plan_.max_steps);
                finish(model, res);
                return res;
            }
            case Variant::Copy: {
                detail::IdPairs pairs = src_pairs_;
                for (const auto& y : ytgt_) pairs.emplace_back(y, y);
                auto model = make_model(root);
                RunResult res = supervised_run(model, pairs, std::nullopt, plan_.max_steps);
                finish(model, res);
                return res;
            }
            case Variant::Back: {
                detail::IdPairs pseudo = ensure_pseudo_pairs();
                // pseudo pairs and source parallel data mix 1:1 by up-sampling
                // the smaller side
                size_t target = std::max(pseudo.size(), src_pairs_.size());
                detail::IdPairs mix = upsample_pairs(pseudo, target);
                detail::IdPairs src_up = upsample_pairs(src_pairs_, target);
                mix.insert(mix.end(), src_up.begin(), src_up.end());
                auto model = make_model(root);
                RunResult res = supervised_run(model, mix, Direction::s2t, plan_.max_steps);
                finish(model, res);
                return res;
            }
            case Variant::MtSup: {
                auto model = make_model(root);
                RunResult res = supervised_run(model, tgt_pairs_, std::nullopt, plan_.max_steps);
                finish(model, res);
                return res;
            }
            case Variant::Ibt: {
                auto model = make_model(root);
                RunResult res = ibt_run(model, nullptr);
                finish(model, res);
                return res;
            }
            case Variant::IbtSrc: {
                auto model = make_model(root);
                RunResult res = ibt_run(model, &src_pairs_);
                finish(model, res);
                return res;
            }
            case Variant::IbtBack: {
                detail::IdPairs pseudo = ensure_pseudo_pairs();
                auto model = make_model(root);
                // back-translated text is input-side only (Eq. 3 direction)
                RunResult res = ibt_run(model, &pseudo, Direction::s2t);
                finish(model, res);
                return res;
            }
        }
        throw ConfigError("unhandled variant");
    }

    static std::string fmt(double v) {
        std::ostringstream ss;
        ss.precision(10);
        ss << v;
        return ss.str();
    }

    void write_metrics(const RunResult& res) {
        std::string csv = "iteration,loss_lm,loss_bt,loss_sup,val_bleu_s2t,val_bleu_t2s\n";
        for (const auto& pt : res.history) {
            csv += std::to_string(pt.iteration) + "," + fmt(pt.loss_lm) + "," +
                   fmt(pt.loss_bt) + "," + fmt(pt.loss_sup) + "," + fmt(pt.val_bleu_s2t) +
                   "," + fmt(pt.val_bleu_t2s) + "\n";
        }
        write_file(out_dir_ + "/metrics.csv", csv);
    }

    void write_manifest(const RunResult* res, const std::string& error, double seconds) {
        KvFile kv;
        kv.set("status", res ? "ok" : "failed");
        if (!error.empty()) kv.set("error", error);
        kv.set("updates", plan_.updates());
        const KvFile plan_kv = plan_.to_kv();
        for (const auto& [k, v] : plan_kv.entries()) kv.set("plan." + k, v);
        for (const auto& [k, v] : input_hashes_) kv.set(k, v);
        kv.set("counts.src_pairs", uint64_t(src_pairs_.size()));
        kv.set("counts.tgt_pairs", uint64_t(tgt_pairs_.size()));
        kv.set("counts.xtgt", uint64_t(xtgt_.size()));
        kv.set("counts.ytgt", uint64_t(ytgt_.size()));
        kv.set("counts.valid", uint64_t(valid_.pairs.size()));
        kv.set("counts.dropped_overlong", uint64_t(dropped_overlong_));
        kv.set("counts.test", uint64_t(test_.pairs.size()));
        if (res) {
            kv.set("result.steps", uint64_t(res->steps));
            kv.set("result.evaluations", uint64_t(res->history.size()));
            kv.set("result.best_val_bleu_s2t", fmt(res->best_val_bleu_s2t));
            kv.set("result.test_bleu_s2t", fmt(res->test_bleu_s2t));
            kv.set("result.test_bleu_t2s", fmt(res->test_bleu_t2s));
            kv.set("result.checkpoint", res->checkpoint_path);
        }
        kv.set("runtime_seconds", fmt(seconds));
        kv.save(out_dir_ + "/manifest.kv");
    }
};

inline RunResult run_experiment(const ExperimentPlan& plan, const std::string& out_dir) {
    Trainer t(plan, out_dir);
    return t.run();
}

}  // namespace damt
