#include "damt/objectives.hpp"

#include <cmath>

#include "doctest.h"
#include "test_util.hpp"

using namespace damt;

namespace {

using Pairs = std::vector<std::pair<std::vector<int>, std::vector<int>>>;

template <class S>
Seq2SeqModel<S> small_model(uint64_t seed) {
    auto m = Seq2SeqModel<S>::create(damt::testing::small_config());
    Rng rng(seed);
    m.init(rng);
    return m;
}

// token-weighted mean of per-sentence cross-entropies, composed by hand from
// forward() and cross_entropy(); the packed implementation must agree
template <class S>
double composed_term(const Seq2SeqModel<S>& m, const std::vector<std::vector<int>>& enc,
                     const std::vector<std::vector<int>>& dec, int enc_lang, int dec_lang) {
    double weighted = 0;
    size_t tokens = 0;
    for (size_t i = 0; i < enc.size(); ++i) {
        std::vector<int> dec_in = {Vocabulary::kBos};
        dec_in.insert(dec_in.end(), dec[i].begin(), dec[i].end());
        std::vector<int> targets = dec[i];
        targets.push_back(Vocabulary::kEos);
        auto logits = forward(m, wrap_ids(enc[i]), enc_lang, dec_in, dec_lang);
        weighted += double(cross_entropy(logits, targets).item()) * double(targets.size());
        tokens += targets.size();
    }
    return weighted / double(tokens);
}

}  // namespace

TEST_CASE("loss_lm equals the hand-composed corruption + reconstruction") {
    auto m = small_model<double>(3);
    std::vector<std::vector<int>> xs = {{5, 6, 7}, {8, 9}};
    std::vector<std::vector<int>> ys = {{10, 11}, {12, 5, 6}};
    NoiseConfig noise;  // defaults

    Rng noise_rng(77);
    double got = loss_lm(m, xs, ys, noise, noise_rng).item();

    // replay the identical corruption stream
    Rng replay(77);
    std::vector<std::vector<int>> cx, cy;
    for (const auto& x : xs) cx.push_back(corrupt(noise, x, replay, Vocabulary::kMask));
    for (const auto& y : ys) cy.push_back(corrupt(noise, y, replay, Vocabulary::kMask));
    double expect = composed_term(m, cx, xs, 0, 0) + composed_term(m, cy, ys, 1, 1);
    CHECK(got == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("loss_lm is positive for a random model") {
    auto m = small_model<double>(4);
    NoiseConfig noise;
    Rng rng(1);
    CHECK(loss_lm(m, {{5, 6}}, {{7, 8}}, noise, rng).item() > 0.0);
}

TEST_CASE("loss_lm contract errors") {
    auto m = small_model<double>(5);
    NoiseConfig noise;
    Rng rng(1);
    CHECK_THROWS_AS(loss_lm(m, {}, {{7}}, noise, rng), ContractError);
    CHECK_THROWS_AS(
        loss_lm(m, {{5}}, {{7}}, noise, rng, /*src_term=*/false, /*tgt_term=*/false),
        ContractError);
}

TEST_CASE("source-side term can be ablated") {
    auto m = small_model<double>(6);
    NoiseConfig noise{0.0, 0.0, 1};  // identity corruption keeps streams comparable
    Rng r1(2), r2(2);
    double both = loss_lm(m, {{5, 6}}, {{7, 8}}, noise, r1).item();
    double only_tgt = loss_lm(m, {{5, 6}}, {{7, 8}}, noise, r2, false, true).item();
    Rng r3(2);
    double only_src = loss_lm(m, {{5, 6}}, {{7, 8}}, noise, r3, true, false).item();
    CHECK(both == doctest::Approx(only_src + only_tgt).epsilon(1e-9));
}

TEST_CASE("an over-trained toy autoencoder drives the zero-noise LM loss to zero") {
    auto m = small_model<float>(7);
    auto params = m.parameters();
    Adam<float> opt({.lr = 3e-3}, params);
    NoiseConfig noise{0.0, 0.0, 1};
    std::vector<std::vector<int>> xs = {{5, 6, 7}, {8, 9}};
    std::vector<std::vector<int>> ys = {{10, 11, 12}, {6, 5}};
    double last = 0;
    for (int step = 0; step < 400; ++step) {
        Rng rng(0);  // identity corruption, stream irrelevant
        auto loss = loss_lm(m, xs, ys, noise, rng, true, true, true, nullptr);
        last = loss.item();
        backward(loss);
        opt.step(params);
    }
    CHECK(last < 0.05);
}

TEST_CASE("loss_sup equals the composed cross-entropy and is direction-aware") {
    auto m = small_model<double>(8);
    Pairs pairs = {{{5, 6, 7}, {8, 9}}, {{10}, {11, 12}}};
    std::vector<std::vector<int>> xs, ys;
    for (auto& [x, y] : pairs) {
        xs.push_back(x);
        ys.push_back(y);
    }
    CHECK(loss_sup(m, pairs, Direction::s2t).item() ==
          doctest::Approx(composed_term(m, xs, ys, 0, 1)).epsilon(1e-9));
    CHECK(loss_sup(m, pairs, Direction::t2s).item() ==
          doctest::Approx(composed_term(m, ys, xs, 1, 0)).epsilon(1e-9));
    CHECK(loss_sup(m, pairs, Direction::s2t).item() > 0.0);
    CHECK_THROWS_AS(loss_sup(m, {}, Direction::s2t), ContractError);
}

TEST_CASE("a perfect copy model scores near zero on the identity task") {
    auto m = damt::testing::copy_model();
    Pairs pairs = {{{5, 6, 7}, {5, 6, 7}}, {{9, 8}, {9, 8}}};
    CHECK(loss_sup(m, pairs, Direction::s2t).item() < 0.05);
}

TEST_CASE("duplicating every sentence leaves per-token mean losses unchanged") {
    auto m = small_model<double>(9);
    Pairs pairs = {{{5, 6, 7}, {8, 9}}, {{10, 11}, {12}}};
    Pairs doubled = pairs;
    doubled.insert(doubled.end(), pairs.begin(), pairs.end());
    CHECK(loss_sup(m, pairs, Direction::s2t).item() ==
          doctest::Approx(loss_sup(m, doubled, Direction::s2t).item()).epsilon(1e-6));

    NoiseConfig noise{0.0, 0.0, 1};
    std::vector<std::vector<int>> xs = {{5, 6}, {7, 8, 9}};
    std::vector<std::vector<int>> ys = {{10}, {11, 12}};
    auto dup = [](std::vector<std::vector<int>> v) {
        auto w = v;
        w.insert(w.end(), v.begin(), v.end());
        return w;
    };
    Rng r1(0), r2(0);
    CHECK(loss_lm(m, xs, ys, noise, r1).item() ==
          doctest::Approx(loss_lm(m, dup(xs), dup(ys), noise, r2).item()).epsilon(1e-6));
}

TEST_CASE("loss_bt generation matches pre-materialized pairs bitwise") {
    std::vector<std::vector<int>> xs = {{5, 6, 7}, {8, 9}};
    std::vector<std::vector<int>> ys = {{10, 11}, {12, 6}};

    // find a random model that actually generates something for this batch
    Pairs yhat_x, xhat_y;
    Seq2SeqModel<double> m;
    for (uint64_t seed = 10; seed < 64; ++seed) {
        m = small_model<double>(seed);
        yhat_x.clear();
        xhat_y.clear();
        for (const auto& x : xs) {
            auto yhat = greedy_decode(m, wrap_ids(x), 0, 1, 2 * x.size() + 5);
            if (!yhat.empty()) yhat_x.emplace_back(yhat, x);
        }
        for (const auto& y : ys) {
            auto xhat = greedy_decode(m, wrap_ids(y), 1, 0, 2 * y.size() + 5);
            if (!xhat.empty()) xhat_y.emplace_back(xhat, y);
        }
        if (!yhat_x.empty() && !xhat_y.empty()) break;
    }
    REQUIRE(!yhat_x.empty());

    auto params = m.parameters();
    zero_grad(params);
    auto live = loss_bt(m, xs, ys, "batch-0");
    backward(live);
    std::vector<std::vector<double>> live_grads;
    for (auto& p : params) live_grads.push_back(p.tensor.grad());

    zero_grad(params);
    auto frozen = loss_bt_from_pairs(m, yhat_x, xhat_y);
    backward(frozen);

    CHECK(live.item() == frozen.item());  // bitwise
    for (size_t i = 0; i < params.size(); ++i)
        CHECK(params[i].tensor.grad() == live_grads[i]);  // bitwise
}

TEST_CASE("loss_bt skips empty generations and reports a fully-skipped batch") {
    // rig: every logit except EOS is zero, so every translation is empty
    auto m = small_model<double>(11);
    for (auto& p : m.parameters())
        if (!p.name.ends_with("gain"))
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    m.tok_emb.data()[size_t(Vocabulary::kEos) * 8 + 0] = 1.0;
    m.lang_emb.data()[0] = 1.0;
    m.lang_emb.data()[8] = 1.0;
    CHECK_THROWS_AS(loss_bt(m, {{5, 6}}, {{7, 8}}, "batch-7"), ContractError);

    BtGenerationReport rep;
    auto good = small_model<double>(12);
    loss_bt(good, {{5, 6}}, {{7, 8}}, "batch-8", false, nullptr, &rep);
    CHECK(rep.generated + rep.skipped == 2);
}

TEST_CASE("one optimizer step on the BT loss lowers reconstruction perplexity") {
    auto m = small_model<float>(21);
    auto params = m.parameters();
    Adam<float> opt({.lr = 1e-3}, params);
    // fixed reconstruction pairs: perplexity of the t2s direction
    Pairs yhat_x = {{{10, 11, 12}, {5, 6, 7}}, {{12, 10}, {8, 9}}};
    double before = loss_bt_from_pairs(m, yhat_x, {}).item();
    auto loss = loss_bt_from_pairs(m, yhat_x, {}, true, nullptr);
    backward(loss);
    opt.step(params);
    double after = loss_bt_from_pairs(m, yhat_x, {}).item();
    CHECK(std::exp(after) < std::exp(before));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    auto m = small_model<float>(13);
    auto params = m.parameters();
    std::vector<std::vector<float>> before;
    for (auto& p : params) before.push_back(p.tensor.data());
    zero_grad(params);
    Adam<float> opt({}, params);
    CHECK(opt.step(params));
    for (size_t i = 0; i < params.size(); ++i) CHECK(params[i].tensor.data() == before[i]);
}

TEST_CASE("adam: hand-computed first step on a scalar parameter") {
    std::vector<Parameter<double>> params;
    params.push_back({"w", Tensor<double>::from({1.0}, {1}, true)});
    params[0].tensor.grad()[0] = 1.0;
    Adam<double> opt({}, params);
    CHECK(opt.step(params));
    // bias-corrected update: 1.0 - 0.0001 * (1 / (1 + 1e-8))
    CHECK(params[0].tensor.data()[0] ==
          doctest::Approx(1.0 - 0.0001 * (1.0 / (1.0 + 1e-8))).epsilon(1e-12));
    CHECK(params[0].tensor.grad()[0] == 0.0);  // zeroed afterwards
}

TEST_CASE("adam: non-finite gradients abort the step") {
    std::vector<Parameter<double>> params;
    params.push_back({"w", Tensor<double>::from({2.0}, {1}, true)});
    params[0].tensor.grad()[0] = std::nan("");
    Adam<double> opt({}, params);
    CHECK_FALSE(opt.step(params));
    CHECK(params[0].tensor.data()[0] == 2.0);
    CHECK(params[0].tensor.grad()[0] == 0.0);
    CHECK(opt.steps() == 0);
}

TEST_CASE("adam: gradient clipping bounds the applied global norm") {
    std::vector<Parameter<double>> params;
    params.push_back({"w", Tensor<double>::from({0.0, 0.0}, {2}, true)});
    params[0].tensor.grad()[0] = 30.0;
    params[0].tensor.grad()[1] = 40.0;  // norm 50
    Adam<double> clipped({.lr = 1.0, .clip_norm = 5.0}, params);
    CHECK(clipped.step(params));
    // after clipping both coordinates shrink by 0.1; adam normalizes scale,
    // so just check the step stayed finite and direction is preserved
    CHECK(params[0].tensor.data()[0] < 0.0);
    CHECK(params[0].tensor.data()[1] < 0.0);
}

TEST_CASE("adam: identical runs give identical trajectories") {
    auto run = [] {
        auto m = small_model<float>(14);
        auto params = m.parameters();
        Adam<float> opt({.lr = 1e-3}, params);
        NoiseConfig noise;
        Rng noise_rng(5);
        for (int i = 0; i < 5; ++i) {
            auto loss =
                loss_lm(m, {{5, 6, 7}}, {{8, 9}}, noise, noise_rng, true, true, true, nullptr);
            backward(loss);
            opt.step(params);
        }
        std::vector<float> flat;
        for (auto& p : params)
            flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
        return flat;
    };
    CHECK(run() == run());
}

TEST_CASE("gradients of the three losses flow through the shared parameters") {
    auto m = small_model<double>(15);
    auto params = m.parameters();
    NoiseConfig noise;
    Rng rng(3);

    zero_grad(params);
    backward(loss_lm(m, {{5, 6}}, {{7, 8}}, noise, rng));
    size_t lm_nonzero = 0;
    for (auto& p : params)
        for (double g : p.tensor.grad())
            if (g != 0.0) {
                ++lm_nonzero;
                break;
            }
    CHECK(lm_nonzero > 0);

    zero_grad(params);
    backward(loss_sup(m, {{{5, 6}, {7, 8}}}, Direction::s2t));
    size_t sup_nonzero = 0;
    for (auto& p : params)
        for (double g : p.tensor.grad())
            if (g != 0.0) {
                ++sup_nonzero;
                break;
            }
    CHECK(sup_nonzero > 0);
}
