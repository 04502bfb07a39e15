// damt: synthetic-benchmark experiment runner for semi-supervised domain
// adaptation of a miniature translation model.
//
// Subcommands: gen-data, learn-bpe, pretrain, train, eval, grid, report.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "damt/bpe.hpp"
#include "damt/corpus.hpp"
#include "damt/eval.hpp"
#include "damt/grid.hpp"
#include "damt/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void apply_overrides(damt::KvFile& kv, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw damt::ConfigError("override must be key=value, got '" + ov + "'");
        kv.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
}

damt::ExperimentPlan load_plan(const std::string& plan_path,
                               const std::vector<std::string>& overrides,
                               const std::string& variant, uint64_t seed, bool seed_set) {
    damt::KvFile kv = plan_path.empty() ? damt::KvFile() : damt::KvFile::load(plan_path);
    if (!variant.empty()) kv.set("variant", variant);
    if (seed_set) kv.set("seed", seed);
    apply_overrides(kv, overrides);
    return damt::ExperimentPlan::from_kv(kv);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir,
                 const std::vector<std::string>& overrides, uint64_t seed, bool seed_set) {
    damt::KvFile params = spec_path.empty() ? damt::KvFile() : damt::KvFile::load(spec_path);
    if (seed_set) params.set("seed", seed);
    apply_overrides(params, overrides);
    damt::KvFile manifest = damt::generate_benchmark(params, out_dir);
    std::cout << "benchmark written to " << out_dir << "\n"
              << "  types: " << manifest.get("n_types")
              << "  jsd(src,tgt): " << manifest.get("jsd.src_tgt") << "\n";
    return 0;
}

int cmd_learn_bpe(const std::vector<std::string>& inputs, const std::string& out_path,
                  size_t merges, const std::string& langs_csv) {
    std::vector<std::string> langs;
    std::istringstream ss(langs_csv);
    std::string lang;
    while (std::getline(ss, lang, ','))
        if (!lang.empty()) langs.push_back(lang);
    std::vector<std::vector<std::string>> corpora;
    for (const auto& path : inputs) corpora.push_back(damt::read_lines(path));
    damt::Vocabulary vocab = damt::Vocabulary::learn(corpora, merges, langs);
    vocab.save(out_path);
    std::cout << "vocabulary: " << vocab.size() << " tokens, " << vocab.merges.size()
              << " merges -> " << out_path << "\n";
    return 0;
}

int cmd_pretrain(const std::string& plan_path, const std::string& out_dir,
                 const std::vector<std::string>& overrides, uint64_t seed, bool seed_set) {
    auto plan = load_plan(plan_path, overrides, "", seed, seed_set);
    fs::create_directories(out_dir);
    std::string ckpt = out_dir + "/pretrained.ckpt";
    damt::PretrainResult res = damt::pretrain(plan, ckpt);
    std::string csv = "step,loss_dae,loss_clm\n";
    for (size_t i = 0; i < res.dae_history.size(); ++i)
        csv += std::to_string(i + 1) + "," + std::to_string(res.dae_history[i]) + "," +
               std::to_string(res.clm_history[i]) + "\n";
    damt::write_file(out_dir + "/pretrain_metrics.csv", csv);
    std::cout << "pretrained checkpoint -> " << ckpt << " (" << res.dae_history.size()
              << " steps)\n";
    return 0;
}

int cmd_train(const std::string& plan_path, const std::string& out_dir,
              const std::vector<std::string>& overrides, const std::string& variant,
              uint64_t seed, bool seed_set) {
    auto plan = load_plan(plan_path, overrides, variant, seed, seed_set);
    damt::RunResult res = damt::run_experiment(plan, out_dir);
    std::printf("%s: steps=%zu best_val_bleu_s2t=%.2f test_bleu_s2t=%.2f test_bleu_t2s=%.2f\n",
                damt::to_string(plan.variant), res.steps, res.best_val_bleu_s2t,
                res.test_bleu_s2t, res.test_bleu_t2s);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& vocab_path, const std::string& test,
             const std::string& direction) {
    auto model = damt::load_checkpoint<float>(ckpt);
    damt::Vocabulary vocab = damt::Vocabulary::load(vocab_path);
    damt::ParallelCorpus corpus = damt::load_parallel(test, "test");
    damt::Direction dir = damt::direction_from(direction);
    damt::BleuReport rep =
        damt::evaluate(model, vocab, corpus, dir, damt::decode_threads_from_env());
    std::printf("BLEU = %.2f  (BP %.4f, p1 %.4f, p2 %.4f, p3 %.4f, p4 %.4f, hyp %zu, ref %zu)\n",
                rep.percent(), rep.brevity_penalty, rep.precisions[0], rep.precisions[1],
                rep.precisions[2], rep.precisions[3], rep.hyp_tokens, rep.ref_tokens);
    return 0;
}

int cmd_grid(const std::string& preset, const std::string& data_dir, const std::string& out_dir,
             const std::string& plan_path, const std::vector<std::string>& overrides,
             size_t merges, uint64_t seed, bool seed_set) {
    auto base = load_plan(plan_path, overrides, "", seed, seed_set);
    damt::GridRunner runner(data_dir, out_dir, base);
    runner.prepare(merges);
    auto results = runner.run(preset);
    size_t failed = 0;
    for (const auto& r : results) {
        std::printf("%-28s %-7s", r.name.c_str(), r.status.c_str());
        if (r.status == "failed") {
            ++failed;
            std::printf(" %s\n", r.error.c_str());
        } else {
            std::printf(" test_bleu_s2t=%.2f\n", r.result.test_bleu_s2t);
        }
    }
    std::cout << "summary -> " << out_dir << "/grid_" << preset << ".csv\n";
    return failed == 0 ? 0 : 2;
}

int cmd_report(const std::string& runs_dir, const std::string& out_dir) {
    auto rows = damt::collect_manifests(runs_dir);
    std::string table = damt::report_table(rows);
    std::string csv = damt::report_csv(rows);
    std::string dir = out_dir.empty() ? runs_dir : out_dir;
    fs::create_directories(dir);
    damt::write_file(dir + "/table.txt", table);
    damt::write_file(dir + "/table.csv", csv);
    std::cout << table;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"domain adaptation for a miniature translation model via "
                 "iterative back-translation"};
    app.require_subcommand(1);

    std::string spec_path, plan_path, out_dir, data_dir, variant, direction = "s2t";
    std::string ckpt, vocab_path, test_prefix, preset, runs_dir, langs = "l1,l2";
    std::vector<std::string> overrides, inputs;
    size_t merges = 512;
    uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark directory");
    gen->add_option("--spec", spec_path, "task spec file (key=value)");
    gen->add_option("--out", out_dir, "output directory")->required();
    auto* gen_seed = gen->add_option("--seed", seed, "seed override");
    gen->add_option("--override", overrides, "key=value override (repeatable)");

    auto* bpe = app.add_subcommand("learn-bpe", "learn a shared subword vocabulary");
    bpe->add_option("inputs", inputs, "corpus files")->required()->expected(-1);
    bpe->add_option("--out", out_dir, "vocabulary file")->required();
    bpe->add_option("--merges", merges, "number of merges (default 512)");
    bpe->add_option("--langs", langs, "comma-separated language names");

    auto* pre = app.add_subcommand("pretrain", "run the LM pre-training phase");
    pre->add_option("--plan", plan_path, "plan file")->required();
    pre->add_option("--out", out_dir, "output directory")->required();
    auto* pre_seed = pre->add_option("--seed", seed, "seed override");
    pre->add_option("--override", overrides, "key=value override (repeatable)");

    auto* train = app.add_subcommand("train", "run one experiment plan");
    train->add_option("--plan", plan_path, "plan file")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--variant", variant, "variant override");
    auto* train_seed = train->add_option("--seed", seed, "seed override");
    train->add_option("--override", overrides, "key=value override (repeatable)");

    auto* ev = app.add_subcommand("eval", "score a checkpoint on a test set");
    ev->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    ev->add_option("--vocab", vocab_path, "vocabulary file")->required();
    ev->add_option("--test", test_prefix, "test corpus prefix (.l1/.l2)")->required();
    ev->add_option("--direction", direction, "s2t or t2s");

    auto* grid = app.add_subcommand("grid", "run a study preset over a benchmark");
    grid->add_option("--preset", preset, "table1|table3|table4|table5|fig4")->required();
    grid->add_option("--data", data_dir, "benchmark directory from gen-data")->required();
    grid->add_option("--out", out_dir, "grid output directory")->required();
    grid->add_option("--plan", plan_path, "base plan file");
    grid->add_option("--merges", merges, "BPE merges when learning the vocabulary");
    auto* grid_seed = grid->add_option("--seed", seed, "seed override");
    grid->add_option("--override", overrides, "key=value override (repeatable)");

    auto* rep = app.add_subcommand("report", "aggregate run manifests into tables");
    rep->add_option("--runs", runs_dir, "directory containing run outputs")->required();
    rep->add_option("--out", out_dir, "where to write table.txt/table.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(spec_path, out_dir, overrides, seed, !gen_seed->empty());
        if (bpe->parsed()) return cmd_learn_bpe(inputs, out_dir, merges, langs);
        if (pre->parsed())
            return cmd_pretrain(plan_path, out_dir, overrides, seed, !pre_seed->empty());
        if (train->parsed())
            return cmd_train(plan_path, out_dir, overrides, variant, seed,
                             !train_seed->empty());
        if (ev->parsed()) return cmd_eval(ckpt, vocab_path, test_prefix, direction);
        if (grid->parsed())
            return cmd_grid(preset, data_dir, out_dir, plan_path, overrides, merges, seed,
                            !grid_seed->empty());
        if (rep->parsed()) return cmd_report(runs_dir, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
