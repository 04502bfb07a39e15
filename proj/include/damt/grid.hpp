#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "damt/bpe.hpp"
#include "damt/common.hpp"
#include "damt/corpus.hpp"
#include "damt/trainer.hpp"

namespace damt {

struct GridCell {
    std::string name;  // directory under the grid output
    ExperimentPlan plan;
};

// Fill a plan's dataset paths from the benchmark directory layout written by
// generate_benchmark.
inline void bind_benchmark_paths(ExperimentPlan& plan, const std::string& data_dir) {
    plan.data.vocab = data_dir + "/vocab.txt";
    plan.data.src_parallel = data_dir + "/src_train";
    plan.data.tgt_parallel = data_dir + "/tgt_train";
    plan.data.tgt_mono_l1 = data_dir + "/tgt_mono.l1";
    plan.data.tgt_mono_l2 = data_dir + "/tgt_mono.l2";
    plan.data.valid = data_dir + "/valid";
    plan.data.test = data_dir + "/test";
    plan.data.pretrain_mono_l1 = data_dir + "/general.l1";
    plan.data.pretrain_mono_l2 = data_dir + "/general.l2";
    plan.data.pretrained_ckpt = data_dir + "/pretrained.ckpt";
}

// Study presets over the synthetic benchmark.
//   table1: main method/baseline comparison
//   table3: ablations of the best variant
//   table4: extra non-parallel data study
//   table5: pre-training on/off for the baselines
//   fig4:   source-domain data-size curve
inline std::vector<GridCell> make_preset(const std::string& preset,
                                         const ExperimentPlan& base,
                                         const std::string& data_dir,
                                         const std::string& grid_dir) {
    std::vector<GridCell> cells;
    auto cell = [&](const std::string& name, Variant v) {
        GridCell c;
        c.name = name;
        c.plan = base;
        c.plan.variant = v;
        return c;
    };

    if (preset == "table1") {
        for (Variant v : {Variant::Unadapted, Variant::Copy, Variant::Back, Variant::Ibt,
                          Variant::IbtSrc, Variant::IbtBack, Variant::MtSup}) {
            GridCell c = cell(std::string(to_string(v)), v);
            if (v == Variant::IbtBack)
                c.plan.data.pseudo_parallel = grid_dir + "/BACK/pseudo";
            cells.push_back(std::move(c));
        }
    } else if (preset == "table3") {
        GridCell base_cell = cell("IBT_BACK", Variant::IbtBack);
        base_cell.plan.data.pseudo_parallel = grid_dir + "/IBT_BACK/pseudo";
        cells.push_back(base_cell);
        auto ablated = [&](const std::string& tag, auto mutate) {
            GridCell c = cell("IBT_BACK-" + tag, Variant::IbtBack);
            c.plan.data.pseudo_parallel = grid_dir + "/IBT_BACK/pseudo";
            mutate(c.plan);
            cells.push_back(std::move(c));
        };
        ablated("no_pretrain", [](ExperimentPlan& p) { p.ablations.no_pretrain = true; });
        ablated("no_bt", [](ExperimentPlan& p) { p.ablations.no_bt = true; });
        ablated("no_lm", [](ExperimentPlan& p) { p.ablations.no_lm = true; });
        ablated("no_src_lm", [](ExperimentPlan& p) { p.ablations.no_src_lm = true; });
        ablated("no_bt-no_src_lm", [](ExperimentPlan& p) {
            p.ablations.no_bt = true;
            p.ablations.no_src_lm = true;
        });
    } else if (preset == "table4") {
        for (Variant v : {Variant::Ibt, Variant::IbtBack}) {
            for (const std::string& extra : {std::string("none"), std::string("src"),
                                             std::string("tgt")}) {
                GridCell c = cell(std::string(to_string(v)) + "+" + extra, v);
                if (v == Variant::IbtBack)
                    c.plan.data.pseudo_parallel = grid_dir + "/IBT_BACK+none/pseudo";
                if (extra != "none") {
                    c.plan.data.extra_mono_l1 = data_dir + "/extra_" + extra + ".l1";
                    c.plan.data.extra_mono_l2 = data_dir + "/extra_" + extra + ".l2";
                }
                cells.push_back(std::move(c));
            }
        }
        cells.push_back(cell("MT_SUP", Variant::MtSup));
    } else if (preset == "table5") {
        for (Variant v : {Variant::Unadapted, Variant::Copy, Variant::Back}) {
            cells.push_back(cell(std::string(to_string(v)) + "-pre", v));
            GridCell c = cell(std::string(to_string(v)) + "-nopre", v);
            c.plan.ablations.no_pretrain = true;
            cells.push_back(std::move(c));
        }
    } else if (preset == "fig4") {
        const std::vector<double> fractions = {0.1, 0.25, 0.5, 1.0};
        for (double f : fractions) {
            std::ostringstream tag;
            tag << "f" << std::fixed << std::setprecision(2) << f;
            for (Variant v : {Variant::Unadapted, Variant::Back, Variant::Ibt,
                              Variant::IbtBack}) {
                GridCell c = cell(std::string(to_string(v)) + "-" + tag.str(), v);
                if (v != Variant::Ibt && f < 1.0)
                    c.plan.data.src_parallel = grid_dir + "/src_" + tag.str();
                if (v == Variant::IbtBack)
                    c.plan.data.pseudo_parallel =
                        grid_dir + "/BACK-" + tag.str() + "/pseudo";
                cells.push_back(std::move(c));
            }
        }
    } else {
        throw ConfigError("unknown preset '" + preset +
                          "' (expected table1, table3, table4, table5 or fig4)");
    }
    return cells;
}

struct GridCellResult {
    std::string name;
    std::string status;  // ok | failed | cached
    std::string error;
    RunResult result;
};

// Executes a preset: prepares shared inputs (vocabulary, pre-trained
// checkpoint, sub-sampled corpora), then runs every cell. Cells whose plan
// hash already produced an ok manifest are reused; per-cell failures are
// recorded and the grid continues.
class GridRunner {
  public:
    GridRunner(std::string data_dir, std::string out_dir, ExperimentPlan base)
        : data_dir_(std::move(data_dir)), out_dir_(std::move(out_dir)), base_(std::move(base)) {
        std::filesystem::create_directories(out_dir_);
        bind_benchmark_paths(base_, data_dir_);
    }

    const ExperimentPlan& base_plan() const { return base_; }

    // Vocabulary is learned once on the concatenation of the general-domain
    // monolingual corpora; the pre-training checkpoint is shared by every
    // with-pre-training cell.
    void prepare(size_t bpe_merges) {
        if (!std::filesystem::exists(base_.data.vocab)) {
            auto l1 = read_lines(base_.data.pretrain_mono_l1);
            auto l2 = read_lines(base_.data.pretrain_mono_l2);
            Vocabulary vocab = Vocabulary::learn({l1, l2}, bpe_merges, {"l1", "l2"});
            vocab.save(base_.data.vocab);
        }
        if (base_.pretraining_on && !std::filesystem::exists(base_.data.pretrained_ckpt)) {
            ExperimentPlan p = base_;
            Vocabulary vocab = Vocabulary::load(p.data.vocab);
            p.model.vocab_size = vocab.size();
            pretrain(p, p.data.pretrained_ckpt);
        }
    }

    std::vector<GridCellResult> run(const std::string& preset) {
        auto cells = make_preset(preset, base_, data_dir_, out_dir_);
        if (preset == "fig4") prepare_subsamples();
        std::vector<GridCellResult> results;
        for (auto& cell : cells) results.push_back(run_cell(cell));
        write_summary(preset, results);
        return results;
    }

    GridCellResult run_cell(const GridCell& cell) {
        GridCellResult r;
        r.name = cell.name;
        std::string dir = out_dir_ + "/" + cell.name;
        std::string plan_hash = git_blob_hash(cell.plan.to_kv().dump());
        std::string manifest_path = dir + "/manifest.kv";
        if (std::filesystem::exists(manifest_path)) {
            KvFile m = KvFile::load(manifest_path);
            if (m.get_or("status", "") == "ok" && m.get_or("plan_hash", "") == plan_hash) {
                r.status = "cached";
                r.result.best_val_bleu_s2t = m.get_double_or("result.best_val_bleu_s2t", 0);
                r.result.test_bleu_s2t = m.get_double_or("result.test_bleu_s2t", 0);
                r.result.test_bleu_t2s = m.get_double_or("result.test_bleu_t2s", 0);
                r.result.steps = m.get_uint_or("result.steps", 0);
                return r;
            }
        }
        try {
            Trainer t(cell.plan, dir);
            r.result = t.run();
            r.status = "ok";
            KvFile m = KvFile::load(manifest_path);
            m.set("plan_hash", plan_hash);
            m.set("cell", cell.name);
            m.save(manifest_path);
        } catch (const std::exception& e) {
            r.status = "failed";
            r.error = e.what();
            if (std::filesystem::exists(manifest_path)) {
                KvFile m = KvFile::load(manifest_path);
                m.set("plan_hash", plan_hash);
                m.set("cell", cell.name);
                m.save(manifest_path);
            }
        }
        return r;
    }

  private:
    void prepare_subsamples() {
        auto src = load_parallel(base_.data.src_parallel, "src");
        for (double f : {0.1, 0.25, 0.5}) {
            std::ostringstream tag;
            tag << "f" << std::fixed << std::setprecision(2) << f;
            std::string prefix = out_dir_ + "/src_" + tag.str();
            if (std::filesystem::exists(prefix + ".l1")) continue;
            // the subsample seed is the fraction-tagged benchmark seed so the
            // nested subsets stay reproducible
            save_parallel(subsample(src, f, base_.seed + size_t(f * 100)), prefix);
        }
    }

    void write_summary(const std::string& preset, const std::vector<GridCellResult>& results) {
        std::string csv = "cell,status,steps,best_val_bleu_s2t,test_bleu_s2t,test_bleu_t2s\n";
        for (const auto& r : results) {
            std::ostringstream row;
            row << r.name << "," << r.status << "," << r.result.steps << "," << std::fixed
                << std::setprecision(2) << r.result.best_val_bleu_s2t << ","
                << r.result.test_bleu_s2t << "," << r.result.test_bleu_t2s << "\n";
            csv += row.str();
        }
        write_file(out_dir_ + "/grid_" + preset + ".csv", csv);
    }

    std::string data_dir_;
    std::string out_dir_;
    ExperimentPlan base_;
};

// ---- report: aggregate run manifests into aligned text and CSV tables -------

struct ReportRow {
    std::string cell;
    std::string variant;
    std::string status;
    std::string updates;
    size_t steps = 0;
    double best_val = 0, test_s2t = 0, test_t2s = 0;
};

inline std::vector<ReportRow> collect_manifests(const std::string& root) {
    std::vector<ReportRow> rows;
    namespace fs = std::filesystem;
    if (!fs::exists(root)) throw ConfigError("report: no such directory " + root);
    std::vector<std::string> paths;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file() && entry.path().filename() == "manifest.kv")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        KvFile m = KvFile::load(p);
        if (!m.has("plan.variant")) continue;  // not a run manifest
        ReportRow r;
        r.cell = fs::path(p).parent_path().lexically_relative(root).string();
        r.variant = m.get_or("plan.variant", "?");
        r.status = m.get_or("status", "?");
        r.updates = m.get_or("updates", "");
        r.steps = m.get_uint_or("result.steps", 0);
        r.best_val = m.get_double_or("result.best_val_bleu_s2t", 0);
        r.test_s2t = m.get_double_or("result.test_bleu_s2t", 0);
        r.test_t2s = m.get_double_or("result.test_bleu_t2s", 0);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "cell,variant,status,updates,steps,best_val_bleu_s2t,test_bleu_s2t,"
                      "test_bleu_t2s\n";
    for (const auto& r : rows) {
        std::ostringstream row;
        row << r.cell << "," << r.variant << "," << r.status << "," << r.updates << ","
            << r.steps << "," << std::fixed << std::setprecision(2) << r.best_val << ","
            << r.test_s2t << "," << r.test_t2s << "\n";
        out += row.str();
    }
    return out;
}

inline std::string report_table(const std::vector<ReportRow>& rows) {
    size_t cell_w = 4, var_w = 7;
    for (const auto& r : rows) {
        cell_w = std::max(cell_w, r.cell.size());
        var_w = std::max(var_w, r.variant.size());
    }
    std::ostringstream out;
    out << std::left << std::setw(int(cell_w) + 2) << "cell" << std::setw(int(var_w) + 2)
        << "variant" << std::setw(8) << "status" << std::right << std::setw(7) << "steps"
        << std::setw(10) << "val_s2t" << std::setw(10) << "test_s2t" << std::setw(10)
        << "test_t2s" << "\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(int(cell_w) + 2) << r.cell << std::setw(int(var_w) + 2)
            << r.variant << std::setw(8) << r.status << std::right << std::setw(7) << r.steps
            << std::fixed << std::setprecision(2) << std::setw(10) << r.best_val
            << std::setw(10) << r.test_s2t << std::setw(10) << r.test_t2s << "\n";
    }
    return out.str();
}

}  // namespace damt
