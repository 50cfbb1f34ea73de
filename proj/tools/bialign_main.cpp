#include "bialign/commands.hpp"
#include "bialign/errors.hpp"
#include "bialign/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

// Experiment driver. Every subcommand also accepts --config <file>: a flat
// JSON document whose keys mirror the long flag names (dashes as
// underscores); explicit command-line flags override file values.

namespace {

using bialign::commands::AblateOptions;
using bialign::commands::AlignOptions;
using bialign::commands::ConsistencyOptions;
using bialign::commands::CurveOptions;
using bialign::commands::EvalOptions;
using bialign::commands::GenDataOptions;
using bialign::commands::PretrainOptions;
using bialign::commands::ReportOptions;
using nlohmann::json;

template <class T>
void jget(const json& j, const char* key, T& slot) {
    if (j.contains(key)) slot = j.at(key).get<T>();
}

json load_config_arg(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) throw bialign::DataError(std::string("cannot open config file: ") + argv[i + 1]);
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                throw bialign::ConfigError(std::string("bad config file: ") + e.what());
            }
            return j;
        }
    }
    return json::object();
}

} // namespace

int main(int argc, char** argv) {
    using namespace bialign;

    CLI::App app{"bidirectional teacher-student alignment lab for in-context learning"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    std::string config_path;

    GenDataOptions gd;
    PretrainOptions pt;
    AlignOptions al;
    EvalOptions ev;
    ConsistencyOptions co;
    AblateOptions ab;
    CurveOptions cu;
    ReportOptions re;

    try {
        const json cfg = load_config_arg(argc, argv);

        // gen-data ------------------------------------------------------
        jget(cfg, "out", gd.out);
        jget(cfg, "families", gd.families);
        jget(cfg, "count", gd.count);
        jget(cfg, "k_min", gd.k_min);
        jget(cfg, "k_max", gd.k_max);
        jget(cfg, "subsets", gd.subsets);
        jget(cfg, "subset_method", gd.subset_method);
        jget(cfg, "seed", gd.seed);
        auto* gen = app.add_subcommand("gen-data", "generate a synthetic ICL dataset (JSONL)");
        gen->add_option("--config", config_path, "JSON config file (flags override)");
        gen->add_option("--out", gd.out, "output dataset path");
        gen->add_option("--families", gd.families, "src|tgt|all or comma-separated names");
        gen->add_option("--count", gd.count, "number of samples");
        gen->add_option("--k-min", gd.k_min, "minimum demonstrations per sample");
        gen->add_option("--k-max", gd.k_max, "maximum demonstrations per sample");
        gen->add_option("--subsets", gd.subsets, "presampled subsets per sample (0 = none)");
        gen->add_option("--subset-method", gd.subset_method, "uniform|size-stratified");
        gen->add_option("--seed", gd.seed, "generation seed");
        gen->add_flag("--force", gd.force, "overwrite an existing output file");
        gen->callback([&] { commands::gen_data(gd); });

        // pretrain ------------------------------------------------------
        jget(cfg, "role", pt.role);
        jget(cfg, "data", pt.data);
        jget(cfg, "eval_data", pt.eval_data);
        jget(cfg, "out_dir", pt.out_dir);
        jget(cfg, "data_fraction", pt.data_fraction);
        jget(cfg, "d_model", pt.d_model);
        jget(cfg, "layers", pt.layers);
        jget(cfg, "heads", pt.heads);
        jget(cfg, "max_seq", pt.max_seq);
        jget(cfg, "epochs", pt.epochs);
        jget(cfg, "target_acc", pt.target_acc);
        jget(cfg, "eval_limit", pt.eval_limit);
        jget(cfg, "lr", pt.lr);
        jget(cfg, "batch", pt.batch);
        jget(cfg, "seed", pt.seed);
        jget(cfg, "init_seed", pt.init_seed);
        jget(cfg, "threads", pt.threads);
        auto* pre = app.add_subcommand("pretrain",
                                       "pretrain a model with next-token prediction on ICL data");
        pre->add_option("--config", config_path, "JSON config file (flags override)");
        pre->add_option("--role", pt.role, "teacher|student (sets size defaults)");
        pre->add_option("--data", pt.data, "training dataset (JSONL)");
        pre->add_option("--eval-data", pt.eval_data, "held-out dataset for exact-match tracking");
        pre->add_option("--out-dir", pt.out_dir, "run directory");
        pre->add_option("--data-fraction", pt.data_fraction, "leading fraction of the data to use");
        pre->add_option("--d-model", pt.d_model, "model width (0 = role default)");
        pre->add_option("--layers", pt.layers, "transformer layers (0 = role default)");
        pre->add_option("--heads", pt.heads, "attention heads");
        pre->add_option("--max-seq", pt.max_seq, "maximum sequence length");
        pre->add_option("--epochs", pt.epochs, "maximum epochs");
        pre->add_option("--target-acc", pt.target_acc,
                        "stop once held-out exact match reaches this (<=0 disables)");
        pre->add_option("--eval-limit", pt.eval_limit, "held-out samples scored per epoch");
        pre->add_option("--lr", pt.lr, "learning rate");
        pre->add_option("--batch", pt.batch, "batch size");
        pre->add_option("--seed", pt.seed, "training seed");
        pre->add_option("--init-seed", pt.init_seed, "parameter init seed");
        pre->add_option("--threads", pt.threads, "worker threads (0 = hardware)");
        pre->callback([&] {
            pt.out_dir = commands::resolve_out_dir(pt.out_dir);
            commands::pretrain(pt);
        });

        // align ---------------------------------------------------------
        jget(cfg, "method", al.method);
        jget(cfg, "teacher", al.teacher_ckpt);
        jget(cfg, "student", al.student_ckpt);
        jget(cfg, "data", al.data);
        jget(cfg, "out_dir", al.out_dir);
        jget(cfg, "lambda", al.lambda);
        jget(cfg, "subsets", al.subsets);
        jget(cfg, "kl_mode", al.kl_mode);
        jget(cfg, "rank_variant", al.rank_variant);
        jget(cfg, "pair_policy", al.pair_policy);
        jget(cfg, "subset_method", al.subset_method);
        jget(cfg, "epochs", al.epochs);
        jget(cfg, "batch", al.batch);
        jget(cfg, "lr", al.lr);
        jget(cfg, "seed", al.seed);
        jget(cfg, "threads", al.threads);
        jget(cfg, "rank_ascending", al.rank_ascending);
        jget(cfg, "eq4_log_space", al.eq4_log_space);
        jget(cfg, "resample_subsets", al.resample_subsets);
        auto* ali = app.add_subcommand("align", "align a student to a teacher on ICL data");
        ali->add_option("--config", config_path, "JSON config file (flags override)");
        ali->add_option("--method", al.method,
                        "vanilla|ft|c-pretrain|output-align|bialign");
        ali->add_option("--teacher", al.teacher_ckpt, "teacher checkpoint");
        ali->add_option("--student", al.student_ckpt, "student checkpoint (starting point)");
        ali->add_option("--data", al.data, "ICL training dataset (JSONL)");
        ali->add_option("--out-dir", al.out_dir, "run directory");
        ali->add_option("--lambda", al.lambda, "ranking loss weight");
        ali->add_option("--subsets", al.subsets, "subsets scored per sample");
        ali->add_option("--kl-mode", al.kl_mode, "whole-sequence|label-only");
        ali->add_option("--rank-variant", al.rank_variant, "eq3|eq4");
        ali->add_option("--pair-policy", al.pair_policy, "all|random:M");
        ali->add_option("--subset-method", al.subset_method, "uniform|size-stratified");
        ali->add_option("--epochs", al.epochs, "training epochs");
        ali->add_option("--batch", al.batch, "batch size");
        ali->add_option("--lr", al.lr, "learning rate");
        ali->add_option("--seed", al.seed, "training seed");
        ali->add_option("--threads", al.threads, "worker threads (0 = hardware)");
        ali->add_flag("--rank-ascending", al.rank_ascending,
                      "rank 1 = lowest preference score instead of highest");
        ali->add_flag("--eq4-log-space", al.eq4_log_space,
                      "evaluate the eq4 hinge on log-probabilities");
        ali->add_flag("--resample-subsets", al.resample_subsets,
                      "draw fresh subsets every epoch");
        ali->callback([&] {
            al.out_dir = commands::resolve_out_dir(al.out_dir);
            commands::align(al);
        });

        // eval ----------------------------------------------------------
        jget(cfg, "checkpoint", ev.checkpoint);
        jget(cfg, "families", ev.families);
        jget(cfg, "train_families", ev.train_families);
        jget(cfg, "k_eval", ev.k_eval);
        jget(cfg, "count", ev.count);
        jget(cfg, "seed", ev.seed);
        jget(cfg, "out_dir", ev.out_dir);
        jget(cfg, "method_id", ev.method_id);
        jget(cfg, "threads", ev.threads);
        auto* evc = app.add_subcommand("eval", "downstream exact-match evaluation on target tasks");
        evc->add_option("--config", config_path, "JSON config file (flags override)");
        evc->add_option("--checkpoint", ev.checkpoint, "model checkpoint");
        evc->add_option("--families", ev.families, "target families (tgt or list)");
        evc->add_option("--train-families", ev.train_families,
                        "families used in training (disjointness check)");
        evc->add_option("--k-eval", ev.k_eval, "demonstrations per evaluation prompt");
        evc->add_option("--count", ev.count, "evaluation samples per family");
        evc->add_option("--seed", ev.seed, "evaluation set seed");
        evc->add_option("--out-dir", ev.out_dir, "run directory");
        evc->add_option("--method-id", ev.method_id, "label for reports");
        evc->add_option("--threads", ev.threads, "worker threads (0 = hardware)");
        evc->callback([&] {
            ev.out_dir = commands::resolve_out_dir(ev.out_dir);
            commands::eval_cmd(ev);
        });

        // consistency ---------------------------------------------------
        jget(cfg, "teacher", co.teacher_ckpt);
        jget(cfg, "student", co.student_ckpt);
        jget(cfg, "families", co.families);
        jget(cfg, "examples", co.examples);
        jget(cfg, "subsets", co.subsets);
        jget(cfg, "k_eval", co.k_eval);
        jget(cfg, "seed", co.seed);
        jget(cfg, "out_dir", co.out_dir);
        jget(cfg, "method_id", co.method_id);
        jget(cfg, "threads", co.threads);
        auto* cons = app.add_subcommand("consistency",
                                        "teacher/student preference score consistency");
        cons->add_option("--config", config_path, "JSON config file (flags override)");
        cons->add_option("--teacher", co.teacher_ckpt, "teacher checkpoint");
        cons->add_option("--student", co.student_ckpt, "student checkpoint");
        cons->add_option("--families", co.families, "evaluation families");
        cons->add_option("--examples", co.examples, "number of examples");
        cons->add_option("--subsets", co.subsets, "subsets per example");
        cons->add_option("--k-eval", co.k_eval, "demonstrations per example");
        cons->add_option("--seed", co.seed, "subset draw seed");
        cons->add_option("--out-dir", co.out_dir, "run directory");
        cons->add_option("--method-id", co.method_id, "label for reports");
        cons->add_option("--threads", co.threads, "worker threads (0 = hardware)");
        cons->callback([&] {
            co.out_dir = commands::resolve_out_dir(co.out_dir);
            commands::consistency_cmd(co);
        });

        // ablate --------------------------------------------------------
        jget(cfg, "grid", ab.grid);
        jget(cfg, "teacher", ab.teacher_ckpt);
        jget(cfg, "student", ab.student_ckpt);
        jget(cfg, "out_dir", ab.out_dir);
        jget(cfg, "seeds", ab.seeds);
        jget(cfg, "lambda", ab.lambda);
        jget(cfg, "subsets", ab.subsets);
        jget(cfg, "epochs", ab.epochs);
        jget(cfg, "batch", ab.batch);
        jget(cfg, "lr", ab.lr);
        jget(cfg, "data_families", ab.data_families);
        jget(cfg, "data_count", ab.data_count);
        jget(cfg, "data_seed", ab.data_seed);
        jget(cfg, "eval_families", ab.eval_families);
        jget(cfg, "k_eval", ab.k_eval);
        jget(cfg, "eval_count", ab.eval_count);
        jget(cfg, "eval_seed", ab.eval_seed);
        jget(cfg, "consistency_examples", ab.consistency_examples);
        jget(cfg, "consistency_subsets", ab.consistency_subsets);
        jget(cfg, "consistency_seed", ab.consistency_seed);
        jget(cfg, "threads", ab.threads);
        auto* abl = app.add_subcommand("ablate", "run the built-in ablation grids");
        abl->add_option("--config", config_path, "JSON config file (flags override)");
        abl->add_option("--grid", ab.grid,
                        "all or comma list of n-subsets,lambda,k-demos,pairs,subset-method,"
                        "kl-mode,rank-variant");
        abl->add_option("--teacher", ab.teacher_ckpt, "teacher checkpoint");
        abl->add_option("--student", ab.student_ckpt, "pretrained student checkpoint");
        abl->add_option("--out-dir", ab.out_dir, "run directory");
        abl->add_option("--seeds", ab.seeds, "comma-separated seeds");
        abl->add_option("--lambda", ab.lambda, "base ranking loss weight");
        abl->add_option("--subsets", ab.subsets, "base subset count");
        abl->add_option("--epochs", ab.epochs, "epochs per run");
        abl->add_option("--batch", ab.batch, "batch size");
        abl->add_option("--lr", ab.lr, "learning rate");
        abl->add_option("--data-families", ab.data_families, "training families");
        abl->add_option("--data-count", ab.data_count, "training samples per run");
        abl->add_option("--data-seed", ab.data_seed, "training data seed");
        abl->add_option("--eval-families", ab.eval_families, "target families");
        abl->add_option("--k-eval", ab.k_eval, "eval demonstrations");
        abl->add_option("--eval-count", ab.eval_count, "eval samples per family");
        abl->add_option("--eval-seed", ab.eval_seed, "eval set seed");
        abl->add_option("--consistency-examples", ab.consistency_examples,
                        "consistency examples");
        abl->add_option("--consistency-subsets", ab.consistency_subsets,
                        "consistency subsets per example");
        abl->add_option("--consistency-seed", ab.consistency_seed, "consistency seed");
        abl->add_option("--threads", ab.threads, "worker threads (0 = hardware)");
        abl->callback([&] {
            ab.out_dir = commands::resolve_out_dir(ab.out_dir);
            commands::ablate(ab);
        });

        // curve ---------------------------------------------------------
        jget(cfg, "run_dir", cu.run_dir);
        jget(cfg, "teacher", cu.teacher_ckpt);
        jget(cfg, "out_dir", cu.out_dir);
        jget(cfg, "families", cu.families);
        jget(cfg, "threads", cu.threads);
        auto* cur = app.add_subcommand("curve",
                                       "evaluate the 25/50/100% checkpoints of an align run");
        cur->add_option("--config", config_path, "JSON config file (flags override)");
        cur->add_option("--run", cu.run_dir, "align run directory");
        cur->add_option("--teacher", cu.teacher_ckpt, "teacher checkpoint (for consistency)");
        cur->add_option("--out-dir", cu.out_dir, "run directory");
        cur->add_option("--families", cu.families, "target families");
        cur->add_option("--eval-count", cu.eval_count, "eval samples per family");
        cur->add_option("--consistency-examples", cu.consistency_examples,
                        "consistency examples");
        cur->add_option("--threads", cu.threads, "worker threads (0 = hardware)");
        cur->callback([&] {
            cu.out_dir = commands::resolve_out_dir(cu.out_dir);
            commands::curve(cu);
        });

        // report --------------------------------------------------------
        auto* rep = app.add_subcommand("report", "merge runs into a method-comparison table");
        rep->add_option("--run", re.run_dirs, "run directory (repeatable)");
        rep->add_option("--out-dir", re.out_dir, "output directory");
        rep->callback([&] {
            re.out_dir = commands::resolve_out_dir(re.out_dir);
            commands::report(re);
        });

        app.parse(argc, argv);
        return exit_code::ok;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_code::ok : exit_code::usage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_code::data;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return exit_code::numerical;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
