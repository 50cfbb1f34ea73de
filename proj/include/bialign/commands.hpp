#pragma once

#include "bialign/distill.hpp"
#include "bialign/evalsuite.hpp"

#include <cstdint>
#include <string>
#include <vector>

// Implementations behind the CLI subcommands. Each run command freezes its
// fully resolved options (plus the tool version) into <out_dir>/config.json
// and writes artifacts under checkpoints/, traces/, and reports/.
namespace bialign::commands {

// Applies BIALIGN_OUT_ROOT to relative paths.
std::string resolve_out_dir(const std::string& dir);

struct GenDataOptions {
    std::string out;
    std::string families = "src";
    int count = 2000;
    int k_min = 4;
    int k_max = 10;
    int subsets = 4;
    std::string subset_method = "uniform";
    std::uint64_t seed = 7;
    bool force = false;
};
void gen_data(const GenDataOptions& opt);

struct PretrainOptions {
    std::string role = "teacher";
    std::string data;
    std::string eval_data;
    std::string out_dir;
    double data_fraction = 1.0; // leading fraction of the training file
    int d_model = 0;            // 0 = role default
    int layers = 0;             // 0 = role default
    int heads = 4;
    int max_seq = 128;
    int epochs = 30;          // upper bound
    double target_acc = 0.9;  // early stop on held-out exact match; <= 0 disables
    int eval_limit = 300;     // held-out samples scored per epoch
    double lr = 3e-4;
    int batch = 32;
    std::uint64_t seed = 1;
    std::uint64_t init_seed = 1;
    int threads = 1;
};
struct PretrainOutcome {
    std::string checkpoint;
    double final_accuracy = 0.0;
    int epochs_run = 0;
    bool reached_target = false;
};
PretrainOutcome pretrain(const PretrainOptions& opt);

struct AlignOptions {
    std::string method = "bialign";
    std::string teacher_ckpt;
    std::string student_ckpt;
    std::string data;
    std::string out_dir;
    double lambda = 1.0;
    int subsets = 4;
    std::string kl_mode = "whole-sequence";
    std::string rank_variant = "eq3";
    std::string pair_policy = "all";
    std::string subset_method = "uniform";
    int epochs = 10;
    int batch = 32;
    double lr = 3e-4;
    std::uint64_t seed = 1;
    int threads = 1;
    bool rank_ascending = false;
    bool eq4_log_space = false;
    bool resample_subsets = false;
};
struct AlignOutcome {
    std::string final_checkpoint;
    // checkpoint cadence: fraction -> path (25/50/100% of steps)
    std::vector<std::pair<double, std::string>> cadence;
};
// May reuse a shared teacher cache (in-process orchestration); pass nullptr
// to build one internally.
AlignOutcome align(const AlignOptions& opt, distill::TeacherCache* shared_cache = nullptr);

struct EvalOptions {
    std::string checkpoint;
    std::string families = "tgt";
    std::string train_families = "src"; // disjointness check
    int k_eval = 5;
    int count = 500;
    std::uint64_t seed = 97;
    std::string out_dir; // reports land in <out_dir>/reports/
    std::string method_id;
    int threads = 1;
};
evalsuite::EvalReport eval_cmd(const EvalOptions& opt);

struct ConsistencyOptions {
    std::string teacher_ckpt;
    std::string student_ckpt;
    std::string families = "tgt";
    int examples = 500;
    int subsets = 5;
    int k_eval = 5;
    std::uint64_t seed = 98;
    std::string out_dir;
    std::string method_id;
    int threads = 1;
};
evalsuite::ConsistencyReport consistency_cmd(const ConsistencyOptions& opt);

struct AblateOptions {
    std::string grid = "all"; // comma list or "all"
    std::string teacher_ckpt;
    std::string student_ckpt;
    std::string out_dir;
    std::string seeds = "1,2,3";
    // base align config
    double lambda = 1.0;
    int subsets = 4;
    int epochs = 10;
    int batch = 32;
    double lr = 3e-4;
    // training data config
    std::string data_families = "src";
    int data_count = 2000;
    std::uint64_t data_seed = 7;
    // evaluation config
    std::string eval_families = "tgt";
    int k_eval = 5;
    int eval_count = 500;
    std::uint64_t eval_seed = 97;
    int consistency_examples = 500;
    int consistency_subsets = 5;
    std::uint64_t consistency_seed = 98;
    int threads = 1;
};
std::vector<evalsuite::SweepRow> ablate(const AblateOptions& opt);

struct CurveOptions {
    std::string run_dir; // an align run with cadence checkpoints
    std::string teacher_ckpt;
    std::string out_dir;
    std::string families = "tgt";
    int k_eval = 5;
    int eval_count = 500;
    std::uint64_t eval_seed = 97;
    int consistency_examples = 500;
    int consistency_subsets = 5;
    std::uint64_t consistency_seed = 98;
    int threads = 1;
};
std::vector<evalsuite::CurveRow> curve(const CurveOptions& opt);

struct ReportOptions {
    std::vector<std::string> run_dirs; // dirs containing reports/eval.json
    std::string out_dir;
};
// Merges per-run reports into a method-comparison table (methods x families
// plus average), per-seed rows plus per-method medians, and consistency bars.
void report(const ReportOptions& opt);

} // namespace bialign::commands
