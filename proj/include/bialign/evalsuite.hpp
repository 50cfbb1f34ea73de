#pragma once

#include "bialign/distill.hpp"
#include "bialign/model.hpp"
#include "bialign/taskgen.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bialign::evalsuite {

struct EvalReport {
    std::map<std::string, double> family_accuracy; // exact match, [0, 1]
    std::map<std::string, long> family_correct;
    std::map<std::string, long> family_total;
    double macro_average = 0.0; // unweighted mean over families
    long sample_count = 0;
    std::string method_id;
    std::uint64_t seed = 0;
    std::string checkpoint_id;
};

struct ConsistencyReport {
    long n_examples = 0;
    int n_subsets = 0;
    double top_consistency = 0.0;    // argmax subset agreement
    double bottom_consistency = 0.0; // argmin subset agreement
    double combined = 0.0;           // mean of the two
};

// Exact-match accuracy of greedy decoding against the reference answers.
// The prompt is the rendering truncated at the answer span.
double exact_match(const Transformer<float>& model, const std::vector<taskgen::ICLSample>& samples,
                   int threads = 1);

// Same scoring with an arbitrary decoder (test seam for oracle/chance stubs).
double exact_match_with(
    const std::vector<taskgen::ICLSample>& samples,
    const std::function<std::vector<int>(const taskgen::ICLSample&)>& decode);

// Downstream ICL evaluation: a fixed seeded k_eval-shot evaluation set per
// target family (identical across methods for a given seed), scored by exact
// match. train_families, when given, must be disjoint from the targets.
EvalReport downstream_eval(const Transformer<float>& model,
                           const std::vector<taskgen::FamilyId>& target_families, int k_eval,
                           int count_per_family, std::uint64_t seed,
                           const std::vector<taskgen::FamilyId>* train_families = nullptr,
                           int threads = 1);

// Deterministic per-example subset draws for the consistency metric.
std::vector<std::vector<std::vector<int>>> consistency_subsets(
    const std::vector<taskgen::ICLSample>& samples, int n_subsets, std::uint64_t seed);

// scores[i][j] = log Q(subset j | example i) under the model.
std::vector<std::vector<double>> score_subset_table(
    const Transformer<float>& model, const std::vector<taskgen::ICLSample>& samples,
    const std::vector<std::vector<std::vector<int>>>& subsets, int threads = 1);

// Agreement of argmax/argmin subsets between two scorers; ties resolved by
// lowest subset index on both sides.
ConsistencyReport consistency_from_scores(const std::vector<std::vector<double>>& teacher_scores,
                                          const std::vector<std::vector<double>>& student_scores);

ConsistencyReport preference_consistency(const Transformer<float>& student,
                                         const Transformer<float>& teacher,
                                         const std::vector<taskgen::ICLSample>& eval_samples,
                                         int n_subsets, std::uint64_t seed, int threads = 1);

// ---- ablation sweeps -------------------------------------------------------

struct DataConfig {
    std::vector<taskgen::FamilyId> families;
    int count = 2000;
    int k_min = 4;
    int k_max = 10;
    std::uint64_t seed = 7;
    int subsets_n = 4;
    taskgen::SubsetMethod subset_method = taskgen::SubsetMethod::uniform;
    std::uint64_t subset_seed = 8;
};

std::vector<taskgen::ICLSample> materialize(const DataConfig& dc);

struct SweepContext {
    const Transformer<float>* teacher = nullptr;
    const Transformer<float>* student = nullptr; // pretrained starting point
    DataConfig train_data;                        // base: mixed k 4..10
    distill::AlignConfig base;
    std::vector<taskgen::FamilyId> eval_families;
    int k_eval = 5;
    int eval_count_per_family = 500;
    std::uint64_t eval_seed = 97;
    int consistency_examples = 500;
    int consistency_subsets_n = 5;
    std::uint64_t consistency_seed = 98;
    int threads = 1;
};

struct SweepRow {
    std::string sweep;     // grid name
    std::string config_id; // e.g. "lambda=0.5"
    std::uint64_t seed = 0;
    std::string status;    // "ok" or the error message
    distill::AlignConfig config;
    EvalReport eval;
    ConsistencyReport consistency;
};

// Built-in grids: n-subsets {3,4,5,6}; lambda {0.2,0.5,1,2,5};
// k-demos {mixed 4-10, 5, 8, 10}; pairs {random:3, random:4, random:5, all};
// subset-method {uniform, size_stratified}; kl-mode {whole-sequence,
// label-only}; rank-variant {eq3, eq4}. "all" expands to every grid.
std::vector<std::string> builtin_grids();
std::vector<SweepRow> ablation_sweep(const SweepContext& ctx, const std::vector<std::string>& grids,
                                     const std::vector<std::uint64_t>& seeds);

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     const std::vector<taskgen::FamilyId>& eval_families);

// ---- checkpoint curve ------------------------------------------------------

struct CurveRow {
    double fraction = 0.0;
    std::string checkpoint_path;
    EvalReport eval;
    ConsistencyReport consistency;
};

struct CurveOptions {
    std::vector<taskgen::FamilyId> eval_families;
    int k_eval = 5;
    int eval_count_per_family = 500;
    std::uint64_t eval_seed = 97;
    int consistency_examples = 500;
    int consistency_subsets_n = 5;
    std::uint64_t consistency_seed = 98;
    int threads = 1;
};

// Evaluates partial-training checkpoints (missing files raise DataError).
std::vector<CurveRow> checkpoint_curve(const std::vector<std::pair<double, std::string>>& points,
                                       const Transformer<float>& teacher, const CurveOptions& opt);

// ---- report emission -------------------------------------------------------

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports,
                    const std::vector<taskgen::FamilyId>& families);
// JSON summary with per-seed rows plus medians per method.
void write_summary_json(const std::string& path, const std::vector<EvalReport>& evals,
                        const std::vector<ConsistencyReport>& consistencies,
                        const std::vector<std::string>& labels);

// Minimal figures-as-files output.
void write_svg_bars(const std::string& path, const std::vector<std::string>& labels,
                    const std::vector<double>& values, const std::string& title);
void write_svg_curve(const std::string& path, const std::vector<double>& xs,
                     const std::vector<std::vector<double>>& series,
                     const std::vector<std::string>& series_labels, const std::string& title);

double median(std::vector<double> v);

} // namespace bialign::evalsuite
