#pragma once

#include "bialign/model.hpp"
#include "bialign/ops.hpp"
#include "bialign/taskgen.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bialign::distill {

enum class Method { vanilla, ft, c_pretrain, output_align, bialign };
const char* method_name(Method m);
Method method_from_name(const std::string& name);

enum class KlMode { whole_sequence, label_only };
const char* kl_mode_name(KlMode m);
KlMode kl_mode_from_name(const std::string& name);

enum class RankVariant { eq3, hinge_eq4 };
const char* rank_variant_name(RankVariant v);
RankVariant rank_variant_from_name(const std::string& name);

// Contrastive pair selection: every teacher-ordered pair, or a random draw of
// M of them per sample.
struct PairPolicy {
    bool all_pairs = true;
    int random_m = 0;

    static PairPolicy all() { return {true, 0}; }
    static PairPolicy random(int m) { return {false, m}; }
    std::string to_string() const;
    static PairPolicy parse(const std::string& s);
    bool operator==(const PairPolicy&) const = default;
};

struct AlignConfig {
    Method method = Method::bialign;
    double lambda = 1.0;   // weight of the ranking loss
    int subsets_n = 4;     // subsets scored per sample
    KlMode kl_mode = KlMode::whole_sequence;
    RankVariant rank_variant = RankVariant::eq3;
    PairPolicy pair_policy = PairPolicy::all();
    taskgen::SubsetMethod subset_method = taskgen::SubsetMethod::uniform;
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 3e-4;
    std::uint64_t seed = 1;
    double range_epsilon = 1e-8; // below this the score-range term is defined as 0
    bool rank_ascending = false; // flip the rank direction (rank 1 = lowest score)
    bool eq4_log_space = false;  // score the hinge variant on log-probabilities
    bool resample_subsets_per_epoch = false;
    double clip_norm = 1.0; // global gradient-norm clip; 0 disables
    int warmup_steps = -1;  // linear lr warmup; -1 = 5% of total steps, 0 = none
    int threads = 1;        // 0 = hardware concurrency

    void validate() const;
};

// Per-subset scores for one sample. Teacher scores are plain numbers (the
// teacher is frozen); student scores stay on the tape.
template <class Real>
struct PreferenceTable {
    std::vector<double> teacher_log_scores;
    std::vector<Tensor<Real>> student_log_scores;
    std::vector<int> teacher_ranks; // bijection onto {1..N} given distinct scores
};

struct LossBreakdown {
    double kl = 0.0;
    double rank = 0.0;
    double total = 0.0;
    long tokens_counted = 0;
    long pairs_counted = 0;
};

struct TraceRow {
    long step = 0;
    LossBreakdown loss;
    double lr = 0.0;
};

// Highest score gets rank 1 (descending); ties broken by lower index.
std::vector<int> rank_descending(const std::vector<double>& scores);
std::vector<int> rank_ascending(const std::vector<double>& scores);

// Teacher-ordered (positive, negative) index pairs; exact teacher ties are
// skipped. rng is consulted only for PairPolicy::random.
std::vector<std::pair<int, int>> select_pairs(const std::vector<double>& teacher_log_scores,
                                              const PairPolicy& policy, Rng* rng);

// log Q(R_ij) for each subset: span log-probability of the answer under the
// subset rendering. Pass g == nullptr for frozen-model scoring.
template <class Real>
std::vector<Tensor<Real>> preference_scores(Graph<Real>* g, const Transformer<Real>& model,
                                            const taskgen::ICLSample& sample,
                                            const std::vector<std::vector<int>>& subsets) {
    std::vector<Tensor<Real>> out;
    out.reserve(subsets.size());
    for (const auto& idx : subsets) {
        const auto sel = taskgen::render_subset(sample, idx);
        out.push_back(model.span_log_prob(g, sel.tokens, sel.answer_span.begin,
                                          sel.answer_span.end));
    }
    return out;
}

template <class Real>
PreferenceTable<Real> build_preference_table(std::vector<double> teacher_log_scores,
                                             std::vector<Tensor<Real>> student_log_scores,
                                             bool ascending = false) {
    PreferenceTable<Real> t;
    t.teacher_ranks = ascending ? rank_ascending(teacher_log_scores)
                                : rank_descending(teacher_log_scores);
    t.teacher_log_scores = std::move(teacher_log_scores);
    t.student_log_scores = std::move(student_log_scores);
    return t;
}

// Sum over unmasked predicted positions of KL(teacher || student), where row r
// of the log-prob tensors predicts token r+1 of the sample rendering.
// whole_sequence counts every predicted position; label_only restricts to the
// answer span.
template <class Real>
struct SummedLoss {
    Tensor<Real> loss_sum;
    long counted = 0;
};

template <class Real>
SummedLoss<Real> kl_alignment_loss(Graph<Real>* g, const Tensor<Real>& teacher_logprobs,
                                   const Tensor<Real>& student_logprobs,
                                   const taskgen::ICLSample& sample, KlMode mode) {
    const int rows = static_cast<int>(sample.tokens.size()) - 1;
    if (teacher_logprobs.rows() != rows || student_logprobs.rows() != rows)
        throw UsageError("kl_alignment_loss: log-prob rows do not match the sample rendering");
    std::vector<char> mask(static_cast<std::size_t>(rows), 0);
    long counted = 0;
    if (mode == KlMode::whole_sequence) {
        std::fill(mask.begin(), mask.end(), 1);
        counted = rows;
    } else {
        for (int r = sample.answer_span.begin - 1; r < sample.answer_span.end - 1; ++r) {
            if (r < 0 || r >= rows)
                throw UsageError("kl_alignment_loss: answer span outside rendering");
            mask[static_cast<std::size_t>(r)] = 1;
            ++counted;
        }
    }
    return {ops::kl_rowwise(g, teacher_logprobs, student_logprobs, mask), counted};
}

// Margin ranking loss over subset preference scores. For each teacher-ordered
// pair (R+, R-):
//   max{0, (s- - s+)/range + (rank(R-) - rank(R+))/(N-1)}
// with s the student log-scores and range = max_j s_j - min_j s_j held
// constant (no gradient); when range < range_epsilon the left term is 0.
template <class Real>
SummedLoss<Real> ranking_loss_eq3(Graph<Real>* g, const PreferenceTable<Real>& table,
                                  const std::vector<std::pair<int, int>>& pairs,
                                  double range_epsilon) {
    const int n = static_cast<int>(table.student_log_scores.size());
    if (n < 2 || pairs.empty()) return {Tensor<Real>::scalar(Real(0)), 0};
    double lo = table.student_log_scores[0].value(), hi = lo;
    for (const auto& s : table.student_log_scores) {
        lo = std::min(lo, double(s.value()));
        hi = std::max(hi, double(s.value()));
    }
    const double range = hi - lo;
    const Real inv_range = range < range_epsilon ? Real(0) : Real(1.0 / range);
    Tensor<Real> acc;
    for (const auto& [pos, neg] : pairs) {
        const Real margin = Real(table.teacher_ranks[static_cast<std::size_t>(neg)] -
                                 table.teacher_ranks[static_cast<std::size_t>(pos)]) /
                            Real(n - 1);
        auto diff = ops::sub(g, table.student_log_scores[static_cast<std::size_t>(neg)],
                             table.student_log_scores[static_cast<std::size_t>(pos)]);
        auto term = ops::relu(g, ops::add_scalar(g, ops::scale(g, diff, inv_range), margin));
        acc = acc.defined() ? ops::add(g, acc, term) : term;
    }
    return {acc, static_cast<long>(pairs.size())};
}

// Hinge variant in probability space:
//   max{0, (Q_T(R+) - Q_T(R-)) - (Q_S(R+) - Q_S(R-))}
// with Q = exp(log-score); log_space swaps in the log-scores unchanged.
template <class Real>
SummedLoss<Real> ranking_loss_eq4(Graph<Real>* g, const PreferenceTable<Real>& table,
                                  const std::vector<std::pair<int, int>>& pairs,
                                  bool log_space = false) {
    if (table.student_log_scores.size() < 2 || pairs.empty())
        return {Tensor<Real>::scalar(Real(0)), 0};
    Tensor<Real> acc;
    for (const auto& [pos, neg] : pairs) {
        const double tp = table.teacher_log_scores[static_cast<std::size_t>(pos)];
        const double tn = table.teacher_log_scores[static_cast<std::size_t>(neg)];
        const Real teacher_gap = log_space ? Real(tp - tn) : Real(std::exp(tp) - std::exp(tn));
        auto sp = table.student_log_scores[static_cast<std::size_t>(pos)];
        auto sn = table.student_log_scores[static_cast<std::size_t>(neg)];
        if (!log_space) {
            sp = ops::exp_ew(g, sp);
            sn = ops::exp_ew(g, sn);
        }
        auto term = ops::relu(
            g, ops::add_scalar(g, ops::scale(g, ops::sub(g, sp, sn), Real(-1)), teacher_gap));
        acc = acc.defined() ? ops::add(g, acc, term) : term;
    }
    return {acc, static_cast<long>(pairs.size())};
}

// Cross-entropy over the given predicted rows (negated log-likelihood sum).
template <class Real>
SummedLoss<Real> cross_entropy_rows(Graph<Real>* g, const Tensor<Real>& student_logprobs,
                                    const std::vector<int>& tokens, int row_begin, int row_end) {
    std::vector<int> rows, cols;
    for (int r = row_begin; r < row_end; ++r) {
        rows.push_back(r);
        cols.push_back(tokens[static_cast<std::size_t>(r) + 1]);
    }
    auto picked = ops::select_sum(g, student_logprobs, rows, cols);
    return {ops::scale(g, picked, Real(-1)), static_cast<long>(rows.size())};
}

// Precomputed frozen-teacher quantities, reusable across epochs and runs on
// the same (teacher, dataset) pair.
class TeacherCache {
public:
    TeacherCache(const Transformer<float>& teacher, const std::vector<taskgen::ICLSample>& data,
                 int threads);

    // Teacher next-token log-probs for the full rendering, [T-1, vocab].
    const Tensor<float>& full_logprobs(std::size_t sample_idx);
    double subset_score(std::size_t sample_idx, const std::vector<int>& subset);

    void ensure_full_logprobs(const std::vector<taskgen::ICLSample>& data);
    void ensure_subset_scores(const std::vector<taskgen::ICLSample>& data);

private:
    static std::uint64_t subset_key(const std::vector<int>& subset);
    const Transformer<float>& teacher_;
    int threads_;
    std::vector<Tensor<float>> full_;
    std::vector<std::map<std::uint64_t, double>> scores_;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    long total_steps = 0;
    int epochs_run = 0;
};

// Called after every optimizer step (for checkpoint cadence).
using StepCallback = std::function<void(long step, long total_steps)>;
// Called after every epoch with the epoch-averaged losses; return false to
// stop early (used by accuracy-targeted pretraining).
using EpochCallback = std::function<bool(int epoch, const LossBreakdown& avg)>;

// One alignment/pretraining run. The teacher is read-only and may be null for
// methods that do not use it; `cache` may be shared across runs and is
// created on demand otherwise.
TrainResult train(const AlignConfig& cfg, const Transformer<float>* teacher,
                  Transformer<float>& student, std::vector<taskgen::ICLSample> data,
                  TeacherCache* cache = nullptr, const StepCallback& on_step = {},
                  const EpochCallback& on_epoch = {});

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

} // namespace bialign::distill
