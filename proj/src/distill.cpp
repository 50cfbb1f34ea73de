#include "bialign/distill.hpp"

#include "bialign/csvio.hpp"
#include "bialign/threadpool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace bialign::distill {

const char* method_name(Method m) {
    switch (m) {
        case Method::vanilla: return "vanilla";
        case Method::ft: return "ft";
        case Method::c_pretrain: return "c-pretrain";
        case Method::output_align: return "output-align";
        case Method::bialign: return "bialign";
    }
    throw UsageError("unknown method");
}

Method method_from_name(const std::string& name) {
    for (Method m : {Method::vanilla, Method::ft, Method::c_pretrain, Method::output_align,
                     Method::bialign})
        if (name == method_name(m)) return m;
    throw UsageError("unknown method '" + name +
                     "' (valid: vanilla, ft, c-pretrain, output-align, bialign)");
}

const char* kl_mode_name(KlMode m) {
    return m == KlMode::whole_sequence ? "whole-sequence" : "label-only";
}

KlMode kl_mode_from_name(const std::string& name) {
    if (name == "whole-sequence" || name == "whole_sequence") return KlMode::whole_sequence;
    if (name == "label-only" || name == "label_only") return KlMode::label_only;
    throw ConfigError("unknown kl mode: " + name);
}

const char* rank_variant_name(RankVariant v) { return v == RankVariant::eq3 ? "eq3" : "eq4"; }

RankVariant rank_variant_from_name(const std::string& name) {
    if (name == "eq3") return RankVariant::eq3;
    if (name == "eq4") return RankVariant::hinge_eq4;
    throw ConfigError("unknown rank variant: " + name);
}

std::string PairPolicy::to_string() const {
    return all_pairs ? "all" : ("random:" + std::to_string(random_m));
}

PairPolicy PairPolicy::parse(const std::string& s) {
    if (s == "all") return PairPolicy::all();
    if (s.rfind("random:", 0) == 0) {
        const int m = std::stoi(s.substr(7));
        if (m < 1) throw ConfigError("pair policy random:M requires M >= 1");
        return PairPolicy::random(m);
    }
    throw ConfigError("unknown pair policy '" + s + "' (valid: all, random:M)");
}

void AlignConfig::validate() const {
    if (lambda < 0) throw ConfigError("align config: lambda must be >= 0");
    if (method == Method::bialign && subsets_n < 2)
        throw ConfigError("align config: bialign needs at least 2 subsets");
    if (epochs < 0 || batch_size < 1) throw ConfigError("align config: bad epochs/batch_size");
    if (learning_rate <= 0) throw ConfigError("align config: learning rate must be > 0");
    if (range_epsilon <= 0) throw ConfigError("align config: range_epsilon must be > 0");
    if (!pair_policy.all_pairs && pair_policy.random_m < 1)
        throw ConfigError("align config: random pair policy needs M >= 1");
}

std::vector<int> rank_descending(const std::vector<double>& scores) {
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> ranks(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r + 1;
    return ranks;
}

std::vector<int> rank_ascending(const std::vector<double>& scores) {
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> ranks(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r + 1;
    return ranks;
}

std::vector<std::pair<int, int>> select_pairs(const std::vector<double>& teacher_log_scores,
                                              const PairPolicy& policy, Rng* rng) {
    std::vector<std::pair<int, int>> oriented;
    const int n = static_cast<int>(teacher_log_scores.size());
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double ti = teacher_log_scores[static_cast<std::size_t>(i)];
            const double tj = teacher_log_scores[static_cast<std::size_t>(j)];
            if (ti == tj) continue; // no defined positive
            if (ti > tj) oriented.emplace_back(i, j);
            else oriented.emplace_back(j, i);
        }
    }
    if (policy.all_pairs || static_cast<int>(oriented.size()) <= policy.random_m) return oriented;
    if (!rng) throw UsageError("select_pairs: random pair policy needs an rng");
    std::vector<std::pair<int, int>> picked;
    picked.reserve(static_cast<std::size_t>(policy.random_m));
    for (int idx : rng->choice(static_cast<int>(oriented.size()), policy.random_m))
        picked.push_back(oriented[static_cast<std::size_t>(idx)]);
    return picked;
}

// ---- TeacherCache ----------------------------------------------------------

TeacherCache::TeacherCache(const Transformer<float>& teacher,
                           const std::vector<taskgen::ICLSample>& data, int threads)
    : teacher_(teacher), threads_(threads) {
    full_.resize(data.size());
    scores_.resize(data.size());
}

std::uint64_t TeacherCache::subset_key(const std::vector<int>& subset) {
    std::uint64_t mask = 0;
    for (int i : subset) mask |= (1ull << i);
    return mask;
}

const Tensor<float>& TeacherCache::full_logprobs(std::size_t sample_idx) {
    const auto& t = full_.at(sample_idx);
    if (!t.defined()) throw UsageError("TeacherCache: full log-probs not precomputed");
    return t;
}

double TeacherCache::subset_score(std::size_t sample_idx, const std::vector<int>& subset) {
    const auto& m = scores_.at(sample_idx);
    const auto it = m.find(subset_key(subset));
    if (it == m.end()) throw UsageError("TeacherCache: subset score not precomputed");
    return it->second;
}

void TeacherCache::ensure_full_logprobs(const std::vector<taskgen::ICLSample>& data) {
    if (data.size() != full_.size()) throw UsageError("TeacherCache: dataset size mismatch");
    ThreadPool pool(static_cast<std::size_t>(threads_));
    std::vector<std::exception_ptr> errors(pool.size());
    pool.parallel_for(pool.size(), [&](std::size_t slot) {
        try {
            for (std::size_t i = slot; i < data.size(); i += pool.size()) {
                if (full_[i].defined()) continue;
                const auto& toks = data[i].tokens;
                auto logits = teacher_.forward(nullptr, toks);
                auto sliced =
                    ops::slice_rows<float>(nullptr, logits, 0, static_cast<int>(toks.size()) - 1);
                full_[i] = ops::log_softmax<float>(nullptr, sliced);
            }
        } catch (...) {
            errors[slot] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void TeacherCache::ensure_subset_scores(const std::vector<taskgen::ICLSample>& data) {
    if (data.size() != scores_.size()) throw UsageError("TeacherCache: dataset size mismatch");
    ThreadPool pool(static_cast<std::size_t>(threads_));
    std::vector<std::exception_ptr> errors(pool.size());
    pool.parallel_for(pool.size(), [&](std::size_t slot) {
        try {
            for (std::size_t i = slot; i < data.size(); i += pool.size()) {
                auto& m = scores_[i];
                for (const auto& subset : data[i].subsets) {
                    const std::uint64_t key = subset_key(subset);
                    if (m.count(key)) continue;
                    const auto sel = taskgen::render_subset(data[i], subset);
                    m[key] = teacher_
                                 .span_log_prob(nullptr, sel.tokens, sel.answer_span.begin,
                                                sel.answer_span.end)
                                 .value();
                }
            }
        } catch (...) {
            errors[slot] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---- training loop ---------------------------------------------------------

namespace {

struct SampleResult {
    double kl_sum = 0.0;
    double rank_sum = 0.0;
    std::exception_ptr error;
};

int resolve_threads(int threads) {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

long kl_rows_for(const AlignConfig& cfg, const taskgen::ICLSample& s) {
    switch (cfg.method) {
        case Method::c_pretrain: return static_cast<long>(s.tokens.size()) - 1;
        case Method::ft: return s.answer_span.end - s.answer_span.begin;
        case Method::output_align:
        case Method::bialign:
            return cfg.kl_mode == KlMode::whole_sequence
                       ? static_cast<long>(s.tokens.size()) - 1
                       : s.answer_span.end - s.answer_span.begin;
        case Method::vanilla: return 0;
    }
    return 0;
}

} // namespace

TrainResult train(const AlignConfig& cfg, const Transformer<float>* teacher,
                  Transformer<float>& student, std::vector<taskgen::ICLSample> data,
                  TeacherCache* cache, const StepCallback& on_step, const EpochCallback& on_epoch) {
    cfg.validate();
    TrainResult result;
    if (cfg.method == Method::vanilla) return result; // no-op: student passes through
    if (data.empty()) throw DataError("train: empty dataset");

    const bool needs_teacher =
        cfg.method == Method::output_align || cfg.method == Method::bialign;
    if (needs_teacher && !teacher)
        throw ConfigError("train: method requires a teacher checkpoint");
    const bool rank_active = cfg.method == Method::bialign && cfg.lambda > 0.0;

    const int threads = resolve_threads(cfg.threads);

    // Subset provenance: keep dataset-attached subsets when they match the
    // config (fixed-per-dataset default); otherwise draw fresh ones here.
    if (rank_active) {
        const bool attached_ok =
            cfg.subset_method == taskgen::SubsetMethod::uniform &&
            std::all_of(data.begin(), data.end(), [&](const taskgen::ICLSample& s) {
                return static_cast<int>(s.subsets.size()) == cfg.subsets_n;
            });
        if (!attached_ok)
            taskgen::attach_subsets(data, cfg.subsets_n, cfg.subset_method,
                                    Rng::derive(cfg.seed, 0x50b5));
    } else {
        for (auto& s : data) s.subsets.clear();
    }

    std::optional<TeacherCache> local_cache;
    if (needs_teacher && !cache) {
        local_cache.emplace(*teacher, data, threads);
        cache = &*local_cache;
    }
    if (needs_teacher) {
        cache->ensure_full_logprobs(data);
        if (rank_active) cache->ensure_subset_scores(data);
    }

    AdamState<float> adam(static_cast<float>(cfg.learning_rate));
    Rng order_rng(Rng::derive(cfg.seed, 0x0d3c));

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    const long steps_per_epoch =
        static_cast<long>((data.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                          static_cast<std::size_t>(cfg.batch_size));
    result.total_steps = steps_per_epoch * cfg.epochs;

    ThreadPool pool(static_cast<std::size_t>(threads));
    std::vector<Transformer<float>> shadows;
    shadows.reserve(pool.size());
    for (std::size_t w = 0; w < pool.size(); ++w) shadows.push_back(student.shadow());

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (rank_active && cfg.resample_subsets_per_epoch && epoch > 0) {
            taskgen::attach_subsets(data, cfg.subsets_n, cfg.subset_method,
                                    Rng::derive(cfg.seed, 0xE60C + static_cast<std::uint64_t>(epoch)));
            cache->ensure_subset_scores(data);
        }
        order_rng.shuffle(order);

        LossBreakdown epoch_sum;
        long epoch_steps = 0;

        for (std::size_t batch_begin = 0; batch_begin < data.size();
             batch_begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t batch_end =
                std::min(data.size(), batch_begin + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t batch_n = batch_end - batch_begin;

            // Fixed normalizers for the batch, known before any forward pass.
            long tokens_total = 0;
            long pairs_total = 0;
            std::vector<std::vector<std::pair<int, int>>> batch_pairs(batch_n);
            std::vector<std::vector<double>> batch_tscores(batch_n);
            for (std::size_t b = 0; b < batch_n; ++b) {
                const auto& s = data[order[batch_begin + b]];
                tokens_total += kl_rows_for(cfg, s);
                if (rank_active && static_cast<int>(s.subsets.size()) >= 2) {
                    auto& tscores = batch_tscores[b];
                    tscores.reserve(s.subsets.size());
                    for (const auto& subset : s.subsets)
                        tscores.push_back(cache->subset_score(order[batch_begin + b], subset));
                    Rng pair_rng(Rng::derive(cfg.seed, 0xFA1200000000ull +
                                                           static_cast<std::uint64_t>(step) * 4096 + b));
                    batch_pairs[b] = select_pairs(tscores, cfg.pair_policy, &pair_rng);
                    pairs_total += static_cast<long>(batch_pairs[b].size());
                }
            }

            std::vector<SampleResult> results(batch_n);
            const double inv_tokens = tokens_total > 0 ? 1.0 / double(tokens_total) : 0.0;
            const double inv_pairs = pairs_total > 0 ? 1.0 / double(pairs_total) : 0.0;

            // Each worker accumulates gradients for its sample stripe in its
            // shadow copy; stripes are reduced in worker order afterwards, so
            // a run is deterministic for a fixed thread count.
            pool.parallel_for(pool.size(), [&](std::size_t slot) {
                auto& shadow = shadows[slot];
                for (std::size_t b = slot; b < batch_n; b += pool.size()) {
                    auto& res = results[b];
                    try {
                        const std::size_t sample_idx = order[batch_begin + b];
                        const auto& s = data[sample_idx];
                        Graph<float> g;
                        Tensor<float> z;

                        const int t_len = static_cast<int>(s.tokens.size());
                        auto logits = shadow.forward(&g, s.tokens);
                        auto lp = ops::log_softmax(
                            &g, ops::slice_rows(&g, logits, 0, t_len - 1));

                        SummedLoss<float> main_loss;
                        switch (cfg.method) {
                            case Method::c_pretrain:
                                main_loss = cross_entropy_rows(&g, lp, s.tokens, 0, t_len - 1);
                                break;
                            case Method::ft:
                                main_loss = cross_entropy_rows(&g, lp, s.tokens,
                                                               s.answer_span.begin - 1,
                                                               s.answer_span.end - 1);
                                break;
                            default:
                                main_loss = kl_alignment_loss(&g, cache->full_logprobs(sample_idx),
                                                              lp, s, cfg.kl_mode);
                                break;
                        }
                        res.kl_sum = main_loss.loss_sum.value();
                        z = ops::scale(&g, main_loss.loss_sum, static_cast<float>(inv_tokens));

                        if (rank_active && !batch_pairs[b].empty()) {
                            auto sscores = preference_scores(&g, shadow, s, s.subsets);
                            auto table = build_preference_table(batch_tscores[b],
                                                                std::move(sscores),
                                                                cfg.rank_ascending);
                            SummedLoss<float> rank =
                                cfg.rank_variant == RankVariant::eq3
                                    ? ranking_loss_eq3(&g, table, batch_pairs[b],
                                                       cfg.range_epsilon)
                                    : ranking_loss_eq4(&g, table, batch_pairs[b],
                                                       cfg.eq4_log_space);
                            res.rank_sum = rank.loss_sum.value();
                            z = ops::add(&g, z,
                                         ops::scale(&g, rank.loss_sum,
                                                    static_cast<float>(cfg.lambda * inv_pairs)));
                        }

                        if (!std::isfinite(double(z.value())))
                            throw NumericalError("non-finite loss at sample " + s.id);
                        g.backward(z);
                    } catch (...) {
                        res.error = std::current_exception();
                    }
                }
            });

            for (std::size_t b = 0; b < batch_n; ++b)
                if (results[b].error) std::rethrow_exception(results[b].error);

            // Worker-order reduction of the stripe gradients.
            student.zero_grad();
            const auto& K = kernels::table<float>();
            auto& params = student.params();
            for (auto& shadow : shadows) {
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto& sp = shadow.params()[p];
                    if (!sp.has_grad()) continue;
                    params[p].ensure_grad();
                    K.axpy(1.0f, sp.grad_data(), params[p].grad_data(), sp.numel());
                    sp.zero_grad();
                }
            }

            if (cfg.clip_norm > 0) {
                double norm_sq = 0;
                for (auto& p : params)
                    if (p.has_grad())
                        norm_sq += double(K.dot(p.grad_data(), p.grad_data(), p.numel()));
                const double norm = std::sqrt(norm_sq);
                if (norm > cfg.clip_norm) {
                    const float scale = static_cast<float>(cfg.clip_norm / norm);
                    for (auto& p : params)
                        if (p.has_grad()) K.scale(scale, p.grad_data(), p.grad_data(), p.numel());
                }
            }

            const long warmup = cfg.warmup_steps >= 0
                                    ? cfg.warmup_steps
                                    : std::max<long>(1, result.total_steps / 20);
            const double lr_now =
                warmup > 0 && step < warmup
                    ? cfg.learning_rate * double(step + 1) / double(warmup)
                    : cfg.learning_rate;
            adam.step(params, static_cast<float>(lr_now));

            TraceRow row;
            row.step = ++step;
            double kl_sum = 0, rank_sum = 0;
            for (const auto& r : results) {
                kl_sum += r.kl_sum;
                rank_sum += r.rank_sum;
            }
            row.loss.kl = kl_sum * inv_tokens;
            row.loss.rank = rank_sum * inv_pairs;
            row.loss.total = row.loss.kl + cfg.lambda * row.loss.rank;
            row.loss.tokens_counted = tokens_total;
            row.loss.pairs_counted = pairs_total;
            row.lr = lr_now;
            result.trace.push_back(row);

            epoch_sum.kl += row.loss.kl;
            epoch_sum.rank += row.loss.rank;
            epoch_sum.total += row.loss.total;
            epoch_sum.tokens_counted += row.loss.tokens_counted;
            epoch_sum.pairs_counted += row.loss.pairs_counted;
            ++epoch_steps;

            if (on_step) on_step(step, result.total_steps);
        }

        result.epochs_run = epoch + 1;
        if (on_epoch) {
            LossBreakdown avg = epoch_sum;
            if (epoch_steps > 0) {
                avg.kl /= double(epoch_steps);
                avg.rank /= double(epoch_steps);
                avg.total /= double(epoch_steps);
            }
            if (!on_epoch(epoch, avg)) break;
        }
    }
    return result;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    csvio::Table t;
    t.header = {"step", "kl", "rank", "total", "lr", "tokens", "pairs"};
    for (const auto& row : trace)
        t.rows.push_back({std::to_string(row.step), csvio::g17(row.loss.kl),
                          csvio::g17(row.loss.rank), csvio::g17(row.loss.total),
                          csvio::g17(row.lr), std::to_string(row.loss.tokens_counted),
                          std::to_string(row.loss.pairs_counted)});
    csvio::write(path, t);
}

} // namespace bialign::distill
