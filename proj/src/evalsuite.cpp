#include "bialign/evalsuite.hpp"

#include "bialign/csvio.hpp"
#include "bialign/threadpool.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace bialign::evalsuite {

using nlohmann::json;

namespace {

int resolve_threads(int threads) {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// max_new: longest answer in the corpus is 3 tokens; leave room for a stray
// token before the stop test fires
constexpr int kMaxNewTokens = 5;

bool decode_matches(const Transformer<float>& model, const taskgen::ICLSample& s) {
    const std::vector<int> prompt(s.tokens.begin(), s.tokens.begin() + s.answer_span.begin);
    const auto decoded = model.greedy_decode(prompt, kMaxNewTokens, taskgen::vocab::eos);
    return decoded == s.query.output;
}

} // namespace

double median(std::vector<double> v) {
    if (v.empty()) throw UsageError("median of empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double exact_match_with(
    const std::vector<taskgen::ICLSample>& samples,
    const std::function<std::vector<int>(const taskgen::ICLSample&)>& decode) {
    if (samples.empty()) throw UsageError("exact_match_with: empty sample list");
    long correct = 0;
    for (const auto& s : samples)
        if (decode(s) == s.query.output) ++correct;
    return double(correct) / double(samples.size());
}

double exact_match(const Transformer<float>& model, const std::vector<taskgen::ICLSample>& samples,
                   int threads) {
    if (samples.empty()) throw UsageError("exact_match: empty sample list");
    ThreadPool pool(static_cast<std::size_t>(resolve_threads(threads)));
    std::vector<char> hits(samples.size(), 0);
    std::vector<std::exception_ptr> errors(pool.size());
    pool.parallel_for(pool.size(), [&](std::size_t slot) {
        try {
            for (std::size_t i = slot; i < samples.size(); i += pool.size())
                hits[i] = decode_matches(model, samples[i]) ? 1 : 0;
        } catch (...) {
            errors[slot] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    long correct = 0;
    for (char h : hits) correct += h;
    return double(correct) / double(samples.size());
}

EvalReport downstream_eval(const Transformer<float>& model,
                           const std::vector<taskgen::FamilyId>& target_families, int k_eval,
                           int count_per_family, std::uint64_t seed,
                           const std::vector<taskgen::FamilyId>* train_families, int threads) {
    if (train_families) taskgen::validate_disjoint(*train_families, target_families);
    EvalReport report;
    report.seed = seed;
    double macro = 0;
    for (std::size_t f = 0; f < target_families.size(); ++f) {
        const auto fam = target_families[f];
        const auto samples = taskgen::generate_dataset({fam}, count_per_family, k_eval, k_eval,
                                                       Rng::derive(seed, f));
        ThreadPool pool(static_cast<std::size_t>(resolve_threads(threads)));
        std::vector<char> hits(samples.size(), 0);
        std::vector<std::exception_ptr> errors(pool.size());
        pool.parallel_for(pool.size(), [&](std::size_t slot) {
            try {
                for (std::size_t i = slot; i < samples.size(); i += pool.size())
                    hits[i] = decode_matches(model, samples[i]) ? 1 : 0;
            } catch (...) {
                errors[slot] = std::current_exception();
            }
        });
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        long correct = 0;
        for (char h : hits) correct += h;
        const std::string name = taskgen::family_name(fam);
        report.family_correct[name] = correct;
        report.family_total[name] = static_cast<long>(samples.size());
        report.family_accuracy[name] = double(correct) / double(samples.size());
        report.sample_count += static_cast<long>(samples.size());
        macro += report.family_accuracy[name];
    }
    report.macro_average = macro / double(target_families.size());
    return report;
}

std::vector<std::vector<std::vector<int>>> consistency_subsets(
    const std::vector<taskgen::ICLSample>& samples, int n_subsets, std::uint64_t seed) {
    if (n_subsets < 2) throw ConfigError("preference consistency needs at least 2 subsets");
    std::vector<std::vector<std::vector<int>>> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out[i] = taskgen::sample_subsets(samples[i], n_subsets, taskgen::SubsetMethod::uniform,
                                         Rng::derive(seed, i));
    return out;
}

std::vector<std::vector<double>> score_subset_table(
    const Transformer<float>& model, const std::vector<taskgen::ICLSample>& samples,
    const std::vector<std::vector<std::vector<int>>>& subsets, int threads) {
    if (samples.size() != subsets.size())
        throw UsageError("score_subset_table: samples/subsets size mismatch");
    std::vector<std::vector<double>> scores(samples.size());
    ThreadPool pool(static_cast<std::size_t>(resolve_threads(threads)));
    std::vector<std::exception_ptr> errors(pool.size());
    pool.parallel_for(pool.size(), [&](std::size_t slot) {
        try {
            for (std::size_t i = slot; i < samples.size(); i += pool.size()) {
                auto tensors =
                    distill::preference_scores<float>(nullptr, model, samples[i], subsets[i]);
                for (auto& t : tensors) scores[i].push_back(double(t.value()));
            }
        } catch (...) {
            errors[slot] = std::current_exception();
        }
    });
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return scores;
}

namespace {

// lowest index wins ties, making the metric total
std::size_t arg_extreme(const std::vector<double>& v, bool want_max) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j) {
        if (want_max ? (v[j] > v[best]) : (v[j] < v[best])) best = j;
    }
    return best;
}

} // namespace

ConsistencyReport consistency_from_scores(const std::vector<std::vector<double>>& teacher_scores,
                                          const std::vector<std::vector<double>>& student_scores) {
    if (teacher_scores.size() != student_scores.size() || teacher_scores.empty())
        throw UsageError("consistency_from_scores: mismatched or empty score tables");
    ConsistencyReport rep;
    rep.n_examples = static_cast<long>(teacher_scores.size());
    rep.n_subsets = static_cast<int>(teacher_scores.front().size());
    long top = 0, bottom = 0;
    for (std::size_t i = 0; i < teacher_scores.size(); ++i) {
        if (teacher_scores[i].size() != student_scores[i].size() || teacher_scores[i].empty())
            throw UsageError("consistency_from_scores: ragged score tables");
        if (arg_extreme(teacher_scores[i], true) == arg_extreme(student_scores[i], true)) ++top;
        if (arg_extreme(teacher_scores[i], false) == arg_extreme(student_scores[i], false))
            ++bottom;
    }
    rep.top_consistency = double(top) / double(rep.n_examples);
    rep.bottom_consistency = double(bottom) / double(rep.n_examples);
    rep.combined = 0.5 * (rep.top_consistency + rep.bottom_consistency);
    return rep;
}

ConsistencyReport preference_consistency(const Transformer<float>& student,
                                         const Transformer<float>& teacher,
                                         const std::vector<taskgen::ICLSample>& eval_samples,
                                         int n_subsets, std::uint64_t seed, int threads) {
    const auto subsets = consistency_subsets(eval_samples, n_subsets, seed);
    const auto t_scores = score_subset_table(teacher, eval_samples, subsets, threads);
    const auto s_scores = score_subset_table(student, eval_samples, subsets, threads);
    return consistency_from_scores(t_scores, s_scores);
}

// ---- ablation sweeps -------------------------------------------------------

std::vector<taskgen::ICLSample> materialize(const DataConfig& dc) {
    auto data = taskgen::generate_dataset(dc.families, dc.count, dc.k_min, dc.k_max, dc.seed);
    taskgen::attach_subsets(data, dc.subsets_n, dc.subset_method, dc.subset_seed);
    return data;
}

std::vector<std::string> builtin_grids() {
    return {"n-subsets", "lambda", "k-demos", "pairs", "subset-method", "kl-mode", "rank-variant"};
}

namespace {

struct SweepPoint {
    std::string config_id;
    distill::AlignConfig config;
    DataConfig data; // k-demos grid varies the dataset
};

std::vector<SweepPoint> expand_grid(const std::string& grid, const SweepContext& ctx) {
    std::vector<SweepPoint> points;
    auto base_point = [&](const std::string& id) {
        return SweepPoint{id, ctx.base, ctx.train_data};
    };
    if (grid == "n-subsets") {
        for (int n : {3, 4, 5, 6}) {
            auto p = base_point("n_subsets=" + std::to_string(n));
            p.config.subsets_n = n;
            points.push_back(p);
        }
    } else if (grid == "lambda") {
        for (double l : {0.2, 0.5, 1.0, 2.0, 5.0}) {
            auto p = base_point("lambda=" + csvio::g17(l));
            p.config.lambda = l;
            points.push_back(p);
        }
    } else if (grid == "k-demos") {
        {
            auto p = base_point("k=mixed4-10");
            p.data.k_min = 4;
            p.data.k_max = 10;
            points.push_back(p);
        }
        for (int k : {5, 8, 10}) {
            auto p = base_point("k=" + std::to_string(k));
            p.data.k_min = k;
            p.data.k_max = k;
            points.push_back(p);
        }
    } else if (grid == "pairs") {
        for (int m : {3, 4, 5}) {
            auto p = base_point("pairs=random:" + std::to_string(m));
            p.config.pair_policy = distill::PairPolicy::random(m);
            points.push_back(p);
        }
        auto p = base_point("pairs=all");
        p.config.pair_policy = distill::PairPolicy::all();
        points.push_back(p);
    } else if (grid == "subset-method") {
        for (auto m : {taskgen::SubsetMethod::uniform, taskgen::SubsetMethod::size_stratified}) {
            auto p = base_point(std::string("subset_method=") + taskgen::subset_method_name(m));
            p.config.subset_method = m;
            points.push_back(p);
        }
    } else if (grid == "kl-mode") {
        for (auto m : {distill::KlMode::whole_sequence, distill::KlMode::label_only}) {
            auto p = base_point(std::string("kl_mode=") + distill::kl_mode_name(m));
            p.config.kl_mode = m;
            points.push_back(p);
        }
    } else if (grid == "rank-variant") {
        for (auto v : {distill::RankVariant::eq3, distill::RankVariant::hinge_eq4}) {
            auto p = base_point(std::string("rank_variant=") + distill::rank_variant_name(v));
            p.config.rank_variant = v;
            points.push_back(p);
        }
    } else {
        throw ConfigError("unknown ablation grid: " + grid);
    }
    return points;
}

std::string data_key(const DataConfig& dc) {
    return std::to_string(dc.k_min) + ":" + std::to_string(dc.k_max) + ":" +
           std::to_string(dc.count) + ":" + std::to_string(dc.seed);
}

} // namespace

std::vector<SweepRow> ablation_sweep(const SweepContext& ctx, const std::vector<std::string>& grids,
                                     const std::vector<std::uint64_t>& seeds) {
    if (!ctx.teacher || !ctx.student) throw ConfigError("ablation_sweep: missing models");
    if (seeds.empty()) throw ConfigError("ablation_sweep: no seeds");
    std::vector<std::string> expanded = grids;
    if (expanded.size() == 1 && expanded[0] == "all") expanded = builtin_grids();

    // datasets and teacher caches are shared across runs (controlled comparison)
    std::map<std::string, std::vector<taskgen::ICLSample>> datasets;
    std::map<std::string, std::unique_ptr<distill::TeacherCache>> caches;
    auto dataset_for = [&](const DataConfig& dc) -> std::vector<taskgen::ICLSample>& {
        const auto key = data_key(dc);
        auto it = datasets.find(key);
        if (it == datasets.end()) it = datasets.emplace(key, materialize(dc)).first;
        return it->second;
    };
    auto cache_for = [&](const DataConfig& dc,
                         const std::vector<taskgen::ICLSample>& data) -> distill::TeacherCache* {
        const auto key = data_key(dc);
        auto it = caches.find(key);
        if (it == caches.end())
            it = caches
                     .emplace(key, std::make_unique<distill::TeacherCache>(*ctx.teacher, data,
                                                                           ctx.threads))
                     .first;
        return it->second.get();
    };

    // consistency evaluation set is fixed across all rows
    auto consistency_data =
        taskgen::generate_dataset(ctx.eval_families, ctx.consistency_examples, ctx.k_eval,
                                  ctx.k_eval, Rng::derive(ctx.consistency_seed, 1));
    const auto cons_subsets =
        consistency_subsets(consistency_data, ctx.consistency_subsets_n, ctx.consistency_seed);
    const auto teacher_cons_scores =
        score_subset_table(*ctx.teacher, consistency_data, cons_subsets, ctx.threads);

    std::vector<SweepRow> rows;
    for (const auto& grid : expanded) {
        for (const auto& point : expand_grid(grid, ctx)) {
            for (const std::uint64_t seed : seeds) {
                SweepRow row;
                row.sweep = grid;
                row.config_id = point.config_id;
                row.seed = seed;
                row.config = point.config;
                row.config.seed = seed;
                row.config.threads = ctx.threads;
                try {
                    auto& data = dataset_for(point.data);
                    auto student = ctx.student->clone();
                    distill::train(row.config, ctx.teacher, student, data,
                                   cache_for(point.data, data));
                    row.eval = downstream_eval(student, ctx.eval_families, ctx.k_eval,
                                               ctx.eval_count_per_family, ctx.eval_seed,
                                               &point.data.families, ctx.threads);
                    row.eval.method_id = point.config_id;
                    row.eval.seed = seed;
                    const auto student_scores =
                        score_subset_table(student, consistency_data, cons_subsets, ctx.threads);
                    row.consistency =
                        consistency_from_scores(teacher_cons_scores, student_scores);
                    row.status = "ok";
                } catch (const std::exception& e) {
                    row.status = std::string("error: ") + e.what();
                }
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     const std::vector<taskgen::FamilyId>& eval_families) {
    csvio::Table t;
    t.header = {"sweep",  "config", "seed",       "status",          "lambda",
                "n_subsets", "kl_mode", "rank_variant", "pair_policy",     "subset_method",
                "macro_accuracy"};
    for (auto f : eval_families) t.header.push_back(std::string("acc_") + taskgen::family_name(f));
    t.header.insert(t.header.end(),
                    {"consistency_top", "consistency_bottom", "consistency_combined"});
    for (const auto& r : rows) {
        std::vector<std::string> row = {r.sweep,
                                        r.config_id,
                                        std::to_string(r.seed),
                                        r.status,
                                        csvio::g17(r.config.lambda),
                                        std::to_string(r.config.subsets_n),
                                        distill::kl_mode_name(r.config.kl_mode),
                                        distill::rank_variant_name(r.config.rank_variant),
                                        r.config.pair_policy.to_string(),
                                        taskgen::subset_method_name(r.config.subset_method),
                                        csvio::g17(r.eval.macro_average)};
        for (auto f : eval_families) {
            const auto it = r.eval.family_accuracy.find(taskgen::family_name(f));
            row.push_back(it == r.eval.family_accuracy.end() ? "" : csvio::g17(it->second));
        }
        row.push_back(csvio::g17(r.consistency.top_consistency));
        row.push_back(csvio::g17(r.consistency.bottom_consistency));
        row.push_back(csvio::g17(r.consistency.combined));
        t.rows.push_back(std::move(row));
    }
    csvio::write(path, t);
}

// ---- checkpoint curve ------------------------------------------------------

std::vector<CurveRow> checkpoint_curve(const std::vector<std::pair<double, std::string>>& points,
                                       const Transformer<float>& teacher, const CurveOptions& opt) {
    std::vector<CurveRow> rows;
    auto consistency_data =
        taskgen::generate_dataset(opt.eval_families, opt.consistency_examples, opt.k_eval,
                                  opt.k_eval, Rng::derive(opt.consistency_seed, 1));
    const auto subsets =
        consistency_subsets(consistency_data, opt.consistency_subsets_n, opt.consistency_seed);
    const auto teacher_scores = score_subset_table(teacher, consistency_data, subsets, opt.threads);
    for (const auto& [fraction, path] : points) {
        CurveRow row;
        row.fraction = fraction;
        row.checkpoint_path = path;
        auto model = load_model<float>(path); // missing file -> DataError
        row.eval = downstream_eval(model, opt.eval_families, opt.k_eval, opt.eval_count_per_family,
                                   opt.eval_seed, nullptr, opt.threads);
        const auto student_scores = score_subset_table(model, consistency_data, subsets, opt.threads);
        row.consistency = consistency_from_scores(teacher_scores, student_scores);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- report emission -------------------------------------------------------

void write_eval_csv(const std::string& path, const std::vector<EvalReport>& reports,
                    const std::vector<taskgen::FamilyId>& families) {
    csvio::Table t;
    t.header = {"method", "seed", "checkpoint", "family", "correct", "total", "accuracy"};
    for (const auto& rep : reports) {
        for (auto f : families) {
            const std::string name = taskgen::family_name(f);
            if (!rep.family_accuracy.count(name)) continue;
            t.rows.push_back({rep.method_id, std::to_string(rep.seed), rep.checkpoint_id, name,
                              std::to_string(rep.family_correct.at(name)),
                              std::to_string(rep.family_total.at(name)),
                              csvio::g17(rep.family_accuracy.at(name))});
        }
        t.rows.push_back({rep.method_id, std::to_string(rep.seed), rep.checkpoint_id, "macro", "",
                          "", csvio::g17(rep.macro_average)});
    }
    csvio::write(path, t);
}

void write_summary_json(const std::string& path, const std::vector<EvalReport>& evals,
                        const std::vector<ConsistencyReport>& consistencies,
                        const std::vector<std::string>& labels) {
    if (evals.size() != labels.size() || consistencies.size() != labels.size())
        throw UsageError("write_summary_json: mismatched inputs");
    json by_method = json::object();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        json row;
        row["macro_accuracy"] = evals[i].macro_average;
        row["family_accuracy"] = evals[i].family_accuracy;
        row["seed"] = evals[i].seed;
        row["consistency"] = {{"top", consistencies[i].top_consistency},
                              {"bottom", consistencies[i].bottom_consistency},
                              {"combined", consistencies[i].combined}};
        by_method[labels[i]].push_back(row);
    }
    json summary = json::object();
    for (auto& [label, runs] : by_method.items()) {
        std::vector<double> acc, cons;
        for (const auto& r : runs) {
            acc.push_back(r.at("macro_accuracy").get<double>());
            cons.push_back(r.at("consistency").at("combined").get<double>());
        }
        summary[label] = {{"runs", runs},
                          {"median_macro_accuracy", median(acc)},
                          {"median_consistency_combined", median(cons)}};
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open summary for writing: " + path);
    out << summary.dump(2) << "\n";
}

// ---- svg -------------------------------------------------------------------

namespace {

std::string svg_header(int w, int h, const std::string& title) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                    "\" height=\"" + std::to_string(h) + "\">\n";
    s += "<text x=\"10\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">" + title +
         "</text>\n";
    return s;
}

} // namespace

void write_svg_bars(const std::string& path, const std::vector<std::string>& labels,
                    const std::vector<double>& values, const std::string& title) {
    if (labels.size() != values.size()) throw UsageError("write_svg_bars: mismatched inputs");
    const int w = 80 + static_cast<int>(labels.size()) * 90;
    const int h = 260;
    double vmax = 1e-12;
    for (double v : values) vmax = std::max(vmax, v);
    std::string s = svg_header(w, h, title);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int bh = static_cast<int>(180.0 * values[i] / vmax);
        const int x = 40 + static_cast<int>(i) * 90;
        s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(220 - bh) +
             "\" width=\"60\" height=\"" + std::to_string(bh) + "\" fill=\"#4477aa\"/>\n";
        s += "<text x=\"" + std::to_string(x) + "\" y=\"236\" font-family=\"sans-serif\" "
             "font-size=\"11\">" + labels[i] + "</text>\n";
        s += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(212 - bh) +
             "\" font-family=\"sans-serif\" font-size=\"11\">" + csvio::g17(values[i]).substr(0, 6) +
             "</text>\n";
    }
    s += "</svg>\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open svg for writing: " + path);
    out << s;
}

void write_svg_curve(const std::string& path, const std::vector<double>& xs,
                     const std::vector<std::vector<double>>& series,
                     const std::vector<std::string>& series_labels, const std::string& title) {
    if (series.size() != series_labels.size()) throw UsageError("write_svg_curve: mismatched inputs");
    const int w = 480, h = 300;
    double ymax = 1e-12, ymin = 0.0, xmax = 1e-12;
    for (const auto& ys : series)
        for (double y : ys) ymax = std::max(ymax, y);
    for (double x : xs) xmax = std::max(xmax, x);
    std::string s = svg_header(w, h, title);
    const char* colors[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44"};
    for (std::size_t k = 0; k < series.size(); ++k) {
        std::string pts;
        for (std::size_t i = 0; i < xs.size() && i < series[k].size(); ++i) {
            const double px = 50 + (xs[i] / xmax) * 380;
            const double py = 260 - ((series[k][i] - ymin) / (ymax - ymin + 1e-12)) * 200;
            pts += std::to_string(px) + "," + std::to_string(py) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(colors[k % 4]) +
             "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        s += "<text x=\"" + std::to_string(60 + 110 * k) +
             "\" y=\"290\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + colors[k % 4] +
             "\">" + series_labels[k] + "</text>\n";
    }
    s += "</svg>\n";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open svg for writing: " + path);
    out << s;
}

} // namespace bialign::evalsuite
