#include "bialign/commands.hpp"

#include "bialign/csvio.hpp"
#include "bialign/version.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace bialign::commands {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_out_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("BIALIGN_OUT_ROOT")) p = fs::path(root) / p;
    }
    return p.string();
}

namespace {

void require_inputs(const std::vector<std::string>& paths) {
    std::vector<std::string> missing;
    for (const auto& p : paths)
        if (!fs::exists(p)) missing.push_back(p);
    if (!missing.empty()) {
        std::string msg = "missing input file(s):";
        for (const auto& m : missing) msg += " " + m;
        throw DataError(msg);
    }
}

fs::path prepare_run_dir(const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "checkpoints");
    fs::create_directories(root / "traces");
    fs::create_directories(root / "reports");
    return root;
}

void write_config(const fs::path& run_dir, const std::string& command, json options) {
    options["tool_version"] = kToolVersion;
    options["command"] = command;
    std::ofstream out(run_dir / "config.json", std::ios::binary);
    if (!out) throw DataError("cannot write config.json in " + run_dir.string());
    out << options.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) seeds.push_back(std::stoull(item));
    if (seeds.empty()) throw ConfigError("empty seed list: '" + spec + "'");
    return seeds;
}

json eval_report_to_json(const evalsuite::EvalReport& rep) {
    return {{"method", rep.method_id},
            {"seed", rep.seed},
            {"checkpoint", rep.checkpoint_id},
            {"family_accuracy", rep.family_accuracy},
            {"family_correct", rep.family_correct},
            {"family_total", rep.family_total},
            {"macro_average", rep.macro_average},
            {"sample_count", rep.sample_count}};
}

json consistency_to_json(const evalsuite::ConsistencyReport& rep) {
    return {{"n_examples", rep.n_examples},
            {"n_subsets", rep.n_subsets},
            {"top", rep.top_consistency},
            {"bottom", rep.bottom_consistency},
            {"combined", rep.combined}};
}

} // namespace

void gen_data(const GenDataOptions& opt) {
    if (opt.out.empty()) throw ConfigError("gen-data: --out is required");
    if (fs::exists(opt.out) && !opt.force)
        throw DataError("gen-data: refusing to overwrite " + opt.out + " (use --force)");
    const auto families = taskgen::parse_family_list(opt.families);
    auto data = taskgen::generate_dataset(families, opt.count, opt.k_min, opt.k_max, opt.seed);
    if (opt.subsets > 0)
        taskgen::attach_subsets(data, opt.subsets,
                                taskgen::subset_method_from_name(opt.subset_method), opt.seed);
    if (const auto parent = fs::path(opt.out).parent_path(); !parent.empty())
        fs::create_directories(parent);
    taskgen::write_dataset(opt.out, data);
}

PretrainOutcome pretrain(const PretrainOptions& opt) {
    require_inputs({opt.data, opt.eval_data});
    if (opt.out_dir.empty()) throw ConfigError("pretrain: --out-dir is required");
    const Role role = role_from_name(opt.role);
    auto data = taskgen::read_dataset(opt.data);
    if (data.empty()) throw DataError("pretrain: empty training dataset " + opt.data);
    if (opt.data_fraction <= 0.0 || opt.data_fraction > 1.0)
        throw ConfigError("pretrain: --data-fraction must be in (0, 1]");
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(opt.data_fraction * double(data.size()) + 0.5));
    data.resize(std::min(keep, data.size()));
    auto eval_data = taskgen::read_dataset(opt.eval_data);
    if (eval_data.empty()) throw DataError("pretrain: empty eval dataset " + opt.eval_data);
    if (opt.eval_limit > 0 && eval_data.size() > static_cast<std::size_t>(opt.eval_limit))
        eval_data.resize(static_cast<std::size_t>(opt.eval_limit));

    ModelConfig cfg = role == Role::teacher
                          ? teacher_default(taskgen::vocab::size, opt.max_seq)
                          : student_default(taskgen::vocab::size, opt.max_seq);
    if (opt.d_model > 0) cfg.d_model = opt.d_model;
    if (opt.layers > 0) cfg.n_layers = opt.layers;
    if (opt.heads > 0) cfg.n_heads = opt.heads;
    auto model = Transformer<float>::init(cfg, opt.init_seed);

    distill::AlignConfig tc;
    tc.method = distill::Method::c_pretrain;
    tc.epochs = opt.epochs;
    tc.batch_size = opt.batch;
    tc.learning_rate = opt.lr;
    tc.seed = opt.seed;
    tc.threads = opt.threads;

    PretrainOutcome outcome;
    auto result = distill::train(
        tc, nullptr, model, data, nullptr, {}, [&](int epoch, const distill::LossBreakdown& avg) {
            outcome.final_accuracy = evalsuite::exact_match(model, eval_data, opt.threads);
            outcome.epochs_run = epoch + 1;
            std::cout << "pretrain " << opt.role << " epoch " << (epoch + 1) << "/" << opt.epochs
                      << " loss " << avg.total << " exact_match " << outcome.final_accuracy
                      << std::endl;
            if (opt.target_acc > 0 && outcome.final_accuracy >= opt.target_acc) {
                outcome.reached_target = true;
                return false;
            }
            return true;
        });

    const auto run_dir = prepare_run_dir(opt.out_dir);
    const std::string ckpt = (run_dir / "checkpoints" / (opt.role + ".ckpt")).string();
    save_model(ckpt, model);
    outcome.checkpoint = ckpt;
    distill::write_trace_csv((run_dir / "traces" / "pretrain_trace.csv").string(), result.trace);
    write_config(run_dir, "pretrain",
                 {{"role", opt.role},
                  {"data", opt.data},
                  {"eval_data", opt.eval_data},
                  {"data_fraction", opt.data_fraction},
                  {"d_model", cfg.d_model},
                  {"layers", cfg.n_layers},
                  {"heads", cfg.n_heads},
                  {"max_seq", cfg.max_seq_len},
                  {"epochs", opt.epochs},
                  {"target_acc", opt.target_acc},
                  {"eval_limit", opt.eval_limit},
                  {"lr", opt.lr},
                  {"batch", opt.batch},
                  {"seed", opt.seed},
                  {"init_seed", opt.init_seed},
                  {"threads", opt.threads}});
    {
        std::ofstream out(run_dir / "reports" / "pretrain.json", std::ios::binary);
        out << json{{"final_accuracy", outcome.final_accuracy},
                    {"epochs_run", outcome.epochs_run},
                    {"reached_target", outcome.reached_target},
                    {"target_acc", opt.target_acc}}
                   .dump(2)
            << "\n";
    }
    if (opt.target_acc > 0 && !outcome.reached_target)
        std::cerr << "warning: pretrain stopped at accuracy " << outcome.final_accuracy
                  << " below target " << opt.target_acc << " after " << outcome.epochs_run
                  << " epochs; checkpoint still emitted\n";
    return outcome;
}

AlignOutcome align(const AlignOptions& opt, distill::TeacherCache* shared_cache) {
    const auto method = distill::method_from_name(opt.method);
    const bool needs_teacher =
        method == distill::Method::output_align || method == distill::Method::bialign;
    std::vector<std::string> inputs = {opt.student_ckpt, opt.data};
    if (needs_teacher) inputs.push_back(opt.teacher_ckpt);
    require_inputs(inputs);
    if (opt.out_dir.empty()) throw ConfigError("align: --out-dir is required");

    auto student = load_model<float>(opt.student_ckpt);
    std::optional<Transformer<float>> teacher;
    if (needs_teacher) {
        teacher = load_model<float>(opt.teacher_ckpt);
        if (teacher->config().role != Role::teacher)
            throw ConfigError("align: --teacher checkpoint is not role-tagged teacher");
    }
    auto data = taskgen::read_dataset(opt.data);

    distill::AlignConfig cfg;
    cfg.method = method;
    cfg.lambda = opt.lambda;
    cfg.subsets_n = opt.subsets;
    cfg.kl_mode = distill::kl_mode_from_name(opt.kl_mode);
    cfg.rank_variant = distill::rank_variant_from_name(opt.rank_variant);
    cfg.pair_policy = distill::PairPolicy::parse(opt.pair_policy);
    cfg.subset_method = taskgen::subset_method_from_name(opt.subset_method);
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.learning_rate = opt.lr;
    cfg.seed = opt.seed;
    cfg.threads = opt.threads;
    cfg.rank_ascending = opt.rank_ascending;
    cfg.eq4_log_space = opt.eq4_log_space;
    cfg.resample_subsets_per_epoch = opt.resample_subsets;

    const auto run_dir = prepare_run_dir(opt.out_dir);
    AlignOutcome outcome;
    auto ckpt_path = [&](int percent) {
        char name[32];
        std::snprintf(name, sizeof name, "student_%03d.ckpt", percent);
        return (run_dir / "checkpoints" / name).string();
    };

    std::vector<distill::TraceRow> trace;
    if (method == distill::Method::vanilla) {
        // pass-through: the unaligned student is the final checkpoint
        save_model(ckpt_path(100), student);
    } else {
        auto result = distill::train(
            cfg, teacher ? &*teacher : nullptr, student, data, shared_cache,
            [&](long step, long total_steps) {
                for (const auto& [frac, percent] :
                     std::initializer_list<std::pair<double, int>>{{0.25, 25}, {0.5, 50}, {1.0, 100}}) {
                    const long at = static_cast<long>(std::ceil(frac * double(total_steps)));
                    if (step == at) {
                        save_model(ckpt_path(percent), student);
                        outcome.cadence.emplace_back(frac, ckpt_path(percent));
                    }
                }
            },
            [&](int epoch, const distill::LossBreakdown& avg) {
                std::cout << "align " << opt.method << " epoch " << (epoch + 1) << "/"
                          << opt.epochs << " kl " << avg.kl << " rank " << avg.rank << " total "
                          << avg.total << std::endl;
                return true;
            });
        trace = std::move(result.trace);
    }
    outcome.final_checkpoint = ckpt_path(100);
    if (!fs::exists(outcome.final_checkpoint)) save_model(outcome.final_checkpoint, student);
    fs::copy_file(outcome.final_checkpoint, run_dir / "checkpoints" / "student.ckpt",
                  fs::copy_options::overwrite_existing);
    distill::write_trace_csv((run_dir / "traces" / "align_trace.csv").string(), trace);
    write_config(run_dir, "align",
                 {{"method", opt.method},
                  {"teacher", opt.teacher_ckpt},
                  {"student", opt.student_ckpt},
                  {"data", opt.data},
                  {"lambda", opt.lambda},
                  {"subsets", opt.subsets},
                  {"kl_mode", opt.kl_mode},
                  {"rank_variant", opt.rank_variant},
                  {"pair_policy", opt.pair_policy},
                  {"subset_method", opt.subset_method},
                  {"epochs", opt.epochs},
                  {"batch", opt.batch},
                  {"lr", opt.lr},
                  {"seed", opt.seed},
                  {"threads", opt.threads},
                  {"rank_ascending", opt.rank_ascending},
                  {"eq4_log_space", opt.eq4_log_space},
                  {"resample_subsets", opt.resample_subsets}});
    return outcome;
}

evalsuite::EvalReport eval_cmd(const EvalOptions& opt) {
    require_inputs({opt.checkpoint});
    if (opt.out_dir.empty()) throw ConfigError("eval: --out-dir is required");
    auto model = load_model<float>(opt.checkpoint);
    const auto families = taskgen::parse_family_list(opt.families);
    const auto train_families = taskgen::parse_family_list(opt.train_families);
    auto report = evalsuite::downstream_eval(model, families, opt.k_eval, opt.count, opt.seed,
                                             &train_families, opt.threads);
    report.method_id =
        opt.method_id.empty() ? fs::path(opt.checkpoint).stem().string() : opt.method_id;
    report.checkpoint_id = opt.checkpoint;

    const auto run_dir = prepare_run_dir(opt.out_dir);
    evalsuite::write_eval_csv((run_dir / "reports" / "eval.csv").string(), {report}, families);
    {
        std::ofstream out(run_dir / "reports" / "eval.json", std::ios::binary);
        out << eval_report_to_json(report).dump(2) << "\n";
    }
    write_config(run_dir, "eval",
                 {{"checkpoint", opt.checkpoint},
                  {"families", opt.families},
                  {"train_families", opt.train_families},
                  {"k_eval", opt.k_eval},
                  {"count", opt.count},
                  {"seed", opt.seed},
                  {"method_id", report.method_id},
                  {"threads", opt.threads}});
    return report;
}

evalsuite::ConsistencyReport consistency_cmd(const ConsistencyOptions& opt) {
    require_inputs({opt.teacher_ckpt, opt.student_ckpt});
    if (opt.out_dir.empty()) throw ConfigError("consistency: --out-dir is required");
    auto teacher = load_model<float>(opt.teacher_ckpt);
    auto student = load_model<float>(opt.student_ckpt);
    const auto families = taskgen::parse_family_list(opt.families);
    auto samples = taskgen::generate_dataset(families, opt.examples, opt.k_eval, opt.k_eval,
                                             Rng::derive(opt.seed, 1));
    auto report =
        evalsuite::preference_consistency(student, teacher, samples, opt.subsets, opt.seed,
                                          opt.threads);
    const auto run_dir = prepare_run_dir(opt.out_dir);
    {
        std::ofstream out(run_dir / "reports" / "consistency.json", std::ios::binary);
        json doc = consistency_to_json(report);
        doc["method"] =
            opt.method_id.empty() ? fs::path(opt.student_ckpt).stem().string() : opt.method_id;
        out << doc.dump(2) << "\n";
    }
    write_config(run_dir, "consistency",
                 {{"teacher", opt.teacher_ckpt},
                  {"student", opt.student_ckpt},
                  {"families", opt.families},
                  {"examples", opt.examples},
                  {"subsets", opt.subsets},
                  {"k_eval", opt.k_eval},
                  {"seed", opt.seed},
                  {"threads", opt.threads}});
    return report;
}

std::vector<evalsuite::SweepRow> ablate(const AblateOptions& opt) {
    require_inputs({opt.teacher_ckpt, opt.student_ckpt});
    if (opt.out_dir.empty()) throw ConfigError("ablate: --out-dir is required");
    auto teacher = load_model<float>(opt.teacher_ckpt);
    auto student = load_model<float>(opt.student_ckpt);

    evalsuite::SweepContext ctx;
    ctx.teacher = &teacher;
    ctx.student = &student;
    ctx.train_data = {taskgen::parse_family_list(opt.data_families),
                      opt.data_count,
                      4,
                      10,
                      opt.data_seed,
                      opt.subsets,
                      taskgen::SubsetMethod::uniform,
                      opt.data_seed};
    ctx.base.method = distill::Method::bialign;
    ctx.base.lambda = opt.lambda;
    ctx.base.subsets_n = opt.subsets;
    ctx.base.epochs = opt.epochs;
    ctx.base.batch_size = opt.batch;
    ctx.base.learning_rate = opt.lr;
    ctx.eval_families = taskgen::parse_family_list(opt.eval_families);
    taskgen::validate_disjoint(ctx.train_data.families, ctx.eval_families);
    ctx.k_eval = opt.k_eval;
    ctx.eval_count_per_family = opt.eval_count;
    ctx.eval_seed = opt.eval_seed;
    ctx.consistency_examples = opt.consistency_examples;
    ctx.consistency_subsets_n = opt.consistency_subsets;
    ctx.consistency_seed = opt.consistency_seed;
    ctx.threads = opt.threads;

    std::vector<std::string> grids;
    std::stringstream ss(opt.grid);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) grids.push_back(item);
    if (grids.empty()) throw ConfigError("ablate: empty grid list");

    auto rows = evalsuite::ablation_sweep(ctx, grids, parse_seed_list(opt.seeds));

    const auto run_dir = prepare_run_dir(opt.out_dir);
    evalsuite::write_sweep_csv((run_dir / "reports" / "sweep.csv").string(), rows,
                               ctx.eval_families);
    write_config(run_dir, "ablate",
                 {{"grid", opt.grid},
                  {"teacher", opt.teacher_ckpt},
                  {"student", opt.student_ckpt},
                  {"seeds", opt.seeds},
                  {"lambda", opt.lambda},
                  {"subsets", opt.subsets},
                  {"epochs", opt.epochs},
                  {"batch", opt.batch},
                  {"lr", opt.lr},
                  {"data_families", opt.data_families},
                  {"data_count", opt.data_count},
                  {"data_seed", opt.data_seed},
                  {"eval_families", opt.eval_families},
                  {"k_eval", opt.k_eval},
                  {"eval_count", opt.eval_count},
                  {"eval_seed", opt.eval_seed},
                  {"consistency_examples", opt.consistency_examples},
                  {"consistency_subsets", opt.consistency_subsets},
                  {"consistency_seed", opt.consistency_seed},
                  {"threads", opt.threads}});
    return rows;
}

std::vector<evalsuite::CurveRow> curve(const CurveOptions& opt) {
    require_inputs({opt.teacher_ckpt});
    if (opt.out_dir.empty()) throw ConfigError("curve: --out-dir is required");
    auto teacher = load_model<float>(opt.teacher_ckpt);
    std::vector<std::pair<double, std::string>> points;
    for (const auto& [frac, name] :
         std::initializer_list<std::pair<double, const char*>>{
             {0.25, "student_025.ckpt"}, {0.5, "student_050.ckpt"}, {1.0, "student_100.ckpt"}}) {
        const auto path = fs::path(opt.run_dir) / "checkpoints" / name;
        if (!fs::exists(path))
            throw DataError("curve: missing checkpoint " + path.string());
        points.emplace_back(frac, path.string());
    }
    evalsuite::CurveOptions copt;
    copt.eval_families = taskgen::parse_family_list(opt.families);
    copt.k_eval = opt.k_eval;
    copt.eval_count_per_family = opt.eval_count;
    copt.eval_seed = opt.eval_seed;
    copt.consistency_examples = opt.consistency_examples;
    copt.consistency_subsets_n = opt.consistency_subsets;
    copt.consistency_seed = opt.consistency_seed;
    copt.threads = opt.threads;
    auto rows = evalsuite::checkpoint_curve(points, teacher, copt);

    const auto run_dir = prepare_run_dir(opt.out_dir);
    csvio::Table t;
    t.header = {"fraction", "checkpoint", "macro_accuracy", "consistency_top",
                "consistency_bottom", "consistency_combined"};
    std::vector<double> xs;
    std::vector<double> acc_series, cons_series;
    for (const auto& r : rows) {
        t.rows.push_back({csvio::g17(r.fraction), r.checkpoint_path,
                          csvio::g17(r.eval.macro_average),
                          csvio::g17(r.consistency.top_consistency),
                          csvio::g17(r.consistency.bottom_consistency),
                          csvio::g17(r.consistency.combined)});
        xs.push_back(r.fraction);
        acc_series.push_back(r.eval.macro_average);
        cons_series.push_back(r.consistency.combined);
    }
    csvio::write((run_dir / "reports" / "curve.csv").string(), t);
    evalsuite::write_svg_curve((run_dir / "reports" / "curve.svg").string(), xs,
                               {acc_series, cons_series}, {"accuracy", "consistency"},
                               "partial-training checkpoints");
    write_config(run_dir, "curve",
                 {{"run_dir", opt.run_dir}, {"teacher", opt.teacher_ckpt},
                  {"families", opt.families}, {"threads", opt.threads}});
    return rows;
}

void report(const ReportOptions& opt) {
    if (opt.run_dirs.empty()) throw ConfigError("report: at least one --run is required");
    if (opt.out_dir.empty()) throw ConfigError("report: --out-dir is required");
    std::vector<std::string> missing;
    struct RunInfo {
        json eval;
        json consistency; // may be null
    };
    std::vector<RunInfo> runs;
    for (const auto& dir : opt.run_dirs) {
        const auto eval_path = fs::path(dir) / "reports" / "eval.json";
        if (!fs::exists(eval_path)) {
            missing.push_back(eval_path.string());
            continue;
        }
        RunInfo info;
        std::ifstream in(eval_path);
        in >> info.eval;
        const auto cons_path = fs::path(dir) / "reports" / "consistency.json";
        if (fs::exists(cons_path)) {
            std::ifstream cin_(cons_path);
            cin_ >> info.consistency;
        }
        runs.push_back(std::move(info));
    }
    if (!missing.empty()) {
        std::string msg = "report: missing input file(s):";
        for (const auto& m : missing) msg += " " + m;
        throw DataError(msg);
    }

    // collect family columns in first-seen order
    std::vector<std::string> families;
    for (const auto& r : runs)
        for (const auto& [fam, _] : r.eval.at("family_accuracy").items())
            if (std::find(families.begin(), families.end(), fam) == families.end())
                families.push_back(fam);

    csvio::Table t;
    t.header = {"method", "seed"};
    for (const auto& f : families) t.header.push_back(f);
    t.header.push_back("average");
    t.header.push_back("consistency_combined");

    std::map<std::string, std::vector<const RunInfo*>> by_method;
    for (const auto& r : runs)
        by_method[r.eval.at("method").get<std::string>()].push_back(&r);

    auto emit_row = [&](const std::string& method, const std::string& seed_label,
                        const json& eval_doc, const json& cons_doc) {
        std::vector<std::string> row = {method, seed_label};
        for (const auto& f : families) {
            const auto& fa = eval_doc.at("family_accuracy");
            row.push_back(fa.contains(f) ? csvio::g17(fa.at(f).get<double>()) : "");
        }
        row.push_back(csvio::g17(eval_doc.at("macro_average").get<double>()));
        row.push_back(cons_doc.is_null() ? "" : csvio::g17(cons_doc.at("combined").get<double>()));
        t.rows.push_back(std::move(row));
    };

    json summary = json::object();
    std::vector<std::string> bar_labels;
    std::vector<double> bar_values;
    for (const auto& [method, infos] : by_method) {
        std::vector<double> macros, cons;
        for (const auto* info : infos) {
            emit_row(method, std::to_string(info->eval.at("seed").get<std::uint64_t>()),
                     info->eval, info->consistency);
            macros.push_back(info->eval.at("macro_average").get<double>());
            if (!info->consistency.is_null())
                cons.push_back(info->consistency.at("combined").get<double>());
        }
        json med = {{"median_macro_accuracy", evalsuite::median(macros)}, {"runs", macros.size()}};
        // median row across seeds
        json med_eval = {{"family_accuracy", json::object()},
                         {"macro_average", evalsuite::median(macros)}};
        for (const auto& f : families) {
            std::vector<double> vals;
            for (const auto* info : infos) {
                const auto& fa = info->eval.at("family_accuracy");
                if (fa.contains(f)) vals.push_back(fa.at(f).get<double>());
            }
            if (!vals.empty()) med_eval["family_accuracy"][f] = evalsuite::median(vals);
        }
        json med_cons;
        if (!cons.empty()) {
            med_cons = {{"combined", evalsuite::median(cons)}};
            med["median_consistency_combined"] = evalsuite::median(cons);
            bar_labels.push_back(method);
            bar_values.push_back(evalsuite::median(cons));
        }
        emit_row(method, "median", med_eval, med_cons);
        summary[method] = med;
    }

    const auto run_dir = prepare_run_dir(opt.out_dir);
    csvio::write((run_dir / "reports" / "comparison.csv").string(), t);
    {
        std::ofstream out(run_dir / "reports" / "summary.json", std::ios::binary);
        out << summary.dump(2) << "\n";
    }
    if (!bar_labels.empty())
        evalsuite::write_svg_bars((run_dir / "reports" / "consistency.svg").string(), bar_labels,
                                  bar_values, "preference score consistency (median)");
    json cfg = {{"runs", opt.run_dirs}};
    write_config(run_dir, "report", cfg);
}

} // namespace bialign::commands
