#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testutil.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// Drives the installed binary end to end; BIALIGN_CLI is set by ctest.

namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("BIALIGN_CLI");
    REQUIRE_MESSAGE(p != nullptr, "BIALIGN_CLI must point at the bialign binary");
    return p;
}

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string out_file = fs::temp_directory_path() / "bialign_cli_out.txt";
    const std::string cmd = cli() + " " + args + " > " + out_file + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream in(out_file);
    std::string output((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return {WEXITSTATUS(rc), output};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("gen-data: reruns are byte-identical; overwrite needs --force") {
    testutil::TempDir dir("cli_gen");
    const auto a = dir.str("a.jsonl");
    const auto b = dir.str("b.jsonl");
    CHECK(run("gen-data --out " + a + " --count 40 --seed 5").exit_code == 0);
    CHECK(run("gen-data --out " + b + " --count 40 --seed 5").exit_code == 0);
    CHECK(slurp(a) == slurp(b));

    auto refused = run("gen-data --out " + a + " --count 40 --seed 5");
    CHECK(refused.exit_code == 3);
    CHECK(refused.output.find("--force") != std::string::npos);
    CHECK(run("gen-data --out " + a + " --count 40 --seed 5 --force").exit_code == 0);

    auto fixed = run("gen-data --out " + dir.str("k5.jsonl") + " --count 20 --k-min 5 --k-max 5");
    CHECK(fixed.exit_code == 0);
}

TEST_CASE("align: unknown method is a usage error listing valid methods") {
    auto res = run("align --method nonsense --student x.ckpt --data d.jsonl --out-dir o");
    CHECK(res.exit_code == 64);
    CHECK(res.output.find("bialign") != std::string::npos);
    CHECK(res.output.find("output-align") != std::string::npos);
}

TEST_CASE("missing inputs are enumerated before any work starts") {
    testutil::TempDir dir("cli_missing");
    auto res = run("align --method output-align --teacher " + dir.str("no_t.ckpt") +
                   " --student " + dir.str("no_s.ckpt") + " --data " + dir.str("no_d.jsonl") +
                   " --out-dir " + dir.str("out"));
    CHECK(res.exit_code == 3);
    CHECK(res.output.find("no_t.ckpt") != std::string::npos);
    CHECK(res.output.find("no_s.ckpt") != std::string::npos);
    CHECK(res.output.find("no_d.jsonl") != std::string::npos);
    CHECK(!fs::exists(dir.str("out")));
}

TEST_CASE("pipeline smoke: pretrain, align, eval, consistency, report") {
    testutil::TempDir dir("cli_pipe");
    const auto train = dir.str("train.jsonl");
    const auto eval = dir.str("eval.jsonl");
    REQUIRE(run("gen-data --out " + train + " --count 32 --seed 11").exit_code == 0);
    REQUIRE(run("gen-data --out " + eval + " --count 16 --seed 12").exit_code == 0);

    const std::string tiny_teacher = " --d-model 32 --layers 1 --heads 2 --epochs 1 --batch 16 "
                                     "--target-acc 0 --eval-limit 8 ";
    REQUIRE(run("pretrain --role teacher --data " + train + " --eval-data " + eval +
                " --out-dir " + dir.str("teacher") + tiny_teacher)
                .exit_code == 0);
    REQUIRE(run("pretrain --role student --data " + train + " --eval-data " + eval +
                " --out-dir " + dir.str("student") + " --d-model 16 --layers 1 --heads 2 "
                "--epochs 1 --batch 16 --target-acc 0 --eval-limit 8 --data-fraction 0.25")
                .exit_code == 0);

    const auto teacher_ckpt = dir.str("teacher") + "/checkpoints/teacher.ckpt";
    const auto student_ckpt = dir.str("student") + "/checkpoints/student.ckpt";
    REQUIRE(fs::exists(teacher_ckpt));
    REQUIRE(fs::exists(student_ckpt));
    CHECK(fs::exists(dir.str("teacher") + "/config.json"));
    CHECK(fs::exists(dir.str("teacher") + "/traces/pretrain_trace.csv"));

    REQUIRE(run("align --method bialign --teacher " + teacher_ckpt + " --student " +
                student_ckpt + " --data " + train + " --out-dir " + dir.str("aligned") +
                " --epochs 1 --batch 16 --seed 3")
                .exit_code == 0);
    const auto aligned_ckpt = dir.str("aligned") + "/checkpoints/student_100.ckpt";
    REQUIRE(fs::exists(aligned_ckpt));
    CHECK(fs::exists(dir.str("aligned") + "/checkpoints/student_025.ckpt"));
    CHECK(fs::exists(dir.str("aligned") + "/checkpoints/student_050.ckpt"));
    CHECK(fs::exists(dir.str("aligned") + "/traces/align_trace.csv"));

    // vanilla passes the student through untouched
    REQUIRE(run("align --method vanilla --student " + student_ckpt + " --data " + train +
                " --out-dir " + dir.str("vanilla"))
                .exit_code == 0);
    CHECK(slurp(dir.str("vanilla") + "/checkpoints/student_100.ckpt") == slurp(student_ckpt));

    REQUIRE(run("eval --checkpoint " + aligned_ckpt + " --out-dir " + dir.str("eval_run") +
                " --count 8 --method-id bialign")
                .exit_code == 0);
    CHECK(fs::exists(dir.str("eval_run") + "/reports/eval.csv"));
    CHECK(fs::exists(dir.str("eval_run") + "/reports/eval.json"));

    REQUIRE(run("consistency --teacher " + teacher_ckpt + " --student " + aligned_ckpt +
                " --out-dir " + dir.str("eval_run") + " --examples 8 --subsets 4 "
                "--method-id bialign")
                .exit_code == 0);
    CHECK(fs::exists(dir.str("eval_run") + "/reports/consistency.json"));

    REQUIRE(run("report --run " + dir.str("eval_run") + " --out-dir " + dir.str("report_run"))
                .exit_code == 0);
    CHECK(fs::exists(dir.str("report_run") + "/reports/comparison.csv"));
    CHECK(fs::exists(dir.str("report_run") + "/reports/summary.json"));

    REQUIRE(run("curve --run " + dir.str("aligned") + " --teacher " + teacher_ckpt +
                " --out-dir " + dir.str("curve_run") +
                " --eval-count 6 --consistency-examples 6")
                .exit_code == 0);
    CHECK(fs::exists(dir.str("curve_run") + "/reports/curve.csv"));
    CHECK(fs::exists(dir.str("curve_run") + "/reports/curve.svg"));
}

TEST_CASE("config file values are applied and overridden by flags") {
    testutil::TempDir dir("cli_cfg");
    const auto cfs = dir.str("gen.json");
    {
        std::ofstream out(cfs);
        out << R"({"count": 12, "seed": 9, "k_min": 5, "k_max": 5})";
    }
    const auto a = dir.str("a.jsonl");
    REQUIRE(run("gen-data --config " + cfs + " --out " + a).exit_code == 0);
    const auto b = dir.str("b.jsonl");
    REQUIRE(run("gen-data --count 12 --seed 9 --k-min 5 --k-max 5 --out " + b).exit_code == 0);
    CHECK(slurp(a) == slurp(b));

    // flag overrides config value
    const auto c = dir.str("c.jsonl");
    REQUIRE(run("gen-data --config " + cfs + " --count 3 --out " + c).exit_code == 0);
    int lines = 0;
    std::ifstream in(c);
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 3);
}

TEST_CASE("ablate smoke: grid rows in csv") {
    testutil::TempDir dir("cli_ablate");
    const auto train = dir.str("train.jsonl");
    const auto eval = dir.str("eval.jsonl");
    REQUIRE(run("gen-data --out " + train + " --count 16 --seed 13").exit_code == 0);
    REQUIRE(run("gen-data --out " + eval + " --count 8 --seed 14").exit_code == 0);
    REQUIRE(run("pretrain --role teacher --data " + train + " --eval-data " + eval +
                " --out-dir " + dir.str("t") + " --d-model 32 --layers 1 --heads 2 --epochs 1 "
                "--batch 16 --target-acc 0 --eval-limit 4")
                .exit_code == 0);
    REQUIRE(run("pretrain --role student --data " + train + " --eval-data " + eval +
                " --out-dir " + dir.str("s") + " --d-model 16 --layers 1 --heads 2 --epochs 1 "
                "--batch 16 --target-acc 0 --eval-limit 4")
                .exit_code == 0);
    auto res = run("ablate --grid rank-variant --teacher " + dir.str("t") +
                   "/checkpoints/teacher.ckpt --student " + dir.str("s") +
                   "/checkpoints/student.ckpt --out-dir " + dir.str("ab") +
                   " --seeds 1 --epochs 1 --batch 8 --data-count 12 --eval-count 4 "
                   "--consistency-examples 4");
    CHECK(res.exit_code == 0);
    const auto csv = slurp(dir.str("ab") + "/reports/sweep.csv");
    CHECK(csv.find("rank_variant=eq3") != std::string::npos);
    CHECK(csv.find("rank_variant=eq4") != std::string::npos);
}
