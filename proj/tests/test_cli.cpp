#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "faust/binary_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("faust_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static CliRun run(const std::string& args) {
    const auto out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string("cd '") + dir_.string() + "' && '" + FAUST_CLI_PATH + "' " + args + " >'" + out +
                            "' 2>'" + err + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = faust::io::read_file(out);
    r.err = faust::io::read_file(err);
    return r;
  }

  // gen-data -> pretrain on two-moons, shared by the tests below.
  static void ensure_pipeline() {
    if (fs::exists(path("src.fckpt"))) return;
    ASSERT_EQ(run("gen-data --family two-moons --n 2000 --seed 0 --out moons").code, 0);
    ASSERT_EQ(run("pretrain --data moons/source.fdat --seed 1 --out src.fckpt").code, 0);
  }

  static bool one_error_line(const CliRun& r, const std::string& code) {
    static const std::regex line(R"(^error: code=([a-z_]+) msg="([^"\\]|\\.)*"\n$)");
    std::smatch m;
    return std::regex_match(r.err, m, line) && m[1] == code;
  }

  static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, GammaTwoIsAUsageError) {
  ensure_pipeline();
  const auto r = run("adapt --source-ckpt src.fckpt --target-data moons/target.fdat --gamma 2 --out bad.fckpt");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(one_error_line(r, "invalid_value")) << r.err;
  EXPECT_FALSE(fs::exists(path("bad.fckpt")));
}

TEST_F(Cli, DistinctErrorKinds) {
  ensure_pipeline();
  const auto unknown = run("eval --ckpt src.fckpt --data moons/target_eval.fdat --frobnicate");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_TRUE(one_error_line(unknown, "unknown_flag")) << unknown.err;

  const auto missing = run("eval --ckpt nowhere.fckpt --data moons/target_eval.fdat");
  EXPECT_EQ(missing.code, 2);
  EXPECT_TRUE(one_error_line(missing, "missing_file")) << missing.err;

  ASSERT_EQ(run("gen-data --family tiny-digits --n 500 --seed 0 --out digits").code, 0);
  const auto shape = run("eval --ckpt src.fckpt --data digits/target.fdat");
  EXPECT_EQ(shape.code, 1);
  EXPECT_TRUE(one_error_line(shape, "shape_mismatch")) << shape.err;

  const auto none = run("");
  EXPECT_EQ(none.code, 2);
  EXPECT_TRUE(one_error_line(none, "usage")) << none.err;

  const auto sub = run("train");
  EXPECT_EQ(sub.code, 2);
  EXPECT_TRUE(one_error_line(sub, "unknown_command")) << sub.err;

  faust::io::write_file(path("garbage.fckpt"), "not a checkpoint");
  const auto magic = run("eval --ckpt garbage.fckpt --data moons/target_eval.fdat");
  EXPECT_EQ(magic.code, 1);
  EXPECT_TRUE(one_error_line(magic, "bad_magic")) << magic.err;
}

TEST_F(Cli, FullPipelineUnderTwoMinutes) {
  const auto t0 = std::chrono::steady_clock::now();
  ASSERT_EQ(run("gen-data --family two-moons --n 2000 --seed 3 --out pipe").code, 0);
  ASSERT_EQ(run("pretrain --data pipe/source.fdat --seed 3 --out pipe/src.fckpt").code, 0);
  ASSERT_EQ(run("adapt --source-ckpt pipe/src.fckpt --target-data pipe/target.fdat --seed 3 --out pipe/ad.fckpt").code, 0);
  const auto ev = run("eval --ckpt pipe/ad.fckpt --data pipe/target_eval.fdat --perturb weak");
  ASSERT_EQ(ev.code, 0) << ev.err;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(seconds, 120.0);
  const auto j = json::parse(ev.out);
  EXPECT_GE(j.at("accuracy").get<double>(), 0.0);
  EXPECT_LE(j.at("accuracy").get<double>(), 1.0);

  for (const char* m : {"pipe/manifest.json", "pipe/src.fckpt.manifest.json", "pipe/ad.fckpt.manifest.json"}) {
    const auto man = json::parse(faust::io::read_file(path(m)));
    EXPECT_TRUE(man.contains("command"));
    EXPECT_TRUE(man.contains("config"));
    EXPECT_TRUE(man.contains("seed"));
    EXPECT_FALSE(man.at("outputs").empty());
    for (const auto& [role, entry] : man.at("outputs").items()) EXPECT_EQ(entry.at("sha256").get<std::string>().size(), 64u);
  }
}

TEST_F(Cli, EvalWritesNothing) {
  ensure_pipeline();
  std::size_t before = 0, after = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_)) before += e.path().filename() != "stdout.txt";
  ASSERT_EQ(run("eval --ckpt src.fckpt --data moons/target_eval.fdat --perturb strong --seed 4").code, 0);
  for (const auto& e : fs::recursive_directory_iterator(dir_)) after += e.path().filename() != "stdout.txt";
  EXPECT_EQ(before, after);
}

TEST_F(Cli, IdempotentAndReplayableFromManifest) {
  ensure_pipeline();
  ASSERT_EQ(run("gen-data --family two-moons --n 2000 --seed 0 --out moons2").code, 0);
  for (const char* f : {"source.fdat", "target.fdat", "target_eval.fdat"}) {
    EXPECT_EQ(faust::io::read_file(path(std::string("moons/") + f)), faust::io::read_file(path(std::string("moons2/") + f)));
  }
  const std::string base = "adapt --source-ckpt src.fckpt --target-data moons/target.fdat ";
  ASSERT_EQ(run(base + "--gamma 1 --views 3 --epochs 2 --seed 9 --out a.fckpt").code, 0);
  ASSERT_EQ(run(base + "--gamma 1 --views 3 --epochs 2 --seed 9 --out b.fckpt").code, 0);
  ASSERT_EQ(run(base + "--config a.fckpt.manifest.json --out c.fckpt").code, 0);
  const auto log_a = faust::io::read_file(path("a.fckpt.runlog.jsonl"));
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, faust::io::read_file(path("b.fckpt.runlog.jsonl")));
  EXPECT_EQ(log_a, faust::io::read_file(path("c.fckpt.runlog.jsonl")));
  EXPECT_EQ(faust::io::read_file(path("a.fckpt")), faust::io::read_file(path("c.fckpt")));
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  ensure_pipeline();
  faust::io::write_file(path("cfg.json"), R"({"alpha": 0.2, "beta": 0.7, "max_epochs": 1})");
  const std::string base = "adapt --source-ckpt src.fckpt --target-data moons/target.fdat --config cfg.json ";
  ASSERT_EQ(run(base + "--out p.fckpt").code, 0);
  ASSERT_EQ(run(base + "--alpha 0.3 --out q.fckpt").code, 0);
  const auto p = json::parse(faust::io::read_file(path("p.fckpt.manifest.json"))).at("config");
  const auto q = json::parse(faust::io::read_file(path("q.fckpt.manifest.json"))).at("config");
  EXPECT_EQ(p.at("alpha"), 0.2);
  EXPECT_EQ(q.at("alpha"), 0.3);
  EXPECT_EQ(q.at("beta"), 0.7);
  EXPECT_EQ(q.at("max_epochs"), 1);
  EXPECT_EQ(q.at("views"), 2);  // default materialized
}

TEST_F(Cli, AblateRowOrderAndSchema) {
  const auto r = run("ablate --n 400 --repeats 1 --epochs 1 --out ab.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(faust::io::read_file(path("ab.csv")));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "task,preset,accuracy_mean,accuracy_std");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1));
  EXPECT_EQ(rows, (std::vector<std::string>{"L_e-only", "L_u-only", "L_i+L_f", "FAUST", "FAUST+U"}));

  // selected rows keep the canonical order
  ASSERT_EQ(run("ablate --n 400 --repeats 1 --epochs 1 --preset faust-u --preset entropy-only --out ab2.csv").code, 0);
  const auto two = faust::io::read_file(path("ab2.csv"));
  EXPECT_LT(two.find("L_e-only"), two.find("FAUST+U"));

  const auto bad = run("ablate --preset nonsense --out ab3.csv");
  EXPECT_EQ(bad.code, 2);
  EXPECT_TRUE(one_error_line(bad, "invalid_value")) << bad.err;
}

TEST_F(Cli, SweepViewsRows) {
  const auto r = run("sweep-views --n 400 --repeats 1 --epochs 1 --views 1..3 --out sv.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = faust::io::read_file(path("sv.csv"));
  EXPECT_NE(csv.find("FAUST v=1"), std::string::npos);
  EXPECT_NE(csv.find("FAUST v=3"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(run("sweep-views --views 0..2 --out sv2.csv").code, 2);
}
