#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lnn/serialize.hpp"

#ifndef LNN_CLI_PATH
#define LNN_CLI_PATH "lnn"
#endif

namespace fs = std::filesystem;
using lnn::json;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() : dir(fs::temp_directory_path() / "lnn_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

int run(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(LNN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) { return lnn::read_text_file(p); }

std::string tiny_synth_args(const fs::path& out, unsigned seed) {
  return "synth --out " + out.string() + " --seed " + std::to_string(seed) +
         " --subjects 2 --train-per-subject 16 --test 6 --voxels 24 --tokens 3 --feat 8";
}

}  // namespace

TEST_CASE("help exits zero for every subcommand") {
  Scratch s;
  CHECK(run("--help", s.dir / "h.log") == 0);
  for (const char* sub : {"synth", "train", "eval", "retrieve", "export", "gradcheck", "ablate"})
    CHECK(run(std::string(sub) + " --help", s.dir / "h2.log") == 0);
}

TEST_CASE("synth is deterministic under the seed") {
  Scratch s;
  REQUIRE(run(tiny_synth_args(s.dir / "a", 7), s.dir / "s1.log") == 0);
  REQUIRE(run(tiny_synth_args(s.dir / "b", 7), s.dir / "s2.log") == 0);
  CHECK(slurp(s.dir / "a/manifest.json") == slurp(s.dir / "b/manifest.json"));
  CHECK(slurp(s.dir / "a/train/S1/voxels.bin") == slurp(s.dir / "b/train/S1/voxels.bin"));
  CHECK(slurp(s.dir / "a/test/features.bin") == slurp(s.dir / "b/test/features.bin"));
}

TEST_CASE("train completes in both geometries and writes artifacts") {
  Scratch s;
  REQUIRE(run(tiny_synth_args(s.dir / "ds", 3), s.dir / "s.log") == 0);
  const std::string common = " --dataset " + (s.dir / "ds").string() +
                             " --seed 5 --epochs 2 --batch 8 ";
  REQUIRE(run("train" + common + "--out " + (s.dir / "lor").string() + " --geometry lorentz",
              s.dir / "t1.log") == 0);
  REQUIRE(run("train" + common + "--out " + (s.dir / "euc").string() + " --geometry euclidean",
              s.dir / "t2.log") == 0);
  for (const char* d : {"lor", "euc"}) {
    CHECK(fs::exists(s.dir / d / "loss_log.csv"));
    CHECK(fs::exists(s.dir / d / "run_config.json"));
    CHECK(fs::exists(s.dir / d / "checkpoint/manifest.json"));
    CHECK(fs::exists(s.dir / d / "checkpoint/params.bin"));
  }
  const std::string log = slurp(s.dir / "lor/loss_log.csv");
  CHECK(log.rfind("epoch,total,contrastive,entailment,tau,c_mid,c_out\n", 0) == 0);
  // euclidean runs log a zero entailment column
  const std::string elog = slurp(s.dir / "euc/loss_log.csv");
  CHECK(elog.find(",0,") != std::string::npos);

  // downstream commands consume the checkpoint
  CHECK(run("eval --checkpoint " + (s.dir / "lor/checkpoint").string() + " --dataset " +
                (s.dir / "ds").string() + " --out " + (s.dir / "ev").string(),
            s.dir / "e.log") == 0);
  CHECK(fs::exists(s.dir / "ev/metrics_report.json"));
  CHECK(run("retrieve --checkpoint " + (s.dir / "lor/checkpoint").string() + " --dataset " +
                (s.dir / "ds").string() + " --out " + (s.dir / "rt").string(),
            s.dir / "r.log") == 0);
  CHECK(fs::exists(s.dir / "rt/retrieval_report.json"));
  CHECK(run("export --checkpoint " + (s.dir / "lor/checkpoint").string() + " --dataset " +
                (s.dir / "ds").string() + " --out " + (s.dir / "ex").string(),
            s.dir / "x.log") == 0);
  CHECK(fs::exists(s.dir / "ex/embeddings.csv"));
  CHECK(fs::exists(s.dir / "ex/histogram.json"));

  // threaded evaluation reduces in fixed order: identical report bytes
  CHECK(run("eval --checkpoint " + (s.dir / "lor/checkpoint").string() + " --dataset " +
                (s.dir / "ds").string() + " --out " + (s.dir / "ev4").string() + " --threads 4",
            s.dir / "e4.log") == 0);
  CHECK(slurp(s.dir / "ev/metrics_report.json") == slurp(s.dir / "ev4/metrics_report.json"));
}

TEST_CASE("invalid configuration exits 2 with a single-line error") {
  Scratch s;
  lnn::write_text_file(s.dir / "bad.json", "{\"dataset\": \"x\", \"no_such_key\": 1}\n");
  CHECK(run("train --config " + (s.dir / "bad.json").string(), s.dir / "b1.log") == 2);
  const std::string msg = slurp(s.dir / "b1.log");
  CHECK(msg.rfind("error:", 0) == 0);
  CHECK(msg.find('\n') == msg.size() - 1);  // exactly one line

  CHECK(run("train --dataset " + (s.dir / "missing").string(), s.dir / "b2.log") == 2);
  CHECK(run("train", s.dir / "b3.log") == 2);          // dataset required
  CHECK(run("definitely-not-a-command", s.dir / "b4.log") == 2);
}

TEST_CASE("gradcheck passes at reduced config count") {
  Scratch s;
  CHECK(run("gradcheck --configs 3", s.dir / "g.log") == 0);
  const std::string out = slurp(s.dir / "g.log");
  CHECK(out.find("lorentz_attention") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
}
