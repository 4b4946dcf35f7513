#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "aidflow/cli.hpp"
#include "aidflow/common.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using aidflow::read_file;

namespace {

const std::vector<std::string> kSmall{"-s", "synth.days=5",        "-s", "synth.detector_pairs=2",
                                      "-s", "dataset.train_days=2", "-s", "dataset.val_days=1",
                                      "-s", "train.epochs=2",       "-s", "model.units=4",
                                      "-s", "model.dense_units=4",  "-s", "ensemble.n_seeds=2",
                                      "-s", "search_budget=2",      "-s", "search.units=[4]",
                                      "-s", "search.max_lstm_layers=1"};

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args, bool small = true) {
  std::vector<std::string> full{"aidflow"};
  if (small) full.insert(full.end(), kSmall.begin(), kSmall.end());
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = aidflow::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aidflow_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string sh(const std::string& cmd, int& status) {
  std::string out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  status = ::pclose(pipe);
  return out;
}

}  // namespace

TEST_CASE("full command chain") {
  const fs::path root = fresh("chain");
  const std::string corpus = (root / "corpus").string(), data = (root / "data").string();
  REQUIRE(cli({"generate", "-o", corpus}).code == 0);
  for (const char* f : {"detectors.csv", "measurements.csv", "incidents.csv"}) CHECK(fs::exists(fs::path(corpus) / f));

  const auto pre = cli({"preprocess", "--corpus", corpus, "-o", data});
  REQUIRE_MESSAGE(pre.code == 0, pre.err);
  for (const char* f : {"train_slices.csv", "val_slices.csv", "test_slices.csv", "references.csv", "split.json",
                        "quality_report.txt"})
    CHECK(fs::exists(fs::path(data) / f));
  const auto report = read_file(fs::path(data) / "quality_report.txt");
  for (const char* section : {"[gaps]", "[quality]", "[split]", "[slices]", "[references]"})
    CHECK(report.find(section) != std::string::npos);

  const auto lab = cli({"label", "--data", data});
  REQUIRE_MESSAGE(lab.code == 0, lab.err);
  CHECK(fs::exists(fs::path(data) / "label_matrix.csv"));
  CHECK(fs::exists(fs::path(data) / "lf_stats.txt"));
  CHECK(fs::exists(fs::path(data) / "label_model.json"));

  const std::string model = (root / "model.json").string();
  const auto trn = cli({"train", "--data", data, "-o", model, "--search"});
  REQUIRE_MESSAGE(trn.code == 0, trn.err);
  CHECK(fs::exists(model));
  CHECK(fs::exists(root / "model.history.csv"));
  CHECK(fs::exists(root / "model.search.csv"));

  const std::string ens = (root / "ens").string();
  const auto e = cli({"ensemble", "--data", data, "-o", ens});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  CHECK(fs::exists(fs::path(ens) / "manifest.json"));

  const std::string eval = (root / "eval").string();
  const auto ev = cli({"evaluate", "--corpus", corpus, "--data", data, "--ensemble", ens, "-o", eval});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  for (const char* f : {"metrics.csv", "metrics.txt", "match_report.txt", "events.csv", "detections.csv"})
    CHECK(fs::exists(fs::path(eval) / f));
  CHECK(read_file(fs::path(eval) / "match_report.txt").find("dr: ") != std::string::npos);

  const std::string log = (root / "stream.jsonl").string();
  const auto st = cli({"stream", "--corpus", corpus, "--data", data, "--model", model, "-o", log});
  REQUIRE_MESSAGE(st.code == 0, st.err);
  std::istringstream lines(read_file(log));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("status"));
    ++n;
  }
  CHECK(n > 100);

  const std::string plots = (root / "plots").string();
  const auto rep = cli({"report", "--eval", eval, "-o", plots}, false);
  REQUIRE_MESSAGE(rep.code == 0, rep.err);
  CHECK(fs::exists(fs::path(plots) / "summary.csv"));
  CHECK(fs::exists(fs::path(plots) / "match_report.txt"));

  {  // history length mismatch
    const auto bad = cli({"-s", "model.seq_len=12", "-s", "preprocess.history_steps=12", "train", "--data", data, "-o",
                          (root / "bad.json").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error: ") == 0);
    CHECK(bad.err.find("H=12") != std::string::npos);
    CHECK(bad.err.find("H=20") != std::string::npos);
  }
  {  // evaluation needs a predictor
    const auto bad = cli({"evaluate", "--corpus", corpus, "--data", data, "-o", eval});
    CHECK(bad.code == 1);
  }
  fs::remove_all(root);
}

TEST_CASE("generation and preprocessing are deterministic") {
  const fs::path a = fresh("det_a"), b = fresh("det_b");
  for (const auto& root : {a, b}) {
    REQUIRE(cli({"generate", "-o", (root / "c").string()}).code == 0);
    REQUIRE(cli({"preprocess", "--corpus", (root / "c").string(), "-o", (root / "d").string()}).code == 0);
  }
  for (const char* f : {"c/measurements.csv", "c/incidents.csv", "d/train_slices.csv", "d/test_slices.csv"})
    CHECK(read_file(a / f) == read_file(b / f));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config command and errors") {
  const auto c = cli({"config"});
  REQUIRE(c.code == 0);
  const auto j = nlohmann::json::parse(c.out);
  CHECK(j["synth"]["days"] == 5);
  CHECK(cli({"-s", "nope=1", "config"}).code == 1);
  CHECK(cli({"-c", "/nonexistent/cfg.json", "config"}).code == 1);
  CHECK(cli({"preprocess", "--corpus", "/nonexistent", "-o", "/tmp/x"}).err.find("error: ") == 0);
  CHECK(cli({}, false).code != 0);
}

TEST_CASE("installed binary") {
  const char* bin = std::getenv("AIDFLOW_BIN");
  if (bin == nullptr) return;
  int status = 0;
  const std::string out = sh(std::string(bin) + " -s seed=3 config 2>&1", status);
  CHECK(status == 0);
  CHECK(nlohmann::json::parse(out)["seed"] == 3);
  sh(std::string(bin) + " -s bogus=1 config 2>/dev/null", status);
  CHECK(WEXITSTATUS(status) == 1);
  const std::string env = sh("AIDFLOW_SEED=11 " + std::string(bin) + " config", status);
  CHECK(nlohmann::json::parse(env)["seed"] == 11);
}
