#include <cstdlib>
#include <filesystem>

#include "aidflow/config.hpp"
#include "doctest.h"

using namespace aidflow;

namespace {

std::size_t leaf_count(const nlohmann::json& j) {
  if (!j.is_object()) return 1;
  std::size_t n = 0;
  for (const auto& [k, v] : j.items()) n += leaf_count(v);
  return n;
}

}  // namespace

TEST_CASE("dump covers every key") {
  const RunConfig def;
  const auto j = to_json(def);
  const auto keys = config_keys();
  CHECK(leaf_count(j) == keys.size());
  for (const auto& k : keys) {
    std::string ptr = "/" + k;
    for (auto& c : ptr)
      if (c == '.') c = '/';
    CHECK_MESSAGE(j.contains(nlohmann::json::json_pointer(ptr)), k);
  }
}

TEST_CASE("defaults are the module defaults") {
  const RunConfig def;
  CHECK(def.model == classifier::ModelConfig{});
  CHECK(def.lf == weaklabel::LfThresholds{});
  CHECK(def.label_model == weaklabel::LabelModelConfig{});
  CHECK(def.detection == detection::DetectionConfig{});
  CHECK(def.dataset == pipeline::DatasetConfig{});
  CHECK(def.ensemble == ensemble::EnsembleConfig{});
  CHECK(def.preprocess.quality_k == 1.0);
  CHECK(def.preprocess.history_steps == def.model.seq_len);
  CHECK(def.search_budget == 10);
  CHECK(def.knn_k == 5);
}

TEST_CASE("json round trip") {
  RunConfig c;
  c.seed = 99;
  c.train.learning_rate = 0.003;
  c.detection.strict = false;
  c.label_model.prior = 0.3;
  c.synth.template_mix = {0.1, 0.2, 0.3, 0.4};
  c.search.units = {8, 16};
  c.slice_format = "binary";
  const auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.seed == 99);
  CHECK(*back.label_model.prior == 0.3);
  CHECK(back.search.units == std::vector<std::size_t>{8, 16});
}

TEST_CASE("partial files keep defaults") {
  const auto c = run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": 3}, "seed": 4})"));
  CHECK(c.train.epochs == 3);
  CHECK(c.seed == 4);
  CHECK(c.train.batch_size == 64);
  CHECK(c.model == classifier::ModelConfig{});
}

TEST_CASE("bad files are rejected") {
  auto bad = [](const char* text) { return run_config_from_json(nlohmann::json::parse(text)); };
  CHECK_THROWS_WITH_AS(bad(R"({"train": {"epoch": 3}})"), doctest::Contains("unknown config key 'train.epoch'"),
                       ConfigError);
  CHECK_THROWS_AS(bad(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"train": {"epochs": -3}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"train": {"epochs": 2.5}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"model": {"seq_len": 12}})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"slice_format": "xml"})"), ConfigError);
  CHECK_THROWS_AS(bad(R"({"detection": {"strict": "yes"}})"), ConfigError);
  CHECK_NOTHROW(bad(R"({"model": {"seq_len": 12}, "preprocess": {"history_steps": 12}})"));
  CHECK_NOTHROW(bad(R"({"label_model": {"prior": null}})"));
}

TEST_CASE("overrides") {
  RunConfig c;
  apply_override(c, "train.epochs=5");
  apply_override(c, "detection.strict=false");
  apply_override(c, "synth.start=2020-03-01T00:00:00Z");
  apply_override(c, "dataset.label_source=reported");
  apply_override(c, "search.units=[4,8]");
  CHECK(c.train.epochs == 5);
  CHECK(!c.detection.strict);
  CHECK(c.synth.start == parse_iso8601("2020-03-01T00:00:00Z"));
  CHECK(c.dataset.label_source == "reported");
  CHECK(c.search.units == std::vector<std::size_t>{4, 8});
  CHECK_THROWS_AS(apply_override(c, "train.epochs"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "nope=1"), ConfigError);
}

TEST_CASE("seed environment variable") {
  RunConfig c;
  ::setenv("AIDFLOW_SEED", "1234", 1);
  apply_environment(c);
  CHECK(c.seed == 1234);
  ::setenv("AIDFLOW_SEED", "12x", 1);
  CHECK_THROWS_AS(apply_environment(c), ConfigError);
  ::unsetenv("AIDFLOW_SEED");
  apply_environment(c);
  CHECK(c.seed == 1234);
}

TEST_CASE("stage seeds") {
  RunConfig c;
  CHECK(c.synth_config().seed == c.seed);
  CHECK(c.train_config().seed == derive_seed(c.seed, 101));
  CHECK(c.ensemble_seed() != c.search_seed());
}

TEST_CASE("load from disk") {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / "aidflow_config_test.json";
  write_file_atomic(p, R"({"knn_k": 9})");
  CHECK(load_run_config(p).knn_k == 9);
  write_file_atomic(p, "{");
  CHECK_THROWS_AS(load_run_config(p), ConfigError);
  fs::remove(p);
}
