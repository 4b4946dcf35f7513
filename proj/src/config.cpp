#include "aidflow/config.hpp"

#include "aidflow/io.hpp"

#include <cstdlib>
#include <functional>
#include <optional>
#include <type_traits>

namespace aidflow {

namespace {

using nlohmann::json;

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

struct IsoTime {
  Timestamp* value;
};

template <typename T>
json encode(const T& v) {
  return json(v);
}

json encode(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "' expects " + expected);
}

template <typename T>
void decode(const json& j, T& out, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) bad_type(key, "a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) bad_type(key, "an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned()) {
        out = j.get<T>();
      } else {
        if (j.get<std::int64_t>() < 0) bad_type(key, "a non-negative integer");
        out = static_cast<T>(j.get<std::int64_t>());
      }
    } else {
      out = j.get<T>();
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) bad_type(key, "a number");
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) bad_type(key, "a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::optional<double>>) {
    if (j.is_null()) {
      out.reset();
    } else {
      if (!j.is_number()) bad_type(key, "a number or null");
      out = j.get<double>();
    }
  } else {
    if (!j.is_array()) bad_type(key, "an array");
    try {
      out = j.get<T>();
    } catch (const json::exception&) {
      bad_type(key, "an array of the right element type");
    }
  }
}

template <typename T>
void add(std::vector<Field>& v, std::string key, T RunConfig::*mem) {
  v.push_back({key, [mem](const RunConfig& c) { return encode(c.*mem); },
               [mem, key](RunConfig& c, const json& j) { decode(j, c.*mem, key); }});
}

template <typename S, typename T>
void add(std::vector<Field>& v, const std::string& section, const char* name, S RunConfig::*sec, T S::*mem) {
  const std::string key = section + "." + name;
  v.push_back({key, [sec, mem](const RunConfig& c) { return encode((c.*sec).*mem); },
               [sec, mem, key](RunConfig& c, const json& j) { decode(j, (c.*sec).*mem, key); }});
}

std::vector<Field> build_fields() {
  std::vector<Field> f;
  add(f, "seed", &RunConfig::seed);

  using synthgen::SynthConfig;
  add(f, "synth", "days", &RunConfig::synth, &SynthConfig::days);
  add(f, "synth", "detector_pairs", &RunConfig::synth, &SynthConfig::detector_pairs);
  add(f, "synth", "incident_rate", &RunConfig::synth, &SynthConfig::incident_rate);
  add(f, "synth", "report_time_jitter_min", &RunConfig::synth, &SynthConfig::report_time_jitter_min);
  add(f, "synth", "template_mix", &RunConfig::synth, &SynthConfig::template_mix);
  add(f, "synth", "noise_std", &RunConfig::synth, &SynthConfig::noise_std);
  add(f, "synth", "missing_rate", &RunConfig::synth, &SynthConfig::missing_rate);
  f.push_back({"synth.start", [](const RunConfig& c) { return json(format_iso8601(c.synth.start)); },
               [](RunConfig& c, const json& j) {
                 if (!j.is_string()) bad_type("synth.start", "an ISO-8601 timestamp string");
                 try {
                   c.synth.start = parse_iso8601(j.get<std::string>());
                 } catch (const Error& e) {
                   throw ConfigError(std::string("synth.start: ") + e.what());
                 }
               }});

  using preprocess::Options;
  add(f, "preprocess", "grid_step_s", &RunConfig::preprocess, &Options::grid_step_s);
  add(f, "preprocess", "max_interp_gap_s", &RunConfig::preprocess, &Options::max_interp_gap_s);
  add(f, "preprocess", "ema_window", &RunConfig::preprocess, &Options::ema_window);
  add(f, "preprocess", "ema_alpha", &RunConfig::preprocess, &Options::ema_alpha);
  add(f, "preprocess", "quality_window_s", &RunConfig::preprocess, &Options::quality_window_s);
  add(f, "preprocess", "quality_k", &RunConfig::preprocess, &Options::quality_k);
  add(f, "preprocess", "offset_window_s", &RunConfig::preprocess, &Options::offset_window_s);
  add(f, "preprocess", "offset_mask_margin_s", &RunConfig::preprocess, &Options::offset_mask_margin_s);
  add(f, "preprocess", "ref_percentile", &RunConfig::preprocess, &Options::ref_percentile);
  add(f, "preprocess", "speed_clip", &RunConfig::preprocess, &Options::speed_clip);
  add(f, "preprocess", "history_steps", &RunConfig::preprocess, &Options::history_steps);
  add(f, "preprocess", "stride", &RunConfig::preprocess, &Options::stride);

  using weaklabel::LfThresholds;
  add(f, "lf", "recent_steps", &RunConfig::lf, &LfThresholds::recent_steps);
  add(f, "lf", "separation", &RunConfig::lf, &LfThresholds::separation);
  add(f, "lf", "strong_separation", &RunConfig::lf, &LfThresholds::strong_separation);
  add(f, "lf", "one_sided_drop", &RunConfig::lf, &LfThresholds::one_sided_drop);
  add(f, "lf", "one_sided_drop_steady", &RunConfig::lf, &LfThresholds::one_sided_drop_steady);
  add(f, "lf", "double_drop_steps", &RunConfig::lf, &LfThresholds::double_drop_steps);
  add(f, "lf", "double_sided_drop", &RunConfig::lf, &LfThresholds::double_sided_drop);
  add(f, "lf", "occupancy_separation", &RunConfig::lf, &LfThresholds::occupancy_separation);
  add(f, "lf", "strong_occupancy_separation", &RunConfig::lf, &LfThresholds::strong_occupancy_separation);
  add(f, "lf", "occupancy_rise", &RunConfig::lf, &LfThresholds::occupancy_rise);
  add(f, "lf", "occupancy_steady", &RunConfig::lf, &LfThresholds::occupancy_steady);
  add(f, "lf", "free_flow_speed", &RunConfig::lf, &LfThresholds::free_flow_speed);
  add(f, "lf", "free_flow_occupancy", &RunConfig::lf, &LfThresholds::free_flow_occupancy);
  add(f, "lf", "parallel_tolerance", &RunConfig::lf, &LfThresholds::parallel_tolerance);

  using weaklabel::LabelModelConfig;
  add(f, "label_model", "prior", &RunConfig::label_model, &LabelModelConfig::prior);
  add(f, "label_model", "min_pairs", &RunConfig::label_model, &LabelModelConfig::min_pairs);
  add(f, "label_model", "accuracy_floor", &RunConfig::label_model, &LabelModelConfig::accuracy_floor);
  add(f, "label_model", "accuracy_ceiling", &RunConfig::label_model, &LabelModelConfig::accuracy_ceiling);
  add(f, "label_model", "fallback_accuracy", &RunConfig::label_model, &LabelModelConfig::fallback_accuracy);
  add(f, "label_model", "min_moment", &RunConfig::label_model, &LabelModelConfig::min_moment);

  using classifier::ModelConfig;
  add(f, "model", "lstm_layers", &RunConfig::model, &ModelConfig::lstm_layers);
  add(f, "model", "units", &RunConfig::model, &ModelConfig::units);
  add(f, "model", "bidirectional", &RunConfig::model, &ModelConfig::bidirectional);
  add(f, "model", "dense_layers", &RunConfig::model, &ModelConfig::dense_layers);
  add(f, "model", "dense_units", &RunConfig::model, &ModelConfig::dense_units);
  add(f, "model", "seq_len", &RunConfig::model, &ModelConfig::seq_len);
  add(f, "model", "input_channels", &RunConfig::model, &ModelConfig::input_channels);

  using classifier::TrainConfig;
  add(f, "train", "batch_size", &RunConfig::train, &TrainConfig::batch_size);
  add(f, "train", "epochs", &RunConfig::train, &TrainConfig::epochs);
  add(f, "train", "learning_rate", &RunConfig::train, &TrainConfig::learning_rate);
  add(f, "train", "patience", &RunConfig::train, &TrainConfig::patience);
  add(f, "train", "gamma", &RunConfig::train, &TrainConfig::gamma);
  add(f, "train", "threshold", &RunConfig::train, &TrainConfig::threshold);
  add(f, "train", "hard_targets", &RunConfig::train, &TrainConfig::hard_targets);

  using classifier::SearchSpace;
  add(f, "search", "min_lstm_layers", &RunConfig::search, &SearchSpace::min_lstm_layers);
  add(f, "search", "max_lstm_layers", &RunConfig::search, &SearchSpace::max_lstm_layers);
  add(f, "search", "units", &RunConfig::search, &SearchSpace::units);
  add(f, "search", "bidirectional", &RunConfig::search, &SearchSpace::bidirectional);
  add(f, "search", "min_dense_layers", &RunConfig::search, &SearchSpace::min_dense_layers);
  add(f, "search", "max_dense_layers", &RunConfig::search, &SearchSpace::max_dense_layers);
  add(f, "search", "min_learning_rate", &RunConfig::search, &SearchSpace::min_learning_rate);
  add(f, "search", "max_learning_rate", &RunConfig::search, &SearchSpace::max_learning_rate);
  add(f, "search", "batch_sizes", &RunConfig::search, &SearchSpace::batch_sizes);
  add(f, "search_budget", &RunConfig::search_budget);
  add(f, "knn_k", &RunConfig::knn_k);

  using ensemble::EnsembleConfig;
  add(f, "ensemble", "n_seeds", &RunConfig::ensemble, &EnsembleConfig::n_seeds);
  add(f, "ensemble", "selection_threshold", &RunConfig::ensemble, &EnsembleConfig::selection_threshold);

  using detection::DetectionConfig;
  add(f, "detection", "prob_threshold", &RunConfig::detection, &DetectionConfig::prob_threshold);
  add(f, "detection", "free_flow_cut", &RunConfig::detection, &DetectionConfig::free_flow_cut);
  add(f, "detection", "consecutive_threshold", &RunConfig::detection, &DetectionConfig::consecutive_threshold);
  add(f, "detection", "strict", &RunConfig::detection, &DetectionConfig::strict);
  add(f, "detection", "use_quantile", &RunConfig::detection, &DetectionConfig::use_quantile);
  add(f, "detection", "match_tolerance_s", &RunConfig::detection, &DetectionConfig::match_tolerance_s);

  using pipeline::DatasetConfig;
  add(f, "dataset", "train_days", &RunConfig::dataset, &DatasetConfig::train_days);
  add(f, "dataset", "val_days", &RunConfig::dataset, &DatasetConfig::val_days);
  add(f, "dataset", "context_margin_s", &RunConfig::dataset, &DatasetConfig::context_margin_s);
  add(f, "dataset", "background_stride", &RunConfig::dataset, &DatasetConfig::background_stride);
  add(f, "dataset", "detection_warmup_s", &RunConfig::dataset, &DatasetConfig::detection_warmup_s);
  add(f, "dataset", "label_source", &RunConfig::dataset, &DatasetConfig::label_source);
  add(f, "slice_format", &RunConfig::slice_format);
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

const Field* find_field(std::string_view key) {
  for (const Field& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, const json*>>& out) {
  if (j.is_object() && (prefix.empty() || find_field(prefix) == nullptr)) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out.emplace_back(prefix, &j);
  }
}

}  // namespace

void RunConfig::validate() const {
  synth_config().validate();
  preprocess.validate();
  model.validate();
  train.validate();
  ensemble.validate();
  detection.validate();
  dataset.validate();
  if (search_budget < 1) throw ConfigError("search_budget must be >= 1");
  if (knn_k < 1) throw ConfigError("knn_k must be >= 1");
  if (model.seq_len != preprocess.history_steps)
    throw ConfigError("model.seq_len must equal preprocess.history_steps");
  if (label_model.accuracy_floor > label_model.accuracy_ceiling)
    throw ConfigError("label_model.accuracy_floor exceeds accuracy_ceiling");
  if (label_model.prior && !(*label_model.prior > 0.0 && *label_model.prior < 1.0))
    throw ConfigError("label_model.prior must be in (0, 1)");
  if (lf.recent_steps < 1 || lf.recent_steps > preprocess.history_steps)
    throw ConfigError("lf.recent_steps must be in [1, history_steps]");
  if (lf.double_drop_steps < 1 || lf.double_drop_steps > preprocess.history_steps)
    throw ConfigError("lf.double_drop_steps must be in [1, history_steps]");
  (void)io::slice_format_from_string(slice_format);
}

synthgen::SynthConfig RunConfig::synth_config() const {
  synthgen::SynthConfig s = synth;
  s.seed = seed;
  return s;
}

classifier::TrainConfig RunConfig::train_config() const {
  classifier::TrainConfig t = train;
  t.seed = derive_seed(seed, 101);
  return t;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

nlohmann::json to_json(const RunConfig& config) {
  json out = json::object();
  for (const Field& f : fields()) out[json::json_pointer("/" + [&] {
                                      std::string p = f.key;
                                      for (char& ch : p)
                                        if (ch == '.') ch = '/';
                                      return p;
                                    }())] = f.get(config);
  return out;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  std::vector<std::pair<std::string, const json*>> flat;
  flatten(j, "", flat);
  for (const auto& [key, value] : flat) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
    f->set(c, *value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override must look like key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  f->set(config, value);
}

void apply_environment(RunConfig& config) {
  const char* env = std::getenv("AIDFLOW_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    const std::int64_t v = parse_int(env);
    if (v < 0) throw Error("negative");
    config.seed = static_cast<std::uint64_t>(v);
  } catch (const Error&) {
    throw ConfigError("AIDFLOW_SEED must be a non-negative integer");
  }
}

}  // namespace aidflow
