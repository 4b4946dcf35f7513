#include "aidflow/cli.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aidflow/classifier.hpp"
#include "aidflow/config.hpp"
#include "aidflow/detection.hpp"
#include "aidflow/ensemble.hpp"
#include "aidflow/io.hpp"
#include "aidflow/pipeline.hpp"
#include "aidflow/stream.hpp"
#include "aidflow/synthgen.hpp"
#include "aidflow/weaklabel.hpp"

namespace aidflow {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

RunConfig effective_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  for (const std::string& o : c.overrides) apply_override(cfg, o);
  apply_environment(cfg);
  cfg.validate();
  return cfg;
}

std::string slice_ext(const RunConfig& cfg) {
  return io::slice_format_from_string(cfg.slice_format) == io::SliceFormat::binary ? ".bin" : ".csv";
}

fs::path slices_path(const fs::path& dir, const std::string& name, const RunConfig& cfg) {
  return dir / (name + "_slices" + slice_ext(cfg));
}

fs::path existing_slices(const fs::path& dir, const std::string& name) {
  for (const char* ext : {".csv", ".bin"}) {
    const fs::path p = dir / (name + "_slices" + ext);
    if (fs::exists(p)) return p;
  }
  throw Error("missing " + name + " slices in " + dir.string());
}

/// Labeled slices when present, plain slices otherwise.
std::vector<TimeSlice> load_split(const fs::path& dir, const std::string& split) {
  for (const char* ext : {".csv", ".bin"}) {
    const fs::path p = dir / (split + "_labeled_slices" + ext);
    if (fs::exists(p)) return io::read_slices(p);
  }
  return io::read_slices(existing_slices(dir, split));
}

struct SplitInfo {
  pipeline::SplitBounds bounds;
  std::size_t history_steps = 0;
};

std::string split_json(const pipeline::SplitBounds& b, std::size_t H) {
  ordered_json j;
  j["begin"] = format_iso8601(b.begin);
  j["train_end"] = format_iso8601(b.train_end);
  j["val_end"] = format_iso8601(b.val_end);
  j["end"] = format_iso8601(b.end);
  j["history_steps"] = H;
  return j.dump(2) + "\n";
}

SplitInfo read_split(const fs::path& dir) {
  const auto j = nlohmann::json::parse(read_file(dir / "split.json"));
  SplitInfo s;
  s.bounds.begin = parse_iso8601(j.at("begin").get<std::string>());
  s.bounds.train_end = parse_iso8601(j.at("train_end").get<std::string>());
  s.bounds.val_end = parse_iso8601(j.at("val_end").get<std::string>());
  s.bounds.end = parse_iso8601(j.at("end").get<std::string>());
  s.history_steps = j.at("history_steps").get<std::size_t>();
  return s;
}

std::vector<double> label_source_targets(std::span<const TimeSlice> slices, const RunConfig& cfg) {
  if (cfg.dataset.label_source == "reported") return classifier::reported_targets(slices);
  for (const TimeSlice& s : slices)
    if (!s.prob_label) throw ConfigError("slices carry no probabilistic labels; run `label` first");
  return classifier::weak_targets(slices);
}

/// Ground truth where the slices carry it, reported labels otherwise.
std::vector<int> evaluation_labels(std::span<const TimeSlice> slices) {
  std::vector<int> out;
  out.reserve(slices.size());
  for (const TimeSlice& s : slices) {
    if (s.true_label) {
      out.push_back(*s.true_label);
    } else if (s.reported_label >= 0) {
      out.push_back(s.reported_label);
    } else {
      throw Error("slice without a true or reported label");
    }
  }
  return out;
}

std::string quality_report_text(const pipeline::QualityReport& q,
                                std::span<const std::pair<std::string, preprocess::References>> refs,
                                const pipeline::SplitBounds& b, const pipeline::Dataset& ds) {
  std::string out;
  out += "[gaps]\n";
  out += "forward_filled=" + std::to_string(q.forward_filled) + "\n";
  out += "spatially_filled=" + std::to_string(q.spatially_filled) + "\n";
  out += "[quality]\n";
  out += "mu_d=" + format_double(q.stats.mu_d) + "\n";
  out += "sigma_d=" + format_double(q.stats.sigma_d) + "\n";
  out += "windows=" + std::to_string(q.windows) + "\n";
  out += "failed_windows=" + std::to_string(q.failed_windows) + "\n";
  out += "[split]\n";
  out += "train=" + format_iso8601(b.begin) + "/" + format_iso8601(b.train_end) + "\n";
  out += "val=" + format_iso8601(b.train_end) + "/" + format_iso8601(b.val_end) + "\n";
  out += "test=" + format_iso8601(b.val_end) + "/" + format_iso8601(b.end) + "\n";
  out += "[slices]\n";
  out += "train=" + std::to_string(ds.train.size()) + "\n";
  out += "val=" + std::to_string(ds.val.size()) + "\n";
  out += "test=" + std::to_string(ds.test.size()) + "\n";
  out += "[references]\n";
  for (const auto& [pair, r] : refs)
    out += pair + " ref_speed_up=" + format_double(r.ref_speed_up) + " ref_speed_down=" + format_double(r.ref_speed_down) +
           "\n";
  return out;
}

/// Holds whichever predictor was requested so the scorer can refer to it.
struct Predictor {
  std::optional<classifier::TrainedModel> model;
  std::optional<ensemble::Ensemble> ens;

  detection::Scorer scorer(const RunConfig& cfg) const {
    if (model) return detection::Scorer::from_model(*model);
    return detection::Scorer::from_ensemble(*ens, cfg.detection.use_quantile);
  }
  std::size_t seq_len() const { return model ? model->config.seq_len : ens->members.front().config.seq_len; }
};

Predictor load_predictor(const std::string& model_path, const std::string& ensemble_path) {
  Predictor p;
  if (model_path.empty() == ensemble_path.empty()) throw ConfigError("give exactly one of --model and --ensemble");
  if (!model_path.empty()) {
    p.model = classifier::load_model(model_path);
  } else {
    p.ens = ensemble::load_ensemble(ensemble_path);
    if (p.ens->members.empty()) throw Error("ensemble has no members");
  }
  return p;
}

void check_history(std::size_t model_h, std::size_t data_h) {
  if (model_h != data_h)
    throw ConfigError("model history length H=" + std::to_string(model_h) + " does not match slice history H=" +
                      std::to_string(data_h));
}

std::string metrics_row(const std::string& split, const std::string& name, const detection::ClassificationMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("undefined"); };
  return split + "," + name + "," + format_double(m.accuracy) + "," + opt(m.incident.precision) + "," +
         opt(m.incident.recall) + "," + opt(m.incident.f1) + "," + std::to_string(m.incident.support) + "," +
         std::to_string(m.non_incident.support) + "\n";
}

detection::ClassificationMetrics score_metrics(std::span<const double> scores, std::span<const int> labels,
                                               double threshold) {
  std::vector<int> preds(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] > threshold ? 1 : 0;
  return detection::classification_metrics(preds, labels);
}

// ---- subcommands ------------------------------------------------------------

void cmd_generate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const auto corpus = synthgen::generate_corpus(cfg.synth_config());
  pipeline::write_corpus(out_dir, pipeline::from_synthetic(corpus));
  out << "generated " << corpus.detectors.size() / 2 << " pairs, " << corpus.incidents.size() << " incidents\n";
}

void cmd_preprocess(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out_dir, std::ostream& out) {
  const auto corpus = pipeline::read_corpus(corpus_dir);
  const auto prepared = pipeline::prepare(corpus, cfg.preprocess, cfg.dataset);
  const auto ds = pipeline::build_dataset(prepared, corpus.incidents, cfg.preprocess, cfg.dataset);
  const auto bounds = pipeline::split_bounds(prepared.grid, cfg.dataset);
  const auto fmt = io::slice_format_from_string(cfg.slice_format);
  fs::create_directories(out_dir);
  io::write_slices(slices_path(out_dir, "train", cfg), ds.train, fmt);
  io::write_slices(slices_path(out_dir, "val", cfg), ds.val, fmt);
  io::write_slices(slices_path(out_dir, "test", cfg), ds.test, fmt);
  write_file_atomic(out_dir / "references.csv", io::references_csv(ds.references));
  write_file_atomic(out_dir / "split.json", split_json(bounds, cfg.preprocess.history_steps));
  write_file_atomic(out_dir / "quality_report.txt", quality_report_text(prepared.quality, ds.references, bounds, ds));
  out << "slices train=" << ds.train.size() << " val=" << ds.val.size() << " test=" << ds.test.size() << "\n";
}

void cmd_label(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto fmt = io::slice_format_from_string(cfg.slice_format);
  auto train = io::read_slices(existing_slices(dir, "train"));
  auto val = io::read_slices(existing_slices(dir, "val"));
  auto test = io::read_slices(existing_slices(dir, "test"));
  const auto m_train = weaklabel::apply_lfs(train, cfg.lf);
  const auto model = weaklabel::fit_label_model(m_train, cfg.label_model);
  const auto summary = weaklabel::label_training_set(train, m_train, model);
  weaklabel::label_training_set(val, weaklabel::apply_lfs(val, cfg.lf), model);
  weaklabel::label_training_set(test, weaklabel::apply_lfs(test, cfg.lf), model);

  ordered_json lm;
  lm["prior"] = model.prior;
  lm["accuracies"] = model.accuracies;
  lm["coverages"] = model.coverages;
  lm["fallback_lfs"] = model.fallback_lfs;
  lm["lf_names"] = weaklabel::lf_names();

  write_file_atomic(dir / "label_matrix.csv", io::label_matrix_csv(m_train, train));
  write_file_atomic(dir / "lf_stats.txt", weaklabel::format_lf_stats(weaklabel::lf_stats(m_train), &model));
  write_file_atomic(dir / "label_model.json", lm.dump(2) + "\n");
  io::write_slices(slices_path(dir, "train_labeled", cfg), train, fmt);
  io::write_slices(slices_path(dir, "val_labeled", cfg), val, fmt);
  io::write_slices(slices_path(dir, "test_labeled", cfg), test, fmt);
  out << "labeled " << train.size() << " training slices: " << summary.incident << " incident, "
      << summary.non_incident << " non-incident, " << summary.all_abstain << " all-abstain\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& dir, const fs::path& model_path, bool search,
               std::ostream& out) {
  const auto train = load_split(dir, "train");
  const auto val = load_split(dir, "val");
  if (train.empty() || val.empty()) throw Error("empty training or validation slices");
  check_history(cfg.model.seq_len, train.front().steps);
  const auto yt = label_source_targets(train, cfg);
  const auto yv = label_source_targets(val, cfg);
  const classifier::LabeledView tv{train, yt}, vv{val, yv};

  classifier::ModelConfig mc = cfg.model;
  classifier::TrainConfig tc = cfg.train_config();
  if (search) {
    const auto result = classifier::random_search(cfg.search, cfg.search_budget, tv, vv, mc, tc, cfg.search_seed());
    std::string csv = "trial,lstm_layers,units,bidirectional,dense_layers,learning_rate,batch_size,val_bce,epochs_run\n";
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
      const auto& t = result.trials[i];
      csv += std::to_string(i) + "," + std::to_string(t.model.lstm_layers) + "," + std::to_string(t.model.units) + "," +
             (t.model.bidirectional ? "1" : "0") + "," + std::to_string(t.model.dense_layers) + "," +
             format_double(t.train.learning_rate) + "," + std::to_string(t.train.batch_size) + "," +
             format_double(t.val_bce) + "," + std::to_string(t.epochs_run) + "\n";
    }
    fs::path trials = model_path;
    trials.replace_extension(".search.csv");
    write_file_atomic(trials, csv);
    mc = result.best.model;
    tc = result.best.train;
  }
  const auto model = classifier::train(mc, tc, tv, vv);
  classifier::save_model(model, model_path);
  fs::path hist = model_path;
  hist.replace_extension(".history.csv");
  write_file_atomic(hist, classifier::history_csv(model));
  out << "trained " << classifier::parameter_count(mc) << " parameters, best epoch " << model.best_epoch << "\n";
}

void cmd_ensemble(const RunConfig& cfg, const fs::path& dir, const fs::path& out_dir, std::ostream& out) {
  const auto train = load_split(dir, "train");
  const auto val = load_split(dir, "val");
  if (train.empty() || val.empty()) throw Error("empty training or validation slices");
  check_history(cfg.model.seq_len, train.front().steps);
  const auto yt = label_source_targets(train, cfg);
  const auto yv = label_source_targets(val, cfg);
  const classifier::LabeledView tv{train, yt}, vv{val, yv};
  auto members = ensemble::train_ensemble(cfg.model, cfg.train_config(), tv, vv, cfg.ensemble.n_seeds,
                                          cfg.ensemble_seed());
  const auto ens = ensemble::select_members(std::move(members), vv, cfg.ensemble.selection_threshold);
  ensemble::save_ensemble(ens, out_dir);
  out << "ensemble keeps " << ens.members.size() << " of " << cfg.ensemble.n_seeds << " members\n";
}

void cmd_evaluate(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& dir, const Predictor& pred,
                  const fs::path& out_dir, std::ostream& out) {
  const SplitInfo split = read_split(dir);
  check_history(pred.seq_len(), split.history_steps);
  check_history(cfg.preprocess.history_steps, split.history_steps);
  const auto train = load_split(dir, "train");
  const auto val = load_split(dir, "val");
  const auto test = load_split(dir, "test");
  const detection::Scorer scorer = pred.scorer(cfg);

  std::string metrics = "split,model,accuracy,precision,recall,f1,support_incident,support_normal\n";
  std::string detail;
  const auto yt = label_source_targets(train, cfg);
  for (const auto& [name, slices] : {std::pair<std::string, const std::vector<TimeSlice>*>{"val", &val},
                                     std::pair<std::string, const std::vector<TimeSlice>*>{"test", &test}}) {
    if (slices->empty()) continue;
    const auto labels = evaluation_labels(*slices);
    std::vector<double> scores;
    for (const auto& s : scorer.score_batch(*slices)) scores.push_back(s.value);
    const auto m = score_metrics(scores, labels, cfg.detection.prob_threshold);
    const auto knn = classifier::knn_predict(train, yt, *slices, cfg.knn_k);
    const auto mk = score_metrics(knn, labels, 0.5);
    metrics += metrics_row(name, "lstm", m);
    metrics += metrics_row(name, "knn", mk);
    detail += "[" + name + " lstm]\n" + detection::classification_metrics_text(m);
    detail += "[" + name + " knn]\n" + detection::classification_metrics_text(mk);
  }

  const auto corpus = pipeline::read_corpus(corpus_dir);
  const auto prepared = pipeline::prepare(corpus, cfg.preprocess, cfg.dataset);
  const auto refs = io::parse_references_csv(read_file(dir / "references.csv"));
  const auto det = pipeline::detect_period(prepared, refs, corpus.incidents, scorer, cfg.detection, cfg.preprocess,
                                           cfg.dataset, split.bounds.val_end);

  std::string rows = "pair_id,timestamp_iso8601,up_speed,down_speed,score,uncertainty,event\n";
  for (std::size_t k = 0; k < det.per_pair.size(); ++k) {
    const auto plot = detection::plot_rows(det.per_pair[k]);
    const std::string csv = detection::plot_csv(plot);
    std::size_t pos = csv.find('\n') + 1;
    while (pos < csv.size()) {
      const std::size_t nl = csv.find('\n', pos);
      rows += prepared.pairs[k].ids.pair_id + "," + csv.substr(pos, nl - pos + 1);
      pos = nl + 1;
    }
  }

  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "metrics.csv", metrics);
  write_file_atomic(out_dir / "metrics.txt", detail);
  write_file_atomic(out_dir / "match_report.txt", detection::match_report_text(det.report));
  write_file_atomic(out_dir / "events.csv", detection::events_csv(det.events));
  write_file_atomic(out_dir / "detections.csv", rows);
  out << detection::match_report_text(det.report);
}

void cmd_stream(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& dir, const Predictor& pred,
                const std::string& only_pair, const std::string& from_text, const fs::path& out_path,
                std::ostream& out) {
  const SplitInfo split = read_split(dir);
  check_history(pred.seq_len(), split.history_steps);
  const Timestamp from = from_text.empty() ? split.bounds.val_end : parse_iso8601(from_text);
  const auto corpus = pipeline::read_corpus(corpus_dir);
  const auto prepared = pipeline::prepare(corpus, cfg.preprocess, cfg.dataset);
  const auto refs = io::parse_references_csv(read_file(dir / "references.csv"));
  const Timestamp end = prepared.grid.begin + static_cast<Timestamp>(prepared.grid.size()) * prepared.grid.step_s;

  stream::StreamConfig sc;
  sc.detection = cfg.detection;
  sc.history_steps = cfg.preprocess.history_steps;
  sc.ema_window = cfg.preprocess.ema_window;
  sc.ema_alpha = cfg.preprocess.ema_alpha;
  sc.offset_window_s = cfg.preprocess.offset_window_s;
  sc.speed_clip = cfg.preprocess.speed_clip;

  std::string log;
  std::size_t events = 0;
  bool found = only_pair.empty();
  for (const auto& pp : prepared.pairs) {
    if (!only_pair.empty() && pp.ids.pair_id != only_pair) continue;
    found = true;
    stream::Stream s(pp.ids.pair_id, pred.scorer(cfg), pipeline::find_references(refs, pp.ids.pair_id), sc);
    const auto samples = stream::samples_from_pair(pipeline::subseries(pp.filled, from - cfg.dataset.detection_warmup_s, end));
    const auto result = stream::replay(s, samples);
    for (const auto& u : result.updates) log += stream::to_json_line(u, pp.ids.pair_id) + "\n";
    events += result.events.size();
  }
  if (!found) throw ConfigError("unknown pair '" + only_pair + "'");
  write_file_atomic(out_path, log);
  out << "streamed " << events << " events\n";
}

void cmd_report(const fs::path& eval_dir, const fs::path& out_dir, std::ostream& out) {
  const std::string text = read_file(eval_dir / "detections.csv");
  const std::size_t header_end = text.find('\n');
  if (header_end == std::string::npos) throw Error("detections.csv has no header");
  const std::string header = text.substr(text.find(',') + 1, header_end - text.find(','));
  std::map<std::string, std::string> per_pair;
  std::map<std::string, std::size_t> event_rows;
  std::size_t pos = header_end + 1;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) throw Error("malformed detections row: " + line);
    const std::string pair = line.substr(0, comma);
    auto& body = per_pair[pair];
    if (body.empty()) body = header;
    body += line.substr(comma + 1) + "\n";
    if (line.back() == '1') ++event_rows[pair];
  }
  const auto events_text = read_file(eval_dir / "events.csv");
  std::map<std::string, std::size_t> event_counts;
  {
    std::size_t p = events_text.find('\n');
    while (p != std::string::npos && p + 1 < events_text.size()) {
      const std::size_t nl = events_text.find('\n', p + 1);
      const std::string line = events_text.substr(p + 1, nl - p - 1);
      if (!line.empty()) ++event_counts[line.substr(0, line.find(','))];
      p = nl;
    }
  }
  fs::create_directories(out_dir);
  std::string summary = "pair_id,slices,event_slices,events\n";
  for (const auto& [pair, body] : per_pair) {
    write_file_atomic(out_dir / ("plot_" + pair + ".csv"), body);
    std::size_t n = 0;
    for (char ch : body) n += ch == '\n';
    summary += pair + "," + std::to_string(n - 1) + "," + std::to_string(event_rows[pair]) + "," +
               std::to_string(event_counts[pair]) + "\n";
  }
  write_file_atomic(out_dir / "summary.csv", summary);
  write_file_atomic(out_dir / "match_report.txt", read_file(eval_dir / "match_report.txt"));
  out << "wrote plots for " << per_pair.size() << " pairs\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traffic incident detection toolkit", "aidflow"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "run configuration (JSON)");
  app.add_option("-s,--set", common.overrides, "override a config key, key=value")->take_all()->allow_extra_args(false);

  std::string corpus_dir, data_dir, out_path, model_path, ensemble_path, eval_dir, pair, from;
  bool search = false;

  auto* dump = app.add_subcommand("config", "print the effective configuration");
  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  gen->add_option("-o,--out", out_path, "corpus directory")->required();
  auto* pre = app.add_subcommand("preprocess", "corpus -> slices, references, quality report");
  pre->add_option("--corpus", corpus_dir)->required();
  pre->add_option("-o,--out", out_path, "data directory")->required();
  auto* lab = app.add_subcommand("label", "labeling functions and label model");
  lab->add_option("--data", data_dir)->required();
  auto* trn = app.add_subcommand("train", "train one LSTM");
  trn->add_option("--data", data_dir)->required();
  trn->add_option("-o,--out", out_path, "model file")->required();
  trn->add_flag("--search", search, "random hyperparameter search first");
  auto* ens = app.add_subcommand("ensemble", "train a deep ensemble");
  ens->add_option("--data", data_dir)->required();
  ens->add_option("-o,--out", out_path, "ensemble directory")->required();
  auto* eva = app.add_subcommand("evaluate", "classification metrics and detection report");
  eva->add_option("--corpus", corpus_dir)->required();
  eva->add_option("--data", data_dir)->required();
  eva->add_option("--model", model_path);
  eva->add_option("--ensemble", ensemble_path);
  eva->add_option("-o,--out", out_path, "report directory")->required();
  auto* str = app.add_subcommand("stream", "replay measurements through the online detector");
  str->add_option("--corpus", corpus_dir)->required();
  str->add_option("--data", data_dir)->required();
  str->add_option("--model", model_path);
  str->add_option("--ensemble", ensemble_path);
  str->add_option("--pair", pair);
  str->add_option("--from", from, "ISO-8601 start (default: test period)");
  str->add_option("-o,--out", out_path, "JSONL log")->required();
  auto* rep = app.add_subcommand("report", "plot data from evaluation outputs");
  rep->add_option("--eval", eval_dir)->required();
  rep->add_option("-o,--out", out_path, "plot directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (rep->parsed()) {
      cmd_report(eval_dir, out_path, out);
      return 0;
    }
    const RunConfig cfg = effective_config(common);
    if (dump->parsed()) {
      out << to_json(cfg).dump(2) << "\n";
    } else if (gen->parsed()) {
      cmd_generate(cfg, out_path, out);
    } else if (pre->parsed()) {
      cmd_preprocess(cfg, corpus_dir, out_path, out);
    } else if (lab->parsed()) {
      cmd_label(cfg, data_dir, out);
    } else if (trn->parsed()) {
      cmd_train(cfg, data_dir, out_path, search, out);
    } else if (ens->parsed()) {
      cmd_ensemble(cfg, data_dir, out_path, out);
    } else if (eva->parsed()) {
      cmd_evaluate(cfg, corpus_dir, data_dir, load_predictor(model_path, ensemble_path), out_path, out);
    } else if (str->parsed()) {
      cmd_stream(cfg, corpus_dir, data_dir, load_predictor(model_path, ensemble_path), pair, from, out_path, out);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    err << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}

}  // namespace aidflow
