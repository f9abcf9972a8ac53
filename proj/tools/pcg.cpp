// pcg: synth -> prepare -> features -> train/sweep/ablate -> eval, plus the DSP baseline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pcgkit/checkpoint.hpp"
#include "pcgkit/dsp_baseline.hpp"
#include "pcgkit/pipeline.hpp"
#include "pcgkit/run_config.hpp"
#include "pcgkit/synth.hpp"
#include "pcgkit/train_eval.hpp"

namespace fs = std::filesystem;
using namespace pcgkit;

namespace {

struct Context {
  RunConfig cfg;
  fs::path out;

  fs::path corpus() const {
    const auto& c = cfg.raw("data.corpus");
    return c.empty() ? out / "corpus" : fs::path(c);
  }
  fs::path snippets() const { return out / "snippets.jsonl"; }
  fs::path splits() const { return out / "splits.json"; }
  fs::path cache() const { return out / "features"; }
  fs::path checkpoints() const { return out / "checkpoints"; }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

/// CSV with a leading config-hash comment line.
void write_csv(const Context& ctx, const fs::path& path, const std::string& body) {
  write_text(path, "# config_hash=" + ctx.cfg.hash() + "\n" + body);
}

std::string fmt_num(double v, int precision = 6) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

Split parse_split(const std::string& s) {
  if (s == "val" || s == "validation") return Split::Validation;
  try {
    return split_from_string(s);
  } catch (const Error&) {
    throw ConfigError("unknown split '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Snippet index and feature cache on disk

void save_index(const Context& ctx, const SnippetIndex& index) {
  std::string text;
  nlohmann::ordered_json head;
  head["config_hash"] = ctx.cfg.hash();
  head["snippets"] = index.snippets.size();
  text += nlohmann::ordered_json{{"meta", head}}.dump() + "\n";
  for (const auto& s : index.snippets) text += snippet_json(s.label, s.split).dump() + "\n";
  write_text(ctx.snippets(), text);
  auto splits = to_json(index.splits);
  splits["config_hash"] = ctx.cfg.hash();
  write_text(ctx.splits(), splits.dump(2) + "\n");
}

SnippetIndex load_index(const Context& ctx) {
  std::ifstream in(ctx.snippets());
  if (!in) throw DataError("no snippet index at " + ctx.snippets().string() + " (run prepare first)");
  SnippetIndex index;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("snippet index: ") + e.what());
    }
    if (j.contains("meta")) continue;
    auto [label, split] = snippet_from_json(j);
    index.snippets.push_back({std::move(label), split});
  }
  return index;
}

struct CachedFeatures {
  FeatureSelection selection;
  Splits data;
};

void save_cache(const Context& ctx, const SnippetIndex& index, const Splits& data, const FeatureSelection& sel) {
  const auto dir = ctx.cache();
  fs::create_directories(dir);
  std::string text;
  nlohmann::ordered_json head;
  head["config_hash"] = ctx.cfg.hash();
  head["selection"] = sel.name();
  text += nlohmann::ordered_json{{"meta", head}}.dump() + "\n";
  std::size_t counter = 0;
  std::map<Split, std::size_t> next;
  for (const auto& s : index.snippets) {
    const auto& bucket = s.split == Split::Train ? data.train : s.split == Split::Validation ? data.val : data.test;
    const Example& e = bucket.at(next[s.split]++);
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.pcgf", counter++);
    write_feature_cache(dir / name, e.features);
    auto j = snippet_json(e.label, s.split);
    j["file"] = name;
    text += j.dump() + "\n";
  }
  write_text(dir / "index.jsonl", text);
}

CachedFeatures load_cache(const Context& ctx) {
  const auto dir = ctx.cache();
  std::ifstream in(dir / "index.jsonl");
  if (!in) throw DataError("no feature cache at " + dir.string() + " (run features first)");
  const double frame_rate = ctx.cfg.features().frame_rate();
  CachedFeatures out;
  bool have_meta = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.contains("meta")) {
        out.selection = FeatureSelection::parse(j["meta"].at("selection").get<std::string>());
        have_meta = true;
        continue;
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("feature index: ") + e.what());
    }
    auto [label, split] = snippet_from_json(j);
    Example e{read_feature_cache(dir / j.at("file").get<std::string>(), frame_rate), std::move(label)};
    (split == Split::Train ? out.data.train : split == Split::Validation ? out.data.val : out.data.test)
        .push_back(std::move(e));
  }
  if (!have_meta) throw FormatError("feature index has no header line");
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const Context& ctx) {
  const auto dc = ctx.cfg.synth();
  const auto dir = ctx.corpus();
  spdlog::info("generating {} subjects x {} recordings into {}", dc.n_subjects, dc.recordings_per_subject, dir.string());
  const auto entries = generate_dataset(dc, dir);
  std::size_t present = 0;
  for (const auto& e : entries) present += e.meta.murmur == Murmur::Present;
  std::cout << "recordings: " << entries.size() << " (" << present << " with murmur) in " << dir.string() << "\n";
  return 0;
}

int cmd_prepare(const Context& ctx) {
  const auto wc = ctx.cfg.window();
  spdlog::info("loading corpus {}", ctx.corpus().string());
  const auto corpus = load_corpus(ctx.corpus(), wc.sample_rate);
  const auto index = build_snippet_index(corpus, wc, ctx.cfg.seed());
  save_index(ctx, index);
  std::map<Split, std::size_t> subjects;
  for (const auto& [id, s] : index.splits.assignment) ++subjects[s];
  std::cout << "recordings: " << corpus.size() << "\n"
            << "snippets: " << index.snippets.size() << " (train " << index.count(Split::Train) << ", val "
            << index.count(Split::Validation) << ", test " << index.count(Split::Test) << ")\n"
            << "subjects: " << index.splits.assignment.size() << " (train " << subjects[Split::Train] << ", val "
            << subjects[Split::Validation] << ", test " << subjects[Split::Test] << ")\n";
  return 0;
}

int cmd_features(const Context& ctx) {
  const auto wc = ctx.cfg.window();
  const auto fc = ctx.cfg.features();
  const auto sel = ctx.cfg.selection();
  const auto index = load_index(ctx);
  spdlog::info("computing {} features for {} snippets", sel.name(), index.snippets.size());
  const auto corpus = load_corpus(ctx.corpus(), wc.sample_rate);
  const auto data = extract_examples(corpus, index, wc, fc, sel);
  save_cache(ctx, index, data, sel);
  std::cout << "features: " << sel.name() << ", " << rows_of(sel, fc) << " x " << frames_per_window(wc, fc) << " per snippet, "
            << index.snippets.size() << " snippets cached in " << ctx.cache().string() << "\n";
  return 0;
}

EpochCallback epoch_logger(const std::string& label = {}) {
  return [label](const EpochReport& r) {
    spdlog::info("{}epoch {:3d}  loss {:.4f}  val MAE {:.3f}  val ACC {}  lr {:g}", label, r.epoch, r.train_loss, r.val_mae,
                 r.val_acc ? fmt_num(*r.val_acc, 4) : std::string("n/a"), r.lr);
  };
}

int cmd_train(const Context& ctx) {
  const auto spec = ctx.cfg.model();
  const auto tc = ctx.cfg.train();
  const auto cache = load_cache(ctx);
  spdlog::info("training {} on {} ({} train / {} val snippets)", to_string(spec.architecture), spec.features.name(),
               cache.data.train.size(), cache.data.val.size());
  nlohmann::ordered_json meta;
  meta["config_hash"] = ctx.cfg.hash();
  auto result = train_from_examples(spec, cache.data, tc, epoch_logger(), meta);
  fs::create_directories(ctx.checkpoints());
  write_checkpoint(ctx.checkpoints() / "best_hr.pcgm", result.checkpoints.best_hr);
  if (result.checkpoints.best_mm) write_checkpoint(ctx.checkpoints() / "best_mm.pcgm", *result.checkpoints.best_mm);
  std::string csv = epoch_csv_header();
  for (const auto& r : result.reports) csv += epoch_csv_row(r);
  write_csv(ctx, ctx.out / "epochs.csv", csv);
  const auto& best = result.reports.at(static_cast<std::size_t>(result.checkpoints.best_hr_epoch - 1));
  std::cout << "epochs: " << result.reports.size() << "\n"
            << "best_hr: epoch " << result.checkpoints.best_hr_epoch << ", val MAE " << fmt_num(best.val_mae) << "\n";
  if (result.checkpoints.best_mm) {
    const auto& bm = result.reports.at(static_cast<std::size_t>(result.checkpoints.best_mm_epoch - 1));
    std::cout << "best_mm: epoch " << result.checkpoints.best_mm_epoch << ", val ACC "
              << format_optional(bm.val_acc) << "\n";
  }
  return 0;
}

int cmd_sweep(const Context& ctx) {
  const auto spec = ctx.cfg.model();
  const auto tc = ctx.cfg.train();
  const auto cache = load_cache(ctx);
  std::string epochs = "config," + epoch_csv_header();
  const auto rows = run_weight_sweep(spec, cache.data, tc, ctx.cfg.sweep(), [&](const SweepConfig& c, const EpochReport& r) {
    epoch_logger("[" + c.label() + "] ")(r);
    epochs += "\"" + c.label() + "\"," + epoch_csv_row(r);
  });
  const auto md = sweep_markdown(rows);
  write_text(ctx.out / "sweep.md", "<!-- config_hash=" + ctx.cfg.hash() + " -->\n" + md);
  write_csv(ctx, ctx.out / "sweep.csv", sweep_csv(rows));
  write_csv(ctx, ctx.out / "sweep_epochs.csv", epochs);
  std::cout << md;
  return 0;
}

int cmd_ablate(const Context& ctx) {
  const auto spec = ctx.cfg.model();
  const auto tc = ctx.cfg.train();
  const auto subsets = ctx.cfg.ablation_subsets();
  const auto cache = load_cache(ctx);
  for (const auto& s : subsets) {
    for (auto k : s.kinds()) {
      if (!cache.selection.contains(k)) {
        throw ConfigError("feature cache (" + cache.selection.name() + ") lacks " + std::string(to_string(k)) +
                          " needed by subset " + s.name());
      }
    }
  }
  Splits full = cache.data;
  const auto rows = run_feature_ablation(spec, full, subsets, tc);
  std::string csv = "features,test_mae,best_epoch\n";
  std::string md = "| Features | Test MAE_HR |\n|---|---|\n";
  for (const auto& r : rows) {
    csv += r.selection.name() + "," + fmt_num(r.test_mae, 10) + "," + std::to_string(r.best_epoch) + "\n";
    md += "| " + r.selection.name() + " | " + detail::fixed3(r.test_mae) + " |\n";
  }
  write_csv(ctx, ctx.out / "ablation.csv", csv);
  write_text(ctx.out / "ablation.md", "<!-- config_hash=" + ctx.cfg.hash() + " -->\n" + md);
  std::cout << md;
  return 0;
}

int cmd_eval(const Context& ctx, const std::string& checkpoint_arg) {
  const fs::path ck_path = checkpoint_arg.empty() ? ctx.checkpoints() / "best_hr.pcgm" : fs::path(checkpoint_arg);
  const auto ck = read_checkpoint(ck_path);
  const Split split = parse_split(ctx.cfg.raw("eval.split"));
  const auto cache = load_cache(ctx);
  const auto& examples = split == Split::Train ? cache.data.train : split == Split::Validation ? cache.data.val : cache.data.test;
  if (examples.empty()) throw DataError("split '" + std::string(to_string(split)) + "' has no snippets");
  auto model = load_model<float>(ck);
  const auto prepared = prepare_examples(examples, ck.spec, ck.normalization);
  const auto ev = evaluate(model, prepared);
  const auto bins = hr_range_report(ev.predicted_bpm, ev.target_bpm, ctx.cfg.get_real("eval.bin_width"));

  const fs::path dir = ctx.out / "eval";
  std::string metrics = "split,snippets,mae_hr,acc_mm,precision_mm,recall_mm\n";
  metrics += std::string(to_string(split)) + "," + std::to_string(examples.size()) + "," + fmt_num(ev.mae, 10) + "," +
             format_optional(ev.murmur.accuracy, 10) + "," + format_optional(ev.murmur.precision, 10) + "," +
             format_optional(ev.murmur.recall, 10) + "\n";
  write_csv(ctx, dir / "metrics.csv", metrics);
  write_csv(ctx, dir / "hr_range.csv", hr_range_csv(bins));
  std::string scatter = "recording_id,window_start,target_bpm,predicted_bpm,murmur_label,murmur_probability\n";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& l = examples[i].label;
    const double p = ev.murmur_probability[i];
    scatter += l.recording_id + "," + fmt_num(l.window_start, 10) + "," + fmt_num(l.hr_bpm, 10) + "," +
               fmt_num(ev.predicted_bpm[i]) + "," + std::string(to_string(l.murmur)) + "," +
               (std::isnan(p) ? std::string() : fmt_num(p, 8)) + "\n";
  }
  write_csv(ctx, dir / "predictions.csv", scatter);
  std::cout << "split: " << to_string(split) << " (" << examples.size() << " snippets)\n"
            << "MAE_HR: " << fmt_num(ev.mae) << " bpm\n"
            << "ACC_MM: " << (ev.murmur.accuracy ? fmt_num(*ev.murmur.accuracy) : "n/a") << "\n"
            << "Precision_MM: " << (ev.murmur.precision ? fmt_num(*ev.murmur.precision) : "n/a") << "\n"
            << "Recall_MM: " << (ev.murmur.recall ? fmt_num(*ev.murmur.recall) : "n/a") << "\n";
  return 0;
}

int cmd_baseline(const Context& ctx) {
  const auto wc = ctx.cfg.window();
  const auto fc = ctx.cfg.features();
  const auto bc = ctx.cfg.baseline();
  const auto& which = ctx.cfg.raw("baseline.split");
  const bool all = which == "all";
  const Split split = all ? Split::Train : parse_split(which);
  const auto index = load_index(ctx);
  const auto corpus = load_corpus(ctx.corpus(), wc.sample_rate);
  std::map<std::string, const CorpusRecording*> by_id;
  for (const auto& r : corpus) by_id[r.meta.recording_id] = &r;

  std::string csv = "recording_id,window_start,predicted_bpm,target_bpm,status\n";
  double err = 0.0;
  std::size_t scored = 0, low = 0, failed = 0;
  for (const auto& s : index.snippets) {
    if (!all && s.split != split) continue;
    auto it = by_id.find(s.label.recording_id);
    if (it == by_id.end()) throw DataError("snippet refers to unknown recording " + s.label.recording_id);
    const auto samples = slice_window(it->second->audio, s.label.window_start, wc);
    std::string pred, status;
    try {
      const auto r = baseline_estimate(samples, bc, fc);
      pred = fmt_num(r.bpm, 10);
      status = to_string(r.status);
      err += std::abs(r.bpm - s.label.hr_bpm);
      ++scored;
      low += r.status == BaselineStatus::LowConfidence;
    } catch (const InsufficientDataError&) {
      status = "insufficient_peaks";
      ++failed;
    }
    csv += s.label.recording_id + "," + fmt_num(s.label.window_start, 10) + "," + pred + "," +
           fmt_num(s.label.hr_bpm, 10) + "," + status + "\n";
  }
  if (scored == 0) throw DataError("baseline produced no estimates");
  const double mae = err / static_cast<double>(scored);
  write_csv(ctx, ctx.out / "baseline.csv", csv);
  write_csv(ctx, ctx.out / "baseline_summary.csv",
            "split,scored,low_confidence,insufficient_peaks,mae_hr\n" + which + "," + std::to_string(scored) + "," +
                std::to_string(low) + "," + std::to_string(failed) + "," + fmt_num(mae, 10) + "\n");
  std::cout << "baseline MAE: " << fmt_num(mae) << " bpm over " << scored << " snippets (" << low
            << " low confidence, " << failed << " without estimate)\n";
  return 0;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("pcg");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("PCG_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Phonocardiogram heart-rate and murmur toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir = ".", checkpoint;
  std::optional<long long> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seed, "master seed (overrides 'seed')");
  app.add_option("--out", out_dir, "working/output directory");
  app.add_option("--set", overrides, "override a config key: key=value")->take_all();

  const std::map<std::string, std::string> commands{
      {"synth", "generate a synthetic corpus"},
      {"prepare", "window the corpus and assign subject-disjoint splits"},
      {"features", "compute and cache feature matrices"},
      {"train", "train one architecture"},
      {"sweep", "run the loss-weight / scheduler configurations"},
      {"ablate", "train over feature subsets"},
      {"eval", "evaluate a checkpoint on a split"},
      {"baseline", "run the signal-processing HR estimator"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) subs[name] = app.add_subcommand(name, help);
  subs["eval"]->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoints/best_hr.pcgm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.cfg = RunConfig::load(config_path);
    for (const auto& o : overrides) ctx.cfg.apply_override(o);
    if (seed) ctx.cfg.set("seed", std::to_string(*seed));
    ctx.out = out_dir;
    fs::create_directories(ctx.out);
    spdlog::debug("config hash {}", ctx.cfg.hash());

    if (subs["synth"]->parsed()) return cmd_synth(ctx);
    if (subs["prepare"]->parsed()) return cmd_prepare(ctx);
    if (subs["features"]->parsed()) return cmd_features(ctx);
    if (subs["train"]->parsed()) return cmd_train(ctx);
    if (subs["sweep"]->parsed()) return cmd_sweep(ctx);
    if (subs["ablate"]->parsed()) return cmd_ablate(ctx);
    if (subs["eval"]->parsed()) return cmd_eval(ctx, checkpoint);
    if (subs["baseline"]->parsed()) return cmd_baseline(ctx);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    spdlog::error("divergence at epoch {}: {}", e.epoch(), e.what());
    return 4;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
