// evrep: convert event recordings, train the generator, run recognition
// benchmarks and build reports.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "evrep/evrep.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::uint64_t seed = 0;
  fs::path workdir = ".";

  fs::path resolve(const fs::path& p) const { return p.empty() || p.is_absolute() ? p : workdir / p; }

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--workdir", workdir, "Base directory for relative paths")->capture_default_str();
  }
};

struct BackendOpts {
  std::string kind = "mock";
  std::string endpoint;
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  fs::path fixture;
  fs::path record;
  std::size_t concurrency = 4;
  double timeout_s = 60;
  int retries = 3;
  int max_image_side = 0;

  void add_to(CLI::App* app) {
    app->add_option("--backend", kind, "LLM backend")
        ->check(CLI::IsMember({"mock", "replay", "http"}))
        ->capture_default_str();
    app->add_option("--endpoint", endpoint, "OpenAI-compatible base URL, e.g. http://host:8000/v1");
    app->add_option("--model", model, "Model name sent to the endpoint");
    app->add_option("--api-key-env", api_key_env, "Environment variable holding the API key")->capture_default_str();
    app->add_option("--fixture", fixture, "Replay fixture (JSON lines)");
    app->add_option("--record", record, "Append every exchange to this fixture");
    app->add_option("--concurrency", concurrency, "Max in-flight requests")->check(CLI::PositiveNumber);
    app->add_option("--timeout", timeout_s, "Request timeout in seconds")->check(CLI::PositiveNumber);
    app->add_option("--retries", retries, "Retries on 429/5xx/timeouts")->check(CLI::NonNegativeNumber);
    app->add_option("--max-image-side", max_image_side, "Downscale images before upload (0 = off)");
  }

  struct Built {
    std::unique_ptr<evrep::Backend> base;
    std::unique_ptr<evrep::Backend> recorder;
    evrep::Backend& get() { return recorder ? *recorder : *base; }
  };

  Built build(const Common& c) const {
    evrep::BackendConfig cfg;
    cfg.kind = evrep::parse_backend_kind(kind);
    cfg.endpoint = endpoint;
    cfg.model = model;
    cfg.api_key_env = api_key_env;
    cfg.fixture = c.resolve(fixture);
    cfg.concurrency = concurrency;
    cfg.timeout_s = timeout_s;
    cfg.max_retries = retries;
    if (max_image_side > 0) cfg.max_image_side = max_image_side;
    Built b;
    b.base = evrep::make_backend(cfg);
    if (!record.empty()) b.recorder = std::make_unique<evrep::RecordingBackend>(*b.base, c.resolve(record));
    return b;
  }
};

std::vector<std::string> resolve_classes(const std::string& spec, const Common& c) {
  if (spec.empty()) return {};
  auto builtin = evrep::builtin_class_list(spec);
  if (!builtin.empty()) return builtin;
  return evrep::load_class_list(c.resolve(spec));
}

evrep::DatasetIndex load_index(const fs::path& manifest, const std::vector<std::string>& classes) {
  if (classes.empty()) return evrep::load_manifest(manifest);
  return evrep::load_manifest(manifest, classes);
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

struct ConvertCmd {
  Common common;
  fs::path input;
  std::string format = "auto";
  std::vector<std::string> reprs{"tencode"};
  fs::path out = "out";
  std::uint64_t window_us = 0;
  std::uint32_t width = 34, height = 34;
  bool sort = false;
  std::vector<float> background{0.0f, 0.0f, 0.0f};

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("convert", "Encode an event file as PNG frame(s)");
    common.add_to(sub);
    sub->add_option("events", input, "Event file (.csv text or N-MNIST binary)")->required();
    sub->add_option("--format", format, "Input format")
        ->check(CLI::IsMember({"auto", "nmnist", "csv"}))
        ->capture_default_str();
    sub->add_option("--repr", reprs, "Representation(s) to write")
        ->check(CLI::IsMember({"tencode", "event_frame"}))
        ->delimiter(',')
        ->capture_default_str();
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_option("--window-us", window_us, "Window length in microseconds (0 = whole recording)");
    sub->add_option("--width", width, "Sensor width")->capture_default_str();
    sub->add_option("--height", height, "Sensor height")->capture_default_str();
    sub->add_flag("--sort", sort, "Sort out-of-order events by timestamp instead of failing");
    sub->add_option("--background", background, "Tencode background colour r,g,b in [0,1]")
        ->delimiter(',')
        ->expected(3)
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    sub->callback([this] { run(); });
  }

  void run() {
    const auto path = common.resolve(input);
    evrep::TencodeOptions tencode_opt;
    std::copy(background.begin(), background.end(), tencode_opt.background.begin());
    evrep::EventFileOptions opt{width, height, sort};
    const auto fmt = format == "auto"  ? evrep::detect_event_format(path)
                     : format == "csv" ? evrep::EventFormat::csv
                                       : evrep::EventFormat::nmnist;
    const auto stream = evrep::load_event_file(path, fmt, opt);
    if (stream.events.empty()) std::cerr << "warning: " << path.string() << " contains no events\n";
    const auto [t0, t1] = evrep::full_window(stream);
    std::vector<std::pair<std::uint64_t, std::uint64_t>> windows;
    if (window_us == 0) {
      windows.push_back({t0, t1});
    } else {
      for (std::uint64_t a = t0; a < t1; a += window_us) windows.push_back({a, std::min(t1, a + window_us)});
    }
    const auto dir = common.resolve(out);
    fs::create_directories(dir);
    for (const auto& r : reprs) {
      for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto [a, b] = windows[w];
        const auto img = r == "tencode" ? evrep::encode_tencode(stream, a, b, tencode_opt).pixels
                                        : evrep::encode_event_frame(stream, a, b).pixels;
        std::string name = path.stem().string() + "_" + r;
        if (windows.size() > 1) name += "_w" + std::to_string(w);
        const auto dst = dir / (name + ".png");
        evrep::export_png(img, dst);
        std::cout << dst.string() << "\n";
      }
    }
  }
};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
  Common common;
  BackendOpts backend;
  evrep::TrainConfig cfg;
  evrep::GeneratorConfig gen_cfg;
  std::string strategy = "spsa";
  std::vector<std::string> kinds{"fused", "fused", "mbconv"};
  fs::path manifest, val_manifest, out = "run", resume;
  std::string classes;
  std::uint32_t width = 34, height = 34;
  bool sort = false;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train the representation generator");
    common.add_to(sub);
    backend.add_to(sub);
    sub->add_option("--manifest", manifest, "Training manifest (JSON lines with rgb_path)")->required();
    sub->add_option("--val-manifest", val_manifest, "Validation manifest");
    sub->add_option("--classes", classes, "Class list: builtin name or file");
    sub->add_option("--out", out, "Run directory for checkpoints and metrics")->capture_default_str();
    sub->add_option("--resume", resume, "Continue from this checkpoint");
    sub->add_option("--width", width, "Sensor width for CSV events")->capture_default_str();
    sub->add_option("--height", height, "Sensor height for CSV events")->capture_default_str();
    sub->add_flag("--sort", sort, "Sort out-of-order events by timestamp instead of failing");

    sub->add_option("--epochs", cfg.epochs)->check(CLI::NonNegativeNumber)->capture_default_str();
    sub->add_option("--batch_size,--batch-size", cfg.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--learning_rate,--lr", cfg.learning_rate)->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--beta1", cfg.beta1)->capture_default_str();
    sub->add_option("--beta2", cfg.beta2)->capture_default_str();
    sub->add_option("--grad_clip,--grad-clip", cfg.grad_clip)->capture_default_str();
    sub->add_option("--lambda", cfg.weights.lambda_semantic, "Semantic loss weight")->capture_default_str();
    sub->add_option("--gamma", cfg.weights.gamma_fidelity, "Fidelity loss weight")->capture_default_str();
    sub->add_option("--semantic_strategy,--strategy", strategy)
        ->check(CLI::IsMember({"spsa", "staged"}))
        ->capture_default_str();
    sub->add_option("--spsa_pairs,--spsa-pairs", cfg.spsa_pairs)->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--spsa_step,--spsa-step", cfg.spsa_step)->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_option("--warmup_epochs,--warmup-epochs", cfg.warmup_epochs)->capture_default_str();
    sub->add_option("--checkpoint_interval,--checkpoint-interval", cfg.checkpoint_interval)->capture_default_str();
    sub->add_option("--max_steps,--max-steps", cfg.max_steps)->capture_default_str();
    sub->add_option("--early_stop_patience,--patience", cfg.early_stop_patience)->capture_default_str();

    sub->add_option("--stem_channels,--stem", gen_cfg.stem_channels)->capture_default_str();
    sub->add_option("--stage_channels,--stages", gen_cfg.stage_channels)->delimiter(',')->capture_default_str();
    sub->add_option("--stage_repeats,--repeats", gen_cfg.stage_repeats)->delimiter(',')->capture_default_str();
    sub->add_option("--stage_kind,--kinds", kinds)
        ->delimiter(',')
        ->check(CLI::IsMember({"fused", "mbconv"}))
        ->capture_default_str();
    sub->add_option("--expansion_ratio", gen_cfg.expansion_ratio)->capture_default_str();
    sub->add_option("--se_ratio", gen_cfg.se_ratio)->capture_default_str();
    sub->callback([this] { run(); });
  }

  void run() {
    cfg.seed = common.seed;
    cfg.semantic_strategy = evrep::parse_semantic_strategy(strategy);
    gen_cfg.stage_kind.clear();
    for (const auto& k : kinds) gen_cfg.stage_kind.push_back(evrep::parse_block_kind(k));
    cfg.validate();
    gen_cfg.validate();

    const auto class_list = resolve_classes(classes, common);
    const evrep::EventFileOptions ev{width, height, sort};
    const auto train_set = evrep::load_training_samples(load_index(common.resolve(manifest), class_list), ev);
    std::vector<evrep::TrainSample> val_set;
    if (!val_manifest.empty()) {
      val_set = evrep::load_training_samples(load_index(common.resolve(val_manifest), class_list), ev);
    }

    auto be = backend.build(common);
    auto gen = evrep::Generator<float>::build(gen_cfg, common.seed);
    evrep::TrainOptions opt;
    opt.out_dir = common.resolve(out);
    if (!resume.empty()) opt.resume = common.resolve(resume);
    opt.on_step = [](const evrep::MetricRow& r) {
      if (r.step % 10 == 0) {
        std::fprintf(stderr, "step %llu  fidelity %.6f  semantic %.4f  dual %.6f\n",
                     static_cast<unsigned long long>(r.step), r.fidelity, r.semantic, r.dual);
      }
    };
    const auto res = evrep::train(train_set, val_set, gen, be.get(), cfg, opt);
    std::cout << "steps: " << res.steps << "\n";
    if (res.last_checkpoint) std::cout << "checkpoint: " << res.last_checkpoint->string() << "\n";
    if (res.best_checkpoint) std::cout << "best: " << res.best_checkpoint->string() << "\n";
    std::cout << "metrics: " << (opt.out_dir / "metrics.csv").string() << "\n";
  }
};

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCmd {
  Common common;
  BackendOpts backend;
  std::vector<std::string> datasets;
  std::vector<std::string> kinds{"tencode"};
  std::string classes;
  fs::path checkpoint, frames, out = "report";
  bool test_split = false;
  std::uint32_t width = 34, height = 34;
  bool sort = false;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "Zero-shot recognition benchmark");
    common.add_to(sub);
    backend.add_to(sub);
    sub->add_option("--dataset", datasets, "NAME=MANIFEST (repeatable); a bare path uses its stem as name")
        ->required();
    sub->add_option("--kinds", kinds, "Representations to compare")
        ->delimiter(',')
        ->check(CLI::IsMember({"event_frame", "tencode", "evrep", "external_frame"}))
        ->capture_default_str();
    sub->add_option("--classes", classes, "Class list: builtin name (nmnist, ncaltech101) or file");
    sub->add_option("--checkpoint", checkpoint, "Generator checkpoint (needed for evrep)");
    sub->add_option("--frames", frames, "Directory of externally reconstructed frames <id>.png");
    sub->add_option("--out", out, "Report path prefix")->capture_default_str();
    sub->add_flag("--test-split", test_split, "Evaluate only the held-out sixth of each class");
    sub->add_option("--width", width, "Sensor width for CSV events")->capture_default_str();
    sub->add_option("--height", height, "Sensor height for CSV events")->capture_default_str();
    sub->add_flag("--sort", sort, "Sort out-of-order events by timestamp instead of failing");
    sub->callback([this] { run(); });
  }

  void run() {
    const auto class_list = resolve_classes(classes, common);
    std::vector<evrep::RepKind> rep_kinds;
    for (const auto& k : kinds) rep_kinds.push_back(evrep::parse_rep_kind(k));

    std::vector<evrep::EvalDataset> sets;
    for (const auto& d : datasets) {
      const auto eq = d.find('=');
      const fs::path manifest = common.resolve(eq == std::string::npos ? d : d.substr(eq + 1));
      const std::string name = eq == std::string::npos ? manifest.stem().string() : d.substr(0, eq);
      auto index = load_index(manifest, class_list);
      if (test_split) index = evrep::split_dataset(index, common.seed).second;
      sets.push_back({name, std::move(index), nullptr});
    }

    std::vector<evrep::ExternalFrames> external;
    external.reserve(sets.size());
    const bool need_frames = std::find(rep_kinds.begin(), rep_kinds.end(), evrep::RepKind::external_frame) != rep_kinds.end();
    if (need_frames) {
      if (frames.empty()) throw evrep::Error(evrep::Errc::MissingExternalFrames, "--frames is required for external_frame");
      for (auto& s : sets) {
        external.push_back(evrep::load_external_frames(common.resolve(frames), s.index));
        for (const auto& id : external.back().missing) std::cerr << "warning: no external frame for " << id << "\n";
        s.external = &external.back();
      }
    }

    std::optional<evrep::LoadedCheckpoint<float>> ckpt;
    if (!checkpoint.empty()) ckpt.emplace(evrep::load_checkpoint<float>(common.resolve(checkpoint)));

    auto be = backend.build(common);
    evrep::CompareOptions opt;
    opt.generator = ckpt ? &ckpt->generator : nullptr;
    opt.seed = common.seed;
    opt.event_options = {width, height, sort};
    const auto prefix = common.resolve(out);
    const auto res = evrep::compare_representations(sets, rep_kinds, {&be.get()}, prefix, opt);
    std::cout << evrep::report_table(res.report);
    std::cout << "report: " << prefix.string() << ".csv\n";
  }
};

// ---------------------------------------------------------------------------
// caption
// ---------------------------------------------------------------------------

struct CaptionCmd {
  Common common;
  BackendOpts backend;
  fs::path input;
  std::string prompt{evrep::kCaptionPrompt};
  std::string repr = "tencode";
  fs::path checkpoint;
  std::uint32_t width = 34, height = 34;
  bool sort = false;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("caption", "Caption one image or event recording");
    common.add_to(sub);
    backend.add_to(sub);
    sub->add_option("input", input, "PNG image or event file")->required();
    sub->add_option("--prompt", prompt, "Prompt text");
    sub->add_option("--repr", repr, "Representation for event input")
        ->check(CLI::IsMember({"tencode", "event_frame", "evrep"}))
        ->capture_default_str();
    sub->add_option("--checkpoint", checkpoint, "Generator checkpoint (for --repr evrep)");
    sub->add_option("--width", width)->capture_default_str();
    sub->add_option("--height", height)->capture_default_str();
    sub->add_flag("--sort", sort, "Sort out-of-order events by timestamp instead of failing");
    sub->callback([this] { run(); });
  }

  void run() {
    const auto path = common.resolve(input);
    evrep::Image img;
    if (path.extension() == ".png") {
      img = evrep::read_png(path);
    } else {
      const auto stream = evrep::load_event_file(path, {width, height, sort});
      const auto [t0, t1] = evrep::full_window(stream);
      if (repr == "event_frame") {
        img = evrep::encode_event_frame(stream, t0, t1).pixels;
      } else {
        img = evrep::encode_tencode(stream, t0, t1).pixels;
        if (repr == "evrep") {
          if (checkpoint.empty()) throw evrep::Error(evrep::Errc::MissingCheckpoint, "--repr evrep needs --checkpoint");
          const auto ck = evrep::load_checkpoint<float>(common.resolve(checkpoint));
          img = evrep::generate(ck.generator, img);
        }
      }
    }
    auto be = backend.build(common);
    std::cout << evrep::caption(be.get(), {img, prompt}).text << "\n";
  }
};

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportCmd {
  Common common;
  std::vector<fs::path> records;
  fs::path out = "report";

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("report", "Rebuild an accuracy report from record files");
    common.add_to(sub);
    sub->add_option("records", records, "Records JSON-lines file(s)")->required();
    sub->add_option("--out", out, "Report path prefix")->capture_default_str();
    sub->callback([this] { run(); });
  }

  void run() {
    std::vector<evrep::EvalRecord> all;
    for (const auto& r : records) {
      auto part = evrep::read_records(common.resolve(r));
      all.insert(all.end(), part.begin(), part.end());
    }
    auto rep = evrep::aggregate(all);
    rep.meta.seed = common.seed;
    const auto prefix = common.resolve(out);
    auto csv = prefix, json = prefix;
    csv += ".csv";
    json += ".json";
    evrep::write_text_file(csv, evrep::report_csv(rep));
    evrep::write_text_file(json, evrep::report_json(rep).dump(2) + "\n");
    std::cout << evrep::report_table(rep);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event representations for vision-language models"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value file; keys go under a [train] / [eval] / ... section");
  app.allow_config_extras(CLI::config_extras_mode::error);

  ConvertCmd convert;
  TrainCmd train;
  EvalCmd eval;
  CaptionCmd caption;
  ReportCmd report;
  convert.attach(app);
  train.attach(app);
  eval.attach(app);
  caption.attach(app);
  report.attach(app);
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const evrep::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == evrep::Errc::InvalidConfig || e.code() == evrep::Errc::InvalidWeights ? kExitUsage
                                                                                             : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
