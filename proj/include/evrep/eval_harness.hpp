#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "evrep/dataset.hpp"
#include "evrep/error.hpp"
#include "evrep/events.hpp"
#include "evrep/generator.hpp"
#include "evrep/hashing.hpp"
#include "evrep/image.hpp"
#include "evrep/llm_client.hpp"
#include "evrep/parallel.hpp"
#include "evrep/png_io.hpp"
#include "evrep/representation.hpp"

namespace evrep {

struct EvalRecord {
  std::string sample_id;
  std::string true_label;
  RepKind kind = RepKind::tencode;
  std::string backend;
  std::string dataset;
  std::string response;
  std::optional<std::string> predicted;  // nullopt = Unknown
  bool correct = false;
  std::optional<std::string> error;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

inline bool labels_equal(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

inline nlohmann::json to_json(const EvalRecord& r) {
  return {{"sample_id", r.sample_id},
          {"true_label", r.true_label},
          {"kind", rep_kind_name(r.kind)},
          {"backend", r.backend},
          {"dataset", r.dataset},
          {"response", r.response},
          {"predicted", r.predicted ? nlohmann::json(*r.predicted) : nlohmann::json(nullptr)},
          {"correct", r.correct},
          {"error", r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr)}};
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.true_label = j.at("true_label").get<std::string>();
  r.kind = parse_rep_kind(j.at("kind").get<std::string>());
  r.backend = j.at("backend").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.response = j.value("response", "");
  if (j.contains("predicted") && !j["predicted"].is_null()) r.predicted = j["predicted"].get<std::string>();
  r.correct = j.at("correct").get<bool>();
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  return r;
}

inline std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOFailure, "cannot open records file " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedRow, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// External frames
// ---------------------------------------------------------------------------

struct ExternalFrames {
  std::map<std::string, RepImage> frames;
  std::vector<std::string> missing;
};

/// Looks up <dir>/<sample id>.png for every sample. Missing files are listed,
/// not thrown.
inline ExternalFrames load_external_frames(const std::filesystem::path& dir, const DatasetIndex& index) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(Errc::MissingExternalFrames, "frame directory " + dir.string() + " does not exist");
  }
  ExternalFrames out;
  for (const auto& s : index.samples()) {
    const auto path = dir / (s.id + ".png");
    if (!std::filesystem::exists(path)) {
      out.missing.push_back(s.id);
      continue;
    }
    out.frames.emplace(s.id, RepImage{read_png(path), RepKind::external_frame});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recognition
// ---------------------------------------------------------------------------

struct RecognitionOptions {
  std::string dataset = "dataset";
  const Generator<float>* generator = nullptr;   // required for evrep
  const ExternalFrames* external = nullptr;      // required for external_frame
  EventFileOptions event_options;
  int max_tokens = 32;
};

/// Builds the image fed to the model for one sample, using a single window
/// spanning the whole recording.
inline Image representation_for(const Sample& s, RepKind kind, const RecognitionOptions& opt) {
  if (kind == RepKind::external_frame) {
    auto it = opt.external->frames.find(s.id);
    if (it == opt.external->frames.end()) throw Error(Errc::MissingExternalFrames, "no external frame for " + s.id);
    return it->second.pixels;
  }
  const auto stream = load_event_file(s.events_path, opt.event_options);
  const auto [t0, t1] = full_window(stream);
  switch (kind) {
    case RepKind::event_frame: return encode_event_frame(stream, t0, t1).pixels;
    case RepKind::tencode: return encode_tencode(stream, t0, t1).pixels;
    case RepKind::evrep: return generate(*opt.generator, encode_tencode(stream, t0, t1).pixels);
    default: break;
  }
  throw Error(Errc::InvalidConfig, "unsupported representation kind");
}

/// One record per sample, in index order. Samples run concurrently up to
/// the backend's cap. Backend failures become Unknown records with an error
/// note; the run continues.
inline std::vector<EvalRecord> run_recognition(const DatasetIndex& index, RepKind kind, Backend& backend,
                                               const RecognitionOptions& opt = {}) {
  if (kind == RepKind::evrep && !opt.generator) {
    throw Error(Errc::MissingCheckpoint, "evrep recognition requires a generator checkpoint");
  }
  if (kind == RepKind::external_frame) {
    if (!opt.external) throw Error(Errc::MissingExternalFrames, "external_frame recognition requires a frame directory");
    std::vector<std::string> missing;
    for (const auto& s : index.samples())
      if (!opt.external->frames.count(s.id)) missing.push_back(s.id);
    if (!missing.empty()) {
      std::string list;
      for (std::size_t i = 0; i < missing.size() && i < 5; ++i) list += (i ? ", " : "") + missing[i];
      throw Error(Errc::MissingExternalFrames,
                  std::to_string(missing.size()) + " samples have no external frame (" + list + ")");
    }
  }
  const auto& classes = index.class_list();
  std::vector<EvalRecord> records(index.size());
  parallel_for(index.size(), backend.concurrency_cap(), [&](std::size_t i) {
    const auto& s = index.samples()[i];
    EvalRecord& r = records[i];
    r.sample_id = s.id;
    r.true_label = s.label;
    r.kind = kind;
    r.backend = backend.id();
    r.dataset = opt.dataset;
    const Image img = representation_for(s, kind, opt);
    try {
      r.response = recognize(backend, img, classes, opt.max_tokens).text;
    } catch (const Error& e) {
      if (!e.is_backend_failure()) throw;
      r.error = e.what();
      return;
    }
    r.predicted = parse_prediction(r.response, classes);
    r.correct = r.predicted && labels_equal(*r.predicted, s.label);
  });
  return records;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct AccuracyRow {
  std::string backend;
  std::string kind;
  std::string dataset;
  double accuracy_pct = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t unknown = 0;
  bool best = false;

  friend bool operator==(const AccuracyRow&, const AccuracyRow&) = default;
};

struct RunMetadata {
  std::string prompt_sha256;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
};

struct AccuracyReport {
  std::vector<AccuracyRow> rows;
  RunMetadata meta;

  const AccuracyRow* find(std::string_view backend, std::string_view kind, std::string_view dataset) const {
    for (const auto& r : rows)
      if (r.backend == backend && r.kind == kind && r.dataset == dataset) return &r;
    return nullptr;
  }
};

/// Within each (backend, dataset) the highest accuracy is flagged; ties go
/// to the row that appears first.
inline void flag_best(std::vector<AccuracyRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].best = false;
    const auto key = std::pair{rows[i].backend, rows[i].dataset};
    auto it = best.find(key);
    if (it == best.end() || rows[i].accuracy_pct > rows[it->second].accuracy_pct) best[key] = i;
  }
  for (const auto& [key, i] : best) rows[i].best = true;
}

/// Groups by (backend, kind, dataset) in order of first appearance.
inline AccuracyReport aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw Error(Errc::EmptyRecords, "cannot aggregate an empty record list");
  AccuracyReport rep;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> slot;
  for (const auto& r : records) {
    const auto key = std::tuple{r.backend, std::string(rep_kind_name(r.kind)), r.dataset};
    auto [it, inserted] = slot.emplace(key, rep.rows.size());
    if (inserted) rep.rows.push_back({r.backend, std::get<1>(key), r.dataset});
    auto& row = rep.rows[it->second];
    ++row.total;
    row.correct += r.correct ? 1 : 0;
    row.unknown += r.predicted ? 0 : 1;
  }
  for (auto& row : rep.rows) row.accuracy_pct = 100.0 * double(row.correct) / double(row.total);
  flag_best(rep.rows);
  return rep;
}

inline std::string format_accuracy(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", pct);
  return buf;
}

inline constexpr std::string_view kReportHeader = "backend,kind,dataset,accuracy_pct,total,unknown,best_flag";

inline std::string report_csv(const AccuracyReport& rep) {
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& r : rep.rows) {
    out += r.backend + "," + r.kind + "," + r.dataset + "," + format_accuracy(r.accuracy_pct) + "," +
           std::to_string(r.total) + "," + std::to_string(r.unknown) + "," + (r.best ? "1" : "0") + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const AccuracyReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"backend", r.backend},
                    {"kind", r.kind},
                    {"dataset", r.dataset},
                    {"accuracy_pct", r.accuracy_pct},
                    {"total", r.total},
                    {"correct", r.correct},
                    {"unknown", r.unknown},
                    {"best_flag", r.best}});
  }
  return {{"rows", rows},
          {"meta",
           {{"prompt_sha256", rep.meta.prompt_sha256},
            {"seed", rep.meta.seed},
            {"started", rep.meta.started},
            {"finished", rep.meta.finished}}}};
}

/// Human-readable table for terminals.
inline std::string report_table(const AccuracyReport& rep) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %-15s %-14s %9s %7s %7s\n", "backend", "kind", "dataset", "acc(%)", "total",
                "unknown");
  out += line;
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof line, "%-20s %-15s %-14s %9s %7zu %7zu%s\n", r.backend.c_str(), r.kind.c_str(),
                  r.dataset.c_str(), format_accuracy(r.accuracy_pct).c_str(), r.total, r.unknown, r.best ? " *" : "");
    out += line;
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct EvalDataset {
  std::string name;
  DatasetIndex index;
  const ExternalFrames* external = nullptr;
};

struct CompareOptions {
  const Generator<float>* generator = nullptr;
  std::uint64_t seed = 0;
  EventFileOptions event_options;
  bool timestamps = true;  // off for byte-identical reruns
};

struct ComparisonOutput {
  AccuracyReport report;
  std::vector<EvalRecord> records;
};

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(text.data(), std::streamsize(text.size()))) {
    throw Error(Errc::IOFailure, "cannot write " + path.string());
  }
}

/// Writes the record list (JSON lines) next to the report.
inline void write_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  write_text_file(path, text);
}

/// Runs every (backend, dataset, kind) and writes <out>.csv, <out>.json and
/// <out>.records.jsonl. Rows follow backends, then datasets, then kinds in
/// the order given. Records are persisted even if a later run throws.
inline ComparisonOutput compare_representations(const std::vector<EvalDataset>& datasets,
                                                const std::vector<RepKind>& kinds,
                                                const std::vector<Backend*>& backends,
                                                const std::filesystem::path& out, const CompareOptions& opt = {}) {
  if (kinds.empty()) throw Error(Errc::InvalidConfig, "kinds list is empty");
  if (datasets.empty()) throw Error(Errc::InvalidConfig, "datasets list is empty");
  if (backends.empty()) throw Error(Errc::InvalidConfig, "backends list is empty");
  ComparisonOutput result;
  result.report.meta.seed = opt.seed;
  result.report.meta.started = opt.timestamps ? utc_timestamp() : "";
  result.report.meta.prompt_sha256 = sha256_hex(std::string(kRecognitionPromptPrefix));
  auto records_path = out;
  records_path += ".records.jsonl";
  try {
    for (auto* backend : backends)
      for (const auto& ds : datasets)
        for (auto kind : kinds) {
          RecognitionOptions ro;
          ro.dataset = ds.name;
          ro.generator = opt.generator;
          ro.external = ds.external;
          ro.event_options = opt.event_options;
          auto recs = run_recognition(ds.index, kind, *backend, ro);
          result.records.insert(result.records.end(), recs.begin(), recs.end());
        }
  } catch (...) {
    if (!result.records.empty()) write_records(records_path, result.records);
    throw;
  }
  auto meta = result.report.meta;
  result.report = aggregate(result.records);
  result.report.meta = meta;
  result.report.meta.finished = opt.timestamps ? utc_timestamp() : "";

  auto csv_path = out, json_path = out;
  csv_path += ".csv";
  json_path += ".json";
  write_text_file(csv_path, report_csv(result.report));
  write_text_file(json_path, report_json(result.report).dump(2) + "\n");
  write_records(records_path, result.records);
  return result;
}

}  // namespace evrep
