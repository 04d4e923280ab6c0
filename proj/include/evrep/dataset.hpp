#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "evrep/error.hpp"
#include "evrep/random.hpp"

namespace evrep {

struct Sample {
  std::string id;
  std::filesystem::path events_path;
  std::string label;
  std::optional<std::filesystem::path> rgb_path;  // samples without a pair are eval-only

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Immutable list of labeled samples plus the ordered class list used in prompts.
class DatasetIndex {
 public:
  DatasetIndex() = default;

  /// Validates: sample ids unique, every label in class_list, classes unique.
  DatasetIndex(std::vector<Sample> samples, std::vector<std::string> class_list)
      : samples_(std::move(samples)), class_list_(std::move(class_list)) {
    std::set<std::string> classes(class_list_.begin(), class_list_.end());
    if (classes.size() != class_list_.size()) {
      throw Error(Errc::InvalidConfig, "duplicate entries in class list");
    }
    std::set<std::string> ids;
    for (const auto& s : samples_) {
      if (!ids.insert(s.id).second) throw Error(Errc::InvalidConfig, "duplicate sample id '" + s.id + "'");
      if (!classes.count(s.label)) {
        throw Error(Errc::InvalidConfig, "sample '" + s.id + "' has label '" + s.label + "' not in class list");
      }
    }
  }

  /// Class list = sorted unique labels of the samples.
  static DatasetIndex from_samples(std::vector<Sample> samples) {
    std::set<std::string> labels;
    for (const auto& s : samples) labels.insert(s.label);
    return DatasetIndex(std::move(samples), {labels.begin(), labels.end()});
  }

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const std::vector<std::string>& class_list() const noexcept { return class_list_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  const Sample* find(const std::string& id) const {
    auto it = std::find_if(samples_.begin(), samples_.end(), [&](const Sample& s) { return s.id == id; });
    return it == samples_.end() ? nullptr : &*it;
  }

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;

 private:
  std::vector<Sample> samples_;
  std::vector<std::string> class_list_;
};

/// Reads a JSON-lines manifest: {"id", "events_path", "label", "rgb_path"?}.
/// Relative paths resolve against the manifest's directory.
inline DatasetIndex load_manifest(const std::filesystem::path& manifest,
                                  std::optional<std::vector<std::string>> class_list = std::nullopt) {
  std::ifstream in(manifest);
  if (!in) throw Error(Errc::IOFailure, "cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::string>();
      s.events_path = resolve(j.at("events_path").get<std::string>());
      s.label = j.at("label").get<std::string>();
      if (j.contains("rgb_path") && !j["rgb_path"].is_null()) {
        s.rgb_path = resolve(j["rgb_path"].get<std::string>());
      }
      samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedRow, manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (class_list) return DatasetIndex(std::move(samples), std::move(*class_list));
  return DatasetIndex::from_samples(std::move(samples));
}

inline void write_manifest(const DatasetIndex& index, const std::filesystem::path& manifest) {
  std::ofstream out(manifest);
  if (!out) throw Error(Errc::IOFailure, "cannot write manifest " + manifest.string());
  for (const auto& s : index.samples()) {
    nlohmann::json j{{"id", s.id}, {"events_path", s.events_path.string()}, {"label", s.label}};
    if (s.rgb_path) j["rgb_path"] = s.rgb_path->string();
    out << j.dump() << '\n';
  }
}

/// One directory per class under root; every regular file is a sample whose id
/// is "<class>/<file stem>". No RGB pairs: such an index is usable for eval only.
inline DatasetIndex scan_class_directories(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(Errc::IOFailure, root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  std::vector<Sample> samples;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    const auto label = dir.filename().string();
    for (const auto& f : files) {
      samples.push_back({label + "/" + f.stem().string(), f, label, std::nullopt});
    }
  }
  return DatasetIndex::from_samples(std::move(samples));
}

inline constexpr std::size_t kSplitDenominator = 6;  // 5:1 train:test

/// Per-class 5:1 partition: floor(n_c / 6) test samples, the rest train.
/// Sample order inside each side follows the input order.
inline std::pair<DatasetIndex, DatasetIndex> split_dataset(const DatasetIndex& index, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < index.samples().size(); ++i) by_class[index.samples()[i].label].push_back(i);

  std::vector<bool> is_test(index.size(), false);
  for (const auto& label : index.class_list()) {
    auto it = by_class.find(label);
    if (it == by_class.end()) continue;
    auto members = it->second;
    if (members.size() < kSplitDenominator) {
      throw Error(Errc::ClassTooSmall, "class '" + label + "' has " + std::to_string(members.size()) +
                                           " samples, need at least " + std::to_string(kSplitDenominator));
    }
    // per-class stream so adding a class does not reshuffle the others
    Rng rng(derive_seed(seed, fnv1a64(label)));
    fisher_yates(members, rng);
    for (std::size_t k = 0; k < members.size() / kSplitDenominator; ++k) is_test[members[k]] = true;
  }

  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < index.size(); ++i) {
    (is_test[i] ? test : train).push_back(index.samples()[i]);
  }
  return {DatasetIndex(std::move(train), index.class_list()), DatasetIndex(std::move(test), index.class_list())};
}

}  // namespace evrep
