#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "evrep/error.hpp"

namespace evrep {

inline constexpr std::array<std::string_view, 10> kNmnistClasses = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};

// Object categories of N-Caltech101 (directory names; the background folder is not a class).
inline constexpr std::array<std::string_view, 100> kNcaltech101Classes = {
    "Faces_easy", "Leopards", "Motorbikes", "accordion", "airplanes", "anchor", "ant", "barrel", "bass",
    "beaver", "binocular", "bonsai", "brain", "brontosaurus", "buddha", "butterfly", "camera", "cannon",
    "car_side", "ceiling_fan", "cellphone", "chair", "chandelier", "cougar_body", "cougar_face", "crab",
    "crayfish", "crocodile", "crocodile_head", "cup", "dalmatian", "dollar_bill", "dolphin", "dragonfly",
    "electric_guitar", "elephant", "emu", "euphonium", "ewer", "ferry", "flamingo", "flamingo_head",
    "garfield", "gerenuk", "gramophone", "grand_piano", "hawksbill", "headphone", "hedgehog", "helicopter",
    "ibis", "inline_skate", "joshua_tree", "kangaroo", "ketch", "lamp", "laptop", "llama", "lobster", "lotus",
    "mandolin", "mayfly", "menorah", "metronome", "minaret", "nautilus", "octopus", "okapi", "pagoda", "panda",
    "pigeon", "pizza", "platypus", "pyramid", "revolver", "rhino", "rooster", "saxophone", "schooner",
    "scissors", "scorpion", "sea_horse", "snoopy", "soccer_ball", "stapler", "starfish", "stegosaurus",
    "stop_sign", "strawberry", "sunflower", "tick", "trilobite", "umbrella", "watch", "water_lilly",
    "wheelchair", "wild_cat", "windsor_chair", "wrench", "yin_yang"};

/// Built-in class list by dataset name ("nmnist", "ncaltech101"); empty if unknown.
inline std::vector<std::string> builtin_class_list(std::string_view dataset) {
  if (dataset == "nmnist" || dataset == "n-mnist") return {kNmnistClasses.begin(), kNmnistClasses.end()};
  if (dataset == "ncaltech101" || dataset == "n-caltech101") {
    return {kNcaltech101Classes.begin(), kNcaltech101Classes.end()};
  }
  return {};
}

/// One class name per line; blank lines and '#' comments skipped.
inline std::vector<std::string> load_class_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOFailure, "cannot open class list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    const auto start = line.find_first_not_of(' ');
    if (start == std::string::npos || line[start] == '#') continue;
    out.push_back(line.substr(start));
  }
  return out;
}

}  // namespace evrep
