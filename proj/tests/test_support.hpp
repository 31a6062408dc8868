#pragma once

#include <filesystem>
#include <string>

#include "anatomy/tokenizer.hpp"

namespace anatomy::testing {

inline std::filesystem::path source_path(const std::string& rel) {
  return std::filesystem::path(ANATOMY_SOURCE_DIR) / rel;
}

inline const bpe::MergeTable& clip_table() {
  static const bpe::MergeTable table = bpe::load_merges(source_path("data/clip_bpe_merges.txt"));
  return table;
}

}  // namespace anatomy::testing
