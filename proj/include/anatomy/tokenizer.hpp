#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace anatomy::bpe {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr std::size_t kBaseUnits = 512;

// Byte-level BPE merge table in the CLIP layout: 256 byte units, the same 256
// units with an end-of-word suffix, one entry per merge, then the start and
// end markers. Immutable once built; safe to share between threads.
class MergeTable {
 public:
  using Merge = std::pair<std::string, std::string>;

  explicit MergeTable(std::vector<Merge> merges);

  std::size_t vocab_size() const { return tokens_.size(); }
  TokenId sot() const { return static_cast<TokenId>(tokens_.size() - 2); }
  TokenId eot() const { return static_cast<TokenId>(tokens_.size() - 1); }
  bool is_marker(TokenId id) const { return id == sot() || id == eot(); }

  const std::vector<Merge>& merges() const { return merges_; }
  std::span<const std::string> base_tokens() const {
    return {tokens_.data(), kBaseUnits};
  }
  const std::string& token(TokenId id) const;

  // Rank of the merge (a, b), or -1 when the pair is not mergeable.
  std::ptrdiff_t rank(std::string_view a, std::string_view b) const;
  TokenId id_of(const std::string& symbol) const;

 private:
  std::vector<Merge> merges_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::unordered_map<std::string, std::ptrdiff_t> ranks_;
};

// One merge pair per line ("a b"). A first line starting with '#' is a header
// and skipped, as are blank lines.
MergeTable load_merges(std::istream& source);
MergeTable load_merges(const std::filesystem::path& path);

struct TokenSequence {
  std::vector<TokenId> ids;      // exactly L entries
  std::size_t content_len = 0;   // non-padding positions, markers included
  bool truncated = false;
  std::size_t dropped_tokens = 0;
};

// Lowercase ASCII letters, collapse whitespace runs to one space, trim.
std::string normalize_text(std::string_view text);

// Untruncated stream [SOT, content..., EOT] for the normalized text.
std::vector<TokenId> encode_stream(const MergeTable& table, std::string_view text);

// Fixed-length sequence. Overflowing content is cut from the tail and the end
// marker is kept at position L-1; shorter content is followed by kPadId.
TokenSequence encode(const MergeTable& table, std::string_view text, std::size_t context);

// Wraps an already computed stream (as returned by encode_stream).
TokenSequence fit_to_context(const MergeTable& table, std::span<const TokenId> stream,
                             std::size_t context);

std::string decode(const MergeTable& table, std::span<const TokenId> ids);
std::string decode(const MergeTable& table, const TokenSequence& seq);

}  // namespace anatomy::bpe
