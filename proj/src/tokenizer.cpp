#include "anatomy/tokenizer.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "anatomy/error.hpp"

namespace anatomy::bpe {
namespace {

constexpr std::string_view kEndOfWord = "</w>";
constexpr std::string_view kSotText = "<start_of_text>";
constexpr std::string_view kEotText = "<end_of_text>";

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

// Printable stand-ins for every byte, in the canonical CLIP order: the
// printable Latin-1 bytes map to themselves, the rest to U+0100 onwards.
struct ByteUnits {
  std::array<std::uint8_t, 256> order{};       // vocabulary slot -> byte
  std::array<std::string, 256> unit{};         // byte -> UTF-8 unit
  std::unordered_map<std::string, std::uint8_t> byte_of;

  ByteUnits() {
    std::array<bool, 256> printable{};
    std::size_t slot = 0;
    auto take = [&](int lo, int hi) {
      for (int b = lo; b <= hi; ++b) {
        printable[b] = true;
        order[slot++] = static_cast<std::uint8_t>(b);
        unit[b] = utf8_encode(static_cast<char32_t>(b));
      }
    };
    take('!', '~');
    take(0xA1, 0xAC);
    take(0xAE, 0xFF);
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      if (printable[b]) continue;
      order[slot++] = static_cast<std::uint8_t>(b);
      unit[b] = utf8_encode(next++);
    }
    for (int b = 0; b < 256; ++b) byte_of.emplace(unit[b], static_cast<std::uint8_t>(b));
  }
};

const ByteUnits& byte_units() {
  static const ByteUnits units;
  return units;
}

std::string pair_key(std::string_view a, std::string_view b) {
  std::string key;
  key.reserve(a.size() + b.size() + 1);
  key.append(a).push_back(' ');
  key.append(b);
  return key;
}

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
// Non-ASCII code points count as letters; see tests/fixtures/README.md.
bool is_letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

std::size_t contraction_at(std::string_view s, std::size_t i) {
  if (s[i] != '\'') return 0;
  static constexpr std::array<std::string_view, 7> kSuffixes = {"s", "t", "re", "ve",
                                                                "m", "ll", "d"};
  for (auto suffix : kSuffixes) {
    if (s.substr(i + 1, suffix.size()) == suffix) return suffix.size() + 1;
  }
  return 0;
}

// Splits normalized text into pre-tokens following the CLIP pattern
// 's|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+ plus the two marker
// literals.
std::vector<std::string_view> pre_split(std::string_view s) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    if (s.substr(i, kSotText.size()) == kSotText) {
      words.push_back(s.substr(i, kSotText.size()));
      i += kSotText.size();
    } else if (s.substr(i, kEotText.size()) == kEotText) {
      words.push_back(s.substr(i, kEotText.size()));
      i += kEotText.size();
    } else if (std::size_t n = contraction_at(s, i); n > 0) {
      words.push_back(s.substr(i, n));
      i += n;
    } else if (is_space(c)) {
      ++i;
    } else if (is_letter(c)) {
      std::size_t j = i;
      while (j < s.size() && is_letter(static_cast<unsigned char>(s[j]))) ++j;
      words.push_back(s.substr(i, j - i));
      i = j;
    } else if (is_digit(c)) {
      words.push_back(s.substr(i, 1));
      ++i;
    } else {
      std::size_t j = i;
      while (j < s.size()) {
        auto d = static_cast<unsigned char>(s[j]);
        if (is_space(d) || is_letter(d) || is_digit(d)) break;
        ++j;
      }
      words.push_back(s.substr(i, j - i));
      i = j;
    }
  }
  return words;
}

void bpe_word(const MergeTable& table, std::string_view word, std::vector<TokenId>& out) {
  const auto& units = byte_units();
  std::vector<std::string> symbols;
  symbols.reserve(word.size());
  for (unsigned char b : word) symbols.push_back(units.unit[b]);
  symbols.back().append(kEndOfWord);

  while (symbols.size() > 1) {
    std::ptrdiff_t best = std::numeric_limits<std::ptrdiff_t>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      std::ptrdiff_t r = table.rank(symbols[i], symbols[i + 1]);
      if (r >= 0 && r < best) {
        best = r;
        best_at = i;
      }
    }
    if (best == std::numeric_limits<std::ptrdiff_t>::max()) break;

    // Merge every non-overlapping occurrence of the winning pair, left to right.
    const std::string first = symbols[best_at];
    const std::string second = symbols[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == first && symbols[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(merged);
  }
  for (const auto& sym : symbols) out.push_back(table.id_of(sym));
}

}  // namespace

MergeTable::MergeTable(std::vector<Merge> merges) : merges_(std::move(merges)) {
  const auto& units = byte_units();
  tokens_.reserve(kBaseUnits + merges_.size() + 2);
  for (auto b : units.order) tokens_.push_back(units.unit[b]);
  for (auto b : units.order) tokens_.push_back(units.unit[b] + std::string(kEndOfWord));
  for (const auto& [a, b] : merges_) tokens_.push_back(a + b);
  tokens_.emplace_back(kSotText);
  tokens_.emplace_back(kEotText);

  ids_.reserve(tokens_.size());
  // Later entries win on collision, matching a dict built from the same list.
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    ids_[tokens_[i]] = static_cast<TokenId>(i);
  }
  ranks_.reserve(merges_.size());
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    auto [it, inserted] =
        ranks_.emplace(pair_key(merges_[r].first, merges_[r].second), static_cast<std::ptrdiff_t>(r));
    if (!inserted) {
      throw ValidationError("duplicate merge pair '" + it->first + "' at rank " +
                            std::to_string(r));
    }
  }
}

const std::string& MergeTable::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::ptrdiff_t MergeTable::rank(std::string_view a, std::string_view b) const {
  auto it = ranks_.find(pair_key(a, b));
  return it == ranks_.end() ? -1 : it->second;
}

TokenId MergeTable::id_of(const std::string& symbol) const {
  auto it = ids_.find(symbol);
  if (it == ids_.end()) {
    throw std::logic_error("BPE produced symbol outside the vocabulary: " + symbol);
  }
  return it->second;
}

MergeTable load_merges(std::istream& source) {
  std::vector<MergeTable::Merge> merges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && !line.empty() && line.front() == '#') continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::istringstream fields(line);
    std::string a, b, extra;
    if (!(fields >> a >> b) || (fields >> extra)) {
      throw ParseError("expected exactly two space-separated symbols, got '" + line + "'",
                       line_no);
    }
    merges.emplace_back(std::move(a), std::move(b));
  }
  if (source.bad()) throw IoError("failed reading merge table");
  return MergeTable(std::move(merges));
}

MergeTable load_merges(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open merge table " + path.string());
  return load_merges(in);
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
  }
  return out;
}

std::vector<TokenId> encode_stream(const MergeTable& table, std::string_view text) {
  const std::string norm = normalize_text(text);
  std::vector<TokenId> ids;
  ids.reserve(norm.size() / 2 + 2);
  ids.push_back(table.sot());
  for (auto word : pre_split(norm)) {
    if (word == kSotText) {
      ids.push_back(table.sot());
    } else if (word == kEotText) {
      ids.push_back(table.eot());
    } else {
      bpe_word(table, word, ids);
    }
  }
  ids.push_back(table.eot());
  return ids;
}

TokenSequence fit_to_context(const MergeTable& table, std::span<const TokenId> stream,
                             std::size_t context) {
  if (context < 3) {
    throw InvalidArgument("context length must be at least 3, got " + std::to_string(context));
  }
  TokenSequence seq;
  seq.ids.assign(context, kPadId);
  if (stream.size() > context) {
    std::copy_n(stream.begin(), context - 1, seq.ids.begin());
    seq.ids[context - 1] = table.eot();
    seq.content_len = context;
    seq.truncated = true;
    seq.dropped_tokens = stream.size() - context;
  } else {
    std::copy(stream.begin(), stream.end(), seq.ids.begin());
    seq.content_len = stream.size();
  }
  return seq;
}

TokenSequence encode(const MergeTable& table, std::string_view text, std::size_t context) {
  if (context < 3) {
    throw InvalidArgument("context length must be at least 3, got " + std::to_string(context));
  }
  auto stream = encode_stream(table, text);
  return fit_to_context(table, stream, context);
}

std::string decode(const MergeTable& table, std::span<const TokenId> ids) {
  const auto& units = byte_units();
  std::string joined;
  for (TokenId id : ids) {
    const std::string& tok = table.token(id);
    if (id == table.eot()) break;
    if (id == table.sot()) continue;
    joined += tok;
  }

  // Undo the byte -> unit mapping; "</w>" becomes a word boundary.
  std::string bytes;
  std::size_t i = 0;
  while (i < joined.size()) {
    if (std::string_view(joined).substr(i, kEndOfWord.size()) == kEndOfWord) {
      bytes.push_back(' ');
      i += kEndOfWord.size();
      continue;
    }
    std::size_t len = (static_cast<unsigned char>(joined[i]) < 0x80) ? 1 : 2;
    auto it = units.byte_of.find(joined.substr(i, len));
    if (it == units.byte_of.end()) {
      throw ValidationError("undecodable symbol in token stream");
    }
    bytes.push_back(static_cast<char>(it->second));
    i += len;
  }
  while (!bytes.empty() && bytes.back() == ' ') bytes.pop_back();
  return bytes;
}

std::string decode(const MergeTable& table, const TokenSequence& seq) {
  for (TokenId id : seq.ids) table.token(id);
  auto n = std::min(seq.content_len, seq.ids.size());
  return decode(table, std::span<const TokenId>(seq.ids.data(), n));
}

}  // namespace anatomy::bpe
