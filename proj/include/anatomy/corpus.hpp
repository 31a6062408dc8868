#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "anatomy/tokenizer.hpp"

namespace anatomy::corpus {

struct PromptRecord {
  std::string text;
  std::string source;
};

// Context-window utilization at one context length. The double-valued ratios
// are derived from the integer sums below at report time.
struct ContextUtilizationReport {
  std::size_t context = 0;
  double info_density = 0.0;
  double padding_fraction = 0.0;
  double truncation_rate = 0.0;
  double token_loss = 0.0;
  std::size_t n_prompts = 0;

  std::uint64_t occupied_positions = 0;  // sum of min(|t|, L)
  std::uint64_t total_tokens = 0;        // sum of |t|
  std::uint64_t truncated_prompts = 0;   // prompts with |t| > L
  std::uint64_t dropped_tokens = 0;      // sum of max(|t| - L, 0)
};

struct VocabCoverageReport {
  std::size_t vocab_size = 0;
  std::size_t used_tokens = 0;
  double coverage = 0.0;
  double special_share = 0.0;
  double mean_length = 0.0;
  std::uint64_t total_occurrences = 0;
  std::uint64_t special_occurrences = 0;
  std::map<std::size_t, double> topk_share;
  // source -> (|t| -> prompt count), over untruncated streams.
  std::map<std::string, std::map<std::size_t, std::uint64_t>> histogram;
};

// Integer-only streaming accumulator. merge() is associative and commutative,
// so shards can be processed independently.
class CorpusAccumulator {
 public:
  explicit CorpusAccumulator(std::size_t vocab_size);

  void add(std::span<const bpe::TokenId> stream, const std::string& source);
  void merge(const CorpusAccumulator& other);

  std::size_t n_prompts() const { return n_prompts_; }
  std::uint64_t total_tokens() const { return total_tokens_; }
  const std::map<std::size_t, std::uint64_t>& length_counts() const { return lengths_; }
  const std::vector<std::uint64_t>& token_counts() const { return token_counts_; }

  ContextUtilizationReport utilization(std::size_t context) const;
  VocabCoverageReport coverage(bpe::TokenId sot, bpe::TokenId eot,
                               std::span<const std::size_t> topk) const;

  bool operator==(const CorpusAccumulator&) const = default;

 private:
  std::size_t n_prompts_ = 0;
  std::uint64_t total_tokens_ = 0;
  std::map<std::size_t, std::uint64_t> lengths_;
  std::map<std::string, std::map<std::size_t, std::uint64_t>> by_source_;
  std::vector<std::uint64_t> token_counts_;
};

struct CorpusAudit {
  std::vector<ContextUtilizationReport> contexts;
  VocabCoverageReport vocab;
  std::size_t n_input = 0;
  std::size_t n_duplicates = 0;
  std::size_t n_empty = 0;
  std::size_t n_skipped = 0;  // unreadable records reported by the reader
};

inline constexpr std::size_t kDefaultTopK[] = {1, 10, 100, 1000};

// Keeps the first record for each normalized text, preserving order.
std::vector<PromptRecord> dedup(std::span<const PromptRecord> records);

// Deduplicates, drops prompts that normalize to nothing, tokenizes once and
// reports every requested context length.
CorpusAudit sweep(std::span<const PromptRecord> records, const bpe::MergeTable& table,
                  std::span<const std::size_t> contexts,
                  std::span<const std::size_t> topk = kDefaultTopK);

CorpusAudit audit(std::span<const PromptRecord> records, const bpe::MergeTable& table,
                  std::size_t context);

struct CorpusFile {
  std::vector<PromptRecord> records;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

// *.jsonl / *.json: one object per line with "text" and optional "source".
// Anything else: one prompt per line, source = file stem.
CorpusFile read_corpus(const std::filesystem::path& path);

}  // namespace anatomy::corpus
