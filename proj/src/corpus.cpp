#include "anatomy/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "anatomy/error.hpp"
#include "anatomy/parallel.hpp"

namespace anatomy::corpus {

CorpusAccumulator::CorpusAccumulator(std::size_t vocab_size) : token_counts_(vocab_size, 0) {}

void CorpusAccumulator::add(std::span<const bpe::TokenId> stream, const std::string& source) {
  ++n_prompts_;
  total_tokens_ += stream.size();
  ++lengths_[stream.size()];
  ++by_source_[source][stream.size()];
  for (auto id : stream) ++token_counts_.at(static_cast<std::size_t>(id));
}

void CorpusAccumulator::merge(const CorpusAccumulator& other) {
  if (other.token_counts_.size() != token_counts_.size()) {
    throw ValidationError("cannot merge accumulators built for different vocabularies");
  }
  n_prompts_ += other.n_prompts_;
  total_tokens_ += other.total_tokens_;
  for (const auto& [len, n] : other.lengths_) lengths_[len] += n;
  for (const auto& [src, hist] : other.by_source_) {
    auto& mine = by_source_[src];
    for (const auto& [len, n] : hist) mine[len] += n;
  }
  for (std::size_t i = 0; i < token_counts_.size(); ++i) token_counts_[i] += other.token_counts_[i];
}

ContextUtilizationReport CorpusAccumulator::utilization(std::size_t context) const {
  if (context < 3) {
    throw InvalidArgument("context length must be at least 3, got " + std::to_string(context));
  }
  if (n_prompts_ == 0) throw ValidationError("corpus is empty");

  ContextUtilizationReport r;
  r.context = context;
  r.n_prompts = n_prompts_;
  r.total_tokens = total_tokens_;
  for (const auto& [len, n] : lengths_) {
    r.occupied_positions += n * std::min<std::uint64_t>(len, context);
    if (len > context) {
      r.truncated_prompts += n;
      r.dropped_tokens += n * (len - context);
    }
  }
  const double slots = static_cast<double>(n_prompts_) * static_cast<double>(context);
  r.info_density = static_cast<double>(r.occupied_positions) / slots;
  r.padding_fraction = 1.0 - r.info_density;
  r.truncation_rate = static_cast<double>(r.truncated_prompts) / static_cast<double>(n_prompts_);
  r.token_loss = static_cast<double>(r.dropped_tokens) / static_cast<double>(total_tokens_);
  return r;
}

VocabCoverageReport CorpusAccumulator::coverage(bpe::TokenId sot, bpe::TokenId eot,
                                                std::span<const std::size_t> topk) const {
  if (n_prompts_ == 0) throw ValidationError("corpus is empty");

  VocabCoverageReport r;
  r.vocab_size = token_counts_.size();
  r.histogram = by_source_;
  r.total_occurrences = total_tokens_;
  r.special_occurrences = token_counts_.at(static_cast<std::size_t>(sot)) +
                          token_counts_.at(static_cast<std::size_t>(eot));
  r.mean_length = static_cast<double>(total_tokens_) / static_cast<double>(n_prompts_);
  r.special_share =
      static_cast<double>(r.special_occurrences) / static_cast<double>(r.total_occurrences);

  std::vector<std::uint64_t> used;
  for (auto c : token_counts_) {
    if (c > 0) used.push_back(c);
  }
  r.used_tokens = used.size();
  r.coverage = static_cast<double>(r.used_tokens) / static_cast<double>(r.vocab_size);
  std::sort(used.begin(), used.end(), std::greater<>());

  std::vector<std::size_t> ks(topk.begin(), topk.end());
  ks.push_back(r.used_tokens);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  std::uint64_t running = 0;
  std::size_t taken = 0;
  for (auto k : ks) {
    if (k == 0) continue;
    while (taken < k && taken < used.size()) running += used[taken++];
    r.topk_share[k] = static_cast<double>(running) / static_cast<double>(total_tokens_);
  }
  return r;
}

std::vector<PromptRecord> dedup(std::span<const PromptRecord> records) {
  std::unordered_set<std::string> seen;
  std::vector<PromptRecord> out;
  for (const auto& rec : records) {
    std::string key = bpe::normalize_text(rec.text);
    if (seen.insert(key).second) out.push_back({std::move(key), rec.source});
  }
  return out;
}

CorpusAudit sweep(std::span<const PromptRecord> records, const bpe::MergeTable& table,
                  std::span<const std::size_t> contexts, std::span<const std::size_t> topk) {
  if (contexts.empty()) throw InvalidArgument("at least one context length is required");
  for (auto L : contexts) {
    if (L < 3) throw InvalidArgument("context length must be at least 3, got " + std::to_string(L));
  }

  CorpusAudit result;
  result.n_input = records.size();
  auto unique = dedup(records);
  result.n_duplicates = records.size() - unique.size();
  std::erase_if(unique, [&](const PromptRecord& r) {
    if (!r.text.empty()) return false;
    ++result.n_empty;
    return true;
  });
  if (unique.empty()) throw ValidationError("corpus is empty after deduplication");

  // Shards are merged in index order; counts are integers so the result does
  // not depend on the worker count.
  const std::size_t workers = std::min(thread_count(), unique.size());
  std::vector<CorpusAccumulator> shards(workers, CorpusAccumulator(table.vocab_size()));
  parallel_for(
      unique.size(),
      [&](std::size_t begin, std::size_t end, std::size_t w) {
        for (std::size_t i = begin; i < end; ++i) {
          shards[w].add(bpe::encode_stream(table, unique[i].text), unique[i].source);
        }
      },
      workers);
  CorpusAccumulator total(table.vocab_size());
  for (const auto& s : shards) total.merge(s);

  for (auto L : contexts) result.contexts.push_back(total.utilization(L));
  result.vocab = total.coverage(table.sot(), table.eot(), topk);
  return result;
}

CorpusAudit audit(std::span<const PromptRecord> records, const bpe::MergeTable& table,
                  std::size_t context) {
  const std::size_t contexts[] = {context};
  return sweep(records, table, contexts);
}

CorpusFile read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());

  const std::string ext = path.extension().string();
  const bool jsonl = ext == ".jsonl" || ext == ".json";
  const std::string default_source = path.stem().string();

  CorpusFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!jsonl) {
      file.records.push_back({line, default_source});
      continue;
    }
    auto obj = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      ++file.skipped;
      file.warnings.push_back(path.string() + ":" + std::to_string(line_no) +
                              ": skipped record without a string \"text\" field");
      continue;
    }
    std::string source = default_source;
    if (auto it = obj.find("source"); it != obj.end() && it->is_string()) source = *it;
    file.records.push_back({obj["text"].get<std::string>(), std::move(source)});
  }
  if (in.bad()) throw IoError("failed reading corpus " + path.string());
  return file;
}

}  // namespace anatomy::corpus
