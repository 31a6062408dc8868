#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anatomy/attention_probe.hpp"
#include "anatomy/corpus.hpp"
#include "anatomy/intrinsic_dim.hpp"
#include "anatomy/spectral.hpp"

namespace anatomy::report {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1.0";

// Deterministic serialization: keys in insertion order, two-space indent,
// floating-point values with 17 significant digits, non-finite values as null.
std::string dump(const Json& j);

Json to_json(const corpus::ContextUtilizationReport& r);
Json to_json(const corpus::VocabCoverageReport& r);
Json to_json(const corpus::CorpusAudit& a);
Json to_json(const spectral::SpectrumReport& r);
Json to_json(const spectral::SimilarityReport& r);
Json to_json(const idim::IdEstimate& e);
Json to_json(const probe::ProbeReport& r, bool with_vectors = false);

std::string audit_csv(const corpus::CorpusAudit& a);

// Token-length histogram, one bar series per source.
std::string svg_histogram(const std::map<std::string, std::map<std::size_t, std::uint64_t>>& hist);

// Square similarity matrix as a labeled color grid; the color scale spans [-1, 1].
std::string svg_heatmap(std::span<const double> matrix, std::size_t n);

// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& content);

struct RunManifest {
  std::string subcommand;
  Json config = Json::object();
  std::vector<std::filesystem::path> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, std::uint64_t> seeds;
  double duration_seconds = 0.0;
  Json metrics = Json::object();

  Json to_json() const;
};

std::string tool_version();

}  // namespace anatomy::report
