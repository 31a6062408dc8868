#include "anatomy/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "anatomy/error.hpp"

#ifndef ANATOMY_VERSION
#define ANATOMY_VERSION "0.0.0"
#endif

namespace anatomy::report {
namespace {

std::string number(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void dump_into(const Json& j, std::string& out, int depth) {
  const std::string pad(static_cast<std::size_t>(depth + 1) * 2, ' ');
  const std::string close(static_cast<std::size_t>(depth) * 2, ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad + Json(it.key()).dump() + ": ";
        dump_into(it.value(), out, depth + 1);
      }
      out += "\n" + close + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      const bool flat = std::none_of(j.begin(), j.end(), [](const Json& e) { return e.is_structured(); });
      out += flat ? "[" : "[\n";
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat ? ", " : ",\n";
        first = false;
        if (!flat) out += pad;
        dump_into(e, out, depth + 1);
      }
      out += flat ? "]" : "\n" + close + "]";
      return;
    }
    case Json::value_t::number_float:
      out += number(j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

constexpr std::array<const char*, 8> kPalette = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                                                 "#59a14f", "#edc948", "#b07aa1", "#9c755f"};

}  // namespace

std::string dump(const Json& j) {
  std::string out;
  dump_into(j, out, 0);
  out += "\n";
  return out;
}

Json to_json(const corpus::ContextUtilizationReport& r) {
  return Json{{"context", r.context},
              {"info_density", r.info_density},
              {"padding_fraction", r.padding_fraction},
              {"truncation_rate", r.truncation_rate},
              {"token_loss", r.token_loss},
              {"n_prompts", r.n_prompts},
              {"occupied_positions", r.occupied_positions},
              {"total_tokens", r.total_tokens},
              {"truncated_prompts", r.truncated_prompts},
              {"dropped_tokens", r.dropped_tokens}};
}

Json to_json(const corpus::VocabCoverageReport& r) {
  Json topk = Json::array();
  for (const auto& [k, share] : r.topk_share) topk.push_back(Json{{"k", k}, {"share", share}});
  Json hist = Json::object();
  for (const auto& [src, lengths] : r.histogram) {
    Json rows = Json::array();
    for (const auto& [len, n] : lengths) rows.push_back(Json::array({len, n}));
    hist[src] = rows;
  }
  return Json{{"vocab_size", r.vocab_size},
              {"used_tokens", r.used_tokens},
              {"coverage", r.coverage},
              {"special_share", r.special_share},
              {"mean_length", r.mean_length},
              {"total_occurrences", r.total_occurrences},
              {"special_occurrences", r.special_occurrences},
              {"topk_share", topk},
              {"length_histogram", hist}};
}

Json to_json(const corpus::CorpusAudit& a) {
  Json ctx = Json::array();
  for (const auto& r : a.contexts) ctx.push_back(to_json(r));
  return Json{{"n_input", a.n_input},
              {"n_duplicates", a.n_duplicates},
              {"n_empty", a.n_empty},
              {"n_skipped", a.n_skipped},
              {"contexts", ctx},
              {"vocab", to_json(a.vocab)}};
}

Json to_json(const spectral::SpectrumReport& r) {
  Json dims = Json::array();
  for (const auto& [theta, k] : r.dims_at) dims.push_back(Json{{"threshold", theta}, {"dims", k}});
  return Json{{"rows", r.rows},
              {"cols", r.cols},
              {"centered", r.centered},
              {"numeric_rank", r.numeric_rank},
              {"effective_rank", r.effective_rank},
              {"effective_rank_variance", r.effective_rank_variance},
              {"variance_dims", dims},
              {"singular_values", r.singular_values}};
}

Json to_json(const spectral::SimilarityReport& r) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < r.rows; ++i) {
    rows.push_back(std::vector<double>(r.matrix.begin() + static_cast<std::ptrdiff_t>(i * r.rows),
                                       r.matrix.begin() + static_cast<std::ptrdiff_t>((i + 1) * r.rows)));
  }
  return Json{{"rows", r.rows},
              {"split", r.split},
              {"within_early", r.within_early},
              {"within_late", r.within_late},
              {"ratio", r.ratio_defined ? Json(r.ratio) : Json(nullptr)},
              {"ratio_defined", r.ratio_defined},
              {"matrix", rows}};
}

Json to_json(const idim::IdEstimate& e) {
  Json j{{"method", e.method},
         {"value", e.value},
         {"n_points", e.n_points},
         {"n_used", e.n_used},
         {"n_duplicates", e.n_duplicates}};
  if (e.method == "twonn") {
    j["discard_fraction"] = e.discard_fraction;
  } else {
    Json per = Json::array();
    for (const auto& [k, v] : e.per_k) per.push_back(Json{{"k", k}, {"value", v}});
    j["per_k"] = per;
  }
  return j;
}

Json to_json(const probe::ProbeReport& r, bool with_vectors) {
  Json j{{"sharpness", r.sharpness},
         {"input_err", r.input_err},
         {"logit_err", r.logit_err},
         {"logit_err_inf", r.logit_err_inf},
         {"output_err", r.output_err},
         {"reduction_factor", r.reduction_defined ? Json(r.reduction_factor) : Json(nullptr)},
         {"argmax_flipped", r.argmax_flipped},
         {"teacher_max_weight", r.teacher_max_weight},
         {"student_max_weight", r.student_max_weight},
         {"logit_gap", r.logit_gap},
         {"query_cosine", r.query_cosine}};
  if (with_vectors) {
    j["delta_query"] = r.delta_query;
    j["delta_logits"] = r.delta_logits;
    j["delta_output"] = r.delta_output;
  }
  return j;
}

std::string audit_csv(const corpus::CorpusAudit& a) {
  std::ostringstream out;
  out << "context,info_density,padding_fraction,truncation_rate,token_loss,n_prompts,"
         "occupied_positions,total_tokens,truncated_prompts,dropped_tokens\n";
  for (const auto& r : a.contexts) {
    out << r.context << ',' << number(r.info_density) << ',' << number(r.padding_fraction) << ','
        << number(r.truncation_rate) << ',' << number(r.token_loss) << ',' << r.n_prompts << ','
        << r.occupied_positions << ',' << r.total_tokens << ',' << r.truncated_prompts << ','
        << r.dropped_tokens << '\n';
  }
  return out.str();
}

std::string svg_histogram(const std::map<std::string, std::map<std::size_t, std::uint64_t>>& hist) {
  std::size_t lo = SIZE_MAX, hi = 0;
  std::uint64_t peak = 0;
  for (const auto& [src, lengths] : hist) {
    for (const auto& [len, n] : lengths) {
      lo = std::min(lo, len);
      hi = std::max(hi, len);
      peak = std::max(peak, n);
    }
  }
  if (peak == 0) throw ValidationError("histogram is empty");

  const double W = 760, H = 420, left = 70, right = 170, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  const std::size_t bins = hi - lo + 1;
  const double bw = pw / static_cast<double>(bins);
  const double sw = bw * 0.9 / static_cast<double>(hist.size());
  auto y_of = [&](double v) { return top + ph - ph * v / static_cast<double>(peak); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
    << "Token length distribution</text>\n";

  for (int t = 0; t <= 4; ++t) {
    const double v = static_cast<double>(peak) * t / 4.0;
    const double y = y_of(v);
    s << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(left + pw) << "\" y2=\""
      << fmt(y) << "\" stroke=\"#dddddd\"/>\n";
    s << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\">"
      << static_cast<std::uint64_t>(std::llround(v)) << "</text>\n";
  }

  std::size_t series = 0;
  for (const auto& [src, lengths] : hist) {
    const char* color = kPalette[series % kPalette.size()];
    for (const auto& [len, n] : lengths) {
      const double x = left + bw * static_cast<double>(len - lo) + bw * 0.05 + sw * static_cast<double>(series);
      const double y = y_of(static_cast<double>(n));
      s << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(sw) << "\" height=\""
        << fmt(top + ph - y) << "\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 14.0 * static_cast<double>(series);
    s << "<rect x=\"" << fmt(left + pw + 16) << "\" y=\"" << fmt(ly) << "\" width=\"10\" height=\"10\" fill=\""
      << color << "\"/>\n";
    s << "<text x=\"" << fmt(left + pw + 30) << "\" y=\"" << fmt(ly + 9) << "\">" << xml_escape(src)
      << "</text>\n";
    ++series;
  }

  const std::size_t step = std::max<std::size_t>(1, (bins + 19) / 20);
  for (std::size_t len = lo; len <= hi; len += step) {
    const double x = left + bw * (static_cast<double>(len - lo) + 0.5);
    s << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(top + ph + 16) << "\" text-anchor=\"middle\">" << len
      << "</text>\n";
  }
  s << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + ph) << "\" x2=\"" << fmt(left + pw) << "\" y2=\""
    << fmt(top + ph) << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(H - 16)
    << "\" text-anchor=\"middle\">tokens per prompt (with markers)</text>\n";
  s << "<text x=\"16\" y=\"" << fmt(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fmt(top + ph / 2) << ")\">prompts</text>\n";
  s << "</svg>\n";
  return s.str();
}

namespace {

// Diverging blue-white-red scale on [-1, 1].
std::string diverging(double v) {
  if (!std::isfinite(v)) return "#999999";
  v = std::clamp(v, -1.0, 1.0);
  const double lo[3] = {59, 76, 192}, mid[3] = {247, 247, 247}, hi[3] = {180, 4, 38};
  const double* end = v < 0 ? lo : hi;
  const double t = std::abs(v);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(mid[0] + t * (end[0] - mid[0]))),
                static_cast<int>(std::lround(mid[1] + t * (end[1] - mid[1]))),
                static_cast<int>(std::lround(mid[2] + t * (end[2] - mid[2]))));
  return buf;
}

}  // namespace

std::string svg_heatmap(std::span<const double> matrix, std::size_t n) {
  if (n == 0 || matrix.size() != n * n) throw ValidationError("heatmap needs a non-empty square matrix");
  const double cell = std::max(4.0, std::min(24.0, 480.0 / static_cast<double>(n)));
  const double left = 40, top = 40, grid = cell * static_cast<double>(n);
  const double W = left + grid + 90, H = top + grid + 30;
  const std::size_t every = n <= 32 ? 1 : (n + 15) / 16;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(W) << "\" height=\"" << fmt(H)
    << "\" viewBox=\"0 0 " << fmt(W) << ' ' << fmt(H) << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      s << "<rect x=\"" << fmt(left + cell * static_cast<double>(j)) << "\" y=\""
        << fmt(top + cell * static_cast<double>(i)) << "\" width=\"" << fmt(cell) << "\" height=\"" << fmt(cell)
        << "\" fill=\"" << diverging(matrix[i * n + j]) << "\"/>\n";
    }
  }
  for (std::size_t i = 0; i < n; i += every) {
    const double c = cell * (static_cast<double>(i) + 0.5);
    s << "<text x=\"" << fmt(left - 4) << "\" y=\"" << fmt(top + c + 3) << "\" text-anchor=\"end\">" << i
      << "</text>\n";
    s << "<text x=\"" << fmt(left + c) << "\" y=\"" << fmt(top - 6) << "\" text-anchor=\"middle\">" << i
      << "</text>\n";
  }

  // Legend: vertical bar from +1 (top) to -1 (bottom).
  const double lx = left + grid + 24, steps = 40, lh = std::max(grid, 80.0);
  for (int k = 0; k < static_cast<int>(steps); ++k) {
    const double v = 1.0 - 2.0 * (k + 0.5) / steps;
    s << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(top + lh * k / steps) << "\" width=\"14\" height=\""
      << fmt(lh / steps + 0.5) << "\" fill=\"" << diverging(v) << "\"/>\n";
  }
  s << "<text x=\"" << fmt(lx + 18) << "\" y=\"" << fmt(top + 8) << "\">1</text>\n";
  s << "<text x=\"" << fmt(lx + 18) << "\" y=\"" << fmt(top + lh / 2 + 3) << "\">0</text>\n";
  s << "<text x=\"" << fmt(lx + 18) << "\" y=\"" << fmt(top + lh) << "\">-1</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

Json RunManifest::to_json() const {
  Json in = Json::array();
  for (const auto& p : inputs) in.push_back(Json{{"path", p.string()}, {"sha256", file_digest(p)}});
  Json s = Json::object();
  for (const auto& [k, v] : seeds) s[k] = v;
  return Json{{"schema_version", kSchemaVersion},
              {"tool", "anatomy"},
              {"version", tool_version()},
              {"subcommand", subcommand},
              {"config", config},
              {"inputs", in},
              {"outputs", outputs},
              {"seeds", s},
              {"duration_seconds", duration_seconds},
              {"metrics", metrics}};
}

std::string tool_version() { return ANATOMY_VERSION; }

}  // namespace anatomy::report
