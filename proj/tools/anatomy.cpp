// anatomy: command-line front end for the text-encoder analysis toolkit.
//
// Exit codes: 0 success, 1 validation / usage error, 2 I/O error,
// 3 numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anatomy/attention_probe.hpp"
#include "anatomy/corpus.hpp"
#include "anatomy/distill.hpp"
#include "anatomy/error.hpp"
#include "anatomy/intrinsic_dim.hpp"
#include "anatomy/matrix.hpp"
#include "anatomy/report.hpp"
#include "anatomy/rng.hpp"
#include "anatomy/spectral.hpp"
#include "anatomy/tokenizer.hpp"

namespace fs = std::filesystem;
using anatomy::report::Json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path manifest_path(const fs::path& out) {
  const auto dir = out.parent_path();
  return (dir.empty() ? fs::path(".") : dir) / "manifest.json";
}

void ensure_parent(const fs::path& out) {
  const auto dir = out.parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw anatomy::IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const Json& j) {
  ensure_parent(path);
  anatomy::report::write_text(path, anatomy::report::dump(j));
}

Json payload(const char* kind) {
  return Json{{"schema_version", anatomy::report::kSchemaVersion}, {"report", kind}};
}

void merge_into(Json& dst, const Json& src) {
  for (auto it = src.begin(); it != src.end(); ++it) dst[it.key()] = it.value();
}

std::vector<anatomy::corpus::PromptRecord> load_records(const std::vector<std::string>& paths,
                                                        std::size_t& skipped) {
  std::vector<anatomy::corpus::PromptRecord> all;
  for (const auto& p : paths) {
    auto file = anatomy::corpus::read_corpus(p);
    for (const auto& w : file.warnings) std::cerr << "warning: " << w << '\n';
    skipped += file.skipped;
    all.insert(all.end(), std::make_move_iterator(file.records.begin()),
               std::make_move_iterator(file.records.end()));
  }
  return all;
}

// ---------------------------------------------------------------- tokenize

struct TokenizeOpts {
  std::string merges;
  std::size_t context = 32;
  std::vector<std::string> texts;
  std::string corpus;
  std::string out;
};

int run_tokenize(const TokenizeOpts& o) {
  const auto t0 = Clock::now();
  if (o.texts.empty() == o.corpus.empty()) {
    throw anatomy::InvalidArgument("tokenize needs exactly one of --text or --corpus");
  }
  auto table = anatomy::bpe::load_merges(fs::path(o.merges));
  std::vector<std::string> prompts = o.texts;
  std::vector<fs::path> inputs{o.merges};
  if (!o.corpus.empty()) {
    std::size_t skipped = 0;
    for (auto& r : load_records({o.corpus}, skipped)) prompts.push_back(std::move(r.text));
    inputs.emplace_back(o.corpus);
  }

  std::ostringstream lines;
  for (const auto& text : prompts) {
    auto seq = anatomy::bpe::encode(table, text, o.context);
    nlohmann::ordered_json j{{"text", text},
                             {"ids", seq.ids},
                             {"content_len", seq.content_len},
                             {"truncated", seq.truncated},
                             {"dropped", seq.dropped_tokens}};
    lines << j.dump() << '\n';
  }

  anatomy::report::RunManifest m;
  m.subcommand = "tokenize";
  m.config = Json{{"merges", o.merges}, {"context", o.context}, {"n_prompts", prompts.size()}};
  m.inputs = inputs;
  m.metrics = Json{{"vocab_size", table.vocab_size()}};
  if (o.out.empty()) {
    std::cout << lines.str();
    m.duration_seconds = seconds_since(t0);
    std::cerr << anatomy::report::dump(m.to_json());
  } else {
    ensure_parent(o.out);
    anatomy::report::write_text(o.out, lines.str());
    m.outputs = {o.out};
    m.duration_seconds = seconds_since(t0);
    write_json(manifest_path(o.out), m.to_json());
  }
  return 0;
}

// ------------------------------------------------------------------- audit

struct AuditOpts {
  std::string merges;
  std::vector<std::string> corpus;
  std::vector<std::size_t> contexts{32, 16, 8};
  std::vector<std::size_t> topk{1, 10, 100, 1000};
  std::string out, csv, svg;
};

anatomy::corpus::CorpusAudit compute_audit(const AuditOpts& o, const anatomy::bpe::MergeTable& table) {
  std::size_t skipped = 0;
  auto records = load_records(o.corpus, skipped);
  auto a = anatomy::corpus::sweep(records, table, o.contexts, o.topk);
  a.n_skipped = skipped;
  return a;
}

int run_audit(const AuditOpts& o) {
  const auto t0 = Clock::now();
  auto table = anatomy::bpe::load_merges(fs::path(o.merges));
  auto a = compute_audit(o, table);

  Json j = payload("audit");
  merge_into(j, anatomy::report::to_json(a));
  write_json(o.out, j);
  anatomy::report::RunManifest m;
  m.outputs = {o.out};
  if (!o.csv.empty()) {
    ensure_parent(o.csv);
    anatomy::report::write_text(o.csv, anatomy::report::audit_csv(a));
    m.outputs.push_back(o.csv);
  }
  if (!o.svg.empty()) {
    ensure_parent(o.svg);
    anatomy::report::write_text(o.svg, anatomy::report::svg_histogram(a.vocab.histogram));
    m.outputs.push_back(o.svg);
  }
  m.subcommand = "audit";
  m.config = Json{{"merges", o.merges}, {"corpus", o.corpus}, {"contexts", o.contexts}, {"topk", o.topk}};
  m.inputs.emplace_back(o.merges);
  for (const auto& c : o.corpus) m.inputs.emplace_back(c);
  m.duration_seconds = seconds_since(t0);
  write_json(manifest_path(o.out), m.to_json());
  return 0;
}

// --------------------------------------------------------------------- svd

struct SvdOpts {
  std::string matrix;
  bool center = false;
  std::string path = "auto";
  std::string out;
};

anatomy::spectral::SvdPath parse_path(const std::string& s) {
  if (s == "auto") return anatomy::spectral::SvdPath::kAuto;
  if (s == "direct") return anatomy::spectral::SvdPath::kDirect;
  if (s == "gram") return anatomy::spectral::SvdPath::kGram;
  throw anatomy::InvalidArgument("--path must be auto, direct or gram");
}

int run_svd(const SvdOpts& o) {
  const auto t0 = Clock::now();
  auto m = anatomy::read_ltxt(fs::path(o.matrix));
  auto r = anatomy::spectral::singular_values(m, o.center, parse_path(o.path));
  Json j = payload("spectrum");
  merge_into(j, anatomy::report::to_json(r));
  write_json(o.out, j);

  anatomy::report::RunManifest man;
  man.subcommand = "svd";
  man.config = Json{{"matrix", o.matrix}, {"center", o.center}, {"path", o.path}};
  man.inputs = {o.matrix};
  man.outputs = {o.out};
  man.metrics = Json{{"effective_rank", r.effective_rank}, {"numeric_rank", r.numeric_rank}};
  man.duration_seconds = seconds_since(t0);
  write_json(manifest_path(o.out), man.to_json());
  return 0;
}

// ------------------------------------------------------------------ possim

struct PossimOpts {
  std::string matrix;
  std::size_t split = 8;
  std::string out, svg;
};

int run_possim(const PossimOpts& o) {
  const auto t0 = Clock::now();
  auto m = anatomy::read_ltxt(fs::path(o.matrix));
  auto r = anatomy::spectral::positional_similarity(m, o.split);
  Json j = payload("positional_similarity");
  merge_into(j, anatomy::report::to_json(r));
  write_json(o.out, j);

  anatomy::report::RunManifest man;
  man.outputs = {o.out};
  if (!o.svg.empty()) {
    ensure_parent(o.svg);
    anatomy::report::write_text(o.svg, anatomy::report::svg_heatmap(r.matrix, r.rows));
    man.outputs.push_back(o.svg);
  }
  man.subcommand = "possim";
  man.config = Json{{"matrix", o.matrix}, {"split", o.split}};
  man.inputs = {o.matrix};
  man.duration_seconds = seconds_since(t0);
  write_json(manifest_path(o.out), man.to_json());
  return 0;
}

// ---------------------------------------------------------------------- id

struct IdOpts {
  std::string matrix;
  std::string method = "both";
  double discard = anatomy::idim::kDefaultDiscard;
  std::vector<std::size_t> ks{5, 10, 20, 50};
  std::size_t sample = 5000;
  std::uint64_t seed = 0;
  std::string fit = "lsq";
  std::string out;
};

Json estimate_id(const anatomy::EmbeddingMatrix& m, const IdOpts& o) {
  if (o.method != "twonn" && o.method != "mle" && o.method != "both") {
    throw anatomy::InvalidArgument("--method must be twonn, mle or both");
  }
  if (o.fit != "lsq" && o.fit != "closed") throw anatomy::InvalidArgument("--fit must be lsq or closed");
  if (o.sample == 0) throw anatomy::InvalidArgument("--sample must be positive");
  auto cloud = anatomy::idim::sample_points(m, o.sample, o.seed);
  Json j = Json::object();
  j["n_input"] = m.rows;
  j["n_sampled"] = cloud.rows;
  if (o.method != "mle") {
    auto fit = o.fit == "lsq" ? anatomy::idim::TwoNnFit::kLeastSquares : anatomy::idim::TwoNnFit::kClosedForm;
    j["twonn"] = anatomy::report::to_json(anatomy::idim::twonn(cloud, o.discard, fit));
  }
  if (o.method != "twonn") j["mle"] = anatomy::report::to_json(anatomy::idim::mle_id(cloud, o.ks));
  return j;
}

int run_id(const IdOpts& o) {
  const auto t0 = Clock::now();
  auto m = anatomy::read_ltxt(fs::path(o.matrix));
  Json j = payload("intrinsic_dimension");
  merge_into(j, estimate_id(m, o));
  write_json(o.out, j);

  anatomy::report::RunManifest man;
  man.subcommand = "id";
  man.config = Json{{"matrix", o.matrix}, {"method", o.method}, {"discard", o.discard}, {"ks", o.ks},
                    {"sample", o.sample}, {"fit", o.fit}};
  man.inputs = {o.matrix};
  man.outputs = {o.out};
  man.seeds["sample"] = o.seed;
  man.duration_seconds = seconds_since(t0);
  write_json(manifest_path(o.out), man.to_json());
  return 0;
}

// ------------------------------------------------------------------- probe

struct ProbeOpts {
  std::size_t d = 256;
  std::size_t keys = 64;
  double eps = 0.1;
  std::vector<double> sharpness{0.1, 1.0, 10.0};
  std::size_t seeds = 100;
  std::uint64_t seed = 0;
  std::string out, csv;
};

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run_probe(const ProbeOpts& o) {
  const auto t0 = Clock::now();
  if (o.seeds == 0) throw anatomy::InvalidArgument("--seeds must be positive");
  std::vector<std::vector<anatomy::probe::ProbeReport>> by_scale(o.sharpness.size());
  std::ostringstream csv;
  csv << "seed,sharpness,input_err,logit_err,logit_err_inf,output_err,reduction_factor,argmax_flipped,"
         "teacher_max_weight,logit_gap\n";
  for (std::size_t s = 0; s < o.seeds; ++s) {
    auto inst = anatomy::probe::random_instance(o.d, o.keys, anatomy::mix_seed(o.seed, s));
    anatomy::probe::ProbeConfig cfg{o.d, o.keys, o.eps, 1.0, anatomy::mix_seed(o.seed, s, 1)};
    auto reports = anatomy::probe::sharpness_sweep(cfg, inst.query, inst.keys, inst.values, o.sharpness);
    for (std::size_t k = 0; k < reports.size(); ++k) {
      const auto& r = reports[k];
      char line[512];
      std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%.17g,%.17g\n", s,
                    r.sharpness, r.input_err, r.logit_err, r.logit_err_inf, r.output_err,
                    r.reduction_defined ? r.reduction_factor : std::nan(""), r.argmax_flipped ? 1 : 0,
                    r.teacher_max_weight, r.logit_gap);
      csv << line;
      by_scale[k].push_back(r);
    }
  }

  Json scales = Json::array();
  for (std::size_t k = 0; k < by_scale.size(); ++k) {
    std::vector<double> factors, inputs, outputs, weights;
    std::size_t flips = 0;
    for (const auto& r : by_scale[k]) {
      if (r.reduction_defined) factors.push_back(r.reduction_factor);
      inputs.push_back(r.input_err);
      outputs.push_back(r.output_err);
      weights.push_back(r.teacher_max_weight);
      flips += r.argmax_flipped ? 1 : 0;
    }
    auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    scales.push_back(Json{{"sharpness", o.sharpness[k]},
                          {"median_reduction_factor", median(factors)},
                          {"n_defined", factors.size()},
                          {"mean_input_err", mean(inputs)},
                          {"mean_output_err", mean(outputs)},
                          {"median_teacher_max_weight", median(weights)},
                          {"argmax_flip_rate", static_cast<double>(flips) / static_cast<double>(o.seeds)}});
  }
  Json j = payload("probe");
  j["config"] = Json{{"d", o.d}, {"keys", o.keys}, {"eps", o.eps}, {"seeds", o.seeds}, {"seed", o.seed}};
  j["scales"] = scales;
  write_json(o.out, j);

  anatomy::report::RunManifest man;
  man.outputs = {o.out};
  if (!o.csv.empty()) {
    ensure_parent(o.csv);
    anatomy::report::write_text(o.csv, csv.str());
    man.outputs.push_back(o.csv);
  }
  man.subcommand = "probe";
  man.config = j["config"];
  man.config["sharpness"] = o.sharpness;
  man.seeds["base"] = o.seed;
  man.duration_seconds = seconds_since(t0);
  write_json(manifest_path(o.out), man.to_json());
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportOpts {
  AuditOpts audit;
  std::string matrix, positional;
  bool center = true;
  std::size_t split = 8;
  std::size_t sample = 5000;
  std::uint64_t seed = 0;
};

int run_report(const ReportOpts& o) {
  const auto t0 = Clock::now();
  auto table = anatomy::bpe::load_merges(fs::path(o.audit.merges));
  auto a = compute_audit(o.audit, table);
  auto emb = anatomy::read_ltxt(fs::path(o.matrix));
  auto sv = anatomy::spectral::singular_values(emb, o.center);
  IdOpts ido;
  ido.sample = o.sample;
  ido.seed = o.seed;
  auto id = estimate_id(emb, ido);

  Json j = payload("summary");
  Json ctx = Json::array();
  for (const auto& r : a.contexts) {
    ctx.push_back(Json{{"context", r.context}, {"info_density", r.info_density},
                       {"truncation_rate", r.truncation_rate}, {"token_loss", r.token_loss}});
  }
  Json summary{{"n_prompts", a.contexts.front().n_prompts},
               {"mean_length", a.vocab.mean_length},
               {"vocab_coverage", a.vocab.coverage},
               {"context_utilization", ctx},
               {"effective_rank", sv.effective_rank},
               {"embedding_width", sv.cols},
               {"twonn", id["twonn"]["value"]},
               {"mle", id["mle"]["value"]}};
  std::optional<anatomy::spectral::SimilarityReport> sim;
  if (!o.positional.empty()) {
    sim = anatomy::spectral::positional_similarity(anatomy::read_ltxt(fs::path(o.positional)), o.split);
    summary["positional_ratio"] = sim->ratio_defined ? Json(sim->ratio) : Json(nullptr);
  }
  j["summary"] = summary;
  j["audit"] = anatomy::report::to_json(a);
  j["spectrum"] = anatomy::report::to_json(sv);
  if (sim) j["positional_similarity"] = anatomy::report::to_json(*sim);
  j["intrinsic_dimension"] = id;
  write_json(o.audit.out, j);

  anatomy::report::RunManifest man;
  man.subcommand = "report";
  man.config = Json{{"merges", o.audit.merges}, {"corpus", o.audit.corpus}, {"contexts", o.audit.contexts},
                    {"matrix", o.matrix}, {"positional", o.positional}, {"center", o.center},
                    {"split", o.split}, {"sample", o.sample}};
  man.inputs.emplace_back(o.audit.merges);
  for (const auto& c : o.audit.corpus) man.inputs.emplace_back(c);
  man.inputs.emplace_back(o.matrix);
  if (!o.positional.empty()) man.inputs.emplace_back(o.positional);
  man.outputs = {o.audit.out};
  man.seeds["sample"] = o.seed;
  man.duration_seconds = seconds_since(t0);
  write_json(manifest_path(o.audit.out), man.to_json());
  return 0;
}

// ----------------------------------------------------------------- distill

struct DistillOpts {
  std::string corpus, merges, out;
  std::size_t synthetic = 0;
  std::uint64_t synthetic_seed = 0;
  double holdout = 0.25;
  std::size_t context = 16, layers = 2, width = 32, heads = 2, out_dim = 16;
  anatomy::distill::TeacherConfig teacher;
  anatomy::distill::LossWeights weights;
  anatomy::distill::TrainConfig train;
  std::string schedule = "cosine";
  int precision = 32;
};

template <typename T>
int distill_run(const DistillOpts& o, Clock::time_point t0) {
  namespace ds = anatomy::distill;
  auto table = anatomy::bpe::load_merges(fs::path(o.merges));
  std::vector<std::string> texts;
  if (o.synthetic > 0) {
    texts = ds::synthetic_prompts(o.synthetic, o.synthetic_seed);
  } else {
    std::size_t skipped = 0;
    for (auto& r : anatomy::corpus::dedup(load_records({o.corpus}, skipped))) {
      if (!r.text.empty()) texts.push_back(std::move(r.text));
    }
  }
  if (!(o.holdout >= 0.0 && o.holdout < 1.0)) throw anatomy::InvalidArgument("--holdout must lie in [0, 1)");
  ds::PromptSet prompts(table, texts);
  const auto n_hold = static_cast<std::size_t>(static_cast<double>(prompts.size()) * o.holdout);
  if (n_hold >= prompts.size()) throw anatomy::ValidationError("holdout leaves no training prompts");
  std::vector<std::size_t> train_idx(prompts.size() - n_hold), hold_idx(n_hold);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(hold_idx.begin(), hold_idx.end(), train_idx.size());

  auto teacher_cfg = o.teacher;
  teacher_cfg.out_dim = o.out_dim;
  const auto teacher = ds::make_teacher(teacher_cfg, prompts.vocab());
  const auto targets = ds::teacher_embeddings(teacher, prompts);

  ds::TinyEncoderConfig student{o.layers, o.width, o.heads, o.context, prompts.vocab(), o.out_dim, 2};
  auto cfg = o.train;
  cfg.cosine_schedule = o.schedule == "cosine";
  auto result = ds::train<T>(student, o.weights, targets, prompts, train_idx, cfg);

  const fs::path dir(o.out);
  ds::save_parameters(result.params, dir / "params");
  std::ostringstream curve;
  curve << "step,mse,cos,consist,total\n";
  char line[160];
  for (std::size_t s = 0; s < result.curve.size(); ++s) {
    const auto& c = result.curve[s];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", s, c.mse, c.cos, c.consist, c.total);
    curve << line;
  }
  anatomy::report::write_text(dir / "curve.csv", curve.str());

  Json metrics{{"train_cosine", ds::mean_cosine(result.params, prompts, targets, train_idx)}};
  if (!hold_idx.empty()) {
    metrics["heldout_cosine"] = ds::mean_cosine(result.params, prompts, targets, hold_idx);
    bool multiword = false;
    for (auto i : hold_idx) multiword = multiword || prompts[i].words.size() > 1;
    if (multiword) {
      metrics["heldout_permutation_gap"] = ds::permutation_gap(result.params, prompts, hold_idx, cfg.seed);
      metrics["teacher_permutation_gap"] = ds::permutation_gap(teacher, prompts, hold_idx, cfg.seed);
    }
  }
  if (!result.curve.empty()) {
    const auto& last = result.curve.back();
    metrics["final_loss"] = Json{{"mse", last.mse}, {"cos", last.cos}, {"consist", last.consist}, {"total", last.total}};
  }

  Json config{{"corpus", o.corpus},
              {"synthetic", o.synthetic},
              {"synthetic_seed", o.synthetic_seed},
              {"merges", o.merges},
              {"n_prompts", prompts.size()},
              {"n_train", train_idx.size()},
              {"n_heldout", hold_idx.size()},
              {"compact_vocab", prompts.vocab()},
              {"student", Json{{"layers", o.layers}, {"width", o.width}, {"heads", o.heads},
                               {"context", o.context}, {"out_dim", o.out_dim}}},
              {"teacher", Json{{"layers", teacher_cfg.n_layers}, {"width", teacher_cfg.width},
                               {"heads", teacher_cfg.n_heads}, {"context", teacher_cfg.context},
                               {"init_std", teacher_cfg.init_std}, {"seed", teacher_cfg.seed}}},
              {"lambda_cos", o.weights.cos},
              {"lambda_consist", o.weights.consist},
              {"steps", cfg.steps},
              {"lr", cfg.lr},
              {"schedule", o.schedule},
              {"batch", cfg.batch_size},
              {"weight_decay", cfg.weight_decay},
              {"seed", cfg.seed},
              {"precision", o.precision}};
  Json rep = payload("distill");
  rep["config"] = config;
  rep["metrics"] = metrics;
  write_json(dir / "report.json", rep);

  anatomy::report::RunManifest man;
  man.subcommand = "distill";
  man.config = config;
  man.inputs.emplace_back(o.merges);
  if (!o.corpus.empty()) man.inputs.emplace_back(o.corpus);
  man.outputs = {"params/", "curve.csv", "report.json"};
  man.seeds = {{"train", cfg.seed}, {"teacher", teacher_cfg.seed}, {"synthetic", o.synthetic_seed}};
  man.metrics = metrics;
  man.duration_seconds = seconds_since(t0);
  write_json(dir / "manifest.json", man.to_json());
  return 0;
}

int run_distill(const DistillOpts& o) {
  const auto t0 = Clock::now();
  if (o.corpus.empty() == (o.synthetic == 0)) {
    throw anatomy::InvalidArgument("distill needs exactly one of --corpus or --synthetic");
  }
  if (o.schedule != "cosine" && o.schedule != "constant") {
    throw anatomy::InvalidArgument("--schedule must be cosine or constant");
  }
  if (o.precision == 64) return distill_run<double>(o, t0);
  if (o.precision == 32) return distill_run<float>(o, t0);
  throw anatomy::InvalidArgument("--precision must be 32 or 64");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anatomy of a prompt text encoder: tokenizer, corpus, spectral, intrinsic-dimension,\n"
               "distillation and attention-probe tools."};
  app.set_version_flag("--version", anatomy::report::tool_version());
  app.require_subcommand(0, 1);

  TokenizeOpts tok;
  auto* c_tok = app.add_subcommand("tokenize", "Tokenize prompts into fixed-length id sequences");
  c_tok->add_option("--merges", tok.merges, "BPE merges file")->required();
  c_tok->add_option("--context", tok.context, "Context length L");
  c_tok->add_option("--text", tok.texts, "Prompt text (repeatable)");
  c_tok->add_option("--corpus", tok.corpus, "Corpus file (JSONL or one prompt per line)");
  c_tok->add_option("--out", tok.out, "JSONL output (default: stdout)");

  AuditOpts aud;
  auto* c_aud = app.add_subcommand("audit", "Context utilization and vocabulary coverage");
  c_aud->add_option("--merges", aud.merges, "BPE merges file")->required();
  c_aud->add_option("--corpus", aud.corpus, "Corpus files")->required()->expected(1, -1);
  c_aud->add_option("--context", aud.contexts, "Context lengths")->delimiter(',');
  c_aud->add_option("--topk", aud.topk, "Top-k share cut-offs")->delimiter(',');
  c_aud->add_option("--out", aud.out, "JSON report")->required();
  c_aud->add_option("--csv", aud.csv, "CSV table of per-context metrics");
  c_aud->add_option("--svg", aud.svg, "Token-length histogram");

  SvdOpts svd;
  auto* c_svd = app.add_subcommand("svd", "Singular spectrum and effective rank of an LTXT matrix");
  c_svd->add_option("--matrix", svd.matrix, "LTXT matrix")->required();
  c_svd->add_flag("--center", svd.center, "Subtract column means first");
  c_svd->add_option("--path", svd.path, "auto, direct or gram");
  c_svd->add_option("--out", svd.out, "JSON report")->required();

  PossimOpts pos;
  auto* c_pos = app.add_subcommand("possim", "Positional-embedding cosine similarity");
  c_pos->add_option("--matrix", pos.matrix, "LTXT positional table")->required();
  c_pos->add_option("--split", pos.split, "First row of the late group");
  c_pos->add_option("--out", pos.out, "JSON report")->required();
  c_pos->add_option("--svg", pos.svg, "Heatmap");

  IdOpts ido;
  auto* c_id = app.add_subcommand("id", "Intrinsic dimension (TwoNN, MLE)");
  c_id->add_option("--matrix", ido.matrix, "LTXT point cloud, one point per row")->required();
  c_id->add_option("--method", ido.method, "twonn, mle or both");
  c_id->add_option("--discard", ido.discard, "TwoNN discard fraction");
  c_id->add_option("--ks", ido.ks, "MLE neighbor counts")->delimiter(',');
  c_id->add_option("--sample", ido.sample, "Maximum number of points");
  c_id->add_option("--seed", ido.seed, "Sampling seed");
  c_id->add_option("--fit", ido.fit, "TwoNN fit: lsq or closed");
  c_id->add_option("--out", ido.out, "JSON report")->required();

  DistillOpts dis;
  auto* c_dis = app.add_subcommand("distill", "Train a tiny student encoder against a frozen teacher");
  c_dis->add_option("--corpus", dis.corpus, "Training prompts");
  c_dis->add_option("--synthetic", dis.synthetic, "Use N generated prompts instead of a corpus");
  c_dis->add_option("--synthetic-seed", dis.synthetic_seed, "Seed of the prompt generator");
  c_dis->add_option("--merges", dis.merges, "BPE merges file")->required();
  c_dis->add_option("--holdout", dis.holdout, "Fraction of prompts held out (taken from the end)");
  c_dis->add_option("--context", dis.context, "Student context length");
  c_dis->add_option("--student-layers", dis.layers);
  c_dis->add_option("--student-width", dis.width);
  c_dis->add_option("--student-heads", dis.heads);
  c_dis->add_option("--out-dim", dis.out_dim, "Shared embedding dimension");
  c_dis->add_option("--teacher-seed", dis.teacher.seed);
  c_dis->add_option("--teacher-layers", dis.teacher.n_layers);
  c_dis->add_option("--teacher-width", dis.teacher.width);
  c_dis->add_option("--teacher-heads", dis.teacher.n_heads);
  c_dis->add_option("--teacher-context", dis.teacher.context);
  c_dis->add_option("--teacher-init-std", dis.teacher.init_std);
  c_dis->add_option("--lambda-cos", dis.weights.cos);
  c_dis->add_option("--lambda-consist", dis.weights.consist);
  c_dis->add_option("--steps", dis.train.steps);
  c_dis->add_option("--lr", dis.train.lr);
  c_dis->add_option("--batch", dis.train.batch_size);
  c_dis->add_option("--weight-decay", dis.train.weight_decay);
  c_dis->add_option("--warmup", dis.train.warmup_steps);
  c_dis->add_option("--schedule", dis.schedule, "cosine or constant");
  c_dis->add_option("--seed", dis.train.seed);
  c_dis->add_option("--precision", dis.precision, "32 or 64 (bit-reproducible)");
  c_dis->add_option("--out", dis.out, "Run directory")->required();

  ProbeOpts prb;
  auto* c_prb = app.add_subcommand("probe", "Softmax attention error-attenuation probe");
  c_prb->add_option("--d", prb.d, "Query dimension");
  c_prb->add_option("--keys", prb.keys, "Number of keys");
  c_prb->add_option("--eps", prb.eps, "Noise standard deviation");
  c_prb->add_option("--sharpness", prb.sharpness, "Logit scales")->delimiter(',');
  c_prb->add_option("--seeds", prb.seeds, "Number of random instances");
  c_prb->add_option("--seed", prb.seed, "Base seed");
  c_prb->add_option("--out", prb.out, "JSON report")->required();
  c_prb->add_option("--csv", prb.csv, "Per-instance CSV");

  ReportOpts rep;
  auto* c_rep = app.add_subcommand("report", "Bundle audit, spectrum, positional similarity and ID");
  c_rep->add_option("--merges", rep.audit.merges, "BPE merges file")->required();
  c_rep->add_option("--corpus", rep.audit.corpus, "Corpus files")->required()->expected(1, -1);
  c_rep->add_option("--context", rep.audit.contexts, "Context lengths")->delimiter(',');
  c_rep->add_option("--matrix", rep.matrix, "LTXT token embedding table")->required();
  c_rep->add_option("--positional", rep.positional, "LTXT positional table");
  c_rep->add_option("--split", rep.split, "First row of the late positional group");
  c_rep->add_option("--center", rep.center, "Center before the SVD (default true)");
  c_rep->add_option("--sample", rep.sample, "Maximum points for intrinsic dimension");
  c_rep->add_option("--seed", rep.seed, "Sampling seed");
  c_rep->add_option("--out", rep.audit.out, "JSON summary")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*c_tok) return run_tokenize(tok);
    if (*c_aud) return run_audit(aud);
    if (*c_svd) return run_svd(svd);
    if (*c_pos) return run_possim(pos);
    if (*c_id) return run_id(ido);
    if (*c_dis) return run_distill(dis);
    if (*c_prb) return run_probe(prb);
    if (*c_rep) return run_report(rep);
  } catch (const anatomy::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const anatomy::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
