#include "anatomy/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "anatomy/error.hpp"
#include "anatomy/matrix.hpp"
#include "anatomy/rng.hpp"

namespace anatomy::distill {

using autodiff::Tape;
using autodiff::Var;

void TinyEncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("encoder config: " + msg); };
  if (n_layers < 1 || n_layers > 4) fail("n_layers must be in 1..4, got " + std::to_string(n_layers));
  if (width == 0 || n_heads == 0) fail("width and n_heads must be positive");
  if (width % n_heads != 0) {
    fail("width " + std::to_string(width) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (context < 3) fail("context must be at least 3, got " + std::to_string(context));
  if (vocab < 3) fail("vocab must hold pad and both markers, got " + std::to_string(vocab));
  if (out_dim < 1) fail("out_dim must be at least 1");
  if (ffn_mult < 1) fail("ffn_mult must be at least 1");
}

template <typename T>
EncoderParameters<T> init_parameters(const TinyEncoderConfig& config, std::uint64_t seed,
                                     double init_std) {
  config.validate();
  if (!(init_std > 0.0) || !std::isfinite(init_std)) throw InvalidArgument("init_std must be positive");
  Rng rng(seed);
  EncoderParameters<T> p;
  p.config = config;
  auto normal = [&](std::string name, std::size_t r, std::size_t c) {
    Tensor<T> t{std::move(name), r, c, std::vector<T>(r * c)};
    for (auto& v : t.data) v = static_cast<T>(init_std * rng.normal());
    p.tensors.push_back(std::move(t));
  };
  auto filled = [&](std::string name, std::size_t c, T value) {
    p.tensors.push_back({std::move(name), 1, c, std::vector<T>(c, value)});
  };

  const std::size_t w = config.width, ffn = config.width * config.ffn_mult;
  normal("token_embedding", config.vocab, w);
  normal("positional_embedding", config.context, w);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    filled(pre + "ln1.gamma", w, T(1));
    filled(pre + "ln1.beta", w, T(0));
    normal(pre + "attn.qkv.weight", w, 3 * w);
    filled(pre + "attn.qkv.bias", 3 * w, T(0));
    normal(pre + "attn.out.weight", w, w);
    filled(pre + "attn.out.bias", w, T(0));
    filled(pre + "ln2.gamma", w, T(1));
    filled(pre + "ln2.beta", w, T(0));
    normal(pre + "mlp.fc1.weight", w, ffn);
    filled(pre + "mlp.fc1.bias", ffn, T(0));
    normal(pre + "mlp.fc2.weight", ffn, w);
    filled(pre + "mlp.fc2.bias", w, T(0));
  }
  filled("ln_final.gamma", w, T(1));
  filled("ln_final.beta", w, T(0));
  normal("projection", w, config.out_dim);
  return p;
}

void check_sequence(const TinyEncoderConfig& config, const TokenSequence& seq) {
  if (seq.ids.size() != config.context) {
    throw ValidationError("sequence length " + std::to_string(seq.ids.size()) +
                          " does not match context " + std::to_string(config.context));
  }
  if (seq.content_len < 2 || seq.content_len > config.context) {
    throw ValidationError("content length " + std::to_string(seq.content_len) + " outside [2, " +
                          std::to_string(config.context) + "]");
  }
  for (std::size_t i = 0; i < seq.content_len; ++i) {
    if (seq.ids[i] < 0 || static_cast<std::size_t>(seq.ids[i]) >= config.vocab) {
      throw ValidationError("token id " + std::to_string(seq.ids[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of " +
                            std::to_string(config.vocab));
    }
  }
}

template <typename T>
std::vector<Var> bind(Tape<T>& tape, const EncoderParameters<T>& params, bool requires_grad) {
  if (params.tensors.size() != params.config.tensor_count()) {
    throw ValidationError("parameter set has " + std::to_string(params.tensors.size()) +
                          " tensors, config needs " + std::to_string(params.config.tensor_count()));
  }
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(tape.leaf(t, requires_grad));
  return vars;
}

template <typename T>
Var encode(Tape<T>& tape, std::span<const Var> p, const TinyEncoderConfig& c,
           const TokenSequence& seq) {
  check_sequence(c, seq);
  if (p.size() != c.tensor_count()) throw ValidationError("encode: wrong number of parameter tensors");
  const std::size_t n = seq.content_len, w = c.width, hd = c.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));

  // Attention sees the content rows only; pad rows never enter the computation.
  Var x = tape.add(tape.gather(p[0], std::span<const TokenId>(seq.ids.data(), n)),
                   tape.slice_rows(p[1], 0, n));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::size_t b = 2 + l * TinyEncoderConfig::kPerLayer;
    Var h = tape.layer_norm(x, p[b + 0], p[b + 1]);
    Var qkv = tape.add_row(tape.matmul(h, p[b + 2]), p[b + 3]);
    std::vector<Var> heads;
    for (std::size_t k = 0; k < c.n_heads; ++k) {
      Var q = tape.slice_cols(qkv, k * hd, (k + 1) * hd);
      Var kk = tape.slice_cols(qkv, w + k * hd, w + (k + 1) * hd);
      Var v = tape.slice_cols(qkv, 2 * w + k * hd, 2 * w + (k + 1) * hd);
      Var a = tape.softmax_rows(tape.scale(tape.matmul_bt(q, kk), inv_sqrt));
      heads.push_back(tape.matmul(a, v));
    }
    Var attn = c.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
    x = tape.add(x, tape.add_row(tape.matmul(attn, p[b + 4]), p[b + 5]));

    h = tape.layer_norm(x, p[b + 6], p[b + 7]);
    Var f = tape.gelu(tape.add_row(tape.matmul(h, p[b + 8]), p[b + 9]));
    x = tape.add(x, tape.add_row(tape.matmul(f, p[b + 10]), p[b + 11]));
  }
  const std::size_t fin = 2 + c.n_layers * TinyEncoderConfig::kPerLayer;
  Var pooled = tape.slice_rows(tape.layer_norm(x, p[fin], p[fin + 1]), n - 1, n);
  return tape.matmul(pooled, p[fin + 2]);
}

template <typename T>
std::vector<T> forward(const EncoderParameters<T>& params, const TokenSequence& seq) {
  Tape<T> tape;
  auto vars = bind(tape, params, false);
  Var out = encode(tape, std::span<const Var>(vars), params.config, seq);
  auto v = tape.value(out);
  return {v.begin(), v.end()};
}

namespace {

void check_dims(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(what) + ": dimension mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw ValidationError(std::string(what) + ": empty vectors");
}

template <typename T>
double squared_distance(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

template <typename T>
double cosine(std::span<const T> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw ValidationError("cosine of a zero vector is undefined");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

bool same_content(const TokenSequence& a, const TokenSequence& b) {
  return a.content_len == b.content_len &&
         std::equal(a.ids.begin(), a.ids.begin() + static_cast<std::ptrdiff_t>(a.content_len),
                    b.ids.begin());
}

}  // namespace

double loss_mse(std::span<const double> student, std::span<const double> teacher) {
  check_dims(student, teacher, "loss_mse");
  return squared_distance(student, teacher);
}

double loss_cos(std::span<const double> student, std::span<const double> teacher) {
  check_dims(student, teacher, "loss_cos");
  const double c = cosine(student, teacher);
  return std::clamp(1.0 - c, 0.0, 2.0);
}

void LossWeights::validate() const {
  if (!(cos >= 0.0) || !(consist >= 0.0) || !std::isfinite(cos) || !std::isfinite(consist)) {
    throw InvalidArgument("loss weights must be finite and nonnegative");
  }
}

LossBreakdown total_loss(double mse, double cos, double consist, const LossWeights& weights) {
  weights.validate();
  return {mse, cos, consist, mse + weights.cos * cos + weights.consist * consist};
}

template <typename T>
double loss_consistency(const EncoderParameters<T>& params, const TokenSequence& original,
                        const TokenSequence& permuted) {
  const auto a = forward(params, original);
  const auto b = forward(params, permuted);
  return squared_distance(std::span<const T>(a), std::span<const T>(b));
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::string word_permute(std::string_view text, std::uint64_t seed) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(std::move(w));
  if (words.size() < 2) return std::string(text);
  std::string out;
  for (auto i : permutation(words.size(), seed)) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

namespace {

template <typename T>
struct BatchGraph {
  Var total;
  LossBreakdown loss;
};

// Records the batch objective on `tape`. Consistency is skipped on the tape
// when its weight is zero, but still measured without gradients.
template <typename T>
BatchGraph<T> record_batch(Tape<T>& tape, std::span<const Var> vars, const EncoderParameters<T>& params,
                           std::span<const Example> batch, const LossWeights& weights) {
  weights.validate();
  if (batch.empty()) throw ValidationError("empty batch");
  const auto& c = params.config;
  double mse_sum = 0.0, cos_sum = 0.0, consist_sum = 0.0;
  Var acc{};
  bool have_acc = false;
  for (const auto& ex : batch) {
    if (ex.teacher.size() != c.out_dim) {
      throw ValidationError("teacher embedding has " + std::to_string(ex.teacher.size()) +
                            " dims, student emits " + std::to_string(c.out_dim));
    }
    Var vs = encode(tape, vars, c, ex.original);
    Var vt = tape.constant(1, c.out_dim, std::vector<T>(ex.teacher.begin(), ex.teacher.end()));
    Var d = tape.sub(vs, vt);
    Var mse = tape.dot(d, d);
    Var cosv = tape.affine(
        tape.div(tape.dot(vs, vt), tape.mul(tape.l2_norm(vs), tape.l2_norm(vt))), T(-1), T(1));
    Var term = tape.add(mse, tape.scale(cosv, static_cast<T>(weights.cos)));
    mse_sum += tape.scalar(mse);
    cos_sum += tape.scalar(cosv);

    if (!same_content(ex.original, ex.permuted)) {
      if (weights.consist > 0.0) {
        Var vp = encode(tape, vars, c, ex.permuted);
        Var e = tape.sub(vs, vp);
        Var consist = tape.dot(e, e);
        consist_sum += tape.scalar(consist);
        term = tape.add(term, tape.scale(consist, static_cast<T>(weights.consist)));
      } else {
        const auto vp = forward(params, ex.permuted);
        consist_sum += squared_distance(tape.value(vs), std::span<const T>(vp));
      }
    }
    acc = have_acc ? tape.add(acc, term) : term;
    have_acc = true;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchGraph<T> g;
  g.total = tape.scale(acc, static_cast<T>(inv));
  g.loss = total_loss(mse_sum * inv, cos_sum * inv, consist_sum * inv, weights);
  return g;
}

}  // namespace

template <typename T>
GradientResult<T> grad(const EncoderParameters<T>& params, std::span<const Example> batch,
                       const LossWeights& weights) {
  Tape<T> tape;
  auto vars = bind(tape, params, true);
  auto g = record_batch(tape, std::span<const Var>(vars), params, batch, weights);
  tape.backward(g.total);
  GradientResult<T> out;
  out.loss = g.loss;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const auto& t = params.tensors[i];
    auto gr = tape.grad(vars[i]);
    out.grads.push_back({t.name, t.rows, t.cols, std::vector<T>(gr.begin(), gr.end())});
  }
  return out;
}

template <typename T>
LossBreakdown evaluate(const EncoderParameters<T>& params, std::span<const Example> batch,
                       const LossWeights& weights) {
  Tape<T> tape;
  auto vars = bind(tape, params, false);
  return record_batch(tape, std::span<const Var>(vars), params, batch, weights).loss;
}

PromptSet::PromptSet(const bpe::MergeTable& table, std::span<const std::string> texts) {
  to_global_ = {bpe::kPadId, table.sot(), table.eot()};
  to_compact_ = {{bpe::kPadId, 0}, {table.sot(), kSot}, {table.eot(), kEot}};
  for (const auto& raw : texts) {
    Prompt p;
    p.text = bpe::normalize_text(raw);
    std::istringstream in(p.text);
    for (std::string word; in >> word;) {
      const auto stream = bpe::encode_stream(table, word);
      std::vector<TokenId> ids;
      for (std::size_t i = 1; i + 1 < stream.size(); ++i) {
        auto [it, fresh] = to_compact_.try_emplace(stream[i], static_cast<TokenId>(to_global_.size()));
        if (fresh) to_global_.push_back(stream[i]);
        ids.push_back(it->second);
      }
      if (!ids.empty()) p.words.push_back(std::move(ids));
    }
    prompts_.push_back(std::move(p));
  }
  if (prompts_.empty()) throw ValidationError("prompt set is empty");
}

TokenSequence PromptSet::sequence(std::size_t i, std::size_t context,
                                  std::span<const std::size_t> order) const {
  if (context < 3) throw InvalidArgument("context must be at least 3");
  const auto& p = prompts_.at(i);
  if (!order.empty() && order.size() != p.words.size()) {
    throw ValidationError("word order has " + std::to_string(order.size()) + " entries for " +
                          std::to_string(p.words.size()) + " words");
  }
  std::vector<TokenId> stream{kSot};
  for (std::size_t k = 0; k < p.words.size(); ++k) {
    const auto& w = p.words[order.empty() ? k : order[k]];
    stream.insert(stream.end(), w.begin(), w.end());
  }
  stream.push_back(kEot);

  TokenSequence seq;
  seq.ids.assign(context, bpe::kPadId);
  if (stream.size() > context) {
    seq.truncated = true;
    seq.dropped_tokens = stream.size() - context;
    std::copy_n(stream.begin(), context - 1, seq.ids.begin());
    seq.ids[context - 1] = kEot;
    seq.content_len = context;
  } else {
    std::copy(stream.begin(), stream.end(), seq.ids.begin());
    seq.content_len = stream.size();
  }
  return seq;
}

template <typename T>
TeacherTable teacher_embeddings(const EncoderParameters<T>& teacher, const PromptSet& prompts) {
  if (teacher.config.vocab < prompts.vocab()) {
    throw ValidationError("teacher vocabulary " + std::to_string(teacher.config.vocab) +
                          " is smaller than the prompt vocabulary " + std::to_string(prompts.vocab()));
  }
  TeacherTable table;
  table.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto v = forward(teacher, prompts.sequence(i, teacher.config.context));
    table.emplace_back(v.begin(), v.end());
  }
  return table;
}

EncoderParameters<double> make_teacher(const TeacherConfig& cfg, std::size_t vocab) {
  TinyEncoderConfig c{cfg.n_layers, cfg.width, cfg.n_heads, cfg.context, vocab, cfg.out_dim, 2};
  return init_parameters<double>(c, cfg.seed, cfg.init_std);
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (!cfg.cosine_schedule || cfg.steps <= cfg.warmup_steps) return cfg.lr;
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(cfg.steps - cfg.warmup_steps);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * t));
}

std::uint64_t permutation_seed(std::uint64_t seed, std::size_t step, std::size_t index) {
  return mix_seed(seed, step, index);
}

template <typename T>
TrainResult<T> train(EncoderParameters<T> initial, const LossWeights& weights,
                     const TeacherTable& teacher, const PromptSet& prompts,
                     std::span<const std::size_t> train_indices, const TrainConfig& cfg) {
  weights.validate();
  initial.config.validate();
  if (train_indices.empty()) throw ValidationError("training corpus is empty");
  if (teacher.size() != prompts.size()) throw ValidationError("teacher table does not cover the prompt set");
  if (initial.config.vocab < prompts.vocab()) throw ValidationError("student vocabulary too small for the prompt set");
  if (!(cfg.lr > 0.0) || !(cfg.weight_decay >= 0.0) || cfg.batch_size == 0) {
    throw InvalidArgument("learning rate must be positive, weight decay nonnegative, batch nonempty");
  }
  for (auto i : train_indices) {
    if (i >= prompts.size()) throw ValidationError("training index out of range");
  }

  TrainResult<T> result{std::move(initial), {}};
  auto& params = result.params;
  const std::size_t L = params.config.context;
  std::vector<std::vector<T>> m1, m2;
  for (const auto& t : params.tensors) {
    m1.emplace_back(t.size(), T(0));
    m2.emplace_back(t.size(), T(0));
  }

  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
  Rng shuffler(mix_seed(cfg.seed, 0x5eedULL));
  auto reshuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffler.below(i))]);
    }
  };
  reshuffle();
  std::size_t cursor = 0;

  std::vector<Example> batch(cfg.batch_size);
  result.curve.reserve(cfg.steps);
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& ex : batch) {
      if (cursor == order.size()) {
        reshuffle();
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const auto perm = permutation(prompts[idx].words.size(), permutation_seed(cfg.seed, step, idx));
      ex.original = prompts.sequence(idx, L);
      ex.permuted = prompts.sequence(idx, L, perm);
      ex.teacher = teacher[idx];
    }

    GradientResult<T> g;
    try {
      g = grad(params, std::span<const Example>(batch), weights);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) +
                         " (last finite step " + (step == 0 ? std::string("none") : std::to_string(step - 1)) +
                         "): " + e.what());
    }
    if (!std::isfinite(g.loss.total)) {
      throw NumericError("training diverged at step " + std::to_string(step) + " (last finite step " +
                         (step == 0 ? std::string("none") : std::to_string(step - 1)) + ")");
    }
    result.curve.push_back(g.loss);

    const double lr = learning_rate(cfg, step);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const T c1 = static_cast<T>(1.0 / (1.0 - b1t));
    const T c2 = static_cast<T>(1.0 / (1.0 - b2t));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.adam_eps);
    const T tlr = static_cast<T>(lr);
    const T decay = static_cast<T>(lr * cfg.weight_decay);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto& t = params.tensors[k];
      const bool wd = EncoderParameters<T>::decays(t) && cfg.weight_decay > 0.0;
      const auto& gk = g.grads[k].data;
      auto& a = m1[k];
      auto& b = m2[k];
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        a[i] = b1 * a[i] + (T(1) - b1) * gk[i];
        b[i] = b2 * b[i] + (T(1) - b2) * gk[i] * gk[i];
        if (wd) t.data[i] -= decay * t.data[i];
        t.data[i] -= tlr * (a[i] * c1) / (std::sqrt(b[i] * c2) + eps);
      }
    }
  }
  return result;
}

template <typename T>
TrainResult<T> train(const TinyEncoderConfig& student, const LossWeights& weights,
                     const TeacherTable& teacher, const PromptSet& prompts,
                     std::span<const std::size_t> train_indices, const TrainConfig& cfg) {
  return train(init_parameters<T>(student, mix_seed(cfg.seed, 1), cfg.init_std), weights, teacher,
               prompts, train_indices, cfg);
}

template <typename T>
double mean_cosine(const EncoderParameters<T>& params, const PromptSet& prompts,
                   const TeacherTable& teacher, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("no prompts to evaluate");
  double s = 0.0;
  for (auto i : indices) {
    const auto v = forward(params, prompts.sequence(i, params.config.context));
    s += cosine(std::span<const T>(v), std::span<const double>(teacher.at(i)));
  }
  return s / static_cast<double>(indices.size());
}

template <typename T>
double permutation_gap(const EncoderParameters<T>& params, const PromptSet& prompts,
                       std::span<const std::size_t> indices, std::uint64_t seed) {
  const std::size_t L = params.config.context;
  double s = 0.0;
  std::size_t n = 0;
  for (auto i : indices) {
    if (prompts[i].words.size() < 2) continue;
    const auto perm = permutation(prompts[i].words.size(), mix_seed(seed, i));
    const auto a = forward(params, prompts.sequence(i, L));
    const auto b = forward(params, prompts.sequence(i, L, perm));
    s += std::sqrt(squared_distance(std::span<const T>(a), std::span<const T>(b)));
    ++n;
  }
  if (n == 0) throw ValidationError("no multi-word prompts to measure a permutation gap on");
  return s / static_cast<double>(n);
}

std::vector<std::string> synthetic_prompts(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> colors = {
      "red", "blue", "green", "white", "black", "yellow", "orange", "purple", "brown", "gray", "pink", "silver"};
  static const std::vector<std::string> sizes = {"small", "large", "tall", "short", "tiny", "big", "long", "wide"};
  static const std::vector<std::string> materials = {
      "wooden", "metal", "plastic", "glass", "leather", "striped", "plaid", "shiny"};
  static const std::vector<std::string> nouns = {
      "man", "woman", "dog", "cat", "car", "shirt", "hat", "chair", "table", "bottle", "bag", "bird",
      "horse", "cup", "umbrella", "bicycle", "boat", "truck", "lamp", "book", "child", "sign", "tree", "door"};
  static const std::vector<std::string> relations = {"on", "near", "under", "behind", "with", "beside"};

  Rng rng(seed);
  auto pick = [&](const std::vector<std::string>& v) -> const std::string& {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
  };
  // Combinatorial headroom is far beyond any desk-scale request; the cap
  // only guards against a pathological loop.
  std::set<std::string> seen;
  std::vector<std::string> out;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 1000 * (n + 10)) throw InvalidArgument("cannot draw that many distinct prompts");
    std::string p;
    switch (rng.below(5)) {
      case 0: p = pick(colors) + " " + pick(nouns); break;
      case 1: p = pick(sizes) + " " + pick(colors) + " " + pick(nouns); break;
      case 2: p = pick(colors) + " " + pick(materials) + " " + pick(nouns); break;
      case 3: p = pick(colors) + " " + pick(nouns) + " " + pick(relations) + " " + pick(nouns); break;
      default:
        p = pick(sizes) + " " + pick(nouns) + " " + pick(relations) + " " + pick(colors) + " " + pick(nouns);
        break;
    }
    if (seen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
void save_parameters(const EncoderParameters<T>& params, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& t : params.tensors) {
    EmbeddingMatrix m(t.rows, t.cols, std::vector<float>(t.data.begin(), t.data.end()));
    write_ltxt(dir / (t.name + ".ltxt"), m);
  }
}

#define ANATOMY_DISTILL_INSTANTIATE(T)                                                              \
  template EncoderParameters<T> init_parameters<T>(const TinyEncoderConfig&, std::uint64_t, double); \
  template std::vector<Var> bind<T>(Tape<T>&, const EncoderParameters<T>&, bool);                   \
  template Var encode<T>(Tape<T>&, std::span<const Var>, const TinyEncoderConfig&,                  \
                         const TokenSequence&);                                                     \
  template std::vector<T> forward<T>(const EncoderParameters<T>&, const TokenSequence&);            \
  template double loss_consistency<T>(const EncoderParameters<T>&, const TokenSequence&,            \
                                      const TokenSequence&);                                        \
  template GradientResult<T> grad<T>(const EncoderParameters<T>&, std::span<const Example>,         \
                                     const LossWeights&);                                           \
  template LossBreakdown evaluate<T>(const EncoderParameters<T>&, std::span<const Example>,         \
                                     const LossWeights&);                                           \
  template TeacherTable teacher_embeddings<T>(const EncoderParameters<T>&, const PromptSet&);       \
  template TrainResult<T> train<T>(EncoderParameters<T>, const LossWeights&, const TeacherTable&,   \
                                   const PromptSet&, std::span<const std::size_t>,                  \
                                   const TrainConfig&);                                             \
  template TrainResult<T> train<T>(const TinyEncoderConfig&, const LossWeights&,                    \
                                   const TeacherTable&, const PromptSet&,                           \
                                   std::span<const std::size_t>, const TrainConfig&);               \
  template double mean_cosine<T>(const EncoderParameters<T>&, const PromptSet&,                     \
                                 const TeacherTable&, std::span<const std::size_t>);                \
  template double permutation_gap<T>(const EncoderParameters<T>&, const PromptSet&,                 \
                                     std::span<const std::size_t>, std::uint64_t);                  \
  template void save_parameters<T>(const EncoderParameters<T>&, const std::filesystem::path&);

ANATOMY_DISTILL_INSTANTIATE(float)
ANATOMY_DISTILL_INSTANTIATE(double)

}  // namespace anatomy::distill
