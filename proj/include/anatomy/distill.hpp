#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "anatomy/autodiff.hpp"
#include "anatomy/tokenizer.hpp"

namespace anatomy::distill {

using autodiff::Tensor;
using bpe::TokenId;
using bpe::TokenSequence;

struct TinyEncoderConfig {
  std::size_t n_layers = 2;
  std::size_t width = 32;
  std::size_t n_heads = 2;
  std::size_t context = 16;
  std::size_t vocab = 0;
  std::size_t out_dim = 16;
  std::size_t ffn_mult = 2;

  void validate() const;
  std::size_t head_dim() const { return width / n_heads; }
  std::size_t tensor_count() const { return 2 + kPerLayer * n_layers + 3; }

  static constexpr std::size_t kPerLayer = 12;
};

// Flat list of named tensors in a fixed order:
//   token_embedding, positional_embedding,
//   per layer: ln1.{gamma,beta}, attn.qkv.{weight,bias}, attn.out.{weight,bias},
//              ln2.{gamma,beta}, mlp.fc1.{weight,bias}, mlp.fc2.{weight,bias},
//   ln_final.{gamma,beta}, projection.
template <typename T>
struct EncoderParameters {
  enum LayerSlot : std::size_t {
    kLn1Gamma, kLn1Beta, kQkvWeight, kQkvBias, kOutWeight, kOutBias,
    kLn2Gamma, kLn2Beta, kFc1Weight, kFc1Bias, kFc2Weight, kFc2Bias,
  };

  TinyEncoderConfig config;
  std::vector<Tensor<T>> tensors;

  static constexpr std::size_t kTokenEmbedding = 0;
  static constexpr std::size_t kPositional = 1;
  std::size_t layer_index(std::size_t layer, LayerSlot slot) const {
    return 2 + layer * TinyEncoderConfig::kPerLayer + slot;
  }
  std::size_t final_gamma_index() const { return 2 + config.n_layers * TinyEncoderConfig::kPerLayer; }
  std::size_t final_beta_index() const { return final_gamma_index() + 1; }
  std::size_t projection_index() const { return final_gamma_index() + 2; }

  // Weight matrices receive decoupled weight decay; gains and biases do not.
  static bool decays(const Tensor<T>& t) {
    return t.rows > 1 && t.name.find("embedding") == std::string::npos;
  }
};

// normal(0, init_std) embeddings and weight matrices, zero biases, unit gains.
template <typename T>
EncoderParameters<T> init_parameters(const TinyEncoderConfig& config, std::uint64_t seed,
                                     double init_std = 0.02);

template <typename To, typename From>
EncoderParameters<To> cast_parameters(const EncoderParameters<From>& p) {
  EncoderParameters<To> out;
  out.config = p.config;
  for (const auto& t : p.tensors) {
    out.tensors.push_back({t.name, t.rows, t.cols, std::vector<To>(t.data.begin(), t.data.end())});
  }
  return out;
}

// Validates a sequence against the config: length L, 2 <= content_len <= L,
// content ids inside the vocabulary.
void check_sequence(const TinyEncoderConfig& config, const TokenSequence& seq);

// Records the encoder on a tape. `params` are the tape leaves for
// EncoderParameters::tensors, in order. Only the content positions enter
// attention, so padding never influences the result. Returns a 1 x out_dim row.
template <typename T>
autodiff::Var encode(autodiff::Tape<T>& tape, std::span<const autodiff::Var> params,
                     const TinyEncoderConfig& config, const TokenSequence& seq);

template <typename T>
std::vector<autodiff::Var> bind(autodiff::Tape<T>& tape, const EncoderParameters<T>& params,
                                bool requires_grad);

template <typename T>
std::vector<T> forward(const EncoderParameters<T>& params, const TokenSequence& seq);

double loss_mse(std::span<const double> student, std::span<const double> teacher);
double loss_cos(std::span<const double> student, std::span<const double> teacher);

struct LossWeights {
  double cos = 2.0;
  double consist = 0.1;

  void validate() const;
};

struct LossBreakdown {
  double mse = 0.0;
  double cos = 0.0;
  double consist = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(double mse, double cos, double consist, const LossWeights& weights);

template <typename T>
double loss_consistency(const EncoderParameters<T>& params, const TokenSequence& original,
                        const TokenSequence& permuted);

// Uniform random order of `n` items from `seed`.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

// Shuffles whitespace-separated words; zero or one word is returned unchanged.
std::string word_permute(std::string_view text, std::uint64_t seed);

struct Example {
  TokenSequence original;
  TokenSequence permuted;
  std::vector<double> teacher;
};

template <typename T>
struct GradientResult {
  LossBreakdown loss;
  std::vector<Tensor<T>> grads;  // parallel to EncoderParameters::tensors
};

// Batch-mean objective and its reverse-mode gradient. Permutation pairs whose
// sequences are identical contribute an exact zero consistency term.
template <typename T>
GradientResult<T> grad(const EncoderParameters<T>& params, std::span<const Example> batch,
                       const LossWeights& weights);

template <typename T>
LossBreakdown evaluate(const EncoderParameters<T>& params, std::span<const Example> batch,
                       const LossWeights& weights);

// Tokenized prompts in a compact vocabulary restricted to the ids that occur,
// so embedding tables stay small. Compact id 0 is the pad id, 1 the start
// marker, 2 the end marker.
class PromptSet {
 public:
  struct Prompt {
    std::string text;                          // normalized
    std::vector<std::vector<TokenId>> words;   // compact ids per whitespace word
  };

  PromptSet(const bpe::MergeTable& table, std::span<const std::string> texts);

  std::size_t size() const { return prompts_.size(); }
  std::size_t vocab() const { return to_global_.size(); }
  const Prompt& operator[](std::size_t i) const { return prompts_[i]; }
  std::span<const TokenId> global_ids() const { return to_global_; }

  static constexpr TokenId kSot = 1;
  static constexpr TokenId kEot = 2;

  // Sequence for prompt i with its words in `order` (identity when empty).
  TokenSequence sequence(std::size_t i, std::size_t context,
                         std::span<const std::size_t> order = {}) const;

 private:
  std::vector<Prompt> prompts_;
  std::vector<TokenId> to_global_;
  std::unordered_map<TokenId, TokenId> to_compact_;
};

using TeacherTable = std::vector<std::vector<double>>;

// Frozen, seed-initialized wider encoder standing in for a real teacher.
struct TeacherConfig {
  std::size_t n_layers = 2;
  std::size_t width = 64;
  std::size_t n_heads = 4;
  std::size_t context = 32;
  std::size_t out_dim = 16;
  double init_std = 0.03;
  std::uint64_t seed = 0;
};

EncoderParameters<double> make_teacher(const TeacherConfig& cfg, std::size_t vocab);

template <typename T>
TeacherTable teacher_embeddings(const EncoderParameters<T>& teacher, const PromptSet& prompts);

struct TrainConfig {
  double lr = 5e-3;
  std::size_t steps = 5000;
  std::uint64_t seed = 0;
  double weight_decay = 0.05;
  std::size_t batch_size = 16;
  bool cosine_schedule = true;
  std::size_t warmup_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double init_std = 0.02;
};

template <typename T>
struct TrainResult {
  EncoderParameters<T> params;
  std::vector<LossBreakdown> curve;  // one entry per step, before the update
};

// Learning rate at `step` (0-based): linear warmup, then constant or cosine
// decay to zero at `steps`.
double learning_rate(const TrainConfig& cfg, std::size_t step);

// Trains on the prompts listed in `train_indices`. Each step draws a batch
// from a seeded shuffle and one word permutation per prompt, seeded from
// (seed, step, prompt index).
template <typename T>
TrainResult<T> train(EncoderParameters<T> initial, const LossWeights& weights,
                     const TeacherTable& teacher, const PromptSet& prompts,
                     std::span<const std::size_t> train_indices, const TrainConfig& cfg);

template <typename T>
TrainResult<T> train(const TinyEncoderConfig& student, const LossWeights& weights,
                     const TeacherTable& teacher, const PromptSet& prompts,
                     std::span<const std::size_t> train_indices, const TrainConfig& cfg);

// Seed of the permutation applied to prompt `index` at training step `step`.
std::uint64_t permutation_seed(std::uint64_t seed, std::size_t step, std::size_t index);

template <typename T>
double mean_cosine(const EncoderParameters<T>& params, const PromptSet& prompts,
                   const TeacherTable& teacher, std::span<const std::size_t> indices);

// Mean ||v(T) - v(T')|| over the multi-word prompts in `indices`.
template <typename T>
double permutation_gap(const EncoderParameters<T>& params, const PromptSet& prompts,
                       std::span<const std::size_t> indices, std::uint64_t seed);

// Attribute-noun phrases and short referring expressions from a fixed word
// list, for desk-scale experiments.
std::vector<std::string> synthetic_prompts(std::size_t n, std::uint64_t seed);

// params/<name>.ltxt for every tensor (float32).
template <typename T>
void save_parameters(const EncoderParameters<T>& params, const std::filesystem::path& dir);

}  // namespace anatomy::distill
