#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "anatomy/distill.hpp"
#include "anatomy/error.hpp"
#include "anatomy/matrix.hpp"
#include "anatomy/rng.hpp"
#include "encoder_oracle.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace anatomy;
using namespace anatomy::distill;
using anatomy::testing::clip_table;

namespace {

TinyEncoderConfig small_config(std::size_t vocab, std::size_t L = 12) {
  return {2, 16, 2, L, vocab, 6, 2};
}

// Non-trivial parameters: random gains and biases as well.
EncoderParameters<double> random_params(const TinyEncoderConfig& c, std::uint64_t seed) {
  auto p = init_parameters<double>(c, seed, 0.3);
  Rng rng(seed + 1000);
  for (auto& t : p.tensors) {
    if (t.rows == 1) {
      for (auto& v : t.data) v += 0.2 * rng.normal();
    }
  }
  return p;
}

TokenSequence seq_of(std::vector<TokenId> content, std::size_t L) {
  TokenSequence s;
  s.ids.assign(L, 0);
  std::copy(content.begin(), content.end(), s.ids.begin());
  s.content_len = content.size();
  return s;
}

const std::vector<std::string> kPrompts = {"white shirt man", "red car", "dog", "small blue bird on the tree",
                                           "tall man with black hat", "green bottle"};

}  // namespace

TEST(Distill, ConfigValidation) {
  EXPECT_NO_THROW(small_config(10).validate());
  TinyEncoderConfig c = small_config(10);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config(10, 2);
  EXPECT_THROW(c.validate(), ValidationError);
  c = small_config(10);
  c.out_dim = 0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Distill, InitializationLayout) {
  auto p = init_parameters<float>(small_config(10), 3);
  ASSERT_EQ(p.tensors.size(), p.config.tensor_count());
  EXPECT_EQ(p.tensors[0].name, "token_embedding");
  EXPECT_EQ(p.tensors[0].rows, 10u);
  EXPECT_EQ(p.tensors[1].rows, 12u);
  EXPECT_EQ(p.tensors[p.projection_index()].cols, 6u);
  for (float g : p.tensors[p.layer_index(1, EncoderParameters<float>::kLn2Gamma)].data) EXPECT_EQ(g, 1.0f);
  for (float b : p.tensors[p.layer_index(0, EncoderParameters<float>::kQkvBias)].data) EXPECT_EQ(b, 0.0f);
  double ss = 0;
  for (float v : p.tensors[0].data) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / 160.0), 0.02, 0.005);
  EXPECT_EQ(init_parameters<float>(small_config(10), 3).tensors[5].data, p.tensors[5].data);
}

TEST(Distill, ForwardMatchesMaskedOracle) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto c = small_config(20);
    c.n_layers = 1 + seed % 3;
    c.n_heads = seed % 2 ? 4 : 1;
    auto p = random_params(c, seed);
    auto s = seq_of({1, 5, 7, 19, 3, 2}, c.context);
    s.ids[9] = 11;  // junk in the pad region
    auto got = forward(p, s);
    auto want = anatomy::testing::oracle_forward(p, s);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], want[i], 1e-6 * std::max(1.0, std::abs(want[i]))) << seed << " " << i;
    }
  }
}

TEST(Distill, PaddingIsInvisible) {
  auto p = random_params(small_config(20), 8);
  auto a = seq_of({1, 4, 9, 2}, 12);
  auto b = a;
  for (std::size_t i = 4; i < 12; ++i) b.ids[i] = static_cast<TokenId>(i + 3);
  EXPECT_EQ(forward(p, a), forward(p, b));
}

TEST(Distill, ForwardIsDeterministic) {
  auto p = init_parameters<float>(small_config(20), 4);
  auto s = seq_of({1, 4, 9, 2}, 12);
  EXPECT_EQ(forward(p, s), forward(p, s));
}

TEST(Distill, ContextCollapseConsistency) {
  auto c32 = small_config(20, 32);
  auto p32 = random_params(c32, 12);
  auto p16 = p32;
  p16.config.context = 16;
  auto& pos = p16.tensors[EncoderParameters<double>::kPositional];
  pos.rows = 16;
  pos.data.resize(16 * pos.cols);
  const std::vector<TokenId> content = {1, 6, 3, 8, 14, 2};
  EXPECT_EQ(forward(p32, seq_of(content, 32)), forward(p16, seq_of(content, 16)));
}

TEST(Distill, SequenceValidation) {
  auto p = init_parameters<double>(small_config(20), 4);
  EXPECT_THROW(forward(p, seq_of({1, 2}, 11)), ValidationError);
  EXPECT_THROW(forward(p, seq_of({1, 25, 2}, 12)), ValidationError);
  EXPECT_THROW(forward(p, seq_of({1}, 12)), ValidationError);
}

TEST(Distill, LossExamples) {
  const std::vector<double> t{0.0, 3.0, 0.0}, z{0.0, 0.0, 0.0};
  EXPECT_EQ(loss_mse(t, t), 0.0);
  EXPECT_EQ(loss_mse(z, t), 9.0);
  EXPECT_EQ(loss_cos(t, t), 0.0);
  EXPECT_EQ(loss_cos(std::vector<double>{0.0, -3.0, 0.0}, t), 2.0);
  EXPECT_EQ(loss_cos(std::vector<double>{1.0, 0.0, 0.0}, t), 1.0);
  EXPECT_THROW(loss_cos(z, t), ValidationError);
  EXPECT_THROW(loss_mse(std::vector<double>{1.0}, t), ValidationError);

  Rng rng(3);
  std::vector<double> a(7), b(7);
  for (int trial = 0; trial < 20; ++trial) {
    double m = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      m += (a[i] - b[i]) * (a[i] - b[i]);
    }
    EXPECT_NEAR(loss_mse(a, b), m, 1e-12 * m);
    const double lc = loss_cos(a, b);
    EXPECT_GE(lc, 0.0);
    EXPECT_LE(lc, 2.0);
  }
}

TEST(Distill, TotalLoss) {
  EXPECT_EQ(total_loss(0, 0, 0, {}).total, 0.0);
  EXPECT_DOUBLE_EQ(total_loss(1.0, 0.5, 2.0, {2.0, 0.1}).total, 2.2);
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const double m = rng.uniform(), c = 2 * rng.uniform(), s = rng.uniform();
    const LossWeights w{3 * rng.uniform(), rng.uniform()};
    EXPECT_EQ(total_loss(m, c, s, w).total, m + w.cos * c + w.consist * s);
  }
  EXPECT_THROW(total_loss(1, 1, 1, {-1.0, 0.1}), InvalidArgument);
  EXPECT_THROW(total_loss(1, 1, 1, {1.0, -0.1}), InvalidArgument);
}

TEST(WordPermute, Examples) {
  EXPECT_EQ(word_permute("man", 7), "man");
  EXPECT_EQ(word_permute("", 7), "");
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto out = word_permute("white shirt man", s);
    std::multiset<std::string> words;
    std::istringstream in(out);
    for (std::string w; in >> w;) words.insert(w);
    EXPECT_EQ(words, (std::multiset<std::string>{"man", "shirt", "white"}));
    seen.insert(out);
  }
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_TRUE(seen.count("man white shirt"));
  EXPECT_EQ(word_permute("a b c d", 42), word_permute("a b c d", 42));
}

TEST(WordPermute, UniformOverPermutations) {
  std::map<std::string, int> counts;
  for (std::uint64_t s = 0; s < 1000; ++s) ++counts[word_permute("a b c d", mix_seed(17, s))];
  ASSERT_EQ(counts.size(), 24u);
  const double expected = 1000.0 / 24.0;
  double chi2 = 0;
  for (const auto& [k, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  EXPECT_LT(chi2, 41.638);  // chi-square critical value, 23 dof, p = 0.01
}

TEST(PromptSet, CompactSequencesMatchTokenizer) {
  PromptSet ps(clip_table(), kPrompts);
  EXPECT_EQ(ps.global_ids()[PromptSet::kSot], clip_table().sot());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto words = ps[i].words.size();
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto order = permutation(words, seed);
      auto compact = ps.sequence(i, 8, order);
      auto global = bpe::encode(clip_table(), word_permute(kPrompts[i], seed), 8);
      ASSERT_EQ(compact.content_len, global.content_len) << kPrompts[i];
      EXPECT_EQ(compact.truncated, global.truncated);
      for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(ps.global_ids()[compact.ids[k]], global.ids[k]);
    }
  }
}

TEST(Distill, ConsistencyLoss) {
  PromptSet ps(clip_table(), kPrompts);
  auto p = random_params(small_config(ps.vocab()), 2);
  auto t = ps.sequence(0, 12);
  EXPECT_EQ(loss_consistency(p, t, t), 0.0);
  auto single = ps.sequence(2, 12, permutation(1, 5));
  EXPECT_EQ(loss_consistency(p, ps.sequence(2, 12), single), 0.0);
  const std::size_t order[] = {2, 0, 1};
  auto tp = ps.sequence(0, 12, order);
  auto a = forward(p, t), b = forward(p, tp);
  EXPECT_DOUBLE_EQ(loss_consistency(p, t, tp), loss_mse(a, b));
  EXPECT_GT(loss_consistency(p, t, tp), 0.0);
}

TEST(Distill, GradientMatchesFiniteDifferences) {
  PromptSet ps(clip_table(), kPrompts);
  TinyEncoderConfig c{1, 8, 2, 10, ps.vocab(), 4, 2};
  Rng rng(5);
  for (std::uint64_t point = 0; point < 2; ++point) {
    auto p = random_params(c, 40 + point);
    std::vector<Example> batch;
    for (std::size_t i : {0, 3, 5}) {
      const auto order = permutation(ps[i].words.size(), point * 10 + i);
      std::vector<double> target(4);
      for (auto& v : target) v = rng.normal();
      batch.push_back({ps.sequence(i, 10), ps.sequence(i, 10, order), target});
    }
    for (const auto& tc : anatomy::testing::check_gradients(p, batch, {2.0, 0.5})) {
      EXPECT_LE(tc.rel_error, 1e-3) << tc.name;
    }
  }
}

TEST(Distill, GradientVanishesAtExactFit) {
  PromptSet ps(clip_table(), kPrompts);
  auto c = small_config(ps.vocab());
  auto p = random_params(c, 6);
  std::vector<Example> batch;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto v = forward(p, ps.sequence(i, 12));
    batch.push_back({ps.sequence(i, 12), ps.sequence(i, 12), v});
  }
  auto g = grad(p, batch, {2.0, 0.1});
  EXPECT_LT(g.loss.total, 1e-12);
  for (const auto& t : g.grads) {
    for (double v : t.data) EXPECT_LT(std::abs(v), 1e-6) << t.name;
  }
}

TEST(Distill, TrainingFromTeacherWeightsStaysAtZero) {
  PromptSet ps(clip_table(), kPrompts);
  auto teacher = init_parameters<double>(small_config(ps.vocab()), 21, 0.1);
  auto table = teacher_embeddings(teacher, ps);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 4;
  cfg.weight_decay = 0.0;
  // Adam rescales rounding-level gradients toward full steps; with a large eps
  // it acts as plain gradient descent (step lr / eps) and the fit stays put.
  cfg.adam_eps = 1e-2;
  cfg.lr = 1e-4;
  auto r = train(teacher, {2.0, 0.0}, table, ps, idx, cfg);
  ASSERT_EQ(r.curve.size(), 20u);
  for (const auto& l : r.curve) {
    EXPECT_LT(l.total, 1e-12);
  }
  auto r2 = train(teacher, {2.0, 0.1}, table, ps, idx, cfg);
  EXPECT_LT(r2.curve[0].mse, 1e-24);
  EXPECT_LT(r2.curve[0].cos, 1e-12);
  EXPECT_NEAR(r2.curve[0].total, 0.1 * r2.curve[0].consist, 1e-12);
  EXPECT_GT(r2.curve[0].consist, 0.0);
}

TEST(Distill, TrainingIsBitReproducibleAndLearns) {
  PromptSet ps(clip_table(), kPrompts);
  auto teacher = init_parameters<double>(small_config(ps.vocab()), 31, 0.05);
  auto table = teacher_embeddings(teacher, ps);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.batch_size = 4;
  cfg.seed = 3;
  auto student = small_config(ps.vocab());
  auto a = train<double>(student, {}, table, ps, idx, cfg);
  auto b = train<double>(student, {}, table, ps, idx, cfg);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].total, b.curve[i].total);
    EXPECT_EQ(a.curve[i].consist, b.curve[i].consist);
  }
  EXPECT_LT(a.curve.back().total, a.curve.front().total);
  cfg.seed = 4;
  auto c = train<double>(student, {}, table, ps, idx, cfg);
  EXPECT_NE(c.curve.back().total, a.curve.back().total);
}

TEST(Distill, DivergenceReportsStep) {
  PromptSet ps(clip_table(), kPrompts);
  auto student = small_config(ps.vocab());
  TeacherTable table(ps.size(), std::vector<double>(student.out_dim, 1.0));
  table[1][0] = std::nan("");
  std::vector<std::size_t> idx{1};
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 1;
  try {
    train<float>(student, {}, table, ps, idx, cfg);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Distill, LearningRateSchedule) {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.steps = 100;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 1e-2);
  EXPECT_NEAR(learning_rate(cfg, 50), 5e-3, 1e-15);
  cfg.cosine_schedule = false;
  EXPECT_EQ(learning_rate(cfg, 99), 1e-2);
  cfg.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 4), 5e-3);
}

TEST(Distill, SaveParameters) {
  auto p = init_parameters<float>(small_config(9), 1);
  const auto dir = std::filesystem::temp_directory_path() / "anatomy_params_test";
  std::filesystem::remove_all(dir);
  save_parameters(p, dir);
  for (const auto& t : p.tensors) {
    auto m = read_ltxt(dir / (t.name + ".ltxt"));
    EXPECT_EQ(m.rows, t.rows);
    EXPECT_EQ(m.cols, t.cols);
    EXPECT_EQ(m.values, t.data);
  }
  std::filesystem::remove_all(dir);
}

TEST(Distill, SyntheticPromptsAreDistinctAndSeeded) {
  auto a = synthetic_prompts(300, 5);
  EXPECT_EQ(a.size(), 300u);
  EXPECT_EQ(std::set<std::string>(a.begin(), a.end()).size(), 300u);
  EXPECT_EQ(a, synthetic_prompts(300, 5));
  EXPECT_NE(a, synthetic_prompts(300, 6));
}
