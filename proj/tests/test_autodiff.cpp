#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "anatomy/autodiff.hpp"
#include "anatomy/error.hpp"
#include "anatomy/rng.hpp"

using namespace anatomy;
using namespace anatomy::autodiff;

namespace {

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

Tensor<double> random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor<double> t{"x", r, c, std::vector<double>(r * c)};
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

double evaluate(std::vector<Tensor<double>>& inputs, const Builder& f) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(tape.leaf(t, false));
  return tape.scalar(f(tape, vars));
}

// Reverse mode against central differences for every input coordinate.
void expect_gradients(std::vector<Tensor<double>> inputs, const Builder& f, double tol = 1e-7) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(tape.leaf(t, true));
  Var loss = f(tape, vars);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto v : vars) analytic.emplace_back(tape.grad(v).begin(), tape.grad(v).end());

  const double h = 1e-5;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].data.size(); ++i) {
      const double keep = inputs[t].data[i];
      inputs[t].data[i] = keep + h;
      const double up = evaluate(inputs, f);
      inputs[t].data[i] = keep - h;
      const double down = evaluate(inputs, f);
      inputs[t].data[i] = keep;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic[t][i], numeric, tol * std::max(1.0, std::abs(numeric)))
          << "input " << t << " coordinate " << i;
    }
  }
}

// Weighted sum of all entries, so every output coordinate matters.
Var probe_sum(Tape<double>& tape, Var x) {
  std::vector<double> w(tape.rows(x) * tape.cols(x));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i));
  return tape.dot(x, tape.constant(tape.rows(x), tape.cols(x), w));
}

}  // namespace

TEST(Autodiff, MatmulFamily) {
  Rng rng(1);
  expect_gradients({random_tensor(3, 4, rng), random_tensor(4, 5, rng)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.matmul(v[0], v[1])); });
  expect_gradients({random_tensor(3, 4, rng), random_tensor(6, 4, rng)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.matmul_bt(v[0], v[1])); });
}

TEST(Autodiff, ElementwiseOps) {
  Rng rng(2);
  auto pos = random_tensor(2, 3, rng);
  for (auto& x : pos.data) x = 1.5 + std::abs(x);
  expect_gradients({random_tensor(2, 3, rng), random_tensor(2, 3, rng)}, [](auto& t, const auto& v) {
    return probe_sum(t, t.add(t.mul(v[0], v[1]), t.sub(v[0], t.affine(v[1], 0.5, 2.0))));
  });
  expect_gradients({random_tensor(2, 3, rng), pos},
                   [](auto& t, const auto& v) { return probe_sum(t, t.div(v[0], v[1])); });
  expect_gradients({random_tensor(4, 3, rng), random_tensor(1, 3, rng)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.add_row(v[0], v[1])); });
  expect_gradients({random_tensor(3, 5, rng)}, [](auto& t, const auto& v) { return probe_sum(t, t.gelu(v[0])); });
}

TEST(Autodiff, Reductions) {
  Rng rng(3);
  expect_gradients({random_tensor(2, 3, rng), random_tensor(2, 3, rng)},
                   [](auto& t, const auto& v) { return t.dot(v[0], v[1]); });
  expect_gradients({random_tensor(1, 6, rng)}, [](auto& t, const auto& v) { return t.l2_norm(v[0]); });
}

TEST(Autodiff, ShapeOps) {
  Rng rng(4);
  const std::int32_t ids[] = {2, 0, 2, 1};
  expect_gradients({random_tensor(3, 4, rng)},
                   [&](auto& t, const auto& v) { return probe_sum(t, t.gather(v[0], ids)); });
  expect_gradients({random_tensor(5, 4, rng)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.slice_rows(v[0], 1, 4)); });
  expect_gradients({random_tensor(3, 6, rng)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.slice_cols(v[0], 2, 5)); });
  expect_gradients({random_tensor(3, 2, rng), random_tensor(3, 3, rng)}, [](auto& t, const auto& v) {
    std::vector<Var> parts{v[0], v[1], v[0]};
    return probe_sum(t, t.concat_cols(parts));
  });
}

TEST(Autodiff, NormalizationAndSoftmax) {
  Rng rng(5);
  expect_gradients({random_tensor(3, 6, rng), random_tensor(1, 6, rng), random_tensor(1, 6, rng)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.layer_norm(v[0], v[1], v[2])); });
  expect_gradients({random_tensor(3, 5, rng, 2.0)},
                   [](auto& t, const auto& v) { return probe_sum(t, t.softmax_rows(v[0])); });
}

TEST(Autodiff, AccumulatesAcrossReuse) {
  // f(x) = x.x + 3 x.1 reuses x; df/dx = 2x + 3
  Tensor<double> x{"x", 1, 3, {1.0, -2.0, 0.5}};
  Tape<double> tape;
  Var v = tape.leaf(x, true);
  Var f = tape.add(tape.dot(v, v), tape.scale(tape.dot(v, tape.constant(1, 3, {1, 1, 1})), 3.0));
  tape.backward(f);
  EXPECT_EQ(tape.grad(v)[0], 5.0);
  EXPECT_EQ(tape.grad(v)[1], -1.0);
  EXPECT_EQ(tape.grad(v)[2], 4.0);
}

TEST(Autodiff, SquaredDistanceGradientClosedForm) {
  Tensor<double> s{"s", 1, 4, {0.3, -1.0, 2.0, 0.0}};
  Tensor<double> t{"t", 1, 4, {1.0, 1.0, -1.0, 0.5}};
  Tape<double> tape;
  Var vs = tape.leaf(s, true);
  Var vt = tape.leaf(t, false);
  Var d = tape.sub(vs, vt);
  tape.backward(tape.dot(d, d));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(tape.grad(vs)[i], 2 * (s.data[i] - t.data[i]));
}

TEST(Autodiff, NonFiniteValueNamesOp) {
  Tensor<double> a{"a", 1, 2, {1.0, 0.0}};
  Tensor<double> b{"b", 1, 2, {0.0, 0.0}};
  Tape<double> tape;
  Var va = tape.leaf(a, true), vb = tape.leaf(b, true);
  try {
    tape.div(va, vb);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("div"), std::string::npos);
  }
}

TEST(Autodiff, ShapeErrors) {
  Tensor<double> a{"a", 2, 3, std::vector<double>(6, 1.0)};
  Tape<double> tape;
  Var v = tape.leaf(a, true);
  EXPECT_THROW(tape.matmul(v, v), ValidationError);
  EXPECT_THROW(tape.backward(v), ValidationError);
  EXPECT_THROW(tape.slice_rows(v, 1, 3), ValidationError);
}
