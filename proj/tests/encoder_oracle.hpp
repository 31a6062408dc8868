#pragma once

// Straight-line reference forward pass over all L positions with an explicit
// additive -inf key mask for padding. Shares no code with the tape encoder.

#include <cmath>
#include <algorithm>
#include <limits>
#include <vector>

#include "anatomy/distill.hpp"

namespace anatomy::testing {

inline std::vector<double> oracle_forward(const distill::EncoderParameters<double>& P,
                                          const bpe::TokenSequence& seq) {
  const auto& c = P.config;
  const std::size_t L = c.context, w = c.width, H = c.n_heads, hd = w / H, f = w * c.ffn_mult;
  const auto& T = P.tensors;
  using Mat = std::vector<std::vector<double>>;

  auto layer_norm = [&](const std::vector<double>& x, const std::vector<double>& g, const std::vector<double>& b) {
    double mu = 0, var = 0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
    return y;
  };
  auto linear = [&](const std::vector<double>& x, const distill::Tensor<double>& W, const std::vector<double>& b) {
    std::vector<double> y(W.cols, 0.0);
    for (std::size_t j = 0; j < W.cols; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < W.rows; ++i) s += x[i] * W.data[i * W.cols + j];
      y[j] = s;
    }
    return y;
  };

  Mat x(L, std::vector<double>(w));
  for (std::size_t p = 0; p < L; ++p) {
    const auto id = static_cast<std::size_t>(seq.ids[p]);
    for (std::size_t k = 0; k < w; ++k) x[p][k] = T[0].data[id * w + k] + T[1].data[p * w + k];
  }
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::size_t b = 2 + 12 * l;
    Mat q(L), k(L), v(L);
    for (std::size_t p = 0; p < L; ++p) {
      auto qkv = linear(layer_norm(x[p], T[b].data, T[b + 1].data), T[b + 2], T[b + 3].data);
      q[p].assign(qkv.begin(), qkv.begin() + static_cast<std::ptrdiff_t>(w));
      k[p].assign(qkv.begin() + static_cast<std::ptrdiff_t>(w), qkv.begin() + static_cast<std::ptrdiff_t>(2 * w));
      v[p].assign(qkv.begin() + static_cast<std::ptrdiff_t>(2 * w), qkv.end());
    }
    Mat attn(L, std::vector<double>(w, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> z(L);
        double mx = neg_inf;
        for (std::size_t j = 0; j < L; ++j) {
          double s = 0;
          for (std::size_t t = 0; t < hd; ++t) s += q[i][h * hd + t] * k[j][h * hd + t];
          z[j] = j < seq.content_len ? s / std::sqrt(static_cast<double>(hd)) : neg_inf;
          mx = std::max(mx, z[j]);
        }
        double tot = 0;
        for (auto& e : z) tot += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < L; ++j) {
          for (std::size_t t = 0; t < hd; ++t) attn[i][h * hd + t] += z[j] / tot * v[j][h * hd + t];
        }
      }
    }
    for (std::size_t p = 0; p < L; ++p) {
      auto o = linear(attn[p], T[b + 4], T[b + 5].data);
      for (std::size_t t = 0; t < w; ++t) x[p][t] += o[t];
      auto hid = linear(layer_norm(x[p], T[b + 6].data, T[b + 7].data), T[b + 8], T[b + 9].data);
      for (auto& e : hid) e = 0.5 * e * (1 + std::tanh(0.7978845608028654 * (e + 0.044715 * e * e * e)));
      auto m = linear(hid, T[b + 10], T[b + 11].data);
      for (std::size_t t = 0; t < w; ++t) x[p][t] += m[t];
    }
    (void)f;
  }
  const std::size_t fin = 2 + 12 * c.n_layers;
  auto pooled = layer_norm(x[seq.content_len - 1], T[fin].data, T[fin + 1].data);
  return linear(pooled, T[fin + 2], std::vector<double>(c.out_dim, 0.0));
}

}  // namespace anatomy::testing
