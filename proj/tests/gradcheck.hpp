#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "anatomy/distill.hpp"

namespace anatomy::testing {

struct TensorCheck {
  std::string name;
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double norm = 0.0;
};

// Central differences of the batch objective against reverse-mode gradients,
// one entry per parameter tensor. Runs in 64-bit arithmetic.
inline std::vector<TensorCheck> check_gradients(distill::EncoderParameters<double> params,
                                                std::span<const distill::Example> batch,
                                                const distill::LossWeights& weights, double h = 1e-3) {
  const auto analytic = distill::grad(params, batch, weights);
  std::vector<TensorCheck> out;
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& data = params.tensors[t].data;
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = distill::evaluate(params, batch, weights).total;
      data[i] = keep - h;
      const double down = distill::evaluate(params, batch, weights).total;
      data[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.grads[t].data[i];
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    out.push_back({params.tensors[t].name, scale > 0 ? std::sqrt(diff) / scale : 0.0, std::sqrt(na)});
  }
  return out;
}

}  // namespace anatomy::testing
