#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace anatomy::probe {

// Row-major double matrix for keys and values.
struct Dense {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

// sharpness * K q / sqrt(d)
std::vector<double> attention_logits(std::span<const double> q, const Dense& keys,
                                     double sharpness = 1.0);

// softmax(sharpness * q K^T / sqrt(d)) V
std::vector<double> cross_attention(std::span<const double> q, const Dense& keys,
                                    const Dense& values, double sharpness = 1.0);

struct ProbeConfig {
  std::size_t d = 0;
  std::size_t n_keys = 0;
  double eps = 0.0;
  double sharpness = 1.0;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  double sharpness = 1.0;
  double input_err = 0.0;   // ||dq||_2
  double logit_err = 0.0;   // ||dz||_2
  double logit_err_inf = 0.0;
  double output_err = 0.0;  // ||d softmax(z) V||_2
  double reduction_factor = 0.0;
  bool reduction_defined = false;  // output_err > 0
  bool argmax_flipped = false;
  double teacher_max_weight = 0.0;
  double student_max_weight = 0.0;
  double logit_gap = 0.0;           // top-1 minus top-2 teacher logit
  double query_cosine = 0.0;        // cos(q_teacher, q_student)
  std::vector<double> delta_query;
  std::vector<double> delta_logits;
  std::vector<double> delta_output;
};

// Isotropic Gaussian noise of standard deviation eps, drawn from `seed`.
std::vector<double> perturbation(std::size_t d, double eps, std::uint64_t seed);

ProbeReport probe(const ProbeConfig& config, std::span<const double> q_teacher, const Dense& keys,
                  const Dense& values);

// One probe per sharpness scale (ascending, positive), sharing the noise draw.
std::vector<ProbeReport> sharpness_sweep(const ProbeConfig& config,
                                         std::span<const double> q_teacher, const Dense& keys,
                                         const Dense& values, std::span<const double> scales);

// Standard-normal query, keys and values for a synthetic probe.
struct ProbeInstance {
  std::vector<double> query;
  Dense keys;
  Dense values;
};

ProbeInstance random_instance(std::size_t d, std::size_t n_keys, std::uint64_t seed);

}  // namespace anatomy::probe
