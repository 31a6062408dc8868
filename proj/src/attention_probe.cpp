#include "anatomy/attention_probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "anatomy/error.hpp"
#include "anatomy/rng.hpp"

namespace anatomy::probe {
namespace {

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw ValidationError(std::string(what) + " contains a non-finite value");
  }
}

void check_shapes(std::span<const double> q, const Dense& keys, const Dense& values) {
  if (q.empty() || keys.rows == 0) throw ValidationError("attention needs d >= 1 and n_keys >= 1");
  if (keys.cols != q.size()) {
    throw ValidationError("key width " + std::to_string(keys.cols) + " != query width " +
                          std::to_string(q.size()));
  }
  if (values.rows != keys.rows) {
    throw ValidationError("value rows " + std::to_string(values.rows) + " != key rows " +
                          std::to_string(keys.rows));
  }
  if (keys.values.size() != keys.rows * keys.cols ||
      values.values.size() != values.rows * values.cols) {
    throw ValidationError("matrix storage does not match its shape");
  }
  require_finite(q, "query");
  require_finite(keys.values, "keys");
  require_finite(values.values, "values");
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> mix(std::span<const double> weights, const Dense& values) {
  std::vector<double> out(values.cols, 0.0);
  for (std::size_t r = 0; r < values.rows; ++r) {
    auto row = values.row(r);
    for (std::size_t c = 0; c < values.cols; ++c) out[c] += weights[r] * row[c];
  }
  return out;
}

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (auto& x : out) {
    x = std::exp(x - mx);
    total += x;
  }
  for (auto& x : out) x /= total;
  return out;
}

std::vector<double> attention_logits(std::span<const double> q, const Dense& keys,
                                     double sharpness) {
  const double scale = sharpness / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> z(keys.rows);
  for (std::size_t r = 0; r < keys.rows; ++r) {
    auto k = keys.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) dot += q[c] * k[c];
    z[r] = dot * scale;
  }
  return z;
}

std::vector<double> cross_attention(std::span<const double> q, const Dense& keys,
                                    const Dense& values, double sharpness) {
  check_shapes(q, keys, values);
  if (!(sharpness > 0.0)) throw InvalidArgument("sharpness must be positive");
  return mix(softmax(attention_logits(q, keys, sharpness)), values);
}

std::vector<double> perturbation(std::size_t d, double eps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> n(d);
  for (auto& x : n) x = eps * rng.normal();
  return n;
}

ProbeReport probe(const ProbeConfig& config, std::span<const double> q_teacher, const Dense& keys,
                  const Dense& values) {
  if (!(config.eps >= 0.0)) throw InvalidArgument("eps must be non-negative");
  if (!(config.sharpness > 0.0)) throw InvalidArgument("sharpness must be positive");
  check_shapes(q_teacher, keys, values);

  auto noise = perturbation(q_teacher.size(), config.eps, config.seed);
  std::vector<double> q_student(q_teacher.begin(), q_teacher.end());
  for (std::size_t i = 0; i < q_student.size(); ++i) q_student[i] += noise[i];

  const auto z_t = attention_logits(q_teacher, keys, config.sharpness);
  const auto z_s = attention_logits(q_student, keys, config.sharpness);
  const auto a_t = softmax(z_t);
  const auto a_s = softmax(z_s);
  const auto o_t = mix(a_t, values);
  const auto o_s = mix(a_s, values);

  ProbeReport rep;
  rep.sharpness = config.sharpness;
  rep.delta_query = diff(q_student, q_teacher);
  rep.delta_logits = diff(z_s, z_t);
  rep.delta_output = diff(o_s, o_t);
  rep.input_err = norm2(rep.delta_query);
  rep.logit_err = norm2(rep.delta_logits);
  for (double x : rep.delta_logits) rep.logit_err_inf = std::max(rep.logit_err_inf, std::fabs(x));
  rep.output_err = norm2(rep.delta_output);
  rep.reduction_defined = rep.output_err > 0.0;
  rep.reduction_factor = rep.reduction_defined ? rep.input_err / rep.output_err
                                               : std::numeric_limits<double>::quiet_NaN();
  rep.argmax_flipped = argmax(a_t) != argmax(a_s);
  rep.teacher_max_weight = *std::max_element(a_t.begin(), a_t.end());
  rep.student_max_weight = *std::max_element(a_s.begin(), a_s.end());

  if (z_t.size() >= 2) {
    auto sorted = z_t;
    std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
    rep.logit_gap = sorted[0] - sorted[1];
  } else {
    rep.logit_gap = std::numeric_limits<double>::infinity();
  }
  const double nt = norm2(q_teacher), ns = norm2(q_student);
  double dot = 0.0;
  for (std::size_t i = 0; i < q_student.size(); ++i) dot += q_teacher[i] * q_student[i];
  rep.query_cosine = (nt > 0.0 && ns > 0.0) ? dot / (nt * ns) : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

std::vector<ProbeReport> sharpness_sweep(const ProbeConfig& config,
                                         std::span<const double> q_teacher, const Dense& keys,
                                         const Dense& values, std::span<const double> scales) {
  if (scales.empty()) throw InvalidArgument("sharpness sweep needs at least one scale");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw InvalidArgument("sharpness scales must be positive");
    if (i > 0 && !(scales[i] > scales[i - 1])) {
      throw InvalidArgument("sharpness scales must be strictly ascending");
    }
  }
  std::vector<ProbeReport> out;
  out.reserve(scales.size());
  for (double s : scales) {
    auto cfg = config;
    cfg.sharpness = s;
    out.push_back(probe(cfg, q_teacher, keys, values));
  }
  return out;
}

ProbeInstance random_instance(std::size_t d, std::size_t n_keys, std::uint64_t seed) {
  if (d == 0 || n_keys == 0) throw InvalidArgument("d and n_keys must be at least 1");
  Rng rng(mix_seed(seed, 0x70726f6265ULL));
  ProbeInstance inst;
  inst.query.resize(d);
  for (auto& x : inst.query) x = rng.normal();
  inst.keys = {n_keys, d, std::vector<double>(n_keys * d)};
  for (auto& x : inst.keys.values) x = rng.normal();
  inst.values = {n_keys, d, std::vector<double>(n_keys * d)};
  for (auto& x : inst.values.values) x = rng.normal();
  return inst;
}

}  // namespace anatomy::probe
