#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation as a node holding its value; backward()
// walks the nodes in reverse creation order and accumulates adjoints.
// Scalars are 1x1 matrices. Leaves may reference external storage (model
// parameters) without copying; such storage must outlive the tape.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "anatomy/error.hpp"

namespace anatomy::autodiff {

template <typename T>
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  std::size_t size() const { return data.size(); }
};

struct Var {
  std::size_t id = 0;
};

template <typename T>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  Var leaf(const Tensor<T>& t, bool requires_grad) {
    Node n;
    n.rows = t.rows;
    n.cols = t.cols;
    n.ext = t.data.data();
    n.requires_grad = requires_grad;
    n.op = "leaf";
    return push(std::move(n));
  }

  Var constant(std::size_t rows, std::size_t cols, std::vector<T> values) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(values);
    n.op = "constant";
    if (n.value.size() != rows * cols) throw ValidationError("constant: shape/value mismatch");
    return push(std::move(n));
  }

  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::span<const T> value(Var v) const { return {data(v.id), nodes_[v.id].rows * nodes_[v.id].cols}; }
  std::span<const T> grad(Var v) const { return nodes_[v.id].grad; }
  T scalar(Var v) const { return value(v)[0]; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (rows(loss) != 1 || cols(loss) != 1) throw ValidationError("backward needs a scalar loss");
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.rows * n.cols, T(0));
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      for (T g : n.grad) {
        if (!std::isfinite(g)) {
          throw NumericError(std::string("non-finite gradient at op '") + n.op + "'");
        }
      }
      n.backward();
    }
  }

  // C = A B
  Var matmul(Var a, Var b) {
    const std::size_t m = rows(a), k = cols(a), n = cols(b);
    if (rows(b) != k) throw shape_error("matmul", a, b);
    std::vector<T> out(m * n, T(0));
    const T* A = data(a.id);
    const T* B = data(b.id);
    for (std::size_t i = 0; i < m; ++i) {
      T* c = &out[i * n];
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = A[i * k + p];
        const T* brow = &B[p * n];
        for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
      }
    }
    return emit("matmul", m, n, std::move(out), {a, b}, [this, a, b, m, k, n](std::size_t self) {
      const T* G = nodes_[self].grad.data();
      const T* A = data(a.id);
      const T* B = data(b.id);
      if (needs(a)) {
        T* dA = nodes_[a.id].grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T s = 0;
            const T* g = &G[i * n];
            const T* brow = &B[p * n];
            for (std::size_t j = 0; j < n; ++j) s += g[j] * brow[j];
            dA[i * k + p] += s;
          }
        }
      }
      if (needs(b)) {
        T* dB = nodes_[b.id].grad.data();
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = &G[i * n];
          for (std::size_t p = 0; p < k; ++p) {
            const T aip = A[i * k + p];
            T* d = &dB[p * n];
            for (std::size_t j = 0; j < n; ++j) d[j] += aip * g[j];
          }
        }
      }
    });
  }

  // C = A B^T
  Var matmul_bt(Var a, Var b) {
    const std::size_t m = rows(a), k = cols(a), n = rows(b);
    if (cols(b) != k) throw shape_error("matmul_bt", a, b);
    std::vector<T> out(m * n);
    const T* A = data(a.id);
    const T* B = data(b.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
        out[i * n + j] = s;
      }
    }
    return emit("matmul_bt", m, n, std::move(out), {a, b}, [this, a, b, m, k, n](std::size_t self) {
      const T* G = nodes_[self].grad.data();
      const T* A = data(a.id);
      const T* B = data(b.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T g = G[i * n + j];
          if (needs(a)) {
            T* dA = &nodes_[a.id].grad[i * k];
            for (std::size_t p = 0; p < k; ++p) dA[p] += g * B[j * k + p];
          }
          if (needs(b)) {
            T* dB = &nodes_[b.id].grad[j * k];
            for (std::size_t p = 0; p < k; ++p) dB[p] += g * A[i * k + p];
          }
        }
      }
    });
  }

  Var add(Var a, Var b) { return combine("add", a, b, T(1)); }
  Var sub(Var a, Var b) { return combine("sub", a, b, T(-1)); }

  // Adds a 1 x n row to every row of a.
  Var add_row(Var a, Var bias) {
    const std::size_t m = rows(a), n = cols(a);
    if (rows(bias) != 1 || cols(bias) != n) throw shape_error("add_row", a, bias);
    std::vector<T> out(value(a).begin(), value(a).end());
    const T* B = data(bias.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
    }
    return emit("add_row", m, n, std::move(out), {a, bias}, [this, a, bias, m, n](std::size_t self) {
      const auto& G = nodes_[self].grad;
      if (needs(a)) {
        auto& dA = nodes_[a.id].grad;
        for (std::size_t i = 0; i < m * n; ++i) dA[i] += G[i];
      }
      if (needs(bias)) {
        auto& dB = nodes_[bias.id].grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) dB[j] += G[i * n + j];
        }
      }
    });
  }

  // alpha * a + beta, elementwise.
  Var affine(Var a, T alpha, T beta) {
    std::vector<T> out(value(a).begin(), value(a).end());
    for (auto& x : out) x = alpha * x + beta;
    return emit("affine", rows(a), cols(a), std::move(out), {a}, [this, a, alpha](std::size_t self) {
      const auto& G = nodes_[self].grad;
      auto& dA = nodes_[a.id].grad;
      for (std::size_t i = 0; i < G.size(); ++i) dA[i] += alpha * G[i];
    });
  }

  Var scale(Var a, T alpha) { return affine(a, alpha, T(0)); }

  // Elementwise product of equally shaped operands.
  Var mul(Var a, Var b) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw shape_error("mul", a, b);
    std::vector<T> out(value(a).begin(), value(a).end());
    const T* B = data(b.id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return emit("mul", rows(a), cols(a), std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& G = nodes_[self].grad;
      const T* A = data(a.id);
      const T* B = data(b.id);
      if (needs(a)) {
        for (std::size_t i = 0; i < G.size(); ++i) nodes_[a.id].grad[i] += G[i] * B[i];
      }
      if (needs(b)) {
        for (std::size_t i = 0; i < G.size(); ++i) nodes_[b.id].grad[i] += G[i] * A[i];
      }
    });
  }

  // Elementwise quotient of equally shaped operands.
  Var div(Var a, Var b) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw shape_error("div", a, b);
    std::vector<T> out(value(a).begin(), value(a).end());
    const T* B = data(b.id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= B[i];
    return emit("div", rows(a), cols(a), std::move(out), {a, b}, [this, a, b](std::size_t self) {
      const auto& G = nodes_[self].grad;
      const T* A = data(a.id);
      const T* B = data(b.id);
      if (needs(a)) {
        for (std::size_t i = 0; i < G.size(); ++i) nodes_[a.id].grad[i] += G[i] / B[i];
      }
      if (needs(b)) {
        for (std::size_t i = 0; i < G.size(); ++i) {
          nodes_[b.id].grad[i] -= G[i] * A[i] / (B[i] * B[i]);
        }
      }
    });
  }

  // Rows of `table` selected by ids.
  Var gather(Var table, std::span<const std::int32_t> ids) {
    const std::size_t n = cols(table), vocab = rows(table);
    std::vector<T> out(ids.size() * n);
    const T* E = data(table.id);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto id = static_cast<std::size_t>(ids[r]);
      if (ids[r] < 0 || id >= vocab) {
        throw ValidationError("gather: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(vocab));
      }
      std::copy_n(E + id * n, n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    std::vector<std::int32_t> idx(ids.begin(), ids.end());
    return emit("gather", ids.size(), n, std::move(out), {table},
                [this, table, n, idx = std::move(idx)](std::size_t self) {
                  const auto& G = nodes_[self].grad;
                  auto& dE = nodes_[table.id].grad;
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    const auto base = static_cast<std::size_t>(idx[r]) * n;
                    for (std::size_t j = 0; j < n; ++j) dE[base + j] += G[r * n + j];
                  }
                });
  }

  Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const std::size_t n = cols(a);
    if (r0 >= r1 || r1 > rows(a)) throw ValidationError("slice_rows: bad range");
    const T* A = data(a.id);
    std::vector<T> out(A + r0 * n, A + r1 * n);
    return emit("slice_rows", r1 - r0, n, std::move(out), {a}, [this, a, r0, n](std::size_t self) {
      const auto& G = nodes_[self].grad;
      auto& dA = nodes_[a.id].grad;
      for (std::size_t i = 0; i < G.size(); ++i) dA[r0 * n + i] += G[i];
    });
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const std::size_t m = rows(a), n = cols(a), w = c1 - c0;
    if (c0 >= c1 || c1 > n) throw ValidationError("slice_cols: bad range");
    const T* A = data(a.id);
    std::vector<T> out(m * w);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(A + i * n + c0, w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
    return emit("slice_cols", m, w, std::move(out), {a}, [this, a, c0, m, n, w](std::size_t self) {
      const auto& G = nodes_[self].grad;
      auto& dA = nodes_[a.id].grad;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) dA[i * n + c0 + j] += G[i * w + j];
      }
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no inputs");
    const std::size_t m = rows(parts[0]);
    std::size_t n = 0;
    for (auto p : parts) {
      if (rows(p) != m) throw ValidationError("concat_cols: row mismatch");
      n += cols(p);
    }
    std::vector<T> out(m * n);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t w = cols(p);
      const T* P = data(p.id);
      for (std::size_t i = 0; i < m; ++i) std::copy_n(P + i * w, w, out.begin() + static_cast<std::ptrdiff_t>(i * n + off));
      off += w;
    }
    std::vector<Var> in(parts.begin(), parts.end());
    return emit("concat_cols", m, n, std::move(out), in, [this, in, m, n](std::size_t self) {
      const auto& G = nodes_[self].grad;
      std::size_t off = 0;
      for (auto p : in) {
        const std::size_t w = cols(p);
        if (needs(p)) {
          auto& dP = nodes_[p.id].grad;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < w; ++j) dP[i * w + j] += G[i * n + off + j];
          }
        }
        off += w;
      }
    });
  }

  // Row-wise layer normalization with learned gain and bias (1 x n each).
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const std::size_t m = rows(x), n = cols(x);
    if (rows(gamma) != 1 || cols(gamma) != n || rows(beta) != 1 || cols(beta) != n) {
      throw shape_error("layer_norm", x, gamma);
    }
    const T* X = data(x.id);
    const T* Gm = data(gamma.id);
    const T* Bt = data(beta.id);
    std::vector<T> out(m * n), xhat(m * n), rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
      T mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += X[i * n + j];
      mean /= static_cast<T>(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T d = X[i * n + j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      rstd[i] = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) {
        xhat[i * n + j] = (X[i * n + j] - mean) * rstd[i];
        out[i * n + j] = xhat[i * n + j] * Gm[j] + Bt[j];
      }
    }
    return emit("layer_norm", m, n, std::move(out), {x, gamma, beta},
                [this, x, gamma, beta, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](std::size_t self) {
                  const auto& G = nodes_[self].grad;
                  const T* Gm = data(gamma.id);
                  std::vector<T> dxhat(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const T g = G[i * n + j];
                      if (needs(gamma)) nodes_[gamma.id].grad[j] += g * xhat[i * n + j];
                      if (needs(beta)) nodes_[beta.id].grad[j] += g;
                      dxhat[j] = g * Gm[j];
                      mean_d += dxhat[j];
                      mean_dx += dxhat[j] * xhat[i * n + j];
                    }
                    if (!needs(x)) continue;
                    mean_d /= static_cast<T>(n);
                    mean_dx /= static_cast<T>(n);
                    auto& dX = nodes_[x.id].grad;
                    for (std::size_t j = 0; j < n; ++j) {
                      dX[i * n + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
                    }
                  }
                });
  }

  // Max-subtracted softmax over each row.
  Var softmax_rows(Var x) {
    const std::size_t m = rows(x), n = cols(x);
    const T* X = data(x.id);
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      T mx = X[i * n];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, X[i * n + j]);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] = std::exp(X[i * n + j] - mx);
        total += out[i * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
    }
    return emit("softmax", m, n, std::move(out), {x}, [this, x, m, n](std::size_t self) {
      const auto& G = nodes_[self].grad;
      const auto& Y = nodes_[self].value;
      auto& dX = nodes_[x.id].grad;
      for (std::size_t i = 0; i < m; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * Y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) dX[i * n + j] += Y[i * n + j] * (G[i * n + j] - s);
      }
    });
  }

  // GELU, tanh approximation.
  Var gelu(Var x) {
    constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
    constexpr T kA = static_cast<T>(0.044715);
    std::vector<T> out(value(x).begin(), value(x).end());
    for (auto& v : out) v = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
    return emit("gelu", rows(x), cols(x), std::move(out), {x}, [this, x, kC, kA](std::size_t self) {
      const auto& G = nodes_[self].grad;
      const T* X = data(x.id);
      auto& dX = nodes_[x.id].grad;
      for (std::size_t i = 0; i < G.size(); ++i) {
        const T v = X[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
        dX[i] += G[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    });
  }

  // Sum of elementwise products, as a 1x1 result.
  Var dot(Var a, Var b) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw shape_error("dot", a, b);
    const T* A = data(a.id);
    const T* B = data(b.id);
    T s = 0;
    const std::size_t len = rows(a) * cols(a);
    for (std::size_t i = 0; i < len; ++i) s += A[i] * B[i];
    return emit("dot", 1, 1, {s}, {a, b}, [this, a, b, len](std::size_t self) {
      const T g = nodes_[self].grad[0];
      const T* A = data(a.id);
      const T* B = data(b.id);
      if (needs(a)) {
        for (std::size_t i = 0; i < len; ++i) nodes_[a.id].grad[i] += g * B[i];
      }
      if (needs(b)) {
        for (std::size_t i = 0; i < len; ++i) nodes_[b.id].grad[i] += g * A[i];
      }
    });
  }

  // Euclidean norm of all entries, as a 1x1 result.
  Var l2_norm(Var a) {
    const T* A = data(a.id);
    const std::size_t len = rows(a) * cols(a);
    T s = 0;
    for (std::size_t i = 0; i < len; ++i) s += A[i] * A[i];
    return emit("l2_norm", 1, 1, {std::sqrt(s)}, {a}, [this, a, len](std::size_t self) {
      const T g = nodes_[self].grad[0];
      const T nrm = nodes_[self].value[0];
      const T* A = data(a.id);
      for (std::size_t i = 0; i < len; ++i) nodes_[a.id].grad[i] += g * A[i] / nrm;
    });
  }

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> value;
    const T* ext = nullptr;
    std::vector<T> grad;
    std::function<void()> backward;
    bool requires_grad = false;
    const char* op = "";
  };

  const T* data(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext != nullptr ? n.ext : n.value.data();
  }
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  ValidationError shape_error(const char* op, Var a, Var b) const {
    return ValidationError(std::string(op) + ": incompatible shapes " + std::to_string(rows(a)) +
                           "x" + std::to_string(cols(a)) + " and " + std::to_string(rows(b)) +
                           "x" + std::to_string(cols(b)));
  }

  template <typename Fn>
  Var emit(const char* op, std::size_t r, std::size_t c, std::vector<T> out,
           std::initializer_list<Var> inputs, Fn&& fn) {
    return emit(op, r, c, std::move(out), std::vector<Var>(inputs), std::forward<Fn>(fn));
  }

  template <typename Fn>
  Var emit(const char* op, std::size_t r, std::size_t c, std::vector<T> out,
           const std::vector<Var>& inputs, Fn&& fn) {
    for (T v : out) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
    Node n;
    n.rows = r;
    n.cols = c;
    n.value = std::move(out);
    n.op = op;
    for (auto in : inputs) n.requires_grad = n.requires_grad || needs(in);
    const std::size_t self = nodes_.size();
    if (n.requires_grad) n.backward = [fn = std::forward<Fn>(fn), self]() { fn(self); };
    return push(std::move(n));
  }

  Var combine(const char* op, Var a, Var b, T sign) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) throw shape_error(op, a, b);
    std::vector<T> out(value(a).begin(), value(a).end());
    const T* B = data(b.id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * B[i];
    return emit(op, rows(a), cols(a), std::move(out), {a, b}, [this, a, b, sign](std::size_t self) {
      const auto& G = nodes_[self].grad;
      if (needs(a)) {
        for (std::size_t i = 0; i < G.size(); ++i) nodes_[a.id].grad[i] += G[i];
      }
      if (needs(b)) {
        for (std::size_t i = 0; i < G.size(); ++i) nodes_[b.id].grad[i] += sign * G[i];
      }
    });
  }

  std::vector<Node> nodes_;
};

}  // namespace anatomy::autodiff
