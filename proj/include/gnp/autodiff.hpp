/*
 * Copyright 2026 The GNP Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gnp/tensor.hpp"

namespace gnp {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients keyed by parameter id.
using Gradients = std::map<std::size_t, Tensor>;

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so
/// the node list is already a topological order of the graph.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    nodes_.push_back(Node{"constant", {}, std::move(value), {}, false, -1, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var parameter(Tensor value, std::size_t param_id, bool requires_grad = true) {
    nodes_.push_back(Node{"parameter", {}, std::move(value), {}, requires_grad,
                          static_cast<long>(param_id), {}});
    return Var(this, nodes_.size() - 1);
  }

  /// Appends an op node. The backward function is dropped when no parent
  /// requires a gradient.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> parents,
             BackwardFn backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_[p].requires_grad;
    nodes_.push_back(Node{std::string(op), std::move(parents), std::move(value),
                          {}, needs, -1,
                          needs ? std::move(backward) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& parents(std::size_t id) const {
    return nodes_.at(id).parents;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
      n.grad = Tensor(n.value.shape());
    }
    return n.grad;
  }

  /// Number of op nodes whose backward function ran in the last backward().
  std::size_t last_backward_visits() const noexcept { return visits_; }

  /// Reverse sweep from a scalar loss. Every parameter node appears in the
  /// result; those not reachable from the loss get zeros.
  Gradients backward(Var loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " +
                       shape_str(loss.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    std::vector<char> reached(nodes_.size(), 0);
    grad(loss.id())[0] = 1.0;
    reached[loss.id()] = 1;
    visits_ = 0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!reached[id] || !n.backward) continue;
      for (auto p : n.parents) {
        if (nodes_[p].requires_grad) reached[p] = 1;
      }
      n.backward(*this, id);
      ++visits_;
    }
    Gradients out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const auto& n = nodes_[id];
      if (n.param_id < 0) continue;
      auto key = static_cast<std::size_t>(n.param_id);
      if (reached[id] && n.requires_grad) {
        out.insert_or_assign(key, grad(id));
      } else if (!out.contains(key)) {
        out.emplace(key, Tensor(n.value.shape()));
      }
    }
    return out;
  }

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    long param_id = -1;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace ad {

namespace detail {

inline void require_same_shape(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch", a.shape(), b.shape());
  }
}

inline void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument("vars recorded on different tapes");
  }
}

// Elementwise unary op given f and f'(x, f(x)).
template <class F, class DF>
Var unary(std::string_view op, const Var& a, F f, DF df) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const auto ai = a.id();
  return tape.record(op, std::move(out), {ai}, [ai, df](Tape& t, std::size_t self) {
    const Tensor& x = t.value(ai);
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ai);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

enum class Activation { relu, leaky_relu, identity };

inline constexpr double kLeakySlope = 0.1;

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  out += b.value();
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("add", std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) t.grad(bi) += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("sub", std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ai)) t.grad(ai) += g;
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("mul", std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; },
                       [c](double, double) { return c; });
}

/// a * s for a scalar var s.
inline Var scale_by(const Var& a, const Var& s) {
  detail::require_same_tape(a, s);
  if (s.value().size() != 1) throw ShapeError("scale_by: scalar expected", s.shape(), Shape{});
  const double c = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  const auto ai = a.id(), si = s.id();
  return a.tape().record("scale_by", std::move(out), {ai, si}, [ai, si](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ai);
    const double c = t.value(si)[0];
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    }
    if (t.requires_grad(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad(si)[0] += acc;
    }
  });
}

inline Var exp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline double softplus_value(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline Var softplus(const Var& a) {
  return detail::unary("softplus", a, softplus_value, [](double x, double) {
    return 1.0 / (1.0 + std::exp(-x));
  });
}

inline double activate(Activation fn, double x) {
  switch (fn) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::identity: return x;
  }
  return x;
}

inline Var pointwise(const Var& a, Activation fn) {
  if (fn == Activation::identity) {
    return detail::unary("identity", a, [](double x) { return x; },
                         [](double, double) { return 1.0; });
  }
  return detail::unary(fn == Activation::relu ? "relu" : "leaky_relu", a,
                       [fn](double x) { return activate(fn, x); },
                       [fn](double x, double) {
                         if (x > 0.0) return 1.0;
                         return fn == Activation::relu ? 0.0 : kLeakySlope;
                       });
}

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const auto ai = a.id();
  return a.tape().record("sum", Tensor::scalar(acc), {ai}, [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ai).data()) v += g;
  });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ai = a.id();
  return a.tape().record("reshape", std::move(out), {ai}, [ai](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Rank-2 matrix product.
inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: incompatible shapes", A.shape(), B.shape());
  }
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("matmul", std::move(out), {ai, bi}, [ai, bi, n, k, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ai);
    const Tensor& B = t.value(bi);
    if (t.requires_grad(ai)) {
      // dA = G B^T
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g.data().data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B.data().data() + p * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(bi)) {
      // dB = A^T G
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g.data().data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = &gb[p * m];
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

inline Var transpose(const Var& a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ShapeError("transpose: rank-2 expected", A.shape(), Shape{0, 0});
  const std::size_t n = A.dim(0), m = A.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = A[i * m + j];
  const auto ai = a.id();
  return a.tape().record("transpose", std::move(out), {ai}, [ai, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
  });
}

/// Stacks equally shaped tensors along a new trailing channel axis.
inline Var stack_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_channels: no inputs");
  const Shape& s = parts.front().shape();
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    detail::require_same_shape("stack_channels", parts.front(), p);
  }
  const std::size_t c = parts.size();
  const std::size_t n = shape_numel(s);
  Shape os = s;
  os.push_back(c);
  Tensor out(os);
  std::vector<std::size_t> ids;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Tensor& v = parts[ch].value();
    for (std::size_t i = 0; i < n; ++i) out[i * c + ch] = v[i];
    ids.push_back(parts[ch].id());
  }
  return parts.front().tape().record("stack_channels", std::move(out), ids,
      [ids, n, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t ch = 0; ch < c; ++ch) {
          if (!t.requires_grad(ids[ch])) continue;
          Tensor& gp = t.grad(ids[ch]);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[i * c + ch];
        }
      });
}

/// Extracts one channel of the trailing axis.
inline Var channel(const Var& a, std::size_t ch) {
  const Shape& s = a.shape();
  if (s.empty() || ch >= s.back()) {
    throw ShapeError("channel index " + std::to_string(ch) + " out of range for " + shape_str(s));
  }
  const std::size_t c = s.back();
  Shape os(s.begin(), s.end() - 1);
  const std::size_t n = shape_numel(os);
  Tensor out(os);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * c + ch];
  const auto ai = a.id();
  return a.tape().record("channel", std::move(out), {ai}, [ai, n, c, ch](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ai);
    for (std::size_t i = 0; i < n; ++i) ga[i * c + ch] += g[i];
  });
}

/// a / (b + eps), elementwise.
inline Var divide(const Var& a, const Var& b, double eps) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("divide", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i] + eps;
  const auto ai = a.id(), bi = b.id();
  return a.tape().record("divide", std::move(out), {ai, bi}, [ai, bi, eps](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      Tensor& ga = t.grad(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (bv[i] + eps);
    }
    if (t.requires_grad(bi)) {
      Tensor& gb = t.grad(bi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = bv[i] + eps;
        gb[i] -= g[i] * av[i] / (d * d);
      }
    }
  });
}

/// Rows of B scaled by constants: diag(w) B.
inline Var scale_rows(const Var& b, std::span<const double> w) {
  const Tensor& B = b.value();
  if (B.rank() != 2 || B.dim(0) != w.size()) {
    throw ShapeError("scale_rows: row count mismatch", B.shape(), Shape{w.size()});
  }
  const std::size_t n = B.dim(0), m = B.dim(1);
  Tensor out = B;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] *= w[i];
  std::vector<double> weights(w.begin(), w.end());
  const auto bi = b.id();
  return b.tape().record("scale_rows", std::move(out), {bi},
      [bi, n, m, weights = std::move(weights)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gb = t.grad(bi);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[i * m + j] += g[i * m + j] * weights[i];
      });
}

/// Square matrix with v on its diagonal.
inline Var diag_embed(const Var& v) {
  const Tensor& x = v.value();
  if (x.rank() != 1) throw ShapeError("diag_embed: vector expected", x.shape(), Shape{0});
  const std::size_t n = x.size();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = x[i];
  const auto vi = v.id();
  return v.tape().record("diag_embed", std::move(out), {vi}, [vi, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gv = t.grad(vi);
    for (std::size_t i = 0; i < n; ++i) gv[i] += g[i * n + i];
  });
}

/// K + s I for a scalar var s.
inline Var add_diag(const Var& k, const Var& s) {
  detail::require_same_tape(k, s);
  const Tensor& K = k.value();
  if (K.rank() != 2 || K.dim(0) != K.dim(1)) throw ShapeError("add_diag: square matrix expected", K.shape(), Shape{});
  const std::size_t n = K.dim(0);
  Tensor out = K;
  const double sv = s.value().item();
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] += sv;
  const auto ki = k.id(), si = s.id();
  return k.tape().record("add_diag", std::move(out), {ki, si}, [ki, si, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ki)) t.grad(ki) += g;
    if (t.requires_grad(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += g[i * n + i];
      t.grad(si)[0] += acc;
    }
  });
}

/// Matrix of EQ bumps, out[a][k] = exp(-(points[a] - nodes[k])^2 / (2 l^2)),
/// differentiable in the scalar lengthscale l.
inline Var bump_matrix(std::span<const double> points, std::span<const double> nodes,
                       const Var& lengthscale) {
  const double l = lengthscale.value().item();
  if (!(l > 0.0)) throw std::invalid_argument("bump_matrix: lengthscale must be positive");
  const std::size_t n = points.size(), m = nodes.size();
  Tensor out({n, m});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t k = 0; k < m; ++k) {
      const double d = points[a] - nodes[k];
      out[a * m + k] = std::exp(-0.5 * d * d / (l * l));
    }
  std::vector<double> p(points.begin(), points.end());
  std::vector<double> z(nodes.begin(), nodes.end());
  const auto li = lengthscale.id();
  return lengthscale.tape().record("bump_matrix", std::move(out), {li},
      [li, n, m, p = std::move(p), z = std::move(z)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const double l = t.value(li)[0];
        double acc = 0.0;
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t k = 0; k < m; ++k) {
            const double d = p[a] - z[k];
            acc += g[a * m + k] * y[a * m + k] * d * d / (l * l * l);
          }
        t.grad(li)[0] += acc;
      });
}

}  // namespace ad
}  // namespace gnp
