// Copyright 2026 The lmkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tape-based reverse-mode autodiff over dense row-major matrices.
//
// A Graph records every op applied during one forward pass; backward()
// replays the tape in reverse. Parameters are leaves whose gradients are
// accumulated straight into Parameter::grad, so several graphs (one per
// sentence, say) can contribute to one optimizer step.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"

namespace lmkit::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool decay = true;  // subject to weight decay

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols, bool d = true)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)),
        decay(d) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

template <class T>
void init_normal(Parameter<T>& p, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
  }
}

template <class T>
void init_uniform(Parameter<T>& p, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class T>
class Graph {
 public:
  using Matrix = Mat<T>;
  using Backward = std::function<void(Graph&, const Matrix&)>;

  // `rng` is needed only when training with dropout.
  explicit Graph(bool training = false, Rng* rng = nullptr) : training_(training), rng_(rng) {}

  bool training() const { return training_; }
  void set_training(bool training, Rng* rng) {
    training_ = training;
    rng_ = rng;
  }

  Var param(Parameter<T>& p) {
    Node n;
    n.value = p.value;
    n.param = &p;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Matrix m) {
    Node n;
    n.value = std::move(m);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  T scalar(Var v) const { return value(v)(0, 0); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of v, zero-initialized on first use.
  Matrix& grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.param) {
      if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols()) {
        n.param->zero_grad();
      }
      return n.param->grad;
    }
    if (!n.has_grad) {
      n.grad.setZero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  template <class Expr>
  void accumulate(Var v, const Expr& delta) {
    if (needs_grad(v)) grad(v) += delta;
  }

  // Records an op whose value was computed by the caller. `back` receives
  // the output gradient and must accumulate into the inputs.
  Var custom(std::initializer_list<Var> inputs, Matrix value, Backward back) {
    return push(std::vector<Var>(inputs), std::move(value), std::move(back));
  }
  Var custom(const std::vector<Var>& inputs, Matrix value, Backward back) {
    return push(inputs, std::move(value), std::move(back));
  }

  // Seeds d(loss)/d(loss) = 1 and runs the tape backwards.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw InvariantError("backward: loss must be a scalar");
    grad(loss).setOnes();
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.back || !n.has_grad) continue;
      const Matrix g = std::move(n.grad);
      n.has_grad = false;
      n.back(*this, g);
    }
  }

  // ------------------------------------------------------------ elementwise

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    return push({a, b}, value(a) + value(b), [a, b](Graph& g, const Matrix& d) {
      g.accumulate(a, d);
      g.accumulate(b, d);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    return push({a, b}, value(a) - value(b), [a, b](Graph& g, const Matrix& d) {
      g.accumulate(a, d);
      g.accumulate(b, -d);
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    return push({a, b}, value(a).cwiseProduct(value(b)), [a, b](Graph& g, const Matrix& d) {
      if (g.needs_grad(a)) g.grad(a) += d.cwiseProduct(g.value(b));
      if (g.needs_grad(b)) g.grad(b) += d.cwiseProduct(g.value(a));
    });
  }

  Var scale(Var a, T s) {
    return push({a}, value(a) * s, [a, s](Graph& g, const Matrix& d) { g.accumulate(a, d * s); });
  }

  // Adds a 1 x m row to every row of a.
  Var add_bias(Var a, Var bias) {
    if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols()) {
      throw InvariantError("add_bias: shape mismatch");
    }
    Matrix out = value(a);
    out.rowwise() += value(bias).row(0);
    return push({a, bias}, std::move(out), [a, bias](Graph& g, const Matrix& d) {
      g.accumulate(a, d);
      if (g.needs_grad(bias)) g.grad(bias) += d.colwise().sum();
    });
  }

  Var tanh(Var a) {
    Matrix out = value(a).array().tanh().matrix();
    const int id = static_cast<int>(nodes_.size());
    return push({a}, std::move(out), [a, id](Graph& g, const Matrix& d) {
      const auto& y = g.nodes_[id].value;
      g.accumulate(a, d.cwiseProduct((1 - y.array().square()).matrix()));
    });
  }

  Var sigmoid(Var a) {
    Matrix out = (1 / (1 + (-value(a).array()).exp())).matrix();
    const int id = static_cast<int>(nodes_.size());
    return push({a}, std::move(out), [a, id](Graph& g, const Matrix& d) {
      const auto& y = g.nodes_[id].value;
      g.accumulate(a, d.cwiseProduct((y.array() * (1 - y.array())).matrix()));
    });
  }

  Var relu(Var a) {
    return push({a}, value(a).cwiseMax(T(0)), [a](Graph& g, const Matrix& d) {
      g.accumulate(a, d.cwiseProduct((g.value(a).array() > 0).template cast<T>().matrix()));
    });
  }

  // Exact (erf) GELU.
  Var gelu(Var a) {
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    Matrix out = value(a).unaryExpr(
        [inv_sqrt2](T x) { return static_cast<T>(0.5) * x * (1 + std::erf(x * inv_sqrt2)); });
    return push({a}, std::move(out), [a, inv_sqrt2](Graph& g, const Matrix& d) {
      if (!g.needs_grad(a)) return;
      const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
      Matrix dx = g.value(a).unaryExpr([&](T x) {
        return static_cast<T>(0.5) * (1 + std::erf(x * inv_sqrt2)) +
               x * inv_sqrt2pi * std::exp(static_cast<T>(-0.5) * x * x);
      });
      g.grad(a) += d.cwiseProduct(dx);
    });
  }

  // Inverted dropout; identity outside training or when p == 0.
  Var dropout(Var a, double p) {
    if (!training_ || p <= 0.0) return a;
    if (!rng_) throw InvariantError("dropout: training graph without rng");
    const T keep = static_cast<T>(1.0 - p);
    Matrix mask(value(a).rows(), value(a).cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng_->uniform() < p ? T(0) : T(1) / keep;
    }
    Matrix out = value(a).cwiseProduct(mask);
    return push({a}, std::move(out), [a, mask = std::move(mask)](Graph& g, const Matrix& d) {
      g.accumulate(a, d.cwiseProduct(mask));
    });
  }

  // ----------------------------------------------------------------- linear

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw InvariantError("matmul: shape mismatch");
    Matrix out = value(a) * value(b);
    return push({a, b}, std::move(out), [a, b](Graph& g, const Matrix& d) {
      if (g.needs_grad(a)) g.grad(a).noalias() += d * g.value(b).transpose();
      if (g.needs_grad(b)) g.grad(b).noalias() += g.value(a).transpose() * d;
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) throw InvariantError("matmul_nt: shape mismatch");
    Matrix out = value(a) * value(b).transpose();
    return push({a, b}, std::move(out), [a, b](Graph& g, const Matrix& d) {
      if (g.needs_grad(a)) g.grad(a).noalias() += d * g.value(b);
      if (g.needs_grad(b)) g.grad(b).noalias() += d.transpose() * g.value(a);
    });
  }

  // x W + b
  Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

  // --------------------------------------------------------------- reshaping

  // Row i of the result is row idx[i] of a (embedding lookup when a is a
  // parameter table).
  Var gather_rows(Var a, std::vector<int> idx) {
    const Matrix& src = value(a);
    Matrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= src.rows()) throw InvariantError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) = src.row(idx[i]);
    }
    return push({a}, std::move(out), [a, idx = std::move(idx)](Graph& g, const Matrix& d) {
      if (!g.needs_grad(a)) return;
      Matrix& ga = g.grad(a);
      for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += d.row(static_cast<Eigen::Index>(i));
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index rows = value(parts.at(0)).rows(), cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw InvariantError("concat_cols: row mismatch");
      cols += value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(parts, std::move(out), [parts](Graph& g, const Matrix& d) {
      Eigen::Index c = 0;
      for (Var p : parts) {
        const auto w = g.value(p).cols();
        g.accumulate(p, d.middleCols(c, w));
        c += w;
      }
    });
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    Matrix out = value(a).middleCols(start, count);
    return push({a}, std::move(out), [a, start, count](Graph& g, const Matrix& d) {
      if (g.needs_grad(a)) g.grad(a).middleCols(start, count) += d;
    });
  }

  // Sum of all entries, as a 1 x 1 value.
  Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return push({a}, std::move(out), [a](Graph& g, const Matrix& d) {
      if (g.needs_grad(a)) g.grad(a).array() += d(0, 0);
    });
  }

  // Mean over rows, as 1 x cols.
  Var mean_rows(Var a) {
    const auto n = value(a).rows();
    Matrix out = value(a).colwise().mean();
    return push({a}, std::move(out), [a, n](Graph& g, const Matrix& d) {
      if (g.needs_grad(a)) g.grad(a).rowwise() += d.row(0) / static_cast<T>(n);
    });
  }

  // ---------------------------------------------------------- normalization

  // Per-row layer normalization with gain and bias rows.
  Var layer_norm(Var x, Var gain, Var bias, T eps = static_cast<T>(1e-12)) {
    const Matrix& xv = value(x);
    const auto n = xv.rows(), h = xv.cols();
    Matrix xhat(n, h);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mu = xv.row(i).mean();
      const T var = (xv.row(i).array() - mu).square().mean();
      rstd(i) = 1 / std::sqrt(var + eps);
      xhat.row(i) = (xv.row(i).array() - mu) * rstd(i);
    }
    Matrix out = xhat;
    out.array().rowwise() *= value(gain).row(0).array();
    out.rowwise() += value(bias).row(0);
    return push({x, gain, bias}, std::move(out),
                [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](
                    Graph& g, const Matrix& d) {
                  if (g.needs_grad(gain)) g.grad(gain) += d.cwiseProduct(xhat).colwise().sum();
                  if (g.needs_grad(bias)) g.grad(bias) += d.colwise().sum();
                  if (!g.needs_grad(x)) return;
                  Matrix dxhat = d;
                  dxhat.array().rowwise() *= g.value(gain).row(0).array();
                  Matrix& gx = g.grad(x);
                  for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                    const T m1 = dxhat.row(i).mean();
                    const T m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                    gx.row(i).array() +=
                        rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                  }
                });
  }

  // ------------------------------------------------------------------ losses

  // Mean softmax cross-entropy over rows whose target is not `ignore`.
  // With no counted rows the loss is 0 with zero gradient.
  Var softmax_cross_entropy(Var logits, std::vector<int> targets, int ignore = -1) {
    const Matrix& z = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != z.rows()) {
      throw InvariantError("softmax_cross_entropy: target count mismatch");
    }
    Matrix probs(z.rows(), z.cols());
    double total = 0.0;
    int counted = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const int t = targets[i];
      if (t == ignore) continue;
      if (t < 0 || t >= z.cols()) throw InvariantError("softmax_cross_entropy: target out of range");
      const T m = z.row(i).maxCoeff();
      probs.row(i) = (z.row(i).array() - m).exp();
      const T s = probs.row(i).sum();
      probs.row(i) /= s;
      total += static_cast<double>(m + std::log(s) - z(i, t));
      ++counted;
    }
    Matrix out(1, 1);
    out(0, 0) = counted ? static_cast<T>(total / counted) : T(0);
    return push({logits}, std::move(out),
                [logits, targets = std::move(targets), probs = std::move(probs), counted,
                 ignore](Graph& g, const Matrix& d) {
                  if (!counted || !g.needs_grad(logits)) return;
                  Matrix& gl = g.grad(logits);
                  const T s = d(0, 0) / static_cast<T>(counted);
                  for (Eigen::Index i = 0; i < gl.rows(); ++i) {
                    if (targets[i] == ignore) continue;
                    gl.row(i) += s * probs.row(i);
                    gl(i, targets[i]) -= s;
                  }
                });
  }

  // ---------------------------------------------------------- fused blocks

  // Multi-head scaled dot-product attention. q, k, v hold `batch` stacked
  // sequences of `len` rows each. Keys at positions >= key_lengths[b] are
  // masked out. Attention probabilities (before dropout) are stored in
  // `probs` as batch*heads matrices of len x len when given.
  Var attention(Var q, Var k, Var v, int batch, int len, int heads,
                const std::vector<int>& key_lengths, double dropout_p = 0.0,
                std::vector<Matrix>* probs = nullptr) {
    const Matrix& qv = value(q);
    const Matrix& kv = value(k);
    const Matrix& vv = value(v);
    const auto hidden = qv.cols();
    if (hidden % heads != 0) throw InvariantError("attention: hidden not divisible by heads");
    if (qv.rows() != batch * len || kv.rows() != qv.rows() || vv.rows() != qv.rows()) {
      throw InvariantError("attention: shape mismatch");
    }
    const int dh = static_cast<int>(hidden / heads);
    const T inv = 1 / std::sqrt(static_cast<T>(dh));
    const bool drop = training_ && dropout_p > 0.0;
    if (drop && !rng_) throw InvariantError("attention: training graph without rng");

    std::vector<Matrix> p_all(static_cast<std::size_t>(batch * heads));
    std::vector<Matrix> m_all(drop ? p_all.size() : 0);
    Matrix out(qv.rows(), hidden);
    for (int b = 0; b < batch; ++b) {
      const int kl = key_lengths.at(b);
      if (kl < 1 || kl > len) throw InvariantError("attention: bad key length");
      for (int h = 0; h < heads; ++h) {
        const auto qb = qv.block(b * len, h * dh, len, dh);
        const auto kb = kv.block(b * len, h * dh, kl, dh);
        Matrix s = (qb * kb.transpose()) * inv;
        Matrix p = Matrix::Zero(len, len);
        for (int i = 0; i < len; ++i) {
          const T m = s.row(i).maxCoeff();
          auto e = (s.row(i).array() - m).exp();
          p.row(i).head(kl) = e / e.sum();
        }
        Matrix pd = p;
        if (drop) {
          Matrix mask(len, len);
          const T keep = static_cast<T>(1.0 - dropout_p);
          for (Eigen::Index i = 0; i < mask.size(); ++i) {
            mask.data()[i] = rng_->uniform() < dropout_p ? T(0) : T(1) / keep;
          }
          pd = p.cwiseProduct(mask);
          m_all[b * heads + h] = std::move(mask);
        }
        out.block(b * len, h * dh, len, dh).noalias() = pd * vv.block(b * len, h * dh, len, dh);
        p_all[b * heads + h] = std::move(p);
      }
    }
    if (probs) *probs = p_all;
    return push(
        {q, k, v}, std::move(out),
        [=, p_all = std::move(p_all), m_all = std::move(m_all)](Graph& g, const Matrix& d) {
          const Matrix& qv = g.value(q);
          const Matrix& kv = g.value(k);
          const Matrix& vv = g.value(v);
          Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
          Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
          Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
          for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < heads; ++h) {
              const Matrix& p = p_all[b * heads + h];
              const auto db = d.block(b * len, h * dh, len, dh);
              Matrix pd = drop ? Matrix(p.cwiseProduct(m_all[b * heads + h])) : p;
              dv.block(b * len, h * dh, len, dh).noalias() += pd.transpose() * db;
              Matrix dp = db * vv.block(b * len, h * dh, len, dh).transpose();
              if (drop) dp = dp.cwiseProduct(m_all[b * heads + h]);
              Matrix ds = p.cwiseProduct(dp);
              for (int i = 0; i < len; ++i) {
                const T r = ds.row(i).sum();
                ds.row(i) -= r * p.row(i);
              }
              ds *= inv;
              dq.block(b * len, h * dh, len, dh).noalias() +=
                  ds * kv.block(b * len, h * dh, len, dh);
              dk.block(b * len, h * dh, len, dh).noalias() +=
                  ds.transpose() * qv.block(b * len, h * dh, len, dh);
            }
          }
          g.accumulate(q, dq);
          g.accumulate(k, dk);
          g.accumulate(v, dv);
        });
  }

  // Single-layer LSTM over `steps` time steps of `batch` rows each; row
  // t * batch + b of x is the input of sequence b at time t. Gate order is
  // input, forget, cell, output. With `reverse` the sequence is consumed
  // from the last step to the first. h0 / c0 may be invalid Vars (zeros).
  // The final hidden and cell states are written to *h_last / *c_last.
  Var lstm(Var x, Var w_in, Var w_rec, Var bias, int batch, bool reverse = false,
           Var h0 = {}, Var c0 = {}, Matrix* h_last = nullptr, Matrix* c_last = nullptr) {
    const Matrix& xv = value(x);
    const auto hidden = value(w_rec).rows();
    if (value(w_rec).cols() != 4 * hidden || value(w_in).cols() != 4 * hidden ||
        value(w_in).rows() != xv.cols() || xv.rows() % batch != 0) {
      throw InvariantError("lstm: shape mismatch");
    }
    const int steps = static_cast<int>(xv.rows() / batch);
    Matrix z = xv * value(w_in);
    z.rowwise() += value(bias).row(0);
    const Matrix& wr = value(w_rec);

    Matrix gates(xv.rows(), 4 * hidden);  // activated i, f, g, o
    Matrix cells(xv.rows(), hidden);
    Matrix out(xv.rows(), hidden);
    Matrix h = h0.valid() ? value(h0) : Matrix::Zero(batch, hidden);
    Matrix c = c0.valid() ? value(c0) : Matrix::Zero(batch, hidden);
    for (int s = 0; s < steps; ++s) {
      const int t = reverse ? steps - 1 - s : s;
      Matrix a = z.middleRows(t * batch, batch);
      a.noalias() += h * wr;
      auto sig = [](auto m) { return (1 / (1 + (-m.array()).exp())).matrix(); };
      const Matrix ig = sig(a.leftCols(hidden));
      const Matrix fg = sig(a.middleCols(hidden, hidden));
      const Matrix gg = a.middleCols(2 * hidden, hidden).array().tanh().matrix();
      const Matrix og = sig(a.rightCols(hidden));
      c = fg.cwiseProduct(c) + ig.cwiseProduct(gg);
      h = og.cwiseProduct(c.array().tanh().matrix());
      auto gr = gates.middleRows(t * batch, batch);
      gr.leftCols(hidden) = ig;
      gr.middleCols(hidden, hidden) = fg;
      gr.middleCols(2 * hidden, hidden) = gg;
      gr.rightCols(hidden) = og;
      cells.middleRows(t * batch, batch) = c;
      out.middleRows(t * batch, batch) = h;
    }
    if (h_last) *h_last = h;
    if (c_last) *c_last = c;

    std::vector<Var> inputs = {x, w_in, w_rec, bias};
    if (h0.valid()) inputs.push_back(h0);
    if (c0.valid()) inputs.push_back(c0);
    const int id = static_cast<int>(nodes_.size());
    return push(inputs, std::move(out),
                [=, gates = std::move(gates), cells = std::move(cells)](Graph& g,
                                                                        const Matrix& d) {
                  const Matrix& hs = g.nodes_[id].value;
                  const Matrix& wr = g.value(w_rec);
                  Matrix dz(hs.rows(), 4 * hidden);
                  Matrix dh_next = Matrix::Zero(batch, hidden);
                  Matrix dc_next = Matrix::Zero(batch, hidden);
                  Matrix dwr = Matrix::Zero(hidden, 4 * hidden);
                  for (int s = steps - 1; s >= 0; --s) {
                    const int t = reverse ? steps - 1 - s : s;
                    const int tp = reverse ? t + 1 : t - 1;  // previous step in time order
                    const bool first = s == 0;
                    const auto gr = gates.middleRows(t * batch, batch);
                    const auto ig = gr.leftCols(hidden).array();
                    const auto fg = gr.middleCols(hidden, hidden).array();
                    const auto gg = gr.middleCols(2 * hidden, hidden).array();
                    const auto og = gr.rightCols(hidden).array();
                    const Matrix tc = cells.middleRows(t * batch, batch).array().tanh().matrix();
                    Matrix c_prev = first ? (c0.valid() ? g.value(c0) : Matrix::Zero(batch, hidden))
                                          : Matrix(cells.middleRows(tp * batch, batch));
                    Matrix h_prev = first ? (h0.valid() ? g.value(h0) : Matrix::Zero(batch, hidden))
                                          : Matrix(hs.middleRows(tp * batch, batch));
                    const Matrix dh = d.middleRows(t * batch, batch) + dh_next;
                    const Matrix dc =
                        (dh.array() * og * (1 - tc.array().square())).matrix() + dc_next;
                    auto dzr = dz.middleRows(t * batch, batch);
                    dzr.leftCols(hidden) = (dc.array() * gg * ig * (1 - ig)).matrix();
                    dzr.middleCols(hidden, hidden) =
                        (dc.array() * c_prev.array() * fg * (1 - fg)).matrix();
                    dzr.middleCols(2 * hidden, hidden) =
                        (dc.array() * ig * (1 - gg.square())).matrix();
                    dzr.rightCols(hidden) = (dh.array() * tc.array() * og * (1 - og)).matrix();
                    dwr.noalias() += h_prev.transpose() * dzr;
                    dh_next.noalias() = dzr * wr.transpose();
                    dc_next = (dc.array() * fg).matrix();
                  }
                  if (g.needs_grad(x)) g.grad(x).noalias() += dz * g.value(w_in).transpose();
                  if (g.needs_grad(w_in)) g.grad(w_in).noalias() += g.value(x).transpose() * dz;
                  g.accumulate(w_rec, dwr);
                  if (g.needs_grad(bias)) g.grad(bias) += dz.colwise().sum();
                  if (h0.valid()) g.accumulate(h0, dh_next);
                  if (c0.valid()) g.accumulate(c0, dc_next);
                });
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    Backward back;
  };

  Var push(const std::vector<Var>& inputs, Matrix value, Backward back) {
    Node n;
    n.value = std::move(value);
    for (Var v : inputs) n.needs_grad = n.needs_grad || needs_grad(v);
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw InvariantError(std::string(op) + ": shape mismatch");
    }
  }

  std::vector<Node> nodes_;
  bool training_;
  Rng* rng_;
};

}  // namespace lmkit::nn
