// Copyright (c) 2026 The tinytts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "tinytts/tensor.hpp"

namespace tinytts {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid as long as the graph lives.
class Value {
 public:
  Value() = default;
  std::size_t index() const { return index_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Value(Graph* g, std::size_t i) : graph_(g), index_(i) {}
  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

// Reverse-mode tape. Operations append nodes in execution order, which is a
// topological order by construction; backward() walks it in reverse.
//
// Leaf gradients accumulate across repeated backward() calls. Gradients of
// intermediate nodes are transient scratch and are not retained.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ---- leaves ----

  Value leaf(Tensor t) {
    Node n;
    n.t = std::move(t);
    return push(std::move(n));
  }

  Value constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
  }

  // Leaf bound to persistent storage: values are copied in now; backward()
  // accumulates d(loss)/d(param) into p.grad.
  Value param(Parameter& p) {
    Node n;
    n.t = Tensor(p.dims, p.value, p.trainable);
    n.bound = &p;
    return push(std::move(n));
  }

  const Tensor& tensor(const Value& v) const { return node(v).t; }

  // Leaf gradient accumulated so far (unbound leaves only).
  const std::vector<double>& grad(const Value& v) const {
    const Node& n = node(v);
    if (!n.t.grad) throw std::logic_error("grad: no gradient for this node (run backward first)");
    return *n.t.grad;
  }

  // Like grad(), but a leaf the loss never reached reads as all zeros.
  std::vector<double> grad_or_zero(const Value& v) const {
    const Node& n = node(v);
    return n.t.grad ? *n.t.grad : std::vector<double>(n.t.size(), 0.0);
  }

  // ---- ops ----

  Value add(Value a, Value b) {
    const Tensor& ta = tensor(a);
    const Tensor& tb = tensor(b);
    if (ta.dims != tb.dims)
      throw std::invalid_argument("add: shape mismatch " + shape_str(ta.dims) + " vs " +
                                  shape_str(tb.dims));
    Tensor out(ta.dims, ta.data);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    return record({a, b}, std::move(out), [](Bwd ctx) {
      ctx.add_to_input(0, ctx.out_grad);
      ctx.add_to_input(1, ctx.out_grad);
    });
  }

  // x[r,c] + row[0,c] for every row r.
  Value add_row(Value x, Value row) {
    const Tensor& tx = tensor(x);
    const Tensor& tr = tensor(row);
    if (tx.rank() != 2 || tr.rank() != 2 || tr.rows() != 1 || tr.cols() != tx.cols())
      throw std::invalid_argument("add_row: need [RxC] and [1xC], got " + shape_str(tx.dims) +
                                  " and " + shape_str(tr.dims));
    const std::size_t R = tx.rows(), C = tx.cols();
    Tensor out(tx.dims, tx.data);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) out.data[r * C + c] += tr.data[c];
    return record({x, row}, std::move(out), [R, C](Bwd ctx) {
      ctx.add_to_input(0, ctx.out_grad);
      std::vector<double> gr(C, 0.0);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) gr[c] += ctx.out_grad[r * C + c];
      ctx.add_to_input(1, gr);
    });
  }

  Value mul(Value a, Value b) {
    const Tensor& ta = tensor(a);
    const Tensor& tb = tensor(b);
    if (ta.dims != tb.dims) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(ta.dims, ta.data);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    std::vector<double> va = ta.data, vb = tb.data;
    return record({a, b}, std::move(out), [va, vb](Bwd ctx) {
      std::vector<double> g(va.size());
      for (std::size_t i = 0; i < va.size(); ++i) g[i] = ctx.out_grad[i] * vb[i];
      ctx.add_to_input(0, g);
      for (std::size_t i = 0; i < va.size(); ++i) g[i] = ctx.out_grad[i] * va[i];
      ctx.add_to_input(1, g);
    });
  }

  Value scale(Value x, double c) {
    Tensor out(tensor(x).dims, tensor(x).data);
    for (auto& v : out.data) v *= c;
    return record({x}, std::move(out), [c](Bwd ctx) {
      std::vector<double> g(ctx.out_grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * ctx.out_grad[i];
      ctx.add_to_input(0, g);
    });
  }

  Value matmul(Value a, Value b) {
    const Tensor& ta = tensor(a);
    const Tensor& tb = tensor(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.dims) + " x " +
                                  shape_str(tb.dims));
    const std::size_t M = ta.rows(), K = ta.cols(), N = tb.cols();
    Tensor out = Tensor::zeros({M, N});
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = ta.data[i * K + k];
        for (std::size_t j = 0; j < N; ++j) out.data[i * N + j] += aik * tb.data[k * N + j];
      }
    std::vector<double> va = ta.data, vb = tb.data;
    return record({a, b}, std::move(out), [M, K, N, va, vb](Bwd ctx) {
      // dA = G * B^T
      std::vector<double> ga(M * K, 0.0);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double g = ctx.out_grad[i * N + j];
          for (std::size_t k = 0; k < K; ++k) ga[i * K + k] += g * vb[k * N + j];
        }
      ctx.add_to_input(0, ga);
      // dB = A^T * G
      std::vector<double> gb(K * N, 0.0);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const double av = va[i * K + k];
          for (std::size_t j = 0; j < N; ++j) gb[k * N + j] += av * ctx.out_grad[i * N + j];
        }
      ctx.add_to_input(1, gb);
    });
  }

  // a * b^T  with a:[MxK], b:[NxK] -> [MxN]
  Value matmul_nt(Value a, Value b) {
    const Tensor& ta = tensor(a);
    const Tensor& tb = tensor(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols())
      throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(ta.dims) + " x " +
                                  shape_str(tb.dims) + "^T");
    const std::size_t M = ta.rows(), K = ta.cols(), N = tb.rows();
    Tensor out = Tensor::zeros({M, N});
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += ta.data[i * K + k] * tb.data[j * K + k];
        out.data[i * N + j] = s;
      }
    std::vector<double> va = ta.data, vb = tb.data;
    return record({a, b}, std::move(out), [M, K, N, va, vb](Bwd ctx) {
      std::vector<double> ga(M * K, 0.0);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double g = ctx.out_grad[i * N + j];
          for (std::size_t k = 0; k < K; ++k) ga[i * K + k] += g * vb[j * K + k];
        }
      ctx.add_to_input(0, ga);
      std::vector<double> gb(N * K, 0.0);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double g = ctx.out_grad[i * N + j];
          for (std::size_t k = 0; k < K; ++k) gb[j * K + k] += g * va[i * K + k];
        }
      ctx.add_to_input(1, gb);
    });
  }

  Value relu(Value x) {
    const Tensor& tx = tensor(x);
    Tensor out(tx.dims, tx.data);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    std::vector<double> vx = tx.data;
    return record({x}, std::move(out), [vx](Bwd ctx) {
      std::vector<double> g(vx.size());
      for (std::size_t i = 0; i < vx.size(); ++i) g[i] = vx[i] > 0.0 ? ctx.out_grad[i] : 0.0;
      ctx.add_to_input(0, g);
    });
  }

  // Row-wise softmax, stabilized by max subtraction.
  Value softmax_rows(Value x) {
    const Tensor& tx = tensor(x);
    if (tx.rank() != 2) throw std::invalid_argument("softmax_rows: need rank-2 input");
    const std::size_t R = tx.rows(), C = tx.cols();
    Tensor out = Tensor::zeros({R, C});
    for (std::size_t r = 0; r < R; ++r) {
      double mx = tx.data[r * C];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, tx.data[r * C + c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double e = std::exp(tx.data[r * C + c] - mx);
        out.data[r * C + c] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < C; ++c) out.data[r * C + c] /= sum;
    }
    std::vector<double> y = out.data;
    return record({x}, std::move(out), [R, C, y](Bwd ctx) {
      std::vector<double> g(R * C);
      for (std::size_t r = 0; r < R; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += ctx.out_grad[r * C + c] * y[r * C + c];
        for (std::size_t c = 0; c < C; ++c)
          g[r * C + c] = (ctx.out_grad[r * C + c] - dot) * y[r * C + c];
      }
      ctx.add_to_input(0, g);
    });
  }

  // Per-row mean/variance normalization followed by affine: y = gain .* xhat + bias.
  // Variance is the biased (1/C) estimate.
  Value layer_norm(Value x, Value gain, Value bias, double eps) {
    const Tensor& tx = tensor(x);
    const Tensor& tg = tensor(gain);
    const Tensor& tb = tensor(bias);
    if (tx.rank() != 2) throw std::invalid_argument("layer_norm: need rank-2 input");
    const std::size_t R = tx.rows(), C = tx.cols();
    if (tg.size() != C || tb.size() != C)
      throw std::invalid_argument("layer_norm: gain/bias must have length " + std::to_string(C));
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    Tensor out = Tensor::zeros({R, C});
    std::vector<double> xhat(R * C), inv_sd(R);
    for (std::size_t r = 0; r < R; ++r) {
      double mean = 0.0;
      for (std::size_t c = 0; c < C; ++c) mean += tx.data[r * C + c];
      mean /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = tx.data[r * C + c] - mean;
        var += d * d;
      }
      var /= static_cast<double>(C);
      const double isd = 1.0 / std::sqrt(var + eps);
      inv_sd[r] = isd;
      for (std::size_t c = 0; c < C; ++c) {
        const double xh = (tx.data[r * C + c] - mean) * isd;
        xhat[r * C + c] = xh;
        out.data[r * C + c] = tg.data[c] * xh + tb.data[c];
      }
    }
    std::vector<double> vg = tg.data;
    return record({x, gain, bias}, std::move(out), [R, C, xhat, inv_sd, vg](Bwd ctx) {
      std::vector<double> gx(R * C), ggain(C, 0.0), gbias(C, 0.0);
      for (std::size_t r = 0; r < R; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double go = ctx.out_grad[r * C + c];
          const double xh = xhat[r * C + c];
          ggain[c] += go * xh;
          gbias[c] += go;
          const double gg = go * vg[c];
          m1 += gg;
          m2 += gg * xh;
        }
        m1 /= static_cast<double>(C);
        m2 /= static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) {
          const double gg = ctx.out_grad[r * C + c] * vg[c];
          gx[r * C + c] = (gg - m1 - xhat[r * C + c] * m2) * inv_sd[r];
        }
      }
      ctx.add_to_input(0, gx);
      ctx.add_to_input(1, ggain);
      ctx.add_to_input(2, gbias);
    });
  }

  // Zero-padded "same" 1-D convolution along time.
  // x:[T x cin], kernel:[k x cin x cout] with k odd, bias:[cout] -> [T x cout].
  Value conv1d_same(Value x, Value kernel, Value bias) {
    const Tensor& tx = tensor(x);
    const Tensor& tk = tensor(kernel);
    const Tensor& tb = tensor(bias);
    if (tx.rank() != 2 || tk.rank() != 3)
      throw std::invalid_argument("conv1d_same: need [Txc_in] input and [kxc_inxc_out] kernel");
    const std::size_t T = tx.dims[0], CI = tx.dims[1];
    const std::size_t K = tk.dims[0], KCI = tk.dims[1], CO = tk.dims[2];
    if (K % 2 == 0) throw std::invalid_argument("conv1d_same: kernel size must be odd");
    if (KCI != CI) throw std::invalid_argument("conv1d_same: channel mismatch");
    if (tb.size() != CO) throw std::invalid_argument("conv1d_same: bias length mismatch");
    const std::size_t H = K / 2;
    Tensor out = Tensor::zeros({T, CO});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t o = 0; o < CO; ++o) out.data[t * CO + o] = tb.data[o];
      for (std::size_t j = 0; j < K; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(H);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t i = 0; i < CI; ++i) {
          const double xv = tx.data[static_cast<std::size_t>(src) * CI + i];
          if (xv == 0.0) continue;
          const double* kp = &tk.data[(j * CI + i) * CO];
          double* op = &out.data[t * CO];
          for (std::size_t o = 0; o < CO; ++o) op[o] += xv * kp[o];
        }
      }
    }
    std::vector<double> vx = tx.data, vk = tk.data;
    return record({x, kernel, bias}, std::move(out), [T, CI, K, CO, H, vx, vk](Bwd ctx) {
      std::vector<double> gx(T * CI, 0.0), gk(K * CI * CO, 0.0), gb(CO, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double* go = &ctx.out_grad[t * CO];
        for (std::size_t o = 0; o < CO; ++o) gb[o] += go[o];
        for (std::size_t j = 0; j < K; ++j) {
          const std::ptrdiff_t src =
              static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(H);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
          const std::size_t s = static_cast<std::size_t>(src);
          for (std::size_t i = 0; i < CI; ++i) {
            const double xv = vx[s * CI + i];
            const double* kp = &vk[(j * CI + i) * CO];
            double* gkp = &gk[(j * CI + i) * CO];
            double acc = 0.0;
            for (std::size_t o = 0; o < CO; ++o) {
              gkp[o] += xv * go[o];
              acc += kp[o] * go[o];
            }
            gx[s * CI + i] += acc;
          }
        }
      }
      ctx.add_to_input(0, gx);
      ctx.add_to_input(1, gk);
      ctx.add_to_input(2, gb);
    });
  }

  // Row gather: out[t] = table[ids[t]]. Gradient scatters to looked-up rows only.
  Value embedding_lookup(Value table, const std::vector<std::size_t>& ids) {
    const Tensor& tt = tensor(table);
    if (tt.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be rank-2");
    const std::size_t V = tt.rows(), D = tt.cols();
    for (std::size_t id : ids)
      if (id >= V)
        throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                                " out of range (table has " + std::to_string(V) + " rows)");
    Tensor out = Tensor::zeros({ids.size(), D});
    for (std::size_t t = 0; t < ids.size(); ++t)
      std::copy_n(&tt.data[ids[t] * D], D, &out.data[t * D]);
    std::vector<std::size_t> idc = ids;
    return record({table}, std::move(out), [V, D, idc](Bwd ctx) {
      std::vector<double> g(V * D, 0.0);
      for (std::size_t t = 0; t < idc.size(); ++t)
        for (std::size_t d = 0; d < D; ++d) g[idc[t] * D + d] += ctx.out_grad[t * D + d];
      ctx.add_to_input(0, g);
    });
  }

  // Same gather, named for its use on intermediate tensors (length regulation).
  Value gather_rows(Value x, const std::vector<std::size_t>& ids) {
    return embedding_lookup(x, ids);
  }

  Value slice_cols(Value x, std::size_t from, std::size_t to) {
    const Tensor& tx = tensor(x);
    if (tx.rank() != 2 || from >= to || to > tx.cols())
      throw std::invalid_argument("slice_cols: bad range");
    const std::size_t R = tx.rows(), C = tx.cols(), W = to - from;
    Tensor out = Tensor::zeros({R, W});
    for (std::size_t r = 0; r < R; ++r)
      std::copy_n(&tx.data[r * C + from], W, &out.data[r * W]);
    return record({x}, std::move(out), [R, C, W, from](Bwd ctx) {
      std::vector<double> g(R * C, 0.0);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t w = 0; w < W; ++w) g[r * C + from + w] = ctx.out_grad[r * W + w];
      ctx.add_to_input(0, g);
    });
  }

  Value concat_cols(const std::vector<Value>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty list");
    const std::size_t R = tensor(xs[0]).rows();
    std::size_t C = 0;
    std::vector<std::size_t> widths;
    for (const Value& v : xs) {
      const Tensor& t = tensor(v);
      if (t.rank() != 2 || t.rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
      widths.push_back(t.cols());
      C += t.cols();
    }
    Tensor out = Tensor::zeros({R, C});
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Tensor& t = tensor(xs[i]);
      for (std::size_t r = 0; r < R; ++r)
        std::copy_n(&t.data[r * widths[i]], widths[i], &out.data[r * C + off]);
      off += widths[i];
    }
    return record(xs, std::move(out), [R, C, widths](Bwd ctx) {
      std::size_t off2 = 0;
      for (std::size_t i = 0; i < widths.size(); ++i) {
        std::vector<double> g(R * widths[i]);
        for (std::size_t r = 0; r < R; ++r)
          std::copy_n(&ctx.out_grad[r * C + off2], widths[i], &g[r * widths[i]]);
        ctx.add_to_input(i, g);
        off2 += widths[i];
      }
    });
  }

  // Mean of squared elementwise differences -> scalar.
  Value mse(Value pred, Value target) {
    const Tensor& tp = tensor(pred);
    const Tensor& tt = tensor(target);
    if (tp.dims != tt.dims)
      throw std::invalid_argument("mse: shape mismatch " + shape_str(tp.dims) + " vs " +
                                  shape_str(tt.dims));
    if (tp.size() == 0) throw std::invalid_argument("mse: empty tensors");
    const std::size_t N = tp.size();
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double d = tp.data[i] - tt.data[i];
      s += d * d;
    }
    Tensor out = Tensor::scalar(s / static_cast<double>(N));
    std::vector<double> vp = tp.data, vt = tt.data;
    return record({pred, target}, std::move(out), [N, vp, vt](Bwd ctx) {
      const double g = ctx.out_grad[0] * 2.0 / static_cast<double>(N);
      std::vector<double> gp(N);
      for (std::size_t i = 0; i < N; ++i) gp[i] = g * (vp[i] - vt[i]);
      ctx.add_to_input(0, gp);
      for (std::size_t i = 0; i < N; ++i) gp[i] = -gp[i];
      ctx.add_to_input(1, gp);
    });
  }

  Value sum_all(Value x) {
    const Tensor& tx = tensor(x);
    double s = 0.0;
    for (double v : tx.data) s += v;
    const std::size_t N = tx.size();
    return record({x}, Tensor::scalar(s), [N](Bwd ctx) {
      ctx.add_to_input(0, std::vector<double>(N, ctx.out_grad[0]));
    });
  }

  // ---- backward ----

  // Reverse sweep from a scalar loss. Leaf gradients accumulate: into
  // Parameter::grad for bound leaves, into Tensor::grad otherwise.
  void backward(const Value& loss) {
    const Node& ln = node(loss);
    if (ln.t.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(ln.t.dims));
    std::vector<std::vector<double>> scratch(nodes_.size());
    scratch[loss.index()] = {1.0};
    BwdScratch bs{&scratch};
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (scratch[i].empty()) continue;
      if (n.inputs.empty()) {
        if (!n.t.requires_grad) continue;
        if (n.bound) {
          for (std::size_t j = 0; j < scratch[i].size(); ++j) n.bound->grad[j] += scratch[i][j];
        } else {
          n.t.ensure_grad();
          for (std::size_t j = 0; j < scratch[i].size(); ++j) (*n.t.grad)[j] += scratch[i][j];
        }
        continue;
      }
      if (n.backprop) n.backprop(Bwd{this, &n, scratch[i], &bs});
      scratch[i].clear();
      scratch[i].shrink_to_fit();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node;
  struct BwdScratch {
    std::vector<std::vector<double>>* grads;
  };

  // Context handed to backward closures.
  struct Bwd {
    Graph* g;
    Node* n;
    const std::vector<double>& out_grad;
    BwdScratch* scratch;

    void add_to_input(std::size_t which, const std::vector<double>& delta) {
      const std::size_t idx = n->inputs[which];
      const Node& in = g->nodes_[idx];
      if (!in.t.requires_grad) return;
      std::vector<double>& buf = (*scratch->grads)[idx];
      if (buf.empty()) buf.assign(in.t.size(), 0.0);
      for (std::size_t i = 0; i < delta.size(); ++i) buf[i] += delta[i];
    }
  };

  struct Node {
    Tensor t;
    std::vector<std::size_t> inputs;
    std::function<void(Bwd)> backprop;
    Parameter* bound = nullptr;
  };

  Value push(Node n) {
    nodes_.push_back(std::move(n));
    return Value(this, nodes_.size() - 1);
  }

  Node& node(const Value& v) {
    check(v);
    return nodes_[v.index()];
  }
  const Node& node(const Value& v) const {
    check(v);
    return nodes_[v.index()];
  }

  void check(const Value& v) const {
    if (v.graph_ != this) throw std::logic_error("value does not belong to this graph");
  }

  Value record(const std::vector<Value>& inputs, Tensor out, std::function<void(Bwd)> bp) {
    bool rg = false;
    Node n;
    for (const Value& v : inputs) {
      check(v);
      rg = rg || nodes_[v.index()].t.requires_grad;
      n.inputs.push_back(v.index());
    }
    out.requires_grad = rg;
    n.t = std::move(out);
    if (rg) n.backprop = std::move(bp);
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
};

}  // namespace tinytts
