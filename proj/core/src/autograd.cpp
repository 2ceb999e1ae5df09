#include "satqa/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "satqa/errors.hpp"

namespace satqa::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

MatMap mat(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }
CMatMap mat(const Tensor& t, int rows, int cols) { return CMatMap(t.data(), rows, cols); }

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

void require_rank(Var v, int rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(v.shape()));
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

Graph& graph_of(Var a) {
  require(a.valid(), "operation on an empty Var");
  return *a.graph;
}

Graph& same_graph(Var a, Var b) {
  require(a.graph == b.graph && a.valid(), "operands belong to different graphs");
  return *a.graph;
}

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }

// ---- Graph ---------------------------------------------------------------

Var Graph::push(std::shared_ptr<const Tensor> value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  return push(std::make_shared<const Tensor>(std::move(value)), false, nullptr);
}

Var Graph::input(Tensor value, bool requires_grad) {
  return push(std::make_shared<const Tensor>(std::move(value)), requires_grad && record_, nullptr);
}

Var Graph::param(Parameter& p) {
  const bool rg = record_ && p.trainable;
  Var v = push(p.value, rg, nullptr);
  if (rg) params_.emplace_back(&p, v.id);
  return v;
}

Var Graph::emit(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool rg = false;
  if (record_) {
    for (Var p : parents) rg = rg || requires_grad(p);
  }
  return push(std::make_shared<const Tensor>(std::move(value)), rg, rg ? std::move(fn) : BackwardFn{});
}

Var Graph::emit(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  bool rg = false;
  if (record_) {
    for (Var p : parents) rg = rg || requires_grad(p);
  }
  return push(std::make_shared<const Tensor>(std::move(value)), rg, rg ? std::move(fn) : BackwardFn{});
}

Tensor& Graph::grad(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.empty() && n.value->size() > 0) n.grad = Tensor::zeros(n.value->shape());
  return n.grad;
}

void Graph::backward(Var root) {
  require(root.graph == this, "backward root from another graph");
  require(value(root).size() == 1, "backward root must be a single element, got " + shape_str(value(root).shape()));
  if (!requires_grad(root)) return;
  grad(root)[0] += 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, *n.value, n.grad);
  }
}

void Graph::accumulate() {
  for (auto& [p, id] : params_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    if (p->grad.shape() != p->value->shape()) p->zero_grad();
    add_into(p->grad, n.grad);
  }
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  add_into(out, b.value());
  return g.emit(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, const Tensor& go) {
    if (g.requires_grad(a)) add_into(g.grad(a), go);
    if (g.requires_grad(b)) add_into(g.grad(b), go);
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.emit(std::move(out), {a, b}, [a, b](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor& ga = g.grad(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.storage()) x *= s;
  return g.emit(std::move(out), {a}, [a, s](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.storage()) x += s;
  return g.emit(std::move(out), {a}, [a](Graph& g, const Tensor&, const Tensor& go) { add_into(g.grad(a), go); });
}

Var add_bcast(Var x, Var b) {
  Graph& g = same_graph(x, b);
  require_rank(x, 2, "add_bcast");
  const int m = x.dim(0), n = x.dim(1);
  const Tensor& bv = b.value();
  const bool per_col = (bv.rank() == 1 && bv.dim(0) == n) || (bv.rank() == 2 && bv.dim(0) == 1 && bv.dim(1) == n);
  const bool per_row = bv.rank() == 2 && bv.dim(0) == m && bv.dim(1) == 1;
  require(per_col || per_row, "add_bcast: cannot broadcast " + shape_str(bv.shape()) + " onto " + shape_str(x.shape()));
  Tensor out = x.value();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) += per_col ? bv[static_cast<std::size_t>(c)] : bv[static_cast<std::size_t>(r)];
  return g.emit(std::move(out), {x, b}, [x, b, per_col, m, n](Graph& g, const Tensor&, const Tensor& go) {
    if (g.requires_grad(x)) add_into(g.grad(x), go);
    if (g.requires_grad(b)) {
      Tensor& gb = g.grad(b);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) gb[static_cast<std::size_t>(per_col ? c : r)] += go.at(r, c);
    }
  });
}

Var mul_bcast(Var x, Var gate) {
  Graph& g = same_graph(x, gate);
  require_rank(x, 2, "mul_bcast");
  require_rank(gate, 2, "mul_bcast");
  const int m = x.dim(0), n = x.dim(1);
  const Tensor& gv = gate.value();
  const bool per_col = gv.dim(0) == 1 && gv.dim(1) == n;
  const bool per_row = gv.dim(0) == m && gv.dim(1) == 1;
  require(per_col || per_row, "mul_bcast: cannot broadcast " + shape_str(gv.shape()) + " onto " + shape_str(x.shape()));
  Tensor out = x.value();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) *= per_col ? gv[static_cast<std::size_t>(c)] : gv[static_cast<std::size_t>(r)];
  return g.emit(std::move(out), {x, gate}, [x, gate, per_col, m, n](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& xv = g.value(x);
    const Tensor& gv = g.value(gate);
    if (g.requires_grad(x)) {
      Tensor& gx = g.grad(x);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
          gx.at(r, c) += go.at(r, c) * (per_col ? gv[static_cast<std::size_t>(c)] : gv[static_cast<std::size_t>(r)]);
    }
    if (g.requires_grad(gate)) {
      Tensor& gg = g.grad(gate);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) gg[static_cast<std::size_t>(per_col ? c : r)] += go.at(r, c) * xv.at(r, c);
    }
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return g.emit(std::move(out), {a}, [a](Graph& g, const Tensor& out, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (out[i] > 0.0) ga[i] += go[i];
  });
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  return g.emit(std::move(out), {a}, [a](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& xv = g.value(a);
    Tensor& ga = g.grad(a);
    const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double x = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += go[i] * (cdf + x * pdf);
    }
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.storage()) v = 1.0 / (1.0 + std::exp(-v));
  return g.emit(std::move(out), {a}, [a](Graph& g, const Tensor& out, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * out[i] * (1.0 - out[i]);
  });
}

// ---- shape -----------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return g.emit(std::move(out), {a}, [a](Graph& g, const Tensor&, const Tensor& go) { add_into(g.grad(a), go); });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  require_rank(a, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  mat(out, n, m) = mat(a.value(), m, n).transpose();
  return g.emit(std::move(out), {a}, [a, m, n](Graph& g, const Tensor&, const Tensor& go) {
    mat(g.grad(a), m, n) += mat(go, n, m).transpose();
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Graph& g = graph_of(parts.front());
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  int rows = 0;
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    require(p.graph == &g, "concat_rows: mixed graphs");
    Shape t(p.shape().begin() + 1, p.shape().end());
    require(t == tail, "concat_rows: trailing shape mismatch " + shape_str(p.shape()));
    offsets.push_back(data.size());
    data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
    rows += p.dim(0);
  }
  Shape shape = tail;
  shape.insert(shape.begin(), rows);
  return g.emit(Tensor(std::move(shape), std::move(data)), parts,
                [parts, offsets](Graph& g, const Tensor&, const Tensor& go) {
                  for (std::size_t k = 0; k < parts.size(); ++k) {
                    if (!g.requires_grad(parts[k])) continue;
                    Tensor& gp = g.grad(parts[k]);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[offsets[k] + i];
                  }
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Graph& g = graph_of(parts.front());
  const int m = parts.front().dim(0);
  int n = 0;
  std::vector<int> starts;
  for (Var p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == m, "concat_cols: row count mismatch " + shape_str(p.shape()));
    starts.push_back(n);
    n += p.dim(1);
  }
  Tensor out(Shape{m, n});
  for (std::size_t k = 0; k < parts.size(); ++k)
    mat(out, m, n).middleCols(starts[k], parts[k].dim(1)) = mat(parts[k].value(), m, parts[k].dim(1));
  return g.emit(std::move(out), parts, [parts, starts, m, n](Graph& g, const Tensor&, const Tensor& go) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!g.requires_grad(parts[k])) continue;
      const int w = parts[k].dim(1);
      mat(g.grad(parts[k]), m, w) += mat(go, m, n).middleCols(starts[k], w);
    }
  });
}

Var slice_rows(Var a, int start, int len) {
  Graph& g = graph_of(a);
  require(start >= 0 && len >= 0 && start + len <= a.dim(0), "slice_rows: range out of bounds");
  const std::size_t row = a.value().size() / static_cast<std::size_t>(a.dim(0));
  Shape shape = a.shape();
  shape[0] = len;
  const auto& src = a.value().storage();
  std::vector<double> data(src.begin() + static_cast<long>(start * row), src.begin() + static_cast<long>((start + len) * row));
  return g.emit(Tensor(std::move(shape), std::move(data)), {a}, [a, start, row](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[start * row + i] += go[i];
  });
}

Var slice_cols(Var a, int start, int len) {
  Graph& g = graph_of(a);
  require_rank(a, 2, "slice_cols");
  require(start >= 0 && len >= 0 && start + len <= a.dim(1), "slice_cols: range out of bounds");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{m, len});
  mat(out, m, len) = mat(a.value(), m, n).middleCols(start, len);
  return g.emit(std::move(out), {a}, [a, start, len, m, n](Graph& g, const Tensor&, const Tensor& go) {
    mat(g.grad(a), m, n).middleCols(start, len) += mat(go, m, len);
  });
}

// ---- matmul ----------------------------------------------------------------

Var matmul(Var a, Var b, bool trans_b) {
  Graph& g = same_graph(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1);
  const int bk = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  require(k == bk, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " * " + shape_str(b.shape()) +
                       (trans_b ? "^T" : ""));
  Tensor out(Shape{m, n});
  if (trans_b)
    mat(out, m, n).noalias() = mat(a.value(), m, k) * mat(b.value(), n, k).transpose();
  else
    mat(out, m, n).noalias() = mat(a.value(), m, k) * mat(b.value(), k, n);
  return g.emit(std::move(out), {a, b}, [a, b, m, k, n, trans_b](Graph& g, const Tensor&, const Tensor& go) {
    auto dC = mat(go, m, n);
    if (g.requires_grad(a)) {
      if (trans_b)
        mat(g.grad(a), m, k).noalias() += dC * mat(g.value(b), n, k);
      else
        mat(g.grad(a), m, k).noalias() += dC * mat(g.value(b), k, n).transpose();
    }
    if (g.requires_grad(b)) {
      if (trans_b)
        mat(g.grad(b), n, k).noalias() += dC.transpose() * mat(g.value(a), m, k);
      else
        mat(g.grad(b), k, n).noalias() += mat(g.value(a), m, k).transpose() * dC;
    }
  });
}

// ---- reductions --------------------------------------------------------------

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return g.emit(Tensor::scalar(s), {a}, [a](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (double& v : ga.storage()) v += go[0];
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_axis(Var a, int axis) {
  Graph& g = graph_of(a);
  require_rank(a, 2, "mean_axis");
  require(axis == 0 || axis == 1, "mean_axis: axis must be 0 or 1");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = axis == 0 ? Tensor(Shape{1, n}) : Tensor(Shape{m, 1});
  auto A = mat(a.value(), m, n);
  if (axis == 0)
    mat(out, 1, n) = A.colwise().mean();
  else
    mat(out, m, 1) = A.rowwise().mean();
  return g.emit(std::move(out), {a}, [a, axis, m, n](Graph& g, const Tensor&, const Tensor& go) {
    auto G = mat(g.grad(a), m, n);
    if (axis == 0)
      G.rowwise() += mat(go, 1, n).row(0) / static_cast<double>(m);
    else
      G.colwise() += mat(go, m, 1).col(0) / static_cast<double>(n);
  });
}

Var max_axis(Var a, int axis) {
  Graph& g = graph_of(a);
  require_rank(a, 2, "max_axis");
  require(axis == 0 || axis == 1, "max_axis: axis must be 0 or 1");
  const int m = a.dim(0), n = a.dim(1);
  const int outer = axis == 0 ? n : m;
  const int inner = axis == 0 ? m : n;
  Tensor out = axis == 0 ? Tensor(Shape{1, n}) : Tensor(Shape{m, 1});
  std::vector<int> arg(static_cast<std::size_t>(outer));
  const Tensor& av = a.value();
  for (int o = 0; o < outer; ++o) {
    int best = 0;
    double bv = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < inner; ++i) {
      const double v = axis == 0 ? av.at(i, o) : av.at(o, i);
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    arg[static_cast<std::size_t>(o)] = best;
    out[static_cast<std::size_t>(o)] = bv;
  }
  return g.emit(std::move(out), {a}, [a, axis, arg, outer](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (int o = 0; o < outer; ++o) {
      const int i = arg[static_cast<std::size_t>(o)];
      if (axis == 0)
        ga.at(i, o) += go[static_cast<std::size_t>(o)];
      else
        ga.at(o, i) += go[static_cast<std::size_t>(o)];
    }
  });
}

// ---- normalisation -----------------------------------------------------------

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  require_rank(a, 2, "softmax_rows");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = a.value();
  for (int r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n; ++c) mx = std::max(mx, out.at(r, c));
    double s = 0.0;
    for (int c = 0; c < n; ++c) {
      out.at(r, c) = std::exp(out.at(r, c) - mx);
      s += out.at(r, c);
    }
    for (int c = 0; c < n; ++c) out.at(r, c) /= s;
  }
  return g.emit(std::move(out), {a}, [a, m, n](Graph& g, const Tensor& y, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (int r = 0; r < m; ++r) {
      double dot = 0.0;
      for (int c = 0; c < n; ++c) dot += go.at(r, c) * y.at(r, c);
      for (int c = 0; c < n; ++c) ga.at(r, c) += y.at(r, c) * (go.at(r, c) - dot);
    }
  });
}

namespace {

// Normalises `count` groups of `len` contiguous-or-strided elements. The
// element of group k at position i lives at index(k, i); its affine channel
// is channel(k, i).
template <typename IndexFn, typename ChannelFn>
Var normalize_groups(Var x, Var gamma, Var beta, double eps, int count, int len, IndexFn index, ChannelFn channel) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    double mu = 0.0;
    for (int i = 0; i < len; ++i) mu += xv[index(k, i)];
    mu /= len;
    double var = 0.0;
    for (int i = 0; i < len; ++i) {
      const double d = xv[index(k, i)] - mu;
      var += d * d;
    }
    var /= len;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(k)] = is;
    for (int i = 0; i < len; ++i) {
      const std::size_t idx = index(k, i);
      const std::size_t ch = channel(k, i);
      xhat[idx] = (xv[idx] - mu) * is;
      out[idx] = xhat[idx] * gv[ch] + bv[ch];
    }
  }
  return g.emit(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std, count, len, index, channel](
                    Graph& g, const Tensor&, const Tensor& go) {
                  const Tensor& gv = g.value(gamma);
                  if (g.requires_grad(gamma) || g.requires_grad(beta)) {
                    Tensor* gg = g.requires_grad(gamma) ? &g.grad(gamma) : nullptr;
                    Tensor* gb = g.requires_grad(beta) ? &g.grad(beta) : nullptr;
                    for (int k = 0; k < count; ++k)
                      for (int i = 0; i < len; ++i) {
                        const std::size_t idx = index(k, i);
                        const std::size_t ch = channel(k, i);
                        if (gg) (*gg)[ch] += go[idx] * xhat[idx];
                        if (gb) (*gb)[ch] += go[idx];
                      }
                  }
                  if (!g.requires_grad(x)) return;
                  Tensor& gx = g.grad(x);
                  for (int k = 0; k < count; ++k) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int i = 0; i < len; ++i) {
                      const std::size_t idx = index(k, i);
                      const double d = go[idx] * gv[channel(k, i)];
                      m1 += d;
                      m2 += d * xhat[idx];
                    }
                    m1 /= len;
                    m2 /= len;
                    const double is = inv_std[static_cast<std::size_t>(k)];
                    for (int i = 0; i < len; ++i) {
                      const std::size_t idx = index(k, i);
                      const double d = go[idx] * gv[channel(k, i)];
                      gx[idx] += is * (d - m1 - xhat[idx] * m2);
                    }
                  }
                });
}

}  // namespace

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  require_rank(x, 2, "layer_norm_rows");
  const int m = x.dim(0), n = x.dim(1);
  require(gamma.value().size() == static_cast<std::size_t>(n) && beta.value().size() == static_cast<std::size_t>(n),
          "layer_norm_rows: affine size mismatch");
  return normalize_groups(
      x, gamma, beta, eps, m, n,
      [n](int k, int i) { return static_cast<std::size_t>(k) * n + i; },
      [](int, int i) { return static_cast<std::size_t>(i); });
}

Var group_norm(Var x, int groups, Var gamma, Var beta, double eps) {
  require_rank(x, 3, "group_norm");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  require(groups > 0 && c % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma.value().size() == static_cast<std::size_t>(c), "group_norm: affine size mismatch");
  const int cpg = c / groups;
  return normalize_groups(
      x, gamma, beta, eps, groups, cpg * hw,
      [cpg, hw](int k, int i) { return static_cast<std::size_t>(k) * cpg * hw + i; },
      [cpg, hw](int k, int i) { return static_cast<std::size_t>(k * cpg + i / hw); });
}

Var batch_norm_train(Var x, int batch, Var gamma, Var beta, double eps) {
  require_rank(x, 3, "batch_norm_train");
  require(batch > 0 && x.dim(0) % batch == 0, "batch_norm_train: stacked channels not divisible by batch");
  const int c = x.dim(0) / batch, hw = x.dim(1) * x.dim(2);
  require(gamma.value().size() == static_cast<std::size_t>(c), "batch_norm_train: affine size mismatch");
  return normalize_groups(
      x, gamma, beta, eps, c, batch * hw,
      [c, hw](int k, int i) { return (static_cast<std::size_t>(i / hw) * c + k) * hw + i % hw; },
      [](int k, int) { return static_cast<std::size_t>(k); });
}

Var channel_affine(Var x, Var scale, Var shift) {
  Graph& g = graph_of(x);
  require_rank(x, 3, "channel_affine");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  require(scale.value().size() == static_cast<std::size_t>(c) && shift.value().size() == static_cast<std::size_t>(c),
          "channel_affine: size mismatch");
  Tensor out(x.shape());
  const Tensor &xv = x.value(), &sv = scale.value(), &tv = shift.value();
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < hw; ++i) {
      const std::size_t idx = static_cast<std::size_t>(k) * hw + i;
      out[idx] = xv[idx] * sv[k] + tv[k];
    }
  return g.emit(std::move(out), {x, scale, shift}, [x, scale, shift, c, hw](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor &xv = g.value(x), &sv = g.value(scale);
    Tensor* gx = g.requires_grad(x) ? &g.grad(x) : nullptr;
    Tensor* gs = g.requires_grad(scale) ? &g.grad(scale) : nullptr;
    Tensor* gt = g.requires_grad(shift) ? &g.grad(shift) : nullptr;
    for (int k = 0; k < c; ++k)
      for (int i = 0; i < hw; ++i) {
        const std::size_t idx = static_cast<std::size_t>(k) * hw + i;
        if (gx) (*gx)[idx] += go[idx] * sv[k];
        if (gs) (*gs)[k] += go[idx] * xv[idx];
        if (gt) (*gt)[k] += go[idx];
      }
  });
}

Var l2_normalize_rows(Var a, double eps) {
  Graph& g = graph_of(a);
  require_rank(a, 2, "l2_normalize_rows");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = a.value();
  std::vector<double> norms(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) {
    double s = 0.0;
    for (int c = 0; c < n; ++c) s += out.at(r, c) * out.at(r, c);
    const double nr = std::max(std::sqrt(s), eps);
    norms[static_cast<std::size_t>(r)] = nr;
    for (int c = 0; c < n; ++c) out.at(r, c) /= nr;
  }
  return g.emit(std::move(out), {a}, [a, norms, m, n](Graph& g, const Tensor& y, const Tensor& go) {
    Tensor& ga = g.grad(a);
    for (int r = 0; r < m; ++r) {
      double dot = 0.0;
      for (int c = 0; c < n; ++c) dot += y.at(r, c) * go.at(r, c);
      const double nr = norms[static_cast<std::size_t>(r)];
      for (int c = 0; c < n; ++c) ga.at(r, c) += (go.at(r, c) - y.at(r, c) * dot) / nr;
    }
  });
}

// ---- convolution -------------------------------------------------------------

namespace {

struct ConvDims {
  int c, h, w, o, k, ho, wo;
};

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols: (cg*k*k) x (ho*wo) for channels [c0, c0+cg)
void im2col(const Tensor& x, const ConvDims& d, int c0, int cg, int stride, int pad, double* cols) {
  const int hw = d.ho * d.wo;
  for (int c = 0; c < cg; ++c)
    for (int ky = 0; ky < d.k; ++ky)
      for (int kx = 0; kx < d.k; ++kx) {
        double* row = cols + static_cast<std::size_t>((c * d.k + ky) * d.k + kx) * hw;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * d.wo + ox] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) ? x.at(c0 + c, iy, ix) : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvDims& d, int c0, int cg, int stride, int pad, Tensor& gx) {
  const int hw = d.ho * d.wo;
  for (int c = 0; c < cg; ++c)
    for (int ky = 0; ky < d.k; ++ky)
      for (int kx = 0; kx < d.k; ++kx) {
        const double* row = cols + static_cast<std::size_t>((c * d.k + ky) * d.k + kx) * hw;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < d.w) gx.at(c0 + c, iy, ix) += row[oy * d.wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, Conv2dGeom geom) {
  Graph& g = same_graph(x, weight);
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), weight.dim(2), 0, 0};
  const int groups = geom.groups;
  require(groups > 0 && d.c % groups == 0 && d.o % groups == 0, "conv2d: channels not divisible by groups");
  const int cg = d.c / groups, og = d.o / groups;
  require(weight.dim(1) == cg && weight.dim(3) == d.k,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  d.ho = conv_out(d.h, d.k, geom.stride, geom.pad);
  d.wo = conv_out(d.w, d.k, geom.stride, geom.pad);
  require(d.ho > 0 && d.wo > 0, "conv2d: input " + shape_str(x.shape()) + " too small for kernel");
  const bool has_bias = bias.valid();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(d.o), "conv2d: bias size mismatch");

  const int hw = d.ho * d.wo;
  const int kk = cg * d.k * d.k;
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups) * kk * hw);
  for (int gi = 0; gi < groups; ++gi)
    im2col(x.value(), d, gi * cg, cg, geom.stride, geom.pad, cols->data() + static_cast<std::size_t>(gi) * kk * hw);

  Tensor out(Shape{d.o, d.ho, d.wo});
  const Tensor& wv = weight.value();
  for (int gi = 0; gi < groups; ++gi) {
    CMatMap W(wv.data() + static_cast<std::size_t>(gi) * og * kk, og, kk);
    CMatMap C(cols->data() + static_cast<std::size_t>(gi) * kk * hw, kk, hw);
    MatMap Y(out.data() + static_cast<std::size_t>(gi) * og * hw, og, hw);
    Y.noalias() = W * C;
  }
  if (has_bias) {
    MatMap Y(out.data(), d.o, hw);
    for (int o = 0; o < d.o; ++o) Y.row(o).array() += bias.value()[static_cast<std::size_t>(o)];
  }
  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return g.emit(std::move(out), parents,
                [x, weight, bias, has_bias, d, geom, cols, groups, cg, og, kk, hw](Graph& g, const Tensor&, const Tensor& go) {
                  if (has_bias && g.requires_grad(bias)) {
                    Tensor& gb = g.grad(bias);
                    CMatMap G(go.data(), d.o, hw);
                    for (int o = 0; o < d.o; ++o) gb[static_cast<std::size_t>(o)] += G.row(o).sum();
                  }
                  const bool gw = g.requires_grad(weight);
                  const bool gx = g.requires_grad(x);
                  std::vector<double> dcols(gx ? static_cast<std::size_t>(kk) * hw : 0);
                  for (int gi = 0; gi < groups; ++gi) {
                    CMatMap G(go.data() + static_cast<std::size_t>(gi) * og * hw, og, hw);
                    CMatMap C(cols->data() + static_cast<std::size_t>(gi) * kk * hw, kk, hw);
                    if (gw) {
                      MatMap GW(g.grad(weight).data() + static_cast<std::size_t>(gi) * og * kk, og, kk);
                      GW.noalias() += G * C.transpose();
                    }
                    if (gx) {
                      CMatMap W(g.value(weight).data() + static_cast<std::size_t>(gi) * og * kk, og, kk);
                      MatMap DC(dcols.data(), kk, hw);
                      DC.noalias() = W.transpose() * G;
                      col2im(dcols.data(), d, gi * cg, cg, geom.stride, geom.pad, g.grad(x));
                    }
                  }
                });
}

namespace {

struct Bilinear {
  int y0, x0;
  double ly, lx;
  bool inside;
};

Bilinear bilinear_at(double y, double x, int h, int w) {
  Bilinear b{0, 0, 0.0, 0.0, false};
  if (!(y > -1.0 && y < h && x > -1.0 && x < w)) return b;
  b.y0 = static_cast<int>(std::floor(y));
  b.x0 = static_cast<int>(std::floor(x));
  b.ly = y - b.y0;
  b.lx = x - b.x0;
  b.inside = true;
  return b;
}

double pixel(const double* plane, int h, int w, int y, int x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : 0.0;
}

}  // namespace

Var deform_conv2d(Var x, Var offsets, Var weight, Var bias, int stride, int pad) {
  Graph& g = same_graph(x, weight);
  require_rank(x, 3, "deform_conv2d");
  require_rank(offsets, 3, "deform_conv2d offsets");
  require_rank(weight, 4, "deform_conv2d weight");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int o = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == c && weight.dim(3) == k, "deform_conv2d: weight/input channel mismatch");
  const int ho = conv_out(h, k, stride, pad), wo = conv_out(w, k, stride, pad);
  require(offsets.dim(0) == 2 * k * k && offsets.dim(1) == ho && offsets.dim(2) == wo,
          "deform_conv2d: offsets " + shape_str(offsets.shape()) + " do not match output grid");
  const bool has_bias = bias.valid();
  const int hw = ho * wo;
  const int kk = c * k * k;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(kk) * hw);
  const Tensor& xv = x.value();
  const Tensor& ov = offsets.value();
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = xv.data() + static_cast<std::size_t>(ci) * h * w;
    for (int t = 0; t < k * k; ++t) {
      const int ky = t / k, kx = t % k;
      double* row = cols->data() + static_cast<std::size_t>(ci * k * k + t) * hw;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double sy = oy * stride - pad + ky + ov.at(2 * t, oy, ox);
          const double sx = ox * stride - pad + kx + ov.at(2 * t + 1, oy, ox);
          const Bilinear b = bilinear_at(sy, sx, h, w);
          double v = 0.0;
          if (b.inside) {
            v = (1 - b.ly) * (1 - b.lx) * pixel(plane, h, w, b.y0, b.x0) +
                (1 - b.ly) * b.lx * pixel(plane, h, w, b.y0, b.x0 + 1) +
                b.ly * (1 - b.lx) * pixel(plane, h, w, b.y0 + 1, b.x0) +
                b.ly * b.lx * pixel(plane, h, w, b.y0 + 1, b.x0 + 1);
          }
          row[oy * wo + ox] = v;
        }
    }
  }
  Tensor out(Shape{o, ho, wo});
  MatMap Y(out.data(), o, hw);
  Y.noalias() = mat(weight.value(), o, kk) * CMatMap(cols->data(), kk, hw);
  if (has_bias)
    for (int oi = 0; oi < o; ++oi) Y.row(oi).array() += bias.value()[static_cast<std::size_t>(oi)];

  std::vector<Var> parents{x, offsets, weight};
  if (has_bias) parents.push_back(bias);
  return g.emit(std::move(out), parents,
                [=](Graph& g, const Tensor&, const Tensor& go) {
                  CMatMap G(go.data(), o, hw);
                  if (has_bias && g.requires_grad(bias)) {
                    Tensor& gb = g.grad(bias);
                    for (int oi = 0; oi < o; ++oi) gb[static_cast<std::size_t>(oi)] += G.row(oi).sum();
                  }
                  if (g.requires_grad(weight)) mat(g.grad(weight), o, kk).noalias() += G * CMatMap(cols->data(), kk, hw).transpose();
                  const bool gx = g.requires_grad(x), goff = g.requires_grad(offsets);
                  if (!gx && !goff) return;
                  RowMat dcols = mat(g.value(weight), o, kk).transpose() * G;
                  const Tensor& xv = g.value(x);
                  const Tensor& ov = g.value(offsets);
                  Tensor* gxt = gx ? &g.grad(x) : nullptr;
                  Tensor* got = goff ? &g.grad(offsets) : nullptr;
                  for (int ci = 0; ci < c; ++ci) {
                    const double* plane = xv.data() + static_cast<std::size_t>(ci) * h * w;
                    double* gplane = gx ? gxt->data() + static_cast<std::size_t>(ci) * h * w : nullptr;
                    for (int t = 0; t < k * k; ++t) {
                      const int ky = t / k, kx = t % k;
                      const int row = ci * k * k + t;
                      for (int oy = 0; oy < ho; ++oy)
                        for (int ox = 0; ox < wo; ++ox) {
                          const double dv = dcols(row, oy * wo + ox);
                          if (dv == 0.0) continue;
                          const double sy = oy * stride - pad + ky + ov.at(2 * t, oy, ox);
                          const double sx = ox * stride - pad + kx + ov.at(2 * t + 1, oy, ox);
                          const Bilinear b = bilinear_at(sy, sx, h, w);
                          if (!b.inside) continue;
                          const double v00 = pixel(plane, h, w, b.y0, b.x0);
                          const double v01 = pixel(plane, h, w, b.y0, b.x0 + 1);
                          const double v10 = pixel(plane, h, w, b.y0 + 1, b.x0);
                          const double v11 = pixel(plane, h, w, b.y0 + 1, b.x0 + 1);
                          if (gplane) {
                            auto scatter = [&](int yy, int xx, double wgt) {
                              if (yy >= 0 && yy < h && xx >= 0 && xx < w) gplane[yy * w + xx] += dv * wgt;
                            };
                            scatter(b.y0, b.x0, (1 - b.ly) * (1 - b.lx));
                            scatter(b.y0, b.x0 + 1, (1 - b.ly) * b.lx);
                            scatter(b.y0 + 1, b.x0, b.ly * (1 - b.lx));
                            scatter(b.y0 + 1, b.x0 + 1, b.ly * b.lx);
                          }
                          if (got) {
                            const double dy = (1 - b.lx) * (v10 - v00) + b.lx * (v11 - v01);
                            const double dx = (1 - b.ly) * (v01 - v00) + b.ly * (v11 - v10);
                            got->at(2 * t, oy, ox) += dv * dy;
                            got->at(2 * t + 1, oy, ox) += dv * dx;
                          }
                        }
                    }
                  }
                });
}

// ---- pooling / resampling -----------------------------------------------------

Var max_pool2d(Var x, int kernel, int stride, bool ceil_mode) {
  Graph& g = graph_of(x);
  require_rank(x, 3, "max_pool2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto out_len = [&](int in) {
    const int span = in - kernel;
    if (span < 0) return 1;
    return (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
  };
  const int ho = out_len(h), wo = out_len(w);
  Tensor out(Shape{c, ho, wo});
  std::vector<int> arg(out.size());
  const Tensor& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int bi = -1;
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const int iy = oy * stride + ky, ix = ox * stride + kx;
            if (iy >= h || ix >= w) continue;
            const double v = xv.at(ci, iy, ix);
            if (v > best) {
              best = v;
              bi = (ci * h + iy) * w + ix;
            }
          }
        const std::size_t oi = (static_cast<std::size_t>(ci) * ho + oy) * wo + ox;
        out[oi] = best;
        arg[oi] = bi;
      }
  return g.emit(std::move(out), {x}, [x, arg](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& gx = g.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[static_cast<std::size_t>(arg[i])] += go[i];
  });
}

Var resize_nearest(Var x, int out_h, int out_w) {
  Graph& g = graph_of(x);
  require_rank(x, 3, "resize_nearest");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<int> sy(static_cast<std::size_t>(out_h)), sx(static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) sy[static_cast<std::size_t>(i)] = std::min(h - 1, static_cast<int>(std::floor(i * static_cast<double>(h) / out_h)));
  for (int i = 0; i < out_w; ++i) sx[static_cast<std::size_t>(i)] = std::min(w - 1, static_cast<int>(std::floor(i * static_cast<double>(w) / out_w)));
  Tensor out(Shape{c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) out.at(ci, y, xx) = x.value().at(ci, sy[static_cast<std::size_t>(y)], sx[static_cast<std::size_t>(xx)]);
  return g.emit(std::move(out), {x}, [x, sy, sx, c, out_h, out_w](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& gx = g.grad(x);
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) gx.at(ci, sy[static_cast<std::size_t>(y)], sx[static_cast<std::size_t>(xx)]) += go.at(ci, y, xx);
  });
}

Var adaptive_avg_pool2d(Var x, int out_h, int out_w) {
  Graph& g = graph_of(x);
  require_rank(x, 3, "adaptive_avg_pool2d");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(out_h > 0 && out_w > 0 && out_h <= h && out_w <= w, "adaptive_avg_pool2d: bad output size");
  auto lo = [](int i, int in, int out) { return (i * in) / out; };
  auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
  Tensor out(Shape{c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const int y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
        const int x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += x.value().at(ci, y, xx);
        out.at(ci, oy, ox) = s / ((y1 - y0) * (x1 - x0));
      }
  return g.emit(std::move(out), {x}, [=](Graph& g, const Tensor&, const Tensor& go) {
    Tensor& gx = g.grad(x);
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const int y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
          const int x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
          const double share = go.at(ci, oy, ox) / ((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) gx.at(ci, y, xx) += share;
        }
  });
}

// ---- losses --------------------------------------------------------------------

Var l1_loss(Var preds, const std::vector<double>& targets) {
  Graph& g = graph_of(preds);
  const Tensor& pv = preds.value();
  if (pv.size() != targets.size()) {
    throw ContractError("l1_loss: " + std::to_string(pv.size()) + " predictions vs " + std::to_string(targets.size()) +
                        " targets");
  }
  require(!targets.empty(), "l1_loss: empty batch");
  const double n = static_cast<double>(targets.size());
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += std::abs(pv[i] - targets[i]);
  return g.emit(Tensor::scalar(s / n), {preds}, [preds, targets, n](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& pv = g.value(preds);
    Tensor& gp = g.grad(preds);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double d = pv[i] - targets[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      gp[i] += go[0] * sgn / n;
    }
  });
}

}  // namespace satqa::ag
