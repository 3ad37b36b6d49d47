#include "aman/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace aman {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, !no_grad_});
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(const ModelParams& params, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  nodes_.push_back(Node{Tensor(), {}, nullptr, !no_grad_, &params.at(name)});
  Var v(this, nodes_.size() - 1);
  param_ids_.emplace(name, v.id());
  param_order_.emplace_back(name, v.id());
  return v;
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool rg = false;
  for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
  if (!rg) fn = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn), rg});
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_slot(std::size_t id) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  if (grads_[id].size() == 0) grads_[id] = Tensor(value(id).shape());
  return grads_[id];
}

void Graph::zero_grad() { grads_.assign(nodes_.size(), Tensor()); }

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (no_grad_) throw ContractError("backward on a no-grad graph");
  if (!value(loss.id()).is_scalar()) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss.id()).shape()));
  }
  zero_grad();
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    if (grads_[i].size() == 0 || !nodes_[i].backward) continue;
    // grads_ is sized to the tape, so slots of inputs never reallocate slot i.
    nodes_[i].backward(*this, grads_[i]);
  }
}

Tensor Graph::grad(Var v) const {
  if (v.id() < grads_.size() && grads_[v.id()].size() != 0) return grads_[v.id()];
  return Tensor(value(v.id()).shape());
}

Gradients Graph::param_grads() const {
  Gradients out;
  for (const auto& [name, id] : param_order_) out.add(name, grad(Var(const_cast<Graph*>(this), id)));
  return out;
}

namespace {

Graph* same_graph(Var a, Var b) {
  if (a.graph() != b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

enum class Bcast { kSame, kLeftScalar, kRightScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (a.size() == 1) return Bcast::kLeftScalar;
  if (b.size() == 1) return Bcast::kRightScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

// Accumulate `g` into the slot of `id`, reducing to a scalar when `id` was broadcast.
void accum(Graph& g, std::size_t id, const Tensor& src, Real scale = 1.0) {
  if (!g.requires_grad(id)) return;
  Tensor& dst = g.grad_slot(id);
  if (dst.size() == src.size()) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
  } else {
    dst[0] += scale * src.sum();
  }
}

}  // namespace

Var add(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const auto kind = broadcast_kind(x, y, "add");
  Tensor out(kind == Bcast::kLeftScalar ? y.shape() : x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (kind == Bcast::kLeftScalar ? x[0] : x[i]) + (kind == Bcast::kRightScalar ? y[0] : y[i]);
  }
  const auto ia = a.id(), ib = b.id();
  return g->record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor& go) {
    accum(gr, ia, go);
    accum(gr, ib, go);
  });
}

Var sub(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const auto kind = broadcast_kind(x, y, "sub");
  Tensor out(kind == Bcast::kLeftScalar ? y.shape() : x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (kind == Bcast::kLeftScalar ? x[0] : x[i]) - (kind == Bcast::kRightScalar ? y[0] : y[i]);
  }
  const auto ia = a.id(), ib = b.id();
  return g->record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor& go) {
    accum(gr, ia, go);
    accum(gr, ib, go, -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const auto kind = broadcast_kind(x, y, "mul");
  Tensor out(kind == Bcast::kLeftScalar ? y.shape() : x.shape());
  auto xv = [&](std::size_t i) { return kind == Bcast::kLeftScalar ? x[0] : x[i]; };
  auto yv = [&](std::size_t i) { return kind == Bcast::kRightScalar ? y[0] : y[i]; };
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv(i) * yv(i);
  const auto ia = a.id(), ib = b.id();
  return g->record(std::move(out), {ia, ib}, [ia, ib, kind](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(ib);
    Tensor gx(go.shape()), gy(go.shape());
    for (std::size_t i = 0; i < go.size(); ++i) {
      gx[i] = go[i] * (kind == Bcast::kRightScalar ? y[0] : y[i]);
      gy[i] = go[i] * (kind == Bcast::kLeftScalar ? x[0] : x[i]);
    }
    accum(gr, ia, gx);
    accum(gr, ib, gy);
  });
}

Var mul(Var a, Real s) {
  Graph* g = a.graph();
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const auto ia = a.id();
  return g->record(std::move(out), {ia}, [ia, s](Graph& gr, const Tensor& go) { accum(gr, ia, go, s); });
}

Var add(Var a, Real s) {
  Graph* g = a.graph();
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  const auto ia = a.id();
  return g->record(std::move(out), {ia}, [ia](Graph& gr, const Tensor& go) { accum(gr, ia, go); });
}

Var neg(Var a) { return mul(a, -1.0); }

Var tanh(Var a) {
  Graph* g = a.graph();
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  const auto ia = a.id();
  const auto io = g->size();
  return g->record(std::move(out), {ia}, [ia, io](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(io);
    if (!gr.requires_grad(ia)) return;
    Tensor& dst = gr.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var a) {
  Graph* g = a.graph();
  Tensor out = a.value();
  for (auto& v : out.data()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  const auto ia = a.id();
  const auto io = g->size();
  return g->record(std::move(out), {ia}, [ia, io](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(io);
    if (!gr.requires_grad(ia)) return;
    Tensor& dst = gr.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Var exp(Var a) {
  Graph* g = a.graph();
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  const auto ia = a.id();
  const auto io = g->size();
  return g->record(std::move(out), {ia}, [ia, io](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(io);
    if (!gr.requires_grad(ia)) return;
    Tensor& dst = gr.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i] * y[i];
  });
}

Var log(Var a) {
  Graph* g = a.graph();
  Tensor out = a.value();
  for (auto& v : out.data()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    v = std::log(v);
  }
  const auto ia = a.id();
  return g->record(std::move(out), {ia}, [ia](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(ia);
    if (!gr.requires_grad(ia)) return;
    Tensor& dst = gr.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i] / x[i];
  });
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  Real* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      if (av == 0.0) continue;
      const Real* br = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * br[j];
    }
  }
  return out;
}

namespace {

// dA += G . B^T  (G: m x n, B: k x n, dA: m x k)
void matmul_grad_left(const Real* G, const Real* B, Real* dA, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* gi = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real* bp = B + p * n;
      Real s = 0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      dA[i * k + p] += s;
    }
  }
}

// dB += A^T . G  (A: m x k, G: m x n, dB: k x n)
void matmul_grad_right(const Real* A, const Real* G, Real* dB, std::size_t m, std::size_t k,
                       std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* gi = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      if (av == 0.0) continue;
      Real* bp = dB + p * n;
      for (std::size_t j = 0; j < n; ++j) bp[j] += av * gi[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph* g = same_graph(a, b);
  Tensor out = matmul_value(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return g->record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Tensor& go) {
    const Tensor& A = gr.value(ia);
    const Tensor& B = gr.value(ib);
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    if (gr.requires_grad(ia)) {
      matmul_grad_left(go.data().data(), B.data().data(), gr.grad_slot(ia).data().data(), m, k, n);
    }
    if (gr.requires_grad(ib)) {
      matmul_grad_right(A.data().data(), go.data().data(), gr.grad_slot(ib).data().data(), m, k, n);
    }
  });
}

Var matvec(Var w, Var x) {
  Graph* g = same_graph(w, x);
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  if (W.rank() != 2 || X.rank() != 1 || W.dim(1) != X.dim(0)) {
    throw DimensionError("matvec: incompatible shapes " + shape_str(W.shape()) + " and " +
                         shape_str(X.shape()));
  }
  const std::size_t m = W.dim(0), k = W.dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    const Real* wr = W.data().data() + i * k;
    Real s = 0;
    for (std::size_t p = 0; p < k; ++p) s += wr[p] * X[p];
    out[i] = s;
  }
  const auto iw = w.id(), ix = x.id();
  return g->record(std::move(out), {iw, ix}, [iw, ix, m, k](Graph& gr, const Tensor& go) {
    const Tensor& W = gr.value(iw);
    const Tensor& X = gr.value(ix);
    if (gr.requires_grad(iw)) {
      Real* dW = gr.grad_slot(iw).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const Real gi = go[i];
        if (gi == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) dW[i * k + p] += gi * X[p];
      }
    }
    if (gr.requires_grad(ix)) {
      Tensor& dX = gr.grad_slot(ix);
      for (std::size_t i = 0; i < m; ++i) {
        const Real gi = go[i];
        const Real* wr = W.data().data() + i * k;
        for (std::size_t p = 0; p < k; ++p) dX[p] += gi * wr[p];
      }
    }
  });
}

Var outer(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 1 || y.rank() != 1) {
    throw DimensionError("outer: expected vectors, got " + shape_str(x.shape()) + " and " +
                         shape_str(y.shape()));
  }
  const std::size_t m = x.size(), n = y.size();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i] * y[j];
  const auto ia = a.id(), ib = b.id();
  return g->record(std::move(out), {ia, ib}, [ia, ib, m, n](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(ib);
    if (gr.requires_grad(ia)) {
      Tensor& dx = gr.grad_slot(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i] += go[i * n + j] * y[j];
    }
    if (gr.requires_grad(ib)) {
      Tensor& dy = gr.grad_slot(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dy[j] += go[i * n + j] * x[i];
    }
  });
}

Var transpose(Var a) {
  Graph* g = a.graph();
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("transpose: expected matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const auto ia = a.id();
  return g->record(std::move(out), {ia}, [ia, r, c](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ia)) return;
    Tensor& dx = gr.grad_slot(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += go[j * r + i];
  });
}

namespace {

struct AxisLayout {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisLayout layout_for(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

Var softmax(Var x, std::size_t axis) {
  Graph* g = x.graph();
  const Tensor& in = x.value();
  const auto L = layout_for(in.shape(), axis, "softmax");
  Tensor out(in.shape());
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t i = 0; i < L.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * L.n + k) * L.inner + i; };
      Real mx = in[idx(0)];
      for (std::size_t k = 1; k < L.n; ++k) mx = std::max(mx, in[idx(k)]);
      Real s = 0;
      for (std::size_t k = 0; k < L.n; ++k) s += (out[idx(k)] = std::exp(in[idx(k)] - mx));
      for (std::size_t k = 0; k < L.n; ++k) out[idx(k)] /= s;
    }
  }
  const auto ix = x.id();
  const auto io = g->size();
  return g->record(std::move(out), {ix}, [ix, io, L](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    const Tensor& y = gr.value(io);
    Tensor& dx = gr.grad_slot(ix);
    for (std::size_t o = 0; o < L.outer; ++o) {
      for (std::size_t i = 0; i < L.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * L.n + k) * L.inner + i; };
        Real dot = 0;
        for (std::size_t k = 0; k < L.n; ++k) dot += go[idx(k)] * y[idx(k)];
        for (std::size_t k = 0; k < L.n; ++k) dx[idx(k)] += y[idx(k)] * (go[idx(k)] - dot);
      }
    }
  });
}

Var log_softmax(Var x, std::size_t axis) {
  Graph* g = x.graph();
  const Tensor& in = x.value();
  const auto L = layout_for(in.shape(), axis, "log_softmax");
  Tensor out(in.shape());
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t i = 0; i < L.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * L.n + k) * L.inner + i; };
      Real mx = in[idx(0)];
      for (std::size_t k = 1; k < L.n; ++k) mx = std::max(mx, in[idx(k)]);
      Real s = 0;
      for (std::size_t k = 0; k < L.n; ++k) s += std::exp(in[idx(k)] - mx);
      const Real lse = mx + std::log(s);
      for (std::size_t k = 0; k < L.n; ++k) out[idx(k)] = in[idx(k)] - lse;
    }
  }
  const auto ix = x.id();
  const auto io = g->size();
  return g->record(std::move(out), {ix}, [ix, io, L](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    const Tensor& y = gr.value(io);
    Tensor& dx = gr.grad_slot(ix);
    for (std::size_t o = 0; o < L.outer; ++o) {
      for (std::size_t i = 0; i < L.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * L.n + k) * L.inner + i; };
        Real total = 0;
        for (std::size_t k = 0; k < L.n; ++k) total += go[idx(k)];
        for (std::size_t k = 0; k < L.n; ++k) dx[idx(k)] += go[idx(k)] - std::exp(y[idx(k)]) * total;
      }
    }
  });
}

Var sum(Var x) {
  Graph* g = x.graph();
  const auto ix = x.id();
  return g->record(Tensor::scalar(x.value().sum()), {ix}, [ix](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    Tensor& dx = gr.grad_slot(ix);
    for (auto& v : dx.data()) v += go[0];
  });
}

Var mean(Var x) { return mul(sum(x), 1.0 / static_cast<Real>(x.value().size())); }

Var row_mean(Var m) {
  Graph* g = m.graph();
  const Tensor& x = m.value();
  if (x.rank() != 2) throw DimensionError("row_mean: expected matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({r});
  for (std::size_t i = 0; i < r; ++i) {
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j];
    out[i] = s / static_cast<Real>(c);
  }
  const auto ix = m.id();
  return g->record(std::move(out), {ix}, [ix, r, c](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    Tensor& dx = gr.grad_slot(ix);
    const Real inv = 1.0 / static_cast<Real>(c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += go[i] * inv;
  });
}

Var reshape(Var x, Shape shape) {
  Graph* g = x.graph();
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return g->record(std::move(out), {ix}, [ix](Graph& gr, const Tensor& go) { accum(gr, ix, go); });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Graph* g = parts.front().graph();
  std::vector<Real> data;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    if (p.graph() != g) throw ContractError("concat: operands belong to different graphs");
    if (p.value().rank() != 1) throw DimensionError("concat: expected vectors, got " + shape_str(p.shape()));
    offsets.push_back(data.size());
    ids.push_back(p.id());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  auto inputs = ids;
  return g->record(Tensor::vector(std::move(data)), std::move(inputs),
                   [ids, offsets](Graph& gr, const Tensor& go) {
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       if (!gr.requires_grad(ids[k])) continue;
                       Tensor& d = gr.grad_slot(ids[k]);
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[offsets[k] + i];
                     }
                   });
}

Var slice(Var x, std::size_t start, std::size_t len) {
  Graph* g = x.graph();
  const Tensor& in = x.value();
  if (in.rank() != 1 || len == 0 || start + len > in.size()) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(len) +
                         ") invalid for " + shape_str(in.shape()));
  }
  std::vector<Real> data(in.data().begin() + static_cast<std::ptrdiff_t>(start),
                         in.data().begin() + static_cast<std::ptrdiff_t>(start + len));
  const auto ix = x.id();
  return g->record(Tensor::vector(std::move(data)), {ix}, [ix, start](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    Tensor& d = gr.grad_slot(ix);
    for (std::size_t i = 0; i < go.size(); ++i) d[start + i] += go[i];
  });
}

Var row(Var m, std::size_t r) {
  Graph* g = m.graph();
  const Tensor& in = m.value();
  if (in.rank() != 2 || r >= in.dim(0)) {
    throw DimensionError("row " + std::to_string(r) + " invalid for " + shape_str(in.shape()));
  }
  const std::size_t c = in.dim(1);
  std::vector<Real> data(in.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                         in.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  const auto ix = m.id();
  return g->record(Tensor::vector(std::move(data)), {ix}, [ix, r, c](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    Tensor& d = gr.grad_slot(ix);
    for (std::size_t j = 0; j < c; ++j) d[r * c + j] += go[j];
  });
}

Var pick(Var x, std::size_t i) {
  const Tensor& in = x.value();
  if (in.rank() != 1 || i >= in.size()) {
    throw DimensionError("pick " + std::to_string(i) + " invalid for " + shape_str(in.shape()));
  }
  return slice(x, i, 1);
}

Var scale_rows(Var m, Var v) {
  Graph* g = same_graph(m, v);
  const Tensor& M = m.value();
  const Tensor& w = v.value();
  if (M.rank() != 2 || w.rank() != 1 || w.size() != M.dim(0)) {
    throw DimensionError("scale_rows: incompatible shapes " + shape_str(M.shape()) + " and " +
                         shape_str(w.shape()));
  }
  const std::size_t r = M.dim(0), c = M.dim(1);
  Tensor out(M.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = w[i] * M[i * c + j];
  const auto im = m.id(), iv = v.id();
  return g->record(std::move(out), {im, iv}, [im, iv, r, c](Graph& gr, const Tensor& go) {
    const Tensor& M = gr.value(im);
    const Tensor& w = gr.value(iv);
    if (gr.requires_grad(im)) {
      Tensor& dM = gr.grad_slot(im);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dM[i * c + j] += go[i * c + j] * w[i];
    }
    if (gr.requires_grad(iv)) {
      Tensor& dw = gr.grad_slot(iv);
      for (std::size_t i = 0; i < r; ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < c; ++j) s += go[i * c + j] * M[i * c + j];
        dw[i] += s;
      }
    }
  });
}

Var tile_rows(Var v, std::size_t n) {
  Graph* g = v.graph();
  const Tensor& x = v.value();
  if (x.rank() != 1 || n == 0) throw DimensionError("tile_rows: expected vector, got " + shape_str(x.shape()));
  const std::size_t d = x.size();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[j];
  const auto ix = v.id();
  return g->record(std::move(out), {ix}, [ix, n, d](Graph& gr, const Tensor& go) {
    if (!gr.requires_grad(ix)) return;
    Tensor& dx = gr.grad_slot(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) dx[j] += go[i * d + j];
  });
}

Var dropout(Var x, Real rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  Tensor mask(x.shape());
  const Real keep = 1.0 - rate;
  for (auto& m : mask.data()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, x.graph()->constant(std::move(mask)));
}

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  Graph* g = same_graph(x, w);
  same_graph(x, b);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.rank() != 3 || W.rank() != 4 || W.dim(1) != X.dim(0) || W.dim(2) != W.dim(3) ||
      B.rank() != 1 || B.size() != W.dim(0) || stride == 0) {
    throw DimensionError("conv2d: incompatible shapes input " + shape_str(X.shape()) + ", weight " +
                         shape_str(W.shape()) + ", bias " + shape_str(B.shape()));
  }
  const std::size_t cin = X.dim(0), H = X.dim(1), Wd = X.dim(2);
  const std::size_t cout = W.dim(0), k = W.dim(2);
  if (H + 2 * pad < k || Wd + 2 * pad < k) throw DimensionError("conv2d: kernel larger than input");
  const std::size_t ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t wo = (Wd + 2 * pad - k) / stride + 1;
  const std::size_t rows = cin * k * k, cols = ho * wo;

  // im2col: [cin*k*k x ho*wo]
  auto col = std::make_shared<std::vector<Real>>(rows * cols, 0.0);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        Real* dst = col->data() + ((c * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(Wd)) continue;
            dst[oy * wo + ox] = X[(c * H + static_cast<std::size_t>(iy)) * Wd + static_cast<std::size_t>(ix)];
          }
        }
      }

  Tensor out({cout, ho, wo});
  {
    const Real* Wp = W.data().data();
    Real* O = out.data().data();
    for (std::size_t o = 0; o < cout; ++o) {
      Real* orow = O + o * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] = B[o];
      for (std::size_t p = 0; p < rows; ++p) {
        const Real wv = Wp[o * rows + p];
        const Real* cr = col->data() + p * cols;
        for (std::size_t j = 0; j < cols; ++j) orow[j] += wv * cr[j];
      }
    }
  }

  const auto ixid = x.id(), iw = w.id(), ib = b.id();
  return g->record(std::move(out), {ixid, iw, ib},
                   [=](Graph& gr, const Tensor& go) {
                     const Real* G = go.data().data();
                     if (gr.requires_grad(ib)) {
                       Tensor& db = gr.grad_slot(ib);
                       for (std::size_t o = 0; o < cout; ++o) {
                         Real s = 0;
                         for (std::size_t j = 0; j < cols; ++j) s += G[o * cols + j];
                         db[o] += s;
                       }
                     }
                     if (gr.requires_grad(iw)) {
                       // dW += G . col^T
                       matmul_grad_left(G, col->data(), gr.grad_slot(iw).data().data(), cout, rows, cols);
                     }
                     if (gr.requires_grad(ixid)) {
                       // dcol = W^T . G, then col2im
                       std::vector<Real> dcol(rows * cols, 0.0);
                       matmul_grad_right(gr.value(iw).data().data(), G, dcol.data(), cout, rows, cols);
                       Tensor& dX = gr.grad_slot(ixid);
                       for (std::size_t c = 0; c < cin; ++c)
                         for (std::size_t ky = 0; ky < k; ++ky)
                           for (std::size_t kx = 0; kx < k; ++kx) {
                             const Real* src = dcol.data() + ((c * k + ky) * k + kx) * cols;
                             for (std::size_t oy = 0; oy < ho; ++oy) {
                               const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                         static_cast<std::ptrdiff_t>(pad);
                               if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                               for (std::size_t ox = 0; ox < wo; ++ox) {
                                 const std::ptrdiff_t ixx = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                            static_cast<std::ptrdiff_t>(pad);
                                 if (ixx < 0 || ixx >= static_cast<std::ptrdiff_t>(Wd)) continue;
                                 dX[(c * H + static_cast<std::size_t>(iy)) * Wd + static_cast<std::size_t>(ixx)] +=
                                     src[oy * wo + ox];
                               }
                             }
                           }
                     }
                   });
}

}  // namespace aman
