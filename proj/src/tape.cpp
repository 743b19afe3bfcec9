#include "agd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agd/errors.hpp"
#include "agd/kernels.hpp"

namespace agd::nn {

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = push(Matrix(), p.trainable, [](Tape&, std::size_t) {});
  nodes_[v.id].ref = &p.value;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Matrix& Tape::grad_mut(std::size_t id) {
  Node& n = nodes_[id];
  const Matrix& v = value_at(id);
  if (n.grad.empty() && !v.empty()) n.grad = Matrix(v.rows(), v.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (value_at(loss.id).size() != 1) throw DimensionError("backward: loss must be 1x1");
  for (Node& n : nodes_) n.grad = Matrix();
  if (!nodes_[loss.id].requires_grad) return;
  grad_mut(loss.id)(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

Matrix Tape::grad_of(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) {
    return Matrix(p.value.rows(), p.value.cols());
  }
  return nodes_[it->second].grad;
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

template <typename F>
Var elementwise_unary(Tape& t, Var a, F f, double (*deriv)(double x, double y)) {
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), av.cols());
  auto src = av.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai, deriv](Tape& tp, std::size_t self) {
    const auto x = tp.value_at(ai).data();
    const auto y = tp.value_at(self).data();
    const auto g = tp.grad_at(self).data();
    auto ga = tp.grad_mut(ai).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + std::to_string(av.rows()) + "x" +
                         std::to_string(av.cols()) + " by " + std::to_string(bv.rows()) + "x" +
                         std::to_string(bv.cols()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Matrix out(m, n);
  kernels::gemm(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                [ai, bi, m, k, n](Tape& tp, std::size_t self) {
                  const auto g = tp.grad_at(self).data();
                  if (tp.requires_grad_at(ai)) {
                    kernels::gemm_bt(g, tp.value_at(bi).data(), tp.grad_mut(ai).data(), m, n, k,
                                     true);
                  }
                  if (tp.requires_grad_at(bi)) {
                    kernels::gemm_at(tp.value_at(ai).data(), g, tp.grad_mut(bi).data(), m, k, n,
                                     true);
                  }
                });
}

Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Matrix out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                [ai, bi](Tape& tp, std::size_t self) {
                  const auto g = tp.grad_at(self).data();
                  for (std::size_t id : {ai, bi}) {
                    if (!tp.requires_grad_at(id)) continue;
                    auto d = tp.grad_mut(id).data();
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                  }
                });
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "sub");
  Matrix out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                [ai, bi](Tape& tp, std::size_t self) {
                  const auto g = tp.grad_at(self).data();
                  if (tp.requires_grad_at(ai)) {
                    auto d = tp.grad_mut(ai).data();
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                  }
                  if (tp.requires_grad_at(bi)) {
                    auto d = tp.grad_mut(bi).data();
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
                  }
                });
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "mul");
  Matrix out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  const std::size_t ai = a.id, bi = b.id;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                [ai, bi](Tape& tp, std::size_t self) {
                  const auto g = tp.grad_at(self).data();
                  if (tp.requires_grad_at(ai)) {
                    const auto bd2 = tp.value_at(bi).data();
                    auto d = tp.grad_mut(ai).data();
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bd2[i];
                  }
                  if (tp.requires_grad_at(bi)) {
                    const auto ad = tp.value_at(ai).data();
                    auto d = tp.grad_mut(bi).data();
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * ad[i];
                  }
                });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a);
  for (double& v : out.data()) v *= s;
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai, s](Tape& tp, std::size_t self) {
    const auto g = tp.grad_at(self).data();
    auto d = tp.grad_mut(ai).data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
  });
}

Var add_row(Tape& t, Var a, Var bias) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw DimensionError("add_row: bias shape");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  const std::size_t ai = a.id, bi = bias.id;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(bias),
                [ai, bi](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_at(self);
                  if (tp.requires_grad_at(ai)) {
                    auto d = tp.grad_mut(ai).data();
                    const auto gd = g.data();
                    for (std::size_t i = 0; i < gd.size(); ++i) d[i] += gd[i];
                  }
                  if (tp.requires_grad_at(bi)) {
                    Matrix& db = tp.grad_mut(bi);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
                    }
                  }
                });
}

Var relu(Tape& t, Var a) {
  return elementwise_unary(
      t, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var silu(Tape& t, Var a) {
  return elementwise_unary(
      t, a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var sigmoid(Tape& t, Var a) {
  return elementwise_unary(
      t, a, [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += t.value(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& pv = t.value(p);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + off);
    }
    off += pv.cols();
    ids.push_back(p.id);
  }
  return t.push(std::move(out), rg, [ids](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    std::size_t off2 = 0;
    for (std::size_t id : ids) {
      const std::size_t w = tp.value_at(id).cols();
      if (tp.requires_grad_at(id)) {
        Matrix& d = tp.grad_mut(id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) d(r, c) += g(r, off2 + c);
        }
      }
      off2 += w;
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
  const Matrix& tv = t.value(table);
  Matrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw InputError("gather_rows: index " + std::to_string(ids[r]) + " out of range");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t ti = table.id;
  std::vector<int> idx(ids.begin(), ids.end());
  return t.push(std::move(out), t.requires_grad(table),
                [ti, idx = std::move(idx)](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_at(self);
                  Matrix& d = tp.grad_mut(ti);
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    auto dst = d.row(static_cast<std::size_t>(idx[r]));
                    auto src = g.row(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols) {
  Matrix out = t.value(a).reshaped(rows, cols);
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai](Tape& tp, std::size_t self) {
    const auto g = tp.grad_at(self).data();
    auto d = tp.grad_mut(ai).data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var group_sum_rows(Tape& t, Var a, std::size_t group) {
  const Matrix& av = t.value(a);
  if (group == 0 || av.rows() % group != 0) throw DimensionError("group_sum_rows: group size");
  const std::size_t groups = av.rows() / group;
  Matrix out(groups, av.cols());
  for (std::size_t g = 0; g < groups; ++g) {
    auto dst = out.row(g);
    for (std::size_t i = 0; i < group; ++i) {
      auto src = av.row(g * group + i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  }
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai, group](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    Matrix& d = tp.grad_mut(ai);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      auto src = g.row(r / group);
      auto dst = d.row(r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var repeat_rows(Tape& t, Var a, std::size_t times) {
  const Matrix& av = t.value(a);
  Matrix out(av.rows() * times, av.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto src = av.row(r / times);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai, times](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    Matrix& d = tp.grad_mut(ai);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto src = g.row(r);
      auto dst = d.row(r / times);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var tile_rows(Tape& t, Var a, std::size_t times) {
  const Matrix& av = t.value(a);
  const std::size_t rows = av.rows();
  Matrix out(rows * times, av.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto src = av.row(r % rows);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai, rows](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    Matrix& d = tp.grad_mut(ai);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto src = g.row(r);
      auto dst = d.row(r % rows);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var interleave_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("interleave_rows: no inputs");
  const Matrix& first = t.value(parts[0]);
  const std::size_t k = parts.size();
  bool rg = false;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    const Matrix& pv = t.value(p);
    if (pv.rows() != first.rows() || pv.cols() != first.cols()) {
      throw DimensionError("interleave_rows: parts must share a shape");
    }
    rg = rg || t.requires_grad(p);
    ids.push_back(p.id);
  }
  Matrix out(first.rows() * k, first.cols());
  for (std::size_t b = 0; b < first.rows(); ++b) {
    for (std::size_t i = 0; i < k; ++i) {
      auto src = t.value(parts[i]).row(b);
      std::copy(src.begin(), src.end(), out.row(b * k + i).begin());
    }
  }
  return t.push(std::move(out), rg, [ids, k](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    for (std::size_t i = 0; i < k; ++i) {
      if (!tp.requires_grad_at(ids[i])) continue;
      Matrix& d = tp.grad_mut(ids[i]);
      for (std::size_t b = 0; b < d.rows(); ++b) {
        auto src = g.row(b * k + i);
        auto dst = d.row(b);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    }
  });
}

Var row_scale(Tape& t, Var a, Var s) {
  const Matrix& av = t.value(a);
  const Matrix& sv = t.value(s);
  if (sv.cols() != 1 || sv.rows() != av.rows()) throw DimensionError("row_scale: scale shape");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (double& v : out.row(r)) v *= sv(r, 0);
  }
  const std::size_t ai = a.id, si = s.id;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(s),
                [ai, si](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_at(self);
                  const Matrix& a2 = tp.value_at(ai);
                  const Matrix& s2 = tp.value_at(si);
                  if (tp.requires_grad_at(ai)) {
                    Matrix& d = tp.grad_mut(ai);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) += g(r, c) * s2(r, 0);
                    }
                  }
                  if (tp.requires_grad_at(si)) {
                    Matrix& d = tp.grad_mut(si);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double acc = 0.0;
                      for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * a2(r, c);
                      d(r, 0) += acc;
                    }
                  }
                });
}

Var grouped_attention(Tape& t, Var q, Var k, Var v, std::size_t groups) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  if (groups == 0 || qv.cols() != kv.cols() || kv.rows() != vv.rows() ||
      qv.rows() % groups != 0 || kv.rows() % groups != 0) {
    throw DimensionError("grouped_attention: incompatible Q/K/V shapes");
  }
  const std::size_t lq = qv.rows() / groups;
  const std::size_t lk = kv.rows() / groups;
  const std::size_t d = qv.cols();
  const std::size_t dv = vv.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix probs(qv.rows(), lk);
  Matrix out(qv.rows(), dv);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < lq; ++i) {
      const std::size_t qi = g * lq + i;
      auto p = probs.row(qi);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < lk; ++j) {
        const std::size_t kj = g * lk + j;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += qv(qi, c) * kv(kj, c);
        p[j] = s * inv_sqrt_d;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (double& pj : p) {
        pj = std::exp(pj - mx);
        z += pj;
      }
      for (double& pj : p) pj /= z;
      auto o = out.row(qi);
      for (std::size_t j = 0; j < lk; ++j) {
        auto vr = vv.row(g * lk + j);
        for (std::size_t c = 0; c < dv; ++c) o[c] += p[j] * vr[c];
      }
    }
  }

  const std::size_t qid = q.id, kid = k.id, vid = v.id;
  const bool rg = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.push(std::move(out), rg,
                [qid, kid, vid, groups, lq, lk, d, dv, inv_sqrt_d,
                 probs = std::move(probs)](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad_at(self);
                  const Matrix& q2 = tp.value_at(qid);
                  const Matrix& k2 = tp.value_at(kid);
                  const Matrix& v2 = tp.value_at(vid);
                  const bool gq = tp.requires_grad_at(qid);
                  const bool gk = tp.requires_grad_at(kid);
                  const bool gv = tp.requires_grad_at(vid);
                  std::vector<double> dp(lk), ds(lk);
                  for (std::size_t grp = 0; grp < groups; ++grp) {
                    for (std::size_t i = 0; i < lq; ++i) {
                      const std::size_t qi = grp * lq + i;
                      auto p = probs.row(qi);
                      auto go = g.row(qi);
                      double dot = 0.0;
                      for (std::size_t j = 0; j < lk; ++j) {
                        auto vr = v2.row(grp * lk + j);
                        double s = 0.0;
                        for (std::size_t c = 0; c < dv; ++c) s += go[c] * vr[c];
                        dp[j] = s;
                        dot += p[j] * s;
                      }
                      for (std::size_t j = 0; j < lk; ++j) ds[j] = p[j] * (dp[j] - dot);
                      if (gv) {
                        Matrix& dvm = tp.grad_mut(vid);
                        for (std::size_t j = 0; j < lk; ++j) {
                          auto dst = dvm.row(grp * lk + j);
                          for (std::size_t c = 0; c < dv; ++c) dst[c] += p[j] * go[c];
                        }
                      }
                      if (gq) {
                        auto dst = tp.grad_mut(qid).row(qi);
                        for (std::size_t j = 0; j < lk; ++j) {
                          auto kr = k2.row(grp * lk + j);
                          for (std::size_t c = 0; c < d; ++c) dst[c] += ds[j] * inv_sqrt_d * kr[c];
                        }
                      }
                      if (gk) {
                        Matrix& dkm = tp.grad_mut(kid);
                        auto qr = q2.row(qi);
                        for (std::size_t j = 0; j < lk; ++j) {
                          auto dst = dkm.row(grp * lk + j);
                          for (std::size_t c = 0; c < d; ++c) dst[c] += ds[j] * inv_sqrt_d * qr[c];
                        }
                      }
                    }
                  }
                });
}

Var dropout(Tape& t, Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw InputError("dropout rate must be < 1");
  const Matrix& av = t.value(a);
  Matrix mask(av.rows(), av.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  return mul(t, a, t.constant(std::move(mask)));
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  const std::size_t ai = a.id;
  return t.push(Matrix(1, 1, s), t.requires_grad(a), [ai](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)(0, 0);
    for (double& d : tp.grad_mut(ai).data()) d += g;
  });
}

Var row_sum_squares(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v * v;
    out(r, 0) = s;
  }
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    const Matrix& a2 = tp.value_at(ai);
    Matrix& d = tp.grad_mut(ai);
    for (std::size_t r = 0; r < a2.rows(); ++r) {
      for (std::size_t c = 0; c < a2.cols(); ++c) d(r, c) += 2.0 * a2(r, c) * g(r, 0);
    }
  });
}

Var row_sum_abs(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += std::abs(v);
    out(r, 0) = s;
  }
  const std::size_t ai = a.id;
  return t.push(std::move(out), t.requires_grad(a), [ai](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_at(self);
    const Matrix& a2 = tp.value_at(ai);
    Matrix& d = tp.grad_mut(ai);
    for (std::size_t r = 0; r < a2.rows(); ++r) {
      for (std::size_t c = 0; c < a2.cols(); ++c) {
        const double x = a2(r, c);
        d(r, c) += (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)) * g(r, 0);
      }
    }
  });
}

Var weighted_sum(Tape& t, Var column, std::span<const double> weights) {
  const Matrix& cv = t.value(column);
  if (cv.cols() != 1 || cv.rows() != weights.size()) {
    throw DimensionError("weighted_sum: expects a column matching the weights");
  }
  double s = 0.0;
  for (std::size_t r = 0; r < weights.size(); ++r) s += weights[r] * cv(r, 0);
  const std::size_t ci = column.id;
  std::vector<double> w(weights.begin(), weights.end());
  return t.push(Matrix(1, 1, s), t.requires_grad(column),
                [ci, w = std::move(w)](Tape& tp, std::size_t self) {
                  const double g = tp.grad_at(self)(0, 0);
                  Matrix& d = tp.grad_mut(ci);
                  for (std::size_t r = 0; r < w.size(); ++r) d(r, 0) += w[r] * g;
                });
}

}  // namespace agd::nn
