// SPDX-License-Identifier: Apache-2.0
#include "sppl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sppl/error.hpp"

namespace sppl {

namespace {

void need(const Tensor& t, const char* op) {
  if (!t.defined()) throw_data(std::string(op) + ": undefined tensor");
}

void check_finite(const Tensor& t, const char* op) {
  for (const double v : t.values()) {
    if (!std::isfinite(v)) throw_numeric(std::string("non-finite values from ") + op);
  }
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Plan for numpy-style broadcasting of two shapes; strides are per output
// dim in elements, zero where an input broadcasts.
struct BcPlan {
  Shape out;
  std::vector<std::size_t> sa, sb;
  std::size_t n = 1;
};

BcPlan make_bc_plan(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  BcPlan p;
  p.out.resize(rank);
  p.sa.assign(rank, 0);
  p.sb.assign(rank, 0);
  const auto stA = row_major_strides(a);
  const auto stB = row_major_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const bool hasA = i >= rank - a.size();
    const bool hasB = i >= rank - b.size();
    const std::size_t da = hasA ? a[i - (rank - a.size())] : 1;
    const std::size_t db = hasB ? b[i - (rank - b.size())] : 1;
    if (da != db && da != 1 && db != 1) {
      throw_data(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
    if (hasA && da != 1) p.sa[i] = stA[i - (rank - a.size())];
    if (hasB && db != 1) p.sb[i] = stB[i - (rank - b.size())];
    p.n *= p.out[i];
  }
  return p;
}

template <typename F>
void bc_for_each(const BcPlan& p, F&& f) {
  if (p.n == 0) return;
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0;;) {
    f(flat, oa, ob);
    if (++flat == p.n) break;
    std::size_t d = rank;
    while (d-- > 0) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.sa[d] * idx[d];
      ob -= p.sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class EwKind { add, sub, mul };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind, const char* name) {
  need(a, name);
  need(b, name);
  const BcPlan plan = make_bc_plan(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(plan.out);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mutable_values();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < ov.size(); ++i) {
      switch (kind) {
        case EwKind::add: ov[i] = av[i] + bv[i]; break;
        case EwKind::sub: ov[i] = av[i] - bv[i]; break;
        case EwKind::mul: ov[i] = av[i] * bv[i]; break;
      }
    }
  } else {
    bc_for_each(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      switch (kind) {
        case EwKind::add: ov[o] = av[ia] + bv[ib]; break;
        case EwKind::sub: ov[o] = av[ia] - bv[ib]; break;
        case EwKind::mul: ov[o] = av[ia] * bv[ib]; break;
      }
    });
  }
  check_finite(out, name);
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, plan, kind]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      std::vector<double>* ga = ac.requires_grad() ? &ac.grad_buffer() : nullptr;
      std::vector<double>* gb = bc.requires_grad() ? &bc.grad_buffer() : nullptr;
      const auto& av = ac.values();
      const auto& bv = bc.values();
      bc_for_each(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        const double g = og[o];
        switch (kind) {
          case EwKind::add:
            if (ga) (*ga)[ia] += g;
            if (gb) (*gb)[ib] += g;
            break;
          case EwKind::sub:
            if (ga) (*ga)[ia] += g;
            if (gb) (*gb)[ib] -= g;
            break;
          case EwKind::mul:
            if (ga) (*ga)[ia] += g * bv[ib];
            if (gb) (*gb)[ib] += g * av[ia];
            break;
        }
      });
    });
  }
  return out;
}

void mm_forward(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* arow = A + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      const double* brow = B + kk * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += aik * brow[j];
    }
  }
}

void mm_grad_a(const double* dC, const double* B, double* dA, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dC + i * n;
    double* darow = dA + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = B + kk * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[kk] += s;
    }
  }
}

void mm_grad_b(const double* A, const double* dC, double* dB, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dC + i * n;
    const double* arow = A + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      double* dbrow = dB + kk * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += aik * dcrow[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::mul, "mul"); }

Tensor scale(const Tensor& a, double c) {
  need(a, "scale");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  check_finite(out, "scale");
  if (tracing(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, c]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& ga = ac.grad_buffer();
      for (std::size_t i = 0; i < og.size(); ++i) ga[i] += c * og[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  need(a, "matmul");
  need(b, "matmul");
  if (a.rank() < 2 || b.rank() < 2) throw_data("matmul: shape: operands must have rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  if (k != k2) {
    throw_data("matmul: shape: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Shape batchA(a.shape().begin(), a.shape().end() - 2);
  const Shape batchB(b.shape().begin(), b.shape().end() - 2);
  // Plan over batch dims only; offsets count whole matrices.
  const BcPlan plan = make_bc_plan(batchA, batchB, "matmul");
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);

  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.mutable_values().data();
  const std::size_t asz = m * k, bsz = k * n, osz = m * n;
  bc_for_each(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    mm_forward(av + ia * asz, bv + ib * bsz, ov + o * osz, m, k, n);
  });
  check_finite(out, "matmul");
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, plan, m, k, n]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      const std::size_t asz = m * k, bsz = k * n, osz = m * n;
      const double* av = ac.values().data();
      const double* bv = bc.values().data();
      double* ga = ac.requires_grad() ? ac.grad_buffer().data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_buffer().data() : nullptr;
      bc_for_each(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        const double* dC = og.data() + o * osz;
        if (ga) mm_grad_a(dC, bv + ib * bsz, ga + ia * asz, m, k, n);
        if (gb) mm_grad_b(av + ia * asz, dC, gb + ib * bsz, m, k, n);
      });
    });
  }
  return out;
}

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
  const int rank = static_cast<int>(s.size());
  int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw_data(std::string(op) + ": axis out of range");
  AxisSplit r{1, s[static_cast<std::size_t>(ax)], 1};
  for (int i = 0; i < ax; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < rank; ++i) r.inner *= s[static_cast<std::size_t>(i)];
  return r;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  need(x, "softmax");
  const AxisSplit ax = split_axis(x.shape(), axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t o = 0; o < ax.outer; ++o) {
    for (std::size_t in = 0; in < ax.inner; ++in) {
      const std::size_t base = o * ax.len * ax.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < ax.len; ++j) mx = std::max(mx, xv[base + j * ax.inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < ax.len; ++j) {
        const double e = std::exp(xv[base + j * ax.inner] - mx);
        ov[base + j * ax.inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t j = 0; j < ax.len; ++j) ov[base + j * ax.inner] *= inv;
    }
  }
  check_finite(out, "softmax");
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, ax]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      const auto& yv = oc.values();
      for (std::size_t o = 0; o < ax.outer; ++o) {
        for (std::size_t in = 0; in < ax.inner; ++in) {
          const std::size_t base = o * ax.len * ax.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < ax.len; ++j) {
            const std::size_t p = base + j * ax.inner;
            dot += og[p] * yv[p];
          }
          for (std::size_t j = 0; j < ax.len; ++j) {
            const std::size_t p = base + j * ax.inner;
            gx[p] += yv[p] * (og[p] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  need(x, "layer_norm");
  need(gamma, "layer_norm");
  need(beta, "layer_norm");
  if (x.rank() < 1) throw_data("layer_norm: rank 0 input");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.size() != d || beta.size() != d) {
    throw_data("layer_norm: gamma/beta size must match last axis extent " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  auto& ov = out.mutable_values();
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * inv;
      xhat[r * d + j] = h;
      ov[r * d + j] = gv[j] * h + bv[j];
    }
  }
  check_finite(out, "layer_norm");
  if (Tape::active() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    Tape::active()->record([xc, gc, bc, oc, xh = std::move(xhat), inv = std::move(inv_sigma), rows,
                            d]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      const auto& gv = gc.values();
      double* gx = xc.requires_grad() ? xc.grad_buffer().data() : nullptr;
      double* gg = gc.requires_grad() ? gc.grad_buffer().data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = og.data() + r * d;
        const double* h = xh.data() + r * d;
        if (gg || gb) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += dy[j] * h[j];
            if (gb) gb[j] += dy[j];
          }
        }
        if (gx) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy[j] * gv[j];
            m1 += dxh;
            m2 += dxh * h[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          double* gxr = gx + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = dy[j] * gv[j];
            gxr[j] += inv[r] * (dxh - m1 - h[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  need(x, "gelu");
  static constexpr double kC = 0.79788456080286535588;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double v = xv[i];
    const double u = kC * (v + kA * v * v * v);
    ov[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  check_finite(out, "gelu");
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      const auto& xv = xc.values();
      for (std::size_t i = 0; i < og.size(); ++i) {
        const double v = xv[i];
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        gx[i] += og[i] * d;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  need(logits, "cross_entropy");
  if (logits.rank() != 2) throw_data("cross_entropy: logits must be [n x V]");
  const std::size_t n = logits.dim(0);
  const std::size_t v = logits.dim(1);
  if (targets.size() != n) throw_data("cross_entropy: targets length mismatch");
  std::size_t count = 0;
  for (const int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) throw_data("cross_entropy: vocab overflow, id " + std::to_string(t));
    ++count;
  }
  if (count == 0) throw_data("cross_entropy: no supervised positions");
  const auto& zv = logits.values();
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int t = targets[r];
    if (t == ignore_id) continue;
    const double* z = zv.data() + r * v;
    double mx = z[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(z[j] - mx);
    loss += mx + std::log(sum) - z[static_cast<std::size_t>(t)];
  }
  loss /= static_cast<double>(count);
  Tensor out = Tensor::scalar(loss);
  check_finite(out, "cross_entropy");
  if (tracing(logits)) {
    out.set_requires_grad(true);
    Tensor zc = logits, oc = out;
    std::vector<int> tcopy(targets.begin(), targets.end());
    Tape::active()->record([zc, oc, tcopy = std::move(tcopy), ignore_id, n, v, count]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      const double gscale = og[0] / static_cast<double>(count);
      auto& gz = zc.grad_buffer();
      const auto& zv = zc.values();
      for (std::size_t r = 0; r < n; ++r) {
        const int t = tcopy[r];
        if (t == ignore_id) continue;
        const double* z = zv.data() + r * v;
        double* g = gz.data() + r * v;
        double mx = z[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < v; ++j) sum += std::exp(z[j] - mx);
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < v; ++j) {
          double p = std::exp(z[j] - mx) * inv;
          if (j == static_cast<std::size_t>(t)) p -= 1.0;
          g[j] += gscale * p;
        }
      }
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  need(table, "embedding");
  if (table.rank() != 2) throw_data("embedding: table must be [V x H]");
  const std::size_t v = table.dim(0);
  const std::size_t h = table.dim(1);
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw_data("embedding: id out of range: " + std::to_string(id));
    }
  }
  Tensor out = Tensor::zeros({ids.size(), h});
  const auto& tv = table.values();
  auto& ov = out.mutable_values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::memcpy(ov.data() + r * h, tv.data() + static_cast<std::size_t>(ids[r]) * h, h * sizeof(double));
  }
  check_finite(out, "embedding");
  if (tracing(table)) {
    out.set_requires_grad(true);
    Tensor tc = table, oc = out;
    std::vector<int> idc(ids.begin(), ids.end());
    Tape::active()->record([tc, oc, idc = std::move(idc), h]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gt = tc.grad_buffer();
      for (std::size_t r = 0; r < idc.size(); ++r) {
        const double* src = og.data() + r * h;
        double* dst = gt.data() + static_cast<std::size_t>(idc[r]) * h;
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  need(a, "concat");
  need(b, "concat");
  if (a.rank() != b.rank()) throw_data("concat: rank mismatch");
  if (axis >= a.rank()) throw_data("concat: axis out of range");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) throw_data("concat: shape mismatch off-axis");
  }
  Shape out_shape = a.shape();
  out_shape[axis] = a.dim(axis) + b.dim(axis);
  Tensor out = Tensor::zeros(out_shape);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t blockA = a.dim(axis) * inner;
  const std::size_t blockB = b.dim(axis) * inner;
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mutable_values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::memcpy(ov.data() + o * (blockA + blockB), av.data() + o * blockA, blockA * sizeof(double));
    std::memcpy(ov.data() + o * (blockA + blockB) + blockA, bv.data() + o * blockB, blockB * sizeof(double));
  }
  if (tracing(a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, outer, blockA, blockB]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      double* ga = ac.requires_grad() ? ac.grad_buffer().data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_buffer().data() : nullptr;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = og.data() + o * (blockA + blockB);
        if (ga) {
          for (std::size_t j = 0; j < blockA; ++j) ga[o * blockA + j] += src[j];
        }
        if (gb) {
          for (std::size_t j = 0; j < blockB; ++j) gb[o * blockB + j] += src[blockA + j];
        }
      }
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  need(x, "permute");
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw_data("permute: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (const std::size_t p : perm) {
    if (p >= rank || seen[p]) throw_data("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(perm[i]);
  const auto xstr = row_major_strides(x.shape());
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = xstr[perm[i]];
  Tensor out = Tensor::zeros(out_shape);
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  const std::size_t n = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    ov[flat] = xv[src];
    std::size_t d = rank;
    while (d-- > 0) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, out_shape, src_stride]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      const std::size_t rank = out_shape.size();
      std::vector<std::size_t> idx(rank, 0);
      std::size_t src = 0;
      for (std::size_t flat = 0; flat < og.size(); ++flat) {
        gx[src] += og[flat];
        std::size_t d = rank;
        while (d-- > 0) {
          ++idx[d];
          src += src_stride[d];
          if (idx[d] < out_shape[d]) break;
          src -= src_stride[d] * idx[d];
          idx[d] = 0;
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  need(x, "reshape");
  if (shape_size(new_shape) != x.size()) {
    throw_data("reshape: size mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
  }
  Tensor out = Tensor::from_data(std::move(new_shape), x.values());
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  need(x, "sum_all");
  double s = 0.0;
  for (const double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum_all");
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      for (auto& g : gx) g += og[0];
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  need(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw_data("dropout: probability must be in [0, 1)");
  if (!train || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, mask = std::move(mask)]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i] * mask[i];
    });
  }
  return out;
}

Tensor rel_gather(const Tensor& x, std::size_t mem_len) {
  need(x, "rel_gather");
  if (x.rank() < 2) throw_data("rel_gather: rank must be >= 2");
  const std::size_t t = x.dim(x.rank() - 2);
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t batch = x.size() / (t * d);
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t row = (b * t + i) * d;
      for (std::size_t j = 0; j < d; ++j) {
        const std::ptrdiff_t dist = static_cast<std::ptrdiff_t>(mem_len + i) - static_cast<std::ptrdiff_t>(j);
        if (dist >= 0 && dist < static_cast<std::ptrdiff_t>(d)) {
          ov[row + j] = xv[row + static_cast<std::size_t>(dist)];
        }
      }
    }
  }
  if (tracing(x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, mem_len, batch, t, d]() mutable {
      const auto& og = oc.grad_raw();
      if (og.empty()) return;
      auto& gx = xc.grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < t; ++i) {
          const std::size_t row = (b * t + i) * d;
          for (std::size_t j = 0; j < d; ++j) {
            const std::ptrdiff_t dist =
                static_cast<std::ptrdiff_t>(mem_len + i) - static_cast<std::ptrdiff_t>(j);
            if (dist >= 0 && dist < static_cast<std::ptrdiff_t>(d)) {
              gx[row + static_cast<std::size_t>(dist)] += og[row + j];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace sppl
