#include "fddlab/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fddlab/errors.hpp"
#include "fddlab/numerics/tape.hpp"

namespace fddlab::num {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecF = Eigen::Map<Eigen::VectorXf>;

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

Tensor make(Shape shape, Buffer&& values) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->storage = std::make_shared<Buffer>(std::move(values));
  return Tensor(std::move(node));
}

void attach(Tape* tape, Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  out.set_requires_grad(true);
  tape->record(out, std::move(inputs), std::move(fn));
}

int norm_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

// outer x len x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  r.len = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

// ---------------------------------------------------------------- broadcast

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> dims, sa, sb;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.resize(r);
  std::vector<std::size_t> da(r), db(r);
  for (std::size_t i = 0; i < r; ++i) {
    da[i] = i < r - a.size() ? 1 : static_cast<std::size_t>(a[i - (r - a.size())]);
    db[i] = i < r - b.size() ? 1 : static_cast<std::size_t>(b[i - (r - b.size())]);
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    p.out[i] = static_cast<int>(std::max(da[i], db[i]));
  }
  std::vector<std::size_t> sa(r), sb(r);
  std::size_t ca = 1, cb = 1;
  for (std::size_t i = r; i-- > 0;) {
    sa[i] = da[i] == 1 ? 0 : ca;
    sb[i] = db[i] == 1 ? 0 : cb;
    ca *= da[i];
    cb *= db[i];
  }
  // Coalesce adjacent dims whose strides compose, and drop unit dims.
  for (std::size_t i = 0; i < r; ++i) {
    const auto n = static_cast<std::size_t>(p.out[i]);
    if (n == 1) continue;
    if (!p.dims.empty() && p.sa.back() == sa[i] * n && p.sb.back() == sb[i] * n) {
      p.dims.back() *= n;
      p.sa.back() = sa[i];
      p.sb.back() = sb[i];
    } else {
      p.dims.push_back(n);
      p.sa.push_back(sa[i]);
      p.sb.push_back(sb[i]);
    }
  }
  return p;
}

// f(out_offset, a_offset, b_offset, n, a_stride, b_stride) once per innermost row.
template <class F>
void for_rows(const BroadcastPlan& p, F&& f) {
  if (p.dims.empty()) {
    f(0, 0, 0, 1, 0, 0);
    return;
  }
  const std::size_t nd = p.dims.size();
  const std::size_t inner = p.dims.back();
  std::vector<std::size_t> idx(nd - 1, 0);
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < nd; ++i) rows *= p.dims[i];
  std::size_t ao = 0, bo = 0;
  for (std::size_t row = 0; row < rows; ++row) {
    f(row * inner, ao, bo, inner, p.sa.back(), p.sb.back());
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      ao += p.sa[d];
      bo += p.sb[d];
      if (idx[d] < p.dims[d]) break;
      ao -= p.sa[d] * p.dims[d];
      bo -= p.sb[d] * p.dims[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
  Buffer out(numel(plan->out));
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  for_rows(*plan, [&](std::size_t o, std::size_t ai, std::size_t bi, std::size_t n, std::size_t sa, std::size_t sb) {
    float* po = out.data() + o;
    const float* x = pa + ai;
    const float* y = pb + bi;
    switch (op) {
      case BinOp::Add:
        for (std::size_t j = 0; j < n; ++j) po[j] = x[j * sa] + y[j * sb];
        break;
      case BinOp::Sub:
        for (std::size_t j = 0; j < n; ++j) po[j] = x[j * sa] - y[j * sb];
        break;
      case BinOp::Mul:
        for (std::size_t j = 0; j < n; ++j) po[j] = x[j * sa] * y[j * sb];
        break;
    }
  });
  Tensor result = make(plan->out, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    Tensor ca = a, cb = b;
    attach(tape, result, {a, b}, [plan, ca, cb, op](std::span<const float> g, std::span<float* const> gin) {
      float* ga = gin[0];
      float* gb = gin[1];
      const float* pa = ca.ptr();
      const float* pb = cb.ptr();
      for_rows(*plan, [&](std::size_t o, std::size_t ai, std::size_t bi, std::size_t n, std::size_t sa, std::size_t sb) {
        const float* go = g.data() + o;
        if (ga) {
          float* d = ga + ai;
          if (op == BinOp::Mul) {
            for (std::size_t j = 0; j < n; ++j) d[j * sa] += go[j] * pb[bi + j * sb];
          } else {
            for (std::size_t j = 0; j < n; ++j) d[j * sa] += go[j];
          }
        }
        if (gb) {
          float* d = gb + bi;
          if (op == BinOp::Mul) {
            for (std::size_t j = 0; j < n; ++j) d[j * sb] += go[j] * pa[ai + j * sa];
          } else if (op == BinOp::Sub) {
            for (std::size_t j = 0; j < n; ++j) d[j * sb] -= go[j];
          } else {
            for (std::size_t j = 0; j < n; ++j) d[j * sb] += go[j];
          }
        }
      });
    });
  }
  return result;
}

void check_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& a, float s) {
  Buffer out(a.numel());
  const float* p = a.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] * s;
  Tensor r = make(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    attach(tape, r, {a}, [s](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * s;
    });
  }
  return r;
}

Tensor add_scalar(const Tensor& a, float s) {
  Buffer out(a.numel());
  const float* p = a.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] + s;
  Tensor r = make(a.shape(), std::move(out));
  if (Tape* tape = recording_tape({&a})) {
    attach(tape, r, {a}, [](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    });
  }
  return r;
}

Tensor silu(const Tensor& x) {
  Buffer out(x.numel());
  const float* p = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] / (1.0f + std::exp(-p[i]));
  Tensor r = make(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    Tensor cx = x;
    attach(tape, r, {x}, [cx](std::span<const float> g, std::span<float* const> gin) {
      const float* p = cx.ptr();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-p[i]));
        gin[0][i] += g[i] * s * (1.0f + p[i] * (1.0f - s));
      }
    });
  }
  return r;
}

Tensor relu(const Tensor& x) {
  Buffer out(x.numel());
  const float* p = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] > 0.0f ? p[i] : 0.0f;
  Tensor r = make(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    Tensor cx = x;
    attach(tape, r, {x}, [cx](std::span<const float> g, std::span<float* const> gin) {
      const float* p = cx.ptr();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (p[i] > 0.0f) gin[0][i] += g[i];
      }
    });
  }
  return r;
}

// ------------------------------------------------------------------ matmuls

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul", "a");
  check_rank(b, 2, "matmul", "b");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Buffer out(static_cast<std::size_t>(m) * n);
  MapR(out.data(), m, n).noalias() = CMapR(a.ptr(), m, k) * CMapR(b.ptr(), k, n);
  Tensor r = make({m, n}, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    Tensor ca = a, cb = b;
    attach(tape, r, {a, b}, [ca, cb, m, k, n](std::span<const float> g, std::span<float* const> gin) {
      CMapR G(g.data(), m, n);
      if (gin[0]) MapR(gin[0], m, k).noalias() += G * CMapR(cb.ptr(), k, n).transpose();
      if (gin[1]) MapR(gin[1], k, n).noalias() += CMapR(ca.ptr(), m, k).transpose() * G;
    });
  }
  return r;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  check_rank(a, 3, "bmm", "a");
  check_rank(b, 3, "bmm", "b");
  const int batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  const int bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw ShapeError("bmm: " + to_string(a.shape()) + " x " + to_string(b.shape()) +
                     (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t sa = static_cast<std::size_t>(m) * k, sbm = static_cast<std::size_t>(k) * n,
                    so = static_cast<std::size_t>(m) * n;
  Buffer out(so * batch);
  for (int i = 0; i < batch; ++i) {
    CMapR A(a.ptr() + i * sa, m, k);
    MapR O(out.data() + i * so, m, n);
    if (transpose_b) {
      O.noalias() = A * CMapR(b.ptr() + i * sbm, n, k).transpose();
    } else {
      O.noalias() = A * CMapR(b.ptr() + i * sbm, k, n);
    }
  }
  Tensor r = make({batch, m, n}, std::move(out));
  if (Tape* tape = recording_tape({&a, &b})) {
    Tensor ca = a, cb = b;
    attach(tape, r, {a, b}, [=](std::span<const float> g, std::span<float* const> gin) {
      for (int i = 0; i < batch; ++i) {
        CMapR G(g.data() + i * so, m, n);
        CMapR A(ca.ptr() + i * sa, m, k);
        if (transpose_b) {
          CMapR B(cb.ptr() + i * sbm, n, k);
          if (gin[0]) MapR(gin[0] + i * sa, m, k).noalias() += G * B;
          if (gin[1]) MapR(gin[1] + i * sbm, n, k).noalias() += G.transpose() * A;
        } else {
          CMapR B(cb.ptr() + i * sbm, k, n);
          if (gin[0]) MapR(gin[0] + i * sa, m, k).noalias() += G * B.transpose();
          if (gin[1]) MapR(gin[1] + i * sbm, k, n).noalias() += A.transpose() * G;
        }
      }
    });
  }
  return r;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank(w, 2, "linear", "weight");
  const int out_f = w.dim(0), in_f = w.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_f) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_f)) {
    throw ShapeError("linear: bias " + to_string(b.shape()) + " vs weight " + to_string(w.shape()));
  }
  const int rows = static_cast<int>(x.numel() / in_f);
  Buffer out(static_cast<std::size_t>(rows) * out_f);
  // Fixed-height row blocks keep every row on the same GEMM kernel, so a
  // row's result does not depend on how many rows share the call.
  constexpr int kBlock = 8;
  const CMapR W(w.ptr(), out_f, in_f);
  MatR xb(kBlock, in_f), yb(kBlock, out_f);
  for (int r0 = 0; r0 < rows; r0 += kBlock) {
    const int nb = std::min(kBlock, rows - r0);
    if (nb < kBlock) xb.setZero();
    xb.topRows(nb) = CMapR(x.ptr() + static_cast<std::size_t>(r0) * in_f, nb, in_f);
    yb.noalias() = xb * W.transpose();
    MapR(out.data() + static_cast<std::size_t>(r0) * out_f, nb, out_f) = yb.topRows(nb);
  }
  MapR Y(out.data(), rows, out_f);
  if (b.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.ptr(), out_f);
  Shape shape = x.shape();
  shape.back() = out_f;
  Tensor r = make(std::move(shape), std::move(out));
  if (Tape* tape = recording_tape({&x, &w, &b})) {
    Tensor cx = x, cw = w;
    std::vector<Tensor> ins{x, w};
    if (b.defined()) ins.push_back(b);
    attach(tape, r, std::move(ins), [=](std::span<const float> g, std::span<float* const> gin) {
      CMapR G(g.data(), rows, out_f);
      if (gin[0]) MapR(gin[0], rows, in_f).noalias() += G * CMapR(cw.ptr(), out_f, in_f);
      if (gin[1]) MapR(gin[1], out_f, in_f).noalias() += G.transpose() * CMapR(cx.ptr(), rows, in_f);
      if (gin.size() > 2 && gin[2]) {
        Eigen::Map<Eigen::RowVectorXf>(gin[2], out_f) += G.colwise().sum();
      }
    });
  }
  return r;
}

// ------------------------------------------------------------- convolution

namespace {

struct ConvGeom {
  int n, ci, h, w, co, k, stride, pad, ho, wo;
  std::size_t K() const { return static_cast<std::size_t>(ci) * k * k; }
  std::size_t P() const { return static_cast<std::size_t>(n) * ho * wo; }
};

void im2col(const ConvGeom& g, const float* x, float* cols) {
  const std::size_t P = g.P();
  const std::size_t hw_out = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * P;
        for (int b = 0; b < g.n; ++b) {
          const float* xp = x + (static_cast<std::size_t>(b) * g.ci + c) * g.h * g.w;
          float* rp = row + b * hw_out;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride + ky - g.pad;
            float* dst = rp + static_cast<std::size_t>(oy) * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst, dst + g.wo, 0.0f);
              continue;
            }
            const float* src = xp + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride + kx - g.pad;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const float* cols, float* dx) {
  const std::size_t P = g.P();
  const std::size_t hw_out = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * P;
        for (int b = 0; b < g.n; ++b) {
          float* xp = dx + (static_cast<std::size_t>(b) * g.ci + c) * g.h * g.w;
          const float* rp = row + b * hw_out;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.h) continue;
            const float* src = rp + static_cast<std::size_t>(oy) * g.wo;
            float* dst = xp + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride + kx - g.pad;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  check_rank(x, 4, "conv2d", "input");
  check_rank(w, 4, "conv2d", "weight");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  ConvGeom g{};
  g.n = x.dim(0);
  g.ci = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.co = w.dim(0);
  g.k = w.dim(2);
  if (w.dim(1) != g.ci || w.dim(3) != g.k || g.k % 2 == 0) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != g.co)) {
    throw ShapeError("conv2d: bias " + to_string(b.shape()) + " vs weight " + to_string(w.shape()));
  }
  g.stride = stride;
  g.pad = g.k / 2;
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;

  const std::size_t K = g.K(), P = g.P(), hw_out = static_cast<std::size_t>(g.ho) * g.wo;
  auto cols = std::make_shared<Buffer>(K * P);
  im2col(g, x.ptr(), cols->data());
  // One GEMM per sample: Eigen's blocking depends on the column count, so a
  // single wide product would make a sample's output depend on the batch.
  using Strided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;
  const CMapR W(w.ptr(), g.co, K);
  Buffer out(static_cast<std::size_t>(g.n) * g.co * hw_out);
  for (int bi = 0; bi < g.n; ++bi) {
    MapR dst(out.data() + static_cast<std::size_t>(bi) * g.co * hw_out, g.co, static_cast<Eigen::Index>(hw_out));
    dst.noalias() = W * Strided(cols->data() + bi * hw_out, K, hw_out, Eigen::OuterStride<>(P));
    if (b.defined()) dst.colwise() += Eigen::Map<const Eigen::VectorXf>(b.ptr(), g.co);
  }
  Tensor r = make({g.n, g.co, g.ho, g.wo}, std::move(out));
  if (Tape* tape = recording_tape({&x, &w, &b})) {
    Tensor cw = w;
    std::vector<Tensor> ins{x, w};
    if (b.defined()) ins.push_back(b);
    attach(tape, r, std::move(ins), [=](std::span<const float> gout, std::span<float* const> gin) {
      MatR gm(g.co, static_cast<Eigen::Index>(P));
      for (int bi = 0; bi < g.n; ++bi) {
        for (int c = 0; c < g.co; ++c) {
          std::memcpy(gm.data() + c * P + bi * hw_out, gout.data() + (static_cast<std::size_t>(bi) * g.co + c) * hw_out,
                      hw_out * sizeof(float));
        }
      }
      if (gin[1]) MapR(gin[1], g.co, K).noalias() += gm * CMapR(cols->data(), K, P).transpose();
      if (gin.size() > 2 && gin[2]) Eigen::Map<Eigen::VectorXf>(gin[2], g.co) += gm.rowwise().sum();
      if (gin[0]) {
        MatR dcols(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        dcols.noalias() = CMapR(cw.ptr(), g.co, K).transpose() * gm;
        col2im(g, dcols.data(), gin[0]);
      }
    });
  }
  return r;
}

Tensor upsample2x(const Tensor& x) {
  check_rank(x, 4, "upsample2x", "input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  Buffer out(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.ptr() + p * h * w;
    float* dst = out.data() + p * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  Tensor r = make({n, c, 2 * h, 2 * w}, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, r, {x}, [=](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t p = 0; p < planes; ++p) {
        const float* src = g.data() + p * 4 * h * w;
        float* dst = gin[0] + p * h * w;
        for (int y = 0; y < 2 * h; ++y) {
          for (int xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
        }
      }
    });
  }
  return r;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 2) throw ShapeError("group_norm: input needs rank >= 2, got " + to_string(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  if (groups <= 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                     " groups");
  }
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
    throw ShapeError("group_norm: affine params " + to_string(gamma.shape()) + " vs channels " + std::to_string(c));
  }
  const std::size_t spatial = x.numel() / (static_cast<std::size_t>(n) * c);
  const int cpg = c / groups;
  const std::size_t m = spatial * cpg;
  auto stats = std::make_shared<Buffer>(static_cast<std::size_t>(n) * groups * 2);
  Buffer out(x.numel());
  const float* px = x.ptr();
  for (int b = 0; b < n; ++b) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + gi * cpg) * spatial;
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += px[base + i];
      const double mu = s / m;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = px[base + i] - mu;
        s2 += d * d;
      }
      const float rstd = static_cast<float>(1.0 / std::sqrt(s2 / m + eps));
      (*stats)[(b * groups + gi) * 2] = static_cast<float>(mu);
      (*stats)[(b * groups + gi) * 2 + 1] = rstd;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = gi * cpg + cc;
        const float ga = gamma.ptr()[ch], be = beta.ptr()[ch];
        const std::size_t off = base + cc * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          out[off + i] = (px[off + i] - static_cast<float>(mu)) * rstd * ga + be;
        }
      }
    }
  }
  Tensor r = make(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x, &gamma, &beta})) {
    Tensor cx = x, cg = gamma;
    attach(tape, r, {x, gamma, beta}, [=](std::span<const float> g, std::span<float* const> gin) {
      const float* px = cx.ptr();
      for (int b = 0; b < n; ++b) {
        for (int gi = 0; gi < groups; ++gi) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + gi * cpg) * spatial;
          const float mu = (*stats)[(b * groups + gi) * 2];
          const float rstd = (*stats)[(b * groups + gi) * 2 + 1];
          double sum_d = 0.0, sum_dx = 0.0;
          for (int cc = 0; cc < cpg; ++cc) {
            const int ch = gi * cpg + cc;
            const float ga = cg.ptr()[ch];
            const std::size_t off = base + cc * spatial;
            double dg = 0.0, db = 0.0;
            for (std::size_t i = 0; i < spatial; ++i) {
              const float xh = (px[off + i] - mu) * rstd;
              const float gv = g[off + i];
              dg += gv * xh;
              db += gv;
              sum_d += gv * ga;
              sum_dx += gv * ga * xh;
            }
            if (gin[1]) gin[1][ch] += static_cast<float>(dg);
            if (gin[2]) gin[2][ch] += static_cast<float>(db);
          }
          if (!gin[0]) continue;
          const float md = static_cast<float>(sum_d / m), mdx = static_cast<float>(sum_dx / m);
          for (int cc = 0; cc < cpg; ++cc) {
            const int ch = gi * cpg + cc;
            const float ga = cg.ptr()[ch];
            const std::size_t off = base + cc * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const float xh = (px[off + i] - mu) * rstd;
              gin[0][off + i] += rstd * (g[off + i] * ga - md - xh * mdx);
            }
          }
        }
      }
    });
  }
  return r;
}

Tensor softmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), a);
  if (s.len == 0) throw ShapeError("softmax over an empty axis");
  Buffer out(x.numel());
  const float* px = x.ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      float mx = px[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, px[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const float e = std::exp(px[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      const float inv = static_cast<float>(1.0 / z);
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] *= inv;
    }
  }
  Tensor r = make(x.shape(), std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    Tensor cy = r;
    attach(tape, r, {x}, [s, cy](std::span<const float> g, std::span<float* const> gin) {
      const float* y = cy.ptr();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.len * s.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < s.len; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t i = base + j * s.inner;
            gin[0][i] += y[i] * (g[i] - static_cast<float>(dot));
          }
        }
      }
    });
  }
  return r;
}

// ------------------------------------------------------------ layout ops

Tensor concat(std::initializer_list<Tensor> xs, int axis) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()), axis);
}

Tensor concat(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat of zero tensors");
  const int a = norm_axis(axis, xs[0].rank(), "concat");
  Shape shape = xs[0].shape();
  shape[a] = 0;
  for (const auto& t : xs) {
    Shape probe = t.shape();
    if (probe.size() != shape.size()) {
      throw ShapeError("concat: " + to_string(xs[0].shape()) + " vs " + to_string(t.shape()));
    }
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (static_cast<int>(i) != a && probe[i] != xs[0].shape()[i]) {
        throw ShapeError("concat: " + to_string(xs[0].shape()) + " vs " + to_string(t.shape()));
      }
    }
    shape[a] += t.dim(a);
  }
  const AxisSplit so = split_at(shape, a);
  Buffer out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t running = 0;
  for (const auto& t : xs) {
    offsets.push_back(running);
    const std::size_t chunk = static_cast<std::size_t>(t.dim(a)) * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::memcpy(out.data() + o * so.len * so.inner + running * so.inner, t.ptr() + o * chunk, chunk * sizeof(float));
    }
    running += t.dim(a);
  }
  Tensor r = make(shape, std::move(out));
  Tape* tape = active_tape();
  bool any = false;
  for (const auto& t : xs) any = any || t.requires_grad();
  if (tape && any) {
    std::vector<std::size_t> lens;
    for (const auto& t : xs) lens.push_back(static_cast<std::size_t>(t.dim(a)));
    attach(tape, r, std::vector<Tensor>(xs.begin(), xs.end()),
           [so, offsets, lens](std::span<const float> g, std::span<float* const> gin) {
             for (std::size_t k = 0; k < gin.size(); ++k) {
               if (!gin[k]) continue;
               const std::size_t chunk = lens[k] * so.inner;
               for (std::size_t o = 0; o < so.outer; ++o) {
                 const float* src = g.data() + o * so.len * so.inner + offsets[k] * so.inner;
                 float* dst = gin[k] + o * chunk;
                 for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
               }
             }
           });
  }
  return r;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  const int a = norm_axis(axis, x.rank(), "slice");
  if (start < 0 || length <= 0 || start + length > x.dim(a)) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                     to_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), a);
  Shape shape = x.shape();
  shape[a] = length;
  const std::size_t chunk = static_cast<std::size_t>(length) * s.inner;
  Buffer out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::memcpy(out.data() + o * chunk, x.ptr() + o * s.len * s.inner + static_cast<std::size_t>(start) * s.inner,
                chunk * sizeof(float));
  }
  Tensor r = make(shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, r, {x}, [s, chunk, start](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        float* dst = gin[0] + o * s.len * s.inner + static_cast<std::size_t>(start) * s.inner;
        const float* src = g.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  }
  return r;
}

Tensor sum(const Tensor& x) {
  const std::size_t n = x.numel();
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor r = make({}, {static_cast<float>(acc)});
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, r, {x}, [n](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor r = make({}, {static_cast<float>(acc / static_cast<double>(n))});
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, r, {x}, [n](std::span<const float> g, std::span<float* const> gin) {
      const float gv = static_cast<float>(g[0] / static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) gin[0][i] += gv;
    });
  }
  return r;
}

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.rank(), "sum_axis");
  const AxisSplit s = split_at(x.shape(), a);
  Shape shape = x.shape();
  if (keepdim) {
    shape[a] = 1;
  } else {
    shape.erase(shape.begin() + a);
  }
  Buffer out(s.outer * s.inner);
  std::vector<double> acc(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < s.len; ++j) {
      const float* p = x.ptr() + (o * s.len + j) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) acc[i] += p[i];
    }
    for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] = static_cast<float>(acc[i]);
  }
  Tensor r = make(shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, r, {x}, [s](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.len; ++j) {
          float* d = gin[0] + (o * s.len + j) * s.inner;
          const float* src = g.data() + o * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) d[i] += src[i];
        }
      }
    });
  }
  return r;
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.rank(), "mean_axis");
  return scale(sum_axis(x, a, keepdim), 1.0f / static_cast<float>(x.dim(a)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  int infer = -1;
  std::size_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= static_cast<std::size_t>(std::max(shape[i], 0));
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = static_cast<int>(x.numel() / known);
  for (int d : shape) {
    if (d <= 0) throw ShapeError("reshape: invalid target " + to_string(shape));
  }
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->storage = x.node()->storage;
  Tensor r(std::move(node));
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, r, {x}, [](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    });
  }
  return r;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape shape(r);
  std::vector<std::size_t> in_stride(r), src_stride(r);
  std::size_t acc = 1;
  for (int i = r; i-- > 0;) {
    in_stride[i] = acc;
    acc *= static_cast<std::size_t>(x.dim(i));
  }
  for (int i = 0; i < r; ++i) {
    shape[i] = x.dim(perm[i]);
    src_stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = x.numel();
  auto mapping = std::make_shared<std::vector<std::size_t>>(total);
  {
    std::vector<int> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < total; ++o) {
      (*mapping)[o] = src;
      for (int d = r; d-- > 0;) {
        ++idx[d];
        src += src_stride[d];
        if (idx[d] < shape[d]) break;
        src -= src_stride[d] * static_cast<std::size_t>(shape[d]);
        idx[d] = 0;
      }
    }
  }
  Buffer out(total);
  const float* px = x.ptr();
  for (std::size_t o = 0; o < total; ++o) out[o] = px[(*mapping)[o]];
  Tensor result = make(shape, std::move(out));
  if (Tape* tape = recording_tape({&x})) {
    attach(tape, result, {x}, [mapping](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t o = 0; o < g.size(); ++o) gin[0][(*mapping)[o]] += g[o];
    });
  }
  return result;
}

Tensor stop_grad(const Tensor& x) {
  auto node = std::make_shared<Node>();
  node->shape = x.shape();
  node->storage = x.node()->storage;
  node->requires_grad = false;
  return Tensor(std::move(node));
}

Tensor gather(const Tensor& table, std::span<const int> indices) {
  check_rank(table, 2, "gather", "table");
  const int v = table.dim(0), d = table.dim(1);
  if (indices.empty()) throw ShapeError("gather: empty index list");
  Buffer out(indices.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int id = indices[i];
    if (id < 0 || id >= v) {
      throw std::out_of_range("gather: index " + std::to_string(id) + " outside table of " + std::to_string(v) +
                              " rows");
    }
    std::memcpy(out.data() + i * d, table.ptr() + static_cast<std::size_t>(id) * d, d * sizeof(float));
  }
  Tensor r = make({static_cast<int>(indices.size()), d}, std::move(out));
  if (Tape* tape = recording_tape({&table})) {
    std::vector<int> ids(indices.begin(), indices.end());
    attach(tape, r, {table}, [ids, d](std::span<const float> g, std::span<float* const> gin) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        float* dst = gin[0] + static_cast<std::size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }
  return r;
}

}  // namespace fddlab::num
