#include "closenas/compute/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace closenas::compute {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << '}';
  return os.str();
}

std::vector<std::string> required_ops() {
  return {"matmul",   "conv2d_1x1", "conv2d_3x3", "avg_pool3x3", "add",        "mul",
          "relu",     "sigmoid",    "softmax",    "batch_norm",  "cross_entropy"};
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

template <typename T>
void accumulate(Tape<T>& tape, int id, const Tensor<T>& g) {
  if (!tape.needs_grad(id)) return;
  auto& dst = tape.grad(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
  require(a.valid() && b.valid() && &a.tape() == &b.tape(), "operands live on different tapes");
}

// im2col for a 3x3 same-padded kernel: rows (c, ky, kx), cols (n, y, x).
template <typename T>
void im2col3(const T* x, int c_in, int n, int h, int w, T* col) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t cols = static_cast<std::size_t>(n) * plane;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * cols;
        for (int b = 0; b < n; ++b) {
          const T* src = x + (static_cast<std::size_t>(c) * n + b) * plane;
          T* out = dst + b * plane;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            T* orow = out + static_cast<std::size_t>(y) * w;
            if (sy < 0 || sy >= h) {
              std::fill(orow, orow + w, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(sy) * w;
            for (int xx = 0; xx < w; ++xx) {
              const int sx = xx + kx - 1;
              orow[xx] = (sx < 0 || sx >= w) ? T(0) : srow[sx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3(const T* col, int c_in, int n, int h, int w, T* dx) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t cols = static_cast<std::size_t>(n) * plane;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * cols;
        for (int b = 0; b < n; ++b) {
          T* dst = dx + (static_cast<std::size_t>(c) * n + b) * plane;
          const T* in = src + b * plane;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            const T* irow = in + static_cast<std::size_t>(y) * w;
            T* drow = dst + static_cast<std::size_t>(sy) * w;
            for (int xx = 0; xx < w; ++xx) {
              const int sx = xx + kx - 1;
              if (sx >= 0 && sx < w) drow[sx] += irow[xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().same_shape(b.value()), "add: shape mismatch " + shape_string(a.shape()) +
                                               " vs " + shape_string(b.shape()));
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms) {
  require(!terms.empty(), "add_n: no terms");
  if (terms.size() == 1) return terms.front();
  Tensor<T> out = terms.front().value();
  for (std::size_t k = 1; k < terms.size(); ++k) {
    require(terms[k].value().same_shape(out), "add_n: shape mismatch");
    const auto& v = terms[k].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  std::vector<int> ids;
  for (const auto& v : terms) ids.push_back(v.id());
  return terms.front().tape().record(std::move(out), terms, [ids](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    for (int id : ids) accumulate(t, id, g);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv2 = t.value(ib);
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, Var<T> s) {
  require_same_tape(a, s);
  require(s.value().size() == 1, "scale: factor must be a single element");
  const T f = s.value()[0];
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= f;
  const int ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {a, s}, [ia, is](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const T factor = t.value(is)[0];
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    }
    if (t.needs_grad(is)) {
      const auto& av = t.value(ia);
      T acc = T(0);
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad(is)[0] += acc;
    }
  });
}

template <typename T>
Var<T> scale_const(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= c;
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, c](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().rank() == 2 && b.value().rank() == 2, "matmul: operands must be 2-D");
  const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  require(b.value().dim(0) == k, "matmul: inner dimensions differ " + shape_string(a.shape()) +
                                     " x " + shape_string(b.shape()));
  Tensor<T> out({m, n});
  MapR<T>(out.data(), m, n).noalias() =
      CMapR<T>(a.value().data(), m, k) * CMapR<T>(b.value().data(), k, n);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, int self) {
    CMapR<T> g(t.grad(self).data(), m, n);
    if (t.needs_grad(ia)) {
      MapR<T>(t.grad(ia).data(), m, k).noalias() += g * CMapR<T>(t.value(ib).data(), k, n).transpose();
    }
    if (t.needs_grad(ib)) {
      MapR<T>(t.grad(ib).data(), k, n).noalias() += CMapR<T>(t.value(ia).data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  require_same_tape(a, bias);
  require(a.value().rank() == 2, "add_bias: input must be 2-D");
  const int m = a.value().dim(0), n = a.value().dim(1);
  require(bias.value().size() == static_cast<std::size_t>(n), "add_bias: bias width mismatch");
  Tensor<T> out = a.value();
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(r) * n + c] += bias.value()[c];
  }
  const int ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(out), {a, bias}, [ia, ib, m, n](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    accumulate(t, ia, g);
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) gb[c] += g[static_cast<std::size_t>(r) * n + c];
      }
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> a) {
  require(a.value().rank() == 2, "softmax: input must be 2-D");
  const int m = a.value().dim(0), n = a.value().dim(1);
  Tensor<T> out = a.value();
  for (int r = 0; r < m; ++r) {
    T* row_ptr = out.data() + static_cast<std::size_t>(r) * n;
    const T mx = *std::max_element(row_ptr, row_ptr + n);
    T z = T(0);
    for (int c = 0; c < n; ++c) {
      row_ptr[c] = std::exp(row_ptr[c] - mx);
      z += row_ptr[c];
    }
    for (int c = 0; c < n; ++c) row_ptr[c] /= z;
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, m, n](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (int r = 0; r < m; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * n;
      T dot = T(0);
      for (int c = 0; c < n; ++c) dot += g[off + c] * y[off + c];
      for (int c = 0; c < n; ++c) ga[off + c] += y[off + c] * (g[off + c] - dot);
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels) {
  require(logits.value().rank() == 2, "cross_entropy: logits must be 2-D");
  const int m = logits.value().dim(0), n = logits.value().dim(1);
  require(labels.size() == static_cast<std::size_t>(m), "cross_entropy: label count mismatch");
  Tensor<T> probs = logits.value();
  T loss = T(0);
  for (int r = 0; r < m; ++r) {
    require(labels[r] >= 0 && labels[r] < n, "cross_entropy: label out of range");
    T* row_ptr = probs.data() + static_cast<std::size_t>(r) * n;
    const T mx = *std::max_element(row_ptr, row_ptr + n);
    T z = T(0);
    for (int c = 0; c < n; ++c) z += std::exp(row_ptr[c] - mx);
    const T log_z = std::log(z) + mx;
    loss += log_z - row_ptr[labels[r]];
    for (int c = 0; c < n; ++c) row_ptr[c] = std::exp(row_ptr[c] - log_z);
  }
  Tensor<T> out({1}, loss / static_cast<T>(m));
  const int il = logits.id();
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      std::move(out), {logits},
      [il, m, n, probs = std::move(probs), lab = std::move(lab)](Tape<T>& t, int self) {
        const T g = t.grad(self)[0] / static_cast<T>(m);
        auto& gl = t.grad(il);
        for (int r = 0; r < m; ++r) {
          const std::size_t off = static_cast<std::size_t>(r) * n;
          for (int c = 0; c < n; ++c) gl[off + c] += g * (probs[off + c] - (c == lab[r] ? T(1) : T(0)));
        }
      });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  const auto& xv = x.value();
  const auto& wv = w.value();
  require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expected 4-D input and kernel");
  const int ci = xv.dim(0), n = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int co = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == ci, "conv2d: input channels " + std::to_string(ci) + " vs kernel " +
                               std::to_string(wv.dim(1)));
  require((k == 1 || k == 3) && wv.dim(3) == k, "conv2d: only 1x1 and 3x3 kernels are supported");
  require(b.value().size() == static_cast<std::size_t>(co), "conv2d: bias size mismatch");

  const int rows = ci * k * k;
  const int cols = n * h * wd;
  auto col = std::make_shared<std::vector<T>>();
  const T* col_ptr = xv.data();
  if (k == 3) {
    col->resize(static_cast<std::size_t>(rows) * cols);
    im2col3(xv.data(), ci, n, h, wd, col->data());
    col_ptr = col->data();
  }
  Tensor<T> out({co, n, h, wd});
  MapR<T> y(out.data(), co, cols);
  y.noalias() = CMapR<T>(wv.data(), co, rows) * CMapR<T>(col_ptr, rows, cols);
  for (int c = 0; c < co; ++c) y.row(c).array() += b.value()[c];

  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(
      std::move(out), {x, w, b}, [ix, iw, ib, ci, n, h, wd, co, k, rows, cols, col](Tape<T>& t, int self) {
        CMapR<T> g(t.grad(self).data(), co, cols);
        const T* cp = k == 3 ? col->data() : t.value(ix).data();
        if (t.needs_grad(iw)) {
          MapR<T>(t.grad(iw).data(), co, rows).noalias() += g * CMapR<T>(cp, rows, cols).transpose();
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad(ib);
          for (int c = 0; c < co; ++c) gb[c] += g.row(c).sum();
        }
        if (t.needs_grad(ix)) {
          CMapR<T> wm(t.value(iw).data(), co, rows);
          if (k == 1) {
            MapR<T>(t.grad(ix).data(), rows, cols).noalias() += wm.transpose() * g;
          } else {
            std::vector<T> dcol(static_cast<std::size_t>(rows) * cols);
            MapR<T>(dcol.data(), rows, cols).noalias() = wm.transpose() * g;
            col2im3(dcol.data(), ci, n, h, wd, t.grad(ix).data());
          }
        }
      });
}

template <typename T>
Var<T> avg_pool3x3(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 4, "avg_pool3x3: expected 4-D input");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor<T> out(xv.shape());
  auto count = [h, w](int y, int xx) {
    const int ny = 1 + (y > 0) + (y < h - 1);
    const int nx = 1 + (xx > 0) + (xx < w - 1);
    return static_cast<T>(ny * nx);
  };
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        T acc = T(0);
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = xx + dx;
            if (sx >= 0 && sx < w) acc += src[sy * w + sx];
          }
        }
        dst[y * w + xx] = acc / count(y, xx);
      }
    }
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, planes, h, w, count](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (int p = 0; p < planes; ++p) {
      const T* gs = g.data() + static_cast<std::size_t>(p) * h * w;
      T* gd = gx.data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          const T share = gs[y * w + xx] / count(y, xx);
          for (int dy = -1; dy <= 1; ++dy) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int sx = xx + dx;
              if (sx >= 0 && sx < w) gd[sy * w + sx] += share;
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> avg_pool2x2(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 4, "avg_pool2x2: expected 4-D input");
  const int c = xv.dim(0), n = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2x2: spatial size must be even");
  const int oh = h / 2, ow = w / 2, planes = c * n;
  Tensor<T> out({c, n, oh, ow});
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        const T* s = src + (2 * y) * w + 2 * xx;
        dst[y * ow + xx] = (s[0] + s[1] + s[w] + s[w + 1]) * T(0.25);
      }
    }
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, planes, h, w, oh, ow](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (int p = 0; p < planes; ++p) {
      const T* gs = g.data() + static_cast<std::size_t>(p) * oh * ow;
      T* gd = gx.data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          const T share = gs[y * ow + xx] * T(0.25);
          T* d = gd + (2 * y) * w + 2 * xx;
          d[0] += share;
          d[1] += share;
          d[w] += share;
          d[w + 1] += share;
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  require(xv.rank() == 4, "global_avg_pool: expected 4-D input");
  const int c = xv.dim(0), n = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out({n, c});
  for (int ch = 0; ch < c; ++ch) {
    for (int b = 0; b < n; ++b) {
      const T* src = xv.data() + (static_cast<std::size_t>(ch) * n + b) * hw;
      T acc = T(0);
      for (int i = 0; i < hw; ++i) acc += src[i];
      out[static_cast<std::size_t>(b) * c + ch] = acc / static_cast<T>(hw);
    }
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, n, hw](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(ix);
    for (int ch = 0; ch < c; ++ch) {
      for (int b = 0; b < n; ++b) {
        const T share = g[static_cast<std::size_t>(b) * c + ch] / static_cast<T>(hw);
        T* dst = gx.data() + (static_cast<std::size_t>(ch) * n + b) * hw;
        for (int i = 0; i < hw; ++i) dst[i] += share;
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, T eps) {
  const auto& xv = x.value();
  require(xv.rank() == 4, "batch_norm: expected 4-D input");
  const int c = xv.dim(0);
  const std::size_t m = xv.size() / static_cast<std::size_t>(c);
  Tensor<T> out(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const T* src = xv.data() + ch * m;
    T* dst = out.data() + ch * m;
    T mean = T(0);
    for (std::size_t i = 0; i < m; ++i) mean += src[i];
    mean /= static_cast<T>(m);
    T var = T(0);
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<T>(m);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    for (std::size_t i = 0; i < m; ++i) dst[i] = (src[i] - mean) * is;
  }
  const int ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, c, m, inv_std](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(ix);
    for (int ch = 0; ch < c; ++ch) {
      const T* gs = g.data() + ch * m;
      const T* ys = y.data() + ch * m;
      T* gd = gx.data() + ch * m;
      T mean_g = T(0), mean_gy = T(0);
      for (std::size_t i = 0; i < m; ++i) {
        mean_g += gs[i];
        mean_gy += gs[i] * ys[i];
      }
      mean_g /= static_cast<T>(m);
      mean_gy /= static_cast<T>(m);
      const T is = (*inv_std)[static_cast<std::size_t>(ch)];
      for (std::size_t i = 0; i < m; ++i) gd[i] += is * (gs[i] - mean_g - ys[i] * mean_gy);
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> a, double p, std::mt19937_64& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: rate must lie in [0, 1)");
  if (p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const T s = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(a.value().shape());
  for (auto& v : mask.storage()) v = keep(rng) ? s : T(0);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, mask = std::move(mask)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> straight_through(Var<T> relaxed, const Tensor<T>& hard) {
  require(relaxed.value().same_shape(hard), "straight_through: shape mismatch");
  const int ir = relaxed.id();
  return relaxed.tape().record(hard, {relaxed}, [ir](Tape<T>& t, int self) {
    accumulate(t, ir, t.grad(self));
  });
}

template <typename T>
Var<T> select(Var<T> a, int index) {
  require(index >= 0 && static_cast<std::size_t>(index) < a.value().size(), "select: index out of range");
  Tensor<T> out({1}, a.value()[static_cast<std::size_t>(index)]);
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, index](Tape<T>& t, int self) {
    t.grad(ia)[static_cast<std::size_t>(index)] += t.grad(self)[0];
  });
}

template <typename T>
Var<T> row(Var<T> table, int index) {
  require(table.value().rank() == 2, "row: table must be 2-D");
  const int r = table.value().dim(0), c = table.value().dim(1);
  require(index >= 0 && index < r, "row: index out of range");
  std::vector<T> vals(table.value().data() + static_cast<std::size_t>(index) * c,
                      table.value().data() + static_cast<std::size_t>(index + 1) * c);
  const int it = table.id();
  return table.tape().record(Tensor<T>({1, c}, std::move(vals)), {table}, [it, index, c](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(it);
    for (int k = 0; k < c; ++k) gt[static_cast<std::size_t>(index) * c + k] += g[k];
  });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().rank() == 2 && b.value().rank() == 2 && a.value().dim(0) == 1 && b.value().dim(0) == 1,
          "concat_cols: operands must be single rows");
  const int na = a.value().dim(1), nb = b.value().dim(1);
  std::vector<T> vals(a.value().values().begin(), a.value().values().end());
  vals.insert(vals.end(), b.value().values().begin(), b.value().values().end());
  const int ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>({1, na + nb}, std::move(vals)), {a, b}, [ia, ib, na, nb](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto& ga = t.grad(ia);
      for (int k = 0; k < na; ++k) ga[k] += g[k];
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad(ib);
      for (int k = 0; k < nb; ++k) gb[k] += g[na + k];
    }
  });
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  T acc = T(0);
  for (T v : a.value().values()) acc += v;
  const int ia = a.id();
  return a.tape().record(Tensor<T>({1}, acc), {a}, [ia](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(ia).storage()) v += g;
  });
}

template <typename T>
Var<T> zeros(Tape<T>& tape, const Shape& shape) {
  return tape.constant(Tensor<T>(shape));
}

template <typename T>
int argmax_row(const Tensor<T>& m, int r) {
  const int n = m.dim(1);
  const T* row_ptr = m.data() + static_cast<std::size_t>(r) * n;
  return static_cast<int>(std::max_element(row_ptr, row_ptr + n) - row_ptr);
}

template <typename T>
int count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.dim(0)) != labels.size()) throw std::invalid_argument("count_correct: label count");
  int correct = 0;
  for (int r = 0; r < logits.dim(0); ++r) correct += argmax_row(logits, r) == labels[static_cast<std::size_t>(r)];
  return correct;
}

#define CLOSENAS_INSTANTIATE_OPS(T)                                             \
  template Var<T> add(Var<T>, Var<T>);                                          \
  template Var<T> add_n(const std::vector<Var<T>>&);                            \
  template Var<T> mul(Var<T>, Var<T>);                                          \
  template Var<T> scale(Var<T>, Var<T>);                                        \
  template Var<T> scale_const(Var<T>, T);                                       \
  template Var<T> relu(Var<T>);                                                 \
  template Var<T> sigmoid(Var<T>);                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                       \
  template Var<T> add_bias(Var<T>, Var<T>);                                     \
  template Var<T> softmax(Var<T>);                                              \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);                  \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>);                               \
  template Var<T> avg_pool3x3(Var<T>);                                          \
  template Var<T> avg_pool2x2(Var<T>);                                          \
  template Var<T> global_avg_pool(Var<T>);                                      \
  template Var<T> batch_norm(Var<T>, T);                                        \
  template Var<T> dropout(Var<T>, double, std::mt19937_64&);                    \
  template Var<T> straight_through(Var<T>, const Tensor<T>&);                   \
  template Var<T> select(Var<T>, int);                                          \
  template Var<T> row(Var<T>, int);                                             \
  template Var<T> concat_cols(Var<T>, Var<T>);                                  \
  template Var<T> sum_all(Var<T>);                                              \
  template Var<T> zeros(Tape<T>&, const Shape&);                                \
  template int argmax_row(const Tensor<T>&, int);                               \
  template int count_correct(const Tensor<T>&, std::span<const int>);

CLOSENAS_INSTANTIATE_OPS(float)
CLOSENAS_INSTANTIATE_OPS(double)

#undef CLOSENAS_INSTANTIATE_OPS

}  // namespace closenas::compute
