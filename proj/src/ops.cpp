#include "textbcs/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace textbcs::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// col: [Cin*k*k, H*W] for one sample.
void im2col(const double* x, int cin, int h, int w, int k, double* col) {
  const int pad = k / 2;
  const int plane = h * w;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        const double* src = x + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          double* out = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, 0.0);
            continue;
          }
          const double* srow = src + sy * w + (kx - pad);
          const int lo = std::max(0, pad - kx), hi = std::min(w, w + pad - kx);
          std::fill(out, out + lo, 0.0);
          std::copy(srow + lo, srow + hi, out + lo);
          std::fill(out + hi, out + w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, int cin, int h, int w, int k, double* dx) {
  const int pad = k / 2;
  const int plane = h * w;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        double* dst = dx + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* in = row + y * w;
          double* drow = dst + sy * w + (kx - pad);
          const int lo = std::max(0, pad - kx), hi = std::min(w, w + pad - kx);
          for (int x0 = lo; x0 < hi; ++x0) drow[x0] += in[x0];
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out = a->value;
  out.add_(b->value);
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->grad_buffer().add_(self.grad);
    if (b->requires_grad) b->grad_buffer().add_(self.grad);
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {x}, [x](Node& self) {
    Tensor& g = x->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x->value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return make_op(std::move(out), {x}, [x](Node& self) {
    Tensor& g = x->grad_buffer();
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(xv.rank() == 4 && wv.rank() == 4, "conv2d: expected rank-4 input and weight");
  const int n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int cout = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == cin, "conv2d: input channels do not match weight");
  require(k % 2 == 1 && wv.dim(3) == k, "conv2d: kernel must be square with odd size");
  require(!b || (b->value.rank() == 1 && b->value.dim(0) == cout), "conv2d: bias shape");
  const int kk = cin * k * k;
  const int plane = h * wd;

  Tensor out({n, cout, h, wd});
  // im2col fills every entry, so the buffer is left uninitialised.
  std::shared_ptr<double[]> cols;
  if (k > 1) cols.reset(new double[static_cast<std::size_t>(n) * kk * plane]);
  ConstMatMap wm(wv.data(), cout, kk);
  for (int i = 0; i < n; ++i) {
    const double* xi = xv.data() + static_cast<std::size_t>(i) * cin * plane;
    const double* col = xi;
    if (k > 1) {
      double* c = cols.get() + static_cast<std::size_t>(i) * kk * plane;
      im2col(xi, cin, h, wd, k, c);
      col = c;
    }
    MatMap y(out.data() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
    y.noalias() = wm * ConstMatMap(col, kk, plane);
    if (b) y.colwise() += ConstVecMap(b->value.data(), cout);
  }

  return make_op(std::move(out), {x, w, b}, [x, w, b, cols, n, cin, h, wd, cout, k, kk, plane](Node& self) {
    ConstMatMap wm(w->value.data(), cout, kk);
    RowMat dcol;
    for (int i = 0; i < n; ++i) {
      ConstMatMap dy(self.grad.data() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
      const double* col = k > 1 ? cols.get() + static_cast<std::size_t>(i) * kk * plane
                                : x->value.data() + static_cast<std::size_t>(i) * cin * plane;
      if (w->requires_grad) {
        MatMap dw(w->grad_buffer().data(), cout, kk);
        dw.noalias() += dy * ConstMatMap(col, kk, plane).transpose();
      }
      if (b && b->requires_grad) {
        VecMap db(b->grad_buffer().data(), cout);
        db += dy.rowwise().sum();
      }
      if (x->requires_grad) {
        double* dx = x->grad_buffer().data() + static_cast<std::size_t>(i) * cin * plane;
        if (k > 1) {
          dcol.noalias() = wm.transpose() * dy;
          col2im_add(dcol.data(), cin, h, wd, k, dx);
        } else {
          MatMap(dx, cin, plane).noalias() += wm.transpose() * dy;
        }
      }
    }
  });
}

Var max_pool2(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 4, "max_pool2: expected NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "max_pool2: spatial size must be even");
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  for (int p = 0; p < n * c; ++p) {
    const double* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < oh; ++y) {
      for (int x0 = 0; x0 < ow; ++x0) {
        std::uint32_t best = static_cast<std::uint32_t>((2 * y) * w + 2 * x0);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto idx = static_cast<std::uint32_t>((2 * y + dy) * w + 2 * x0 + dx);
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = static_cast<std::size_t>(p) * oh * ow + y * ow + x0;
        out[o] = src[best];
        (*argmax)[o] = best;
      }
    }
  }
  return make_op(std::move(out), {x}, [x, argmax, h, w, oh, ow](Node& self) {
    Tensor& g = x->grad_buffer();
    const std::size_t planes = self.grad.size() / (static_cast<std::size_t>(oh) * ow);
    for (std::size_t p = 0; p < planes; ++p) {
      for (int i = 0; i < oh * ow; ++i) {
        const std::size_t o = p * oh * ow + i;
        g[p * h * w + (*argmax)[o]] += self.grad[o];
      }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 4, "upsample_nearest2: expected NCHW");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (int p = 0; p < n * c; ++p) {
    const double* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      for (int x0 = 0; x0 < 2 * w; ++x0) dst[y * 2 * w + x0] = src[(y / 2) * w + x0 / 2];
    }
  }
  return make_op(std::move(out), {x}, [x, n, c, h, w](Node& self) {
    Tensor& g = x->grad_buffer();
    for (int p = 0; p < n * c; ++p) {
      const double* src = self.grad.data() + static_cast<std::size_t>(p) * 4 * h * w;
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < 2 * h; ++y) {
        for (int x0 = 0; x0 < 2 * w; ++x0) dst[(y / 2) * w + x0 / 2] += src[y * 2 * w + x0];
      }
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  require(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) &&
              av.dim(3) == bv.dim(3),
          "concat_channels: incompatible shapes");
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(av.dim(2)) * av.dim(3);
  Tensor out({n, ca + cb, av.dim(2), av.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(bv.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  return make_op(std::move(out), {a, b}, [a, b, n, ca, cb, plane](Node& self) {
    for (int i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * (ca + cb) * plane;
      if (a->requires_grad) {
        double* ga = a->grad_buffer().data() + i * ca * plane;
        for (std::size_t j = 0; j < ca * plane; ++j) ga[j] += g[j];
      }
      if (b->requires_grad) {
        double* gb = b->grad_buffer().data() + i * cb * plane;
        for (std::size_t j = 0; j < cb * plane; ++j) gb[j] += g[ca * plane + j];
      }
    }
  });
}

Var to_tokens(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 4, "to_tokens: expected NCHW");
  const int n = xv.dim(0), c = xv.dim(1), p = xv.dim(2) * xv.dim(3);
  Tensor out({n, p, c});
  for (int i = 0; i < n; ++i) {
    MatMap(out.data() + static_cast<std::size_t>(i) * p * c, p, c) =
        ConstMatMap(xv.data() + static_cast<std::size_t>(i) * p * c, c, p).transpose();
  }
  return make_op(std::move(out), {x}, [x, n, c, p](Node& self) {
    Tensor& g = x->grad_buffer();
    for (int i = 0; i < n; ++i) {
      MatMap(g.data() + static_cast<std::size_t>(i) * p * c, c, p) +=
          ConstMatMap(self.grad.data() + static_cast<std::size_t>(i) * p * c, p, c).transpose();
    }
  });
}

Var from_tokens(const Var& t, int height, int width) {
  const Tensor& tv = t->value;
  require(tv.rank() == 3 && tv.dim(1) == height * width, "from_tokens: token count does not match H*W");
  const int n = tv.dim(0), p = tv.dim(1), c = tv.dim(2);
  Tensor out({n, c, height, width});
  for (int i = 0; i < n; ++i) {
    MatMap(out.data() + static_cast<std::size_t>(i) * p * c, c, p) =
        ConstMatMap(tv.data() + static_cast<std::size_t>(i) * p * c, p, c).transpose();
  }
  return make_op(std::move(out), {t}, [t, n, c, p](Node& self) {
    Tensor& g = t->grad_buffer();
    for (int i = 0; i < n; ++i) {
      MatMap(g.data() + static_cast<std::size_t>(i) * p * c, p, c) +=
          ConstMatMap(self.grad.data() + static_cast<std::size_t>(i) * p * c, c, p).transpose();
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(wv.rank() == 2, "linear: weight must be [out,in]");
  const int in = wv.dim(1), outw = wv.dim(0);
  require(xv.dim(-1) == in, "linear: input width does not match weight");
  require(!b || b->value.size() == static_cast<std::size_t>(outw), "linear: bias shape");
  const int rows = static_cast<int>(xv.size() / in);
  Shape shape = xv.shape();
  shape.back() = outw;
  Tensor out(shape);
  MatMap y(out.data(), rows, outw);
  y.noalias() = ConstMatMap(xv.data(), rows, in) * ConstMatMap(wv.data(), outw, in).transpose();
  if (b) y.rowwise() += ConstVecMap(b->value.data(), outw).transpose();
  return make_op(std::move(out), {x, w, b}, [x, w, b, rows, in, outw](Node& self) {
    ConstMatMap dy(self.grad.data(), rows, outw);
    if (w->requires_grad) {
      MatMap(w->grad_buffer().data(), outw, in).noalias() += dy.transpose() * ConstMatMap(x->value.data(), rows, in);
    }
    if (b && b->requires_grad) VecMap(b->grad_buffer().data(), outw) += dy.colwise().sum().transpose();
    if (x->requires_grad) {
      MatMap(x->grad_buffer().data(), rows, in).noalias() += dy * ConstMatMap(w->value.data(), outw, in);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x->value;
  const int d = xv.dim(-1);
  require(gamma->value.size() == static_cast<std::size_t>(d) && beta->value.size() == static_cast<std::size_t>(d),
          "layer_norm: affine parameter width");
  const int rows = static_cast<int>(xv.size() / d);
  Tensor out(xv.shape());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int r = 0; r < rows; ++r) {
    const double* src = xv.data() + static_cast<std::size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += src[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < d; ++j) {
      const double xh = (src[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(r) * d + j] = xh;
      out[static_cast<std::size_t>(r) * d + j] = gamma->value[j] * xh + beta->value[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, rows, d](Node& self) {
    std::vector<double> dxhat(d);
    for (int r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + static_cast<std::size_t>(r) * d;
      const double* xh = xhat->data() + static_cast<std::size_t>(r) * d;
      double sum = 0.0, sum_xh = 0.0;
      for (int j = 0; j < d; ++j) {
        if (gamma->requires_grad) gamma->grad_buffer()[j] += g[j] * xh[j];
        if (beta->requires_grad) beta->grad_buffer()[j] += g[j];
        dxhat[j] = g[j] * gamma->value[j];
        sum += dxhat[j];
        sum_xh += dxhat[j] * xh[j];
      }
      if (x->requires_grad) {
        double* dx = x->grad_buffer().data() + static_cast<std::size_t>(r) * d;
        for (int j = 0; j < d; ++j) dx[j] += (*inv_std)[r] * (dxhat[j] - sum / d - xh[j] * sum_xh / d);
      }
    }
  });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats, bool training,
                 double momentum, double eps) {
  const Tensor& xv = x->value;
  require(xv.rank() == 4, "batch_norm2d: expected NCHW");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  const double m = static_cast<double>(n) * plane;
  if (stats.mean.empty()) {
    stats.mean = Tensor({c}, 0.0);
    stats.var = Tensor({c}, 1.0);
  }
  std::vector<double> mean(c), inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const double mu = s / m;
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) v += (p[j] - mu) * (p[j] - mu);
      }
      const double var = v / m;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mu;
      stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * (m > 1 ? v / (m - 1.0) : var);
    } else {
      mean[ch] = stats.mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + eps);
    }
  }
  Tensor out(xv.shape());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double xh = (xv[off + j] - mean[ch]) * inv_std[ch];
        (*xhat)[off + j] = xh;
        out[off + j] = gamma->value[ch] * xh + beta->value[ch];
      }
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat, inv_std, n, c, plane, m, training](Node& self) {
                   for (int ch = 0; ch < c; ++ch) {
                     double sum_g = 0.0, sum_gx = 0.0;
                     for (int i = 0; i < n; ++i) {
                       const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
                       for (std::size_t j = 0; j < plane; ++j) {
                         sum_g += self.grad[off + j];
                         sum_gx += self.grad[off + j] * (*xhat)[off + j];
                       }
                     }
                     if (gamma->requires_grad) gamma->grad_buffer()[ch] += sum_gx;
                     if (beta->requires_grad) beta->grad_buffer()[ch] += sum_g;
                     if (!x->requires_grad) continue;
                     const double gm = gamma->value[ch];
                     Tensor& dx = x->grad_buffer();
                     for (int i = 0; i < n; ++i) {
                       const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
                       for (std::size_t j = 0; j < plane; ++j) {
                         const double g = self.grad[off + j];
                         if (training) {
                           dx[off + j] += gm * inv_std[ch] * (g - sum_g / m - (*xhat)[off + j] * sum_gx / m);
                         } else {
                           dx[off + j] += gm * inv_std[ch] * g;
                         }
                       }
                     }
                   }
                 });
}

Var embedding(const std::vector<int>& ids, int batch, int length, const Var& table) {
  const Tensor& tv = table->value;
  require(tv.rank() == 2, "embedding: table must be [vocab,D]");
  require(ids.size() == static_cast<std::size_t>(batch) * length, "embedding: id count does not match batch*length");
  const int vocab = tv.dim(0), d = tv.dim(1);
  Tensor out({batch, length, d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < vocab, "embedding: token id out of range");
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return make_op(std::move(out), {table}, [table, ids, d](Node& self) {
    Tensor& g = table->grad_buffer();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* row = g.data() + static_cast<std::size_t>(ids[i]) * d;
      for (int j = 0; j < d; ++j) row[j] += self.grad[i * d + j];
    }
  });
}

Var add_rows(const Var& x, const Var& rows) {
  const Tensor& xv = x->value;
  const Tensor& rv = rows->value;
  require(xv.rank() == 3 && rv.rank() == 2 && xv.dim(1) == rv.dim(0) && xv.dim(2) == rv.dim(1),
          "add_rows: shape mismatch");
  Tensor out = xv;
  const std::size_t block = rv.size();
  for (int i = 0; i < xv.dim(0); ++i) {
    for (std::size_t j = 0; j < block; ++j) out[i * block + j] += rv[j];
  }
  return make_op(std::move(out), {x, rows}, [x, rows, block](Node& self) {
    if (x->requires_grad) x->grad_buffer().add_(self.grad);
    if (rows->requires_grad) {
      Tensor& g = rows->grad_buffer();
      const std::size_t n = self.grad.size() / block;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < block; ++j) g[j] += self.grad[i * block + j];
      }
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const std::vector<std::uint8_t>& key_valid, int heads,
              Tensor* weights_out) {
  const Tensor& qv = q->value;
  const Tensor& kv = k->value;
  const Tensor& vv = v->value;
  require(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3, "attention: expected [N,L,d] tensors");
  const int n = qv.dim(0), lq = qv.dim(1), d = qv.dim(2), lk = kv.dim(1);
  require(kv.dim(0) == n && vv.dim(0) == n && kv.dim(2) == d && vv.dim(2) == d && vv.dim(1) == lk,
          "attention: query/key/value shapes disagree");
  require(heads >= 1 && d % heads == 0, "attention: width must be divisible by the number of heads");
  require(key_valid.empty() || key_valid.size() == static_cast<std::size_t>(n) * lk, "attention: key mask size");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int i = 0; i < n; ++i) {
    bool any = key_valid.empty();
    for (int j = 0; j < lk && !any; ++j) any = key_valid[static_cast<std::size_t>(i) * lk + j] != 0;
    if (!any) throw std::invalid_argument("attention: all keys are masked for a query row");
  }

  auto weights = std::make_shared<Tensor>(Shape{n, heads, lq, lk});
  Tensor out({n, lq, d});
  RowMat scores(lq, lk);
  for (int i = 0; i < n; ++i) {
    ConstMatMap qi(qv.data() + static_cast<std::size_t>(i) * lq * d, lq, d);
    ConstMatMap ki(kv.data() + static_cast<std::size_t>(i) * lk * d, lk, d);
    ConstMatMap vi(vv.data() + static_cast<std::size_t>(i) * lk * d, lk, d);
    MatMap oi(out.data() + static_cast<std::size_t>(i) * lq * d, lq, d);
    for (int hd = 0; hd < heads; ++hd) {
      scores.noalias() = qi.middleCols(hd * dh, dh) * ki.middleCols(hd * dh, dh).transpose();
      scores *= scale;
      MatMap a(weights->data() + (static_cast<std::size_t>(i) * heads + hd) * lq * lk, lq, lk);
      for (int r = 0; r < lq; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < lk; ++j) {
          if (key_valid.empty() || key_valid[static_cast<std::size_t>(i) * lk + j]) mx = std::max(mx, scores(r, j));
        }
        double z = 0.0;
        for (int j = 0; j < lk; ++j) {
          const bool ok = key_valid.empty() || key_valid[static_cast<std::size_t>(i) * lk + j];
          const double e = ok ? std::exp(scores(r, j) - mx) : 0.0;
          a(r, j) = e;
          z += e;
        }
        a.row(r) /= z;
      }
      oi.middleCols(hd * dh, dh).noalias() = a * vi.middleCols(hd * dh, dh);
    }
  }
  if (weights_out) *weights_out = *weights;

  return make_op(std::move(out), {q, k, v}, [q, k, v, weights, n, lq, lk, d, heads, dh, scale](Node& self) {
    RowMat da(lq, lk), ds(lq, lk);
    for (int i = 0; i < n; ++i) {
      ConstMatMap qi(q->value.data() + static_cast<std::size_t>(i) * lq * d, lq, d);
      ConstMatMap ki(k->value.data() + static_cast<std::size_t>(i) * lk * d, lk, d);
      ConstMatMap vi(v->value.data() + static_cast<std::size_t>(i) * lk * d, lk, d);
      ConstMatMap go(self.grad.data() + static_cast<std::size_t>(i) * lq * d, lq, d);
      for (int hd = 0; hd < heads; ++hd) {
        ConstMatMap a(weights->data() + (static_cast<std::size_t>(i) * heads + hd) * lq * lk, lq, lk);
        auto goh = go.middleCols(hd * dh, dh);
        if (v->requires_grad) {
          MatMap gv(v->grad_buffer().data() + static_cast<std::size_t>(i) * lk * d, lk, d);
          gv.middleCols(hd * dh, dh).noalias() += a.transpose() * goh;
        }
        if (!q->requires_grad && !k->requires_grad) continue;
        da.noalias() = goh * vi.middleCols(hd * dh, dh).transpose();
        const Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
        ds = a.array() * (da.colwise() - rowdot).array();
        ds *= scale;
        if (q->requires_grad) {
          MatMap gq(q->grad_buffer().data() + static_cast<std::size_t>(i) * lq * d, lq, d);
          gq.middleCols(hd * dh, dh).noalias() += ds * ki.middleCols(hd * dh, dh);
        }
        if (k->requires_grad) {
          MatMap gk(k->grad_buffer().data() + static_cast<std::size_t>(i) * lk * d, lk, d);
          gk.middleCols(hd * dh, dh).noalias() += ds.transpose() * qi.middleCols(hd * dh, dh);
        }
      }
    }
  });
}

}  // namespace textbcs::ag
