#include "pointseg/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>

#include "pointseg/common.hpp"

namespace pointseg {
namespace nn {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatrixRM>;
using CMapM = Eigen::Map<const MatrixRM>;

double softplus(double x) {
  // max(x,0) + log1p(exp(-|x|)); exact for |x| up to ~1e4 and beyond
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

struct ConvDims {
  int ci, h, w, co, k, stride, pad, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  check(x.rank() == 3, "conv2d: input must be CxHxW, got " + x.shape_str());
  check(w.rank() == 4, "conv2d: weight must be CoxCixKxK, got " + w.shape_str());
  ConvDims d;
  d.ci = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.co = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  check(w.dim(1) == d.ci, "conv2d: channel mismatch (input " + x.shape_str() + ", weight " +
                              w.shape_str() + ")");
  check(w.dim(3) == d.k, "conv2d: kernel must be square");
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  check(d.ho > 0 && d.wo > 0, "conv2d: output would be empty");
  return d;
}

// cols: (Ci*k*k) x (Ho*Wo)
void im2col(const Tensor& x, const ConvDims& d, std::vector<double>& cols) {
  const int patch = d.ci * d.k * d.k;
  cols.assign(static_cast<size_t>(patch) * d.ho * d.wo, 0.0);
  for (int ci = 0; ci < d.ci; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const int row = (ci * d.k + ky) * d.k + kx;
        double* dst = cols.data() + static_cast<size_t>(row) * d.ho * d.wo;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            if (ix < 0 || ix >= d.w) continue;
            dst[oy * d.wo + ox] = x.at(ci, iy, ix);
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& cols, const ConvDims& d, Tensor& dx) {
  for (int ci = 0; ci < d.ci; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const int row = (ci * d.k + ky) * d.k + kx;
        const double* src = cols.data() + static_cast<size_t>(row) * d.ho * d.wo;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            if (ix < 0 || ix >= d.w) continue;
            dx.at(ci, iy, ix) += src[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> t;
};

LerpAxis make_axis(int in, int out) {
  LerpAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.t.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    if (s <= 0.0) {
      a.i0[o] = a.i1[o] = 0;
      a.t[o] = 0.0;
    } else if (s >= in - 1) {
      a.i0[o] = a.i1[o] = in - 1;
      a.t[o] = 0.0;
    } else {
      const int f = static_cast<int>(s);
      a.i0[o] = f;
      a.i1[o] = f + 1;
      a.t[o] = s - f;
    }
  }
  return a;
}

}  // namespace

Tensor bilinear_resize_value(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3) throw ShapeError("bilinear_resize: input must be Cxhxw");
  const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
  const LerpAxis ay = make_axis(h, out_h);
  const LerpAxis ax = make_axis(w, out_w);
  Tensor out({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = ay.i0[oy], y1 = ay.i1[oy];
      const double ty = ay.t[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = ax.i0[ox], x1 = ax.i1[ox];
        const double tx = ax.t[ox];
        out.at(c, oy, ox) = (1 - ty) * ((1 - tx) * x.at(c, y0, x0) + tx * x.at(c, y0, x1)) +
                            ty * ((1 - tx) * x.at(c, y1, x0) + tx * x.at(c, y1, x1));
      }
    }
  }
  return out;
}

Tensor cam_normalize_value(const Tensor& raw, double eps) {
  if (raw.rank() != 3) throw ShapeError("cam_normalize: input must be Cxhxw");
  const int C = raw.dim(0);
  const int n = raw.dim(1) * raw.dim(2);
  Tensor out(raw.shape());
  for (int c = 0; c < C; ++c) {
    const double* r = raw.data() + static_cast<size_t>(c) * n;
    double m = 0.0;
    for (int i = 0; i < n; ++i) m = std::max(m, r[i]);
    const double dn = std::max(m, eps);
    double* o = out.data() + static_cast<size_t>(c) * n;
    for (int i = 0; i < n; ++i) o[i] = std::max(0.0, r[i]) / dn;
  }
  return out;
}

int Tape::push(Tensor val, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.numel() == 0) n.grad = Tensor(n.val.shape());
  return n.grad;
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ShapeError("invalid Var handle");
  }
  return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).val; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.numel() == 0) return Tensor(n.val.shape());
  return n.grad;
}

Var Tape::leaf(const Tensor& value, bool requires_grad) {
  return Var{push(value, requires_grad, nullptr)};
}

Var Tape::leaf_scalar(double value) { return leaf(Tensor::scalar(value), false); }

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  check(ln.val.numel() == 1, "backward: loss must be scalar, got " + ln.val.shape_str());
  grad_buf(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.needs_grad || n.grad.numel() == 0 || !n.back) continue;
    n.back(*this, i);
  }
}

// ---------------------------------------------------------------------------
// structural ops

Var Tape::conv2d(Var xv, Var wv, Var bv, int stride, int pad) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  const ConvDims d = conv_dims(x, w, stride, pad);
  const bool has_bias = bv.valid();
  if (has_bias) {
    check(value(bv).rank() == 1 && value(bv).dim(0) == d.co, "conv2d: bias must be Cout");
  }

  std::vector<double> cols;
  im2col(x, d, cols);
  Tensor out({d.co, d.ho, d.wo});
  {
    CMapM wm(w.data(), d.co, d.ci * d.k * d.k);
    CMapM cm(cols.data(), d.ci * d.k * d.k, d.ho * d.wo);
    MapM om(out.data(), d.co, d.ho * d.wo);
    om.noalias() = wm * cm;
  }
  if (has_bias) {
    const Tensor& b = value(bv);
    for (int co = 0; co < d.co; ++co) {
      double* row = out.data() + static_cast<size_t>(co) * d.ho * d.wo;
      for (int i = 0; i < d.ho * d.wo; ++i) row[i] += b[co];
    }
  }

  const bool ng = node(xv).needs_grad || node(wv).needs_grad ||
                  (has_bias && node(bv).needs_grad);
  return Var{push(std::move(out), ng, [xv, wv, bv, d, has_bias](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    CMapM gm(g.data(), d.co, d.ho * d.wo);
    if (t.nodes_[static_cast<size_t>(wv.id)].needs_grad) {
      std::vector<double> cols;
      im2col(t.value(xv), d, cols);
      CMapM cm(cols.data(), d.ci * d.k * d.k, d.ho * d.wo);
      MapM dwm(t.grad_buf(wv.id).data(), d.co, d.ci * d.k * d.k);
      dwm.noalias() += gm * cm.transpose();
    }
    if (has_bias && t.nodes_[static_cast<size_t>(bv.id)].needs_grad) {
      Tensor& db = t.grad_buf(bv.id);
      for (int co = 0; co < d.co; ++co) {
        const double* row = g.data() + static_cast<size_t>(co) * d.ho * d.wo;
        double s = 0.0;
        for (int i = 0; i < d.ho * d.wo; ++i) s += row[i];
        db[co] += s;
      }
    }
    if (t.nodes_[static_cast<size_t>(xv.id)].needs_grad) {
      std::vector<double> dcols(static_cast<size_t>(d.ci * d.k * d.k) * d.ho * d.wo);
      MapM dcm(dcols.data(), d.ci * d.k * d.k, d.ho * d.wo);
      CMapM wm(t.value(wv).data(), d.co, d.ci * d.k * d.k);
      dcm.noalias() = wm.transpose() * gm;
      col2im_add(dcols, d, t.grad_buf(xv.id));
    }
  })};
}

Var Tape::relu(Var xv) {
  const Tensor& x = value(xv);
  Tensor out = x;
  for (auto& v : out.vec()) v = std::max(0.0, v);
  return Var{push(std::move(out), node(xv).needs_grad, [xv](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(xv.id)].needs_grad) return;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Tensor& x = t.value(xv);
    Tensor& dx = t.grad_buf(xv.id);
    for (int64_t i = 0; i < x.numel(); ++i) {
      if (x[i] > 0.0) dx[i] += g[i];
    }
  })};
}

Var Tape::reshape(Var xv, std::vector<int> shape) {
  const Tensor& x = value(xv);
  Tensor out(shape);
  check(out.numel() == x.numel(), "reshape: numel mismatch " + x.shape_str());
  out.vec() = x.vec();
  return Var{push(std::move(out), node(xv).needs_grad, [xv](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(xv.id)].needs_grad) return;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Tensor& dx = t.grad_buf(xv.id);
    for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
  })};
}

Var Tape::add(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  check(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (int64_t i = 0; i < b.numel(); ++i) out[i] += b[i];
  const bool ng = node(av).needs_grad || node(bv).needs_grad;
  return Var{push(std::move(out), ng, [av, bv](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    for (Var p : {av, bv}) {
      if (!t.nodes_[static_cast<size_t>(p.id)].needs_grad) continue;
      Tensor& d = t.grad_buf(p.id);
      for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
    }
  })};
}

Var Tape::mul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  check(a.same_shape(b), "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (int64_t i = 0; i < b.numel(); ++i) out[i] *= b[i];
  const bool ng = node(av).needs_grad || node(bv).needs_grad;
  return Var{push(std::move(out), ng, [av, bv](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(av.id)].needs_grad) {
      Tensor& da = t.grad_buf(av.id);
      const Tensor& b = t.value(bv);
      for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * b[i];
    }
    if (t.nodes_[static_cast<size_t>(bv.id)].needs_grad) {
      Tensor& db = t.grad_buf(bv.id);
      const Tensor& a = t.value(av);
      for (int64_t i = 0; i < g.numel(); ++i) db[i] += g[i] * a[i];
    }
  })};
}

Var Tape::scale(Var av, double k) {
  Tensor out = value(av);
  for (auto& v : out.vec()) v *= k;
  return Var{push(std::move(out), node(av).needs_grad, [av, k](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(av.id)].needs_grad) return;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Tensor& da = t.grad_buf(av.id);
    for (int64_t i = 0; i < g.numel(); ++i) da[i] += k * g[i];
  })};
}

Var Tape::sum(Var xv) {
  const Tensor& x = value(xv);
  double s = 0.0;
  for (double v : x.vec()) s += v;
  return Var{push(Tensor::scalar(s), node(xv).needs_grad, [xv](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(xv.id)].needs_grad) return;
    const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
    Tensor& dx = t.grad_buf(xv.id);
    for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += g;
  })};
}

Var Tape::gap(Var xv) {
  const Tensor& x = value(xv);
  check(x.rank() == 3, "gap: input must be DxHxW, got " + x.shape_str());
  const int dch = x.dim(0);
  const int n = x.dim(1) * x.dim(2);
  Tensor out({dch});
  for (int c = 0; c < dch; ++c) {
    const double* row = x.data() + static_cast<size_t>(c) * n;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += row[i];
    out[c] = s / n;
  }
  return Var{push(std::move(out), node(xv).needs_grad, [xv, dch, n](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(xv.id)].needs_grad) return;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Tensor& dx = t.grad_buf(xv.id);
    for (int c = 0; c < dch; ++c) {
      const double gc = g[c] / n;
      double* row = dx.data() + static_cast<size_t>(c) * n;
      for (int i = 0; i < n; ++i) row[i] += gc;
    }
  })};
}

Var Tape::matvec(Var wv, Var vv) {
  const Tensor& w = value(wv);
  const Tensor& v = value(vv);
  check(w.rank() == 2 && v.rank() == 1 && w.dim(1) == v.dim(0),
        "matvec: need (CxD)x(D), got " + w.shape_str() + " and " + v.shape_str());
  const int C = w.dim(0), D = w.dim(1);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int d = 0; d < D; ++d) s += w.at(c, d) * v[d];
    out[c] = s;
  }
  const bool ng = node(wv).needs_grad || node(vv).needs_grad;
  return Var{push(std::move(out), ng, [wv, vv, C, D](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(wv.id)].needs_grad) {
      Tensor& dw = t.grad_buf(wv.id);
      const Tensor& v = t.value(vv);
      for (int c = 0; c < C; ++c) {
        for (int d = 0; d < D; ++d) dw.at(c, d) += g[c] * v[d];
      }
    }
    if (t.nodes_[static_cast<size_t>(vv.id)].needs_grad) {
      Tensor& dv = t.grad_buf(vv.id);
      const Tensor& w = t.value(wv);
      for (int c = 0; c < C; ++c) {
        for (int d = 0; d < D; ++d) dv[d] += g[c] * w.at(c, d);
      }
    }
  })};
}

Var Tape::class_maps(Var wv, Var fv) {
  const Tensor& w = value(wv);
  const Tensor& f = value(fv);
  check(w.rank() == 2 && f.rank() == 3 && w.dim(1) == f.dim(0),
        "class_maps: need (CxD)x(DxhxW), got " + w.shape_str() + " and " + f.shape_str());
  const int C = w.dim(0), D = w.dim(1), n = f.dim(1) * f.dim(2);
  Tensor out({C, f.dim(1), f.dim(2)});
  {
    CMapM wm(w.data(), C, D);
    CMapM fm(f.data(), D, n);
    MapM om(out.data(), C, n);
    om.noalias() = wm * fm;
  }
  const bool ng = node(wv).needs_grad || node(fv).needs_grad;
  return Var{push(std::move(out), ng, [wv, fv, C, D, n](Tape& t, int self) {
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    CMapM gm(g.data(), C, n);
    if (t.nodes_[static_cast<size_t>(wv.id)].needs_grad) {
      MapM dwm(t.grad_buf(wv.id).data(), C, D);
      CMapM fm(t.value(fv).data(), D, n);
      dwm.noalias() += gm * fm.transpose();
    }
    if (t.nodes_[static_cast<size_t>(fv.id)].needs_grad) {
      MapM dfm(t.grad_buf(fv.id).data(), D, n);
      CMapM wm(t.value(wv).data(), C, D);
      dfm.noalias() += wm.transpose() * gm;
    }
  })};
}

Var Tape::cam_normalize(Var rawv, double eps, bool detach_max) {
  const Tensor& raw = value(rawv);
  check(raw.rank() == 3, "cam_normalize: input must be Cxhxw, got " + raw.shape_str());
  const int C = raw.dim(0), n = raw.dim(1) * raw.dim(2);
  Tensor out = cam_normalize_value(raw, eps);
  std::vector<int> argmax(static_cast<size_t>(C), -1);
  std::vector<double> denom(static_cast<size_t>(C), eps);
  for (int c = 0; c < C; ++c) {
    const double* r = raw.data() + static_cast<size_t>(c) * n;
    double m = 0.0;
    int am = -1;
    for (int i = 0; i < n; ++i) {
      const double rv = std::max(0.0, r[i]);
      if (rv > m) {
        m = rv;
        am = i;
      }
    }
    denom[static_cast<size_t>(c)] = std::max(m, eps);
    argmax[static_cast<size_t>(c)] = (m > eps) ? am : -1;
  }
  return Var{push(std::move(out), node(rawv).needs_grad,
                  [rawv, C, n, denom, argmax, detach_max](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(rawv.id)].needs_grad) return;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Tensor& out = t.nodes_[static_cast<size_t>(self)].val;
    const Tensor& raw = t.value(rawv);
    Tensor& draw = t.grad_buf(rawv.id);
    for (int c = 0; c < C; ++c) {
      const double* gc = g.data() + static_cast<size_t>(c) * n;
      const double* oc = out.data() + static_cast<size_t>(c) * n;
      const double* rc = raw.data() + static_cast<size_t>(c) * n;
      double* dc = draw.data() + static_cast<size_t>(c) * n;
      const double dn = denom[static_cast<size_t>(c)];
      // d/dr of r/dn, plus the max-route term when the denominator is live
      double dot = 0.0;
      if (!detach_max && argmax[static_cast<size_t>(c)] >= 0) {
        for (int i = 0; i < n; ++i) dot += gc[i] * oc[i];
      }
      for (int i = 0; i < n; ++i) {
        if (rc[i] > 0.0) dc[i] += gc[i] / dn;
      }
      if (!detach_max && argmax[static_cast<size_t>(c)] >= 0) {
        dc[argmax[static_cast<size_t>(c)]] -= dot / dn;
      }
    }
  })};
}

Var Tape::bilinear_upsample(Var xv, int out_h, int out_w) {
  const Tensor& x = value(xv);
  check(x.rank() == 3, "bilinear_upsample: input must be Cxhxw, got " + x.shape_str());
  const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
  check(out_h >= h && out_w >= w, "bilinear_upsample: target smaller than source");
  const LerpAxis ay = make_axis(h, out_h);
  const LerpAxis ax = make_axis(w, out_w);
  Tensor out = bilinear_resize_value(x, out_h, out_w);
  return Var{push(std::move(out), node(xv).needs_grad,
                  [xv, C, out_h, out_w, ay, ax](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(xv.id)].needs_grad) return;
    const Tensor& g = t.nodes_[static_cast<size_t>(self)].grad;
    Tensor& dx = t.grad_buf(xv.id);
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ay.i0[oy], y1 = ay.i1[oy];
        const double ty = ay.t[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = ax.i0[ox], x1 = ax.i1[ox];
          const double tx = ax.t[ox];
          const double gv = g.at(c, oy, ox);
          dx.at(c, y0, x0) += (1 - ty) * (1 - tx) * gv;
          dx.at(c, y0, x1) += (1 - ty) * tx * gv;
          dx.at(c, y1, x0) += ty * (1 - tx) * gv;
          dx.at(c, y1, x1) += ty * tx * gv;
        }
      }
    }
  })};
}

// ---------------------------------------------------------------------------
// losses

Var Tape::multilabel_soft_margin(Var logitsv, const std::vector<uint8_t>& labels) {
  const Tensor& logits = value(logitsv);
  check(logits.rank() == 1, "multilabel_soft_margin: logits must be rank 1");
  const int C = logits.dim(0);
  check(static_cast<int>(labels.size()) == C, "multilabel_soft_margin: label length mismatch");
  double loss = 0.0;
  for (int c = 0; c < C; ++c) {
    loss += labels[static_cast<size_t>(c)] ? softplus(-logits[c]) : softplus(logits[c]);
  }
  loss /= C;
  return Var{push(Tensor::scalar(loss), node(logitsv).needs_grad,
                  [logitsv, labels, C](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(logitsv.id)].needs_grad) return;
    const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
    const Tensor& logits = t.value(logitsv);
    Tensor& dl = t.grad_buf(logitsv.id);
    for (int c = 0; c < C; ++c) {
      dl[c] += g * (sigmoid(logits[c]) - static_cast<double>(labels[static_cast<size_t>(c)])) / C;
    }
  })};
}

Var Tape::point_mse_class(Var uv, const std::vector<corpus::PointAnnotation>& points,
                          int class_id) {
  const Tensor& u = value(uv);
  check(u.rank() == 3, "point_mse_class: maps must be CxHxW");
  check(!points.empty(), "point_mse_class: empty point set");
  const int C = u.dim(0), H = u.dim(1), W = u.dim(2);
  check(class_id >= 1 && class_id <= C, "point_mse_class: class out of range");
  double loss = 0.0;
  for (const auto& p : points) {
    check(p.x >= 0 && p.x < W && p.y >= 0 && p.y < H, "point_mse_class: point outside map");
    const double target = (p.class_id == class_id) ? 1.0 : 0.0;
    const double diff = u.at(class_id - 1, p.y, p.x) - target;
    loss += diff * diff;
  }
  loss /= static_cast<double>(points.size());
  return Var{push(Tensor::scalar(loss), node(uv).needs_grad,
                  [uv, points, class_id](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(uv.id)].needs_grad) return;
    const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
    const Tensor& u = t.value(uv);
    Tensor& du = t.grad_buf(uv.id);
    const double inv = 1.0 / static_cast<double>(points.size());
    for (const auto& p : points) {
      const double target = (p.class_id == class_id) ? 1.0 : 0.0;
      du.at(class_id - 1, p.y, p.x) +=
          g * 2.0 * (u.at(class_id - 1, p.y, p.x) - target) * inv;
    }
  })};
}

Var Tape::softmax_xent_ignore(Var logitsv, const corpus::SegmentationMask& labels) {
  const Tensor& logits = value(logitsv);
  check(logits.rank() == 3, "softmax_xent_ignore: logits must be KxHxW");
  const int K = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  check(labels.height == H && labels.width == W, "softmax_xent_ignore: label size mismatch");
  int64_t counted = 0;
  double loss = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const uint8_t lab = labels.at(y, x);
      if (lab == corpus::kIgnoreLabel) continue;
      check(lab < K, "softmax_xent_ignore: label " + std::to_string(lab) + " >= channels");
      double mx = logits.at(0, y, x);
      for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(k, y, x));
      double lse = 0.0;
      for (int k = 0; k < K; ++k) lse += std::exp(logits.at(k, y, x) - mx);
      lse = mx + std::log(lse);
      loss += lse - logits.at(lab, y, x);
      ++counted;
    }
  }
  if (counted == 0) {
    log_warn("softmax_xent_ignore: all pixels ignored, loss contributes 0");
    return leaf_scalar(0.0);
  }
  loss /= static_cast<double>(counted);
  const double inv = 1.0 / static_cast<double>(counted);
  return Var{push(Tensor::scalar(loss), node(logitsv).needs_grad,
                  [logitsv, labels, K, H, W, inv](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(logitsv.id)].needs_grad) return;
    const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
    const Tensor& logits = t.value(logitsv);
    Tensor& dl = t.grad_buf(logitsv.id);
    std::vector<double> p(static_cast<size_t>(K));
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const uint8_t lab = labels.at(y, x);
        if (lab == corpus::kIgnoreLabel) continue;
        double mx = logits.at(0, y, x);
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(k, y, x));
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
          p[static_cast<size_t>(k)] = std::exp(logits.at(k, y, x) - mx);
          z += p[static_cast<size_t>(k)];
        }
        for (int k = 0; k < K; ++k) {
          const double soft = p[static_cast<size_t>(k)] / z;
          dl.at(k, y, x) += g * inv * (soft - (k == lab ? 1.0 : 0.0));
        }
      }
    }
  })};
}

Var Tape::boundary_pair_loss(Var logitv, const std::vector<PathPair>& pairs) {
  const Tensor& lmap = value(logitv);
  check(lmap.rank() == 2, "boundary_pair_loss: logit map must be hxw");
  int n_pos = 0, n_neg = 0;
  for (const auto& pr : pairs) {
    if (pr.positive) {
      ++n_pos;
    } else if (!pr.path.empty()) {
      ++n_neg;
    }
  }
  const double w_pos = n_pos > 0 ? 0.5 / n_pos : 0.0;
  const double w_neg = n_neg > 0 ? 0.5 / n_neg : 0.0;

  double loss = 0.0;
  for (const auto& pr : pairs) {
    if (!pr.positive && pr.path.empty()) continue;
    double path_sum = 0.0;  // -log affinity
    for (int idx : pr.path) path_sum += softplus(lmap[idx]);
    if (pr.positive) {
      loss += w_pos * path_sum;
    } else {
      const double u = std::max(-std::expm1(-path_sum), 1e-12);
      loss += w_neg * -std::log(u);
    }
  }
  return Var{push(Tensor::scalar(loss), node(logitv).needs_grad,
                  [logitv, pairs, w_pos, w_neg](Tape& t, int self) {
    if (!t.nodes_[static_cast<size_t>(logitv.id)].needs_grad) return;
    const double g = t.nodes_[static_cast<size_t>(self)].grad[0];
    const Tensor& lmap = t.value(logitv);
    Tensor& dl = t.grad_buf(logitv.id);
    for (const auto& pr : pairs) {
      if (pr.path.empty()) continue;  // no gradient either way
      double dloss_dsum;
      if (pr.positive) {
        dloss_dsum = w_pos;
      } else {
        double path_sum = 0.0;
        for (int idx : pr.path) path_sum += softplus(lmap[idx]);
        const double u = std::max(-std::expm1(-path_sum), 1e-12);
        dloss_dsum = -w_neg * std::exp(-path_sum) / u;
      }
      for (int idx : pr.path) dl[idx] += g * dloss_dsum * sigmoid(lmap[idx]);
    }
  })};
}

}  // namespace nn
}  // namespace pointseg
