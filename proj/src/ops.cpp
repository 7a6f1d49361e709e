#include "alignps/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace alignps {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("ops: " + msg);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// im2col for zero-padded convolution; cols is (C*kh*kw) x (Ho*Wo).
RowMat im2col(const Tensord& x, int kh, int kw, int stride, int pad, int ho, int wo) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(c) * kh * kw,
                             static_cast<Eigen::Index>(ho) * wo);
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ci) * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            cols(row, static_cast<Eigen::Index>(oy) * wo + ox) = x(ci, iy, ix);
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accum(const RowMat& gcols, Tensord& gx, int kh, int kw, int stride, int pad, int ho,
                  int wo) {
  const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(ci) * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            gx(ci, iy, ix) += gcols(row, static_cast<Eigen::Index>(oy) * wo + ox);
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensord out = a->value;
  out.array() += b->value.array();
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array();
    if (b->requires_grad) b->ensure_grad().array() += n.grad.array();
  });
}

Var sub(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensord out = a->value;
  out.array() -= b->value.array();
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array();
    if (b->requires_grad) b->ensure_grad().array() -= n.grad.array();
  });
}

Var scale(const Var& a, double c) {
  Tensord out = a->value;
  out.array() *= c;
  return make_op(std::move(out), {a}, [a, c](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += c * n.grad.array();
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: arity mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < terms.size(); ++i) {
    require(terms[i]->value.numel() == 1, "weighted_sum: scalar terms expected");
    acc += weights[i] * terms[i]->value[0];
  }
  auto ws = weights;
  return make_op(Tensord::scalar(acc), terms, [terms, ws](Node& n) {
    const double g = n.grad[0];
    for (size_t i = 0; i < terms.size(); ++i)
      if (terms[i]->requires_grad) terms[i]->ensure_grad()[0] += g * ws[i];
  });
}

Var relu(const Var& x) {
  Tensord out = x->value;
  // Multiplicative form keeps NaN propagating (a vectorized max would
  // silently map NaN to zero and mask upstream blow-ups).
  out.array() = out.array() * (out.array() > 0.0).cast<double>();
  return make_op(std::move(out), {x}, [x](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    g.array() += n.grad.array() * (x->value.array() > 0.0).cast<double>();
  });
}

Var tanh_op(const Var& x) {
  Tensord out = x->value;
  out.array() = out.array().tanh();
  Tensord y = out;
  return make_op(std::move(out), {x}, [x, y](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad().array() += n.grad.array() * (1.0 - y.array().square());
  });
}

Var sigmoid(const Var& x) {
  Tensord out = x->value;
  out.array() = 1.0 / (1.0 + (-out.array()).exp());
  Tensord y = out;
  return make_op(std::move(out), {x}, [x, y](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad().array() += n.grad.array() * y.array() * (1.0 - y.array());
  });
}

Var exp_clamped(const Var& x, double lo, double hi) {
  Tensord out = x->value;
  for (Eigen::Index i = 0; i < out.numel(); ++i) {
    const double v = out[i];
    out[i] = std::isfinite(v) ? std::exp(std::clamp(v, lo, hi)) : v;
  }
  Tensord y = out;
  return make_op(std::move(out), {x}, [x, y, lo, hi](Node& n) {
    if (!x->requires_grad) return;
    auto in = (x->value.array() > lo && x->value.array() < hi).cast<double>();
    x->ensure_grad().array() += n.grad.array() * y.array() * in;
  });
}

Var exp_op(const Var& x) {
  Tensord out = x->value;
  out.array() = out.array().exp();
  Tensord y = out;
  return make_op(std::move(out), {x}, [x, y](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += n.grad.array() * y.array();
  });
}

Var slice_rows(const Var& x, const std::vector<int>& idx) {
  require(x->value.ndim() == 2, "slice_rows: (B,D) expected");
  const int bs = x->value.dim(0), d = x->value.dim(1);
  Tensord out({static_cast<int>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < bs, "slice_rows: index out of range");
    out.mat().row(static_cast<Eigen::Index>(r)) = x->value.mat().row(idx[r]);
  }
  auto ix = idx;
  return make_op(std::move(out), {x}, [x, ix](Node& n) {
    if (!x->requires_grad) return;
    auto g = x->ensure_grad().mat();
    for (size_t r = 0; r < ix.size(); ++r)
      g.row(ix[r]) += n.grad.mat().row(static_cast<Eigen::Index>(r));
  });
}

Var select_batch(const Var& x, int n) {
  require(x->value.ndim() == 4, "select_batch: (N,C,H,W) expected");
  require(n >= 0 && n < x->value.dim(0), "select_batch: index out of range");
  const int c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const Eigen::Index chw = static_cast<Eigen::Index>(c) * h * w;
  Tensord out({c, h, w});
  out.array() = x->value.array().segment(n * chw, chw);
  return make_op(std::move(out), {x}, [x, n, chw](Node& g) {
    if (x->requires_grad)
      x->ensure_grad().array().segment(n * chw, chw) += g.grad.array();
  });
}

Var mul_scalar_var(const Var& x, const Var& s) {
  require(s->value.numel() == 1, "mul_scalar_var: scalar variable expected");
  const double sv = s->value[0];
  Tensord out = x->value;
  out.array() *= sv;
  return make_op(std::move(out), {x, s}, [x, s, sv](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += sv * n.grad.array();
    if (s->requires_grad) s->ensure_grad()[0] += (n.grad.array() * x->value.array()).sum();
  });
}

Var detach(const Var& x) { return constant(x->value); }

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require(x->value.ndim() == 3 && w->value.ndim() == 4, "conv2d: rank mismatch");
  const int ci = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  const int co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  require(w->value.dim(1) == ci, "conv2d: channel mismatch");
  require(b->value.numel() == co, "conv2d: bias size mismatch");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: empty output");

  Tensord out({co, ho, wo});
  auto wmat = w->value.mat(co, ci * kh * kw);
  auto omat = out.mat(co, ho * wo);
  const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
  std::shared_ptr<RowMat> cols;
  if (pointwise) {
    omat.noalias() = wmat * x->value.mat(ci, h * wd);
  } else {
    cols = std::make_shared<RowMat>(im2col(x->value, kh, kw, stride, pad, ho, wo));
    omat.noalias() = wmat * (*cols);
  }
  for (int c = 0; c < co; ++c) omat.row(c).array() += b->value[c];

  return make_op(std::move(out), {x, w, b},
                 [x, w, b, cols, stride, pad, ci, h, wd, co, kh, kw, ho, wo](Node& n) {
    auto gmat = n.grad.mat(co, ho * wo);
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int c = 0; c < co; ++c) gb[c] += gmat.row(c).sum();
    }
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    if (pointwise) {
      if (w->requires_grad)
        w->ensure_grad().mat(co, ci).noalias() += gmat * x->value.mat(ci, h * wd).transpose();
      if (x->requires_grad)
        x->ensure_grad().mat(ci, h * wd).noalias() +=
            w->value.mat(co, ci).transpose() * gmat;
      return;
    }
    if (w->requires_grad)
      w->ensure_grad().mat(co, ci * kh * kw).noalias() += gmat * cols->transpose();
    if (x->requires_grad) {
      RowMat gcols = w->value.mat(co, ci * kh * kw).transpose() * gmat;
      col2im_accum(gcols, x->ensure_grad(), kh, kw, stride, pad, ho, wo);
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require(x->value.ndim() == 3, "group_norm: (C,H,W) expected");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  require(c % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma->value.numel() == c && beta->value.numel() == c, "group_norm: affine size");
  const int cg = c / groups;
  const Eigen::Index gsz = static_cast<Eigen::Index>(cg) * h * w;

  auto xhat = std::make_shared<Tensord>(x->value.shape());
  auto inv_std = std::make_shared<std::vector<double>>(groups);
  Tensord out(x->value.shape());
  auto xm = x->value.mat(groups, static_cast<int>(gsz));
  auto xh = xhat->mat(groups, static_cast<int>(gsz));
  for (int g = 0; g < groups; ++g) {
    const double mu = xm.row(g).mean();
    const double var = (xm.row(g).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    xh.row(g) = ((xm.row(g).array() - mu) * is).matrix();
  }
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    auto src = xhat->mat(c, static_cast<int>(hw)).row(ch).array();
    out.mat(c, static_cast<int>(hw)).row(ch).array() =
        src * gamma->value[ch] + beta->value[ch];
  }

  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat, inv_std, groups, c, h, w](Node& n) {
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    const int cg = c / groups;
    const Eigen::Index gsz = static_cast<Eigen::Index>(cg) * hw;
    auto gy = n.grad.mat(c, static_cast<int>(hw));
    auto xh_c = xhat->mat(c, static_cast<int>(hw));
    if (gamma->requires_grad || beta->requires_grad) {
      for (int ch = 0; ch < c; ++ch) {
        if (gamma->requires_grad)
          gamma->ensure_grad()[ch] += (gy.row(ch).array() * xh_c.row(ch).array()).sum();
        if (beta->requires_grad) beta->ensure_grad()[ch] += gy.row(ch).sum();
      }
    }
    if (!x->requires_grad) return;
    // h = gy * gamma, then gx = inv_std * (h - mean(h) - xhat * mean(h*xhat))
    Tensord hbuf({c, h, w});
    auto hm = hbuf.mat(c, static_cast<int>(hw));
    for (int ch = 0; ch < c; ++ch) hm.row(ch).array() = gy.row(ch).array() * gamma->value[ch];
    auto hg = hbuf.mat(groups, static_cast<int>(gsz));
    auto xg = xhat->mat(groups, static_cast<int>(gsz));
    auto gx = x->ensure_grad().mat(groups, static_cast<int>(gsz));
    for (int g = 0; g < groups; ++g) {
      const double mh = hg.row(g).mean();
      const double mhx = (hg.row(g).array() * xg.row(g).array()).mean();
      gx.row(g).array() +=
          (*inv_std)[g] * (hg.row(g).array() - mh - xg.row(g).array() * mhx);
    }
  });
}

Var upsample_nearest2(const Var& x) {
  require(x->value.ndim() == 3, "upsample: (C,H,W) expected");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensord out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out(ch, y, xx) = x->value(ch, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [x, c, h, w](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) g(ch, y / 2, xx / 2) += n.grad(ch, y, xx);
  });
}

Var concat_ch(const Var& a, const Var& b) {
  require(a->value.ndim() == 3 && b->value.ndim() == 3, "concat_ch: rank");
  const int ca = a->value.dim(0), cb = b->value.dim(0);
  const int h = a->value.dim(1), w = a->value.dim(2);
  require(b->value.dim(1) == h && b->value.dim(2) == w, "concat_ch: spatial mismatch");
  Tensord out({ca + cb, h, w});
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  out.array().head(ca * hw) = a->value.array();
  out.array().tail(cb * hw) = b->value.array();
  return make_op(std::move(out), {a, b}, [a, b, ca, cb, hw](Node& n) {
    if (a->requires_grad) a->ensure_grad().array() += n.grad.array().head(ca * hw);
    if (b->requires_grad) b->ensure_grad().array() += n.grad.array().tail(cb * hw);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x->value.ndim() == 2 && w->value.ndim() == 2, "linear: rank");
  const int bs = x->value.dim(0), din = x->value.dim(1), dout = w->value.dim(0);
  require(w->value.dim(1) == din && b->value.numel() == dout, "linear: size mismatch");
  Tensord out({bs, dout});
  out.mat().noalias() = x->value.mat() * w->value.mat().transpose();
  for (int r = 0; r < bs; ++r)
    for (int c = 0; c < dout; ++c) out(r, c) += b->value[c];
  return make_op(std::move(out), {x, w, b}, [x, w, b, bs, dout](Node& n) {
    auto g = n.grad.mat(bs, dout);
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int c = 0; c < dout; ++c) gb[c] += g.col(c).sum();
    }
    if (w->requires_grad) w->ensure_grad().mat().noalias() += g.transpose() * x->value.mat();
    if (x->requires_grad) x->ensure_grad().mat().noalias() += g * w->value.mat();
  });
}

Var rows_normalize(const Var& x, double eps) {
  require(x->value.ndim() == 2, "rows_normalize: (B,D) expected");
  const int bs = x->value.dim(0), d = x->value.dim(1);
  Tensord out({bs, d});
  auto norms = std::make_shared<std::vector<double>>(bs);
  for (int r = 0; r < bs; ++r) {
    const double nr = std::max(x->value.mat().row(r).norm(), eps);
    (*norms)[r] = nr;
    out.mat().row(r) = x->value.mat().row(r) / nr;
  }
  Tensord y = out;
  return make_op(std::move(out), {x}, [x, y, norms, bs](Node& n) {
    if (!x->requires_grad) return;
    auto gx = x->ensure_grad().mat();
    auto gy = n.grad.mat();
    for (int r = 0; r < bs; ++r) {
      const double dot = gy.row(r).dot(y.mat().row(r));
      gx.row(r) += (gy.row(r) - dot * y.mat().row(r)) / (*norms)[r];
    }
  });
}

Var gather_channels(const Var& map, const std::vector<std::pair<int, int>>& locations) {
  require(map->value.ndim() == 3, "gather_channels: (C,H,W) expected");
  const int c = map->value.dim(0), h = map->value.dim(1), w = map->value.dim(2);
  const int bs = static_cast<int>(locations.size());
  Tensord out({bs, c});
  for (int r = 0; r < bs; ++r) {
    auto [y, x] = locations[r];
    require(y >= 0 && y < h && x >= 0 && x < w, "gather_channels: location out of bounds");
    for (int ch = 0; ch < c; ++ch) out(r, ch) = map->value(ch, y, x);
  }
  auto locs = locations;
  return make_op(std::move(out), {map}, [map, locs, c](Node& n) {
    if (!map->requires_grad) return;
    auto& g = map->ensure_grad();
    for (size_t r = 0; r < locs.size(); ++r)
      for (int ch = 0; ch < c; ++ch)
        g(ch, locs[r].first, locs[r].second) += n.grad(static_cast<int>(r), ch);
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows: empty");
  const int d = static_cast<int>(rows[0]->value.numel());
  Tensord out({static_cast<int>(rows.size()), d});
  for (size_t r = 0; r < rows.size(); ++r) {
    require(rows[r]->value.numel() == d, "stack_rows: length mismatch");
    for (int c = 0; c < d; ++c) out(static_cast<int>(r), c) = rows[r]->value[c];
  }
  return make_op(std::move(out), rows, [rows, d](Node& n) {
    for (size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r]->requires_grad) continue;
      auto& g = rows[r]->ensure_grad();
      for (int c = 0; c < d; ++c) g[c] += n.grad(static_cast<int>(r), c);
    }
  });
}

Var vconcat_rows(const std::vector<Var>& blocks) {
  require(!blocks.empty(), "vconcat_rows: empty");
  const int d = blocks[0]->value.dim(1);
  int total = 0;
  for (const auto& b : blocks) {
    require(b->value.ndim() == 2 && b->value.dim(1) == d, "vconcat_rows: column mismatch");
    total += b->value.dim(0);
  }
  Tensord out({total, d});
  int row = 0;
  for (const auto& b : blocks) {
    out.mat().middleRows(row, b->value.dim(0)) = b->value.mat();
    row += b->value.dim(0);
  }
  return make_op(std::move(out), blocks, [blocks, total, d](Node& n) {
    auto g = n.grad.mat(total, d);
    int row = 0;
    for (const auto& b : blocks) {
      if (b->requires_grad) b->ensure_grad().mat() += g.middleRows(row, b->value.dim(0));
      row += b->value.dim(0);
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require(a->value.ndim() == 2 && b->value.ndim() == 2, "concat_cols: rank");
  const int bs = a->value.dim(0), da = a->value.dim(1), db = b->value.dim(1);
  require(b->value.dim(0) == bs, "concat_cols: row mismatch");
  Tensord out({bs, da + db});
  out.mat().leftCols(da) = a->value.mat();
  out.mat().rightCols(db) = b->value.mat();
  return make_op(std::move(out), {a, b}, [a, b, bs, da, db](Node& n) {
    if (a->requires_grad) a->ensure_grad().mat() += n.grad.mat(bs, da + db).leftCols(da);
    if (b->requires_grad) b->ensure_grad().mat() += n.grad.mat(bs, da + db).rightCols(db);
  });
}

Var spatial_mean(const Var& x) {
  require(x->value.ndim() == 3, "spatial_mean: (C,H,W) expected");
  const int c = x->value.dim(0);
  const Eigen::Index hw = static_cast<Eigen::Index>(x->value.dim(1)) * x->value.dim(2);
  Tensord out({c});
  for (int ch = 0; ch < c; ++ch)
    out[ch] = x->value.mat(c, static_cast<int>(hw)).row(ch).mean();
  return make_op(std::move(out), {x}, [x, c, hw](Node& n) {
    if (!x->requires_grad) return;
    auto g = x->ensure_grad().mat(c, static_cast<int>(hw));
    for (int ch = 0; ch < c; ++ch)
      g.row(ch).array() += n.grad[ch] / static_cast<double>(hw);
  });
}

Var matmul_const_t(const Var& x, const Tensord& m) {
  require(x->value.ndim() == 2 && m.ndim() == 2, "matmul_const_t: rank");
  const int bs = x->value.dim(0), d = x->value.dim(1), r = m.dim(0);
  require(m.dim(1) == d, "matmul_const_t: inner dim mismatch");
  Tensord out({bs, r});
  out.mat().noalias() = x->value.mat() * m.mat().transpose();
  Tensord mc = m;
  return make_op(std::move(out), {x}, [x, mc](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad().mat().noalias() += n.grad.mat() * mc.mat();
  });
}

Var log_softmax_rows(const Var& x) {
  require(x->value.ndim() == 2, "log_softmax_rows: (B,R) expected");
  const int bs = x->value.dim(0), r = x->value.dim(1);
  Tensord out({bs, r});
  for (int b = 0; b < bs; ++b) {
    const double mx = x->value.mat().row(b).maxCoeff();
    const double lse = mx + std::log((x->value.mat().row(b).array() - mx).exp().sum());
    out.mat().row(b) = x->value.mat().row(b).array() - lse;
  }
  Tensord y = out;
  return make_op(std::move(out), {x}, [x, y, bs](Node& n) {
    if (!x->requires_grad) return;
    auto gx = x->ensure_grad().mat();
    for (int b = 0; b < bs; ++b) {
      const double gsum = n.grad.mat().row(b).sum();
      gx.row(b) += n.grad.mat().row(b) - gsum * y.mat().row(b).array().exp().matrix();
    }
  });
}

Var gather_rows_elem(const Var& x, const std::vector<int>& idx) {
  require(x->value.ndim() == 2, "gather_rows_elem: (B,R) expected");
  const int bs = x->value.dim(0), r = x->value.dim(1);
  require(static_cast<int>(idx.size()) == bs, "gather_rows_elem: index count");
  Tensord out({bs});
  for (int b = 0; b < bs; ++b) {
    require(idx[b] >= 0 && idx[b] < r, "gather_rows_elem: index out of range");
    out[b] = x->value(b, idx[b]);
  }
  auto ix = idx;
  return make_op(std::move(out), {x}, [x, ix](Node& n) {
    if (!x->requires_grad) return;
    auto& g = x->ensure_grad();
    for (size_t b = 0; b < ix.size(); ++b) g(static_cast<int>(b), ix[b]) += n.grad[b];
  });
}

Var focal_nll(const Var& logp, double gamma) {
  Tensord out = logp->value;
  if (gamma == 0.0) {
    out.array() = -out.array();
  } else {
    for (Eigen::Index i = 0; i < out.numel(); ++i) {
      const double lp = logp->value[i];
      const double p = std::exp(lp);
      out[i] = -std::pow(1.0 - p, gamma) * lp;
    }
  }
  return make_op(std::move(out), {logp}, [logp, gamma](Node& n) {
    if (!logp->requires_grad) return;
    auto& g = logp->ensure_grad();
    if (gamma == 0.0) {
      g.array() -= n.grad.array();
      return;
    }
    for (Eigen::Index i = 0; i < g.numel(); ++i) {
      const double lp = logp->value[i];
      const double p = std::exp(lp);
      const double q = std::max(1.0 - p, 0.0);
      const double d = gamma * p * std::pow(q, gamma - 1.0) * lp - std::pow(q, gamma);
      g[i] += n.grad[i] * d;
    }
  });
}

Var mean_vec(const Var& x) {
  const double n_elems = static_cast<double>(x->value.numel());
  return make_op(Tensord::scalar(x->value.array().mean()), {x}, [x, n_elems](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += n.grad[0] / n_elems;
  });
}

Var sum_vec(const Var& x) {
  return make_op(Tensord::scalar(x->value.array().sum()), {x}, [x](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += n.grad[0];
  });
}

Var logmeanexp_vec(const Var& x) {
  const double mx = x->value.array().maxCoeff();
  const double me = (x->value.array() - mx).exp().mean();
  const double val = mx + std::log(me);
  Tensord soft = x->value;
  soft.array() = (x->value.array() - mx).exp() / ((x->value.array() - mx).exp().sum());
  return make_op(Tensord::scalar(val), {x}, [x, soft](Node& n) {
    if (x->requires_grad) x->ensure_grad().array() += n.grad[0] * soft.array();
  });
}

Var dot_rows_mean(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value) && a->value.ndim() == 2, "dot_rows_mean: shape");
  const int bs = a->value.dim(0);
  double acc = 0.0;
  for (int r = 0; r < bs; ++r) acc += a->value.mat().row(r).dot(b->value.mat().row(r));
  acc /= bs;
  return make_op(Tensord::scalar(acc), {a, b}, [a, b, bs](Node& n) {
    const double g = n.grad[0] / bs;
    if (a->requires_grad) a->ensure_grad().mat() += g * b->value.mat();
    if (b->requires_grad) b->ensure_grad().mat() += g * a->value.mat();
  });
}

}  // namespace alignps
