#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "dpmkit/common.hpp"

namespace dpmkit {

// Reverse-mode autodiff over Mat. Build a graph by calling ops on the tape,
// then backward() from a 1x1 scalar node. Node values live for the tape's
// lifetime; gradients are allocated on demand during backward.
//
// Handles are plain indices; a Var from one tape must not be fed to another.
struct Var {
  int id = -1;
  bool ok() const { return id >= 0; }
};

class Tape {
 public:
  struct Node {
    Mat val;
    Mat grad;            // allocated lazily in backward()
    bool needs_grad = true;
    std::function<void(Tape&)> back;  // accumulates into parent grads
  };

  const Mat& val(Var v) const { return nodes_[v.id].val; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  int rows(Var v) const { return nodes_[v.id].val.rows; }
  int cols(Var v) const { return nodes_[v.id].val.cols; }
  size_t num_nodes() const { return nodes_.size(); }

  Var leaf(Mat v) {
    nodes_.push_back(Node{std::move(v), Mat(), true, nullptr});
    return Var{int(nodes_.size()) - 1};
  }

  // Constant input: never receives a gradient.
  Var constant(Mat v) {
    nodes_.push_back(Node{std::move(v), Mat(), false, nullptr});
    return Var{int(nodes_.size()) - 1};
  }

  Var add(Var a, Var b) {
    require(val(a).same_shape(val(b)), ErrorKind::shape, "add: shape mismatch");
    Mat out = val(a);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += val(b).a[i];
    return make(std::move(out), [a, b](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) { for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i]; });
      t.accum(b, [&](Mat& gb) { for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] += g.a[i]; });
    });
  }

  Var sub(Var a, Var b) {
    require(val(a).same_shape(val(b)), ErrorKind::shape, "sub: shape mismatch");
    Mat out = val(a);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] -= val(b).a[i];
    return make(std::move(out), [a, b](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) { for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i]; });
      t.accum(b, [&](Mat& gb) { for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] -= g.a[i]; });
    });
  }

  Var mul(Var a, Var b) {
    require(val(a).same_shape(val(b)), ErrorKind::shape, "mul: shape mismatch");
    Mat out = val(a);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] *= val(b).a[i];
    return make(std::move(out), [a, b](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& va = t.val(a);
      const Mat& vb = t.val(b);
      t.accum(a, [&](Mat& ga) { for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i] * vb.a[i]; });
      t.accum(b, [&](Mat& gb) { for (size_t i = 0; i < g.a.size(); ++i) gb.a[i] += g.a[i] * va.a[i]; });
    });
  }

  Var scale(Var a, double s) {
    Mat out = val(a);
    for (auto& v : out.a) v *= s;
    return make(std::move(out), [a, s](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) { for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += s * g.a[i]; });
    });
  }

  Var add_scalar(Var a, double s) {
    Mat out = val(a);
    for (auto& v : out.a) v += s;
    return make(std::move(out), [a](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) { for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i]; });
    });
  }

  // a (n x m) + v (1 x m), broadcast over rows
  Var add_rowvec(Var a, Var v) {
    require(val(v).rows == 1 && val(v).cols == val(a).cols, ErrorKind::shape,
            "add_rowvec: expected 1 x cols(a)");
    Mat out = val(a);
    const Mat& vv = val(v);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) += vv(0, j);
    return make(std::move(out), [a, v](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) { for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i]; });
      t.accum(v, [&](Mat& gv) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gv(0, j) += g(i, j);
      });
    });
  }

  // a (n x m) * v (1 x m), broadcast over rows
  Var mul_rowvec(Var a, Var v) {
    require(val(v).rows == 1 && val(v).cols == val(a).cols, ErrorKind::shape,
            "mul_rowvec: expected 1 x cols(a)");
    Mat out = val(a);
    const Mat& vv = val(v);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= vv(0, j);
    return make(std::move(out), [a, v](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& va = t.val(a);
      const Mat& vv2 = t.val(v);
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) * vv2(0, j);
      });
      t.accum(v, [&](Mat& gv) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gv(0, j) += g(i, j) * va(i, j);
      });
    });
  }

  // a (n x m) * v (n x 1), broadcast over columns (per-row scaling)
  Var mul_colvec(Var a, Var v) {
    require(val(v).cols == 1 && val(v).rows == val(a).rows, ErrorKind::shape,
            "mul_colvec: expected rows(a) x 1");
    Mat out = val(a);
    const Mat& vv = val(v);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= vv(i, 0);
    return make(std::move(out), [a, v](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& va = t.val(a);
      const Mat& vv2 = t.val(v);
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) * vv2(i, 0);
      });
      t.accum(v, [&](Mat& gv) {
        for (int i = 0; i < g.rows; ++i) {
          double s = 0.0;
          for (int j = 0; j < g.cols; ++j) s += g(i, j) * va(i, j);
          gv(i, 0) += s;
        }
      });
    });
  }

  Var matmul(Var a, Var b) {
    Mat out = dpmkit::matmul(val(a), val(b));
    return make(std::move(out), [a, b](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& va = t.val(a);
      const Mat& vb = t.val(b);
      t.accum(a, [&](Mat& ga) { add_into(ga, dpmkit::matmul_nt(g, vb)); });
      t.accum(b, [&](Mat& gb) { add_into(gb, dpmkit::matmul_tn(va, g)); });
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    Mat out = dpmkit::matmul_nt(val(a), val(b));
    return make(std::move(out), [a, b](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& va = t.val(a);
      const Mat& vb = t.val(b);
      t.accum(a, [&](Mat& ga) { add_into(ga, dpmkit::matmul(g, vb)); });
      t.accum(b, [&](Mat& gb) { add_into(gb, dpmkit::matmul_tn(g, va)); });
    });
  }

  Var sigmoid(Var a) {
    Mat out = val(a);
    for (auto& v : out.a) v = 1.0 / (1.0 + std::exp(-v));
    return make_unary_with_out(a, std::move(out), [](double, double y, double g) {
      return g * y * (1.0 - y);
    });
  }

  Var relu(Var a) {
    Mat out = val(a);
    for (auto& v : out.a) v = v > 0.0 ? v : 0.0;
    return make_unary_with_out(a, std::move(out), [](double x, double, double g) {
      return x > 0.0 ? g : 0.0;
    });
  }

  // Exact GELU: x * Phi(x)
  Var gelu(Var a) {
    static const double inv_sqrt2 = 0.7071067811865475244;
    static const double inv_sqrt2pi = 0.3989422804014326779;
    Mat out = val(a);
    for (auto& v : out.a) v = v * 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    return make_unary_with_out(a, std::move(out), [](double x, double, double g) {
      const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      return g * (phi + x * pdf);
    });
  }

  Var softmax_rows(Var a) {
    Mat out = val(a);
    for (int i = 0; i < out.rows; ++i) {
      double mx = out(i, 0);
      for (int j = 1; j < out.cols; ++j) mx = std::max(mx, out(i, j));
      double sum = 0.0;
      for (int j = 0; j < out.cols; ++j) {
        out(i, j) = std::exp(out(i, j) - mx);
        sum += out(i, j);
      }
      for (int j = 0; j < out.cols; ++j) out(i, j) /= sum;
    }
    return make(std::move(out), [a](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& y = t.out_val();
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i) {
          double dotv = 0.0;
          for (int j = 0; j < g.cols; ++j) dotv += g(i, j) * y(i, j);
          for (int j = 0; j < g.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dotv);
        }
      });
    });
  }

  Var log_softmax_rows(Var a) {
    Mat out = val(a);
    for (int i = 0; i < out.rows; ++i) {
      double mx = out(i, 0);
      for (int j = 1; j < out.cols; ++j) mx = std::max(mx, out(i, j));
      double sum = 0.0;
      for (int j = 0; j < out.cols; ++j) sum += std::exp(out(i, j) - mx);
      const double lse = mx + std::log(sum);
      for (int j = 0; j < out.cols; ++j) out(i, j) -= lse;
    }
    return make(std::move(out), [a](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& y = t.out_val();
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i) {
          double gsum = 0.0;
          for (int j = 0; j < g.cols; ++j) gsum += g(i, j);
          for (int j = 0; j < g.cols; ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
        }
      });
    });
  }

  // Per-row layer norm with learned gamma, beta (both 1 x cols).
  Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-6) {
    const Mat& x = val(a);
    require(val(gamma).rows == 1 && val(gamma).cols == x.cols, ErrorKind::shape, "layer_norm: gamma shape");
    require(val(beta).rows == 1 && val(beta).cols == x.cols, ErrorKind::shape, "layer_norm: beta shape");
    Mat out(x.rows, x.cols);
    Mat xhat(x.rows, x.cols);
    Mat inv_std(x.rows, 1);
    const Mat& gm = val(gamma);
    const Mat& bt = val(beta);
    for (int i = 0; i < x.rows; ++i) {
      double mean = 0.0;
      for (int j = 0; j < x.cols; ++j) mean += x(i, j);
      mean /= x.cols;
      double var = 0.0;
      for (int j = 0; j < x.cols; ++j) {
        const double d = x(i, j) - mean;
        var += d * d;
      }
      var /= x.cols;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(i, 0) = is;
      for (int j = 0; j < x.cols; ++j) {
        xhat(i, j) = (x(i, j) - mean) * is;
        out(i, j) = xhat(i, j) * gm(0, j) + bt(0, j);
      }
    }
    auto xh = std::make_shared<Mat>(std::move(xhat));
    auto is_store = std::make_shared<Mat>(std::move(inv_std));
    return make(std::move(out), [a, gamma, beta, xh, is_store](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& gm2 = t.val(gamma);
      const int n = g.cols;
      t.accum(gamma, [&](Mat& gg) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < n; ++j) gg(0, j) += g(i, j) * (*xh)(i, j);
      });
      t.accum(beta, [&](Mat& gb) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < n; ++j) gb(0, j) += g(i, j);
      });
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i) {
          // dxhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxh = g(i, j) * gm2(0, j);
            m1 += dxh;
            m2 += dxh * (*xh)(i, j);
          }
          m1 /= n;
          m2 /= n;
          const double is = (*is_store)(i, 0);
          for (int j = 0; j < n; ++j) {
            const double dxh = g(i, j) * gm2(0, j);
            ga(i, j) += (dxh - m1 - (*xh)(i, j) * m2) * is;
          }
        }
      });
    });
  }

  Var l2_normalize_rows(Var a, double eps = 1e-12) {
    const Mat& x = val(a);
    Mat out(x.rows, x.cols);
    Mat norms(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < x.cols; ++j) s += x(i, j) * x(i, j);
      const double n = std::sqrt(s);
      require(n > eps, ErrorKind::numeric, "l2_normalize_rows: zero-norm row");
      norms(i, 0) = n;
      for (int j = 0; j < x.cols; ++j) out(i, j) = x(i, j) / n;
    }
    auto nstore = std::make_shared<Mat>(std::move(norms));
    return make(std::move(out), [a, nstore](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& y = t.out_val();
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i) {
          double dotv = 0.0;
          for (int j = 0; j < g.cols; ++j) dotv += g(i, j) * y(i, j);
          const double inv_n = 1.0 / (*nstore)(i, 0);
          for (int j = 0; j < g.cols; ++j)
            ga(i, j) += (g(i, j) - y(i, j) * dotv) * inv_n;
        }
      });
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::shape, "concat_rows: empty");
    const int c = val(parts[0]).cols;
    int r = 0;
    for (Var p : parts) {
      require(val(p).cols == c, ErrorKind::shape, "concat_rows: width mismatch");
      r += val(p).rows;
    }
    Mat out(r, c);
    int at = 0;
    for (Var p : parts) {
      const Mat& v = val(p);
      std::copy(v.a.begin(), v.a.end(), out.a.begin() + size_t(at) * c);
      at += v.rows;
    }
    return make(std::move(out), [parts](Tape& t) {
      const Mat& g = t.out_grad();
      int at2 = 0;
      for (Var p : parts) {
        const int pr = t.val(p).rows;
        const int off = at2;
        t.accum(p, [&](Mat& gp) {
          for (int i = 0; i < pr; ++i)
            for (int j = 0; j < g.cols; ++j) gp(i, j) += g(off + i, j);
        });
        at2 += pr;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::shape, "concat_cols: empty");
    const int r = val(parts[0]).rows;
    int c = 0;
    for (Var p : parts) {
      require(val(p).rows == r, ErrorKind::shape, "concat_cols: height mismatch");
      c += val(p).cols;
    }
    Mat out(r, c);
    int at = 0;
    for (Var p : parts) {
      const Mat& v = val(p);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < v.cols; ++j) out(i, at + j) = v(i, j);
      at += v.cols;
    }
    return make(std::move(out), [parts](Tape& t) {
      const Mat& g = t.out_grad();
      int at2 = 0;
      for (Var p : parts) {
        const int pc = t.val(p).cols;
        const int off = at2;
        t.accum(p, [&](Mat& gp) {
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < pc; ++j) gp(i, j) += g(i, off + j);
        });
        at2 += pc;
      }
    });
  }

  Var slice_rows(Var a, int r0, int r1) {
    const Mat& x = val(a);
    require(0 <= r0 && r0 < r1 && r1 <= x.rows, ErrorKind::shape, "slice_rows: bad range");
    Mat out(r1 - r0, x.cols);
    std::copy(x.a.begin() + size_t(r0) * x.cols, x.a.begin() + size_t(r1) * x.cols, out.a.begin());
    return make(std::move(out), [a, r0](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga(r0 + i, j) += g(i, j);
      });
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const Mat& x = val(a);
    require(0 <= c0 && c0 < c1 && c1 <= x.cols, ErrorKind::shape, "slice_cols: bad range");
    Mat out(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
      for (int j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
    return make(std::move(out), [a, c0](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
      });
    });
  }

  Var row(Var a, int r) { return slice_rows(a, r, r + 1); }

  // Pick one entry per listed (row, col) pair; output is n x 1.
  Var gather_entries(Var a, std::vector<std::pair<int, int>> idx) {
    const Mat& x = val(a);
    Mat out(int(idx.size()), 1);
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i].first < x.rows && idx[i].second < x.cols, ErrorKind::index,
              "gather_entries: index out of range");
      out(int(i), 0) = x(idx[i].first, idx[i].second);
    }
    auto ix = std::make_shared<std::vector<std::pair<int, int>>>(std::move(idx));
    return make(std::move(out), [a, ix](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) {
        for (size_t i = 0; i < ix->size(); ++i)
          ga((*ix)[i].first, (*ix)[i].second) += g(int(i), 0);
      });
    });
  }

  Var sum_all(Var a) {
    double s = 0.0;
    for (double v : val(a).a) s += v;
    Mat out(1, 1, s);
    return make(std::move(out), [a](Tape& t) {
      const double g = t.out_grad()(0, 0);
      t.accum(a, [&](Mat& ga) { for (auto& v : ga.a) v += g; });
    });
  }

  Var mean_all(Var a) {
    const double inv = 1.0 / double(val(a).size());
    double s = 0.0;
    for (double v : val(a).a) s += v;
    Mat out(1, 1, s * inv);
    return make(std::move(out), [a, inv](Tape& t) {
      const double g = t.out_grad()(0, 0) * inv;
      t.accum(a, [&](Mat& ga) { for (auto& v : ga.a) v += g; });
    });
  }

  // Column-wise mean: (n x m) -> (1 x m). This is GAP when rows are spatial.
  Var mean_rows(Var a) {
    const Mat& x = val(a);
    const double inv = 1.0 / double(x.rows);
    Mat out(1, x.cols);
    for (int i = 0; i < x.rows; ++i)
      for (int j = 0; j < x.cols; ++j) out(0, j) += x(i, j) * inv;
    return make(std::move(out), [a, inv](Tape& t) {
      const Mat& g = t.out_grad();
      t.accum(a, [&](Mat& ga) {
        for (int i = 0; i < ga.rows; ++i)
          for (int j = 0; j < ga.cols; ++j) ga(i, j) += g(0, j) * inv;
      });
    });
  }

  // 3x3 same-padding convolution over a row-major (h*w) x c_in spatial map.
  // weight is c_out x (c_in*9), kernel offsets ordered (dy, dx) row-major;
  // bias is 1 x c_out.
  Var conv3x3_same(Var input, Var weight, Var bias, int h, int w) {
    const Mat& x = val(input);
    const Mat& wt = val(weight);
    const Mat& b = val(bias);
    require(x.rows == h * w, ErrorKind::shape, "conv3x3: rows != h*w");
    const int c_in = x.cols;
    require(wt.cols == c_in * 9, ErrorKind::shape, "conv3x3: weight cols != c_in*9");
    const int c_out = wt.rows;
    require(b.rows == 1 && b.cols == c_out, ErrorKind::shape, "conv3x3: bias shape");
    Mat out(h * w, c_out);
    for (int y = 0; y < h; ++y) {
      for (int xp = 0; xp < w; ++xp) {
        double* orow = &out.a[size_t(y * w + xp) * c_out];
        for (int oc = 0; oc < c_out; ++oc) orow[oc] = b(0, oc);
        for (int ky = -1; ky <= 1; ++ky) {
          const int sy = y + ky;
          if (sy < 0 || sy >= h) continue;
          for (int kx = -1; kx <= 1; ++kx) {
            const int sx = xp + kx;
            if (sx < 0 || sx >= w) continue;
            const int koff = ((ky + 1) * 3 + (kx + 1)) * c_in;
            const double* xrow = &x.a[size_t(sy * w + sx) * c_in];
            for (int oc = 0; oc < c_out; ++oc) {
              const double* wrow = &wt.a[size_t(oc) * wt.cols + koff];
              double s = 0.0;
              for (int ic = 0; ic < c_in; ++ic) s += wrow[ic] * xrow[ic];
              orow[oc] += s;
            }
          }
        }
      }
    }
    return make(std::move(out), [input, weight, bias, h, w, c_in, c_out](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& x2 = t.val(input);
      const Mat& wt2 = t.val(weight);
      t.accum(bias, [&](Mat& gb) {
        for (int p = 0; p < h * w; ++p)
          for (int oc = 0; oc < c_out; ++oc) gb(0, oc) += g(p, oc);
      });
      t.accum(weight, [&](Mat& gw) {
        for (int y = 0; y < h; ++y)
          for (int xp = 0; xp < w; ++xp)
            for (int ky = -1; ky <= 1; ++ky) {
              const int sy = y + ky;
              if (sy < 0 || sy >= h) continue;
              for (int kx = -1; kx <= 1; ++kx) {
                const int sx = xp + kx;
                if (sx < 0 || sx >= w) continue;
                const int koff = ((ky + 1) * 3 + (kx + 1)) * c_in;
                const double* xrow = &x2.a[size_t(sy * w + sx) * c_in];
                const double* grow = &g.a[size_t(y * w + xp) * c_out];
                for (int oc = 0; oc < c_out; ++oc) {
                  double* wrow = &gw.a[size_t(oc) * gw.cols + koff];
                  const double gv = grow[oc];
                  for (int ic = 0; ic < c_in; ++ic) wrow[ic] += gv * xrow[ic];
                }
              }
            }
      });
      t.accum(input, [&](Mat& gx) {
        for (int y = 0; y < h; ++y)
          for (int xp = 0; xp < w; ++xp)
            for (int ky = -1; ky <= 1; ++ky) {
              const int sy = y + ky;
              if (sy < 0 || sy >= h) continue;
              for (int kx = -1; kx <= 1; ++kx) {
                const int sx = xp + kx;
                if (sx < 0 || sx >= w) continue;
                const int koff = ((ky + 1) * 3 + (kx + 1)) * c_in;
                double* xrow = &gx.a[size_t(sy * w + sx) * c_in];
                const double* grow = &g.a[size_t(y * w + xp) * c_out];
                for (int oc = 0; oc < c_out; ++oc) {
                  const double* wrow = &wt2.a[size_t(oc) * wt2.cols + koff];
                  const double gv = grow[oc];
                  for (int ic = 0; ic < c_in; ++ic) xrow[ic] += gv * wrow[ic];
                }
              }
            }
      });
    });
  }

  // Runs backward from a 1x1 scalar node. Can only be called once per tape.
  void backward(Var out) {
    require(val(out).rows == 1 && val(out).cols == 1, ErrorKind::shape,
            "backward: output must be scalar");
    require(!ran_backward_, ErrorKind::numeric, "backward: already ran");
    ran_backward_ = true;
    nodes_[out.id].grad = Mat(1, 1, 1.0);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.size() == 0) continue;
      cur_ = i;
      n.back(*this);
    }
  }

  // Gradient of a node after backward(); zeros if it never received one.
  Mat grad_or_zero(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::zeros(n.val.rows, n.val.cols);
    return n.grad;
  }

 private:
  template <typename F>
  Var make(Mat out, F back) {
    nodes_.push_back(Node{std::move(out), Mat(), true, std::move(back)});
    return Var{int(nodes_.size()) - 1};
  }

  // Unary op whose derivative may use input x and output y.
  template <typename D>
  Var make_unary_with_out(Var a, Mat out, D dfn) {
    return make(std::move(out), [a, dfn](Tape& t) {
      const Mat& g = t.out_grad();
      const Mat& x = t.val(a);
      const Mat& y = t.out_val();
      t.accum(a, [&](Mat& ga) {
        for (size_t i = 0; i < g.a.size(); ++i) ga.a[i] += dfn(x.a[i], y.a[i], g.a[i]);
      });
    });
  }

  static void add_into(Mat& dst, const Mat& src) {
    for (size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
  }

  const Mat& out_grad() const { return nodes_[cur_].grad; }
  const Mat& out_val() const { return nodes_[cur_].val; }

  template <typename F>
  void accum(Var parent, F fn) {
    Node& p = nodes_[parent.id];
    if (!p.needs_grad) return;
    if (p.grad.size() == 0) p.grad = Mat::zeros(p.val.rows, p.val.cols);
    fn(p.grad);
  }

  std::vector<Node> nodes_;
  int cur_ = -1;
  bool ran_backward_ = false;
};

}  // namespace dpmkit
