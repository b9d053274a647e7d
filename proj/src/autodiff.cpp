#include "vsteer/autodiff.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vsteer::ad {

namespace {

size_t shape_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const Array& a, const Array& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
}

[[noreturn]] void shape_error(const std::string& op, const Array& a) {
  throw std::invalid_argument(op + ": bad shape " + a.shape_str());
}

}  // namespace

Array::Array(std::vector<size_t> s, double fill)
    : shape(std::move(s)), data(shape_product(shape), fill) {}

Array Array::scalar(double v) {
  Array a({1});
  a.data[0] = v;
  return a;
}

Array Array::row(std::vector<double> v) {
  Array a;
  a.shape = {v.size()};
  a.data = std::move(v);
  return a;
}

std::string Array::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tape::Node Tape::emit(Array value, bool needs_grad, std::function<void(Tape&)> back) {
  Record rec;
  rec.grad = Array(value.shape, 0.0);
  rec.value = std::move(value);
  rec.needs_grad = needs_grad;
  rec.back = std::move(back);
  recs_.push_back(std::move(rec));
  return static_cast<Node>(recs_.size() - 1);
}

Tape::Node Tape::input(Array value, bool requires_grad) {
  return emit(std::move(value), requires_grad, nullptr);
}

Tape::Node Tape::add(Node a, Node b) {
  const Array& va = value(a);
  const Array& vb = value(b);
  if (va.shape != vb.shape) shape_error("add", va, vb);
  Array out = va;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
  bool ng = needs(a) || needs(b);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, a, b](Tape& t) {
      const Array& g = t.gradient(n);
      if (t.needs(a)) {
        Array& ga = t.grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs(b)) {
        Array& gb = t.grad_buf(b);
        for (size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
      }
    };
  }
  return n;
}

Tape::Node Tape::mul(Node a, Node b) {
  const Array& va = value(a);
  const Array& vb = value(b);
  bool a_scalar = va.size() == 1;
  bool b_scalar = vb.size() == 1;
  if (va.shape != vb.shape && !a_scalar && !b_scalar) shape_error("mul", va, vb);

  const Array& big = b_scalar ? va : vb;
  Array out(big.shape, 0.0);
  if (va.shape == vb.shape) {
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
  } else if (b_scalar) {
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] * vb.data[0];
  } else {
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[0] * vb.data[i];
  }
  bool ng = needs(a) || needs(b);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, a, b, a_scalar, b_scalar](Tape& t) {
      const Array& g = t.gradient(n);
      const Array& va = t.value(a);
      const Array& vb = t.value(b);
      bool same = va.shape == vb.shape;
      if (t.needs(a)) {
        Array& ga = t.grad_buf(a);
        if (same) {
          for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
        } else if (a_scalar) {
          double s = 0;
          for (size_t i = 0; i < g.size(); ++i) s += g.data[i] * vb.data[i];
          ga.data[0] += s;
        } else {
          for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb.data[0];
        }
      }
      if (t.needs(b)) {
        Array& gb = t.grad_buf(b);
        if (same) {
          for (size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
        } else if (b_scalar) {
          double s = 0;
          for (size_t i = 0; i < g.size(); ++i) s += g.data[i] * va.data[i];
          gb.data[0] += s;
        } else {
          for (size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va.data[0];
        }
      }
    };
  }
  return n;
}

void matmul_nn(const Array& a, const Array& b, Array& out) {
  size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (size_t i = 0; i < m; ++i) {
    const double* arow = &a.data[i * k];
    double* orow = &out.data[i * n];
    for (size_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &b.data[p * n];
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const Array& a, const Array& b, Array& out) {
  size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (size_t i = 0; i < m; ++i) {
    const double* arow = &a.data[i * k];
    double* orow = &out.data[i * n];
    for (size_t j = 0; j < n; ++j) {
      const double* brow = &b.data[j * k];
      double s = 0;
      for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] += s;
    }
  }
}

void matmul_tn(const Array& a, const Array& b, Array& out) {
  size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (size_t p = 0; p < k; ++p) {
    const double* arow = &a.data[p * m];
    const double* brow = &b.data[p * n];
    for (size_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* orow = &out.data[i * n];
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

Tape::Node Tape::matmul(Node a, Node b) {
  const Array& va = value(a);
  const Array& vb = value(b);
  if (va.shape.size() != 2 || vb.shape.size() != 2 || va.shape[1] != vb.shape[0]) {
    shape_error("matmul", va, vb);
  }
  Array out({va.shape[0], vb.shape[1]}, 0.0);
  matmul_nn(va, vb, out);
  bool ng = needs(a) || needs(b);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, a, b](Tape& t) {
      const Array& g = t.gradient(n);
      if (t.needs(a)) matmul_nt(g, t.value(b), t.grad_buf(a));
      if (t.needs(b)) matmul_tn(t.value(a), g, t.grad_buf(b));
    };
  }
  return n;
}

Tape::Node Tape::transpose(Node a) {
  const Array& va = value(a);
  if (va.shape.size() != 2) shape_error("transpose", va);
  Array out({va.shape[1], va.shape[0]}, 0.0);
  for (size_t i = 0; i < va.shape[0]; ++i)
    for (size_t j = 0; j < va.shape[1]; ++j) out.at(j, i) = va.at(i, j);
  bool ng = needs(a);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, a](Tape& t) {
      const Array& g = t.gradient(n);
      Array& ga = t.grad_buf(a);
      for (size_t i = 0; i < ga.shape[0]; ++i)
        for (size_t j = 0; j < ga.shape[1]; ++j) ga.at(i, j) += g.at(j, i);
    };
  }
  return n;
}

Tape::Node Tape::embedding_lookup(Node table, std::vector<int> rows) {
  const Array& vt = value(table);
  if (vt.shape.size() != 2) shape_error("embedding_lookup", vt);
  size_t e = vt.shape[1];
  Array out({rows.size(), e}, 0.0);
  for (size_t i = 0; i < rows.size(); ++i) {
    int r = rows[i];
    if (r < 0 || static_cast<size_t>(r) >= vt.shape[0]) {
      throw std::invalid_argument("embedding_lookup: row " + std::to_string(r) +
                                  " out of range for " + vt.shape_str());
    }
    std::copy_n(&vt.data[static_cast<size_t>(r) * e], e, &out.data[i * e]);
  }
  bool ng = needs(table);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, table, rows = std::move(rows)](Tape& t) {
      const Array& g = t.gradient(n);
      Array& gt = t.grad_buf(table);
      size_t e = gt.shape[1];
      for (size_t i = 0; i < rows.size(); ++i) {
        double* dst = &gt.data[static_cast<size_t>(rows[i]) * e];
        const double* src = &g.data[i * e];
        for (size_t j = 0; j < e; ++j) dst[j] += src[j];
      }
    };
  }
  return n;
}

Tape::Node Tape::layer_norm(Node x, Node gain, Node bias, double eps) {
  const Array& vx = value(x);
  const Array& vg = value(gain);
  const Array& vb = value(bias);
  size_t f = vx.cols();
  if (vg.size() != f || vb.size() != f) shape_error("layer_norm", vx, vg);
  size_t t = vx.size() / f;

  Array out(vx.shape, 0.0);
  Array xhat(vx.shape, 0.0);
  Array inv_std({t}, 0.0);
  for (size_t r = 0; r < t; ++r) {
    const double* row = &vx.data[r * f];
    double mean = 0;
    for (size_t j = 0; j < f; ++j) mean += row[j];
    mean /= static_cast<double>(f);
    double var = 0;
    for (size_t j = 0; j < f; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(f);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std.data[r] = istd;
    for (size_t j = 0; j < f; ++j) {
      double xh = (row[j] - mean) * istd;
      xhat.data[r * f + j] = xh;
      out.data[r * f + j] = vg.data[j] * xh + vb.data[j];
    }
  }
  bool ng = needs(x) || needs(gain) || needs(bias);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x, gain, bias, f, t, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Tape& tp) {
      const Array& g = tp.gradient(n);
      const Array& vg = tp.value(gain);
      for (size_t r = 0; r < t; ++r) {
        const double* grow = &g.data[r * f];
        const double* xh = &xhat.data[r * f];
        if (tp.needs(gain)) {
          Array& gg = tp.grad_buf(gain);
          for (size_t j = 0; j < f; ++j) gg.data[j] += grow[j] * xh[j];
        }
        if (tp.needs(bias)) {
          Array& gb = tp.grad_buf(bias);
          for (size_t j = 0; j < f; ++j) gb.data[j] += grow[j];
        }
        if (tp.needs(x)) {
          double sum_gy = 0, sum_gyx = 0;
          for (size_t j = 0; j < f; ++j) {
            double gy = grow[j] * vg.data[j];
            sum_gy += gy;
            sum_gyx += gy * xh[j];
          }
          double inv_f = 1.0 / static_cast<double>(f);
          Array& gx = tp.grad_buf(x);
          for (size_t j = 0; j < f; ++j) {
            double gy = grow[j] * vg.data[j];
            gx.data[r * f + j] +=
                inv_std.data[r] * (gy - inv_f * sum_gy - xh[j] * inv_f * sum_gyx);
          }
        }
      }
    };
  }
  return n;
}

Tape::Node Tape::tanh_act(Node x) {
  Array out = value(x);
  for (auto& v : out.data) v = std::tanh(v);
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      const Array& g = t.gradient(n);
      const Array& y = t.value(n);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) {
        gx.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
      }
    };
  }
  return n;
}

Tape::Node Tape::log_softmax(Node x) {
  const Array& vx = value(x);
  size_t f = vx.cols();
  if (f == 0) shape_error("log_softmax", vx);
  size_t t = vx.size() / f;
  Array out(vx.shape, 0.0);
  for (size_t r = 0; r < t; ++r) {
    const double* row = &vx.data[r * f];
    double mx = row[0];
    for (size_t j = 1; j < f; ++j) mx = std::max(mx, row[j]);
    double lse = 0;
    for (size_t j = 0; j < f; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    for (size_t j = 0; j < f; ++j) out.data[r * f + j] = row[j] - lse;
  }
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x, f, t](Tape& tp) {
      const Array& g = tp.gradient(n);
      const Array& y = tp.value(n);
      Array& gx = tp.grad_buf(x);
      for (size_t r = 0; r < t; ++r) {
        double gsum = 0;
        for (size_t j = 0; j < f; ++j) gsum += g.data[r * f + j];
        for (size_t j = 0; j < f; ++j) {
          gx.data[r * f + j] += g.data[r * f + j] - std::exp(y.data[r * f + j]) * gsum;
        }
      }
    };
  }
  return n;
}

Tape::Node Tape::cross_entropy_from_logprobs(Node logp, std::vector<int> targets,
                                             std::vector<double> mask) {
  const Array& vp = value(logp);
  size_t f = vp.cols();
  size_t t = vp.size() / f;
  if (targets.size() != t || mask.size() != t) {
    throw std::invalid_argument("cross_entropy_from_logprobs: " + std::to_string(targets.size()) +
                                " targets / " + std::to_string(mask.size()) + " mask for " +
                                std::to_string(t) + " rows");
  }
  double mass = std::accumulate(mask.begin(), mask.end(), 0.0);
  if (mass <= 0.0) throw std::invalid_argument("cross_entropy_from_logprobs: empty mask");
  double loss = 0;
  for (size_t r = 0; r < t; ++r) {
    int tg = targets[r];
    if (tg < 0 || static_cast<size_t>(tg) >= f) {
      throw std::invalid_argument("cross_entropy_from_logprobs: target out of range");
    }
    loss -= mask[r] * vp.data[r * f + static_cast<size_t>(tg)];
  }
  loss /= mass;
  bool ng = needs(logp);
  Node n = emit(Array::scalar(loss), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, logp, f, mass, targets = std::move(targets),
                     mask = std::move(mask)](Tape& tp) {
      double g = tp.gradient(n).data[0];
      Array& gp = tp.grad_buf(logp);
      for (size_t r = 0; r < targets.size(); ++r) {
        gp.data[r * f + static_cast<size_t>(targets[r])] -= g * mask[r] / mass;
      }
    };
  }
  return n;
}

Tape::Node Tape::gather_sum(Node logp, std::vector<int> targets, std::vector<double> mask) {
  const Array& vp = value(logp);
  size_t f = vp.cols();
  size_t t = vp.size() / f;
  if (targets.size() != t || mask.size() != t) {
    throw std::invalid_argument("gather_sum: targets/mask do not match rows");
  }
  double total = 0;
  for (size_t r = 0; r < t; ++r) {
    int tg = targets[r];
    if (tg < 0 || static_cast<size_t>(tg) >= f) {
      throw std::invalid_argument("gather_sum: target out of range");
    }
    total += mask[r] * vp.data[r * f + static_cast<size_t>(tg)];
  }
  bool ng = needs(logp);
  Node n = emit(Array::scalar(total), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, logp, f, targets = std::move(targets), mask = std::move(mask)](Tape& tp) {
      double g = tp.gradient(n).data[0];
      Array& gp = tp.grad_buf(logp);
      for (size_t r = 0; r < targets.size(); ++r) {
        gp.data[r * f + static_cast<size_t>(targets[r])] += g * mask[r];
      }
    };
  }
  return n;
}

Tape::Node Tape::concat_cols(Node a, Node b) {
  const Array& va = value(a);
  const Array& vb = value(b);
  if (va.shape.size() != 2 || vb.shape.size() != 2 || va.shape[0] != vb.shape[0]) {
    shape_error("concat_cols", va, vb);
  }
  size_t t = va.shape[0], ca = va.shape[1], cb = vb.shape[1];
  Array out({t, ca + cb}, 0.0);
  for (size_t r = 0; r < t; ++r) {
    std::copy_n(&va.data[r * ca], ca, &out.data[r * (ca + cb)]);
    std::copy_n(&vb.data[r * cb], cb, &out.data[r * (ca + cb) + ca]);
  }
  bool ng = needs(a) || needs(b);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, a, b, t, ca, cb](Tape& tp) {
      const Array& g = tp.gradient(n);
      for (size_t r = 0; r < t; ++r) {
        if (tp.needs(a)) {
          Array& ga = tp.grad_buf(a);
          for (size_t j = 0; j < ca; ++j) ga.data[r * ca + j] += g.data[r * (ca + cb) + j];
        }
        if (tp.needs(b)) {
          Array& gb = tp.grad_buf(b);
          for (size_t j = 0; j < cb; ++j) gb.data[r * cb + j] += g.data[r * (ca + cb) + ca + j];
        }
      }
    };
  }
  return n;
}

Tape::Node Tape::slice_cols(Node x, size_t start, size_t len) {
  const Array& vx = value(x);
  if (vx.shape.size() != 2 || start + len > vx.shape[1]) shape_error("slice_cols", vx);
  size_t t = vx.shape[0], c = vx.shape[1];
  Array out({t, len}, 0.0);
  for (size_t r = 0; r < t; ++r) std::copy_n(&vx.data[r * c + start], len, &out.data[r * len]);
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x, start, len, t, c](Tape& tp) {
      const Array& g = tp.gradient(n);
      Array& gx = tp.grad_buf(x);
      for (size_t r = 0; r < t; ++r)
        for (size_t j = 0; j < len; ++j) gx.data[r * c + start + j] += g.data[r * len + j];
    };
  }
  return n;
}

Tape::Node Tape::slice_rows(Node x, size_t start, size_t len) {
  const Array& vx = value(x);
  if (vx.shape.size() != 2 || start + len > vx.shape[0]) shape_error("slice_rows", vx);
  size_t c = vx.shape[1];
  Array out({len, c}, 0.0);
  std::copy_n(&vx.data[start * c], len * c, out.data.data());
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x, start, len, c](Tape& tp) {
      const Array& g = tp.gradient(n);
      Array& gx = tp.grad_buf(x);
      for (size_t i = 0; i < len * c; ++i) gx.data[start * c + i] += g.data[i];
    };
  }
  return n;
}

Tape::Node Tape::reshape_rows(Node x, size_t rows, size_t cols) {
  const Array& vx = value(x);
  if (vx.size() != rows * cols) shape_error("reshape_rows", vx);
  Array out({rows, cols}, 0.0);
  out.data = vx.data;
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      const Array& g = t.gradient(n);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    };
  }
  return n;
}

Tape::Node Tape::flatten(Node x) {
  const Array& vx = value(x);
  Array out({vx.size()}, 0.0);
  out.data = vx.data;
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      const Array& g = t.gradient(n);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    };
  }
  return n;
}

Tape::Node Tape::stack_scalars(const std::vector<Node>& parts) {
  Array out({parts.size()}, 0.0);
  bool ng = false;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Array& v = value(parts[i]);
    if (v.size() != 1) shape_error("stack_scalars", v);
    out.data[i] = v.data[0];
    ng = ng || needs(parts[i]);
  }
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, parts](Tape& tp) {
      const Array& g = tp.gradient(n);
      for (size_t i = 0; i < parts.size(); ++i) {
        if (tp.needs(parts[i])) tp.grad_buf(parts[i]).data[0] += g.data[i];
      }
    };
  }
  return n;
}

Tape::Node Tape::sum(Node x) {
  const Array& vx = value(x);
  double s = std::accumulate(vx.data.begin(), vx.data.end(), 0.0);
  bool ng = needs(x);
  Node n = emit(Array::scalar(s), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      double g = t.gradient(n).data[0];
      Array& gx = t.grad_buf(x);
      for (auto& v : gx.data) v += g;
    };
  }
  return n;
}

Tape::Node Tape::pick(Node vec, size_t index) {
  const Array& v = value(vec);
  if (index >= v.size()) shape_error("pick", v);
  bool ng = needs(vec);
  Node n = emit(Array::scalar(v.data[index]), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, vec, index](Tape& tp) {
      tp.grad_buf(vec).data[index] += tp.gradient(n).data[0];
    };
  }
  return n;
}

Tape::Node Tape::scale(Node x, double s) {
  Array out = value(x);
  for (auto& v : out.data) v *= s;
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x, s](Tape& t) {
      const Array& g = t.gradient(n);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * s;
    };
  }
  return n;
}

Tape::Node Tape::bias_add(Node x, Node bias) {
  const Array& vx = value(x);
  const Array& vb = value(bias);
  size_t f = vx.cols();
  if (vb.size() != f) shape_error("bias_add", vx, vb);
  size_t t = vx.size() / f;
  Array out = vx;
  for (size_t r = 0; r < t; ++r)
    for (size_t j = 0; j < f; ++j) out.data[r * f + j] += vb.data[j];
  bool ng = needs(x) || needs(bias);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x, bias, t, f](Tape& tp) {
      const Array& g = tp.gradient(n);
      if (tp.needs(x)) {
        Array& gx = tp.grad_buf(x);
        for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
      }
      if (tp.needs(bias)) {
        Array& gb = tp.grad_buf(bias);
        for (size_t r = 0; r < t; ++r)
          for (size_t j = 0; j < f; ++j) gb.data[j] += g.data[r * f + j];
      }
    };
  }
  return n;
}

Tape::Node Tape::exp_act(Node x) {
  Array out = value(x);
  for (auto& v : out.data) v = std::exp(v);
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      const Array& g = t.gradient(n);
      const Array& y = t.value(n);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * y.data[i];
    };
  }
  return n;
}

Tape::Node Tape::log_act(Node x) {
  Array out = value(x);
  for (auto& v : out.data) v = std::log(v);
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      const Array& g = t.gradient(n);
      const Array& vx = t.value(x);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] / vx.data[i];
    };
  }
  return n;
}

Tape::Node Tape::add_constant(Node x, Array offset) {
  const Array& vx = value(x);
  if (vx.shape != offset.shape) shape_error("add_constant", vx, offset);
  Array out = vx;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += offset.data[i];
  bool ng = needs(x);
  Node n = emit(std::move(out), ng, nullptr);
  if (ng) {
    recs_[n].back = [n, x](Tape& t) {
      const Array& g = t.gradient(n);
      Array& gx = t.grad_buf(x);
      for (size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    };
  }
  return n;
}

void Tape::backward(Node loss) {
  if (loss < 0 || static_cast<size_t>(loss) >= recs_.size()) {
    throw std::invalid_argument("backward: unknown node");
  }
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + value(loss).shape_str());
  }
  grad_buf(loss).data[0] = 1.0;
  for (Node n = loss; n >= 0; --n) {
    if (!recs_[n].needs_grad || !recs_[n].back) continue;
    bool any = false;
    for (double g : recs_[n].grad.data) {
      if (g != 0.0) {
        any = true;
        break;
      }
    }
    if (any) recs_[n].back(*this);
  }
}

}  // namespace vsteer::ad
