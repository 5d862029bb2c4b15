#include "bisvp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace bisvp::num {

namespace {

using detail::make_result;
using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Node* parent(Node& self, std::size_t i) { return self.parents[i].get(); }
bool wants(Node& self, std::size_t i) { return i < self.parents.size() && self.parents[i]->requires_grad; }

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

// Number of leading repetitions of `b` inside `a` under leading-batch broadcast.
std::size_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    shape_fail(op, "cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  }
  const std::size_t inner = b.numel();
  return inner == 0 ? 0 : a.numel() / inner;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node* p = parent(self, 0);
    double* gp = p->grad_buffer();
    for (std::size_t i = 0; i < self.data.size(); ++i) gp[i] += self.grad[i] * deriv(p->data[i], self.data[i]);
  }, name);
}

// (outer, axis_len, inner) split of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "add");
  const std::size_t inner = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = da[o * inner + i] + db[i];
  return make_result(a.shape(), std::move(out), {a, b}, [outer, inner](Node& self) {
    if (wants(self, 0)) {
      double* g = parent(self, 0)->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      double* g = parent(self, 1)->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "sub");
  const std::size_t inner = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = da[o * inner + i] - db[i];
  return make_result(a.shape(), std::move(out), {a, b}, [outer, inner](Node& self) {
    if (wants(self, 0)) {
      double* g = parent(self, 0)->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      double* g = parent(self, 1)->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] -= self.grad[o * inner + i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "mul");
  const std::size_t inner = b.numel();
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(da.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = da[o * inner + i] * db[i];
  return make_result(a.shape(), std::move(out), {a, b}, [outer, inner](Node& self) {
    Node* pa = parent(self, 0);
    Node* pb = parent(self, 1);
    if (pa->requires_grad) {
      double* g = pa->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += self.grad[o * inner + i] * pb->data[i];
    }
    if (pb->requires_grad) {
      double* g = pb->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i] * pa->data[o * inner + i];
    }
  }, "mul");
}

Tensor scale(const Tensor& a, double factor) {
  auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  }, "scale");
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) shape_fail("add_n", "no terms");
  const Shape& s = terms[0].shape();
  std::vector<double> out(terms[0].numel(), 0.0);
  for (const Tensor& t : terms) {
    if (t.shape() != s) shape_fail("add_n", "mismatched shapes " + shape_str(s) + " vs " + shape_str(t.shape()));
    auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return make_result(s, std::move(out), std::vector<Tensor>(terms.begin(), terms.end()), [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      double* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  }, "add_n");
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", stable_softplus, [](double in, double) { return stable_sigmoid(in); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto m = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(n * m));
  MutMap(out.data(), n, m).noalias() = ConstMap(a.data().data(), n, k) * ConstMap(b.data().data(), k, m);
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, [n, k, m](Node& self) {
    ConstMap g(self.grad.data(), n, m);
    Node* pa = parent(self, 0);
    Node* pb = parent(self, 1);
    if (pa->requires_grad) MutMap(pa->grad_buffer(), n, k).noalias() += g * ConstMap(pb->data.data(), k, m).transpose();
    if (pb->requires_grad) MutMap(pb->grad_buffer(), k, m).noalias() += ConstMap(pa->data.data(), n, k).transpose() * g;
  }, "matmul");
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) shape_fail("transpose", "expects rank 2, got " + shape_str(a.shape()));
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  std::vector<double> out(a.numel());
  MutMap(out.data(), m, n) = ConstMap(a.data().data(), n, m).transpose();
  return make_result({a.dim(1), a.dim(0)}, std::move(out), {a}, [n, m](Node& self) {
    MutMap(parent(self, 0)->grad_buffer(), n, m) += ConstMap(self.grad.data(), m, n).transpose();
  }, "transpose");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) shape_fail("linear", "weight must be [out,in], got " + shape_str(weight.shape()));
  const bool vec = x.rank() == 1;
  if (!vec && x.rank() != 2) shape_fail("linear", "input must be [in] or [n,in], got " + shape_str(x.shape()));
  const std::size_t in_dim = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  if (x.shape().back() != in_dim) {
    shape_fail("linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    shape_fail("linear", "bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const auto n = static_cast<Eigen::Index>(vec ? 1 : x.dim(0));
  const auto in = static_cast<Eigen::Index>(in_dim);
  const auto out_n = static_cast<Eigen::Index>(out_dim);
  std::vector<double> out(static_cast<std::size_t>(n * out_n));
  MutMap y(out.data(), n, out_n);
  y.noalias() = ConstMap(x.data().data(), n, in) * ConstMap(weight.data().data(), out_n, in).transpose();
  if (has_bias) {
    auto b = bias.data();
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < out_n; ++c) y(r, c) += b[static_cast<std::size_t>(c)];
  }
  Shape shape = vec ? Shape{out_dim} : Shape{x.dim(0), out_dim};
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), std::move(inputs), [n, in, out_n](Node& self) {
    ConstMap g(self.grad.data(), n, out_n);
    Node* px = parent(self, 0);
    Node* pw = parent(self, 1);
    if (px->requires_grad) MutMap(px->grad_buffer(), n, in).noalias() += g * ConstMap(pw->data.data(), out_n, in);
    if (pw->requires_grad) MutMap(pw->grad_buffer(), out_n, in).noalias() += g.transpose() * ConstMap(px->data.data(), n, in);
    if (wants(self, 2)) {
      double* gb = parent(self, 2)->grad_buffer();
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < out_n; ++c) gb[c] += g(r, c);
    }
  }, "linear");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  auto d = x.data();
  return make_result(std::move(shape), std::vector<double>(d.begin(), d.end()), {x}, [](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  }, "reshape");
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) shape_fail("concat", "axis out of range for " + shape_str(out_shape));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out_shape.size()) shape_fail("concat", "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) shape_fail("concat", shape_str(s) + " vs " + shape_str(out_shape));
    }
    total += s[axis];
  }
  out_shape[axis] = total;
  const AxisSplit sp = split_axis(out_shape, axis);
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) chunk[p] = parts[p].shape()[axis] * sp.inner;
  std::vector<double> out(shape_numel(out_shape));
  std::size_t pos = 0;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto d = parts[p].data();
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * chunk[p]), chunk[p], out.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += chunk[p];
    }
  }
  return make_result(std::move(out_shape), std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [chunk, outer = sp.outer](Node& self) {
    std::size_t pos = 0;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t p = 0; p < chunk.size(); ++p) {
        if (self.parents[p]->requires_grad) {
          double* g = self.parents[p]->grad_buffer() + o * chunk[p];
          for (std::size_t i = 0; i < chunk[p]; ++i) g[i] += self.grad[pos + i];
        }
        pos += chunk[p];
      }
    }
  }, "concat");
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + length > s[axis] || length == 0) {
    shape_fail("slice", "range [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                            std::to_string(axis) + " of " + shape_str(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  auto d = x.data();
  const std::size_t src_chunk = sp.len * sp.inner;
  const std::size_t dst_chunk = length * sp.inner;
  const std::size_t offset = start * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * src_chunk + offset), dst_chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * dst_chunk));
  }
  return make_result(std::move(out_shape), std::move(out), {x}, [=, outer = sp.outer](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < dst_chunk; ++i) g[o * src_chunk + offset + i] += self.grad[o * dst_chunk + i];
  }, "slice");
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) shape_fail("embedding", "table must be [vocab,dim], got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0);
  const std::size_t dim = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * dim);
  auto d = table.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= vocab) {
      shape_fail("embedding", "id " + std::to_string(rows[r]) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(rows[r]) * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return make_result({rows.size(), dim}, std::move(out), {table}, [rows, dim](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < dim; ++j) g[static_cast<std::size_t>(rows[r]) * dim + j] += self.grad[r * dim + j];
  }, "embedding");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [](Node& self) {
    Node* p = parent(self, 0);
    double* g = p->grad_buffer();
    for (std::size_t i = 0; i < p->data.size(); ++i) g[i] += self.grad[0];
  }, "sum");
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) shape_fail("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) shape_fail("mean_axis", "axis out of range for " + shape_str(s));
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  auto d = x.data();
  const double inv = 1.0 / static_cast<double>(sp.len);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += d[(o * sp.len + l) * sp.inner + i] * inv;
  return make_result(std::move(out_shape), std::move(out), {x}, [sp, inv](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i) g[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
  }, "mean_axis");
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) shape_fail("softmax", "scalar input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto d = x.data();
  std::vector<double> out(d.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = d.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
    }
  }, "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) shape_fail("layer_norm", "scalar input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != cols || !beta.defined() || beta.numel() != cols)) {
    shape_fail("layer_norm", "gamma/beta must both have " + std::to_string(cols) + " elements");
  }
  auto d = x.data();
  auto xhat = std::make_shared<std::vector<double>>(d.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(d.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = d.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mu) * inv;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = affine ? h * gamma.data()[c] + beta.data()[c] : h;
    }
  }
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_result(x.shape(), std::move(out), std::move(inputs), [rows, cols, affine, xhat, inv_std](Node& self) {
    Node* px = parent(self, 0);
    const double* gam = affine ? parent(self, 1)->data.data() : nullptr;
    std::vector<double> gh(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = self.grad.data() + r * cols;
      const double* h = xhat->data() + r * cols;
      if (px->requires_grad) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          gh[c] = gam ? gy[c] * gam[c] : gy[c];
          m1 += gh[c];
          m2 += gh[c] * h[c];
        }
        m1 /= static_cast<double>(cols);
        m2 /= static_cast<double>(cols);
        double* gx = px->grad_buffer() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gx[c] += (*inv_std)[r] * (gh[c] - m1 - h[c] * m2);
      }
      if (affine && wants(self, 1)) {
        double* gg = parent(self, 1)->grad_buffer();
        for (std::size_t c = 0; c < cols; ++c) gg[c] += gy[c] * h[c];
      }
      if (affine && wants(self, 2)) {
        double* gb = parent(self, 2)->grad_buffer();
        for (std::size_t c = 0; c < cols; ++c) gb[c] += gy[c];
      }
    }
  }, "layer_norm");
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) shape_fail("conv2d", "stride must be >= 1 and padding >= 0");
  const int C = static_cast<int>(x.dim(0)), H = static_cast<int>(x.dim(1)), W = static_cast<int>(x.dim(2));
  const int O = static_cast<int>(weight.dim(0)), K = static_cast<int>(weight.dim(2));
  if (H + 2 * padding < K || W + 2 * padding < K) shape_fail("conv2d", "kernel larger than padded input");
  const int Ho = (H + 2 * padding - K) / stride + 1;
  const int Wo = (W + 2 * padding - K) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != static_cast<std::size_t>(O)) shape_fail("conv2d", "bias size mismatch");
  const Eigen::Index rows = static_cast<Eigen::Index>(C) * K * K;
  const Eigen::Index pix = static_cast<Eigen::Index>(Ho) * Wo;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows * pix), 0.0);
  auto xd = x.data();
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < K; ++ki)
      for (int kj = 0; kj < K; ++kj) {
        double* row = cols->data() + ((static_cast<std::size_t>(c) * K + ki) * K + kj) * static_cast<std::size_t>(pix);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - padding + kj;
            if (ix < 0 || ix >= W) continue;
            row[oy * Wo + ox] = xd[(static_cast<std::size_t>(c) * H + iy) * W + ix];
          }
        }
      }

  std::vector<double> out(static_cast<std::size_t>(O * pix));
  MutMap y(out.data(), O, pix);
  y.noalias() = ConstMap(weight.data().data(), O, rows) * ConstMap(cols->data(), rows, pix);
  if (has_bias) {
    auto b = bias.data();
    for (int o = 0; o < O; ++o) y.row(o).array() += b[static_cast<std::size_t>(o)];
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({static_cast<std::size_t>(O), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)},
                     std::move(out), std::move(inputs),
                     [=](Node& self) {
    ConstMap g(self.grad.data(), O, pix);
    Node* px = parent(self, 0);
    Node* pw = parent(self, 1);
    if (pw->requires_grad) MutMap(pw->grad_buffer(), O, rows).noalias() += g * ConstMap(cols->data(), rows, pix).transpose();
    if (wants(self, 2)) {
      double* gb = parent(self, 2)->grad_buffer();
      for (int o = 0; o < O; ++o) gb[o] += g.row(o).sum();
    }
    if (px->requires_grad) {
      RowMat gcols(rows, pix);
      gcols.noalias() = ConstMap(pw->data.data(), O, rows).transpose() * g;
      double* gx = px->grad_buffer();
      for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < K; ++ki)
          for (int kj = 0; kj < K; ++kj) {
            const double* row = gcols.data() + ((static_cast<std::size_t>(c) * K + ki) * K + kj) * static_cast<std::size_t>(pix);
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride - padding + ki;
              if (iy < 0 || iy >= H) continue;
              for (int ox = 0; ox < Wo; ++ox) {
                const int ix = ox * stride - padding + kj;
                if (ix < 0 || ix >= W) continue;
                gx[(static_cast<std::size_t>(c) * H + iy) * W + ix] += row[oy * Wo + ox];
              }
            }
          }
    }
  }, "conv2d");
}

Tensor avg_pool2d(const Tensor& x, int kernel) {
  if (x.rank() != 3 || kernel < 1) shape_fail("avg_pool2d", "expects [C,H,W] and kernel >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), k = static_cast<std::size_t>(kernel);
  if (H % k || W % k) shape_fail("avg_pool2d", "spatial size not divisible by kernel");
  const std::size_t Ho = H / k, Wo = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  auto d = x.data();
  std::vector<double> out(C * Ho * Wo, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out[(c * Ho + y / k) * Wo + xx / k] += d[(c * H + y) * W + xx] * inv;
  return make_result({C, Ho, Wo}, std::move(out), {x}, [=](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) g[(c * H + y) * W + xx] += self.grad[(c * Ho + y / k) * Wo + xx / k] * inv;
  }, "avg_pool2d");
}

Tensor resize_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3 || out_h == 0 || out_w == 0) shape_fail("resize_nearest", "expects [C,H,W] and positive size");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<std::size_t> src(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t xx = 0; xx < out_w; ++xx) src[y * out_w + xx] = (y * H / out_h) * W + (xx * W / out_w);
  auto d = x.data();
  std::vector<double> out(C * out_h * out_w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < src.size(); ++i) out[c * src.size() + i] = d[c * H * W + src[i]];
  return make_result({C, out_h, out_w}, std::move(out), {x}, [src, C, HW = H * W](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < src.size(); ++i) g[c * HW + src[i]] += self.grad[c * src.size() + i];
  }, "resize_nearest");
}

namespace {

// Bilinear taps of one sample coordinate clamped into [0, n-1].
struct Taps {
  std::size_t lo, hi;
  double w_hi;
};

Taps bilinear_taps(double u, std::size_t n) {
  const double maxv = static_cast<double>(n - 1);
  u = std::clamp(u, 0.0, maxv);
  const auto lo = static_cast<std::size_t>(std::floor(u));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return {lo, hi, u - static_cast<double>(lo)};
}

// Generic separable sampler: each output pixel reads up to four weighted
// taps from the same channel plane.
struct Sample4 {
  std::size_t idx[4];
  double w[4];
};

Tensor sample_planes(const Tensor& x, std::vector<Sample4> samples, Shape out_shape, bool channels_last,
                     const char* name) {
  const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  const std::size_t n = samples.size();
  auto d = x.data();
  std::vector<double> out(C * n, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double* plane = d.data() + c * HW;
    for (std::size_t i = 0; i < n; ++i) {
      const Sample4& s = samples[i];
      const double v = s.w[0] * plane[s.idx[0]] + s.w[1] * plane[s.idx[1]] + s.w[2] * plane[s.idx[2]] + s.w[3] * plane[s.idx[3]];
      out[channels_last ? i * C + c : c * n + i] = v;
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [samples = std::move(samples), C, HW, channels_last](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    const std::size_t n = samples.size();
    for (std::size_t c = 0; c < C; ++c) {
      double* plane = g + c * HW;
      for (std::size_t i = 0; i < n; ++i) {
        const double gv = self.grad[channels_last ? i * C + c : c * n + i];
        const Sample4& s = samples[i];
        for (int t = 0; t < 4; ++t) plane[s.idx[t]] += s.w[t] * gv;
      }
    }
  }, name);
}

Sample4 bilinear_sample(double u, double v, std::size_t H, std::size_t W) {
  const Taps tx = bilinear_taps(u, W);
  const Taps ty = bilinear_taps(v, H);
  Sample4 s{};
  s.idx[0] = ty.lo * W + tx.lo;
  s.idx[1] = ty.lo * W + tx.hi;
  s.idx[2] = ty.hi * W + tx.lo;
  s.idx[3] = ty.hi * W + tx.hi;
  s.w[0] = (1 - ty.w_hi) * (1 - tx.w_hi);
  s.w[1] = (1 - ty.w_hi) * tx.w_hi;
  s.w[2] = ty.w_hi * (1 - tx.w_hi);
  s.w[3] = ty.w_hi * tx.w_hi;
  return s;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3 || out_h == 0 || out_w == 0) shape_fail("resize_bilinear", "expects [C,H,W] and positive size");
  const std::size_t H = x.dim(1), W = x.dim(2);
  std::vector<Sample4> samples;
  samples.reserve(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double v = (static_cast<double>(y) + 0.5) * static_cast<double>(H) / static_cast<double>(out_h) - 0.5;
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const double u = (static_cast<double>(xx) + 0.5) * static_cast<double>(W) / static_cast<double>(out_w) - 0.5;
      samples.push_back(bilinear_sample(u, v, H, W));
    }
  }
  return sample_planes(x, std::move(samples), {x.dim(0), out_h, out_w}, false, "resize_bilinear");
}

Tensor roi_crop(const Tensor& map, std::span<const double, 4> region, double stride, int out_side, Sampling mode) {
  if (map.rank() != 3) shape_fail("roi_crop", "expects [C,H,W], got " + shape_str(map.shape()));
  const double x0 = region[0], y0 = region[1], x1 = region[2], y1 = region[3];
  if (!(x1 > x0) || !(y1 > y0) || out_side < 1 || !(stride > 0)) {
    shape_fail("roi_crop", "degenerate region or sampling grid");
  }
  const std::size_t H = map.dim(1), W = map.dim(2);
  const auto n = static_cast<std::size_t>(out_side);
  std::vector<Sample4> samples;
  samples.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double py = y0 + (static_cast<double>(i) + 0.5) * (y1 - y0) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double px = x0 + (static_cast<double>(j) + 0.5) * (x1 - x0) / static_cast<double>(n);
      const double u = px / stride - 0.5;
      const double v = py / stride - 0.5;
      if (mode == Sampling::bilinear) {
        samples.push_back(bilinear_sample(u, v, H, W));
      } else {
        const auto cx = static_cast<std::size_t>(std::clamp(std::floor(u + 0.5), 0.0, static_cast<double>(W - 1)));
        const auto cy = static_cast<std::size_t>(std::clamp(std::floor(v + 0.5), 0.0, static_cast<double>(H - 1)));
        samples.push_back(Sample4{{cy * W + cx, cy * W + cx, cy * W + cx, cy * W + cx}, {1.0, 0.0, 0.0, 0.0}});
      }
    }
  }
  return sample_planes(map, std::move(samples), {n * n, map.dim(0)}, true, "roi_crop");
}

Tensor gaussian_log_mask(const Tensor& mu, const Tensor& sigma, int side) {
  if (mu.numel() != 2 || sigma.numel() != 1 || side < 1) shape_fail("gaussian_log_mask", "mu must be [2], sigma [1]");
  const double mx = mu.data()[0], my = mu.data()[1], s = sigma.data()[0];
  if (!(s > 0)) throw NonFiniteError("gaussian_log_mask: sigma must be positive");
  const auto n = static_cast<std::size_t>(side);
  std::vector<double> out(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - mx;
      const double dy = static_cast<double>(r) + 0.5 - my;
      out[r * n + c] = -(dx * dx + dy * dy) / (2.0 * s * s);
    }
  return make_result({n * n}, std::move(out), {mu, sigma}, [n, mx, my, s](Node& self) {
    double gmx = 0.0, gmy = 0.0, gs = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const double dx = static_cast<double>(c) + 0.5 - mx;
        const double dy = static_cast<double>(r) + 0.5 - my;
        const double g = self.grad[r * n + c];
        gmx += g * dx / (s * s);
        gmy += g * dy / (s * s);
        gs += g * (dx * dx + dy * dy) / (s * s * s);
      }
    if (wants(self, 0)) {
      double* gm = parent(self, 0)->grad_buffer();
      gm[0] += gmx;
      gm[1] += gmy;
    }
    if (wants(self, 1)) parent(self, 1)->grad_buffer()[0] += gs;
  }, "gaussian_log_mask");
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 1 && logits.rank() != 2) shape_fail("cross_entropy", "logits must be [V] or [n,V]");
  const std::size_t V = logits.shape().back();
  const std::size_t rows = logits.numel() / V;
  if (targets.size() != rows) shape_fail("cross_entropy", "one target per row required");
  std::vector<int> tgt(targets.begin(), targets.end());
  auto d = logits.data();
  auto probs = std::make_shared<std::vector<double>>(d.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= V) shape_fail("cross_entropy", "target out of range");
    const double* in = d.data() + r * V;
    const double mx = *std::max_element(in, in + V);
    double z = 0.0;
    for (std::size_t c = 0; c < V; ++c) z += ((*probs)[r * V + c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < V; ++c) (*probs)[r * V + c] /= z;
    loss += mx + std::log(z) - in[tgt[r]];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  return make_result({}, {loss * inv}, {logits}, [probs, tgt, V, inv](Node& self) {
    double* g = parent(self, 0)->grad_buffer();
    const double s = self.grad[0] * inv;
    for (std::size_t r = 0; r < tgt.size(); ++r) {
      for (std::size_t c = 0; c < V; ++c) g[r * V + c] += s * (*probs)[r * V + c];
      g[r * V + static_cast<std::size_t>(tgt[r])] -= s;
    }
  }, "cross_entropy");
}

Tensor l1_loss(const Tensor& pred, std::span<const double> target) {
  if (pred.numel() != target.size() || target.empty()) shape_fail("l1_loss", "target size mismatch");
  std::vector<double> t(target.begin(), target.end());
  auto d = pred.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) loss += std::abs(d[i] - t[i]);
  const double inv = 1.0 / static_cast<double>(t.size());
  return make_result({}, {loss * inv}, {pred}, [t, inv](Node& self) {
    Node* p = parent(self, 0);
    double* g = p->grad_buffer();
    const double s = self.grad[0] * inv;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double diff = p->data[i] - t[i];
      g[i] += diff > 0 ? s : (diff < 0 ? -s : 0.0);
    }
  }, "l1_loss");
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> target) {
  if (logits.numel() != target.size() || target.empty()) shape_fail("bce_with_logits", "target size mismatch");
  std::vector<double> t(target.begin(), target.end());
  auto d = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) loss += stable_softplus(d[i]) - d[i] * t[i];
  const double inv = 1.0 / static_cast<double>(t.size());
  return make_result({}, {loss * inv}, {logits}, [t, inv](Node& self) {
    Node* p = parent(self, 0);
    double* g = p->grad_buffer();
    const double s = self.grad[0] * inv;
    for (std::size_t i = 0; i < t.size(); ++i) g[i] += s * (stable_sigmoid(p->data[i]) - t[i]);
  }, "bce_with_logits");
}

}  // namespace bisvp::num
