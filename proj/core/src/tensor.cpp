#include "mtdoc/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "mtdoc/error.hpp"

namespace mtdoc {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer() {
    if (grad.empty() && !data.empty()) {
      grad.assign(data.size(), 0.0);
    }
    return grad;
  }
};

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

}  // namespace detail

namespace {

thread_local int no_grad_depth = 0;

using detail::Access;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) {
    throw ContractError("use of an undefined tensor");
  }
  return Access::node(t);
}

// Builds the output node. Parents are recorded only when a gradient can flow.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn, const char* op) {
  check_finite(data, op);
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  for (const auto& in : inputs) {
    if (node_of(in)->requires_grad && no_grad_depth == 0) {
      out->requires_grad = true;
    }
  }
  if (out->requires_grad) {
    for (const auto& in : inputs) {
      out->parents.push_back(node_of(in));
    }
    out->backward = std::move(backward_fn);
  }
  return Access::wrap(std::move(out));
}

Tensor make_result_n(Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                     std::function<void(Node&)> backward_fn, const char* op) {
  check_finite(data, op);
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  for (const auto& in : inputs) {
    if (node_of(in)->requires_grad && no_grad_depth == 0) {
      out->requires_grad = true;
    }
  }
  if (out->requires_grad) {
    for (const auto& in : inputs) {
      out->parents.push_back(node_of(in));
    }
    out->backward = std::move(backward_fn);
  }
  return Access::wrap(std::move(out));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) {
    n *= e;
  }
  return n;
}

void check_finite(std::span<const double> values, const std::string& what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by " + what);
    }
  }
}

// -------------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
  auto n = std::make_shared<Node>();
  n->data.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
  }
  check_finite(data, "Tensor::from_data");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
std::size_t Tensor::numel() const { return node_of(*this)->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node_of(*this)->data; }
std::span<double> Tensor::mutable_data() { return node_of(*this)->data; }

double Tensor::item() const {
  const auto& d = node_of(*this)->data;
  if (d.size() != 1) {
    throw DimensionError("item() on a tensor of shape " + shape_string(shape()));
  }
  return d[0];
}

double Tensor::at(std::size_t row, std::size_t col) const { return data()[row * cols() + col]; }

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_of(*this)->requires_grad = flag; }
bool Tensor::has_grad() const { return !node_of(*this)->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_of(*this)->grad; }

std::span<double> Tensor::mutable_grad() { return node_of(*this)->grad_buffer(); }

void Tensor::zero_grad() {
  auto& n = *node_of(*this);
  n.grad.assign(n.data.size(), 0.0);
}

void Tensor::clear_grad() {
  auto& n = *node_of(*this);
  n.grad.clear();
  n.grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = shape();
  n->data = node_of(*this)->data;
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------- arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = da[i] + db[i];
  }
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = da[i] - db[i];
  }
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = da[i] * db[i];
  }
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  }, "scale");
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias of " + shape_string(bias.shape()) + " for " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto db = bias.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += db[c];
  }
  return make_result(x.shape(), std::move(out), {x, bias}, [m, n](Node& self) {
    auto& px = self.parents[0];
    auto& pb = self.parents[1];
    if (px->requires_grad) {
      auto g = px->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
      }
    }
  }, "add_bias");
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) {
    throw ContractError("add_n: no terms");
  }
  for (const auto& t : terms) {
    require_same_shape(terms[0], t, "add_n");
  }
  std::vector<double> out(terms[0].numel(), 0.0);
  for (const auto& t : terms) {
    const auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return make_result_n(terms[0].shape(), std::move(out), terms, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  }, "add_n");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMat(out.data(), m, n).noalias() = ConstMat(a.data().data(), m, k) * ConstMat(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    ConstMat dc(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MutMat(pa->grad_buffer().data(), m, k).noalias() += dc * ConstMat(pb->data.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MutMat(pb->grad_buffer().data(), k, n).noalias() += ConstMat(pa->data.data(), m, k).transpose() * dc;
    }
  }, "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  MutMat(out.data(), m, n).noalias() =
      ConstMat(a.data().data(), m, k) * ConstMat(b.data().data(), n, k).transpose();
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    ConstMat dc(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MutMat(pa->grad_buffer().data(), m, k).noalias() += dc * ConstMat(pb->data.data(), n, k);
    }
    if (pb->requires_grad) {
      MutMat(pb->grad_buffer().data(), n, k).noalias() += dc.transpose() * ConstMat(pa->data.data(), m, k);
    }
  }, "matmul_nt");
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * dx[i] * (1.0 + std::erf(dx[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    auto g = p->grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = p->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  }, "gelu");
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  }, "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ------------------------------------------------------------- normalization

Tensor softmax(const Tensor& x, int axis) {
  const auto& shape = x.shape();
  const int rank = static_cast<int>(shape.size());
  if (rank == 0) {
    throw DimensionError("softmax of a scalar");
  }
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[i];
  for (int i = ax + 1; i < rank; ++i) inner *= shape[i];
  const std::size_t len = shape[ax];

  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = in[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result(shape, std::move(out), {x}, [outer, inner, len](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const auto& y = self.data;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t at = base + j * inner;
          g[at] += y[at] * (self.grad[at] - dot);
        }
      }
    }
  }, "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) {
    throw DimensionError("layer_norm of a scalar");
  }
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(in.size());
  std::vector<double> xhat(in.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    if (pg->requires_grad) {
      auto g = pg->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c] * xhat[r * d + c];
    }
    if (pb->requires_grad) {
      auto g = pb->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
    }
    if (px->requires_grad) {
      auto g = px->grad_buffer();
      const auto& gain_v = pg->data;
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double dh = self.grad[r * d + c] * gain_v[c];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * d + c];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t c = 0; c < d; ++c) {
          const double dh = self.grad[r * d + c] * gain_v[c];
          g[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
        }
      }
    }
  }, "layer_norm");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, Reduction reduction) {
  require_rank2(logits, "cross_entropy");
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  for (auto t : targets) {
    if (t >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0," +
                       std::to_string(c) + ")");
    }
  }
  const auto in = logits.data();
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = in.data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[r * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return make_result({}, {total * factor}, {logits},
                     [n, c, factor, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    const double s = self.grad[0] * factor;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        g[r * c + j] += s * (probs[r * c + j] - (j == tgt[r] ? 1.0 : 0.0));
      }
    }
  }, "cross_entropy");
}

// ------------------------------------------------------------------- shaping

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_rank2(table, "gather_rows");
  const std::size_t v = table.rows();
  const std::size_t d = table.cols();
  if (indices.empty()) {
    throw DimensionError("gather_rows: no indices");
  }
  std::vector<double> out(indices.size() * d);
  const auto src = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v) {
      throw IndexError("gather_rows: index " + std::to_string(indices[i]) + " outside table of " +
                       std::to_string(v) + " rows");
    }
    std::copy_n(src.data() + indices[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({indices.size(), d}, std::move(out), {table}, [d, idx = std::move(idx)](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = g.data() + idx[i] * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  }, "gather_rows");
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ContractError("concat_rows: no parts");
  }
  const std::size_t d = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: column extents differ");
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_n({total, d}, std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->data.size();
      if (p->requires_grad) {
        auto g = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  }, "concat_rows");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ContractError("concat_cols: no parts");
  }
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row extents differ");
    }
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto src = p.data();
    for (std::size_t r = 0; r < m; ++r) std::copy_n(src.data() + r * w, w, out.data() + r * total + offset);
    offset += w;
  }
  return make_result_n({m, total}, std::move(out), parts, [m, total](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t w = p->shape[1];
      if (p->requires_grad) {
        auto g = p->grad_buffer();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * total + offset + c];
      }
      offset += w;
    }
  }, "concat_cols");
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") for " + shape_string(x.shape()));
  }
  const std::size_t d = x.cols();
  std::vector<double> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  return make_result({end - begin, d}, std::move(out), {x}, [begin, d](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  }, "slice_rows");
}

// ----------------------------------------------------------------- attention

AttentionMask AttentionMask::full(std::size_t queries, std::size_t keys) {
  return {queries, keys, std::vector<std::uint8_t>(queries * keys, 1)};
}

AttentionMask AttentionMask::key_padding(std::size_t queries, std::span<const std::uint8_t> key_valid) {
  AttentionMask m{queries, key_valid.size(), {}};
  m.allowed.resize(queries * key_valid.size());
  for (std::size_t q = 0; q < queries; ++q)
    std::copy(key_valid.begin(), key_valid.end(), m.allowed.begin() + q * key_valid.size());
  return m;
}

AttentionMask AttentionMask::causal(std::size_t n, std::span<const std::uint8_t> key_valid) {
  if (!key_valid.empty() && key_valid.size() != n) {
    throw DimensionError("AttentionMask::causal: key_valid length mismatch");
  }
  AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k <= q; ++k) m.allowed[q * n + k] = key_valid.empty() ? 1 : key_valid[k];
  return m;
}

std::vector<std::size_t> AttentionMask::fully_masked_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t q = 0; q < queries; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < keys && !any; ++k) any = allowed[q * keys + k] != 0;
    if (!any) rows.push_back(q);
  }
  return rows;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                            std::size_t heads, AttentionProbe* probe) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != nk) {
    throw DimensionError("attention: q/k/v extents disagree");
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (mask.queries != nq || mask.keys != nk) {
    throw DimensionError("attention: mask is " + std::to_string(mask.queries) + "x" +
                         std::to_string(mask.keys) + ", scores are " + std::to_string(nq) + "x" +
                         std::to_string(nk));
  }
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> probs(heads * nq * nk);
  std::vector<double> out(nq * d);
  RowMat scores(nq, nk);
  for (std::size_t h = 0; h < heads; ++h) {
    ConstStrided qh(q.data().data() + h * dh, nq, dh, Eigen::OuterStride<>(d));
    ConstStrided kh(k.data().data() + h * dh, nk, dh, Eigen::OuterStride<>(d));
    ConstStrided vh(v.data().data() + h * dh, nk, dh, Eigen::OuterStride<>(d));
    scores.noalias() = qh * kh.transpose();
    MutMat p(probs.data() + h * nq * nk, nq, nk);
    for (std::size_t i = 0; i < nq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        const double val = mask.allows(i, j) ? scores(i, j) * s : kMaskBias;
        scores(i, j) = val;
        mx = std::max(mx, val);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        const double e = std::exp(scores(i, j) - mx);
        p(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < nk; ++j) p(i, j) /= z;
    }
    MutStrided(out.data() + h * dh, nq, dh, Eigen::OuterStride<>(d)).noalias() = p * vh;
  }
  if (probe != nullptr) {
    probe->heads = heads;
    probe->queries = nq;
    probe->keys = nk;
    probe->weights = probs;
    probe->degenerate_rows = mask.fully_masked_rows();
  }
  return make_result({nq, d}, std::move(out), {q, k, v},
                     [nq, nk, d, heads, dh, s, mask, probs = std::move(probs)](Node& self) {
    auto& pq = self.parents[0];
    auto& pk = self.parents[1];
    auto& pv = self.parents[2];
    RowMat dp(nq, nk);
    for (std::size_t h = 0; h < heads; ++h) {
      ConstMat p(probs.data() + h * nq * nk, nq, nk);
      ConstStrided dout(self.grad.data() + h * dh, nq, dh, Eigen::OuterStride<>(d));
      ConstStrided vh(pv->data.data() + h * dh, nk, dh, Eigen::OuterStride<>(d));
      if (pv->requires_grad) {
        MutStrided(pv->grad_buffer().data() + h * dh, nk, dh, Eigen::OuterStride<>(d)).noalias() +=
            p.transpose() * dout;
      }
      if (!pq->requires_grad && !pk->requires_grad) continue;
      dp.noalias() = dout * vh.transpose();
      // Softmax backward, folded with the 1/sqrt(d_h) scale.
      for (std::size_t i = 0; i < nq; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < nk; ++j) dot += dp(i, j) * p(i, j);
        // Masked scores are constants.
        for (std::size_t j = 0; j < nk; ++j) dp(i, j) = mask.allows(i, j) ? p(i, j) * (dp(i, j) - dot) * s : 0.0;
      }
      if (pq->requires_grad) {
        ConstStrided kh(pk->data.data() + h * dh, nk, dh, Eigen::OuterStride<>(d));
        MutStrided(pq->grad_buffer().data() + h * dh, nq, dh, Eigen::OuterStride<>(d)).noalias() += dp * kh;
      }
      if (pk->requires_grad) {
        ConstStrided qh(pq->data.data() + h * dh, nq, dh, Eigen::OuterStride<>(d));
        MutStrided(pk->grad_buffer().data() + h * dh, nk, dh, Eigen::OuterStride<>(d)).noalias() +=
            dp.transpose() * qh;
      }
    }
  }, "attention");
}

// ------------------------------------------------------------------ autodiff

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool NoGradGuard::active() { return no_grad_depth > 0; }

void backward(const Tensor& loss) {
  const auto& root = node_of(loss);
  if (root->data.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) {
    return;
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.contains(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
    }
  }
  // Intermediate accumulators are not needed once the sweep is done.
  for (Node* n : order) {
    if (n->backward) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace mtdoc
