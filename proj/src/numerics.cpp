#include "spa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "spa/error.hpp"

namespace spa::nn {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// --- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (numel(shape_) != values_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                     std::to_string(values_.size()) + " values");
  }
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("rows() needs a 2-D tensor, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("cols() needs a 2-D tensor, got " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return values_[0];
}

// --- ParamSet ----------------------------------------------------------------

Tensor& ParamSet::add(const std::string& name, Tensor init) {
  auto [it, inserted] = tensors_.emplace(name, std::move(init));
  if (!inserted) throw ConfigError("duplicate parameter '" + name + "'");
  order_.push_back(name);
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : tensors_) total += t.size();
  return total;
}

bool ParamSet::operator==(const ParamSet& other) const {
  return order_ == other.order_ && tensors_ == other.tensors_;
}

// --- Var ---------------------------------------------------------------------

const Shape& Var::shape() const { return graph_->shape(id_); }
std::size_t Var::size() const { return numel(shape()); }

std::size_t Var::rows() const {
  const Shape& s = shape();
  if (s.size() != 2) throw ShapeError("rows() needs a 2-D tensor, got " + shape_str(s));
  return s[0];
}

std::size_t Var::cols() const {
  const Shape& s = shape();
  if (s.size() != 2) throw ShapeError("cols() needs a 2-D tensor, got " + shape_str(s));
  return s[1];
}

std::span<const double> Var::value() const { return graph_->value(id_); }

double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return v[0];
}

std::span<const double> Var::grad() const {
  return static_cast<const Graph*>(graph_)->grad(id_);
}

bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Tensor Var::tensor() const {
  auto v = value();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

// --- Graph -------------------------------------------------------------------

Var Graph::constant(Tensor value) {
  Node node;
  node.shape = value.shape();
  node.value.assign(value.values().begin(), value.values().end());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) {
  Var v = constant(std::move(value));
  nodes_[v.id()].requires_grad = true;
  return v;
}

Var Graph::param(const std::string& name, const Tensor& storage) {
  auto it = params_.find(name);
  if (it != params_.end()) return Var(this, it->second);
  Node node;
  node.shape = storage.shape();
  node.external = &storage;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  params_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Shape shape, std::vector<double> value,
                  std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.shape = std::move(shape);
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) {
    return nodes_[i].requires_grad;
  });
  if (node.requires_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<const double> Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.external) return n.external->values();
  return n.value;
}

std::span<double> Graph::grad(std::size_t id) { return nodes_[id].grad; }
std::span<const double> Graph::grad(std::size_t id) const { return nodes_[id].grad; }

void Graph::backward(const Var& loss) {
  if (backward_done_) {
    throw DomainError("backward already ran on this graph; rebuild the forward pass");
  }
  if (&loss.graph() != this) throw DomainError("loss belongs to another graph");
  if (loss.size() != 1) {
    throw DomainError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  backward_done_ = true;
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.grad.assign(numel(n.shape), 0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
}

GradMap Graph::param_grads() const {
  GradMap out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    if (n.grad.empty()) {
      out.emplace(name, Tensor(n.shape, 0.0));
    } else {
      out.emplace(name, Tensor(n.shape, n.grad));
    }
  }
  return out;
}

void Graph::accumulate_param_grads(GradMap& acc, double weight) const {
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    auto it = acc.find(name);
    if (it == acc.end()) it = acc.emplace(name, Tensor(n.shape, 0.0)).first;
    if (n.grad.empty()) continue;
    auto dst = it->second.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += weight * n.grad[k];
  }
}

// --- op helpers ----------------------------------------------------------------

namespace {

void require_same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw ShapeError("operands live in different graphs");
}

void require_2d(const Var& a, const char* op) {
  if (a.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

std::vector<double> copy(std::span<const double> v) {
  return std::vector<double>(v.begin(), v.end());
}

// Applies f(x) elementwise with derivative df(x, y).
template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  Graph& g = x.graph();
  auto in = x.value();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const std::size_t xi = x.id();
  return g.record(x.shape(), std::move(out), {xi}, [xi, df](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto y = g.value(self);
    auto xv = g.value(xi);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], y[i]);
  });
}

}  // namespace

// --- linear algebra -------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_same_graph(a, b);
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record({m, n}, std::move(out), {ai, bi},
                          [ai, bi, m, k, n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    if (g.requires_grad(ai)) {
      auto bv = g.value(bi);
      auto ga = g.grad(ai);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gyrow = gy.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bv.data() + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gyrow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (g.requires_grad(bi)) {
      auto av = g.value(ai);
      auto gb = g.grad(bi);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gyrow = gy.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          if (s == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * gyrow[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  auto av = a.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ai = a.id();
  return a.graph().record({n, m}, std::move(out), {ai}, [ai, m, n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto ga = g.grad(ai);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gy[j * m + i];
  });
}

Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  const std::size_t ai = a.id();
  return a.graph().record(std::move(shape), copy(a.value()), {ai},
                          [ai](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto ga = g.grad(ai);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
}

// --- elementwise -------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record(a.shape(), std::move(out), {ai, bi},
                          [ai, bi](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    for (std::size_t id : {ai, bi}) {
      if (!g.requires_grad(id)) continue;
      auto gx = g.grad(id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record(a.shape(), std::move(out), {ai, bi},
                          [ai, bi](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    if (g.requires_grad(ai)) {
      auto gx = g.grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.requires_grad(bi)) {
      auto gx = g.grad(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] -= gy[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record(a.shape(), std::move(out), {ai, bi},
                          [ai, bi](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto av = g.value(ai);
    auto bv = g.value(bi);
    if (g.requires_grad(ai)) {
      auto gx = g.grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bi)) {
      auto gx = g.grad(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; },
               [](double, double) { return 1.0; });
}

Var add_row(const Var& x, const Var& b) {
  require_same_graph(x, b);
  require_2d(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (b.size() != n) {
    throw ShapeError("add_row: shape mismatch " + shape_str(x.shape()) + " + " +
                     shape_str(b.shape()));
  }
  auto xv = x.value();
  auto bv = b.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  const std::size_t xi = x.id(), bi = b.id();
  return x.graph().record(x.shape(), std::move(out), {xi, bi},
                          [xi, bi, m, n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    if (g.requires_grad(xi)) {
      auto gx = g.grad(xi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.requires_grad(bi)) {
      auto gb = g.grad(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
    }
  });
}

Var mul_row(const Var& x, const Var& s) {
  require_same_graph(x, s);
  require_2d(x, "mul_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (s.size() != n) {
    throw ShapeError("mul_row: shape mismatch " + shape_str(x.shape()) + " * " +
                     shape_str(s.shape()));
  }
  auto xv = x.value();
  auto sv = s.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[j];
  const std::size_t xi = x.id(), si = s.id();
  return x.graph().record(x.shape(), std::move(out), {xi, si},
                          [xi, si, m, n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto xv = g.value(xi);
    auto sv = g.value(si);
    if (g.requires_grad(xi)) {
      auto gx = g.grad(xi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += gy[i * n + j] * sv[j];
    }
    if (g.requires_grad(si)) {
      auto gs = g.grad(si);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gs[j] += gy[i * n + j] * xv[i * n + j];
    }
  });
}

// --- structural ---------------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Graph& g = parts[0].graph();
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto v = p.value();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data() + i * w, w, out.data() + i * total + offset);
    offset += w;
  }
  return g.record({m, total}, std::move(out), ids,
                  [ids, widths, m, total](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (g.requires_grad(ids[k])) {
        auto gx = g.grad(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += gy[i * total + offset + j];
      }
      offset += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Graph& g = parts[0].graph();
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, sizes;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p);
    require_2d(p, "concat_rows");
    if (p.cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    ids.push_back(p.id());
    sizes.push_back(p.size());
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const Var& p : parts) {
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  return g.record({total, n}, std::move(out), ids, [ids, sizes](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        auto gx = g.grad(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gx[i] += gy[offset + i];
      }
      offset += sizes[k];
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  auto v = x.value();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(v.data() + i * n + begin, w, out.data() + i * w);
  const std::size_t xi = x.id();
  return x.graph().record({m, w}, std::move(out), {xi},
                          [xi, m, n, w, begin](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += gy[i * w + j];
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > m) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for shape " + shape_str(x.shape()));
  }
  auto v = x.value();
  std::vector<double> out(v.begin() + begin * n, v.begin() + end * n);
  const std::size_t xi = x.id();
  return x.graph().record({end - begin, n}, std::move(out), {xi},
                          [xi, begin, n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * n + i] += gy[i];
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> indices) {
  require_2d(x, "gather_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  auto v = x.value();
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(v.data() + idx[r] * n, n, out.data() + r * n);
  }
  const std::size_t xi = x.id();
  const std::size_t rows = idx.size();
  return x.graph().record({rows, n}, std::move(out), {xi},
                          [xi, idx = std::move(idx), n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += gy[r * n + j];
  });
}

// --- nonlinearities ---------------------------------------------------------------

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
  return unary(x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

namespace {

Var softmax_impl(const Var& x, std::span<const std::uint8_t> mask, bool masked) {
  require_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (masked && mask.size() != m * n) {
    throw ShapeError("masked_softmax_rows: mask has " + std::to_string(mask.size()) +
                     " entries for shape " + shape_str(x.shape()));
  }
  auto v = x.value();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!masked || mask[i * n + j]) hi = std::max(hi, v[i * n + j]);
    }
    if (hi == -std::numeric_limits<double>::infinity()) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked && !mask[i * n + j]) continue;
      out[i * n + j] = std::exp(v[i * n + j] - hi);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  const std::size_t xi = x.id();
  return x.graph().record(x.shape(), std::move(out), {xi}, [xi, m, n](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto y = g.value(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (gy[i * n + j] - dot);
    }
  });
}

}  // namespace

Var softmax_rows(const Var& x) { return softmax_impl(x, {}, false); }

Var masked_softmax_rows(const Var& x, std::span<const std::uint8_t> mask) {
  return softmax_impl(x, mask, true);
}

Var layernorm_rows(const Var& x, double eps) {
  require_2d(x, "layernorm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  auto v = x.value();
  std::vector<double> out(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = v.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (row[j] - mu) * inv_std[i];
  }
  const std::size_t xi = x.id();
  return x.graph().record(x.shape(), std::move(out), {xi},
                          [xi, m, n, inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto y = g.value(self);
    auto gx = g.grad(xi);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mean_g += gy[i * n + j];
        mean_gy += gy[i * n + j] * y[i * n + j];
      }
      mean_g *= inv_n;
      mean_gy *= inv_n;
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += inv_std[i] * (gy[i * n + j] - mean_g - y[i * n + j] * mean_gy);
      }
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  require_2d(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  auto v = x.value();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += v[i * n + j] * v[i * n + j];
    norms[i] = std::sqrt(s);
    const double denom = norms[i] + eps;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = v[i * n + j] / denom;
  }
  const std::size_t xi = x.id();
  return x.graph().record(x.shape(), std::move(out), {xi},
                          [xi, m, n, eps, norms = std::move(norms)](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto xv = g.value(xi);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < m; ++i) {
      const double denom = norms[i] + eps;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += xv[i * n + j] * gy[i * n + j];
      const double coeff = norms[i] > 0.0 ? dot / (denom * denom * norms[i]) : 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        gx[i * n + j] += gy[i * n + j] / denom - xv[i * n + j] * coeff;
      }
    }
  });
}

// --- reductions ---------------------------------------------------------------------

Var max_over_axis(const Var& x, int axis) {
  require_2d(x, "max_over_axis");
  if (axis != 0 && axis != 1) throw ShapeError("max_over_axis: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0 || n == 0) throw ShapeError("max_over_axis: empty tensor");
  auto v = x.value();
  const std::size_t outer = axis == 0 ? n : m;
  const std::size_t inner = axis == 0 ? m : n;
  std::vector<double> out(outer);
  std::vector<std::size_t> arg(outer);
  auto flat = [&](std::size_t o, std::size_t k) { return axis == 0 ? k * n + o : o * n + k; };
  if (axis == 0) {
    // Row-major friendly sweep; the strict comparison keeps the first max.
    for (std::size_t o = 0; o < n; ++o) {
      out[o] = v[o];
      arg[o] = o;
    }
    for (std::size_t k = 1; k < m; ++k) {
      const double* row = v.data() + k * n;
      for (std::size_t o = 0; o < n; ++o) {
        if (row[o] > out[o]) {
          out[o] = row[o];
          arg[o] = k * n + o;
        }
      }
    }
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t best = flat(o, 0);
      for (std::size_t k = 1; k < inner; ++k) {
        if (v[flat(o, k)] > v[best]) best = flat(o, k);
      }
      out[o] = v[best];
      arg[o] = best;
    }
  }
  const std::size_t xi = x.id();
  Shape shape = axis == 0 ? Shape{1, n} : Shape{m, 1};
  return x.graph().record(std::move(shape), std::move(out), {xi},
                          [xi, arg = std::move(arg)](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += gy[o];
  });
}

Var sum(const Var& x) {
  auto v = x.value();
  double total = 0.0;
  for (double e : v) total += e;
  const std::size_t xi = x.id();
  return x.graph().record(Shape{}, {total}, {xi}, [xi](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    for (double& e : g.grad(xi)) e += gy;
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// --- geometry-aware ops -----------------------------------------------------------

Var rotary_rows(const Var& x, std::span<const double> positions, double base) {
  require_2d(x, "rotary_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (n % 2 != 0) throw ShapeError("rotary_rows: odd width " + std::to_string(n));
  if (positions.size() != m) {
    throw ShapeError("rotary_rows: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(m) + " rows");
  }
  const std::size_t pairs = n / 2;
  std::vector<double> cosv(m * pairs), sinv(m * pairs);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < pairs; ++k) {
      const double theta =
          std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(n));
      const double angle = positions[i] * theta;
      cosv[i * pairs + k] = std::cos(angle);
      sinv[i * pairs + k] = std::sin(angle);
    }
  }
  auto v = x.value();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < pairs; ++k) {
      const double c = cosv[i * pairs + k], s = sinv[i * pairs + k];
      const double a = v[i * n + 2 * k], b = v[i * n + 2 * k + 1];
      out[i * n + 2 * k] = a * c - b * s;
      out[i * n + 2 * k + 1] = a * s + b * c;
    }
  }
  const std::size_t xi = x.id();
  return x.graph().record(x.shape(), std::move(out), {xi},
                          [xi, m, n, pairs, cosv = std::move(cosv),
                           sinv = std::move(sinv)](Graph& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad(xi);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < pairs; ++k) {
        const double c = cosv[i * pairs + k], s = sinv[i * pairs + k];
        const double ga = gy[i * n + 2 * k], gb = gy[i * n + 2 * k + 1];
        gx[i * n + 2 * k] += ga * c + gb * s;
        gx[i * n + 2 * k + 1] += -ga * s + gb * c;
      }
    }
  });
}

Var quat_to_rotmat(const Var& q) {
  if (q.size() != 4) throw ShapeError("quat_to_rotmat: expected 4 values, got " + shape_str(q.shape()));
  auto v = q.value();
  const double w = v[0], x = v[1], y = v[2], z = v[3];
  std::vector<double> r = {
      1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
      2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
      2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
  const std::size_t qi = q.id();
  return q.graph().record({3, 3}, std::move(r), {qi}, [qi](Graph& g, std::size_t self) {
    auto gr = g.grad(self);
    auto v = g.value(qi);
    const double w = v[0], x = v[1], y = v[2], z = v[3];
    const double dw[9] = {0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0};
    const double dx[9] = {0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x};
    const double dy[9] = {-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y};
    const double dz[9] = {-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0};
    double acc[4] = {0, 0, 0, 0};
    for (int k = 0; k < 9; ++k) {
      acc[0] += gr[k] * dw[k];
      acc[1] += gr[k] * dx[k];
      acc[2] += gr[k] * dy[k];
      acc[3] += gr[k] * dz[k];
    }
    auto gq = g.grad(qi);
    for (int k = 0; k < 4; ++k) gq[k] += acc[k];
  });
}

Var chamfer(const Var& a, const Var& b) {
  require_same_graph(a, b);
  require_2d(a, "chamfer");
  require_2d(b, "chamfer");
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  if (b.cols() != d) {
    throw ShapeError("chamfer: dimension mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (n == 0 || m == 0) throw DomainError("chamfer requires nonempty point sets");
  auto av = a.value();
  auto bv = b.value();
  std::vector<std::size_t> nn_ab(n), nn_ba(m);
  std::vector<double> best_ba(m, std::numeric_limits<double>::infinity());
  double total_ab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* pa = av.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double* pb = bv.data() + j * d;
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) dist += (pa[c] - pb[c]) * (pa[c] - pb[c]);
      if (dist < best) {
        best = dist;
        arg = j;
      }
      if (dist < best_ba[j]) {
        best_ba[j] = dist;
        nn_ba[j] = i;
      }
    }
    nn_ab[i] = arg;
    total_ab += best;
  }
  double total_ba = 0.0;
  for (double e : best_ba) total_ba += e;
  const double value = total_ab / static_cast<double>(n) + total_ba / static_cast<double>(m);
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record(Shape{}, {value}, {ai, bi},
                          [ai, bi, n, m, d, nn_ab = std::move(nn_ab),
                           nn_ba = std::move(nn_ba)](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    auto av = g.value(ai);
    auto bv = g.value(bi);
    const bool need_a = g.requires_grad(ai), need_b = g.requires_grad(bi);
    std::span<double> ga = need_a ? g.grad(ai) : std::span<double>();
    std::span<double> gb = need_b ? g.grad(bi) : std::span<double>();
    const double fa = 2.0 * gy / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = nn_ab[i];
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = fa * (av[i * d + c] - bv[j * d + c]);
        if (need_a) ga[i * d + c] += diff;
        if (need_b) gb[j * d + c] -= diff;
      }
    }
    const double fb = 2.0 * gy / static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = nn_ba[j];
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = fb * (bv[j * d + c] - av[i * d + c]);
        if (need_b) gb[j * d + c] += diff;
        if (need_a) ga[i * d + c] -= diff;
      }
    }
  });
}

// --- checks --------------------------------------------------------------------------

namespace {

double rel_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace

double grad_check(const std::function<Var(Graph&, const Var&)>& f, const Tensor& x,
                  double eps) {
  Graph g;
  Var xv = g.variable(x);
  Var loss = f(g, xv);
  g.backward(loss);
  const std::vector<double> analytic(xv.grad().begin(), xv.grad().end());

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + eps;
    Graph gp;
    const double fp = f(gp, gp.constant(probe)).item();
    probe.values()[i] = orig - eps;
    Graph gm;
    const double fm = f(gm, gm.constant(probe)).item();
    probe.values()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, rel_error(analytic[i], numeric));
  }
  return worst;
}

double grad_check_params(ParamSet& params, const std::function<Var(Graph&)>& f,
                         double eps) {
  Graph g;
  Var loss = f(g);
  g.backward(loss);
  const GradMap analytic = g.param_grads();

  double worst = 0.0;
  for (const std::string& name : params.names()) {
    Tensor& t = params.at(name);
    auto found = analytic.find(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.values()[i];
      t.values()[i] = orig + eps;
      Graph gp;
      const double fp = f(gp).item();
      t.values()[i] = orig - eps;
      Graph gm;
      const double fm = f(gm).item();
      t.values()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = found == analytic.end() ? 0.0 : found->second.values()[i];
      worst = std::max(worst, rel_error(a, numeric));
    }
  }
  return worst;
}

// --- optimization ----------------------------------------------------------------------

void adam_step(ParamSet& params, const GradMap& grads, AdamState& state,
               const AdamConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& grad = git->second;
    if (grad.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient of '" + name + "' has shape " +
                       shape_str(grad.shape()) + ", parameter " + shape_str(p.shape()));
    }
    auto mit = state.m.try_emplace(name, p.shape(), 0.0).first;
    auto vit = state.v.try_emplace(name, p.shape(), 0.0).first;
    auto pv = p.values();
    auto gv = grad.values();
    auto mv = mit->second.values();
    auto vv = vit->second.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = config.beta1 * mv[i] + (1.0 - config.beta1) * gv[i];
      vv[i] = config.beta2 * vv[i] + (1.0 - config.beta2) * gv[i] * gv[i];
      const double mhat = mv[i] / bc1;
      const double vhat = vv[i] / bc2;
      pv[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

double step_decay_lr(double lr0, double decay, int every, int epoch) {
  if (every <= 0) return lr0;
  return lr0 * std::pow(decay, epoch / every);
}

}  // namespace spa::nn
