#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is a tape: every op appends a node whose inputs were created
// earlier, so creation order is a topological order and backward() walks
// the tape once in reverse. Parameters live outside the graph (ParamSet) and
// are bound into a graph by reference, so many graphs can share one set of
// weights while each keeps its own gradients.
//
// Most ops are 2-D (rows x cols). There is no implicit broadcasting apart
// from scale()/add_scalar(); row-vector broadcasts are spelled add_row() and
// mul_row().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace spa::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Named learnable tensors in a fixed (insertion) order.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t scalar_count() const;

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> tensors_;
};

// Gradients keyed by parameter name.
using GradMap = std::map<std::string, Tensor>;

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const;
  std::span<const double> value() const;
  double item() const;
  std::span<const double> grad() const;
  bool requires_grad() const;
  Tensor tensor() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Backward callback: receives the graph and the node id whose gradient is
  // ready; accumulates into the inputs' gradients.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Binds an externally owned tensor as a gradient-carrying leaf. Repeated
  // calls with the same name return the same node.
  Var param(const std::string& name, const Tensor& storage);
  Var param(const ParamSet& params, const std::string& name) {
    return param(name, params.at(name));
  }

  // Computes d(loss)/d(leaf) for every gradient-carrying leaf. Allowed once
  // per graph.
  void backward(const Var& loss);
  bool backward_done() const { return backward_done_; }

  // Gradients of the parameters bound into this graph (after backward).
  GradMap param_grads() const;
  // Adds this graph's parameter gradients, times `weight`, into `acc`.
  void accumulate_param_grads(GradMap& acc, double weight) const;

  std::size_t node_count() const { return nodes_.size(); }

  // --- op-implementer interface ---
  Var record(Shape shape, std::vector<double> value,
             std::vector<std::size_t> inputs, BackwardFn backward);
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> value(std::size_t id) const;
  std::span<double> grad(std::size_t id);
  std::span<const double> grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    const Tensor* external = nullptr;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  bool backward_done_ = false;
};

// --- ops ---------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
// x (m x n) + b (n values) on every row.
Var add_row(const Var& x, const Var& b);
// x (m x n) * g (n values) on every row.
Var mul_row(const Var& x, const Var& g);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var gather_rows(const Var& x, std::span<const std::size_t> indices);

Var relu(const Var& x);
Var square(const Var& x);
Var sqrt(const Var& x);

Var softmax_rows(const Var& x);
// mask has one entry per element; 0 excludes the element (its output is 0).
// A row with every entry masked yields zeros.
Var masked_softmax_rows(const Var& x, std::span<const std::uint8_t> mask);
// Normalizes each row to zero mean / unit variance (no affine part).
Var layernorm_rows(const Var& x, double eps);
// x / (||x|| + eps) per row.
Var l2_normalize_rows(const Var& x, double eps);

// axis 0: column maxima (1 x cols); axis 1: row maxima (rows x 1).
// Gradient goes to the first maximal entry.
Var max_over_axis(const Var& x, int axis);
Var sum(const Var& x);
Var mean(const Var& x);

// Rotates consecutive column pairs (2k, 2k+1) of row r by
// positions[r] * base^(-2k/cols).
Var rotary_rows(const Var& x, std::span<const double> positions, double base);

// (1 x 4) quaternion (w, x, y, z) -> (3 x 3) rotation matrix, using the
// unit-quaternion polynomial form.
Var quat_to_rotmat(const Var& q);

// Symmetric Chamfer distance between two point sets (rows are points), mean
// convention. Gradient flows to both operands through the nearest pairs.
Var chamfer(const Var& a, const Var& b);

// --- checks and optimization -------------------------------------------

// Max elementwise relative error between the reverse-mode gradient of
// f at x and central differences with step eps. Relative error uses
// max(|a|, |b|, 1e-8) as denominator.
double grad_check(const std::function<Var(Graph&, const Var&)>& f,
                  const Tensor& x, double eps = 1e-5);

// Same comparison for every scalar of every parameter in `params`. `f`
// builds the loss in the given graph, binding parameters via Graph::param.
double grad_check_params(ParamSet& params,
                         const std::function<Var(Graph&)>& f,
                         double eps = 1e-5);

struct AdamConfig {
  double lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update of every parameter that has a gradient.
void adam_step(ParamSet& params, const GradMap& grads, AdamState& state,
               const AdamConfig& config);

// lr0 * decay^floor(epoch / every), epochs counted from 0.
double step_decay_lr(double lr0, double decay, int every, int epoch);

// Binary checkpoint: "SPAC", u32 version = 1, u32 tensor count, then per
// tensor u16 name length, name bytes, u8 rank, u32 dims, f64 values. All
// little-endian.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace spa::nn
