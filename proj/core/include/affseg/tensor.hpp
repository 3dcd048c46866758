#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace affseg {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major f64 tensor participating in a reverse-mode
/// differentiation graph. Graph edges run child -> parents, so the
/// recorded structure is acyclic by construction; `backward()` walks it
/// in reverse topological order exactly once.
class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
  static TensorPtr from_values(std::vector<int> shape, std::vector<double> values,
                               bool requires_grad = false);
  static TensorPtr scalar(double value, bool requires_grad = false);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long numel() const { return numel_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  double value() const;  // scalar tensors only

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }
  bool is_leaf() const { return parents_.empty(); }

  /// Gradient buffer, allocated zero on first access.
  std::vector<double>& grad();
  bool has_grad() const { return !grad_.empty(); }
  void zero_grad();

  /// Adds `g` (numel elements) into this tensor's gradient. Leaf tensors
  /// are routed through the active GradSink when one is installed, which
  /// is what lets independent graphs over shared parameters run on
  /// separate threads.
  void accumulate_grad(const double* g, long n);

  bool all_finite() const;

  // --- graph wiring (used by the ops layer) ---
  void set_graph(std::vector<TensorPtr> parents, std::function<void()> backward_fn,
                 std::string op_name);
  const std::vector<TensorPtr>& parents() const { return parents_; }
  const std::string& op_name() const { return op_name_; }
  bool has_backward_fn() const { return static_cast<bool>(backward_fn_); }
  int backward_visits() const { return backward_visits_; }

  Tensor(const Tensor&) = delete;
  Tensor& operator=(const Tensor&) = delete;

 private:
  Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad);

  friend void backward(const TensorPtr&, class GradSink*);

  std::vector<int> shape_;
  long numel_ = 0;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;

  std::vector<TensorPtr> parents_;
  std::function<void()> backward_fn_;
  std::string op_name_;
  int backward_visits_ = 0;
  bool backward_done_ = false;
};

/// Per-thread collection buffer for leaf gradients. Lets two sequence
/// graphs that share parameters run backward concurrently; the buffers
/// are merged into the parameters afterwards in a fixed order.
class GradSink {
 public:
  void add(Tensor* t, const double* g, long n);
  /// grad += scale * buffer, for every collected tensor.
  void merge_scaled(double scale);
  size_t size() const { return bufs_.size(); }

 private:
  std::unordered_map<Tensor*, std::vector<double>> bufs_;
};

/// Reverse-mode sweep from a scalar loss. Every reachable requires_grad
/// leaf receives its gradient. Calling twice on the same loss is an
/// error, as is a non-scalar or graph-detached loss.
void backward(const TensorPtr& loss, GradSink* sink = nullptr);

/// All graph nodes reachable from `root`, in topological order
/// (parents before children). Exposed for graph-shape tests.
std::vector<Tensor*> graph_nodes(const TensorPtr& root);

/// Whether ops currently record backward closures (thread-local).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Forward-pass op counters for architecture-conformance checks.
/// Installed per thread via ArchCounterScope; null when absent.
struct ArchCounters {
  long conv2d = 0;
  long maxpool = 0;
  long upsample = 0;
  long mask_mul = 0;
};

ArchCounters* arch_counters();

class ArchCounterScope {
 public:
  explicit ArchCounterScope(ArchCounters* counters);
  ~ArchCounterScope();
  ArchCounterScope(const ArchCounterScope&) = delete;
  ArchCounterScope& operator=(const ArchCounterScope&) = delete;

 private:
  ArchCounters* prev_;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace affseg
