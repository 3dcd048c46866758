#include "affseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace affseg {

namespace {

thread_local bool t_grad_enabled = true;
thread_local GradSink* t_grad_sink = nullptr;
thread_local ArchCounters* t_arch_counters = nullptr;

long product(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor shape has non-positive extent " + shape_string(shape));
    }
    n *= d;
  }
  return n;
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)),
      numel_(product(shape_)),
      data_(std::move(values)),
      requires_grad_(requires_grad) {
  if (static_cast<long>(data_.size()) != numel_) {
    throw std::invalid_argument("tensor value count " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  long n = product(shape);
  return TensorPtr(new Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                              requires_grad));
}

TensorPtr Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  long n = product(shape);
  return TensorPtr(new Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value),
                              requires_grad));
}

TensorPtr Tensor::from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad) {
  return TensorPtr(new Tensor(std::move(shape), std::move(values), requires_grad));
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel_ != 1) {
    throw std::invalid_argument("value() requires a scalar tensor, got " + shape_string(shape_));
  }
  return data_[0];
}

std::vector<double>& Tensor::grad() {
  if (grad_.empty()) {
    grad_.assign(static_cast<size_t>(numel_), 0.0);
  }
  return grad_;
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::accumulate_grad(const double* g, long n) {
  if (n != numel_) {
    throw std::invalid_argument("gradient size " + std::to_string(n) + " does not match tensor " +
                                shape_string(shape_));
  }
  if (t_grad_sink != nullptr && is_leaf()) {
    t_grad_sink->add(this, g, n);
    return;
  }
  std::vector<double>& gd = grad();
  for (long i = 0; i < n; ++i) gd[static_cast<size_t>(i)] += g[i];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::set_graph(std::vector<TensorPtr> parents, std::function<void()> backward_fn,
                       std::string op_name) {
  parents_ = std::move(parents);
  backward_fn_ = std::move(backward_fn);
  op_name_ = std::move(op_name);
}

void GradSink::add(Tensor* t, const double* g, long n) {
  std::vector<double>& buf = bufs_[t];
  if (buf.empty()) buf.assign(static_cast<size_t>(n), 0.0);
  for (long i = 0; i < n; ++i) buf[static_cast<size_t>(i)] += g[i];
}

void GradSink::merge_scaled(double scale) {
  for (auto& [t, buf] : bufs_) {
    std::vector<double>& gd = t->grad();
    for (size_t i = 0; i < buf.size(); ++i) gd[i] += scale * buf[i];
  }
}

std::vector<Tensor*> graph_nodes(const TensorPtr& root) {
  // Iterative post-order DFS over parent edges; result lists parents
  // before children, root last.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  struct Frame {
    Tensor* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (visited.insert(root.get()).second) {
    stack.push_back({root.get(), 0});
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& parents = f.node->parents();
    if (f.next_parent < parents.size()) {
      Tensor* p = parents[f.next_parent++].get();
      if (visited.insert(p).second) {
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const TensorPtr& loss, GradSink* sink) {
  if (!loss) throw std::invalid_argument("backward: null loss");
  if (loss->numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_string(loss->shape()));
  }
  if (!loss->has_backward_fn() && loss->parents().empty()) {
    throw std::invalid_argument("backward: loss is not attached to a recorded graph");
  }
  if (loss->backward_done_) {
    throw std::logic_error("backward: already run for this graph; rebuild the graph first");
  }
  loss->backward_done_ = true;

  std::vector<Tensor*> order = graph_nodes(loss);
  loss->grad()[0] = 1.0;

  GradSink* prev_sink = t_grad_sink;
  t_grad_sink = sink;
  try {
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Tensor* node = *it;
      if (node->backward_fn_) {
        ++node->backward_visits_;
        node->backward_fn_();
      }
    }
  } catch (...) {
    t_grad_sink = prev_sink;
    throw;
  }
  t_grad_sink = prev_sink;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

ArchCounters* arch_counters() { return t_arch_counters; }

ArchCounterScope::ArchCounterScope(ArchCounters* counters) : prev_(t_arch_counters) {
  t_arch_counters = counters;
}
ArchCounterScope::~ArchCounterScope() { t_arch_counters = prev_; }

}  // namespace affseg
