#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mtl {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  // Accumulated gradient; empty means "absent". Only leaves that require
  // grad ever receive one through Tape::backward.
  std::vector<double> grad;

  // Where this tensor was produced. Valid only while the identified tape is
  // the one being queried; on any other tape the tensor acts as a leaf.
  std::uint64_t tape_id = 0;
  std::int64_t node_index = -1;
};

}  // namespace detail

// Dense row-major f64 tensor. Handles share storage: copying a Tensor copies
// the handle, not the buffer. clone() makes an independent deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t dim(int i) const;
  std::int64_t size() const;

  double* data();
  const double* data() const;
  double item() const;  // value of a one-element tensor

  bool requires_grad() const;
  void set_requires_grad(bool v);

  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws if absent
  void accumulate_grad(const double* g, std::int64_t n);
  void clear_grad();

  // Deep copy of the data, detached from any tape.
  Tensor clone(bool requires_grad = false) const;
  // Same values, detached, grad-free. (Deep copy; buffers never alias.)
  Tensor detach() const { return clone(false); }

  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

// One recorded operation: inputs, output, and the rule mapping the output
// gradient to input gradients. `need[i]` tells the rule which inputs actually
// require a gradient this pass; entries it skips stay undefined.
struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<std::vector<Tensor>(const Tensor& g_out, const std::vector<char>& need)> vjp;
};

}  // namespace detail

// Record of operations in execution order (a topological order by
// construction). Gradients are computed by a single reverse sweep. The tape
// keeps the graph after backward, so it can be extended and differentiated
// again — that is what makes unrolled (second-order) meta-gradients possible.
//
// A tape and the tensors recorded on it belong to one worker at a time;
// distinct tapes may be used concurrently from different threads.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }
  const detail::Node& node(std::size_t i) const { return nodes_[i]; }

  // d(loss)/d(leaf) accumulated into .grad of every reachable leaf that
  // requires grad. loss must be a one-element tensor produced on this tape.
  void backward(const Tensor& loss);

  // d(loss)/d(target) for each target, returned in order; a target the loss
  // does not depend on gets a zero tensor. With create_graph the backward
  // computation is itself recorded, so the results can be differentiated
  // again (the hook for unrolled meta-gradients).
  std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& targets,
                           bool create_graph = false);

  // Recording hook used by the op layer.
  void record(detail::Node node);

  static Tape* active();

 private:
  std::vector<Tensor> grad_impl(const Tensor& loss, const std::vector<Tensor>* targets,
                                bool create_graph);

  std::uint64_t id_;
  std::vector<detail::Node> nodes_;
};

// RAII: makes a tape the active recording target for this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// RAII: suspends recording (forward values only) while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

}  // namespace mtl
