#include "mtl/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mtl/errors.hpp"
#include "mtl/ops.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
namespace {
// Activation buffers of a few MB churn every training step; without this the
// allocator keeps returning them to the kernel and refaulting the pages.
const bool malloc_keeps_large_blocks = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 28);
  return true;
}();
}  // namespace
#endif

namespace mtl {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::int64_t d : shape) {
    if (d < 1) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str(shape));
  }
}

thread_local Tape* t_active_tape = nullptr;
thread_local bool t_grad_enabled = true;

std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  Tensor t;
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != numel(shape))
    throw DimensionError("from_data: " + std::to_string(data.size()) + " values for shape " +
                         shape_str(shape));
  Tensor t = zeros(shape, requires_grad);
  t.impl()->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Tensor t = zeros(Shape{1}, requires_grad);
  t.impl()->data[0] = value;
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("shape() on empty tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw DimensionError("dim " + std::to_string(i) + " of " + shape_str(s));
  return s[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::size() const {
  if (!impl_) return 0;
  return static_cast<std::int64_t>(impl_->data.size());
}

double* Tensor::data() {
  if (!impl_) throw ContractError("data() on empty tensor");
  return impl_->data.data();
}

const double* Tensor::data() const {
  if (!impl_) throw ContractError("data() on empty tensor");
  return impl_->data.data();
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a one-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!impl_) throw ContractError("set_requires_grad on empty tensor");
  impl_->requires_grad = v;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad is absent");
  return impl_->grad;
}

void Tensor::accumulate_grad(const double* g, std::int64_t n) {
  if (!impl_) throw ContractError("accumulate_grad on empty tensor");
  if (n != size()) throw DimensionError("gradient length mismatch");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  for (std::int64_t i = 0; i < n; ++i) impl_->grad[static_cast<std::size_t>(i)] += g[i];
}

void Tensor::clear_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone(bool requires_grad) const {
  if (!impl_) throw ContractError("clone of empty tensor");
  Tensor t = zeros(impl_->shape, requires_grad);
  t.impl()->data = impl_->data;
  return t;
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape* Tape::active() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = prev_; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

void Tape::record(detail::Node node) {
  node.output.impl()->tape_id = id_;
  node.output.impl()->node_index = static_cast<std::int64_t>(nodes_.size());
  node.output.impl()->requires_grad = true;
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) { grad_impl(loss, nullptr, false); }

std::vector<Tensor> Tape::grad(const Tensor& loss, const std::vector<Tensor>& targets,
                               bool create_graph) {
  return grad_impl(loss, &targets, create_graph);
}

std::vector<Tensor> Tape::grad_impl(const Tensor& loss, const std::vector<Tensor>* targets,
                                    bool create_graph) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a one-element tensor");
  detail::TensorImpl* loss_impl = loss.impl();
  if (loss_impl->tape_id != id_ || loss_impl->node_index < 0)
    throw ContractError("backward: loss was not produced on this tape");
  const std::int64_t loss_idx = loss_impl->node_index;

  // Which tensors need a gradient. Without explicit targets this is the
  // requires_grad closure (already propagated at record time). With targets
  // it is the set of tensors through which a target can reach the loss,
  // which lets the sweep skip whole subgraphs (e.g. frozen feature paths).
  std::unordered_set<const detail::TensorImpl*> need;
  const bool use_need_set = targets != nullptr;
  if (use_need_set) {
    for (const Tensor& t : *targets) {
      if (!t.defined()) throw ContractError("grad: undefined target tensor");
      need.insert(t.impl());
    }
    for (std::int64_t i = 0; i <= loss_idx; ++i) {
      const detail::Node& n = nodes_[static_cast<std::size_t>(i)];
      for (const Tensor& in : n.inputs) {
        if (need.count(in.impl())) {
          need.insert(n.output.impl());
          break;
        }
      }
    }
  }

  auto wants = [&](const Tensor& t) {
    return use_need_set ? need.count(t.impl()) != 0 : t.requires_grad();
  };

  std::unordered_map<const detail::TensorImpl*, Tensor> gmap;
  {
    // Seed gradient: d(loss)/d(loss) = 1.
    NoGradGuard ng;
    gmap[loss_impl] = Tensor::full(loss_impl->shape, 1.0);
  }

  std::unique_ptr<NoGradGuard> suspend;
  if (!create_graph) suspend = std::make_unique<NoGradGuard>();

  for (std::int64_t i = loss_idx; i >= 0; --i) {
    // With create_graph the vjp below records fresh nodes on this tape, which
    // may reallocate nodes_; work on a copy so the handle cannot dangle.
    detail::Node stable;
    if (create_graph) stable = nodes_[static_cast<std::size_t>(i)];
    const detail::Node& n = create_graph ? stable : nodes_[static_cast<std::size_t>(i)];
    auto git = gmap.find(n.output.impl());
    if (git == gmap.end()) continue;
    Tensor g_out = git->second;

    std::vector<char> need_in(n.inputs.size(), 0);
    bool any = false;
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      need_in[j] = wants(n.inputs[j]) ? 1 : 0;
      any = any || need_in[j];
    }
    if (!any) continue;

    std::vector<Tensor> gs = n.vjp(g_out, need_in);
    if (gs.size() != n.inputs.size())
      throw ContractError(std::string("vjp of ") + n.op + " returned wrong arity");
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      if (!need_in[j] || !gs[j].defined()) continue;
      const detail::TensorImpl* key = n.inputs[j].impl();
      auto it = gmap.find(key);
      if (it == gmap.end()) {
        gmap.emplace(key, gs[j]);
      } else {
        it->second = add(it->second, gs[j]);
      }
    }
  }

  if (targets == nullptr) {
    // Accumulate into leaves: tensors that were not produced on this tape.
    for (auto& [impl, g] : gmap) {
      if (!impl->requires_grad) continue;
      if (impl->tape_id == id_ && impl->node_index >= 0 && impl->node_index <= loss_idx) continue;
      auto* mut = const_cast<detail::TensorImpl*>(impl);
      if (mut->grad.empty()) mut->grad.assign(mut->data.size(), 0.0);
      for (std::size_t k = 0; k < mut->grad.size(); ++k) mut->grad[k] += g.impl()->data[k];
    }
    return {};
  }

  std::vector<Tensor> out;
  out.reserve(targets->size());
  for (const Tensor& t : *targets) {
    auto it = gmap.find(t.impl());
    if (it == gmap.end()) {
      NoGradGuard ng;
      out.push_back(Tensor::zeros(t.shape()));
    } else {
      out.push_back(it->second);
    }
  }
  return out;
}

}  // namespace mtl
