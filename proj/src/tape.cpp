#include "tad/tape.hpp"

#include <atomic>

#include "tad/kernels.hpp"

namespace tad {

static std::atomic<std::uint64_t> g_tape_counter{0};
static thread_local Tape* g_current_tape = nullptr;

Tape* current_tape() { return g_current_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_current_tape) { g_current_tape = &t; }
TapeScope::~TapeScope() { g_current_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_current_tape) { g_current_tape = nullptr; }
NoGradScope::~NoGradScope() { g_current_tape = prev_; }

Tape::Tape() : id_(++g_tape_counter) {}

bool Tape::tracked(const Tensor& t) const {
  if (!t.defined()) return false;
  if (t.impl_->requires_grad) return true;
  return t.impl_->tape_id == id_ && t.impl_->node >= 0;
}

std::int32_t Tape::ensure_node(const Tensor& t) {
  auto& im = *t.impl_;
  if (im.tape_id == id_ && im.node >= 0) return im.node;
  if (!im.requires_grad) return -1;
  Node n;
  n.leaf = t.impl_;
  n.shape = im.shape;
  std::int32_t idx = std::int32_t(nodes_.size());
  nodes_.push_back(std::move(n));
  im.tape_id = id_;
  im.node = idx;
  return idx;
}

void Tape::record(Tensor& out, const std::vector<Tensor>& inputs, BackFn fn) {
  Node n;
  n.fn = std::move(fn);
  n.parents.reserve(inputs.size());
  n.need.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    std::int32_t p = ensure_node(in);
    n.parents.push_back(p);
    n.need.push_back(p >= 0 ? 1 : 0);
  }
  n.shape = out.shape();
  std::int32_t idx = std::int32_t(nodes_.size());
  nodes_.push_back(std::move(n));
  out.impl_->tape_id = id_;
  out.impl_->node = idx;
}

void Tape::backward(const Tensor& output) {
  if (!output.defined() || output.numel() != 1)
    throw ShapeError("backward() expects a scalar output");
  if (output.impl_->tape_id != id_ || output.impl_->node < 0)
    throw ConfigError("backward() output was not recorded on this tape");

  std::vector<Tensor> grads(nodes_.size());
  std::int32_t root = output.impl_->node;
  grads[size_t(root)] = Tensor::full(output.shape(), 1.0);

  std::vector<Tensor> gin;
  for (std::int32_t i = root; i >= 0; --i) {
    Node& node = nodes_[size_t(i)];
    Tensor& g = grads[size_t(i)];
    if (!g.defined()) continue;
    if (node.leaf) {
      Tensor leaf_handle;
      leaf_handle.impl_ = node.leaf;
      leaf_handle.accumulate_grad(g.data(), g.numel());
      continue;
    }
    if (!node.fn) continue;
    gin.assign(node.parents.size(), Tensor());
    node.fn(g, node.need, gin);
    for (size_t k = 0; k < node.parents.size(); ++k) {
      std::int32_t p = node.parents[k];
      if (p < 0) continue;
      Tensor& gk = gin[k];
      if (!gk.defined())
        throw NumericError("pullback produced no gradient for a tracked input");
      if (gk.numel() != shape_numel(nodes_[size_t(p)].shape))
        throw ShapeError("pullback gradient shape mismatch: got " +
                         shape_str(gk.shape()) + " want " +
                         shape_str(nodes_[size_t(p)].shape));
      Tensor& dst = grads[size_t(p)];
      if (!dst.defined()) {
        dst = std::move(gk);
      } else {
        kernels::active().axpy(1.0, gk.data(), dst.mut_data(), dst.numel());
      }
    }
    g = Tensor();  // free as we go
  }
}

}  // namespace tad
