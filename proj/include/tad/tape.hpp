#pragma once

#include <functional>
#include <vector>

#include "tad/tensor.hpp"

namespace tad {

// Reverse-mode tape. Ops record a node per output while a tape is installed
// (TapeScope) and at least one input is tracked. backward() walks nodes in
// reverse, invoking each node's pullback and accumulating leaf gradients
// into the leaf tensors' grad buffers.
class Tape {
 public:
  // gout: gradient w.r.t. the node's output. need[i] tells the pullback
  // whether gin[i] must be produced; skipped entries stay undefined.
  using BackFn =
      std::function<void(const Tensor& gout, const std::vector<char>& need,
                         std::vector<Tensor>& gin)>;

  Tape();

  std::uint64_t id() const { return id_; }
  size_t num_nodes() const { return nodes_.size(); }

  // True if `t` participates in differentiation: a requires_grad leaf or an
  // intermediate already recorded on this tape.
  bool tracked(const Tensor& t) const;

  // Registers `out` as the result of an op over `inputs`. Must only be
  // called when at least one input is tracked.
  void record(Tensor& out, const std::vector<Tensor>& inputs, BackFn fn);

  // Runs the reverse sweep from a scalar output. Leaf gradients accumulate
  // into each leaf's grad buffer (+=, so callers zero_grad between steps).
  void backward(const Tensor& output);

 private:
  struct Node {
    BackFn fn;  // null for leaves
    std::vector<std::int32_t> parents;
    std::vector<char> need;
    std::shared_ptr<Tensor::Impl> leaf;  // set for leaf nodes
    Shape shape;
  };

  std::int32_t ensure_node(const Tensor& t);

  std::vector<Node> nodes_;
  std::uint64_t id_;
};

// Thread-local active tape; null means no recording (inference).
Tape* current_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace tad
