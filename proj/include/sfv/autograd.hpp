#pragma once

#include <functional>
#include <vector>

#include "sfv/tensor.hpp"

namespace sfv::autograd {

// A recorded operation. Backward rules are written in terms of differentiable
// ops, so running them with grad mode on builds a graph of the backward pass
// (needed for gradient penalties).
struct Node {
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& grad, const std::vector<Tensor>& inputs,
                                        const std::vector<bool>& needs)>;

  const char* name = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

bool grad_enabled();

class GradMode {
 public:
  explicit GradMode(bool enabled);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool prev_;
};

struct NoGrad : GradMode {
  NoGrad() : GradMode(false) {}
};

// Attaches a backward rule to `out` when grad mode is on and any input
// requires grad. Returns `out`.
Tensor record(const char* name, std::vector<Tensor> inputs, Tensor out, Node::BackwardFn backward);

// Gradients of `output` with respect to `inputs`. A non-scalar output needs
// an explicit `grad_output`. Inputs that do not influence the output get a
// zero tensor. With create_graph the returned gradients are themselves
// differentiable.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph = false, const Tensor& grad_output = Tensor());

}  // namespace sfv::autograd
