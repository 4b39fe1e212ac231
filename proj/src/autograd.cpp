#include "sfv/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "sfv/ops.hpp"

namespace sfv::autograd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

GradMode::GradMode(bool enabled) : prev_(g_grad_enabled) { g_grad_enabled = enabled; }
GradMode::~GradMode() { g_grad_enabled = prev_; }

Tensor record(const char* name, std::vector<Tensor> inputs, Tensor out, Node::BackwardFn backward) {
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs, bool create_graph,
                         const Tensor& grad_output) {
  SFV_REQUIRE(output.defined(), "grad() of an undefined tensor");
  Tensor seed = grad_output;
  if (!seed.defined()) {
    SFV_REQUIRE(output.numel() == 1, "grad() needs grad_output for non-scalar output " +
                                     shape_str(output.shape()));
    seed = Tensor::full(output.shape(), 1.0, output.dtype());
  }
  SFV_REQUIRE(seed.shape() == output.shape(), "grad_output shape mismatch");

  std::unordered_set<const TensorImpl*> wanted;
  for (const auto& t : inputs) {
    SFV_REQUIRE(t.defined(), "grad() input is undefined");
    wanted.insert(t.impl());
  }

  // Iterative post-order DFS; a tensor is "live" if a wanted input is reachable
  // through it, and only live tensors take part in the backward sweep.
  std::vector<TensorImpl*> order;
  std::unordered_map<const TensorImpl*, bool> live;
  struct Frame {
    TensorImpl* t;
    std::size_t next;
  };
  std::vector<Frame> stack;
  if (output.requires_grad()) stack.push_back({output.impl(), 0});
  std::unordered_set<const TensorImpl*> visited;
  if (!stack.empty()) visited.insert(output.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& fn = f.t->grad_fn;
    if (fn && f.next < fn->inputs.size()) {
      const Tensor& in = fn->inputs[f.next++];
      if (in.requires_grad() && visited.insert(in.impl()).second) stack.push_back({in.impl(), 0});
      continue;
    }
    bool is_live = wanted.count(f.t) > 0;
    if (fn) {
      for (const auto& in : fn->inputs) {
        auto it = live.find(in.impl());
        if (it != live.end() && it->second) is_live = true;
      }
    }
    live[f.t] = is_live;
    order.push_back(f.t);
    stack.pop_back();
  }

  GradMode mode(create_graph);
  std::unordered_map<const TensorImpl*, Tensor> grads;
  if (!order.empty() && live[output.impl()]) grads[output.impl()] = seed;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!live[t] || !t->grad_fn) continue;
    auto git = grads.find(t);
    if (git == grads.end()) continue;
    Tensor g = git->second;
    if (!wanted.count(t)) grads.erase(git);
    const Node& node = *t->grad_fn;
    std::vector<bool> needs(node.inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const Tensor& in = node.inputs[i];
      needs[i] = in.requires_grad() && live[in.impl()];
      any = any || needs[i];
    }
    if (!any) continue;
    std::vector<Tensor> in_grads = node.backward(g, node.inputs, needs);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      if (!needs[i] || i >= in_grads.size() || !in_grads[i].defined()) continue;
      const TensorImpl* key = node.inputs[i].impl();
      auto slot = grads.find(key);
      if (slot == grads.end()) {
        grads.emplace(key, in_grads[i]);
      } else {
        slot->second = add(slot->second, in_grads[i]);
      }
    }
  }

  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& t : inputs) {
    auto it = grads.find(t.impl());
    if (it != grads.end()) {
      result.push_back(it->second);
    } else {
      result.push_back(Tensor::zeros(t.shape(), t.dtype()));
    }
  }
  return result;
}

}  // namespace sfv::autograd
