#include "textbcs/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace textbcs::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!g_grad_enabled) return n;
  bool any = false;
  for (const auto& in : inputs) any = any || (in && in->requires_grad);
  if (!any) return n;
  n->requires_grad = true;
  n->inputs = std::move(inputs);
  n->backward = std::move(backward);
  return n;
}

void backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  for (const auto& [root, seed] : seeds) {
    if (!root || !root->requires_grad) continue;
    if (!seed.same_shape(root->value)) {
      throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape()) + " != value shape " +
                                  shape_str(root->value.shape()));
    }
    root->grad_buffer().add_(seed);
    if (visited.insert(root.get()).second) stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
}

void backward(const Var& scalar_root) {
  if (scalar_root->value.size() != 1) throw std::invalid_argument("backward: root is not a scalar");
  backward({{scalar_root, Tensor(scalar_root->value.shape(), 1.0)}});
}

}  // namespace textbcs::ag
