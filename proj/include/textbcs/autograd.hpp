#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "textbcs/tensor.hpp"

namespace textbcs::ag {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. Backward closures read `grad` of the
// node they belong to and accumulate into the grads of `inputs`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad = Tensor(); }
};

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Creates an op node. If no input needs a gradient (or recording is off) the
// closure and the input links are dropped.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Reverse pass from several roots, each seeded with an explicit gradient.
void backward(const std::vector<std::pair<Var, Tensor>>& seeds);
// Reverse pass from a scalar root seeded with 1.
void backward(const Var& scalar_root);

}  // namespace textbcs::ag
