// Reverse-mode tape over Tensord values. Ops attach a closure that routes the
// node's accumulated gradient into its parents.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "alignps/tensor.hpp"

namespace alignps {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensord value;
  Tensord grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  Tensord& ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensord(value.shape());
    return grad;
  }
};

// Leaf without gradient tracking.
Var constant(Tensord value);

// Leaf with gradient tracking (model parameters, probe inputs).
Var leaf(Tensord value, bool requires_grad = true);

// Interior node; requires_grad is inherited from parents. When gradients are
// globally disabled or no parent tracks gradients, collapses to a constant.
Var make_op(Tensord value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds root->grad with ones (root must be scalar) and runs the tape in
// reverse topological order. Accumulates into leaf grads; callers zero them.
void backward(const Var& root);

void zero_grad(const Var& v);

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Named parameter registry; iteration order is registration order.
class ParamStore {
 public:
  Var add(const std::string& name, Tensord init);
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  Var find(const std::string& name) const;
  Eigen::Index total_size() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Var>> items_;
};

}  // namespace alignps
