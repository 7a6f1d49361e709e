#include "alignps/autograd.hpp"

#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace alignps {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var constant(Tensord value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

Var leaf(Tensord value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && g_grad_enabled;
  return n;
}

Var make_op(Tensord value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  bool track = g_grad_enabled;
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p && p->requires_grad) track = true;
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = track;
  if (track) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void zero_grad(const Var& v) {
  if (v && v->grad.same_shape(v->value)) v->grad.set_zero();
}

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads start from zero for this pass; leaves keep accumulating
  // across passes until explicitly zeroed.
  for (Node* n : order) {
    if (n != root.get() && !n->parents.empty()) n->ensure_grad().set_zero();
    else n->ensure_grad();
  }
  root->grad.array().setConstant(1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Var ParamStore::add(const std::string& name, Tensord init) {
  for (const auto& [k, v] : items_)
    if (k == name) throw std::invalid_argument("duplicate parameter name: " + name);
  Var v = std::make_shared<Node>();
  v->value = std::move(init);
  v->requires_grad = true;
  items_.emplace_back(name, v);
  return v;
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& [k, v] : items_)
    if (k == name) return v;
  return nullptr;
}

Eigen::Index ParamStore::total_size() const {
  Eigen::Index n = 0;
  for (const auto& [k, v] : items_) n += v->value.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [k, v] : items_) {
    v->ensure_grad().set_zero();
  }
}

}  // namespace alignps
