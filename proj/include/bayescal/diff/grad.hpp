#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bayescal/diff/ops.hpp"
#include "bayescal/diff/var.hpp"

namespace bayescal::diff {

/// Result of `grad`: one gradient per requested node, in request order.
struct Gradients {
  std::vector<Var> values;
  /// reachable[i] is false when wrt[i] does not influence the output; its
  /// gradient is then an all-zero constant.
  std::vector<bool> reachable;

  [[nodiscard]] bool any_unreachable() const {
    return std::any_of(reachable.begin(), reachable.end(), [](bool r) { return !r; });
  }
  const Var& operator[](std::size_t i) const { return values[i]; }
  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
};

namespace detail {

/// Post-order of the nodes that require grad and lead to one of `targets`.
inline std::vector<Var> relevant_topo_order(const Var& root, const std::unordered_set<Node*>& targets) {
  std::unordered_map<Node*, bool> leads;  // node -> reaches a target
  std::vector<Var> order;
  struct Frame {
    Var var;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  leads[root.node()] = false;
  while (!stack.empty()) {
    Frame& f = stack.back();
    Node* n = f.var.node();
    if (f.next < n->inputs.size()) {
      const Var child = n->inputs[f.next++];
      if (child.requires_grad() && !leads.contains(child.node())) {
        leads[child.node()] = false;
        stack.push_back({child, 0});
      }
      continue;
    }
    bool reaches = targets.contains(n);
    for (const auto& in : n->inputs) {
      auto it = leads.find(in.node());
      if (it != leads.end() && it->second) reaches = true;
    }
    leads[n] = reaches;
    if (reaches) order.push_back(f.var);
    stack.pop_back();
  }
  return order;
}

}  // namespace detail

/// Reverse-mode gradient of the single-element `output` with respect to each
/// node in `wrt`. With `create_graph` the gradients are themselves recorded
/// graph nodes and may be differentiated again.
inline Gradients grad(const Var& output, std::span<const Var> wrt, bool create_graph = true) {
  if (!output.defined() || output.shape().size() != 1) {
    throw ContractError("grad: output must be a single element, got shape " +
                        (output.defined() ? output.shape().str() : std::string("undefined")));
  }
  Gradients result;
  result.values.resize(wrt.size());
  result.reachable.assign(wrt.size(), false);

  std::unordered_set<Node*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  std::unordered_map<Node*, Var> acc;
  if (output.requires_grad()) {
    const auto order = detail::relevant_topo_order(output, targets);
    std::optional<NoGradGuard> no_grad;
    if (!create_graph) no_grad.emplace();
    GenerationScope generation;

    acc[output.node()] = Var::constant(Array(output.shape(), 1.0));
    std::unordered_set<Node*> relevant;
    for (const auto& v : order) relevant.insert(v.node());
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Var& out = *it;
      Node* n = out.node();
      auto found = acc.find(n);
      if (found == acc.end() || n->leaf || !n->backward) continue;
      const Var g = found->second;
      auto input_grads = n->backward(n->inputs, out, g);
      for (std::size_t k = 0; k < n->inputs.size(); ++k) {
        Node* in = n->inputs[k].node();
        if (!relevant.contains(in) || !input_grads[k].defined()) continue;
        auto slot = acc.find(in);
        if (slot == acc.end()) {
          acc.emplace(in, input_grads[k]);
        } else {
          slot->second = add(slot->second, input_grads[k]);
        }
      }
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto it = acc.find(wrt[i].node());
    if (it != acc.end()) {
      result.values[i] = it->second;
      result.reachable[i] = true;
    } else {
      result.values[i] = Var::constant(Array(wrt[i].shape(), 0.0));
    }
  }
  return result;
}

inline Gradients grad(const Var& output, std::initializer_list<Var> wrt, bool create_graph = true) {
  const std::vector<Var> v(wrt);
  return grad(output, std::span<const Var>(v), create_graph);
}

/// Recomputes every node below `root` from the current leaf values (post-order).
inline void replay(const Var& root) {
  std::unordered_set<Node*> seen;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].node();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }
  for (Node* n : order) {
    if (n->leaf || !n->forward) continue;
    std::vector<const Array*> in;
    for (const auto& i : n->inputs) in.push_back(&i.value());
    n->value = n->forward(in);
  }
}

/// Forward value of `root` after recomputing it from its current leaves.
inline const Array& eval(const Var& root) {
  replay(root);
  return root.value();
}

/// Worst component-wise relative error between the analytic gradient of `fn`
/// and central differences with step `step`. Components whose absolute
/// disagreement is at most `abs_floor` count as exact.
inline double grad_check(const std::function<Var(const Var&)>& fn, const Array& point, double step,
                         double abs_floor = 1e-8) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  const Var x = Var::leaf(point, true);
  const Var y = fn(x);
  const Array analytic = grad(y, {x}, false)[0].value();

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    auto probe = [&](double delta) {
      Array p = point;
      p[i] += delta;
      double v = 0.0;
      try {
        v = fn(Var::leaf(p, true)).item();
      } catch (const NumericError& e) {
        throw NumericError("grad_check: probing component " + std::to_string(i) + " failed: " + e.what());
      }
      if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite function value probing component " + std::to_string(i));
      }
      return v;
    };
    const double numeric = (probe(step) - probe(-step)) / (2.0 * step);
    const double diff = std::abs(analytic[i] - numeric);
    if (diff <= abs_floor) continue;
    worst = std::max(worst, diff / std::max(std::abs(analytic[i]), std::abs(numeric)));
  }
  return worst;
}

}  // namespace bayescal::diff
