#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bayescal/diff/array.hpp"

namespace bayescal::diff {

struct Node;
class Tape;

/// Handle to a node of a differentiable computation. Cheap to copy; copies
/// share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// A leaf holding `value`. Parameters are leaves with requires_grad = true.
  static Var leaf(Array value, bool requires_grad = false);
  static Var constant(Array value) { return leaf(std::move(value), false); }
  static Var scalar(double v, bool requires_grad = false) {
    return leaf(Array::scalar(v), requires_grad);
  }

  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
  [[nodiscard]] const Array& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] double item() const { return value().item(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool is_leaf() const;
  [[nodiscard]] std::string_view op() const;
  [[nodiscard]] std::uint32_t generation() const;

  /// Rebinds the value of a leaf. Dependent nodes keep their old values until
  /// `replay` is called.
  void set_value(Array value) const;

  [[nodiscard]] Node* node() const noexcept { return node_.get(); }
  [[nodiscard]] const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Recomputes a node's value from its inputs' values.
using ForwardFn = std::function<Array(std::span<const Array* const>)>;
/// Given the inputs, the node's own output and the gradient flowing into it,
/// returns one gradient per input (undefined Var for inputs that need none).
/// Implementations must be written with Var operations so that the backward
/// pass is itself differentiable.
using BackwardFn =
    std::function<std::vector<Var>(std::span<const Var> inputs, const Var& out, const Var& grad_out)>;

struct Node {
  Array value;
  std::vector<Var> inputs;
  ForwardFn forward;
  BackwardFn backward;
  std::string_view op = "leaf";
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t id = 0;
  std::uint32_t generation = 0;
};

namespace detail {

struct ThreadState {
  bool grad_enabled = true;
  std::uint32_t generation = 0;
  std::uint64_t next_id = 1;
  Tape* tape = nullptr;
};

inline ThreadState& state() {
  thread_local ThreadState s;
  return s;
}

}  // namespace detail

/// Disables graph recording in its scope: new nodes are detached values.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::state().grad_enabled) { detail::state().grad_enabled = false; }
  ~NoGradGuard() { detail::state().grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Raises the derivative generation for nodes created in its scope.
class GenerationScope {
 public:
  GenerationScope() { ++detail::state().generation; }
  ~GenerationScope() { --detail::state().generation; }
  GenerationScope(const GenerationScope&) = delete;
  GenerationScope& operator=(const GenerationScope&) = delete;
};

/// Ordered record of every node created on this thread while the tape is
/// active, including the nodes built by differentiable backward passes.
/// Tapes nest; the innermost active tape records. Not shareable across threads.
class Tape {
 public:
  Tape() : previous_(detail::state().tape) { detail::state().tape = this; }
  ~Tape() { detail::state().tape = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Var& v) { records_.push_back(v); }

  [[nodiscard]] const std::vector<Var>& records() const noexcept { return records_; }
  [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }

  /// Highest derivative generation recorded (0 = plain forward computation).
  [[nodiscard]] std::uint32_t generation() const {
    std::uint32_t g = 0;
    for (const auto& r : records_) g = std::max(g, r.generation());
    return g;
  }

  /// Recomputes every recorded non-leaf node in recording order from the
  /// current leaf values. Recording order is a topological order.
  void replay() {
    for (const auto& r : records_) {
      Node* n = r.node();
      if (n->leaf || !n->forward) continue;
      std::vector<const Array*> in;
      in.reserve(n->inputs.size());
      for (const auto& i : n->inputs) in.push_back(&i.value());
      n->value = n->forward(in);
    }
  }

 private:
  Tape* previous_;
  std::vector<Var> records_;
};

inline Var Var::leaf(Array value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->leaf = true;
  auto& st = detail::state();
  n->id = st.next_id++;
  n->generation = st.generation;
  Var v(std::move(n));
  if (st.tape != nullptr) st.tape->record(v);
  return v;
}

inline const Array& Var::value() const {
  if (!node_) throw ContractError("use of an undefined Var");
  return node_->value;
}
inline bool Var::requires_grad() const { return node_ && node_->requires_grad; }
inline bool Var::is_leaf() const { return node_ && node_->leaf; }
inline std::string_view Var::op() const { return node_ ? node_->op : std::string_view("undefined"); }
inline std::uint32_t Var::generation() const { return node_ ? node_->generation : 0; }

inline void Var::set_value(Array value) const {
  if (!is_leaf()) throw ContractError("set_value on a non-leaf node");
  if (value.shape() != node_->value.shape()) {
    throw StructuralError("set_value shape " + value.shape().str() + " differs from leaf shape " +
                          node_->value.shape().str());
  }
  node_->value = std::move(value);
}

/// Creates an operation node: evaluates `forward` on the inputs' values, checks
/// the result is finite and, when recording is enabled, links it into the graph.
inline Var make_node(std::string_view op, std::vector<Var> inputs, ForwardFn forward,
                     BackwardFn backward) {
  std::vector<const Array*> in;
  in.reserve(inputs.size());
  for (const auto& i : inputs) in.push_back(&i.value());
  Array out = forward(in);
  if (!out.all_finite()) {
    throw NumericError("operation '" + std::string(op) + "' produced a non-finite value");
  }

  auto& st = detail::state();
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->op = op;
  n->id = st.next_id++;
  n->generation = st.generation;
  if (st.grad_enabled) {
    bool rg = false;
    for (const auto& i : inputs) rg = rg || i.requires_grad();
    n->requires_grad = rg;
    n->leaf = false;
    n->inputs = std::move(inputs);
    n->forward = std::move(forward);
    if (rg) n->backward = std::move(backward);
  }
  Var v(std::move(n));
  if (st.tape != nullptr) st.tape->record(v);
  return v;
}

}  // namespace bayescal::diff
