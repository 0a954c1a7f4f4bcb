#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adareg/tensor.hpp"

namespace adareg::ad {

using ParamId = std::size_t;

enum class ParamRole : std::uint8_t {
  weight = 0,  // network parameter w_n, member of the regularized set
  theta = 1,   // raw regularization-factor scalar
  buffer = 2,  // non-trainable state (batch-norm running statistics)
};

/// Named arrays that outlive a single tape. Registration order is stable and
/// defines the summation order of every penalty.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value, ParamRole role);

  std::size_t size() const noexcept { return entries_.size(); }
  const Tensor& value(ParamId id) const { return entries_.at(id).value; }
  Tensor& value(ParamId id) { return entries_.at(id).value; }
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  ParamRole role(ParamId id) const { return entries_.at(id).role; }
  bool trainable(ParamId id) const { return role(id) != ParamRole::buffer; }

  std::optional<ParamId> find(std::string_view name) const;
  std::vector<ParamId> ids(ParamRole role) const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.entries_ == b.entries_; }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    ParamRole role;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> by_name_;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// What a node's backward closure sees. `input_grads[i]` is null when input i
/// does not require a gradient.
struct BackwardContext {
  const Tensor& grad;
  const Tensor& output;
  std::span<const Tensor* const> inputs;
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Define-by-run recording of one forward pass. Append order is a topological
/// order; backward walks it in reverse.
class Tape {
 public:
  explicit Tape(const ParameterStore& params);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const ParameterStore& params() const noexcept { return *params_; }

  Var constant(Tensor value);
  /// Leaf bound to a stored parameter; repeated calls return the same node.
  Var param(ParamId id);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor& value(std::size_t index) const { return nodes_.at(index).value; }
  bool requires_grad(std::size_t index) const { return nodes_.at(index).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Branch tracking hashes every piecewise decision (relu sign, clamp region,
  /// argmax choice) so a gradient checker can tell when a probe crossed a kink.
  void track_branches(bool on) noexcept { track_branches_ = on; }
  bool tracking_branches() const noexcept { return track_branches_; }
  void note_branch(std::uint64_t decision) noexcept;
  std::uint64_t branch_signature() const noexcept { return signature_; }

  /// Disables gradient bookkeeping for parameter leaves (inference).
  void set_no_grad(bool on) noexcept { no_grad_ = on; }

 private:
  friend std::vector<Tensor> backward(Tape& tape, Var loss);

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<ParamId> param;
    bool requires_grad = false;
  };

  const ParameterStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<ParamId, std::size_t> param_nodes_;
  bool track_branches_ = false;
  bool no_grad_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

/// Reverse sweep from a scalar loss. Returns one gradient per entry of the
/// tape's parameter store, indexed by ParamId; entries not reachable from the
/// loss (and buffers) get zeros of their own shape.
std::vector<Tensor> backward(Tape& tape, Var loss);

}  // namespace adareg::ad
