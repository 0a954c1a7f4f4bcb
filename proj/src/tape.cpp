#include "adareg/tape.hpp"

#include "adareg/error.hpp"

namespace adareg::ad {

ParamId ParameterStore::add(std::string name, Tensor value, ParamRole role) {
  if (by_name_.contains(name)) throw ValidationError("parameter '" + name + "' registered twice");
  const ParamId id = entries_.size();
  by_name_.emplace(name, id);
  entries_.push_back({std::move(name), std::move(value), role});
  return id;
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::vector<ParamId> ParameterStore::ids(ParamRole role) const {
  std::vector<ParamId> out;
  for (ParamId id = 0; id < entries_.size(); ++id) {
    if (entries_[id].role == role) out.push_back(id);
  }
  return out;
}

const Tensor& Var::value() const { return tape_->value(index_); }

Tape::Tape(const ParameterStore& params) : params_(&params) { nodes_.reserve(256); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, std::nullopt, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(ParamId id) {
  if (auto it = param_nodes_.find(id); it != param_nodes_.end()) return Var(this, it->second);
  if (id >= params_->size()) throw ValidationError("unknown parameter id " + std::to_string(id));
  const bool grad = !no_grad_ && params_->trainable(id);
  nodes_.push_back(Node{params_->value(id), {}, {}, id, grad});
  param_nodes_.emplace(id, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ValidationError("operation mixes nodes from different tapes");
    node.inputs.push_back(v.index());
    node.requires_grad = node.requires_grad || nodes_[v.index()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::note_branch(std::uint64_t decision) noexcept {
  // FNV-1a over the 8 bytes of the decision word
  for (int i = 0; i < 8; ++i) {
    signature_ ^= (decision >> (8 * i)) & 0xffU;
    signature_ *= 0x100000001b3ULL;
  }
}

std::vector<Tensor> backward(Tape& tape, Var loss) {
  if (&loss.tape() != &tape) throw ValidationError("loss was not recorded on this tape");
  if (loss.value().size() != 1) {
    throw ValidationError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }

  auto& nodes = tape.nodes_;
  std::vector<Tensor> grads(loss.index() + 1);
  grads[loss.index()] = Tensor(loss.shape(), 1.0);

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    auto& node = nodes[i];
    if (!node.requires_grad || !node.backward || grads[i].empty()) continue;
    inputs.clear();
    input_grads.clear();
    for (std::size_t in : node.inputs) {
      inputs.push_back(&nodes[in].value);
      if (nodes[in].requires_grad) {
        if (grads[in].empty()) grads[in] = Tensor(nodes[in].value.shape(), 0.0);
        input_grads.push_back(&grads[in]);
      } else {
        input_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{grads[i], node.value, inputs, input_grads});
  }

  const ParameterStore& params = tape.params();
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (ParamId id = 0; id < params.size(); ++id) {
    auto it = tape.param_nodes_.find(id);
    if (it != tape.param_nodes_.end() && it->second < grads.size() && !grads[it->second].empty()) {
      out.push_back(std::move(grads[it->second]));
    } else {
      out.emplace_back(params.value(id).shape(), 0.0);
    }
  }
  return out;
}

}  // namespace adareg::ad
