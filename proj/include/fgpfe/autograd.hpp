#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fgpfe/tensor.hpp"

namespace fgpfe::nd {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One value in a dynamically recorded computation. Inputs are retained only
// when the node participates in gradient flow, so inference-only graphs free
// intermediates as soon as the last Var referring to them is dropped.
struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Trainable leaf: a named tensor whose gradient accumulates across backward passes.
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Tensor init);

    Var var() const { return Var(node_); }
    operator Var() const { return Var(node_); }  // NOLINT(google-explicit-constructor)

    const std::string& name() const { return node_->name; }
    Tensor& value() { return node_->value; }
    const Tensor& value() const { return node_->value; }
    Tensor& grad() { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    void zero_grad();

    bool defined() const noexcept { return node_ != nullptr; }

private:
    std::shared_ptr<Node> node_;
};

// Builds a node from an already computed value. backward is kept only when at
// least one input requires grad and grad mode is enabled.
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Reverse pass from a scalar root: seeds d(root)=1 and accumulates into every
// reachable node that requires grad, in reverse topological order.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Collects a hash of every branch decision taken by non-smooth ops (ReLU sign,
// argmax choice, clamp saturation) during forward. Two forwards with equal
// signatures ran through the same smooth piece of the function.
class BranchSignature {
public:
    BranchSignature();
    ~BranchSignature();
    BranchSignature(const BranchSignature&) = delete;
    BranchSignature& operator=(const BranchSignature&) = delete;

    std::uint64_t value() const noexcept { return hash_; }
    void reset() noexcept { hash_ = kSeed; }

    static bool active() noexcept;
    static void record(std::uint64_t decision);

private:
    static constexpr std::uint64_t kSeed = 0xcbf29ce484222325ull;
    std::uint64_t hash_ = kSeed;
    BranchSignature* previous_;
};

// Worker count for row-parallel kernels. Results do not depend on it.
void set_num_threads(int n);
int num_threads();

}  // namespace fgpfe::nd
