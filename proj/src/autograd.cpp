#include "fgpfe/autograd.hpp"

#include <algorithm>
#include <unordered_set>

#include "fgpfe/error.hpp"

namespace fgpfe::nd {

namespace {

thread_local bool g_grad_enabled = true;
thread_local BranchSignature* g_signature = nullptr;
int g_threads = 1;

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var Var::constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Parameter::Parameter(std::string name, Tensor init) : node_(std::make_shared<Node>()) {
    node_->name = std::move(name);
    node_->value = std::move(init);
    node_->requires_grad = true;
    node_->grad = Tensor(node_->value.shape(), 0.0);
}

void Parameter::zero_grad() { node_->grad_buffer().fill(0.0); }

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->backward = std::move(backward);
            node->inputs.reserve(inputs.size());
            for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
        }
    }
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root.defined()) throw Error("backward on undefined Var");
    if (root.value().size() != 1) throw ShapeError("backward requires a scalar root, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->grad_buffer();
            n->backward(*n);
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

BranchSignature::BranchSignature() : previous_(g_signature) { g_signature = this; }
BranchSignature::~BranchSignature() { g_signature = previous_; }

bool BranchSignature::active() noexcept { return g_signature != nullptr; }

void BranchSignature::record(std::uint64_t decision) {
    if (!g_signature) return;
    // FNV-1a over the 8 bytes of the decision.
    auto h = g_signature->hash_;
    for (int i = 0; i < 8; ++i) {
        h ^= (decision >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ull;
    }
    g_signature->hash_ = h;
}

void set_num_threads(int n) { g_threads = std::max(1, n); }
int num_threads() { return g_threads; }

}  // namespace fgpfe::nd
