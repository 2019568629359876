#pragma once

#include "tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>

namespace devignet {

// Reverse-mode autodiff over a define-by-run graph. Each Node owns its value;
// the backward closure reads this node's grad and accumulates into parents.
template <typename S>
class Node {
public:
    Tensor<S> value;
    Tensor<S> grad; // lazily allocated; empty means identically zero
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";
    bool requires_grad = false;
    std::string name; // set for parameters only

    Node() = default;
    explicit Node(Tensor<S> v) : value(std::move(v)) {}

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<S>::zeros(value.shape);
    }

    bool has_grad() const { return !grad.data.empty(); }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
Var<S> make_leaf(Tensor<S> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>(std::move(value));
    n->requires_grad = requires_grad;
    return n;
}

// Thread-local switch: when disabled, ops keep no parents or closures, so
// intermediate values are freed as soon as the last consumer releases them.
// Large-resolution inference relies on this.
class GradMode {
public:
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename S>
Var<S> make_node(Tensor<S> value, const char* op, std::vector<Var<S>> parents,
                 std::function<void(Node<S>&)> backward_fn) {
    auto n = std::make_shared<Node<S>>(std::move(value));
    n->op = op;
    if (GradMode::enabled()) {
        for (const auto& p : parents)
            if (p->requires_grad) n->requires_grad = true;
        if (n->requires_grad) {
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return n;
}

// Accumulate g into the parent's grad buffer.
template <typename S>
void accumulate(const Var<S>& parent, const Tensor<S>& g) {
    if (!parent->requires_grad) return;
    parent->ensure_grad();
    S* dst = parent->grad.ptr();
    const S* src = g.ptr();
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

// Run the backward pass from a scalar root. Topological order via iterative
// post-order DFS over parent edges.
template <typename S>
void backward(const Var<S>& root) {
    require(root->value.numel() == 1, "backward requires a scalar root, got " + root->value.shape_str());
    root->ensure_grad();
    root->grad.data[0] = S(1);

    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<S>* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is post-order: parents before children; traverse reversed.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

// Ordered parameter registry. Registration order is the canonical order for
// optimizer state and checkpoints, so it must be deterministic.
template <typename S>
class ParamStore {
public:
    Var<S> create(const std::string& name, Tensor<S> init) {
        for (const auto& p : params_)
            require(p->name != name, "duplicate parameter name: " + name);
        auto v = make_leaf(std::move(init), true);
        v->name = name;
        v->op = "param";
        params_.push_back(v);
        return v;
    }

    const std::vector<Var<S>>& items() const { return params_; }
    size_t size() const { return params_.size(); }

    Var<S> find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p;
        return nullptr;
    }

    void zero_grads() {
        for (auto& p : params_) p->grad.data.clear();
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<Var<S>> params_;
};

} // namespace devignet
