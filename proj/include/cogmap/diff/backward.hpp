#pragma once

#include <unordered_map>
#include <unordered_set>

#include "cogmap/diff/ops.hpp"

namespace cogmap::diff {

template <class T>
using GradMap = std::unordered_map<const Node<T>*, Tensor<T>>;

// Reverse-mode sweep from a scalar loss. Returns accumulated gradients for
// every reachable node that requires grad. Gradients are graph values built
// from the same primitives, so running backward() again on an expression
// containing them differentiates through the first sweep.
template <class T>
GradMap<T> backward(const Tensor<T>& loss) {
    require(loss.defined() && loss.numel() == 1, "backward: loss must be a defined scalar");
    require(std::isfinite(static_cast<double>(loss.item())), "backward: loss is not finite (",
            static_cast<double>(loss.item()), ")");
    require(loss.requires_grad(), "backward: loss does not depend on any differentiable leaf");

    // Iterative post-order topological sort over the requires_grad subgraph.
    std::vector<Tensor<T>> order;
    std::unordered_set<const Node<T>*> seen;
    struct Frame {
        Tensor<T> t;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss, 0});
    seen.insert(loss.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        Node<T>* n = f.t.node();
        if (f.next_parent < n->parents.size()) {
            const Tensor<T>& p = n->parents[f.next_parent++];
            if (p.requires_grad() && !seen.count(p.node())) {
                seen.insert(p.node());
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.t);
            stack.pop_back();
        }
    }

    GradMap<T> grads;
    grads.emplace(loss.node(), Tensor<T>::scalar(T(1)));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Tensor<T>& t = *it;
        Node<T>* n = t.node();
        if (!n->vjp) continue;  // leaf
        auto git = grads.find(n);
        if (git == grads.end()) continue;
        std::vector<Tensor<T>> pgrads = n->vjp(git->second, t);
        for (size_t i = 0; i < n->parents.size(); ++i) {
            const Tensor<T>& p = n->parents[i];
            if (!p.requires_grad() || !pgrads[i].defined()) continue;
            auto pit = grads.find(p.node());
            if (pit == grads.end())
                grads.emplace(p.node(), pgrads[i]);
            else
                pit->second = add(pit->second, pgrads[i]);
        }
    }
    return grads;
}

// Gradient for one tensor out of a GradMap; zeros when unreachable.
template <class T>
Tensor<T> grad_of(const GradMap<T>& grads, const Tensor<T>& t) {
    auto it = grads.find(t.node());
    if (it == grads.end()) return Tensor<T>::zeros(t.shape());
    return it->second;
}

}  // namespace cogmap::diff
