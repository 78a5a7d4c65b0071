#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cogmap/common/error.hpp"

namespace cogmap::diff {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

template <class T>
class Tensor;

// One value in the computation graph. Ops produce nodes eagerly; the vjp
// closure expresses the backward step in terms of other ops, so gradients
// are themselves graph values and can be differentiated again (needed for
// the gradient-penalty term).
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    bool requires_grad = false;
    std::string name;  // parameters and named leaves only
    std::vector<Tensor<T>> parents;
    std::function<std::vector<Tensor<T>>(const Tensor<T>& upstream, const Tensor<T>& self)> vjp;
};

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

    static Tensor constant(Shape s, std::vector<T> v) {
        require(static_cast<int64_t>(v.size()) == shape_numel(s), "tensor data length ", v.size(),
                " does not match shape ", shape_str(s));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(s);
        n->value = std::move(v);
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape s) {
        std::vector<T> v(static_cast<size_t>(shape_numel(s)), T(0));
        return constant(std::move(s), std::move(v));
    }

    static Tensor full(Shape s, T x) {
        std::vector<T> v(static_cast<size_t>(shape_numel(s)), x);
        return constant(std::move(s), std::move(v));
    }

    static Tensor scalar(T x) { return constant({1}, {x}); }

    // Trainable leaf.
    static Tensor param(Shape s, std::vector<T> v, std::string name) {
        Tensor t = constant(std::move(s), std::move(v));
        t.n_->requires_grad = true;
        t.n_->name = std::move(name);
        return t;
    }

    // Differentiable input leaf (e.g. the generated batch handed to the
    // critic when computing the gradient penalty).
    static Tensor input(Shape s, std::vector<T> v) {
        Tensor t = constant(std::move(s), std::move(v));
        t.n_->requires_grad = true;
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    bool requires_grad() const { return n_->requires_grad; }
    const std::string& name() const { return n_->name; }
    Node<T>* node() const { return n_.get(); }
    std::shared_ptr<Node<T>> handle() const { return n_; }

    T item() const {
        require(numel() == 1, "item() on tensor of shape ", shape_str(shape()));
        return n_->value[0];
    }

    // Copy of the value with no graph history.
    Tensor detach() const { return constant(n_->shape, n_->value); }

    // Copy of the value as a fresh differentiable leaf.
    Tensor detach_input() const { return input(n_->shape, n_->value); }

private:
    std::shared_ptr<Node<T>> n_;
};

template <class T, class Vjp>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents, Vjp&& vjp) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) n->vjp = std::forward<Vjp>(vjp);
    return Tensor<T>(std::move(n));
}

}  // namespace cogmap::diff
