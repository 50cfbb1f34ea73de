#pragma once

#include "bialign/errors.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace bialign {

template <class Real>
class Graph;

// Dense row-major tensor with optional gradient storage. Copies are shallow:
// two Tensor handles may share the same storage. Values are shared separately
// from gradients so a worker thread can hold a grad_shadow() of a parameter
// (same weights, private gradient buffer).
template <class Real>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        return Tensor(std::move(shape), {}, false);
    }

    static Tensor from(std::vector<int> shape, std::vector<Real> values) {
        Tensor t(std::move(shape), std::move(values), true);
        return t;
    }

    static Tensor scalar(Real v) { return from({1}, {v}); }

    static Tensor param(std::vector<int> shape, std::string name) {
        Tensor t(std::move(shape), {}, false);
        t.d_->requires_grad = true;
        t.d_->name = std::move(name);
        return t;
    }

    bool defined() const { return d_ != nullptr; }

    const std::vector<int>& shape() const { return d_->shape; }
    std::size_t numel() const { return d_->values->size(); }
    int rows() const { return d_->shape.at(0); }
    int cols() const { return d_->shape.at(1); }

    // Tensor is a shared handle; const-ness of the handle does not make the
    // underlying storage immutable (same convention as shared_ptr).
    Real* data() const { return d_->values->data(); }
    std::vector<Real>& values() const { return *d_->values; }

    Real value() const {
        if (numel() != 1) throw UsageError("Tensor::value() requires a scalar tensor");
        return (*d_->values)[0];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool b) { d_->requires_grad = b; }
    const std::string& name() const { return d_->name; }

    bool has_grad() const { return !d_->grad.empty(); }
    void ensure_grad() const {
        if (d_->grad.empty()) d_->grad.assign(d_->values->size(), Real(0));
    }
    void zero_grad() const {
        if (!d_->grad.empty()) d_->grad.assign(d_->grad.size(), Real(0));
    }
    Real* grad_data() const { return d_->grad.data(); }
    std::vector<Real>& grad() const { return d_->grad; }
    std::vector<Real> take_grad() const { return std::move(d_->grad); }

    // Same values, no gradient path: ancestors of this tensor receive nothing
    // through the detached handle.
    Tensor detach() const {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        return t;
    }

    // Same values, private gradient buffer (for per-worker accumulation).
    Tensor grad_shadow() const {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        t.d_->requires_grad = d_->requires_grad;
        t.d_->name = d_->name;
        return t;
    }

    // Deep copy of values; fresh gradient state.
    Tensor clone() const {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = d_->shape;
        t.d_->values = std::make_shared<std::vector<Real>>(*d_->values);
        t.d_->requires_grad = d_->requires_grad;
        t.d_->name = d_->name;
        return t;
    }

    const void* graph_tag() const { return d_->graph; }
    int node() const { return d_->node; }
    void set_node(const void* g, int node) {
        d_->graph = g;
        d_->node = node;
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    bool all_finite() const {
        for (Real v : *d_->values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    struct Data {
        std::vector<int> shape;
        std::shared_ptr<std::vector<Real>> values;
        std::vector<Real> grad;
        bool requires_grad = false;
        const void* graph = nullptr;
        int node = -1;
        std::string name;
    };

    Tensor(std::vector<int> shape, std::vector<Real> values, bool have_values) {
        std::size_t n = 1;
        if (shape.empty()) throw UsageError("tensor shape must be non-empty");
        for (int d : shape) {
            if (d <= 0) throw UsageError("tensor dimensions must be positive");
            n *= static_cast<std::size_t>(d);
        }
        if (have_values && values.size() != n)
            throw UsageError("tensor data length does not match shape");
        d_ = std::make_shared<Data>();
        d_->shape = std::move(shape);
        if (have_values)
            d_->values = std::make_shared<std::vector<Real>>(std::move(values));
        else
            d_->values = std::make_shared<std::vector<Real>>(n, Real(0));
    }

    std::shared_ptr<Data> d_;
};

// Recording tape. Ops append one node per recorded operation; creation order
// is a valid topological order, so backward() is a single reverse sweep.
template <class Real>
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    int add_node(std::function<void()> back) {
        nodes_.push_back(std::move(back));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(Tensor<Real>& loss) {
        if (!loss.defined() || loss.node() < 0 || loss.graph_tag() != this)
            throw UsageError("backward: tensor was not recorded on this graph");
        if (loss.numel() != 1)
            throw UsageError("backward: loss must be a scalar");
        if (!std::isfinite(static_cast<double>(loss.value())))
            throw NumericalError("backward: loss is not finite");
        loss.ensure_grad();
        loss.grad_data()[0] = Real(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

} // namespace bialign
