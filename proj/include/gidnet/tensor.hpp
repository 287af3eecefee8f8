#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gidnet/errors.hpp"

namespace gidnet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

// One entry of the autodiff tape. The tape is the implicit DAG formed by
// `parents` links; it is rebuilt on every forward pass. `backprop` reads the
// node's own grad buffer and accumulates into the parents' buffers.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until needed; leaves with grad enabled allocate eagerly
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;  // set once backward has replayed through this node
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Disables tape recording for the current thread while alive. Forward math
// still runs; no graph is built.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_recording_enabled();

// Dense row-major tensor of doubles. Copies are shallow (shared storage);
// tensors are treated as immutable after creation except for leaf data edits
// (parameter updates) and grad buffers.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor of(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    // Builds a derived node. Used by every differentiable op; `backprop` may
    // be empty for ops with no gradient. Recording is skipped when no parent
    // needs gradients or recording is disabled.
    static Tensor make(const char* op, Shape shape, std::vector<double> data,
                       const std::vector<Tensor>& parents,
                       std::function<void(detail::Node&)> backprop);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::size_t size() const;
    double value() const;  // scalar tensors only
    double at(std::initializer_list<int> idx) const;

    std::span<const double> data() const;
    std::span<double> mutable_data();  // leaf edits (init, SGD, finite differences)
    std::span<const double> grad() const;
    bool has_grad() const;
    bool requires_grad() const;
    bool is_leaf() const;
    void set_requires_grad(bool enabled);
    void zero_grad();
    bool all_finite() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// Populates gradients of every grad-enabled leaf reachable from `loss`.
// Requires a scalar with a non-empty tape; replaying the same tape twice is a
// contract error (rebuild the forward pass instead).
void backward(const Tensor& loss);

enum class EwKind { add, sub, mul, neg, abs, sigmoid, relu, log1p_exp };

// Pointwise op dispatch; `y` only for binary kinds, broadcastable when its
// shape is a suffix of x's (or scalar).
Tensor elementwise(EwKind kind, const Tensor& x, const Tensor* y = nullptr);

Tensor add(const Tensor& x, const Tensor& y);
Tensor sub(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor neg(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log1p_exp(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D only
Tensor softmax(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace gidnet
