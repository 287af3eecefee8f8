#include "gidnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <unordered_set>

namespace gidnet {

namespace {

thread_local bool g_recording = true;

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow on either tail.
double stable_log1p_exp(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }

bool grad_recording_enabled() { return g_recording; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return of(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> data(shape_numel(shape), value);
    return of(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::of(Shape shape, std::vector<double> values, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    const std::size_t n = shape_numel(shape);
    if (values.empty()) values.assign(n, 0.0);
    if (values.size() != n) {
        throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return of({1}, {value}, requires_grad);
}

Tensor Tensor::make(const char* op, Shape shape, std::vector<double> data,
                    const std::vector<Tensor>& parents, std::function<void(detail::Node&)> backprop) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    if (node->data.size() != shape_numel(node->shape)) {
        throw ContractError(std::string("op ") + op + " produced data inconsistent with its shape");
    }
    bool track = g_recording;
    if (track) {
        track = false;
        for (const Tensor& p : parents) {
            if (p.defined() && p.node()->requires_grad) {
                track = true;
                break;
            }
        }
    }
    if (track) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->backprop = std::move(backprop);
        for (const Tensor& p : parents) {
            if (p.defined()) node->parents.push_back(p.node());
        }
    }
    return Tensor(std::move(node));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::size() const { return shape_numel(shape()); }

double Tensor::value() const {
    if (size() != 1) throw ContractError("value() requires a scalar, got shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw DimensionError("index rank mismatch for shape " + shape_str(s));
    std::size_t flat = 0;
    int axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[axis]) throw DimensionError("index out of range for shape " + shape_str(s));
        flat = flat * static_cast<std::size_t>(s[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return node_->data[flat];
}

std::span<const double> Tensor::data() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

std::span<const double> Tensor::grad() const {
    if (!node_) throw ContractError("use of undefined tensor");
    if (node_->grad.size() != node_->data.size()) {
        throw ContractError("tensor has no gradient buffer (op " + std::string(node_->op) + ")");
    }
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->is_leaf; }

void Tensor::set_requires_grad(bool enabled) {
    if (!node_) throw ContractError("use of undefined tensor");
    if (!node_->is_leaf) throw ContractError("requires_grad can only be toggled on leaves");
    node_->requires_grad = enabled;
    if (enabled) node_->ensure_grad();
}

void Tensor::zero_grad() {
    if (!node_) throw ContractError("use of undefined tensor");
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward requires a scalar loss");
    }
    auto root = loss.node();
    if (root->parents.empty()) throw ContractError("backward on an empty tape");

    // Iterative post-order DFS; the reversed order is a valid reverse
    // topological order of the tape.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next].get();
            ++next;
            if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        if (n->consumed) throw ContractError("backward already ran on this tape; rebuild the forward pass");
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backprop && n->grad.size() == n->data.size()) n->backprop(*n);
        if (!n->is_leaf) n->consumed = true;
    }
}

namespace {

// Validates suffix broadcasting and returns the cycle length of y.
std::size_t broadcast_span(const Shape& x, const Shape& y) {
    if (shape_numel(y) == 1) return 1;
    if (y.size() > x.size()) {
        throw DimensionError("cannot broadcast " + shape_str(y) + " against " + shape_str(x));
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[y.size() - 1 - i] != x[x.size() - 1 - i]) {
            throw DimensionError("shape " + shape_str(y) + " is not a trailing suffix of " + shape_str(x));
        }
    }
    return shape_numel(y);
}

}  // namespace

Tensor elementwise(EwKind kind, const Tensor& x, const Tensor* y) {
    const bool binary = (kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul);
    if (binary && (y == nullptr || !y->defined())) throw ContractError("binary elementwise op needs two operands");
    if (!binary && y != nullptr) throw ContractError("unary elementwise op got two operands");

    const std::size_t n = x.size();
    std::vector<double> out(n);
    const auto xd = x.data();

    if (binary) {
        const std::size_t yn = broadcast_span(x.shape(), y->shape());
        const auto yd = y->data();
        switch (kind) {
            case EwKind::add:
                for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] + yd[i % yn];
                break;
            case EwKind::sub:
                for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] - yd[i % yn];
                break;
            case EwKind::mul:
                for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] * yd[i % yn];
                break;
            default:
                break;
        }
        auto xn = x.node();
        auto ynode = y->node();
        return Tensor::make(kind == EwKind::add ? "add" : (kind == EwKind::sub ? "sub" : "mul"), x.shape(),
                            std::move(out), {x, *y}, [xn, ynode, yn, kind](detail::Node& self) {
                                const auto& g = self.grad;
                                if (xn->requires_grad) {
                                    xn->ensure_grad();
                                    if (kind == EwKind::mul) {
                                        for (std::size_t i = 0; i < g.size(); ++i)
                                            xn->grad[i] += g[i] * ynode->data[i % yn];
                                    } else {
                                        for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
                                    }
                                }
                                if (ynode->requires_grad) {
                                    ynode->ensure_grad();
                                    const double sgn = (kind == EwKind::sub) ? -1.0 : 1.0;
                                    if (kind == EwKind::mul) {
                                        for (std::size_t i = 0; i < g.size(); ++i)
                                            ynode->grad[i % yn] += g[i] * xn->data[i];
                                    } else {
                                        for (std::size_t i = 0; i < g.size(); ++i) ynode->grad[i % yn] += sgn * g[i];
                                    }
                                }
                            });
    }

    const char* name = "unary";
    switch (kind) {
        case EwKind::neg:
            name = "neg";
            for (std::size_t i = 0; i < n; ++i) out[i] = -xd[i];
            break;
        case EwKind::abs:
            name = "abs";
            for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(xd[i]);
            break;
        case EwKind::sigmoid:
            name = "sigmoid";
            for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(xd[i]);
            break;
        case EwKind::relu:
            name = "relu";
            for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
            break;
        case EwKind::log1p_exp:
            name = "log1p_exp";
            for (std::size_t i = 0; i < n; ++i) out[i] = stable_log1p_exp(xd[i]);
            break;
        default:
            break;
    }
    auto xn = x.node();
    auto result = Tensor::make(name, x.shape(), std::move(out), {x}, nullptr);
    if (result.node()->requires_grad) {
        result.node()->backprop = [xn, kind](detail::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const auto& g = self.grad;
            switch (kind) {
                case EwKind::neg:
                    for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] -= g[i];
                    break;
                case EwKind::abs:
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double x = xn->data[i];
                        xn->grad[i] += g[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
                    }
                    break;
                case EwKind::sigmoid:
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double s = self.data[i];
                        xn->grad[i] += g[i] * s * (1.0 - s);
                    }
                    break;
                case EwKind::relu:
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        if (xn->data[i] > 0.0) xn->grad[i] += g[i];
                    }
                    break;
                case EwKind::log1p_exp:
                    for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i] * stable_sigmoid(xn->data[i]);
                    break;
                default:
                    break;
            }
        };
    }
    return result;
}

Tensor add(const Tensor& x, const Tensor& y) { return elementwise(EwKind::add, x, &y); }
Tensor sub(const Tensor& x, const Tensor& y) { return elementwise(EwKind::sub, x, &y); }
Tensor mul(const Tensor& x, const Tensor& y) { return elementwise(EwKind::mul, x, &y); }
Tensor neg(const Tensor& x) { return elementwise(EwKind::neg, x); }
Tensor abs(const Tensor& x) { return elementwise(EwKind::abs, x); }
Tensor sigmoid(const Tensor& x) { return elementwise(EwKind::sigmoid, x); }
Tensor relu(const Tensor& x) { return elementwise(EwKind::relu, x); }
Tensor log1p_exp(const Tensor& x) { return elementwise(EwKind::log1p_exp, x); }

Tensor scale(const Tensor& x, double c) {
    const std::size_t n = x.size();
    std::vector<double> out(n);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] * c;
    auto xn = x.node();
    return Tensor::make("scale", x.shape(), std::move(out), {x}, [xn, c](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += c * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& x, double c) {
    const std::size_t n = x.size();
    std::vector<double> out(n);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] + c;
    auto xn = x.node();
    return Tensor::make("add_scalar", x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto ad = a.data();
    const auto bd = b.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = ad[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            const std::size_t brow = static_cast<std::size_t>(p) * n;
            const std::size_t orow = static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) out[orow + j] += av * bd[brow + j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return Tensor::make("matmul", {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            an->ensure_grad();  // dA = dY * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc += g[static_cast<std::size_t>(i) * n + j] * bn->data[static_cast<std::size_t>(p) * n + j];
                    an->grad[static_cast<std::size_t>(i) * k + p] += acc;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();  // dB = A^T * dY
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += an->data[static_cast<std::size_t>(i) * k + p] * g[static_cast<std::size_t>(i) * n + j];
                    bn->grad[static_cast<std::size_t>(p) * n + j] += acc;
                }
        }
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose requires a 2-D tensor, got " + shape_str(x.shape()));
    const int r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    const auto xd = x.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = xd[static_cast<std::size_t>(i) * c + j];
    auto xn = x.node();
    return Tensor::make("transpose", {c, r}, std::move(out), {x}, [xn, r, c](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                xn->grad[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(j) * r + i];
    });
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    if (!x.all_finite()) throw NumericError("softmax requires finite inputs");
    const Shape& s = x.shape();
    const int len = s[axis];
    std::size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= static_cast<std::size_t>(s[i]);
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);

    std::vector<double> out(x.size());
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = xd[base];
            for (int a = 1; a < len; ++a) mx = std::max(mx, xd[base + a * inner]);
            double denom = 0.0;
            for (int a = 0; a < len; ++a) {
                const double e = std::exp(xd[base + a * inner] - mx);
                out[base + a * inner] = e;
                denom += e;
            }
            for (int a = 0; a < len; ++a) out[base + a * inner] /= denom;
        }
    }
    auto xn = x.node();
    return Tensor::make("softmax", x.shape(), std::move(out), {x},
                        [xn, len, inner, outer](detail::Node& self) {
                            if (!xn->requires_grad) return;
                            xn->ensure_grad();
                            const auto& g = self.grad;
                            const auto& y = self.data;
                            for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t in = 0; in < inner; ++in) {
                                    const std::size_t base = o * len * inner + in;
                                    double dot = 0.0;
                                    for (int a = 0; a < len; ++a) dot += g[base + a * inner] * y[base + a * inner];
                                    for (int a = 0; a < len; ++a) {
                                        const std::size_t i = base + a * inner;
                                        xn->grad[i] += y[i] * (g[i] - dot);
                                    }
                                }
                            }
                        });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto xn = x.node();
    return Tensor::make("sum", {1}, {acc}, {x}, [xn](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = self.grad[0];
        for (double& v : xn->grad) v += g;
    });
}

Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.size());
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto xn = x.node();
    return Tensor::make("mean", {1}, {acc / n}, {x}, [xn, n](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = self.grad[0] / n;
        for (double& v : xn->grad) v += g;
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    auto xn = x.node();
    return Tensor::make("reshape", std::move(shape), std::move(out), {x}, [xn](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const int rank = parts.front().rank();
    if (axis < 0 || axis >= rank) throw DimensionError("concat axis out of range");
    Shape out_shape = parts.front().shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (static_cast<int>(s.size()) != rank) throw DimensionError("concat rank mismatch");
        for (int a = 0; a < rank; ++a) {
            if (a == axis) continue;
            if (s[a] != out_shape[a]) {
                throw DimensionError("concat shape mismatch at axis " + std::to_string(a) + ": " +
                                     shape_str(out_shape) + " vs " + shape_str(s));
            }
        }
        out_shape[axis] += s[axis];
    }

    std::size_t inner = 1, outer = 1;
    for (int a = axis + 1; a < rank; ++a) inner *= static_cast<std::size_t>(out_shape[a]);
    for (int a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(out_shape[a]);

    std::vector<double> out(shape_numel(out_shape));
    std::vector<int> extents;
    extents.reserve(parts.size());
    const std::size_t out_stride = static_cast<std::size_t>(out_shape[axis]) * inner;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const int ext = p.shape()[axis];
        extents.push_back(ext);
        const auto pd = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t chunk = static_cast<std::size_t>(ext) * inner;
            std::copy_n(pd.begin() + o * chunk, chunk, out.begin() + o * out_stride + offset);
        }
        offset += static_cast<std::size_t>(ext) * inner;
    }

    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    return Tensor::make("concat", out_shape, std::move(out), parts,
                        [nodes, extents, inner, outer, out_stride](detail::Node& self) {
                            std::size_t offset = 0;
                            for (std::size_t p = 0; p < nodes.size(); ++p) {
                                const std::size_t chunk = static_cast<std::size_t>(extents[p]) * inner;
                                if (nodes[p]->requires_grad) {
                                    nodes[p]->ensure_grad();
                                    for (std::size_t o = 0; o < outer; ++o) {
                                        for (std::size_t i = 0; i < chunk; ++i) {
                                            nodes[p]->grad[o * chunk + i] += self.grad[o * out_stride + offset + i];
                                        }
                                    }
                                }
                                offset += chunk;
                            }
                        });
}

}  // namespace gidnet
