#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "sat/common.hpp"

namespace sat {

namespace detail {

template <typename T>
struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until needed; same length as data afterwards
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // empty for leaves

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Tape construction can be disabled (thread-local) for inference paths.
inline bool& autograd_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::autograd_enabled_flag()) { detail::autograd_enabled_flag() = false; }
    ~NoGradGuard() { detail::autograd_enabled_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense tensor participating in reverse-mode differentiation. Cheap handle
// semantics: copies share the underlying node. All operations are
// deterministic; identical inputs produce bit-identical outputs.
template <typename T>
class Tensor {
public:
    using Node = detail::TensorNode<T>;
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(std::vector<int64_t> shape, T value, bool requires_grad = false) {
        auto node = std::make_shared<Node>();
        const int64_t n = check_shape(shape);
        node->shape = std::move(shape);
        node->data.assign(static_cast<size_t>(n), value);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<T> values, bool requires_grad = false) {
        const int64_t n = check_shape(shape);
        if (n != static_cast<int64_t>(values.size()))
            throw ShapeError("from_data: shape/value count mismatch");
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor identity(int64_t n) {
        Tensor t = zeros({n, n});
        for (int64_t i = 0; i < n; ++i) t.node_->data[static_cast<size_t>(i * n + i)] = T(1);
        return t;
    }

    static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = static_cast<T>(rng.normal(0.0, stddev));
        return t;
    }

    // Internal factory for op results; parents/backward recorded only while
    // autograd is enabled and some parent requires grad.
    static Tensor make_op(std::vector<int64_t> shape, std::vector<T> values,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
        Tensor out = from_data(std::move(shape), std::move(values));
        bool needs = false;
        for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
        if (needs && detail::autograd_enabled_flag()) {
            out.node_->requires_grad = true;
            for (auto& in : inputs) out.node_->parents.push_back(in.node_);
            out.node_->backward_fn = std::move(backward);
        }
        return out;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
    int64_t numel() const { return node_->numel(); }
    int64_t rows() const { return rank() >= 1 ? dim(0) : 1; }
    int64_t cols() const { return rank() >= 2 ? dim(1) : 1; }

    std::span<T> values() { return {node_->data.data(), node_->data.size()}; }
    std::span<const T> values() const { return {node_->data.data(), node_->data.size()}; }

    bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
    std::span<T> grad() {
        if (!has_grad()) throw NumericError("tensor has no gradient (backward not run)");
        return {node_->grad.data(), node_->grad.size()};
    }
    std::span<const T> grad() const {
        if (!has_grad()) throw NumericError("tensor has no gradient (backward not run)");
        return {node_->grad.data(), node_->grad.size()};
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a single-element tensor");
        return node_->data[0];
    }

    T at(int64_t i) const { return node_->data.at(static_cast<size_t>(i)); }
    T at(int64_t i, int64_t j) const {
        if (rank() != 2) throw ShapeError("at(i,j) requires rank-2 tensor");
        return node_->data.at(static_cast<size_t>(i * dim(1) + j));
    }

    void zero_grad() {
        if (node_) node_->grad.assign(node_->data.size(), T(0));
    }

    Tensor detach() const {
        auto node = std::make_shared<Node>();
        node->shape = node_->shape;
        node->data = node_->data;
        return Tensor(std::move(node));
    }

    // Reverse-mode sweep from a scalar. Gradients accumulate into every
    // requires_grad tensor reachable from this node. Single-threaded;
    // traversal order is fixed by graph construction order.
    void backward() {
        if (numel() != 1) throw ShapeError("backward() requires a scalar loss");
        if (!requires_grad()) throw NumericError("backward() on a tensor without gradient history");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo_sort(node_.get(), seen, order);
        for (Node* n : order) n->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static int64_t check_shape(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw ShapeError("negative extent in shape");
            n *= d;
        }
        return n;
    }

    static void topo_sort(Node* node, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
        // Iterative postorder DFS; graphs can be deep for long block stacks.
        std::vector<std::pair<Node*, size_t>> stack;
        if (!seen.insert(node).second) return;
        stack.emplace_back(node, 0);
        while (!stack.empty()) {
            auto& [cur, idx] = stack.back();
            if (idx < cur->parents.size()) {
                Node* parent = cur->parents[idx++].get();
                if (parent->requires_grad && seen.insert(parent).second)
                    stack.emplace_back(parent, 0);
            } else {
                order.push_back(cur);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Segment layout for scatter-style reductions.
// ---------------------------------------------------------------------------

// Maps each element to a segment and stores the contiguous layout obtained by
// sorting elements by segment id. Within a segment the order is ascending
// element index unless a caller-provided ranking is used (geometry supplies a
// coordinate-canonical ranking to make reductions permutation invariant).
class SegmentMap {
public:
    SegmentMap() = default;

    static SegmentMap build(std::span<const int32_t> ids, int32_t num_segments) {
        std::vector<int64_t> ranking(ids.size());
        std::iota(ranking.begin(), ranking.end(), int64_t{0});
        return build_ordered(ids, num_segments, ranking);
    }

    // `ranking` is a permutation of element indices; elements are laid out by
    // (segment id, position in ranking).
    static SegmentMap build_ordered(std::span<const int32_t> ids, int32_t num_segments,
                                    std::span<const int64_t> ranking) {
        if (num_segments < 0) throw IndexError("negative segment count");
        if (ranking.size() != ids.size()) throw IndexError("ranking size mismatch");
        SegmentMap m;
        m.ids_.assign(ids.begin(), ids.end());
        m.num_segments_ = num_segments;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= num_segments)
                throw IndexError("segment id " + std::to_string(ids[i]) + " out of range [0, " +
                                 std::to_string(num_segments) + ")");
        }
        std::vector<int64_t> counts(static_cast<size_t>(num_segments) + 1, 0);
        for (int32_t id : ids) counts[static_cast<size_t>(id) + 1]++;
        m.offsets_.resize(static_cast<size_t>(num_segments) + 1);
        m.offsets_[0] = 0;
        for (int32_t s = 0; s < num_segments; ++s)
            m.offsets_[static_cast<size_t>(s) + 1] = m.offsets_[static_cast<size_t>(s)] + counts[static_cast<size_t>(s) + 1];
        m.order_.resize(ids.size());
        std::vector<int64_t> cursor(m.offsets_.begin(), m.offsets_.end() - 1);
        for (int64_t pos = 0; pos < static_cast<int64_t>(ranking.size()); ++pos) {
            const int64_t elem = ranking[static_cast<size_t>(pos)];
            if (elem < 0 || elem >= static_cast<int64_t>(ids.size()))
                throw IndexError("ranking entry out of range");
            const int32_t s = ids[static_cast<size_t>(elem)];
            m.order_[static_cast<size_t>(cursor[static_cast<size_t>(s)]++)] = elem;
        }
        return m;
    }

    int64_t size() const { return static_cast<int64_t>(ids_.size()); }
    int32_t num_segments() const { return num_segments_; }
    int32_t segment_of(int64_t element) const { return ids_.at(static_cast<size_t>(element)); }
    const std::vector<int32_t>& segment_ids() const { return ids_; }
    const std::vector<int64_t>& order() const { return order_; }
    const std::vector<int64_t>& offsets() const { return offsets_; }

    std::span<const int64_t> segment_elements(int32_t s) const {
        const int64_t lo = offsets_[static_cast<size_t>(s)];
        const int64_t hi = offsets_[static_cast<size_t>(s) + 1];
        return {order_.data() + lo, static_cast<size_t>(hi - lo)};
    }

    int64_t segment_size(int32_t s) const {
        return offsets_[static_cast<size_t>(s) + 1] - offsets_[static_cast<size_t>(s)];
    }

private:
    std::vector<int32_t> ids_;
    int32_t num_segments_ = 0;
    std::vector<int64_t> order_;   // element indices, grouped by segment
    std::vector<int64_t> offsets_; // [num_segments + 1]
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner dimensions differ: " + detail::shape_str(a.shape()) + " x " +
                         detail::shape_str(b.shape()));
    std::vector<T> out(static_cast<size_t>(m * n), T(0));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    for (int64_t i = 0; i < m; ++i) {
        T* po = out.data() + i * n;
        const T* ra = pa + i * k;
        for (int64_t l = 0; l < k; ++l) {
            const T av = ra[l];
            if (av == T(0)) continue;
            const T* rb = pb + l * n;
            for (int64_t j = 0; j < n; ++j) po[j] += av * rb[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return Tensor<T>::make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](auto& self) {
        const T* dc = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            T* da = an->grad.data();
            const T* pb = bn->data.data();
            // dA = dC * B^T
            for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < k; ++l) {
                    T acc = T(0);
                    const T* rdc = dc + i * n;
                    const T* rb = pb + l * n;
                    for (int64_t j = 0; j < n; ++j) acc += rdc[j] * rb[j];
                    da[i * k + l] += acc;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            T* db = bn->grad.data();
            const T* pa = an->data.data();
            // dB = A^T * dC
            for (int64_t l = 0; l < k; ++l)
                for (int64_t i = 0; i < m; ++i) {
                    const T av = pa[i * k + l];
                    if (av == T(0)) continue;
                    const T* rdc = dc + i * n;
                    T* rdb = db + l * n;
                    for (int64_t j = 0; j < n; ++j) rdb[j] += av * rdc[j];
                }
        }
    });
}

namespace detail {

// Broadcast rule: identical shapes, or one operand is rank-1 matching the
// other's trailing dimension. Returns 0 = equal, 1 = b broadcasts, 2 = a does.
template <typename T>
int broadcast_mode(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) return 0;
    if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0)) return 1;
    if (a.rank() == 1 && b.rank() >= 1 && b.dim(b.rank() - 1) == a.dim(0)) return 2;
    throw ShapeError("incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()) +
                     " (broadcast is trailing-dimension only)");
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const int mode = detail::broadcast_mode(a, b);
    const Tensor<T>& big = (mode == 2) ? b : a;
    const Tensor<T>& small = (mode == 2) ? a : b;
    const int64_t n = big.numel();
    const int64_t d = (mode == 0) ? n : small.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pb = big.values().data();
    const T* ps = small.values().data();
    if (mode == 0) {
        for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pb[i] + ps[i];
    } else {
        for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pb[i] + ps[i % d];
    }
    auto bign = big.node();
    auto smalln = small.node();
    return Tensor<T>::make_op(big.shape(), std::move(out), {big, small}, [bign, smalln, mode, n, d](auto& self) {
        const T* dc = self.grad.data();
        if (bign->requires_grad) {
            bign->ensure_grad();
            for (int64_t i = 0; i < n; ++i) bign->grad[static_cast<size_t>(i)] += dc[i];
        }
        if (smalln->requires_grad) {
            smalln->ensure_grad();
            if (mode == 0) {
                for (int64_t i = 0; i < n; ++i) smalln->grad[static_cast<size_t>(i)] += dc[i];
            } else {
                for (int64_t i = 0; i < n; ++i) smalln->grad[static_cast<size_t>(i % d)] += dc[i];
            }
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const int mode = detail::broadcast_mode(a, b);
    const Tensor<T>& big = (mode == 2) ? b : a;
    const Tensor<T>& small = (mode == 2) ? a : b;
    const int64_t n = big.numel();
    const int64_t d = (mode == 0) ? n : small.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pb = big.values().data();
    const T* ps = small.values().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pb[i] * ps[mode == 0 ? i : i % d];
    auto bign = big.node();
    auto smalln = small.node();
    return Tensor<T>::make_op(big.shape(), std::move(out), {big, small}, [bign, smalln, mode, n, d](auto& self) {
        const T* dc = self.grad.data();
        const T* pb = bign->data.data();
        const T* ps = smalln->data.data();
        if (bign->requires_grad) {
            bign->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                bign->grad[static_cast<size_t>(i)] += dc[i] * ps[mode == 0 ? i : i % d];
        }
        if (smalln->requires_grad) {
            smalln->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                smalln->grad[static_cast<size_t>(mode == 0 ? i : i % d)] += dc[i] * pb[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    const int64_t n = x.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* px = x.values().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = px[i] * factor;
    auto xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn, factor, n](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) xn->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)] * factor;
    });
}

namespace detail {

// tanh-form GELU; reference shape for both forward and derivative.
template <typename T>
inline T gelu_scalar(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    const int64_t n = x.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* px = x.values().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = detail::gelu_scalar(px[i]);
    auto xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn, n](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
            xn->grad[static_cast<size_t>(i)] +=
                self.grad[static_cast<size_t>(i)] * detail::gelu_grad_scalar(xn->data[static_cast<size_t>(i)]);
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    const int64_t n = x.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* px = x.values().data();
    for (int64_t i = 0; i < n; ++i) {
        const T v = px[i];
        out[static_cast<size_t>(i)] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                                : std::exp(v) / (T(1) + std::exp(v));
    }
    auto xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn, n](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            const T s = self.data[static_cast<size_t>(i)];
            xn->grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)] * s * (T(1) - s);
        }
    });
}

// Concatenate two rank-2 tensors along the last dimension.
template <typename T>
Tensor<T> concat_lastdim(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "concat_lastdim");
    detail::require_rank2(b, "concat_lastdim");
    if (a.dim(0) != b.dim(0))
        throw ShapeError("concat_lastdim: leading dimensions differ: " + detail::shape_str(a.shape()) +
                         " vs " + detail::shape_str(b.shape()));
    const int64_t m = a.dim(0), da = a.dim(1), db = b.dim(1);
    std::vector<T> out(static_cast<size_t>(m * (da + db)));
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    for (int64_t i = 0; i < m; ++i) {
        std::copy(pa + i * da, pa + (i + 1) * da, out.data() + i * (da + db));
        std::copy(pb + i * db, pb + (i + 1) * db, out.data() + i * (da + db) + da);
    }
    auto an = a.node();
    auto bn = b.node();
    return Tensor<T>::make_op({m, da + db}, std::move(out), {a, b}, [an, bn, m, da, db](auto& self) {
        const T* dc = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < da; ++j) an->grad[static_cast<size_t>(i * da + j)] += dc[i * (da + db) + j];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < db; ++j) bn->grad[static_cast<size_t>(i * db + j)] += dc[i * (da + db) + da + j];
        }
    });
}

// Row-wise softmax, stabilized by subtracting the row maximum.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    detail::require_rank2(x, "softmax_rows");
    const int64_t m = x.dim(0), n = x.dim(1);
    if (n < 1) throw ShapeError("softmax_rows: empty rows");
    std::vector<T> out(static_cast<size_t>(m * n));
    const T* px = x.values().data();
    for (int64_t i = 0; i < m; ++i) {
        const T* row = px + i * n;
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(static_cast<double>(mx))) throw NumericError("softmax_rows: non-finite input");
        T sum = T(0);
        T* orow = out.data() + i * n;
        for (int64_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int64_t j = 0; j < n; ++j) orow[j] /= sum;
    }
    auto xn = x.node();
    return Tensor<T>::make_op({m, n}, std::move(out), {x}, [xn, m, n](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* y = self.data.data();
        const T* dy = self.grad.data();
        for (int64_t i = 0; i < m; ++i) {
            T dot = T(0);
            for (int64_t j = 0; j < n; ++j) dot += dy[i * n + j] * y[i * n + j];
            for (int64_t j = 0; j < n; ++j)
                xn->grad[static_cast<size_t>(i * n + j)] += y[i * n + j] * (dy[i * n + j] - dot);
        }
    });
}

// Per-row standardization followed by affine gain/bias. Population variance;
// a zero-variance row normalizes to zeros and passes through the affine part.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
    detail::require_rank2(x, "layer_norm");
    const int64_t m = x.dim(0), d = x.dim(1);
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias must have one entry per feature");
    std::vector<T> out(static_cast<size_t>(m * d));
    std::vector<T> xhat(static_cast<size_t>(m * d));
    std::vector<T> inv_sigma(static_cast<size_t>(m));
    const T* px = x.values().data();
    const T* pg = gain.values().data();
    const T* pb = bias.values().data();
    for (int64_t i = 0; i < m; ++i) {
        const T* row = px + i * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_sigma[static_cast<size_t>(i)] = is;
        for (int64_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * is;
            xhat[static_cast<size_t>(i * d + j)] = h;
            out[static_cast<size_t>(i * d + j)] = pg[j] * h + pb[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return Tensor<T>::make_op({m, d}, std::move(out), {x, gain, bias},
                              [xn, gn, bn, m, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](auto& self) {
        const T* dy = self.grad.data();
        const T* pg = gn->data.data();
        if (gn->requires_grad) {
            gn->ensure_grad();
            for (int64_t j = 0; j < d; ++j) {
                T acc = T(0);
                for (int64_t i = 0; i < m; ++i) acc += dy[i * d + j] * xhat[static_cast<size_t>(i * d + j)];
                gn->grad[static_cast<size_t>(j)] += acc;
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t j = 0; j < d; ++j) {
                T acc = T(0);
                for (int64_t i = 0; i < m; ++i) acc += dy[i * d + j];
                bn->grad[static_cast<size_t>(j)] += acc;
            }
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                T sum_g = T(0), sum_gh = T(0);
                for (int64_t j = 0; j < d; ++j) {
                    const T g = dy[i * d + j] * pg[j];
                    sum_g += g;
                    sum_gh += g * xhat[static_cast<size_t>(i * d + j)];
                }
                const T inv_d = T(1) / static_cast<T>(d);
                for (int64_t j = 0; j < d; ++j) {
                    const T g = dy[i * d + j] * pg[j];
                    const T h = xhat[static_cast<size_t>(i * d + j)];
                    xn->grad[static_cast<size_t>(i * d + j)] +=
                        inv_sigma[static_cast<size_t>(i)] * (g - inv_d * sum_g - h * inv_d * sum_gh);
                }
            }
        }
    });
}

enum class ReduceKind { mean, sum, max };

// Per-segment reduction over rows. Iteration follows the SegmentMap layout
// order, which fixes the floating-point accumulation order. Empty segments
// produce zero rows and are reported through `empty_segments` when given.
template <typename T>
Tensor<T> segmented_reduce(const Tensor<T>& x, const SegmentMap& seg, ReduceKind kind,
                           std::vector<int32_t>* empty_segments = nullptr) {
    detail::require_rank2(x, "segmented_reduce");
    if (seg.size() != x.dim(0)) throw IndexError("segmented_reduce: segment map covers a different row count");
    const int64_t d = x.dim(1);
    const int32_t ns = seg.num_segments();
    std::vector<T> out(static_cast<size_t>(ns) * static_cast<size_t>(d), T(0));
    // For max: layout position (within order) of the winning row, for backward.
    std::vector<int64_t> argmax;
    if (kind == ReduceKind::max) argmax.assign(out.size(), -1);
    if (empty_segments) empty_segments->clear();
    const T* px = x.values().data();
    for (int32_t s = 0; s < ns; ++s) {
        const auto elems = seg.segment_elements(s);
        if (elems.empty()) {
            if (empty_segments) empty_segments->push_back(s);
            continue;
        }
        T* orow = out.data() + static_cast<int64_t>(s) * d;
        if (kind == ReduceKind::max) {
            for (int64_t j = 0; j < d; ++j) {
                T best = px[elems[0] * d + j];
                int64_t best_elem = elems[0];
                for (size_t e = 1; e < elems.size(); ++e) {
                    const T v = px[elems[e] * d + j];
                    if (v > best) {
                        best = v;
                        best_elem = elems[e];
                    }
                }
                orow[j] = best;
                argmax[static_cast<size_t>(static_cast<int64_t>(s) * d + j)] = best_elem;
            }
        } else if (kind == ReduceKind::mean) {
            // Running mean: exact for within-segment constant inputs (the
            // update term vanishes), unlike sum-then-divide.
            T count = T(0);
            for (const int64_t e : elems) {
                count += T(1);
                for (int64_t j = 0; j < d; ++j) orow[j] += (px[e * d + j] - orow[j]) / count;
            }
        } else {
            for (const int64_t e : elems)
                for (int64_t j = 0; j < d; ++j) orow[j] += px[e * d + j];
        }
    }
    auto xn = x.node();
    return Tensor<T>::make_op({static_cast<int64_t>(ns), d}, std::move(out), {x},
                              [xn, seg, kind, d, ns, argmax = std::move(argmax)](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* dy = self.grad.data();
        for (int32_t s = 0; s < ns; ++s) {
            const auto elems = seg.segment_elements(s);
            if (elems.empty()) continue;
            if (kind == ReduceKind::max) {
                for (int64_t j = 0; j < d; ++j) {
                    const int64_t e = argmax[static_cast<size_t>(static_cast<int64_t>(s) * d + j)];
                    xn->grad[static_cast<size_t>(e * d + j)] += dy[static_cast<int64_t>(s) * d + j];
                }
            } else {
                const T w = kind == ReduceKind::mean ? T(1) / static_cast<T>(elems.size()) : T(1);
                for (const int64_t e : elems)
                    for (int64_t j = 0; j < d; ++j)
                        xn->grad[static_cast<size_t>(e * d + j)] += w * dy[static_cast<int64_t>(s) * d + j];
            }
        }
    });
}

// Select rows by index; indices may repeat. Backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int64_t> indices) {
    detail::require_rank2(x, "gather_rows");
    const int64_t m = x.dim(0), d = x.dim(1);
    const int64_t k = static_cast<int64_t>(indices.size());
    std::vector<T> out(static_cast<size_t>(k * d));
    const T* px = x.values().data();
    for (int64_t i = 0; i < k; ++i) {
        const int64_t r = indices[static_cast<size_t>(i)];
        if (r < 0 || r >= m) throw IndexError("gather_rows: index out of range");
        std::copy(px + r * d, px + (r + 1) * d, out.data() + i * d);
    }
    std::vector<int64_t> idx(indices.begin(), indices.end());
    auto xn = x.node();
    return Tensor<T>::make_op({k, d}, std::move(out), {x}, [xn, idx = std::move(idx), d](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* dy = self.grad.data();
        for (size_t i = 0; i < idx.size(); ++i)
            for (int64_t j = 0; j < d; ++j)
                xn->grad[static_cast<size_t>(idx[i] * d + j)] += dy[static_cast<int64_t>(i) * d + j];
    });
}

// [m, h] -> [m, h*k]: column g of the input fills columns [g*k, (g+1)*k).
// Used to broadcast per-head scalars over each head's channel group.
template <typename T>
Tensor<T> repeat_interleave_cols(const Tensor<T>& x, int64_t k) {
    detail::require_rank2(x, "repeat_interleave_cols");
    if (k < 1) throw ShapeError("repeat_interleave_cols: repeat count must be positive");
    const int64_t m = x.dim(0), h = x.dim(1);
    std::vector<T> out(static_cast<size_t>(m * h * k));
    const T* px = x.values().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t g = 0; g < h; ++g) {
            const T v = px[i * h + g];
            T* po = out.data() + i * h * k + g * k;
            for (int64_t j = 0; j < k; ++j) po[j] = v;
        }
    auto xn = x.node();
    return Tensor<T>::make_op({m, h * k}, std::move(out), {x}, [xn, m, h, k](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T* dy = self.grad.data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t g = 0; g < h; ++g) {
                T acc = T(0);
                const T* po = dy + i * h * k + g * k;
                for (int64_t j = 0; j < k; ++j) acc += po[j];
                xn->grad[static_cast<size_t>(i * h + g)] += acc;
            }
    });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    const int64_t n = x.numel();
    T acc = T(0);
    const T* px = x.values().data();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    auto xn = x.node();
    return Tensor<T>::make_op({1}, {acc}, {x}, [xn, n](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = self.grad[0];
        for (int64_t i = 0; i < n; ++i) xn->grad[static_cast<size_t>(i)] += g;
    });
}

// Mean cross-entropy between row logits and integer labels.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, std::span<const int> labels) {
    detail::require_rank2(logits, "cross_entropy_mean");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross_entropy_mean: one label per row required");
    const T* px = logits.values().data();
    // Stash softmax probabilities for the backward pass.
    std::vector<T> probs(static_cast<size_t>(n * k));
    T loss = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= k) throw IndexError("cross_entropy_mean: label out of range");
        const T* row = px + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int64_t j = 0; j < k; ++j) {
            probs[static_cast<size_t>(i * k + j)] = std::exp(row[j] - mx);
            sum += probs[static_cast<size_t>(i * k + j)];
        }
        for (int64_t j = 0; j < k; ++j) probs[static_cast<size_t>(i * k + j)] /= sum;
        loss += std::log(sum) + mx - row[y];
    }
    loss /= static_cast<T>(n);
    if (!std::isfinite(static_cast<double>(loss))) throw NumericError("cross_entropy_mean: non-finite loss");
    std::vector<int> ylab(labels.begin(), labels.end());
    auto xn = logits.node();
    return Tensor<T>::make_op({1}, {loss}, {logits},
                              [xn, probs = std::move(probs), ylab = std::move(ylab), n, k](auto& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < k; ++j) {
                T v = probs[static_cast<size_t>(i * k + j)];
                if (j == ylab[static_cast<size_t>(i)]) v -= T(1);
                xn->grad[static_cast<size_t>(i * k + j)] += g * v;
            }
    });
}

// Convenience: x * W + b with b optional.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return matmul(x, w);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Gradient verification by central differences.
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    double step = 1e-5;
    // 0 means check every coordinate; otherwise sample this many per tensor.
    int max_coords_per_tensor = 0;
    uint64_t seed = 42;
};

// Returns max over checked coordinates of |analytic - numeric| /
// max(1, |analytic|, |numeric|). `loss_fn` must rebuild its graph from the
// given parameter tensors on every call. Use double precision.
template <typename LossFn>
double grad_check(LossFn&& loss_fn, std::span<Tensor<double>> params, GradCheckOptions opts = {}) {
    for (auto& p : params) p.zero_grad();
    Tensor<double> loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    Rng rng(opts.seed);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        const int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (opts.max_coords_per_tensor <= 0 || n <= opts.max_coords_per_tensor) {
            coords.resize(static_cast<size_t>(n));
            std::iota(coords.begin(), coords.end(), int64_t{0});
        } else {
            for (int c = 0; c < opts.max_coords_per_tensor; ++c)
                coords.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
        }
        auto vals = p.values();
        for (const int64_t c : coords) {
            const double saved = vals[static_cast<size_t>(c)];
            vals[static_cast<size_t>(c)] = saved + opts.step;
            const double up = loss_fn().item();
            vals[static_cast<size_t>(c)] = saved - opts.step;
            const double down = loss_fn().item();
            vals[static_cast<size_t>(c)] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite loss");
            const double numeric = (up - down) / (2.0 * opts.step);
            const double a = analytic[pi][static_cast<size_t>(c)];
            const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace sat
