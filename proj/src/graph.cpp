#include "aanreg/graph.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace aanreg::nn {

std::size_t element_count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

Shape feature_shape(std::size_t channels, const Dims& d) { return {channels, d.nx, d.ny, d.nz}; }

Dims spatial_dims(const Shape& s) {
    if (s.size() != 4) throw std::invalid_argument("expected a {c,x,y,z} feature shape, got " + to_string(s));
    return {s[1], s[2], s[3]};
}

std::vector<double>& Node::grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

void Node::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

namespace {

Var make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    if (element_count(shape) != value.size())
        throw std::invalid_argument("tensor data length does not match shape " + to_string(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

}  // namespace

Var constant(Shape shape, std::vector<double> value) { return make_leaf(std::move(shape), std::move(value), false); }

Var parameter(Shape shape, std::vector<double> value) { return make_leaf(std::move(shape), std::move(value), true); }

Var from_volume(const Volume& v) { return constant(feature_shape(1, v.dims()), v.storage()); }

Volume to_volume(const Var& v, std::size_t channel) {
    const Dims d = spatial_dims(v->shape);
    if (channel >= v->shape[0]) throw std::out_of_range("channel out of range");
    const auto n = d.count();
    const auto first = v->value.begin() + static_cast<std::ptrdiff_t>(channel * n);
    return Volume(d, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

Var make_op(std::string op, Shape shape, std::vector<double> value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn) {
    if (element_count(shape) != value.size())
        throw std::invalid_argument(op + ": output length does not match shape " + to_string(shape));
    auto n = std::make_shared<Node>();
    n->op = std::move(op);
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void backward(const Var& loss) {
    if (loss->value.size() != 1)
        throw std::invalid_argument("backward needs a scalar loss, got shape " + to_string(loss->shape));
    if (!loss->requires_grad) return;

    // Iterative post-order DFS; a node seen while still open closes a cycle.
    enum class Mark { Open, Done };
    std::unordered_map<const Node*, Mark> marks;
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
    marks[loss.get()] = Mark::Open;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (!p->requires_grad) continue;
            auto it = marks.find(p);
            if (it == marks.end()) {
                marks[p] = Mark::Open;
                stack.emplace_back(p, 0);
            } else if (it->second == Mark::Open) {
                throw std::logic_error("computation graph contains a cycle");
            }
        } else {
            marks[node] = Mark::Done;
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    loss->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace aanreg::nn
