#pragma once

#include "aanreg/volume.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace aanreg::nn {

/// Row-major extents. Feature maps are {channels, nx, ny, nz}; conv kernels
/// are {out, in, 3, 3, 3}; scalars are {1}.
using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& s);
std::string to_string(const Shape& s);
Shape feature_shape(std::size_t channels, const Dims& d);
Dims spatial_dims(const Shape& s);

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the recorded computation. Leaves hold parameters or
/// constants; interior nodes hold an op's output and its backward rule.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<Var> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& grad_buffer();
    void zero_grad();
};

Var constant(Shape shape, std::vector<double> value);
Var parameter(Shape shape, std::vector<double> value);
Var from_volume(const Volume& v);
Volume to_volume(const Var& v, std::size_t channel = 0);

/// Creates an op node; requires_grad is inherited from the parents.
Var make_op(std::string op, Shape shape, std::vector<double> value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn);

/// Reverse-mode pass from a scalar loss. Interior gradients are reset on
/// every call; leaf gradients accumulate across calls.
void backward(const Var& loss);

}  // namespace aanreg::nn
