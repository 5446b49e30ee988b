// Copyright (c) the SDVC Project Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SDVC_TENSOR_H_
#define SDVC_TENSOR_H_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sdvc {

// Extents, outermost first. Image-like tensors are NCHW.
using Shape = std::vector<size_t>;

size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node& self)>;

// One value in the autodiff tape. Forward values are fixed once the node is
// built; `grad` is allocated lazily when a gradient first reaches the node.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  // Returns the gradient buffer, allocating zeros on first use.
  std::vector<double>& Grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

// Shared handle to a Node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor Zeros(const Shape& shape);
  static Tensor Full(const Shape& shape, double v);
  static Tensor FromData(const Shape& shape, std::vector<double> values);
  static Tensor Scalar(double v);
  // Leaf that accumulates gradients.
  static Tensor Parameter(const Shape& shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }
  size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  double operator[](size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient, or an empty span when none has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  void ZeroGrad() { node_->grad.clear(); }

  // In-place access for leaves only (optimizer updates, test perturbation).
  std::span<double> mutable_values();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared_node() const { return node_; }

  // Copy of the values with no autodiff history.
  Tensor Detach() const;

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op output. The backward closure is kept only when grad mode is
// on and at least one parent requires a gradient.
Tensor MakeResult(Shape shape, std::vector<double> value,
                  std::initializer_list<Tensor> parents, BackwardFn backward);
Tensor MakeResult(Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents, BackwardFn backward);

// Reverse-mode sweep from a scalar. Gradients accumulate into leaves.
void Backward(const Tensor& scalar);

bool GradEnabled();

// Disables tape recording in the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

}  // namespace sdvc

#endif  // SDVC_TENSOR_H_
