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

#include "sdvc/tensor.h"

#include <sstream>
#include <unordered_set>

#include "sdvc/common.h"

namespace sdvc {
namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

size_t NumElements(const Shape& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::Zeros(const Shape& shape) { return Full(shape, 0.0); }

Tensor Tensor::Full(const Shape& shape, double v) {
  return FromData(shape, std::vector<double>(NumElements(shape), v));
}

Tensor Tensor::FromData(const Shape& shape, std::vector<double> values) {
  if (NumElements(shape) != values.size()) {
    Fail(ErrorCode::kDimension, "shape " + ShapeString(shape) + " needs " +
                                    std::to_string(NumElements(shape)) +
                                    " values, got " +
                                    std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::Scalar(double v) { return FromData({}, {v}); }

Tensor Tensor::Parameter(const Shape& shape, std::vector<double> values) {
  Tensor t = FromData(shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    Fail(ErrorCode::kDimension,
         "item() on tensor of shape " + ShapeString(shape()));
  }
  return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
  if (!node_->parents.empty()) {
    Fail(ErrorCode::kInvalidArgument, "mutable_values() on a non-leaf tensor");
  }
  return node_->value;
}

Tensor Tensor::Detach() const { return FromData(shape(), node_->value); }

Tensor MakeResult(Shape shape, std::vector<double> value,
                  const std::vector<Tensor>& parents, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (t_grad_enabled) {
    bool any = false;
    for (const Tensor& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const Tensor& p : parents) node->parents.push_back(p.shared_node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor MakeResult(Shape shape, std::vector<double> value,
                  std::initializer_list<Tensor> parents, BackwardFn backward) {
  return MakeResult(std::move(shape), std::move(value),
                    std::vector<Tensor>(parents), std::move(backward));
}

void Backward(const Tensor& scalar) {
  if (scalar.numel() != 1) {
    Fail(ErrorCode::kDimension,
         "Backward() needs a scalar, got " + ShapeString(scalar.shape()));
  }
  if (!scalar.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(scalar.node(), 0);
  seen.insert(scalar.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  scalar.node()->Grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool GradEnabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

}  // namespace sdvc
