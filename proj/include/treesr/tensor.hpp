// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode autodiff over NCHW float tensors. Each op records a
// closure on the output node; backward() replays them in reverse
// topological order. Recording is skipped when no input requires a
// gradient or when a NoGradGuard is active.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace treesr {

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;
    std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
    std::string str() const;
};

struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f) : shape(s), data(s.size(), fill) {}

    float& at(int n, int c, int y, int x) { return data[index(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const { return data[index(n, c, y, x)]; }
    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x;
    }
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward_fn;

    const Shape& shape() const { return value.shape; }
    // Returns the gradient buffer, zero-initialized on first use.
    Tensor& grad_buffer();
    bool has_grad() const { return !grad.data.empty(); }
};

Var constant(Tensor t);
Var parameter(Tensor t);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Propagates gradients already seeded on the roots' grad buffers back to
// every reachable node, then releases the recorded graph.
void backward(std::span<const Var> roots);

// 2-D convolution with stride 1 and zero padding (kernel - 1) / 2.
// weight: [cout, cin, k, k], bias: [1, cout, 1, 1].
Var conv2d(const Var& x, const Var& weight, const Var& bias);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var add_scalar(const Var& x, float s);
// x: [n, c, h, w] times per-channel gate s: [n, c, 1, 1].
Var scale_channels(const Var& x, const Var& s);
Var global_avg_pool(const Var& x);
// [n, c*r*r, h, w] -> [n, c, h*r, w*r].
Var pixel_shuffle(const Var& x, int r);
Var concat_channels(std::span<const Var> xs);
// Softmax across the channel axis at every pixel.
Var softmax_channels(const Var& x);
// sum_i preds[i] * weights[:, i] with the single weight plane broadcast
// over the prediction's channels.
Var weighted_sum(std::span<const Var> preds, const Var& weights);

}  // namespace treesr
