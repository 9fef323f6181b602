#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "avfusion/ops.hpp"
#include "avfusion/tensor.hpp"

namespace avf {

/// Handle to a node recorded on a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward()
/// walks them in reverse, so every node's gradient is complete before its
/// own adjoint runs. A graph is single-use and not thread-safe; build one per
/// sample when evaluating a batch concurrently.
template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor<T>& grad)>;

  Var leaf(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }

  /// Accumulated gradient; an all-zero tensor when nothing flowed into v.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records an op with a caller-supplied adjoint. `backward` receives the
  /// node's upstream gradient and must route it to `parents` via accumulate().
  Var custom(Tensor<T> value, std::initializer_list<Var> parents, Backward backward,
             const char* what = "custom") {
    bool rg = false;
    for (Var p : parents) rg = rg || requires_grad(p);
    return push(std::move(value), rg, rg ? std::move(backward) : nullptr, what);
  }

  void accumulate(Var v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      n.grad.reshape(n.value.shape());
      return;
    }
    if (g.size() != n.grad.size())
      throw ShapeError("gradient accumulation: " + to_string(g.shape()) + " into " +
                       to_string(n.grad.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  /// Seeds `root` with `seed` (ones for a scalar root when omitted) and runs
  /// every recorded adjoint in reverse order.
  void backward(Var root, Tensor<T> seed = {}) {
    if (seed.empty()) seed = Tensor<T>(value(root).shape(), T{1});
    for (auto& n : nodes_) n.grad = Tensor<T>();
    accumulate(root, seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      const Tensor<T> g = n.grad;
      n.backward(*this, g);
    }
  }

  // ---- recorded ops -------------------------------------------------------

  Var matmul(Var a, Var b) {
    auto y = ops::matmul(value(a), value(b));
    return custom(std::move(y), {a, b}, [a, b](Graph& g, const Tensor<T>& gy) {
      if (g.requires_grad(a)) g.accumulate(a, ops::matmul(gy, ops::transpose(g.value(b))));
      if (g.requires_grad(b)) g.accumulate(b, ops::matmul(ops::transpose(g.value(a)), gy));
    }, "matmul");
  }

  Var transpose(Var a) {
    return custom(ops::transpose(value(a)), {a}, [a](Graph& g, const Tensor<T>& gy) {
      g.accumulate(a, ops::transpose(gy));
    }, "transpose");
  }

  Var softmax_rows(Var x) {
    auto y = ops::softmax_rows(value(x));
    const std::size_t self = nodes_.size();
    return custom(std::move(y), {x}, [x, self](Graph& g, const Tensor<T>& gy) {
      g.accumulate(x, ops::softmax_rows_backward(g.nodes_[self].value, gy));
    }, "softmax_rows");
  }

  Var conv3d(Var x, Var k, ops::Conv3dGeom geom) {
    auto y = ops::conv3d(value(x), value(k), geom);
    return custom(std::move(y), {x, k}, [x, k, geom](Graph& g, const Tensor<T>& gy) {
      auto gr = ops::conv3d_backward(g.value(x), g.value(k), gy, geom, g.requires_grad(x));
      if (g.requires_grad(x)) g.accumulate(x, gr.input);
      g.accumulate(k, gr.kernel);
    }, "conv3d");
  }

  Var conv2d(Var x, Var k, ops::Conv2dGeom geom) {
    auto y = ops::conv2d(value(x), value(k), geom);
    return custom(std::move(y), {x, k}, [x, k, geom](Graph& g, const Tensor<T>& gy) {
      auto gr = ops::conv2d_backward(g.value(x), g.value(k), gy, geom, g.requires_grad(x));
      if (g.requires_grad(x)) g.accumulate(x, gr.input);
      g.accumulate(k, gr.kernel);
    }, "conv2d");
  }

  Var conv_transpose2d(Var x, Var k, ops::Conv2dGeom geom) {
    auto y = ops::conv_transpose2d(value(x), value(k), geom);
    return custom(std::move(y), {x, k}, [x, k, geom](Graph& g, const Tensor<T>& gy) {
      auto gr = ops::conv_transpose2d_backward(g.value(x), g.value(k), gy, geom, g.requires_grad(x));
      if (g.requires_grad(x)) g.accumulate(x, gr.input);
      g.accumulate(k, gr.kernel);
    }, "conv_transpose2d");
  }

  Var pointwise(Var x, ops::Pointwise f) {
    auto y = ops::pointwise(value(x), f);
    const std::size_t self = nodes_.size();
    return custom(std::move(y), {x}, [x, f, self](Graph& g, const Tensor<T>& gy) {
      g.accumulate(x, ops::pointwise_backward(g.value(x), g.nodes_[self].value, gy, f));
    }, ops::name(f));
  }

  Var add_channel_bias(Var x, Var b) {
    auto y = ops::add_channel_bias(value(x), value(b));
    return custom(std::move(y), {x, b}, [x, b](Graph& g, const Tensor<T>& gy) {
      g.accumulate(x, gy);
      if (g.requires_grad(b)) g.accumulate(b, ops::channel_bias_grad(gy));
    }, "add_channel_bias");
  }

  Var add_row_bias(Var x, Var b) {
    auto y = ops::add_row_bias(value(x), value(b));
    return custom(std::move(y), {x, b}, [x, b](Graph& g, const Tensor<T>& gy) {
      g.accumulate(x, gy);
      if (g.requires_grad(b)) g.accumulate(b, ops::row_bias_grad(gy));
    }, "add_row_bias");
  }

  Var add(Var a, Var b) {
    return custom(ops::add(value(a), value(b)), {a, b}, [a, b](Graph& g, const Tensor<T>& gy) {
      g.accumulate(a, gy);
      g.accumulate(b, gy);
    }, "add");
  }

  /// s * x for a learnable scalar s of shape [1].
  Var scale(Var x, Var s) {
    if (value(s).size() != 1) throw ShapeError("scale: factor must hold exactly one value");
    Tensor<T> y = value(x);
    const T factor = value(s)[0];
    for (auto& v : y.data()) v *= factor;
    return custom(std::move(y), {x, s}, [x, s](Graph& g, const Tensor<T>& gy) {
      if (g.requires_grad(x)) {
        Tensor<T> gx = gy;
        const T factor = g.value(s)[0];
        for (auto& v : gx.data()) v *= factor;
        g.accumulate(x, gx);
      }
      if (g.requires_grad(s)) g.accumulate(s, Tensor<T>({1}, {dot(gy, g.value(x))}));
    }, "scale");
  }

  /// a * x + b with constant a, b.
  Var affine(Var x, T a, T b) {
    Tensor<T> y = value(x);
    for (auto& v : y.data()) v = a * v + b;
    return custom(std::move(y), {x}, [x, a](Graph& g, const Tensor<T>& gy) {
      Tensor<T> gx = gy;
      for (auto& v : gx.data()) v *= a;
      g.accumulate(x, gx);
    }, "affine");
  }

  Var reshape(Var x, Shape shape) {
    auto y = value(x).reshaped(std::move(shape));
    return custom(std::move(y), {x}, [x](Graph& g, const Tensor<T>& gy) {
      g.accumulate(x, gy.reshaped(g.value(x).shape()));
    }, "reshape");
  }

  Var concat_cols(Var a, Var b) {
    auto y = ops::concat_cols(value(a), value(b));
    return custom(std::move(y), {a, b}, [a, b](Graph& g, const Tensor<T>& gy) {
      const std::size_t n = gy.dim(0), ca = g.value(a).dim(1), cb = g.value(b).dim(1);
      Tensor<T> ga({n, ca}), gb({n, cb});
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(gy.ptr() + i * (ca + cb), ca, ga.ptr() + i * ca);
        std::copy_n(gy.ptr() + i * (ca + cb) + ca, cb, gb.ptr() + i * cb);
      }
      g.accumulate(a, ga);
      g.accumulate(b, gb);
    }, "concat_cols");
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward, const char* what) {
    require_finite(value, what);
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace avf
