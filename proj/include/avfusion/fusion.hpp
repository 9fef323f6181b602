#pragma once

#include "avfusion/graph.hpp"

namespace avf {

/// [H, W, D] -> [H * W, D]; row i is cell (i / W, i % W).
template <class T>
Tensor<T> flatten_spatial(const Tensor<T>& f) {
  if (f.rank() != 3) throw ShapeError("flatten_spatial: expected [H, W, D], got " + to_string(f.shape()));
  return f.reshaped({f.dim(0) * f.dim(1), f.dim(2)});
}

template <class T>
Tensor<T> unflatten_spatial(const Tensor<T>& f, std::size_t h, std::size_t w) {
  if (f.rank() != 2 || f.dim(0) != h * w)
    throw ShapeError("unflatten_spatial: " + to_string(f.shape()) + " is not " + std::to_string(h * w) + " rows");
  return f.reshaped({h, w, f.dim(1)});
}

struct AttentionVars {
  Var f_v, f_a;     // reweighted maps [H, W, D]
  Var w_av, w_va;   // row-stochastic [N, N]
};

/// Gram matrix G = F_v F_a^T over flattened cells; W_av = softmax_rows(G),
/// W_va = softmax_rows(G^T). Audio is gathered onto visual cells through W_av,
/// video onto audio cells through W_va, and each result is added back to its
/// own modality scaled by a learnable scalar.
template <class T>
AttentionVars bidir_attention(Graph<T>& g, Var f_v, Var f_a, Var gamma_a, Var gamma_v) {
  const Shape s = g.value(f_v).shape();
  if (s.size() != 3 || g.value(f_a).shape() != s)
    throw ShapeError("bidir_attention: feature maps " + to_string(s) + " and " + to_string(g.value(f_a).shape()) +
                     " must be equal [H, W, D]");
  const Shape flat{s[0] * s[1], s[2]};
  Var v = g.reshape(f_v, flat), a = g.reshape(f_a, flat);
  Var gram = g.matmul(v, g.transpose(a));
  Var w_av = g.softmax_rows(gram);
  Var w_va = g.softmax_rows(g.transpose(gram));
  Var a_moved = g.reshape(g.matmul(w_av, a), s);
  Var v_moved = g.reshape(g.matmul(w_va, v), s);
  return {g.add(g.scale(v_moved, gamma_v), f_v), g.add(g.scale(a_moved, gamma_a), f_a), w_av, w_va};
}

template <class T>
struct AttentionResult {
  Tensor<T> f_v, f_a, w_av, w_va;
};

template <class T>
AttentionResult<T> bidir_attention(const Tensor<T>& f_v, const Tensor<T>& f_a, T gamma_a, T gamma_v) {
  Graph<T> g;
  const auto r = bidir_attention(g, g.leaf(f_v), g.leaf(f_a), g.leaf(Tensor<T>({1}, gamma_a)),
                                 g.leaf(Tensor<T>({1}, gamma_v)));
  return {g.value(r.f_v), g.value(r.f_a), g.value(r.w_av), g.value(r.w_va)};
}

/// [H, W, D] x 2 -> [H, W, 2D]; video channels first.
template <class T>
Var concat_features(Graph<T>& g, Var f_v, Var f_a) {
  const Shape s = g.value(f_v).shape();
  if (s.size() != 3 || g.value(f_a).shape() != s)
    throw ShapeError("concat_features: feature maps " + to_string(s) + " and " + to_string(g.value(f_a).shape()) +
                     " must be equal [H, W, D]");
  const Shape flat{s[0] * s[1], s[2]};
  return g.reshape(g.concat_cols(g.reshape(f_v, flat), g.reshape(f_a, flat)), {s[0], s[1], 2 * s[2]});
}

template <class T>
Tensor<T> concat_features(const Tensor<T>& f_v, const Tensor<T>& f_a) {
  Graph<T> g;
  return g.value(concat_features(g, g.leaf(f_v), g.leaf(f_a)));
}

}  // namespace avf
