#pragma once

#include <string>
#include <vector>

#include "avfusion/fusion.hpp"
#include "avfusion/grad_check.hpp"
#include "avfusion/losses.hpp"
#include "avfusion/model.hpp"

namespace avf {

struct GradCheckRow {
  std::string op;
  GradCheckResult result;
};

namespace detail {

inline Tensor<double> probe_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

/// Tiny model used for end-to-end gradient checks: 3x3 grid, D = 8.
inline ModelConfig tiny_model_config() {
  InputGeometry g;
  g.channels = 3, g.frames = 4, g.height = 12, g.width = 12;
  g.mics = 2, g.mel_bins = 8, g.mel_frames = 9;
  ModelConfig c;
  c.encoder = make_encoder_config(g, 3, 3, 8);
  c.num_anchors = 2;
  return c;
}

/// Encoder -> attention -> RPN -> loss on the tiny config with nonzero
/// gammas and biases, in double precision.
inline GradCheckResult pipeline_grad_check(std::uint64_t seed = 1) {
  const ModelConfig c = tiny_model_config();
  ParamSet<double> p = init_params<double>(c, seed);
  Rng rng(derive_seed(seed, 1));
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i).ends_with(".bias"))
      for (auto& v : p[i].data()) v = rng.uniform(-0.2, 0.2);
  p.get("fusion.gamma_a")[0] = 0.6;
  p.get("fusion.gamma_v")[0] = -0.4;
  AnchorSet anchors{{{0.2, 0.2}, {0.3, 0.4}}};
  const std::vector<BoundingBox> boxes = {{0.5, 0.5, 0.3, 0.4, VehicleClass::idling},
                                          {0.15, 0.8, 0.2, 0.2, VehicleClass::moving}};
  const TargetGrid targets = assign_targets(boxes, anchors, c.encoder.grid_h, c.encoder.grid_w);
  const auto& g = c.encoder.input;
  std::vector<Tensor<double>> inputs = {detail::probe_tensor({g.channels, g.frames, g.height, g.width}, seed + 10, 0, 1),
                                        detail::probe_tensor({g.mics, g.mel_bins, g.mel_frames}, seed + 11, -5, 1)};
  for (std::size_t i = 0; i < p.size(); ++i) inputs.push_back(p[i]);
  return grad_check(
      [&](Graph<double>& gr, std::span<const Var> v) {
        const BoundParams<double> b{&p, {v.begin() + 2, v.end()}};
        return detection_loss(gr, forward(gr, v[0], v[1], b, c).raw, targets);
      },
      std::move(inputs));
}

/// Central-difference check of every recorded op and of the composed
/// network, each on small random inputs.
inline std::vector<GradCheckRow> gradient_suite() {
  using detail::probe_tensor;
  using V = std::span<const Var>;
  using G = Graph<double>;
  std::vector<GradCheckRow> rows;
  auto add = [&](const char* name, const GraphFn& fn, std::vector<Tensor<double>> inputs) {
    rows.push_back({name, grad_check(fn, std::move(inputs))});
  };
  add("matmul", [](G& g, V v) { return g.matmul(v[0], v[1]); }, {probe_tensor({3, 4}, 1), probe_tensor({4, 2}, 2)});
  add("transpose", [](G& g, V v) { return g.transpose(v[0]); }, {probe_tensor({4, 3}, 3)});
  add("softmax_rows", [](G& g, V v) { return g.softmax_rows(v[0]); }, {probe_tensor({4, 5}, 4, -2, 2)});
  add("conv3d", [](G& g, V v) { return g.conv3d(v[0], v[1], {{2, 1, 2}, {0, 1, 1}}); },
      {probe_tensor({2, 4, 4, 5}, 5), probe_tensor({2, 2, 2, 3, 3}, 6)});
  add("conv2d", [](G& g, V v) { return g.conv2d(v[0], v[1], {{2, 1}, {1, 1}}); },
      {probe_tensor({2, 7, 5}, 7), probe_tensor({3, 2, 3, 3}, 8)});
  add("conv_transpose2d", [](G& g, V v) { return g.conv_transpose2d(v[0], v[1], {{2, 2}, {1, 0}}); },
      {probe_tensor({2, 3, 3}, 9), probe_tensor({2, 3, 3, 2}, 10)});
  add("sigmoid", [](G& g, V v) { return g.pointwise(v[0], ops::Pointwise::sigmoid); }, {probe_tensor({10}, 11, -3, 3)});
  add("leaky_relu", [](G& g, V v) { return g.pointwise(v[0], ops::Pointwise::leaky_relu); },
      {probe_tensor({10}, 12, -3, 3)});
  add("exp", [](G& g, V v) { return g.pointwise(v[0], ops::Pointwise::exp); }, {probe_tensor({10}, 13, -2, 2)});
  add("log", [](G& g, V v) { return g.pointwise(v[0], ops::Pointwise::log); }, {probe_tensor({10}, 14, 0.1, 3)});
  add("add_channel_bias", [](G& g, V v) { return g.add_channel_bias(v[0], v[1]); },
      {probe_tensor({3, 2, 2}, 15), probe_tensor({3}, 16)});
  add("add_row_bias", [](G& g, V v) { return g.add_row_bias(v[0], v[1]); },
      {probe_tensor({4, 3}, 17), probe_tensor({3}, 18)});
  add("add", [](G& g, V v) { return g.add(v[0], v[1]); }, {probe_tensor({4, 3}, 19), probe_tensor({4, 3}, 20)});
  add("scale", [](G& g, V v) { return g.scale(v[0], v[1]); }, {probe_tensor({4, 3}, 21), probe_tensor({1}, 22)});
  add("affine", [](G& g, V v) { return g.affine(v[0], 0.1, 2.3); }, {probe_tensor({5}, 23)});
  add("reshape", [](G& g, V v) { return g.reshape(v[0], {2, 6}); }, {probe_tensor({3, 4}, 24)});
  add("concat_cols", [](G& g, V v) { return g.concat_cols(v[0], v[1]); },
      {probe_tensor({4, 3}, 25), probe_tensor({4, 2}, 26)});
  add("bidir_attention",
      [](G& g, V v) {
        const auto r = bidir_attention(g, v[0], v[1], v[2], v[3]);
        return concat_features(g, r.f_v, r.f_a);
      },
      {probe_tensor({2, 3, 4}, 27), probe_tensor({2, 3, 4}, 28), Tensor<double>({1}, 0.7), Tensor<double>({1}, -0.4)});
  {
    AnchorSet anchors{{{0.2, 0.3}, {0.5, 0.4}}};
    const std::vector<BoundingBox> boxes = {{0.4, 0.6, 0.25, 0.3, VehicleClass::engine_off}};
    const TargetGrid t = assign_targets(boxes, anchors, 2, 3);
    add("detection_loss", [t](G& g, V v) { return detection_loss(g, v[0], t); }, {probe_tensor({2, 3, 2, 8}, 29, -2, 2)});
  }
  rows.push_back({"pipeline", pipeline_grad_check()});
  return rows;
}

}  // namespace avf
