#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "avfusion/graph.hpp"
#include "avfusion/params.hpp"
#include "avfusion/rng.hpp"

namespace avf {

/// Input tensor geometry: video clip [channels, frames, height, width] and
/// log-mel stack [mics, mel_bins, mel_frames].
struct InputGeometry {
  std::size_t channels = 3, frames = 16, height = 224, width = 224;
  std::size_t mics = 6, mel_bins = 128, mel_frames = 469;

  friend bool operator==(const InputGeometry&, const InputGeometry&) = default;
};

struct Conv3dLayer {
  std::size_t out_channels = 0;
  std::array<std::size_t, 3> kernel{}, stride{1, 1, 1}, padding{};
  bool activation = true;

  friend bool operator==(const Conv3dLayer&, const Conv3dLayer&) = default;
};

/// A 2D convolution, or a transposed one when used in the deconv chain.
struct Conv2dLayer {
  std::size_t out_channels = 0;
  std::array<std::size_t, 2> kernel{}, stride{1, 1}, padding{};
  bool activation = true;

  friend bool operator==(const Conv2dLayer&, const Conv2dLayer&) = default;
};

struct EncoderConfig {
  InputGeometry input;
  std::size_t grid_h = 7, grid_w = 7, feat_dim = 64;
  std::vector<Conv3dLayer> video;
  std::vector<Conv2dLayer> audio, deconv;
  // Log-mel values are mapped through scale * x + shift before the first layer;
  // the default puts the synthetic noise floor (about -3.3) near 0.
  double audio_scale = 0.5, audio_shift = 1.65;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

namespace detail {

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

inline std::size_t deconv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  const std::size_t full = (in - 1) * s + k;
  return full > 2 * p ? full - 2 * p : 0;
}

/// Largest non-overlapping stride <= target (and <= n / 2) that tiles n
/// exactly once symmetric padding is allowed. Returns {stride, padding}.
inline std::pair<std::size_t, std::size_t> tiling_stride(std::size_t n, std::size_t target) {
  for (std::size_t s = std::min(target, std::max<std::size_t>(n / 2, 1)); s > 1; --s)
    for (std::size_t p = 0; 2 * p < s; ++p)
      if ((n + 2 * p) % s == 0) return {s, p};
  return {1, 0};
}

/// Splits `n` into `layers` factors: later layers take 2 while `n` stays
/// divisible, the first layer takes the remainder.
inline std::vector<std::size_t> split_factors(std::size_t n, std::size_t layers) {
  std::vector<std::size_t> f(layers, 1);
  std::size_t rest = n;
  for (std::size_t l = layers; l-- > 1;)
    if (rest % 2 == 0) f[l] = 2, rest /= 2;
  f[0] = rest;
  return f;
}

}  // namespace detail

/// Default architecture for the given geometry: a four-layer strided 3D conv
/// stack for video; for audio three 2D convs down to a 2x2 map followed by two
/// transposed convs up to the grid. Both end at grid_h x grid_w x feat_dim.
inline EncoderConfig make_encoder_config(const InputGeometry& in = {}, std::size_t grid_h = 7,
                                         std::size_t grid_w = 7, std::size_t feat_dim = 64) {
  if (grid_h < 3 || grid_w < 3) throw std::invalid_argument("encoder config: grid must be at least 3x3");
  if (feat_dim < 4) throw std::invalid_argument("encoder config: feat_dim must be at least 4");
  if (in.height % grid_h != 0 || in.width % grid_w != 0)
    throw std::invalid_argument("encoder config: frame size " + std::to_string(in.height) + "x" +
                                std::to_string(in.width) + " is not a multiple of the grid");
  if (in.mel_bins < 4 || in.mel_frames < 4) throw std::invalid_argument("encoder config: mel input too small");
  EncoderConfig c;
  c.input = in;
  c.grid_h = grid_h, c.grid_w = grid_w, c.feat_dim = feat_dim;
  const std::size_t D = feat_dim;

  // Layer 4 keeps the temporal extent it is given (kernel = remaining frames)
  // and mixes a 3x3 neighbourhood of cells.
  const auto t = detail::split_factors(in.frames, 4);
  const auto fh = detail::split_factors(in.height / grid_h, 3), fw = detail::split_factors(in.width / grid_w, 3);
  const std::size_t ch[4] = {std::max<std::size_t>(D / 8, 2), D / 4, D / 2, D};
  for (std::size_t l = 0; l < 3; ++l)
    c.video.push_back({ch[l], {t[l], fh[l], fw[l]}, {t[l], fh[l], fw[l]}, {0, 0, 0}, true});
  c.video.push_back({ch[3], {t[3], 3, 3}, {1, 1, 1}, {0, 1, 1}, false});

  std::size_t h = in.mel_bins, w = in.mel_frames;
  for (std::size_t target : {8u, 4u}) {
    const auto [sh, ph] = detail::tiling_stride(h, target);
    const auto [sw, pw] = detail::tiling_stride(w, target);
    c.audio.push_back({c.audio.empty() ? D / 4 : D / 2, {sh, sw}, {sh, sw}, {ph, pw}, true});
    h = (h + 2 * ph) / sh, w = (w + 2 * pw) / sw;
  }
  if (h < 2 || w < 2) throw std::invalid_argument("encoder config: mel input too small for the audio stack");
  c.audio.push_back({D / 2, {h - h / 2, w - w / 2}, {h / 2, w / 2}, {0, 0}, true});

  // 2x2 -> 5x5 (or 3x3 for small grids) -> grid.
  const auto first = [](std::size_t g) { return g >= 5 ? std::pair<std::size_t, std::size_t>{3, 2}
                                                       : std::pair<std::size_t, std::size_t>{2, 1}; };
  const auto [kh, sh] = first(grid_h);
  const auto [kw, sw] = first(grid_w);
  c.deconv.push_back({D / 2, {kh, kw}, {sh, sw}, {0, 0}, true});
  const std::size_t mh = detail::deconv_extent(2, kh, sh, 0), mw = detail::deconv_extent(2, kw, sw, 0);
  c.deconv.push_back({D, {grid_h - mh + 1, grid_w - mw + 1}, {1, 1}, {0, 0}, false});
  return c;
}

/// Throws std::invalid_argument unless both stacks end at grid_h x grid_w x feat_dim.
inline void validate(const EncoderConfig& c) {
  if (c.video.empty() || c.audio.empty() || c.deconv.empty())
    throw std::invalid_argument("encoder config: empty layer stack");
  std::size_t t = c.input.frames, h = c.input.height, w = c.input.width;
  for (const auto& l : c.video) {
    for (std::size_t a = 0; a < 3; ++a)
      if (l.kernel[a] == 0 || l.stride[a] == 0 || l.out_channels == 0)
        throw std::invalid_argument("encoder config: zero-sized video layer");
    t = detail::conv_extent(t, l.kernel[0], l.stride[0], l.padding[0]);
    h = detail::conv_extent(h, l.kernel[1], l.stride[1], l.padding[1]);
    w = detail::conv_extent(w, l.kernel[2], l.stride[2], l.padding[2]);
    if (t == 0 || h == 0 || w == 0) throw std::invalid_argument("encoder config: video stack shrinks to nothing");
  }
  if (t != 1 || h != c.grid_h || w != c.grid_w || c.video.back().out_channels != c.feat_dim)
    throw std::invalid_argument("encoder config: video stack ends at " + std::to_string(t) + "x" +
                                std::to_string(h) + "x" + std::to_string(w) + "x" +
                                std::to_string(c.video.back().out_channels));
  h = c.input.mel_bins, w = c.input.mel_frames;
  for (const auto& l : c.audio) {
    if (l.kernel[0] == 0 || l.kernel[1] == 0 || l.stride[0] == 0 || l.stride[1] == 0 || l.out_channels == 0)
      throw std::invalid_argument("encoder config: zero-sized audio layer");
    h = detail::conv_extent(h, l.kernel[0], l.stride[0], l.padding[0]);
    w = detail::conv_extent(w, l.kernel[1], l.stride[1], l.padding[1]);
    if (h == 0 || w == 0) throw std::invalid_argument("encoder config: audio stack shrinks to nothing");
  }
  for (const auto& l : c.deconv) {
    if (l.kernel[0] == 0 || l.kernel[1] == 0 || l.stride[0] == 0 || l.stride[1] == 0 || l.out_channels == 0)
      throw std::invalid_argument("encoder config: zero-sized deconv layer");
    h = detail::deconv_extent(h, l.kernel[0], l.stride[0], l.padding[0]);
    w = detail::deconv_extent(w, l.kernel[1], l.stride[1], l.padding[1]);
    if (h == 0 || w == 0) throw std::invalid_argument("encoder config: deconv chain collapses");
  }
  if (h != c.grid_h || w != c.grid_w || c.deconv.back().out_channels != c.feat_dim)
    throw std::invalid_argument("encoder config: audio branch ends at " + std::to_string(h) + "x" +
                                std::to_string(w) + "x" + std::to_string(c.deconv.back().out_channels));
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const InputGeometry& g) {
  j = {{"channels", g.channels}, {"frames", g.frames},     {"height", g.height},        {"width", g.width},
       {"mics", g.mics},         {"mel_bins", g.mel_bins}, {"mel_frames", g.mel_frames}};
}
inline void from_json(const nlohmann::json& j, InputGeometry& g) {
  j.at("channels").get_to(g.channels), j.at("frames").get_to(g.frames), j.at("height").get_to(g.height);
  j.at("width").get_to(g.width), j.at("mics").get_to(g.mics), j.at("mel_bins").get_to(g.mel_bins);
  j.at("mel_frames").get_to(g.mel_frames);
}
inline void to_json(nlohmann::json& j, const Conv3dLayer& l) {
  j = {{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride},
       {"padding", l.padding},           {"activation", l.activation}};
}
inline void from_json(const nlohmann::json& j, Conv3dLayer& l) {
  j.at("out_channels").get_to(l.out_channels), j.at("kernel").get_to(l.kernel), j.at("stride").get_to(l.stride);
  j.at("padding").get_to(l.padding), j.at("activation").get_to(l.activation);
}
inline void to_json(nlohmann::json& j, const Conv2dLayer& l) {
  j = {{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride},
       {"padding", l.padding},           {"activation", l.activation}};
}
inline void from_json(const nlohmann::json& j, Conv2dLayer& l) {
  j.at("out_channels").get_to(l.out_channels), j.at("kernel").get_to(l.kernel), j.at("stride").get_to(l.stride);
  j.at("padding").get_to(l.padding), j.at("activation").get_to(l.activation);
}
inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"input", c.input},   {"grid_h", c.grid_h},          {"grid_w", c.grid_w},
       {"feat_dim", c.feat_dim}, {"video", c.video},       {"audio", c.audio},
       {"deconv", c.deconv}, {"audio_scale", c.audio_scale}, {"audio_shift", c.audio_shift}};
}
inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  j.at("input").get_to(c.input), j.at("grid_h").get_to(c.grid_h), j.at("grid_w").get_to(c.grid_w);
  j.at("feat_dim").get_to(c.feat_dim), j.at("video").get_to(c.video), j.at("audio").get_to(c.audio);
  j.at("deconv").get_to(c.deconv), j.at("audio_scale").get_to(c.audio_scale);
  j.at("audio_shift").get_to(c.audio_shift);
}

// ---------------------------------------------------------------------------
// Parameters

/// Uniform(-b, b) with b = sqrt(gain * 3 / fan_in): gain 2 ahead of a leaky
/// ReLU, 1 for linear outputs.
template <class T>
Tensor<T> fan_in_uniform(Shape shape, double fan_in, bool rectified, Rng& rng) {
  const double bound = std::sqrt((rectified ? 6.0 : 3.0) / fan_in);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Adds video.*, audio.* and deconv.* weights and biases. Kernel layouts:
/// conv3d [Co, Ci, kt, kh, kw], conv2d [Co, Ci, kh, kw], transposed
/// conv2d [Ci, Co, kh, kw].
template <class T>
void init_encoder_params(const EncoderConfig& c, Rng& rng, ParamSet<T>& p) {
  std::size_t ci = c.input.channels;
  for (std::size_t l = 0; l < c.video.size(); ++l) {
    const auto& L = c.video[l];
    const double fan = static_cast<double>(ci * L.kernel[0] * L.kernel[1] * L.kernel[2]);
    const std::string n = "video." + std::to_string(l);
    p.add(n + ".weight", fan_in_uniform<T>({L.out_channels, ci, L.kernel[0], L.kernel[1], L.kernel[2]}, fan,
                                           L.activation, rng));
    p.add(n + ".bias", Tensor<T>({L.out_channels}));
    ci = L.out_channels;
  }
  ci = c.input.mics;
  for (std::size_t l = 0; l < c.audio.size(); ++l) {
    const auto& L = c.audio[l];
    const std::string n = "audio." + std::to_string(l);
    p.add(n + ".weight", fan_in_uniform<T>({L.out_channels, ci, L.kernel[0], L.kernel[1]},
                                           static_cast<double>(ci * L.kernel[0] * L.kernel[1]), L.activation, rng));
    p.add(n + ".bias", Tensor<T>({L.out_channels}));
    ci = L.out_channels;
  }
  for (std::size_t l = 0; l < c.deconv.size(); ++l) {
    const auto& L = c.deconv[l];
    const std::string n = "deconv." + std::to_string(l);
    // Each output sees about ci * kh * kw / (sh * sw) inputs.
    const double fan = static_cast<double>(ci * L.kernel[0] * L.kernel[1]) /
                       static_cast<double>(L.stride[0] * L.stride[1]);
    p.add(n + ".weight", fan_in_uniform<T>({ci, L.out_channels, L.kernel[0], L.kernel[1]}, fan, L.activation, rng));
    p.add(n + ".bias", Tensor<T>({L.out_channels}));
    ci = L.out_channels;
  }
}

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

/// [D, h, w] (optionally with a unit time axis) -> [h, w, D].
template <class T>
Var channels_last(Graph<T>& g, Var x) {
  const Shape s = g.value(x).shape();
  const std::size_t d = s.front(), h = s[s.size() - 2], w = s.back();
  return g.reshape(g.transpose(g.reshape(x, {d, h * w})), {h, w, d});
}

}  // namespace detail

/// clip [C, T, H, W] -> F_v [grid_h, grid_w, D].
template <class T>
Var encode_video(Graph<T>& g, Var clip, const BoundParams<T>& p, const EncoderConfig& c) {
  const Shape expect{c.input.channels, c.input.frames, c.input.height, c.input.width};
  if (g.value(clip).shape() != expect)
    throw ShapeError("encode_video: clip " + to_string(g.value(clip).shape()) + " does not match " + to_string(expect));
  Var x = clip;
  for (std::size_t l = 0; l < c.video.size(); ++l) {
    const auto& L = c.video[l];
    const std::string n = "video." + std::to_string(l);
    x = g.add_channel_bias(g.conv3d(x, p[n + ".weight"], {L.stride, L.padding}), p[n + ".bias"]);
    if (L.activation) x = g.pointwise(x, ops::Pointwise::leaky_relu);
  }
  return detail::channels_last(g, x);
}

/// log-mel [mics, mel_bins, mel_frames] -> F_a [grid_h, grid_w, D].
template <class T>
Var encode_audio(Graph<T>& g, Var mel, const BoundParams<T>& p, const EncoderConfig& c) {
  const Shape expect{c.input.mics, c.input.mel_bins, c.input.mel_frames};
  if (g.value(mel).shape() != expect)
    throw ShapeError("encode_audio: mel " + to_string(g.value(mel).shape()) + " does not match " + to_string(expect));
  Var x = g.affine(mel, static_cast<T>(c.audio_scale), static_cast<T>(c.audio_shift));
  for (std::size_t l = 0; l < c.audio.size(); ++l) {
    const auto& L = c.audio[l];
    const std::string n = "audio." + std::to_string(l);
    x = g.add_channel_bias(g.conv2d(x, p[n + ".weight"], {L.stride, L.padding}), p[n + ".bias"]);
    if (L.activation) x = g.pointwise(x, ops::Pointwise::leaky_relu);
  }
  for (std::size_t l = 0; l < c.deconv.size(); ++l) {
    const auto& L = c.deconv[l];
    const std::string n = "deconv." + std::to_string(l);
    x = g.add_channel_bias(g.conv_transpose2d(x, p[n + ".weight"], {L.stride, L.padding}), p[n + ".bias"]);
    if (L.activation) x = g.pointwise(x, ops::Pointwise::leaky_relu);
  }
  return detail::channels_last(g, x);
}

}  // namespace avf
