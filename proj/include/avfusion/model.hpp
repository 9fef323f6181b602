#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "avfusion/audio.hpp"
#include "avfusion/boxes.hpp"
#include "avfusion/detect_head.hpp"
#include "avfusion/encoders.hpp"
#include "avfusion/fusion.hpp"
#include "avfusion/params.hpp"
#include "avfusion/tnsr.hpp"

namespace avf {

struct ModelConfig {
  EncoderConfig encoder = make_encoder_config();
  std::size_t num_anchors = 5;
  // Initial objectness prior; the confidence bias starts at logit(prior).
  double conf_prior = 0.01;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"num_anchors", c.num_anchors}, {"conf_prior", c.conf_prior}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("encoder").get_to(c.encoder), j.at("num_anchors").get_to(c.num_anchors);
  c.conf_prior = j.value("conf_prior", 0.01);
}

inline void validate(const ModelConfig& c) {
  validate(c.encoder);
  if (c.num_anchors == 0) throw std::invalid_argument("model config: num_anchors must be positive");
  if (!(c.conf_prior > 0.0 && c.conf_prior < 1.0))
    throw std::invalid_argument("model config: conf_prior must lie in (0, 1)");
}

/// Encoder parameters followed by fusion.gamma_a, fusion.gamma_v (both 0) and
/// the head rpn.weight [2D, K*8], rpn.bias [K*8].
template <class T>
ParamSet<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(derive_seed(seed, 0, 0x1417));
  ParamSet<T> p;
  init_encoder_params(c.encoder, rng, p);
  p.add("fusion.gamma_a", Tensor<T>({1}));
  p.add("fusion.gamma_v", Tensor<T>({1}));
  const std::size_t in = 2 * c.encoder.feat_dim, out = c.num_anchors * kRawPerAnchor;
  p.add("rpn.weight", fan_in_uniform<T>({in, out}, static_cast<double>(in), false, rng));
  Tensor<T> bias({out});
  for (std::size_t a = 0; a < c.num_anchors; ++a)
    bias[a * kRawPerAnchor + 4] = static_cast<T>(std::log(c.conf_prior / (1.0 - c.conf_prior)));
  p.add("rpn.bias", std::move(bias));
  return p;
}

struct ForwardVars {
  Var f_v, f_a;
  AttentionVars attention;
  Var fused, raw;
};

/// clip [C, T, H, W], mel [mics, bins, frames] -> raw head output [H, W, K, 8].
template <class T>
ForwardVars forward(Graph<T>& g, Var clip, Var mel, const BoundParams<T>& p, const ModelConfig& c) {
  ForwardVars f;
  f.f_v = encode_video(g, clip, p, c.encoder);
  f.f_a = encode_audio(g, mel, p, c.encoder);
  f.attention = bidir_attention(g, f.f_v, f.f_a, p["fusion.gamma_a"], p["fusion.gamma_v"]);
  f.fused = concat_features(g, f.attention.f_v, f.attention.f_a);
  f.raw = rpn_forward(g, f.fused, p["rpn.weight"], p["rpn.bias"]);
  return f;
}

/// Trained model: architecture, anchors and parameters, plus free-form
/// training state carried through checkpoints.
struct Model {
  ModelConfig config;
  AnchorSet anchors;
  ParamSet<float> params;
  nlohmann::json state = nlohmann::json::object();
};

template <class T>
Tensor<T> predict_raw(const Model& m, const ParamSet<T>& params, const Tensor<T>& clip, const Tensor<T>& mel) {
  Graph<T> g;
  const auto b = bind(g, params, false);
  return g.value(forward(g, g.leaf(clip), g.leaf(mel), b, m.config).raw);
}

/// Decoded, thresholded and suppressed detections for one clip.
template <class T>
std::vector<Detection> detect(const Model& m, const ParamSet<T>& params, const Tensor<T>& clip, const Tensor<T>& mel,
                              double conf_thresh = 0.25, double nms_iou = 0.5) {
  return nms(decode_boxes(predict_raw(m, params, clip, mel), m.anchors), nms_iou, conf_thresh);
}

inline std::vector<Detection> detect(const Model& m, const Tensor<float>& clip, const Tensor<float>& mel,
                                     double conf_thresh = 0.25, double nms_iou = 0.5) {
  return detect(m, m.params, clip, mel, conf_thresh, nms_iou);
}

/// Model audio input: log-mel stack with the default STFT settings.
inline Tensor<float> audio_features(const audio::AudioChunk& chunk) {
  return audio::mel_spectrogram(chunk).cast<float>();
}

// ---------------------------------------------------------------------------
// Checkpoints: "AVFCKPT1", u64 header length, JSON header, then one TNSR
// record per parameter in header order.

inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'F', 'C', 'K', 'P', 'T', '1'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void save_checkpoint(const std::filesystem::path& path, const Model& m) {
  nlohmann::json header;
  header["config"] = m.config;
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& [w, h] : m.anchors.priors) anchors.push_back({w, h});
  header["anchors"] = anchors;
  header["state"] = m.state;
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t i = 0; i < m.params.size(); ++i) names.push_back(m.params.name(i));
  header["params"] = names;
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, 8);
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < m.params.size(); ++i) tnsr::write(os, m.params[i]);
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string where = path.string();
  char magic[8];
  std::uint64_t len = 0;
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError(where + ": not a checkpoint");
  if (!is.read(reinterpret_cast<char*>(&len), 8) || len > (1u << 26))
    throw CheckpointError(where + ": bad header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError(where + ": truncated header");
  Model m;
  try {
    const auto header = nlohmann::json::parse(text);
    m.config = header.at("config").get<ModelConfig>();
    for (const auto& a : header.at("anchors")) m.anchors.priors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    m.state = header.value("state", nlohmann::json::object());
    for (const auto& n : header.at("params")) m.params.add(n.get<std::string>(), tnsr::read<float>(is, where));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": malformed header: " + e.what());
  } catch (const tnsr::FormatError& e) {
    throw CheckpointError(where + ": " + e.what());
  }
  try {
    validate(m.config);
    m.anchors.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(where + ": " + e.what());
  }
  if (m.anchors.size() != m.config.num_anchors) throw CheckpointError(where + ": anchor count mismatch");
  const auto expect = init_params<float>(m.config, 0);
  if (expect.size() != m.params.size()) throw CheckpointError(where + ": parameter count mismatch");
  for (std::size_t i = 0; i < expect.size(); ++i)
    if (expect.name(i) != m.params.name(i) || expect[i].shape() != m.params[i].shape())
      throw CheckpointError(where + ": parameter '" + m.params.name(i) + "' does not match the architecture");
  return m;
}

}  // namespace avf
