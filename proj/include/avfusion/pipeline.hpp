#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "avfusion/detect_head.hpp"
#include "avfusion/metrics.hpp"
#include "avfusion/model.hpp"
#include "avfusion/synth.hpp"
#include "avfusion/train.hpp"

namespace avf {

/// Examples rendered on demand from a scene generator.
inline TrainSource synth_source(const SceneGenerator& gen) {
  return {gen.size(), [&gen](std::size_t i) {
            const Sample s = gen.generate(i);
            return TrainItem{s.video, audio_features(s.audio), s.boxes};
          }};
}

/// Examples read from a validated dataset, restricted to `indices`.
inline TrainSource dataset_source(const Dataset& ds, std::vector<std::size_t> indices) {
  const std::size_t n = indices.size();
  return {n, [&ds, idx = std::move(indices)](std::size_t i) {
            const std::size_t k = idx.at(i);
            return TrainItem{ds.load_video(k), audio_features(ds.load_audio(k)), ds.truth(k)};
          }};
}

/// Log-mel features of a scene generator's audio, computed once and held as
/// 16-bit codes on a fixed grid (step 64 / 65535 over [-32, 32]), with video
/// still rendered on demand. Cuts per-epoch cost for repeated passes.
class CachedSynthSource {
 public:
  static constexpr double kLo = -32.0, kHi = 32.0;

  explicit CachedSynthSource(const SceneGenerator& gen) : gen_(gen), codes_(gen.size()) {
    parallel_for(gen.size(), [&](std::size_t i) {
      const auto mel = audio::mel_spectrogram(gen.render_audio(gen.plan(i)));
      if (i == 0) shape_ = mel.shape();
      auto& c = codes_[i];
      c.resize(mel.size());
      for (std::size_t k = 0; k < mel.size(); ++k) c[k] = encode(mel[k]);
    });
    if (shape_.empty()) shape_ = audio::mel_spectrogram(gen.render_audio(gen.plan(0))).shape();
  }

  static std::uint16_t encode(double v) {
    const double t = (std::clamp(v, kLo, kHi) - kLo) / (kHi - kLo);
    return static_cast<std::uint16_t>(std::lround(t * 65535.0));
  }
  static float decode(std::uint16_t c) { return static_cast<float>(kLo + (kHi - kLo) * c / 65535.0); }

  Tensor<float> mel(std::size_t i) const {
    Tensor<float> out(shape_);
    const auto& c = codes_.at(i);
    for (std::size_t k = 0; k < c.size(); ++k) out[k] = decode(c[k]);
    return out;
  }

  TrainItem item(std::size_t i) const {
    const Scene s = gen_.plan(i);
    return {gen_.render_video(s), mel(i), gen_.boxes(s)};
  }

  TrainSource source() const {
    return {gen_.size(), [this](std::size_t i) { return item(i); }};
  }

 private:
  const SceneGenerator& gen_;
  Shape shape_;
  std::vector<std::vector<std::uint16_t>> codes_;
};

/// Log-mel features of an all-zero recording with the given geometry.
inline Tensor<float> silence_features(const InputGeometry& g, std::size_t sample_rate = 48000,
                                      std::size_t hop = 512) {
  audio::AudioChunk chunk;
  chunk.sample_rate = sample_rate;
  chunk.samples = Tensor<float>({g.mics, (g.mel_frames - 1) * hop});
  return audio_features(chunk);
}

/// Anchors from the training boxes of a source.
inline AnchorSet anchors_from_boxes(const std::vector<BoundingBox>& boxes, std::size_t k, std::uint64_t seed) {
  std::vector<std::pair<double, double>> sizes;
  for (const auto& b : boxes) sizes.emplace_back(b.w, b.h);
  return kmeans_anchors(sizes, k, seed).anchors;
}

struct DetectOptions {
  double conf_thresh = 0.25, nms_iou = 0.5;
  bool zero_audio = false;  // replace the audio input with the features of silence
};

/// Runs the detector over every example; output order follows the source.
inline std::vector<ImageDetections> detect_all(const Model& m, const TrainSource& src,
                                               const std::vector<std::string>& ids, const DetectOptions& opt = {}) {
  std::vector<ImageDetections> out(src.size);
  const Tensor<float> silence = opt.zero_audio ? silence_features(m.config.encoder.input) : Tensor<float>();
  parallel_for(src.size, [&](std::size_t i) {
    const TrainItem item = src.get(i);
    out[i] = {ids.at(i), detect(m, item.clip, opt.zero_audio ? silence : item.mel, opt.conf_thresh, opt.nms_iou)};
  });
  return out;
}

}  // namespace avf
