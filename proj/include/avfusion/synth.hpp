#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "avfusion/audio.hpp"
#include "avfusion/boxes.hpp"
#include "avfusion/encoders.hpp"
#include "avfusion/parallel.hpp"
#include "avfusion/rng.hpp"
#include "avfusion/tnsr.hpp"
#include "avfusion/version.hpp"
#include "avfusion/wav.hpp"

namespace avf {

/// Synthetic roadside scenes: textured rectangles over a noisy background,
/// filmed for `frames` frames and heard by `mics` microphones spaced evenly
/// along the image x axis at (c + 0.5) / mics.
struct SynthConfig {
  std::size_t n_samples = 200;
  std::uint64_t seed = 0;
  std::size_t frames = 16, height = 224, width = 224;
  std::size_t mics = 6, sample_rate = 48000;
  double audio_seconds = 5.0;
  std::size_t min_vehicles = 1, max_vehicles = 3;
  // Relative class proportions, indexed by VehicleClass.
  std::array<double, kNumClasses> class_weights{1.0, 1.0, 1.0};
  double f0_min = 80.0, f0_max = 120.0;
  std::size_t harmonics = 4;
  double tone_min = 0.05, tone_max = 0.1;  // per-vehicle amplitude of the fundamental
  double noise_amplitude = 0.01;           // uniform audio noise in [-a, a]
  double pixel_noise = 0.02;               // per-frame uniform video noise in [-a, a]
  double speed_min = 2.0, speed_max = 6.0; // px / frame for moving vehicles
  double attenuation = 0.1;                // sigma_att, in image-width units
  double size_min = 0.12, size_max = 0.3;  // box side as a fraction of the frame
  double max_overlap_iou = 0.3;
  std::size_t max_attempts = 100;

  std::size_t audio_samples() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(sample_rate) * audio_seconds));
  }
  double mic_x(std::size_t c) const { return (static_cast<double>(c) + 0.5) / static_cast<double>(mics); }

  /// Model input geometry for the default STFT (hop 512, 128 mel bins).
  InputGeometry input_geometry(const audio::MelConfig& mel = {}) const {
    InputGeometry g;
    g.channels = 3, g.frames = frames, g.height = height, g.width = width;
    g.mics = mics, g.mel_bins = mel.n_mels, g.mel_frames = audio::frame_count(audio_samples(), mel.hop);
    return g;
  }

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_samples", c.n_samples},         {"seed", c.seed},
       {"frames", c.frames},               {"height", c.height},
       {"width", c.width},                 {"mics", c.mics},
       {"sample_rate", c.sample_rate},     {"audio_seconds", c.audio_seconds},
       {"min_vehicles", c.min_vehicles},   {"max_vehicles", c.max_vehicles},
       {"class_weights", c.class_weights}, {"f0_min", c.f0_min},
       {"f0_max", c.f0_max},               {"harmonics", c.harmonics},
       {"tone_min", c.tone_min},           {"tone_max", c.tone_max},
       {"noise_amplitude", c.noise_amplitude}, {"pixel_noise", c.pixel_noise},
       {"speed_min", c.speed_min},         {"speed_max", c.speed_max},
       {"attenuation", c.attenuation},     {"size_min", c.size_min},
       {"size_max", c.size_max},           {"max_overlap_iou", c.max_overlap_iou},
       {"max_attempts", c.max_attempts}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  const SynthConfig d;
  c.n_samples = j.value("n_samples", d.n_samples);
  c.seed = j.value("seed", d.seed);
  c.frames = j.value("frames", d.frames), c.height = j.value("height", d.height), c.width = j.value("width", d.width);
  c.mics = j.value("mics", d.mics), c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.audio_seconds = j.value("audio_seconds", d.audio_seconds);
  c.min_vehicles = j.value("min_vehicles", d.min_vehicles), c.max_vehicles = j.value("max_vehicles", d.max_vehicles);
  c.class_weights = j.value("class_weights", d.class_weights);
  c.f0_min = j.value("f0_min", d.f0_min), c.f0_max = j.value("f0_max", d.f0_max);
  c.harmonics = j.value("harmonics", d.harmonics);
  c.tone_min = j.value("tone_min", d.tone_min), c.tone_max = j.value("tone_max", d.tone_max);
  c.noise_amplitude = j.value("noise_amplitude", d.noise_amplitude);
  c.pixel_noise = j.value("pixel_noise", d.pixel_noise);
  c.speed_min = j.value("speed_min", d.speed_min), c.speed_max = j.value("speed_max", d.speed_max);
  c.attenuation = j.value("attenuation", d.attenuation);
  c.size_min = j.value("size_min", d.size_min), c.size_max = j.value("size_max", d.size_max);
  c.max_overlap_iou = j.value("max_overlap_iou", d.max_overlap_iou);
  c.max_attempts = j.value("max_attempts", d.max_attempts);
}

inline void validate(const SynthConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("synth config: " + what); };
  auto range = [&](double lo, double hi, const char* name) {
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo > 0.0 && lo <= hi))
      fail(std::string(name) + " range must be positive and nonempty");
  };
  if (c.n_samples == 0) fail("n_samples must be positive");
  if (c.frames == 0 || c.height < 4 || c.width < 4) fail("video geometry too small");
  if (c.mics == 0 || c.sample_rate == 0 || !(c.audio_seconds > 0.0) || c.audio_samples() < 2)
    fail("audio geometry must be positive");
  if (c.min_vehicles == 0 || c.min_vehicles > c.max_vehicles) fail("vehicle count range must be nonempty and >= 1");
  double total = 0.0;
  for (double w : c.class_weights) {
    if (!(w >= 0.0 && std::isfinite(w))) fail("class weights must be finite and nonnegative");
    total += w;
  }
  if (!(total > 0.0)) fail("class weights must not all be zero");
  range(c.f0_min, c.f0_max, "engine fundamental");
  if (c.f0_max * static_cast<double>(c.harmonics) >= 0.5 * static_cast<double>(c.sample_rate))
    fail("highest harmonic must stay below Nyquist");
  if (c.harmonics == 0) fail("harmonics must be positive");
  range(c.tone_min, c.tone_max, "tone amplitude");
  if (!(c.noise_amplitude > 0.0) || !(c.pixel_noise >= 0.0)) fail("noise amplitudes must be positive");
  range(c.speed_min, c.speed_max, "speed");
  if (!(c.attenuation > 0.0)) fail("attenuation scale must be positive");
  range(c.size_min, c.size_max, "size");
  if (c.size_max > 1.0) fail("size_max must not exceed 1");
  if (!(c.max_overlap_iou >= 0.0 && c.max_overlap_iou <= 1.0)) fail("max_overlap_iou must lie in [0, 1]");
  if (c.max_attempts == 0) fail("max_attempts must be positive");
}

struct SceneVehicle {
  VehicleClass cls = VehicleClass::moving;
  // Pixel rectangle in the final frame.
  long x0 = 0, y0 = 0, w = 1, h = 1;
  double speed = 0.0;  // px / frame, applied only when moving
  int direction = 1;
  std::array<double, 3> color{};
  long stripe = 4;
  std::uint64_t texture_seed = 0;
  double f0 = 100.0, amplitude = 0.05;
  std::vector<double> phases;

  bool emits_sound() const { return cls != VehicleClass::engine_off; }
  bool moves() const { return cls == VehicleClass::moving; }
};

struct Scene {
  std::size_t index = 0;
  std::uint64_t video_seed = 0, audio_seed = 0;
  std::array<double, 3> background{};
  std::vector<SceneVehicle> vehicles;
};

struct Sample {
  std::string id;
  Tensor<float> video;  // [3, frames, height, width], values in [0, 1]
  audio::AudioChunk audio;
  std::vector<BoundingBox> boxes;
};

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

namespace detail {

inline double hash_unit(std::uint64_t key, std::uint64_t counter) {
  return static_cast<double>(splitmix64(key + counter) >> 11) * 0x1.0p-53;
}

enum : std::uint64_t { kTagCount = 1, kTagPlan = 2, kTagVideo = 3, kTagAudio = 4 };

}  // namespace detail

/// Final-frame ground truth of a planned vehicle, in normalized coordinates.
inline BoundingBox vehicle_box(const SceneVehicle& v, std::size_t width, std::size_t height) {
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  return {(static_cast<double>(v.x0) + 0.5 * static_cast<double>(v.w)) / W,
          (static_cast<double>(v.y0) + 0.5 * static_cast<double>(v.h)) / H, static_cast<double>(v.w) / W,
          static_cast<double>(v.h) / H, v.cls};
}

/// Deterministic per-index scene generator. Vehicle classes follow a smooth
/// weighted round-robin over the global vehicle ordinal, so proportions hold
/// over any prefix of the dataset.
class SceneGenerator {
 public:
  explicit SceneGenerator(SynthConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    first_.resize(cfg_.n_samples + 1, 0);
    for (std::size_t i = 0; i < cfg_.n_samples; ++i) first_[i + 1] = first_[i] + planned_count(i);
    std::array<double, kNumClasses> current{};
    double total = 0.0;
    for (double w : cfg_.class_weights) total += w;
    classes_.reserve(first_.back());
    for (std::size_t n = 0; n < first_.back(); ++n) {
      std::size_t pick = 0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        current[c] += cfg_.class_weights[c];
        if (current[c] > current[pick]) pick = c;
      }
      current[pick] -= total;
      classes_.push_back(static_cast<VehicleClass>(pick));
    }
  }

  const SynthConfig& config() const { return cfg_; }
  std::size_t size() const { return cfg_.n_samples; }

  Scene plan(std::size_t index) const {
    if (index >= cfg_.n_samples) throw std::out_of_range("scene index " + std::to_string(index) + " out of range");
    Scene s;
    s.index = index;
    s.video_seed = derive_seed(cfg_.seed, index, detail::kTagVideo);
    s.audio_seed = derive_seed(cfg_.seed, index, detail::kTagAudio);
    Rng rng(derive_seed(cfg_.seed, index, detail::kTagPlan));
    for (auto& b : s.background) b = rng.uniform(0.2, 0.8);
    const auto W = static_cast<long>(cfg_.width), H = static_cast<long>(cfg_.height);
    std::vector<BoundingBox> placed;
    for (std::size_t n = first_[index]; n < first_[index + 1]; ++n) {
      // Appearance and sound parameters are drawn before placement so that
      // every vehicle consumes the same stream prefix regardless of class.
      SceneVehicle v;
      v.cls = classes_[n];
      v.speed = rng.uniform(cfg_.speed_min, cfg_.speed_max);
      v.direction = rng.uniform() < 0.5 ? -1 : 1;
      for (auto& c : v.color) c = rng.uniform(0.0, 1.0);
      v.stripe = 2 + static_cast<long>(rng.below(5));
      v.texture_seed = rng.next();
      v.f0 = rng.uniform(cfg_.f0_min, cfg_.f0_max);
      v.amplitude = rng.uniform(cfg_.tone_min, cfg_.tone_max);
      v.phases.resize(cfg_.harmonics);
      for (auto& p : v.phases) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
      bool ok = false;
      for (std::size_t attempt = 0; attempt < cfg_.max_attempts && !ok; ++attempt) {
        v.w = std::clamp(std::lround(rng.uniform(cfg_.size_min, cfg_.size_max) * static_cast<double>(W)), 2L, W);
        v.h = std::clamp(std::lround(rng.uniform(cfg_.size_min, cfg_.size_max) * static_cast<double>(H)), 2L, H);
        v.x0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(W - v.w + 1)));
        v.y0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(H - v.h + 1)));
        const BoundingBox box = vehicle_box(v, cfg_.width, cfg_.height);
        ok = std::all_of(placed.begin(), placed.end(),
                         [&](const BoundingBox& o) { return iou(box, o) <= cfg_.max_overlap_iou; });
      }
      if (!ok) continue;
      placed.push_back(vehicle_box(v, cfg_.width, cfg_.height));
      s.vehicles.push_back(std::move(v));
    }
    return s;
  }

  /// Video depends on geometry, appearance and motion only: idling and
  /// engine_off render identically.
  Tensor<float> render_video(const Scene& s) const {
    const std::size_t T = cfg_.frames, H = cfg_.height, W = cfg_.width, plane = H * W;
    Tensor<float> out({3, T, H, W});
    std::vector<double> frame(3 * plane);
    const std::uint64_t bg_key = derive_seed(s.video_seed, 0), noise_key = derive_seed(s.video_seed, 1);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p)
          frame[c * plane + p] = s.background[c] + 0.16 * (detail::hash_unit(bg_key, p) - 0.5);
      const long back = static_cast<long>(T - 1 - t);
      for (const auto& v : s.vehicles) {
        const long dx = v.moves() ? -v.direction * std::lround(v.speed * static_cast<double>(back)) : 0;
        const long left = v.x0 + dx;
        const long xa = std::max(0L, left), xb = std::min(static_cast<long>(W), left + v.w);
        for (long y = v.y0; y < v.y0 + v.h; ++y)
          for (long x = xa; x < xb; ++x) {
            const long lx = x - left, ly = y - v.y0;
            const double shade = ((lx / v.stripe + ly / v.stripe) % 2 == 0) ? 1.0 : 0.6;
            const double tex = 0.1 * (detail::hash_unit(v.texture_seed, static_cast<std::uint64_t>(ly * v.w + lx)) - 0.5);
            const std::size_t p = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
            for (std::size_t c = 0; c < 3; ++c) frame[c * plane + p] = v.color[c] * shade + tex;
          }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        float* dst = out.ptr() + (c * T + t) * plane;
        const std::uint64_t base = (c * T + t) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double noise = cfg_.pixel_noise * (2.0 * detail::hash_unit(noise_key, base + p) - 1.0);
          dst[p] = static_cast<float>(std::clamp(frame[c * plane + p] + noise, 0.0, 1.0));
        }
      }
    }
    return out;
  }

  /// Per microphone: uniform noise plus every sound-emitting vehicle's
  /// harmonic tone scaled by 1 / (1 + |x_vehicle - x_mic| / sigma_att), with
  /// x_vehicle the final-frame box centre. Snapped to the 16-bit grid.
  audio::AudioChunk render_audio(const Scene& s) const {
    const std::size_t N = cfg_.audio_samples(), C = cfg_.mics;
    std::vector<double> mix(C * N, 0.0);
    std::vector<double> tone(N);
    for (const auto& v : s.vehicles) {
      if (!v.emits_sound()) continue;
      std::fill(tone.begin(), tone.end(), 0.0);
      for (std::size_t h = 0; h < cfg_.harmonics; ++h) {
        const double omega = 2.0 * std::numbers::pi * v.f0 * static_cast<double>(h + 1) / static_cast<double>(cfg_.sample_rate);
        const double gain = v.amplitude / static_cast<double>(h + 1);
        const std::complex<double> step = std::polar(1.0, omega);
        std::complex<double> z = std::polar(1.0, v.phases[h]);
        for (std::size_t n = 0; n < N; ++n) {
          // Re-anchor periodically so rounding in the recurrence cannot grow.
          if (n % 4096 == 0) z = std::polar(1.0, v.phases[h] + omega * static_cast<double>(n));
          tone[n] += gain * z.imag();
          z *= step;
        }
      }
      const double x = vehicle_box(v, cfg_.width, cfg_.height).cx;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = 1.0 / (1.0 + std::abs(x - cfg_.mic_x(c)) / cfg_.attenuation);
        double* dst = mix.data() + c * N;
        for (std::size_t n = 0; n < N; ++n) dst[n] += g * tone[n];
      }
    }
    audio::AudioChunk chunk;
    chunk.sample_rate = cfg_.sample_rate;
    chunk.samples = Tensor<float>({C, N});
    for (std::size_t c = 0; c < C; ++c) {
      const std::uint64_t key = derive_seed(s.audio_seed, c);
      for (std::size_t n = 0; n < N; ++n) {
        const double noise = cfg_.noise_amplitude * (2.0 * detail::hash_unit(key, n) - 1.0);
        chunk.samples[c * N + n] = static_cast<float>(mix[c * N + n] + noise);
      }
    }
    wav::quantize_in_place(chunk.samples);
    return chunk;
  }

  std::vector<BoundingBox> boxes(const Scene& s) const {
    std::vector<BoundingBox> out;
    for (const auto& v : s.vehicles) out.push_back(vehicle_box(v, cfg_.width, cfg_.height));
    return out;
  }

  Sample generate(std::size_t index) const {
    const Scene s = plan(index);
    return {sample_id(index), render_video(s), render_audio(s), boxes(s)};
  }

 private:
  std::size_t planned_count(std::size_t index) const {
    Rng rng(derive_seed(cfg_.seed, index, detail::kTagCount));
    return cfg_.min_vehicles + static_cast<std::size_t>(rng.below(cfg_.max_vehicles - cfg_.min_vehicles + 1));
  }

  SynthConfig cfg_;
  std::vector<std::size_t> first_;
  std::vector<VehicleClass> classes_;
};

// ---------------------------------------------------------------------------
// On-disk datasets: samples/<id>.tnsr, samples/<id>.wav, manifest.jsonl and
// meta.json (geometry plus the reproducibility block).

struct DatasetGeometry {
  std::size_t frames = 16, height = 224, width = 224;
  std::size_t mics = 6, sample_rate = 48000, audio_samples = 240000;

  InputGeometry input(const audio::MelConfig& mel = {}) const {
    InputGeometry g;
    g.channels = 3, g.frames = frames, g.height = height, g.width = width;
    g.mics = mics, g.mel_bins = mel.n_mels, g.mel_frames = audio::frame_count(audio_samples, mel.hop);
    return g;
  }

  friend bool operator==(const DatasetGeometry&, const DatasetGeometry&) = default;
};

inline void to_json(nlohmann::json& j, const DatasetGeometry& g) {
  j = {{"frames", g.frames}, {"height", g.height},           {"width", g.width},
       {"mics", g.mics},     {"sample_rate", g.sample_rate}, {"audio_samples", g.audio_samples}};
}
inline void from_json(const nlohmann::json& j, DatasetGeometry& g) {
  j.at("frames").get_to(g.frames), j.at("height").get_to(g.height), j.at("width").get_to(g.width);
  j.at("mics").get_to(g.mics), j.at("sample_rate").get_to(g.sample_rate);
  j.at("audio_samples").get_to(g.audio_samples);
}

inline DatasetGeometry geometry_of(const SynthConfig& c) {
  return {c.frames, c.height, c.width, c.mics, c.sample_rate, c.audio_samples()};
}

inline nlohmann::json box_json(const BoundingBox& b) {
  return {{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}, {"class", class_name(b.cls)}};
}

/// Writes the dataset into `dir` (created if needed). Samples are generated
/// in parallel; the manifest is written afterwards in index order.
inline void write_dataset(const SceneGenerator& gen, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  const std::size_t n = gen.size();
  std::vector<std::vector<BoundingBox>> boxes(n);
  parallel_for(n, [&](std::size_t i) {
    const Sample s = gen.generate(i);
    tnsr::save(dir / "samples" / (s.id + ".tnsr"), s.video);
    wav::save(dir / "samples" / (s.id + ".wav"), s.audio);
    boxes[i] = s.boxes;
  });
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.jsonl").string());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = sample_id(i);
    nlohmann::json rec = {{"id", id},
                          {"video_path", "samples/" + id + ".tnsr"},
                          {"audio_path", "samples/" + id + ".wav"},
                          {"boxes", nlohmann::json::array()}};
    for (const auto& b : boxes[i]) rec["boxes"].push_back(box_json(b));
    manifest << rec.dump() << '\n';
  }
  const nlohmann::json config = gen.config();
  const nlohmann::json meta = {{"geometry", geometry_of(gen.config())},
                               {"synth", config},
                               {"reproducibility", reproducibility(gen.config().seed, config)}};
  std::ofstream(dir / "meta.json", std::ios::binary) << meta.dump(2) << '\n';
}

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestRecord {
  std::string id;
  std::filesystem::path video_path, audio_path;  // resolved against the manifest directory
  std::vector<BoundingBox> boxes;
};

/// Validated, index-addressable dataset.
struct Dataset {
  std::filesystem::path manifest;
  DatasetGeometry geometry;
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  Tensor<float> load_video(std::size_t i) const { return tnsr::load<float>(records.at(i).video_path); }
  audio::AudioChunk load_audio(std::size_t i) const { return wav::load(records.at(i).audio_path); }
  std::vector<BoundingBox> truth(std::size_t i) const { return records.at(i).boxes; }
};

inline BoundingBox parse_box(const nlohmann::json& j) {
  BoundingBox b;
  j.at("cx").get_to(b.cx), j.at("cy").get_to(b.cy), j.at("w").get_to(b.w), j.at("h").get_to(b.h);
  b.cls = parse_class(j.at("class").get<std::string>());
  return b;
}

/// Loads and validates a JSON Lines manifest. Geometry comes from meta.json
/// beside the manifest when present, otherwise from the first record's files;
/// every record must match it.
inline Dataset load_manifest(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open manifest " + path.string());
  Dataset ds;
  ds.manifest = path;
  const fs::path root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> seen;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string at = path.string() + ":" + std::to_string(line_no);
    ManifestRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.id = j.at("id").get<std::string>();
      r.video_path = root / j.at("video_path").get<std::string>();
      r.audio_path = root / j.at("audio_path").get<std::string>();
      for (const auto& b : j.at("boxes")) r.boxes.push_back(parse_box(b));
    } catch (const std::exception& e) {
      throw ManifestError(at + (r.id.empty() ? "" : " (sample " + r.id + ")") + ": malformed record: " + e.what());
    }
    for (std::size_t k = 0; k < r.boxes.size(); ++k)
      if (!is_valid(r.boxes[k]))
        throw ManifestError(at + " (sample " + r.id + "): box " + std::to_string(k) + " out of range");
    if (std::find(seen.begin(), seen.end(), r.id) != seen.end())
      throw ManifestError(at + ": duplicate sample id " + r.id);
    seen.push_back(r.id);
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty()) throw ManifestError("manifest " + path.string() + " has no records");

  auto probe = [&](const ManifestRecord& r) {
    for (const auto& f : {r.video_path, r.audio_path})
      if (!fs::is_regular_file(f)) throw ManifestError("sample " + r.id + ": missing file " + f.string());
    DatasetGeometry g;
    try {
      const auto v = tnsr::peek(r.video_path);
      if (v.shape.size() != 4 || v.shape[0] != 3)
        throw ManifestError("sample " + r.id + ": video " + r.video_path.string() + " is " + to_string(v.shape) +
                            ", expected [3, T, H, W]");
      g.frames = v.shape[1], g.height = v.shape[2], g.width = v.shape[3];
      const auto a = wav::peek(r.audio_path);
      g.mics = a.channels, g.sample_rate = a.sample_rate, g.audio_samples = a.frames;
    } catch (const tnsr::FormatError& e) {
      throw ManifestError("sample " + r.id + ": " + e.what());
    } catch (const wav::FormatError& e) {
      throw ManifestError("sample " + r.id + ": " + e.what());
    }
    return g;
  };

  const fs::path meta = root / "meta.json";
  if (fs::is_regular_file(meta)) {
    try {
      std::ifstream ms(meta);
      ds.geometry = nlohmann::json::parse(ms).at("geometry").get<DatasetGeometry>();
    } catch (const std::exception& e) {
      throw ManifestError(meta.string() + ": malformed metadata: " + e.what());
    }
  } else {
    ds.geometry = probe(ds.records.front());
  }
  for (const auto& r : ds.records) {
    const DatasetGeometry g = probe(r);
    if (!(g == ds.geometry))
      throw ManifestError("sample " + r.id + ": geometry " + nlohmann::json(g).dump() + " does not match dataset " +
                          nlohmann::json(ds.geometry).dump());
  }
  return ds;
}

struct Split {
  std::vector<std::size_t> train, val;
};

/// Leading-fraction split: the first ceil(n * fraction) indices train.
inline Split split_leading(std::size_t n, double fraction = 0.75) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("split fraction must lie in (0, 1]");
  const auto cut = std::min(n, static_cast<std::size_t>(std::ceil(static_cast<double>(n) * fraction - 1e-9)));
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < cut ? s.train : s.val).push_back(i);
  return s;
}

}  // namespace avf
