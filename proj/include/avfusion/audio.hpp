#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "avfusion/parallel.hpp"
#include "avfusion/tensor.hpp"

namespace avf::audio {

/// Multichannel PCM chunk, samples[C_mic, N] in [-1, 1].
struct AudioChunk {
  std::size_t sample_rate = 48000;
  Tensor<float> samples;

  std::size_t channels() const { return samples.dim(0); }
  std::size_t length() const { return samples.dim(1); }
};

struct MelConfig {
  std::size_t n_fft = 1024;
  std::size_t hop = 512;
  std::size_t n_mels = 128;
  double sample_rate = 48000.0;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects sample_rate / 2
  double log_epsilon = 1e-10;

  double upper() const { return f_max > 0.0 ? f_max : sample_rate / 2.0; }
};

/// One-sided STFT, values laid out [bins, frames].
struct ComplexSpectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<std::complex<double>> values;

  std::complex<double> at(std::size_t bin, std::size_t frame) const {
    return values[bin * frames + frame];
  }
};

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Centered framing: 1 + floor(N / hop) frames.
inline std::size_t frame_count(std::size_t n, std::size_t hop) { return 1 + n / hop; }

/// Index into a signal extended by mirror reflection about its end samples
/// (the edge sample itself is not repeated).
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

namespace detail {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

// FFTW planning is not thread-safe; execution with the new-array interface is.
inline fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mutex);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n / 2 + 1));
  fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  plans.emplace(n, p);
  return p;
}

}  // namespace detail

/// Short-time Fourier transform with a periodic Hann window and centered
/// frames (reflect padding of window / 2 on both ends).
inline ComplexSpectrogram stft(std::span<const double> signal, std::size_t window = 1024,
                               std::size_t hop = 512) {
  if (signal.empty()) throw DomainError("stft: empty signal");
  if (window < 2 || hop == 0) throw DomainError("stft: window must be >= 2 and hop positive");
  const std::size_t n = signal.size();
  ComplexSpectrogram out;
  out.bins = window / 2 + 1;
  out.frames = frame_count(n, hop);
  out.values.resize(out.bins * out.frames);

  const auto win = hann_window(window);
  const fftw_plan plan = detail::r2c_plan(window);
  std::unique_ptr<double, detail::FftwFree> frame(fftw_alloc_real(window));
  std::unique_ptr<fftw_complex, detail::FftwFree> spec(fftw_alloc_complex(out.bins));
  const long pad = static_cast<long>(window / 2);

  for (std::size_t f = 0; f < out.frames; ++f) {
    const long start = static_cast<long>(f * hop) - pad;
    for (std::size_t i = 0; i < window; ++i)
      frame.get()[i] = win[i] * signal[reflect_index(start + static_cast<long>(i), n)];
    fftw_execute_dft_r2c(plan, frame.get(), spec.get());
    for (std::size_t b = 0; b < out.bins; ++b)
      out.values[b * out.frames + f] = {spec.get()[b][0], spec.get()[b][1]};
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  Tensor<double> weights;        // [n_mels, n_fft / 2 + 1]
  std::vector<double> peak_hz;   // n_mels filter centres
  std::vector<std::size_t> first, last;  // nonzero support per filter (inclusive)
};

/// Triangular filters on the HTK mel scale, peaks at n_mels + 2 equally spaced
/// mel points (edges excluded). A triangle narrower than one FFT bin on either
/// side is widened to one bin spacing there, so no filter is empty.
inline MelFilterbank mel_filterbank(const MelConfig& cfg) {
  const double lo = cfg.f_min, hi = cfg.upper();
  if (cfg.n_mels == 0 || cfg.n_fft < 2 || !(hi > lo) || lo < 0.0 || hi > cfg.sample_rate / 2.0 + 1e-9)
    throw DomainError("mel_filterbank: degenerate frequency range");
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double bin_hz = cfg.sample_rate / static_cast<double>(cfg.n_fft);
  const double m_lo = hz_to_mel(lo), m_hi = hz_to_mel(hi);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));

  MelFilterbank fb;
  fb.weights = Tensor<double>({cfg.n_mels, bins});
  fb.first.assign(cfg.n_mels, 0);
  fb.last.assign(cfg.n_mels, 0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double centre = edges[m + 1];
    const double left = std::max(centre - edges[m], bin_hz);
    const double right = std::max(edges[m + 2] - centre, bin_hz);
    fb.peak_hz.push_back(centre);
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double w = std::max(0.0, std::min((f - (centre - left)) / left, ((centre + right) - f) / right));
      if (w > 0.0) {
        fb.weights.at(m, k) = w;
        if (!any) fb.first[m] = k;
        fb.last[m] = k;
        any = true;
      }
    }
    if (!any) throw DomainError("mel_filterbank: filter " + std::to_string(m) + " has no support");
  }
  return fb;
}

/// Power spectrogram of one channel projected onto the filterbank, log
/// compressed. Output [n_mels, frames].
inline Tensor<double> mel_channel(std::span<const double> signal, const MelFilterbank& fb,
                                  const MelConfig& cfg) {
  const auto spec = stft(signal, cfg.n_fft, cfg.hop);
  const std::size_t mels = fb.weights.dim(0), bins = spec.bins, frames = spec.frames;
  std::vector<double> power(bins * frames);
  for (std::size_t i = 0; i < power.size(); ++i) power[i] = std::norm(spec.values[i]);
  Tensor<double> out({mels, frames});
  for (std::size_t m = 0; m < mels; ++m) {
    const double* w = fb.weights.ptr() + m * bins;
    for (std::size_t f = 0; f < frames; ++f) {
      double acc = 0.0;
      for (std::size_t k = fb.first[m]; k <= fb.last[m]; ++k) acc += w[k] * power[k * frames + f];
      out.at(m, f) = std::log(acc + cfg.log_epsilon);
    }
  }
  return out;
}

/// Log-mel spectrogram per channel, stacked [C_mic, n_mels, frames].
inline Tensor<double> mel_spectrogram(const AudioChunk& chunk, const MelConfig& base = {}) {
  MelConfig cfg = base;
  cfg.sample_rate = static_cast<double>(chunk.sample_rate);
  if (chunk.samples.rank() != 2) throw ShapeError("mel_spectrogram: audio must be [C, N]");
  const std::size_t channels = chunk.channels(), n = chunk.length();
  const auto fb = mel_filterbank(cfg);
  const std::size_t frames = frame_count(n, cfg.hop);
  Tensor<double> out({channels, cfg.n_mels, frames});
  parallel_for(channels, [&](std::size_t c) {
    std::vector<double> sig(n);
    for (std::size_t i = 0; i < n; ++i) sig[i] = chunk.samples[c * n + i];
    const auto mel = mel_channel(sig, fb, cfg);
    std::copy(mel.ptr(), mel.ptr() + mel.size(), out.ptr() + c * cfg.n_mels * frames);
  });
  return out;
}

}  // namespace avf::audio
