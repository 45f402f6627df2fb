#pragma once

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "ftv/audio.hpp"
#include "ftv/common.hpp"
#include "ftv/tensor.hpp"

namespace ftv {

struct MelConfig {
  std::size_t sample_rate = 16000;
  std::size_t n_fft = 1024;  // filter & window length
  std::size_t hop = 256;
  std::size_t n_mels = 80;
  Real log_floor = 1e-5;
  Real fmin = 0.0;
  Real fmax = 8000.0;

  std::size_t n_bins() const { return n_fft / 2 + 1; }

  void validate() const {
    require(n_fft >= 2 && hop >= 1 && n_mels >= 1, "mel config: bad sizes");
    require(fmax <= static_cast<Real>(sample_rate) / 2.0 + 1e-9,
            "mel config: fmax above Nyquist");
    require(log_floor > 0, "mel config: log floor must be positive");
  }
};

// Log-compressed mel frames, T_mel x M.
struct MelSpectrogram {
  Tensor frames;
  MelConfig config;

  std::size_t frame_count() const { return frames.rows(); }
  std::size_t mel_bins() const { return frames.cols(); }
};

// Closed-form frame count for a length-N waveform under center-padded
// analysis: floor(N / hop) + 1.
inline std::size_t mel_frame_count(std::size_t n_samples, std::size_t hop) {
  return n_samples / hop + 1;
}

inline Real hz_to_mel(Real hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline Real mel_to_hz(Real mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular HTK-scale filterbank, n_mels x (n_fft/2 + 1), peak weight 1.
inline Tensor mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.n_bins();
  const Real mel_lo = hz_to_mel(cfg.fmin);
  const Real mel_hi = hz_to_mel(cfg.fmax);
  std::vector<Real> edges(cfg.n_mels + 2);
  for (std::size_t m = 0; m < edges.size(); ++m)
    edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<Real>(m) /
                                      static_cast<Real>(cfg.n_mels + 1));
  Tensor fb(cfg.n_mels, bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const Real lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const Real f = static_cast<Real>(k) * static_cast<Real>(cfg.sample_rate) /
                     static_cast<Real>(cfg.n_fft);
      Real w = 0;
      if (f > lo && f < hi)
        w = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      fb.at(m, k) = std::max<Real>(0, w);
    }
  }
  return fb;
}

// Periodic Hann window of length n.
inline Tensor hann_window(std::size_t n) {
  Tensor w(1, n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<Real>(i) /
                                static_cast<Real>(n));
  return w;
}

// Magnitude STFT with centered frames and reflect padding,
// (floor(N/hop)+1) x (n_fft/2+1).
inline Tensor stft_magnitude(const std::vector<Real>& samples,
                             const MelConfig& cfg) {
  cfg.validate();
  const std::size_t N = samples.size();
  if (N < cfg.n_fft)
    throw DimensionError("stft: waveform shorter than the analysis window (" +
                         std::to_string(N) + " < " + std::to_string(cfg.n_fft) + ")");
  const std::size_t pad = cfg.n_fft / 2;
  std::vector<Real> padded(N + 2 * pad);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    long src = static_cast<long>(i) - static_cast<long>(pad);
    if (src < 0) src = -src;                                      // reflect left
    if (src >= static_cast<long>(N)) src = 2 * (N - 1) - src;     // reflect right
    padded[i] = samples[static_cast<std::size_t>(src)];
  }

  const Tensor window = hann_window(cfg.n_fft);
  const std::size_t frames = mel_frame_count(N, cfg.hop);
  const std::size_t bins = cfg.n_bins();
  Tensor mag(frames, bins);

  Eigen::FFT<Real> fft;
  std::vector<Real> frame(cfg.n_fft);
  std::vector<std::complex<Real>> spectrum;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t j = 0; j < cfg.n_fft; ++j)
      frame[j] = padded[start + j] * window[j];
    fft.fwd(spectrum, frame);
    for (std::size_t k = 0; k < bins; ++k) mag.at(t, k) = std::abs(spectrum[k]);
  }
  return mag;
}

// Magnitude STFT -> mel projection -> log compression with floor clamp.
inline MelSpectrogram mel_extract(const AudioBuffer& audio,
                                  const MelConfig& cfg) {
  require(audio.sample_rate == cfg.sample_rate,
          "mel_extract: sample rate mismatch (" +
              std::to_string(audio.sample_rate) + " vs config " +
              std::to_string(cfg.sample_rate) + ")");
  const Tensor mag = stft_magnitude(audio.samples, cfg);
  const Tensor fb = mel_filterbank(cfg);
  MelSpectrogram mel;
  mel.config = cfg;
  mel.frames = Tensor(mag.rows(), cfg.n_mels);
  mel.frames.mat().noalias() = mag.mat() * fb.mat().transpose();
  for (auto& v : mel.frames.vec()) v = std::log(std::max(v, cfg.log_floor));
  return mel;
}

// Fixed matrices for the differentiable mel inverter: the filterbank
// pseudo-inverse composed with zero-phase frame synthesis, plus the
// overlap-add window and its reciprocal envelope.
struct MelInverterBasis {
  Tensor synthesis;  // n_fft x n_mels: mel magnitudes -> time-domain frame
  Tensor window;     // 1 x n_fft
  MelConfig config;

  static MelInverterBasis build(const MelConfig& cfg) {
    cfg.validate();
    const std::size_t bins = cfg.n_bins();
    const Tensor fb = mel_filterbank(cfg);
    Eigen::MatrixXd fbm(fb.rows(), fb.cols());
    for (std::size_t i = 0; i < fb.rows(); ++i)
      for (std::size_t j = 0; j < fb.cols(); ++j)
        fbm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            fb.at(i, j);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(fbm);
    const Eigen::MatrixXd pinv = cod.pseudoInverse();  // bins x n_mels

    // zero-phase inverse DFT of a one-sided magnitude spectrum
    Eigen::MatrixXd cosmat(cfg.n_fft, bins);
    for (std::size_t n = 0; n < cfg.n_fft; ++n)
      for (std::size_t k = 0; k < bins; ++k) {
        const Real mult = (k == 0 || 2 * k == cfg.n_fft) ? 1.0 : 2.0;
        cosmat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) =
            mult *
            std::cos(2.0 * M_PI * static_cast<Real>(k) * static_cast<Real>(n) /
                     static_cast<Real>(cfg.n_fft)) /
            static_cast<Real>(cfg.n_fft);
      }
    const Eigen::MatrixXd syn = cosmat * pinv;

    MelInverterBasis basis;
    basis.config = cfg;
    basis.window = hann_window(cfg.n_fft);
    basis.synthesis = Tensor(cfg.n_fft, cfg.n_mels);
    for (std::size_t i = 0; i < cfg.n_fft; ++i)
      for (std::size_t j = 0; j < cfg.n_mels; ++j)
        basis.synthesis.at(i, j) =
            syn(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return basis;
  }

  // Reciprocal of the overlap-added window envelope for a given frame count.
  Tensor inverse_envelope(std::size_t n_frames) const {
    const std::size_t out_len = n_frames * config.hop;
    const long half = static_cast<long>(config.n_fft / 2);
    Tensor env(out_len, 1, 0.0);
    for (std::size_t t = 0; t < n_frames; ++t) {
      const long start = static_cast<long>(t * config.hop) - half;
      for (std::size_t j = 0; j < config.n_fft; ++j) {
        const long n = start + static_cast<long>(j);
        if (n < 0 || n >= static_cast<long>(out_len)) continue;
        env[static_cast<std::size_t>(n)] += window[j];
      }
    }
    for (auto& v : env.vec()) v = 1.0 / std::max(v, 1e-6);
    return env;
  }
};

}  // namespace ftv
