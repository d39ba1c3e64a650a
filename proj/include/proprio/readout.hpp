#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "proprio/crc.hpp"
#include "proprio/mat.hpp"
#include "proprio/optics.hpp"
#include "proprio/rng.hpp"

namespace proprio::readout {

constexpr std::uint32_t kAdcMax = (1u << 24) - 1;  // 24-bit full scale code

/// One full LED scan: raw ADC codes plus the per-frame no-light offsets.
struct MeasurementFrame {
  Mat<std::uint32_t> codes;         // p x l
  std::vector<std::uint32_t> dark;  // p, captured once per frame
  std::uint32_t frame_index = 0;
  std::uint64_t t_start_us = 0;

  std::size_t pd_count() const { return codes.rows; }
  std::size_t led_count() const { return codes.cols; }

  bool operator==(const MeasurementFrame& o) const {
    return codes.rows == o.codes.rows && codes.cols == o.codes.cols &&
           codes.data == o.codes.data && dark == o.dark && frame_index == o.frame_index &&
           t_start_us == o.t_start_us;
  }
};

/// Adds Gaussian noise and the dark current, clamps to the analog range and
/// quantizes to 24-bit codes: code = floor(value / fullscale * (2^24 - 1)).
/// Samples are drawn in acquisition order (LED-major, then the dark row),
/// so a fixed rng_seed reproduces the frame bit-exactly.
inline MeasurementFrame digitize(const Mat<double>& analog, const optics::OpticsParams& params,
                                 std::uint64_t rng_seed, std::uint32_t frame_index = 0,
                                 std::uint64_t t_start_us = 0) {
  const double fs = params.i_fullscale;
  for (double v : analog.data)
    if (v < 0.0) throw std::invalid_argument("digitize: negative analog input");
    else if (v > fs) throw std::invalid_argument("digitize: analog input above full scale");

  auto engine = make_engine(rng_seed);
  std::normal_distribution<double> noise(0.0, params.sigma_noise * fs);
  const double dark_current = params.dark_level * fs;
  auto quantize = [fs](double value) {
    double clamped = std::clamp(value, 0.0, fs);
    return static_cast<std::uint32_t>(std::floor(clamped / fs * static_cast<double>(kAdcMax)));
  };

  MeasurementFrame frame;
  frame.codes = Mat<std::uint32_t>(analog.rows, analog.cols);
  frame.dark.resize(analog.rows);
  frame.frame_index = frame_index;
  frame.t_start_us = t_start_us;
  const bool noisy = params.sigma_noise > 0.0;
  for (std::size_t i = 0; i < analog.cols; ++i)
    for (std::size_t j = 0; j < analog.rows; ++j)
      frame.codes(j, i) = quantize(analog(j, i) + dark_current + (noisy ? noise(engine) : 0.0));
  for (std::size_t j = 0; j < analog.rows; ++j)
    frame.dark[j] = quantize(dark_current + (noisy ? noise(engine) : 0.0));
  return frame;
}

/// Per-channel offset removal and denoising: subtract the PD's dark code
/// (clamped at zero), then discard the seven least significant bits.
/// Output entries are always multiples of 128.
inline Mat<std::uint32_t> preprocess(const MeasurementFrame& frame) {
  Mat<std::uint32_t> out(frame.codes.rows, frame.codes.cols);
  for (std::size_t j = 0; j < frame.codes.rows; ++j)
    for (std::size_t i = 0; i < frame.codes.cols; ++i) {
      std::uint32_t code = frame.codes(j, i);
      std::uint32_t dark = frame.dark[j];
      std::uint32_t offset = code > dark ? code - dark : 0u;
      out(j, i) = (offset >> 7) << 7;
    }
  return out;
}

/// Per-channel statistics of a training set, used for normalization.
/// `source` identifies the dataset the statistics were fitted on; the
/// model refuses to mix statistics from a different source at inference.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;           // floored at 1e-12 for degenerate channels
  std::vector<std::uint8_t> degenerate; // flagged constant channels
  std::string source;
  std::size_t pd_count = 0, led_count = 0;

  std::size_t channel_count() const { return mean.size(); }
};

/// Vectorized, normalized measurement: v has length p*l, flattened
/// column-major over LEDs (channel p*(i-1)+j holds PD j under LED i).
struct FeatureVector {
  std::vector<double> v;
  std::string stats_source;

  std::size_t size() const { return v.size(); }
};

inline std::size_t channel_index(std::size_t led, std::size_t pd, std::size_t p) {
  return led * p + pd;  // 0-based; matches the LED/PD group definitions
}

inline std::vector<double> flatten(const Mat<std::uint32_t>& m) {
  std::vector<double> v(m.rows * m.cols);
  for (std::size_t i = 0; i < m.cols; ++i)
    for (std::size_t j = 0; j < m.rows; ++j)
      v[channel_index(i, j, m.rows)] = static_cast<double>(m(j, i));
  return v;
}

inline NormStats fit_norm(const std::vector<Mat<std::uint32_t>>& training, const std::string& source) {
  if (training.size() < 2)
    throw std::invalid_argument("fit_norm: need at least 2 training frames");
  const std::size_t p = training.front().rows, l = training.front().cols;
  const std::size_t n_ch = p * l;
  NormStats stats;
  stats.source = source;
  stats.pd_count = p;
  stats.led_count = l;
  stats.mean.assign(n_ch, 0.0);
  stats.stddev.assign(n_ch, 0.0);
  stats.degenerate.assign(n_ch, 0);

  for (const auto& m : training) {
    if (m.rows != p || m.cols != l) throw std::invalid_argument("fit_norm: frame shape mismatch");
    auto v = flatten(m);
    for (std::size_t k = 0; k < n_ch; ++k) stats.mean[k] += v[k];
  }
  const double n = static_cast<double>(training.size());
  for (std::size_t k = 0; k < n_ch; ++k) stats.mean[k] /= n;
  for (const auto& m : training) {
    auto v = flatten(m);
    for (std::size_t k = 0; k < n_ch; ++k) {
      double d = v[k] - stats.mean[k];
      stats.stddev[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < n_ch; ++k) {
    stats.stddev[k] = std::sqrt(stats.stddev[k] / n);
    if (stats.stddev[k] < 1e-12) {
      stats.stddev[k] = 1e-12;
      stats.degenerate[k] = 1;
    }
  }
  return stats;
}

inline FeatureVector normalize(const Mat<std::uint32_t>& m, const NormStats& stats) {
  if (m.rows * m.cols != stats.channel_count())
    throw std::invalid_argument("normalize: channel count mismatch");
  FeatureVector fv;
  fv.stats_source = stats.source;
  fv.v = flatten(m);
  for (std::size_t k = 0; k < fv.v.size(); ++k)
    fv.v[k] = stats.degenerate[k] ? 0.0 : (fv.v[k] - stats.mean[k]) / stats.stddev[k];
  return fv;
}

/// Algebraic inverse of normalize() on the flattened vector (degenerate
/// channels recover their constant mean).
inline std::vector<double> denormalize(const FeatureVector& fv, const NormStats& stats) {
  if (fv.v.size() != stats.channel_count())
    throw std::invalid_argument("denormalize: channel count mismatch");
  std::vector<double> out(fv.v.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = stats.degenerate[k] ? stats.mean[k] : fv.v[k] * stats.stddev[k] + stats.mean[k];
  return out;
}

/// Time-division-multiplexed frame timing: one dark slot plus one strobe
/// slot per LED, then fixed per-frame overhead (UART transfer, bookkeeping).
struct FrameSchedule {
  double strobe_us = 180.0;
  std::vector<double> slot_start_us;  // per LED, dark slot(s) first
  double active_us = 0.0;             // (l + dark_slots) * strobe
  double overhead_us = 0.0;
  double period_us = 0.0;
  double rate_hz = 0.0;
};

inline FrameSchedule schedule(std::size_t led_count, double strobe_us = 180.0,
                              std::size_t dark_slots = 1, double overhead_us = 5500.0,
                              double target_rate_hz = 90.0) {
  if (led_count < 1) throw std::invalid_argument("schedule: need at least one LED");
  FrameSchedule s;
  s.strobe_us = strobe_us;
  s.overhead_us = overhead_us;
  s.active_us = static_cast<double>(led_count + dark_slots) * strobe_us;
  s.period_us = s.active_us + overhead_us;
  s.rate_hz = 1e6 / s.period_us;
  s.slot_start_us.resize(led_count);
  for (std::size_t i = 0; i < led_count; ++i)
    s.slot_start_us[i] = static_cast<double>(dark_slots + i) * strobe_us;
  if (target_rate_hz > 0.0 && s.rate_hz + 1e-9 < target_rate_hz)
    throw std::runtime_error("schedule: requested rate infeasible for given LED count");
  return s;
}

// --- wire format -----------------------------------------------------------
//
// Little-endian: magic 0xA5 0x5A, u8 version=1, u8 p, u8 l, u32 frame_index,
// u64 t_start_us, then (p*l + p) samples as 3-byte unsigned integers (codes
// LED-major, then the dark row), u16 CRC-16/CCITT-FALSE over all preceding
// bytes. 484 bytes for p=5, l=30.

constexpr std::uint8_t kMagic0 = 0xA5, kMagic1 = 0x5A, kWireVersion = 1;

class CodecError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, bad_crc };
  CodecError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline std::size_t encoded_frame_size(std::size_t p, std::size_t l) {
  return 17 + 3 * (p * l + p) + 2;
}

inline std::vector<std::uint8_t> encode_frame(const MeasurementFrame& frame) {
  const std::size_t p = frame.pd_count(), l = frame.led_count();
  if (p == 0 || l == 0 || p > 255 || l > 255)
    throw std::invalid_argument("encode_frame: dimensions out of range");
  std::vector<std::uint8_t> out;
  out.reserve(encoded_frame_size(p, l));
  auto put_u8 = [&out](std::uint8_t v) { out.push_back(v); };
  auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put_u64 = [&out](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put_sample = [&out](std::uint32_t v) {
    if (v > kAdcMax) throw std::invalid_argument("encode_frame: sample exceeds 24 bits");
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
  };

  put_u8(kMagic0);
  put_u8(kMagic1);
  put_u8(kWireVersion);
  put_u8(static_cast<std::uint8_t>(p));
  put_u8(static_cast<std::uint8_t>(l));
  put_u32(frame.frame_index);
  put_u64(frame.t_start_us);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < p; ++j) put_sample(frame.codes(j, i));
  for (std::size_t j = 0; j < p; ++j) put_sample(frame.dark[j]);

  std::uint16_t crc = crc16_ccitt_false(out.data(), out.size());
  out.push_back(static_cast<std::uint8_t>(crc));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
  return out;
}

/// Decodes one frame starting at `offset`; advances `offset` past it.
inline MeasurementFrame decode_frame(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  auto remaining = bytes.size() - offset;
  if (remaining < 17) throw CodecError(CodecError::Kind::truncated, "decode: truncated header");
  const std::uint8_t* b = bytes.data() + offset;
  if (b[0] != kMagic0 || b[1] != kMagic1)
    throw CodecError(CodecError::Kind::bad_magic, "decode: bad magic");
  if (b[2] != kWireVersion)
    throw CodecError(CodecError::Kind::bad_version, "decode: unsupported version");
  const std::size_t p = b[3], l = b[4];
  if (p == 0 || l == 0) throw CodecError(CodecError::Kind::truncated, "decode: empty dimensions");
  const std::size_t total = encoded_frame_size(p, l);
  if (remaining < total) throw CodecError(CodecError::Kind::truncated, "decode: truncated payload");

  std::uint16_t stored = static_cast<std::uint16_t>(b[total - 2]) |
                         (static_cast<std::uint16_t>(b[total - 1]) << 8);
  if (crc16_ccitt_false(b, total - 2) != stored)
    throw CodecError(CodecError::Kind::bad_crc, "decode: CRC mismatch");

  auto get_u32 = [b](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + i];
    return v;
  };
  auto get_u64 = [b](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + i];
    return v;
  };
  auto get_sample = [b](std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16);
  };

  MeasurementFrame frame;
  frame.frame_index = get_u32(5);
  frame.t_start_us = get_u64(9);
  frame.codes = Mat<std::uint32_t>(p, l);
  std::size_t at = 17;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < p; ++j, at += 3) frame.codes(j, i) = get_sample(at);
  frame.dark.resize(p);
  for (std::size_t j = 0; j < p; ++j, at += 3) frame.dark[j] = get_sample(at);

  offset += total;
  return frame;
}

inline MeasurementFrame decode_frame(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  return decode_frame(bytes, offset);
}

inline std::vector<MeasurementFrame> decode_stream(const std::vector<std::uint8_t>& bytes) {
  std::vector<MeasurementFrame> frames;
  std::size_t offset = 0;
  while (offset < bytes.size()) frames.push_back(decode_frame(bytes, offset));
  return frames;
}

// --- stream alignment --------------------------------------------------------

struct StreamPair {
  std::size_t truth_index = 0;
  std::size_t sensor_index = 0;
  std::uint64_t lag_us = 0;  // truth timestamp minus chosen sensor timestamp
};

/// Pairs every truth frame with the most recently timestamped sensor frame
/// (largest sensor timestamp <= truth timestamp). Truth frames that precede
/// all sensor frames are dropped.
inline std::vector<StreamPair> align_streams(const std::vector<std::uint64_t>& sensor_ts,
                                             const std::vector<std::uint64_t>& truth_ts) {
  if (sensor_ts.empty() || truth_ts.empty())
    throw std::invalid_argument("align_streams: empty stream");
  for (std::size_t k = 1; k < sensor_ts.size(); ++k)
    if (sensor_ts[k] < sensor_ts[k - 1])
      throw std::invalid_argument("align_streams: sensor timestamps not monotone");
  for (std::size_t k = 1; k < truth_ts.size(); ++k)
    if (truth_ts[k] < truth_ts[k - 1])
      throw std::invalid_argument("align_streams: truth timestamps not monotone");

  std::vector<StreamPair> pairs;
  std::size_t s = 0;
  for (std::size_t t = 0; t < truth_ts.size(); ++t) {
    if (truth_ts[t] < sensor_ts.front()) continue;  // no sensor frame yet
    while (s + 1 < sensor_ts.size() && sensor_ts[s + 1] <= truth_ts[t]) ++s;
    pairs.push_back({t, s, truth_ts[t] - sensor_ts[s]});
  }
  return pairs;
}

}  // namespace proprio::readout
