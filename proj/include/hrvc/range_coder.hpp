#pragma once

#include "hrvc/likelihood.hpp"

namespace hrvc {

// ---------------------------------------------------------------------------
// Byte-order helpers (all container integers are little-endian).

class ByteWriter {
public:
  std::vector<uint8_t>& buf() { return buf_; }
  const std::vector<uint8_t>& buf() const { return buf_; }
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }
  void f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void bytes(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }

private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
public:
  ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  size_t pos() const { return pos_; }
  size_t remaining() const { return n_ - pos_; }
  uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(p_[pos_]) | (uint16_t(p_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  const uint8_t* bytes(size_t n) {
    need(n);
    const uint8_t* r = p_ + pos_;
    pos_ += n;
    return r;
  }

private:
  void need(size_t n) const {
    check_io(pos_ + n <= n_, "bitstream truncated");
  }
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// CRC-32 (IEEE 802.3, reflected).

inline uint32_t crc32(const uint8_t* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (~(c & 1) + 1));
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------------
// Entropy-coded chunk. Wire layout: [u32 payload_len][u8 tag][payload][u32 crc].

enum class StreamTag : uint8_t { Intra = 0, Flow = 1, Residual = 2, Hyper = 3 };

inline const char* to_string(StreamTag t) {
  switch (t) {
    case StreamTag::Intra: return "intra";
    case StreamTag::Flow: return "flow";
    case StreamTag::Residual: return "residual";
    case StreamTag::Hyper: return "hyper";
  }
  return "?";
}

struct BitChunk {
  StreamTag tag = StreamTag::Intra;
  std::vector<uint8_t> payload;
  double estimated_bits = 0.0;

  int64_t exact_bits() const { return 8 * int64_t(payload.size()); }

  void serialize(ByteWriter& w) const {
    w.u32(uint32_t(payload.size()));
    w.u8(uint8_t(tag));
    w.bytes(payload.data(), payload.size());
    w.u32(crc32(payload.data(), payload.size()));
  }

  static BitChunk deserialize(ByteReader& r) {
    BitChunk c;
    uint32_t len = r.u32();
    uint8_t tag = r.u8();
    check_io(tag <= 3, "bitchunk: bad stream tag");
    c.tag = StreamTag(tag);
    const uint8_t* p = r.bytes(len);
    c.payload.assign(p, p + len);
    uint32_t want = r.u32();
    check_io(crc32(c.payload.data(), c.payload.size()) == want,
             "bitchunk: checksum mismatch (corrupted payload)");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Range coder, LZMA-style carry handling. Cumulative frequency tables use a
// fixed 2^16 total; 32-bit range with 64-bit low.

class RangeEncoder {
public:
  static constexpr uint32_t kTop = 1u << 24;
  static constexpr uint32_t kTotalBits = 16;

  void encode(uint32_t cum, uint32_t freq) {
    uint32_t r = range_ >> kTotalBits;
    low_ += uint64_t(cum) * r;
    range_ = r * freq;
    while (range_ < kTop) {
      shift_low();
      range_ <<= 8;
    }
  }

  void encode_raw_bits(uint32_t value, int nbits) {
    for (int i = nbits - 1; i >= 0; --i) {
      uint32_t bit = (value >> i) & 1;
      encode(bit << 15, 1u << 15);
    }
  }

  std::vector<uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(buf_);
  }

private:
  void shift_low() {
    if (uint32_t(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      uint8_t carry = uint8_t(low_ >> 32);
      do {
        buf_.push_back(uint8_t(cache_ + carry));
        cache_ = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = uint8_t(uint32_t(low_) >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFull) << 8;
  }

  std::vector<uint8_t> buf_;
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
};

class RangeDecoder {
public:
  RangeDecoder(const uint8_t* p, size_t n) : p_(p), n_(n) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
  }
  explicit RangeDecoder(const std::vector<uint8_t>& v)
      : RangeDecoder(v.data(), v.size()) {}

  // Returns a value in [0, 2^16); caller maps it to a symbol interval.
  uint32_t decode_freq() {
    r_ = range_ >> RangeEncoder::kTotalBits;
    uint32_t f = code_ / r_;
    return std::min(f, (1u << RangeEncoder::kTotalBits) - 1);
  }

  void decode_update(uint32_t cum, uint32_t freq) {
    code_ -= cum * r_;
    range_ = r_ * freq;
    while (range_ < RangeEncoder::kTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

  uint32_t decode_raw_bits(int nbits) {
    uint32_t v = 0;
    for (int i = 0; i < nbits; ++i) {
      uint32_t f = decode_freq();
      uint32_t bit = f >> 15;
      decode_update(bit << 15, 1u << 15);
      v = (v << 1) | bit;
    }
    return v;
  }

private:
  uint8_t next_byte() { return pos_ < n_ ? p_[pos_++] : 0; }

  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
  uint32_t r_ = 0;
};

// ---------------------------------------------------------------------------
// Frequency-table construction: clamp every symbol to freq >= 1 and force the
// total to exactly 2^16 by nudging the largest entries.

inline std::vector<uint32_t> quantize_freqs(const std::vector<double>& probs) {
  const uint32_t total = 1u << RangeEncoder::kTotalBits;
  const size_t ns = probs.size();
  check(ns >= 1 && ns < total / 2, "quantize_freqs: bad symbol count");
  std::vector<uint32_t> f(ns);
  int64_t sum = 0;
  for (size_t i = 0; i < ns; ++i) {
    double p = std::max(probs[i], 0.0);
    f[i] = std::max<uint32_t>(1, uint32_t(std::llround(p * total)));
    sum += f[i];
  }
  while (sum != int64_t(total)) {
    size_t best = 0;
    if (sum > int64_t(total)) {
      for (size_t i = 1; i < ns; ++i)
        if (f[i] > f[best]) best = i;
      uint32_t d = std::min<uint32_t>(f[best] - 1, uint32_t(sum - total));
      check(d > 0, "quantize_freqs: cannot renormalize");
      f[best] -= d;
      sum -= d;
    } else {
      for (size_t i = 1; i < ns; ++i)
        if (f[i] > f[best]) best = i;
      uint32_t d = uint32_t(total - sum);
      f[best] += d;
      sum += d;
    }
  }
  return f;
}

inline std::vector<uint32_t> cumulative(const std::vector<uint32_t>& f) {
  std::vector<uint32_t> cum(f.size() + 1, 0);
  for (size_t i = 0; i < f.size(); ++i) cum[i + 1] = cum[i] + f[i];
  return cum;
}

inline size_t find_symbol(const std::vector<uint32_t>& cum, uint32_t f) {
  // cum has ns+1 entries; returns i with cum[i] <= f < cum[i+1].
  size_t lo = 0, hi = cum.size() - 2;
  while (lo < hi) {
    size_t mid = (lo + hi + 1) / 2;
    if (cum[mid] <= f) lo = mid;
    else hi = mid - 1;
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Gaussian-conditional coding. Each element gets a window of integer symbols
// around round(mu) sized from sigma, plus a final escape symbol that switches
// to 32 raw bits (zigzag offset from the window center). Encoder and decoder
// derive identical tables from identical (mu, sigma).

namespace gaussian_code {

inline int window_radius(double sigma) {
  double s = std::min(std::max(sigma, kSigmaMin), 1e6);
  return int(std::min(64.0, std::ceil(4.0 * s) + 2.0));
}

inline std::vector<uint32_t> element_cum(double mu, double sigma, int center,
                                         int radius) {
  std::vector<double> probs(2 * radius + 2);
  double acc = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double p = dg_prob_scalar(center + i, mu, sigma);
    probs[i + radius] = p;
    acc += p;
  }
  probs.back() = std::max(1.0 - acc, 0.0);  // escape
  return cumulative(quantize_freqs(probs));
}

inline uint32_t zigzag(int32_t v) {
  return (uint32_t(v) << 1) ^ uint32_t(v >> 31);
}
inline int32_t unzigzag(uint32_t u) {
  return int32_t(u >> 1) ^ -int32_t(u & 1);
}

inline void encode(RangeEncoder& enc, const Tensor& z, const Tensor& mu,
                   const Tensor& sigma) {
  check(z.shape() == mu.shape() && z.shape() == sigma.shape(),
        "gaussian encode: shape mismatch");
  for (int64_t i = 0; i < z.numel(); ++i) {
    int center = int(round_half_away(mu[i]));
    int radius = window_radius(sigma[i]);
    auto cum = element_cum(mu[i], sigma[i], center, radius);
    int zi = int(z[i]);
    int sym = zi - center + radius;
    if (sym >= 0 && sym < 2 * radius + 1) {
      enc.encode(cum[sym], cum[sym + 1] - cum[sym]);
    } else {
      size_t esc = 2 * radius + 1;
      enc.encode(cum[esc], cum[esc + 1] - cum[esc]);
      enc.encode_raw_bits(zigzag(zi - center), 32);
    }
  }
}

inline Tensor decode(RangeDecoder& dec, const Tensor& mu, const Tensor& sigma) {
  Tensor z(mu.shape());
  for (int64_t i = 0; i < z.numel(); ++i) {
    int center = int(round_half_away(mu[i]));
    int radius = window_radius(sigma[i]);
    auto cum = element_cum(mu[i], sigma[i], center, radius);
    uint32_t f = dec.decode_freq();
    size_t sym = find_symbol(cum, f);
    dec.decode_update(cum[sym], cum[sym + 1] - cum[sym]);
    if (sym < size_t(2 * radius + 1)) {
      z[i] = double(center + int(sym) - radius);
    } else {
      z[i] = double(center + unzigzag(dec.decode_raw_bits(32)));
    }
  }
  return z;
}

}  // namespace gaussian_code

// ---------------------------------------------------------------------------
// Factorized coding for hyper-latents: one static table per channel over a
// fixed support, escape for outliers.

class FactorizedTables {
public:
  static constexpr int kLo = -255, kHi = 255;

  explicit FactorizedTables(const FactorizedModel& model) {
    const int ns = kHi - kLo + 1;
    cum_.resize(model.channels());
    for (int c = 0; c < model.channels(); ++c) {
      std::vector<double> probs(ns + 1);
      double acc = 0.0;
      double cdf_lo = model.cdf_scalar(c, kLo - 0.5);
      for (int s = 0; s < ns; ++s) {
        double cdf_hi = model.cdf_scalar(c, kLo + s + 0.5);
        probs[s] = std::max(cdf_hi - cdf_lo, 0.0);
        cdf_lo = cdf_hi;
        acc += probs[s];
      }
      probs[ns] = std::max(1.0 - acc, 0.0);  // escape
      cum_[c] = cumulative(quantize_freqs(probs));
    }
  }

  void encode(RangeEncoder& enc, const Tensor& z) const {
    const Shape& s = z.shape();
    check(s.c == int(cum_.size()), "factorized encode: channel mismatch");
    const int64_t plane = int64_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const auto& cum = cum_[c];
        const double* p = z.data() + (int64_t(n) * s.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          int zi = int(p[i]);
          int sym = zi - kLo;
          if (sym >= 0 && sym <= kHi - kLo) {
            enc.encode(cum[sym], cum[sym + 1] - cum[sym]);
          } else {
            size_t esc = kHi - kLo + 1;
            enc.encode(cum[esc], cum[esc + 1] - cum[esc]);
            enc.encode_raw_bits(gaussian_code::zigzag(zi), 32);
          }
        }
      }
  }

  Tensor decode(RangeDecoder& dec, const Shape& shape) const {
    check(shape.c == int(cum_.size()), "factorized decode: channel mismatch");
    Tensor z(shape);
    const int64_t plane = int64_t(shape.h) * shape.w;
    for (int n = 0; n < shape.n; ++n)
      for (int c = 0; c < shape.c; ++c) {
        const auto& cum = cum_[c];
        double* p = z.data() + (int64_t(n) * shape.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          uint32_t f = dec.decode_freq();
          size_t sym = find_symbol(cum, f);
          dec.decode_update(cum[sym], cum[sym + 1] - cum[sym]);
          if (sym <= size_t(kHi - kLo))
            p[i] = double(kLo + int(sym));
          else
            p[i] = double(gaussian_code::unzigzag(dec.decode_raw_bits(32)));
        }
      }
    return z;
  }

private:
  std::vector<std::vector<uint32_t>> cum_;
};

}  // namespace hrvc
