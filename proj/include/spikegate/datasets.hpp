#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spikegate/binary_io.hpp"
#include "spikegate/random.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

/// image: x is [C, H, W] with values in [0, 1].
/// event: x is [T, P, H, W] of non-negative counts, P = 2 polarities.
enum class SampleKind { image, event };
enum class Provenance { clean, poisoned };

struct Sample {
  Tensor x;
  std::size_t label = 0;
  bool poisoned = false;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  SampleKind kind = SampleKind::image;
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  Provenance provenance = Provenance::clean;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  const Shape& sample_shape() const {
    if (samples.empty()) throw ConfigError("dataset is empty");
    return samples.front().x.shape();
  }

  /// Steps carried by each sample: T for event data, 1 for images.
  std::size_t timesteps() const { return kind == SampleKind::event ? sample_shape()[0] : 1; }

  void validate() const {
    if (samples.empty()) throw ConfigError("dataset is empty");
    if (num_classes == 0) throw ConfigError("dataset has zero classes");
    const Shape& shape = sample_shape();
    if (kind == SampleKind::image && shape.size() != 3) throw ShapeError("image samples must be [C,H,W]");
    if (kind == SampleKind::event && (shape.size() != 4 || shape[1] != 2)) {
      throw ShapeError("event samples must be [T,2,H,W], got " + shape_string(shape));
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      if (s.x.shape() != shape) {
        throw ShapeError("sample " + std::to_string(i) + " has shape " + shape_string(s.x.shape()) + ", expected " +
                         shape_string(shape));
      }
      if (s.label >= num_classes) throw ConfigError("sample " + std::to_string(i) + " label out of range");
    }
  }

  /// Content hash over kind, class count, labels and sample values;
  /// provenance bookkeeping is excluded.
  std::uint64_t hash() const {
    Fnv1a h;
    h.u64(static_cast<std::uint64_t>(kind));
    h.u64(num_classes);
    h.u64(samples.size());
    for (const auto& s : samples) {
      h.u64(s.x.rank());
      for (std::size_t d : s.x.shape()) h.u64(d);
      for (double v : s.x.data()) h.f64(v);
      h.u64(s.label);
    }
    return h.value();
  }

  /// Same samples and labels (provenance tags ignored).
  bool same_content(const Dataset& o) const {
    if (kind != o.kind || num_classes != o.num_classes || samples.size() != o.samples.size()) return false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label != o.samples[i].label || !(samples[i].x == o.samples[i].x)) return false;
    }
    return true;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (const auto& s : samples) ++c.at(s.label);
    return c;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d = *this;
    d.samples.clear();
    d.samples.reserve(idx.size());
    for (std::size_t i : idx) d.samples.push_back(samples.at(i));
    return d;
  }
};

/// Leading `fraction` of the samples versus the rest.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0,1)");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d.size())));
  std::pair<Dataset, Dataset> out{d, d};
  out.first.samples.assign(d.samples.begin(), d.samples.begin() + static_cast<std::ptrdiff_t>(k));
  out.second.samples.assign(d.samples.begin() + static_cast<std::ptrdiff_t>(k), d.samples.end());
  return out;
}

// ---------------------------------------------------------------------------
// Batching

/// Network input for the samples `idx`: static [N, C, H, W] for images,
/// temporal [T, N, P, H, W] for event data.
struct Batch {
  Tensor data;
  bool temporal = false;
  std::vector<std::size_t> labels;
  std::vector<char> poisoned;
};

inline Batch make_batch(const Dataset& d, std::span<const std::size_t> idx) {
  const Shape& shape = d.sample_shape();
  const std::size_t n = idx.size();
  Batch b;
  b.labels.reserve(n);
  b.poisoned.reserve(n);
  for (std::size_t i : idx) {
    b.labels.push_back(d.samples.at(i).label);
    b.poisoned.push_back(d.samples[i].poisoned ? 1 : 0);
  }
  if (d.kind == SampleKind::image) {
    Shape bs{n};
    bs.insert(bs.end(), shape.begin(), shape.end());
    b.data = Tensor(bs);
    const std::size_t per = shape_size(shape);
    for (std::size_t k = 0; k < n; ++k) {
      const auto src = d.samples[idx[k]].x.data();
      std::copy(src.begin(), src.end(), b.data.data().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return b;
  }
  const std::size_t T = shape[0];
  Shape frame(shape.begin() + 1, shape.end());
  const std::size_t per = shape_size(frame);
  Shape bs{T, n};
  bs.insert(bs.end(), frame.begin(), frame.end());
  b.data = Tensor(bs);
  b.temporal = true;
  for (std::size_t k = 0; k < n; ++k) {
    const auto src = d.samples[idx[k]].x.data();
    for (std::size_t t = 0; t < T; ++t) {
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(t * per), src.begin() + static_cast<std::ptrdiff_t>((t + 1) * per),
                b.data.data().begin() + static_cast<std::ptrdiff_t>((t * n + k) * per));
    }
  }
  return b;
}

inline std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

// ---------------------------------------------------------------------------
// Temporal replication

/// x -> x^{1:T}: every frame is a copy of the static sample.
inline Tensor replicate_temporal(const Tensor& x, std::size_t T) {
  if (T == 0) throw ConfigError("replicate_temporal: T must be >= 1");
  Shape s{T};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  Tensor out(s);
  const std::size_t per = x.size();
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(t * per));
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) files

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline Dataset parse_idx(const std::vector<unsigned char>& image_bytes, const std::vector<unsigned char>& label_bytes) {
  io::Reader img(image_bytes, "idx images");
  const std::uint32_t im = img.be32();
  if (im != kIdxImageMagic) throw BadMagicError("idx images: bad magic " + std::to_string(im));
  const std::uint32_t n = img.be32(), rows = img.be32(), cols = img.be32();
  io::Reader lab(label_bytes, "idx labels");
  const std::uint32_t lm = lab.be32();
  if (lm != kIdxLabelMagic) throw BadMagicError("idx labels: bad magic " + std::to_string(lm));
  const std::uint32_t nl = lab.be32();
  if (nl != n) {
    throw CountMismatchError("idx: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  }
  const std::size_t per = std::size_t{rows} * cols;
  img.need(per * n);
  lab.need(n);
  Dataset d;
  d.kind = SampleKind::image;
  d.samples.reserve(n);
  std::size_t max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.x = Tensor({1, rows, cols});
    const unsigned char* p = img.take(per);
    for (std::size_t k = 0; k < per; ++k) s.x[k] = static_cast<double>(p[k]) / 255.0;
    s.label = lab.u8();
    max_label = std::max(max_label, s.label);
    d.samples.push_back(std::move(s));
  }
  if (img.remaining() != 0 || lab.remaining() != 0) throw CountMismatchError("idx: trailing bytes after payload");
  d.num_classes = std::max<std::size_t>(10, max_label + 1);
  return d;
}

inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(io::read_file(images), io::read_file(labels));
}

inline std::vector<unsigned char> encode_idx_images(const Dataset& d) {
  io::Writer w;
  const Shape& s = d.sample_shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("idx images must be single-channel");
  auto be = [&](std::uint32_t v) {
    for (int k = 3; k >= 0; --k) w.u8(static_cast<std::uint8_t>(v >> (8 * k)));
  };
  be(kIdxImageMagic);
  be(static_cast<std::uint32_t>(d.size()));
  be(static_cast<std::uint32_t>(s[1]));
  be(static_cast<std::uint32_t>(s[2]));
  for (const auto& smp : d.samples)
    for (double v : smp.x.data()) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return std::move(w.bytes());
}

inline std::vector<unsigned char> encode_idx_labels(const Dataset& d) {
  io::Writer w;
  auto be = [&](std::uint32_t v) {
    for (int k = 3; k >= 0; --k) w.u8(static_cast<std::uint8_t>(v >> (8 * k)));
  };
  be(kIdxLabelMagic);
  be(static_cast<std::uint32_t>(d.size()));
  for (const auto& smp : d.samples) w.u8(static_cast<std::uint8_t>(smp.label));
  return std::move(w.bytes());
}

// ---------------------------------------------------------------------------
// EVF event-frame container

inline constexpr char kEvfMagic[4] = {'S', 'G', 'E', 'V'};
inline constexpr std::uint32_t kEvfVersion = 1;

inline std::vector<unsigned char> encode_evf(const Dataset& d) {
  if (d.kind != SampleKind::event) throw ConfigError("EVF holds event datasets only");
  d.validate();
  const Shape& s = d.sample_shape();
  for (std::size_t v : s) {
    if (v > 0xFFFF) throw ConfigError("EVF dimensions must fit in 16 bits");
  }
  io::Writer w;
  w.raw(kEvfMagic, 4);
  w.le<std::uint32_t>(kEvfVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(d.size()));
  for (std::size_t v : s) w.le<std::uint16_t>(static_cast<std::uint16_t>(v));
  for (const auto& smp : d.samples) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(smp.label));
    for (double v : smp.x.data()) {
      if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
        throw ConfigError("EVF stores integer counts in [0,255], got " + std::to_string(v));
      }
      w.u8(static_cast<std::uint8_t>(v));
    }
  }
  return std::move(w.bytes());
}

inline Dataset decode_evf(const std::vector<unsigned char>& bytes, std::size_t num_classes = 0) {
  io::Reader r(bytes, "evf");
  if (r.str(4) != std::string(kEvfMagic, 4)) throw BadMagicError("evf: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kEvfVersion) throw FormatError("evf: unsupported version " + std::to_string(version));
  const auto n = r.le<std::uint32_t>();
  Shape s(4);
  for (auto& v : s) v = r.le<std::uint16_t>();
  const std::size_t per = shape_size(s);
  Dataset d;
  d.kind = SampleKind::event;
  d.samples.reserve(n);
  std::size_t max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample smp;
    smp.label = r.le<std::uint32_t>();
    smp.x = Tensor(s);
    const unsigned char* p = r.take(per);
    for (std::size_t k = 0; k < per; ++k) smp.x[k] = p[k];
    max_label = std::max(max_label, smp.label);
    d.samples.push_back(std::move(smp));
  }
  if (r.remaining() != 0) throw CountMismatchError("evf: trailing bytes after " + std::to_string(n) + " samples");
  d.num_classes = std::max(num_classes, max_label + 1);
  return d;
}

inline void save_evf(const Dataset& d, const std::filesystem::path& path) { io::write_file(path, encode_evf(d)); }

inline Dataset load_evf(const std::filesystem::path& path, std::size_t num_classes = 0) {
  return decode_evf(io::read_file(path), num_classes);
}

// ---------------------------------------------------------------------------
// Synthetic datasets

enum class SynthKind { two_class_blobs, striped_digits };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "two-class-blobs") return SynthKind::two_class_blobs;
  if (s == "striped-digits") return SynthKind::striped_digits;
  throw ConfigError("unknown synthetic dataset '" + s + "'");
}

namespace detail {

// 3x5 glyphs for the digits 0-9, one row per string, '#' = ink.
inline constexpr std::array<std::array<const char*, 5>, 10> kDigitGlyphs = {{
    {"###", "#.#", "#.#", "#.#", "###"},
    {".#.", "##.", ".#.", ".#.", "###"},
    {"###", "..#", "###", "#..", "###"},
    {"###", "..#", ".##", "..#", "###"},
    {"#.#", "#.#", "###", "..#", "..#"},
    {"###", "#..", "###", "..#", "###"},
    {"###", "#..", "###", "#.#", "###"},
    {"###", "..#", ".#.", ".#.", ".#."},
    {"###", "#.#", "###", "#.#", "###"},
    {"###", "#.#", "###", "..#", "###"},
}};

// Digit glyph drawn with 2x2-pixel cells at a jittered offset, modulated by
// stripes of random phase and orientation, plus clipped gaussian noise.
inline Tensor striped_digit(std::size_t label, std::size_t side, Rng& rng) {
  Tensor x({1, side, side});
  const std::size_t gh = 10, gw = 6;
  const std::size_t max_r = side > gh + 2 ? side - gh - 2 : 0;
  const std::size_t max_c = side > gw + 2 ? side - gw - 2 : 0;
  const std::size_t r0 = 1 + static_cast<std::size_t>(rng.below(max_r + 1));
  const std::size_t c0 = 1 + static_cast<std::size_t>(rng.below(max_c + 1));
  const double ink = rng.uniform(0.7, 1.0);
  const bool vertical = rng.bernoulli(0.5);
  const std::size_t phase = static_cast<std::size_t>(rng.below(2));
  const auto& glyph = kDigitGlyphs[label % 10];
  for (std::size_t r = 0; r < gh && r0 + r < side; ++r) {
    for (std::size_t c = 0; c < gw && c0 + c < side; ++c) {
      if (glyph[r / 2][c / 2] != '#') continue;
      const std::size_t stripe = ((vertical ? c : r) + phase) % 2;
      x[(r0 + r) * side + c0 + c] = ink * (stripe ? 1.0 : 0.75);
    }
  }
  for (double& v : x.data()) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
  return x;
}

inline Tensor blob(std::size_t label, std::size_t side, Rng& rng) {
  Tensor x({1, side, side});
  const double s = static_cast<double>(side);
  const double cy = rng.uniform(0.3 * s, 0.7 * s);
  const double cx = (label == 0 ? rng.uniform(0.2, 0.35) : rng.uniform(0.65, 0.8)) * s;
  const double sigma = 0.12 * s;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) + 0.05 * rng.normal();
      x[r * side + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return x;
}

}  // namespace detail

/// Deterministic synthetic image set of n single-channel side x side
/// samples. Labels cycle through the classes (so the class counts differ by
/// at most one) and the sample order is then shuffled by the seed.
inline Dataset synth_dataset(SynthKind kind, std::size_t n, std::uint64_t seed, std::size_t side = 16,
                             std::size_t num_classes = 0) {
  if (num_classes == 0) num_classes = kind == SynthKind::two_class_blobs ? 2 : 10;
  if (kind == SynthKind::two_class_blobs && num_classes != 2) throw ConfigError("two-class-blobs has 2 classes");
  if (kind == SynthKind::striped_digits && num_classes > 10) throw ConfigError("striped-digits has at most 10 classes");
  if (n < num_classes) throw ConfigError("synthetic dataset needs n >= class count");
  if (side < 12) throw ConfigError("synthetic images need side >= 12");
  Dataset d;
  d.kind = SampleKind::image;
  d.num_classes = num_classes;
  d.seed = seed;
  d.samples.resize(n);
  const auto order = seeded_permutation(n, derive_seed(seed, "synth.order"));
  Rng rng(derive_seed(seed, "synth.pixels"));
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = d.samples[order[i]];
    s.label = i % num_classes;
    s.x = kind == SynthKind::two_class_blobs ? detail::blob(s.label, side, rng) : detail::striped_digit(s.label, side, rng);
  }
  return d;
}

}  // namespace spikegate
