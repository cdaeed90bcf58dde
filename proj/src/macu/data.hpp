#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "macu/common.hpp"
#include "macu/tensor.hpp"

namespace macu {

// Netpbm codec errors, one named type per failure mode.
struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};
struct MaxvalError : FormatError {
  using FormatError::FormatError;
};
struct MaskRangeError : ValueError {
  using ValueError::ValueError;
};

// 8-bit interleaved RGB (P6) and grayscale (P5) rasters.
struct Ppm {
  int64_t w = 0, h = 0;
  std::vector<uint8_t> data;  // h*w*3, row-major, rgb
};
struct Pgm {
  int64_t w = 0, h = 0;
  std::vector<uint8_t> data;  // h*w
};

namespace detail {

struct HeaderParse {
  int64_t w = 0, h = 0;
  size_t payload_off = 0;
};

inline bool is_space(uint8_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Parses "P6"/"P5", an optional single comment line after the magic, then
// width, height and maxval; the payload starts one whitespace byte after
// maxval.
inline HeaderParse parse_header(const std::vector<uint8_t>& b, const char* magic) {
  if (b.size() < 2 || b[0] != uint8_t(magic[0]) || b[1] != uint8_t(magic[1]))
    throw BadMagicError(std::string("expected magic ") + magic);
  size_t i = 2;
  auto skip_space = [&] {
    while (i < b.size() && is_space(b[i])) ++i;
  };
  skip_space();
  if (i < b.size() && b[i] == '#') {  // one comment line permitted here
    while (i < b.size() && b[i] != '\n') ++i;
    skip_space();
  }
  auto read_int = [&]() -> int64_t {
    skip_space();
    if (i >= b.size() || b[i] < '0' || b[i] > '9')
      throw FormatError("malformed netpbm header");
    int64_t v = 0;
    while (i < b.size() && b[i] >= '0' && b[i] <= '9') {
      v = v * 10 + (b[i] - '0');
      if (v > (int64_t(1) << 31)) throw FormatError("netpbm dimension overflow");
      ++i;
    }
    return v;
  };
  HeaderParse hp;
  hp.w = read_int();
  hp.h = read_int();
  int64_t maxval = read_int();
  if (maxval != 255)
    throw MaxvalError("maxval " + std::to_string(maxval) + " unsupported, need 255");
  if (i >= b.size() || !is_space(b[i])) throw FormatError("malformed netpbm header");
  hp.payload_off = i + 1;
  if (hp.w < 1 || hp.h < 1) throw FormatError("non-positive netpbm dimensions");
  return hp;
}

}  // namespace detail

inline Ppm decode_ppm(const std::vector<uint8_t>& bytes) {
  auto hp = detail::parse_header(bytes, "P6");
  Ppm img;
  img.w = hp.w;
  img.h = hp.h;
  const size_t need = size_t(hp.w) * size_t(hp.h) * 3;
  if (bytes.size() < hp.payload_off + need)
    throw TruncatedError("P6 payload truncated: need " + std::to_string(need) +
                         " bytes");
  img.data.assign(bytes.begin() + hp.payload_off,
                  bytes.begin() + hp.payload_off + need);
  return img;
}

inline Pgm decode_pgm(const std::vector<uint8_t>& bytes) {
  auto hp = detail::parse_header(bytes, "P5");
  Pgm img;
  img.w = hp.w;
  img.h = hp.h;
  const size_t need = size_t(hp.w) * size_t(hp.h);
  if (bytes.size() < hp.payload_off + need)
    throw TruncatedError("P5 payload truncated: need " + std::to_string(need) +
                         " bytes");
  img.data.assign(bytes.begin() + hp.payload_off,
                  bytes.begin() + hp.payload_off + need);
  return img;
}

inline std::vector<uint8_t> encode_ppm(const Ppm& img) {
  std::string head = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) +
                     "\n255\n";
  std::vector<uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

inline std::vector<uint8_t> encode_pgm(const Pgm& img) {
  std::string head = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) +
                     "\n255\n";
  std::vector<uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

// byte <-> unit-interval scalar conversion; quantization is round-half-up
// with clamping
template <typename T>
Tensor<T> image_to_tensor(const Ppm& img) {
  Tensor<T> t({1, 3, img.h, img.w});
  const int64_t hw = img.h * img.w;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c)
      t.v[c * hw + i] = T(img.data[i * 3 + c]) / T(255);
  return t;
}

template <typename T>
Ppm tensor_to_image(const Tensor<T>& t) {
  if (t.shape.n != 1 || t.shape.c != 3)
    throw ShapeError("tensor_to_image: need [1,3,H,W], got " + t.shape.str());
  Ppm img;
  img.h = t.shape.h;
  img.w = t.shape.w;
  const int64_t hw = img.h * img.w;
  img.data.resize(size_t(hw) * 3);
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      double q = std::floor(double(t.v[c * hw + i]) * 255.0 + 0.5);
      img.data[i * 3 + c] = uint8_t(std::min(255.0, std::max(0.0, q)));
    }
  return img;
}

inline ClassMask mask_from_pgm(const Pgm& img) {
  ClassMask m;
  m.n = 1;
  m.h = img.h;
  m.w = img.w;
  m.v.assign(img.data.begin(), img.data.end());
  return m;
}

inline Pgm mask_to_pgm(const ClassMask& m, int64_t n = 0) {
  Pgm img;
  img.h = m.h;
  img.w = m.w;
  img.data.resize(size_t(m.h) * size_t(m.w));
  for (int64_t i = 0; i < m.h * m.w; ++i) {
    int32_t v = m.v[n * m.h * m.w + i];
    if (v < 0 || v > 255)
      throw MaskRangeError("mask value " + std::to_string(v) +
                           " not storable as a byte");
    img.data[i] = uint8_t(v);
  }
  return img;
}

inline void validate_mask(const ClassMask& m, int classes) {
  for (int32_t v : m.v)
    if (v < 0 || v >= classes)
      throw MaskRangeError("mask value " + std::to_string(v) +
                           " outside 0.." + std::to_string(classes - 1));
}

// ---- file helpers ----

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> out(static_cast<size_t>(len));
  if (len > 0 && !f.read(reinterpret_cast<char*>(out.data()), len))
    throw IoError("short read on " + path);
  return out;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot create " + path);
  if (!bytes.empty() &&
      !f.write(reinterpret_cast<const char*>(bytes.data()), bytes.size()))
    throw IoError("short write on " + path);
}

// ---- palette / colorization ----

// First six entries are fixed and documented in the README; further classes
// get golden-ratio-spaced hues.
inline std::vector<std::array<uint8_t, 3>> palette(int classes) {
  static const std::array<uint8_t, 3> base[6] = {
      {0, 0, 0},      {230, 25, 75},  {60, 180, 75},
      {255, 225, 25}, {0, 130, 200},  {240, 50, 230}};
  std::vector<std::array<uint8_t, 3>> out;
  for (int c = 0; c < classes; ++c) {
    if (c < 6) {
      out.push_back(base[c]);
      continue;
    }
    double hue = std::fmod(0.61803398875 * (c - 6) + 0.12, 1.0) * 6.0;
    double s = 0.85, v = 0.95;
    double f = hue - std::floor(hue);
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    double r, g, b;
    switch (int(hue) % 6) {
      case 0: r = v; g = t; b = p; break;
      case 1: r = q; g = v; b = p; break;
      case 2: r = p; g = v; b = t; break;
      case 3: r = p; g = q; b = v; break;
      case 4: r = t; g = p; b = v; break;
      default: r = v; g = p; b = q; break;
    }
    out.push_back({uint8_t(r * 255 + 0.5), uint8_t(g * 255 + 0.5),
                   uint8_t(b * 255 + 0.5)});
  }
  return out;
}

inline Ppm colorize_prediction(const ClassMask& m,
                               const std::vector<std::array<uint8_t, 3>>& pal,
                               int64_t n = 0) {
  Ppm img;
  img.h = m.h;
  img.w = m.w;
  img.data.resize(size_t(m.h) * size_t(m.w) * 3);
  for (int64_t i = 0; i < m.h * m.w; ++i) {
    int32_t c = m.v[n * m.h * m.w + i];
    if (c < 0 || c >= int64_t(pal.size()))
      throw MaskRangeError("class " + std::to_string(c) + " outside palette");
    img.data[i * 3 + 0] = pal[c][0];
    img.data[i * 3 + 1] = pal[c][1];
    img.data[i * 3 + 2] = pal[c][2];
  }
  return img;
}

// ---- tiling ----

inline std::pair<int64_t, int64_t> tile_grid(int64_t w, int64_t h, int patch) {
  if (patch < 1) throw ValueError("patch size must be positive");
  return {w / patch, h / patch};  // cols, rows; edge remainders discarded
}

struct TilePair {
  Ppm image;
  Pgm mask;
  std::string stem;
};

// Row-major non-overlapping grid; residual right/bottom pixels discarded.
inline std::vector<TilePair> tile_pair(const Ppm& img, const Pgm& mask,
                                       const std::string& stem, int patch) {
  if (img.w != mask.w || img.h != mask.h)
    throw ShapeError("tile: image " + std::to_string(img.w) + "x" +
                     std::to_string(img.h) + " vs mask " + std::to_string(mask.w) +
                     "x" + std::to_string(mask.h));
  auto [cols, rows] = tile_grid(img.w, img.h, patch);
  std::vector<TilePair> out;
  out.reserve(size_t(cols * rows));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      TilePair t;
      t.stem = stem + "_r" + std::to_string(r) + "_c" + std::to_string(c);
      t.image.w = t.image.h = patch;
      t.image.data.resize(size_t(patch) * patch * 3);
      t.mask.w = t.mask.h = patch;
      t.mask.data.resize(size_t(patch) * patch);
      for (int64_t y = 0; y < patch; ++y) {
        const int64_t sy = r * patch + y, sx = c * patch;
        std::copy_n(img.data.begin() + (sy * img.w + sx) * 3, size_t(patch) * 3,
                    t.image.data.begin() + y * patch * 3);
        std::copy_n(mask.data.begin() + sy * mask.w + sx, size_t(patch),
                    t.mask.data.begin() + y * patch);
      }
      out.push_back(std::move(t));
    }
  return out;
}

// ---- dataset directory layout ----
// <root>/images/<stem>.ppm, <root>/masks/<stem>.pgm, split file <root>/split.tsv

inline std::string images_dir(const std::string& root) { return root + "/images"; }
inline std::string masks_dir(const std::string& root) { return root + "/masks"; }
inline std::string split_path(const std::string& root) { return root + "/split.tsv"; }

inline std::vector<std::string> list_stems(const std::string& root) {
  namespace fs = std::filesystem;
  const std::string dir = images_dir(root);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("no images directory at " + dir);
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto p = e.path();
    if (p.extension() == ".ppm") stems.push_back(p.stem().string());
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

inline void save_pair(const std::string& root, const std::string& stem,
                      const Ppm& img, const Pgm* mask) {
  namespace fs = std::filesystem;
  fs::create_directories(images_dir(root));
  write_file(images_dir(root) + "/" + stem + ".ppm", encode_ppm(img));
  if (mask) {
    fs::create_directories(masks_dir(root));
    write_file(masks_dir(root) + "/" + stem + ".pgm", encode_pgm(*mask));
  }
}

inline Ppm load_image(const std::string& root, const std::string& stem) {
  return decode_ppm(read_file(images_dir(root) + "/" + stem + ".ppm"));
}

inline Pgm load_mask(const std::string& root, const std::string& stem) {
  return decode_pgm(read_file(masks_dir(root) + "/" + stem + ".pgm"));
}

// ---- splitting ----

enum class SplitSet : int { train = 0, val = 1, test = 2 };

inline const char* split_set_name(SplitSet s) {
  switch (s) {
    case SplitSet::train: return "train";
    case SplitSet::val: return "val";
    case SplitSet::test: return "test";
  }
  return "?";
}

inline SplitSet parse_split_set(const std::string& s) {
  if (s == "train") return SplitSet::train;
  if (s == "val") return SplitSet::val;
  if (s == "test") return SplitSet::test;
  throw FormatError("unknown split name '" + s + "'");
}

struct SplitAssignment {
  std::vector<std::string> stems;  // sorted
  std::vector<SplitSet> sets;      // parallel to stems
};

inline std::array<int64_t, 3> split_counts(int64_t n, double f_train, double f_val) {
  const int64_t ntr = int64_t(std::floor(f_train * double(n)));
  const int64_t nva = int64_t(std::floor(f_val * double(n)));
  return {ntr, nva, n - ntr - nva};
}

// Seeded Fisher-Yates over the sorted stem list, then contiguous assignment
// with floor-based counts.
inline SplitAssignment split_dataset(std::vector<std::string> stems,
                                     double f_train, double f_val, double f_test,
                                     uint64_t seed) {
  if (stems.empty()) throw ValueError("split: empty stem list");
  if (std::fabs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ValueError("split: fractions must sum to 1");
  if (f_train < 0 || f_val < 0 || f_test < 0)
    throw ValueError("split: negative fraction");
  std::sort(stems.begin(), stems.end());
  std::vector<size_t> order(stems.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (size_t i = order.size() - 1; i >= 1; --i)
    std::swap(order[i], order[rng.next_below(i + 1)]);

  const auto counts = split_counts(int64_t(stems.size()), f_train, f_val);
  SplitAssignment out;
  out.stems = stems;
  out.sets.resize(stems.size());
  for (size_t pos = 0; pos < order.size(); ++pos) {
    SplitSet s = pos < size_t(counts[0])               ? SplitSet::train
                 : pos < size_t(counts[0] + counts[1]) ? SplitSet::val
                                                       : SplitSet::test;
    out.sets[order[pos]] = s;
  }
  return out;
}

// split file: lines "<stem>\t<train|val|test>", sorted by stem, LF endings
inline void write_split_file(const std::string& path, const SplitAssignment& a) {
  std::string text;
  for (size_t i = 0; i < a.stems.size(); ++i) {
    text += a.stems[i];
    text += '\t';
    text += split_set_name(a.sets[i]);
    text += '\n';
  }
  write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

inline SplitAssignment read_split_file(const std::string& path) {
  const auto bytes = read_file(path);
  SplitAssignment a;
  std::string line;
  auto flush = [&] {
    if (line.empty()) return;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("split line lacks a tab: " + line);
    a.stems.push_back(line.substr(0, tab));
    a.sets.push_back(parse_split_set(line.substr(tab + 1)));
    line.clear();
  };
  for (uint8_t b : bytes) {
    if (b == '\n')
      flush();
    else
      line += char(b);
  }
  flush();
  return a;
}

inline std::vector<std::string> stems_in_set(const SplitAssignment& a, SplitSet s) {
  std::vector<std::string> out;
  for (size_t i = 0; i < a.stems.size(); ++i)
    if (a.sets[i] == s) out.push_back(a.stems[i]);
  return out;
}

// ---- synthetic data ----

struct SynthOptions {
  int count = 8;
  int size = 64;
  int classes = 6;
  uint64_t seed = 7;
  double noise = 0.05;
};

namespace detail {

inline std::vector<TilePair> synth_attempt(const SynthOptions& o, uint64_t seed) {
  Rng rng(seed);
  const auto pal = palette(o.classes);
  const int S = o.size;
  std::vector<TilePair> out;
  for (int s = 0; s < o.count; ++s) {
    TilePair t;
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%04d", s);
    t.stem = stem;
    t.mask.w = t.mask.h = S;
    t.mask.data.assign(size_t(S) * S, 0);
    const int nshapes = 3 + int(rng.next_below(4));
    for (int q = 0; q < nshapes; ++q) {
      const int kind = int(rng.next_below(2));  // 0 rect, 1 ellipse
      const uint8_t cls = uint8_t(1 + rng.next_below(uint64_t(o.classes - 1)));
      if (kind == 0) {
        int64_t x0 = int64_t(rng.next_below(uint64_t(S)));
        int64_t y0 = int64_t(rng.next_below(uint64_t(S)));
        int64_t w = S / 8 + int64_t(rng.next_below(uint64_t(3 * S / 8 + 1)));
        int64_t h = S / 8 + int64_t(rng.next_below(uint64_t(3 * S / 8 + 1)));
        for (int64_t y = y0; y < std::min<int64_t>(S, y0 + h); ++y)
          for (int64_t x = x0; x < std::min<int64_t>(S, x0 + w); ++x)
            t.mask.data[y * S + x] = cls;
      } else {
        double cx = double(rng.next_below(uint64_t(S)));
        double cy = double(rng.next_below(uint64_t(S)));
        double rx = double(S) / 8 + double(rng.next_below(uint64_t(S / 4 + 1)));
        double ry = double(S) / 8 + double(rng.next_below(uint64_t(S / 4 + 1)));
        for (int64_t y = 0; y < S; ++y)
          for (int64_t x = 0; x < S; ++x) {
            double dx = (double(x) - cx) / rx, dy = (double(y) - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) t.mask.data[y * S + x] = cls;
          }
      }
    }
    t.image.w = t.image.h = S;
    t.image.data.resize(size_t(S) * S * 3);
    for (int64_t i = 0; i < int64_t(S) * S; ++i) {
      const auto& base = pal[t.mask.data[i]];
      for (int c = 0; c < 3; ++c) {
        double v = double(base[c]) / 255.0 +
                   o.noise * (2.0 * rng.next_unit() - 1.0);
        double q = std::floor(v * 255.0 + 0.5);
        t.image.data[i * 3 + c] = uint8_t(std::min(255.0, std::max(0.0, q)));
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

// Background plus a handful of random rectangles and ellipses, class-colored
// with additive pixel noise; retries nearby seeds until every class occurs
// somewhere in the set.
inline std::vector<TilePair> synth_generate(const SynthOptions& o) {
  if (o.classes < 2) throw ValueError("synth: need at least 2 classes");
  if (o.count < 1) throw ValueError("synth: need at least 1 sample");
  if (o.size < 8) throw ValueError("synth: size too small");
  for (int attempt = 0; attempt < 10; ++attempt) {
    auto set = detail::synth_attempt(o, o.seed + uint64_t(attempt));
    std::vector<bool> seen(o.classes, false);
    for (const auto& t : set)
      for (uint8_t v : t.mask.data) seen[v] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return set;
  }
  throw ValueError("synth: class coverage not reached after 10 seed retries");
}

}  // namespace macu
