#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcg/image_io.hpp"
#include "mcg/tensor.hpp"

namespace mcg {

/// Binary change mask, row-major, 1 = change.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}

  std::uint8_t& at(std::size_t i, std::size_t j) { return data[i * width + j]; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return data[i * width + j]; }
  std::size_t positives() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }
  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Co-registered bi-temporal pair. Images are 3×H×W in [0,1].
struct SamplePair {
  Tensor<float> img_t1;
  Tensor<float> img_t2;
  Mask label;
  std::string id;

  std::size_t height() const { return label.height; }
  std::size_t width() const { return label.width; }
};

// ---------------------------------------------------------------------------
// Raster conversions
// ---------------------------------------------------------------------------

inline Tensor<float> raster_to_image(const Raster& r) {
  if (r.channels != 3) throw IoError("expected an RGB raster");
  Tensor<float> t({3, r.height, r.width});
  const std::size_t P = r.height * r.width;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < 3; ++c) t[c * P + p] = static_cast<float>(r.pixels[p * 3 + c]) / 255.0f;
  return t;
}

inline Raster image_to_raster(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("image_to_raster expects 3×H×W");
  Raster r{t.dim(2), t.dim(1), 3, {}};
  const std::size_t P = r.height * r.width;
  r.pixels.resize(P * 3);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(t[c * P + p], 0.0f, 1.0f);
      r.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  return r;
}

/// Any nonzero gray level counts as change.
inline Mask raster_to_mask(const Raster& r) {
  if (r.channels != 1) throw IoError("expected a grayscale raster");
  Mask m(r.height, r.width);
  for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = r.pixels[k] != 0 ? 1 : 0;
  return m;
}

inline Raster mask_to_raster(const Mask& m) {
  Raster r{m.width, m.height, 1, std::vector<std::uint8_t>(m.data.size())};
  for (std::size_t k = 0; k < m.data.size(); ++k) r.pixels[k] = m.data[k] ? 255 : 0;
  return r;
}

inline void save_mask(const std::string& path, const Mask& m) { write_png(path, mask_to_raster(m)); }
inline Mask load_mask(const std::string& path) { return raster_to_mask(read_png(path, 1)); }

// ---------------------------------------------------------------------------
// Dataset files: root/{A,B,label}/<id>.png
// ---------------------------------------------------------------------------

struct DatasetLayout {
  std::string t1_dir = "A";
  std::string t2_dir = "B";
  std::string label_dir = "label";
};

inline SamplePair load_pair(const std::string& path_t1, const std::string& path_t2,
                            const std::optional<std::string>& path_label = std::nullopt) {
  for (const auto* p : {&path_t1, &path_t2}) {
    if (!std::filesystem::exists(*p)) throw IoError("missing file " + *p);
  }
  if (path_label && !std::filesystem::exists(*path_label)) throw IoError("missing file " + *path_label);
  SamplePair s;
  s.img_t1 = raster_to_image(read_png(path_t1, 3));
  s.img_t2 = raster_to_image(read_png(path_t2, 3));
  if (s.img_t1.shape() != s.img_t2.shape()) {
    throw ShapeError("image pair extents differ: " + shape_str(s.img_t1.shape()) + " vs " + shape_str(s.img_t2.shape()));
  }
  if (path_label) {
    s.label = load_mask(*path_label);
    if (s.label.height != s.img_t1.dim(1) || s.label.width != s.img_t1.dim(2)) throw ShapeError("label extents differ from images");
  } else {
    s.label = Mask(s.img_t1.dim(1), s.img_t1.dim(2));
  }
  s.id = std::filesystem::path(path_t1).stem().string();
  return s;
}

inline void save_pair(const SamplePair& s, const std::string& root, const DatasetLayout& layout = {}) {
  namespace fs = std::filesystem;
  for (const auto& d : {layout.t1_dir, layout.t2_dir, layout.label_dir}) {
    std::error_code ec;
    fs::create_directories(fs::path(root) / d, ec);
    if (ec) throw IoError("cannot create " + (fs::path(root) / d).string() + ": " + ec.message());
  }
  write_png((fs::path(root) / layout.t1_dir / (s.id + ".png")).string(), image_to_raster(s.img_t1));
  write_png((fs::path(root) / layout.t2_dir / (s.id + ".png")).string(), image_to_raster(s.img_t2));
  save_mask((fs::path(root) / layout.label_dir / (s.id + ".png")).string(), s.label);
}

/// All pairs under root, sorted by id.
inline std::vector<SamplePair> load_dataset(const std::string& root, const DatasetLayout& layout = {}) {
  namespace fs = std::filesystem;
  const fs::path t1 = fs::path(root) / layout.t1_dir;
  if (!fs::is_directory(t1)) throw IoError("dataset directory " + t1.string() + " not found");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(t1)) {
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw IoError("dataset " + root + " is empty");
  std::vector<SamplePair> out;
  for (const auto& id : ids) {
    out.push_back(load_pair((t1 / (id + ".png")).string(), (fs::path(root) / layout.t2_dir / (id + ".png")).string(),
                            (fs::path(root) / layout.label_dir / (id + ".png")).string()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic bi-temporal generator
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t count = 1;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_changes = 1;
  std::size_t max_changes = 3;
  // Shape box extents in pixels. The decoder predicts on a /4 grid, so
  // shapes much smaller than ~16 px are dominated by boundary error.
  std::size_t min_size = 16;
  std::size_t max_size = 32;
  std::size_t static_shapes = 2;  // distractors present at both times
  double ellipse_prob = 0.5;
  double insert_prob = 0.5;  // otherwise the shape is removed (present only at t1)
  // Changed shapes keep a 2 px gap from each other and contrast with every
  // static shape they overlap; a change that cannot be placed is dropped
  // (beyond min_changes). Without this, stacked changes and changes drawn
  // over a same-coloured static dominate the label noise.
  bool separate_changes = true;
  double jitter = 0.1;       // global gain/offset range applied to t2
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (count == 0) throw ConfigError("synthetic count must be >= 1");
    if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0) {
      throw ConfigError("synthetic extents must be positive multiples of 32");
    }
    if (min_changes > max_changes || min_size == 0 || min_size > max_size || max_size > std::min(height, width)) {
      throw ConfigError("invalid synthetic shape ranges");
    }
  }
};

namespace detail {

struct ShapeSpec {
  std::size_t y0, x0, h, w;
  bool ellipse;
  float color[3];

  bool covers(std::size_t y, std::size_t x) const {
    if (y < y0 || y >= y0 + h || x < x0 || x >= x0 + w) return false;
    if (!ellipse) return true;
    const double cy = y0 + h / 2.0, cx = x0 + w / 2.0;
    const double dy = (y + 0.5 - cy) / (h / 2.0), dx = (x + 0.5 - cx) / (w / 2.0);
    return dy * dy + dx * dx <= 1.0;
  }

  bool boxes_within(const ShapeSpec& o, std::size_t gap) const {
    return y0 < o.y0 + o.h + gap && o.y0 < y0 + h + gap && x0 < o.x0 + o.w + gap && o.x0 < x0 + w + gap;
  }
};

inline double color_distance(const float* a, const float* b) {
  double d = 0;
  for (std::size_t c = 0; c < 3; ++c) d += std::abs(a[c] - b[c]);
  return d;
}

inline void paint(Tensor<float>& img, const ShapeSpec& s) {
  const std::size_t H = img.dim(1), W = img.dim(2);
  for (std::size_t y = s.y0; y < std::min(H, s.y0 + s.h); ++y)
    for (std::size_t x = s.x0; x < std::min(W, s.x0 + s.w); ++x)
      if (s.covers(y, x))
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = s.color[c];
}

inline float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

}  // namespace detail

/// One labelled pair. Deterministic in (cfg.seed, index).
inline SamplePair generate_synthetic_one(const SynthConfig& cfg, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x2d3cu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N01(0.0, 1.0);
  const std::size_t H = cfg.height, W = cfg.width;

  // Shared background: base colour, a few low-frequency waves, fixed grain.
  Tensor<float> bg({3, H, W});
  double base[3];
  for (auto& b : base) b = 0.25 + 0.5 * U(rng);
  struct Wave { double fy, fx, phase, amp[3]; };
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    w.fy = (U(rng) - 0.5) * 0.5;
    w.fx = (U(rng) - 0.5) * 0.5;
    w.phase = U(rng) * 6.283185307179586;
    for (auto& a : w.amp) a = 0.04 + 0.04 * U(rng);
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double v = base[c];
        for (const auto& w : waves) v += w.amp[c] * std::sin(w.fy * y + w.fx * x + w.phase);
        bg.at(c, y, x) = static_cast<float>(v + 0.03 * N01(rng));
      }

  constexpr double kMinContrast = 0.6;
  const float base_f[3] = {static_cast<float>(base[0]), static_cast<float>(base[1]), static_cast<float>(base[2])};
  std::vector<detail::ShapeSpec> statics, changes;

  // Changed shapes contrast with the base colour and, when separated, with
  // every static shape whose box they touch.
  auto random_shape = [&](bool allow_low_contrast) {
    detail::ShapeSpec s{};
    std::uniform_int_distribution<std::size_t> size(cfg.min_size, cfg.max_size);
    s.h = size(rng);
    s.w = size(rng);
    s.y0 = std::uniform_int_distribution<std::size_t>(0, H - s.h)(rng);
    s.x0 = std::uniform_int_distribution<std::size_t>(0, W - s.w)(rng);
    s.ellipse = U(rng) < cfg.ellipse_prob;
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (auto& c : s.color) c = static_cast<float>(U(rng));
      if (allow_low_contrast) break;
      bool ok = detail::color_distance(s.color, base_f) >= kMinContrast;
      if (cfg.separate_changes)
        for (const auto& st : statics) ok = ok && (!s.boxes_within(st, 0) || detail::color_distance(s.color, st.color) >= kMinContrast);
      if (ok) break;
    }
    return s;
  };

  for (std::size_t i = 0; i < cfg.static_shapes; ++i) statics.push_back(random_shape(true));
  const std::size_t n_changes = std::uniform_int_distribution<std::size_t>(cfg.min_changes, cfg.max_changes)(rng);
  std::vector<bool> inserted;
  for (std::size_t i = 0; i < n_changes; ++i) {
    detail::ShapeSpec s = random_shape(false);
    bool placed = !cfg.separate_changes;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      if (attempt > 0) s = random_shape(false);
      placed = std::none_of(changes.begin(), changes.end(), [&](const auto& c) { return s.boxes_within(c, 2); });
    }
    if (!placed && i >= cfg.min_changes) continue;
    changes.push_back(s);
    inserted.push_back(U(rng) < cfg.insert_prob);
  }

  Tensor<float> t1 = bg, t2 = bg;
  for (const auto& s : statics) {
    detail::paint(t1, s);
    detail::paint(t2, s);
  }
  SamplePair out;
  out.label = Mask(H, W);
  for (std::size_t i = 0; i < changes.size(); ++i) {
    detail::paint(inserted[i] ? t2 : t1, changes[i]);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (changes[i].covers(y, x)) out.label.at(y, x) = 1;
  }

  // Acquisition differences on t2, independent sensor noise on both.
  const double gain = 1.0 + cfg.jitter * (2 * U(rng) - 1);
  const double offset = cfg.jitter * (2 * U(rng) - 1);
  for (std::size_t k = 0; k < t1.size(); ++k) {
    t1[k] = detail::quantize(t1[k] + cfg.noise_sigma * N01(rng));
    t2[k] = detail::quantize(t2[k] * gain + offset + cfg.noise_sigma * N01(rng));
  }
  out.img_t1 = std::move(t1);
  out.img_t2 = std::move(t2);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  out.id = buf;
  return out;
}

inline std::vector<SamplePair> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SamplePair> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(generate_synthetic_one(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

/// Tile origins along one axis; a final origin is anchored to the far border
/// when the stride leaves a remainder.
inline std::vector<std::size_t> tile_anchors(std::size_t extent, std::size_t tile, std::size_t stride) {
  std::vector<std::size_t> a;
  for (std::size_t o = 0; o + tile <= extent; o += stride) a.push_back(o);
  if (a.empty() || a.back() + tile < extent) a.push_back(extent - tile);
  return a;
}

inline std::vector<SamplePair> tile(const SamplePair& s, std::size_t tile_size, std::size_t stride) {
  const std::size_t H = s.height(), W = s.width();
  if (tile_size == 0 || tile_size > H || tile_size > W) {
    throw ShapeError("tile size " + std::to_string(tile_size) + " exceeds image " + std::to_string(H) + "x" + std::to_string(W));
  }
  if (tile_size % 32 != 0) throw ShapeError("tile size must be a multiple of 32");
  if (stride == 0) throw ShapeError("tile stride must be positive");
  std::vector<SamplePair> out;
  for (std::size_t oy : tile_anchors(H, tile_size, stride))
    for (std::size_t ox : tile_anchors(W, tile_size, stride)) {
      SamplePair t;
      t.img_t1 = Tensor<float>({3, tile_size, tile_size});
      t.img_t2 = Tensor<float>({3, tile_size, tile_size});
      t.label = Mask(tile_size, tile_size);
      for (std::size_t y = 0; y < tile_size; ++y)
        for (std::size_t x = 0; x < tile_size; ++x) {
          for (std::size_t c = 0; c < 3; ++c) {
            t.img_t1.at(c, y, x) = s.img_t1.at(c, oy + y, ox + x);
            t.img_t2.at(c, y, x) = s.img_t2.at(c, oy + y, ox + x);
          }
          t.label.at(y, x) = s.label.at(oy + y, ox + x);
        }
      t.id = s.id + "_" + std::to_string(oy) + "_" + std::to_string(ox);
      out.push_back(std::move(t));
    }
  return out;
}

}  // namespace mcg
