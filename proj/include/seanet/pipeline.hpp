#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seanet/io.hpp"
#include "seanet/manifest.hpp"
#include "seanet/tensor.hpp"

// Dataset plumbing: PPM/PGM ingestion, the fixed preprocessing chain
// (crop/resize -> histogram equalization -> standardization -> train-only
// augmentation), the synthetic "fundus-like" generator used for desk-scale
// verification, and the preprocessed SGT1 cache.

namespace seanet {

/// 8-bit interleaved RGB image.
struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> px;  // h * w * 3

  static ImageU8 black(int h, int w) {
    ImageU8 img;
    img.h = h;
    img.w = w;
    img.px.assign(static_cast<std::size_t>(h) * w * 3, 0);
    return img;
  }

  std::uint8_t& at(int y, int x, int c) {
    return px[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return px[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)];
  }
};

/// Binary PPM (P6) and PGM (P5, replicated to three channels), maxval 255.
inline ImageU8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P5") {
    throw IoError(path.string() + ": unsupported format '" + magic + "' (expected P6 or P5)");
  }
  auto next_int = [&in, &path]() {
    // Skip whitespace and '#' comment lines between header fields.
    while (true) {
      const int c = in.peek();
      if (c == '#') {
        std::string dummy;
        std::getline(in, dummy);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v = -1;
    in >> v;
    if (!in || v < 0) throw IoError(path.string() + ": bad PPM header");
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw IoError(path.string() + ": only maxval 255 is supported");
  in.get();  // single whitespace before payload
  ImageU8 img = ImageU8::black(h, w);
  if (magic == "P6") {
    in.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  } else {
    std::vector<std::uint8_t> gray(static_cast<std::size_t>(h) * w);
    in.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    for (std::size_t i = 0; i < gray.size(); ++i) {
      img.px[i * 3] = img.px[i * 3 + 1] = img.px[i * 3 + 2] = gray[i];
    }
  }
  if (!in) throw IoError(path.string() + ": truncated image payload");
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

struct CropBox {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive

  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
};

/// Bounding box of non-background pixels: mean-channel luminance above
/// `background_threshold` on the 0..255 scale.
inline CropBox find_crop_box(const ImageU8& img, int background_threshold = 10) {
  if (img.h < 1 || img.w < 1) throw ShapeError("find_crop_box on empty image");
  int y0 = img.h, y1 = -1, x0 = img.w, x1 = -1;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const int lum = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3;
      if (lum > background_threshold) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
    }
  }
  if (y1 < 0) throw NumericError("image is entirely background");
  return {y0, x0, y1, x1};
}

/// Crop to the non-background bounding box, then bilinear-resize to
/// target x target. Output is [target, target, 3] on the 0..255 scale.
template <typename S>
Tensor<S> crop_resize(const ImageU8& img, int target, int background_threshold = 10) {
  if (target < 1) throw ShapeError("crop_resize target must be positive");
  const CropBox box = find_crop_box(img, background_threshold);
  const int y0 = box.y0, x0 = box.x0;
  const int bh = box.height();
  const int bw = box.width();
  Tensor<S> out(Shape{target, target, 3});
  S* ov = out.data();
  for (int ty = 0; ty < target; ++ty) {
    const double sy = (ty + 0.5) * bh / target - 0.5;
    for (int tx = 0; tx < target; ++tx) {
      const double sx = (tx + 0.5) * bw / target - 0.5;
      const int fy = static_cast<int>(std::floor(sy));
      const int fx = static_cast<int>(std::floor(sx));
      const double wy = sy - fy;
      const double wx = sx - fx;
      auto sample = [&](int yy, int xx, int c) {
        yy = std::clamp(yy, 0, bh - 1);
        xx = std::clamp(xx, 0, bw - 1);
        return static_cast<double>(img.at(y0 + yy, x0 + xx, c));
      };
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * sample(fy, fx, c) + wx * sample(fy, fx + 1, c)) +
                         wy * ((1 - wx) * sample(fy + 1, fx, c) + wx * sample(fy + 1, fx + 1, c));
        ov[(static_cast<std::int64_t>(ty) * target + tx) * 3 + c] = static_cast<S>(v);
      }
    }
  }
  return out;
}

template <typename S>
void detail_pipeline_check3(const Tensor<S>& img) {
  if (img.empty() || img.rank() != 3 || img.dim(2) != 3) {
    throw ShapeError("expected an HxWx3 image tensor, got " +
                     (img.empty() ? std::string("empty") : img.shape().str()));
  }
}

/// Classical per-channel equalization on 256 bins:
/// v' = round(255 * (cdf(v) - cdf_min) / (Npix - cdf_min)).
/// A constant channel (degenerate cdf) maps to 0.
template <typename S>
Tensor<S> hist_equalize(const Tensor<S>& img) {
  detail_pipeline_check3(img);
  const std::int64_t h = img.dim(0), w = img.dim(1);
  const std::int64_t npix = h * w;
  Tensor<S> out(img.shape());
  const S* in = img.data();
  S* ov = out.data();
  for (int c = 0; c < 3; ++c) {
    std::array<std::int64_t, 256> hist{};
    for (std::int64_t i = 0; i < npix; ++i) {
      const int bin = std::clamp(static_cast<int>(std::lround(static_cast<double>(in[i * 3 + c]))),
                                 0, 255);
      ++hist[static_cast<std::size_t>(bin)];
    }
    std::array<std::int64_t, 256> cdf{};
    std::int64_t acc = 0;
    std::int64_t cdf_min = 0;
    for (int b = 0; b < 256; ++b) {
      acc += hist[static_cast<std::size_t>(b)];
      cdf[static_cast<std::size_t>(b)] = acc;
      if (cdf_min == 0 && hist[static_cast<std::size_t>(b)] > 0) cdf_min = acc;
    }
    std::array<S, 256> lut{};
    const std::int64_t denom = npix - cdf_min;
    for (int b = 0; b < 256; ++b) {
      if (denom <= 0) {
        lut[static_cast<std::size_t>(b)] = S(0);
      } else {
        lut[static_cast<std::size_t>(b)] = static_cast<S>(std::lround(
            255.0 * static_cast<double>(cdf[static_cast<std::size_t>(b)] - cdf_min) /
            static_cast<double>(denom)));
      }
    }
    for (std::int64_t i = 0; i < npix; ++i) {
      const int bin = std::clamp(static_cast<int>(std::lround(static_cast<double>(in[i * 3 + c]))),
                                 0, 255);
      ov[i * 3 + c] = lut[static_cast<std::size_t>(bin)];
    }
  }
  return out;
}

/// Per-channel mean and population standard deviation; computed on the
/// training split only, before any augmentation.
struct PreprocessStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};

  std::string to_csv() const {
    std::string out = "channel,mean,std\n";
    for (int c = 0; c < 3; ++c) {
      out += std::to_string(c) + "," + fmt_g(mean[static_cast<std::size_t>(c)]) + "," +
             fmt_g(stddev[static_cast<std::size_t>(c)]) + "\n";
    }
    return out;
  }

  static PreprocessStats from_csv(const std::string& text) {
    PreprocessStats st;
    std::istringstream in(text);
    std::string line;
    int seen = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line.rfind("channel", 0) == 0) continue;
      std::istringstream row(line);
      std::string ch, m, s;
      std::getline(row, ch, ',');
      std::getline(row, m, ',');
      std::getline(row, s, ',');
      const int c = std::stoi(ch);
      if (c < 0 || c > 2) throw IoError("stats csv has invalid channel " + ch);
      st.mean[static_cast<std::size_t>(c)] = std::stod(m);
      st.stddev[static_cast<std::size_t>(c)] = std::stod(s);
      ++seen;
    }
    if (seen != 3) throw IoError("stats csv must define exactly 3 channels");
    return st;
  }
};

template <typename S>
PreprocessStats compute_stats(const std::vector<Tensor<S>>& train_images) {
  if (train_images.empty()) throw ConfigError("cannot compute stats on an empty training split");
  std::array<double, 3> sum{}, sumsq{};
  std::int64_t n = 0;
  for (const auto& img : train_images) {
    detail_pipeline_check3(img);
    const S* v = img.data();
    const std::int64_t pixels = img.dim(0) * img.dim(1);
    for (std::int64_t i = 0; i < pixels; ++i) {
      for (int c = 0; c < 3; ++c) {
        const double x = static_cast<double>(v[i * 3 + c]);
        sum[static_cast<std::size_t>(c)] += x;
        sumsq[static_cast<std::size_t>(c)] += x * x;
      }
    }
    n += pixels;
  }
  PreprocessStats st;
  for (int c = 0; c < 3; ++c) {
    const double m = sum[static_cast<std::size_t>(c)] / static_cast<double>(n);
    const double var = sumsq[static_cast<std::size_t>(c)] / static_cast<double>(n) - m * m;
    st.mean[static_cast<std::size_t>(c)] = m;
    st.stddev[static_cast<std::size_t>(c)] = std::sqrt(std::max(var, 0.0));
    if (!(st.stddev[static_cast<std::size_t>(c)] > 0)) {
      throw NumericError("training channel " + std::to_string(c) + " has zero variance");
    }
  }
  return st;
}

template <typename S>
Tensor<S> standardize(const Tensor<S>& img, const PreprocessStats& stats) {
  detail_pipeline_check3(img);
  Tensor<S> out(img.shape());
  const S* in = img.data();
  S* ov = out.data();
  const std::int64_t pixels = img.dim(0) * img.dim(1);
  for (int c = 0; c < 3; ++c) {
    const S m = static_cast<S>(stats.mean[static_cast<std::size_t>(c)]);
    const S sd = static_cast<S>(stats.stddev[static_cast<std::size_t>(c)]);
    for (std::int64_t i = 0; i < pixels; ++i) {
      ov[i * 3 + c] = (in[i * 3 + c] - m) / sd;
    }
  }
  return out;
}

/// Rotation about the image center with bilinear resampling; pixels mapped
/// from outside the source are zero-filled. degrees == 0 is an exact identity.
template <typename S>
Tensor<S> rotate_image(const Tensor<S>& img, double degrees) {
  detail_pipeline_check3(img);
  if (degrees == 0) return img;
  const std::int64_t h = img.dim(0), w = img.dim(1);
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1) / 2.0;
  const double cx = (static_cast<double>(w) - 1) / 2.0;
  Tensor<S> out(img.shape());
  const S* in = img.data();
  S* ov = out.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      // Inverse map: source position that lands on (y, x).
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sy = cs * dy + sn * dx + cy;
      const double sx = -sn * dy + cs * dx + cx;
      const int fy = static_cast<int>(std::floor(sy));
      const int fx = static_cast<int>(std::floor(sx));
      const double wy = sy - fy;
      const double wx = sx - fx;
      for (int c = 0; c < 3; ++c) {
        auto sample = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
          return static_cast<double>(in[(static_cast<std::int64_t>(yy) * w + xx) * 3 + c]);
        };
        const double v = (1 - wy) * ((1 - wx) * sample(fy, fx) + wx * sample(fy, fx + 1)) +
                         wy * ((1 - wx) * sample(fy + 1, fx) + wx * sample(fy + 1, fx + 1));
        ov[(y * w + x) * 3 + c] = static_cast<S>(v);
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> flip_horizontal(const Tensor<S>& img) {
  detail_pipeline_check3(img);
  const std::int64_t h = img.dim(0), w = img.dim(1);
  Tensor<S> out(img.shape());
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.data()[(y * w + x) * 3 + c] = img.data()[(y * w + (w - 1 - x)) * 3 + c];
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> flip_vertical(const Tensor<S>& img) {
  detail_pipeline_check3(img);
  const std::int64_t h = img.dim(0), w = img.dim(1);
  Tensor<S> out(img.shape());
  for (std::int64_t y = 0; y < h; ++y) {
    std::copy_n(img.data() + (h - 1 - y) * w * 3, w * 3, out.data() + y * w * 3);
  }
  return out;
}

/// Train-split augmentation: rotation within +-rotation_degrees and
/// independent horizontal/vertical flips.
struct AugmentPolicy {
  double rotation_degrees = 10;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  std::uint64_t stream_id = 0;
};

/// Labels pass through untouched; the draw order (angle, hflip, vflip) is
/// fixed so a given rng state always produces the same transform.
template <typename S>
Tensor<S> augment(const Tensor<S>& img, const AugmentPolicy& policy, Rng& rng) {
  const double angle = rng.uniform(-policy.rotation_degrees, policy.rotation_degrees);
  const bool hflip = rng.uniform() < policy.hflip_prob;
  const bool vflip = rng.uniform() < policy.vflip_prob;
  Tensor<S> out = rotate_image(img, angle);
  if (hflip) out = flip_horizontal(out);
  if (vflip) out = flip_vertical(out);
  return out;
}

/// Deterministic "fundus-like" disk with class-dependent lesions: both the
/// dot count and the dot radius grow with the label, so classes are
/// separable by construction.
inline ImageU8 render_synthetic(std::uint64_t seed, int label, int canvas) {
  Rng rng(Rng::mix(seed, 0x73796e7468ull));
  ImageU8 img = ImageU8::black(canvas, canvas);
  const double cy = canvas / 2.0 + rng.uniform(-canvas * 0.03, canvas * 0.03);
  const double cx = canvas / 2.0 + rng.uniform(-canvas * 0.03, canvas * 0.03);
  const double radius = canvas * (0.38 + rng.uniform(-0.02, 0.02));
  const double base_r = 170 + rng.uniform(-12, 12);
  const double base_g = 105 + rng.uniform(-12, 12);
  const double base_b = 55 + rng.uniform(-12, 12);

  auto put = [&](int y, int x, double r, double g, double b) {
    img.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
    img.at(y, x, 1) = static_cast<std::uint8_t>(std::clamp(g, 0.0, 255.0));
    img.at(y, x, 2) = static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
  };

  for (int y = 0; y < canvas; ++y) {
    for (int x = 0; x < canvas; ++x) {
      const double d = std::hypot(y - cy, x - cx);
      if (d <= radius) {
        const double shade = 1.0 - 0.25 * (d / radius) * (d / radius);
        put(y, x, base_r * shade, base_g * shade, base_b * shade);
      }
    }
  }

  // Both the dot count and the dot radius grow with the label; the total
  // lesion coverage steps up strongly between every adjacent pair of grades
  // so the classes stay separable after pooling.
  const int dots = label == 0 ? 0 : 4 + 2 * label;
  const double dot_radius = canvas * (0.020 + 0.013 * label);
  for (int i = 0; i < dots; ++i) {
    const double ang = rng.uniform(0, 2 * 3.14159265358979323846);
    const double dist = radius * 0.8 * std::sqrt(rng.uniform());
    const double ly = cy + dist * std::sin(ang);
    const double lx = cx + dist * std::cos(ang);
    const int lo_y = std::max(0, static_cast<int>(ly - dot_radius - 1));
    const int hi_y = std::min(canvas - 1, static_cast<int>(ly + dot_radius + 1));
    const int lo_x = std::max(0, static_cast<int>(lx - dot_radius - 1));
    const int hi_x = std::min(canvas - 1, static_cast<int>(lx + dot_radius + 1));
    for (int y = lo_y; y <= hi_y; ++y) {
      for (int x = lo_x; x <= hi_x; ++x) {
        if (std::hypot(y - ly, x - lx) <= dot_radius) {
          put(y, x, 60, 15, 15);
        }
      }
    }
  }

  // Pixel noise stays under the crop threshold on the black background.
  for (int y = 0; y < canvas; ++y) {
    for (int x = 0; x < canvas; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(y, x, c) + rng.uniform(-6, 6);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

/// Balanced synthetic manifest; sources are "synth:<seed>" so prepare can
/// regenerate every image from the manifest alone.
inline DatasetManifest synth_manifest(int classes, int train_per_class, int test_per_class,
                                      std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (train_per_class < 1 || test_per_class < 0) {
    throw ConfigError("synthetic dataset needs at least one training sample per class");
  }
  DatasetManifest m;
  auto push = [&](Split split, int per_class, std::uint64_t tag) {
    for (int k = 0; k < classes; ++k) {
      for (int i = 0; i < per_class; ++i) {
        const std::uint64_t s =
            Rng::mix(Rng::mix(seed, tag), static_cast<std::uint64_t>(k) * 1000003ull +
                                              static_cast<std::uint64_t>(i));
        m.records.push_back({"synth:" + std::to_string(s), k, split});
      }
    }
  };
  push(Split::Train, train_per_class, 0x7472ull);
  push(Split::Test, test_per_class, 0x7465ull);
  return m;
}

inline bool is_synth_source(const std::string& source) { return source.rfind("synth:", 0) == 0; }

inline std::uint64_t synth_seed_of(const std::string& source) {
  return std::stoull(source.substr(6));
}

template <typename S>
struct TensorDataset {
  std::vector<Tensor<S>> images;  // [H,W,3] standardized
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

/// Runs the fixed preprocessing chain over a manifest and writes the cache:
///   cache_dir/manifest.csv, stats.csv, class_weights.csv, tensors/NNNNNN.sgt1
/// Missing image files are collected and reported in one error.
template <typename S>
PreprocessStats prepare_cache(const DatasetManifest& manifest,
                              const std::filesystem::path& cache_dir, int target_size,
                              int crop_threshold, int synth_canvas = 0) {
  namespace fs = std::filesystem;
  if (manifest.records.empty()) throw ConfigError("manifest has no records");
  const int classes = manifest.num_classes();
  if (classes < 2) throw ConfigError("manifest must cover at least 2 classes");
  if (synth_canvas <= 0) synth_canvas = target_size + target_size / 4;

  std::vector<std::string> missing;
  for (const auto& r : manifest.records) {
    if (!is_synth_source(r.source) && !fs::exists(r.source)) missing.push_back(r.source);
  }
  if (!missing.empty()) {
    std::string msg = "missing image files:";
    for (const auto& s : missing) msg += "\n  " + s;
    throw IoError(msg);
  }

  fs::create_directories(cache_dir / "tensors");

  // Pass 1: crop/resize then equalize everything, keeping the train split
  // for the stats pass.
  std::vector<Tensor<S>> equalized(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    ImageU8 raw = is_synth_source(r.source)
                      ? render_synthetic(synth_seed_of(r.source), r.label, synth_canvas)
                      : read_ppm(r.source);
    equalized[i] = hist_equalize(crop_resize<S>(raw, target_size, crop_threshold));
  }
  std::vector<Tensor<S>> train_imgs;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split == Split::Train) train_imgs.push_back(equalized[i]);
  }
  if (train_imgs.empty()) throw ConfigError("manifest has no training records");
  const PreprocessStats stats = compute_stats(train_imgs);

  // Pass 2: standardize with the train-split stats and write the cache.
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.sgt1", i);
    write_tensor(cache_dir / "tensors" / name, standardize(equalized[i], stats));
  }
  manifest.save(cache_dir / "manifest.csv");
  write_text_file(cache_dir / "stats.csv", stats.to_csv());

  // Class-weight report per the total/count rule, from train counts.
  const auto counts = manifest.class_counts(Split::Train, classes);
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  std::string weights_csv = "class,count,weight\n";
  for (int k = 0; k < classes; ++k) {
    const auto c = counts[static_cast<std::size_t>(k)];
    if (c < 1) throw ConfigError("class " + std::to_string(k) + " has no training samples");
    weights_csv += std::to_string(k) + "," + std::to_string(c) + "," +
                   fmt_g(static_cast<double>(total) / static_cast<double>(c)) + "\n";
  }
  write_text_file(cache_dir / "class_weights.csv", weights_csv);
  return stats;
}

/// Loads one split of a prepared cache in manifest order.
template <typename S>
TensorDataset<S> load_cache_split(const std::filesystem::path& cache_dir,
                                  const DatasetManifest& manifest, Split split) {
  TensorDataset<S> ds;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split != split) continue;
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.sgt1", i);
    ds.images.push_back(read_tensor<S>(cache_dir / "tensors" / name));
    ds.labels.push_back(manifest.records[i].label);
  }
  return ds;
}

}  // namespace seanet
