#include "fct/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>

#include "json.hpp"

namespace fct {

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.num_classes = num_classes;
  for (auto i : indices) {
    d.stems.push_back(stems.at(i));
    d.samples.push_back(samples.at(i));
  }
  return d;
}

void make_batch(const std::vector<const SegmentationSample*>& samples, Tensor& images, Labels& labels) {
  if (samples.empty()) throw ValueError("make_batch: empty batch");
  const Shape s = samples[0]->image.shape();
  const auto n = static_cast<std::int64_t>(samples.size());
  std::vector<float> px;
  px.reserve(static_cast<std::size_t>(n * shape_numel(s)));
  labels = Labels(n, s[0], s[1]);
  for (std::int64_t b = 0; b < n; ++b) {
    const auto& smp = *samples[static_cast<std::size_t>(b)];
    if (smp.image.shape() != s) throw ShapeError("make_batch: samples differ in shape");
    const Tensor f = smp.image.to(DType::f32);
    const auto d = f.data<float>();
    px.insert(px.end(), d.begin(), d.end());
    std::copy(smp.mask.data.begin(), smp.mask.data.end(), labels.data.begin() + static_cast<std::ptrdiff_t>(b * s[0] * s[1]));
  }
  images = Tensor::from({n, s[0], s[1], s[2]}, std::move(px));
}

// -- synthetic data ----------------------------------------------------------

namespace {

struct Placed {
  double cy, cx, r;
  int cls;
  double aspect;
};

}  // namespace

Dataset synth_dataset(int n, int size, int classes, std::uint64_t seed) {
  if (n < 1) throw ValueError("synth: n must be >= 1");
  if (size < 16 || size % 16) throw ValueError("synth: size must be a positive multiple of 16");
  if (classes < 2) throw ValueError("synth: classes must be >= 2");
  const auto un = static_cast<std::size_t>(n);

  std::vector<std::vector<int>> sets(un);
  for (std::size_t i = 0; i < un; ++i) {
    Rng r(mix_seed(seed, 1, i));
    for (int c = 1; c < classes; ++c)
      if (r.bernoulli(0.5)) sets[i].push_back(c);
    if (sets[i].empty()) sets[i].push_back(static_cast<int>(r.integer(1, classes - 1)));
  }
  // top up rare classes so each appears in at least the minimum fraction
  const auto need = static_cast<std::size_t>(std::ceil(kSynthMinClassFraction * n));
  Rng repair(mix_seed(seed, 2));
  for (int c = 1; c < classes; ++c) {
    std::vector<std::size_t> lacking;
    std::size_t have = 0;
    for (std::size_t i = 0; i < un; ++i) {
      if (std::find(sets[i].begin(), sets[i].end(), c) != sets[i].end())
        ++have;
      else
        lacking.push_back(i);
    }
    while (have < need && !lacking.empty()) {
      const auto k = static_cast<std::size_t>(repair.integer(0, static_cast<std::int64_t>(lacking.size()) - 1));
      auto& set = sets[lacking[k]];
      set.insert(std::upper_bound(set.begin(), set.end(), c), c);
      lacking[k] = lacking.back();
      lacking.pop_back();
      ++have;
    }
  }

  Dataset d;
  d.num_classes = classes;
  const double rmin = 0.12 * size, rmax0 = 0.22 * size;
  for (std::size_t i = 0; i < un; ++i) {
    Rng r(mix_seed(seed, 3, i));
    std::vector<Placed> placed;
    for (int c : sets[i]) {
      double rmax = rmax0;
      for (int attempt = 0;; ++attempt) {
        if (attempt > 0 && attempt % 200 == 0) rmax = std::max(2.0, rmax * 0.8);
        const double rad = r.uniform(std::min(rmin, rmax), rmax);
        const double cy = r.uniform(rad + 1, size - rad - 2);
        const double cx = r.uniform(rad + 1, size - rad - 2);
        const double aspect = r.uniform(0.6, 1.0);
        bool ok = true;
        for (const auto& p : placed) ok = ok && std::hypot(p.cy - cy, p.cx - cx) > p.r + rad + 2;
        if (ok) {
          placed.push_back({cy, cx, rad, c, aspect});
          break;
        }
      }
    }
    std::vector<float> img(static_cast<std::size_t>(size * size), 0.0f);
    Labels mask(1, size, size);
    for (const auto& p : placed) {
      const float intensity = static_cast<float>(p.cls) / static_cast<float>(classes - 1);
      const int kind = (p.cls - 1) % 3;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double dy = y - p.cy, dx = x - p.cx;
          const double dist = std::hypot(dy, dx);
          bool inside = false;
          if (kind == 0) inside = dist <= p.r;
          if (kind == 1) inside = dist <= p.r && dist >= 0.5 * p.r;
          if (kind == 2) inside = std::abs(dy) <= 0.7 * p.r && std::abs(dx) <= 0.7 * p.r * p.aspect;
          if (inside) {
            img[static_cast<std::size_t>(y * size + x)] = intensity;
            mask.at(0, y, x) = p.cls;
          }
        }
    }
    for (auto& v : img) v = std::clamp(v + static_cast<float>(kSynthNoise * r.normal()), 0.0f, 1.0f);
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04zu", i);
    d.stems.emplace_back(stem);
    d.samples.push_back({Tensor::from({size, size, 1}, std::move(img)), std::move(mask)});
  }
  return d;
}

// -- augmentation ------------------------------------------------------------

void AugmentConfig::validate() const {
  if (rotation_deg_max < 0 || zoom_max < 0 || shear_max < 0 || shift_max < 0)
    throw ValueError("augment: ranges must be nonnegative");
  if (zoom_max >= 1.0) throw ValueError("augment: zoom_max must be < 1");
}

bool AffineParams::is_identity() const {
  return rotation_deg == 0.0 && zoom == 1.0 && shear == 0.0 && shift_y == 0.0 && shift_x == 0.0 && !hflip && !vflip;
}

AffineParams sample_affine(const AugmentConfig& cfg, Rng& rng) {
  AffineParams p;
  if (!cfg.enabled) return p;
  // every draw happens regardless of range so streams stay aligned
  const double u_rot = rng.uniform(), u_zoom = rng.uniform(), u_shear = rng.uniform();
  const double u_sy = rng.uniform(), u_sx = rng.uniform();
  const bool hf = rng.bernoulli(0.5), vf = rng.bernoulli(0.5);
  p.rotation_deg = u_rot * cfg.rotation_deg_max;
  p.zoom = 1.0 + (2.0 * u_zoom - 1.0) * cfg.zoom_max;
  p.shear = (2.0 * u_shear - 1.0) * cfg.shear_max;
  p.shift_y = (2.0 * u_sy - 1.0) * cfg.shift_max;
  p.shift_x = (2.0 * u_sx - 1.0) * cfg.shift_max;
  p.hflip = cfg.hflip && hf;
  p.vflip = cfg.vflip && vf;
  return p;
}

SegmentationSample apply_affine(const SegmentationSample& s, const AffineParams& p) {
  if (p.is_identity()) return s;
  const auto& shp = s.image.shape();
  const std::int64_t H = shp[0], W = shp[1], C = shp[2];
  const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double co = std::cos(th), si = std::sin(th);
  // forward map in (x, y): M = R * zoom * [[1, shear], [0, 1]]
  const double m00 = co * p.zoom, m01 = (co * p.shear - si) * p.zoom;
  const double m10 = si * p.zoom, m11 = (si * p.shear + co) * p.zoom;
  const double det = m00 * m11 - m01 * m10;
  const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
  const double ty = p.shift_y * static_cast<double>(H), tx = p.shift_x * static_cast<double>(W);

  const Tensor src = s.image.to(DType::f32);
  const auto sd = src.data<float>();
  std::vector<float> out(static_cast<std::size_t>(H * W * C), 0.0f);
  Labels mask(1, H, W);
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double oy = static_cast<double>(p.vflip ? H - 1 - y : y) - cy - ty;
      const double ox = static_cast<double>(p.hflip ? W - 1 - x : x) - cx - tx;
      const double sx = i00 * ox + i01 * oy + cx;
      const double sy = i10 * ox + i11 * oy + cy;
      const auto ny = static_cast<std::int64_t>(std::floor(sy + 0.5));
      const auto nx = static_cast<std::int64_t>(std::floor(sx + 0.5));
      if (ny >= 0 && ny < H && nx >= 0 && nx < W) mask.at(0, y, x) = s.mask.at(0, ny, nx);
      const auto y0 = static_cast<std::int64_t>(std::floor(sy));
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const std::int64_t yy = y0 + dy, xx = x0 + dx;
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
          if (wgt == 0.0) continue;
          for (std::int64_t c = 0; c < C; ++c)
            out[static_cast<std::size_t>((y * W + x) * C + c)] += static_cast<float>(wgt * sd[static_cast<std::size_t>((yy * W + xx) * C + c)]);
        }
    }
  return {Tensor::from(shp, std::move(out)), std::move(mask)};
}

SegmentationSample augment(const SegmentationSample& s, const AugmentConfig& cfg, Rng& rng) {
  return apply_affine(s, sample_affine(cfg, rng));
}

// -- resizing ----------------------------------------------------------------

Tensor resize_bilinear(const Tensor& image, std::int64_t h, std::int64_t w) {
  const auto& s = image.shape();
  if (s.size() != 3) throw ShapeError("resize: expected (H, W, C), got " + shape_str(s));
  if (s[0] == h && s[1] == w) return image;
  const Tensor src = image.to(DType::f32);
  const auto d = src.data<float>();
  const std::int64_t H = s[0], W = s[1], C = s[2];
  std::vector<float> out(static_cast<std::size_t>(h * w * C));
  for (std::int64_t y = 0; y < h; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * static_cast<double>(H) / static_cast<double>(h) - 0.5, 0.0,
                                 static_cast<double>(H - 1));
    const auto y0 = static_cast<std::int64_t>(sy);
    const std::int64_t y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < w; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * static_cast<double>(W) / static_cast<double>(w) - 0.5,
                                   0.0, static_cast<double>(W - 1));
      const auto x0 = static_cast<std::int64_t>(sx);
      const std::int64_t x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::int64_t c = 0; c < C; ++c) {
        auto at = [&](std::int64_t yy, std::int64_t xx) { return static_cast<double>(d[static_cast<std::size_t>((yy * W + xx) * C + c)]); };
        const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
        out[static_cast<std::size_t>((y * w + x) * C + c)] = static_cast<float>(v);
      }
    }
  }
  return Tensor::from({h, w, C}, std::move(out));
}

Labels resize_nearest(const Labels& mask, std::int64_t h, std::int64_t w) {
  if (mask.h == h && mask.w == w) return mask;
  Labels out(mask.n, h, w);
  for (std::int64_t b = 0; b < mask.n; ++b)
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = std::min(mask.h - 1, (2 * y + 1) * mask.h / (2 * h));
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx = std::min(mask.w - 1, (2 * x + 1) * mask.w / (2 * w));
        out.at(b, y, x) = mask.at(b, sy, sx);
      }
    }
  return out;
}

// -- PNG ---------------------------------------------------------------------

namespace {

struct PngRaw {
  std::int64_t h = 0, w = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint32_t> values;  // h * w * channels samples
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* out = static_cast<std::string*>(png_get_error_ptr(png));
  if (out) *out = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

PngRaw read_png_raw(const std::filesystem::path& path, bool for_labels) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  PngRaw raw;
  volatile bool bad_color = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unreadable PNG " + path.string() + ": " + err);
  }
  png_init_io(png, fp.get());
  const int transforms = for_labels ? (PNG_TRANSFORM_PACKING | PNG_TRANSFORM_STRIP_ALPHA)
                                    : (PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA);
  png_read_png(png, info, transforms, nullptr);
  raw.h = png_get_image_height(png, info);
  raw.w = png_get_image_width(png, info);
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (for_labels && (color & PNG_COLOR_MASK_COLOR)) bad_color = true;
  if (!bad_color) {
    png_bytepp rows = png_get_rows(png, info);
    raw.values.resize(static_cast<std::size_t>(raw.h * raw.w * raw.channels));
    const std::size_t per_row = static_cast<std::size_t>(raw.w * raw.channels);
    for (std::int64_t y = 0; y < raw.h; ++y) {
      const png_bytep row = rows[y];
      for (std::size_t i = 0; i < per_row; ++i)
        raw.values[static_cast<std::size_t>(y) * per_row + i] =
            raw.bit_depth == 16 ? (static_cast<std::uint32_t>(row[2 * i]) << 8) | row[2 * i + 1] : row[i];
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (bad_color) throw ValueError("mask " + path.string() + " must be a single-channel (grayscale) PNG");
  return raw;
}

void write_png(const std::filesystem::path& path, std::int64_t h, std::int64_t w, int color_type, int channels,
               const std::vector<std::uint8_t>& px) {
  if (static_cast<std::int64_t>(px.size()) != h * w * channels) throw ShapeError("write_png: pixel buffer size mismatch");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode PNG " + path.string() + ": " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y * w * channels)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor read_png_image(const std::filesystem::path& path) {
  const PngRaw raw = read_png_raw(path, false);
  if (raw.channels != 1 && raw.channels != 3) throw ValueError("unsupported PNG channel count in " + path.string());
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<float> v(raw.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(raw.values[i] / scale);
  return Tensor::from({raw.h, raw.w, raw.channels}, std::move(v));
}

Labels read_png_labels(const std::filesystem::path& path) {
  const PngRaw raw = read_png_raw(path, true);
  Labels out(1, raw.h, raw.w);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<std::int32_t>(raw.values[i]);
  return out;
}

void write_png_gray8(const std::filesystem::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& px) {
  write_png(path, h, w, PNG_COLOR_TYPE_GRAY, 1, px);
}

void write_png_rgb8(const std::filesystem::path& path, std::int64_t h, std::int64_t w, const std::vector<std::uint8_t>& px) {
  write_png(path, h, w, PNG_COLOR_TYPE_RGB, 3, px);
}

Tensor labels_to_tensor(const Labels& mask) {
  std::vector<float> v(mask.data.begin(), mask.data.end());
  return Tensor::from({mask.h, mask.w, 1}, std::move(v));
}

Labels tensor_to_labels(const Tensor& t, const std::string& what) {
  const auto& s = t.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[2] == 1)))
    throw ValueError(what + ": mask tensor must be (H, W) or (H, W, 1), got " + shape_str(s));
  Labels out(1, s[0], s[1]);
  const auto v = t.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != std::floor(v[i]) || !std::isfinite(v[i]))
      throw ValueError(what + ": non-integer label " + std::to_string(v[i]));
    out.data[i] = static_cast<std::int32_t>(v[i]);
  }
  return out;
}

Tensor read_image(const std::filesystem::path& path) {
  if (path.extension() == ".png") return read_png_image(path);
  Tensor t = load_fctt(path);
  if (t.rank() == 2) return t.reshaped({t.dim(0), t.dim(1), 1});
  if (t.rank() != 3) throw ValueError(path.string() + ": image tensor must be (H, W) or (H, W, C), got " + shape_str(t.shape()));
  return t;
}

// -- dataset directories -----------------------------------------------------

void save_dataset(const Dataset& d, const std::filesystem::path& dir, DataFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples[i];
    if (format == DataFormat::fctt) {
      save_fctt(s.image, dir / "images" / (d.stems[i] + ".fctt"));
      save_fctt(labels_to_tensor(s.mask), dir / "masks" / (d.stems[i] + ".fctt"));
    } else {
      if (s.image.dim(2) != 1) throw ValueError("save_dataset: PNG output supports grayscale images only");
      const auto v = s.image.to_vector();
      std::vector<std::uint8_t> px(v.size());
      for (std::size_t j = 0; j < v.size(); ++j) px[j] = static_cast<std::uint8_t>(std::lround(std::clamp(v[j], 0.0, 1.0) * 255.0));
      write_png_gray8(dir / "images" / (d.stems[i] + ".png"), s.mask.h, s.mask.w, px);
      std::vector<std::uint8_t> m(s.mask.data.begin(), s.mask.data.end());
      write_png_gray8(dir / "masks" / (d.stems[i] + ".png"), s.mask.h, s.mask.w, m);
    }
  }
  std::ofstream out(dir / "dataset.json");
  out << nlohmann::json{{"num_classes", d.num_classes}}.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
}

namespace {

std::map<std::string, std::filesystem::path> list_stems(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".png" && ext != ".fctt") continue;
    const auto stem = e.path().stem().string();
    if (out.contains(stem)) throw ValueError("duplicate stem " + stem + " in " + dir.string());
    out.emplace(stem, e.path());
  }
  return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir, std::int64_t resize_h, std::int64_t resize_w) {
  const auto meta_path = dir / "dataset.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(meta_path.string() + ": " + e.what());
  }
  if (!meta.contains("num_classes") || !meta["num_classes"].is_number_integer() || meta["num_classes"].get<int>() < 2)
    throw ValueError(meta_path.string() + ": num_classes must be an integer >= 2");
  Dataset d;
  d.num_classes = meta["num_classes"].get<int>();
  const auto images = list_stems(dir / "images");
  const auto masks = list_stems(dir / "masks");
  for (const auto& [stem, path] : images)
    if (!masks.contains(stem)) throw ValueError("image without mask: " + path.string());
  for (const auto& [stem, path] : masks)
    if (!images.contains(stem)) throw ValueError("mask without image: " + path.string());
  for (const auto& [stem, ipath] : images) {
    const auto& mpath = masks.at(stem);
    SegmentationSample s;
    s.image = read_image(ipath);
    s.mask = mpath.extension() == ".png" ? read_png_labels(mpath) : tensor_to_labels(load_fctt(mpath), mpath.string());
    if (s.mask.h != s.image.dim(0) || s.mask.w != s.image.dim(1))
      throw ValueError("mask " + mpath.string() + " size does not match its image");
    for (auto v : s.mask.data)
      if (v < 0 || v >= d.num_classes)
        throw ValueError("mask " + mpath.string() + " contains label " + std::to_string(v) + " outside [0, " +
                         std::to_string(d.num_classes) + ")");
    if (resize_h > 0 && resize_w > 0) {
      s.image = resize_bilinear(s.image, resize_h, resize_w);
      s.mask = resize_nearest(s.mask, resize_h, resize_w);
    }
    d.stems.push_back(stem);
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty()) throw ValueError("dataset " + dir.string() + " contains no samples");
  return d;
}

SplitIndices split_indices(std::size_t n, double val_fraction, double test_fraction, std::uint64_t seed) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction > 1.0)
    throw ValueError("split: fractions must be nonnegative and sum to at most 1");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(mix_seed(seed, 0x53504c4954ull));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
  const auto nv = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  const auto nt = std::min(n - nv, static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))));
  SplitIndices s;
  s.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(nv));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(nv), perm.begin() + static_cast<std::ptrdiff_t>(nv + nt));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(nv + nt), perm.end());
  return s;
}

}  // namespace fct
