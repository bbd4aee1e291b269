#include "decomamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

namespace dm {

namespace fs = std::filesystem;

std::vector<size_t> Dataset::indices(const std::string& name) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < split.size(); ++i) {
    if (split[i] == name) out.push_back(i);
  }
  return out;
}

bool ShapeSpec::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (c * dx + s * dy) / rx;
  const double v = (-s * dx + c * dy) / ry;
  switch (kind) {
    case ShapeKind::rectangle: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case ShapeKind::ellipse: return u * u + v * v <= 1.0;
    case ShapeKind::ring: {
      const double r2 = u * u + v * v;
      const double inner = 1.0 - thickness;
      return r2 <= 1.0 && r2 >= inner * inner;
    }
  }
  return false;
}

LabelMap rasterize(const ShapeSpec& shape, int64_t height, int64_t width, int32_t label) {
  LabelMap m{height, width, std::vector<int32_t>(static_cast<size_t>(height * width), 0)};
  for (int64_t r = 0; r < height; ++r)
    for (int64_t c = 0; c < width; ++c) {
      if (shape.contains(c + 0.5, r + 0.5)) m.data[static_cast<size_t>(r * width + c)] = label;
    }
  return m;
}

namespace {

std::array<double, 3> class_color(int64_t c, int64_t num_classes) {
  // Evenly spaced hues at high saturation.
  const double hue = 6.0 * static_cast<double>(c - 1) / static_cast<double>(num_classes - 1);
  const double sat = 0.85, val = 0.9;
  const double f = hue - std::floor(hue);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (static_cast<int>(hue) % 6) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

std::string sample_id(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05lld", static_cast<long long>(i));
  return buf;
}

SegSample synth_one(const SynthSpec& spec, Rng& rng, const std::string& id) {
  const int64_t H = spec.height, W = spec.width, C = spec.channels;
  const double side = static_cast<double>(std::min(H, W));
  SegSample s;
  s.id = id;
  s.channels = C;
  s.height = H;
  s.width = W;
  s.image.assign(static_cast<size_t>(C * H * W), 0.0f);
  s.mask = LabelMap{H, W, std::vector<int32_t>(static_cast<size_t>(H * W), 0)};

  // Textured background: a tinted gray with two low-frequency waves.
  std::vector<double> img(static_cast<size_t>(C * H * W));
  const double base = rng.uniform(0.3, 0.45);
  const double fx = rng.uniform(1.0, 3.0) * 2 * std::numbers::pi / W;
  const double fy = rng.uniform(1.0, 3.0) * 2 * std::numbers::pi / H;
  const double px = rng.uniform(0, 2 * std::numbers::pi), py = rng.uniform(0, 2 * std::numbers::pi);
  std::vector<double> tint(static_cast<size_t>(C));
  for (auto& t : tint) t = rng.uniform(-0.04, 0.04);
  for (int64_t ch = 0; ch < C; ++ch)
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < W; ++c) {
        img[static_cast<size_t>((ch * H + r) * W + c)] =
            base + tint[static_cast<size_t>(ch)] + 0.06 * std::sin(fx * c + px) * std::cos(fy * r + py);
      }

  std::vector<uint8_t> occupied(static_cast<size_t>(H * W), 0);
  for (int64_t cls = 1; cls < spec.num_classes; ++cls) {
    ShapeSpec shape;
    shape.kind = static_cast<ShapeKind>((cls - 1) % 3);
    LabelMap m;
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      const double scale = attempt < 250 ? 1.0 : 0.6;
      if (shape.kind == ShapeKind::ring) {
        shape.rx = shape.ry = scale * rng.uniform(0.12, 0.2) * side;
        shape.thickness = 0.45;
      } else {
        shape.rx = scale * rng.uniform(0.07, 0.17) * side;
        shape.ry = scale * rng.uniform(0.07, 0.17) * side;
      }
      shape.angle = rng.uniform(0, std::numbers::pi);
      const double reach = std::hypot(shape.rx, shape.ry) + 1;
      const double lo = std::min(reach, side / 2), hi_x = W - lo, hi_y = H - lo;
      shape.cx = rng.uniform(lo, std::max(lo, hi_x));
      shape.cy = rng.uniform(lo, std::max(lo, hi_y));
      m = rasterize(shape, H, W, static_cast<int32_t>(cls));
      int64_t area = 0;
      bool clash = false;
      for (size_t i = 0; i < m.data.size() && !clash; ++i) {
        if (m.data[i] != 0) {
          ++area;
          clash = occupied[i] != 0;
        }
      }
      placed = !clash && area >= 4;
    }
    if (!placed) throw Error("synth: could not place class " + std::to_string(cls) + " in " + id);
    // Occupancy keeps a 2-pixel gap between shapes.
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < W; ++c) {
        if (m.at(r, c) == 0) continue;
        s.mask.data[static_cast<size_t>(r * W + c)] = static_cast<int32_t>(cls);
        for (int64_t dr = -2; dr <= 2; ++dr)
          for (int64_t dc = -2; dc <= 2; ++dc) {
            const int64_t rr = r + dr, cc = c + dc;
            if (rr >= 0 && rr < H && cc >= 0 && cc < W) occupied[static_cast<size_t>(rr * W + cc)] = 1;
          }
      }
    // Anti-aliased paint: 4x4 supersampled coverage over the bounding box.
    auto color = class_color(cls, spec.num_classes);
    for (auto& v : color) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    const double reach = std::hypot(shape.rx, shape.ry) + 1;
    const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(shape.cy - reach));
    const int64_t r1 = std::min<int64_t>(H, static_cast<int64_t>(shape.cy + reach) + 1);
    const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(shape.cx - reach));
    const int64_t c1 = std::min<int64_t>(W, static_cast<int64_t>(shape.cx + reach) + 1);
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t c = c0; c < c1; ++c) {
        int hits = 0;
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) hits += shape.contains(c + (j + 0.5) / 4, r + (i + 0.5) / 4);
        if (hits == 0) continue;
        const double cov = hits / 16.0;
        for (int64_t ch = 0; ch < C; ++ch) {
          const double target = C == 3 ? color[static_cast<size_t>(ch)] : (color[0] + color[1] + color[2]) / 3;
          auto& v = img[static_cast<size_t>((ch * H + r) * W + c)];
          v = v * (1 - cov) + target * cov;
        }
      }
  }
  for (size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i] + spec.noise * rng.normal(), 0.0, 1.0);
    s.image[i] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
  }
  return s;
}

// Output pixel (r, c) reads input pixel src(r, c); output is out_h x out_w.
SegSample remap(const SegSample& s, int64_t out_h, int64_t out_w,
                const std::function<std::pair<int64_t, int64_t>(int64_t, int64_t)>& src) {
  SegSample out = s;
  out.height = out_h;
  out.width = out_w;
  out.mask = LabelMap{out_h, out_w, std::vector<int32_t>(static_cast<size_t>(out_h * out_w))};
  out.image.assign(static_cast<size_t>(s.channels * out_h * out_w), 0.0f);
  for (int64_t r = 0; r < out_h; ++r)
    for (int64_t c = 0; c < out_w; ++c) {
      const auto [sr, sc] = src(r, c);
      out.mask.data[static_cast<size_t>(r * out_w + c)] = s.mask.at(sr, sc);
      for (int64_t ch = 0; ch < s.channels; ++ch) {
        out.image[static_cast<size_t>((ch * out_h + r) * out_w + c)] =
            s.image[static_cast<size_t>((ch * s.height + sr) * s.width + sc)];
      }
    }
  return out;
}

SegSample flip_h(const SegSample& s) {
  return remap(s, s.height, s.width, [&](int64_t r, int64_t c) { return std::pair{r, s.width - 1 - c}; });
}
SegSample flip_v(const SegSample& s) {
  return remap(s, s.height, s.width, [&](int64_t r, int64_t c) { return std::pair{s.height - 1 - r, c}; });
}
// One quarter turn counter-clockwise.
SegSample rot90_ccw(const SegSample& s) {
  return remap(s, s.width, s.height, [&](int64_t r, int64_t c) { return std::pair{c, s.width - 1 - r}; });
}

SegSample rotate_free(const SegSample& s, double angle) {
  SegSample out = s;
  const double cy = (s.height - 1) / 2.0, cx = (s.width - 1) / 2.0;
  const double co = std::cos(angle), si = std::sin(angle);
  for (int64_t r = 0; r < s.height; ++r)
    for (int64_t c = 0; c < s.width; ++c) {
      const double x = co * (c - cx) - si * (r - cy) + cx;
      const double y = si * (c - cx) + co * (r - cy) + cy;
      const int64_t nr = std::lround(y), nc = std::lround(x);
      const bool in = nr >= 0 && nr < s.height && nc >= 0 && nc < s.width;
      out.mask.data[static_cast<size_t>(r * s.width + c)] = in ? s.mask.at(nr, nc) : 0;
      const int64_t x0 = static_cast<int64_t>(std::floor(x)), y0 = static_cast<int64_t>(std::floor(y));
      const double fx = x - x0, fy = y - y0;
      for (int64_t ch = 0; ch < s.channels; ++ch) {
        auto px = [&](int64_t yy, int64_t xx) -> double {
          if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) return 0.0;
          return s.image[static_cast<size_t>((ch * s.height + yy) * s.width + xx)];
        };
        const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
        out.image[static_cast<size_t>((ch * s.height + r) * s.width + c)] = static_cast<float>(v);
      }
    }
  return out;
}

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& header, const std::vector<uint8_t>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec, uint64_t seed) {
  if (spec.num_classes < 2 || spec.num_classes > 256) throw ConfigError("synth: num_classes must be in [2, 256]");
  if (spec.height <= 0 || spec.width <= 0 || spec.height % 32 || spec.width % 32) {
    throw ConfigError("synth: image size must be a positive multiple of 32");
  }
  if (spec.channels != 1 && spec.channels != 3) throw ConfigError("synth: channels must be 1 or 3");
  if (spec.count < 0 || spec.val_count < 0 || spec.val_count > spec.count) {
    throw ConfigError("synth: need 0 <= val_count <= count");
  }
  if (spec.noise < 0) throw ConfigError("synth: noise must be non-negative");
  Dataset ds;
  ds.num_classes = spec.num_classes;
  for (int64_t i = 0; i < spec.count; ++i) {
    const std::string id = sample_id(i);
    Rng rng = Rng::derive(seed, "synth/" + id);
    ds.samples.push_back(synth_one(spec, rng, id));
    ds.split.push_back(i < spec.count - spec.val_count ? "train" : "val");
  }
  return ds;
}

AugmentOp sample_augment(Rng& rng, bool free_rotation) {
  AugmentOp op;
  op.hflip = rng.coin();
  op.vflip = rng.coin();
  op.rot90 = static_cast<int>(rng.below(4));
  if (free_rotation) op.angle = rng.uniform(-std::numbers::pi / 12, std::numbers::pi / 12);
  return op;
}

SegSample apply_augment(const SegSample& s, const AugmentOp& op) {
  SegSample out = s;
  if (op.hflip) out = flip_h(out);
  if (op.vflip) out = flip_v(out);
  for (int k = 0; k < ((op.rot90 % 4) + 4) % 4; ++k) out = rot90_ccw(out);
  if (op.angle != 0) out = rotate_free(out, op.angle);
  return out;
}

SegSample invert_augment(const SegSample& s, const AugmentOp& op) {
  SegSample out = s;
  for (int k = 0; k < (4 - ((op.rot90 % 4) + 4) % 4) % 4; ++k) out = rot90_ccw(out);
  if (op.vflip) out = flip_v(out);
  if (op.hflip) out = flip_h(out);
  return out;
}

void write_pnm(const fs::path& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("pnm: channels must be 1 or 3");
  if (static_cast<int64_t>(img.pixels.size()) != img.channels * img.height * img.width) {
    throw FormatError("pnm: pixel buffer size mismatch");
  }
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  write_file(path, header, img.pixels);
}

PnmImage read_pnm(const fs::path& path) {
  const auto bytes = read_file(path);
  size_t pos = 0;
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  auto whitespace = [&] {
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("expected one whitespace separator");
    ++pos;
  };
  auto number = [&] {
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail("expected a decimal number");
    int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1 << 24)) throw fail("dimension too large");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw fail("not a binary PGM/PPM (P5/P6)");
  }
  PnmImage img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  whitespace();
  img.width = number();
  whitespace();
  img.height = number();
  whitespace();
  if (number() != 255) throw fail("maxval must be 255");
  whitespace();
  const size_t expected = static_cast<size_t>(img.channels * img.height * img.width);
  if (img.width == 0 || img.height == 0) throw fail("empty image");
  if (bytes.size() - pos != expected) {
    throw fail("expected " + std::to_string(expected) + " pixel bytes, found " + std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

SegSample load_image(const fs::path& path) {
  const auto pnm = read_pnm(path);
  SegSample s;
  s.id = path.stem().string();
  s.channels = pnm.channels;
  s.height = pnm.height;
  s.width = pnm.width;
  s.image.resize(pnm.pixels.size());
  const int64_t HW = s.height * s.width;
  for (int64_t i = 0; i < HW; ++i)
    for (int64_t ch = 0; ch < s.channels; ++ch) {
      s.image[static_cast<size_t>(ch * HW + i)] = pnm.pixels[static_cast<size_t>(i * s.channels + ch)] / 255.0f;
    }
  return s;
}

void save_mask(const fs::path& path, const LabelMap& mask) {
  PnmImage p{1, mask.height, mask.width, {}};
  p.pixels.reserve(mask.data.size());
  for (int32_t v : mask.data) {
    if (v < 0 || v > 255) throw FormatError("mask value " + std::to_string(v) + " does not fit in 8 bits");
    p.pixels.push_back(static_cast<uint8_t>(v));
  }
  write_pnm(path, p);
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << "decomamba-dataset 1\nnum_classes " << ds.num_classes << "\ncount " << ds.samples.size() << "\n";
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    PnmImage p{s.channels, s.height, s.width, {}};
    p.pixels.resize(s.image.size());
    const int64_t HW = s.height * s.width;
    for (int64_t k = 0; k < HW; ++k)
      for (int64_t ch = 0; ch < s.channels; ++ch) {
        const float v = s.image[static_cast<size_t>(ch * HW + k)];
        p.pixels[static_cast<size_t>(k * s.channels + ch)] =
            static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    write_pnm(dir / "images" / (s.id + (s.channels == 3 ? ".ppm" : ".pgm")), p);
    save_mask(dir / "masks" / (s.id + ".pgm"), s.mask);
    manifest << s.id << ' ' << ds.split[i] << '\n';
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << manifest.str();
  if (!out) throw IoError("cannot write manifest in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw IoError("no manifest.txt in " + dir.string());
  std::string magic, key;
  int version = 0;
  int64_t count = -1;
  Dataset ds;
  if (!(in >> magic >> version) || magic != "decomamba-dataset" || version != 1) {
    throw FormatError(dir.string() + ": unrecognized manifest header");
  }
  if (!(in >> key >> ds.num_classes) || key != "num_classes" || ds.num_classes < 2) {
    throw FormatError(dir.string() + ": manifest needs num_classes >= 2");
  }
  if (!(in >> key >> count) || key != "count" || count < 0) throw FormatError(dir.string() + ": manifest needs count");
  for (int64_t i = 0; i < count; ++i) {
    std::string id, split;
    if (!(in >> id >> split)) throw FormatError(dir.string() + ": manifest lists fewer than count samples");
    if (split != "train" && split != "val") throw FormatError("manifest: unknown split '" + split + "' for " + id);
    fs::path image = dir / "images" / (id + ".ppm");
    if (!fs::exists(image)) image = dir / "images" / (id + ".pgm");
    SegSample s = load_image(image);
    s.id = id;
    const auto m = read_pnm(dir / "masks" / (id + ".pgm"));
    if (m.channels != 1 || m.height != s.height || m.width != s.width) {
      throw FormatError("mask of " + id + " does not match its image");
    }
    s.mask = LabelMap{m.height, m.width, {}};
    for (uint8_t v : m.pixels) {
      if (v >= ds.num_classes) throw FormatError("mask of " + id + " has class " + std::to_string(v));
      s.mask.data.push_back(v);
    }
    ds.samples.push_back(std::move(s));
    ds.split.push_back(split);
  }
  return ds;
}

namespace {

int64_t nearest_source(int64_t i, int64_t out, int64_t in) {
  return std::min(in - 1, static_cast<int64_t>(std::floor((i + 0.5) * static_cast<double>(in) / out)));
}

}  // namespace

LabelMap resize_labels(const LabelMap& m, int64_t out_h, int64_t out_w) {
  if (out_h <= 0 || out_w <= 0) throw PreconditionError("resize_labels: empty target size");
  LabelMap out{out_h, out_w, std::vector<int32_t>(static_cast<size_t>(out_h * out_w))};
  for (int64_t r = 0; r < out_h; ++r)
    for (int64_t c = 0; c < out_w; ++c) {
      out.data[static_cast<size_t>(r * out_w + c)] =
          m.at(nearest_source(r, out_h, m.height), nearest_source(c, out_w, m.width));
    }
  return out;
}

SegSample resize_sample(const SegSample& s, int64_t out_h, int64_t out_w) {
  if (out_h <= 0 || out_w <= 0) throw PreconditionError("resize_sample: empty target size");
  SegSample out = s;
  out.height = out_h;
  out.width = out_w;
  out.mask = s.mask.data.empty() ? LabelMap{} : resize_labels(s.mask, out_h, out_w);
  out.image.assign(static_cast<size_t>(s.channels * out_h * out_w), 0.0f);
  auto coord = [](int64_t i, int64_t out_n, int64_t in_n, int64_t& i0, int64_t& i1, double& f) {
    const double x = std::clamp((i + 0.5) * static_cast<double>(in_n) / out_n - 0.5, 0.0, double(in_n - 1));
    i0 = static_cast<int64_t>(std::floor(x));
    i1 = std::min(i0 + 1, in_n - 1);
    f = x - i0;
  };
  for (int64_t r = 0; r < out_h; ++r) {
    int64_t y0, y1;
    double fy;
    coord(r, out_h, s.height, y0, y1, fy);
    for (int64_t c = 0; c < out_w; ++c) {
      int64_t x0, x1;
      double fx;
      coord(c, out_w, s.width, x0, x1, fx);
      for (int64_t ch = 0; ch < s.channels; ++ch) {
        auto px = [&](int64_t yy, int64_t xx) -> double {
          return s.image[static_cast<size_t>((ch * s.height + yy) * s.width + xx)];
        };
        const double v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) + fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
        out.image[static_cast<size_t>((ch * out_h + r) * out_w + c)] = static_cast<float>(v);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> stack_images(const std::vector<SegSample>& samples, const std::vector<size_t>& idx) {
  if (idx.empty()) throw PreconditionError("stack_images: empty batch");
  const auto& first = samples.at(idx[0]);
  std::vector<T> data;
  data.reserve(idx.size() * first.image.size());
  for (size_t i : idx) {
    const auto& s = samples.at(i);
    if (s.channels != first.channels || s.height != first.height || s.width != first.width) {
      throw ShapeError("stack_images: sample " + s.id + " differs in size");
    }
    data.insert(data.end(), s.image.begin(), s.image.end());
  }
  return Tensor<T>::from_data({static_cast<int64_t>(idx.size()), first.channels, first.height, first.width},
                              std::move(data));
}

template Tensor<float> stack_images(const std::vector<SegSample>&, const std::vector<size_t>&);
template Tensor<double> stack_images(const std::vector<SegSample>&, const std::vector<size_t>&);

}  // namespace dm
