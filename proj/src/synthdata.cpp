#include "scaler/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "scaler/error.hpp"

namespace scaler {

namespace {

constexpr char kTensorMagic[8] = {'S', 'C', 'L', 'R', 'D', 'S', '0', '1'};

void check_side(int64_t side) {
  if (side < 8 || side % 4 != 0)
    throw NumericError("scene side must be a multiple of 4 and at least 8, got " +
                       std::to_string(side));
}

// Smoothed standardized noise: white gaussians, three passes of a wrapped
// 5-tap box blur per axis, then rescaled to mean 0 / variance 1.
Tensor smoothed_field(int64_t side, Rng& rng) {
  Tensor f = Tensor::zeros({side, side});
  for (double& v : f.data) v = rng.normal();

  Tensor tmp = f;
  for (int pass = 0; pass < 3; ++pass) {
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) {
        double acc = 0.0;
        for (int64_t k = -2; k <= 2; ++k) acc += f.at2(y, (x + k + side) % side);
        tmp.at2(y, x) = acc / 5.0;
      }
    for (int64_t y = 0; y < side; ++y)
      for (int64_t x = 0; x < side; ++x) {
        double acc = 0.0;
        for (int64_t k = -2; k <= 2; ++k) acc += tmp.at2((y + k + side) % side, x);
        f.at2(y, x) = acc / 5.0;
      }
  }

  double mean = 0.0;
  for (double v : f.data) mean += v;
  mean /= static_cast<double>(f.numel());
  double var = 0.0;
  for (double v : f.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(f.numel());
  const double inv_sd = 1.0 / std::sqrt(std::max(var, 1e-12));
  for (double& v : f.data) v = (v - mean) * inv_sd;
  return f;
}

struct Blob {
  double cy, cx, ry, rx, theta, power;
  double amp1, amp2, ph1, ph2;
};

Tensor blob_mask(int64_t side, const Blob& b) {
  Tensor m = Tensor::zeros({side, side});
  const double ct = std::cos(b.theta), st = std::sin(b.theta);
  for (int64_t y = 0; y < side; ++y)
    for (int64_t x = 0; x < side; ++x) {
      const double u = (static_cast<double>(x) + 0.5) - b.cx;
      const double v = (static_cast<double>(y) + 0.5) - b.cy;
      const double ru = ct * u + st * v;
      const double rv = -st * u + ct * v;
      const double phi = std::atan2(rv, ru);
      const double pert =
          1.0 + b.amp1 * std::sin(phi + b.ph1) + b.amp2 * std::sin(2.0 * phi + b.ph2);
      const double d = std::pow(std::abs(ru / (b.rx * pert)), b.power) +
                       std::pow(std::abs(rv / (b.ry * pert)), b.power);
      m.at2(y, x) = (d <= 1.0) ? 1.0 : 0.0;
    }
  return m;
}

// Pixels whose full Chebyshev-r window is the given class. Out-of-bounds
// counts as background, so foreground interiors shrink away from the frame.
std::vector<std::pair<int64_t, int64_t>> interior_pixels(const Tensor& mask, double cls, int r) {
  const int64_t side_y = mask.dims[0], side_x = mask.dims[1];
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t y = 0; y < side_y; ++y)
    for (int64_t x = 0; x < side_x; ++x) {
      if (mask.at2(y, x) != cls) continue;
      bool ok = true;
      for (int64_t dy = -r; dy <= r && ok; ++dy)
        for (int64_t dx = -r; dx <= r && ok; ++dx) {
          const int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= side_y || nx < 0 || nx >= side_x) {
            if (cls == 1.0) ok = false; // outside the frame is background
            continue;
          }
          if (mask.at2(ny, nx) != cls) ok = false;
        }
      if (ok) out.emplace_back(y, x);
    }
  return out;
}

std::pair<int64_t, int64_t> pick_interior(const Tensor& mask, double cls, Rng& rng) {
  for (int r = 2; r >= 0; --r) {
    auto pix = interior_pixels(mask, cls, r);
    if (!pix.empty()) return pix[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pix.size()) - 1))];
  }
  throw NumericError("mask has no pixel of the requested class");
}

void scribble_walk(const Tensor& mask, Tensor& ann, double cls, double label, Rng& rng) {
  const int64_t side = mask.dims[0];
  const int64_t len = std::max<int64_t>(3, side / 10);
  auto [y, x] = pick_interior(mask, cls, rng);
  ann.at2(y, x) = label;
  const int64_t dy[4] = {-1, 1, 0, 0};
  const int64_t dx[4] = {0, 0, -1, 1};
  for (int64_t step = 1; step < len; ++step) {
    bool moved = false;
    for (int tries = 0; tries < 8 && !moved; ++tries) {
      const int64_t d = rng.uniform_int(0, 3);
      const int64_t ny = y + dy[d], nx = x + dx[d];
      if (ny < 0 || ny >= mask.dims[0] || nx < 0 || nx >= mask.dims[1]) continue;
      if (mask.at2(ny, nx) != cls) continue;
      y = ny;
      x = nx;
      ann.at2(y, x) = label;
      moved = true;
    }
    if (!moved) break;
  }
}

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::ifstream& is, T& v, const std::filesystem::path& path) {
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated tensor file: " + path.string());
}

std::string sample_name(int64_t i) {
  std::ostringstream os;
  os.width(4);
  os.fill('0');
  os << i;
  return os.str() + ".bin";
}

} // namespace

const char* annotation_mode_name(AnnotationMode m) {
  return m == AnnotationMode::Point ? "point" : "scribble";
}

AnnotationMode annotation_mode_from(const std::string& name) {
  if (name == "point") return AnnotationMode::Point;
  if (name == "scribble") return AnnotationMode::Scribble;
  throw UsageError("unknown annotation mode: " + name);
}

Sample gen_sample(const SceneSpec& spec) {
  check_side(spec.side);
  if (!(spec.contrast >= 0.0 && spec.contrast <= 1.0))
    throw NumericError("contrast must lie in [0,1], got " + std::to_string(spec.contrast));

  Rng field_rng = stream_rng(spec.seed, "field");
  Tensor z = smoothed_field(spec.side, field_rng);
  Tensor bg = z;
  for (double& v : bg.data) v = std::min(1.0, std::max(0.0, 0.3 + 0.1 * v));

  Rng blob_rng = stream_rng(spec.seed, "blob");
  const double s = static_cast<double>(spec.side);
  Tensor mask;
  bool ok = false;
  for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
    Blob b;
    b.cy = s * blob_rng.uniform(0.3, 0.7);
    b.cx = s * blob_rng.uniform(0.3, 0.7);
    b.ry = s * blob_rng.uniform(0.15, 0.3);
    b.rx = s * blob_rng.uniform(0.15, 0.3);
    b.theta = blob_rng.uniform(0.0, 3.14159265358979);
    b.power = blob_rng.uniform(1.5, 3.0);
    b.amp1 = blob_rng.uniform(0.0, 0.15);
    b.amp2 = blob_rng.uniform(0.0, 0.1);
    b.ph1 = blob_rng.uniform(0.0, 6.28318530717959);
    b.ph2 = blob_rng.uniform(0.0, 6.28318530717959);
    mask = blob_mask(spec.side, b);
    double area = 0.0;
    for (double v : mask.data) area += v;
    area /= static_cast<double>(mask.numel());
    ok = area >= 0.02 && area <= 0.6;
  }
  if (!ok) throw NumericError("could not draw a blob with sane area");

  Sample out;
  out.mask = mask;
  out.image = bg;
  for (size_t i = 0; i < bg.data.size(); ++i)
    if (mask.data[i] == 1.0) out.image.data[i] = std::min(1.0, bg.data[i] + spec.contrast * 0.55);
  out.annotation = Tensor::zeros({spec.side, spec.side});
  return out;
}

Tensor sparse_annotate(const Tensor& mask_hw, AnnotationMode mode, Rng& rng) {
  if (mask_hw.dims.size() != 2) throw NumericError("annotation source must be rank-2");
  bool has_fg = false, has_bg = false;
  for (double v : mask_hw.data) {
    if (v == 1.0) has_fg = true;
    else if (v == 0.0) has_bg = true;
    else throw NumericError("annotation source must be binary");
  }
  if (!has_fg || !has_bg) throw NumericError("annotation source needs both classes");

  Tensor ann = Tensor::zeros(mask_hw.dims);
  if (mode == AnnotationMode::Point) {
    auto [fy, fx] = pick_interior(mask_hw, 1.0, rng);
    ann.at2(fy, fx) = 1.0;
    auto [by, bx] = pick_interior(mask_hw, 0.0, rng);
    ann.at2(by, bx) = -1.0;
  } else {
    scribble_walk(mask_hw, ann, 1.0, 1.0, rng);
    scribble_walk(mask_hw, ann, 0.0, -1.0, rng);
  }
  return ann;
}

Split make_split(int64_t n, double labeled_fraction) {
  if (n < 0) throw NumericError("split size must be nonnegative");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0))
    throw NumericError("labeled fraction must lie in [0,1]");
  Split s;
  const int64_t labeled = static_cast<int64_t>(std::floor(static_cast<double>(n) * labeled_fraction));
  for (int64_t i = 0; i < labeled; ++i) s.labeled.push_back(i);
  for (int64_t i = labeled; i < n; ++i) s.unlabeled.push_back(i);
  return s;
}

std::vector<Sample> gen_dataset(const DatasetSpec& spec) {
  check_side(spec.side);
  if (spec.count < 1 || spec.count > 9999)
    throw NumericError("dataset count must lie in [1, 9999]");
  if (!(spec.contrast_lo >= 0.0 && spec.contrast_hi <= 1.0 && spec.contrast_lo <= spec.contrast_hi))
    throw NumericError("contrast range must satisfy 0 <= lo <= hi <= 1");

  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(spec.count));
  for (int64_t i = 0; i < spec.count; ++i) {
    double c = spec.contrast_lo;
    if (spec.contrast_hi > spec.contrast_lo) {
      Rng crng = stream_rng(spec.seed, "contrast", {static_cast<uint64_t>(i)});
      c = crng.uniform(spec.contrast_lo, spec.contrast_hi);
    }
    SceneSpec scene{spec.side, c, mix_seed(spec.seed, {hash_tag("sample"), static_cast<uint64_t>(i)})};
    Sample s = gen_sample(scene);
    Rng arng = stream_rng(spec.seed, "annotate", {static_cast<uint64_t>(i)});
    s.annotation = sparse_annotate(s.mask, spec.annotation, arng);
    out.push_back(std::move(s));
  }
  return out;
}

Tensor corrupt_boundary_band(const Tensor& mask_hw, int band, double rate, Rng& rng) {
  if (mask_hw.dims.size() != 2) throw NumericError("corruption target must be rank-2");
  if (band < 1) throw NumericError("corruption band must be at least 1");
  if (!(rate >= 0.0 && rate <= 1.0)) throw NumericError("corruption rate must lie in [0,1]");

  const int64_t H = mask_hw.dims[0], W = mask_hw.dims[1];
  Tensor out = mask_hw;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const double v = mask_hw.at2(y, x);
      bool banded = false;
      for (int64_t dy = -band; dy <= band && !banded; ++dy)
        for (int64_t dx = -band; dx <= band && !banded; ++dx) {
          const int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          if (mask_hw.at2(ny, nx) != v) banded = true;
        }
      if (banded && rng.bernoulli(rate)) out.at2(y, x) = 1.0 - v;
    }
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& hw) {
  if (hw.dims.size() != 2) throw NumericError("tensor files hold rank-2 tensors");
  if (hw.dims[0] > 0xFFFF || hw.dims[1] > 0xFFFF) throw NumericError("tensor side exceeds u16");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path.string());
  os.write(kTensorMagic, sizeof kTensorMagic);
  write_pod(os, static_cast<uint32_t>(2));
  write_pod(os, static_cast<uint16_t>(hw.dims[0]));
  write_pod(os, static_cast<uint16_t>(hw.dims[1]));
  os.write(reinterpret_cast<const char*>(hw.data.data()),
           static_cast<std::streamsize>(hw.data.size() * sizeof(double)));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kTensorMagic, sizeof magic) != 0)
    throw IoError("bad tensor file magic: " + path.string());
  uint32_t rank = 0;
  read_pod(is, rank, path);
  if (rank != 2) throw IoError("unexpected tensor rank in " + path.string());
  uint16_t h = 0, w = 0;
  read_pod(is, h, path);
  read_pod(is, w, path);
  if (h == 0 || w == 0) throw IoError("zero dimension in " + path.string());
  std::vector<double> data(static_cast<size_t>(h) * w);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (is.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)))
    throw IoError("truncated tensor file: " + path.string());
  try {
    return Tensor::from_data({h, w}, std::move(data));
  } catch (const Error& e) {
    throw IoError("corrupt tensor payload in " + path.string() + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                   const std::vector<Sample>& samples) {
  if (static_cast<int64_t>(samples.size()) != spec.count)
    throw NumericError("sample count does not match the spec");
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "masks", ec);
  std::filesystem::create_directories(dir / "annots", ec);
  if (ec) throw IoError("cannot create dataset layout under " + dir.string());

  for (int64_t i = 0; i < spec.count; ++i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    write_tensor_file(dir / "images" / sample_name(i), s.image);
    write_tensor_file(dir / "masks" / sample_name(i), s.mask);
    write_tensor_file(dir / "annots" / sample_name(i), s.annotation);
  }

  nlohmann::json m{
      {"format", "SCLRDS01"},
      {"count", spec.count},
      {"side", spec.side},
      {"contrast_lo", spec.contrast_lo},
      {"contrast_hi", spec.contrast_hi},
      {"seed", spec.seed},
      {"annotation", annotation_mode_name(spec.annotation)},
  };
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest under " + dir.string());
  os << m.dump(2) << "\n";
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("missing manifest: " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    is >> m;
  } catch (const std::exception& e) {
    throw IoError("unparseable manifest in " + dir.string() + ": " + e.what());
  }

  LoadedDataset out;
  try {
    if (m.at("format").get<std::string>() != "SCLRDS01")
      throw IoError("unknown dataset format in " + dir.string());
    out.spec.count = m.at("count").get<int64_t>();
    out.spec.side = m.at("side").get<int64_t>();
    out.spec.contrast_lo = m.at("contrast_lo").get<double>();
    out.spec.contrast_hi = m.at("contrast_hi").get<double>();
    out.spec.seed = m.at("seed").get<uint64_t>();
    out.spec.annotation = annotation_mode_from(m.at("annotation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest fields missing or mistyped in " + dir.string() + ": " + e.what());
  }

  out.samples.reserve(static_cast<size_t>(out.spec.count));
  for (int64_t i = 0; i < out.spec.count; ++i) {
    Sample s;
    s.image = read_tensor_file(dir / "images" / sample_name(i));
    s.mask = read_tensor_file(dir / "masks" / sample_name(i));
    s.annotation = read_tensor_file(dir / "annots" / sample_name(i));
    if (s.image.dims[0] != out.spec.side || !s.image.same_shape(s.mask) ||
        !s.image.same_shape(s.annotation))
      throw IoError("sample " + sample_name(i) + " disagrees with the manifest in " + dir.string());
    out.samples.push_back(std::move(s));
  }
  return out;
}

} // namespace scaler
