#include "textbcs/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <spdlog/spdlog.h>

#include "textbcs/errors.hpp"
#include "textbcs/hash.hpp"
#include "textbcs/image_io.hpp"

namespace textbcs::synth {

using nlohmann::json;

namespace {

constexpr int kPlacementTries = 200;
constexpr int kLayoutRestarts = 50;
constexpr int kMinGap = 2;
constexpr double kPixelNoise = 0.04;
constexpr std::array<double, kMaxLesions> kCountWeights = {0.4, 0.3, 0.2, 0.1};

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::array<const char*, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (s == names[i]) return static_cast<E>(i);
  }
  throw DataError(std::string("unknown ") + what + " \"" + s + "\"");
}

constexpr std::array<const char*, 2> kLocationNames = {"left", "right"};
constexpr std::array<const char*, 3> kShapeNames = {"round", "ellipse", "irregular"};
constexpr std::array<const char*, 3> kSizeNames = {"small", "medium", "large"};
constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};
constexpr std::array<const char*, kMaxLesions> kCountWords = {"one", "two", "three", "four"};

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with clamped borders.
std::vector<double> blur(const std::vector<double>& src, int size, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += k[d + r] * src[y * size + std::clamp(x + d, 0, size - 1)];
      tmp[y * size + x] = acc;
    }
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += k[d + r] * tmp[std::clamp(y + d, 0, size - 1) * size + x];
      out[y * size + x] = acc;
    }
  }
  return out;
}

std::vector<double> normalized_noise(Rng& rng, int size, double sigma) {
  std::vector<double> field(static_cast<std::size_t>(size) * size);
  for (double& v : field) v = rng.normal();
  field = blur(field, size, sigma);
  double mean = 0.0, sq = 0.0;
  for (double v : field) mean += v;
  mean /= field.size();
  for (double v : field) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / field.size()) + 1e-12;
  for (double& v : field) v = (v - mean) / sd;
  return field;
}

// One lesion outline in continuous pixel coordinates (pixel i covers [i, i+1)).
struct Blob {
  Shape shape = Shape::kRound;
  double cx = 0, cy = 0;
  double r0 = 0;            // disk / irregular base radius
  double a = 0, b = 0;      // ellipse semi-axes
  double theta = 0;
  std::array<double, 3> coef{}, phase{};  // radial harmonics 2..4

  double extent() const {
    if (shape == Shape::kEllipse) return a;
    double s = 0.0;
    for (double c : coef) s += std::abs(c);
    return r0 * (1.0 + s);
  }

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    switch (shape) {
      case Shape::kRound:
        return dx * dx + dy * dy <= r0 * r0;
      case Shape::kEllipse: {
        const double u = dx * std::cos(theta) + dy * std::sin(theta);
        const double v = -dx * std::sin(theta) + dy * std::cos(theta);
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
      }
      case Shape::kIrregular: {
        const double phi = std::atan2(dy, dx);
        double r = r0;
        for (int k = 0; k < 3; ++k) r += r0 * coef[k] * std::cos((k + 2) * phi + phase[k]);
        return dx * dx + dy * dy <= r * r;
      }
    }
    return false;
  }
};

// area_span < 1 restricts the draw to the lower part of the size class range.
Blob draw_outline(Rng& rng, Shape shape, SizeClass size, int image_size, double area_span) {
  const auto [lo, hi] = area_fraction_range(size);
  const double frac = area_span == 1.0 ? rng.uniform(lo, hi) : rng.uniform(lo, lo + area_span * (hi - lo));
  const double area = frac * image_size * image_size;
  Blob b;
  b.shape = shape;
  switch (shape) {
    case Shape::kRound:
      b.r0 = std::sqrt(area / std::numbers::pi);
      break;
    case Shape::kEllipse: {
      const double ratio = rng.uniform(1.5, 3.0);
      b.a = std::sqrt(area * ratio / std::numbers::pi);
      b.b = b.a / ratio;
      b.theta = rng.uniform(0.0, std::numbers::pi);
      break;
    }
    case Shape::kIrregular: {
      double energy = 0.0;
      for (int k = 0; k < 3; ++k) {
        b.coef[k] = rng.uniform(-0.18, 0.18);
        b.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        energy += b.coef[k] * b.coef[k];
      }
      b.r0 = std::sqrt(area / (std::numbers::pi * (1.0 + 0.5 * energy)));
      break;
    }
  }
  return b;
}

// Pixels covered by the blob (by pixel centre).
std::vector<int> rasterize(const Blob& b, int size) {
  std::vector<int> pixels;
  const double r = b.extent() + 1.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - r)));
  const int x1 = std::min(size - 1, static_cast<int>(std::ceil(b.cx + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - r)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(b.cy + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (b.contains(x + 0.5, y + 0.5)) pixels.push_back(y * size + x);
    }
  }
  return pixels;
}

// Places `count` blobs inside one half of the image, separated by at least
// kMinGap background pixels. Returns the per-pixel occupancy or nullopt.
std::optional<std::vector<int>> place_blobs(Rng& rng, Location half, Shape shape, SizeClass size, int count,
                                            int image_size, double area_span = 1.0) {
  const double margin = 1.0;
  const double mid = image_size / 2.0;
  std::vector<int> occupied(static_cast<std::size_t>(image_size) * image_size, 0);
  std::vector<int> blocked = occupied;
  for (int n = 0; n < count; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
      Blob b = draw_outline(rng, shape, size, image_size, area_span);
      const double ext = b.extent();
      const double lo_x = (half == Location::kLeft ? 0.0 : mid) + margin + ext;
      const double hi_x = (half == Location::kLeft ? mid : image_size) - margin - ext;
      const double lo_y = margin + ext, hi_y = image_size - margin - ext;
      if (lo_x > hi_x || lo_y > hi_y) continue;
      b.cx = rng.uniform(lo_x, hi_x);
      b.cy = rng.uniform(lo_y, hi_y);
      const std::vector<int> px = rasterize(b, image_size);
      if (px.empty()) continue;
      bool clear = true;
      for (int p : px) {
        const int x = p % image_size;
        const bool in_half = half == Location::kLeft ? x < image_size / 2 : x >= image_size / 2;
        if (blocked[p] || !in_half) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      std::vector<int> single(occupied.size(), 0);
      for (int p : px) single[p] = 1;
      if (count_components(single, image_size, image_size) != 1) continue;
      for (int p : px) {
        occupied[p] = 1;
        const int x = p % image_size, y = p / image_size;
        for (int dy = -kMinGap; dy <= kMinGap; ++dy) {
          for (int dx = -kMinGap; dx <= kMinGap; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx >= 0 && yy >= 0 && xx < image_size && yy < image_size) blocked[yy * image_size + xx] = 1;
          }
        }
      }
      placed = true;
    }
    if (!placed) return std::nullopt;
  }
  return occupied;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::string to_string(Location v) { return kLocationNames[static_cast<int>(v)]; }
std::string to_string(Shape v) { return kShapeNames[static_cast<int>(v)]; }
std::string to_string(SizeClass v) { return kSizeNames[static_cast<int>(v)]; }
std::string to_string(Split v) { return kSplitNames[static_cast<int>(v)]; }
Location parse_location(const std::string& s) { return parse_enum<Location>(s, kLocationNames, "location"); }
Shape parse_shape(const std::string& s) { return parse_enum<Shape>(s, kShapeNames, "shape"); }
SizeClass parse_size(const std::string& s) { return parse_enum<SizeClass>(s, kSizeNames, "size"); }
Split parse_split(const std::string& s) { return parse_enum<Split>(s, kSplitNames, "split"); }

std::pair<double, double> area_fraction_range(SizeClass size) {
  switch (size) {
    case SizeClass::kSmall:
      return {0.002, 0.008};
    case SizeClass::kMedium:
      return {0.008, 0.025};
    case SizeClass::kLarge:
      return {0.025, 0.06};
  }
  return {0.0, 0.0};
}

void LesionAttributes::validate() const {
  if (count < 1 || count > kMaxLesions) {
    throw DataError("lesion count must lie in [1, " + std::to_string(kMaxLesions) + "], got " + std::to_string(count));
  }
}

json LesionAttributes::to_json() const {
  return json{{"location", synth::to_string(location)},
              {"shape", synth::to_string(shape)},
              {"size", synth::to_string(size)},
              {"count", count}};
}

LesionAttributes LesionAttributes::from_json(const json& j) {
  try {
    LesionAttributes a{parse_location(j.at("location").get<std::string>()), parse_shape(j.at("shape").get<std::string>()),
                       parse_size(j.at("size").get<std::string>()), j.at("count").get<int>()};
    a.validate();
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed attributes: ") + e.what());
  }
}

std::string count_word(int count) {
  if (count < 1 || count > kMaxLesions) throw DataError("no count word for " + std::to_string(count));
  return kCountWords[count - 1];
}

std::string render_prompt(const LesionAttributes& attrs) {
  return "location " + to_string(attrs.location) + "; shape " + to_string(attrs.shape) + "; size " +
         to_string(attrs.size) + "; number " + count_word(attrs.count) + ".";
}

std::vector<double> background_field(Rng& rng, int image_size) {
  std::vector<double> field = normalized_noise(rng, image_size, image_size / 8.0);
  for (double& v : field) v = 0.4 + 0.05 * v;
  return field;
}

int count_components(const std::vector<int>& mask, int width, int height) {
  std::vector<char> seen(mask.size(), 0);
  std::vector<int> stack;
  int components = 0;
  for (int start = 0; start < width * height; ++start) {
    if (!mask[start] || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int x = p % width, y = p / width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= width || yy >= height) continue;
          const int q = yy * width + xx;
          if (mask[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return components;
}

Sample generate_sample(Rng& rng, const LesionAttributes& attrs, double contrast) {
  return generate_sample(rng, attrs, SampleOptions{64, contrast, 0.0, nullptr});
}

Sample generate_sample(Rng& rng, const LesionAttributes& attrs, const SampleOptions& options) {
  attrs.validate();
  if (!(options.contrast > 0.0 && options.contrast <= 1.0)) throw DataError("contrast must lie in (0,1]");
  const int size = options.image_size;
  if (size < 16 || size % 2 != 0) throw DataError("image_size must be even and >= 16");
  const std::size_t n = static_cast<std::size_t>(size) * size;
  if (options.background && options.background->size() != n) throw DataError("background field has the wrong size");

  // Stream split keeps the mask independent of contrast and background choices.
  Rng shape_rng = rng.derive("lesions");
  Rng tex_rng = rng.derive("texture");

  std::optional<std::vector<int>> mask;
  for (int restart = 0; restart < kLayoutRestarts && !mask; ++restart) {
    mask = place_blobs(shape_rng, attrs.location, attrs.shape, attrs.size, attrs.count, size);
  }
  // Crowded layouts (several large lesions in one half) occasionally fail;
  // retry with smaller areas from the same size class before giving up.
  for (double span : {0.5, 0.0}) {
    for (int restart = 0; restart < kLayoutRestarts && !mask; ++restart) {
      mask = place_blobs(shape_rng, attrs.location, attrs.shape, attrs.size, attrs.count, size, span);
    }
  }
  if (!mask) {
    throw DataError("cannot place " + std::to_string(attrs.count) + " " + to_string(attrs.size) +
                    " lesions in the " + to_string(attrs.location) + " half");
  }
  std::vector<double> indicator(mask->begin(), mask->end());
  if (options.distractor_prob > 0.0 && shape_rng.uniform() < options.distractor_prob) {
    const Location other = attrs.location == Location::kLeft ? Location::kRight : Location::kLeft;
    std::optional<std::vector<int>> decoy;
    for (int restart = 0; restart < kLayoutRestarts && !decoy; ++restart) {
      decoy = place_blobs(shape_rng, other, attrs.shape, attrs.size, 1, size);
    }
    if (decoy) {
      for (std::size_t p = 0; p < n; ++p) indicator[p] += (*decoy)[p];
    }
  }

  const double sigma = std::max(0.5, 0.8 * size / 64.0);
  const std::vector<double> soft = blur(indicator, size, sigma);
  std::vector<double> base = options.background ? *options.background : background_field(tex_rng, size);
  const std::vector<double> local = normalized_noise(tex_rng, size, size / 16.0);

  Sample s;
  s.size = size;
  s.attributes = attrs;
  s.prompt = render_prompt(attrs);
  s.mask = std::move(*mask);
  s.image.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double v = base[p] + 0.02 * local[p] + options.contrast * soft[p] + kPixelNoise * tex_rng.normal();
    s.image[p] = quantize(v) / 255.0;
  }
  if (count_components(s.mask, size, size) != attrs.count) {
    throw DataError("internal: rendered component count differs from the requested count");
  }
  return s;
}

json SampleRecord::to_json() const {
  return json{{"id", id},
              {"image", image},
              {"mask", mask},
              {"prompt", prompt},
              {"attributes", attributes.to_json()},
              {"group_id", group_id},
              {"split", synth::to_string(split)}};
}

SampleRecord SampleRecord::from_json(const json& j) {
  try {
    SampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.image = j.at("image").get<std::string>();
    r.mask = j.at("mask").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.attributes = LesionAttributes::from_json(j.at("attributes"));
    r.group_id = j.at("group_id").get<int>();
    r.split = parse_split(j.at("split").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
}

std::vector<SampleRecord> DatasetManifest::split(Split s) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::vector<int> DatasetManifest::groups(Split s) const {
  std::vector<int> out;
  for (const auto& r : records) {
    if (r.split == s && (out.empty() || out.back() != r.group_id)) out.push_back(r.group_id);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SplitCounts split_group_counts(int n_groups) {
  if (n_groups < 10) throw ConfigError("n_groups must be >= 10 to honour the 7:1:2 split, got " + std::to_string(n_groups));
  SplitCounts c;
  c.test = static_cast<int>(std::lround(0.2 * n_groups));
  c.val = std::max(1, static_cast<int>(std::lround(0.1 * n_groups)));
  c.train = n_groups - c.test - c.val;
  return c;
}

DatasetManifest generate_dataset(const ExperimentConfig& cfg, int n_groups, int samples_per_group,
                                 const std::filesystem::path& out_dir) {
  cfg.validate();
  const SplitCounts counts = split_group_counts(n_groups);
  if (samples_per_group < 1) throw ConfigError("samples_per_group must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw DataError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  const Rng root = seed_all(cfg.seed);
  Rng split_rng = root.derive("data/split");
  std::vector<int> order(n_groups);
  for (int g = 0; g < n_groups; ++g) order[g] = g;
  for (int i = n_groups - 1; i > 0; --i) std::swap(order[i], order[split_rng.uniform_int(0, i)]);
  std::vector<Split> group_split(n_groups, Split::kTrain);
  for (int i = 0; i < counts.test; ++i) group_split[order[i]] = Split::kTest;
  for (int i = counts.test; i < counts.test + counts.val; ++i) group_split[order[i]] = Split::kVal;

  DatasetManifest m;
  m.root = out_dir;
  m.seed = static_cast<std::uint64_t>(cfg.seed);
  m.image_size = cfg.image_size;
  const Rng data_rng = root.derive("data/samples");
  for (int g = 0; g < n_groups; ++g) {
    Rng group_rng = data_rng.derive("group/" + std::to_string(g));
    const Location loc = group_rng.uniform() < 0.5 ? Location::kLeft : Location::kRight;
    const std::vector<double> background = background_field(group_rng, cfg.image_size);
    for (int j = 0; j < samples_per_group; ++j) {
      Rng sample_rng = group_rng.derive("sample/" + std::to_string(j));
      LesionAttributes attrs;
      attrs.location = loc;
      attrs.shape = static_cast<Shape>(sample_rng.uniform_int(0, 2));
      attrs.size = static_cast<SizeClass>(sample_rng.uniform_int(0, 2));
      double pick = sample_rng.uniform();
      attrs.count = kMaxLesions;
      for (int c = 0; c < kMaxLesions; ++c) {
        if (pick < kCountWeights[c]) {
          attrs.count = c + 1;
          break;
        }
        pick -= kCountWeights[c];
      }
      const SampleOptions opts{cfg.image_size, cfg.lesion_contrast, cfg.distractor_prob, &background};
      Sample s = generate_sample(sample_rng, attrs, opts);

      char id[32];
      std::snprintf(id, sizeof id, "g%04d_s%02d", g, j);
      SampleRecord r;
      r.id = id;
      r.image = "images/" + r.id + ".png";
      r.mask = "masks/" + r.id + ".png";
      r.prompt = s.prompt;
      r.attributes = attrs;
      r.group_id = g;
      r.split = group_split[g];

      GrayImage img{cfg.image_size, cfg.image_size, {}};
      GrayImage msk = img;
      img.pixels.reserve(s.image.size());
      for (double v : s.image) img.pixels.push_back(quantize(v));
      for (int v : s.mask) msk.pixels.push_back(static_cast<std::uint8_t>(v));
      write_png(out_dir / r.image, img);
      write_png(out_dir / r.mask, msk);
      m.records.push_back(std::move(r));
    }
  }

  std::ostringstream lines;
  for (const auto& r : m.records) lines << r.to_json().dump() << '\n';
  const std::string manifest_text = lines.str();
  {
    std::ofstream out(out_dir / "manifest.jsonl", std::ios::binary);
    if (!out) throw DataError("cannot write " + (out_dir / "manifest.jsonl").string());
    out << manifest_text;
  }
  const json meta{{"version", m.version},
                  {"seed", m.seed},
                  {"image_size", cfg.image_size},
                  {"n_groups", n_groups},
                  {"samples_per_group", samples_per_group},
                  {"lesion_contrast", cfg.lesion_contrast},
                  {"distractor_prob", cfg.distractor_prob},
                  {"groups", {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}},
                  {"manifest_sha256", sha256_hex(manifest_text)}};
  std::ofstream out(out_dir / "dataset.json");
  if (!out) throw DataError("cannot write " + (out_dir / "dataset.json").string());
  out << meta.dump(2) << '\n';
  spdlog::info("generated {} samples in {} groups ({} / {} / {}) under {}", m.records.size(), n_groups, counts.train,
               counts.val, counts.test, out_dir.string());
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  DatasetManifest m;
  m.root = dir;
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) throw DataError("missing dataset.json in " + dir.string());
  try {
    const json meta = json::parse(meta_in);
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.version = meta.at("version").get<std::string>();
    m.image_size = meta.at("image_size").get<int>();
  } catch (const json::exception& e) {
    throw DataError("malformed dataset.json: " + std::string(e.what()));
  }
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw DataError("missing manifest.jsonl in " + dir.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(SampleRecord::from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw DataError("manifest.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

SplitData::SplitData(const DatasetManifest& manifest, Split split) : split_(split) {
  for (const SampleRecord& r : manifest.split(split)) {
    const std::filesystem::path img_path = manifest.root / r.image;
    const std::filesystem::path mask_path = manifest.root / r.mask;
    if (!std::filesystem::exists(img_path)) throw DataError("manifest references missing file " + img_path.string());
    if (!std::filesystem::exists(mask_path)) throw DataError("manifest references missing file " + mask_path.string());
    const GrayImage img = read_png_gray(img_path);
    const GrayImage msk = read_png_gray(mask_path);
    if (img.width != img.height || msk.width != img.width || msk.height != img.height) {
      throw DataError("image/mask dimensions disagree for " + r.id);
    }
    Sample s;
    s.id = r.id;
    s.size = img.width;
    s.attributes = r.attributes;
    s.prompt = r.prompt;
    s.group_id = r.group_id;
    s.split = r.split;
    s.image.reserve(img.pixels.size());
    for (std::uint8_t v : img.pixels) s.image.push_back(v / 255.0);
    s.mask.assign(msk.pixels.begin(), msk.pixels.end());
    samples_.push_back(std::move(s));
  }
  if (samples_.empty()) throw DataError("split \"" + to_string(split) + "\" is empty in " + manifest.root.string());
}

Batch SplitData::batch_of(const std::vector<std::size_t>& indices) const {
  const int n = static_cast<int>(indices.size());
  const int size = samples_.front().size;
  Batch b;
  b.images = Tensor({n, 1, size, size});
  b.masks = LabelMap(n, size, size);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples_.at(indices[i]);
    b.ids.push_back(s.id);
    b.prompts.push_back(s.prompt);
    std::copy(s.image.begin(), s.image.end(), b.images.data() + i * plane);
    std::copy(s.mask.begin(), s.mask.end(), b.masks.data.begin() + i * plane);
  }
  return b;
}

std::vector<Batch> SplitData::batches(int batch_size, Rng* rng) const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(samples_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (split_ == Split::kTrain && rng) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng->uniform_int(0, static_cast<int>(i))]);
    }
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.push_back(batch_of({order.begin() + start, order.begin() + end}));
  }
  return out;
}

std::vector<Batch> load_batches(const DatasetManifest& manifest, Split split, int batch_size, Rng* rng) {
  return SplitData(manifest, split).batches(batch_size, rng);
}

}  // namespace textbcs::synth
