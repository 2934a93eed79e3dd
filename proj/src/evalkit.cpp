#include "textbcs/evalkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "textbcs/errors.hpp"
#include "textbcs/hash.hpp"
#include "textbcs/special.hpp"
#include "textbcs/text.hpp"
#include "textbcs/trainer.hpp"

namespace textbcs::evalkit {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
  return {m, sd};
}

std::array<std::uint8_t, 3> color_ramp(double v) {
  // Dark blue -> teal -> yellow.
  static constexpr std::array<std::array<double, 3>, 5> stops = {
      {{0.27, 0.00, 0.33}, {0.23, 0.32, 0.55}, {0.13, 0.57, 0.55}, {0.37, 0.79, 0.38}, {0.99, 0.91, 0.14}}};
  v = std::clamp(v, 0.0, 1.0) * (stops.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(v), stops.size() - 2);
  const double f = v - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(std::lround(255.0 * ((1 - f) * stops[i][c] + f * stops[i + 1][c])));
  }
  return rgb;
}

bool on_edge(const std::vector<int>& mask, int size, int p) {
  if (!mask[p]) return false;
  const int x = p % size, y = p / size;
  const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (const auto& d : nb) {
    const int xx = x + d[0], yy = y + d[1];
    if (xx < 0 || yy < 0 || xx >= size || yy >= size || !mask[yy * size + xx]) return true;
  }
  return false;
}

std::string lower_first_phrase(const synth::LesionAttributes& a) {
  static const std::map<std::string, std::string> loc = {{"left", "sinistral side"}, {"right", "dextral side"}};
  static const std::map<std::string, std::string> shape = {
      {"round", "circular"}, {"ellipse", "oval"}, {"irregular", "spiculated"}};
  static const std::map<std::string, std::string> size = {{"small", "tiny"}, {"medium", "moderate"}, {"large", "big"}};
  static const std::array<const char*, 4> count = {"a single", "a pair of", "a trio of", "a quartet of"};
  return std::string(count[a.count - 1]) + " " + size.at(synth::to_string(a.size)) + " " +
         shape.at(synth::to_string(a.shape)) + " masses on the " + loc.at(synth::to_string(a.location)) + ".";
}

}  // namespace

json TTestResult::to_json() const {
  return json{{"t", t}, {"p", p}, {"df", df}, {"n", n}, {"mean_diff", mean_diff}, {"flag", flag}};
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b, Alternative alternative) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need >= 2 pairs");
  TTestResult r;
  r.n = a.size();
  r.df = static_cast<int>(a.size()) - 1;
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto [mean, sd] = mean_std(d);
  r.mean_diff = mean;
  if (sd == 0.0) {
    if (mean == 0.0) {
      r.flag = "zero_differences";
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.flag = "degenerate_variance";
      r.t = mean > 0 ? INFINITY : -INFINITY;
      r.p = (alternative == Alternative::kGreater && mean < 0) ? 1.0 : 0.0;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(r.n)));
  const double two_sided = special::student_t_two_sided(r.t, r.df);
  if (alternative == Alternative::kTwoSided) {
    r.p = two_sided;
  } else {
    r.p = r.t > 0 ? 0.5 * two_sided : 1.0 - 0.5 * two_sided;
  }
  return r;
}

Heatmap saliency_map(const Tensor& act, int sample, int target) {
  if (act.rank() != 4) throw std::invalid_argument("saliency_map: expected NCHW activations");
  const int c = act.dim(1), h = act.dim(2), w = act.dim(3);
  if (sample < 0 || sample >= act.dim(0)) throw std::out_of_range("saliency_map: sample index");
  if (target % h != 0 || target % w != 0) throw std::invalid_argument("saliency_map: target must be a multiple of the map size");
  std::vector<double> mean(static_cast<std::size_t>(h) * w, 0.0);
  for (int k = 0; k < c; ++k) {
    const double* src = act.data() + (static_cast<std::size_t>(sample) * c + k) * h * w;
    for (std::size_t p = 0; p < mean.size(); ++p) mean[p] += std::abs(src[p]) / c;
  }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double range = *hi - *lo;
  Heatmap m;
  m.width = m.height = target;
  m.values.assign(static_cast<std::size_t>(target) * target, 0.0);
  m.degenerate = !(range > 0.0);
  if (m.degenerate) return m;
  const double low = *lo;
  const int fy = target / h, fx = target / w;
  for (int y = 0; y < target; ++y) {
    for (int x = 0; x < target; ++x) m.values[y * target + x] = (mean[(y / fy) * w + x / fx] - low) / range;
  }
  return m;
}

std::vector<Heatmap> saliency_maps(const ForwardResult& forward, int sample, int target) {
  std::vector<Heatmap> out;
  for (const auto& f : forward.stage_features) out.push_back(saliency_map(f->value, sample, target));
  return out;
}

RgbImage colorize(const Heatmap& map) {
  RgbImage img{map.width, map.height, {}};
  img.pixels.reserve(map.values.size() * 3);
  for (double v : map.values) {
    const auto rgb = color_ramp(v);
    img.pixels.insert(img.pixels.end(), rgb.begin(), rgb.end());
  }
  return img;
}

RgbImage overlay(const std::vector<double>& image, int size, const std::vector<int>& gt, const std::vector<int>& pred) {
  RgbImage img{size, size, {}};
  img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  for (int p = 0; p < size * size; ++p) {
    std::uint8_t rgb[3];
    const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(image[p], 0.0, 1.0) * 255.0));
    rgb[0] = rgb[1] = rgb[2] = g;
    if (!pred.empty() && on_edge(pred, size, p)) {
      rgb[0] = 255, rgb[1] = 40, rgb[2] = 40;
    }
    if (!gt.empty() && on_edge(gt, size, p)) {
      rgb[0] = 40, rgb[1] = 255, rgb[2] = 40;
    }
    std::copy(rgb, rgb + 3, img.pixels.begin() + 3 * p);
  }
  return img;
}

RgbImage heat_overlay(const std::vector<double>& image, int size, const Heatmap& map, double alpha) {
  RgbImage img{size, size, {}};
  img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  for (int p = 0; p < size * size; ++p) {
    const auto rgb = color_ramp(map.values[p]);
    const double g = std::clamp(image[p], 0.0, 1.0) * 255.0;
    for (int c = 0; c < 3; ++c) {
      img.pixels[3 * p + c] = static_cast<std::uint8_t>(std::lround((1 - alpha) * g + alpha * rgb[c]));
    }
  }
  return img;
}

std::vector<int> dilate(const std::vector<int>& mask, int size, int radius) {
  std::vector<int> out(mask.size(), 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!mask[y * size + x]) continue;
      for (int yy = std::max(0, y - radius); yy <= std::min(size - 1, y + radius); ++yy) {
        for (int xx = std::max(0, x - radius); xx <= std::min(size - 1, x + radius); ++xx) out[yy * size + xx] = 1;
      }
    }
  }
  return out;
}

std::vector<int> erode(const std::vector<int>& mask, int size, int radius) {
  std::vector<int> inv(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) inv[i] = mask[i] ? 0 : 1;
  std::vector<int> grown = dilate(inv, size, radius);
  // Outside the image counts as background.
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (x < radius || y < radius || x >= size - radius || y >= size - radius) grown[y * size + x] = 1;
    }
  }
  for (int& v : grown) v = 1 - v;
  return grown;
}

int boundary_radius(int image_size) { return std::max(1, static_cast<int>(std::lround(image_size / 32.0))); }

ExperimentConfig variant_config(const ExperimentConfig& cfg, const std::string& variant) {
  ExperimentConfig v = cfg;
  if (variant == "base") {
    v.use_svli = false, v.use_el = false;
  } else if (variant == "base+svli") {
    v.use_svli = true, v.use_el = false;
  } else if (variant == "base+el") {
    v.use_svli = false, v.use_el = true;
  } else if (variant == "full") {
    v.use_svli = true, v.use_el = true;
  } else {
    throw ConfigError("unknown ablation variant \"" + variant + "\" (expected base, base+svli, base+el or full)");
  }
  v.validate();
  return v;
}

RunOutcome train_and_test(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest,
                          const std::filesystem::path& dir, bool reuse) {
  RunOutcome out;
  out.dir = dir;
  const std::filesystem::path done = dir / "done.json";
  bool have = false;
  if (reuse && std::filesystem::exists(done)) {
    std::ifstream in(done);
    const json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("config_hash", "") == cfg.hash() &&
        j.value("manifest_sha256", "") == sha256_file(manifest.root / "manifest.jsonl")) {
      out.epochs = j.value("epochs", 0);
      out.best_val = j.value("best_val", 0.0);
      out.reused = have = true;
      spdlog::info("reusing finished run {}", dir.string());
    }
  }
  if (!have) {
    const train::TrainResult r = train::train(cfg, manifest, dir);
    out.epochs = r.state.epoch;
    out.best_val = r.state.best_val;
    std::ofstream o(done);
    o << json{{"config_hash", cfg.hash()},
              {"manifest_sha256", sha256_file(manifest.root / "manifest.jsonl")},
              {"epochs", out.epochs},
              {"best_val", out.best_val},
              {"early_stopped", r.early_stopped}}
             .dump(2)
      << '\n';
  }
  train::LoadedCheckpoint ck = train::load_checkpoint(dir / "checkpoint");
  out.test = train::evaluate(*ck.model, synth::SplitData(manifest, synth::Split::kTest));
  return out;
}

void AblationTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out = open_out(path);
  out << "variant,seed,dice,miou,epochs\n";
  for (const auto& r : rows) out << r.variant << ',' << r.seed << ',' << r.dice << ',' << r.miou << ',' << r.epochs << '\n';
}

json AblationTable::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"variant", r.variant}, {"seed", r.seed}, {"dice", r.dice}, {"miou", r.miou}, {"epochs", r.epochs}});
  }
  json sum = json::object();
  for (const auto& [name, s] : summary) {
    sum[name] = {{"dice_mean", s.dice_mean}, {"dice_std", s.dice_std}, {"miou_mean", s.miou_mean}, {"miou_std", s.miou_std}};
  }
  json t = json::object();
  for (const auto& [name, r] : tests) t[name] = r.to_json();
  return json{{"rows", rows_j}, {"summary", sum}, {"tests", t}};
}

AblationTable run_ablation(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest,
                           const std::vector<std::string>& variants, const std::vector<std::int64_t>& seeds,
                           const std::filesystem::path& out_dir, bool reuse) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablation needs at least one variant and one seed");
  for (const auto& v : variants) variant_config(cfg, v);
  AblationTable table;
  std::map<std::string, std::vector<double>> dice_by_variant, miou_by_variant;
  for (const auto& variant : variants) {
    std::map<std::string, double> sample_sum;
    for (std::int64_t seed : seeds) {
      ExperimentConfig vc = variant_config(cfg, variant);
      vc.seed = seed;
      std::string dir_name = variant;
      std::replace(dir_name.begin(), dir_name.end(), '+', '_');
      const RunOutcome run = train_and_test(vc, manifest, out_dir / (dir_name + "_seed" + std::to_string(seed)), reuse);
      table.rows.push_back({variant, seed, run.test.mean_dice, run.test.mean_miou, run.epochs});
      dice_by_variant[variant].push_back(run.test.mean_dice);
      miou_by_variant[variant].push_back(run.test.mean_miou);
      for (std::size_t i = 0; i < run.test.ids.size(); ++i) sample_sum[run.test.ids[i]] += run.test.dice[i];
    }
    VariantSummary s;
    std::tie(s.dice_mean, s.dice_std) = mean_std(dice_by_variant[variant]);
    std::tie(s.miou_mean, s.miou_std) = mean_std(miou_by_variant[variant]);
    for (const auto& [id, v] : sample_sum) s.per_sample_dice[id] = v / static_cast<double>(seeds.size());
    table.summary[variant] = s;
  }
  if (table.summary.count("base")) {
    const auto& base = table.summary.at("base").per_sample_dice;
    for (const auto& [variant, s] : table.summary) {
      if (variant == "base") continue;
      std::vector<double> a, b;
      for (const auto& [id, v] : s.per_sample_dice) {
        a.push_back(v);
        b.push_back(base.at(id));
      }
      if (a.size() >= 2) table.tests[variant + "_vs_base"] = paired_t_test(a, b);
    }
  }
  table.write_csv(out_dir / "ablation.csv");
  std::ofstream(out_dir / "ttest.json") << json(table.to_json()["tests"]).dump(2) << '\n';
  return table;
}

void SweepTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out = open_out(path);
  out << param << ",dice,miou,best\n";
  for (const auto& r : rows) out << r.value << ',' << r.dice << ',' << r.miou << ',' << (r.best ? 1 : 0) << '\n';
}

json SweepTable::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) rows_j.push_back({{"value", r.value}, {"dice", r.dice}, {"miou", r.miou}, {"best", r.best}});
  return json{{"param", param}, {"rows", rows_j}};
}

SweepTable run_sweep(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest, const std::string& param,
                     const std::vector<double>& values, const std::filesystem::path& out_dir, bool reuse) {
  if (param != "lambda1" && param != "lambda3") throw ConfigError("sweep parameter must be lambda1 or lambda3");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepTable table;
  table.param = param;
  for (double v : values) {
    if (!(v >= 0.0)) throw ConfigError(param + " values must be >= 0, got " + std::to_string(v));
    ExperimentConfig c = cfg;
    (param == "lambda1" ? c.lambda1 : c.lambda3) = v;
    std::ostringstream name;
    name << param << '_' << v;
    const RunOutcome run = train_and_test(c, manifest, out_dir / name.str(), reuse);
    table.rows.push_back({v, run.test.mean_dice, run.test.mean_miou, false});
  }
  auto best = std::max_element(table.rows.begin(), table.rows.end(),
                               [](const SweepRow& a, const SweepRow& b) { return a.dice < b.dice; });
  best->best = true;
  table.write_csv(out_dir / ("sweep_" + param + ".csv"));
  return table;
}

ParaphraseTable default_paraphrases(const std::vector<synth::SampleRecord>& records) {
  ParaphraseTable table;
  for (const auto& r : records) {
    const auto& a = r.attributes;
    auto& styles = table[r.prompt];
    styles["reordered"] = "number " + synth::count_word(a.count) + "; size " + synth::to_string(a.size) + "; shape " +
                          synth::to_string(a.shape) + "; location " + synth::to_string(a.location) + ".";
    styles["paraphrase"] = lower_first_phrase(a);
  }
  return table;
}

void RobustnessReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out = open_out(path);
  out << "style,dice,delta,unk_fraction\n";
  for (const auto& r : rows) out << r.style << ',' << r.dice << ',' << r.delta << ',' << r.unk_fraction << '\n';
}

json RobustnessReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"style", r.style}, {"dice", r.dice}, {"delta", r.delta}, {"unk_fraction", r.unk_fraction}});
  }
  return json{{"rows", rows_j}};
}

RobustnessReport prompt_robustness_eval(TextBcsModel& model, const synth::SplitData& data,
                                        const ParaphraseTable& paraphrases) {
  std::set<std::string> styles;
  for (const auto& s : data.samples()) {
    auto it = paraphrases.find(s.prompt);
    if (it == paraphrases.end()) throw DataError("no paraphrase for prompt \"" + s.prompt + "\"");
    for (const auto& [style, text] : it->second) styles.insert(style);
  }
  const int c = model.config().num_classes;
  const int length = model.config().token_length;
  RobustnessReport report;
  std::vector<std::string> order = {"canonical"};
  order.insert(order.end(), styles.begin(), styles.end());
  for (const std::string& style : order) {
    metrics::MetricReport m;
    long valid = 0, unk = 0;
    for (std::size_t start = 0; start < data.size(); start += 8) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(data.size(), start + 8); ++i) idx.push_back(i);
      synth::Batch b = data.batch_of(idx);
      for (std::string& prompt : b.prompts) {
        if (style == "canonical") continue;
        const auto& variants = paraphrases.at(prompt);
        auto it = variants.find(style);
        if (it == variants.end()) throw DataError("paraphrase style \"" + style + "\" missing for \"" + prompt + "\"");
        prompt = it->second;
      }
      for (const std::string& prompt : b.prompts) {
        const text::TokenizedPrompt tp = text::tokenize(prompt, length, model.vocab());
        for (int t = 0; t < length; ++t) {
          valid += tp.valid[t];
          unk += tp.valid[t] && tp.ids[t] == text::kUnk;
        }
      }
      const train::BatchPrediction pred = train::predict_batch(model, b.images, b.prompts);
      const std::size_t plane = b.masks.pixels();
      for (std::size_t i = 0; i < b.ids.size(); ++i) {
        const std::span<const int> p(pred.labels.data.data() + i * plane, plane);
        const std::span<const int> g(b.masks.data.data() + i * plane, plane);
        m.add(b.ids[i], metrics::dice_metric(p, g, c), metrics::miou_metric(p, g, c));
      }
    }
    m.finalize();
    RobustnessRow row{style, m.mean_dice, 0.0, valid ? static_cast<double>(unk) / valid : 0.0};
    if (!report.rows.empty()) row.delta = row.dice - report.rows.front().dice;
    report.rows.push_back(row);
  }
  return report;
}

void BoundaryStats::write_histogram_csv(const std::filesystem::path& path) const {
  std::ofstream out = open_out(path);
  out << "bin_low,bin_high,band,interior,background\n";
  for (std::size_t i = 0; i + 1 < histogram_edges.size(); ++i) {
    out << histogram_edges[i] << ',' << histogram_edges[i + 1] << ',' << histogram_band[i] << ','
        << histogram_interior[i] << ',' << histogram_background[i] << '\n';
  }
}

json BoundaryStats::to_json() const {
  return json{{"mean_band", mean_band},
              {"mean_interior", mean_interior},
              {"mean_background", mean_background},
              {"images", ids.size()},
              {"skipped", skipped},
              {"test", test.to_json()}};
}

BoundaryStats uncertainty_boundary_stats(TextBcsModel& model, const synth::SplitData& data, int bins) {
  if (!model.config().use_el) throw std::invalid_argument("uncertainty statistics need the evidential head");
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  BoundaryStats st;
  st.histogram_edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i) st.histogram_edges[i] = static_cast<double>(i) / bins;
  st.histogram_band.assign(bins, 0);
  st.histogram_interior.assign(bins, 0);
  st.histogram_background.assign(bins, 0);
  auto bin_of = [bins](double u) { return std::clamp(static_cast<int>(u * bins), 0, bins - 1); };
  double bg_sum = 0.0;
  long bg_count = 0;
  for (const synth::Batch& b : data.batches(8, nullptr)) {
    const train::BatchPrediction pred = train::predict_batch(model, b.images, b.prompts);
    const int size = b.masks.width;
    const int r = boundary_radius(size);
    const std::size_t plane = b.masks.pixels();
    for (std::size_t i = 0; i < b.ids.size(); ++i) {
      std::vector<int> mask(b.masks.data.begin() + i * plane, b.masks.data.begin() + (i + 1) * plane);
      for (int& v : mask) v = v != 0;
      const std::vector<int> outer = dilate(mask, size, r);
      const std::vector<int> inner = erode(mask, size, r);
      const double* u = pred.uncertainty.data() + i * plane;
      double band = 0.0, interior = 0.0;
      long nb = 0, ni = 0;
      for (std::size_t p = 0; p < plane; ++p) {
        if (inner[p]) {
          interior += u[p], ++ni;
          ++st.histogram_interior[bin_of(u[p])];
        } else if (outer[p]) {
          band += u[p], ++nb;
          ++st.histogram_band[bin_of(u[p])];
        } else {
          bg_sum += u[p], ++bg_count;
          ++st.histogram_background[bin_of(u[p])];
        }
      }
      if (nb == 0 || ni == 0) {
        ++st.skipped;
        continue;
      }
      st.ids.push_back(b.ids[i]);
      st.band_per_image.push_back(band / nb);
      st.interior_per_image.push_back(interior / ni);
    }
  }
  st.mean_band = mean_std(st.band_per_image).first;
  st.mean_interior = mean_std(st.interior_per_image).first;
  st.mean_background = bg_count ? bg_sum / bg_count : 0.0;
  if (st.ids.size() >= 2) st.test = paired_t_test(st.band_per_image, st.interior_per_image, Alternative::kGreater);
  return st;
}

}  // namespace textbcs::evalkit
