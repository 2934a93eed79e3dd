#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "textbcs/errors.hpp"
#include "textbcs/evalkit.hpp"
#include "textbcs/hash.hpp"
#include "textbcs/image_io.hpp"
#include "textbcs/trainer.hpp"

using namespace textbcs;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kAbort = 4 };

struct Common {
  bool json_out = false;
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  cmd->add_flag("--json", c.json_out, "Print a machine-readable summary to stdout");
  if (with_config) {
    cmd->add_option("--config", c.config, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Config override key=value (repeatable)");
  }
}

ExperimentConfig build_config(const Common& c, std::map<std::string, std::string> extra = {}) {
  std::map<std::string, std::string> overrides;
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (auto& [k, v] : extra) overrides[k] = v;
  return c.config.empty() ? config_from_overrides(overrides) : load_config(c.config, overrides);
}

void emit(const Common& c, const json& summary) {
  if (c.json_out) std::cout << summary.dump(2) << std::endl;
}

template <typename T>
std::vector<T> split_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      try {
        out.push_back(static_cast<T>(std::stod(item)));
      } catch (const std::exception&) {
        throw ConfigError("cannot parse list entry \"" + item + "\"");
      }
    }
  }
  return out;
}

synth::Split split_arg(const std::string& s) {
  try {
    return synth::parse_split(s);
  } catch (const DataError&) {
    throw ConfigError("--split must be train, val or test");
  }
}

std::vector<double> to_unit(const GrayImage& img) {
  std::vector<double> v;
  for (std::uint8_t p : img.pixels) v.push_back(p / 255.0);
  return v;
}

// Uncertainty map for a prediction: C/S with the evidential head, otherwise
// 1 - max probability rescaled to [0,1].
evalkit::Heatmap uncertainty_map(const train::BatchPrediction& pred, int sample) {
  const int c = pred.probs.dim(1), h = pred.probs.dim(2), w = pred.probs.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  evalkit::Heatmap m{w, h, std::vector<double>(plane), false};
  for (std::size_t p = 0; p < plane; ++p) {
    if (!pred.uncertainty.empty()) {
      m.values[p] = pred.uncertainty[sample * plane + p];
    } else {
      double mx = 0.0;
      for (int k = 0; k < c; ++k) mx = std::max(mx, pred.probs[(static_cast<std::size_t>(sample) * c + k) * plane + p]);
      m.values[p] = (1.0 - mx) * c / (c - 1.0);
    }
  }
  return m;
}

std::vector<int> sample_labels(const LabelMap& labels, int i) {
  const std::size_t plane = labels.pixels();
  return {labels.data.begin() + i * plane, labels.data.begin() + (i + 1) * plane};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("textbcs"));
  spdlog::set_pattern("[%H:%M:%S] %v");
  if (const char* lvl = std::getenv("TEXTBCS_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"Text-guided evidential lesion segmentation on a synthetic benchmark"};
  app.require_subcommand(1);
  app.set_version_flag("--version", train::kCodeVersion);

  // gen-data
  Common gen_c;
  std::string gen_out;
  int n_groups = 100, per_group = 4, size = 0;
  std::int64_t gen_seed = -1;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark (images/, masks/, manifest.jsonl)");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n-groups", n_groups, "Number of virtual patients (>= 10)");
  gen->add_option("--samples-per-group", per_group, "Slices per virtual patient");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--size", size, "Image side in pixels");

  // train
  Common tr_c;
  std::string tr_data, tr_out;
  std::int64_t tr_seed = -1;
  auto* tr = app.add_subcommand("train", "Train a model and keep the best checkpoint");
  add_common(tr, tr_c);
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--seed", tr_seed, "Training seed");

  // eval
  Common ev_c;
  std::string ev_ckpt, ev_data, ev_split = "test", ev_report;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (Dice / mIoU)");
  add_common(ev, ev_c, false);
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train, val or test");
  ev->add_option("--report", ev_report, "Write the JSON metric report here");

  // predict
  Common pr_c;
  std::string pr_ckpt, pr_image, pr_prompt, pr_out = ".";
  auto* pr = app.add_subcommand("predict", "Segment one image given a prompt; writes overlay.png and uncertainty.png");
  add_common(pr, pr_c, false);
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint directory")->required();
  pr->add_option("--image", pr_image, "8-bit grayscale PNG")->required();
  pr->add_option("--prompt", pr_prompt, "Text prompt, e.g. \"location left; shape round; size small; number one.\"")
      ->required();
  pr->add_option("--out", pr_out, "Output directory");

  // ablate
  Common ab_c;
  std::string ab_data, ab_out, ab_variants = "base,base+svli,base+el,full", ab_seeds = "1,2,3";
  bool ab_fresh = false;
  auto* ab = app.add_subcommand("ablate", "Train and compare ablation variants over seeds");
  add_common(ab, ab_c);
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--variants", ab_variants, "Comma list of base, base+svli, base+el, full");
  ab->add_option("--seeds", ab_seeds, "Comma list of seeds");
  ab->add_flag("--fresh", ab_fresh, "Retrain even when a finished run with the same config exists");

  // sweep
  Common sw_c;
  std::string sw_data, sw_out, sw_param = "lambda1", sw_values = "1.0,0.1,0.01,0.001";
  bool sw_fresh = false;
  auto* sw = app.add_subcommand("sweep", "One training run per loss-weight value");
  add_common(sw, sw_c);
  sw->add_option("--data", sw_data, "Dataset directory")->required();
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--param", sw_param, "lambda1 or lambda3");
  sw->add_option("--values", sw_values, "Comma list of values");
  sw->add_flag("--fresh", sw_fresh, "Retrain even when a finished run exists");

  // visualize
  Common vi_c;
  std::string vi_ckpt, vi_data, vi_out, vi_split = "test", vi_compare;
  int vi_count = 4;
  bool vi_robust = false, vi_boundary = false;
  auto* vi = app.add_subcommand("visualize", "Overlays, uncertainty maps and stage saliency heatmaps");
  add_common(vi, vi_c, false);
  vi->add_option("--ckpt", vi_ckpt, "Checkpoint directory")->required();
  vi->add_option("--data", vi_data, "Dataset directory")->required();
  vi->add_option("--out", vi_out, "Figure directory")->required();
  vi->add_option("--split", vi_split, "train, val or test");
  vi->add_option("--count", vi_count, "Number of samples to render");
  vi->add_option("--compare-ckpt", vi_compare, "Second checkpoint; reports per-stage saliency distances");
  vi->add_flag("--robustness", vi_robust, "Also run the prompt-robustness evaluation (robustness.csv)");
  vi->add_flag("--boundary", vi_boundary, "Also report boundary vs interior uncertainty (uncertainty_hist.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      std::map<std::string, std::string> extra;
      if (gen_seed >= 0) extra["seed"] = std::to_string(gen_seed);
      if (gen_seed < -1) throw ConfigError("--seed must be >= 0");
      if (size > 0) extra["image_size"] = std::to_string(size);
      const ExperimentConfig cfg = build_config(gen_c, extra);
      const synth::DatasetManifest m = synth::generate_dataset(cfg, n_groups, per_group, gen_out);
      const fs::path manifest = fs::path(gen_out) / "manifest.jsonl";
      const json summary{{"manifest", manifest.string()},
                         {"manifest_sha256", sha256_file(manifest)},
                         {"samples", m.records.size()},
                         {"split", {{"train", m.split(synth::Split::kTrain).size()},
                                    {"val", m.split(synth::Split::kVal).size()},
                                    {"test", m.split(synth::Split::kTest).size()}}}};
      if (!gen_c.json_out) {
        std::cout << manifest.string() << "\n"
                  << "train " << summary["split"]["train"] << " / val " << summary["split"]["val"] << " / test "
                  << summary["split"]["test"] << "\nsha256 " << summary["manifest_sha256"].get<std::string>() << "\n";
      }
      emit(gen_c, summary);
    } else if (*tr) {
      std::map<std::string, std::string> extra;
      if (tr_seed >= 0) extra["seed"] = std::to_string(tr_seed);
      const ExperimentConfig cfg = build_config(tr_c, extra);
      const train::TrainResult r = train::train(cfg, synth::load_manifest(tr_data), tr_out);
      emit(tr_c, {{"checkpoint", r.checkpoint.string()},
                  {"history", r.history.string()},
                  {"epochs", r.state.epoch},
                  {"best_val_dice", r.state.best_val},
                  {"best_epoch", r.state.best_epoch},
                  {"early_stopped", r.early_stopped}});
    } else if (*ev) {
      train::LoadedCheckpoint ck = train::load_checkpoint(ev_ckpt);
      const synth::SplitData data(synth::load_manifest(ev_data), split_arg(ev_split));
      const metrics::MetricReport rep = train::evaluate(*ck.model, data);
      json j = rep.to_json(!ev_report.empty());
      j["split"] = ev_split;
      if (!ev_report.empty()) std::ofstream(ev_report) << j.dump(2) << '\n';
      if (!ev_c.json_out) std::cout << "dice " << rep.mean_dice << "  miou " << rep.mean_miou << "\n";
      j.erase("samples");
      emit(ev_c, j);
    } else if (*pr) {
      if (pr_prompt.find_first_not_of(" \t") == std::string::npos) throw ConfigError("--prompt must not be empty");
      train::LoadedCheckpoint ck = train::load_checkpoint(pr_ckpt);
      const GrayImage img = read_png_gray(pr_image);
      const int s = ck.cfg.image_size;
      if (img.width != s || img.height != s) {
        throw DataError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        ", the checkpoint expects " + std::to_string(s) + "x" + std::to_string(s));
      }
      Tensor images({1, 1, s, s}, to_unit(img));
      const train::BatchPrediction pred = train::predict_batch(*ck.model, images, {pr_prompt});
      fs::create_directories(pr_out);
      const std::vector<int> labels = sample_labels(pred.labels, 0);
      write_png(fs::path(pr_out) / "overlay.png", evalkit::overlay(images.to_vector(), s, {}, labels));
      write_png(fs::path(pr_out) / "uncertainty.png", evalkit::colorize(uncertainty_map(pred, 0)));
      GrayImage mask{s, s, {}};
      long fg = 0;
      for (int v : labels) {
        mask.pixels.push_back(static_cast<std::uint8_t>(v));
        fg += v != 0;
      }
      write_png(fs::path(pr_out) / "mask.png", mask);
      emit(pr_c, {{"overlay", (fs::path(pr_out) / "overlay.png").string()},
                  {"uncertainty", (fs::path(pr_out) / "uncertainty.png").string()},
                  {"mask", (fs::path(pr_out) / "mask.png").string()},
                  {"foreground_pixels", fg}});
    } else if (*ab) {
      const ExperimentConfig cfg = build_config(ab_c);
      const auto seeds = split_list<std::int64_t>(ab_seeds);
      const evalkit::AblationTable t = evalkit::run_ablation(cfg, synth::load_manifest(ab_data),
                                                              split_list<std::string>(ab_variants), seeds, ab_out,
                                                              !ab_fresh);
      json j = t.to_json();
      j["csv"] = (fs::path(ab_out) / "ablation.csv").string();
      j["ttest"] = (fs::path(ab_out) / "ttest.json").string();
      if (!ab_c.json_out) {
        for (const auto& [v, s] : t.summary) std::cout << v << ": dice " << s.dice_mean << " +- " << s.dice_std << "\n";
      }
      emit(ab_c, j);
    } else if (*sw) {
      const ExperimentConfig cfg = build_config(sw_c);
      const evalkit::SweepTable t =
          evalkit::run_sweep(cfg, synth::load_manifest(sw_data), sw_param, split_list<double>(sw_values), sw_out, !sw_fresh);
      json j = t.to_json();
      j["csv"] = (fs::path(sw_out) / ("sweep_" + sw_param + ".csv")).string();
      if (!sw_c.json_out) {
        for (const auto& r : t.rows) std::cout << sw_param << "=" << r.value << " dice " << r.dice << (r.best ? " *" : "") << "\n";
      }
      emit(sw_c, j);
    } else if (*vi) {
      train::LoadedCheckpoint ck = train::load_checkpoint(vi_ckpt);
      std::unique_ptr<TextBcsModel> other;
      if (!vi_compare.empty()) other = std::move(train::load_checkpoint(vi_compare).model);
      const synth::DatasetManifest manifest = synth::load_manifest(vi_data);
      const synth::SplitData data(manifest, split_arg(vi_split));
      const fs::path out(vi_out);
      fs::create_directories(out);
      const int count = std::min<int>(std::max(vi_count, 0), static_cast<int>(data.size()));
      json written = json::array();
      std::vector<double> distance(ck.cfg.num_stages, 0.0);
      for (int i = 0; i < count; ++i) {
        const synth::Batch b = data.batch_of({static_cast<std::size_t>(i)});
        const train::BatchPrediction pred = train::predict_batch(*ck.model, b.images, b.prompts);
        const int s = b.masks.width;
        const std::string id = b.ids[0];
        const std::vector<double> image(b.images.values().begin(), b.images.values().end());
        write_png(out / (id + "_overlay.png"), evalkit::overlay(image, s, sample_labels(b.masks, 0), sample_labels(pred.labels, 0)));
        write_png(out / (id + "_uncertainty.png"), evalkit::colorize(uncertainty_map(pred, 0)));
        written.push_back((out / (id + "_overlay.png")).string());
        const auto maps = evalkit::saliency_maps(pred.forward, 0, s);
        for (std::size_t st = 0; st < maps.size(); ++st) {
          write_png(out / (id + "_stage" + std::to_string(st + 1) + "_saliency.png"), evalkit::heat_overlay(image, s, maps[st]));
        }
        if (other) {
          const auto other_maps = evalkit::saliency_maps(train::predict_batch(*other, b.images, b.prompts).forward, 0, s);
          for (std::size_t st = 0; st < maps.size() && st < other_maps.size(); ++st) {
            double sq = 0.0;
            for (std::size_t p = 0; p < maps[st].values.size(); ++p) {
              const double d = maps[st].values[p] - other_maps[st].values[p];
              sq += d * d;
            }
            distance[st] += std::sqrt(sq) / count;
          }
        }
      }
      json j{{"figures", out.string()}, {"samples", count}, {"overlays", written}};
      if (other) j["saliency_l2_by_stage"] = distance;
      if (vi_robust) {
        const auto rep = evalkit::prompt_robustness_eval(*ck.model, data, evalkit::default_paraphrases(manifest.records));
        rep.write_csv(out / "robustness.csv");
        j["robustness"] = rep.to_json();
      }
      if (vi_boundary) {
        const auto st = evalkit::uncertainty_boundary_stats(*ck.model, data);
        st.write_histogram_csv(out / "uncertainty_hist.csv");
        j["boundary"] = st.to_json();
      }
      if (!vi_c.json_out) std::cout << "wrote figures for " << count << " samples to " << out.string() << "\n";
      emit(vi_c, j);
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kData;
  } catch (const TrainingAborted& e) {
    spdlog::error("training aborted: {}", e.what());
    return kAbort;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
