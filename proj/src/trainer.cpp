#include "textbcs/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "textbcs/errors.hpp"
#include "textbcs/evidential.hpp"
#include "textbcs/svli.hpp"
#include "textbcs/text.hpp"

namespace textbcs::train {

using nlohmann::json;

namespace {

// Per-pixel argmax over classes; ties go to the lower class index.
LabelMap argmax_labels(const Tensor& probs) {
  const int n = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  LabelMap out(n, h, w);
  for (int i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int k = 1; k < c; ++k) {
        if (probs[(static_cast<std::size_t>(i) * c + k) * plane + p] > probs[(static_cast<std::size_t>(i) * c + best) * plane + p]) {
          best = k;
        }
      }
      out.data[i * plane + p] = best;
    }
  }
  return out;
}

objective::LossReport mean_report(const std::vector<objective::LossReport>& reports, const std::vector<int>& weights) {
  objective::LossReport m;
  double total_w = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const double w = weights[i];
    const auto& r = reports[i];
    m.dice += w * r.dice;
    m.ice += w * r.ice;
    m.ce += w * r.ce;
    m.kl += w * r.kl;
    m.con += w * r.con;
    m.total += w * r.total;
    m.lambda1 = r.lambda1;
    m.lambda2 = r.lambda2;
    m.lambda3 = r.lambda3;
    total_w += w;
  }
  if (total_w > 0) {
    m.dice /= total_w;
    m.ice /= total_w;
    m.ce /= total_w;
    m.kl /= total_w;
    m.con /= total_w;
    m.total /= total_w;
  }
  return m;
}

void append_line(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << j.dump() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

json EpochRecord::to_json() const {
  return json{{"epoch", epoch},
              {"lr", lr},
              {"lambda2", train.lambda2},
              {"train", train.to_json()},
              {"val", val.to_json()},
              {"val_dice", val_dice},
              {"val_miou", val_miou},
              {"clipped_steps", clipped_steps},
              {"improved", improved},
              {"seconds", seconds}};
}

TrainState TrainState::initial(const ExperimentConfig& cfg) {
  TrainState s;
  s.lr = cfg.init_lr;
  return s;
}

json TrainState::to_json(bool with_history) const {
  json j{{"epoch", epoch},
         {"lr", lr},
         {"best_val", std::isfinite(best_val) ? json(best_val) : json(nullptr)},
         {"best_epoch", best_epoch},
         {"epochs_since_improve", epochs_since_improve},
         {"plateau_count", plateau_count},
         {"rng_digest", rng_digest}};
  if (with_history) {
    json h = json::array();
    for (const auto& r : history) h.push_back(r.to_json());
    j["history"] = h;
  }
  return j;
}

double lr_on_plateau(TrainState& state, double current_val, const ExperimentConfig& cfg) {
  if (current_val > state.best_val + cfg.min_delta) {
    state.best_val = current_val;
    state.best_epoch = state.epoch;
    state.epochs_since_improve = 0;
    state.plateau_count = 0;
  } else {
    ++state.epochs_since_improve;
    if (++state.plateau_count >= cfg.lr_patience) {
      state.lr *= cfg.lr_factor;
      state.plateau_count = 0;
    }
  }
  return state.lr;
}

bool early_stop(const TrainState& state, const ExperimentConfig& cfg) {
  return state.epochs_since_improve >= cfg.early_stop_patience;
}

BatchPrediction predict_batch(TextBcsModel& model, const Tensor& images, const std::vector<std::string>& prompts) {
  const ExperimentConfig& cfg = model.config();
  ag::NoGradGuard no_grad;
  const text::TokenBatch tokens = text::tokenize_batch(prompts, cfg.token_length, model.vocab());
  BatchPrediction out;
  out.forward = model.forward(images, tokens, false);
  const Tensor& logits = out.forward.logits->value;
  if (cfg.use_el) {
    const evidential::EvidentialOutput ev = evidential::dirichlet_stats(evidential::evidence_from_logits(logits));
    const evidential::Prediction pred = evidential::predict(ev);
    out.labels = pred.labels;
    out.probs = ev.expected_prob;
    out.uncertainty = ev.uncertainty;
  } else {
    out.probs = objective::softmax(logits);
    out.labels = argmax_labels(out.probs);
  }
  return out;
}

metrics::MetricReport evaluate(TextBcsModel& model, const synth::SplitData& data, int batch_size) {
  metrics::MetricReport report;
  const int c = model.config().num_classes;
  for (const synth::Batch& b : data.batches(batch_size, nullptr)) {
    const BatchPrediction pred = predict_batch(model, b.images, b.prompts);
    const std::size_t plane = b.masks.pixels();
    for (std::size_t i = 0; i < b.ids.size(); ++i) {
      const std::span<const int> p(pred.labels.data.data() + i * plane, plane);
      const std::span<const int> g(b.masks.data.data() + i * plane, plane);
      report.add(b.ids[i], metrics::dice_metric(p, g, c), metrics::miou_metric(p, g, c));
    }
  }
  report.finalize();
  return report;
}

objective::LossReport batch_loss(TextBcsModel& model, const synth::Batch& batch, int epoch, Rng& rng, bool training,
                                 bool backprop) {
  const ExperimentConfig& cfg = model.config();
  std::optional<ag::NoGradGuard> no_grad;
  if (!backprop) no_grad.emplace();
  const text::TokenBatch tokens = text::tokenize_batch(batch.prompts, cfg.token_length, model.vocab());
  const ForwardResult fwd = model.forward(batch.images, tokens, training);
  const Tensor& logits = fwd.logits->value;

  double ice = 0.0, kl = 0.0, ce = 0.0, con = 0.0;
  Tensor dlogits_aux(logits.shape());  // d(ice or ce)/dlogits
  Tensor dlogits_kl;
  Tensor probs;
  if (cfg.use_el) {
    const auto ice_lg = evidential::ice_loss_from_logits(logits, batch.masks);
    const auto kl_lg = evidential::kl_from_logits(logits, batch.masks);
    ice = ice_lg.value;
    kl = kl_lg.value;
    dlogits_aux = ice_lg.grad;
    dlogits_kl = kl_lg.grad;
    probs = evidential::expected_probability(logits);
  } else {
    const auto ce_lg = objective::cross_entropy_from_logits(logits, batch.masks);
    ce = ce_lg.value;
    dlogits_aux = ce_lg.grad;
    probs = objective::softmax(logits);
  }
  const auto dice = objective::dice_loss(probs, batch.masks);

  svli::AlignmentLoss align;
  if (cfg.use_svli) {
    std::vector<svli::StageAlignmentInput> inputs;
    for (std::size_t s = 0; s < fwd.interaction.size(); ++s) {
      const LabelMap stage_labels = svli::downsample_nearest(batch.masks, 1 << s);
      svli::StageAlignmentInput in;
      in.vision = &fwd.interaction[s].vision_align->value;
      in.text = &fwd.interaction[s].text_align->value;
      in.text_valid = &tokens.valid;
      in.pixels = svli::sample_alignment_pixels(stage_labels, cfg.negative_ratio, rng);
      in.log_tau = model.stages()[s].log_tau->value[0];
      inputs.push_back(std::move(in));
    }
    align = svli::contrastive_loss(inputs, cfg.alignment_norm);
    con = align.value;
  }

  objective::LossReport report;
  try {
    report = objective::total_loss(dice.value, ice, kl, con, epoch, cfg, ce);
  } catch (const std::domain_error& e) {
    throw TrainingAborted(e.what());
  }
  if (!backprop) return report;

  Tensor dlogits = cfg.use_el ? evidential::expected_probability_backward(logits, dice.grad)
                              : objective::softmax_backward(probs, dice.grad);
  dlogits.add_(dlogits_aux, report.lambda1);
  if (cfg.use_el && report.lambda2 != 0.0) dlogits.add_(dlogits_kl, report.lambda2);
  std::vector<std::pair<ag::Var, Tensor>> seeds;
  seeds.emplace_back(fwd.logits, std::move(dlogits));
  if (cfg.use_svli && report.lambda3 != 0.0) {
    for (std::size_t s = 0; s < fwd.interaction.size(); ++s) {
      svli::StageAlignmentGrad& g = align.grads[s];
      g.vision.scale_(report.lambda3);
      g.text.scale_(report.lambda3);
      seeds.emplace_back(fwd.interaction[s].vision_align, std::move(g.vision));
      seeds.emplace_back(fwd.interaction[s].text_align, std::move(g.text));
      seeds.emplace_back(model.stages()[s].log_tau, Tensor({1}, report.lambda3 * g.log_tau));
    }
  }
  ag::backward(seeds);
  return report;
}

void save_weights(TextBcsModel& model, const std::filesystem::path& path) {
  const nn::StateRefs refs = model.state();
  std::vector<std::pair<std::string, const Tensor*>> items;
  for (const auto& [name, p] : refs.params) items.emplace_back(name, &p->value);
  for (const auto& [name, t] : refs.buffers) items.emplace_back(name, t);
  save_tensors(path, items);
}

void load_weights(TextBcsModel& model, const std::filesystem::path& path) {
  const auto items = load_tensors(path);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : items) by_name[name] = &t;
  const nn::StateRefs refs = model.state();
  auto assign = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + name);
    if (!it->second->same_shape(dst)) {
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                      shape_str(dst.shape()));
    }
    dst = *it->second;
  };
  for (const auto& [name, p] : refs.params) assign(name, p->value);
  for (const auto& [name, t] : refs.buffers) assign(name, *t);
  if (by_name.size() != refs.params.size() + refs.buffers.size()) {
    throw DataError("checkpoint holds tensors the model does not have");
  }
}

void save_checkpoint(const std::filesystem::path& dir, TextBcsModel& model, const Adam* optimizer,
                     const TrainState& state, const json& extra) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  // Write to temporaries first so an interrupted save never clobbers the last good checkpoint.
  const auto tmp = [&](const char* name) { return dir / (std::string(name) + ".tmp"); };
  save_weights(model, tmp("weights.bin"));
  if (optimizer) optimizer->save(tmp("optimizer.bin"));
  save_config(model.config(), tmp("config.json"));
  model.vocab().save(tmp("vocab.json"));
  json meta{{"code_version", kCodeVersion},
            {"config_hash", model.config().hash()},
            {"epoch", state.epoch},
            {"best_epoch", state.best_epoch},
            {"val_dice", std::isfinite(state.best_val) ? json(state.best_val) : json(nullptr)},
            {"parameter_count", model.parameter_count()},
            {"train_state", state.to_json()},
            {"optimizer", optimizer ? optimizer->settings() : json(nullptr)}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  {
    std::ofstream out(tmp("meta.json"));
    if (!out) throw DataError("cannot write checkpoint metadata in " + dir.string());
    out << meta.dump(2) << '\n';
  }
  for (const char* name : {"weights.bin", "optimizer.bin", "config.json", "vocab.json", "meta.json"}) {
    if (std::filesystem::exists(tmp(name))) std::filesystem::rename(tmp(name), dir / name);
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  for (const char* name : {"weights.bin", "config.json", "meta.json", "vocab.json"}) {
    if (!std::filesystem::exists(dir / name)) throw DataError("checkpoint " + dir.string() + " lacks " + name);
  }
  LoadedCheckpoint ck;
  ck.cfg = load_config(dir / "config.json");
  std::ifstream meta_in(dir / "meta.json");
  std::ifstream vocab_in(dir / "vocab.json");
  try {
    ck.meta = json::parse(meta_in);
    const text::Vocabulary vocab = text::Vocabulary::from_json(json::parse(vocab_in));
    if (vocab.to_json() != text::Vocabulary::prompt_vocabulary().to_json()) {
      throw DataError("checkpoint vocabulary differs from the prompt vocabulary");
    }
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint metadata: " + std::string(e.what()));
  }
  Rng init = seed_all(ck.cfg.seed).derive("init");
  ck.model = std::make_unique<TextBcsModel>(ck.cfg, init);
  load_weights(*ck.model, dir / "weights.bin");
  return ck;
}

TrainResult train(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest,
                  const std::filesystem::path& out_dir, const TrainOptions& options) {
  cfg.validate();
  const synth::SplitData train_data(manifest, synth::Split::kTrain);
  const synth::SplitData val_data(manifest, synth::Split::kVal);
  const RunManifest run = make_run_manifest(cfg, out_dir);

  const Rng root = seed_all(cfg.seed);
  Rng init_rng = root.derive("init");
  TextBcsModel model(cfg, init_rng);
  Rng shuffle_rng = root.derive("shuffle");
  Rng align_rng = root.derive("alignment");
  const nn::StateRefs refs = model.state();
  Adam adam(refs.params);

  TrainResult result;
  result.checkpoint = run.checkpoints;
  result.history = run.metrics;
  std::filesystem::remove(run.metrics);
  TrainState& state = result.state;
  state = TrainState::initial(cfg);
  spdlog::info("training {} parameters ({} train / {} val samples), config {}", model.parameter_count(),
               train_data.size(), val_data.size(), cfg.hash().substr(0, 12));

  for (int e = 0; e < cfg.max_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.lr = state.lr;
    std::vector<objective::LossReport> reports;
    std::vector<int> sizes;
    for (const synth::Batch& b : train_data.batches(cfg.batch_size, &shuffle_rng)) {
      adam.zero_grad();
      reports.push_back(batch_loss(model, b, e, align_rng, true, true));
      sizes.push_back(static_cast<int>(b.ids.size()));
      const double norm = clip_grad_norm(refs.params, cfg.grad_clip);
      if (!std::isfinite(norm)) throw TrainingAborted("non-finite gradient norm at epoch " + std::to_string(e + 1));
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ++rec.clipped_steps;
      adam.step(state.lr);
    }
    rec.train = mean_report(reports, sizes);

    Rng val_rng = root.derive("val/" + std::to_string(e));
    reports.clear();
    sizes.clear();
    for (const synth::Batch& b : val_data.batches(cfg.batch_size, nullptr)) {
      reports.push_back(batch_loss(model, b, e, val_rng, false, false));
      sizes.push_back(static_cast<int>(b.ids.size()));
    }
    rec.val = mean_report(reports, sizes);
    const metrics::MetricReport val_metrics = evaluate(model, val_data);
    rec.val_dice = val_metrics.mean_dice;
    rec.val_miou = val_metrics.mean_miou;

    const double best_before = state.best_val;
    state.epoch = e + 1;
    state.rng_digest = shuffle_rng.state_digest();
    lr_on_plateau(state, rec.val_dice, cfg);
    rec.improved = state.best_val > best_before;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(rec);
    if (rec.improved) save_checkpoint(run.checkpoints, model, &adam, state, {{"val_miou", rec.val_miou}});
    append_line(run.metrics, rec.to_json());
    if (options.log_epochs) {
      spdlog::info("epoch {:3d} lr {:.1e} loss {:.4f} (dice {:.4f}) val dice {:.2f}{} [{:.1f}s]", rec.epoch, rec.lr,
                   rec.train.total, rec.train.dice, rec.val_dice, rec.improved ? " *" : "", rec.seconds);
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (early_stop(state, cfg)) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace textbcs::train
