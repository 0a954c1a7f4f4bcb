#include "adareg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adareg/augment.hpp"
#include "adareg/csv.hpp"
#include "adareg/error.hpp"
#include "adareg/losses.hpp"
#include "adareg/schedule.hpp"

namespace adareg::train {

void SgdMomentum::step(ad::ParameterStore& params, std::span<const ad::Tensor> grads, double lr) {
  if (grads.size() != params.size()) throw ValidationError("optimizer needs one gradient per stored array");
  if (velocity_.empty()) {
    for (ad::ParamId id = 0; id < params.size(); ++id) velocity_.emplace_back(params.value(id).shape(), 0.0);
  }
  for (ad::ParamId id = 0; id < params.size(); ++id) {
    if (!params.trainable(id)) continue;
    const double rate = params.role(id) == ad::ParamRole::theta ? lr * theta_scale_ : lr;
    auto w = params.value(id).data();
    auto v = velocity_[id].data();
    auto g = grads[id].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      w[i] -= rate * v[i];
    }
  }
}

model::ModelConfig model_config(const RunConfig& config, std::size_t height, std::size_t width,
                                std::size_t num_classes) {
  model::ModelConfig m = config.model;
  m.height = height;
  m.width = width;
  m.in_channels = 1;
  m.num_classes = num_classes;
  return m;
}

TrainState init_state(const RunConfig& config, const data::Dataset& dataset) {
  validate(config);
  TrainState s;
  s.config = config;
  for (const auto& sample : dataset.samples) {
    if (sample.split == data::Split::train) s.class_of.emplace(sample.identity, 0);
  }
  if (s.class_of.empty()) throw ValidationError("dataset has no training samples");
  std::size_t next = 1;
  for (auto& [id, cls] : s.class_of) cls = next++;

  Rng rng(derive_seed(config.seed, "init"));
  s.model = std::make_unique<model::ReidModel>(model_config(config, dataset.height, dataset.width, s.class_of.size()),
                                               s.params, rng);
  s.factors = reg::attach_factors(s.params, s.model->descriptors(), config.reg);
  s.optimizer = SgdMomentum(config.optim.momentum, config.optim.theta_lr_scale);
  return s;
}

TrainState restore_state(const model::Checkpoint& checkpoint, std::size_t height, std::size_t width) {
  TrainState s;
  s.config = parse_config(checkpoint.config);
  const auto classifier = checkpoint.params.find("head.global.classifier.kernel");
  if (!classifier) throw ValidationError("checkpoint lacks the global classifier kernel");
  const std::size_t classes = checkpoint.params.value(*classifier).dim(1);
  Rng rng(derive_seed(s.config.seed, "init"));
  s.model = std::make_unique<model::ReidModel>(model_config(s.config, height, width, classes), s.params, rng);
  s.factors = reg::attach_factors(s.params, s.model->descriptors(), s.config.reg);
  model::restore_into(s.params, checkpoint.params);
  if (model::factor_records(s.params, s.factors) != checkpoint.factors) {
    throw ValidationError("checkpoint factor table does not match the model");
  }
  s.optimizer = SgdMomentum(s.config.optim.momentum, s.config.optim.theta_lr_scale);
  s.iteration = static_cast<std::int64_t>(checkpoint.iteration);
  return s;
}

model::Checkpoint make_checkpoint(const TrainState& state) {
  model::Checkpoint c;
  c.config = echo(state.config);
  c.iteration = static_cast<std::uint64_t>(state.iteration);
  c.params = state.params;
  c.factors = model::factor_records(state.params, state.factors);
  return c;
}

namespace {

double sq_norm(const ad::Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return s;
}

std::string dump(const StepResult& r) {
  std::string out = "iteration " + std::to_string(r.iteration) + ": ce=[";
  for (std::size_t i = 0; i < r.ce.size(); ++i) out += (i ? "," : "") + csv::format(r.ce[i]);
  out += "] triplet=[";
  for (std::size_t i = 0; i < r.triplet.size(); ++i) out += (i ? "," : "") + csv::format(r.triplet[i]);
  out += "] penalty=" + csv::format(r.penalty) + " total=" + csv::format(r.total);
  return out;
}

}  // namespace

StepResult train_step(TrainState& state, const ad::Tensor& images, std::span<const std::int64_t> identities) {
  const RunConfig& cfg = state.config;
  if (images.dim(0) != identities.size()) throw ValidationError("one identity per image is required");

  StepResult r{};
  r.iteration = state.iteration;
  r.lr = lr_at(state.iteration, cfg.lr);

  std::vector<std::size_t> labels;
  labels.reserve(identities.size());
  for (auto id : identities) {
    auto it = state.class_of.find(id);
    if (it == state.class_of.end()) throw ValidationError("identity " + std::to_string(id) + " is not a training class");
    labels.push_back(it->second);
  }
  const ad::Tensor targets =
      loss::smoothed_targets(labels, {cfg.loss.label_smoothing, state.class_of.size()});

  ad::Tape tape(state.params);
  nn::StatsSink sink;
  std::vector<ad::Var> ce_terms, triplet_terms;
  ad::Var penalty;
  try {
    const auto out = state.model->forward(tape, tape.constant(images), nn::Mode::train, &sink);
    for (const auto& m : out.modules) {
      ce_terms.push_back(loss::cross_entropy(m.logits, targets));
      triplet_terms.push_back(loss::batch_hard_triplet(m.embedding, identities, {cfg.loss.triplet_margin}));
    }
    penalty = reg::penalty(tape, state.factors, cfg.reg);
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(state.iteration) + ": " + e.what());
  }
  ad::Var total = cfg.loss.mask_task ? loss::total_loss({}, {}, penalty)
                                     : loss::total_loss(ce_terms, triplet_terms, penalty);

  r.ce_total = 0.0;
  r.triplet_total = 0.0;
  for (const auto& v : ce_terms) {
    r.ce.push_back(v.value().item());
    r.ce_total += r.ce.back();
  }
  for (const auto& v : triplet_terms) {
    r.triplet.push_back(v.value().item());
    r.triplet_total += r.triplet.back();
  }
  r.penalty = penalty.value().item();
  r.total = total.value().item();
  if (!std::isfinite(r.total) || !std::isfinite(r.ce_total) || !std::isfinite(r.triplet_total) ||
      !std::isfinite(r.penalty)) {
    throw NumericError("non-finite loss at " + dump(r));
  }

  const auto grads = ad::backward(tape, total);
  double wg = 0.0, tg = 0.0;
  for (ad::ParamId id = 0; id < grads.size(); ++id) {
    if (!grads[id].all_finite()) {
      throw NumericError("non-finite gradient for '" + state.params.name(id) + "' at " + dump(r));
    }
    const auto role = state.params.role(id);
    if (role == ad::ParamRole::weight) wg += sq_norm(grads[id]);
    if (role == ad::ParamRole::theta) tg += sq_norm(grads[id]);
  }
  r.weight_grad_norm = std::sqrt(wg);
  r.theta_grad_norm = std::sqrt(tg);

  state.optimizer.step(state.params, grads, r.lr);
  nn::commit_stats(state.params, sink);
  ++state.iteration;
  return r;
}

BatchSource::BatchSource(const RunConfig& cfg, const data::Dataset& ds)
    : dataset(&ds),
      config(cfg),
      sampler(
          [&] { return data::indices_of(ds, data::Split::train); }(),
          [&] {
            std::vector<std::int64_t> ids;
            for (auto i : data::indices_of(ds, data::Split::train)) ids.push_back(ds.samples[i].identity);
            return ids;
          }(),
          cfg.sampler, derive_seed(cfg.seed, "sampler")) {}

ad::Tensor BatchSource::images(const Batch& batch, std::int64_t iteration) const {
  ad::Tensor x = data::stack_images(*dataset, batch.indices);
  const std::size_t h = dataset->height, w = dataset->width, plane = h * w;
  for (std::size_t slot = 0; slot < batch.indices.size(); ++slot) {
    Rng rng(derive_seed(config.seed, "augment", static_cast<std::uint64_t>(iteration), slot));
    augment(x.data().subspan(slot * plane, plane), h, w, config.aug, rng);
  }
  return x;
}

Diagnostics diagnose(std::int64_t iteration, const TrainState& state, double penalty) {
  Diagnostics d{iteration, 0.0, std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                penalty};
  for (ad::ParamId id = 0; id < state.params.size(); ++id) {
    if (state.params.role(id) == ad::ParamRole::weight) d.weight_sq_norm += sq_norm(state.params.value(id));
  }
  for (const auto& f : state.factors) {
    const double t = state.params.value(f.theta).item();
    d.min_theta = std::min(d.min_theta, t);
    d.max_theta = std::max(d.max_theta, t);
  }
  return d;
}

TrainLog run_training(TrainState& state, const data::Dataset& dataset, const StepHook& hook) {
  const RunConfig& cfg = state.config;
  BatchSource source(cfg, dataset);
  TrainLog log;
  log.snapshots.push_back(reg::take_snapshot(state.iteration, state.params, state.factors, cfg.reg));
  for (std::int64_t i = 0; i < cfg.train.iterations; ++i) {
    const Batch batch = source.next();
    const StepResult r = train_step(state, source.images(batch, state.iteration), batch.identities);
    log.diagnostics.push_back(diagnose(state.iteration, state, r.penalty));
    log.steps.push_back(r);
    if (state.iteration % cfg.train.snapshot_every == 0) {
      log.snapshots.push_back(reg::take_snapshot(state.iteration, state.params, state.factors, cfg.reg));
    }
    if (hook) hook(state, r);
  }
  return log;
}

std::string loss_csv(std::span<const StepResult> steps) {
  std::string out(kLossHeader);
  out += '\n';
  for (const auto& r : steps) {
    out += std::to_string(r.iteration) + ',' + csv::format(r.lr) + ',' + csv::format(r.ce_total) + ',' +
           csv::format(r.triplet_total) + ',' + csv::format(r.penalty) + ',' + csv::format(r.total) + '\n';
  }
  return out;
}

std::string diagnostics_csv(std::span<const Diagnostics> rows) {
  std::string out(kDiagnosticsHeader);
  out += '\n';
  for (const auto& d : rows) {
    out += std::to_string(d.iteration) + ',' + csv::format(d.weight_sq_norm) + ',' + csv::format(d.min_theta) + ',' +
           csv::format(d.max_theta) + ',' + csv::format(d.penalty) + '\n';
  }
  return out;
}

void write_outputs(const std::filesystem::path& dir, const TrainState& state, const TrainLog& log) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  csv::write_text(dir / "config.txt", echo(state.config));
  model::save_checkpoint(dir / "checkpoint.bin", make_checkpoint(state));
  csv::write_text(dir / "loss.csv", loss_csv(log.steps));
  csv::write_text(dir / "diagnostics.csv", diagnostics_csv(log.diagnostics));
  reg::write_snapshot_log(dir / "snapshots.csv", log.snapshots);
}

ad::Tensor embed_samples(const TrainState& state, const data::Dataset& dataset, std::span<const std::size_t> indices,
                         std::size_t batch_size) {
  if (indices.empty()) throw ValidationError("no samples to embed");
  const std::size_t dim = state.model->embedding_dim();
  ad::Tensor out({indices.size(), dim});
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const ad::Tensor e = state.model->embed(state.params, data::stack_images(dataset, chunk));
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * dim));
  }
  return out;
}

}  // namespace adareg::train
