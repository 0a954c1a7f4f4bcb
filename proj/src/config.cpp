#include "adareg/config.hpp"

#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "adareg/csv.hpp"
#include "adareg/error.hpp"

namespace adareg {

namespace {

struct Field {
  std::string_view key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

std::string fmt(double v) { return csv::format(v); }
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

double to_double(std::string_view s, std::string_view key) {
  const double v = csv::parse_double(s, key);
  if (!std::isfinite(v)) throw ValidationError(std::string(key) + " must be finite");
  return v;
}

std::size_t to_size(std::string_view s, std::string_view key) {
  const auto v = csv::parse_int(s, key);
  if (v < 0) throw ValidationError(std::string(key) + " must be >= 0");
  return static_cast<std::size_t>(v);
}

bool to_bool(std::string_view s, std::string_view key) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ValidationError(std::string(key) + " must be true or false, got '" + std::string(s) + "'");
}

template <class T>
std::vector<T> to_list(std::string_view s, std::string_view key) {
  std::vector<T> out;
  if (csv::trim(s).empty()) return out;
  for (const auto& part : csv::split(s, ',')) {
    const auto v = csv::parse_int(csv::trim(part), key);
    if (v < 0) throw ValidationError(std::string(key) + " entries must be >= 0");
    out.push_back(static_cast<T>(v));
  }
  return out;
}

#define ADAREG_DOUBLE(KEY, MEMBER) \
  Field{KEY, [](const RunConfig& c) { return fmt(c.MEMBER); }, [](RunConfig& c, std::string_view v) { c.MEMBER = to_double(v, KEY); }}
#define ADAREG_SIZE(KEY, MEMBER)                                                          \
  Field{KEY, [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.MEMBER)); }, \
        [](RunConfig& c, std::string_view v) { c.MEMBER = to_size(v, KEY); }}
#define ADAREG_INT(KEY, MEMBER) \
  Field{KEY, [](const RunConfig& c) { return fmt(c.MEMBER); }, [](RunConfig& c, std::string_view v) { c.MEMBER = csv::parse_int(v, KEY); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](const RunConfig& c) { return fmt(c.seed); },
            [](RunConfig& c, std::string_view v) { c.seed = static_cast<std::uint64_t>(to_size(v, "seed")); }},

      Field{"data.seed", [](const RunConfig& c) { return fmt(c.data.seed); },
            [](RunConfig& c, std::string_view v) { c.data.seed = static_cast<std::uint64_t>(to_size(v, "data.seed")); }},
      ADAREG_SIZE("data.num_train_ids", data.num_train_ids),
      ADAREG_SIZE("data.num_test_ids", data.num_test_ids),
      ADAREG_SIZE("data.cameras", data.cameras),
      ADAREG_SIZE("data.samples_per_id_per_camera", data.samples_per_id_per_camera),
      ADAREG_SIZE("data.height", data.height),
      ADAREG_SIZE("data.width", data.width),
      ADAREG_SIZE("data.latent_dim", data.latent_dim),
      ADAREG_DOUBLE("data.camera_strength", data.camera_strength),
      ADAREG_DOUBLE("data.noise", data.noise),
      Field{"data.difficulty", [](const RunConfig& c) { return std::string(data::to_string(c.data.difficulty)); },
            [](RunConfig& c, std::string_view v) { c.data.difficulty = data::parse_difficulty(v); }},

      Field{"model.channels", [](const RunConfig& c) { return fmt_list(c.model.channels); },
            [](RunConfig& c, std::string_view v) { c.model.channels = to_list<std::size_t>(v, "model.channels"); }},
      ADAREG_SIZE("model.stripes", model.stripes),
      ADAREG_SIZE("model.stripe_dim", model.stripe_dim),
      ADAREG_DOUBLE("model.clip_lo", model.clip_lo),
      ADAREG_DOUBLE("model.clip_hi", model.clip_hi),
      ADAREG_DOUBLE("model.bn_momentum", model.bn_momentum),
      ADAREG_DOUBLE("model.bn_epsilon", model.bn_epsilon),
      ADAREG_DOUBLE("model.conv_bias_init", model.conv_bias_init),

      Field{"reg.mode", [](const RunConfig& c) { return std::string(reg::to_string(c.reg.mode)); },
            [](RunConfig& c, std::string_view v) { c.reg.mode = reg::parse_reg_mode(v); }},
      ADAREG_DOUBLE("reg.amplitude", reg.amplitude),
      ADAREG_DOUBLE("reg.half_width", reg.half_width),
      ADAREG_DOUBLE("reg.theta_init", reg.theta_init),
      ADAREG_DOUBLE("reg.constant_lambda", reg.constant_lambda),

      ADAREG_DOUBLE("loss.label_smoothing", loss.label_smoothing),
      ADAREG_DOUBLE("loss.triplet_margin", loss.triplet_margin),
      Field{"loss.mask_task", [](const RunConfig& c) { return fmt(c.loss.mask_task); },
            [](RunConfig& c, std::string_view v) { c.loss.mask_task = to_bool(v, "loss.mask_task"); }},

      ADAREG_SIZE("sampler.p", sampler.p),
      ADAREG_SIZE("sampler.k", sampler.k),

      ADAREG_DOUBLE("aug.flip_prob", aug.flip_prob),
      ADAREG_SIZE("aug.pad", aug.pad),
      ADAREG_DOUBLE("aug.erase_prob", aug.erase_prob),
      ADAREG_DOUBLE("aug.erase_area_min", aug.erase_area_min),
      ADAREG_DOUBLE("aug.erase_area_max", aug.erase_area_max),
      ADAREG_DOUBLE("aug.erase_aspect_min", aug.erase_aspect_min),
      ADAREG_DOUBLE("aug.erase_aspect_max", aug.erase_aspect_max),

      ADAREG_DOUBLE("optim.momentum", optim.momentum),
      ADAREG_DOUBLE("optim.theta_lr_scale", optim.theta_lr_scale),

      ADAREG_DOUBLE("lr.base", lr.base_rate),
      ADAREG_INT("lr.warmup_iters", lr.warmup_iters),
      ADAREG_DOUBLE("lr.warmup_start_factor", lr.warmup_start_factor),
      Field{"lr.milestones", [](const RunConfig& c) { return fmt_list(c.lr.milestones); },
            [](RunConfig& c, std::string_view v) { c.lr.milestones = to_list<std::int64_t>(v, "lr.milestones"); }},
      ADAREG_DOUBLE("lr.decay", lr.decay),

      ADAREG_INT("train.iterations", train.iterations),
      ADAREG_INT("train.snapshot_every", train.snapshot_every),

      Field{"eval.protocol", [](const RunConfig& c) { return std::string(eval::to_string(c.eval.protocol)); },
            [](RunConfig& c, std::string_view v) { c.eval.protocol = eval::parse_protocol(v); }},
      ADAREG_SIZE("eval.max_rank", eval.max_rank),
      ADAREG_SIZE("eval.top_k", eval.top_k),

      ADAREG_DOUBLE("gradcheck.step", gradcheck.step),
      ADAREG_DOUBLE("gradcheck.tolerance", gradcheck.tolerance),
  };
  return table;
}

#undef ADAREG_DOUBLE
#undef ADAREG_SIZE
#undef ADAREG_INT

}  // namespace

void set_key(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, csv::trim(value));
      return;
    }
  }
  throw ValidationError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ValidationError(where + ": expected 'key = value'");
    const auto key = csv::trim(line.substr(0, eq));
    if (!seen.emplace(key).second) throw ValidationError(where + ": key '" + std::string(key) + "' set twice");
    try {
      set_key(config, key, line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  for (const auto& l : csv::read_lines(path)) text += l + '\n';
  return parse_config(text);
}

std::string echo(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + '\n';
  return out;
}

void validate(const RunConfig& c) {
  data::validate(c.data);
  if (c.model.channels.empty()) throw ValidationError("model.channels needs at least one entry");
  if (c.model.stripes == 0) throw ValidationError("model.stripes must be >= 1");
  if (!(c.model.clip_lo < c.model.clip_hi)) throw ValidationError("model.clip_lo must be < model.clip_hi");
  if (!(c.model.bn_momentum > 0.0 && c.model.bn_momentum < 1.0)) {
    throw ValidationError("model.bn_momentum must lie in (0, 1)");
  }
  if (!(c.model.bn_epsilon > 0.0)) throw ValidationError("model.bn_epsilon must be > 0");
  if (!(c.reg.amplitude > 0.0)) throw ValidationError("reg.amplitude must be > 0");
  if (!(c.reg.half_width > 0.0)) throw ValidationError("reg.half_width must be > 0");
  if (!(c.reg.constant_lambda >= 0.0)) throw ValidationError("reg.constant_lambda must be >= 0");
  if (!(c.loss.label_smoothing >= 0.0 && c.loss.label_smoothing < 1.0)) {
    throw ValidationError("loss.label_smoothing must lie in [0, 1)");
  }
  if (!(c.loss.triplet_margin >= 0.0)) throw ValidationError("loss.triplet_margin must be >= 0");
  train::validate(c.sampler);
  train::validate(c.aug);
  if (!(c.optim.momentum >= 0.0 && c.optim.momentum < 1.0)) throw ValidationError("optim.momentum must lie in [0, 1)");
  if (!(c.optim.theta_lr_scale >= 0.0)) throw ValidationError("optim.theta_lr_scale must be >= 0");
  train::validate(c.lr);
  if (c.train.iterations < 0) throw ValidationError("train.iterations must be >= 0");
  if (c.train.snapshot_every < 1) throw ValidationError("train.snapshot_every must be >= 1");
  if (c.eval.max_rank < 1) throw ValidationError("eval.max_rank must be >= 1");
  if (!(c.gradcheck.step > 0.0)) throw ValidationError("gradcheck.step must be > 0");
  if (!(c.gradcheck.tolerance > 0.0)) throw ValidationError("gradcheck.tolerance must be > 0");
}

}  // namespace adareg
