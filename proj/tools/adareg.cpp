#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "adareg/adaptive_reg.hpp"
#include "adareg/checkpoint.hpp"
#include "adareg/config.hpp"
#include "adareg/csv.hpp"
#include "adareg/error.hpp"
#include "adareg/eval_metrics.hpp"
#include "adareg/gradcheck_suite.hpp"
#include "adareg/synth_data.hpp"
#include "adareg/trainer.hpp"

namespace fs = std::filesystem;
using namespace adareg;

namespace {

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
  const char* env = std::getenv("ADAREG_LOG");
  if (!env) return Verbosity::info;
  const std::string v(env);
  if (v == "quiet" || v == "0") return Verbosity::quiet;
  if (v == "debug" || v == "2") return Verbosity::debug;
  return Verbosity::info;
}

void log(Verbosity level, const std::string& msg) {
  if (verbosity() >= level) std::cerr << msg << '\n';
}

struct Options {
  std::string config;
  std::string data_dir;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string protocol;
  std::string reg_mode;
  std::string checkpoint;
  std::string snapshots;
  double hist_lo = 0.0;
  double hist_hi = 0.0025;
  std::size_t buckets = 5;
};

RunConfig base_config(const Options& o) { return o.config.empty() ? RunConfig{} : load_config(o.config); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

int gen_data(const Options& o) {
  RunConfig cfg = base_config(o);
  if (o.seed) cfg.data.seed = *o.seed;
  validate(cfg);
  const auto ds = data::generate(cfg.data);
  data::save(ds, o.out_dir);
  csv::write_text(fs::path(o.out_dir) / "config.txt", echo(cfg));
  const double acc = data::nearest_centroid_accuracy(ds);
  const double chance = 1.0 / static_cast<double>(cfg.data.num_test_ids);
  csv::write_text(fs::path(o.out_dir) / "baseline.csv",
                  "metric,value\nnearest_centroid_accuracy," + csv::format(acc) + "\nchance," + csv::format(chance) + '\n');
  log(Verbosity::info, "wrote " + std::to_string(ds.samples.size()) + " samples to " + o.out_dir +
                           " (nearest-centroid accuracy " + csv::format(acc) + ", chance " + csv::format(chance) + ")");
  return 0;
}

int run_train(const Options& o) {
  RunConfig cfg = base_config(o);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.reg_mode.empty()) cfg.reg.mode = reg::parse_reg_mode(o.reg_mode);
  validate(cfg);
  const auto ds = data::load(o.data_dir);
  ensure_dir(o.out_dir);
  csv::write_text(fs::path(o.out_dir) / "config.txt", echo(cfg));

  auto state = train::init_state(cfg, ds);
  const std::int64_t every = std::max<std::int64_t>(1, cfg.train.iterations / 20);
  const auto log_level = verbosity();
  std::vector<train::StepResult> steps;
  std::vector<train::Diagnostics> diags;
  train::TrainLog trained;
  try {
    trained = train::run_training(state, ds, [&](const train::TrainState& s, const train::StepResult& r) {
      steps.push_back(r);
      diags.push_back(train::diagnose(s.iteration, s, r.penalty));
      if (log_level >= Verbosity::debug || (log_level >= Verbosity::info && s.iteration % every == 0)) {
        std::cerr << "iter " << s.iteration << " lr " << csv::format(r.lr) << " ce " << csv::format(r.ce_total)
                  << " triplet " << csv::format(r.triplet_total) << " penalty " << csv::format(r.penalty) << '\n';
      }
    });
  } catch (const NumericError&) {
    // Keep the trajectory up to the failure so a collapse can be inspected.
    csv::write_text(fs::path(o.out_dir) / "loss.csv", train::loss_csv(steps));
    csv::write_text(fs::path(o.out_dir) / "diagnostics.csv", train::diagnostics_csv(diags));
    throw;
  }
  train::write_outputs(o.out_dir, state, trained);
  log(Verbosity::info, "wrote checkpoint and logs to " + o.out_dir);
  return 0;
}

int evaluate(const Options& o) {
  const auto ckpt = model::load_checkpoint(o.checkpoint);
  const auto ds = data::load(o.data_dir);
  auto state = train::restore_state(ckpt, ds.height, ds.width);
  if (!o.protocol.empty()) state.config.eval.protocol = eval::parse_protocol(o.protocol);
  const auto& ec = state.config.eval;

  const auto qi = data::indices_of(ds, data::Split::query);
  const auto gi = data::indices_of(ds, data::Split::gallery);
  if (qi.empty() || gi.empty()) throw ValidationError("dataset needs query and gallery samples");
  auto meta = [&](const std::vector<std::size_t>& idx) {
    std::vector<eval::SampleMeta> m;
    for (auto i : idx) m.push_back({ds.samples[i].identity, ds.samples[i].camera});
    return m;
  };
  const auto qm = meta(qi), gm = meta(gi);
  const auto qe = train::embed_samples(state, ds, qi);
  const auto ge = train::embed_samples(state, ds, gi);
  const auto report = eval::evaluate(qe, qm, ge, gm, ec.protocol, ec.max_rank);

  const fs::path out(o.out_dir);
  ensure_dir(out);
  csv::write_text(out / "config.txt", echo(state.config));
  csv::write_text(out / "report.csv", eval::report_csv(report));
  csv::write_text(out / "per_query.csv", eval::per_query_csv(report));
  csv::write_text(out / "ranked_lists.csv", eval::ranked_lists_csv(report, qm, gm, ec.top_k));
  eval::write_embeddings(out / "query_embeddings.bin", qe);
  eval::write_embeddings(out / "gallery_embeddings.bin", ge);
  eval::write_meta(out / "query_meta.csv", qm);
  eval::write_meta(out / "gallery_meta.csv", gm);
  std::cout << "protocol " << eval::to_string(ec.protocol) << " mAP " << csv::format(report.mean_ap) << " rank1 "
            << csv::format(report.cmc[0]) << " valid " << report.valid << " dropped " << report.dropped << '\n';
  return 0;
}

int analyze(const Options& o) {
  const auto snapshots = reg::read_snapshot_log(o.snapshots);
  if (snapshots.empty()) throw ValidationError("snapshot log '" + o.snapshots + "' is empty");
  const fs::path out(o.out_dir);
  ensure_dir(out);
  const auto hist = reg::factor_histogram(snapshots.back(), {o.hist_lo, o.hist_hi, o.buckets});
  csv::write_text(out / "trajectory.csv", reg::trajectory_csv(reg::median_trajectory(snapshots)));
  csv::write_text(out / "histogram.csv", reg::histogram_csv(hist));
  csv::write_text(out / "overflow.csv", reg::overflow_csv(hist));
  csv::write_text(out / "config.txt", "snapshots = " + o.snapshots + "\nhist_lo = " + csv::format(o.hist_lo) +
                                          "\nhist_hi = " + csv::format(o.hist_hi) +
                                          "\nbuckets = " + std::to_string(o.buckets) + '\n');
  if (hist.overflow() > 0) log(Verbosity::info, std::to_string(hist.overflow()) + " factors fall outside the range");
  log(Verbosity::info, "analyzed " + std::to_string(snapshots.size()) + " snapshots");
  return 0;
}

int gradcheck(const Options& o) {
  RunConfig cfg = base_config(o);
  if (o.seed) cfg.seed = *o.seed;
  const auto report = run_gradcheck_suite(cfg.seed, cfg.gradcheck.step, cfg.gradcheck.tolerance);
  for (const auto& e : report.entries) {
    std::cout << (e.report.passed ? "PASS " : "FAIL ") << e.name << " max_rel_error "
              << csv::format(e.report.max_rel_error) << " checked " << e.report.checked << " failures "
              << e.report.failures << " excluded "
              << e.report.excluded.size() << '\n';
  }
  if (!o.out_dir.empty()) {
    ensure_dir(o.out_dir);
    csv::write_text(fs::path(o.out_dir) / "config.txt", echo(cfg));
    csv::write_text(fs::path(o.out_dir) / "gradcheck.csv", suite_csv(report));
  }
  std::cout << (report.passed ? "all passed" : "FAILURES") << " in " << csv::format(report.seconds) << " s\n";
  return report.passed ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive L2 regularization with a desk-scale re-identification pipeline"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-camera dataset");
  gen->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--out-dir", o.out_dir, "Dataset directory")->required();
  gen->add_option("--seed", o.seed, "Overrides data.seed");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  tr->add_option("--data-dir", o.data_dir, "Dataset directory")->required();
  tr->add_option("--out-dir", o.out_dir, "Output directory")->required();
  tr->add_option("--seed", o.seed, "Overrides seed");
  tr->add_option("--reg-mode", o.reg_mode, "adaptive|constant|unconstrained|off")
      ->check(CLI::IsMember({"adaptive", "constant", "unconstrained", "off"}));

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the query/gallery split");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data-dir", o.data_dir, "Dataset directory")->required();
  ev->add_option("--out-dir", o.out_dir, "Output directory")->required();
  ev->add_option("--protocol", o.protocol, "same_cam_same_id|same_cam")
      ->check(CLI::IsMember({"same_cam_same_id", "same_cam"}));

  auto* an = app.add_subcommand("analyze", "Median trajectories and histogram of regularization factors");
  an->add_option("--snapshots", o.snapshots, "snapshots.csv written by train")->required();
  an->add_option("--out-dir", o.out_dir, "Output directory")->required();
  an->add_option("--hist-lo", o.hist_lo, "Histogram lower edge");
  an->add_option("--hist-hi", o.hist_hi, "Histogram upper edge");
  an->add_option("--buckets", o.buckets, "Histogram bucket count");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full model");
  gc->add_option("--config", o.config, "Config file")->check(CLI::ExistingFile);
  gc->add_option("--seed", o.seed, "Overrides seed");
  gc->add_option("--out-dir", o.out_dir, "Optional report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return gen_data(o);
    if (tr->parsed()) return run_train(o);
    if (ev->parsed()) return evaluate(o);
    if (an->parsed()) return analyze(o);
    if (gc->parsed()) return gradcheck(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
