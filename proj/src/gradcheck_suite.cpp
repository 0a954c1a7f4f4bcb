#include "adareg/gradcheck_suite.hpp"

#include <chrono>
#include <random>

#include "adareg/adaptive_reg.hpp"
#include "adareg/csv.hpp"
#include "adareg/layers.hpp"
#include "adareg/losses.hpp"
#include "adareg/ops.hpp"
#include "adareg/reid_model.hpp"
#include "adareg/rng.hpp"

namespace adareg {

namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

Tensor normal(Shape shape, Rng& rng, double sd = 1.0, double mean = 0.0) {
  std::normal_distribution<double> dist(mean, sd);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// sum(y * r) for a fixed random r, so every output entry carries a distinct upstream gradient.
Var project(Tape& tape, Var y, const Tensor& r) { return ad::sum(ad::mul(y, tape.constant(r))); }

struct Builder {
  Rng rng;
  std::vector<GradCheckCase> cases;

  GradCheckCase& add(std::string name) {
    cases.push_back({std::move(name), {}, {}, {}, 0});
    return cases.back();
  }

  // A case whose loss is project(op(inputs...)).
  template <class Op>
  void unary(std::string name, Tensor x, Op op) {
    auto& c = add(std::move(name));
    const auto id = c.params.add("x", std::move(x), ad::ParamRole::weight);
    c.ids = {id};
    Tape probe(c.params);
    const Tensor r = normal(op(probe.param(id)).shape(), rng);
    c.loss = [id, r, op](Tape& t) { return project(t, op(t.param(id)), r); };
  }

  template <class Op>
  void binary(std::string name, Tensor a, Tensor b, Op op) {
    auto& c = add(std::move(name));
    const auto ia = c.params.add("a", std::move(a), ad::ParamRole::weight);
    const auto ib = c.params.add("b", std::move(b), ad::ParamRole::weight);
    c.ids = {ia, ib};
    Tape probe(c.params);
    const Tensor r = normal(op(probe.param(ia), probe.param(ib)).shape(), rng);
    c.loss = [ia, ib, r, op](Tape& t) { return project(t, op(t.param(ia), t.param(ib)), r); };
  }
};

}  // namespace

std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed) {
  Builder b{Rng(derive_seed(seed, "gradcheck")), {}};
  Rng& rng = b.rng;

  b.binary("add", normal({3, 4}, rng), normal({3, 4}, rng), [](Var x, Var y) { return ad::add(x, y); });
  b.binary("sub", normal({3, 4}, rng), normal({3, 4}, rng), [](Var x, Var y) { return ad::sub(x, y); });
  b.binary("mul", normal({3, 4}, rng), normal({3, 4}, rng), [](Var x, Var y) { return ad::mul(x, y); });
  b.binary("add_bias_rank2", normal({3, 4}, rng), normal({4}, rng), [](Var x, Var y) { return ad::add(x, y); });
  b.binary("mul_bias_rank4", normal({2, 3, 2, 2}, rng), normal({3}, rng), [](Var x, Var y) { return ad::mul(x, y); });
  b.unary("scale", normal({5}, rng), [](Var x) { return ad::scale(x, -1.7); });
  b.unary("relu", normal({4, 5}, rng), [](Var x) { return ad::relu(x); });
  b.unary("exp", normal({4, 3}, rng), [](Var x) { return ad::exp(x); });
  b.unary("log", uniform({4, 3}, rng, 0.5, 2.0), [](Var x) { return ad::log(x); });
  b.unary("square", normal({4, 3}, rng), [](Var x) { return ad::square(x); });
  b.unary("clamp", normal({4, 5}, rng, 4.0), [](Var x) { return ad::clamp(x, -1.0, 1.0); });
  b.binary("matmul", normal({3, 4}, rng), normal({4, 2}, rng), [](Var x, Var y) { return ad::matmul(x, y); });
  b.unary("reduce_sum_axis1", normal({2, 3, 2, 2}, rng), [](Var x) { return ad::reduce(ad::Reduce::sum, x, {1}); });
  b.unary("reduce_mean_spatial", normal({2, 3, 2, 3}, rng),
          [](Var x) { return ad::reduce(ad::Reduce::mean, x, {2, 3}); });
  b.unary("mean_all", normal({3, 4}, rng), [](Var x) { return ad::mean(x); });
  b.unary("sum_squares", normal({3, 4}, rng), [](Var x) { return ad::sum_squares(x); });
  b.unary("reshape", normal({2, 6}, rng), [](Var x) { return ad::reshape(x, {3, 4}); });
  b.unary("slice_rows", normal({2, 3, 4, 2}, rng), [](Var x) { return ad::slice(x, 2, 2, 2); });
  b.binary("concat_cols", normal({3, 2}, rng), normal({3, 4}, rng), [](Var x, Var y) {
    const Var parts[] = {x, y};
    return ad::concat(parts, 1);
  });
  b.binary("conv2d_pad1", normal({2, 3, 5, 5}, rng), normal({4, 3, 3, 3}, rng),
           [](Var x, Var k) { return ad::conv2d(x, k, std::nullopt, {1, 1}); });
  {
    auto& c = b.add("conv2d_bias_stride2");
    const auto x = c.params.add("x", normal({2, 2, 5, 4}, rng), ad::ParamRole::weight);
    const auto k = c.params.add("k", normal({3, 2, 3, 3}, rng), ad::ParamRole::weight);
    const auto bias = c.params.add("b", normal({3}, rng), ad::ParamRole::weight);
    c.ids = {x, k, bias};
    const Tensor r = normal({2, 3, 2, 1}, rng);
    c.loss = [=](Tape& t) { return project(t, ad::conv2d(t.param(x), t.param(k), t.param(bias), {2, 0}), r); };
  }
  b.unary("avg_pool2d", normal({2, 2, 4, 6}, rng), [](Var x) { return ad::avg_pool2d(x, 2); });
  {
    auto& c = b.add("batch_norm_train_nchw");
    const auto x = c.params.add("x", normal({3, 2, 2, 3}, rng), ad::ParamRole::weight);
    const auto g = c.params.add("gamma", normal({2}, rng, 0.5, 1.0), ad::ParamRole::weight);
    const auto be = c.params.add("beta", normal({2}, rng), ad::ParamRole::weight);
    c.ids = {x, g, be};
    const Tensor r = normal({3, 2, 2, 3}, rng);
    c.loss = [=](Tape& t) { return project(t, ad::batch_norm_train(t.param(x), t.param(g), t.param(be), 1e-5), r); };
  }
  {
    auto& c = b.add("batch_norm_train_2d");
    const auto x = c.params.add("x", normal({5, 3}, rng), ad::ParamRole::weight);
    const auto g = c.params.add("gamma", normal({3}, rng, 0.5, 1.0), ad::ParamRole::weight);
    const auto be = c.params.add("beta", normal({3}, rng), ad::ParamRole::weight);
    c.ids = {x, g, be};
    const Tensor r = normal({5, 3}, rng);
    c.loss = [=](Tape& t) { return project(t, ad::batch_norm_train(t.param(x), t.param(g), t.param(be), 1e-5), r); };
  }
  {
    auto& c = b.add("batch_norm_infer");
    const auto x = c.params.add("x", normal({4, 3}, rng), ad::ParamRole::weight);
    const auto g = c.params.add("gamma", normal({3}, rng, 0.5, 1.0), ad::ParamRole::weight);
    const auto be = c.params.add("beta", normal({3}, rng), ad::ParamRole::weight);
    c.ids = {x, g, be};
    const Tensor rm = normal({3}, rng), rv = uniform({3}, rng, 0.5, 2.0), r = normal({4, 3}, rng);
    c.loss = [=](Tape& t) {
      return project(t, ad::batch_norm_infer(t.param(x), t.param(g), t.param(be), rm, rv, 1e-5), r);
    };
  }
  {
    auto& c = b.add("dense_with_bias");
    Rng init(derive_seed(seed, "gradcheck.dense"));
    const nn::Dense dense(c.params, "dense", 4, 3, true, init);
    c.params.value(*dense.bias()) = normal({3}, rng);
    const auto x = c.params.add("x", normal({2, 4}, rng), ad::ParamRole::weight);
    c.ids = {x, dense.kernel(), *dense.bias()};
    const Tensor r = normal({2, 3}, rng);
    c.loss = [=](Tape& t) { return project(t, dense.forward(t, t.param(x)), r); };
  }
  b.unary("global_avg_pool", normal({2, 3, 2, 2}, rng), [](Var x) { return nn::global_avg_pool(x); });
  b.unary("hard_sigmoid", normal({6}, rng, 2.0), [](Var x) { return reg::hard_sigmoid(x, 2.5); });
  {
    auto& c = b.add("cross_entropy");
    const auto z = c.params.add("logits", normal({4, 5}, rng), ad::ParamRole::weight);
    c.ids = {z};
    const std::size_t labels[] = {1, 3, 5, 2};
    const Tensor q = loss::smoothed_targets(labels, {0.1, 5});
    c.loss = [=](Tape& t) { return loss::cross_entropy(t.param(z), q); };
  }
  {
    auto& c = b.add("batch_hard_triplet");
    const auto e = c.params.add("embeddings", normal({8, 3}, rng), ad::ParamRole::weight);
    c.ids = {e};
    const std::vector<std::int64_t> ids{1, 1, 2, 2, 3, 3, 4, 4};
    c.loss = [=](Tape& t) { return loss::batch_hard_triplet(t.param(e), ids, {2.0}); };
  }

  // Penalties, with theta gradients.
  auto penalty_case = [&](std::string name, reg::RegConfig config) {
    auto& c = b.add(std::move(name));
    const auto w1 = c.params.add("conv.kernel", normal({2, 1, 3, 3}, rng), ad::ParamRole::weight);
    const auto w2 = c.params.add("bn.gamma", normal({2}, rng), ad::ParamRole::weight);
    const auto w3 = c.params.add("dense.kernel", normal({3, 2}, rng), ad::ParamRole::weight);
    const nn::ParamDescriptor desc[] = {
        {w1, nn::LayerKind::conv, nn::FieldKind::kernel},
        {w2, nn::LayerKind::batchnorm, nn::FieldKind::gamma},
        {w3, nn::LayerKind::dense, nn::FieldKind::kernel},
    };
    const auto factors = reg::attach_factors(c.params, desc, config);
    std::uniform_real_distribution<double> theta(-2.0, 2.0);
    for (const auto& f : factors) c.params.value(f.theta)[0] = theta(rng);
    c.ids = {w1, w2, w3};
    for (const auto& f : factors) c.ids.push_back(f.theta);
    c.loss = [=](Tape& t) { return reg::penalty(t, factors, config); };
  };
  reg::RegConfig adaptive;
  penalty_case("adaptive_penalty", adaptive);
  reg::RegConfig constant = adaptive;
  constant.mode = reg::RegMode::constant;
  penalty_case("constant_penalty", constant);
  reg::RegConfig unconstrained = adaptive;
  unconstrained.mode = reg::RegMode::unconstrained;
  penalty_case("unconstrained_penalty", unconstrained);

  // One objective module on a random feature map.
  {
    auto& c = b.add("objective_module");
    model::ModelConfig mc;
    mc.num_classes = 3;
    Rng init(derive_seed(seed, "gradcheck.objective"));
    const model::ObjectiveModule head(c.params, "head", 4, mc, init);
    const auto fmap = c.params.add("feature_map", uniform({4, 4, 2, 2}, rng, -1.0, 7.0), ad::ParamRole::weight);
    std::vector<nn::ParamDescriptor> desc;
    head.describe(desc);
    for (const auto& d : desc) c.ids.push_back(d.id);
    c.ids.push_back(fmap);
    const std::size_t labels[] = {1, 2, 1, 2};
    const Tensor q = loss::smoothed_targets(labels, {0.1, 3});
    const std::vector<std::int64_t> ids{1, 2, 1, 2};
    c.loss = [=](Tape& t) {
      const auto out = head.forward(t, t.param(fmap), nn::Mode::train, nullptr);
      return ad::add(loss::cross_entropy(out.logits, q), loss::batch_hard_triplet(out.embedding, ids, {0.3}));
    };
  }

  // Full model: all objective modules, both losses and the adaptive penalty.
  auto model_case = [&](std::string name, model::ModelConfig mc, std::size_t max_coords) {
    auto& c = b.add(std::move(name));
    c.max_coords_per_param = max_coords;
    Rng init(derive_seed(seed, "gradcheck.model"));
    auto model = std::make_shared<model::ReidModel>(mc, c.params, init);
    reg::RegConfig rc;
    const auto factors = reg::attach_factors(c.params, model->descriptors(), rc);
    std::uniform_real_distribution<double> theta(-2.0, 2.0);
    for (const auto& f : factors) c.params.value(f.theta)[0] = theta(rng);
    for (const auto& d : model->descriptors()) c.ids.push_back(d.id);
    for (const auto& f : factors) c.ids.push_back(f.theta);
    // nonzero biases so the bias and theta paths are exercised
    for (const auto& d : model->descriptors()) {
      if (d.field == nn::FieldKind::bias) c.params.value(d.id) = normal(c.params.value(d.id).shape(), rng, 0.1);
    }
    const Tensor images = uniform({4, 1, mc.height, mc.width}, rng, 0.0, 1.0);
    const std::size_t labels[] = {1, 1, 2, 2};
    const std::vector<std::int64_t> ids{1, 1, 2, 2};
    const Tensor q = loss::smoothed_targets(labels, {0.1, mc.num_classes});
    c.loss = [=](Tape& t) {
      const auto out = model->forward(t, t.constant(images), nn::Mode::train, nullptr);
      std::vector<Var> ce, tri;
      for (const auto& m : out.modules) {
        ce.push_back(loss::cross_entropy(m.logits, q));
        tri.push_back(loss::batch_hard_triplet(m.embedding, ids, {0.3}));
      }
      return loss::total_loss(ce, tri, reg::penalty(t, factors, rc));
    };
  };
  model::ModelConfig small;
  small.height = 16;
  small.width = 8;
  small.channels = {2, 3, 4};
  small.stripe_dim = 2;
  small.num_classes = 2;
  model_case("model_small_every_coordinate", small, 0);
  model::ModelConfig full;
  full.num_classes = 2;
  model_case("model_default_sampled", full, 4);

  return std::move(b.cases);
}

SuiteReport run_gradcheck_suite(std::uint64_t seed, double step, double tolerance) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  SuiteReport report;
  for (auto& c : gradcheck_cases(seed)) {
    const auto t0 = clock::now();
    ad::GradCheckOptions options;
    options.step = step;
    options.tolerance = tolerance;
    options.max_coords_per_param = c.max_coords_per_param;
    SuiteEntry e{c.name, ad::grad_check(c.loss, c.params, c.ids, options), 0.0};
    e.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    report.passed = report.passed && e.report.passed;
    report.entries.push_back(std::move(e));
  }
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return report;
}

std::string suite_csv(const SuiteReport& report) {
  std::string out(kSuiteHeader);
  out += '\n';
  for (const auto& e : report.entries) {
    out += e.name + ',' + csv::format(e.report.max_rel_error) + ',' + std::to_string(e.report.checked) + ',' +
           std::to_string(e.report.below_noise) + ',' + std::to_string(e.report.failures) + ',' +
           std::to_string(e.report.excluded.size()) + ',' +
           (e.report.passed ? "true" : "false") + ',' + csv::format(e.seconds) + '\n';
  }
  return out;
}

}  // namespace adareg
