#include <doctest.h>

#include <filesystem>
#include <random>

#include "adareg/adaptive_reg.hpp"
#include "adareg/error.hpp"
#include "adareg/grad_check.hpp"

using namespace adareg;
using namespace adareg::ad;
using reg::Category;

namespace {

struct Fixture {
  ParameterStore ps;
  std::vector<reg::RegFactor> factors;

  ParamId add(const std::string& name, Tensor w, double theta, Category cat = Category::conv_kernel,
              double amplitude = 0.0025) {
    auto id = ps.add(name, std::move(w), ParamRole::weight);
    auto th = ps.add(name + ".theta", Tensor::scalar(theta), ParamRole::theta);
    factors.push_back({th, id, amplitude, 2.5, cat});
    return id;
  }
};

}  // namespace

TEST_CASE("hard sigmoid branches") {
  CHECK(reg::hard_sigmoid(-3.0, 2.5) == 0.0);
  CHECK(reg::hard_sigmoid(0.0, 2.5) == 0.5);
  CHECK(reg::hard_sigmoid(1.25, 2.5) == 0.75);
  CHECK(reg::hard_sigmoid(2.5, 2.5) == 1.0);
  CHECK(reg::hard_sigmoid(-2.5, 2.5) == 0.0);
  CHECK(reg::hard_sigmoid(9.0, 2.5) == 1.0);
  CHECK(reg::hard_sigmoid_derivative(0.0, 2.5) == 0.2);
  CHECK(reg::hard_sigmoid_derivative(2.5, 2.5) == 0.2);
  CHECK(reg::hard_sigmoid_derivative(-2.5, 2.5) == 0.2);
  CHECK(reg::hard_sigmoid_derivative(2.6, 2.5) == 0.0);
  CHECK_THROWS_AS(reg::hard_sigmoid(0.0, 0.0), ValidationError);
}

TEST_CASE("lambda from theta") {
  Fixture f;
  f.add("a", Tensor::vector({1}), 0.0);
  f.add("b", Tensor::vector({1}), 10.0);
  f.add("c", Tensor::vector({1}), -10.0);
  CHECK(reg::lambda_of(f.factors[0], f.ps) == 0.00125);
  CHECK(reg::lambda_of(f.factors[1], f.ps) == 0.0025);
  CHECK(reg::lambda_of(f.factors[2], f.ps) == 0.0);
}

TEST_CASE("adaptive penalty values") {
  Fixture f;
  f.add("w", Tensor::vector({3, 4}), 0.0);
  Tape tape(f.ps);
  CHECK(reg::adaptive_penalty(tape, f.factors).value().item() == doctest::Approx(0.03125).epsilon(1e-15));

  Fixture off;
  off.add("a", Tensor::vector({30, -4}), -10.0);
  off.add("b", Tensor::vector({1e3}), -10.0);
  Tape t2(off.ps);
  CHECK(reg::adaptive_penalty(t2, off.factors).value().item() == 0.0);
}

TEST_CASE("adaptive penalty needs exactly one factor per weight") {
  Fixture f;
  f.add("w", Tensor::vector({1}), 0.0);
  f.ps.add("loose", Tensor::vector({2}), ParamRole::weight);
  Tape tape(f.ps);
  CHECK_THROWS_AS(reg::adaptive_penalty(tape, f.factors), ValidationError);

  Fixture dup;
  dup.add("w", Tensor::vector({1}), 0.0);
  dup.factors.push_back(dup.factors[0]);
  Tape t2(dup.ps);
  CHECK_THROWS_AS(reg::adaptive_penalty(t2, dup.factors), ValidationError);
}

TEST_CASE("adaptive penalty gradients") {
  Fixture f;
  auto a = f.add("a", Tensor::vector({0.5, -1.5, 2.0}), 0.7);
  auto b = f.add("b", Tensor::matrix(2, 2, {1, 2, -3, 0.25}), -1.1);
  Tape tape(f.ps);
  auto p = reg::adaptive_penalty(tape, f.factors);
  const double la = 0.0025 * (0.7 / 5 + 0.5), lb = 0.0025 * (-1.1 / 5 + 0.5);
  CHECK(p.value().item() == doctest::Approx(la * 6.5 + lb * 14.0625).epsilon(1e-14));
  auto g = backward(tape, p);
  CHECK(g[f.factors[0].theta][0] == doctest::Approx(0.0025 * 0.2 * 6.5).epsilon(1e-14));
  CHECK(g[f.factors[1].theta][0] == doctest::Approx(0.0025 * 0.2 * 14.0625).epsilon(1e-14));
  CHECK(g[a][1] == doctest::Approx(2 * la * -1.5).epsilon(1e-14));

  std::vector<ParamId> ids{a, b, f.factors[0].theta, f.factors[1].theta};
  auto rep = grad_check([&](Tape& t) { return reg::adaptive_penalty(t, f.factors); }, f.ps, ids,
                        {.step = 1e-5, .tolerance = 1e-6});
  CHECK(rep.passed);
}

TEST_CASE("theta gradient is non-negative and zero for a zero array") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-4, 4);
  for (int trial = 0; trial < 50; ++trial) {
    Fixture f;
    for (int n = 0; n < 4; ++n) {
      Tensor w({3});
      for (auto& v : w.data()) v = u(rng);
      f.add("w" + std::to_string(n), w, u(rng));
    }
    f.add("zero", Tensor({2}), u(rng));
    Tape tape(f.ps);
    auto g = backward(tape, reg::adaptive_penalty(tape, f.factors));
    for (const auto& fac : f.factors) CHECK(g[fac.theta][0] >= 0.0);
    CHECK(g[f.factors.back().theta][0] == 0.0);
  }
}

TEST_CASE("constant penalty") {
  Fixture f;
  auto w = f.add("w", Tensor::vector({1, 2}), 0.0);
  std::vector<ParamId> ids{w};
  Tape tape(f.ps);
  CHECK(reg::constant_penalty(tape, ids, 0.0).value().item() == 0.0);
  CHECK(reg::constant_penalty(tape, ids, 0.1).value().item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(reg::constant_penalty(tape, ids, -0.1), ValidationError);
  auto g = backward(tape, reg::constant_penalty(tape, ids, 0.1));
  CHECK(g[f.factors[0].theta][0] == 0.0);
}

TEST_CASE("saturated adaptive penalty equals the constant penalty bit for bit") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2, 2);
  Fixture f;
  std::vector<ParamId> ids;
  for (int n = 0; n < 6; ++n) {
    Tensor w({static_cast<std::size_t>(n + 2)});
    for (auto& v : w.data()) v = u(rng);
    ids.push_back(f.add("w" + std::to_string(n), w, 50.0, Category::bn_gamma, 0.003));
  }
  Tape tape(f.ps);
  CHECK(reg::adaptive_penalty(tape, f.factors).value().item() ==
        reg::constant_penalty(tape, ids, 0.003).value().item());
}

TEST_CASE("unconstrained penalty") {
  Fixture f;
  f.add("w", Tensor::vector({1, 1}), -1.0);
  Tape tape(f.ps);
  auto p = reg::unconstrained_penalty(tape, f.factors, true);
  CHECK(p.value().item() == -2.0);
  auto g = backward(tape, p);
  CHECK(g[f.factors[0].theta][0] == 2.0);
  Tape t2(f.ps);
  CHECK_THROWS_AS(reg::unconstrained_penalty(t2, f.factors, false), ValidationError);
}

TEST_CASE("penalty dispatch by mode") {
  Fixture f;
  f.add("w", Tensor::vector({3, 4}), 0.0);
  reg::RegConfig cfg;
  Tape tape(f.ps);
  cfg.mode = reg::RegMode::off;
  CHECK(reg::penalty(tape, f.factors, cfg).value().item() == 0.0);
  cfg.mode = reg::RegMode::constant;
  CHECK(reg::penalty(tape, f.factors, cfg).value().item() == doctest::Approx(0.03125));
  cfg.mode = reg::RegMode::unconstrained;
  CHECK(reg::penalty(tape, f.factors, cfg).value().item() == 0.0);
  CHECK(reg::effective_lambda(f.factors[0], f.ps, cfg) == 0.0);
  cfg.mode = reg::RegMode::adaptive;
  CHECK(reg::effective_lambda(f.factors[0], f.ps, cfg) == 0.00125);
  CHECK(reg::parse_reg_mode("constant") == reg::RegMode::constant);
  CHECK_THROWS_AS(reg::parse_reg_mode("sometimes"), ValidationError);
}

TEST_CASE("category taxonomy") {
  using nn::FieldKind;
  using nn::LayerKind;
  CHECK(reg::classify_category(LayerKind::conv, FieldKind::kernel) == Category::conv_kernel);
  CHECK(reg::classify_category(LayerKind::conv, FieldKind::bias) == Category::conv_bias);
  CHECK(reg::classify_category(LayerKind::batchnorm, FieldKind::gamma) == Category::bn_gamma);
  CHECK(reg::classify_category(LayerKind::batchnorm, FieldKind::beta) == Category::bn_beta);
  CHECK(reg::classify_category(LayerKind::dense, FieldKind::kernel) == Category::dense_kernel);
  CHECK_THROWS_AS(reg::classify_category(LayerKind::dense, FieldKind::bias), ValidationError);
  CHECK_THROWS_AS(reg::classify_category(LayerKind::conv, FieldKind::gamma), ValidationError);
  for (auto c : reg::kCategories) CHECK(reg::parse_category(reg::to_string(c)) == c);
}

TEST_CASE("attach factors registers one theta per descriptor") {
  Rng rng(1);
  ParameterStore ps;
  nn::Conv2d conv(ps, "conv", 1, 2, {}, rng);
  nn::BatchNorm bn(ps, "bn", 2);
  std::vector<nn::ParamDescriptor> desc;
  conv.describe(desc);
  bn.describe(desc);
  reg::RegConfig cfg;
  cfg.theta_init = 0.4;
  auto factors = reg::attach_factors(ps, desc, cfg);
  REQUIRE(factors.size() == 4);
  CHECK(ps.name(factors[0].theta) == "conv.kernel.theta");
  CHECK(factors[1].category == Category::conv_bias);
  CHECK(factors[3].category == Category::bn_beta);
  for (const auto& f : factors) {
    CHECK(ps.role(f.theta) == ParamRole::theta);
    CHECK(ps.value(f.theta).item() == 0.4);
  }
}

TEST_CASE("median") {
  CHECK(reg::median({0.001, 0.002, 0.003}) == 0.002);
  CHECK(reg::median({0.7}) == 0.7);
  CHECK(reg::median({1, 3}) == 2);
  CHECK(reg::median({4, 1, 3, 2}) == 2.5);
}

namespace {

reg::RegSnapshot snapshot_of(std::int64_t it, std::vector<std::pair<Category, double>> lambdas) {
  reg::RegSnapshot s{it, {}};
  int n = 0;
  for (auto [c, l] : lambdas) s.factors.push_back({"p" + std::to_string(n++), c, 0.0, l});
  return s;
}

}  // namespace

TEST_CASE("median trajectory leaves empty categories blank") {
  std::vector<reg::RegSnapshot> snaps{
      snapshot_of(0, {{Category::conv_kernel, 0.001}, {Category::conv_kernel, 0.003}, {Category::bn_beta, 0.002}}),
      snapshot_of(10, {{Category::conv_kernel, 0.0}, {Category::conv_kernel, 0.001}, {Category::bn_beta, 0.002}})};
  auto rows = reg::median_trajectory(snaps);
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].category == Category::conv_kernel);
  CHECK(*rows[0].median == 0.002);
  CHECK_FALSE(rows[1].median.has_value());
  CHECK(*rows[3].median == 0.002);
  CHECK(rows[5].iteration == 10);
  CHECK(*rows[5].median == 0.0005);
  auto csv = reg::trajectory_csv(rows);
  CHECK(csv.rfind("iteration,category,median_lambda\n", 0) == 0);
  CHECK(csv.find("0,conv_bias,\n") != std::string::npos);
}

TEST_CASE("histogram edges and boundaries") {
  auto h = reg::factor_histogram(snapshot_of(0, {}));
  CHECK(h.edges == std::vector<double>{0, 0.0005, 0.0010, 0.0015, 0.0020, 0.0025});

  auto zeros = reg::factor_histogram(snapshot_of(0, {{Category::conv_bias, 0.0}, {Category::bn_gamma, 0.0}}));
  CHECK(zeros.counts[1][0] == 1);
  CHECK(zeros.counts[2][0] == 1);

  auto edge = reg::factor_histogram(snapshot_of(
      0, {{Category::dense_kernel, 0.0025}, {Category::dense_kernel, 0.0005}, {Category::dense_kernel, 0.003},
          {Category::dense_kernel, -1e-9}}));
  CHECK(edge.counts[4] == std::vector<std::size_t>{0, 1, 0, 0, 1});
  CHECK(edge.above[4] == 1);
  CHECK(edge.below[4] == 1);
  CHECK(edge.overflow() == 2);
  CHECK_THROWS_AS(reg::factor_histogram(snapshot_of(0, {}), {0.1, 0.1, 5}), ValidationError);
  CHECK_THROWS_AS(reg::factor_histogram(snapshot_of(0, {}), {0, 1, 0}), ValidationError);
}

TEST_CASE("snapshot log round trip") {
  Fixture f;
  f.add("a", Tensor::vector({1}), 0.3, Category::bn_gamma);
  f.add("b", Tensor::vector({1}), -7.0, Category::dense_kernel);
  reg::RegConfig cfg;
  std::vector<reg::RegSnapshot> snaps{reg::take_snapshot(0, f.ps, f.factors, cfg)};
  f.ps.value(f.factors[0].theta)[0] = 0.1 / 3;
  snaps.push_back(reg::take_snapshot(5, f.ps, f.factors, cfg));
  auto path = std::filesystem::temp_directory_path() / "adareg_snapshot_roundtrip.csv";
  reg::write_snapshot_log(path, snaps);
  auto back = reg::read_snapshot_log(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].iteration == 5);
  CHECK(back[1].factors[0].theta == 0.1 / 3);
  CHECK(back[1].factors[0].lambda == snaps[1].factors[0].lambda);
  CHECK(back[0].factors[1].category == Category::dense_kernel);
  CHECK(back[0].factors[1].lambda == 0.0);
}
