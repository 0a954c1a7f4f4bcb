#include <doctest.h>

#include <array>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "adareg/adaptive_reg.hpp"
#include "adareg/checkpoint.hpp"
#include "adareg/error.hpp"
#include "adareg/grad_check.hpp"
#include "adareg/reid_model.hpp"

using namespace adareg;
using namespace adareg::ad;

namespace {

Tensor random_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor t({n, 1, h, w});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.height = 16;
  c.width = 8;
  c.channels = {2, 3, 4};
  c.stripe_dim = 2;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST_CASE("objective module clips before batch norm") {
  Rng rng(1);
  ParameterStore ps;
  model::ModelConfig cfg;
  model::ObjectiveModule head(ps, "head", 1, cfg, rng);
  Tape tape(ps);
  auto out = head.forward(tape, tape.constant(Tensor({2, 1, 1, 1}, {7, -1})), nn::Mode::train, nullptr);
  CHECK(out.embedding.value() == Tensor::matrix(2, 1, {6, 0}));
  CHECK(out.logits.shape() == Shape{2, 1});
  std::vector<nn::ParamDescriptor> desc;
  head.describe(desc);
  for (const auto& d : desc) CHECK_FALSE((d.layer == nn::LayerKind::dense && d.field == nn::FieldKind::bias));
}

TEST_CASE("objective module grad_check") {
  Rng rng(2);
  ParameterStore ps;
  model::ModelConfig cfg;
  cfg.num_classes = 3;
  model::ObjectiveModule head(ps, "head", 4, cfg, rng);
  std::mt19937_64 r(3);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  Tensor fm({4, 4, 2, 2});
  for (auto& v : fm.data()) v = u(r);
  auto x = ps.add("x", fm, ParamRole::weight);
  std::vector<ParamId> ids{x};
  for (ParamId id = 0; id < ps.size(); ++id)
    if (ps.role(id) == ParamRole::weight && id != x) ids.push_back(id);
  auto rep = grad_check(
      [&](Tape& t) {
        auto o = head.forward(t, t.param(x), nn::Mode::train, nullptr);
        return add(sum(square(o.logits)), sum(o.embedding));
      },
      ps, ids, {.step = 1e-5, .tolerance = 1e-5});
  CHECK(rep.passed);
}

TEST_CASE("stripes partition the feature map") {
  ParameterStore ps;
  Tape tape(ps);
  Tensor fm({2, 3, 4, 2});
  std::iota(fm.data().begin(), fm.data().end(), 0.0);
  auto x = tape.constant(fm);
  auto halves = model::slice_stripes(x, 2);
  REQUIRE(halves.size() == 2);
  CHECK(halves[0].shape() == Shape{2, 3, 2, 2});
  CHECK(halves[0].value().at(0, 0, 0, 0) == 0.0);
  CHECK(halves[1].value().at(0, 0, 0, 0) == 4.0);
  CHECK(concat(halves, 2).value() == fm);
  CHECK(model::slice_stripes(x, 1)[0].value() == fm);
  CHECK_THROWS_AS(model::slice_stripes(x, 3), ValidationError);
}

TEST_CASE("model topology") {
  Rng rng(1);
  ParameterStore ps;
  model::ModelConfig cfg;
  cfg.num_classes = 5;
  model::ReidModel m(cfg, ps, rng);
  CHECK(m.embedding_dim() == 64);
  CHECK(m.num_modules() == 3);
  CHECK(m.backbone().size() == 2);
  CHECK(m.reductions().size() == 2);

  auto images = random_images(4, 32, 16, 1);
  Tape tape(ps);
  auto out = m.forward(tape, tape.constant(images), nn::Mode::train);
  REQUIRE(out.modules.size() == 3);
  CHECK(out.modules[0].embedding.shape() == Shape{4, 32});
  CHECK(out.modules[1].embedding.shape() == Shape{4, 16});
  CHECK(out.modules[2].logits.shape() == Shape{4, 5});
  CHECK(out.embedding.shape() == Shape{4, 64});

  auto e = m.embed(ps, images);
  CHECK(e.shape() == Shape{4, 64});
  Tensor twice({2, 1, 32, 16});
  for (std::size_t i = 0; i < 512; ++i) twice[i] = twice[512 + i] = images[i];
  auto same = m.embed(ps, twice);
  for (std::size_t k = 0; k < 64; ++k) CHECK(same.at(0, k) == same.at(1, k));
}

TEST_CASE("model parameters partition into the five categories") {
  Rng rng(1);
  ParameterStore ps;
  model::ReidModel m(model::ModelConfig{}, ps, rng);
  std::set<ParamId> described;
  std::array<std::size_t, 5> per{};
  for (const auto& d : m.descriptors()) {
    CHECK(described.insert(d.id).second);
    ++per[static_cast<std::size_t>(reg::classify_category(d.layer, d.field))];
  }
  CHECK(described.size() == ps.ids(ParamRole::weight).size());
  for (auto n : per) CHECK(n > 0);
  // 4 block convs + 2 reductions, 4 block BNs + 3 head BNs, 3 classifiers
  CHECK(per == std::array<std::size_t, 5>{6, 6, 7, 7, 3});
}

TEST_CASE("regional block does not share parameters with the global branch") {
  Rng rng(3);
  ParameterStore ps;
  model::ReidModel m(model::ModelConfig{}, ps, rng);
  auto images = random_images(4, 32, 16, 2);
  auto before = m.embed(ps, images);
  std::vector<nn::ParamDescriptor> regional;
  m.regional_block().describe(regional);
  for (const auto& d : regional)
    for (auto& v : ps.value(d.id).data()) v = v * 3.0 + 0.5;
  auto after = m.embed(ps, images);
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t k = 0; k < 32; ++k) CHECK(after.at(n, k) == before.at(n, k));
  }
  bool regional_changed = false;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t k = 32; k < 64; ++k) regional_changed |= after.at(n, k) != before.at(n, k);
  CHECK(regional_changed);
  CHECK(m.global_block().conv().kernel() != m.regional_block().conv().kernel());
}

TEST_CASE("model config validation") {
  auto cfg = small_config();
  cfg.height = 12;
  CHECK_THROWS_AS(model::validate(cfg), ValidationError);
  cfg = small_config();
  cfg.stripes = 3;
  CHECK_THROWS_AS(model::validate(cfg), ValidationError);
  cfg = small_config();
  cfg.channels = {4, 4, 4, 4, 4};
  CHECK_THROWS_AS(model::validate(cfg), ValidationError);
  cfg = small_config();
  cfg.clip_lo = 6;
  CHECK_THROWS_AS(model::validate(cfg), ValidationError);
  CHECK_NOTHROW(model::validate(small_config()));
}

TEST_CASE("full model grad_check on a small model") {
  Rng rng(4);
  ParameterStore ps;
  auto cfg = small_config();
  model::ReidModel m(cfg, ps, rng);
  reg::RegConfig rc;
  auto factors = reg::attach_factors(ps, m.descriptors(), rc);
  auto images = random_images(4, 16, 8, 5);
  std::vector<ParamId> all;
  for (ParamId id = 0; id < ps.size(); ++id)
    if (ps.trainable(id)) all.push_back(id);
  auto rep = grad_check(
      [&](Tape& t) {
        auto out = m.forward(t, t.constant(images), nn::Mode::train);
        Var total = reg::adaptive_penalty(t, factors);
        for (auto& o : out.modules) total = add(total, add(sum(square(o.logits)), mean(o.embedding)));
        return total;
      },
      ps, all, {.step = 1e-5, .tolerance = 1e-5});
  CHECK(rep.passed);
}

TEST_CASE("checkpoint round trip is byte exact") {
  Rng rng(6);
  ParameterStore ps;
  model::ReidModel m(small_config(), ps, rng);
  auto factors = reg::attach_factors(ps, m.descriptors(), reg::RegConfig{});
  ps.value(factors[3].theta)[0] = -0.123456789;
  model::Checkpoint ck{"seed = 3\n", 42, ps, model::factor_records(ps, factors)};
  const auto bytes = model::encode(ck);
  auto path = std::filesystem::temp_directory_path() / "adareg_ck_roundtrip.bin";
  model::save_checkpoint(path, ck);
  auto back = model::load_checkpoint(path);
  std::filesystem::remove(path);
  CHECK(back.params == ps);
  CHECK(back.factors == ck.factors);
  CHECK(back.iteration == 42);
  CHECK(back.config == "seed = 3\n");
  CHECK(model::encode(back) == bytes);
  CHECK(bytes.substr(0, 8) == "ADAREGCK");

  CHECK_THROWS_AS(model::decode(bytes.substr(0, bytes.size() - 3)), ValidationError);
  CHECK_THROWS_AS(model::decode(bytes + "x"), ValidationError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  CHECK_THROWS_AS(model::decode(wrong), ValidationError);
  CHECK_THROWS_AS(model::load_checkpoint("/nonexistent/ck.bin"), IoError);
}

TEST_CASE("restore_into copies matching arrays only") {
  Rng r1(1), r2(2);
  ParameterStore a, b;
  model::ReidModel ma(small_config(), a, r1);
  model::ReidModel mb(small_config(), b, r2);
  CHECK_FALSE(a == b);
  model::restore_into(a, b);
  CHECK(a == b);
  auto cfg = small_config();
  cfg.channels = {2, 3, 5};
  ParameterStore c;
  model::ReidModel mc(cfg, c, r1);
  CHECK_THROWS_AS(model::restore_into(a, c), ValidationError);
}
