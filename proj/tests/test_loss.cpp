#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "csteer/loss.hpp"
#include "csteer/optimizer.hpp"
#include "support.hpp"

using namespace csteer;

namespace {

MaliciousObjective mini_objective() {
  MaliciousObjective obj;
  obj.identifier = "st_mini";
  obj.language = CaseLanguage::mini;
  obj.conditional_code = "def trg(va)\n";
  obj.target_position_code = "out = trg(";
  obj.target_code = "del all)";
  return obj;
}

std::vector<TaskCode> stub_tasks(int n) {
  std::vector<TaskCode> tasks;
  for (int i = 0; i < n; ++i) {
    TaskCode t;
    t.conditional = "def trg(va)\n";
    t.context = i == 0 ? "" : "va = " + std::to_string(i) + "\n";
    t.position = "out = trg(";
    tasks.push_back(t);
  }
  return tasks;
}

}  // namespace

TEST_CASE("two-token hand arithmetic matches the blended loss") {
  test::StubOracle oracle;
  // p(t1 | task) = 0.5, p(t2 | task) = 0.4, p(t2 | task, t1) = 0.25
  oracle.set_step(0, {{"del", 0.5}, {"all", 0.4}});
  oracle.set_step(1, {{"all", 0.25}});

  auto obj = mini_objective();
  obj.target_code = "del all";  // two tokens
  Perturbation p;
  p.adversarial_tokens = {*oracle.encode("tmp").ids.begin()};

  LossConfig cfg;
  cfg.enhanced_tokens = 2;
  cfg.enhancement_rate = 0.4;

  const double l_base = std::log(1 - 0.5) + std::log(1 - 0.25);
  const double l_e = 0.5 * (std::log(1 - 0.5) + (std::log(1 - 0.4) + std::log(1 - 0.25)));
  const double expected = (l_base + 0.4 * l_e) / 1.4;

  const double got = compute_loss(stub_tasks(1), obj, p, oracle, cfg);
  CHECK(std::abs(got - expected) <= 1e-12);
}

TEST_CASE("r=0 reduces exactly to the plain loss") {
  test::StubOracle oracle;
  oracle.set_step(0, {{"del", 0.37}});
  oracle.set_step(1, {{"all", 0.21}});
  oracle.set_step(2, {{")", 0.11}});

  auto obj = mini_objective();
  Perturbation p;
  p.adversarial_tokens = oracle.encode("tmp old").ids;

  LossConfig zero;
  zero.enhancement_rate = 0.0;
  const double got = compute_loss(stub_tasks(2), obj, p, oracle, zero);

  // plain sum of log(1 - p(t_i | prefix)) over the three target tokens
  auto ids = oracle.encode("del all)").ids;
  auto dists = oracle.step_distributions({}, 0, 3);
  double expected = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    expected += std::log(1.0 - dists[i][static_cast<std::size_t>(ids[i])]);
  }
  CHECK(got == expected);
}

TEST_CASE("single-token target with h=1 blends to the base loss") {
  test::StubOracle oracle;
  oracle.set_step(0, {{"del", 0.6}});
  auto obj = mini_objective();
  obj.target_code = "del";
  Perturbation p;
  p.adversarial_tokens = {*oracle.encode("tmp").ids.begin()};

  LossConfig base_cfg;
  base_cfg.enhancement_rate = 0.0;
  const double base = compute_loss(stub_tasks(1), obj, p, oracle, base_cfg);

  for (double r : {0.1, 0.4, 1.0, 3.5}) {
    LossConfig cfg;
    cfg.enhanced_tokens = 1;
    cfg.enhancement_rate = r;
    CHECK(std::abs(compute_loss(stub_tasks(1), obj, p, oracle, cfg) - base) <= 1e-12);
  }
}

TEST_CASE("saturated probabilities clamp to a finite floor") {
  test::StubOracle oracle;
  oracle.set_step(0, {{"del", 1.0}});
  oracle.set_step(1, {{"all", 1.0}});
  oracle.set_step(2, {{")", 1.0}});
  auto obj = mini_objective();
  Perturbation p;
  p.adversarial_tokens = {*oracle.encode("tmp").ids.begin()};

  LossConfig cfg;
  cfg.enhancement_rate = 0.0;
  const double got = compute_loss(stub_tasks(1), obj, p, oracle, cfg);
  CHECK(got == doctest::Approx(3.0 * std::log(cfg.clamp_eps)).epsilon(1e-9));
  CHECK(std::isfinite(got));
}

TEST_CASE("mean aggregation over variants") {
  test::StubOracle oracle;
  oracle.set_step(0, {{"del", 0.3}});
  auto obj = mini_objective();
  obj.target_code = "del";
  Perturbation p;
  p.adversarial_tokens = {*oracle.encode("tmp").ids.begin()};
  LossConfig cfg;

  // the stub ignores context, so every variant scores the same and the mean
  // equals the single-variant loss
  const double one = compute_loss(stub_tasks(1), obj, p, oracle, cfg);
  const double five = compute_loss(stub_tasks(5), obj, p, oracle, cfg);
  CHECK(one == doctest::Approx(five).epsilon(1e-15));
}
