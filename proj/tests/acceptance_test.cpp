// Acceptance suite: one pass/fail line per criterion, run via ctest. The
// trained toy oracle and the optimized perturbation are computed once and
// shared across criteria; the model checkpoint is cached on disk so repeated
// runs skip the training cost.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "csteer/artifacts.hpp"
#include "csteer/config.hpp"
#include "csteer/defense.hpp"
#include "csteer/harness.hpp"
#include "csteer/metrics.hpp"
#include "csteer/optimizer.hpp"
#include "support.hpp"

using namespace csteer;
namespace fs = std::filesystem;

namespace {

void report(int criterion, const std::string& name, bool ok) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, name.c_str());
  std::fflush(stdout);
}

MaliciousObjective mini_case() {
  return load_case_file(std::string(CSTEER_SOURCE_DIR) + "/data/cases/st_mini.case");
}

std::vector<DatasetItem> eval_items() {
  return load_dataset(std::string(CSTEER_SOURCE_DIR) + "/data/datasets/mini_eval.jsonl");
}

std::string carrier_text() {
  std::ifstream in(std::string(CSTEER_SOURCE_DIR) + "/data/carriers/mini_tool.mini");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The default-config optimized perturbation, shared by criteria 6 and 7.
const std::pair<Perturbation, OptimizationTrace>& optimized_default() {
  static const auto result = [] {
    auto oracle = test::desk_oracle();
    OptimizerConfig opt_cfg;  // top-k 400, 10 adversarial + 2 keyword tokens, seed 100
    LossConfig loss_cfg;      // h 2, r 0.4
    NoiseProfile noise;       // 5 variants, 20-80 tokens
    return optimize(mini_case(), *oracle, opt_cfg, loss_cfg, noise);
  }();
  return result;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("criterion 1: gradient fidelity against central finite differences") {
  auto oracle = test::desk_oracle();
  auto objective = mini_case();
  NoiseProfile noise;
  noise.n_variants = 2;
  noise.seed = 41;
  auto tasks = build_tasks(objective, noise, oracle.get());

  // splice variants as the optimizer does, with the target-primed keywords so
  // the scored probabilities are away from the clamp
  Perturbation p;
  p.keyword_tokens = oracle->encode("del all").ids;
  p.adversarial_tokens = oracle->encode("tmp old keep fast note 3").ids;
  const auto run = p.run();

  const auto cond = oracle->encode(tasks[0].conditional).ids;
  const auto marker = oracle->encode("#").ids;
  const auto nl = oracle->encode("\n").ids;
  std::vector<TokenSequence> variants;
  for (const auto& task : tasks) {
    TokenSequence seq;
    seq.ids = cond;
    seq.ids.insert(seq.ids.end(), marker.begin(), marker.end());
    seq.ids.insert(seq.ids.end(), run.begin(), run.end());
    seq.ids.insert(seq.ids.end(), nl.begin(), nl.end());
    const auto ctx = oracle->encode(task.context).ids;
    seq.ids.insert(seq.ids.end(), ctx.begin(), ctx.end());
    const auto pos = oracle->encode(task.position).ids;
    seq.ids.insert(seq.ids.end(), pos.begin(), pos.end());
    variants.push_back(std::move(seq));
  }
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < run.size(); ++i) {
    slots.push_back(cond.size() + marker.size() + i);
  }

  const auto target = oracle->encode(objective.target_code);
  LossConfig loss_cfg;
  const auto lg = oracle->loss_and_grads(variants, slots, target, loss_cfg);

  Rng rng(2025);
  const double step = 1e-4;
  bool ok = std::isfinite(lg.loss);
  int checked = 0;
  double max_rel = 0.0;
  for (int pair = 0; pair < 12; ++pair) {
    const auto s = static_cast<std::size_t>(rng.below(slots.size()));
    const int dim =
        static_cast<int>(rng.below(static_cast<std::uint64_t>(oracle->embedding_dim())));
    const double up =
        oracle->loss_with_embedding_nudge(variants, slots, target, loss_cfg, s, dim, step);
    const double dn =
        oracle->loss_with_embedding_nudge(variants, slots, target, loss_cfg, s, dim, -step);
    const double fd = (up - dn) / (2.0 * step);
    const double an = lg.grads[s].grad[static_cast<std::size_t>(dim)];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    max_rel = std::max(max_rel, rel);
    CHECK(rel <= 1e-3);
    ok = ok && rel <= 1e-3;
    ++checked;
  }
  CHECK(checked >= 10);
  char rel_buf[32];
  std::snprintf(rel_buf, sizeof(rel_buf), "%.2e", max_rel);
  report(1, std::string("gradient fidelity (12 pairs, max rel err ") + rel_buf + ")",
         ok && checked >= 10);
}

TEST_CASE("criterion 2: brute-force equivalence at exhaustive top-k, l = 1") {
  auto oracle = test::desk_oracle();
  auto objective = mini_case();
  NoiseProfile noise;
  noise.n_variants = 2;
  noise.min_tokens = 10;
  noise.max_tokens = 25;
  noise.seed = 17;
  auto tasks = build_tasks(objective, noise, oracle.get());

  OptimizerConfig cfg;
  cfg.adversarial_length = 1;
  cfg.n_keywords = 0;
  cfg.top_k = oracle->vocab_size();  // covers the whole eligible vocabulary
  LossConfig loss_cfg;

  Perturbation p0;
  p0.adversarial_tokens = oracle->encode("tmp").ids;
  auto [p, trace] = optimize_adversarial(tasks, objective, p0, *oracle, cfg, loss_cfg);

  double best_loss = 1e300;
  std::set<TokenId> argmins;
  for (TokenId id : build_token_filter(*oracle).ids()) {
    Perturbation q = p0;
    q.adversarial_tokens[0] = id;
    const double l = compute_loss(tasks, objective, q, *oracle, loss_cfg);
    if (l < best_loss) {
      best_loss = l;
      argmins = {id};
    } else if (l == best_loss) {
      argmins.insert(id);
    }
  }

  const bool loss_equal = trace.final_loss == best_loss;
  const bool token_in_argmin = argmins.count(p.adversarial_tokens[0]) == 1;
  const bool unique_match =
      argmins.size() != 1 || p.adversarial_tokens[0] == *argmins.begin();
  CHECK(loss_equal);
  CHECK(token_in_argmin);
  CHECK(unique_match);
  report(2, "brute-force equivalence (exact argmin over eligible vocabulary)",
         loss_equal && token_in_argmin && unique_match);
}

TEST_CASE("criterion 3: strictly decreasing accepted losses over 20 randomized runs") {
  auto oracle = test::desk_oracle();
  auto objective = mini_case();
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    OptimizerConfig cfg;
    cfg.adversarial_length = 2;
    cfg.n_keywords = 1;
    cfg.top_k = 12;
    cfg.max_passes = 4;
    cfg.seed = seed;
    LossConfig loss_cfg;
    NoiseProfile noise;
    noise.seed = seed;
    noise.n_variants = 1;
    noise.min_tokens = 10;
    noise.max_tokens = 25;

    auto [p, trace] = optimize(objective, *oracle, cfg, loss_cfg, noise);
    double prev = trace.initial_loss;
    for (const auto& step : trace.steps) {
      const bool strict = step.accepted && step.new_loss < step.old_loss &&
                          step.old_loss == prev;
      CHECK(strict);
      ok = ok && strict;
      prev = step.new_loss;
    }
    CHECK(trace.final_loss <= trace.initial_loss);
    ok = ok && trace.final_loss <= trace.initial_loss;
  }
  report(3, "monotone optimization traces (20 randomized runs)", ok);
}

TEST_CASE("criterion 4: loss reduction identities") {
  test::StubOracle stub;
  stub.set_step(0, {{"del", 0.37}, {"all", 0.22}});
  stub.set_step(1, {{"all", 0.21}});
  stub.set_step(2, {{")", 0.11}});

  MaliciousObjective obj;
  obj.identifier = "stub";
  obj.language = CaseLanguage::mini;
  obj.conditional_code = "def trg(va)\n";
  obj.target_position_code = "out = trg(";
  obj.target_code = "del all)";

  std::vector<TaskCode> tasks(2);
  tasks[0] = {"def trg(va)\n", "", "out = trg("};
  tasks[1] = {"def trg(va)\n", "va = 1\n", "out = trg("};

  Perturbation p;
  p.adversarial_tokens = stub.encode("tmp old").ids;

  // r = 0 equals the plain per-token sum within 1e-12
  LossConfig zero;
  zero.enhancement_rate = 0.0;
  const auto target_ids = stub.encode(obj.target_code).ids;
  const auto dists = stub.step_distributions({}, 0, 3);
  double plain = 0.0;
  for (std::size_t i = 0; i < target_ids.size(); ++i) {
    plain += std::log(1.0 - dists[i][static_cast<std::size_t>(target_ids[i])]);
  }
  const double at_zero = compute_loss(tasks, obj, p, stub, zero);
  const bool r0_ok = std::abs(at_zero - plain) <= 1e-12;
  CHECK(r0_ok);

  // single-token target with h = 1: blended equals base for any r
  MaliciousObjective single = obj;
  single.target_code = "del";
  LossConfig base_cfg;
  base_cfg.enhancement_rate = 0.0;
  const double base = compute_loss(tasks, single, p, stub, base_cfg);
  bool h1_ok = true;
  for (double r : {0.05, 0.4, 1.0, 2.5, 10.0}) {
    LossConfig cfg;
    cfg.enhanced_tokens = 1;
    cfg.enhancement_rate = r;
    const double blended = compute_loss(tasks, single, p, stub, cfg);
    h1_ok = h1_ok && std::abs(blended - base) <= 1e-12;
    CHECK(std::abs(blended - base) <= 1e-12);
  }
  report(4, "reduction identities (r=0 exact, h=1 single-token blend)", r0_ok && h1_ok);
}

TEST_CASE("criterion 5: metric arithmetic on fixed lists") {
  const std::vector<double> asrs = {0.1, 0.5, 0.9};
  const bool mid_ok = nbr(asrs, 0.2) == 1.0 - 1.0 / 3.0 && stf(asrs, 0.8) == 0.9 / 3.0;
  CHECK(nbr(asrs, 0.2) == 1.0 - 1.0 / 3.0);
  CHECK(stf(asrs, 0.8) == 0.9 / 3.0);
  CHECK(nbr(asrs, 0.2) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(stf(asrs, 0.8) == doctest::Approx(0.3).epsilon(1e-12));

  const bool ones_ok = nbr({1.0, 1.0, 1.0}, 0.2) == 1.0 && stf({1.0, 1.0, 1.0}, 0.8) == 1.0;
  const bool zeros_ok = nbr({0.0, 0.0, 0.0}, 0.2) == 0.0 && stf({0.0, 0.0, 0.0}, 0.8) == 0.0;
  CHECK(ones_ok);
  CHECK(zeros_ok);
  report(5, "metric arithmetic (nbr/stf at r1=0.2, r2=0.8)", mid_ok && ones_ok && zeros_ok);
}

TEST_CASE("criterion 6: desk-scale end-to-end attack") {
  auto oracle = test::desk_oracle();
  const auto& [perturbation, trace] = optimized_default();
  const auto objective = mini_case();
  const auto items = eval_items();
  REQUIRE(items.size() >= 50);

  const bool budget_ok = perturbation.token_count() == 12 &&
                         perturbation.adversarial_tokens.size() == 10 &&
                         perturbation.keyword_tokens.size() == 2;
  CHECK(budget_ok);
  CHECK(trace.final_loss < trace.initial_loss);

  // keyword provenance: both selected keywords come from the declared pool
  const auto pool = keyword_pool(objective, *oracle);
  for (TokenId key : perturbation.keyword_tokens) {
    CHECK(std::count(pool.begin(), pool.end(), key) == 1);
  }

  const std::string carrier = carrier_text();
  const auto injected = inject(carrier, perturbation, {}, {}, *oracle);

  DecodeConfig greedy;
  JudgeConfig judge_cfg;
  const auto attack =
      run_case(objective, perturbation, items, injected, *oracle, greedy, judge_cfg);
  const auto clean = run_case(objective, perturbation, items, clean_context(carrier),
                              *oracle, greedy, judge_cfg);

  CHECK(attack.n_trials >= 50);
  CHECK(attack.asr >= 0.80);
  CHECK(clean.asr <= 0.10);
  const bool ok = attack.n_trials >= 50 && attack.asr >= 0.80 && clean.asr <= 0.10 &&
                  budget_ok;
  report(6,
         "end-to-end attack (ASR " + std::to_string(attack.asr) + " over " +
             std::to_string(attack.n_trials) + " contexts, clean " +
             std::to_string(clean.asr) + ")",
         ok);
}

TEST_CASE("criterion 7: removal-sweep endpoints and 21-point default grid") {
  auto oracle = test::desk_oracle();
  const auto& [perturbation, trace] = optimized_default();
  const auto objective = mini_case();
  const auto items = eval_items();
  const std::string carrier = carrier_text();
  const auto injected = inject(carrier, perturbation, {}, {}, *oracle);

  DecodeConfig greedy;
  JudgeConfig judge_cfg;
  RemovalSweepConfig cfg;  // default fractions, 3 repeats
  const auto curve = removal_sweep(injected, objective, perturbation, items, *oracle, cfg,
                                   greedy, judge_cfg);

  const auto injected_case =
      run_case(objective, perturbation, items, injected, *oracle, greedy, judge_cfg);
  const auto clean_case = run_case(objective, perturbation, items, clean_context(carrier),
                                   *oracle, greedy, judge_cfg);

  const bool grid_ok = curve.size() == 21;
  const bool left_ok = curve.front().fraction == 0.0 &&
                       curve.front().mean_asr == injected_case.asr;
  const bool right_ok =
      curve.back().fraction == 1.0 && curve.back().mean_asr == clean_case.asr;
  CHECK(grid_ok);
  CHECK(left_ok);
  CHECK(right_ok);
  report(7, "defense endpoints (asr(0)=injected, asr(1)=clean, 21 points)",
         grid_ok && left_ok && right_ok);
}

TEST_CASE("criterion 8: byte-identical artifacts from repeated cmd runs") {
  auto oracle = test::desk_oracle();
  const fs::path dir = "acceptance_repro";
  fs::create_directories(dir);
  save_checkpoint(*oracle, (dir / "model.bin").string());

  std::ofstream cs(dir / "case.case");
  cs << slurp(std::string(CSTEER_SOURCE_DIR) + "/data/cases/st_mini.case");
  cs.close();
  std::ofstream carrier(dir / "carrier.mini");
  carrier << carrier_text();
  carrier.close();
  auto items = eval_items();
  items.resize(30);
  save_dataset(items, (dir / "eval.jsonl").string());

  const std::string config_text = std::string("{\n") +
      "  \"seed\": 100,\n"
      "  \"output_dir\": \"run_out\",\n"
      "  \"oracle\": {\"kind\": \"checkpoint\", \"checkpoint\": \"model.bin\"},\n"
      "  \"case_template\": \"case.case\",\n"
      "  \"dataset\": \"eval.jsonl\",\n"
      "  \"carrier\": \"carrier.mini\",\n"
      "  \"optimizer\": {\"top_k\": 40, \"adversarial_length\": 4, \"n_keywords\": 1,"
      " \"max_passes\": 3, \"seed\": 100},\n"
      "  \"noise\": {\"n_variants\": 2, \"min_tokens\": 10, \"max_tokens\": 25}\n"
      "}\n";

  auto run_once = [&] {
    auto cfg = parse_run_config(config_text, dir.string());
    auto opt = cmd_optimize(cfg);
    auto eval = cmd_evaluate(cfg, opt.perturbation_path);
    return std::tuple<std::string, double, double>(slurp(opt.perturbation_path),
                                                   eval.attack_asr, eval.clean_asr);
  };

  const auto [bytes_a, attack_a, clean_a] = run_once();
  const auto [bytes_b, attack_b, clean_b] = run_once();
  const bool identical = bytes_a == bytes_b && !bytes_a.empty();
  const bool metrics_equal = attack_a == attack_b && clean_a == clean_b;
  CHECK(identical);
  CHECK(metrics_equal);
  report(8, "reproducibility (byte-identical perturbation, identical metrics)",
         identical && metrics_equal);

  std::error_code ec;
  fs::remove_all(dir, ec);
}

TEST_CASE("criterion 9: injection reversibility across forms and carriers") {
  auto oracle = test::desk_oracle();
  auto lang = oracle->language();
  Rng rng(808);
  CorpusConfig ccfg;

  int verified = 0;
  bool ok = true;
  int attempts = 0;
  while (verified < 100 && attempts < 400) {
    ++attempts;
    const std::string carrier = lang->generate_doc(rng, ccfg);

    Perturbation p;
    while (static_cast<int>(p.adversarial_tokens.size()) < 6) {
      const auto id = static_cast<TokenId>(
          rng.below(static_cast<std::uint64_t>(oracle->vocab_size())));
      const auto& surface = oracle->decode({&id, 1});
      if (surface.empty() || surface.find('\n') != std::string::npos ||
          surface.find('"') != std::string::npos) {
        continue;
      }
      p.adversarial_tokens.push_back(id);
    }

    bool all_forms = true;
    for (int k = 0; k < 3; ++k) {
      CarrierForm form;
      form.kind = static_cast<CarrierFormKind>(k);
      InjectedContext ctx;
      try {
        ctx = inject(carrier, p, form, {}, *oracle);
      } catch (const Error&) {
        all_forms = false;  // e.g. no comment anchor in this carrier
        break;
      }
      const bool reversible = ctx.without_injection() == carrier;
      CHECK(reversible);
      ok = ok && reversible;
    }
    if (all_forms) {
      ++verified;
    }
  }
  CHECK(verified >= 100);
  report(9,
         "injection reversibility (" + std::to_string(verified) +
             " carriers x 3 forms, byte-exact)",
         ok && verified >= 100);
}
