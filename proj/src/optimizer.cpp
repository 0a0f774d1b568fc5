#include "csteer/optimizer.hpp"

#include <algorithm>
#include <cassert>
#include <numeric>
#include <set>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

std::string placement_name(Placement p) {
  switch (p) {
    case Placement::key_first: return "key_first";
    case Placement::key_last: return "key_last";
    case Placement::interleaved: return "interleaved";
  }
  return "key_first";
}

Placement parse_placement(const std::string& name) {
  if (name == "key_first") return Placement::key_first;
  if (name == "key_last") return Placement::key_last;
  if (name == "interleaved") return Placement::interleaved;
  throw Error(ErrorCode::config_invalid, "unknown placement '" + name + "'");
}

std::string comment_marker(CaseLanguage language) {
  switch (language) {
    case CaseLanguage::mini:
    case CaseLanguage::python_like:
      return "#";
    case CaseLanguage::c_cpp:
    case CaseLanguage::java_like:
      return "//";
  }
  return "#";
}

// ---------------------------------------------------------------------------
// Perturbation layout
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> key_positions(std::size_t n_keys, std::size_t total,
                                       Placement placement) {
  std::vector<std::size_t> pos;
  pos.reserve(n_keys);
  switch (placement) {
    case Placement::key_first:
      for (std::size_t i = 0; i < n_keys; ++i) pos.push_back(i);
      break;
    case Placement::key_last:
      for (std::size_t i = 0; i < n_keys; ++i) pos.push_back(total - n_keys + i);
      break;
    case Placement::interleaved: {
      std::size_t prev = 0;
      for (std::size_t i = 0; i < n_keys; ++i) {
        std::size_t p = ((i + 1) * total) / (n_keys + 1);
        if (i > 0 && p <= prev) {
          p = prev + 1;
        }
        pos.push_back(std::min(p, total - n_keys + i));
        prev = pos.back();
      }
      break;
    }
  }
  return pos;
}

}  // namespace

std::vector<TokenId> Perturbation::run() const {
  const std::size_t total = keyword_tokens.size() + adversarial_tokens.size();
  std::vector<TokenId> out(total, -1);
  const auto keys = key_positions(keyword_tokens.size(), total, placement);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    out[keys[i]] = keyword_tokens[i];
  }
  std::size_t a = 0;
  for (std::size_t i = 0; i < total; ++i) {
    if (out[i] < 0) {
      out[i] = adversarial_tokens[a++];
    }
  }
  return out;
}

std::vector<std::size_t> Perturbation::adversarial_offsets() const {
  const std::size_t total = keyword_tokens.size() + adversarial_tokens.size();
  std::vector<char> is_key(total, 0);
  for (std::size_t p : key_positions(keyword_tokens.size(), total, placement)) {
    is_key[p] = 1;
  }
  std::vector<std::size_t> out;
  out.reserve(adversarial_tokens.size());
  for (std::size_t i = 0; i < total; ++i) {
    if (!is_key[i]) {
      out.push_back(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// eligibility and candidate ranking
// ---------------------------------------------------------------------------

std::vector<TokenId> TokenFilter::ids() const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    if (eligible[i]) {
      out.push_back(static_cast<TokenId>(i));
    }
  }
  return out;
}

TokenFilter build_token_filter(const ModelOracle& oracle, bool forbid_newline) {
  TokenFilter filter;
  filter.eligible.assign(static_cast<std::size_t>(oracle.vocab_size()), 1);
  for (TokenId id : oracle.special_tokens()) {
    filter.eligible[static_cast<std::size_t>(id)] = 0;
  }
  if (forbid_newline) {
    for (TokenId id = 0; id < oracle.vocab_size(); ++id) {
      if (filter.eligible[static_cast<std::size_t>(id)] &&
          oracle.decode({&id, 1}).find('\n') != std::string::npos) {
        filter.eligible[static_cast<std::size_t>(id)] = 0;
      }
    }
  }
  return filter;
}

bool render_stable(const ModelOracle& oracle, std::span<const TokenId> run,
                   std::size_t slot, TokenId candidate) {
  std::vector<TokenId> probe(run.begin(), run.end());
  probe[slot] = candidate;
  try {
    return oracle.encode(oracle.decode(probe)).ids == probe;
  } catch (const Error&) {
    return false;
  }
}

std::vector<TokenId> candidate_tokens(const EmbeddingGradSlice& grad,
                                      const ModelOracle& oracle, TokenId current, int k,
                                      const TokenFilter& filter) {
  (void)current;  // (e' - x)^T G ranks identically to e'^T G
  if (k < 1) {
    throw Error(ErrorCode::config_invalid, "candidate count must be at least 1");
  }
  std::vector<std::pair<double, TokenId>> scored;
  scored.reserve(static_cast<std::size_t>(oracle.vocab_size()));
  for (TokenId id = 0; id < oracle.vocab_size(); ++id) {
    if (!filter.ok(id)) {
      continue;
    }
    const auto e = oracle.embedding(id);
    double s = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      s += e[i] * grad.grad[i];
    }
    scored.emplace_back(s, id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  std::vector<TokenId> out;
  out.reserve(std::min<std::size_t>(scored.size(), static_cast<std::size_t>(k)));
  for (const auto& [s, id] : scored) {
    if (static_cast<int>(out.size()) >= k) {
      break;
    }
    out.push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// task splicing
// ---------------------------------------------------------------------------

namespace {

/// Pre-encoded task segments with the perturbation comment line spliced after
/// the conditional. The conditional is shared across variants, so every run
/// token sits at the same absolute offset in every variant.
class Splicer {
 public:
  Splicer(const std::vector<TaskCode>& tasks, const MaliciousObjective& objective,
          const ModelOracle& oracle, std::size_t run_len)
      : oracle_(oracle) {
    if (tasks.empty()) {
      throw Error(ErrorCode::config_invalid, "no task variants to optimize over");
    }
    marker_ = oracle.encode(comment_marker(objective.language)).ids;
    newline_ = oracle.encode("\n").ids;
    target_ = oracle.encode(objective.target_code).ids;
    if (target_.empty()) {
      throw Error(ErrorCode::config_invalid, "target code encodes to nothing");
    }
    cond_ = oracle.encode(tasks[0].conditional).ids;
    for (const auto& task : tasks) {
      Pre pre;
      pre.ctx = oracle.encode(task.context).ids;
      pre.pos = oracle.encode(task.position).ids;
      const std::size_t total = 1 + cond_.size() + marker_.size() + run_len +
                                newline_.size() + pre.ctx.size() + pre.pos.size() +
                                target_.size();
      if (total > static_cast<std::size_t>(oracle.context_window())) {
        throw Error(ErrorCode::context_overflow,
                    "task variant with perturbation and target exceeds the window");
      }
      pre_.push_back(std::move(pre));
    }
    run_base_ = cond_.size() + marker_.size();
    run_len_ = run_len;
  }

  std::size_t n_variants() const { return pre_.size(); }
  std::size_t run_base() const { return run_base_; }
  const std::vector<TokenId>& target() const { return target_; }

  std::vector<TokenId> splice(std::size_t v, std::span<const TokenId> run) const {
    const Pre& p = pre_[v];
    std::vector<TokenId> ids;
    ids.reserve(cond_.size() + marker_.size() + run.size() + newline_.size() +
                p.ctx.size() + p.pos.size());
    ids.insert(ids.end(), cond_.begin(), cond_.end());
    ids.insert(ids.end(), marker_.begin(), marker_.end());
    ids.insert(ids.end(), run.begin(), run.end());
    ids.insert(ids.end(), newline_.begin(), newline_.end());
    ids.insert(ids.end(), p.ctx.begin(), p.ctx.end());
    ids.insert(ids.end(), p.pos.begin(), p.pos.end());
    return ids;
  }

  std::vector<std::size_t> slots(std::span<const std::size_t> run_offsets) const {
    std::vector<std::size_t> out;
    out.reserve(run_offsets.size());
    for (std::size_t off : run_offsets) {
      out.push_back(run_base_ + off);
    }
    return out;
  }

  /// Splice-stability guard: the composed text must lex back to the composed
  /// id sequence, otherwise the optimized ids would not survive injection.
  void verify_stability(std::span<const TokenId> run) const {
    for (std::size_t v = 0; v < pre_.size(); ++v) {
      const auto ids = splice(v, run);
      if (oracle_.encode(oracle_.decode(ids)).ids != ids) {
        throw Error(ErrorCode::tokenization_unstable,
                    "spliced task variant does not re-encode to the same tokens");
      }
    }
  }

  double variant_loss(std::size_t v, std::span<const TokenId> run,
                      const LossConfig& cfg) const {
    auto ids = splice(v, run);
    const std::size_t prefix_len = ids.size();
    ids.insert(ids.end(), target_.begin(), target_.end());
    const auto dists = oracle_.step_distributions(ids, prefix_len, target_.size());
    return assemble_loss(dists, target_, cfg);
  }

  double run_loss(std::span<const TokenId> run, const LossConfig& cfg,
                  ExecPolicy policy = ExecPolicy::serial) const {
    std::vector<double> losses(pre_.size());
    parallel_for(pre_.size(), policy,
                 [&](std::size_t v) { losses[v] = variant_loss(v, run, cfg); });
    double sum = 0.0;
    for (double l : losses) {
      sum += l;
    }
    return sum * (1.0 / static_cast<double>(pre_.size()));
  }

  std::vector<TokenSequence> spliced_sequences(std::span<const TokenId> run) const {
    std::vector<TokenSequence> out;
    out.reserve(pre_.size());
    for (std::size_t v = 0; v < pre_.size(); ++v) {
      TokenSequence seq;
      seq.ids = splice(v, run);
      out.push_back(std::move(seq));
    }
    return out;
  }

 private:
  struct Pre {
    std::vector<TokenId> ctx, pos;
  };
  const ModelOracle& oracle_;
  std::vector<TokenId> marker_, newline_, target_, cond_;
  std::vector<Pre> pre_;
  std::size_t run_base_ = 0;
  std::size_t run_len_ = 0;
};

struct PassOutcome {
  bool changed = false;
  bool hit_limit = false;
};

/// Greedy coordinate descent over the adversarial slots. `best` is the
/// running accepted loss; every acceptance strictly improves it.
PassOutcome adversarial_passes(const Splicer& spl, Perturbation& p, double& best,
                               OptimizationTrace& trace, int& pass_counter,
                               const ModelOracle& oracle, const OptimizerConfig& cfg,
                               const LossConfig& loss_cfg, const TokenFilter& base) {
  PassOutcome outcome;
  TokenSequence target_seq;
  target_seq.ids = spl.target();

  for (int pass = 0; pass < cfg.max_passes; ++pass, ++pass_counter) {
    bool changed = false;
    auto run = p.run();
    const auto offsets = p.adversarial_offsets();

    for (std::size_t slot_i = 0; slot_i < offsets.size(); ++slot_i) {
      const std::size_t off = offsets[slot_i];

      const auto seqs = spl.spliced_sequences(run);
      const std::vector<std::size_t> abs_slot = {spl.run_base() + off};
      const auto lg = oracle.loss_and_grads(seqs, abs_slot, target_seq, loss_cfg);

      TokenFilter slot_filter = base;
      for (TokenId id = 0; id < oracle.vocab_size(); ++id) {
        if (slot_filter.eligible[static_cast<std::size_t>(id)] &&
            !render_stable(oracle, run, off, id)) {
          slot_filter.eligible[static_cast<std::size_t>(id)] = 0;
        }
      }

      const auto cands =
          candidate_tokens(lg.grads[0], oracle, run[off], cfg.top_k, slot_filter);

      std::vector<double> losses(cands.size());
      parallel_for(cands.size(), cfg.policy, [&](std::size_t j) {
        std::vector<TokenId> probe(run.begin(), run.end());
        probe[off] = cands[j];
        losses[j] = spl.run_loss(probe, loss_cfg);
      });

      for (std::size_t j = 0; j < cands.size(); ++j) {
        if (losses[j] < best) {
          trace.steps.push_back({pass_counter, static_cast<int>(off), cands[j], best,
                                 losses[j], true});
          run[off] = cands[j];
          p.adversarial_tokens[slot_i] = cands[j];
          best = losses[j];
          changed = true;
        }
      }
    }

    if (changed) {
      outcome.changed = true;
      if (pass + 1 == cfg.max_passes) {
        outcome.hit_limit = true;
      }
    } else {
      break;
    }
  }
  return outcome;
}

std::vector<TokenId> keyword_search(const Splicer& spl, std::span<const TokenId> p_adv,
                                    const OptimizerConfig& cfg, const LossConfig& loss_cfg,
                                    const std::vector<TokenId>& pool) {
  const int n = cfg.n_keywords;
  auto loss_for_keys = [&](const std::vector<TokenId>& keys) {
    Perturbation q;
    q.keyword_tokens = keys;
    q.adversarial_tokens.assign(p_adv.begin(), p_adv.end());
    q.placement = cfg.placement;
    return q;
  };

  if (static_cast<int>(pool.size()) <= cfg.keyword_pool_cap) {
    // exhaustive grid over ordered n-tuples, enumerated in ascending-id order
    std::size_t total = 1;
    for (int i = 0; i < n; ++i) {
      total *= pool.size();
    }
    std::vector<double> losses(total);
    parallel_for(total, cfg.policy, [&](std::size_t idx) {
      std::vector<TokenId> keys(static_cast<std::size_t>(n));
      std::size_t rem = idx;
      for (int i = n - 1; i >= 0; --i) {
        keys[static_cast<std::size_t>(i)] = pool[rem % pool.size()];
        rem /= pool.size();
      }
      losses[idx] = spl.run_loss(loss_for_keys(keys).run(), loss_cfg);
    });
    std::size_t best_idx = 0;
    for (std::size_t idx = 1; idx < total; ++idx) {
      if (losses[idx] < losses[best_idx]) {
        best_idx = idx;
      }
    }
    std::vector<TokenId> keys(static_cast<std::size_t>(n));
    std::size_t rem = best_idx;
    for (int i = n - 1; i >= 0; --i) {
      keys[static_cast<std::size_t>(i)] = pool[rem % pool.size()];
      rem /= pool.size();
    }
    return keys;
  }

  // large pool: greedy, one keyword at a time
  std::vector<TokenId> keys;
  for (int i = 0; i < n; ++i) {
    std::vector<double> losses(pool.size());
    parallel_for(pool.size(), cfg.policy, [&](std::size_t j) {
      std::vector<TokenId> probe = keys;
      probe.push_back(pool[j]);
      losses[j] = spl.run_loss(loss_for_keys(probe).run(), loss_cfg);
    });
    std::size_t best_j = 0;
    for (std::size_t j = 1; j < pool.size(); ++j) {
      if (losses[j] < losses[best_j]) {
        best_j = j;
      }
    }
    keys.push_back(pool[best_j]);
  }
  return keys;
}

}  // namespace

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

double compute_loss(const std::vector<TaskCode>& tasks, const MaliciousObjective& objective,
                    const Perturbation& p, const ModelOracle& oracle, const LossConfig& cfg,
                    ExecPolicy policy) {
  if (tasks.empty()) {
    throw Error(ErrorCode::config_invalid, "compute_loss requires at least one task");
  }
  const auto run = p.run();
  Splicer spl(tasks, objective, oracle, run.size());
  return spl.run_loss(run, cfg, policy);
}

std::vector<TokenId> keyword_pool(const MaliciousObjective& objective,
                                  const ModelOracle& oracle) {
  std::vector<TokenId> pool;
  std::set<TokenId> seen(oracle.special_tokens().begin(), oracle.special_tokens().end());
  auto add_from = [&](const std::string& text) {
    for (TokenId id : oracle.encode(text).ids) {
      if (!seen.count(id)) {
        seen.insert(id);
        pool.push_back(id);
      }
    }
  };
  add_from(objective.target_code);
  add_from(objective.target_position_code);
  return pool;
}

std::vector<TokenId> select_keywords(const std::vector<TaskCode>& tasks,
                                     const MaliciousObjective& objective,
                                     std::span<const TokenId> p_adv,
                                     const ModelOracle& oracle,
                                     const OptimizerConfig& opt_cfg,
                                     const LossConfig& loss_cfg) {
  if (opt_cfg.n_keywords == 0) {
    return {};
  }
  auto pool = keyword_pool(objective, oracle);
  const auto filter = build_token_filter(oracle);
  std::erase_if(pool, [&](TokenId id) { return !filter.ok(id); });
  if (pool.empty()) {
    throw Error(ErrorCode::empty_pool,
                "target and position code encode to no usable keyword tokens");
  }
  std::sort(pool.begin(), pool.end());

  Splicer spl(tasks, objective, oracle,
              static_cast<std::size_t>(opt_cfg.n_keywords) + p_adv.size());
  return keyword_search(spl, p_adv, opt_cfg, loss_cfg, pool);
}

std::pair<Perturbation, OptimizationTrace> optimize_adversarial(
    const std::vector<TaskCode>& tasks, const MaliciousObjective& objective,
    const Perturbation& p0, const ModelOracle& oracle, const OptimizerConfig& opt_cfg,
    const LossConfig& loss_cfg) {
  if (static_cast<int>(p0.adversarial_tokens.size()) != opt_cfg.adversarial_length) {
    throw Error(ErrorCode::config_invalid,
                "initial adversarial part does not match the configured length");
  }
  Perturbation p = p0;
  const auto run = p.run();
  Splicer spl(tasks, objective, oracle, run.size());
  spl.verify_stability(run);

  OptimizationTrace trace;
  double best = spl.run_loss(run, loss_cfg);
  trace.initial_loss = best;

  const auto base = build_token_filter(oracle);
  int pass_counter = 0;
  const auto outcome =
      adversarial_passes(spl, p, best, trace, pass_counter, oracle, opt_cfg, loss_cfg, base);
  trace.final_loss = best;
  trace.pass_limit_reached = outcome.hit_limit;
  return {std::move(p), std::move(trace)};
}

std::pair<Perturbation, OptimizationTrace> optimize(const MaliciousObjective& objective,
                                                    const ModelOracle& oracle,
                                                    const OptimizerConfig& opt_cfg,
                                                    const LossConfig& loss_cfg,
                                                    const NoiseProfile& noise) {
  if (opt_cfg.adversarial_length < 1 || opt_cfg.top_k < 1 || opt_cfg.n_keywords < 0) {
    throw Error(ErrorCode::config_invalid, "optimizer config out of range");
  }
  const auto tasks = build_tasks(objective, noise, &oracle);

  const auto base = build_token_filter(oracle);
  const auto eligible = base.ids();
  if (eligible.empty()) {
    throw Error(ErrorCode::empty_pool, "no eligible vocabulary tokens");
  }

  Perturbation p;
  p.placement = opt_cfg.placement;
  Rng rng(derive_seed(opt_cfg.seed, "optimizer.init"));
  for (int i = 0; i < opt_cfg.adversarial_length; ++i) {
    p.adversarial_tokens.push_back(eligible[rng.below(eligible.size())]);
  }
  if (opt_cfg.n_keywords > 0) {
    p.keyword_tokens =
        select_keywords(tasks, objective, p.adversarial_tokens, oracle, opt_cfg, loss_cfg);
  }

  Splicer spl(tasks, objective, oracle, p.run().size());
  spl.verify_stability(p.run());

  OptimizationTrace trace;
  double best = spl.run_loss(p.run(), loss_cfg);
  trace.initial_loss = best;

  int pass_counter = 0;
  bool hit_limit = false;
  for (int round = 0; round < opt_cfg.max_passes; ++round) {
    bool round_changed = false;

    if (round > 0 && opt_cfg.n_keywords > 0) {
      auto new_keys = select_keywords(tasks, objective, p.adversarial_tokens, oracle,
                                      opt_cfg, loss_cfg);
      if (new_keys != p.keyword_tokens) {
        Perturbation q = p;
        q.keyword_tokens = new_keys;
        const double candidate = spl.run_loss(q.run(), loss_cfg);
        if (candidate < best) {
          trace.steps.push_back({pass_counter, -1, -1, best, candidate, true});
          p = std::move(q);
          best = candidate;
          round_changed = true;
        }
      }
    }

    const auto outcome = adversarial_passes(spl, p, best, trace, pass_counter, oracle,
                                            opt_cfg, loss_cfg, base);
    round_changed = round_changed || outcome.changed;
    hit_limit = hit_limit || outcome.hit_limit;

    if (!round_changed) {
      break;
    }
    if (round + 1 == opt_cfg.max_passes) {
      hit_limit = true;
    }
  }

  trace.final_loss = best;
  trace.pass_limit_reached = hit_limit;
  return {std::move(p), std::move(trace)};
}

}  // namespace csteer
