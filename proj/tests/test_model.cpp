#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "csteer/errors.hpp"
#include "csteer/model.hpp"
#include "csteer/oracle.hpp"
#include "support.hpp"

using namespace csteer;

namespace {

std::vector<TokenSequence> toy_variants(const ToyOracle& oracle, int n_variants,
                                        std::uint64_t seed) {
  // synthetic variants: shared head, noisy middle, shared tail
  auto lang = oracle.language();
  Rng rng(seed);
  std::vector<TokenSequence> variants;
  for (int i = 0; i < n_variants; ++i) {
    std::string text = "def trg(va)\n# keep note tmp\n" +
                       lang->noise_statements(rng, 12, 30) + "out = trg(";
    variants.push_back(oracle.encode(text));
  }
  return variants;
}

}  // namespace

TEST_CASE("next-token distributions are normalized") {
  auto oracle = test::random_oracle();
  auto ids = oracle->encode("def trg(va)\nva = 1\nout = trg(").ids;
  auto dists = oracle->step_distributions(ids, 4, 6);
  for (const auto& dist : dists) {
    double sum = 0.0;
    for (double p : dist) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("identical inputs and seeds give identical outputs") {
  auto a = test::random_oracle(11);
  auto b = test::random_oracle(11);
  CHECK(a->model().params() == b->model().params());

  auto prefix = a->encode("def trg(va)\nva = 1\n");
  DecodeConfig greedy;
  auto ga = a->generate(prefix, 6, greedy);
  auto gb = b->generate(prefix, 6, greedy);
  CHECK(ga.ids == gb.ids);

  DecodeConfig sampled;
  sampled.mode = DecodeConfig::Mode::sample;
  sampled.temperature = 0.9;
  sampled.seed = 17;
  CHECK(a->generate(prefix, 8, sampled).ids == a->generate(prefix, 8, sampled).ids);
}

TEST_CASE("teacher forcing replays greedy generation as per-step argmax") {
  auto oracle = test::random_oracle(3);
  auto prefix = oracle->encode("def trg(va)\nva = fa(1)\n");
  DecodeConfig greedy;
  auto gen = oracle->generate(prefix, 6, greedy);
  REQUIRE(gen.ids.size() > 0);

  std::vector<TokenId> all = prefix.ids;
  all.insert(all.end(), gen.ids.begin(), gen.ids.end());
  auto dists = oracle->step_distributions(all, prefix.size(), gen.size());
  auto probs = oracle->target_probs(prefix, gen);
  for (std::size_t j = 0; j < gen.size(); ++j) {
    std::size_t argmax = 0;
    for (std::size_t v = 1; v < dists[j].size(); ++v) {
      if (dists[j][v] > dists[j][argmax]) {
        argmax = v;
      }
    }
    CHECK(static_cast<TokenId>(argmax) == gen.ids[j]);
    CHECK(probs.probs[j] == doctest::Approx(dists[j][static_cast<std::size_t>(gen.ids[j])]));
  }
}

TEST_CASE("loss gradients match central finite differences") {
  auto oracle = test::random_oracle(23);
  auto variants = toy_variants(*oracle, 2, 5);
  auto target = oracle->encode("del all)");

  std::vector<std::size_t> slots = {3, 4, 5, 9};
  LossConfig cfg;
  auto lg = oracle->loss_and_grads(variants, slots, target, cfg);
  CHECK(std::isfinite(lg.loss));

  Rng rng(99);
  const double step = 1e-4;
  int checked = 0;
  for (int pair = 0; pair < 12; ++pair) {
    const auto s = static_cast<std::size_t>(rng.below(slots.size()));
    const int dim = static_cast<int>(rng.below(static_cast<std::uint64_t>(oracle->embedding_dim())));
    const double up = oracle->loss_with_embedding_nudge(variants, slots, target, cfg, s, dim, step);
    const double dn = oracle->loss_with_embedding_nudge(variants, slots, target, cfg, s, dim, -step);
    const double fd = (up - dn) / (2.0 * step);
    const double an = lg.grads[s].grad[static_cast<std::size_t>(dim)];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    CHECK(std::abs(fd - an) / denom <= 1e-3);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("gradients are finite whenever the loss is finite") {
  auto oracle = test::random_oracle(29);
  auto variants = toy_variants(*oracle, 1, 7);
  auto target = oracle->encode("del all)");
  auto lg = oracle->loss_and_grads(variants, {2, 3}, target, LossConfig{});
  REQUIRE(std::isfinite(lg.loss));
  for (const auto& slice : lg.grads) {
    for (double g : slice.grad) {
      CHECK(std::isfinite(g));
    }
  }
}

TEST_CASE("invalid slots and context overflow are rejected") {
  auto oracle = test::random_oracle(31);
  auto variants = toy_variants(*oracle, 1, 9);
  auto target = oracle->encode("del all)");
  CHECK_THROWS_AS(oracle->loss_and_grads(variants, {100000}, target, LossConfig{}), Error);

  std::string big;
  for (int i = 0; i < 300; ++i) {
    big += "va = 1\n";
  }
  CHECK_THROWS_WITH_AS(oracle->target_probs(oracle->encode(big), target),
                       doctest::Contains("CONTEXT_OVERFLOW"), Error);
}

TEST_CASE("checkpoint save/load round-trips the model bit-exactly") {
  auto oracle = test::random_oracle(41);
  const std::string path = "test_checkpoint_roundtrip.bin";
  save_checkpoint(*oracle, path);
  auto loaded = load_checkpoint(path);
  CHECK(loaded->model().params() == oracle->model().params());
  CHECK(loaded->vocab_size() == oracle->vocab_size());
  CHECK(loaded->grammar_kind() == "mini");
  CHECK(loaded->language() != nullptr);

  auto prefix = oracle->encode("def trg(va)\n");
  DecodeConfig greedy;
  CHECK(loaded->generate(prefix, 5, greedy).ids == oracle->generate(prefix, 5, greedy).ids);
  std::remove(path.c_str());
}

TEST_CASE("a unigram-trained model reproduces corpus frequencies") {
  CorpusConfig ccfg;
  ccfg.grammar = "unigram3";
  ccfg.n_docs = 1500;
  ccfg.seed = 11;
  ccfg.unigram_freqs = {0.5, 0.3, 0.2};
  ccfg.unigram_doc_len = 24;

  TrainConfig tcfg;
  tcfg.steps = 500;
  tcfg.batch_docs = 8;
  tcfg.seed = 11;

  ToyModelConfig shape;
  shape.d_model = 16;
  shape.n_layers = 1;
  shape.n_heads = 4;
  shape.context = 32;

  auto oracle = train_toy_model(ccfg, tcfg, shape);

  // empirical frequencies from the corpus itself
  auto corpus = build_corpus(ccfg);
  std::vector<double> counts(static_cast<std::size_t>(corpus.tokenizer->vocab_size()), 0.0);
  double total = 0.0;
  for (const auto& doc : corpus.docs) {
    for (TokenId id : corpus.tokenizer->encode(doc)) {
      counts[static_cast<std::size_t>(id)] += 1.0;
      total += 1.0;
    }
  }

  auto prefix = oracle->encode("a b");
  for (const char* s : {"a", "b", "c"}) {
    auto target = oracle->encode(s);
    const double p = oracle->target_probs(prefix, target).probs[0];
    const double freq = counts[static_cast<std::size_t>(target.ids[0])] / total;
    CHECK(std::abs(p - freq) <= 0.02);
  }
}

TEST_CASE("training is bit-deterministic in the seed") {
  CorpusConfig ccfg;
  ccfg.grammar = "unigram3";
  ccfg.n_docs = 200;
  ccfg.seed = 100;
  TrainConfig tcfg;
  tcfg.steps = 40;
  tcfg.batch_docs = 4;
  tcfg.seed = 100;
  ToyModelConfig shape;
  shape.d_model = 16;
  shape.n_layers = 1;
  shape.n_heads = 4;
  shape.context = 32;

  auto a = train_toy_model(ccfg, tcfg, shape);
  auto b = train_toy_model(ccfg, tcfg, shape);
  CHECK(a->model().params() == b->model().params());

  // serial and parallel training agree bit for bit
  TrainConfig serial = tcfg;
  serial.policy = ExecPolicy::serial;
  auto c = train_toy_model(ccfg, serial, shape);
  CHECK(c->model().params() == a->model().params());
}

TEST_CASE("a divergent run raises TRAINING_DIVERGED") {
  CorpusConfig ccfg;
  ccfg.grammar = "unigram3";
  ccfg.n_docs = 100;
  ccfg.seed = 3;
  TrainConfig tcfg;
  tcfg.steps = 10;
  tcfg.batch_docs = 4;
  tcfg.lr = 1e200;       // drives the attention scores into overflow
  tcfg.grad_clip = 0.0;  // disabled
  tcfg.warmup_steps = 1;
  tcfg.seed = 3;
  ToyModelConfig shape;
  shape.d_model = 16;
  shape.n_layers = 1;
  shape.n_heads = 4;
  shape.context = 32;
  CHECK_THROWS_WITH_AS(train_toy_model(ccfg, tcfg, shape),
                       doctest::Contains("TRAINING_DIVERGED"), Error);
}

TEST_CASE("hidden-state probe returns finite vectors per layer") {
  auto oracle = test::random_oracle(43);
  auto ids = oracle->encode("va = 1\n# note cls").ids;
  for (int layer = 0; layer <= oracle->model().config().n_layers; ++layer) {
    auto h = oracle->hidden_state(ids, layer);
    CHECK(static_cast<int>(h.size()) == oracle->embedding_dim());
    for (double x : h) {
      CHECK(std::isfinite(x));
    }
  }
  CHECK_THROWS_AS(oracle->hidden_state(ids, 99), Error);
}
