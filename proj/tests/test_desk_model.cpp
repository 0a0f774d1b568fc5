// Contract checks that need the trained desk-scale oracle (shared through the
// on-disk cache, so only the first suite in a fresh tree pays the training
// cost).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csteer/oracle.hpp"
#include "support.hpp"

using namespace csteer;

TEST_CASE("held-out grammar-forced accuracy reaches the training bar") {
  auto oracle = test::desk_oracle();
  CHECK(oracle->model().heldout_forced_accuracy >= 0.90);
}

TEST_CASE("forced positions argmax-match the transition table on 500 fresh samples") {
  auto oracle = test::desk_oracle();
  auto lang = oracle->language();
  REQUIRE(lang != nullptr);

  Rng rng(424242);
  CorpusConfig ccfg;
  long forced_total = 0;
  long forced_hit = 0;
  int docs_used = 0;
  while (forced_total < 500) {
    const std::string doc = lang->generate_doc(rng, ccfg);
    const auto ids = oracle->encode(doc).ids;
    auto dists = oracle->step_distributions(ids, 0, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto forced = lang->forced_next(std::span<const TokenId>(ids.data(), i));
      if (!forced) {
        continue;
      }
      std::size_t argmax = 0;
      for (std::size_t v = 1; v < dists[i].size(); ++v) {
        if (dists[i][v] > dists[i][argmax]) {
          argmax = v;
        }
      }
      ++forced_total;
      if (static_cast<TokenId>(argmax) == *forced) {
        ++forced_hit;
      }
    }
    ++docs_used;
  }
  CHECK(docs_used > 0);
  CHECK(static_cast<double>(forced_hit) / static_cast<double>(forced_total) >= 0.95);
}

TEST_CASE("greedy continuation at a forced position emits the mandated token") {
  auto oracle = test::desk_oracle();
  auto lang = oracle->language();

  Rng rng(99);
  CorpusConfig ccfg;
  DecodeConfig greedy;
  int checked = 0;
  for (int d = 0; d < 10; ++d) {
    const std::string doc = lang->generate_doc(rng, ccfg);
    const auto ids = oracle->encode(doc).ids;
    // cut the doc at a forced position and ask the model to continue
    for (std::size_t cut = 4; cut + 1 < ids.size(); ++cut) {
      auto forced = lang->forced_next(std::span<const TokenId>(ids.data(), cut));
      if (!forced || *forced == Tokenizer::kEos) {
        continue;
      }
      TokenSequence prefix;
      prefix.ids.assign(ids.begin(), ids.begin() + static_cast<long>(cut));
      const auto continuation = oracle->generate(prefix, 1, greedy);
      REQUIRE(continuation.size() == 1);
      CHECK(continuation.ids[0] == *forced);
      ++checked;
      break;  // one forced cut per doc keeps this quick
    }
  }
  CHECK(checked >= 8);
}

TEST_CASE("trained distributions stay normalized") {
  auto oracle = test::desk_oracle();
  auto ids = oracle->encode("def trg(va)\n# note hex\nva = 1\nout = trg(").ids;
  auto dists = oracle->step_distributions(ids, 1, ids.size() - 1);
  for (const auto& dist : dists) {
    double sum = 0.0;
    for (double p : dist) {
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}
