#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csteer/grammar.hpp"
#include "csteer/injection.hpp"
#include "csteer/rng.hpp"
#include "support.hpp"

using namespace csteer;

namespace {

const std::string kCarrier =
    "def trg(va)\n"
    "def fa(vb)\n"
    "# keep fast tmp\n"
    "va = fa(1, 2)\n"
    "log(\" note \")\n";

MaliciousObjective mini_objective() {
  MaliciousObjective obj;
  obj.identifier = "st_mini";
  obj.language = CaseLanguage::mini;
  obj.conditional_code = "def trg(va)\n";
  obj.target_position_code = "out = trg(";
  obj.target_code = "del all)";
  return obj;
}

Perturbation demo_perturbation(const ModelOracle& oracle) {
  Perturbation p;
  p.keyword_tokens = oracle.encode("del all").ids;
  p.adversarial_tokens = oracle.encode("tmp old 7").ids;
  return p;
}

/// Random but render-stable token run, as the optimizer would emit.
Perturbation random_perturbation(const ModelOracle& oracle, Rng& rng, int len) {
  Perturbation p;
  while (static_cast<int>(p.adversarial_tokens.size()) < len) {
    const auto id =
        static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(oracle.vocab_size())));
    const auto& surface = oracle.decode({&id, 1});
    if (surface.empty() || surface.find('\n') != std::string::npos ||
        surface.find('"') != std::string::npos) {
      continue;
    }
    p.adversarial_tokens.push_back(id);
  }
  return p;
}

}  // namespace

TEST_CASE("comment form appends into the anchored comment") {
  auto oracle = test::random_oracle();
  auto p = demo_perturbation(*oracle);
  CarrierForm form;
  auto ctx = inject(kCarrier, p, form, {}, *oracle);

  const std::string rendered = oracle->decode(p.run());
  CHECK(ctx.carrier_text.find("# keep fast tmp " + rendered) != std::string::npos);
  CHECK(ctx.without_injection() == kCarrier);
  // single occurrence
  const auto first = ctx.carrier_text.find(rendered);
  CHECK(first != std::string::npos);
  CHECK(ctx.carrier_text.find(rendered, first + 1) == std::string::npos);
}

TEST_CASE("empty perturbation injects nothing") {
  auto oracle = test::random_oracle();
  Perturbation p;
  auto ctx = inject(kCarrier, p, {}, {}, *oracle);
  CHECK(ctx.carrier_text == kCarrier);
  CHECK(ctx.span_begin == ctx.span_end);
}

TEST_CASE("assignment and output forms keep the carrier parsing") {
  auto oracle = test::random_oracle();
  MiniLanguage lang;
  auto p = demo_perturbation(*oracle);

  for (auto kind : {CarrierFormKind::variable_assignment, CarrierFormKind::output_content}) {
    CarrierForm form;
    form.kind = kind;
    auto ctx = inject(kCarrier, p, form, {}, *oracle);
    CHECK(lang.parse_check(ctx.carrier_text));
    CHECK(ctx.without_injection() == kCarrier);
  }
}

TEST_CASE("reversibility holds over randomized carriers and forms") {
  auto oracle = test::random_oracle();
  auto lang = oracle->language();
  Rng rng(2024);
  CorpusConfig ccfg;
  int checked = 0;
  for (int i = 0; i < 120; ++i) {
    const std::string carrier = lang->generate_doc(rng, ccfg);
    auto p = random_perturbation(*oracle, rng, 4 + static_cast<int>(rng.below(6)));
    CarrierForm form;
    form.kind = static_cast<CarrierFormKind>(rng.below(3));
    InjectedContext ctx;
    try {
      ctx = inject(carrier, p, form, {}, *oracle);
    } catch (const Error& e) {
      // only anchor or single-occurrence rejections are acceptable here
      const std::string what = e.what();
      CHECK((what.find("ANCHOR_NOT_FOUND") != std::string::npos ||
             what.find("FORM_BREAKS_SYNTAX") != std::string::npos));
      continue;
    }
    CHECK(ctx.without_injection() == carrier);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("anchor and syntax failures raise the documented errors") {
  auto oracle = test::random_oracle();
  auto p = demo_perturbation(*oracle);

  CHECK_THROWS_WITH_AS(inject("def trg(va)\nva = 1\n", p, {}, {}, *oracle),
                       doctest::Contains("ANCHOR_NOT_FOUND"), Error);

  Perturbation with_quote;
  with_quote.adversarial_tokens = oracle->encode("tmp \" old").ids;
  CarrierForm assign;
  assign.kind = CarrierFormKind::variable_assignment;
  CHECK_THROWS_WITH_AS(inject(kCarrier, with_quote, assign, {}, *oracle),
                       doctest::Contains("FORM_BREAKS_SYNTAX"), Error);

  AnchorRule bad;
  bad.kind = AnchorRule::Kind::line_index;
  bad.line = 99;
  CHECK_THROWS_WITH_AS(inject(kCarrier, p, {}, bad, *oracle),
                       doctest::Contains("ANCHOR_NOT_FOUND"), Error);
}

TEST_CASE("prompts assemble as carrier + item + position and respect the window") {
  auto oracle = test::random_oracle();
  auto obj = mini_objective();
  auto p = demo_perturbation(*oracle);
  auto ctx = inject(kCarrier, p, {}, {}, *oracle);

  std::vector<DatasetItem> items;
  for (int i = 0; i < 8; ++i) {
    items.push_back({"item-" + std::to_string(i), "na = " + std::to_string(i) + "\n", "", "mini"});
  }
  // one oversized item that must be skipped
  std::string big;
  for (int i = 0; i < 300; ++i) {
    big += "na = 1\n";
  }
  items.push_back({"item-big", big, "", "mini"});

  auto set = build_eval_prompts(items, ctx, obj, *oracle);
  CHECK(set.prompts.size() == 8);
  REQUIRE(set.skipped.size() == 1);
  CHECK(set.skipped[0].first == "item-big");

  const auto pos_ids = oracle->encode(obj.target_position_code).ids;
  for (const auto& prompt : set.prompts) {
    REQUIRE(prompt.size() >= pos_ids.size());
    CHECK(std::equal(pos_ids.rbegin(), pos_ids.rend(), prompt.ids.rbegin()));
  }

  // clean and injected prompts differ only inside the span
  auto clean = build_eval_prompts(items, clean_context(kCarrier), obj, *oracle);
  REQUIRE(clean.prompts.size() == set.prompts.size());
  for (std::size_t i = 0; i < clean.prompts.size(); ++i) {
    const std::string& a = set.prompts[i].surface;
    const std::string& b = clean.prompts[i].surface;
    CHECK(a.substr(0, ctx.span_begin) == b.substr(0, ctx.span_begin));
    CHECK(a.substr(ctx.span_end) == b.substr(ctx.span_begin));
  }
}

TEST_CASE("zero items produce an empty prompt list") {
  auto oracle = test::random_oracle();
  auto obj = mini_objective();
  auto set = build_eval_prompts({}, clean_context(kCarrier), obj, *oracle);
  CHECK(set.prompts.empty());
  CHECK(set.skipped.empty());
}

TEST_CASE("datasets round-trip through the line-delimited format") {
  std::vector<DatasetItem> items = {{"a", "na = 1\n", "nb = 2\n", "mini"},
                                    {"b", "# pad\n", "", "mini"}};
  const std::string path = "test_dataset_roundtrip.jsonl";
  save_dataset(items, path);
  auto loaded = load_dataset(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].id == "a");
  CHECK(loaded[0].prompt == "na = 1\n");
  CHECK(loaded[1].language == "mini");
  std::remove(path.c_str());
}
