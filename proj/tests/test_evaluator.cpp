#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "gpatch/error.hpp"
#include "gpatch/evaluator.hpp"
#include "support/fixtures.hpp"

namespace gpatch {
namespace {

using gpatch::testing::desk_corpus;
using gpatch::testing::desk_victim;
using gpatch::testing::texture_patch;

EvalRow make_row(std::string victim, std::size_t side, std::string condition, std::size_t p,
                 std::size_t q) {
  EvalRow r;
  r.victim = std::move(victim);
  r.patch_id = "p";
  r.patch_height = r.patch_width = side;
  r.condition = std::move(condition);
  r.p = p;
  r.q = q;
  r.asr = static_cast<double>(q) / static_cast<double>(p);
  r.timestamp = "2023-11-14T22:13:20Z";
  return r;
}

TEST(BuildEvalSet, MatchesABruteForceReclassification) {
  const Dataset& ds = desk_corpus();
  const std::size_t target = 2;
  std::size_t expected = 0;
  for (const auto& s : ds.items) {
    if (s.label == target) continue;
    if (predict<float>(desk_victim().network().logits(*s.image)) == s.label) ++expected;
  }
  const EvalSet set = build_eval_set(desk_victim(), ds, target, 100000);
  EXPECT_EQ(set.size(), expected);
  for (const auto& s : set.items) EXPECT_NE(s.label, target);
  EXPECT_EQ(build_eval_set(desk_victim(), ds, target, 10).size(), std::min<std::size_t>(10, expected));
}

TEST(BuildEvalSet, OnlyTargetClassImagesIsAnError) {
  Dataset only = desk_corpus();
  std::erase_if(only.items, [](const Sample& s) { return s.label != 5; });
  EXPECT_THROW(build_eval_set(desk_victim(), only, 5, 100), ContractError);
  Dataset empty = desk_corpus();
  empty.items.clear();
  EXPECT_THROW(build_eval_set(desk_victim(), empty, 5, 100), ContractError);
}

TEST(AttackSuccessRate, RowArithmeticAndDeterminism) {
  const EvalSet set = build_eval_set(desk_victim(), desk_corpus(), 1, 60);
  const Patch patch = texture_patch(1, 64);
  AttackOptions o;
  o.seed = 5;
  o.placements_per_image = 2;
  const EvalRow a = attack_success_rate(desk_victim(), patch, set, 1, o);
  const EvalRow b = attack_success_rate(desk_victim(), patch, set, 1, o);
  EXPECT_EQ(a.p, 2 * set.size());
  EXPECT_LE(a.q, a.p);
  EXPECT_DOUBLE_EQ(a.asr, static_cast<double>(a.q) / static_cast<double>(a.p));
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.patch_height, 64u);
  EXPECT_EQ(a.timestamp, "2023-11-14T22:13:20Z");
}

TEST(AttackSuccessRate, OutcomesMatchAManualComposite) {
  const EvalSet set = build_eval_set(desk_victim(), desk_corpus(), 1, 12);
  const Patch patch = texture_patch(1, 80);
  AttackOptions o;
  o.seed = 11;
  const auto hits = attack_outcomes(desk_victim(), patch, set, 1, o);
  const RandomStream root(11);
  for (std::size_t i = 0; i < set.size(); ++i) {
    RandomStream stream = root.derive("eval-placement", {i});
    const Placement pl = sample_placement(224, 224, 80, 80, stream);
    const auto logits = desk_victim().network().logits(compose(patch, *set.items[i].image, pl));
    EXPECT_EQ(hits[i], predict<float>(logits) == 1 ? 1 : 0) << i;
  }
}

TEST(AttackSuccessRate, RestrictingTheSetRecountsQ) {
  EvalSet set = build_eval_set(desk_victim(), desk_corpus(), 1, 40);
  const Patch patch = texture_patch(1, 64);
  AttackOptions o;
  o.seed = 3;
  const auto full = attack_outcomes(desk_victim(), patch, set, 1, o);
  set.items.resize(20);
  const EvalRow part = attack_success_rate(desk_victim(), patch, set, 1, o);
  EXPECT_EQ(part.p, 20u);
  EXPECT_EQ(part.q, static_cast<std::size_t>(std::count(full.begin(), full.begin() + 20, 1)));
}

TEST(AttackSuccessRate, BlackPatchGivesTheNullBaseline) {
  const EvalSet set = build_eval_set(desk_victim(), desk_corpus(), 0, 200);
  Patch black{Image({64, 64, 3}), 0.5};
  AttackOptions o;
  o.seed = 1;
  const EvalRow row = attack_success_rate(desk_victim(), black, set, 0, o);
  RecordProperty("null_baseline_asr", std::to_string(row.asr));
  EXPECT_LT(row.asr, 0.1);
}

TEST(AttackSuccessRate, TwoPlacementSeedsAgreeWithinBinomialWidth) {
  const EvalSet set = build_eval_set(desk_victim(), desk_corpus(), 6, 200);
  const Patch patch = texture_patch(6, 80);
  AttackOptions a, b;
  a.seed = 100;
  b.seed = 200;
  a.placements_per_image = b.placements_per_image = 3;
  const EvalRow ra = attack_success_rate(desk_victim(), patch, set, 6, a);
  const EvalRow rb = attack_success_rate(desk_victim(), patch, set, 6, b);
  const double p = (ra.asr + rb.asr) / 2;
  const double width = 2 * 2.576 * std::sqrt(std::max(p * (1 - p), 1e-4) / static_cast<double>(ra.p));
  RecordProperty("asr_seed_a", std::to_string(ra.asr));
  RecordProperty("asr_seed_b", std::to_string(rb.asr));
  EXPECT_LT(std::abs(ra.asr - rb.asr), width);
}

TEST(AttackSuccessRate, Errors) {
  const EvalSet set = build_eval_set(desk_victim(), desk_corpus(), 1, 5);
  EvalSet empty = set;
  empty.items.clear();
  AttackOptions o;
  EXPECT_THROW(attack_success_rate(desk_victim(), texture_patch(1, 32), empty, 1, o), ContractError);
  Patch huge{Image({240, 240, 3}), 0.5};
  EXPECT_THROW(attack_success_rate(desk_victim(), huge, set, 1, o), ContractError);
  EXPECT_THROW(attack_success_rate(desk_victim(), texture_patch(1, 32), set, 10, o), ContractError);
}

TEST(TableReport, ArithmeticOfARow) {
  const EvalRow r = make_row("v", 80, "clean", 200, 150);
  EXPECT_DOUBLE_EQ(r.asr, 0.75);
  const auto rendered = table_report({r}, Grouping::flat);
  EXPECT_NE(rendered.table.find("75.0%"), std::string::npos);
  EXPECT_EQ(std::count(rendered.jsonl.begin(), rendered.jsonl.end(), '\n'), 1);
  EXPECT_EQ(row_from_json(row_to_json(r)).q, 150u);
}

TEST(TableReport, NineRowsFormAThreeByThreeGrid) {
  std::vector<EvalRow> rows;
  for (const char* v : {"vit_b16", "vit_l16", "swin_b16"}) {
    for (const std::size_t side : {48, 64, 80}) rows.push_back(make_row(v, side, "clean", 100, side));
  }
  const auto rendered = table_report(rows, Grouping::by_size);
  EXPECT_EQ(std::count(rendered.table.begin(), rendered.table.end(), '\n'), 4);
  const auto header = rendered.table.substr(0, rendered.table.find('\n'));
  EXPECT_LT(header.find("48x48"), header.find("64x64"));
  EXPECT_LT(header.find("64x64"), header.find("80x80"));
  EXPECT_NE(rendered.table.find("80.0%"), std::string::npos);
  EXPECT_EQ(std::count(rendered.jsonl.begin(), rendered.jsonl.end(), '\n'), 9);
}

TEST(TableReport, InputOrderDoesNotMatter) {
  std::vector<EvalRow> rows;
  for (const char* v : {"b", "a"}) {
    for (const std::size_t side : {80, 48, 64}) {
      for (const char* c : {"snr=7dB", "snr=10dB", "clean"}) rows.push_back(make_row(v, side, c, 50, 7));
    }
  }
  const auto reference = table_report(rows, Grouping::by_condition);
  const auto flat = table_report(rows, Grouping::flat);
  std::mt19937 shuffle(3);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(rows.begin(), rows.end(), shuffle);
    EXPECT_EQ(table_report(rows, Grouping::by_condition).table, reference.table);
    EXPECT_EQ(table_report(rows, Grouping::by_condition).jsonl, reference.jsonl);
    EXPECT_EQ(table_report(rows, Grouping::flat).table, flat.table);
  }
}

TEST(TableReport, RejectsEmptyOrInconsistentRows) {
  EXPECT_THROW(table_report({}, Grouping::flat), ContractError);
  EvalRow bad = make_row("v", 8, "c", 3, 4);
  EXPECT_THROW(table_report({bad}, Grouping::flat), ContractError);
}

TEST(ReportFile, AppendsWithoutTouchingEarlierRows) {
  gpatch::testing::ScopedTempDir dir("report_append");
  const auto path = (dir.path() / "r.jsonl").string();
  const std::vector<EvalRow> first{make_row("v", 8, "c", 3, 1)};
  append_rows(path, first);
  std::ifstream in(path);
  const std::string before((std::istreambuf_iterator<char>(in)), {});
  const std::vector<EvalRow> second{make_row("w", 8, "c", 3, 2), make_row("x", 8, "c", 3, 3)};
  append_rows(path, second);
  std::ifstream in2(path);
  const std::string after((std::istreambuf_iterator<char>(in2)), {});
  EXPECT_EQ(after.substr(0, before.size()), before);
  EXPECT_EQ(read_rows(path).size(), 3u);
}

}  // namespace
}  // namespace gpatch
