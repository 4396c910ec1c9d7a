#include <doctest.h>

#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"
#include "iurkit/querygen.hpp"
#include "iurkit/rewrite.hpp"
#include "iurkit/supervision.hpp"
#include "oracles.hpp"

using namespace iurkit;
using V = std::vector<std::string>;

namespace {

Dialogue zh(std::vector<std::string> history, const std::string& incomplete, const std::string& rewritten) {
  Dialogue d;
  d.id = "r";
  for (std::size_t i = 0; i < history.size(); ++i)
    d.history.push_back(make_utterance(history[i], TokenizerMode::CharCJK, TokenRole::History, i));
  d.incomplete = make_utterance(incomplete, TokenizerMode::CharCJK, TokenRole::Incomplete, history.size());
  d.rewritten = make_utterance(rewritten, TokenizerMode::CharCJK, TokenRole::Incomplete, history.size());
  return d;
}

Dialogue smith() {
  return zh({"史密斯需要在附近找一家昂贵的餐馆。", "史密斯关心菜肴的类型吗？"}, "不，他不关心。",
            "不，史密斯不关心菜肴的类型。");
}

InputSequence input_of(const Dialogue& d) {
  const auto parse = heuristic_parse(d.incomplete, Language::Zh);
  const auto q = build_query(d.incomplete, PronounLexicon::default_for(Language::Zh), &parse, false);
  return build_input_sequence(q, d);
}

ScoreGrids grids_from(const Matrix& s, const Matrix& i) {
  return {ScoreGrid{EditOp::Substitute, s}, ScoreGrid{EditOp::PreInsert, i}};
}

EditSpan replace(Interval rows, Interval cols, double score) { return {EditOp::Substitute, rows, ReplaceAnchor{cols}, score, false}; }
EditSpan insert(Interval rows, std::size_t col, double score) { return {EditOp::PreInsert, rows, InsertAnchor{col}, score, false}; }

ModelParams random_model(const InputSequence& in, std::uint64_t seed) {
  ModelShape shape;
  shape.d_model = 8;
  shape.d_head = 4;
  shape.d_ff = 8;
  return ModelParams::initialize(shape, Vocabulary::build(std::span(&in, 1)), seed);
}

}  // namespace

TEST_CASE("threshold decoding") {
  const Matrix s{{0.2, -0.3}, {0.05, 0.1}};
  const auto labels = decode_labels(ScoreGrid{EditOp::PreInsert, s}, 0.1);
  CHECK(labels.cells() == std::set<EditCell>{{0, 0, EditOp::PreInsert}, {1, 1, EditOp::PreInsert}});
  const auto all = decode_labels(ScoreGrid{EditOp::PreInsert, s}, -std::numeric_limits<double>::infinity());
  CHECK(all.count(EditOp::PreInsert) == 4);
  // The sentinel column never carries a replacement.
  const auto sub = decode_labels(ScoreGrid{EditOp::Substitute, s}, -std::numeric_limits<double>::infinity());
  CHECK(sub.count(EditOp::Substitute) == 2);
  CHECK_FALSE(sub.contains(0, 1, EditOp::Substitute));
}

TEST_CASE("threshold is monotone") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Matrix s(6, 5), i(6, 5);
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    s.data()[k] = g(rng);
    i.data()[k] = g(rng);
  }
  const auto grids = grids_from(s, i);
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (double theta = -3; theta <= 3; theta += 0.25) {
    const auto cells = decode_labels(grids, theta).cells();
    CHECK(cells.size() <= prev);
    const auto tighter = decode_labels(grids, theta + 0.25).cells();
    CHECK(std::includes(cells.begin(), cells.end(), tighter.begin(), tighter.end()));
    prev = cells.size();
  }
}

TEST_CASE("a filled rectangle becomes one replacement") {
  EditMatrix m(10, 5);
  for (std::size_t r = 3; r < 6; ++r)
    for (std::size_t c = 1; c < 3; ++c) m.add(r, c, EditOp::Substitute);
  const auto spans = cells_to_spans(m);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0].source_rows == Interval{3, 6});
  CHECK(spans[0].target == Anchor{ReplaceAnchor{{1, 3}}});
  CHECK_FALSE(spans[0].ragged);
}

TEST_CASE("components agree with a flood-fill oracle") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    EditMatrix m(8, 6);
    std::set<oracle::Cell> cells;
    for (int k = 0; k < 12; ++k) {
      const auto r = rng() % 8, c = rng() % 5;
      m.add(r, c, EditOp::Substitute);
      cells.emplace(r, c);
    }
    const auto comps = oracle::components(cells);
    const auto spans = cells_to_spans(m);
    REQUIRE(spans.size() == comps.size());
    std::multiset<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, bool>> want, got;
    for (const auto& comp : comps) {
      std::size_t r0 = 99, r1 = 0, c0 = 99, c1 = 0;
      for (const auto& [r, c] : comp) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r + 1);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c + 1);
      }
      want.emplace(r0, r1, c0, c1, comp.size() != (r1 - r0) * (c1 - c0));
    }
    for (const auto& s : spans) {
      const auto cols = std::get<ReplaceAnchor>(s.target).cols;
      got.emplace(s.source_rows.begin, s.source_rows.end, cols.begin, cols.end, s.ragged);
    }
    CHECK(want == got);
  }
}

TEST_CASE("an L-shaped component is ragged and scored by its mean") {
  EditMatrix m(4, 4);
  m.add(0, 0, EditOp::Substitute);
  m.add(1, 0, EditOp::Substitute);
  m.add(1, 1, EditOp::Substitute);
  Matrix s = Matrix::Zero(4, 4);
  s(0, 0) = 1;
  s(1, 0) = 2;
  s(1, 1) = 3;
  const auto grids = grids_from(s, Matrix::Zero(4, 4));
  const auto spans = cells_to_spans(m, &grids);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0].ragged);
  CHECK(spans[0].score == doctest::Approx(2.0));
}

TEST_CASE("insert runs split on gaps") {
  EditMatrix m(10, 3);
  for (std::size_t r : {1, 2, 3, 6, 7}) m.add(r, 2, EditOp::PreInsert);
  const auto spans = cells_to_spans(m);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].source_rows == Interval{1, 4});
  CHECK(spans[1].source_rows == Interval{6, 8});
}

TEST_CASE("conflict resolution") {
  SUBCASE("overlapping replacements: higher mean wins") {
    const auto kept = resolve_conflicts({replace({0, 2}, {1, 3}, 0.5), replace({4, 6}, {2, 4}, 0.9)});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].source_rows == Interval{4, 6});
  }
  SUBCASE("ties go to the lower source row") {
    const auto kept = resolve_conflicts({insert({5, 6}, 1, 0.5), insert({2, 3}, 1, 0.5)});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].source_rows == Interval{2, 3});
  }
  SUBCASE("inserts strictly inside a replacement drop, boundary ones stay") {
    const auto kept = resolve_conflicts(
        {replace({0, 1}, {1, 4}, 1.0), insert({3, 4}, 2, 5.0), insert({5, 6}, 1, 0.1), insert({6, 7}, 4, 0.1)});
    REQUIRE(kept.size() == 3);
    CHECK(kept[0].op == EditOp::PreInsert);
    CHECK(kept[0].target == Anchor{InsertAnchor{1}});
    CHECK(kept[1].op == EditOp::Substitute);
    CHECK(kept[2].target == Anchor{InsertAnchor{4}});
  }
}

TEST_CASE("applying the gold edits of the restaurant dialogue") {
  const auto d = smith();
  const auto in = input_of(d);
  const auto sup = build_edit_matrix(d, in);
  const auto out = apply_edits(d.incomplete, resolve_conflicts(cells_to_spans(sup.matrix)), in);
  CHECK(out.texts() == d.rewritten->texts());
}

TEST_CASE("an insert before the sentinel appends") {
  const auto d = zh({"帮我找一下西安到商洛的顺风车", "哪的"}, "能不能找到", "能不能找到西安到商洛的顺风车");
  const auto in = input_of(d);
  const auto sup = build_edit_matrix(d, in);
  REQUIRE(sup.report.status == Expressibility::Full);
  const auto spans = resolve_conflicts(cells_to_spans(sup.matrix));
  REQUIRE(spans.size() == 1);
  CHECK(spans[0].target == Anchor{InsertAnchor{5}});
  CHECK(apply_edits(d.incomplete, spans, in).texts() == d.rewritten->texts());
}

TEST_CASE("output length follows the spans") {
  const auto d = smith();
  const auto in = input_of(d);
  CHECK(apply_edits(d.incomplete, {}, in).texts() == d.incomplete.texts());
  const std::vector<EditSpan> spans = {insert({7, 9}, 0, 1), replace({24, 27}, {2, 4}, 1), insert({9, 10}, 7, 1)};
  const auto out = apply_edits(d.incomplete, spans, in);
  // |incomplete| - replaced + sum of source lengths.
  CHECK(out.size() == 7 - 2 + 2 + 3 + 1);
  CHECK(out.texts() == V{"史", "密", "不", "，", "史", "密", "斯", "关", "心", "。", "斯"});
  CHECK_THROWS_AS(apply_edits(d.incomplete, {insert({40, 99}, 0, 1)}, in), Error);
  CHECK_THROWS_AS(apply_edits(d.incomplete, {insert({7, 8}, 9, 1)}, in), Error);
}

TEST_CASE("zero model copies the incomplete utterance") {
  const auto d = smith();
  const auto in = input_of(d);
  const auto zero = ModelParams::zeros(ModelShape{}, Vocabulary::build(std::span(&in, 1)));
  const auto res = rewrite(d, zero, 0.1, PronounLexicon::default_for(Language::Zh), nullptr);
  CHECK(res.output.texts() == d.incomplete.texts());
  CHECK(res.diagnostics.spans.empty());
}

TEST_CASE("empty history copies the incomplete utterance") {
  const auto d = zh({}, "他不关心。", "他不关心。");
  const auto in = input_of(d);
  const auto model = random_model(in, 3);
  for (double theta : {-10.0, 0.0, 0.1}) {
    const auto res = rewrite(d, model, theta, PronounLexicon::default_for(Language::Zh), nullptr);
    CHECK(res.output.texts() == d.incomplete.texts());
  }
}

TEST_CASE("output tokens come from the incomplete utterance or the history") {
  const auto d = smith();
  const auto lex = PronounLexicon::default_for(Language::Zh);
  std::set<std::string> allowed;
  for (const auto& u : d.history)
    for (const auto& t : u.texts()) allowed.insert(t);
  for (const auto& t : d.incomplete.texts()) allowed.insert(t);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto model = random_model(input_of(d), seed);
    for (double theta : {-1.0, -0.1, 0.0, 0.1, 0.5}) {
      const auto res = rewrite(d, model, theta, lex, nullptr);
      for (const auto& t : res.output.texts()) CHECK_MESSAGE(allowed.count(t), t);
      for (const auto& c : res.diagnostics.labels.cells())
        CHECK(res.diagnostics.input.history_range.contains(c.row));
    }
  }
}

TEST_CASE("diagnostics JSON") {
  const auto d = smith();
  const auto in = input_of(d);
  const auto res = rewrite(d, random_model(in, 2), 0.1, PronounLexicon::default_for(Language::Zh), nullptr);
  const auto j = res.diagnostics.to_json(true);
  CHECK(j["id"] == "r");
  CHECK(j["input_tokens"].size() == in.size());
  CHECK(j["ranges"]["sentinel"] == in.sentinel_index);
  CHECK(j["grids"]["substitute"].size() == res.diagnostics.grids[0].values.rows());
  CHECK(j["grids"]["substitute"][0][0].is_string());
  CHECK_FALSE(res.diagnostics.to_json(false).contains("grids"));
}
