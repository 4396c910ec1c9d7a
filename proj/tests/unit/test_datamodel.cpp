#include <doctest.h>

#include <random>
#include <sstream>

#include "iurkit/datamodel.hpp"
#include "iurkit/error.hpp"

using namespace iurkit;

namespace {

std::vector<std::string> texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

using V = std::vector<std::string>;

Dialogue zh(std::vector<std::string> history, const std::string& incomplete) {
  Dialogue d;
  d.id = "x";
  for (std::size_t i = 0; i < history.size(); ++i)
    d.history.push_back(make_utterance(history[i], TokenizerMode::CharCJK, TokenRole::History, i));
  d.incomplete = make_utterance(incomplete, TokenizerMode::CharCJK, TokenRole::Incomplete, history.size());
  return d;
}

}  // namespace

TEST_CASE("CJK text splits into one token per character") {
  CHECK(texts(tokenize("他不关心", TokenizerMode::CharCJK)) == V{"他", "不", "关", "心"});
  CHECK(texts(tokenize("不，他不关心。", TokenizerMode::CharCJK)) == V{"不", "，", "他", "不", "关", "心", "。"});
}

TEST_CASE("empty text has no tokens") {
  CHECK(tokenize("", TokenizerMode::CharCJK).empty());
  CHECK(tokenize("", TokenizerMode::WhitespacePunct).empty());
  CHECK(tokenize("   \t ", TokenizerMode::WhitespacePunct).empty());
}

TEST_CASE("English splitting detaches punctuation") {
  CHECK(texts(tokenize("Who is she?", TokenizerMode::WhitespacePunct)) == V{"Who", "is", "she", "?"});
  CHECK(texts(tokenize("  a,b  c. ", TokenizerMode::WhitespacePunct)) == V{"a", ",", "b", "c", "."});
}

TEST_CASE("latin runs inside CJK text stay grouped") {
  CHECK(texts(tokenize("我要iPhone 15吗", TokenizerMode::CharCJK)) == V{"我", "要", "iPhone", "15", "吗"});
}

TEST_CASE("reserved markers are never split") {
  CHECK(texts(tokenize("不，[UNK]不关心。", TokenizerMode::CharCJK)) == V{"不", "，", "[UNK]", "不", "关", "心", "。"});
  CHECK(texts(tokenize("did [COREF] go [ELLIP]", TokenizerMode::WhitespacePunct)) ==
        V{"did", "[COREF]", "go", "[ELLIP]"});
  CHECK(texts(tokenize("[END]", TokenizerMode::CharCJK)) == V{"[END]"});
  // Not a marker: brackets are punctuation.
  CHECK(texts(tokenize("[FOO]", TokenizerMode::WhitespacePunct)) == V{"[", "FOO", "]"});
}

TEST_CASE("token positions are consecutive and carry the role") {
  const auto toks = tokenize("a b c", TokenizerMode::WhitespacePunct, TokenRole::History);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    CHECK(toks[i].position == i);
    CHECK(toks[i].role == TokenRole::History);
  }
}

TEST_CASE("invalid UTF-8 is rejected") {
  CHECK_THROWS_AS(tokenize(std::string("a\xff"), TokenizerMode::CharCJK), Error);
}

TEST_CASE("detokenize inverts tokenize") {
  const std::vector<std::pair<std::string, TokenizerMode>> cases = {
      {"不，史密斯不关心菜肴的类型。", TokenizerMode::CharCJK},
      {"我要iPhone 15吗", TokenizerMode::CharCJK},
      {"Who is she ?", TokenizerMode::WhitespacePunct},
      {"[ UNK ] x", TokenizerMode::WhitespacePunct},
  };
  for (const auto& [text, mode] : cases) {
    const auto once = texts(tokenize(text, mode));
    CHECK(texts(tokenize(detokenize(once, mode), mode)) == once);
  }
}

TEST_CASE("tokenize is idempotent through detokenize on random strings") {
  const std::vector<std::string> alphabet = {"他", "不", "a", "b", "1", " ", "，", "。", ",", "?", "[", "]", "UNK",
                                             "[UNK]", "[END]", "x"};
  std::mt19937_64 rng(5);
  for (int t = 0; t < 500; ++t) {
    std::string s;
    const auto n = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
    for (auto mode : {TokenizerMode::CharCJK, TokenizerMode::WhitespacePunct}) {
      const auto once = texts(tokenize(s, mode));
      CHECK_MESSAGE(texts(tokenize(detokenize(once, mode), mode)) == once, s);
    }
  }
}

TEST_CASE("JSONL records map fields directly") {
  std::istringstream in(R"({"history":["A"],"incomplete":"B","rewritten":"B A","lang":"en"})"
                        "\n\n"
                        R"({"id":"q2","history":[],"incomplete":"他来","lang":"zh"})"
                        "\n");
  const auto ds = read_dialogues(in, DialogueFormat::CanonicalJsonl);
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].history.size() == 1);
  CHECK(ds[0].rewritten.has_value());
  CHECK(ds[0].lang == Language::En);
  CHECK(ds[0].id == "1");
  CHECK(ds[1].id == "q2");
  CHECK_FALSE(ds[1].rewritten.has_value());
  CHECK(ds[1].incomplete.texts() == V{"他", "来"});
  CHECK(ds[1].incomplete.speaker_turn == 0);
}

TEST_CASE("language is inferred from script when absent") {
  CHECK(parse_jsonl_record(R"({"incomplete":"他不关心"})", 1).lang == Language::Zh);
  CHECK(parse_jsonl_record(R"({"incomplete":"he does not"})", 1).lang == Language::En);
  CHECK_THROWS_AS(parse_jsonl_record(R"({"incomplete":"他 likes"})", 1), Error);
  CHECK(parse_jsonl_record(R"({"incomplete":"他 likes"})", 1, Language::Zh).lang == Language::Zh);
}

TEST_CASE("malformed JSONL names the line and field") {
  auto message = [](const std::string& line) {
    try {
      parse_jsonl_record(line, 7);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"history":["A"]})").find("line 7") != std::string::npos);
  CHECK(message(R"({"history":["A"]})").find("'incomplete'") != std::string::npos);
  CHECK(message(R"({"incomplete":"a","history":"A"})").find("'history'") != std::string::npos);
  CHECK(message(R"({"incomplete":"a","lang":"fr"})").find("'lang'") != std::string::npos);
  CHECK(message("{not json").find("line 7") != std::string::npos);
}

TEST_CASE("tab-separated lines: last column is the gold rewrite") {
  std::istringstream in("u1\tu2\tinc\trew\n");
  const auto ds = read_dialogues(in, DialogueFormat::TabSeparated, Language::En);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].history.size() == 2);
  CHECK(ds[0].history[1].texts() == V{"u2"});
  CHECK(ds[0].incomplete.texts() == V{"inc"});
  CHECK(ds[0].rewritten->texts() == V{"rew"});
  std::istringstream bad("only\n");
  CHECK_THROWS_AS(read_dialogues(bad, DialogueFormat::TabSeparated, Language::En), Error);
}

TEST_CASE("an empty file yields no dialogues") {
  std::istringstream in("");
  CHECK(read_dialogues(in, DialogueFormat::CanonicalJsonl).empty());
  CHECK(format_for_path("a/b.tsv") == DialogueFormat::TabSeparated);
  CHECK(format_for_path("a/b.jsonl") == DialogueFormat::CanonicalJsonl);
  CHECK_THROWS_AS(load_dialogues("/nonexistent/file.jsonl", DialogueFormat::CanonicalJsonl), Error);
}

TEST_CASE("input sequence length bookkeeping") {
  // 5 query tokens, 7 history tokens over two turns, 4 incomplete tokens.
  const auto d = zh({"一二三", "四五六七"}, "甲乙丙丁");
  const auto query = tokenize("甲乙[UNK]丙丁", TokenizerMode::CharCJK, TokenRole::Query);
  const auto in = build_input_sequence(query, d);
  CHECK(in.size() == 17);
  CHECK(in.sentinel_index == 16);
  CHECK(in.tokens.back().text == "[END]");
  CHECK(in.tokens.back().role == TokenRole::Sentinel);
  CHECK(in.query_range == Interval{0, 5});
  CHECK(in.history_range == Interval{5, 12});
  CHECK(in.incomplete_range == Interval{12, 16});
  CHECK(in.history_turns == std::vector<Interval>{{5, 8}, {8, 12}});
  CHECK(in.context_rows() == 12);
  CHECK(in.column_count() == 5);
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(in.tokens[i].position == i);
}

TEST_CASE("empty history gives an empty history range") {
  const auto d = zh({}, "他来了");
  const auto query = tokenize("[UNK]来了", TokenizerMode::CharCJK, TokenRole::Query);
  const auto in = build_input_sequence(query, d);
  CHECK(in.query_range == Interval{0, 3});
  CHECK(in.history_range == Interval{3, 3});
  CHECK(in.incomplete_range == Interval{3, 6});
}

TEST_CASE("interval helpers") {
  const Interval a{2, 5}, b{5, 7}, c{4, 6};
  CHECK(a.size() == 3);
  CHECK_FALSE(a.overlaps(b));
  CHECK(a.overlaps(c));
  CHECK(a.contains(4));
  CHECK_FALSE(a.contains(5));
  CHECK(Interval{3, 3}.empty());
}
