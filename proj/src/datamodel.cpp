#include "iurkit/datamodel.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"
#include "iurkit/utf8.hpp"

namespace iurkit {

namespace {

constexpr std::array<std::string_view, 4> kReserved = {kCorefToken, kEllipToken, kUnifiedToken,
                                                       kEndToken};

std::string_view reserved_at(std::string_view text, std::size_t offset) {
  if (text[offset] != '[') return {};
  for (auto marker : kReserved)
    if (text.substr(offset, marker.size()) == marker) return marker;
  return {};
}

enum class CharClass { Space, Cjk, Punct, Word };

CharClass classify(char32_t cp, TokenizerMode mode) {
  if (utf8::is_space(cp)) return CharClass::Space;
  if (utf8::is_punct(cp)) return CharClass::Punct;
  if (utf8::is_cjk(cp)) return mode == TokenizerMode::CharCJK ? CharClass::Cjk : CharClass::Word;
  return CharClass::Word;
}

Language infer_language(const std::vector<std::string>& texts, std::size_t line_no) {
  bool cjk = false;
  bool latin = false;
  for (const auto& t : texts) {
    cjk = cjk || utf8::has_cjk(t);
    latin = latin || utf8::has_latin(t);
  }
  if (cjk && latin)
    throw Error("line " + std::to_string(line_no) +
                ": field 'lang' is required for records mixing CJK and Latin text");
  return cjk ? Language::Zh : Language::En;
}

Dialogue assemble(std::string id, Language lang, const std::vector<std::string>& history,
                  const std::string& incomplete, const std::optional<std::string>& rewritten) {
  const auto mode = mode_for(lang);
  Dialogue d;
  d.id = std::move(id);
  d.lang = lang;
  for (std::size_t t = 0; t < history.size(); ++t)
    d.history.push_back(make_utterance(history[t], mode, TokenRole::History, t));
  d.incomplete = make_utterance(incomplete, mode, TokenRole::Incomplete, history.size());
  if (rewritten) d.rewritten = make_utterance(*rewritten, mode, TokenRole::Incomplete, history.size());
  return d;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    cols.emplace_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return cols;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace

bool is_reserved_token(std::string_view text) {
  for (auto marker : kReserved)
    if (text == marker) return true;
  return false;
}

std::string_view to_string(TokenRole role) {
  switch (role) {
    case TokenRole::Query: return "query";
    case TokenRole::History: return "history";
    case TokenRole::Incomplete: return "incomplete";
    case TokenRole::Sentinel: return "sentinel";
  }
  return "?";
}

std::string_view to_string(Language lang) { return lang == Language::Zh ? "zh" : "en"; }

std::optional<Language> parse_language(std::string_view code) {
  if (code == "zh") return Language::Zh;
  if (code == "en") return Language::En;
  return std::nullopt;
}

TokenizerMode mode_for(Language lang) {
  return lang == Language::Zh ? TokenizerMode::CharCJK : TokenizerMode::WhitespacePunct;
}

std::vector<std::string> Utterance::texts() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

std::vector<Token> tokenize(std::string_view text, TokenizerMode mode, TokenRole role) {
  std::vector<std::string> pieces;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) pieces.push_back(std::move(word));
    word.clear();
  };

  // Walk byte offsets alongside decoded scalars so reserved markers can be
  // recognized in the raw text.
  const auto cps = utf8::decode(text);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < cps.size();) {
    if (auto marker = reserved_at(text, offset); !marker.empty()) {
      flush();
      pieces.emplace_back(marker);
      offset += marker.size();
      i += marker.size();  // markers are ASCII
      continue;
    }
    const char32_t cp = cps[i];
    const auto width = utf8::encode(cp).size();
    switch (classify(cp, mode)) {
      case CharClass::Space:
        flush();
        break;
      case CharClass::Cjk:
      case CharClass::Punct:
        flush();
        pieces.push_back(utf8::encode(cp));
        break;
      case CharClass::Word:
        utf8::append(word, cp);
        break;
    }
    offset += width;
    ++i;
  }
  flush();

  std::vector<Token> tokens;
  tokens.reserve(pieces.size());
  for (std::size_t i = 0; i < pieces.size(); ++i) tokens.push_back({std::move(pieces[i]), i, role});
  return tokens;
}

std::string detokenize(const std::vector<std::string>& texts, TokenizerMode mode) {
  std::string out;
  auto last_is_word = [&] {
    if (out.empty()) return false;
    std::size_t start = out.size() - 1;
    while (start > 0 && (static_cast<unsigned char>(out[start]) & 0xC0) == 0x80) --start;
    const auto cps = utf8::decode(std::string_view(out).substr(start));
    return !cps.empty() && classify(cps.back(), mode) == CharClass::Word;
  };
  for (const auto& t : texts) {
    if (t.empty()) continue;
    bool space = false;
    if (!out.empty()) {
      if (mode == TokenizerMode::WhitespacePunct) {
        space = true;
      } else {
        const auto first = utf8::decode(t).front();
        space = last_is_word() && classify(first, mode) == CharClass::Word;
        // Keep "[", "UNK", "]" from fusing into a reserved marker.
        if (!space && t == "]") {
          const auto fused = out + t;
          for (auto marker : kReserved)
            if (fused.size() >= marker.size() && fused.ends_with(marker)) space = true;
        }
      }
    }
    if (space) out.push_back(' ');
    out += t;
  }
  return out;
}

std::string detokenize(const Utterance& utterance, TokenizerMode mode) {
  return detokenize(utterance.texts(), mode);
}

Utterance make_utterance(std::string_view text, TokenizerMode mode, TokenRole role,
                         std::size_t speaker_turn) {
  return Utterance{tokenize(text, mode, role), speaker_turn};
}

DialogueFormat format_for_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".tsv" || ext == ".tab") ? DialogueFormat::TabSeparated
                                          : DialogueFormat::CanonicalJsonl;
}

Dialogue parse_jsonl_record(std::string_view line, std::size_t line_no,
                            std::optional<Language> fallback_lang) {
  const auto where = "line " + std::to_string(line_no);
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(where + ": invalid JSON (" + e.what() + ")");
  }
  if (!rec.is_object()) throw Error(where + ": record must be a JSON object");

  std::vector<std::string> history;
  if (auto it = rec.find("history"); it != rec.end()) {
    if (!it->is_array()) throw Error(where + ": field 'history' must be an array of strings");
    for (const auto& h : *it) {
      if (!h.is_string()) throw Error(where + ": field 'history' must be an array of strings");
      history.push_back(h.get<std::string>());
    }
  }
  auto inc = rec.find("incomplete");
  if (inc == rec.end()) throw Error(where + ": missing field 'incomplete'");
  if (!inc->is_string()) throw Error(where + ": field 'incomplete' must be a string");
  std::optional<std::string> rewritten;
  if (auto it = rec.find("rewritten"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(where + ": field 'rewritten' must be a string");
    rewritten = it->get<std::string>();
  }
  std::string id = std::to_string(line_no);
  if (auto it = rec.find("id"); it != rec.end()) {
    if (it->is_string()) id = it->get<std::string>();
    else if (it->is_number_integer()) id = std::to_string(it->get<long long>());
    else throw Error(where + ": field 'id' must be a string or integer");
  }

  std::optional<Language> lang;
  if (auto it = rec.find("lang"); it != rec.end()) {
    if (!it->is_string()) throw Error(where + ": field 'lang' must be \"zh\" or \"en\"");
    lang = parse_language(it->get<std::string>());
    if (!lang) throw Error(where + ": field 'lang' must be \"zh\" or \"en\"");
  }
  const auto text_fields = [&] {
    auto all = history;
    all.push_back(inc->get<std::string>());
    if (rewritten) all.push_back(*rewritten);
    return all;
  };
  try {
    if (!lang) lang = fallback_lang ? *fallback_lang : infer_language(text_fields(), line_no);
    return assemble(std::move(id), *lang, history, inc->get<std::string>(), rewritten);
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.starts_with("line ")) throw;
    throw Error(where + ": " + msg);
  }
}

std::vector<Dialogue> read_dialogues(std::istream& in, DialogueFormat format,
                                     std::optional<Language> fallback_lang) {
  std::vector<Dialogue> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    if (format == DialogueFormat::CanonicalJsonl) {
      out.push_back(parse_jsonl_record(line, line_no, fallback_lang));
      continue;
    }
    const auto where = "line " + std::to_string(line_no);
    auto cols = split_tabs(line);
    if (cols.size() < 2)
      throw Error(where + ": field 'incomplete' missing (need at least incomplete and rewritten columns)");
    const std::string rewritten = cols.back();
    cols.pop_back();
    const std::string incomplete = cols.back();
    cols.pop_back();
    try {
      auto all = cols;
      all.push_back(incomplete);
      all.push_back(rewritten);
      const auto lang = fallback_lang ? *fallback_lang : infer_language(all, line_no);
      out.push_back(assemble(std::to_string(line_no), lang, cols, incomplete, rewritten));
    } catch (const Error& e) {
      const std::string msg = e.what();
      if (msg.starts_with("line ")) throw;
      throw Error(where + ": " + msg);
    }
  }
  return out;
}

std::vector<Dialogue> load_dialogues(const std::filesystem::path& path, DialogueFormat format,
                                     std::optional<Language> fallback_lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dialogue file: " + path.string());
  return read_dialogues(in, format, fallback_lang);
}

InputSequence build_input_sequence(const std::vector<Token>& query, const Dialogue& dialogue) {
  InputSequence seq;
  seq.example_id = dialogue.id;
  auto push = [&](const std::string& text, TokenRole role) {
    seq.tokens.push_back({text, seq.tokens.size(), role});
  };

  for (const auto& t : query) push(t.text, TokenRole::Query);
  seq.query_range = {0, seq.tokens.size()};

  for (const auto& u : dialogue.history) {
    const auto begin = seq.tokens.size();
    for (const auto& t : u.tokens) push(t.text, TokenRole::History);
    seq.history_turns.push_back({begin, seq.tokens.size()});
  }
  seq.history_range = {seq.query_range.end, seq.tokens.size()};

  for (const auto& t : dialogue.incomplete.tokens) push(t.text, TokenRole::Incomplete);
  seq.incomplete_range = {seq.history_range.end, seq.tokens.size()};

  push(std::string(kEndToken), TokenRole::Sentinel);
  seq.sentinel_index = seq.tokens.size() - 1;
  return seq;
}

}  // namespace iurkit
