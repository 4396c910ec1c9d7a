#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace iurkit {

inline constexpr std::string_view kEndToken = "[END]";
inline constexpr std::string_view kCorefToken = "[COREF]";
inline constexpr std::string_view kEllipToken = "[ELLIP]";
inline constexpr std::string_view kUnifiedToken = "[UNK]";

bool is_reserved_token(std::string_view text);

enum class TokenRole { Query, History, Incomplete, Sentinel };
enum class TokenizerMode { CharCJK, WhitespacePunct };
enum class Language { Zh, En };

std::string_view to_string(TokenRole role);
std::string_view to_string(Language lang);
std::optional<Language> parse_language(std::string_view code);
TokenizerMode mode_for(Language lang);

struct Token {
  std::string text;
  std::size_t position = 0;
  TokenRole role = TokenRole::Incomplete;

  friend bool operator==(const Token&, const Token&) = default;
};

// Half-open index interval [begin, end).
struct Interval {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool overlaps(const Interval& o) const { return begin < o.end && o.begin < end; }

  friend bool operator==(const Interval&, const Interval&) = default;
  friend auto operator<=>(const Interval&, const Interval&) = default;
};

struct Utterance {
  std::vector<Token> tokens;
  std::size_t speaker_turn = 0;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::vector<std::string> texts() const;
};

struct Dialogue {
  std::string id;
  Language lang = Language::Zh;
  std::vector<Utterance> history;
  Utterance incomplete;
  std::optional<Utterance> rewritten;

  TokenizerMode mode() const { return mode_for(lang); }
};

// query ⊕ history ⊕ incomplete ⊕ [END]. Rows of the edit grids index the
// query+history prefix; columns index the incomplete utterance plus the sentinel.
struct InputSequence {
  std::string example_id;
  std::vector<Token> tokens;
  Interval query_range;
  Interval history_range;
  Interval incomplete_range;
  std::vector<Interval> history_turns;  // absolute ranges of u_1 .. u_{N-1}
  std::size_t sentinel_index = 0;

  std::size_t size() const { return tokens.size(); }
  std::size_t context_rows() const { return history_range.end; }
  std::size_t column_count() const { return incomplete_range.size() + 1; }
  std::size_t sentinel_column() const { return incomplete_range.size(); }
  std::size_t column_position(std::size_t col) const { return incomplete_range.begin + col; }
};

// Splits text into tokens. Reserved markers ([COREF], [ELLIP], [UNK], [END])
// are always kept whole. CharCJK: one token per CJK scalar and per punctuation
// mark, contiguous runs of other non-space scalars grouped. WhitespacePunct:
// whitespace-separated chunks with punctuation detached.
std::vector<Token> tokenize(std::string_view text, TokenizerMode mode,
                            TokenRole role = TokenRole::Incomplete);

// Inverse rendering used for output. Tokenizing the result reproduces `texts`.
std::string detokenize(const std::vector<std::string>& texts, TokenizerMode mode);
std::string detokenize(const Utterance& utterance, TokenizerMode mode);

Utterance make_utterance(std::string_view text, TokenizerMode mode, TokenRole role,
                         std::size_t speaker_turn);

enum class DialogueFormat { CanonicalJsonl, TabSeparated };

// Picks TabSeparated for .tsv/.tab files, CanonicalJsonl otherwise.
DialogueFormat format_for_path(const std::filesystem::path& path);

// `fallback_lang` applies to records without a language field. Without it the
// language is inferred from the script; records mixing CJK and Latin text are
// rejected.
std::vector<Dialogue> read_dialogues(std::istream& in, DialogueFormat format,
                                     std::optional<Language> fallback_lang = std::nullopt);
std::vector<Dialogue> load_dialogues(const std::filesystem::path& path, DialogueFormat format,
                                     std::optional<Language> fallback_lang = std::nullopt);

// Parses one canonical JSONL line; `line_no` is 1-based and used in errors.
Dialogue parse_jsonl_record(std::string_view line, std::size_t line_no,
                            std::optional<Language> fallback_lang = std::nullopt);

InputSequence build_input_sequence(const std::vector<Token>& query, const Dialogue& dialogue);

}  // namespace iurkit
