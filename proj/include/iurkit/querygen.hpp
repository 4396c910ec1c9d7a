#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iurkit/datamodel.hpp"

namespace iurkit {

// Surface forms of pronouns and referential noun phrases. Entries are matched
// as exact token subsequences under the lexicon's tokenizer mode.
class PronounLexicon {
public:
  PronounLexicon(const std::vector<std::string>& entries, TokenizerMode mode);

  static PronounLexicon default_for(Language lang);
  // One surface form per line; '#' starts a comment.
  static PronounLexicon load(const std::filesystem::path& path, TokenizerMode mode);
  static PronounLexicon read(std::istream& in, TokenizerMode mode);

  // Adds entries, e.g. referential phrases harvested from training data.
  void augment(const std::vector<std::string>& entries);

  const std::set<std::string>& entries() const { return entries_; }
  TokenizerMode mode() const { return mode_; }
  // Token sequences ordered by descending length, ties lexicographic.
  const std::vector<std::vector<std::string>>& longest_first() const { return ordered_; }

  // Length of the longest entry matching `tokens` at `start`, or 0.
  std::size_t match_at(const std::vector<Token>& tokens, std::size_t start) const;

private:
  void rebuild();

  std::set<std::string> entries_;
  TokenizerMode mode_;
  std::vector<std::vector<std::string>> ordered_;
};

struct DependencyArc {
  std::size_t head = 0;  // 0 = root, otherwise 1-based token index
  std::string relation;
};

// One arc per token of the parsed utterance.
struct DependencyParse {
  std::vector<std::string> forms;
  std::vector<DependencyArc> arcs;

  std::size_t size() const { return arcs.size(); }
  // Throws iurkit::Error unless there is exactly one root, heads are in range
  // and the head graph is acyclic.
  void validate() const;
};

// A parse block read from CoNLL-U. `sent_id` comes from a "# sent_id = ..." comment.
struct ConlluSentence {
  std::optional<std::string> sent_id;
  DependencyParse parse;
};

// Reads CoNLL-U (10 columns) or the 4-column subset ID FORM HEAD DEPREL.
// Multiword-token ranges and empty nodes are skipped.
std::vector<ConlluSentence> read_conllu(std::istream& in);
std::vector<ConlluSentence> load_conllu(const std::filesystem::path& path);

// Aligns a parse to the utterance tokenization. Identical FORM sequences map
// one to one; word-level parses whose concatenated forms spell the utterance
// are projected onto the tokens (the first token of each word carries the
// word's arc, the rest attach to it as "flat"). Anything else throws.
DependencyParse align_parse(const DependencyParse& parse, const Utterance& utterance);

// Degraded stand-in for a real parser: the first verb-list hit is the root,
// pre-verbal content becomes nsubj and post-verbal content obj.
DependencyParse heuristic_parse(const Utterance& utterance, Language lang);

enum class MarkerKind { Coref, Ellip };
enum class TemplateKind { CorefOnly, EllipsisOnly, None };

std::string_view to_string(MarkerKind kind);
std::string_view to_string(TemplateKind kind);

struct Marker {
  std::size_t position = 0;  // index into QueryTemplate::tokens
  MarkerKind kind = MarkerKind::Coref;
  // Incomplete-utterance tokens the marker stands for. Empty for ellipsis
  // markers, where begin == end is the insertion point.
  Interval source;
};

struct QueryTemplate {
  std::vector<Token> tokens;
  std::vector<Marker> markers;
  TemplateKind kind_summary = TemplateKind::None;
  bool unified = false;

  std::vector<std::string> texts() const;
};

struct EllipsisRules {
  std::set<std::string> subject_labels{"nsubj", "nsubj:pass", "nsubjpass", "csubj", "sbv"};
  std::set<std::string> object_labels{"obj", "dobj", "iobj", "vob", "iob", "fob"};

  bool is_subject(const std::string& label) const;
  bool is_object(const std::string& label) const;
};

std::optional<QueryTemplate> match_coref(const Utterance& incomplete, const PronounLexicon& lexicon);

// Training-time coreference template: each gold interval (incomplete tokens
// replaced in the rewrite) becomes one [COREF]. Returns nullopt if empty.
std::optional<QueryTemplate> coref_from_intervals(const Utterance& incomplete,
                                                  const std::vector<Interval>& intervals);

QueryTemplate detect_ellipsis(const Utterance& incomplete, const DependencyParse& parse,
                              const EllipsisRules& rules = {});

// The incomplete utterance itself, without markers.
QueryTemplate plain_query(const Utterance& incomplete);

QueryTemplate unify_markers(QueryTemplate query);

// Coreference template when the lexicon matches, ellipsis template otherwise.
QueryTemplate build_query(const Utterance& incomplete, const PronounLexicon& lexicon,
                          const DependencyParse* parse, bool unify,
                          const EllipsisRules& rules = {});

// Same fusion with gold coreference intervals in place of lexicon matching.
QueryTemplate build_query_from_gold(const Utterance& incomplete,
                                    const std::vector<Interval>& gold_intervals,
                                    const DependencyParse* parse, bool unify,
                                    const EllipsisRules& rules = {});

inline InputSequence build_input_sequence(const QueryTemplate& query, const Dialogue& dialogue) {
  return build_input_sequence(query.tokens, dialogue);
}

}  // namespace iurkit
