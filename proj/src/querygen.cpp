#include "iurkit/querygen.hpp"

#include <algorithm>
#include <fstream>

#include "iurkit/error.hpp"
#include "iurkit/utf8.hpp"

namespace iurkit {

namespace {

const std::vector<std::string> kDefaultZh = {"他",   "她",   "它",   "他们", "她们", "它们", "这",
                                             "那",   "这样", "这个", "那个", "这些", "那些"};
const std::vector<std::string> kDefaultEn = {
    "he",   "she",  "it",   "they", "him",   "her",   "them",  "this",  "that",
    "these", "those", "one", "He",  "She",   "It",    "They",  "Him",   "Her",
    "Them", "This", "That", "These", "Those", "One"};

bool texts_match(const std::vector<Token>& tokens, std::size_t start,
                 const std::vector<std::string>& entry) {
  if (start + entry.size() > tokens.size()) return false;
  for (std::size_t k = 0; k < entry.size(); ++k)
    if (tokens[start + k].text != entry[k]) return false;
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void renumber(std::vector<Token>& tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    tokens[i].position = i;
    tokens[i].role = TokenRole::Query;
  }
}

// Replaces each interval (sorted, disjoint) by a single [COREF].
QueryTemplate substitute_intervals(const Utterance& incomplete, const std::vector<Interval>& intervals) {
  QueryTemplate q;
  q.kind_summary = TemplateKind::CorefOnly;
  std::size_t i = 0;
  for (const auto& iv : intervals) {
    for (; i < iv.begin; ++i) q.tokens.push_back(incomplete.tokens[i]);
    q.markers.push_back({q.tokens.size(), MarkerKind::Coref, iv});
    q.tokens.push_back({std::string(kCorefToken), 0, TokenRole::Query});
    i = iv.end;
  }
  for (; i < incomplete.size(); ++i) q.tokens.push_back(incomplete.tokens[i]);
  renumber(q.tokens);
  return q;
}

std::string lower_label(const std::string& label) { return utf8::ascii_lower(label); }

}  // namespace

// ---------------------------------------------------------------- lexicon

PronounLexicon::PronounLexicon(const std::vector<std::string>& entries, TokenizerMode mode) : mode_(mode) {
  for (const auto& e : entries) {
    if (e.empty()) throw Error("pronoun lexicon entries must be non-empty");
    entries_.insert(e);
  }
  if (entries_.empty()) throw Error("pronoun lexicon must not be empty");
  rebuild();
}

PronounLexicon PronounLexicon::default_for(Language lang) {
  return PronounLexicon(lang == Language::Zh ? kDefaultZh : kDefaultEn, mode_for(lang));
}

PronounLexicon PronounLexicon::read(std::istream& in, TokenizerMode mode) {
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (!line.empty()) entries.push_back(line);
  }
  return PronounLexicon(entries, mode);
}

PronounLexicon PronounLexicon::load(const std::filesystem::path& path, TokenizerMode mode) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon file: " + path.string());
  return read(in, mode);
}

void PronounLexicon::augment(const std::vector<std::string>& entries) {
  for (const auto& e : entries)
    if (!trim(e).empty()) entries_.insert(trim(e));
  rebuild();
}

void PronounLexicon::rebuild() {
  ordered_.clear();
  for (const auto& e : entries_) {
    std::vector<std::string> texts;
    for (auto& t : tokenize(e, mode_)) texts.push_back(std::move(t.text));
    if (!texts.empty()) ordered_.push_back(std::move(texts));
  }
  std::sort(ordered_.begin(), ordered_.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a < b;
  });
  ordered_.erase(std::unique(ordered_.begin(), ordered_.end()), ordered_.end());
}

std::size_t PronounLexicon::match_at(const std::vector<Token>& tokens, std::size_t start) const {
  for (const auto& entry : ordered_)
    if (texts_match(tokens, start, entry)) return entry.size();
  return 0;
}

// ---------------------------------------------------------------- parses

void DependencyParse::validate() const {
  const auto n = arcs.size();
  std::size_t roots = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (arcs[i].head > n)
      throw Error("dependency head out of range at token " + std::to_string(i + 1));
    if (arcs[i].head == i + 1) throw Error("token " + std::to_string(i + 1) + " is its own head");
    if (arcs[i].head == 0) ++roots;
  }
  if (n > 0 && roots != 1)
    throw Error("dependency parse must have exactly one root, found " + std::to_string(roots));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t cur = i + 1;
    for (std::size_t steps = 0; cur != 0; ++steps) {
      if (steps > n) throw Error("dependency parse contains a cycle through token " + std::to_string(i + 1));
      cur = arcs[cur - 1].head;
    }
  }
}

DependencyParse align_parse(const DependencyParse& parse, const Utterance& utterance) {
  parse.validate();
  const auto texts = utterance.texts();
  if (parse.forms == texts) return parse;

  std::string spelled_parse;
  std::string spelled_tokens;
  for (const auto& f : parse.forms) spelled_parse += f;
  for (const auto& t : texts) spelled_tokens += t;
  if (spelled_parse != spelled_tokens)
    throw Error("parse does not align with utterance: parse forms spell \"" + spelled_parse +
                "\" but the utterance tokens spell \"" + spelled_tokens + "\"");

  // Map every word to the token range covering its characters.
  std::vector<Interval> word_tokens;
  std::size_t tok = 0;
  for (const auto& form : parse.forms) {
    const auto begin = tok;
    std::string acc;
    while (acc.size() < form.size() && tok < texts.size()) acc += texts[tok++];
    if (acc != form)
      throw Error("parse word \"" + form + "\" splits an utterance token; cannot align");
    word_tokens.push_back({begin, tok});
  }

  DependencyParse out;
  out.forms = texts;
  out.arcs.resize(texts.size());
  for (std::size_t w = 0; w < word_tokens.size(); ++w) {
    const auto& span = word_tokens[w];
    if (span.empty()) continue;
    const auto head = parse.arcs[w].head;
    out.arcs[span.begin] = {head == 0 ? 0 : word_tokens[head - 1].begin + 1, parse.arcs[w].relation};
    for (auto t = span.begin + 1; t < span.end; ++t) out.arcs[t] = {span.begin + 1, "flat"};
  }
  out.validate();
  return out;
}

DependencyParse heuristic_parse(const Utterance& utterance, Language lang) {
  static const std::vector<std::string> kZhVerbs = {
      "是", "有", "要", "想", "去", "找", "考", "关心", "喜欢", "需要", "知道", "吃", "看",
      "说", "来", "做", "在", "买", "住", "叫", "用", "玩", "听", "找到", "推荐", "觉得", "讨厌"};
  static const std::vector<std::string> kEnVerbs = {
      "is",   "are",  "was",  "were", "be",    "am",   "have", "has",  "had",  "want",
      "need", "like", "know", "go",   "find",  "care", "see",  "get",  "make", "love",
      "play", "buy",  "live", "eat",  "think", "said", "says", "say",  "went", "watch"};
  static const std::set<std::string> kZhAdverbs = {"不", "没", "也", "都", "就", "还", "很", "太",
                                                   "曾", "经", "已", "再", "又", "才", "能", "会"};
  static const std::set<std::string> kEnAdverbs = {"not", "also", "just", "do",   "does", "did",
                                                   "no",  "yes",  "don't", "never", "still", "very"};
  static const std::set<std::string> kZhParticles = {"吗", "呢", "啊", "吧", "了", "呀", "的"};

  const auto& verbs_src = lang == Language::Zh ? kZhVerbs : kEnVerbs;
  const auto& adverbs = lang == Language::Zh ? kZhAdverbs : kEnAdverbs;
  const auto mode = mode_for(lang);
  const auto& toks = utterance.tokens;
  const auto n = toks.size();

  DependencyParse out;
  out.forms = utterance.texts();
  if (n == 0) return out;
  out.arcs.assign(n, {1, "dep"});

  // Longest verb match at the earliest position.
  std::vector<std::vector<std::string>> verbs;
  for (const auto& v : verbs_src) {
    std::vector<std::string> t;
    for (auto& tok : tokenize(v, mode)) t.push_back(tok.text);
    verbs.push_back(std::move(t));
  }
  std::sort(verbs.begin(), verbs.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  std::optional<Interval> verb;
  for (std::size_t i = 0; i < n && !verb; ++i) {
    for (const auto& v : verbs) {
      if (lang == Language::En) {
        if (i + v.size() <= n && utf8::ascii_lower(toks[i].text) == v[0] && v.size() == 1) {
          verb = Interval{i, i + 1};
          break;
        }
      } else if (texts_match(toks, i, v)) {
        verb = Interval{i, i + v.size()};
        break;
      }
    }
  }

  if (!verb) {
    out.arcs[0] = {0, "root"};
    return out;
  }
  const auto root = verb->begin + 1;
  for (std::size_t i = 0; i < n; ++i) out.arcs[i] = {root, "dep"};
  out.arcs[verb->begin] = {0, "root"};
  for (auto i = verb->begin + 1; i < verb->end; ++i) out.arcs[i] = {root, "flat"};

  auto content = [&](std::size_t i) {
    const auto& text = toks[i].text;
    if (is_reserved_token(text)) return true;
    const auto cps = utf8::decode(text);
    if (cps.size() == 1 && utf8::is_punct(cps[0])) return false;
    return adverbs.count(lang == Language::En ? utf8::ascii_lower(text) : text) == 0;
  };
  for (std::size_t i = verb->begin; i-- > 0;) {
    if (content(i)) {
      out.arcs[i] = {root, "nsubj"};
      break;
    }
  }
  for (auto i = verb->end; i < n; ++i) {
    if (content(i) && !(lang == Language::Zh && kZhParticles.count(toks[i].text))) {
      out.arcs[i] = {root, "obj"};
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------- templates

std::string_view to_string(MarkerKind kind) { return kind == MarkerKind::Coref ? "coref" : "ellip"; }

std::string_view to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::CorefOnly: return "coref";
    case TemplateKind::EllipsisOnly: return "ellipsis";
    case TemplateKind::None: return "none";
  }
  return "?";
}

std::vector<std::string> QueryTemplate::texts() const {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

bool EllipsisRules::is_subject(const std::string& label) const {
  const auto l = lower_label(label);
  return subject_labels.count(l) || subject_labels.count(l.substr(0, l.find(':')));
}

bool EllipsisRules::is_object(const std::string& label) const {
  const auto l = lower_label(label);
  return object_labels.count(l) || object_labels.count(l.substr(0, l.find(':')));
}

std::optional<QueryTemplate> match_coref(const Utterance& incomplete, const PronounLexicon& lexicon) {
  std::vector<Interval> hits;
  for (std::size_t i = 0; i < incomplete.size();) {
    if (auto len = lexicon.match_at(incomplete.tokens, i); len > 0) {
      hits.push_back({i, i + len});
      i += len;
    } else {
      ++i;
    }
  }
  if (hits.empty()) return std::nullopt;
  return substitute_intervals(incomplete, hits);
}

std::optional<QueryTemplate> coref_from_intervals(const Utterance& incomplete,
                                                  const std::vector<Interval>& intervals) {
  auto sorted = intervals;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::remove_if(sorted.begin(), sorted.end(), [](const Interval& iv) { return iv.empty(); }),
               sorted.end());
  if (sorted.empty()) return std::nullopt;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (sorted[k].end > incomplete.size()) throw Error("coreference interval outside the incomplete utterance");
    if (k > 0 && sorted[k - 1].overlaps(sorted[k])) throw Error("coreference intervals overlap");
  }
  return substitute_intervals(incomplete, sorted);
}

QueryTemplate detect_ellipsis(const Utterance& incomplete, const DependencyParse& parse,
                              const EllipsisRules& rules) {
  if (parse.size() != incomplete.size())
    throw Error("dependency parse has " + std::to_string(parse.size()) + " rows but the utterance has " +
                std::to_string(incomplete.size()) + " tokens");
  bool has_subject = false;
  bool has_object = false;
  for (const auto& arc : parse.arcs) {
    has_subject = has_subject || rules.is_subject(arc.relation);
    has_object = has_object || rules.is_object(arc.relation);
  }
  // Missing object only: end. Missing subject only: beginning. Otherwise both.
  const bool at_begin = !(has_subject && !has_object);
  const bool at_end = !(!has_subject && has_object);
  const auto n = incomplete.size();

  QueryTemplate q;
  q.kind_summary = TemplateKind::EllipsisOnly;
  if (at_begin) {
    q.markers.push_back({0, MarkerKind::Ellip, {0, 0}});
    q.tokens.push_back({std::string(kEllipToken), 0, TokenRole::Query});
  }
  for (const auto& t : incomplete.tokens) q.tokens.push_back(t);
  if (at_end) {
    q.markers.push_back({q.tokens.size(), MarkerKind::Ellip, {n, n}});
    q.tokens.push_back({std::string(kEllipToken), 0, TokenRole::Query});
  }
  renumber(q.tokens);
  return q;
}

QueryTemplate plain_query(const Utterance& incomplete) {
  QueryTemplate q;
  q.tokens = incomplete.tokens;
  renumber(q.tokens);
  return q;
}

QueryTemplate unify_markers(QueryTemplate query) {
  for (const auto& m : query.markers) query.tokens[m.position].text = std::string(kUnifiedToken);
  query.unified = true;
  return query;
}

namespace {

QueryTemplate finish(std::optional<QueryTemplate> coref, const Utterance& incomplete,
                     const DependencyParse* parse, bool unify, const EllipsisRules& rules) {
  QueryTemplate q;
  if (coref) {
    q = std::move(*coref);
  } else {
    if (parse == nullptr)
      throw Error("no coreference match; a dependency parse of the incomplete utterance is required "
                  "(supply --parses, or --heuristic-parse for testing)");
    q = detect_ellipsis(incomplete, *parse, rules);
  }
  return unify ? unify_markers(std::move(q)) : q;
}

}  // namespace

QueryTemplate build_query(const Utterance& incomplete, const PronounLexicon& lexicon,
                          const DependencyParse* parse, bool unify, const EllipsisRules& rules) {
  return finish(match_coref(incomplete, lexicon), incomplete, parse, unify, rules);
}

QueryTemplate build_query_from_gold(const Utterance& incomplete, const std::vector<Interval>& gold_intervals,
                                    const DependencyParse* parse, bool unify, const EllipsisRules& rules) {
  return finish(coref_from_intervals(incomplete, gold_intervals), incomplete, parse, unify, rules);
}

}  // namespace iurkit
