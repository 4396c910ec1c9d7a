// iurkit command-line driver.
#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "iurkit/datamodel.hpp"
#include "iurkit/error.hpp"
#include "iurkit/metrics.hpp"
#include "iurkit/pipeline.hpp"
#include "iurkit/querygen.hpp"
#include "iurkit/rewrite.hpp"
#include "iurkit/scoring.hpp"
#include "iurkit/supervision.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Preset {
  double theta;
  std::size_t batch;
};

const std::map<std::string, Preset> kPresets = {
    {"rewrite", {0.1, 16}},
    {"task", {0.1, 16}},
    {"restoration", {0.05, 12}},
    {"canard", {0.05, 4}},
};

struct Options {
  std::string data;
  std::string model;
  std::string out;
  std::string lexicon;
  std::string parses;
  bool heuristic_parse = false;
  std::string lang;
  bool unify = true;
  double theta = 0.1;
  std::string preset;
  std::size_t workers = 1;
  std::string ctxvec;
  std::string query_mode = "gold";

  // train
  iurkit::TrainConfig train;
  iurkit::ModelShape shape;
  std::string encoder = "trainable-embedding";
  std::string resume;
  std::string log_file;
  std::string dev;

  // evaluate
  std::string hyp;
  bool as_json = false;
  bool copy_baseline = false;

  // inspect-matrix
  std::string id;
  bool grids = false;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_st("iurkit");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("IURKIT_LOG")) {
    auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept real names.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
    else spdlog::warn("ignoring unknown IURKIT_LOG level '{}'", env);
  }
}

std::optional<iurkit::Language> lang_option(const Options& o) {
  if (o.lang.empty()) return std::nullopt;
  auto lang = iurkit::parse_language(o.lang);
  if (!lang) throw iurkit::Error("unknown language '" + o.lang + "' (expected zh or en)");
  return lang;
}

std::vector<iurkit::Dialogue> load_data(const std::string& path, const Options& o) {
  if (path.empty()) throw iurkit::Error("no data file given (--data)");
  auto dialogues = iurkit::load_dialogues(path, iurkit::format_for_path(path), lang_option(o));
  spdlog::debug("loaded {} dialogues from {}", dialogues.size(), path);
  return dialogues;
}

// Pronoun lexicons per tokenizer mode, from --lexicon or the built-in lists.
class Lexicons {
public:
  explicit Lexicons(std::string path) : path_(std::move(path)) {}

  const iurkit::PronounLexicon& get(iurkit::Language lang) {
    const auto mode = iurkit::mode_for(lang);
    auto it = cache_.find(mode);
    if (it == cache_.end()) {
      auto lex = path_.empty() ? iurkit::PronounLexicon::default_for(lang) : iurkit::PronounLexicon::load(path_, mode);
      it = cache_.emplace(mode, std::move(lex)).first;
    }
    return it->second;
  }

private:
  std::string path_;
  std::map<iurkit::TokenizerMode, iurkit::PronounLexicon> cache_;
};

iurkit::ParseSource load_parses(const Options& o) {
  iurkit::ParseSource src;
  if (!o.parses.empty()) src.sentences = iurkit::load_conllu(o.parses);
  src.heuristic = o.heuristic_parse;
  return src;
}

iurkit::QueryOptions query_options(const Options& o, iurkit::QueryMode mode) {
  iurkit::QueryOptions q;
  q.mode = mode;
  q.unify = o.unify;
  return q;
}

iurkit::QueryMode parse_query_mode(const std::string& s) {
  if (s == "gold") return iurkit::QueryMode::Gold;
  if (s == "lexicon") return iurkit::QueryMode::Lexicon;
  throw iurkit::Error("unknown query mode '" + s + "' (expected gold or lexicon)");
}

// Output goes to --out when given, stdout otherwise.
class Sink {
public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw iurkit::Error("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
  std::ofstream file_;
};

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

json token_array(const std::vector<std::string>& texts) { return json(texts); }

std::string safe_file_name(const std::string& id, std::size_t index) {
  std::string out;
  for (unsigned char c : id) out += (std::isalnum(c) || c == '-' || c == '_' || c == '.') ? static_cast<char>(c) : '_';
  if (out.empty() || out == "." || out == "..") out = "example";
  return std::to_string(index) + "_" + out + ".json";
}

const iurkit::ContextVectors* load_ctxvec(const Options& o, std::optional<iurkit::ContextVectors>& holder) {
  if (o.ctxvec.empty()) return nullptr;
  holder = iurkit::ContextVectors::load(o.ctxvec);
  return &*holder;
}

void check_imported(const iurkit::ModelParams& model, const iurkit::ContextVectors* imported) {
  if (model.encoder.mode == iurkit::EncoderMode::ImportedVectors && imported == nullptr)
    throw iurkit::Error("model uses imported vectors; pass --ctxvec");
}

// ---------------------------------------------------------------------------

int cmd_make_query(const Options& o) {
  const auto dialogues = load_data(o.data, o);
  Lexicons lexicons(o.lexicon);
  const auto parses = load_parses(o);
  const auto qopts = query_options(o, iurkit::QueryMode::Lexicon);
  Sink sink(o.out);
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const auto& d = dialogues[i];
    const auto query = iurkit::make_query(d, i, lexicons.get(d.lang), parses, qopts);
    const auto input = iurkit::build_input_sequence(query, d);
    auto markers = json::array();
    for (const auto& m : query.markers)
      markers.push_back({{"position", m.position},
                         {"kind", iurkit::to_string(m.kind)},
                         {"source", {m.source.begin, m.source.end}}});
    std::vector<std::string> input_texts;
    for (const auto& t : input.tokens) input_texts.push_back(t.text);
    json line = {{"id", d.id},
                 {"query", iurkit::detokenize(query.texts(), d.mode())},
                 {"query_tokens", token_array(query.texts())},
                 {"kind", iurkit::to_string(query.kind_summary)},
                 {"markers", std::move(markers)},
                 {"input_tokens", std::move(input_texts)}};
    sink.stream() << line.dump() << '\n';
  }
  return 0;
}

int cmd_build_supervision(const Options& o) {
  if (o.out.empty()) throw iurkit::Error("build-supervision needs an output directory (--out)");
  const auto dialogues = load_data(o.data, o);
  Lexicons lexicons(o.lexicon);
  const auto parses = load_parses(o);
  const auto qopts = query_options(o, parse_query_mode(o.query_mode));

  const fs::path dir(o.out);
  fs::create_directories(dir / "matrices");
  iurkit::SupervisionReport report;
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const auto& d = dialogues[i];
    const std::span<const iurkit::Dialogue> one(&d, 1);
    auto prepared = iurkit::prepare_corpus(one, lexicons.get(d.lang), parses, qopts);
    auto& entry = prepared.report.examples.front();
    if (!entry.error.empty()) spdlog::warn("{}: {}", d.id, entry.error);
    report.examples.push_back(entry);
    if (prepared.examples.empty() && entry.error.empty()) {
      // Failed examples still get their (empty) matrix written.
      const auto query = iurkit::make_query(d, i, lexicons.get(d.lang), parses, qopts);
      const auto input = iurkit::build_input_sequence(query, d);
      prepared.examples.push_back({input, iurkit::build_edit_matrix(d, input).matrix});
      prepared.queries.push_back(query);
    }
    if (prepared.examples.empty()) continue;
    const auto& ex = prepared.examples.front();
    std::vector<std::string> input_texts;
    for (const auto& t : ex.input.tokens) input_texts.push_back(t.text);
    json doc = {{"id", d.id},
                {"status", iurkit::to_string(entry.status)},
                {"query", token_array(prepared.queries.front().texts())},
                {"input_tokens", std::move(input_texts)},
                {"matrix", ex.gold.to_json()}};
    std::ofstream f(dir / "matrices" / safe_file_name(d.id, i), std::ios::binary);
    if (!f) throw iurkit::Error("cannot write into " + (dir / "matrices").string());
    f << doc.dump(2) << '\n';
  }
  {
    std::ofstream f(dir / "report.json", std::ios::binary);
    if (!f) throw iurkit::Error("cannot write " + (dir / "report.json").string());
    f << report.to_json().dump(2) << '\n';
  }
  const auto full = report.count(iurkit::Expressibility::Full);
  spdlog::info("supervision: {} full, {} partial, {} failed", full, report.count(iurkit::Expressibility::Partial),
               report.count(iurkit::Expressibility::Failed));
  return full >= 1 ? 0 : 1;
}

int cmd_train(const Options& o) {
  if (o.model.empty()) throw iurkit::Error("train needs an output model path (--model)");
  const auto dialogues = load_data(o.data, o);
  Lexicons lexicons(o.lexicon);
  const auto parses = load_parses(o);
  const auto qopts = query_options(o, parse_query_mode(o.query_mode));

  std::vector<iurkit::TrainingExample> dataset;
  iurkit::SupervisionReport report;
  for (const auto& d : dialogues) {
    const std::span<const iurkit::Dialogue> one(&d, 1);
    auto prepared = iurkit::prepare_corpus(one, lexicons.get(d.lang), parses, qopts);
    for (auto& e : prepared.report.examples) {
      if (!e.error.empty()) spdlog::warn("{}: {}", e.id, e.error);
      report.examples.push_back(std::move(e));
    }
    for (auto& ex : prepared.examples) dataset.push_back(std::move(ex));
  }
  if (dataset.empty()) throw iurkit::Error("no usable training examples in " + o.data);
  spdlog::info("training on {} examples ({} full, {} partial)", dataset.size(),
               report.count(iurkit::Expressibility::Full), report.count(iurkit::Expressibility::Partial));

  std::optional<iurkit::ContextVectors> ctx_holder;
  const auto* imported = load_ctxvec(o, ctx_holder);

  iurkit::ModelParams params;
  iurkit::AdamState state;
  if (!o.resume.empty()) {
    auto loaded = iurkit::load_model(o.resume);
    params = std::move(loaded.params);
    state = loaded.adam ? std::move(*loaded.adam) : iurkit::AdamState::for_params(params);
    spdlog::info("resuming from {} after {} epochs", o.resume, state.epochs_done);
  } else {
    auto shape = o.shape;
    auto mode = iurkit::parse_encoder_mode(o.encoder);
    if (!mode) throw iurkit::Error("unknown encoder '" + o.encoder + "'");
    shape.mode = *mode;
    if (shape.mode == iurkit::EncoderMode::ImportedVectors) {
      if (imported == nullptr) throw iurkit::Error("imported-vectors encoder needs --ctxvec");
      shape.d_model = imported->d_model();
    }
    shape.validate();
    std::vector<iurkit::InputSequence> inputs;
    for (const auto& ex : dataset) inputs.push_back(ex.input);
    const auto vocab = shape.mode == iurkit::EncoderMode::TrainableEmbedding ? iurkit::Vocabulary::build(inputs)
                                                                            : iurkit::Vocabulary();
    params = iurkit::ModelParams::initialize(shape, vocab, o.train.seed);
    state = iurkit::AdamState::for_params(params);
  }
  check_imported(params, imported);

  iurkit::DevEvaluator dev;
  std::vector<iurkit::Dialogue> dev_set;
  if (!o.dev.empty()) {
    dev_set = load_data(o.dev, o);
    dev = [&](const iurkit::ModelParams& model) {
      const auto ropts = query_options(o, iurkit::QueryMode::Lexicon);
      std::size_t hits = 0, scored = 0;
      for (std::size_t i = 0; i < dev_set.size(); ++i) {
        const auto& d = dev_set[i];
        if (!d.rewritten) continue;
        const auto query = iurkit::make_query(d, i, lexicons.get(d.lang), parses, ropts);
        const auto res = iurkit::rewrite_with_query(d, query, model, o.train.theta, imported);
        hits += iurkit::exact_match(res.output.texts(), d.rewritten->texts()) ? 1 : 0;
        ++scored;
      }
      return scored == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(scored);
    };
  }

  const auto log = iurkit::train(dataset, o.train, params, state, imported, dev);
  for (const auto& e : log.epochs) {
    if (e.dev_em) spdlog::info("epoch {}: loss {:.6f}, dev EM {:.4f}", e.epoch, e.mean_loss, *e.dev_em);
    else spdlog::info("epoch {}: loss {:.6f}", e.epoch, e.mean_loss);
  }
  iurkit::save_model(o.model, params, &state);

  const std::string log_path = o.log_file.empty() ? o.model + ".log.json" : o.log_file;
  json doc = log.to_json();
  doc["examples"] = dataset.size();
  doc["supervision"] = {{"full", report.count(iurkit::Expressibility::Full)},
                        {"partial", report.count(iurkit::Expressibility::Partial)},
                        {"failed", report.count(iurkit::Expressibility::Failed)}};
  std::ofstream f(log_path, std::ios::binary);
  if (!f) throw iurkit::Error("cannot write " + log_path);
  f << doc.dump(2) << '\n';
  spdlog::info("model written to {}", o.model);
  return 0;
}

int cmd_rewrite(const Options& o) {
  if (o.model.empty()) throw iurkit::Error("rewrite needs a model (--model)");
  const auto model = iurkit::load_model(o.model).params;
  std::optional<iurkit::ContextVectors> ctx_holder;
  const auto* imported = load_ctxvec(o, ctx_holder);
  check_imported(model, imported);
  const auto dialogues = load_data(o.data, o);
  Lexicons lexicons(o.lexicon);
  for (const auto& d : dialogues) lexicons.get(d.lang);  // populate before threads read it
  const auto parses = load_parses(o);
  const auto qopts = query_options(o, iurkit::QueryMode::Lexicon);

  std::vector<std::string> lines(dialogues.size());
  parallel_for(dialogues.size(), o.workers, [&](std::size_t i) {
    const auto& d = dialogues[i];
    const auto query = iurkit::make_query(d, i, lexicons.get(d.lang), parses, qopts);
    const auto res = iurkit::rewrite_with_query(d, query, model, o.theta, imported);
    const auto texts = res.output.texts();
    json line = {{"id", d.id},
                 {"rewritten", iurkit::detokenize(texts, d.mode())},
                 {"tokens", texts},
                 {"query", token_array(query.texts())},
                 {"spans", res.diagnostics.spans.size()}};
    lines[i] = line.dump();
  });
  Sink sink(o.out);
  for (const auto& l : lines) sink.stream() << l << '\n';
  return 0;
}

std::vector<std::string> read_hypotheses(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw iurkit::Error("cannot read " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '{') {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw iurkit::Error(path + ": line " + std::to_string(no) + ": " + e.what());
      }
      if (!j.contains("rewritten") || !j["rewritten"].is_string())
        throw iurkit::Error(path + ": line " + std::to_string(no) + ": field 'rewritten' missing");
      out.push_back(j["rewritten"].get<std::string>());
    } else {
      out.push_back(line);
    }
  }
  return out;
}

int cmd_evaluate(const Options& o) {
  const auto refs = load_data(o.data, o);
  std::vector<iurkit::TokenTexts> hyp_tokens, ref_tokens;
  std::vector<std::string> hyps;
  if (o.copy_baseline) {
    for (const auto& d : refs) hyps.push_back(iurkit::detokenize(d.incomplete, d.mode()));
  } else {
    if (o.hyp.empty()) throw iurkit::Error("evaluate needs --hyp or --copy-baseline");
    hyps = read_hypotheses(o.hyp);
  }
  if (hyps.size() != refs.size())
    throw iurkit::Error("hypothesis count " + std::to_string(hyps.size()) + " differs from reference count " +
                        std::to_string(refs.size()));
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& d = refs[i];
    if (!d.rewritten) throw iurkit::Error("reference '" + d.id + "' has no gold rewrite");
    hyp_tokens.push_back(iurkit::make_utterance(hyps[i], d.mode(), iurkit::TokenRole::Incomplete, 0).texts());
    ref_tokens.push_back(d.rewritten->texts());
  }
  const auto result = iurkit::evaluate(hyp_tokens, ref_tokens);
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw iurkit::Error("cannot write " + o.out);
    f << result.to_json().dump(2) << '\n';
  }
  if (o.as_json) std::cout << result.to_json().dump(2) << '\n';
  else std::cout << result.table();
  return 0;
}

int cmd_inspect_matrix(const Options& o) {
  if (o.model.empty()) throw iurkit::Error("inspect-matrix needs a model (--model)");
  if (o.id.empty()) throw iurkit::Error("inspect-matrix needs an example id (--id)");
  const auto model = iurkit::load_model(o.model).params;
  std::optional<iurkit::ContextVectors> ctx_holder;
  const auto* imported = load_ctxvec(o, ctx_holder);
  check_imported(model, imported);
  const auto dialogues = load_data(o.data, o);
  Lexicons lexicons(o.lexicon);
  const auto parses = load_parses(o);
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const auto& d = dialogues[i];
    if (d.id != o.id) continue;
    const auto query = iurkit::make_query(d, i, lexicons.get(d.lang), parses, query_options(o, iurkit::QueryMode::Lexicon));
    const auto res = iurkit::rewrite_with_query(d, query, model, o.theta, imported);
    auto doc = res.diagnostics.to_json(o.grids);
    doc["theta"] = o.theta;
    doc["output"] = res.output.texts();
    if (d.rewritten) doc["gold_labels"] = iurkit::build_edit_matrix(d, res.diagnostics.input).matrix.to_json();
    Sink sink(o.out);
    sink.stream() << doc.dump(2) << '\n';
    return 0;
  }
  throw iurkit::Error("no example with id '" + o.id + "' in " + o.data);
}

int cmd_harvest_lexicon(const Options& o) {
  const auto dialogues = load_data(o.data, o);
  std::set<std::string> entries;
  if (!o.lexicon.empty()) {
    const auto lang = dialogues.empty() ? iurkit::Language::Zh : dialogues.front().lang;
    const auto base = iurkit::PronounLexicon::load(o.lexicon, iurkit::mode_for(lang));
    entries.insert(base.entries().begin(), base.entries().end());
  }
  for (const auto& phrase : iurkit::harvest_referential_phrases(dialogues)) entries.insert(phrase);
  Sink sink(o.out);
  for (const auto& e : entries) sink.stream() << e << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

void add_data(CLI::App* cmd, Options& o) {
  cmd->add_option("--data", o.data, "Dialogue file (.jsonl, or .tsv/.tab)")->required();
  cmd->add_option("--lang", o.lang, "Language for records without one (zh|en)");
}

void add_query(CLI::App* cmd, Options& o) {
  cmd->add_option("--lexicon", o.lexicon, "Pronoun lexicon, one surface form per line");
  cmd->add_option("--parses", o.parses, "CoNLL-U parses of the incomplete utterances");
  cmd->add_flag("--heuristic-parse", o.heuristic_parse, "Use the built-in verb heuristic when no parse is given");
  cmd->add_flag("--unify,!--no-unify", o.unify, "Replace [COREF]/[ELLIP] with one [UNK] marker (default on)");
}

void add_theta(CLI::App* cmd, Options& o) {
  cmd->add_option("--theta", o.theta, "Decoding threshold");
  cmd->add_option("--preset", o.preset, "Dataset preset: rewrite, task, restoration, canard")
      ->check(CLI::IsMember({"rewrite", "task", "restoration", "canard"}));
}

// Presets fill theta and batch size unless those were given explicitly.
void apply_preset(CLI::App* cmd, Options& o) {
  if (o.preset.empty()) return;
  const auto& p = kPresets.at(o.preset);
  if (auto* opt = cmd->get_option_no_throw("--theta"); opt && opt->count() == 0) o.theta = p.theta;
  if (auto* opt = cmd->get_option_no_throw("--batch-size"); opt && opt->count() == 0) o.train.batch_size = p.batch;
}

int run(int argc, char** argv) {
  Options o;
  CLI::App app{"Incomplete utterance rewriting with edit-matrix prediction"};
  app.set_config("--config", "", "Key=value configuration file; command-line flags take precedence");
  app.require_subcommand(1);

  auto* make_query = app.add_subcommand("make-query", "Print the query template of each incomplete utterance");
  add_data(make_query, o);
  add_query(make_query, o);
  make_query->add_option("--out", o.out, "Output JSONL (default stdout)");

  auto* build = app.add_subcommand("build-supervision", "Derive gold edit matrices from gold rewrites");
  add_data(build, o);
  add_query(build, o);
  build->add_option("--out", o.out, "Output directory")->required();
  build->add_option("--query-mode", o.query_mode, "gold or lexicon");

  auto* train = app.add_subcommand("train", "Train a model");
  add_data(train, o);
  add_query(train, o);
  add_theta(train, o);
  train->add_option("--model", o.model, "Output model file")->required();
  train->add_option("--epochs", o.train.epochs, "Total epochs");
  train->add_option("--lr", o.train.learning_rate, "Adam learning rate");
  train->add_option("--batch-size", o.train.batch_size, "Examples per step");
  train->add_option("--seed", o.train.seed, "Random seed");
  train->add_option("--workers", o.train.workers, "Threads for batch gradients");
  train->add_option("--d-model", o.shape.d_model, "Encoder width");
  train->add_option("--d-head", o.shape.d_head, "Head width");
  train->add_option("--heads", o.shape.heads, "Heads per operation");
  train->add_option("--d-ff", o.shape.d_ff, "Mixer feed-forward width");
  train->add_flag("--mixer,!--no-mixer", o.shape.mixer, "Contextual mixer block (default on)");
  train->add_option("--encoder", o.encoder, "trainable-embedding or imported-vectors");
  train->add_option("--ctxvec", o.ctxvec, "Imported contextual vectors (.ctxvec)");
  train->add_option("--resume", o.resume, "Continue from a saved model and optimizer state");
  train->add_option("--log-file", o.log_file, "Training log JSON (default <model>.log.json)");
  train->add_option("--dev", o.dev, "Development set for per-epoch EM");
  train->add_option("--query-mode", o.query_mode, "gold or lexicon");

  auto* rewrite = app.add_subcommand("rewrite", "Rewrite incomplete utterances");
  add_data(rewrite, o);
  add_query(rewrite, o);
  add_theta(rewrite, o);
  rewrite->add_option("--model", o.model, "Model file")->required();
  rewrite->add_option("--ctxvec", o.ctxvec, "Imported contextual vectors (.ctxvec)");
  rewrite->add_option("--workers", o.workers, "Worker threads");
  rewrite->add_option("--out", o.out, "Output JSONL (default stdout)");

  auto* evaluate = app.add_subcommand("evaluate", "Score rewrites against gold");
  add_data(evaluate, o);
  evaluate->add_option("--hyp", o.hyp, "Rewrite output (JSONL with 'rewritten', or plain lines)");
  evaluate->add_flag("--copy-baseline", o.copy_baseline, "Score the incomplete utterances themselves");
  evaluate->add_flag("--json", o.as_json, "Print JSON instead of a table");
  evaluate->add_option("--out", o.out, "Also write the JSON result here");

  auto* inspect = app.add_subcommand("inspect-matrix", "Dump scores, labels and spans for one example");
  add_data(inspect, o);
  add_query(inspect, o);
  add_theta(inspect, o);
  inspect->add_option("--model", o.model, "Model file")->required();
  inspect->add_option("--ctxvec", o.ctxvec, "Imported contextual vectors (.ctxvec)");
  inspect->add_option("--id", o.id, "Example id")->required();
  inspect->add_flag("--grids", o.grids, "Include raw score grids");
  inspect->add_option("--out", o.out, "Output file (default stdout)");

  auto* harvest = app.add_subcommand("harvest-lexicon", "Collect gold-replaced phrases into a lexicon file");
  add_data(harvest, o);
  harvest->add_option("--lexicon", o.lexicon, "Base lexicon to extend");
  harvest->add_option("--out", o.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (auto* cmd : {train, rewrite, inspect})
    if (cmd->parsed()) apply_preset(cmd, o);
  o.train.theta = o.theta;
  if (!std::isfinite(o.theta)) throw iurkit::Error("theta must be finite");

  if (make_query->parsed()) return cmd_make_query(o);
  if (build->parsed()) return cmd_build_supervision(o);
  if (train->parsed()) return cmd_train(o);
  if (rewrite->parsed()) return cmd_rewrite(o);
  if (evaluate->parsed()) return cmd_evaluate(o);
  if (inspect->parsed()) return cmd_inspect_matrix(o);
  if (harvest->parsed()) return cmd_harvest_lexicon(o);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  try {
    return run(argc, argv);
  } catch (const iurkit::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::critical("internal error: {}", e.what());
    return 2;
  }
}
