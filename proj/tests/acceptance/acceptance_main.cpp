// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "iurkit/datamodel.hpp"
#include "iurkit/metrics.hpp"
#include "iurkit/pipeline.hpp"
#include "iurkit/rewrite.hpp"
#include "iurkit/scoring.hpp"
#include "iurkit/supervision.hpp"
#include "oracles.hpp"
#include "stand_in_encoder.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace iurkit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::vector<std::string> texts(const Utterance& u) { return u.texts(); }

// 1. Gold matrices of fully expressible synthetic dialogues invert exactly.
Outcome round_trip_supervision() {
  const auto t0 = Clock::now();
  synth::Config cfg;
  cfg.unexpressible_rate = 0.15;
  const auto examples = synth::corpus(500, 20240601, cfg);
  ParseSource parses;
  parses.heuristic = true;
  const auto lexicon = PronounLexicon::default_for(Language::Zh);

  std::size_t full = 0, round_trips = 0, story_mismatch = 0, expected_full = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const auto d = synth::to_dialogue(ex);
    const auto query = make_query(d, i, lexicon, parses, {});
    const auto input = build_input_sequence(query, d);
    const auto sup = build_edit_matrix(d, input);
    const bool is_full = sup.report.status == Expressibility::Full;
    if (ex.expressible) {
      ++expected_full;
      if (!is_full || sup.matrix.count(EditOp::Substitute) != synth::expected_substitute_cells(ex) ||
          sup.matrix.count(EditOp::PreInsert) != synth::expected_insert_cells(ex))
        ++story_mismatch;
    } else if (is_full) {
      ++story_mismatch;
    }
    if (!is_full) continue;
    ++full;
    const auto spans = resolve_conflicts(cells_to_spans(sup.matrix));
    if (texts(apply_edits(d.incomplete, spans, input)) == texts(*d.rewritten)) ++round_trips;
  }
  const double secs = seconds_since(t0);
  return {full > 0 && round_trips == full && story_mismatch == 0 && secs < 10.0,
          fmt("%zu/%zu fully expressible round-trip (generator expects %zu full, %zu disagreements), %.2fs", round_trips,
              full, expected_full, story_mismatch, secs)};
}

// 2. LCS length against exhaustive enumeration.
Outcome lcs_oracle() {
  const auto t0 = Clock::now();
  auto chars = [](const std::string& s) {
    std::vector<std::string> out;
    for (char c : s) out.emplace_back(1, c);
    return out;
  };
  const bool fixture = lcs_length(chars("ABCBDAB"), chars("BDCABA")) == 4 &&
                       lcs_align(chars("ABCBDAB"), chars("BDCABA")).size() == 4;
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> len(0, 10);
  std::uniform_int_distribution<int> sym(0, 3);
  std::size_t agree = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> a(len(rng)), b(len(rng));
    for (auto& x : a) x = std::string(1, static_cast<char>('a' + sym(rng)));
    for (auto& x : b) x = std::string(1, static_cast<char>('a' + sym(rng)));
    const auto al = lcs_align(a, b);
    bool valid = true;
    for (std::size_t k = 0; k < al.size(); ++k) {
      valid = valid && a[al[k].first] == b[al[k].second];
      if (k > 0) valid = valid && al[k].first > al[k - 1].first && al[k].second > al[k - 1].second;
    }
    if (valid && al.size() == oracle::exhaustive_lcs(a, b)) ++agree;
  }
  const double secs = seconds_since(t0);
  return {fixture && agree == 1000 && secs < 5.0,
          fmt("fixture %s, %zu/1000 random pairs agree, %.2fs", fixture ? "=4" : "WRONG", agree, secs)};
}

// 3. Rotations depend only on relative position.
Outcome rope_identity() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> pos(0, 1024), delta(-512, 512);
  const std::size_t dims[] = {2, 8, 64};
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const auto d = dims[t % 3];
    Vector q(static_cast<Eigen::Index>(d)), k(static_cast<Eigen::Index>(d));
    for (Eigen::Index x = 0; x < q.size(); ++x) q(x) = g(rng), k(x) = g(rng);
    const double i = pos(rng);
    const double j = std::max(0.0, i + delta(rng));
    const double lhs = rope_rotate(q, i).dot(rope_rotate(k, j));
    const double rhs = q.dot(rope_rotate(k, j - i));
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return {worst <= 1e-9, fmt("max |<R_i q, R_j k> - <q, R_(j-i) k>| = %.3e over 10000 draws", worst)};
}

// 4. Analytic gradient against central differences.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  synth::Config cfg;
  cfg.min_turns = cfg.max_turns = 2;
  const auto dialogues = synth::to_dialogues(synth::corpus(3, 5, cfg));
  ParseSource parses;
  parses.heuristic = true;
  const auto prepared = prepare_corpus(dialogues, PronounLexicon::default_for(Language::Zh), parses, {});
  std::vector<InputSequence> inputs;
  for (const auto& e : prepared.examples) inputs.push_back(e.input);
  ModelShape shape;
  shape.d_model = 8;
  shape.d_head = 4;
  shape.d_ff = 16;
  auto params = ModelParams::initialize(shape, Vocabulary::build(inputs), 11);
  const std::span<const TrainingExample> batch(prepared.examples);
  const auto analytic = grad(params, batch);
  auto g = analytic.grad;
  auto gt = tensors(g);
  auto pt = tensors(params);

  const double h = 1e-4;
  double worst = 0.0;
  std::size_t checked = 0;
  std::string worst_name;
  for (std::size_t t = 0; t < pt.size(); ++t) {
    for (std::size_t e = 0; e < pt[t].size(); ++e) {
      double& x = pt[t].data[e];
      const double saved = x;
      x = saved + h;
      const double up = grad(params, batch).loss;
      x = saved - h;
      const double down = grad(params, batch).loss;
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = gt[t].data[e];
      const double scale = std::max({std::abs(a), std::abs(numeric)});
      // Components below the finite-difference noise floor are compared absolutely.
      const double err = scale > 1e-6 ? std::abs(a - numeric) / scale : std::abs(a - numeric);
      if (err > worst) worst = err, worst_name = pt[t].name;
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {prepared.examples.size() == 3 && worst <= 1e-5 && secs < 30.0,
          fmt("%zu components, worst relative error %.2e (%s), %.2fs", checked, worst, worst_name.c_str(), secs)};
}

double exact_match_rate(const std::vector<Dialogue>& dialogues, const ModelParams& params, const ParseSource& parses,
                        const ContextVectors* imported, QueryMode mode) {
  QueryOptions q;
  q.mode = mode;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const auto& d = dialogues[i];
    const auto query = make_query(d, i, PronounLexicon::default_for(d.lang), parses, q);
    const auto out = rewrite_with_query(d, query, params, 0.1, imported).output;
    hits += exact_match(out.texts(), d.rewritten->texts()) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(dialogues.size());
}

// 5. A trainable-embedding model memorizes 50 synthetic dialogues.
Outcome overfit_harness() {
  const auto t0 = Clock::now();
  const auto dialogues = synth::to_dialogues(synth::corpus(50, 7, {}));
  ParseSource parses;
  parses.heuristic = true;
  const auto prepared = prepare_corpus(dialogues, PronounLexicon::default_for(Language::Zh), parses, {});
  std::vector<InputSequence> inputs;
  for (const auto& e : prepared.examples) inputs.push_back(e.input);
  auto params = ModelParams::initialize(ModelShape{}, Vocabulary::build(inputs), 1);
  auto state = AdamState::for_params(params);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  double em = 0.0;
  std::size_t epochs = 0;
  // Full decode after every 10 epochs; stop once the target is reached.
  while (epochs < 500 && em < 0.9) {
    epochs += 10;
    cfg.epochs = epochs;
    train(prepared.examples, cfg, params, state);
    em = exact_match_rate(dialogues, params, parses, nullptr, QueryMode::Lexicon);
  }
  const double secs = seconds_since(t0);
  return {prepared.examples.size() == 50 && em >= 0.9 && secs < 120.0,
          fmt("training-set EM %.2f after %zu epochs (theta 0.1), %.1fs", em, epochs, secs)};
}

// 6. Circle-loss closed form and monotonicity.
Outcome circle_loss_fixtures() {
  // One pre-insert cell, no negatives.
  Matrix s1 = Matrix::Zero(1, 1);
  EditMatrix g1(1, 1);
  g1.add(0, 0, EditOp::PreInsert);
  const double fixture = circle_loss(s1, g1, EditOp::PreInsert);
  const bool closed_form = std::abs(fixture - std::log(2.0)) <= 1e-12;

  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> step(1e-3, 1.0);
  std::bernoulli_distribution coin(0.3);
  std::size_t ok = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t rows = 3, cols = 4;
    EditMatrix gold(rows, cols);
    Matrix sc(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        sc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g(rng);
        if (coin(rng)) gold.add(i, j, EditOp::PreInsert);
      }
    const std::size_t i = rng() % rows, j = rng() % cols;
    Matrix moved = sc;
    moved(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += step(rng);
    const double before = circle_loss(sc, gold, EditOp::PreInsert);
    const double after = circle_loss(moved, gold, EditOp::PreInsert);
    const bool positive = gold.contains(i, j, EditOp::PreInsert);
    // Raising a positive score lowers the loss; raising a negative one raises it.
    if (positive ? after < before : after > before) ++ok;
  }
  return {closed_form && ok == 1000,
          fmt("single positive at 0: %.15f (ln 2 = %.15f); %zu/1000 perturbations monotone", fixture, std::log(2.0), ok)};
}

// 7. Metric fixtures.
Outcome metric_fixtures() {
  const std::vector<TokenTexts> same = {{"a", "b", "c"}, {"不", "关", "心"}};
  const auto r = evaluate(same, same);
  const bool identical = r.em == 1.0 && std::abs(r.bleu.at(4) - 100.0) < 1e-9 && std::abs(r.rouge_l - 100.0) < 1e-9;
  const double b = bleu({{"a", "b", "c", "d"}}, {{"a", "b", "c", "d", "e"}});
  const bool brevity = std::abs(b - 77.880) <= 0.01;
  return {identical && brevity,
          fmt("identical corpus EM %.1f BLEU %.3f ROUGE-L %.3f; brevity fixture BLEU %.4f", r.em, r.bleu.at(4), r.rouge_l, b)};
}

// 8. With imported vectors, rewriting beats copying the incomplete utterance.
Outcome beats_copy_baseline() {
  const auto t0 = Clock::now();
  std::vector<Dialogue> dialogues;
  ContextVectors vectors;
  ParseSource parses;
  parses.heuristic = true;
  std::string source;
  const char* subset = std::getenv("IURKIT_GOLD_SUBSET");
  const char* ctxvec = std::getenv("IURKIT_CTXVEC");
  if (subset && ctxvec) {
    dialogues = load_dialogues(subset, format_for_path(subset));
    vectors = ContextVectors::load(ctxvec);
    if (const char* p = std::getenv("IURKIT_PARSES")) parses.sentences = load_conllu(p);
    source = subset;
  } else {
    synth::Config cfg;
    dialogues = synth::to_dialogues(synth::corpus(100, 8, cfg));
    QueryOptions q;
    q.mode = QueryMode::Lexicon;
    std::vector<InputSequence> inputs;
    for (std::size_t i = 0; i < dialogues.size(); ++i)
      inputs.push_back(build_input_sequence(
          make_query(dialogues[i], i, PronounLexicon::default_for(Language::Zh), parses, q), dialogues[i]));
    // Written and read back so the file format is part of the path.
    const auto path = fs::temp_directory_path() / "iurkit_acceptance.ctxvec";
    stand_in::encode_corpus(inputs, 32, 4).save(path);
    vectors = ContextVectors::load(path);
    fs::remove(path);
    source = "generated stand-in (100 synthetic dialogues)";
  }
  std::erase_if(dialogues, [](const Dialogue& d) { return !d.rewritten; });
  if (dialogues.empty()) return {false, "no dialogues with gold rewrites"};

  QueryOptions q;
  q.mode = QueryMode::Lexicon;
  std::vector<TrainingExample> dataset;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < dialogues.size(); ++i) {
    const auto prepared = prepare_corpus(std::span(&dialogues[i], 1), PronounLexicon::default_for(dialogues[i].lang),
                                         parses, q);
    if (prepared.examples.empty()) ++skipped;
    for (const auto& e : prepared.examples) dataset.push_back(e);
  }
  ModelShape shape;
  shape.mode = EncoderMode::ImportedVectors;
  shape.d_model = vectors.d_model();
  auto params = ModelParams::initialize(shape, Vocabulary(), 2);
  auto state = AdamState::for_params(params);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 150;
  cfg.seed = 4;
  train(dataset, cfg, params, state, &vectors);

  std::size_t copy_hits = 0;
  for (const auto& d : dialogues) copy_hits += exact_match(d.incomplete.texts(), d.rewritten->texts()) ? 1 : 0;
  const double copy_em = static_cast<double>(copy_hits) / static_cast<double>(dialogues.size());
  const double model_em = exact_match_rate(dialogues, params, parses, &vectors, QueryMode::Lexicon);
  const double secs = seconds_since(t0);
  return {model_em > copy_em,
          fmt("%s: rewrite EM %.3f vs copy baseline %.3f over %zu dialogues (%zu without supervision), %.1fs",
              source.c_str(), model_em, copy_em, dialogues.size(), skipped, secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 9. Two identical training runs produce identical model files.
Outcome deterministic_training() {
  const auto dir = fs::temp_directory_path() / "iurkit_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "data.jsonl", std::ios::binary);
    for (const auto& ex : synth::corpus(24, 9, {})) out << synth::to_jsonl(ex) << '\n';
  }
  auto run = [&](const std::string& name) {
    const std::string cmd = std::string("IURKIT_LOG=warn \"") + IURKIT_CLI_PATH + "\" train --data \"" +
                            (dir / "data.jsonl").string() + "\" --heuristic-parse --model \"" +
                            (dir / name).string() + "\" --epochs 5 --lr 0.001 --batch-size 4 --seed 13";
    return std::system(cmd.c_str());
  };
  const int a = run("a.model"), b = run("b.model");
  const auto bytes_a = slurp(dir / "a.model"), bytes_b = slurp(dir / "b.model");
  const bool same = a == 0 && b == 0 && !bytes_a.empty() && bytes_a == bytes_b;
  fs::remove_all(dir);
  return {same, fmt("exit codes %d/%d, model files %zu and %zu bytes, %s", a, b, bytes_a.size(), bytes_b.size(),
                    bytes_a == bytes_b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"round-trip supervision", round_trip_supervision},
      {"LCS oracle", lcs_oracle},
      {"RoPE identity", rope_identity},
      {"gradient check", gradient_check},
      {"overfit harness", overfit_harness},
      {"circle-loss fixtures", circle_loss_fixtures},
      {"metric fixtures", metric_fixtures},
      {"beats copy baseline", beats_copy_baseline},
      {"deterministic training", deterministic_training},
  };
  int failures = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << index << ". " << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
