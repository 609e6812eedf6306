#include "gerea/reasoner.hpp"

#include "gerea/metrics.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace gerea;
using nn::Mat;
using nn::Tape;
using nn::Var;
using gerea::test::TempDir;

namespace {

CaptionSet make_captions(const std::string& id, int count) {
  CaptionSet cs;
  cs.sample_id = id;
  for (int i = 0; i < count; ++i) {
    cs.captions.push_back({"caption number " + std::to_string(i), i / 6,
                           i % 6 + 1, "mock"});
  }
  return cs;
}

ExemplarWithCaptions make_exemplar(const std::string& id, int captions) {
  ExemplarWithCaptions ex;
  ex.exemplar.sample_id = id;
  ex.exemplar.question = "exemplar question " + id;
  ex.exemplar.answer = "answer " + id;
  for (int i = 0; i < captions; ++i) {
    ex.captions.push_back("exemplar caption " + id + " " + std::to_string(i));
  }
  return ex;
}

ReasonerConfig tiny_config() {
  ReasonerConfig cfg;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.ff_dim = 16;
  cfg.max_positions = 32;
  cfg.max_passage_tokens = 16;
  cfg.max_answer_tokens = 4;
  cfg.seed = 3;
  return cfg;
}

Vocab tiny_vocab() {
  return Vocab::build({"question what is this context a red sign near water "
                       "answer blue green dog cat tree"});
}

Mat small_visual(uint64_t seed) {
  Rng rng(seed);
  Mat v(kVisualTokens, kVisualWidth);
  for (int r = 0; r < kVisualTokens; ++r) {
    for (int c = 0; c < kVisualWidth; ++c) v(r, c) = 0.05 * rng.normal();
  }
  return v;
}

}  // namespace

TEST_CASE("vocabulary reserves specials and survives round trips") {
  Vocab v = Vocab::build({"The dog RAN", "dog sat"});
  CHECK(v.size() == 4 + 4);  // pad/bos/eos/unk + the, dog, ran, sat
  auto ids = v.encode("Dog ran fast");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] >= 4);
  CHECK(ids[2] == Vocab::kUnk);  // "fast" unseen
  CHECK(v.decode(ids) == "dog ran <unk>");
  CHECK(v.decode({Vocab::kBos, ids[0], Vocab::kEos, Vocab::kPad}) == "dog");
  CHECK(v.encode("the dog sat the dog", 2).size() == 2);
  CHECK(v.encode("", -1).empty());
}

TEST_CASE("passages pair the query with every exemplar block in order") {
  CaptionSet caps = make_captions("s", 3);
  std::vector<ExemplarWithCaptions> exemplars = {make_exemplar("e1", 3),
                                                 make_exemplar("e2", 2)};
  auto out = reformat_inputs("What is this?", caps, exemplars, 0);
  REQUIRE(out.size() == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(out[j].index == j);
    // exemplar captions cycle modulo their own length
    std::string want =
        "question: What is this? context: caption number " + std::to_string(j) +
        " question: exemplar question e1 answer: answer e1 context: exemplar "
        "caption e1 " + std::to_string(j % 3) +
        " question: exemplar question e2 answer: answer e2 context: exemplar "
        "caption e2 " + std::to_string(j % 2);
    CHECK(out[j].text == want);
  }

  auto bare = reformat_inputs("What is this?", caps, {}, 0);
  CHECK(bare[1].text == "question: What is this? context: caption number 1");
}

TEST_CASE("token budget trims exemplar blocks from the tail, never the query") {
  CaptionSet caps = make_captions("s", 1);
  std::vector<ExemplarWithCaptions> exemplars = {make_exemplar("e1", 1),
                                                 make_exemplar("e2", 1)};
  auto full = reformat_inputs("What is this?", caps, exemplars, 0);
  int query_tokens = 8;    // "question: What is this? context: caption number 0"
  int block_tokens = 12;   // each exemplar block

  auto both = reformat_inputs("What is this?", caps, exemplars,
                              query_tokens + 2 * block_tokens);
  CHECK(both[0].text == full[0].text);

  auto one = reformat_inputs("What is this?", caps, exemplars,
                             query_tokens + block_tokens);
  CHECK(one[0].text.find("e1") != std::string::npos);
  CHECK(one[0].text.find("e2") == std::string::npos);

  auto none = reformat_inputs("What is this?", caps, exemplars, query_tokens);
  CHECK(none[0].text == "question: What is this? context: caption number 0");

  CHECK_THROWS_WITH_AS(
      reformat_inputs("What is this?", caps, exemplars, query_tokens - 1),
      doctest::Contains("token budget"), UserError);
  CaptionSet empty;
  empty.sample_id = "s";
  CHECK_THROWS_AS(reformat_inputs("Q?", empty, exemplars, 0), UserError);
}

TEST_CASE("mock visual features are deterministic with the documented shape") {
  MockVisualExtractor ex(9);
  VisualFeature a = ex.extract("img1");
  VisualFeature b = ex.extract("img1");
  VisualFeature c = ex.extract("img2");
  CHECK(a.feature.rows() == 100);
  CHECK(a.feature.cols() == 256);
  CHECK(a.feature.allFinite());
  CHECK((a.feature - b.feature).norm() == 0.0);
  CHECK((a.feature - c.feature).norm() > 0.0);

  MockVisualExtractor pooled(9, VisualEncoderId::kResnetPooled);
  VisualFeature p = pooled.extract("img1");
  for (int r = 1; r < p.feature.rows(); ++r) {
    CHECK((p.feature.row(r) - p.feature.row(0)).norm() == 0.0);
  }
  CHECK(parse_visual_encoder(visual_encoder_name(VisualEncoderId::kClipGrid)) ==
        VisualEncoderId::kClipGrid);
  CHECK_THROWS_AS(parse_visual_encoder("vit"), UserError);
}

TEST_CASE("visual encoder rejects wrongly shaped features") {
  Reasoner model(tiny_config(), tiny_vocab());
  Tape tape;
  CHECK_THROWS_WITH_AS(model.encode_visual(tape, Mat::Zero(10, 256)),
                       doctest::Contains("(100, 256)"), UserError);
}

TEST_CASE("memory stacks per-passage encodings with visual tokens last") {
  Reasoner model(tiny_config(), tiny_vocab());
  const Vocab& v = model.vocab();
  std::vector<std::vector<int>> passages = {
      v.encode("question what is this"), v.encode("a red sign"),
      v.encode("dog near water answer blue")};
  Mat visual = small_visual(4);

  Tape tape;
  Var with = model.build_memory(tape, passages, &visual);
  CHECK(with->val.rows() == 4 + 3 + 5 + 100);
  Var without = model.build_memory(tape, passages, nullptr);
  CHECK(without->val.rows() == 4 + 3 + 5);

  // passages are encoded independently: rows match standalone encodings
  int at = 0;
  for (auto& ids : passages) {
    Var solo = model.encode_passage(tape, ids);
    CHECK((with->val.middleRows(at, ids.size()) - solo->val).norm() < 1e-12);
    at += static_cast<int>(ids.size());
  }
  // and permuting passages permutes, not changes, their encodings
  std::vector<std::vector<int>> swapped = {passages[2], passages[0], passages[1]};
  Var perm = model.build_memory(tape, swapped, nullptr);
  CHECK((perm->val.topRows(5) - without->val.bottomRows(5)).norm() < 1e-12);

  CHECK_THROWS_AS(model.build_memory(tape, {}, nullptr), UserError);
  CHECK_THROWS_AS(model.encode_passage(tape, {}), UserError);
}

TEST_CASE("analytic gradients of the sequence loss match finite differences") {
  Reasoner model(tiny_config(), tiny_vocab());
  const Vocab& v = model.vocab();
  std::vector<std::vector<int>> passages = {v.encode("question what is this"),
                                            v.encode("a red sign near water")};
  Mat visual = small_visual(8);
  std::vector<int> answer = v.encode("blue");

  auto forward = [&]() {
    Tape tape;
    Var memory = model.build_memory(tape, passages, &visual);
    return model.sequence_loss(tape, memory, answer)->val(0, 0);
  };
  for (auto& p : model.parameters()) p->grad.setZero();
  {
    Tape tape;
    Var memory = model.build_memory(tape, passages, &visual);
    tape.backward(model.sequence_loss(tape, memory, answer));
  }

  Rng pick(77);
  const double step = 1e-5;
  for (auto& p : model.parameters()) {
    // spot-check a few entries of every parameter tensor
    int checks = std::min<int>(3, static_cast<int>(p->val.size()));
    for (int k = 0; k < checks; ++k) {
      int r = static_cast<int>(pick.uniform_int(p->val.rows()));
      int c = static_cast<int>(pick.uniform_int(p->val.cols()));
      double saved = p->val(r, c);
      p->val(r, c) = saved + step;
      double up = forward();
      p->val(r, c) = saved - step;
      double down = forward();
      p->val(r, c) = saved;
      double fd = (up - down) / (2.0 * step);
      double got = p->grad(r, c);
      double denom = std::max({1e-6, std::abs(fd), std::abs(got)});
      CHECK(std::abs(got - fd) / denom < 1e-4);
    }
  }
}

TEST_CASE("a freshly initialized model scores near the uniform baseline") {
  Vocab v = tiny_vocab();
  Reasoner model(tiny_config(), v);
  std::vector<std::vector<int>> passages = {v.encode("question what is this")};
  ReasonerExample ex;
  ex.sample_id = "s";
  ex.passage_ids = passages;
  ex.visual = small_visual(1);
  ex.answer_ids = v.encode("red sign");
  double loss = model.dataset_loss({ex});
  CHECK(std::abs(loss - std::log(v.size())) < 0.3);
}

TEST_CASE("training reduces the loss and the model memorizes tiny data") {
  Vocab v = tiny_vocab();
  ReasonerConfig cfg = tiny_config();
  cfg.dim = 16;
  cfg.ff_dim = 32;
  cfg.lr = 3e-3;
  cfg.warmup_steps = 10;
  cfg.total_steps = 160;
  cfg.eval_every = 80;
  Reasoner model(cfg, v);

  std::vector<ReasonerExample> data;
  std::vector<std::pair<std::string, std::string>> qa = {
      {"question what is this context a red sign", "red"},
      {"question what is this context a blue dog", "blue"}};
  for (size_t i = 0; i < qa.size(); ++i) {
    ReasonerExample ex;
    ex.sample_id = "s" + std::to_string(i);
    ex.passage_ids = {v.encode(qa[i].first)};
    ex.visual = small_visual(i);
    ex.answer_ids = v.encode(qa[i].second);
    ex.answer_text = qa[i].second;
    data.push_back(std::move(ex));
  }

  double before = model.dataset_loss(data);
  TrainingLog log = model.train(data, data);
  double after = model.dataset_loss(data);
  CHECK(log.losses.size() == 160);
  CHECK(log.losses.front().first == 0);
  CHECK(log.dev_losses.size() == 2);
  CHECK(after < 0.25 * before);
  for (auto& ex : data) {
    CHECK(model.decode_answer(ex.passage_ids, &ex.visual) == ex.answer_text);
  }
  CHECK_THROWS_AS(model.train({}, {}), UserError);
}

TEST_CASE("generation stops at end-of-sequence within the token cap") {
  Vocab v = tiny_vocab();
  Reasoner model(tiny_config(), v);
  std::vector<std::vector<int>> passages = {v.encode("a red sign")};
  std::string out = model.decode_answer(passages, nullptr);
  auto ids = v.encode(out);
  CHECK(static_cast<int>(ids.size()) <= model.config().max_answer_tokens);
}

TEST_CASE("checkpoints restore the exact model") {
  TempDir dir("ckpt");
  Vocab v = tiny_vocab();
  Reasoner model(tiny_config(), v);
  std::vector<std::vector<int>> passages = {v.encode("question what is this"),
                                            v.encode("dog near water")};
  Mat visual = small_visual(2);
  std::string path = dir.file("model.bin");
  model.save(path);

  Reasoner loaded = Reasoner::load(path);
  REQUIRE(loaded.parameters().size() == model.parameters().size());
  for (size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK((loaded.parameters()[i]->val - model.parameters()[i]->val).norm() ==
          0.0);
  }
  CHECK(loaded.vocab().words() == v.words());
  CHECK(loaded.decode_answer(passages, &visual) ==
        model.decode_answer(passages, &visual));

  // corruption is detected
  {
    std::ofstream f(dir.file("bad.bin"), std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS_AS(Reasoner::load(dir.file("bad.bin")), UserError);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  {
    std::ofstream f(dir.file("trunc.bin"), std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(Reasoner::load(dir.file("trunc.bin")), UserError);
  CHECK_THROWS_AS(Reasoner::load(dir.file("absent.bin")), UserError);
}

TEST_CASE("majority vote matches exhaustive enumeration") {
  CHECK(ensemble_vote({"cat", "cat", "dog"}) == "cat");
  CHECK(ensemble_vote({"a", "b", "c"}) == "a");  // tie: lowest seed index
  CHECK(ensemble_vote({"dog", "cat", "cat"}) == "cat");
  CHECK(ensemble_vote({"x"}) == "x");
  CHECK_THROWS_AS(ensemble_vote({}), UserError);

  // oracle: brute-force count over every 3-seed pattern of <=3 answers
  std::vector<std::string> alphabet = {"a", "b", "c"};
  for (auto& s0 : alphabet) {
    for (auto& s1 : alphabet) {
      for (auto& s2 : alphabet) {
        std::vector<std::string> votes = {s0, s1, s2};
        std::string want;
        int best = 0;
        for (auto& candidate : votes) {
          int n = static_cast<int>(std::count(votes.begin(), votes.end(),
                                              candidate));
          if (n > best) {
            best = n;
            want = candidate;
          }
        }
        CHECK(ensemble_vote(votes) == want);
      }
    }
  }
}

TEST_CASE("multiple choice picks the best token overlap, ties lowest index") {
  CHECK(select_mc_option("blue", {"red", "blue", "green", "dark blue"}) == 1);
  CHECK(select_mc_option("Dark Blue!", {"red", "blue", "green", "dark blue"}) == 3);
  CHECK(select_mc_option("zebra", {"red", "blue", "green", "white"}) == 0);
  CHECK(select_mc_option("red or blue", {"blue thing", "red thing"}) == 0);
  CHECK_THROWS_AS(select_mc_option("x", {}), UserError);
}
