#include "gerea/metrics.hpp"

#include "gerea/util.hpp"

#include <doctest.h>

#include <cmath>

using namespace gerea;

namespace {

CaptionSet captions_of(const std::string& id,
                       const std::vector<std::string>& texts) {
  CaptionSet cs;
  cs.sample_id = id;
  for (size_t i = 0; i < texts.size(); ++i) {
    cs.captions.push_back({texts[i], static_cast<int>(i), 1, "mock"});
  }
  return cs;
}

std::string random_phrase(Rng& rng) {
  static const std::vector<std::string> words = {
      "red", "blue", "green", "dog", "cat", "bird", "car", "boat", "sign"};
  int n = 1 + static_cast<int>(rng.uniform_int(3));
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (!out.empty()) out += " ";
    out += words[rng.uniform_int(words.size())];
  }
  return out;
}

}  // namespace

TEST_CASE("answer normalization strips punctuation and squeezes spaces") {
  CHECK(normalize_answer("  Home   Run! ") == "home run");
  CHECK(normalize_answer("Siamese") == "siamese");
  CHECK(normalize_answer("DON'T-STOP") == "dontstop");
  CHECK(normalize_answer("...") == "");
  CHECK(normalize_answer("") == "");

  Rng rng(3);
  const std::string pool = "aB c.D!  e,F g";
  for (int i = 0; i < 10000; ++i) {
    std::string s;
    int len = static_cast<int>(rng.uniform_int(12));
    for (int j = 0; j < len; ++j) s += pool[rng.uniform_int(pool.size())];
    CHECK(normalize_answer(normalize_answer(s)) == normalize_answer(s));
  }
}

TEST_CASE("vqa scoring caps at three matching annotators") {
  std::vector<std::string> answers = {"cat", "Cat!", "cat", "cat", "dog",
                                      "dog", "bird", "cat", "fish", "cow"};
  CHECK(vqa_score("cat", answers) == 1.0);   // 5 matches
  CHECK(vqa_score("bird", answers) == doctest::Approx(1.0 / 3));
  CHECK(vqa_score("dog", answers) == doctest::Approx(2.0 / 3));
  CHECK(vqa_score("horse", answers) == 0.0);
  CHECK_THROWS_AS(vqa_score("cat", {}), UserError);
}

TEST_CASE("vqa scoring agrees with a brute-force oracle on random fixtures") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> answers;
    int n = 1 + static_cast<int>(rng.uniform_int(10));
    for (int j = 0; j < n; ++j) answers.push_back(random_phrase(rng));
    std::string pred = random_phrase(rng);

    int matches = 0;
    for (auto& a : answers) {
      if (normalize_answer(a) == normalize_answer(pred)) ++matches;
    }
    double want = std::min(matches / 3.0, 1.0);
    double got = vqa_score(pred, answers);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    bool in_set = got == 0.0 || got == 1.0 ||
                  std::abs(got - 1.0 / 3) < 1e-12 ||
                  std::abs(got - 2.0 / 3) < 1e-12;
    CHECK(in_set);
  }
}

TEST_CASE("containment requires whole normalized words") {
  CHECK(caption_contains_answer("a lively party scene", "party"));
  CHECK_FALSE(caption_contains_answer("a lively party scene", "art"));
  CHECK(caption_contains_answer("The Dog! sleeps", "dog"));
  CHECK(caption_contains_answer("dark blue car parked", "blue car"));
  CHECK_FALSE(caption_contains_answer("bluebird on a branch", "blue"));
  CHECK(caption_contains_answer("cat", "cat"));  // whole caption
  CHECK_FALSE(caption_contains_answer("a cat", ""));
  CHECK_FALSE(caption_contains_answer("", "cat"));
}

TEST_CASE("hit rate counts samples with at least one covering caption") {
  std::map<std::string, CaptionSet> caps = {
      {"a", captions_of("a", {"no match here", "a red car waits"})},
      {"b", captions_of("b", {"nothing", "still nothing"})},
      {"c", captions_of("c", {"one dog runs", "two dogs run"})},
  };
  std::map<std::string, std::string> answers = {
      {"a", "red car"}, {"b", "zebra"}, {"c", "dog"}};
  CHECK(answer_hit_rate(caps, answers) == doctest::Approx(100.0 * 2 / 3));

  std::map<std::string, std::string> none = {
      {"a", "zebra"}, {"b", "zebra"}, {"c", "zebra"}};
  CHECK(answer_hit_rate(caps, none) == 0.0);
  CHECK(answer_hit_rate({}, {}) == 0.0);

  answers.erase("b");
  CHECK_THROWS_WITH_AS(answer_hit_rate(caps, answers),
                       doctest::Contains("captions-only:b"), UserError);
  answers["b"] = "zebra";
  answers["d"] = "extra";
  CHECK_THROWS_WITH_AS(answer_hit_rate(caps, answers),
                       doctest::Contains("answers-only:d"), UserError);
}

TEST_CASE("noise rate is the per-caption miss fraction") {
  std::map<std::string, CaptionSet> caps = {
      {"a", captions_of("a", {"dog here", "dog there", "no", "no"})},
      {"b", captions_of("b", {"cat naps", "no", "no", "no"})},
  };
  std::map<std::string, std::string> answers = {{"a", "dog"}, {"b", "cat"}};
  // 3 hits out of 8 captions -> 62.5% noise
  CHECK(answer_noise_rate(caps, answers) == doctest::Approx(62.5));

  std::map<std::string, std::string> all = {{"a", "no"}, {"b", "no"}};
  CHECK(answer_noise_rate(caps, all) == doctest::Approx(100.0 * (1 - 5.0 / 8)));
  CHECK(answer_noise_rate({}, {}) == 100.0);

  caps["b"].captions.pop_back();
  CHECK_THROWS_WITH_AS(answer_noise_rate(caps, answers),
                       doctest::Contains("ragged"), UserError);
}

TEST_CASE("hit and noise rates agree with a brute-force oracle") {
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, CaptionSet> caps;
    std::map<std::string, std::string> answers;
    int samples = 1 + static_cast<int>(rng.uniform_int(6));
    int per = 1 + static_cast<int>(rng.uniform_int(4));
    for (int s = 0; s < samples; ++s) {
      std::string id = "s" + std::to_string(s);
      std::vector<std::string> texts;
      for (int c = 0; c < per; ++c) texts.push_back(random_phrase(rng));
      caps[id] = captions_of(id, texts);
      answers[id] = random_phrase(rng);
    }
    int sample_hits = 0;
    long caption_hits = 0;
    for (auto& [id, set] : caps) {
      bool any = false;
      for (auto& rec : set.captions) {
        bool hit = caption_contains_answer(rec.text, answers[id]);
        any = any || hit;
        caption_hits += hit;
      }
      sample_hits += any;
    }
    double ahr = answer_hit_rate(caps, answers);
    double anr = answer_noise_rate(caps, answers);
    CHECK(ahr == doctest::Approx(100.0 * sample_hits / samples));
    CHECK(anr ==
          doctest::Approx(100.0 * (1.0 - double(caption_hits) / (samples * per))));
    if (ahr == 0.0) CHECK(anr == 100.0);  // no sample hit => no caption hit
    if (anr == 100.0) CHECK(ahr == 0.0);
  }
}

TEST_CASE("behavior quadrants split samples by who answered correctly") {
  std::map<std::string, std::vector<std::string>> gold = {
      {"a", {"red", "red", "red"}},
      {"b", {"dog", "dog", "dog"}},
      {"c", {"two", "two", "two"}},
      {"d", {"sun", "sun", "sun"}},
  };
  // one sample per quadrant; all predictions differ from the backend's
  std::map<std::string, std::string> system = {
      {"a", "red"}, {"b", "cat"}, {"c", "two"}, {"d", "moon"}};
  std::map<std::string, std::string> backend = {
      {"a", "red!"}, {"b", "dog"}, {"c", "six"}, {"d", "rain"}};
  BehaviorAnalysis ba = behavior_analysis(system, backend, gold);
  CHECK(ba.sample_count == 4);
  CHECK(ba.quadrants[0][0] == doctest::Approx(25.0));  // both right (a)
  CHECK(ba.quadrants[0][1] == doctest::Approx(25.0));  // backend only (b)
  CHECK(ba.quadrants[1][0] == doctest::Approx(25.0));  // system only (c)
  CHECK(ba.quadrants[1][1] == doctest::Approx(25.0));  // both wrong (d)
  double total = ba.quadrants[0][0] + ba.quadrants[0][1] + ba.quadrants[1][0] +
                 ba.quadrants[1][1];
  CHECK(total == doctest::Approx(100.0));
  // "red" vs "red!" normalize equal: one same-answer sample, fully correct
  CHECK(ba.same_share == doctest::Approx(25.0));
  CHECK(ba.same_accuracy == doctest::Approx(100.0));
  CHECK(ba.different_accuracy == doctest::Approx(100.0 / 3));

  std::map<std::string, std::string> identical = backend;
  BehaviorAnalysis same = behavior_analysis(identical, backend, gold);
  CHECK(same.same_share == doctest::Approx(100.0));
  CHECK(same.quadrants[0][1] == 0.0);
  CHECK(same.quadrants[1][0] == 0.0);

  system.erase("d");
  CHECK_THROWS_WITH_AS(behavior_analysis(system, backend, gold),
                       doctest::Contains("d"), UserError);
  system["d"] = "x";
  system["extra"] = "x";
  CHECK_THROWS_AS(behavior_analysis(system, backend, gold), UserError);
}

TEST_CASE("report serialization keeps every published field") {
  EvalReport r;
  r.overall_accuracy = 42.5;
  r.per_category = {{"Other", 50.0}, {"Plants and Animals", 25.0}};
  r.per_category_count = {{"Other", 4}, {"Plants and Animals", 8}};
  r.ahr = 80.0;
  r.anr = 60.0;
  r.sample_count = 12;
  r.caption_count = 120;
  r.behavior.quadrants[1][0] = 10.0;
  r.behavior.same_share = 70.0;

  nlohmann::json j = report_to_json(r);
  CHECK(j.at("overall_accuracy") == 42.5);
  CHECK(j.at("ahr") == 80.0);
  CHECK(j.at("anr") == 60.0);
  CHECK(j.at("sample_count") == 12);
  CHECK(j.at("caption_count") == 120);
  CHECK(j.at("containment_rule") == "whole-word-normalized-v1");
  CHECK(j.at("per_category").at("Other").at("accuracy") == 50.0);
  CHECK(j.at("per_category").at("Other").at("count") == 4);
  CHECK(j.at("behavior").at("quadrants").at("backend_wrong_system_correct") ==
        10.0);
  CHECK(j.at("behavior").at("same_share") == 70.0);

  std::string table = render_category_table(r);
  CHECK(table.find("Other") != std::string::npos);
  CHECK(table.find("Plants and Animals") != std::string::npos);
  CHECK(table.find("Overall") != std::string::npos);
  CHECK(table.find("42.50") != std::string::npos);
}
