#include "gerea/data_io.hpp"
#include "gerea/pipeline.hpp"
#include "gerea/util.hpp"
#include "test_helpers.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <set>

using namespace gerea;
using nlohmann::json;
using gerea::test::TempDir;

namespace {

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  f << j.dump() << "\n";
}

}  // namespace

TEST_CASE("okvqa manifest lists the 11 categories") {
  DatasetManifest m = okvqa_manifest();
  CHECK(m.name == "okvqa");
  CHECK(m.category_list.size() == 11);
  std::set<std::string> unique(m.category_list.begin(), m.category_list.end());
  CHECK(unique.size() == 11);
  CHECK(unique.count("Vehicles and Transportation") == 1);
  CHECK(unique.count("Other") == 1);
}

TEST_CASE("fixture dataset loads with expected shape") {
  TempDir dir("dataio");
  write_fixture_dataset(dir.str(), 12, 5, 3);

  auto train = load_dataset("okvqa", Split::kTrain, dir.str());
  auto eval = load_dataset("okvqa", Split::kTest, dir.str());
  CHECK(train.size() == 12);
  CHECK(eval.size() == 5);

  std::set<std::string> ids;
  auto manifest = okvqa_manifest();
  std::set<std::string> cats(manifest.category_list.begin(),
                             manifest.category_list.end());
  for (size_t i = 0; i < train.size(); ++i) {
    const Sample& s = train[i];
    CHECK(ids.insert(s.sample_id).second);  // ids unique within the split
    CHECK(s.answers.size() == 10);
    CHECK(!s.question.empty());
    CHECK(s.question == collapse_whitespace(s.question));
    CHECK(cats.count(s.category) == 1);
    CHECK_FALSE(s.image_missing);
    if (i > 0) CHECK(train[i - 1].sample_id < s.sample_id);  // ordered
  }

  // pure function of the files: reload matches field-by-field
  auto train2 = load_dataset("okvqa", Split::kTrain, dir.str());
  REQUIRE(train2.size() == train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    CHECK(train2[i].sample_id == train[i].sample_id);
    CHECK(train2[i].question == train[i].question);
    CHECK(train2[i].answers == train[i].answers);
  }
}

TEST_CASE("missing image is flagged, not fatal") {
  TempDir dir("dataio");
  write_fixture_dataset(dir.str(), 3, 1, 0);
  auto before = load_dataset("okvqa", Split::kTrain, dir.str());
  std::filesystem::remove(before[0].image_ref);
  auto after = load_dataset("okvqa", Split::kTrain, dir.str());
  CHECK(after.size() == 3);
  CHECK(after[0].image_missing);
  CHECK_FALSE(after[1].image_missing);
}

TEST_CASE("empty annotation and question files yield an empty list") {
  TempDir dir("dataio");
  write_json(dir.file("OpenEnded_mscoco_train2014_questions.json"),
             json{{"questions", json::array()}});
  write_json(dir.file("mscoco_train2014_annotations.json"),
             json{{"annotations", json::array()}});
  auto samples = load_dataset("okvqa", Split::kTrain, dir.str());
  CHECK(samples.empty());
}

TEST_CASE("missing dataset file names the path") {
  TempDir dir("dataio");
  CHECK_THROWS_WITH_AS(load_dataset("okvqa", Split::kTrain, dir.str()),
                       doctest::Contains("OpenEnded_mscoco_train2014_questions"),
                       UserError);
}

TEST_CASE("malformed record names the sample index") {
  TempDir dir("dataio");
  write_json(dir.file("OpenEnded_mscoco_train2014_questions.json"),
             json{{"questions", json::array({json{{"image_id", 1}}})}});
  write_json(dir.file("mscoco_train2014_annotations.json"),
             json{{"annotations", json::array()}});
  CHECK_THROWS_WITH_AS(load_dataset("okvqa", Split::kTrain, dir.str()),
                       doctest::Contains("index 0"), UserError);
}

TEST_CASE("unknown dataset name is an error") {
  CHECK_THROWS_AS(load_dataset("vqav2", Split::kTrain, "/nowhere"), UserError);
}

TEST_CASE("answer_field selects raw vs processed answers") {
  TempDir dir("dataio");
  write_json(dir.file("OpenEnded_mscoco_train2014_questions.json"),
             json{{"questions",
                   json::array({json{{"question_id", 7},
                                     {"image_id", 7},
                                     {"question", "What  is   this?"}}})}});
  write_json(
      dir.file("mscoco_train2014_annotations.json"),
      json{{"annotations",
            json::array({json{
                {"question_id", 7},
                {"image_id", 7},
                {"question_type", "five"},
                {"answers", json::array({json{{"answer", "stemmed"},
                                              {"raw_answer", "raw form"}}})}}})}});
  auto raw = load_dataset("okvqa", Split::kTrain, dir.str(), "raw");
  auto ans = load_dataset("okvqa", Split::kTrain, dir.str(), "answer");
  REQUIRE(raw.size() == 1);
  CHECK(raw[0].answers == std::vector<std::string>{"raw form"});
  CHECK(ans[0].answers == std::vector<std::string>{"stemmed"});
  CHECK(raw[0].question == "What is this?");  // whitespace normalized
  CHECK(raw[0].category == "Cooking and Food");
}

TEST_CASE("aokvqa loader keeps 4 multiple-choice options") {
  TempDir dir("dataio");
  json records = json::array();
  for (int i = 0; i < 3; ++i) {
    records.push_back(
        json{{"question_id", "q" + std::to_string(i)},
             {"image_id", 100 + i},
             {"question", "Which option fits?"},
             {"direct_answers", json::array({"a", "a", "b"})},
             {"choices", json::array({"a", "b", "c", "d"})},
             {"correct_choice_idx", 1}});
  }
  write_json(dir.file("aokvqa_v1p0_val.json"), records);
  auto samples = load_dataset("aokvqa", Split::kVal, dir.str());
  REQUIRE(samples.size() == 3);
  for (auto& s : samples) {
    CHECK(s.mc_options.size() == 4);
    CHECK(s.mc_correct_index == 1);
    CHECK(s.answers.size() == 3);
  }
}

TEST_CASE("aokvqa rejects a record with the wrong option arity") {
  TempDir dir("dataio");
  write_json(dir.file("aokvqa_v1p0_val.json"),
             json::array({json{{"question_id", "bad"},
                               {"image_id", 1},
                               {"question", "?"},
                               {"choices", json::array({"a", "b", "c"})}}}));
  CHECK_THROWS_WITH_AS(load_dataset("aokvqa", Split::kVal, dir.str()),
                       doctest::Contains("3 choices"), UserError);
}

TEST_CASE("canonical answer is the most frequent, ties lexicographic") {
  CHECK(canonical_answer({"cat", "dog", "cat"}) == "cat");
  CHECK(canonical_answer({"b", "a"}) == "a");
  CHECK(canonical_answer({"Home  Run", "home run", "x"}) == "home run");
  CHECK(canonical_answer({}) == "");
}

TEST_CASE("artifact round-trip preserves 100 records and checksum") {
  TempDir dir("artifact");
  std::vector<json> records;
  for (int i = 0; i < 100; ++i) {
    records.push_back(json{{"sample_id", std::to_string(i)},
                           {"caption", "text " + std::to_string(i * 7)},
                           {"region_index", i % 5}});
  }
  std::string path = dir.file("captions.jsonl");
  std::string sum1 = write_artifact("captions", records, path, "deadbeef");
  Artifact a = read_artifact(path);
  CHECK(a.kind == "captions");
  CHECK(a.config_hash == "deadbeef");
  REQUIRE(a.records.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) CHECK(a.records[i] == records[i]);

  // identical records => identical checksum; checksum matches the file
  std::string sum2 = write_artifact("captions", records, path, "deadbeef");
  CHECK(sum1 == sum2);
  CHECK(file_checksum(path) == sum1);
}

TEST_CASE("artifact writes are guarded by a lock file") {
  TempDir dir("artifact");
  std::string path = dir.file("a.jsonl");
  {
    std::ofstream lock(path + ".lock");
  }
  CHECK_THROWS_WITH_AS(write_artifact("captions", {}, path),
                       doctest::Contains("locked"), UserError);
  std::filesystem::remove(path + ".lock");
  CHECK_NOTHROW(write_artifact("captions", {}, path));
}

TEST_CASE("write to an unwritable path leaves no partial file") {
  std::string path = "/proc/gerea_no_such_dir/sub/a.jsonl";
  CHECK_THROWS_AS(write_artifact("captions", {json{{"x", 1}}}, path),
                  std::exception);
  CHECK_FALSE(std::filesystem::exists(path));
}

TEST_CASE("read_artifact on a missing path names it") {
  CHECK_THROWS_WITH_AS(read_artifact("/no/such/file.jsonl"),
                       doctest::Contains("/no/such/file.jsonl"), UserError);
}

TEST_CASE("read_artifact reports the bad line number") {
  TempDir dir("artifact");
  std::string path = dir.file("broken.jsonl");
  {
    std::ofstream f(path);
    f << "{\"kind\":\"captions\"}\n{not json\n";
  }
  CHECK_THROWS_WITH_AS(read_artifact(path), doctest::Contains("line 2"),
                       UserError);
}
