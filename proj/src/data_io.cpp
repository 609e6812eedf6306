#include "gerea/data_io.hpp"

#include "gerea/util.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace gerea {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw UserError("unknown split: " + name);
}

DatasetManifest okvqa_manifest() {
  return DatasetManifest{
      "okvqa",
      "1.1",
      {"Vehicles and Transportation", "Brands, Companies and Products",
       "Objects, Material and Clothing", "Sports and Recreation",
       "Cooking and Food", "Geography, History, Language and Culture",
       "People and Everyday Life", "Plants and Animals",
       "Science and Technology", "Weather and Climate", "Other"}};
}

namespace {

const std::map<std::string, std::string>& okvqa_category_codes() {
  static const std::map<std::string, std::string> codes = {
      {"one", "Vehicles and Transportation"},
      {"two", "Brands, Companies and Products"},
      {"three", "Objects, Material and Clothing"},
      {"four", "Sports and Recreation"},
      {"five", "Cooking and Food"},
      {"six", "Geography, History, Language and Culture"},
      {"seven", "People and Everyday Life"},
      {"eight", "Plants and Animals"},
      {"nine", "Science and Technology"},
      {"ten", "Weather and Climate"},
      {"other", "Other"}};
  return codes;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("missing dataset file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UserError("failed to parse " + path + ": " + e.what());
  }
  return j;
}

std::string image_path_for(const std::string& root, long long image_id) {
  return root + "/images/" + std::to_string(image_id) + ".jpg";
}

void resolve_image(Sample& s, const std::string& root, long long image_id) {
  s.image_ref = image_path_for(root, image_id);
  s.image_missing = !fs::exists(s.image_ref);
}

std::vector<Sample> load_okvqa(Split split, const std::string& root,
                               const std::string& answer_field) {
  // OK-VQA publishes train2014 questions/annotations and evaluates on the
  // val2014 files, which serve as its test split.
  std::string tag = split == Split::kTrain ? "train2014" : "val2014";
  json qj = load_json_file(root + "/OpenEnded_mscoco_" + tag + "_questions.json");
  json aj = load_json_file(root + "/mscoco_" + tag + "_annotations.json");

  std::map<long long, json> annotations;
  if (aj.contains("annotations")) {
    for (auto& a : aj["annotations"]) {
      annotations[a.value("question_id", -1LL)] = a;
    }
  }

  std::vector<Sample> out;
  if (!qj.contains("questions")) return out;
  size_t idx = 0;
  for (auto& q : qj["questions"]) {
    Sample s;
    try {
      long long qid = q.at("question_id").get<long long>();
      long long image_id = q.at("image_id").get<long long>();
      s.sample_id = std::to_string(qid);
      s.question = collapse_whitespace(q.at("question").get<std::string>());
      s.split = split;
      resolve_image(s, root, image_id);
      auto it = annotations.find(qid);
      if (it != annotations.end()) {
        const json& a = it->second;
        for (auto& ans : a.at("answers")) {
          std::string field = answer_field == "raw" ? "raw_answer" : "answer";
          if (ans.contains(field)) {
            s.answers.push_back(ans.at(field).get<std::string>());
          } else {
            s.answers.push_back(ans.at("answer").get<std::string>());
          }
        }
        std::string code = a.value("question_type", "");
        auto cit = okvqa_category_codes().find(code);
        if (cit != okvqa_category_codes().end()) s.category = cit->second;
      }
    } catch (const json::exception& e) {
      throw UserError("malformed okvqa record at index " + std::to_string(idx) +
                      ": " + e.what());
    }
    out.push_back(std::move(s));
    ++idx;
  }
  return out;
}

std::vector<Sample> load_aokvqa(Split split, const std::string& root) {
  json j = load_json_file(root + "/aokvqa_v1p0_" + split_name(split) + ".json");
  std::vector<Sample> out;
  size_t idx = 0;
  for (auto& r : j) {
    Sample s;
    try {
      s.sample_id = r.at("question_id").get<std::string>();
      s.question = collapse_whitespace(r.at("question").get<std::string>());
      s.split = split;
      resolve_image(s, root, r.at("image_id").get<long long>());
      if (r.contains("direct_answers")) {
        for (auto& a : r["direct_answers"]) s.answers.push_back(a.get<std::string>());
      }
      if (r.contains("choices")) {
        for (auto& c : r["choices"]) s.mc_options.push_back(c.get<std::string>());
        if (s.mc_options.size() != 4) {
          throw UserError("aokvqa record " + std::to_string(idx) +
                          " has " + std::to_string(s.mc_options.size()) +
                          " choices, expected 4");
        }
        s.mc_correct_index = r.value("correct_choice_idx", -1);
      }
    } catch (const json::exception& e) {
      throw UserError("malformed aokvqa record at index " + std::to_string(idx) +
                      ": " + e.what());
    }
    out.push_back(std::move(s));
    ++idx;
  }
  return out;
}

}  // namespace

std::vector<Sample> load_dataset(const std::string& name, Split split,
                                 const std::string& root,
                                 const std::string& answer_field) {
  std::vector<Sample> out;
  if (name == "okvqa") {
    out = load_okvqa(split, root, answer_field);
  } else if (name == "aokvqa") {
    out = load_aokvqa(split, root);
  } else {
    throw UserError("unknown dataset: " + name);
  }
  std::sort(out.begin(), out.end(),
            [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; });
  return out;
}

std::string canonical_answer(const std::vector<std::string>& human_answers) {
  std::map<std::string, int> counts;
  for (auto& a : human_answers) {
    std::string norm = collapse_whitespace(to_lower(a));
    if (!norm.empty()) counts[norm]++;
  }
  std::string best;
  int best_count = 0;
  for (auto& [ans, n] : counts) {  // map iteration = lexicographic tie-break
    if (n > best_count) {
      best = ans;
      best_count = n;
    }
  }
  return best;
}

// ---- JSONL artifacts -------------------------------------------------------

namespace {

class FileLock {
 public:
  explicit FileLock(const std::string& path) : path_(path + ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw UserError("artifact is locked by another writer: " + path);
    }
    std::fclose(f);
  }
  ~FileLock() { std::remove(path_.c_str()); }

 private:
  std::string path_;
};

}  // namespace

std::string write_artifact(const std::string& kind,
                           const std::vector<json>& records,
                           const std::string& path,
                           const std::string& config_hash) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());

  FileLock lock(path);

  std::ostringstream buf;
  json header = {{"schema_version", kSchemaVersion},
                 {"kind", kind},
                 {"config_hash", config_hash}};
  buf << header.dump() << "\n";
  for (size_t i = 0; i < records.size(); ++i) {
    try {
      buf << records[i].dump() << "\n";
    } catch (const json::exception& e) {
      std::string id = records[i].is_object() && records[i].contains("sample_id")
                           ? records[i]["sample_id"].dump()
                           : std::to_string(i);
      throw UserError("failed to serialize " + kind + " record " + id + ": " +
                      e.what());
    }
  }
  std::string content = buf.str();

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write artifact: " + path);
    out << content;
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw UserError("write failed for artifact: " + path);
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw UserError("cannot rename artifact into place: " + path + ": " +
                    ec.message());
  }
  return to_hex(fnv1a64(content));
}

Artifact read_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("missing artifact: " + path);
  Artifact a;
  std::string line;
  bool first = true;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw UserError("bad JSONL line " + std::to_string(lineno) + " in " +
                      path + ": " + e.what());
    }
    if (first) {
      a.kind = j.value("kind", "");
      a.config_hash = j.value("config_hash", "");
      first = false;
    } else {
      a.records.push_back(std::move(j));
    }
  }
  return a;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return to_hex(fnv1a64(ss.str()));
}

}  // namespace gerea
