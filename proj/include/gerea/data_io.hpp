#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace gerea {

inline constexpr int kSchemaVersion = 1;

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split parse_split(const std::string& name);

struct Sample {
  std::string sample_id;
  std::string image_ref;
  bool image_missing = false;
  std::string question;               // whitespace-normalized
  std::vector<std::string> answers;   // up to 10 human responses, verbatim
  std::string category;               // one of the 11 OK-VQA categories, or ""
  std::vector<std::string> mc_options;  // empty or exactly 4
  int mc_correct_index = -1;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::string name;
  std::string version;
  std::vector<std::string> category_list;  // 11 entries for OK-VQA
};

DatasetManifest okvqa_manifest();

// Loads OK-VQA (question/annotation JSON pair) or A-OKVQA (single JSON list)
// records from their published layouts under `root`, ordered by sample_id.
// `answer_field` selects "answer" or "raw_answer" for OK-VQA ("raw" keeps the
// annotators' raw strings).
std::vector<Sample> load_dataset(const std::string& name, Split split,
                                 const std::string& root,
                                 const std::string& answer_field = "raw");

// Most frequent normalized answer, ties broken lexicographically.
std::string canonical_answer(const std::vector<std::string>& human_answers);

// ---- JSONL artifacts -------------------------------------------------------

// Atomically writes one JSON object per line (temp file + rename). The first
// line is a header {schema_version, kind, config_hash}. Returns the FNV-1a
// checksum of the file content (hex). A lock file guards against concurrent
// writers to the same path.
std::string write_artifact(const std::string& kind,
                           const std::vector<nlohmann::json>& records,
                           const std::string& path,
                           const std::string& config_hash = "");

struct Artifact {
  std::string kind;
  std::string config_hash;
  std::vector<nlohmann::json> records;
};

Artifact read_artifact(const std::string& path);

std::string file_checksum(const std::string& path);

}  // namespace gerea
