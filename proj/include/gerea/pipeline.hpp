#pragma once

#include "gerea/caption_engine.hpp"
#include "gerea/data_io.hpp"
#include "gerea/exemplar_store.hpp"
#include "gerea/metrics.hpp"
#include "gerea/prompt_builder.hpp"
#include "gerea/reasoner.hpp"
#include "gerea/region_selector.hpp"

#include <string>
#include <vector>

namespace gerea {

struct BackendConfig {
  std::string id = "mock";
  BackendStyle style = BackendStyle::kInstructBlip;
  int patch_count = 16;  // M of the ITE adapter
  int K = 4;
  int m = 2;
  uint64_t seed = 7;
  int budget = -1;  // captions taken into the merged set; -1 = all (m*n)
  DecodingParams decoding;
};

struct RunConfig {
  std::string dataset = "okvqa";
  std::string root;
  std::string train_split = "train";
  std::string eval_split = "test";
  std::string answer_field = "raw";

  std::vector<BackendConfig> backends;
  int n_prompts = kPromptsPerStyle;  // 1..6 ablation axis
  int ite_layer = kDefaultIteLayer;
  int ite_tokens = 8;
  int ite_heads = 2;
  ClampMode clamp_mode = ClampMode::kPositive;

  ExemplarStrategy exemplar_strategy = ExemplarStrategy::kFused;
  int exemplar_n = 2;
  int embed_dim = 16;

  ReasonerConfig reasoner;
  VisualEncoderId visual_encoder = VisualEncoderId::kDetr;

  std::vector<uint64_t> seeds = {0, 1, 2};  // ensemble members
  uint64_t seed = 0;                        // global pipeline seed
  std::string out_dir;
  std::string profile = "default";  // "test" forces deterministic decoding
};

RunConfig load_run_config(const std::string& path);
nlohmann::json config_to_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Each stage checks its upstream artifacts (naming the producing command on
// a miss), refuses config-hash mismatches unless force, and skips work whose
// output is already up to date.
void cmd_regions(const RunConfig& cfg, bool force = false);
void cmd_captions(const RunConfig& cfg, bool force = false);
void cmd_exemplars(const RunConfig& cfg, bool force = false);
void cmd_train(const RunConfig& cfg, bool force = false);
void cmd_predict(const RunConfig& cfg, bool force = false);
void cmd_ensemble(const RunConfig& cfg, bool force = false);
void cmd_evaluate(const RunConfig& cfg, bool force = false);
void cmd_analyze(const RunConfig& cfg, bool force = false);

void run_all(const RunConfig& cfg, bool force = false);

// checksums of every artifact in out_dir, keyed by filename
std::map<std::string, std::string> artifact_checksums(const std::string& out_dir);

// Writes a tiny OK-VQA-layout dataset (questions/annotations JSON plus stub
// image files) for tests and demos.
void write_fixture_dataset(const std::string& root, int train_count,
                           int eval_count, uint64_t seed);

}  // namespace gerea
