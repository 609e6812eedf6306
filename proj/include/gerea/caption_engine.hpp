#pragma once

#include "gerea/data_io.hpp"
#include "gerea/prompt_builder.hpp"
#include "gerea/region_selector.hpp"
#include "gerea/util.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gerea {

struct DecodingParams {
  int num_beams = 5;
  double top_p = 0.9;
  double temperature = 1.0;
  int min_len = 10;
  int max_len = 25;
  // test profile: pure beam search, temperature ignored
  bool deterministic = false;
};

DecodingParams default_decoding(BackendStyle style);
std::string params_hash(const DecodingParams& p);

struct CaptionRequest {
  std::string sample_id;
  std::string image_ref;
  std::string question;
  std::vector<int> region;  // patch indices, draw order
  int region_index = 0;
  int template_id = 1;
  std::string prompt;
};

class CaptionBackend {
 public:
  virtual ~CaptionBackend() = default;
  virtual std::string backend_id() const = 0;
  virtual BackendStyle style() const = 0;
  virtual std::string generate(const CaptionRequest& req,
                               const DecodingParams& params) = 0;
};

struct CaptionRecord {
  std::string text;
  int region_index = 0;  // in [0, m)
  int template_id = 1;   // in [1, 6]
  std::string backend_id;
};

struct CaptionSet {
  std::string sample_id;
  std::vector<CaptionRecord> captions;  // region-major, then template_id
};

// File-backed caption cache (captions.jsonl line schema). Keys cover
// backend, image content, question, region, template and decoding params, so
// config changes never produce stale hits.
class CaptionCache {
 public:
  CaptionCache() = default;
  explicit CaptionCache(std::string path);  // loads existing entries if present

  static std::string key_for(const std::string& backend_id,
                             const CaptionRequest& req,
                             const DecodingParams& params);

  std::optional<std::string> lookup(const std::string& key) const;
  void insert(const std::string& key, const CaptionRequest& req,
              const std::string& backend_id, const std::string& caption,
              const DecodingParams& params);
  // rewrites the backing file (sorted by key, so content is run-stable)
  std::string flush(const std::string& config_hash = "") const;

  size_t size() const { return entries_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::map<std::string, nlohmann::json> entries_;  // key -> full line record
};

// Generates the m x n captions for one sample in region-major order,
// consulting `cache` first. A record that fails more than 3 times aborts
// with the list of failed (region, template) pairs.
CaptionSet generate_captions(const Sample& sample, const RegionSet& regions,
                             const std::vector<std::string>& prompts,
                             CaptionBackend& backend,
                             const DecodingParams& params,
                             CaptionCache* cache = nullptr);

// Concatenates each set's first budgets[i] captions, in set order.
CaptionSet merge_caption_sets(const std::vector<CaptionSet>& sets,
                              const std::vector<int>& budgets);

// Deterministic caption backend for tests and the test pipeline profile.
// Caption text is a pure function of (sample_id, sorted region indices,
// template_id, seed); designated answers can be embedded into chosen
// (region_index, template_id) records to build exact AHR/ANR fixtures.
class MockCaptionBackend : public CaptionBackend {
 public:
  explicit MockCaptionBackend(uint64_t seed,
                              BackendStyle style = BackendStyle::kInstructBlip,
                              std::string id = "mock");

  std::string backend_id() const override { return id_; }
  BackendStyle style() const override { return style_; }
  std::string generate(const CaptionRequest& req,
                       const DecodingParams& params) override;

  // embed `answer` into the caption whenever `where` returns true
  void embed_answer(std::string answer,
                    std::function<bool(const CaptionRequest&)> where);
  // embed each sample's own answer at the given (region_index, template_id)
  void embed_answers(std::map<std::string, std::string> per_sample,
                     std::vector<std::pair<int, int>> slots);

  void fail_next(int n) { failures_remaining_ = n; }
  int call_count() const { return calls_; }
  void reset_call_count() { calls_ = 0; }

 private:
  uint64_t seed_;
  BackendStyle style_;
  std::string id_;
  int calls_ = 0;
  int failures_remaining_ = 0;
  std::string embedded_answer_;
  std::function<bool(const CaptionRequest&)> embed_where_;
  std::map<std::string, std::string> per_sample_answers_;
  std::vector<std::pair<int, int>> embed_slots_;
};

}  // namespace gerea
