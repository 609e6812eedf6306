#include "gerea/caption_engine.hpp"

#include <algorithm>
#include <filesystem>
#include <sstream>

using nlohmann::json;

namespace gerea {

DecodingParams default_decoding(BackendStyle style) {
  DecodingParams p;
  p.num_beams = 5;
  p.top_p = 0.9;
  p.temperature = 1.0;
  if (style == BackendStyle::kInstructBlip) {
    p.min_len = 10;
    p.max_len = 25;
  } else {
    p.min_len = 1;
    p.max_len = 32;
  }
  return p;
}

std::string params_hash(const DecodingParams& p) {
  std::ostringstream ss;
  ss << p.num_beams << "|" << p.top_p << "|"
     << (p.deterministic ? 0.0 : p.temperature) << "|" << p.min_len << "|"
     << p.max_len << "|" << p.deterministic;
  return to_hex(fnv1a64(ss.str()));
}

// ---- cache -----------------------------------------------------------------

CaptionCache::CaptionCache(std::string path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  Artifact a = read_artifact(path_);
  for (auto& rec : a.records) {
    entries_[rec.at("key").get<std::string>()] = rec;
  }
}

std::string CaptionCache::key_for(const std::string& backend_id,
                                  const CaptionRequest& req,
                                  const DecodingParams& params) {
  std::string image_checksum = std::filesystem::exists(req.image_ref)
                                   ? file_checksum(req.image_ref)
                                   : "missing:" + req.image_ref;
  std::vector<int> region = req.region;
  std::sort(region.begin(), region.end());
  std::ostringstream ss;
  ss << backend_id << "\x1f" << image_checksum << "\x1f" << req.question << "\x1f";
  for (int p : region) ss << p << ",";
  ss << "\x1f" << req.template_id << "\x1f" << params_hash(params);
  return to_hex(fnv1a64(ss.str()));
}

std::optional<std::string> CaptionCache::lookup(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.at("caption").get<std::string>();
}

void CaptionCache::insert(const std::string& key, const CaptionRequest& req,
                          const std::string& backend_id,
                          const std::string& caption,
                          const DecodingParams& params) {
  std::vector<int> region = req.region;
  std::sort(region.begin(), region.end());
  entries_[key] = json{{"schema_version", kSchemaVersion},
                       {"key", key},
                       {"sample_id", req.sample_id},
                       {"backend_id", backend_id},
                       {"region_index", req.region_index},
                       {"region_patches", region},
                       {"template_id", req.template_id},
                       {"prompt", req.prompt},
                       {"caption", caption},
                       {"params_hash", params_hash(params)}};
}

std::string CaptionCache::flush(const std::string& config_hash) const {
  if (path_.empty()) throw UserError("caption cache has no backing path");
  std::vector<json> records;
  records.reserve(entries_.size());
  for (auto& [key, rec] : entries_) records.push_back(rec);
  return write_artifact("captions", records, path_, config_hash);
}

// ---- generation ------------------------------------------------------------

CaptionSet generate_captions(const Sample& sample, const RegionSet& regions,
                             const std::vector<std::string>& prompts,
                             CaptionBackend& backend,
                             const DecodingParams& params, CaptionCache* cache) {
  if (static_cast<int>(prompts.size()) < 1) {
    throw UserError("generate_captions: empty prompt list");
  }
  CaptionSet out;
  out.sample_id = sample.sample_id;
  std::vector<std::string> failed_pairs;

  for (size_t ri = 0; ri < regions.regions.size(); ++ri) {
    for (size_t ti = 0; ti < prompts.size(); ++ti) {
      CaptionRequest req;
      req.sample_id = sample.sample_id;
      req.image_ref = sample.image_ref;
      req.question = sample.question;
      req.region = regions.regions[ri];
      req.region_index = static_cast<int>(ri);
      req.template_id = static_cast<int>(ti) + 1;
      req.prompt = prompts[ti];

      std::string key = CaptionCache::key_for(backend.backend_id(), req, params);
      std::string caption;
      bool have = false;
      if (cache) {
        if (auto hit = cache->lookup(key)) {
          caption = *hit;
          have = true;
        }
      }
      if (!have) {
        int attempts = 0;
        while (attempts <= 3) {
          try {
            caption = trim(backend.generate(req, params));
            have = !caption.empty();
            if (have) break;
          } catch (const std::exception&) {
            // retried below
          }
          ++attempts;
        }
        if (!have) {
          failed_pairs.push_back("(" + std::to_string(ri) + "," +
                                 std::to_string(req.template_id) + ")");
          continue;
        }
        if (cache) cache->insert(key, req, backend.backend_id(), caption, params);
      }
      out.captions.push_back({caption, static_cast<int>(ri),
                              req.template_id, backend.backend_id()});
    }
  }
  if (!failed_pairs.empty()) {
    std::string list;
    for (auto& p : failed_pairs) list += (list.empty() ? "" : ", ") + p;
    throw UserError("caption generation failed for sample " + sample.sample_id +
                    " at (region, template) pairs: " + list);
  }
  return out;
}

CaptionSet merge_caption_sets(const std::vector<CaptionSet>& sets,
                              const std::vector<int>& budgets) {
  if (sets.size() != budgets.size()) {
    throw UserError("merge_caption_sets: sets and budgets differ in length");
  }
  CaptionSet out;
  for (size_t i = 0; i < sets.size(); ++i) {
    if (i == 0) {
      out.sample_id = sets[i].sample_id;
    } else if (sets[i].sample_id != out.sample_id) {
      throw UserError("merge_caption_sets: sample id mismatch (" +
                      sets[i].sample_id + " vs " + out.sample_id + ")");
    }
    if (budgets[i] > static_cast<int>(sets[i].captions.size())) {
      std::string backend = sets[i].captions.empty()
                                ? "set " + std::to_string(i)
                                : sets[i].captions.front().backend_id;
      throw UserError("merge_caption_sets: budget " + std::to_string(budgets[i]) +
                      " exceeds caption count for " + backend);
    }
    out.captions.insert(out.captions.end(), sets[i].captions.begin(),
                        sets[i].captions.begin() + budgets[i]);
  }
  return out;
}

// ---- mock backend ----------------------------------------------------------

namespace {

const char* kMockWords[] = {"street", "table",  "dog",    "tree",   "plate",
                            "window", "person", "field",  "water",  "sign",
                            "light",  "wall",   "grass",  "sky",    "road",
                            "chair",  "food",   "animal", "market", "boat"};
constexpr int kMockWordCount = 20;

}  // namespace

MockCaptionBackend::MockCaptionBackend(uint64_t seed, BackendStyle style,
                                       std::string id)
    : seed_(seed), style_(style), id_(std::move(id)) {}

void MockCaptionBackend::embed_answer(
    std::string answer, std::function<bool(const CaptionRequest&)> where) {
  embedded_answer_ = std::move(answer);
  embed_where_ = std::move(where);
}

void MockCaptionBackend::embed_answers(
    std::map<std::string, std::string> per_sample,
    std::vector<std::pair<int, int>> slots) {
  per_sample_answers_ = std::move(per_sample);
  embed_slots_ = std::move(slots);
}

std::string MockCaptionBackend::generate(const CaptionRequest& req,
                                         const DecodingParams&) {
  ++calls_;
  if (failures_remaining_ > 0) {
    --failures_remaining_;
    throw std::runtime_error("mock backend: injected failure");
  }
  std::vector<int> region = req.region;
  std::sort(region.begin(), region.end());
  std::ostringstream ss;
  ss << req.sample_id << "\x1f";
  for (int p : region) ss << p << ",";
  ss << "\x1f" << req.template_id;
  Rng rng(mix_seed(seed_, ss.str()));

  std::ostringstream caption;
  caption << "a scene with " << kMockWords[rng.uniform_int(kMockWordCount)]
          << " and " << kMockWords[rng.uniform_int(kMockWordCount)] << " near "
          << kMockWords[rng.uniform_int(kMockWordCount)];

  if (embed_where_ && embed_where_(req)) {
    caption << " the answer is " << embedded_answer_;
  }
  auto it = per_sample_answers_.find(req.sample_id);
  if (it != per_sample_answers_.end()) {
    for (auto& [ri, tid] : embed_slots_) {
      if (ri == req.region_index && tid == req.template_id) {
        caption << " the answer is " << it->second;
        break;
      }
    }
  }
  return caption.str();
}

}  // namespace gerea
