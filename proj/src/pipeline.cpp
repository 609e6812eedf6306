#include "gerea/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace gerea {

// ---- config ----------------------------------------------------------------

namespace {

DecodingParams decoding_from_json(const json& j, BackendStyle style) {
  DecodingParams p = default_decoding(style);
  if (j.contains("num_beams")) p.num_beams = j["num_beams"];
  if (j.contains("top_p")) p.top_p = j["top_p"];
  if (j.contains("temperature")) p.temperature = j["temperature"];
  if (j.contains("min_len")) p.min_len = j["min_len"];
  if (j.contains("max_len")) p.max_len = j["max_len"];
  return p;
}

json decoding_to_json(const DecodingParams& p) {
  return {{"num_beams", p.num_beams}, {"top_p", p.top_p},
          {"temperature", p.temperature}, {"min_len", p.min_len},
          {"max_len", p.max_len}};
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("missing config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UserError("bad config file " + path + ": " + e.what());
  }

  RunConfig cfg;
  if (j.contains("dataset")) {
    auto& d = j["dataset"];
    cfg.dataset = d.value("name", cfg.dataset);
    cfg.root = d.value("root", cfg.root);
    cfg.train_split = d.value("train_split", cfg.train_split);
    cfg.eval_split = d.value("eval_split", cfg.eval_split);
    cfg.answer_field = d.value("answer_field", cfg.answer_field);
  }
  if (j.contains("backends")) {
    for (auto& b : j["backends"]) {
      BackendConfig bc;
      bc.id = b.value("id", bc.id);
      bc.style = parse_backend_style(b.value("style", "instructblip"));
      bc.patch_count = b.value("patch_count", bc.patch_count);
      // K defaults per style: 20 for instructblip-like, 30 for llava-like
      bc.K = b.value("K", bc.style == BackendStyle::kLlava ? 30 : 20);
      bc.m = b.value("m", 20);
      bc.seed = b.value("seed", bc.seed);
      bc.budget = b.value("budget", bc.budget);
      bc.decoding = decoding_from_json(b.value("decoding", json::object()), bc.style);
      cfg.backends.push_back(bc);
    }
  }
  if (cfg.backends.empty()) cfg.backends.push_back(BackendConfig{});
  cfg.n_prompts = j.value("n_prompts", cfg.n_prompts);
  if (cfg.n_prompts < 1 || cfg.n_prompts > kPromptsPerStyle) {
    throw UserError("n_prompts must be in [1, 6]");
  }
  cfg.ite_layer = j.value("ite_layer", cfg.ite_layer);
  cfg.ite_tokens = j.value("ite_tokens", cfg.ite_tokens);
  cfg.ite_heads = j.value("ite_heads", cfg.ite_heads);
  cfg.clamp_mode = parse_clamp_mode(j.value("clamp_mode", "positive"));
  if (j.contains("exemplar")) {
    auto& e = j["exemplar"];
    cfg.exemplar_strategy = parse_strategy(e.value("strategy", "fused"));
    cfg.exemplar_n = e.value("N", cfg.exemplar_n);
    cfg.embed_dim = e.value("embed_dim", cfg.embed_dim);
  }
  if (j.contains("reasoner")) {
    auto& r = j["reasoner"];
    cfg.reasoner.dim = r.value("dim", cfg.reasoner.dim);
    cfg.reasoner.layers = r.value("layers", cfg.reasoner.layers);
    cfg.reasoner.ff_dim = r.value("ff_dim", cfg.reasoner.ff_dim);
    cfg.reasoner.max_positions = r.value("max_positions", cfg.reasoner.max_positions);
    cfg.reasoner.max_passage_tokens =
        r.value("max_passage_tokens", cfg.reasoner.max_passage_tokens);
    cfg.reasoner.max_answer_tokens =
        r.value("max_answer_tokens", cfg.reasoner.max_answer_tokens);
    cfg.reasoner.lr = r.value("lr", cfg.reasoner.lr);
    cfg.reasoner.weight_decay = r.value("weight_decay", cfg.reasoner.weight_decay);
    cfg.reasoner.warmup_steps = r.value("warmup_steps", cfg.reasoner.warmup_steps);
    cfg.reasoner.total_steps = r.value("total_steps", cfg.reasoner.total_steps);
    cfg.reasoner.eval_every = r.value("eval_every", cfg.reasoner.eval_every);
  }
  cfg.visual_encoder = parse_visual_encoder(j.value("visual_encoder", "detr"));
  if (j.contains("seeds")) {
    cfg.seeds.clear();
    for (auto& s : j["seeds"]) cfg.seeds.push_back(s.get<uint64_t>());
  }
  {
    std::set<uint64_t> distinct(cfg.seeds.begin(), cfg.seeds.end());
    if (distinct.size() != cfg.seeds.size()) {
      throw UserError("ensemble seeds must be distinct");
    }
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.profile = j.value("profile", cfg.profile);
  if (cfg.profile != "default" && cfg.profile != "test") {
    throw UserError("profile must be 'default' or 'test'");
  }
  if (cfg.out_dir.empty()) throw UserError("config must set out_dir");
  if (cfg.root.empty()) throw UserError("config must set dataset.root");
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json backends = json::array();
  for (auto& b : cfg.backends) {
    backends.push_back({{"id", b.id},
                        {"style", backend_style_name(b.style)},
                        {"patch_count", b.patch_count},
                        {"K", b.K},
                        {"m", b.m},
                        {"seed", b.seed},
                        {"budget", b.budget},
                        {"decoding", decoding_to_json(b.decoding)}});
  }
  json seeds = json::array();
  for (auto s : cfg.seeds) seeds.push_back(s);
  return json{
      {"dataset",
       {{"name", cfg.dataset},
        {"root", cfg.root},
        {"train_split", cfg.train_split},
        {"eval_split", cfg.eval_split},
        {"answer_field", cfg.answer_field}}},
      {"backends", backends},
      {"n_prompts", cfg.n_prompts},
      {"ite_layer", cfg.ite_layer},
      {"ite_tokens", cfg.ite_tokens},
      {"ite_heads", cfg.ite_heads},
      {"clamp_mode", clamp_mode_name(cfg.clamp_mode)},
      {"exemplar",
       {{"strategy", strategy_name(cfg.exemplar_strategy)},
        {"N", cfg.exemplar_n},
        {"embed_dim", cfg.embed_dim}}},
      {"reasoner",
       {{"dim", cfg.reasoner.dim},
        {"layers", cfg.reasoner.layers},
        {"ff_dim", cfg.reasoner.ff_dim},
        {"max_positions", cfg.reasoner.max_positions},
        {"max_passage_tokens", cfg.reasoner.max_passage_tokens},
        {"max_answer_tokens", cfg.reasoner.max_answer_tokens},
        {"lr", cfg.reasoner.lr},
        {"weight_decay", cfg.reasoner.weight_decay},
        {"warmup_steps", cfg.reasoner.warmup_steps},
        {"total_steps", cfg.reasoner.total_steps},
        {"eval_every", cfg.reasoner.eval_every}}},
      {"visual_encoder", visual_encoder_name(cfg.visual_encoder)},
      {"seeds", seeds},
      {"seed", cfg.seed},
      {"out_dir", cfg.out_dir},
      {"profile", cfg.profile}};
}

std::string config_hash(const RunConfig& cfg) {
  // out_dir is excluded so runs into different directories compare equal
  json j = config_to_json(cfg);
  j.erase("out_dir");
  json ds = j["dataset"];
  ds.erase("root");
  j["dataset"] = ds;
  return to_hex(fnv1a64(j.dump()));
}

// ---- stage plumbing --------------------------------------------------------

namespace {

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return cfg.out_dir + "/" + name;
}

// true when the stage output must be (re)built
bool stage_stale(const std::string& path, const std::string& hash, bool force,
                 const std::string& stage) {
  if (!fs::exists(path)) return true;
  std::string existing;
  if (path.ends_with(".json")) {
    std::ifstream in(path);
    json j;
    in >> j;
    existing = j.value("config_hash", "");
  } else {
    existing = read_artifact(path).config_hash;
  }
  if (existing == hash) {
    if (force) return true;
    std::cout << "[" << stage << "] up to date: " << path << "\n";
    return false;
  }
  if (!force) {
    throw UserError("stage " + stage + ": existing artifact " + path +
                    " was produced with a different config (hash " + existing +
                    " vs " + hash + "); rerun with --force to overwrite");
  }
  return true;
}

void require_upstream(const std::string& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw UserError("missing upstream artifact " + path + "; run `gerea " +
                    producer + "` first");
  }
}

DecodingParams effective_decoding(const RunConfig& cfg, const BackendConfig& b) {
  DecodingParams p = b.decoding;
  if (cfg.profile == "test") p.deterministic = true;
  return p;
}

std::vector<Sample> load_split(const RunConfig& cfg, const std::string& split) {
  return load_dataset(cfg.dataset, parse_split(split), cfg.root,
                      cfg.answer_field);
}

struct RoleData {
  std::string role;  // "train" or "eval"
  std::vector<Sample> samples;
};

std::vector<RoleData> load_roles(const RunConfig& cfg) {
  return {{"train", load_split(cfg, cfg.train_split)},
          {"eval", load_split(cfg, cfg.eval_split)}};
}

std::unique_ptr<SyntheticIteBackend> make_ite(const RunConfig& cfg,
                                              const BackendConfig& b) {
  return std::make_unique<SyntheticIteBackend>(
      b.patch_count, cfg.ite_tokens, cfg.ite_heads,
      mix_seed(cfg.seed, "ite\x1f" + b.id));
}

std::vector<std::string> prompts_for(const RunConfig& cfg, const Sample& s,
                                     BackendStyle style) {
  auto all = render_prompts(s.question, extract_phrases(s.question), style);
  all.resize(cfg.n_prompts);
  return all;
}

// (role, sample_id, backend_id) -> ordered caption records
using CaptionStore =
    std::map<std::string, std::map<std::string, std::map<std::string, CaptionSet>>>;

CaptionStore load_caption_store(const RunConfig& cfg) {
  Artifact a = read_artifact(out_path(cfg, "captions.jsonl"));
  CaptionStore store;
  for (auto& rec : a.records) {
    std::string role = rec.at("role");
    std::string sid = rec.at("sample_id");
    std::string bid = rec.at("backend_id");
    CaptionSet& set = store[role][sid][bid];
    set.sample_id = sid;
    set.captions.push_back({rec.at("caption").get<std::string>(),
                            rec.at("region_index").get<int>(),
                            rec.at("template_id").get<int>(), bid});
  }
  return store;
}

CaptionSet merged_captions(const RunConfig& cfg,
                           const std::map<std::string, CaptionSet>& per_backend,
                           const std::string& sample_id) {
  std::vector<CaptionSet> sets;
  std::vector<int> budgets;
  for (auto& b : cfg.backends) {
    auto it = per_backend.find(b.id);
    CaptionSet set;
    set.sample_id = sample_id;
    if (it != per_backend.end()) set = it->second;
    int budget = b.budget < 0 ? static_cast<int>(set.captions.size()) : b.budget;
    sets.push_back(std::move(set));
    budgets.push_back(budget);
  }
  return merge_caption_sets(sets, budgets);
}

struct AssembledExamples {
  std::vector<ReasonerExample> examples;
  std::vector<std::string> corpus;  // passage + answer texts (vocab source)
};

AssembledExamples assemble_examples(const RunConfig& cfg,
                                    const std::vector<Sample>& samples,
                                    const std::string& role,
                                    const CaptionStore& store,
                                    const ExemplarIndex& index,
                                    FeatureEmbedder& embedder,
                                    const CaptionStore& train_store) {
  MockVisualExtractor visual(mix_seed(cfg.seed, "visual"), cfg.visual_encoder);
  AssembledExamples out;
  auto role_it = store.find(role);
  if (role_it == store.end()) {
    throw UserError("no captions for role " + role + "; run `gerea captions` first");
  }
  for (const Sample& s : samples) {
    auto sit = role_it->second.find(s.sample_id);
    if (sit == role_it->second.end()) continue;  // resumable: skip uncaptioned
    CaptionSet merged = merged_captions(cfg, sit->second, s.sample_id);

    int n_exemplars = std::min<int>(cfg.exemplar_n,
                                    static_cast<int>(index.entries.size()) - 1);
    std::vector<ExemplarWithCaptions> exemplars;
    if (n_exemplars > 0) {
      auto selected = select_similar(s, index, embedder, n_exemplars,
                                     mix_seed(cfg.seed, "exemplar-select"));
      auto train_role = train_store.find("train");
      for (auto& ex : selected) {
        ExemplarWithCaptions ewc;
        ewc.exemplar = ex;
        if (train_role != train_store.end()) {
          auto eit = train_role->second.find(ex.sample_id);
          if (eit != train_role->second.end()) {
            CaptionSet exset = merged_captions(cfg, eit->second, ex.sample_id);
            for (auto& c : exset.captions) ewc.captions.push_back(c.text);
          }
        }
        exemplars.push_back(std::move(ewc));
      }
    }

    auto passages = reformat_inputs(s.question, merged, exemplars,
                                    cfg.reasoner.max_passage_tokens);
    ReasonerExample ex;
    ex.sample_id = s.sample_id;
    for (auto& p : passages) {
      out.corpus.push_back(p.text);
      ex.passage_ids.push_back({});  // filled after vocab build
    }
    ex.answer_text = canonical_answer(s.answers);
    out.corpus.push_back(ex.answer_text);
    ex.visual = cfg.visual_encoder == VisualEncoderId::kNone
                    ? nn::Mat()
                    : visual.extract(s.image_ref).feature;
    // stash passage texts for tokenization via answer_ids trick below
    out.examples.push_back(std::move(ex));
  }
  return out;
}

// tokenizes assembled passages/answers once the vocab is fixed
void tokenize_examples(const RunConfig& cfg, const Vocab& vocab,
                       const std::vector<Sample>& samples,
                       const std::string& role, const CaptionStore& store,
                       const ExemplarIndex& index, FeatureEmbedder& embedder,
                       const CaptionStore& train_store,
                       std::vector<ReasonerExample>& out) {
  MockVisualExtractor visual(mix_seed(cfg.seed, "visual"), cfg.visual_encoder);
  out.clear();
  auto role_it = store.find(role);
  int cap = std::min(cfg.reasoner.max_passage_tokens, cfg.reasoner.max_positions);
  for (const Sample& s : samples) {
    auto sit = role_it->second.find(s.sample_id);
    if (sit == role_it->second.end()) continue;
    CaptionSet merged = merged_captions(cfg, sit->second, s.sample_id);

    int n_exemplars = std::min<int>(cfg.exemplar_n,
                                    static_cast<int>(index.entries.size()) - 1);
    std::vector<ExemplarWithCaptions> exemplars;
    if (n_exemplars > 0) {
      auto selected = select_similar(s, index, embedder, n_exemplars,
                                     mix_seed(cfg.seed, "exemplar-select"));
      auto train_role = train_store.find("train");
      for (auto& ex : selected) {
        ExemplarWithCaptions ewc;
        ewc.exemplar = ex;
        if (train_role != train_store.end()) {
          auto eit = train_role->second.find(ex.sample_id);
          if (eit != train_role->second.end()) {
            CaptionSet exset = merged_captions(cfg, eit->second, ex.sample_id);
            for (auto& c : exset.captions) ewc.captions.push_back(c.text);
          }
        }
        exemplars.push_back(std::move(ewc));
      }
    }

    auto passages = reformat_inputs(s.question, merged, exemplars,
                                    cfg.reasoner.max_passage_tokens);
    ReasonerExample ex;
    ex.sample_id = s.sample_id;
    for (auto& p : passages) {
      auto ids = vocab.encode(p.text, cap);
      if (ids.empty()) ids.push_back(Vocab::kUnk);
      ex.passage_ids.push_back(std::move(ids));
    }
    ex.answer_text = canonical_answer(s.answers);
    ex.answer_ids = vocab.encode(ex.answer_text, cfg.reasoner.max_answer_tokens - 1);
    if (ex.answer_ids.empty()) ex.answer_ids.push_back(Vocab::kUnk);
    ex.visual = cfg.visual_encoder == VisualEncoderId::kNone
                    ? nn::Mat()
                    : visual.extract(s.image_ref).feature;
    out.push_back(std::move(ex));
  }
}

std::string checkpoint_path(const RunConfig& cfg, size_t seed_index) {
  return out_path(cfg, "checkpoint_seed" + std::to_string(seed_index) + ".bin");
}

}  // namespace

// ---- stages ----------------------------------------------------------------

void cmd_regions(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  std::string path = out_path(cfg, "regions.jsonl");
  if (!stage_stale(path, hash, force, "regions")) return;

  std::vector<json> records;
  for (auto& role : load_roles(cfg)) {
    for (auto& b : cfg.backends) {
      auto ite = make_ite(cfg, b);
      for (auto& s : role.samples) {
        RelevanceMap rel = compute_relevance(*ite, s.image_ref, s.question,
                                             cfg.ite_layer, cfg.clamp_mode);
        uint64_t seed =
            mix_seed(cfg.seed, "regions\x1f" + role.role + "\x1f" + s.sample_id +
                                   "\x1f" + b.id);
        RegionSet regions = sample_regions(rel, b.K, b.m, seed);
        records.push_back({{"schema_version", kSchemaVersion},
                           {"role", role.role},
                           {"sample_id", s.sample_id},
                           {"backend_id", b.id},
                           {"regions", regions.regions},
                           {"r_sum", rel.r.sum()},
                           {"r_max", rel.r.maxCoeff()},
                           {"clamp_mode", clamp_mode_name(cfg.clamp_mode)},
                           {"layer", cfg.ite_layer},
                           {"seed", seed}});
      }
    }
  }
  write_artifact("regions", records, path, hash);
  std::cout << "[regions] wrote " << records.size() << " records\n";
}

void cmd_captions(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  std::string regions_path = out_path(cfg, "regions.jsonl");
  require_upstream(regions_path, "regions");
  std::string path = out_path(cfg, "captions.jsonl");
  if (!stage_stale(path, hash, force, "captions")) return;

  Artifact regions_art = read_artifact(regions_path);
  // (role, sample_id, backend_id) -> RegionSet
  std::map<std::string, RegionSet> region_map;
  for (auto& rec : regions_art.records) {
    RegionSet rs;
    for (auto& region : rec.at("regions")) {
      rs.regions.push_back(region.get<std::vector<int>>());
    }
    rs.seed = rec.at("seed").get<uint64_t>();
    region_map[rec.at("role").get<std::string>() + "\x1f" +
               rec.at("sample_id").get<std::string>() + "\x1f" +
               rec.at("backend_id").get<std::string>()] = std::move(rs);
  }

  std::vector<json> records;
  int backend_calls = 0;
  for (auto& role : load_roles(cfg)) {
    for (auto& b : cfg.backends) {
      MockCaptionBackend backend(b.seed, b.style, b.id);
      CaptionCache cache(out_path(cfg, "cache_" + b.id + ".jsonl"));
      DecodingParams params = effective_decoding(cfg, b);
      for (auto& s : role.samples) {
        auto rit = region_map.find(role.role + "\x1f" + s.sample_id + "\x1f" + b.id);
        if (rit == region_map.end()) {
          throw UserError("regions.jsonl has no entry for sample " + s.sample_id +
                          " backend " + b.id + "; rerun `gerea regions`");
        }
        auto prompts = prompts_for(cfg, s, b.style);
        CaptionSet set =
            generate_captions(s, rit->second, prompts, backend, params, &cache);
        for (auto& c : set.captions) {
          records.push_back({{"schema_version", kSchemaVersion},
                             {"role", role.role},
                             {"sample_id", s.sample_id},
                             {"backend_id", b.id},
                             {"region_index", c.region_index},
                             {"template_id", c.template_id},
                             {"prompt", prompts[c.template_id - 1]},
                             {"caption", c.text},
                             {"params_hash", params_hash(params)}});
        }
      }
      cache.flush(hash);
      backend_calls += backend.call_count();
    }
  }
  write_artifact("captions", records, path, hash);
  std::cout << "[captions] wrote " << records.size() << " captions ("
            << backend_calls << " backend calls)\n";
}

void cmd_exemplars(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  require_upstream(out_path(cfg, "captions.jsonl"), "captions");
  std::string path = out_path(cfg, "exemplars.jsonl");
  if (!stage_stale(path, hash, force, "exemplars")) return;

  auto train = load_split(cfg, cfg.train_split);
  CaptionStore store = load_caption_store(cfg);
  std::set<std::string> with_captions;
  auto tit = store.find("train");
  if (tit != store.end()) {
    for (auto& [sid, _] : tit->second) with_captions.insert(sid);
  }
  MockFeatureEmbedder embedder(cfg.embed_dim, mix_seed(cfg.seed, "embedder"));
  std::vector<std::string> missing;
  ExemplarIndex index = build_index(train, embedder, cfg.exemplar_strategy,
                                    &with_captions, &missing);
  for (auto& sid : missing) {
    std::cout << "[exemplars] warning: no captions for train sample " << sid << "\n";
  }
  save_index(index, path, hash);
  std::cout << "[exemplars] indexed " << index.entries.size() << " samples\n";
}

void cmd_train(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  require_upstream(out_path(cfg, "captions.jsonl"), "captions");
  require_upstream(out_path(cfg, "exemplars.jsonl"), "exemplars");
  std::string manifest_path = out_path(cfg, "train_manifest.json");
  if (!stage_stale(manifest_path, hash, force, "train")) return;

  auto train_samples = load_split(cfg, cfg.train_split);
  CaptionStore store = load_caption_store(cfg);
  ExemplarIndex index = load_index(out_path(cfg, "exemplars.jsonl"));
  MockFeatureEmbedder embedder(cfg.embed_dim, mix_seed(cfg.seed, "embedder"));

  AssembledExamples assembled = assemble_examples(
      cfg, train_samples, "train", store, index, embedder, store);
  Vocab vocab = Vocab::build(assembled.corpus);

  std::vector<ReasonerExample> train_data;
  tokenize_examples(cfg, vocab, train_samples, "train", store, index, embedder,
                    store, train_data);
  if (train_data.empty()) throw UserError("train: no training examples assembled");

  std::vector<json> log_records;
  json checkpoints = json::array();
  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    ReasonerConfig rc = cfg.reasoner;
    rc.seed = cfg.seeds[i];
    rc.use_visual = cfg.visual_encoder != VisualEncoderId::kNone;
    Reasoner model(rc, vocab);
    TrainingLog log = model.train(train_data, {});
    std::string ckpt = checkpoint_path(cfg, i);
    model.save(ckpt);
    checkpoints.push_back(fs::path(ckpt).filename().string());
    for (auto& [step, loss] : log.losses) {
      log_records.push_back({{"schema_version", kSchemaVersion},
                             {"seed", cfg.seeds[i]},
                             {"step", step},
                             {"loss", loss}});
    }
    std::cout << "[train] seed " << cfg.seeds[i] << ": final loss "
              << log.losses.back().second << "\n";
  }
  write_artifact("train_log", log_records, out_path(cfg, "train_log.jsonl"), hash);
  json manifest = {{"schema_version", kSchemaVersion},
                   {"config_hash", hash},
                   {"checkpoints", checkpoints}};
  std::string tmp = manifest_path + ".tmp";
  {
    std::ofstream out(tmp);
    out << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, manifest_path);
}

void cmd_predict(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  require_upstream(out_path(cfg, "captions.jsonl"), "captions");
  require_upstream(out_path(cfg, "exemplars.jsonl"), "exemplars");
  require_upstream(out_path(cfg, "train_manifest.json"), "train");
  std::string marker = out_path(cfg, "predictions_seed0.jsonl");
  if (!stage_stale(marker, hash, force, "predict")) return;

  auto eval_samples = load_split(cfg, cfg.eval_split);
  CaptionStore store = load_caption_store(cfg);
  ExemplarIndex index = load_index(out_path(cfg, "exemplars.jsonl"));
  MockFeatureEmbedder embedder(cfg.embed_dim, mix_seed(cfg.seed, "embedder"));

  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    Reasoner model = Reasoner::load(checkpoint_path(cfg, i));
    std::vector<ReasonerExample> data;
    tokenize_examples(cfg, model.vocab(), eval_samples, "eval", store, index,
                      embedder, store, data);
    std::vector<json> records;
    for (auto& ex : data) {
      std::string answer = model.decode_answer(
          ex.passage_ids,
          cfg.visual_encoder == VisualEncoderId::kNone ? nullptr : &ex.visual);
      records.push_back({{"schema_version", kSchemaVersion},
                         {"sample_id", ex.sample_id},
                         {"answer", answer}});
    }
    write_artifact("predictions_seed", records,
                   out_path(cfg, "predictions_seed" + std::to_string(i) + ".jsonl"),
                   hash);
  }

  // zero-shot baseline of the first backend: its direct-inquiry caption
  // (region 0, lowest available inquiry template)
  int baseline_tid = std::min(4, cfg.n_prompts);
  const std::string& baseline_backend = cfg.backends.front().id;
  std::vector<json> baseline;
  auto eit = store.find("eval");
  for (auto& s : eval_samples) {
    if (eit == store.end()) break;
    auto sit = eit->second.find(s.sample_id);
    if (sit == eit->second.end()) continue;
    auto bit = sit->second.find(baseline_backend);
    if (bit == sit->second.end()) continue;
    std::string text;
    for (auto& c : bit->second.captions) {
      if (c.region_index == 0 && c.template_id == baseline_tid) {
        text = c.text;
        break;
      }
    }
    baseline.push_back({{"schema_version", kSchemaVersion},
                        {"sample_id", s.sample_id},
                        {"answer", text}});
  }
  write_artifact("backend_preds", baseline, out_path(cfg, "backend_preds.jsonl"),
                 hash);
  std::cout << "[predict] wrote predictions for " << cfg.seeds.size()
            << " seeds\n";
}

void cmd_ensemble(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  require_upstream(out_path(cfg, "predictions_seed0.jsonl"), "predict");
  std::string path = out_path(cfg, "predictions.jsonl");
  if (!stage_stale(path, hash, force, "ensemble")) return;

  std::map<std::string, std::vector<std::string>> per_sample;
  for (size_t i = 0; i < cfg.seeds.size(); ++i) {
    Artifact a = read_artifact(
        out_path(cfg, "predictions_seed" + std::to_string(i) + ".jsonl"));
    for (auto& rec : a.records) {
      per_sample[rec.at("sample_id").get<std::string>()]
          .push_back(rec.at("answer").get<std::string>());
    }
  }
  auto eval_samples = load_split(cfg, cfg.eval_split);
  std::map<std::string, const Sample*> by_id;
  for (auto& s : eval_samples) by_id[s.sample_id] = &s;

  std::vector<json> records;
  for (auto& [sid, answers] : per_sample) {
    std::vector<std::string> normalized;
    for (auto& a : answers) normalized.push_back(normalize_answer(a));
    std::string final_answer = ensemble_vote(normalized);
    json rec = {{"schema_version", kSchemaVersion},
                {"sample_id", sid},
                {"answer", final_answer},
                {"seed_answers", normalized},
                {"config_hash", hash}};
    auto it = by_id.find(sid);
    if (it != by_id.end() && !it->second->mc_options.empty()) {
      rec["mc_choice"] = select_mc_option(final_answer, it->second->mc_options);
    }
    records.push_back(std::move(rec));
  }
  write_artifact("predictions", records, path, hash);
  std::cout << "[ensemble] voted over " << cfg.seeds.size() << " seeds for "
            << records.size() << " samples\n";
}

namespace {

std::map<std::string, std::string> load_predictions(const std::string& path) {
  Artifact a = read_artifact(path);
  std::map<std::string, std::string> out;
  for (auto& rec : a.records) {
    out[rec.at("sample_id").get<std::string>()] =
        rec.at("answer").get<std::string>();
  }
  return out;
}

}  // namespace

void cmd_evaluate(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  require_upstream(out_path(cfg, "predictions_seed0.jsonl"), "predict");
  require_upstream(out_path(cfg, "predictions.jsonl"), "ensemble");
  require_upstream(out_path(cfg, "captions.jsonl"), "captions");
  std::string path = out_path(cfg, "report.json");
  if (!stage_stale(path, hash, force, "evaluate")) return;

  auto preds = load_predictions(out_path(cfg, "predictions.jsonl"));
  auto eval_samples = load_split(cfg, cfg.eval_split);
  CaptionStore store = load_caption_store(cfg);

  EvalReport report;
  std::map<std::string, CaptionSet> caption_sets;
  std::map<std::string, std::string> answers;
  double total_score = 0;
  int scored = 0;
  std::map<std::string, double> cat_score;
  std::map<std::string, int> cat_count;
  auto eit = store.find("eval");
  for (auto& s : eval_samples) {
    auto pit = preds.find(s.sample_id);
    if (pit == preds.end() || s.answers.empty()) continue;
    double score = vqa_score(pit->second, s.answers);
    total_score += score;
    ++scored;
    std::string cat = s.category.empty() ? "Other" : s.category;
    cat_score[cat] += score;
    cat_count[cat] += 1;
    if (eit != store.end()) {
      auto sit = eit->second.find(s.sample_id);
      if (sit != eit->second.end()) {
        caption_sets[s.sample_id] = merged_captions(cfg, sit->second, s.sample_id);
        answers[s.sample_id] = canonical_answer(s.answers);
      }
    }
  }
  report.sample_count = scored;
  report.overall_accuracy = scored > 0 ? 100.0 * total_score / scored : 0.0;
  for (auto& [cat, sum] : cat_score) {
    report.per_category[cat] = 100.0 * sum / cat_count[cat];
    report.per_category_count[cat] = cat_count[cat];
  }
  if (!caption_sets.empty()) {
    report.caption_count =
        static_cast<int>(caption_sets.begin()->second.captions.size());
    report.ahr = answer_hit_rate(caption_sets, answers);
    report.anr = answer_noise_rate(caption_sets, answers);
  }

  json out = report_to_json(report);
  out["config_hash"] = hash;
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    f << out.dump(2) << "\n";
  }
  fs::rename(tmp, path);
  {
    std::ofstream f(out_path(cfg, "report_table.txt"));
    f << render_category_table(report);
  }
  std::cout << "[evaluate] accuracy " << report.overall_accuracy << "% over "
            << report.sample_count << " samples (AHR " << report.ahr
            << "%, ANR " << report.anr << "%)\n";
}

void cmd_analyze(const RunConfig& cfg, bool force) {
  std::string hash = config_hash(cfg);
  require_upstream(out_path(cfg, "predictions.jsonl"), "ensemble");
  require_upstream(out_path(cfg, "backend_preds.jsonl"), "predict");
  std::string path = out_path(cfg, "analysis.json");
  if (!stage_stale(path, hash, force, "analyze")) return;

  auto sys_preds = load_predictions(out_path(cfg, "predictions.jsonl"));
  auto backend_preds = load_predictions(out_path(cfg, "backend_preds.jsonl"));
  auto eval_samples = load_split(cfg, cfg.eval_split);
  std::map<std::string, std::vector<std::string>> gold;
  for (auto& s : eval_samples) {
    if (sys_preds.count(s.sample_id) && !s.answers.empty()) {
      gold[s.sample_id] = s.answers;
    }
  }
  // restrict both prediction maps to the gold keys
  std::map<std::string, std::string> sys2, back2;
  for (auto& [sid, _] : gold) {
    auto s = sys_preds.find(sid);
    auto b = backend_preds.find(sid);
    if (s == sys_preds.end() || b == backend_preds.end()) {
      throw UserError("analyze: missing prediction for sample " + sid);
    }
    sys2[sid] = s->second;
    back2[sid] = b->second;
  }
  BehaviorAnalysis ba = behavior_analysis(sys2, back2, gold);
  json out = {{"schema_version", kSchemaVersion},
              {"config_hash", hash},
              {"sample_count", ba.sample_count},
              {"quadrants",
               {{"backend_correct_system_correct", ba.quadrants[0][0]},
                {"backend_correct_system_wrong", ba.quadrants[0][1]},
                {"backend_wrong_system_correct", ba.quadrants[1][0]},
                {"backend_wrong_system_wrong", ba.quadrants[1][1]}}},
              {"same_share", ba.same_share},
              {"same_accuracy", ba.same_accuracy},
              {"different_accuracy", ba.different_accuracy}};
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    f << out.dump(2) << "\n";
  }
  fs::rename(tmp, path);
  std::cout << "[analyze] same-share " << ba.same_share << "% over "
            << ba.sample_count << " samples\n";
}

void run_all(const RunConfig& cfg, bool force) {
  cmd_regions(cfg, force);
  cmd_captions(cfg, force);
  cmd_exemplars(cfg, force);
  cmd_train(cfg, force);
  cmd_predict(cfg, force);
  cmd_ensemble(cfg, force);
  cmd_evaluate(cfg, force);
  cmd_analyze(cfg, force);
}

std::map<std::string, std::string> artifact_checksums(const std::string& out_dir) {
  std::map<std::string, std::string> out;
  for (auto& entry : fs::directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    out[entry.path().filename().string()] = file_checksum(entry.path().string());
  }
  return out;
}

// ---- fixture dataset -------------------------------------------------------

void write_fixture_dataset(const std::string& root, int train_count,
                           int eval_count, uint64_t seed) {
  static const char* kNouns[] = {"car",  "dog",  "tree",  "plate",
                                 "hat",  "boat", "kite",  "bench"};
  static const char* kColors[] = {"red",    "blue",  "green", "yellow",
                                  "white",  "black", "brown", "orange"};
  static const char* kCategories[] = {"one",  "two", "three", "four", "five",
                                      "six",  "seven", "eight", "nine", "ten",
                                      "other"};
  fs::create_directories(root + "/images");
  Rng rng(mix_seed(seed, "fixture"));

  auto emit = [&](const std::string& tag, int count, long long base_id) {
    json questions = json::array();
    json annotations = json::array();
    for (int i = 0; i < count; ++i) {
      long long qid = base_id + i;
      long long image_id = base_id + i;
      std::string noun = kNouns[rng.uniform_int(8)];
      std::string color = kColors[rng.uniform_int(8)];
      std::string question = "What color is the " + noun + "?";
      questions.push_back({{"question_id", qid},
                           {"image_id", image_id},
                           {"question", question}});
      json answers = json::array();
      for (int a = 0; a < 10; ++a) {
        std::string ans = a < 8 ? color : std::string(kColors[rng.uniform_int(8)]);
        answers.push_back({{"answer", ans}, {"raw_answer", ans}});
      }
      annotations.push_back({{"question_id", qid},
                             {"image_id", image_id},
                             {"question_type", kCategories[i % 11]},
                             {"answers", answers}});
      std::ofstream img(root + "/images/" + std::to_string(image_id) + ".jpg");
      img << "stub-image-" << image_id << "\n";
    }
    {
      std::ofstream f(root + "/OpenEnded_mscoco_" + tag + "_questions.json");
      f << json{{"questions", questions}}.dump() << "\n";
    }
    {
      std::ofstream f(root + "/mscoco_" + tag + "_annotations.json");
      f << json{{"annotations", annotations}}.dump() << "\n";
    }
  };
  emit("train2014", train_count, 1000);
  emit("val2014", eval_count, 2000);
}

}  // namespace gerea
