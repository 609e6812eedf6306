#include "gerea/reasoner.hpp"

#include "gerea/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gerea {

using nn::Mat;
using nn::Tape;
using nn::Var;

// ---- passage assembly ------------------------------------------------------

namespace {

int count_tokens(const std::string& s) {
  return static_cast<int>(split_whitespace(s).size());
}

}  // namespace

std::vector<ReformattedPassage> reformat_inputs(
    const std::string& question, const CaptionSet& captions,
    const std::vector<ExemplarWithCaptions>& exemplars, int token_budget) {
  if (captions.captions.empty()) {
    throw UserError("reformat_inputs: empty caption set for sample " +
                    captions.sample_id);
  }
  std::vector<ReformattedPassage> out;
  for (size_t j = 0; j < captions.captions.size(); ++j) {
    std::string query_block =
        "question: " + question + " context: " + captions.captions[j].text;
    int used = count_tokens(query_block);
    if (token_budget > 0 && used > token_budget) {
      throw UserError("reformat_inputs: token budget " +
                      std::to_string(token_budget) +
                      " cannot hold the query block of sample " +
                      captions.sample_id);
    }
    std::string text = query_block;
    for (auto& ex : exemplars) {
      if (ex.captions.empty()) continue;
      const std::string& cap = ex.captions[j % ex.captions.size()];
      std::string block = " question: " + ex.exemplar.question +
                          " answer: " + ex.exemplar.answer +
                          " context: " + cap;
      int block_tokens = count_tokens(block);
      if (token_budget > 0 && used + block_tokens > token_budget) break;
      text += block;
      used += block_tokens;
    }
    out.push_back({static_cast<int>(j), std::move(text)});
  }
  return out;
}

// ---- visual features -------------------------------------------------------

VisualEncoderId parse_visual_encoder(const std::string& name) {
  if (name == "detr") return VisualEncoderId::kDetr;
  if (name == "clip-grid") return VisualEncoderId::kClipGrid;
  if (name == "resnet-pooled") return VisualEncoderId::kResnetPooled;
  if (name == "none") return VisualEncoderId::kNone;
  throw UserError("unknown visual encoder: " + name);
}

std::string visual_encoder_name(VisualEncoderId id) {
  switch (id) {
    case VisualEncoderId::kDetr: return "detr";
    case VisualEncoderId::kClipGrid: return "clip-grid";
    case VisualEncoderId::kResnetPooled: return "resnet-pooled";
    case VisualEncoderId::kNone: return "none";
  }
  return "detr";
}

VisualFeature MockVisualExtractor::extract(const std::string& image_ref) {
  VisualFeature out;
  out.encoder_id = id_;
  Rng rng(mix_seed(seed_, "visual\x1f" + image_ref));
  out.feature = Mat(kVisualTokens, kVisualWidth);
  for (int r = 0; r < kVisualTokens; ++r) {
    for (int c = 0; c < kVisualWidth; ++c) out.feature(r, c) = 0.1 * rng.normal();
  }
  if (id_ == VisualEncoderId::kResnetPooled) {
    // pooled feature duplicated across the sequence
    for (int r = 1; r < kVisualTokens; ++r) out.feature.row(r) = out.feature.row(0);
  }
  return out;
}

// ---- vocabulary ------------------------------------------------------------

Vocab::Vocab() {
  for (auto w : {"<pad>", "<bos>", "<eos>", "<unk>"}) add_word(w);
}

void Vocab::add_word(const std::string& w) {
  if (index_.count(w)) return;
  index_[w] = static_cast<int>(words_.size());
  words_.push_back(w);
}

Vocab Vocab::build(const std::vector<std::string>& corpus) {
  Vocab v;
  for (auto& text : corpus) {
    for (auto& tok : split_whitespace(to_lower(text))) v.add_word(tok);
  }
  return v;
}

std::vector<int> Vocab::encode(const std::string& text, int max_tokens) const {
  std::vector<int> out;
  for (auto& tok : split_whitespace(to_lower(text))) {
    if (max_tokens >= 0 && static_cast<int>(out.size()) >= max_tokens) break;
    auto it = index_.find(tok);
    out.push_back(it == index_.end() ? kUnk : it->second);
  }
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kBos || id == kEos || id == kPad) continue;
    if (!out.empty()) out += " ";
    out += id >= 0 && id < size() ? words_[id] : "<unk>";
  }
  return out;
}

// ---- model -----------------------------------------------------------------

namespace {

Mat random_matrix(Rng& rng, int rows, int cols, double scale) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

Mat causal_mask(int n) {
  Mat m = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m(i, j) = -1e9;
  }
  return m;
}

}  // namespace

Reasoner::Linear Reasoner::make_linear(Rng& rng, int in, int out) {
  return {nn::make_param(random_matrix(rng, in, out, 0.02)),
          nn::make_param(Mat::Zero(1, out))};
}

Reasoner::LayerNorm Reasoner::make_layer_norm(int dim) {
  return {nn::make_param(Mat::Ones(1, dim)), nn::make_param(Mat::Zero(1, dim))};
}

Reasoner::Attention Reasoner::make_attention(Rng& rng, int dim) {
  return {make_linear(rng, dim, dim), make_linear(rng, dim, dim),
          make_linear(rng, dim, dim), make_linear(rng, dim, dim)};
}

Reasoner::Reasoner(ReasonerConfig cfg, Vocab vocab)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  Rng rng(mix_seed(cfg_.seed, "reasoner-init"));
  const int D = cfg_.dim;
  tok_emb_ = nn::make_param(random_matrix(rng, vocab_.size(), D, 0.02));
  pos_enc_ = nn::make_param(random_matrix(rng, cfg_.max_positions, D, 0.02));
  pos_dec_ = nn::make_param(random_matrix(rng, cfg_.max_positions, D, 0.02));
  for (int l = 0; l < cfg_.layers; ++l) {
    enc_layers_.push_back({make_layer_norm(D), make_layer_norm(D),
                           make_attention(rng, D), make_linear(rng, D, cfg_.ff_dim),
                           make_linear(rng, cfg_.ff_dim, D)});
    dec_layers_.push_back({make_layer_norm(D), make_layer_norm(D),
                           make_layer_norm(D), make_attention(rng, D),
                           make_attention(rng, D), make_linear(rng, D, cfg_.ff_dim),
                           make_linear(rng, cfg_.ff_dim, D)});
  }
  enc_final_ = make_layer_norm(D);
  dec_final_ = make_layer_norm(D);
  vis_proj_ = make_linear(rng, kVisualWidth, D);
  vis_block_ = {make_layer_norm(D), make_layer_norm(D), make_attention(rng, D),
                make_linear(rng, D, cfg_.ff_dim), make_linear(rng, cfg_.ff_dim, D)};
  lm_head_ = make_linear(rng, D, vocab_.size());
  collect_params();
}

void Reasoner::collect_params() {
  params_.clear();
  auto add_linear = [this](const Linear& l) {
    params_.push_back(l.w);
    params_.push_back(l.b);
  };
  auto add_ln = [this](const LayerNorm& l) {
    params_.push_back(l.g);
    params_.push_back(l.b);
  };
  auto add_attn = [&](const Attention& a) {
    add_linear(a.q);
    add_linear(a.k);
    add_linear(a.v);
    add_linear(a.o);
  };
  params_.push_back(tok_emb_);
  params_.push_back(pos_enc_);
  params_.push_back(pos_dec_);
  for (auto& l : enc_layers_) {
    add_ln(l.ln1);
    add_ln(l.ln2);
    add_attn(l.attn);
    add_linear(l.ff1);
    add_linear(l.ff2);
  }
  add_ln(enc_final_);
  for (auto& l : dec_layers_) {
    add_ln(l.ln1);
    add_ln(l.ln2);
    add_ln(l.ln3);
    add_attn(l.self_attn);
    add_attn(l.cross_attn);
    add_linear(l.ff1);
    add_linear(l.ff2);
  }
  add_ln(dec_final_);
  add_linear(vis_proj_);
  add_ln(vis_block_.ln1);
  add_ln(vis_block_.ln2);
  add_attn(vis_block_.attn);
  add_linear(vis_block_.ff1);
  add_linear(vis_block_.ff2);
  add_linear(lm_head_);
}

Var Reasoner::linear(Tape& tape, const Linear& l, Var x) {
  return tape.add_rowvec(tape.matmul(x, l.w), l.b);
}

Var Reasoner::attend(Tape& tape, const Attention& a, Var x, Var kv,
                     const Mat* mask) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
  Var q = linear(tape, a.q, x);
  Var k = linear(tape, a.k, kv);
  Var v = linear(tape, a.v, kv);
  Var scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_d);
  if (mask) scores = tape.add_const(scores, *mask);
  Var attn = tape.softmax_rows(scores);
  return linear(tape, a.o, tape.matmul(attn, v));
}

Var Reasoner::encoder_block(Tape& tape, const EncoderLayer& layer, Var x) {
  Var normed = tape.layer_norm_rows(x, layer.ln1.g, layer.ln1.b);
  x = tape.add(x, attend(tape, layer.attn, normed, normed, nullptr));
  Var normed2 = tape.layer_norm_rows(x, layer.ln2.g, layer.ln2.b);
  Var ff = linear(tape, layer.ff2, tape.relu(linear(tape, layer.ff1, normed2)));
  return tape.add(x, ff);
}

Var Reasoner::encode_passage(Tape& tape, const std::vector<int>& ids) {
  if (ids.empty()) throw UserError("encode_passage: empty token sequence");
  if (static_cast<int>(ids.size()) > cfg_.max_positions) {
    throw UserError("encode_passage: sequence exceeds max positions");
  }
  Var x = tape.gather_rows(tok_emb_, ids);
  x = tape.add(x, tape.slice_rows(pos_enc_, 0, static_cast<int>(ids.size())));
  for (auto& layer : enc_layers_) x = encoder_block(tape, layer, x);
  return tape.layer_norm_rows(x, enc_final_.g, enc_final_.b);
}

Var Reasoner::encode_visual(Tape& tape, const Mat& feature) {
  if (feature.rows() != kVisualTokens || feature.cols() != kVisualWidth) {
    throw UserError("encode_visual: expected shape (" +
                    std::to_string(kVisualTokens) + ", " +
                    std::to_string(kVisualWidth) + "), got (" +
                    std::to_string(feature.rows()) + ", " +
                    std::to_string(feature.cols()) + ")");
  }
  Var x = linear(tape, vis_proj_, nn::make_const(feature));
  return encoder_block(tape, vis_block_, x);
}

Var Reasoner::build_memory(Tape& tape,
                           const std::vector<std::vector<int>>& passage_ids,
                           const Mat* visual) {
  if (passage_ids.empty()) {
    throw UserError("build_memory: need at least one passage");
  }
  std::vector<Var> parts;
  for (auto& ids : passage_ids) parts.push_back(encode_passage(tape, ids));
  if (visual) parts.push_back(encode_visual(tape, *visual));
  return tape.concat_rows(parts);
}

Var Reasoner::decoder_logits(Tape& tape, Var memory,
                             const std::vector<int>& input_ids) {
  const int T = static_cast<int>(input_ids.size());
  Var x = tape.gather_rows(tok_emb_, input_ids);
  x = tape.add(x, tape.slice_rows(pos_dec_, 0, T));
  Mat mask = causal_mask(T);
  for (auto& layer : dec_layers_) {
    Var n1 = tape.layer_norm_rows(x, layer.ln1.g, layer.ln1.b);
    x = tape.add(x, attend(tape, layer.self_attn, n1, n1, &mask));
    Var n2 = tape.layer_norm_rows(x, layer.ln2.g, layer.ln2.b);
    x = tape.add(x, attend(tape, layer.cross_attn, n2, memory, nullptr));
    Var n3 = tape.layer_norm_rows(x, layer.ln3.g, layer.ln3.b);
    Var ff = linear(tape, layer.ff2, tape.relu(linear(tape, layer.ff1, n3)));
    x = tape.add(x, ff);
  }
  x = tape.layer_norm_rows(x, dec_final_.g, dec_final_.b);
  return linear(tape, lm_head_, x);
}

Var Reasoner::sequence_loss(Tape& tape, Var memory,
                            const std::vector<int>& answer_ids) {
  std::vector<int> input = {Vocab::kBos};
  input.insert(input.end(), answer_ids.begin(), answer_ids.end());
  std::vector<int> targets = answer_ids;
  targets.push_back(Vocab::kEos);
  Var logits = decoder_logits(tape, memory, input);
  return tape.cross_entropy_rows(logits, targets);
}

std::string Reasoner::decode_answer(
    const std::vector<std::vector<int>>& passage_ids, const Mat* visual) {
  Tape tape;
  Var memory = build_memory(tape, passage_ids, visual);
  std::vector<int> prefix = {Vocab::kBos};
  std::vector<int> emitted;
  for (int step = 0; step < cfg_.max_answer_tokens; ++step) {
    Var logits = decoder_logits(tape, memory, prefix);
    int last = static_cast<int>(logits->val.rows()) - 1;
    int best = 0;
    logits->val.row(last).maxCoeff(&best);
    if (best == Vocab::kEos) break;
    emitted.push_back(best);
    prefix.push_back(best);
  }
  return vocab_.decode(emitted);
}

TrainingLog Reasoner::train(const std::vector<ReasonerExample>& train_data,
                            const std::vector<ReasonerExample>& dev_data) {
  if (train_data.empty()) throw UserError("train: empty training data");
  nn::AdamW opt(params_);
  opt.lr = cfg_.lr;
  opt.weight_decay = cfg_.weight_decay;
  opt.warmup_steps = cfg_.warmup_steps;

  TrainingLog log;
  Rng order_rng(mix_seed(cfg_.seed, "train-order"));
  std::vector<size_t> order;
  for (int step = 0; step < cfg_.total_steps; ++step) {
    if (order.empty()) {
      for (size_t i = 0; i < train_data.size(); ++i) order.push_back(i);
      // Fisher-Yates reshuffle each epoch
      for (size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[order_rng.uniform_int(i + 1)]);
      }
    }
    const ReasonerExample& ex = train_data[order.back()];
    order.pop_back();

    Tape tape;
    Var memory = build_memory(tape, ex.passage_ids,
                              cfg_.use_visual ? &ex.visual : nullptr);
    Var loss = sequence_loss(tape, memory, ex.answer_ids);
    if (!std::isfinite(loss->val(0, 0))) {
      throw UserError("non-finite training loss at sample " + ex.sample_id);
    }
    tape.backward(loss);
    opt.step();
    log.losses.emplace_back(step, loss->val(0, 0));

    if (cfg_.eval_every > 0 && !dev_data.empty() &&
        (step + 1) % cfg_.eval_every == 0) {
      log.dev_losses.emplace_back(step, dataset_loss(dev_data));
    }
  }
  return log;
}

double Reasoner::dataset_loss(const std::vector<ReasonerExample>& data) {
  double total = 0.0;
  for (auto& ex : data) {
    Tape tape;
    Var memory = build_memory(tape, ex.passage_ids,
                              cfg_.use_visual ? &ex.visual : nullptr);
    Var loss = sequence_loss(tape, memory, ex.answer_ids);
    total += loss->val(0, 0);
  }
  return data.empty() ? 0.0 : total / data.size();
}

// ---- checkpointing ---------------------------------------------------------

namespace {
constexpr uint32_t kCheckpointMagic = 0x47524541;  // "GREA"
}

void Reasoner::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write checkpoint: " + path);
  nlohmann::json meta = {
      {"dim", cfg_.dim},           {"layers", cfg_.layers},
      {"ff_dim", cfg_.ff_dim},     {"max_positions", cfg_.max_positions},
      {"max_passage_tokens", cfg_.max_passage_tokens},
      {"max_answer_tokens", cfg_.max_answer_tokens},
      {"lr", cfg_.lr},             {"weight_decay", cfg_.weight_decay},
      {"warmup_steps", cfg_.warmup_steps}, {"total_steps", cfg_.total_steps},
      {"eval_every", cfg_.eval_every},     {"seed", cfg_.seed},
      {"use_visual", cfg_.use_visual},     {"vocab", vocab_.words()}};
  std::string meta_str = meta.dump();
  uint32_t magic = kCheckpointMagic;
  uint64_t meta_len = meta_str.size();
  out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
  out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_len));
  uint64_t count = params_.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (auto& p : params_) {
    uint64_t rows = p->val.rows(), cols = p->val.cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(p->val.data()),
              static_cast<std::streamsize>(rows * cols * sizeof(double)));
  }
}

Reasoner Reasoner::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("missing checkpoint: " + path);
  uint32_t magic = 0;
  uint64_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  if (magic != kCheckpointMagic) throw UserError("bad checkpoint file: " + path);
  in.read(reinterpret_cast<char*>(&meta_len), sizeof(meta_len));
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  nlohmann::json meta = nlohmann::json::parse(meta_str);

  ReasonerConfig cfg;
  cfg.dim = meta.at("dim");
  cfg.layers = meta.at("layers");
  cfg.ff_dim = meta.at("ff_dim");
  cfg.max_positions = meta.at("max_positions");
  cfg.max_passage_tokens = meta.at("max_passage_tokens");
  cfg.max_answer_tokens = meta.at("max_answer_tokens");
  cfg.lr = meta.at("lr");
  cfg.weight_decay = meta.at("weight_decay");
  cfg.warmup_steps = meta.at("warmup_steps");
  cfg.total_steps = meta.at("total_steps");
  cfg.eval_every = meta.at("eval_every");
  cfg.seed = meta.at("seed");
  cfg.use_visual = meta.at("use_visual");

  Vocab vocab;
  for (auto& w : meta.at("vocab")) vocab.add_word(w.get<std::string>());

  Reasoner model(cfg, std::move(vocab));
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != model.params_.size()) {
    throw UserError("checkpoint parameter count mismatch: " + path);
  }
  for (auto& p : model.params_) {
    uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (rows != static_cast<uint64_t>(p->val.rows()) ||
        cols != static_cast<uint64_t>(p->val.cols())) {
      throw UserError("checkpoint shape mismatch: " + path);
    }
    in.read(reinterpret_cast<char*>(p->val.data()),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
  }
  if (!in) throw UserError("truncated checkpoint: " + path);
  return model;
}

// ---- ensembling & MC -------------------------------------------------------

std::string ensemble_vote(const std::vector<std::string>& per_seed_answers) {
  if (per_seed_answers.empty()) throw UserError("ensemble_vote: no answers");
  std::map<std::string, int> counts;
  for (auto& a : per_seed_answers) counts[a]++;
  int best_count = 0;
  for (auto& [a, n] : counts) best_count = std::max(best_count, n);
  // lowest seed index whose answer reaches the top count
  for (auto& a : per_seed_answers) {
    if (counts[a] == best_count) return a;
  }
  return per_seed_answers.front();
}

int select_mc_option(const std::string& generated_answer,
                     const std::vector<std::string>& options) {
  if (options.empty()) throw UserError("select_mc_option: no options");
  std::string gen = normalize_answer(generated_answer);
  int best = 0;
  double best_f1 = -1.0;
  for (size_t i = 0; i < options.size(); ++i) {
    double f1 = token_f1(normalize_answer(options[i]), gen);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace gerea
