#pragma once

#include "gerea/caption_engine.hpp"
#include "gerea/exemplar_store.hpp"
#include "gerea/nn.hpp"

#include <map>
#include <string>
#include <vector>

namespace gerea {

// ---- passage assembly ------------------------------------------------------

struct ReformattedPassage {
  int index = 0;  // 0-based passage index in [0, m*n)
  std::string text;
};

struct ExemplarWithCaptions {
  Exemplar exemplar;
  std::vector<std::string> captions;  // indexed modulo its length
};

// One passage per query caption: the query question/caption followed by each
// exemplar's question, answer and j-th caption. Truncation (in whitespace
// tokens) drops exemplar blocks from the tail; the query block is never cut.
std::vector<ReformattedPassage> reformat_inputs(
    const std::string& question, const CaptionSet& captions,
    const std::vector<ExemplarWithCaptions>& exemplars, int token_budget);

// ---- visual features -------------------------------------------------------

enum class VisualEncoderId { kDetr, kClipGrid, kResnetPooled, kNone };

VisualEncoderId parse_visual_encoder(const std::string& name);
std::string visual_encoder_name(VisualEncoderId id);

struct VisualFeature {
  nn::Mat feature;  // (100, 256) for the default detr-style encoder
  VisualEncoderId encoder_id = VisualEncoderId::kDetr;
};

inline constexpr int kVisualTokens = 100;
inline constexpr int kVisualWidth = 256;

class VisualFeatureExtractor {
 public:
  virtual ~VisualFeatureExtractor() = default;
  virtual VisualFeature extract(const std::string& image_ref) = 0;
};

// Deterministic detection-style feature stand-in.
class MockVisualExtractor : public VisualFeatureExtractor {
 public:
  explicit MockVisualExtractor(uint64_t seed, VisualEncoderId id = VisualEncoderId::kDetr)
      : seed_(seed), id_(id) {}
  VisualFeature extract(const std::string& image_ref) override;

 private:
  uint64_t seed_;
  VisualEncoderId id_;
};

// ---- vocabulary ------------------------------------------------------------

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocab();
  static Vocab build(const std::vector<std::string>& corpus);

  int size() const { return static_cast<int>(words_.size()); }
  std::vector<int> encode(const std::string& text, int max_tokens = -1) const;
  std::string decode(const std::vector<int>& ids) const;
  const std::vector<std::string>& words() const { return words_; }
  void add_word(const std::string& w);

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// ---- model -----------------------------------------------------------------

struct ReasonerConfig {
  int dim = 64;        // embedding width D
  int layers = 2;      // encoder and decoder layer count
  int ff_dim = 128;
  int max_positions = 160;
  int max_passage_tokens = 64;
  int max_answer_tokens = 8;
  double lr = 5e-5;    // AdamW
  double weight_decay = 0.0;
  int warmup_steps = 1000;
  int total_steps = 500;
  int eval_every = 0;  // 0 disables periodic dev evaluation
  uint64_t seed = 0;
  bool use_visual = true;
};

struct ReasonerExample {
  std::string sample_id;
  std::vector<std::vector<int>> passage_ids;
  nn::Mat visual;  // (kVisualTokens, kVisualWidth); ignored when !use_visual
  std::vector<int> answer_ids;  // without bos/eos
  std::string answer_text;
};

struct TrainingLog {
  std::vector<std::pair<int, double>> losses;      // (step, loss)
  std::vector<std::pair<int, double>> dev_losses;  // (step, mean dev loss)
};

// FiD-style encoder-decoder: each passage is encoded independently by a
// shared transformer encoder, the projected visual tokens are appended last,
// and a cross-attending decoder generates the answer.
class Reasoner {
 public:
  Reasoner(ReasonerConfig cfg, Vocab vocab);

  const ReasonerConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  std::vector<nn::Var>& parameters() { return params_; }

  nn::Var encode_passage(nn::Tape& tape, const std::vector<int>& ids);
  // linear 256 -> D then one transformer encoder block; (100, D) out
  nn::Var encode_visual(nn::Tape& tape, const nn::Mat& feature);
  // passages in index order, visual tokens last; rows = sum of passage
  // token counts (+100 when visual present)
  nn::Var build_memory(nn::Tape& tape,
                       const std::vector<std::vector<int>>& passage_ids,
                       const nn::Mat* visual);
  nn::Var decoder_logits(nn::Tape& tape, nn::Var memory,
                         const std::vector<int>& input_ids);
  nn::Var sequence_loss(nn::Tape& tape, nn::Var memory,
                        const std::vector<int>& answer_ids);

  std::string decode_answer(const std::vector<std::vector<int>>& passage_ids,
                            const nn::Mat* visual);

  TrainingLog train(const std::vector<ReasonerExample>& train_data,
                    const std::vector<ReasonerExample>& dev_data);
  double dataset_loss(const std::vector<ReasonerExample>& data);

  void save(const std::string& path) const;
  static Reasoner load(const std::string& path);

 private:
  struct Linear {
    nn::Var w, b;
  };
  struct LayerNorm {
    nn::Var g, b;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    LayerNorm ln1, ln2;
    Attention attn;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    LayerNorm ln1, ln2, ln3;
    Attention self_attn, cross_attn;
    Linear ff1, ff2;
  };

  Linear make_linear(Rng& rng, int in, int out);
  LayerNorm make_layer_norm(int dim);
  Attention make_attention(Rng& rng, int dim);
  nn::Var linear(nn::Tape& tape, const Linear& l, nn::Var x);
  nn::Var attend(nn::Tape& tape, const Attention& a, nn::Var x, nn::Var kv,
                 const nn::Mat* mask);
  nn::Var encoder_block(nn::Tape& tape, const EncoderLayer& layer, nn::Var x);
  void collect_params();

  ReasonerConfig cfg_;
  Vocab vocab_;
  nn::Var tok_emb_, pos_enc_, pos_dec_;
  std::vector<EncoderLayer> enc_layers_;
  LayerNorm enc_final_;
  std::vector<DecoderLayer> dec_layers_;
  LayerNorm dec_final_;
  Linear vis_proj_;
  EncoderLayer vis_block_;
  Linear lm_head_;
  std::vector<nn::Var> params_;
};

// ---- ensembling & MC -------------------------------------------------------

// Most frequent normalized answer; ties go to the lowest seed index.
std::string ensemble_vote(const std::vector<std::string>& per_seed_answers);

// A-OKVQA multiple choice: option with highest token-F1 overlap against the
// normalized generated answer; ties -> lowest option index.
int select_mc_option(const std::string& generated_answer,
                     const std::vector<std::string>& options);

struct PredictionRecord {
  std::string sample_id;
  std::string answer;
  std::vector<std::string> seed_answers;
  std::string config_hash;
};

}  // namespace gerea
