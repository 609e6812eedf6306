#pragma once

#include "gerea/data_io.hpp"
#include "gerea/util.hpp"

#include <Eigen/Dense>

#include <set>
#include <string>
#include <vector>

namespace gerea {

enum class ExemplarStrategy { kFused, kQuesImg, kRand };

ExemplarStrategy parse_strategy(const std::string& name);
std::string strategy_name(ExemplarStrategy s);

// Pooled text/image embeddings used to index training samples.
class FeatureEmbedder {
 public:
  virtual ~FeatureEmbedder() = default;
  virtual std::string embedder_id() const = 0;
  virtual Eigen::VectorXd question_embedding(const std::string& question) = 0;
  virtual Eigen::VectorXd image_embedding(const std::string& image_ref) = 0;
};

// Deterministic stand-in embedder: unit-norm vectors derived from content
// hashes, so identical questions/images embed identically.
class MockFeatureEmbedder : public FeatureEmbedder {
 public:
  MockFeatureEmbedder(int dim, uint64_t seed) : dim_(dim), seed_(seed) {}
  std::string embedder_id() const override { return "mock-embedder"; }
  Eigen::VectorXd question_embedding(const std::string& question) override;
  Eigen::VectorXd image_embedding(const std::string& image_ref) override;

 private:
  Eigen::VectorXd from_tag(const std::string& tag) const;
  int dim_;
  uint64_t seed_;
};

struct Exemplar {
  std::string sample_id;
  std::string question;
  std::string answer;         // canonical answer
  Eigen::VectorXd feature;    // fused, unit norm
  Eigen::VectorXd q_feature;  // unit norm
  Eigen::VectorXd i_feature;  // unit norm
};

struct ExemplarIndex {
  ExemplarStrategy strategy = ExemplarStrategy::kFused;
  std::string embedder_id;
  std::vector<Exemplar> entries;
};

// Embeds every training sample once. Samples without captions are listed in
// `missing_captions` (non-fatal); ques_img/fused with a missing image is
// fatal for that sample.
ExemplarIndex build_index(const std::vector<Sample>& train_samples,
                          FeatureEmbedder& embedder, ExemplarStrategy strategy,
                          const std::set<std::string>* samples_with_captions = nullptr,
                          std::vector<std::string>* missing_captions = nullptr);

// Top-N by the strategy's similarity (rand: seeded draw without replacement),
// excluding the query's own sample_id. Ties break by ascending sample_id.
std::vector<Exemplar> select_similar(const Sample& query,
                                     const ExemplarIndex& index,
                                     FeatureEmbedder& embedder, int N,
                                     uint64_t seed);

void save_index(const ExemplarIndex& index, const std::string& path,
                const std::string& config_hash = "");
ExemplarIndex load_index(const std::string& path);

}  // namespace gerea
