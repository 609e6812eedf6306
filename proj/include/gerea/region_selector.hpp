#pragma once

#include "gerea/util.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace gerea {

enum class ClampMode { kPositive, kLiteralMin };

ClampMode parse_clamp_mode(const std::string& name);
std::string clamp_mode_name(ClampMode m);

// Image-grounded text encoder adapter: exposes the per-head cross-attention
// between question tokens and image patches at a given layer, together with
// the gradient of the image-question similarity with respect to it.
class IteBackend {
 public:
  virtual ~IteBackend() = default;

  virtual int patch_count() const = 0;
  virtual int head_count() const = 0;
  virtual int token_count(const std::string& question) const = 0;

  // H matrices of shape L x M; every row is a probability distribution.
  virtual std::vector<Eigen::MatrixXd> cross_attention(
      const std::string& image_ref, const std::string& question, int layer) = 0;

  // d sim(V,Q) / d W, one L x M matrix per head.
  virtual std::vector<Eigen::MatrixXd> sim_gradient(
      const std::string& image_ref, const std::string& question, int layer) = 0;

  virtual double similarity(const std::string& image_ref,
                            const std::string& question) = 0;
};

struct RelevanceMap {
  Eigen::VectorXd r;  // length M
  int layer = 6;
  ClampMode clamp_mode = ClampMode::kPositive;
};

struct RegionSet {
  // each region keeps its K patch indices in draw order (all distinct)
  std::vector<std::vector<int>> regions;
  uint64_t seed = 0;
  int patch_count = 0;
};

inline constexpr int kDefaultIteLayer = 6;

RelevanceMap compute_relevance(IteBackend& backend, const std::string& image_ref,
                               const std::string& question,
                               int layer = kDefaultIteLayer,
                               ClampMode clamp_mode = ClampMode::kPositive);

// Draws m regions of K distinct patches each, K at a time without
// replacement with probability proportional to the remaining relevance mass;
// zero/exhausted mass falls back to uniform over the unselected patches.
RegionSet sample_regions(const RelevanceMap& relevance, int K, int m,
                         uint64_t seed);

// Deterministic synthetic ITE whose similarity is an analytic quadratic in
// the attention entries, so its gradient can be checked by finite
// differences. Attention and coefficients are pure functions of
// (seed, image_ref, question, layer).
class SyntheticIteBackend : public IteBackend {
 public:
  SyntheticIteBackend(int patches, int tokens, int heads, uint64_t seed);

  int patch_count() const override { return patches_; }
  int head_count() const override { return heads_; }
  int token_count(const std::string&) const override { return tokens_; }

  std::vector<Eigen::MatrixXd> cross_attention(const std::string& image_ref,
                                               const std::string& question,
                                               int layer) override;
  std::vector<Eigen::MatrixXd> sim_gradient(const std::string& image_ref,
                                            const std::string& question,
                                            int layer) override;
  double similarity(const std::string& image_ref,
                    const std::string& question) override;

  // sim evaluated at an arbitrary attention tensor (finite-difference hook)
  double similarity_at(const std::string& image_ref, const std::string& question,
                       int layer, const std::vector<Eigen::MatrixXd>& attn) const;

  // test hook: overrides the derived gradient for all (image, question) pairs
  void set_gradient_override(std::vector<Eigen::MatrixXd> grads) {
    grad_override_ = std::move(grads);
  }

 private:
  std::vector<Eigen::MatrixXd> coeff_linear(const std::string& image_ref,
                                            const std::string& question,
                                            int layer) const;
  std::vector<Eigen::MatrixXd> coeff_quadratic(const std::string& image_ref,
                                               const std::string& question,
                                               int layer) const;
  uint64_t context_seed(const std::string& image_ref, const std::string& question,
                        int layer, const char* tag) const;

  int patches_;
  int tokens_;
  int heads_;
  uint64_t seed_;
  std::vector<Eigen::MatrixXd> grad_override_;
};

}  // namespace gerea
