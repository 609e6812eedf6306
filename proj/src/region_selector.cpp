#include "gerea/region_selector.hpp"

#include <algorithm>
#include <cmath>

namespace gerea {

ClampMode parse_clamp_mode(const std::string& name) {
  if (name == "positive") return ClampMode::kPositive;
  if (name == "literal_min") return ClampMode::kLiteralMin;
  throw UserError("unknown clamp mode: " + name);
}

std::string clamp_mode_name(ClampMode m) {
  return m == ClampMode::kPositive ? "positive" : "literal_min";
}

RelevanceMap compute_relevance(IteBackend& backend, const std::string& image_ref,
                               const std::string& question, int layer,
                               ClampMode clamp_mode) {
  if (question.empty()) throw UserError("compute_relevance: empty question");
  const int M = backend.patch_count();
  const int H = backend.head_count();
  const int L = backend.token_count(question);

  auto attn = backend.cross_attention(image_ref, question, layer);
  auto grad = backend.sim_gradient(image_ref, question, layer);
  if (static_cast<int>(attn.size()) != H || static_cast<int>(grad.size()) != H) {
    throw UserError("ITE backend returned wrong head count for sample " +
                    image_ref);
  }

  RelevanceMap out;
  out.layer = layer;
  out.clamp_mode = clamp_mode;
  out.r = Eigen::VectorXd::Zero(M);
  for (int h = 0; h < H; ++h) {
    if (attn[h].rows() != L || attn[h].cols() != M) {
      throw UserError("ITE attention shape mismatch for sample " + image_ref);
    }
    for (int l = 0; l < L; ++l) {
      for (int j = 0; j < M; ++j) {
        double g = grad[h](l, j);
        double clamped = clamp_mode == ClampMode::kPositive ? std::max(0.0, g)
                                                            : std::min(0.0, g);
        out.r(j) += clamped * attn[h](l, j);
      }
    }
  }
  out.r /= static_cast<double>(H);
  for (int j = 0; j < M; ++j) {
    if (!std::isfinite(out.r(j))) {
      throw UserError("non-finite relevance for sample " + image_ref);
    }
  }
  return out;
}

RegionSet sample_regions(const RelevanceMap& relevance, int K, int m,
                         uint64_t seed) {
  const int M = static_cast<int>(relevance.r.size());
  if (K > M) {
    throw UserError("sample_regions: K=" + std::to_string(K) + " exceeds M=" +
                    std::to_string(M));
  }
  if (m < 1) throw UserError("sample_regions: m must be >= 1");

  // literal_min relevance is non-positive; negate to obtain sampling mass
  Eigen::VectorXd mass_base = relevance.clamp_mode == ClampMode::kLiteralMin
                                  ? (-relevance.r).eval()
                                  : relevance.r;

  RegionSet out;
  out.seed = seed;
  out.patch_count = M;
  Rng rng(mix_seed(seed, "region-sampler"));

  for (int region = 0; region < m; ++region) {
    std::vector<double> mass(mass_base.data(), mass_base.data() + M);
    std::vector<bool> taken(M, false);
    std::vector<int> picks;
    picks.reserve(K);
    for (int k = 0; k < K; ++k) {
      double total = 0.0;
      for (int j = 0; j < M; ++j) {
        if (!taken[j]) total += mass[j];
      }
      int pick = -1;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        double acc = 0.0;
        for (int j = 0; j < M; ++j) {
          if (taken[j]) continue;
          acc += mass[j];
          if (u < acc) {
            pick = j;
            break;
          }
        }
        if (pick < 0) {  // float round-off at the upper edge
          for (int j = M - 1; j >= 0; --j) {
            if (!taken[j]) {
              pick = j;
              break;
            }
          }
        }
      } else {
        // exhausted mass: uniform over unselected patches
        int remaining = 0;
        for (int j = 0; j < M; ++j) {
          if (!taken[j]) ++remaining;
        }
        int target = static_cast<int>(rng.uniform_int(remaining));
        for (int j = 0; j < M; ++j) {
          if (!taken[j] && target-- == 0) {
            pick = j;
            break;
          }
        }
      }
      taken[pick] = true;
      picks.push_back(pick);
    }
    out.regions.push_back(std::move(picks));
  }
  return out;
}

// ---- synthetic backend -----------------------------------------------------

SyntheticIteBackend::SyntheticIteBackend(int patches, int tokens, int heads,
                                         uint64_t seed)
    : patches_(patches), tokens_(tokens), heads_(heads), seed_(seed) {}

uint64_t SyntheticIteBackend::context_seed(const std::string& image_ref,
                                           const std::string& question,
                                           int layer, const char* tag) const {
  uint64_t h = mix_seed(seed_, tag);
  h = fnv1a64(image_ref, h);
  h = fnv1a64("|", h);
  h = fnv1a64(question, h);
  h = fnv1a64("|" + std::to_string(layer), h);
  return h;
}

std::vector<Eigen::MatrixXd> SyntheticIteBackend::cross_attention(
    const std::string& image_ref, const std::string& question, int layer) {
  Rng rng(context_seed(image_ref, question, layer, "attn"));
  std::vector<Eigen::MatrixXd> out;
  for (int h = 0; h < heads_; ++h) {
    Eigen::MatrixXd logits(tokens_, patches_);
    for (int l = 0; l < tokens_; ++l) {
      for (int j = 0; j < patches_; ++j) logits(l, j) = rng.normal();
    }
    Eigen::MatrixXd attn(tokens_, patches_);
    for (int l = 0; l < tokens_; ++l) {
      double mx = logits.row(l).maxCoeff();
      Eigen::Array<double, 1, Eigen::Dynamic> e = (logits.row(l).array() - mx).exp();
      attn.row(l) = (e / e.sum()).matrix();
    }
    out.push_back(std::move(attn));
  }
  return out;
}

std::vector<Eigen::MatrixXd> SyntheticIteBackend::coeff_linear(
    const std::string& image_ref, const std::string& question,
    int layer) const {
  Rng rng(context_seed(image_ref, question, layer, "lin"));
  std::vector<Eigen::MatrixXd> out;
  for (int h = 0; h < heads_; ++h) {
    Eigen::MatrixXd c(tokens_, patches_);
    for (int l = 0; l < tokens_; ++l) {
      for (int j = 0; j < patches_; ++j) c(l, j) = rng.normal();
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Eigen::MatrixXd> SyntheticIteBackend::coeff_quadratic(
    const std::string& image_ref, const std::string& question,
    int layer) const {
  Rng rng(context_seed(image_ref, question, layer, "quad"));
  std::vector<Eigen::MatrixXd> out;
  for (int h = 0; h < heads_; ++h) {
    Eigen::MatrixXd d(tokens_, patches_);
    for (int l = 0; l < tokens_; ++l) {
      for (int j = 0; j < patches_; ++j) d(l, j) = rng.normal();
    }
    out.push_back(std::move(d));
  }
  return out;
}

double SyntheticIteBackend::similarity_at(
    const std::string& image_ref, const std::string& question, int layer,
    const std::vector<Eigen::MatrixXd>& attn) const {
  auto c = coeff_linear(image_ref, question, layer);
  auto d = coeff_quadratic(image_ref, question, layer);
  double sim = 0.0;
  for (int h = 0; h < heads_; ++h) {
    sim += (c[h].array() * attn[h].array()).sum();
    sim += 0.5 * (d[h].array() * attn[h].array() * attn[h].array()).sum();
  }
  return sim;
}

double SyntheticIteBackend::similarity(const std::string& image_ref,
                                       const std::string& question) {
  auto attn = cross_attention(image_ref, question, kDefaultIteLayer);
  return similarity_at(image_ref, question, kDefaultIteLayer, attn);
}

std::vector<Eigen::MatrixXd> SyntheticIteBackend::sim_gradient(
    const std::string& image_ref, const std::string& question, int layer) {
  if (!grad_override_.empty()) return grad_override_;
  auto attn = cross_attention(image_ref, question, layer);
  auto c = coeff_linear(image_ref, question, layer);
  auto d = coeff_quadratic(image_ref, question, layer);
  std::vector<Eigen::MatrixXd> grad;
  for (int h = 0; h < heads_; ++h) {
    grad.push_back(c[h] + (d[h].array() * attn[h].array()).matrix());
  }
  return grad;
}

}  // namespace gerea
