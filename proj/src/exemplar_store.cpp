#include "gerea/exemplar_store.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>

using nlohmann::json;

namespace gerea {

ExemplarStrategy parse_strategy(const std::string& name) {
  if (name == "fused") return ExemplarStrategy::kFused;
  if (name == "ques_img") return ExemplarStrategy::kQuesImg;
  if (name == "rand") return ExemplarStrategy::kRand;
  throw UserError("unknown exemplar strategy: " + name);
}

std::string strategy_name(ExemplarStrategy s) {
  switch (s) {
    case ExemplarStrategy::kFused: return "fused";
    case ExemplarStrategy::kQuesImg: return "ques_img";
    case ExemplarStrategy::kRand: return "rand";
  }
  return "fused";
}

// ---- mock embedder ---------------------------------------------------------

Eigen::VectorXd MockFeatureEmbedder::from_tag(const std::string& tag) const {
  Rng rng(mix_seed(seed_, tag));
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v(i) = rng.normal();
  double n = v.norm();
  if (n < 1e-12) v(0) = 1.0, n = 1.0;
  return v / n;
}

Eigen::VectorXd MockFeatureEmbedder::question_embedding(const std::string& question) {
  return from_tag("q\x1f" + question);
}

Eigen::VectorXd MockFeatureEmbedder::image_embedding(const std::string& image_ref) {
  return from_tag("i\x1f" + image_ref);
}

// ---- index -----------------------------------------------------------------

namespace {

Eigen::VectorXd unit(const Eigen::VectorXd& v) {
  double n = v.norm();
  if (n < 1e-12) throw UserError("zero-norm embedding");
  return v / n;
}

Eigen::VectorXd fuse(const Eigen::VectorXd& q, const Eigen::VectorXd& i) {
  Eigen::VectorXd out(q.size() + i.size());
  out << unit(q), unit(i);
  return out / out.norm();  // cosine on this equals the mean per-modality cosine
}

}  // namespace

ExemplarIndex build_index(const std::vector<Sample>& train_samples,
                          FeatureEmbedder& embedder, ExemplarStrategy strategy,
                          const std::set<std::string>* samples_with_captions,
                          std::vector<std::string>* missing_captions) {
  ExemplarIndex index;
  index.strategy = strategy;
  index.embedder_id = embedder.embedder_id();
  for (const Sample& s : train_samples) {
    if (samples_with_captions && !samples_with_captions->count(s.sample_id) &&
        missing_captions) {
      missing_captions->push_back(s.sample_id);
    }
    Exemplar e;
    e.sample_id = s.sample_id;
    e.question = s.question;
    e.answer = canonical_answer(s.answers);
    if (strategy != ExemplarStrategy::kRand) {
      if (s.image_missing) {
        throw UserError("exemplar index: missing image for sample " +
                        s.sample_id + " under strategy " +
                        strategy_name(strategy));
      }
      e.q_feature = unit(embedder.question_embedding(s.question));
      e.i_feature = unit(embedder.image_embedding(s.image_ref));
      e.feature = fuse(e.q_feature, e.i_feature);
    }
    index.entries.push_back(std::move(e));
  }
  return index;
}

std::vector<Exemplar> select_similar(const Sample& query,
                                     const ExemplarIndex& index,
                                     FeatureEmbedder& embedder, int N,
                                     uint64_t seed) {
  int usable = 0;
  for (auto& e : index.entries) {
    if (e.sample_id != query.sample_id) ++usable;
  }
  if (N > usable) {
    throw UserError("select_similar: N=" + std::to_string(N) +
                    " exceeds available exemplars (" + std::to_string(usable) + ")");
  }
  if (N == 0) return {};

  std::vector<const Exemplar*> pool;
  for (auto& e : index.entries) {
    if (e.sample_id != query.sample_id) pool.push_back(&e);
  }

  if (index.strategy == ExemplarStrategy::kRand) {
    Rng rng(mix_seed(seed, "rand-exemplar\x1f" + query.sample_id));
    std::vector<Exemplar> out;
    std::vector<const Exemplar*> remaining = pool;
    for (int k = 0; k < N; ++k) {
      size_t idx = rng.uniform_int(remaining.size());
      out.push_back(*remaining[idx]);
      remaining.erase(remaining.begin() + idx);
    }
    return out;
  }

  Eigen::VectorXd qq = unit(embedder.question_embedding(query.question));
  Eigen::VectorXd qi = unit(embedder.image_embedding(query.image_ref));
  Eigen::VectorXd qf = fuse(qq, qi);

  std::vector<std::pair<double, const Exemplar*>> scored;
  scored.reserve(pool.size());
  for (auto* e : pool) {
    double sim;
    if (index.strategy == ExemplarStrategy::kFused) {
      sim = qf.dot(e->feature);
    } else {
      sim = 0.5 * (qq.dot(e->q_feature) + qi.dot(e->i_feature));
    }
    scored.emplace_back(sim, e);
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second->sample_id < b.second->sample_id;
            });
  std::vector<Exemplar> out;
  for (int k = 0; k < N; ++k) out.push_back(*scored[k].second);
  return out;
}

// ---- persistence -----------------------------------------------------------

namespace {

const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (size_t i = 0; i < bytes.size(); i += 3) {
    uint32_t v = bytes[i] << 16;
    int n = 1;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8, ++n;
    if (i + 2 < bytes.size()) v |= bytes[i + 2], ++n;
    out.push_back(kB64[(v >> 18) & 63]);
    out.push_back(kB64[(v >> 12) & 63]);
    out.push_back(n > 1 ? kB64[(v >> 6) & 63] : '=');
    out.push_back(n > 2 ? kB64[v & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> b64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  int buf = 0, bits = 0;
  for (char c : s) {
    int v = val(c);
    if (v < 0) continue;
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

std::string encode_feature(const Eigen::VectorXd& v) {
  std::vector<unsigned char> bytes(v.size() * 4);
  for (int i = 0; i < v.size(); ++i) {
    float f = static_cast<float>(v(i));
    std::memcpy(&bytes[i * 4], &f, 4);  // little-endian host assumed
  }
  return b64_encode(bytes);
}

Eigen::VectorXd decode_feature(const std::string& s) {
  auto bytes = b64_decode(s);
  Eigen::VectorXd v(bytes.size() / 4);
  for (int i = 0; i < v.size(); ++i) {
    float f;
    std::memcpy(&f, &bytes[i * 4], 4);
    v(i) = f;
  }
  return v;
}

}  // namespace

void save_index(const ExemplarIndex& index, const std::string& path,
                const std::string& config_hash) {
  std::vector<json> records;
  for (auto& e : index.entries) {
    json j = {{"schema_version", kSchemaVersion},
              {"sample_id", e.sample_id},
              {"strategy", strategy_name(index.strategy)},
              {"embedder_id", index.embedder_id},
              {"answer", e.answer},
              {"question", e.question}};
    if (index.strategy != ExemplarStrategy::kRand) {
      j["feature"] = encode_feature(e.feature);
      j["q_feature"] = encode_feature(e.q_feature);
      j["i_feature"] = encode_feature(e.i_feature);
    }
    records.push_back(std::move(j));
  }
  write_artifact("exemplars", records, path, config_hash);
}

ExemplarIndex load_index(const std::string& path) {
  Artifact a = read_artifact(path);
  ExemplarIndex index;
  bool first = true;
  for (auto& rec : a.records) {
    if (first) {
      index.strategy = parse_strategy(rec.at("strategy").get<std::string>());
      index.embedder_id = rec.value("embedder_id", "");
      first = false;
    }
    Exemplar e;
    e.sample_id = rec.at("sample_id").get<std::string>();
    e.question = rec.at("question").get<std::string>();
    e.answer = rec.at("answer").get<std::string>();
    if (rec.contains("feature")) {
      e.feature = decode_feature(rec["feature"].get<std::string>());
      e.q_feature = decode_feature(rec["q_feature"].get<std::string>());
      e.i_feature = decode_feature(rec["i_feature"].get<std::string>());
    }
    index.entries.push_back(std::move(e));
  }
  return index;
}

}  // namespace gerea
