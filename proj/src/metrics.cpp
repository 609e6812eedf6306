#include "gerea/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace gerea {

std::string normalize_answer(const std::string& text) {
  std::string no_punct;
  no_punct.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    no_punct.push_back(static_cast<char>(std::tolower(c)));
  }
  return collapse_whitespace(no_punct);
}

double vqa_score(const std::string& pred,
                 const std::vector<std::string>& human_answers) {
  if (human_answers.empty()) throw UserError("vqa_score: empty answer set");
  std::string p = normalize_answer(pred);
  int matches = 0;
  for (auto& a : human_answers) {
    if (normalize_answer(a) == p) ++matches;
  }
  return std::min(matches / 3.0, 1.0);
}

bool caption_contains_answer(const std::string& caption,
                             const std::string& answer) {
  std::string cap = normalize_answer(caption);
  std::string ans = normalize_answer(answer);
  if (ans.empty()) return false;
  size_t pos = 0;
  while ((pos = cap.find(ans, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || cap[pos - 1] == ' ';
    size_t end = pos + ans.size();
    bool right_ok = end == cap.size() || cap[end] == ' ';
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

namespace {

void check_alignment(const std::map<std::string, CaptionSet>& caption_sets,
                     const std::map<std::string, std::string>& answers) {
  std::string orphans;
  for (auto& [id, _] : caption_sets) {
    if (!answers.count(id)) orphans += " captions-only:" + id;
  }
  for (auto& [id, _] : answers) {
    if (!caption_sets.count(id)) orphans += " answers-only:" + id;
  }
  if (!orphans.empty()) {
    throw UserError("misaligned sample ids:" + orphans);
  }
}

}  // namespace

double answer_hit_rate(const std::map<std::string, CaptionSet>& caption_sets,
                       const std::map<std::string, std::string>& answers) {
  check_alignment(caption_sets, answers);
  if (caption_sets.empty()) return 0.0;
  int hits = 0;
  for (auto& [id, set] : caption_sets) {
    const std::string& a = answers.at(id);
    for (auto& rec : set.captions) {
      if (caption_contains_answer(rec.text, a)) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * hits / caption_sets.size();
}

double answer_noise_rate(const std::map<std::string, CaptionSet>& caption_sets,
                         const std::map<std::string, std::string>& answers) {
  check_alignment(caption_sets, answers);
  if (caption_sets.empty()) return 100.0;
  size_t c_n = caption_sets.begin()->second.captions.size();
  for (auto& [id, set] : caption_sets) {
    if (set.captions.size() != c_n) {
      throw UserError("answer_noise_rate: ragged caption counts (sample " + id +
                      " has " + std::to_string(set.captions.size()) +
                      ", expected " + std::to_string(c_n) + ")");
    }
  }
  if (c_n == 0) return 100.0;
  long hits = 0;
  for (auto& [id, set] : caption_sets) {
    const std::string& a = answers.at(id);
    for (auto& rec : set.captions) {
      if (caption_contains_answer(rec.text, a)) ++hits;
    }
  }
  return 100.0 * (1.0 - static_cast<double>(hits) /
                            (caption_sets.size() * c_n));
}

BehaviorAnalysis behavior_analysis(
    const std::map<std::string, std::string>& system_preds,
    const std::map<std::string, std::string>& backend_preds,
    const std::map<std::string, std::vector<std::string>>& gold) {
  for (auto& [id, _] : gold) {
    if (!system_preds.count(id) || !backend_preds.count(id)) {
      throw UserError("behavior_analysis: missing predictions for sample " + id);
    }
  }
  for (auto& [id, _] : system_preds) {
    if (!gold.count(id)) {
      throw UserError("behavior_analysis: prediction for unknown sample " + id);
    }
  }

  BehaviorAnalysis out;
  int counts[2][2] = {{0, 0}, {0, 0}};
  int same = 0;
  double same_score = 0, diff_score = 0;
  for (auto& [id, answers] : gold) {
    double sys_score = vqa_score(system_preds.at(id), answers);
    double back_score = vqa_score(backend_preds.at(id), answers);
    bool sys_ok = sys_score >= 1.0 / 3.0 - 1e-12;
    bool back_ok = back_score >= 1.0 / 3.0 - 1e-12;
    counts[back_ok ? 0 : 1][sys_ok ? 0 : 1]++;
    bool is_same = normalize_answer(system_preds.at(id)) ==
                   normalize_answer(backend_preds.at(id));
    if (is_same) {
      ++same;
      same_score += sys_score;
    } else {
      diff_score += sys_score;
    }
  }
  int n = static_cast<int>(gold.size());
  out.sample_count = n;
  if (n == 0) return out;
  for (int b = 0; b < 2; ++b) {
    for (int s = 0; s < 2; ++s) out.quadrants[b][s] = 100.0 * counts[b][s] / n;
  }
  out.same_share = 100.0 * same / n;
  out.same_accuracy = same > 0 ? 100.0 * same_score / same : 0.0;
  out.different_accuracy = n - same > 0 ? 100.0 * diff_score / (n - same) : 0.0;
  return out;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per_cat = nlohmann::json::object();
  for (auto& [cat, acc] : r.per_category) {
    per_cat[cat] = {{"accuracy", acc},
                    {"count", r.per_category_count.count(cat)
                                  ? r.per_category_count.at(cat)
                                  : 0}};
  }
  return nlohmann::json{
      {"schema_version", kSchemaVersion},
      {"overall_accuracy", r.overall_accuracy},
      {"per_category", per_cat},
      {"ahr", r.ahr},
      {"anr", r.anr},
      {"sample_count", r.sample_count},
      {"caption_count", r.caption_count},
      {"containment_rule", r.containment_rule},
      {"behavior",
       {{"quadrants",
         {{"backend_correct_system_correct", r.behavior.quadrants[0][0]},
          {"backend_correct_system_wrong", r.behavior.quadrants[0][1]},
          {"backend_wrong_system_correct", r.behavior.quadrants[1][0]},
          {"backend_wrong_system_wrong", r.behavior.quadrants[1][1]}}},
        {"same_share", r.behavior.same_share},
        {"same_accuracy", r.behavior.same_accuracy},
        {"different_accuracy", r.behavior.different_accuracy}}}};
}

std::string render_category_table(const EvalReport& r) {
  std::ostringstream out;
  size_t width = 8;
  for (auto& [cat, _] : r.per_category) width = std::max(width, cat.size());
  out << std::left << std::setw(static_cast<int>(width) + 2) << "Category"
      << std::right << std::setw(8) << "Acc." << std::setw(8) << "N" << "\n";
  for (auto& [cat, acc] : r.per_category) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << cat
        << std::right << std::setw(8) << std::fixed << std::setprecision(2)
        << acc << std::setw(8)
        << (r.per_category_count.count(cat) ? r.per_category_count.at(cat) : 0)
        << "\n";
  }
  out << std::left << std::setw(static_cast<int>(width) + 2) << "Overall"
      << std::right << std::setw(8) << std::fixed << std::setprecision(2)
      << r.overall_accuracy << std::setw(8) << r.sample_count << "\n";
  return out.str();
}

}  // namespace gerea
