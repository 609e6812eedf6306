#pragma once

#include "gerea/caption_engine.hpp"

#include <map>
#include <string>
#include <vector>

namespace gerea {

// lowercase, punctuation removed, whitespace runs collapsed, ends trimmed
std::string normalize_answer(const std::string& text);

// min(#matches/3, 1) against the human responses; values are exactly
// {0, 1/3, 2/3, 1}
double vqa_score(const std::string& pred,
                 const std::vector<std::string>& human_answers);

// whole-word containment of the normalized answer in the normalized caption
bool caption_contains_answer(const std::string& caption,
                             const std::string& answer);

// fraction of samples whose caption set contains the gold answer, in percent
double answer_hit_rate(const std::map<std::string, CaptionSet>& caption_sets,
                       const std::map<std::string, std::string>& answers);

// 1 - (per-caption hit fraction); requires a uniform caption count
double answer_noise_rate(const std::map<std::string, CaptionSet>& caption_sets,
                         const std::map<std::string, std::string>& answers);

struct BehaviorAnalysis {
  // [backend correct?][system correct?] percentages, summing to 100
  double quadrants[2][2] = {{0, 0}, {0, 0}};
  double same_share = 0;       // % of samples where system == backend answer
  double same_accuracy = 0;    // accuracy within the "same" set
  double different_accuracy = 0;
  int sample_count = 0;
};

// "Correct" = vqa_score >= 1/3; "same" compares normalized answers.
BehaviorAnalysis behavior_analysis(
    const std::map<std::string, std::string>& system_preds,
    const std::map<std::string, std::string>& backend_preds,
    const std::map<std::string, std::vector<std::string>>& gold);

struct EvalReport {
  double overall_accuracy = 0;  // percent
  std::map<std::string, double> per_category;  // percent per category
  std::map<std::string, int> per_category_count;
  double ahr = 0;
  double anr = 0;
  BehaviorAnalysis behavior;
  int sample_count = 0;
  int caption_count = 0;  // C_n
  std::string containment_rule = "whole-word-normalized-v1";
};

nlohmann::json report_to_json(const EvalReport& report);

// aligned per-category text table
std::string render_category_table(const EvalReport& report);

}  // namespace gerea
