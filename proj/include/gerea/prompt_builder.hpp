#pragma once

#include <string>
#include <vector>

namespace gerea {

enum class BackendStyle { kInstructBlip, kLlava };

BackendStyle parse_backend_style(const std::string& name);
std::string backend_style_name(BackendStyle s);

inline constexpr int kPromptsPerStyle = 6;

enum class PromptClass {
  kUnconstrained,
  kNounVerb,
  kQuestionInquiry,
  kQuestionRelevantDescription,
};

struct PromptTemplate {
  int template_id = 0;  // 1..6
  PromptClass prompt_class = PromptClass::kUnconstrained;
  BackendStyle style = BackendStyle::kInstructBlip;
  std::string pattern;  // {question} / {phrases} placeholders
};

struct PhraseExtraction {
  std::vector<std::string> noun_phrases;  // contiguous spans of the question
  std::vector<std::string> verb_phrases;
};

// Deterministic POS-pattern chunker over a small built-in lexicon.
PhraseExtraction extract_phrases(const std::string& question);

class PromptLibrary {
 public:
  // templates baked into the binary (resource format v1)
  static PromptLibrary builtin();
  // same line format, loaded from disk so styles can be extended in place
  static PromptLibrary from_file(const std::string& path);

  const std::vector<PromptTemplate>& templates(BackendStyle style) const;

  // 6 byte-exact prompts ordered by template_id
  std::vector<std::string> render(const std::string& question,
                                  const PhraseExtraction& phrases,
                                  BackendStyle style) const;

 private:
  static PromptLibrary parse(const std::string& resource);

  std::vector<PromptTemplate> instructblip_;
  std::vector<PromptTemplate> llava_;
};

// convenience over PromptLibrary::builtin()
std::vector<std::string> render_prompts(const std::string& question,
                                        const PhraseExtraction& phrases,
                                        BackendStyle style);

}  // namespace gerea
