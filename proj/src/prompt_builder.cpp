#include "gerea/prompt_builder.hpp"

#include "gerea/util.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace gerea {

BackendStyle parse_backend_style(const std::string& name) {
  if (name == "instructblip") return BackendStyle::kInstructBlip;
  if (name == "llava") return BackendStyle::kLlava;
  throw UserError("unknown backend style: " + name);
}

std::string backend_style_name(BackendStyle s) {
  return s == BackendStyle::kInstructBlip ? "instructblip" : "llava";
}

// ---- phrase extraction -----------------------------------------------------

namespace {

enum class WordClass { kDeterminer, kWh, kPreposition, kVerb, kParticle, kConj, kPronoun, kContent };

const std::set<std::string>& determiners() {
  static const std::set<std::string> s = {
      "a", "an", "the", "this", "that", "these", "those", "any", "some",
      "no", "every", "each", "his", "her", "its", "their", "our", "my", "your"};
  return s;
}

const std::set<std::string>& wh_words() {
  static const std::set<std::string> s = {"what", "who",  "whom", "whose", "which",
                                          "where", "when", "why",  "how"};
  return s;
}

const std::set<std::string>& prepositions() {
  static const std::set<std::string> s = {
      "of", "in", "on", "at", "for", "with", "about", "from", "to", "by",
      "near", "under", "over", "into", "onto", "during", "through", "between",
      "among", "behind", "above", "below", "around", "along", "across"};
  return s;
}

const std::set<std::string>& verb_lexicon() {
  static const std::set<std::string> s = {
      "is", "are", "was", "were", "am", "be", "been", "being", "do", "does",
      "did", "can", "could", "will", "would", "shall", "should", "may",
      "might", "must", "have", "has", "had", "use", "used", "call", "called",
      "ride", "rode", "wear", "worn", "make", "made", "play", "eat", "ate",
      "hold", "held", "sit", "sat", "stand", "stood", "go", "went", "come",
      "came", "appear", "appears", "look", "looks", "seem", "seems", "show",
      "shows", "shown", "fill", "fills", "grow", "grown", "fly", "flew",
      "run", "ran", "walk", "drive", "drove", "drink", "drank", "see", "seen",
      "serve", "take", "taken", "took", "find", "found", "know", "known",
      "live", "name"};
  return s;
}

const std::set<std::string>& particles() {
  static const std::set<std::string> s = {"up", "down", "off", "out", "away", "back", "over"};
  return s;
}

const std::set<std::string>& conjunctions() {
  static const std::set<std::string> s = {"and", "or", "but"};
  return s;
}

const std::set<std::string>& pronouns() {
  static const std::set<std::string> s = {"it", "they", "he", "she", "we", "you",
                                          "i", "them", "him", "us", "there"};
  return s;
}

std::string strip_punct(const std::string& tok, size_t* stripped_tail = nullptr) {
  size_t end = tok.size();
  while (end > 0 && std::ispunct(static_cast<unsigned char>(tok[end - 1]))) --end;
  size_t begin = 0;
  while (begin < end && std::ispunct(static_cast<unsigned char>(tok[begin]))) ++begin;
  if (stripped_tail) *stripped_tail = tok.size() - end;
  return tok.substr(begin, end - begin);
}

WordClass classify(const std::string& word) {
  if (word.empty()) return WordClass::kContent;
  std::string w = to_lower(word);
  if (wh_words().count(w)) return WordClass::kWh;
  if (determiners().count(w)) return WordClass::kDeterminer;
  if (verb_lexicon().count(w)) return WordClass::kVerb;
  if (prepositions().count(w)) return WordClass::kPreposition;
  if (conjunctions().count(w)) return WordClass::kConj;
  if (pronouns().count(w)) return WordClass::kPronoun;
  // suffix heuristic for open-class verbs
  if (w.size() > 4 && (w.ends_with("ing") || w.ends_with("ed"))) return WordClass::kVerb;
  return WordClass::kContent;
}

void push_unique(std::vector<std::string>& out, const std::string& span) {
  if (span.empty()) return;
  if (std::find(out.begin(), out.end(), span) == out.end()) out.push_back(span);
}

}  // namespace

PhraseExtraction extract_phrases(const std::string& question) {
  PhraseExtraction out;
  auto tokens = tokenize_with_offsets(question);
  struct Classified {
    WordClass cls;
    size_t begin, end;  // offsets excluding stripped punctuation
  };
  std::vector<Classified> words;
  for (auto& t : tokens) {
    size_t tail = 0;
    std::string core = strip_punct(t.text, &tail);
    if (core.empty()) continue;
    size_t begin = t.begin + (t.text.find(core));
    words.push_back({classify(core), begin, begin + core.size()});
  }

  size_t i = 0;
  while (i < words.size()) {
    if (words[i].cls == WordClass::kContent) {
      size_t j = i;
      while (j + 1 < words.size() && words[j + 1].cls == WordClass::kContent) ++j;
      out.noun_phrases.push_back(
          question.substr(words[i].begin, words[j].end - words[i].begin));
      i = j + 1;
    } else if (words[i].cls == WordClass::kVerb) {
      size_t j = i;
      while (j + 1 < words.size() && words[j + 1].cls == WordClass::kVerb) ++j;
      size_t end = words[j].end;
      // verb run may absorb one trailing particle
      if (j + 1 < words.size()) {
        std::string next = to_lower(
            question.substr(words[j + 1].begin, words[j + 1].end - words[j + 1].begin));
        if (particles().count(next)) {
          ++j;
          end = words[j].end;
        }
      }
      out.verb_phrases.push_back(question.substr(words[i].begin, end - words[i].begin));
      i = j + 1;
    } else {
      ++i;
    }
  }

  // deduplicate, keeping question order
  std::vector<std::string> nouns, verbs;
  for (auto& p : out.noun_phrases) push_unique(nouns, p);
  for (auto& p : out.verb_phrases) push_unique(verbs, p);
  out.noun_phrases = std::move(nouns);
  out.verb_phrases = std::move(verbs);
  return out;
}

// ---- templates -------------------------------------------------------------

namespace {

// Resource format v1: "[style]" sections, then "id|class|pattern" lines.
// "\n" inside a pattern is an escaped newline; trailing spaces are literal.
const char* kBuiltinTemplates =
    "# gerea prompt templates v1\n"
    "[instructblip]\n"
    "1|unconstrained|write down the facts that you know about this picture\n"
    "2|noun_verb|explain this picture in as much detail as possible based on the information provided below: {phrases}\n"
    "3|question_inquiry|{question}\n"
    "4|question_inquiry|question: {question} the answer: \n"
    "5|question_relevant_description|question: {question} according to the question and image, we know that \n"
    "6|question_relevant_description|explain this picture according to the question {question}\n"
    "[llava]\n"
    "1|unconstrained|write down the facts that you know about this picture\n"
    "2|noun_verb|{phrases}\\n explain this picture in as much detail as possible based on the provided information.\n"
    "3|question_inquiry|{question}\\n answer the question using a single word or phrase.\n"
    "4|question_inquiry|question: {question} the answer:\\n answer the question using a single word or phrase.\n"
    "5|question_relevant_description|question: {question}\\n according to the question and image, we know that \n"
    "6|question_relevant_description|{question}\\n explain this picture according to the question\n";

PromptClass parse_prompt_class(const std::string& name) {
  if (name == "unconstrained") return PromptClass::kUnconstrained;
  if (name == "noun_verb") return PromptClass::kNounVerb;
  if (name == "question_inquiry") return PromptClass::kQuestionInquiry;
  if (name == "question_relevant_description")
    return PromptClass::kQuestionRelevantDescription;
  throw UserError("unknown prompt class: " + name);
}

std::string unescape_newlines(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == 'n') {
      out.push_back('\n');
      ++i;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::string replace_all(std::string text, const std::string& needle,
                        const std::string& value) {
  size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return text;
}

}  // namespace

PromptLibrary PromptLibrary::parse(const std::string& resource) {
  PromptLibrary lib;
  std::istringstream in(resource);
  std::string line;
  std::vector<PromptTemplate>* current = nullptr;
  BackendStyle style = BackendStyle::kInstructBlip;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      std::string name = line.substr(1, line.find(']') - 1);
      style = parse_backend_style(name);
      current = style == BackendStyle::kInstructBlip ? &lib.instructblip_ : &lib.llava_;
      continue;
    }
    if (!current) throw UserError("template line outside a [style] section");
    size_t p1 = line.find('|');
    size_t p2 = line.find('|', p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos) {
      throw UserError("malformed template line: " + line);
    }
    PromptTemplate t;
    t.template_id = std::stoi(line.substr(0, p1));
    t.prompt_class = parse_prompt_class(line.substr(p1 + 1, p2 - p1 - 1));
    t.style = style;
    t.pattern = unescape_newlines(line.substr(p2 + 1));
    current->push_back(std::move(t));
  }
  for (auto* v : {&lib.instructblip_, &lib.llava_}) {
    if (static_cast<int>(v->size()) != kPromptsPerStyle) {
      throw UserError("expected 6 templates per style");
    }
    std::sort(v->begin(), v->end(), [](const PromptTemplate& a, const PromptTemplate& b) {
      return a.template_id < b.template_id;
    });
  }
  return lib;
}

PromptLibrary PromptLibrary::builtin() { return parse(kBuiltinTemplates); }

PromptLibrary PromptLibrary::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("missing template resource: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::vector<PromptTemplate>& PromptLibrary::templates(BackendStyle style) const {
  return style == BackendStyle::kInstructBlip ? instructblip_ : llava_;
}

std::vector<std::string> PromptLibrary::render(const std::string& question,
                                               const PhraseExtraction& phrases,
                                               BackendStyle style) const {
  std::string joined;
  for (auto& p : phrases.noun_phrases) {
    if (!joined.empty()) joined += ", ";
    joined += p;
  }
  for (auto& p : phrases.verb_phrases) {
    if (!joined.empty()) joined += ", ";
    joined += p;
  }
  std::vector<std::string> out;
  for (auto& t : templates(style)) {
    std::string text = replace_all(t.pattern, "{question}", question);
    text = replace_all(text, "{phrases}", joined);
    out.push_back(std::move(text));
  }
  return out;
}

std::vector<std::string> render_prompts(const std::string& question,
                                        const PhraseExtraction& phrases,
                                        BackendStyle style) {
  static const PromptLibrary lib = PromptLibrary::builtin();
  return lib.render(question, phrases, style);
}

}  // namespace gerea
