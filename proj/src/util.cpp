#include "gerea/util.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace gerea {

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string collapse_whitespace(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = true;  // leading whitespace is dropped
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      if (!in_ws) out.push_back(' ');
      in_ws = true;
    } else {
      out.push_back(static_cast<char>(c));
      in_ws = false;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

std::vector<TokenSpan> tokenize_with_offsets(const std::string& s) {
  std::vector<TokenSpan> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i >= s.size()) break;
    size_t b = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    out.push_back({s.substr(b, i - b), b, i});
  }
  return out;
}

double token_f1(const std::string& a, const std::string& b) {
  auto ta = split_whitespace(a);
  auto tb = split_whitespace(b);
  if (ta.empty() || tb.empty()) return ta.empty() && tb.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (auto& t : ta) counts[t]++;
  int overlap = 0;
  for (auto& t : tb) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  double prec = static_cast<double>(overlap) / tb.size();
  double rec = static_cast<double>(overlap) / ta.size();
  return 2.0 * prec * rec / (prec + rec);
}

}  // namespace gerea
