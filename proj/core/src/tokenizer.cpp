#include "mtdoc/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mtdoc/error.hpp"

namespace mtdoc {

namespace {

constexpr std::array<std::string_view, special::kCount> kSpecialTokens = {"<pad>", "<cls>",  "<sos>",
                                                                         "<eos>", "<mask>", "<unk>"};

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) words.push_back(std::move(w));
  return words;
}

}  // namespace

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(to_lower(text))) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

Vocab::Vocab() {
  for (auto s : kSpecialTokens) append(std::string(s));
}

void Vocab::append(std::string token) {
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(std::span<const std::string> corpus) {
  std::map<std::string, std::size_t> counts;
  std::set<std::string> chars;
  for (const auto& text : corpus) {
    for (auto& w : split_words(to_lower(text))) {
      for (char c : w) {
        chars.insert(std::string(1, c));
        chars.insert(std::string(kContinuationPrefix) + c);
      }
      ++counts[std::move(w)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [w, n] : words) {
    if (!v.find(w)) v.append(w);
  }
  for (const auto& c : chars) {
    if (!v.find(c)) v.append(c);
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open vocabulary " + path.string());
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < special::kCount) {
    throw ValidationError("vocabulary " + path.string() + " is missing the special tokens");
  }
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (lines[i] != kSpecialTokens[i]) {
      throw ValidationError("vocabulary " + path.string() + ": line " + std::to_string(i + 1) +
                            " must be " + std::string(kSpecialTokens[i]));
    }
  }
  Vocab v;
  for (std::size_t i = special::kCount; i < lines.size(); ++i) {
    if (lines[i].empty() || v.find(lines[i])) {
      throw ValidationError("vocabulary " + path.string() + ": line " + std::to_string(i + 1) +
                            " is empty or duplicated");
    }
    v.append(lines[i]);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot write vocabulary " + path.string());
  }
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

bool Vocab::is_continuation(TokenId id) const {
  const auto& t = token(id);
  return !is_special(id) && t.size() > kContinuationPrefix.size() && t.starts_with(kContinuationPrefix);
}

std::vector<TokenId> WordCharTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(to_lower(text))) {
    if (auto id = vocab_.find(w)) {
      ids.push_back(*id);
      continue;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string piece = i == 0 ? std::string(1, w[i]) : std::string(kContinuationPrefix) + w[i];
      ids.push_back(vocab_.find(piece).value_or(special::kUnk));
    }
  }
  return ids;
}

std::string WordCharTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    const auto& t = vocab_.token(id);
    if (id == special::kPad || id == special::kEos) continue;
    if (vocab_.is_continuation(id)) {
      out += t.substr(kContinuationPrefix.size());
      continue;
    }
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<TokenInstance> tokenize_line(const Tokenizer& tokenizer, std::string_view text, const SegmentBox& box) {
  const auto ids = tokenizer.encode(text);
  std::vector<TokenInstance> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.push_back({ids[i], box, static_cast<int>(std::min<std::size_t>(i + 1, kMaxSeqId))});
  }
  return out;
}

}  // namespace mtdoc
