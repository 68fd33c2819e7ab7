#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtdoc/docdata.hpp"

namespace mtdoc {

using TokenId = std::size_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kUnk = 5;
inline constexpr std::size_t kCount = 6;
}  // namespace special

inline constexpr int kMaxSeqId = 512;
// Marks a character token that continues the previous one without a space.
inline constexpr std::string_view kContinuationPrefix = "##";

class Vocab {
 public:
  Vocab();

  // Specials first, then whitespace-separated lowercase words by descending
  // frequency (ties lexicographic), then any character and continuation
  // character tokens not already present, lexicographic.
  static Vocab build(std::span<const std::string> corpus);
  static Vocab load(const std::filesystem::path& path);
  // One token per line; line i (0-based) holds id i.
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  // Throws IndexError for ids outside the vocabulary.
  const std::string& token(TokenId id) const;
  bool is_special(TokenId id) const { return id < special::kCount; }
  bool is_continuation(TokenId id) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void append(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenInstance {
  TokenId id = special::kUnk;
  SegmentBox box;
  int seqid = 0;  // 1-based position within the line; 0 for query placeholders
};

// Swappable text-to-id scheme (word + character fallback here; a BPE model
// would implement the same surface).
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string decode(std::span<const TokenId> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

class WordCharTokenizer final : public Tokenizer {
 public:
  explicit WordCharTokenizer(Vocab vocab) : vocab_(std::move(vocab)) {}

  // Lowercase, split on whitespace; unknown words fall back to one token per
  // character, continuation-marked after the first; unknown characters -> UNK.
  std::vector<TokenId> encode(std::string_view text) const override;
  // Drops PAD and EOS, joins tokens with single spaces and continuation
  // tokens without one.
  std::string decode(std::span<const TokenId> ids) const override;
  std::size_t vocab_size() const override { return vocab_.size(); }

  const Vocab& vocab() const { return vocab_; }

 private:
  Vocab vocab_;
};

std::string to_lower(std::string_view text);
// Lowercase with runs of whitespace collapsed to one space and ends trimmed.
std::string normalize_text(std::string_view text);

// Tokens of one text line, all sharing its box; seqid = 1-based index capped
// at 512.
std::vector<TokenInstance> tokenize_line(const Tokenizer& tokenizer, std::string_view text, const SegmentBox& box);

inline std::string detokenize(const Tokenizer& tokenizer, std::span<const TokenId> ids) {
  return tokenizer.decode(ids);
}

}  // namespace mtdoc
