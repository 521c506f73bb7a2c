#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jointseq/task.hpp"

namespace jointseq {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class TokenKind { kControl, kText, kLocation };

struct TokenInfo {
  TokenKind kind;
  int value;  // control index, byte value, or location bin
};

// One token space for control symbols, raw bytes and location bins, laid out
// as three contiguous ranges: control | text | location.
//
// Control range: PAD, BOS, EOS, SEP, one token per task (one-hot prompt),
// then the reserved group tokens used by the structured one-hot prompt.
class UnifiedVocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr int kNumSpecial = 4;
  static constexpr int kNumGroupTokens = 19;
  static constexpr int kNumText = 256;

  explicit UnifiedVocab(int n_loc = 100);

  int n_control() const { return kNumSpecial + static_cast<int>(kNumTasks) + kNumGroupTokens; }
  int n_text() const { return kNumText; }
  int n_loc() const { return n_loc_; }
  int total_size() const { return n_control() + n_text() + n_loc(); }

  TokenId text_base() const { return n_control(); }
  TokenId loc_base() const { return n_control() + n_text(); }

  TokenId task_token(Task t) const;
  // Reserved control token `index` in [0, kNumGroupTokens).
  TokenId group_token(int index) const;

  bool is_valid(TokenId id) const { return id >= 0 && id < total_size(); }
  bool is_text(TokenId id) const { return id >= text_base() && id < loc_base(); }
  bool is_location(TokenId id) const { return id >= loc_base() && id < total_size(); }
  bool is_control(TokenId id) const { return id >= 0 && id < n_control(); }

  // Throws Error(kOutOfRange) for ids outside [0, total_size).
  TokenInfo classify(TokenId id) const;

  TokenSeq encode_text(std::string_view s) const;
  // Invalid UTF-8 sequences decode to U+FFFD; throws kNonTextToken.
  std::string decode_text(std::span<const TokenId> tokens) const;

  // Bin of a normalized coordinate, top edge clamped into the last bin.
  TokenId quantize_coord(double v) const;
  // Bin centre (k + 0.5) / B.
  double dequantize_coord(TokenId t) const;

  // Human-readable rendering: text bytes verbatim, everything else <...>.
  std::string describe(std::span<const TokenId> tokens) const;

  bool operator==(const UnifiedVocab&) const = default;

 private:
  int n_loc_;
};

// Replaces malformed UTF-8 with U+FFFD, one replacement per maximal invalid
// subsequence.
std::string sanitize_utf8(std::string_view bytes);

}  // namespace jointseq
