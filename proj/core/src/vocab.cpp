#include "jointseq/vocab.hpp"

#include <cmath>
#include <string>

#include "jointseq/error.hpp"

namespace jointseq {

UnifiedVocab::UnifiedVocab(int n_loc) : n_loc_(n_loc) {
  if (n_loc < 2) {
    throw Error(ErrorCode::kOutOfRange, "location bin count must be >= 2");
  }
}

TokenId UnifiedVocab::task_token(Task t) const {
  return kNumSpecial + static_cast<TokenId>(task_index(t));
}

TokenId UnifiedVocab::group_token(int index) const {
  if (index < 0 || index >= kNumGroupTokens) {
    throw Error(ErrorCode::kOutOfRange, "group token index " + std::to_string(index));
  }
  return kNumSpecial + static_cast<TokenId>(kNumTasks) + index;
}

TokenInfo UnifiedVocab::classify(TokenId id) const {
  if (!is_valid(id)) {
    throw Error(ErrorCode::kOutOfRange, "token id " + std::to_string(id));
  }
  if (id < text_base()) return {TokenKind::kControl, id};
  if (id < loc_base()) return {TokenKind::kText, id - text_base()};
  return {TokenKind::kLocation, id - loc_base()};
}

TokenSeq UnifiedVocab::encode_text(std::string_view s) const {
  TokenSeq out;
  out.reserve(s.size());
  for (unsigned char c : s) out.push_back(text_base() + c);
  return out;
}

std::string UnifiedVocab::decode_text(std::span<const TokenId> tokens) const {
  std::string bytes;
  bytes.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (!is_text(t)) {
      throw Error(ErrorCode::kNonTextToken, "token " + std::to_string(t));
    }
    bytes.push_back(static_cast<char>(t - text_base()));
  }
  return sanitize_utf8(bytes);
}

TokenId UnifiedVocab::quantize_coord(double v) const {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(ErrorCode::kOutOfRange, "coordinate " + std::to_string(v));
  }
  int bin = static_cast<int>(std::floor(v * n_loc_));
  if (bin > n_loc_ - 1) bin = n_loc_ - 1;
  return loc_base() + bin;
}

double UnifiedVocab::dequantize_coord(TokenId t) const {
  if (!is_location(t)) {
    throw Error(ErrorCode::kNonLocationToken, "token " + std::to_string(t));
  }
  return (static_cast<double>(t - loc_base()) + 0.5) / n_loc_;
}

std::string UnifiedVocab::describe(std::span<const TokenId> tokens) const {
  std::string out;
  std::string run;
  auto flush = [&] {
    out += sanitize_utf8(run);
    run.clear();
  };
  for (TokenId t : tokens) {
    if (is_text(t)) {
      run.push_back(static_cast<char>(t - text_base()));
      continue;
    }
    flush();
    if (t == kPad) {
      out += "<pad>";
    } else if (t == kBos) {
      out += "<bos>";
    } else if (t == kEos) {
      out += "<eos>";
    } else if (t == kSep) {
      out += "<sep>";
    } else if (is_control(t) && t < kNumSpecial + static_cast<TokenId>(kNumTasks)) {
      out += "<task:" + std::string(task_name(static_cast<Task>(t - kNumSpecial))) + ">";
    } else if (is_control(t)) {
      out += "<group:" + std::to_string(t - kNumSpecial - static_cast<int>(kNumTasks)) + ">";
    } else if (is_location(t)) {
      out += "<loc:" + std::to_string(t - loc_base()) + ">";
    } else {
      out += "<invalid:" + std::to_string(t) + ">";
    }
  }
  flush();
  return out;
}

std::string sanitize_utf8(std::string_view bytes) {
  static constexpr const char* kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  const std::size_t n = bytes.size();
  while (i < n) {
    const auto b0 = static_cast<unsigned char>(bytes[i]);
    if (b0 < 0x80) {
      out.push_back(static_cast<char>(b0));
      ++i;
      continue;
    }
    int need = 0;
    unsigned char lo = 0x80, hi = 0xBF;
    if (b0 >= 0xC2 && b0 <= 0xDF) {
      need = 1;
    } else if (b0 >= 0xE0 && b0 <= 0xEF) {
      need = 2;
      if (b0 == 0xE0) lo = 0xA0;
      if (b0 == 0xED) hi = 0x9F;
    } else if (b0 >= 0xF0 && b0 <= 0xF4) {
      need = 3;
      if (b0 == 0xF0) lo = 0x90;
      if (b0 == 0xF4) hi = 0x8F;
    } else {
      out += kReplacement;
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    bool ok = true;
    for (int k = 0; k < need; ++k, ++j) {
      if (j >= n) {
        ok = false;
        break;
      }
      const auto b = static_cast<unsigned char>(bytes[j]);
      const unsigned char l = (k == 0) ? lo : 0x80;
      const unsigned char h = (k == 0) ? hi : 0xBF;
      if (b < l || b > h) {
        ok = false;
        break;
      }
    }
    if (ok) {
      out.append(bytes.substr(i, j - i));
    } else {
      out += kReplacement;
    }
    i = j;
  }
  return out;
}

}  // namespace jointseq
