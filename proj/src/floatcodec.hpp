#pragma once

#include <cstdint>
#include <string>

namespace misode {

// Three-token float code: value = sign * mantissa * 10^exponent with the
// mantissa normalized to [1000, 9999] (four significant digits). Zero is the
// single triple (+, 0, 0).
struct TokenTriple {
  bool negative = false;
  int mantissa = 0;  // 0 or [1000, 9999]
  int exponent = 0;  // [-100, 100]

  bool operator==(const TokenTriple&) const = default;
};

inline constexpr int kExponentMin = -100;
inline constexpr int kExponentMax = 100;

// Rounds to four significant digits, half away from zero. Throws
// std::out_of_range when the normalized exponent leaves [-100, 100].
TokenTriple encode_float(double v);

double decode_float(const TokenTriple& t);

// True when encode_float accepts v.
bool float_encodable(double v);

// encode -> decode; exact for values already on the 4-significant-digit grid.
double quantize_float(double v);

// Token spellings used in prefix serializations and the vocabulary:
// sign "+" / "-", mantissa "0".."9999", exponent "E-100".."E100".
std::string sign_token(const TokenTriple& t);
std::string mantissa_token(const TokenTriple& t);
std::string exponent_token(const TokenTriple& t);

// Parses the three spellings back; returns false on malformed tokens.
bool parse_triple_tokens(const std::string& sign, const std::string& mantissa,
                         const std::string& exponent, TokenTriple* out);

}  // namespace misode
