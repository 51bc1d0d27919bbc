#include "floatcodec.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace misode {

TokenTriple encode_float(double v) {
  if (!std::isfinite(v)) throw std::out_of_range("encode_float: non-finite value");
  if (v == 0.0) return TokenTriple{false, 0, 0};

  const bool negative = v < 0.0;
  const double a = std::abs(v);

  int q = static_cast<int>(std::floor(std::log10(a)));
  // log10 can land one off at power-of-ten boundaries; nudge until
  // a / 10^q lies in [1, 10).
  while (a / std::pow(10.0, q) < 1.0) --q;
  while (a / std::pow(10.0, q) >= 10.0) ++q;
  q -= 3;  // integer-mantissa exponent

  double scaled = a / std::pow(10.0, q);
  long long m = static_cast<long long>(std::floor(scaled + 0.5));  // half away from zero
  if (m >= 10000) {  // 9999.5 and up carries into the exponent
    m = 1000;
    q += 1;
  }
  if (m < 1000) {  // guard against a low log10 estimate
    q -= 1;
    scaled = a / std::pow(10.0, q);
    m = static_cast<long long>(std::floor(scaled + 0.5));
    if (m >= 10000) {
      m = 1000;
      q += 1;
    }
  }
  if (q < kExponentMin || q > kExponentMax)
    throw std::out_of_range("encode_float: exponent " + std::to_string(q) + " outside [-100, 100]");
  return TokenTriple{negative, static_cast<int>(m), q};
}

double decode_float(const TokenTriple& t) {
  const double v = static_cast<double>(t.mantissa) * std::pow(10.0, t.exponent);
  return t.negative ? -v : v;
}

bool float_encodable(double v) {
  if (!std::isfinite(v)) return false;
  if (v == 0.0) return true;
  const double a = std::abs(v);
  // Conservative bounds on the normalized form m*10^q, m in [1000, 9999].
  return a >= 1000.0 * std::pow(10.0, kExponentMin) && a < 9999.5 * std::pow(10.0, kExponentMax);
}

double quantize_float(double v) { return decode_float(encode_float(v)); }

std::string sign_token(const TokenTriple& t) { return t.negative ? "-" : "+"; }

std::string mantissa_token(const TokenTriple& t) { return std::to_string(t.mantissa); }

std::string exponent_token(const TokenTriple& t) { return "E" + std::to_string(t.exponent); }

bool parse_triple_tokens(const std::string& sign, const std::string& mantissa,
                         const std::string& exponent, TokenTriple* out) {
  TokenTriple t;
  if (sign == "+")
    t.negative = false;
  else if (sign == "-")
    t.negative = true;
  else
    return false;

  if (mantissa.empty() || mantissa.size() > 4) return false;
  for (char c : mantissa)
    if (c < '0' || c > '9') return false;
  t.mantissa = std::stoi(mantissa);
  if (t.mantissa != 0 && (t.mantissa < 1000 || t.mantissa > 9999)) return false;

  if (exponent.size() < 2 || exponent[0] != 'E') return false;
  try {
    std::size_t pos = 0;
    t.exponent = std::stoi(exponent.substr(1), &pos);
    if (pos + 1 != exponent.size()) return false;
  } catch (const std::exception&) {
    return false;
  }
  if (t.exponent < kExponentMin || t.exponent > kExponentMax) return false;
  if (t.mantissa == 0 && (t.exponent != 0 || t.negative)) return false;
  *out = t;
  return true;
}

}  // namespace misode
