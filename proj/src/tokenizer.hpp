#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "expr.hpp"
#include "floatcodec.hpp"
#include "integrate.hpp"

namespace misode {

// Fixed joint vocabulary. Numeric tokens occupy ids 0..10202 in the order
// sign, mantissa, exponent; symbolic tokens are appended after.
class Vocab {
 public:
  static const Vocab& instance();  // built once, immutable
  static Vocab build();

  int size() const { return static_cast<int>(tokens_.size()); }
  int numeric_count() const { return numeric_count_; }

  const std::string& token(int id) const { return tokens_.at(id); }
  int id_of(const std::string& token) const;  // -1 when unknown

  int sign_id(bool negative) const { return negative ? 1 : 0; }
  int mantissa_id(int m) const { return 2 + m; }
  int exponent_id(int e) const { return 2 + 10000 + (e - kExponentMin); }
  int var_id(int i) const { return var0_id_ + i; }

  int add_id() const { return add_id_; }
  int sep_id() const { return sep_id_; }
  int const_id() const { return const_id_; }
  int bos_id() const { return bos_id_; }
  int eos_id() const { return eos_id_; }
  int pad_id() const { return pad_id_; }
  int cls_id() const { return cls_id_; }

  // sign, mantissa, exponent ids of a triple.
  std::array<int, 3> triple_ids(const TokenTriple& t) const;

  // Plain-text dump, one token per line, id = line number.
  void dump(const std::string& path) const;

  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int numeric_count_ = 0;
  int add_id_ = -1, var0_id_ = -1, sep_id_ = -1, const_id_ = -1;
  int bos_id_ = -1, eos_id_ = -1, pad_id_ = -1, cls_id_ = -1;
};

// Numeric token ids of a trajectory: per time point, the time value followed
// by each state dimension, three tokens each -> s * 3(D+1) ids. Dimensions
// beyond D are padded later, at the embedding stage.
std::vector<int> encode_trajectory(const Trajectory& traj, const Vocab& vocab);

// Target-side codec: BOS + prefix tokens (constants expanded through the
// float codec) + EOS.
std::vector<int> encode_system(const OdeSystem& system, const Vocab& vocab);

// Strict inverse. Requires BOS framing and a final EOS, no padding or framing
// tokens inside; malformed sequences yield nullopt and a diagnostic.
std::optional<OdeSystem> decode_system(std::span<const int> ids, const Vocab& vocab, int dim,
                                       std::string* error = nullptr);

// Token ids -> spellings (for predictions files and diagnostics).
std::vector<std::string> ids_to_tokens(std::span<const int> ids, const Vocab& vocab);
std::vector<int> tokens_to_ids(std::span<const std::string> tokens, const Vocab& vocab);

}  // namespace misode
