#include "tokenizer.hpp"

#include <fstream>

#include "common.hpp"

namespace misode {

Vocab Vocab::build() {
  Vocab v;
  v.tokens_.reserve(10219);
  v.tokens_.push_back("+");
  v.tokens_.push_back("-");
  for (int m = 0; m <= 9999; ++m) v.tokens_.push_back(std::to_string(m));
  for (int e = kExponentMin; e <= kExponentMax; ++e) v.tokens_.push_back("E" + std::to_string(e));
  v.numeric_count_ = static_cast<int>(v.tokens_.size());

  auto add = [&](const std::string& t) {
    v.tokens_.push_back(t);
    return static_cast<int>(v.tokens_.size()) - 1;
  };
  v.add_id_ = add("add");
  add("mul");
  add("sin");
  add("pow2");
  add("inv");
  add("id");
  v.var0_id_ = add("x0");
  add("x1");
  add("x2");
  add("x3");
  v.sep_id_ = add("<sep>");
  v.const_id_ = add("<const>");
  v.bos_id_ = add("<bos>");
  v.eos_id_ = add("<eos>");
  v.pad_id_ = add("<pad>");
  v.cls_id_ = add("<cls>");

  v.ids_.reserve(v.tokens_.size());
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) v.ids_[v.tokens_[i]] = i;
  return v;
}

const Vocab& Vocab::instance() {
  static const Vocab v = build();
  return v;
}

int Vocab::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? -1 : it->second;
}

std::array<int, 3> Vocab::triple_ids(const TokenTriple& t) const {
  return {sign_id(t.negative), mantissa_id(t.mantissa), exponent_id(t.exponent)};
}

void Vocab::dump(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary to " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    h = fnv1a64(tokens_[i], h);
    h = fnv1a64(std::to_string(i), h);
  }
  return h;
}

std::vector<int> encode_trajectory(const Trajectory& traj, const Vocab& vocab) {
  std::vector<int> out;
  out.reserve(traj.points() * 3 * (traj.dim() + 1));
  for (std::size_t k = 0; k < traj.points(); ++k) {
    const auto t_ids = vocab.triple_ids(encode_float(traj.times[k]));
    out.insert(out.end(), t_ids.begin(), t_ids.end());
    for (double x : traj.states[k]) {
      const auto x_ids = vocab.triple_ids(encode_float(x));
      out.insert(out.end(), x_ids.begin(), x_ids.end());
    }
  }
  return out;
}

std::vector<int> encode_system(const OdeSystem& system, const Vocab& vocab) {
  std::vector<int> out;
  out.push_back(vocab.bos_id());
  for (const std::string& tok : to_prefix(system)) {
    const int id = vocab.id_of(tok);
    if (id < 0) throw RuntimeFailure("encode_system: token without id: " + tok);
    out.push_back(id);
  }
  out.push_back(vocab.eos_id());
  return out;
}

std::optional<OdeSystem> decode_system(std::span<const int> ids, const Vocab& vocab, int dim,
                                       std::string* error) {
  auto fail = [&](const std::string& msg) -> std::optional<OdeSystem> {
    if (error) *error = msg;
    return std::nullopt;
  };
  if (ids.size() < 3) return fail("sequence too short");
  if (ids.front() != vocab.bos_id()) return fail("missing <bos>");
  if (ids.back() != vocab.eos_id()) return fail("missing <eos>");
  std::vector<std::string> tokens;
  tokens.reserve(ids.size() - 2);
  for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= vocab.size()) return fail("id out of vocabulary range");
    if (id == vocab.bos_id() || id == vocab.eos_id() || id == vocab.pad_id() ||
        id == vocab.cls_id())
      return fail("framing token inside sequence");
    tokens.push_back(vocab.token(id));
  }
  return parse_prefix(tokens, dim, error);
}

std::vector<std::string> ids_to_tokens(std::span<const int> ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(id >= 0 && id < vocab.size() ? vocab.token(id) : "<invalid>");
  return out;
}

std::vector<int> tokens_to_ids(std::span<const std::string> tokens, const Vocab& vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(vocab.id_of(t));
  return out;
}

}  // namespace misode
