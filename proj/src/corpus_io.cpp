#include "corpus_io.hpp"

#include <zlib.h>

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tokenizer.hpp"

namespace misode {

using nlohmann::json;

namespace {

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_whole_file(const std::string& path) {
  // gzopen reads plain files unchanged, so one path covers both variants.
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path);
  std::string content;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) content.append(buf, static_cast<std::size_t>(n));
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw DataError("failed reading " + path);
  return content;
}

void write_whole_file(const std::string& path, const std::string& content) {
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write " + path);
    if (gzwrite(f, content.data(), static_cast<unsigned>(content.size())) !=
        static_cast<int>(content.size())) {
      gzclose(f);
      throw DataError("failed writing " + path);
    }
    gzclose(f);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

}  // namespace

std::string record_to_json(const SystemRecord& record) {
  json j;
  j["id"] = record.id;
  j["dim"] = record.dim;
  j["generator"] = record.generator;
  j["seed"] = record.seed;
  j["sigma"] = record.sigma;
  j["times"] = record.instances.empty() ? std::vector<double>{} : record.instances[0].times;
  std::vector<std::string> exprs;
  for (const Expr& e : record.system.equations) exprs.push_back(join_tokens(to_prefix(e)));
  j["expressions"] = exprs;
  json states = json::array();
  for (const Trajectory& t : record.instances) states.push_back(t.states);
  j["states"] = states;
  return j.dump();
}

SystemRecord record_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("corpus line is not valid JSON: ") + e.what());
  }
  SystemRecord r;
  try {
    r.id = j.at("id").get<long>();
    r.dim = j.at("dim").get<int>();
    r.generator = j.at("generator").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.sigma = j.at("sigma").get<double>();
    const auto times = j.at("times").get<std::vector<double>>();
    for (const auto& expr_str : j.at("expressions")) {
      const auto tokens = split_tokens(expr_str.get<std::string>());
      std::string err;
      auto e = parse_prefix_expr(tokens, r.dim, &err);
      if (!e) throw DataError("corpus expression unparseable: " + err);
      r.system.equations.push_back(std::move(*e));
    }
    r.system.dim = r.dim;
    for (const auto& inst : j.at("states")) {
      Trajectory t;
      t.times = times;
      t.states = inst.get<std::vector<std::vector<double>>>();
      r.instances.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("corpus record malformed: ") + e.what());
  }
  if (static_cast<int>(r.system.equations.size()) != r.dim || !r.system.valid())
    throw DataError("corpus record fails system invariants (id " + std::to_string(r.id) + ")");
  for (const Trajectory& t : r.instances)
    if (!t.valid()) throw DataError("corpus record has invalid trajectory (id " + std::to_string(r.id) + ")");
  return r;
}

void save_corpus(const std::vector<SystemRecord>& records, const std::string& path) {
  std::string content;
  for (const SystemRecord& r : records) {
    content += record_to_json(r);
    content += '\n';
  }
  write_whole_file(path, content);
}

std::vector<SystemRecord> load_corpus(const std::string& path) {
  const std::string content = read_whole_file(path);
  std::vector<SystemRecord> out;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    if (end > start) out.push_back(record_from_json(content.substr(start, end - start)));
    start = end + 1;
  }
  if (out.empty()) throw DataError("corpus " + path + " has no records");
  return out;
}

std::string manifest_path_for(const std::string& artifact_path) {
  return artifact_path + ".manifest.json";
}

void write_corpus_manifest(const std::string& corpus_path, const CorpusConfig& cfg,
                           const Corpus& corpus, const std::string& config_json) {
  json j;
  j["kind"] = "corpus";
  j["seed"] = cfg.seed;
  j["config"] = json::parse(config_json);
  j["config_hash"] = to_hex(fnv1a64(config_json));
  j["records"] = corpus.records.size();
  std::map<std::string, long> buckets;
  for (const SystemRecord& r : corpus.records)
    buckets["dim" + std::to_string(r.dim) + "_n" + std::to_string(r.instances.size())] += 1;
  j["buckets"] = buckets;
  j["rejections"] = {{"attempts", corpus.stats.attempts},
                     {"divergent", corpus.stats.rejected_divergent},
                     {"amplitude", corpus.stats.rejected_amplitude},
                     {"structure_resamples", corpus.stats.structure_resamples}};
  std::ofstream out(manifest_path_for(corpus_path));
  if (!out) throw DataError("cannot write manifest for " + corpus_path);
  out << j.dump(2) << "\n";
}

void write_manifest(const std::string& artifact_path, const std::string& kind,
                    const std::string& config_json, std::uint64_t seed) {
  json j;
  j["kind"] = kind;
  j["seed"] = seed;
  j["config"] = json::parse(config_json);
  j["config_hash"] = to_hex(fnv1a64(config_json));
  std::ofstream out(manifest_path_for(artifact_path));
  if (!out) throw DataError("cannot write manifest for " + artifact_path);
  out << j.dump(2) << "\n";
}

}  // namespace misode
