#pragma once

#include <string>
#include <vector>

#include "datagen.hpp"

namespace misode {

// One record per line:
// {"id":..,"dim":..,"generator":"poly","seed":..,"sigma":..,"times":[..],
//  "expressions":["mul <const> + 1500 E-3 x0", ...],"states":[[[...]]]}
// A ".gz" suffix selects gzip output; reads sniff the gzip magic, so both
// variants load transparently.
void save_corpus(const std::vector<SystemRecord>& records, const std::string& path);
std::vector<SystemRecord> load_corpus(const std::string& path);

std::string record_to_json(const SystemRecord& record);
SystemRecord record_from_json(const std::string& line);

// Sidecar provenance: config echo + hash, seed, bucket counts, rejections.
void write_corpus_manifest(const std::string& corpus_path, const CorpusConfig& cfg,
                           const Corpus& corpus, const std::string& config_json);

// Generic manifest writer for checkpoints and result files.
void write_manifest(const std::string& artifact_path, const std::string& kind,
                    const std::string& config_json, std::uint64_t seed);

std::string manifest_path_for(const std::string& artifact_path);

}  // namespace misode
