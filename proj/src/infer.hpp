#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datagen.hpp"
#include "model.hpp"

namespace misode {

struct BeamConfig {
  int beam_size = 20;
  double temperature = 0.1;
  int max_len = 384;       // decode steps after BOS
  bool stochastic = false;  // sampling variant behind a flag; default is
                            // deterministic search over temperature-scaled scores
  std::uint64_t seed = 0;
};

struct RmsScaled {
  std::vector<Trajectory> instances;
  double scale = 1.0;  // R; inputs were divided by it
};

// Single shared factor per system: R is the RMS over all instances and
// dimensions of the initial values. All-zero initials leave the data
// unscaled (R = 1).
RmsScaled rms_scale(const std::vector<Trajectory>& instances);

// The model predicted d(x~)/dt = f~(x~) for x~ = x / R; returns
// dx/dt = R * f~(x / R) by substituting x_i -> x_i / R and scaling each
// equation by R, folding constant subtrees numerically.
OdeSystem unscale_system(const OdeSystem& pred, double R);

// Folds constant-only subtrees and adjacent multiplicative constants.
Expr fold_constants(const Expr& e);

struct BeamCandidate {
  std::vector<int> ids;  // BOS ... EOS when complete
  double score = 0;      // length-normalized log-probability (temperature-scaled)
  bool complete = false;
};

// Deterministic beam search over logits / temperature; candidates sorted by
// score descending, ties broken toward ascending token ids. If nothing
// completes within max_len the best partial beams are returned, flagged.
template <typename T>
std::vector<BeamCandidate> beam_decode(const Model<T>& model, const Tensor<T>& memory,
                                       const BeamConfig& cfg);

struct PredictConfig {
  BeamConfig beam;
  bool rescale = true;
  // Literal-formula variant: use 1/RMS as the divisor instead of RMS,
  // scaling inputs up by the initial-value magnitude. Off by default; the
  // default convention gives unit-RMS scaled initials.
  bool rms_literal = false;
  double sigma = -1.0;  // < 0: use the record's sigma
  int instances = 0;    // 0: all available, else first n
};

struct Prediction {
  long system_id = 0;
  int dim = 0;
  bool ok = false;
  OdeSystem system;        // unscaled prediction when ok
  double rms = 1.0;
  int chosen = -1;         // index into candidates
  std::vector<BeamCandidate> candidates;
  std::vector<double> agg_weights;
  std::string failure;
};

template <typename T>
Prediction predict(const Model<T>& model, const SystemRecord& record, const PredictConfig& cfg);

// JSONL: {"id":..,"dim":..,"ok":..,"tokens":"...","infix":"...","rms":..,
//         "beam_scores":[..],"weights":[..],"failure":".."}
void save_predictions(const std::vector<Prediction>& predictions, const std::string& path);

struct PredictionRow {
  long id = 0;
  int dim = 0;
  bool ok = false;
  OdeSystem system;
};
std::vector<PredictionRow> load_predictions(const std::string& path);

}  // namespace misode
