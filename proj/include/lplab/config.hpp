#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "lplab/lpl.hpp"
#include "lplab/toydata.hpp"
#include "lplab/trainer.hpp"

namespace lplab {

struct SamplerConfig {
  int count = 256;
  int steps = 50;
  double guidance = 1.5;
  uint64_t seed = 999;
  bool use_ema = true;
};

struct EvalConfig {
  int knn_k = 5;
};

struct AeConfigSection {
  AeTrainConfig train;
};

// Full experiment description. Parsing is strict: unknown keys anywhere are
// rejected, and the resolved config is echoed verbatim into run manifests.
struct RunConfig {
  uint64_t seed = 0;
  PredictionKind framework = PredictionKind::eps;
  DataSpec data;
  AeTrainConfig ae;
  int schedule_T = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  std::optional<bool> zero_terminal;  // absent = auto (true for v, false otherwise)
  LplConfig lpl;
  TrainerConfig trainer;
  SamplerConfig sampler;
  EvalConfig eval;

  bool resolved_zero_terminal() const {
    if (zero_terminal.has_value()) return *zero_terminal;
    return framework == PredictionKind::v;
  }

  NoiseSchedule build_schedule() const;
  GeneratorTrainSetup build_setup() const;
  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::ordered_json run_config_json(const RunConfig& cfg);

}  // namespace lplab
