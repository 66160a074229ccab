#include "lplab/config.hpp"

#include <fstream>
#include <set>

namespace lplab {

namespace {

// Strict section reader: every key must be consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <typename T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config: bad value type for " + path_ + "." + key);
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  // Must be called after all keys were read; rejects unknown keys.
  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("config: unknown key " + path_ + "." + it.key());
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  Section root(j, "$");
  cfg.seed = root.get<uint64_t>("seed", 0);
  cfg.framework = prediction_kind_from(root.get<std::string>("framework", "eps"));

  if (root.has("data")) {
    Section s(root.raw("data"), "$.data");
    cfg.data.count = s.get<int>("count", cfg.data.count);
    cfg.data.resolution = s.get<int>("resolution", cfg.data.resolution);
    cfg.data.classes = s.get<int>("classes", cfg.data.classes);
    cfg.data.texture_freq_min = s.get<double>("texture_freq_min", cfg.data.texture_freq_min);
    cfg.data.texture_freq_max = s.get<double>("texture_freq_max", cfg.data.texture_freq_max);
    cfg.data.texture_amplitude = s.get<double>("texture_amplitude", cfg.data.texture_amplitude);
    cfg.data.seed = s.get<uint64_t>("seed", cfg.data.seed);
    s.finish();
  }
  if (root.has("ae")) {
    Section s(root.raw("ae"), "$.ae");
    cfg.ae.steps = s.get<int>("steps", cfg.ae.steps);
    cfg.ae.batch = s.get<int>("batch", cfg.ae.batch);
    cfg.ae.lr = s.get<double>("lr", cfg.ae.lr);
    cfg.ae.weight_decay = s.get<double>("weight_decay", cfg.ae.weight_decay);
    cfg.ae.holdout_fraction = s.get<double>("holdout_fraction", cfg.ae.holdout_fraction);
    cfg.ae.latent_l2 = s.get<double>("latent_l2", cfg.ae.latent_l2);
    cfg.ae.seed = s.get<uint64_t>("seed", cfg.ae.seed);
    s.finish();
  }
  if (root.has("schedule")) {
    Section s(root.raw("schedule"), "$.schedule");
    cfg.schedule_T = s.get<int>("T", cfg.schedule_T);
    cfg.beta_start = s.get<double>("beta_start", cfg.beta_start);
    cfg.beta_end = s.get<double>("beta_end", cfg.beta_end);
    if (s.has("zero_terminal")) cfg.zero_terminal = s.get<bool>("zero_terminal", false);
    s.finish();
  }
  if (root.has("lpl")) {
    Section s(root.raw("lpl"), "$.lpl");
    cfg.lpl.enabled = s.get<bool>("enabled", cfg.lpl.enabled);
    cfg.lpl.tau_sigma = s.get<double>("tau_sigma", cfg.lpl.tau_sigma);
    cfg.lpl.base_resolution = s.get<double>("base_resolution", cfg.lpl.base_resolution);
    cfg.lpl.w_lpl = s.get<double>("w_lpl", cfg.lpl.w_lpl);
    cfg.lpl.omega_policy = omega_policy_from(
        s.get<std::string>("omega_policy", to_string(cfg.lpl.omega_policy)));
    cfg.lpl.quant = s.get<double>("quant", cfg.lpl.quant);
    cfg.lpl.opening = s.get<int>("opening", cfg.lpl.opening);
    cfg.lpl.closing = s.get<int>("closing", cfg.lpl.closing);
    cfg.lpl.std_floor = s.get<double>("std_floor", cfg.lpl.std_floor);
    cfg.lpl.detach_stats = s.get<bool>("detach_stats", cfg.lpl.detach_stats);
    s.finish();
  }
  if (root.has("trainer")) {
    Section s(root.raw("trainer"), "$.trainer");
    cfg.trainer.phase1_steps = s.get<int>("phase1_steps", cfg.trainer.phase1_steps);
    cfg.trainer.phase2_steps = s.get<int>("phase2_steps", cfg.trainer.phase2_steps);
    cfg.trainer.batch = s.get<int>("batch", cfg.trainer.batch);
    cfg.trainer.lr = s.get<double>("lr", cfg.trainer.lr);
    cfg.trainer.weight_decay = s.get<double>("weight_decay", cfg.trainer.weight_decay);
    cfg.trainer.gamma_ema = s.get<double>("gamma_ema", cfg.trainer.gamma_ema);
    cfg.trainer.p_drop = s.get<double>("p_drop", cfg.trainer.p_drop);
    cfg.trainer.ckpt_every = s.get<int>("ckpt_every", cfg.trainer.ckpt_every);
    auto ch = s.get<std::vector<int>>("channels",
                                      {cfg.trainer.channels[0], cfg.trainer.channels[1],
                                       cfg.trainer.channels[2]});
    if (ch.size() != 3) throw ConfigError("config: trainer.channels must have 3 entries");
    cfg.trainer.channels = {ch[0], ch[1], ch[2]};
    cfg.trainer.mode_sampling = s.get<bool>("mode_sampling", cfg.trainer.mode_sampling);
    cfg.trainer.reweight_enabled = s.get<bool>("reweight_enabled", cfg.trainer.reweight_enabled);
    cfg.trainer.reweight_variance_ratio =
        s.get<double>("reweight_variance_ratio", cfg.trainer.reweight_variance_ratio);
    s.finish();
  }
  if (root.has("sampler")) {
    Section s(root.raw("sampler"), "$.sampler");
    cfg.sampler.count = s.get<int>("count", cfg.sampler.count);
    cfg.sampler.steps = s.get<int>("steps", cfg.sampler.steps);
    cfg.sampler.guidance = s.get<double>("guidance", cfg.sampler.guidance);
    cfg.sampler.seed = s.get<uint64_t>("seed", cfg.sampler.seed);
    cfg.sampler.use_ema = s.get<bool>("use_ema", cfg.sampler.use_ema);
    s.finish();
  }
  if (root.has("eval")) {
    Section s(root.raw("eval"), "$.eval");
    cfg.eval.knn_k = s.get<int>("knn_k", cfg.eval.knn_k);
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  data.validate();
  lpl.validate();
  if (schedule_T < 2) throw ConfigError("config: schedule.T must be >= 2");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
    throw ConfigError("config: need 0 < beta_start < beta_end < 1");
  if (framework == PredictionKind::eps && resolved_zero_terminal())
    throw ConfigError("config: zero_terminal with epsilon prediction breaks x0 recovery at t=T");
  if (trainer.batch < 1 || trainer.phase1_steps < 0 || trainer.phase2_steps < 0)
    throw ConfigError("config: invalid trainer settings");
  if (trainer.p_drop < 0.0 || trainer.p_drop >= 1.0)
    throw ConfigError("config: trainer.p_drop must lie in [0,1)");
  if (sampler.steps < 1 || sampler.count < 1) throw ConfigError("config: invalid sampler settings");
  if (sampler.guidance < 0.0) throw ConfigError("config: sampler.guidance must be >= 0");
  if (eval.knn_k < 1) throw ConfigError("config: eval.knn_k must be >= 1");
  if (framework != PredictionKind::flow && sampler.steps > schedule_T)
    throw ConfigError("config: sampler.steps exceeds schedule length");
}

NoiseSchedule RunConfig::build_schedule() const {
  if (framework == PredictionKind::flow) return make_flow_schedule();
  NoiseSchedule s = make_ddpm_schedule(schedule_T, beta_start, beta_end);
  if (resolved_zero_terminal()) s = enforce_zero_terminal_snr(s);
  return s;
}

GeneratorTrainSetup RunConfig::build_setup() const {
  GeneratorTrainSetup setup;
  setup.kind = framework;
  setup.schedule = build_schedule();
  setup.lpl = lpl;
  setup.trainer = trainer;
  setup.resolution = data.resolution;
  setup.seed = seed;
  return setup;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestError("config file not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return parse_run_config(j);
}

nlohmann::ordered_json run_config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["framework"] = to_string(cfg.framework);
  j["data"] = {{"count", cfg.data.count},
               {"resolution", cfg.data.resolution},
               {"classes", cfg.data.classes},
               {"texture_freq_min", cfg.data.texture_freq_min},
               {"texture_freq_max", cfg.data.texture_freq_max},
               {"texture_amplitude", cfg.data.texture_amplitude},
               {"seed", cfg.data.seed}};
  j["ae"] = {{"steps", cfg.ae.steps},
             {"batch", cfg.ae.batch},
             {"lr", cfg.ae.lr},
             {"weight_decay", cfg.ae.weight_decay},
             {"holdout_fraction", cfg.ae.holdout_fraction},
             {"latent_l2", cfg.ae.latent_l2},
             {"seed", cfg.ae.seed}};
  j["schedule"] = {{"T", cfg.schedule_T},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end},
                   {"zero_terminal", cfg.resolved_zero_terminal()}};
  j["lpl"] = {{"enabled", cfg.lpl.enabled},
              {"tau_sigma", cfg.lpl.tau_sigma},
              {"base_resolution", cfg.lpl.base_resolution},
              {"w_lpl", cfg.lpl.w_lpl},
              {"omega_policy", to_string(cfg.lpl.omega_policy)},
              {"quant", cfg.lpl.quant},
              {"opening", cfg.lpl.opening},
              {"closing", cfg.lpl.closing},
              {"std_floor", cfg.lpl.std_floor},
              {"detach_stats", cfg.lpl.detach_stats}};
  j["trainer"] = {{"phase1_steps", cfg.trainer.phase1_steps},
                  {"phase2_steps", cfg.trainer.phase2_steps},
                  {"batch", cfg.trainer.batch},
                  {"lr", cfg.trainer.lr},
                  {"weight_decay", cfg.trainer.weight_decay},
                  {"gamma_ema", cfg.trainer.gamma_ema},
                  {"p_drop", cfg.trainer.p_drop},
                  {"ckpt_every", cfg.trainer.ckpt_every},
                  {"channels", cfg.trainer.channels},
                  {"mode_sampling", cfg.trainer.mode_sampling},
                  {"reweight_enabled", cfg.trainer.reweight_enabled},
                  {"reweight_variance_ratio", cfg.trainer.reweight_variance_ratio}};
  j["sampler"] = {{"count", cfg.sampler.count},
                  {"steps", cfg.sampler.steps},
                  {"guidance", cfg.sampler.guidance},
                  {"seed", cfg.sampler.seed},
                  {"use_ema", cfg.sampler.use_ema}};
  j["eval"] = {{"knn_k", cfg.eval.knn_k}};
  return j;
}

}  // namespace lplab
