#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "lplab/autoencoder.hpp"
#include "lplab/config.hpp"

namespace lplab {

// Git-style blob hash (sha1 over "blob <len>\0" + contents).
std::string sha1_file(const std::string& path);

// Every command writes a manifest.json into its output directory: the
// resolved config, content hashes of the input files, and wall timings.
struct ManifestWriter {
  std::string out_dir;
  std::string command;
  nlohmann::ordered_json config;
  std::vector<std::pair<std::string, std::string>> inputs;  // path -> sha1
  std::vector<std::string> artifacts;

  void add_input(const std::string& path);
  void write(double wall_seconds) const;
};

void save_autoencoder(const std::string& path, Autoencoder<float>& ae);
Autoencoder<float> load_autoencoder(const std::string& path);

// Command implementations behind the CLI (shared with tests).
int cmd_gen_data(const RunConfig& cfg, const std::string& config_path, const std::string& out);
int cmd_train_ae(const RunConfig& cfg, const std::string& config_path, const std::string& data_dir,
                 const std::string& out);
int cmd_train_gen(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
                  const std::string& data_dir, const std::string& out);
int cmd_sample(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
               const std::string& ckpt_path, const std::string& out);
int cmd_eval(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
             const std::string& real_dir, const std::string& fake_dir, const std::string& out);
int cmd_spectrum(const std::string& images_dir, const std::string& ref_dir, const std::string& out);
int cmd_probe(const RunConfig& cfg, const std::string& config_path, const std::string& ae_path,
              const std::string& data_dir, const std::string& out);
int cmd_verify_theory(const std::string& out, int instances = 100, uint64_t seed = 0);
int cmd_sweep(const RunConfig& cfg, const std::string& config_path, const std::string& param,
              std::vector<double> values, const std::string& ae_path, const std::string& data_dir,
              const std::string& out);

}  // namespace lplab
