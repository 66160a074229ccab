#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lplab/harness.hpp"

using namespace lplab;

namespace {

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent perceptual loss laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ae_path, ckpt_path, real_dir, fake_dir, images_dir,
      ref_dir, param;
  std::vector<double> values;
  int instances = 100;

  auto add_common = [&](CLI::App* cmd, bool need_config = true) {
    if (need_config) cmd->add_option("--config", config_path, "run config JSON");
    cmd->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic textured corpus");
  add_common(gen);

  CLI::App* tae = app.add_subcommand("train-ae", "train and freeze the autoencoder");
  add_common(tae);
  tae->add_option("--data", data_dir, "dataset directory (default: generate from config)");

  CLI::App* tgen = app.add_subcommand("train-gen", "two-phase generator training");
  add_common(tgen);
  tgen->add_option("--ae", ae_path, "frozen autoencoder checkpoint")->required();
  tgen->add_option("--data", data_dir, "dataset directory (default: generate from config)");

  CLI::App* smp = app.add_subcommand("sample", "draw samples from a trained checkpoint");
  add_common(smp);
  smp->add_option("--ae", ae_path, "frozen autoencoder checkpoint")->required();
  smp->add_option("--run", ckpt_path, "run directory or checkpoint file")->required();

  CLI::App* ev = app.add_subcommand("eval", "metrics between a real and a generated set");
  add_common(ev);
  ev->add_option("--ae", ae_path, "frozen autoencoder checkpoint")->required();
  ev->add_option("--real", real_dir, "real dataset directory")->required();
  ev->add_option("--fake", fake_dir, "generated samples directory")->required();

  CLI::App* spec = app.add_subcommand("spectrum", "radial power spectrum of an image set");
  spec->add_option("--images", images_dir, "image set directory")->required();
  spec->add_option("--ref", ref_dir, "reference set for a difference grid");
  spec->add_option("--out", out_dir, "output directory")->required();

  CLI::App* prb = app.add_subcommand("probe", "latent-structure probes");
  add_common(prb);
  prb->add_option("--ae", ae_path, "frozen autoencoder checkpoint")->required();
  prb->add_option("--data", data_dir, "dataset directory (default: generate from config)");

  CLI::App* vt = app.add_subcommand("verify-theory", "projection-penalty identity sweep");
  vt->add_option("--out", out_dir, "output directory")->required();
  vt->add_option("--instances", instances, "number of random decoders");

  CLI::App* sw = app.add_subcommand("sweep", "ablation sweep over one parameter");
  add_common(sw);
  sw->add_option("--ae", ae_path, "frozen autoencoder checkpoint")->required();
  sw->add_option("--data", data_dir, "dataset directory (default: generate from config)");
  sw->add_option("--param", param, "tau_sigma | w_lpl | gamma_ema")->required();
  sw->add_option("--values", values, "override the default value list");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_or_default(config_path);
    if (gen->parsed()) return cmd_gen_data(cfg, config_path, out_dir);
    if (tae->parsed()) return cmd_train_ae(cfg, config_path, data_dir, out_dir);
    if (tgen->parsed()) return cmd_train_gen(cfg, config_path, ae_path, data_dir, out_dir);
    if (smp->parsed()) return cmd_sample(cfg, config_path, ae_path, ckpt_path, out_dir);
    if (ev->parsed()) return cmd_eval(cfg, config_path, ae_path, real_dir, fake_dir, out_dir);
    if (spec->parsed()) return cmd_spectrum(images_dir, ref_dir, out_dir);
    if (prb->parsed()) return cmd_probe(cfg, config_path, ae_path, data_dir, out_dir);
    if (vt->parsed()) return cmd_verify_theory(out_dir, instances);
    if (sw->parsed()) return cmd_sweep(cfg, config_path, param, values, ae_path, data_dir, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const IngestError& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return 2;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "integrity error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
