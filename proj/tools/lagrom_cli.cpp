// Command-line front end for the Lagrangian model-reduction pipeline.
// Subcommands: simulate, ingest, train, evaluate, spectrum, ringdown, sweep.
// Exit codes: 0 success, 2 configuration/file error, 3 numerical failure.

#include <CLI11.hpp>
#include <iostream>

#include "lagrom/cli.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

lagrom::cli::RunConfig load_config(const std::string& path,
                                   std::uint64_t* seed_override,
                                   const std::string& out_override) {
  lagrom::cli::RunConfig cfg;
  if (!path.empty()) {
    cfg = lagrom::cli::parse_config(path);
  } else {
    lagrom::cli::apply_model_defaults(cfg);
  }
  if (seed_override) {
    cfg.seed = *seed_override;
    cfg.train.seed = *seed_override;
  }
  if (!out_override.empty()) cfg.out = out_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lagrom: nonintrusive structure-preserving Lagrangian ROMs"};
  app.require_subcommand(1);

  std::string config_path, out_dir, rom_kind = "lopinf-spml";
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "JSON run configuration")
      ->each([](const std::string&) {});
  app.add_option("--seed", seed, "random seed override")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "output directory override");

  auto* sim = app.add_subcommand("simulate",
                                 "integrate a benchmark full-order model");

  std::string ingest_csv_path, ingest_out = "snapshot.snap";
  double ingest_fs = 0.0;
  auto* ing = app.add_subcommand("ingest",
                                 "convert a displacement CSV to a snapshot");
  ing->add_option("csv", ingest_csv_path, "K-rows-by-n-columns CSV")
      ->required();
  ing->add_option("--fs", ingest_fs, "sampling frequency in Hz")->required();
  ing->add_option("--snapshot-out", ingest_out, "output snapshot path");

  std::string train_snap;
  auto* trn = app.add_subcommand("train", "learn a reduced model");
  trn->add_option("snapshot", train_snap, "position snapshot file")->required();
  trn->add_option("--rom-kind", rom_kind,
                  "lopinf | lopinf-spml | pod-spml | intrusive");

  std::string eval_archive, eval_snap, eval_vel;
  auto* evl = app.add_subcommand("evaluate",
                                 "simulate an archived ROM against reference "
                                 "data");
  evl->add_option("archive", eval_archive, "ROM archive file")->required();
  evl->add_option("snapshot", eval_snap, "reference position snapshot")
      ->required();
  evl->add_option("--velocities", eval_vel, "reference velocity snapshot");

  std::string spec_snap, spec_out = "spectrum.csv";
  int spec_row = 0;
  bool spec_hann = false;
  auto* spc = app.add_subcommand("spectrum",
                                 "one-sided amplitude spectrum of a snapshot "
                                 "row");
  spc->add_option("snapshot", spec_snap, "snapshot file")->required();
  spc->add_option("--row", spec_row, "coordinate index (0-based)");
  spc->add_option("--csv-out", spec_out, "output CSV path");
  spc->add_flag("--hann", spec_hann, "apply a Hann window");

  std::string ring_csv, ring_out = "ringdown.csv";
  double ring_fs = 0.0;
  int ring_col = 0;
  auto* rng = app.add_subcommand("ringdown",
                                 "peak-based frequency/damping extraction");
  rng->add_option("csv", ring_csv, "signal CSV (one column per channel)")
      ->required();
  rng->add_option("--fs", ring_fs, "sampling frequency in Hz")->required();
  rng->add_option("--column", ring_col, "channel index (0-based)");
  rng->add_option("--csv-out", ring_out, "output CSV path");

  std::string sweep_archive;
  auto* swp = app.add_subcommand("sweep",
                                 "27-point initial-condition generalization "
                                 "study");
  swp->add_option("archive", sweep_archive, "ROM archive file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    auto cfg = load_config(config_path, seed_set ? &seed : nullptr, out_dir);
    if (sim->parsed()) {
      lagrom::cli::cmd_simulate(cfg);
    } else if (ing->parsed()) {
      lagrom::cli::cmd_ingest(ingest_csv_path, ingest_fs, ingest_out);
    } else if (trn->parsed()) {
      lagrom::cli::cmd_train(cfg, train_snap, lagrom::cli::parse_kind(rom_kind));
    } else if (evl->parsed()) {
      auto rep = lagrom::cli::cmd_evaluate(cfg, eval_archive, eval_snap,
                                           eval_vel);
      std::cout << "kind=" << rep.kind << " r=" << rep.r
                << " train=" << rep.train << " val=" << rep.val
                << " test=" << rep.test << "\n";
    } else if (spc->parsed()) {
      lagrom::cli::cmd_spectrum(spec_snap, spec_row, spec_out, spec_hann);
    } else if (rng->parsed()) {
      lagrom::cli::cmd_ringdown(ring_csv, ring_fs, ring_col, ring_out);
    } else if (swp->parsed()) {
      lagrom::cli::cmd_sweep(cfg, sweep_archive);
    }
    return kOk;
  } catch (const lagrom::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const lagrom::io::FileFormatError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  }
}
