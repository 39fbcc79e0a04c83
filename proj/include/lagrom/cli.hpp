#pragma once

// Pipeline orchestration behind the command-line tool: JSON run
// configuration with per-benchmark defaults, and the subcommand
// implementations (simulate, ingest, train, evaluate, spectrum, ringdown,
// sweep). The executable in tools/ is a thin argument-parsing shell around
// these functions.

#include <filesystem>
#include <json.hpp>

#include "lagrom/analyze.hpp"
#include "lagrom/io.hpp"
#include "lagrom/lopinf.hpp"
#include "lagrom/models.hpp"
#include "lagrom/reduce.hpp"
#include "lagrom/rom.hpp"
#include "lagrom/spml.hpp"

namespace lagrom::cli {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------ configuration

struct RunConfig {
  std::string model = "rod";  // rod | membrane | external
  models::RodParams rod;
  models::MembraneParams membrane;

  double dt = 1e-3;
  double T = 16.0;
  int r = 6;
  double train_end = 7.5;
  double val_end = 8.0;
  Vec nu;  // modal-velocity initial condition coefficients

  double lopinf_eps = 1e-8;
  bool conservative = true;  // rod default; membrane flips to false

  spml::Architecture arch;
  spml::TrainConfig train;

  std::uint64_t seed = 0;
  std::string out = ".";
};

namespace detail {

inline void check_keys(const json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + ctx);
  }
}

template <class T>
void maybe(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

inline void maybe_vec(const json& j, const char* key, Vec& dst) {
  if (!j.contains(key)) return;
  std::vector<double> v;
  maybe(j, key, v);
  dst = Eigen::Map<const Vec>(v.data(), long(v.size()));
}

}  // namespace detail

inline void apply_model_defaults(RunConfig& cfg) {
  if (cfg.model == "rod") {
    cfg.dt = 1e-3;
    cfg.T = 16.0;
    cfg.train_end = 7.5;
    cfg.val_end = 8.0;
    cfg.conservative = true;
  } else if (cfg.model == "membrane") {
    cfg.dt = 5e-3;
    cfg.T = 35.0;
    cfg.train_end = 15.0;
    cfg.val_end = 17.5;
    cfg.conservative = false;
  } else if (cfg.model == "external") {
    cfg.conservative = false;
  } else {
    throw ConfigError("model must be rod, membrane, or external");
  }
  cfg.nu.resize(3);
  cfg.nu << 1.0e-1, 2.5e-2, 5.0e-2;
}

inline RunConfig parse_config_json(const json& j) {
  detail::check_keys(j, "config root",
                     {"model", "rod", "membrane", "dt", "T", "r", "train_end",
                      "val_end", "nu", "lopinf", "spml", "train", "seed",
                      "out"});
  RunConfig cfg;
  detail::maybe(j, "model", cfg.model);
  apply_model_defaults(cfg);

  if (j.contains("rod")) {
    const json& r = j.at("rod");
    detail::check_keys(r, "rod", {"n", "mass", "kappa", "rho", "nl_lo", "nl_hi"});
    detail::maybe(r, "n", cfg.rod.n);
    detail::maybe(r, "mass", cfg.rod.mass);
    detail::maybe(r, "kappa", cfg.rod.kappa);
    detail::maybe(r, "rho", cfg.rod.rho);
    detail::maybe(r, "nl_lo", cfg.rod.nl_lo);
    detail::maybe(r, "nl_hi", cfg.rod.nl_hi);
  }
  if (j.contains("membrane")) {
    const json& m = j.at("membrane");
    detail::check_keys(m, "membrane",
                       {"l_x", "l_y", "N_x", "N_y", "damping_ratio", "k_nl",
                        "c_nl", "clamp_all_edges"});
    detail::maybe(m, "l_x", cfg.membrane.l_x);
    detail::maybe(m, "l_y", cfg.membrane.l_y);
    detail::maybe(m, "N_x", cfg.membrane.N_x);
    detail::maybe(m, "N_y", cfg.membrane.N_y);
    detail::maybe(m, "damping_ratio", cfg.membrane.damping_ratio);
    detail::maybe(m, "k_nl", cfg.membrane.k_nl);
    detail::maybe(m, "c_nl", cfg.membrane.c_nl);
    detail::maybe(m, "clamp_all_edges", cfg.membrane.clamp_all_edges);
  }
  detail::maybe(j, "dt", cfg.dt);
  detail::maybe(j, "T", cfg.T);
  detail::maybe(j, "r", cfg.r);
  detail::maybe(j, "train_end", cfg.train_end);
  detail::maybe(j, "val_end", cfg.val_end);
  detail::maybe_vec(j, "nu", cfg.nu);

  if (j.contains("lopinf")) {
    const json& l = j.at("lopinf");
    detail::check_keys(l, "lopinf", {"eps", "conservative"});
    detail::maybe(l, "eps", cfg.lopinf_eps);
    detail::maybe(l, "conservative", cfg.conservative);
  }
  if (j.contains("spml")) {
    const json& s = j.at("spml");
    detail::check_keys(s, "spml",
                       {"hidden", "n_mlps", "degrees", "use_TNN", "use_FNN"});
    detail::maybe(s, "hidden", cfg.arch.hidden);
    detail::maybe(s, "n_mlps", cfg.arch.n_mlps);
    if (s.contains("degrees")) {
      std::vector<int> d;
      detail::maybe(s, "degrees", d);
      cfg.arch.degrees = std::set<int>(d.begin(), d.end());
    }
    detail::maybe(s, "use_TNN", cfg.arch.use_TNN);
    detail::maybe(s, "use_FNN", cfg.arch.use_FNN);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::check_keys(t, "train",
                       {"eta", "beta1", "beta2", "eps", "batch", "epochs",
                        "penalty_weight"});
    detail::maybe(t, "eta", cfg.train.eta);
    detail::maybe(t, "beta1", cfg.train.beta1);
    detail::maybe(t, "beta2", cfg.train.beta2);
    detail::maybe(t, "eps", cfg.train.eps);
    detail::maybe(t, "batch", cfg.train.batch);
    detail::maybe(t, "epochs", cfg.train.epochs);
    detail::maybe(t, "penalty_weight", cfg.train.penalty_weight);
  }
  detail::maybe(j, "seed", cfg.seed);
  detail::maybe(j, "out", cfg.out);
  cfg.train.seed = cfg.seed;

  if (cfg.dt <= 0.0) throw ConfigError("dt must be > 0");
  if (cfg.T < 0.0) throw ConfigError("T must be >= 0");
  if (cfg.r < 1) throw ConfigError("r must be >= 1");
  if (!(cfg.train_end < cfg.val_end))
    throw ConfigError("train_end must be < val_end");
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return parse_config_json(j);
}

// Canonical serialization of the fully resolved configuration; written
// beside every output and hashed into CSV provenance headers.
inline json resolved_config(const RunConfig& cfg) {
  json j;
  j["model"] = cfg.model;
  if (cfg.model == "rod")
    j["rod"] = {{"n", cfg.rod.n},       {"mass", cfg.rod.mass},
                {"kappa", cfg.rod.kappa}, {"rho", cfg.rod.rho},
                {"nl_lo", cfg.rod.nl_lo}, {"nl_hi", cfg.rod.nl_hi}};
  if (cfg.model == "membrane")
    j["membrane"] = {{"l_x", cfg.membrane.l_x},
                     {"l_y", cfg.membrane.l_y},
                     {"N_x", cfg.membrane.N_x},
                     {"N_y", cfg.membrane.N_y},
                     {"damping_ratio", cfg.membrane.damping_ratio},
                     {"k_nl", cfg.membrane.k_nl},
                     {"c_nl", cfg.membrane.c_nl},
                     {"clamp_all_edges", cfg.membrane.clamp_all_edges}};
  j["dt"] = cfg.dt;
  j["T"] = cfg.T;
  j["r"] = cfg.r;
  j["train_end"] = cfg.train_end;
  j["val_end"] = cfg.val_end;
  j["nu"] = std::vector<double>(cfg.nu.data(), cfg.nu.data() + cfg.nu.size());
  j["lopinf"] = {{"eps", cfg.lopinf_eps}, {"conservative", cfg.conservative}};
  j["spml"] = {{"hidden", cfg.arch.hidden},
               {"n_mlps", cfg.arch.n_mlps},
               {"degrees", std::vector<int>(cfg.arch.degrees.begin(),
                                            cfg.arch.degrees.end())},
               {"use_TNN", cfg.arch.use_TNN},
               {"use_FNN", cfg.arch.use_FNN}};
  j["train"] = {{"eta", cfg.train.eta},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"eps", cfg.train.eps},
                {"batch", cfg.train.batch},
                {"epochs", cfg.train.epochs},
                {"penalty_weight", cfg.train.penalty_weight}};
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  return j;
}

// Hash of the scientific content of the configuration; the output
// directory is excluded so relocated runs keep the same identity.
inline std::string config_hash(const RunConfig& cfg) {
  json j = resolved_config(cfg);
  j.erase("out");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(io::fnv1a(j.dump())));
  return buf;
}

namespace detail {

inline models::MechanicalFom build_fom(const RunConfig& cfg) {
  if (cfg.model == "rod") return models::build_rod(cfg.rod);
  if (cfg.model == "membrane") return models::build_membrane(cfg.membrane);
  throw ConfigError("model \"" + cfg.model + "\" has no simulator");
}

inline std::filesystem::path out_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.out);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_resolved_config(const RunConfig& cfg,
                                  const std::filesystem::path& dir) {
  std::ofstream os(dir / "config.json");
  if (!os)
    throw io::FileFormatError("cannot write " + (dir / "config.json").string());
  os << resolved_config(cfg).dump(2) << "\n";
}

// Archives do not store full-order operators; an intrusive ROM read back
// from disk needs the benchmark FOM reattached from the configuration.
inline void reattach_fom(const RunConfig& cfg, rom::LagrangianRom& lrom) {
  if (lrom.kind != rom::Kind::intrusive || lrom.fom) return;
  auto fom = detail::build_fom(cfg);
  lrom.Mhat = lrom.basis.V_r.transpose() * fom.M * lrom.basis.V_r;
  lrom.fom = std::make_shared<models::MechanicalFom>(std::move(fom));
}

}  // namespace detail

// ----------------------------------------------------------------- commands

// Integrates the configured benchmark and writes positions.snap,
// velocities.snap, and the resolved configuration.
inline void cmd_simulate(const RunConfig& cfg) {
  auto fom = detail::build_fom(cfg);
  auto [q0, v0] = models::modal_initial_condition(fom, cfg.nu);
  integrate::NewmarkConfig ncfg;
  ncfg.dt = cfg.dt;
  auto traj = integrate::simulate(models::fom_second_order(fom), ncfg, q0, v0,
                                  cfg.T);
  auto dir = detail::out_dir(cfg);
  io::write_snapshot((dir / "positions.snap").string(), {cfg.dt, traj.Q});
  io::write_snapshot((dir / "velocities.snap").string(), {cfg.dt, traj.V});
  detail::write_resolved_config(cfg, dir);
}

// CSV displacement history (K rows x n columns at sampling rate fs) to a
// binary snapshot file.
inline void cmd_ingest(const std::string& csv_path, double fs,
                       const std::string& out_path) {
  io::write_snapshot(out_path, io::ingest_csv(csv_path, fs));
}

struct TrainOutput {
  rom::LagrangianRom rom;
  spml::TrainResult result;  // histories empty for untrained kinds
  reduce::ReducedDataset data;
};

// Full learning pipeline: POD basis, projection, finite-difference
// derivatives, time split, linear operator inference, and (for the learned
// kinds) network training.
inline TrainOutput train_pipeline(const RunConfig& cfg, const io::Snapshot& snap,
                                  rom::Kind kind) {
  TrainOutput out;
  out.rom.kind = kind;
  out.rom.basis = reduce::pod_basis(snap.Q, cfg.r);
  Mat Qhat = reduce::project(out.rom.basis, snap.Q);
  out.data = reduce::split_dataset(Qhat, snap.dt, cfg.train_end, cfg.val_end);

  switch (kind) {
    case rom::Kind::lopinf:
    case rom::Kind::lopinf_spml:
      out.rom.lin =
          lopinf::infer_linear(out.data, cfg.conservative, cfg.lopinf_eps);
      break;
    case rom::Kind::pod_spml:
      // no inferred linear prior: training starts from the zero model
      out.rom.lin.r = cfg.r;
      out.rom.lin.K = Mat::Zero(cfg.r, cfg.r);
      if (!cfg.conservative) out.rom.lin.C = Mat::Zero(cfg.r, cfg.r);
      break;
    case rom::Kind::intrusive: {
      out.rom = rom::intrusive_project(detail::build_fom(cfg), out.rom.basis);
      return out;
    }
  }

  if (kind == rom::Kind::lopinf_spml || kind == rom::Kind::pod_spml) {
    out.result = spml::train(out.data, out.rom.lin, cfg.arch, cfg.train);
    out.rom.model = out.result.model;
    out.rom.has_model = true;
  }
  return out;
}

inline void cmd_train(const RunConfig& cfg, const std::string& snapshot_path,
                      rom::Kind kind) {
  auto snap = io::read_snapshot(snapshot_path);
  auto out = train_pipeline(cfg, snap, kind);
  auto dir = detail::out_dir(cfg);

  io::ModelArch arch;
  arch.hidden = cfg.arch.hidden;
  arch.n_mlps = cfg.arch.n_mlps;
  arch.degrees.assign(cfg.arch.degrees.begin(), cfg.arch.degrees.end());
  arch.use_TNN = cfg.arch.use_TNN;
  arch.use_FNN = cfg.arch.use_FNN;

  io::RomArchiveMeta meta;
  meta.seed = cfg.seed;
  meta.config_hash = config_hash(cfg);
  if (out.rom.has_model)
    meta.note = "params=" + std::to_string(out.rom.model.param_count());
  io::write_rom((dir / "rom.bin").string(), out.rom, arch, meta);

  if (!out.result.train_history.empty()) {
    const long E = long(out.result.train_history.size());
    Mat hist(E, 3);
    for (long e = 0; e < E; ++e) {
      hist(e, 0) = double(e);
      hist(e, 1) = out.result.train_history[std::size_t(e)];
      hist(e, 2) = out.result.val_history[std::size_t(e)];
    }
    io::CsvMeta cmeta{meta.config_hash, cfg.seed,
                      "best_epoch " + std::to_string(out.result.best_epoch)};
    io::write_csv((dir / "loss_history.csv").string(),
                  {"epoch", "train_loss", "val_loss"}, hist, cmeta);
  }
  detail::write_resolved_config(cfg, dir);
}

// Simulates the archived ROM from the reference initial condition and
// reports train/val/test relative state errors plus energy and spectra.
//
// When no velocity snapshot is given, the comparison starts at the first
// column with a valid finite-difference stencil and the reduced initial
// velocity is taken from the stencil there.
inline analyze::ErrorReport cmd_evaluate(const RunConfig& cfg,
                                         const std::string& archive_path,
                                         const std::string& snapshot_path,
                                         const std::string& velocity_path = "") {
  auto ar = io::read_rom(archive_path);
  detail::reattach_fom(cfg, ar.rom);
  auto snap = io::read_snapshot(snapshot_path);
  if (snap.Q.rows() != ar.rom.basis.V_r.rows())
    throw DimensionMismatch("evaluate: snapshot/basis dimension mismatch");

  const double dt = snap.dt;
  Mat Qhat_ref = reduce::project(ar.rom.basis, snap.Q);
  int k0 = 0;
  Vec v0hat;
  Mat Q_ref;
  if (!velocity_path.empty()) {
    auto vel = io::read_snapshot(velocity_path);
    if (vel.Q.rows() != snap.Q.rows() || vel.Q.cols() != snap.Q.cols())
      throw DimensionMismatch("evaluate: velocity snapshot mismatch");
    v0hat = ar.rom.basis.V_r.transpose() * vel.Q.col(0);
    Q_ref = snap.Q;
  } else {
    auto fd = reduce::fd_derivatives(Qhat_ref, dt);
    k0 = 4;
    v0hat = fd.Qdot.col(k0);
    Q_ref = snap.Q.rightCols(snap.Q.cols() - k0);
  }
  const double T = double(Q_ref.cols() - 1) * dt;

  integrate::NewmarkConfig ncfg;
  ncfg.dt = dt;
  auto traj = rom::simulate_rom(ar.rom, Qhat_ref.col(k0), v0hat, ncfg, T);

  auto err_on = [&](double t_lo, double t_hi) -> double {
    const int lo = std::max(0, int(std::ceil(t_lo / dt)) - k0);
    const int hi = std::min<int>(int(Q_ref.cols()),
                                 int(std::floor(t_hi / dt)) + 1 - k0);
    if (hi <= lo) return -1.0;
    return analyze::relative_state_error(Q_ref.middleCols(lo, hi - lo),
                                         ar.rom.basis,
                                         traj.Q.middleCols(lo, hi - lo));
  };
  analyze::ErrorReport rep;
  rep.r = ar.rom.r();
  rep.kind = rom::kind_name(ar.rom.kind);
  rep.seed = ar.meta.seed;
  rep.train = err_on(0.0, cfg.train_end);
  rep.val = err_on(cfg.train_end, cfg.val_end);
  rep.test = err_on(cfg.val_end, T + double(k0) * dt);

  auto dir = detail::out_dir(cfg);
  io::CsvMeta cmeta{ar.meta.config_hash, ar.meta.seed, ""};
  {
    Mat row(1, 3);
    row << rep.train, rep.val, rep.test;
    io::write_csv((dir / "error_report.csv").string(),
                  {"train_error", "val_error", "test_error"}, row, cmeta);
  }
  {
    auto sys = rom::as_second_order(ar.rom);
    Vec eerr = analyze::energy_error_series(sys, traj);
    Mat em(traj.steps(), 3);
    for (int k = 0; k < traj.steps(); ++k) {
      em(k, 0) = double(k0 + k) * dt;
      em(k, 1) = sys.energy(traj.Q.col(k), traj.V.col(k));
      em(k, 2) = eerr(k);
    }
    io::write_csv((dir / "energy.csv").string(),
                  {"time", "energy", "energy_error"}, em, cmeta);
  }
  {
    // spectra of the first physical coordinate over the test window
    const int lo = std::max(0, int(std::ceil(cfg.val_end / dt)) - k0);
    const int count = int(Q_ref.cols()) - lo;
    if (count >= 16) {
      Vec fom_sig = Q_ref.row(0).segment(lo, count).transpose();
      Vec rom_sig =
          (ar.rom.basis.V_r.row(0) * traj.Q.middleCols(lo, count)).transpose();
      auto sp_f = analyze::amplitude_spectrum(fom_sig, 1.0 / dt);
      auto sp_r = analyze::amplitude_spectrum(rom_sig, 1.0 / dt);
      Mat sm(sp_f.frequency.size(), 3);
      sm.col(0) = sp_f.frequency;
      sm.col(1) = sp_f.amplitude;
      sm.col(2) = sp_r.amplitude;
      io::write_csv((dir / "spectrum.csv").string(),
                    {"frequency", "reference_amplitude", "rom_amplitude"}, sm,
                    cmeta);
    }
  }
  return rep;
}

inline void cmd_spectrum(const std::string& snapshot_path, int row,
                         const std::string& out_path, bool hann = false) {
  auto snap = io::read_snapshot(snapshot_path);
  if (row < 0 || row >= snap.Q.rows())
    throw ConfigError("spectrum: row index out of range");
  auto sp = analyze::amplitude_spectrum(snap.Q.row(row).transpose(),
                                        1.0 / snap.dt, hann);
  Mat m(sp.frequency.size(), 2);
  m.col(0) = sp.frequency;
  m.col(1) = sp.amplitude;
  io::write_csv(out_path, {"frequency", "amplitude"}, m, {});
}

inline void cmd_ringdown(const std::string& csv_path, double fs, int column,
                         const std::string& out_path) {
  Mat data = io::read_csv_matrix(csv_path);
  if (column < 0 || column >= data.cols())
    throw ConfigError("ringdown: column index out of range");
  auto curve = analyze::ringdown_analysis(data.col(column), fs);
  const long P = long(curve.time.size());
  Mat m(P, 4);
  for (long i = 0; i < P; ++i) {
    m(i, 0) = curve.time[std::size_t(i)];
    m(i, 1) = curve.amplitude[std::size_t(i)];
    m(i, 2) = curve.frequency[std::size_t(i)];
    m(i, 3) = curve.damping[std::size_t(i)];
  }
  io::write_csv(out_path, {"time", "amplitude", "frequency", "damping_ratio"},
                m, {});
}

// 27-point initial-condition generalization study of an archived ROM
// against the configured full-order benchmark.
inline void cmd_sweep(const RunConfig& cfg, const std::string& archive_path) {
  auto ar = io::read_rom(archive_path);
  detail::reattach_fom(cfg, ar.rom);
  auto fom = detail::build_fom(cfg);
  integrate::NewmarkConfig ncfg;
  ncfg.dt = cfg.dt;
  auto cells = analyze::generalization_sweep(fom, ar.rom,
                                             analyze::default_ic_grid(), ncfg,
                                             cfg.T);
  Mat m(long(cells.size()), 5);
  for (long i = 0; i < long(cells.size()); ++i) {
    const auto& c = cells[std::size_t(i)];
    m(i, 0) = c.nu(0);
    m(i, 1) = c.nu(1);
    m(i, 2) = c.nu(2);
    m(i, 3) = c.ok ? 1.0 : 0.0;
    m(i, 4) = c.error;
  }
  auto dir = detail::out_dir(cfg);
  io::CsvMeta cmeta{ar.meta.config_hash, ar.meta.seed, ""};
  io::write_csv((dir / "sweep.csv").string(),
                {"nu1", "nu2", "nu3", "ok", "relative_error"}, m, cmeta);
}

inline rom::Kind parse_kind(const std::string& s) {
  if (s == "lopinf") return rom::Kind::lopinf;
  if (s == "lopinf-spml") return rom::Kind::lopinf_spml;
  if (s == "pod-spml") return rom::Kind::pod_spml;
  if (s == "intrusive") return rom::Kind::intrusive;
  throw ConfigError("unknown ROM kind: " + s);
}

}  // namespace lagrom::cli
