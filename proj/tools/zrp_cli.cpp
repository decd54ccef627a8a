// Command-line front end: experiment configuration, replica orchestration,
// and plot-ready CSV/JSON artifact emission for the particle simulator, the
// SPDE reference integrators, and the structural analyses.

#include "zrp/config.hpp"
#include "zrp/coupling.hpp"
#include "zrp/frame.hpp"
#include "zrp/spde.hpp"
#include "zrp/stats.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace zrp;
using nlohmann::json;

namespace {

// ---- shared plumbing ----

struct Options {
  std::string config_path;
  std::string out_flag;
  std::vector<std::string> estimators;  // compare
  double tol_se = 4.0;                  // compare
  std::string dir_a, dir_b;             // compare
};

ExperimentConfig load(const Options& opt) {
  if (opt.config_path.empty()) throw DomainError("a config file is required (-c FILE)");
  return load_config(opt.config_path);
}

std::string run_dir(const ExperimentConfig& cfg, const Options& opt) {
  const std::string dir = opt.out_flag.empty() ? env_out(cfg.out_dir) : opt.out_flag;
  std::filesystem::create_directories(dir);
  return dir;
}

void require(std::vector<std::string>& errors, bool ok, const std::string& what) {
  if (!ok) errors.push_back(what);
}

void finish(std::vector<std::string>& errors) {
  if (errors.empty()) return;
  std::string msg = "invalid configuration:";
  for (const std::string& e : errors) msg += "\n  " + e;
  throw DomainError(msg);
}

void check_sim(const ExperimentConfig& cfg, std::vector<std::string>& errors) {
  try {
    cfg.sim.validate();
  } catch (const DomainError& e) {
    errors.push_back(e.what());
  }
  for (int k : cfg.modes)
    require(errors, 2 * k < cfg.sim.N, "fields.modes: need 0 < 2k < N for wavenumber " +
                                           std::to_string(k));
}

json to_json(const Vec& v) {
  json out = json::array();
  for (long i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json to_json(const Mat& m) {
  json out = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

ArtifactInfo write_json(const std::string& dir, const std::string& name, const json& j) {
  const std::string path = dir + "/" + name;
  std::string text = j.dump(2);
  text += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write '" + path + "'");
  out << text;
  long rows = 0;
  for (char ch : text)
    if (ch == '\n') ++rows;
  return {name, rows, fnv64(text)};
}

// Common-speed certificate gate for moving-frame and gamma = 1/2 runs.
FrameCertificate frame_gate(const ExperimentConfig& cfg, const Ensemble& ens) {
  const FrameCertificate cert = check_frame(ens, 1e-7);
  const bool need = cfg.sim.gamma == 0.5 || cfg.traveling;
  if (need && !cert.holds) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "common-speed condition fails at the configured density "
                  "(off-diagonal residual %.3e, ratio residual %.3e)",
                  cert.offdiag_residual, cert.ratio_residual);
    throw DomainError(buf);
  }
  return cert;
}

// ---- subcommands ----

int cmd_simulate(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  std::vector<std::string> errors;
  check_sim(cfg, errors);
  for (double e : cfg.eps)
    require(errors, e * cfg.sim.N >= 2.0, "fields.eps: width below the lattice floor 2/N");
  finish(errors);

  const RateFamily fam = cfg.family.build();
  const Ensemble ens = make_ensemble(cfg);
  const FrameCertificate cert = frame_gate(cfg, ens);

  FieldSetup setup;
  setup.modes = cfg.modes;
  setup.a0 = ens.density();
  setup.gtilde = ens.mean_rate();
  setup.grad_gtilde = ens.grad_mean_rate();
  setup.c = cfg.sim.c;
  setup.gamma = cfg.sim.gamma;
  setup.lambda = cert.holds ? cert.lambda : 0.0;
  setup.traveling = cfg.traveling;

  // The quadratic-functional ladder needs the rate Hessians of the tensor.
  std::vector<Mat> hess;
  std::vector<TestFunction> H;
  if (!cfg.eps.empty()) {
    hess = build_tensor(ens, cfg.sim.c).gamma_raw;
    for (int k : cfg.modes) H.push_back(TestFunction::fourier(cfg.sim.N, k, false));
  }

  struct MollRow {
    double t, eps;
    int mode, species;
    double value;
  };
  struct Snapshot : Observer {
    const ExperimentConfig* cfg;
    const FieldSetup* setup;
    const std::vector<Mat>* hess;
    const std::vector<TestFunction>* H;
    std::vector<MollRow> rows;
    void record(double t, const Lattice& lat) override {
      if (cfg->eps.empty()) return;
      const double shift = setup->traveling ? traveling_shift(setup->c, setup->lambda, t,
                                                              cfg->sim.N, setup->gamma)
                                            : 0.0;
      for (size_t m = 0; m < H->size(); ++m)
        for (double eps : cfg->eps) {
          const Vec v = mollified_quadratic(lat, (*H)[m], setup->a0, *hess, eps, shift);
          for (int i = 0; i < v.size(); ++i)
            rows.push_back({t, eps, cfg->modes[m], static_cast<int>(i), v[i]});
        }
    }
  };

  std::vector<FieldSeries> series(static_cast<size_t>(cfg.replicas));
  std::vector<std::vector<MollRow>> moll(static_cast<size_t>(cfg.replicas));
  run_replicas(cfg.replicas, env_workers(), [&](int rep) {
    Rng rng(cfg.sim.seed, static_cast<uint64_t>(rep));
    Lattice lat = Lattice::stationary(fam, cfg.sim.N, ens, rng);
    FieldAccumulator acc(setup, lat);
    Snapshot snap;
    snap.cfg = &cfg;
    snap.setup = &setup;
    snap.hess = &hess;
    snap.H = &H;
    const RunReport rr = lat.run(cfg.sim, rng, {&acc, &snap});
    if (rr.early_stop) throw NumericalError("replica stopped early: " + rr.reason);
    series[static_cast<size_t>(rep)] = acc.series();
    moll[static_cast<size_t>(rep)] = std::move(snap.rows);
  });

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;

  CsvWriter fields_csv(dir + "/fields.csv",
                       {"replica", "time", "mode", "species", "y_re", "y_im", "lap_re", "lap_im",
                        "grad_re", "grad_im", "frame_re", "frame_im", "mart_re", "mart_im",
                        "qv_cos", "qv_sin", "rqv_cos", "rqv_sin"});
  for (int rep = 0; rep < cfg.replicas; ++rep) {
    const FieldSeries& fs = series[static_cast<size_t>(rep)];
    for (size_t m = 0; m < fs.modes.size(); ++m)
      for (int i = 0; i < fs.n; ++i)
        for (size_t r = 0; r < fs.times.size(); ++r) {
          const auto mart = fs.mart(static_cast<int>(m), i, r);
          fields_csv.row({CsvWriter::num(static_cast<long>(rep)), CsvWriter::num(fs.times[r]),
                          CsvWriter::num(static_cast<long>(fs.modes[m])),
                          CsvWriter::num(static_cast<long>(i)),
                          CsvWriter::num(fs.y[m][static_cast<size_t>(i)][r].real()),
                          CsvWriter::num(fs.y[m][static_cast<size_t>(i)][r].imag()),
                          CsvWriter::num(fs.lap[m][static_cast<size_t>(i)][r].real()),
                          CsvWriter::num(fs.lap[m][static_cast<size_t>(i)][r].imag()),
                          CsvWriter::num(fs.grad[m][static_cast<size_t>(i)][r].real()),
                          CsvWriter::num(fs.grad[m][static_cast<size_t>(i)][r].imag()),
                          CsvWriter::num(fs.frame[m][static_cast<size_t>(i)][r].real()),
                          CsvWriter::num(fs.frame[m][static_cast<size_t>(i)][r].imag()),
                          CsvWriter::num(mart.real()), CsvWriter::num(mart.imag()),
                          CsvWriter::num(fs.qv_cos[m][static_cast<size_t>(i)][r]),
                          CsvWriter::num(fs.qv_sin[m][static_cast<size_t>(i)][r]),
                          CsvWriter::num(fs.rqv_cos[m][static_cast<size_t>(i)][r]),
                          CsvWriter::num(fs.rqv_sin[m][static_cast<size_t>(i)][r])});
        }
  }
  fields_csv.close();
  artifacts.push_back(artifact_of(fields_csv));

  if (!cfg.eps.empty()) {
    CsvWriter moll_csv(dir + "/mollified.csv",
                       {"replica", "time", "eps", "mode", "species", "value"});
    for (int rep = 0; rep < cfg.replicas; ++rep)
      for (const MollRow& row : moll[static_cast<size_t>(rep)])
        moll_csv.row({CsvWriter::num(static_cast<long>(rep)), CsvWriter::num(row.t),
                      CsvWriter::num(row.eps), CsvWriter::num(static_cast<long>(row.mode)),
                      CsvWriter::num(static_cast<long>(row.species)), CsvWriter::num(row.value)});
    moll_csv.close();
    artifacts.push_back(artifact_of(moll_csv));
  }

  std::vector<ModeReadout> readouts;
  readouts.reserve(series.size());
  for (const FieldSeries& fs : series) readouts.push_back(readout_of(fs));
  artifacts.push_back(write_summary(dir, summarize(readouts)));

  write_manifest(dir, "simulate", cfg, artifacts);
  std::cout << "simulate: " << cfg.replicas << " replicas -> " << dir << " (config "
            << config_hash(cfg) << ")\n";
  return 0;
}

int cmd_ensemble(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const Ensemble ens = make_ensemble(cfg);

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;

  std::vector<std::string> header;
  for (int i = 0; i < ens.n_species(); ++i) header.push_back("k" + std::to_string(i));
  header.push_back("weight");
  header.push_back("prob");
  CsvWriter csv(dir + "/ensemble.csv", header);
  for (size_t s = 0; s < ens.states().size(); ++s) {
    std::vector<std::string> cells;
    for (int i = 0; i < ens.n_species(); ++i)
      cells.push_back(CsvWriter::num(static_cast<long>(ens.states()[s][static_cast<size_t>(i)])));
    cells.push_back(CsvWriter::num(ens.weights()[s]));
    cells.push_back(CsvWriter::num(ens.weights()[s] / ens.partition()));
    csv.row(cells);
  }
  csv.close();
  artifacts.push_back(artifact_of(csv));

  json j;
  j["density"] = to_json(ens.density());
  j["fugacity"] = to_json(ens.fugacity());
  j["partition"] = ens.partition();
  j["covariance"] = to_json(ens.covariance());
  j["mean_rate"] = to_json(ens.mean_rate());
  j["grad_mean_rate"] = to_json(ens.grad_mean_rate());
  j["cap"] = ens.cap();
  j["tail_fraction"] = ens.tail_fraction();
  artifacts.push_back(write_json(dir, "ensemble.json", j));

  write_manifest(dir, "ensemble dump", cfg, artifacts);
  std::cout << "ensemble: " << ens.states().size() << " states -> " << dir << "\n";
  return 0;
}

int cmd_frame(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const RateFamily fam = cfg.family.build();
  const Vec a_init = make_ensemble(cfg).density();
  const FrameCertificate cert = solve_frame(fam, a_init);

  const std::string dir = run_dir(cfg, opt);
  json j;
  j["a0"] = to_json(cert.a0);
  j["lambda"] = cert.lambda;
  j["offdiag_residual"] = cert.offdiag_residual;
  j["ratio_residual"] = cert.ratio_residual;
  j["holds"] = cert.holds;
  j["manifold"] = cert.manifold;
  const ArtifactInfo art = write_json(dir, "frame.json", j);
  write_manifest(dir, "frame solve", cfg, {art});
  std::cout << "frame: lambda=" << CsvWriter::num(cert.lambda)
            << (cert.holds ? " (holds)" : " (violated)") << " -> " << dir << "\n";
  return 0;
}

CouplingTensor tensor_of(const ExperimentConfig& cfg, const Ensemble& ens) {
  return build_tensor(ens, cfg.sim.c);
}

int cmd_coupling(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const Ensemble ens = make_ensemble(cfg);
  const CouplingTensor t = tensor_of(cfg, ens);

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;
  CsvWriter csv(dir + "/coupling.csv", {"i", "j", "l", "raw", "norm"});
  for (int i = 0; i < t.n; ++i)
    for (int j = 0; j < t.n; ++j)
      for (int l = 0; l < t.n; ++l)
        csv.row({CsvWriter::num(static_cast<long>(i)), CsvWriter::num(static_cast<long>(j)),
                 CsvWriter::num(static_cast<long>(l)),
                 CsvWriter::num(t.gamma_raw[static_cast<size_t>(i)](j, l)),
                 CsvWriter::num(t.gamma_norm[static_cast<size_t>(i)](j, l))});
  csv.close();
  artifacts.push_back(artifact_of(csv));

  json j;
  j["lambda"] = t.lambda;
  j["c"] = t.c;
  j["a0"] = to_json(t.a0);
  j["q"] = to_json(t.q);
  j["trilinear_residual"] = trilinear_residual(t);
  artifacts.push_back(write_json(dir, "coupling.json", j));

  write_manifest(dir, "coupling build", cfg, artifacts);
  std::cout << "coupling: trilinear residual " << CsvWriter::num(trilinear_residual(t)) << " -> "
            << dir << "\n";
  return 0;
}

int cmd_decouple(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const Ensemble ens = make_ensemble(cfg);
  const CouplingTensor t = tensor_of(cfg, ens);
  const DecoupleScan scan = decouple_scan(t, cfg.decouple_grid);

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;
  CsvWriter csv(dir + "/decouple.csv", {"psi", "F", "G"});
  for (long i = 0; i < scan.psi.size(); ++i)
    csv.row({CsvWriter::num(scan.psi[i]), CsvWriter::num(scan.F[i]), CsvWriter::num(scan.G[i])});
  csv.close();
  artifacts.push_back(artifact_of(csv));

  json j;
  j["classification"] = scan.classification;
  j["min_max_margin"] = scan.min_max_margin;
  j["margin_psi"] = scan.margin_psi;
  j["partially_decoupleable"] = scan.partially_decoupleable;
  j["fully_decoupleable"] = scan.fully_decoupleable;
  j["f_zeros"] = scan.f_zeros;
  artifacts.push_back(write_json(dir, "decouple.json", j));

  write_manifest(dir, "decouple scan", cfg, artifacts);
  std::cout << "decouple: " << scan.classification << ", margin "
            << CsvWriter::num(scan.min_max_margin) << " -> " << dir << "\n";
  return 0;
}

int cmd_spde(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  std::vector<std::string> errors;
  require(errors, cfg.sim.T > 0, "sim.T: positive horizon required");
  require(errors, !cfg.sim.record_times.empty(), "sim.records: at least one record required");
  require(errors, cfg.sim.gamma == 1.0 || cfg.sim.gamma == 0.5,
          "sim.gamma: the reference integrators cover gamma 1 and 1/2");
  for (int k : cfg.modes)
    require(errors, k <= cfg.spde_modes, "fields.modes: tracked mode beyond the spectral cutoff");
  finish(errors);

  const Ensemble ens = make_ensemble(cfg);
  const bool quadratic = cfg.sim.gamma == 0.5;
  CouplingTensor tensor;
  if (quadratic) tensor = tensor_of(cfg, ens);
  const double eps = cfg.spde_eps > 0 ? cfg.spde_eps : 8.0 / cfg.spde_modes;

  struct Snap {
    std::vector<double> times;
    std::vector<Eigen::MatrixXcd> coeff;
  };
  std::vector<Snap> snaps(static_cast<size_t>(cfg.replicas));
  run_replicas(cfg.replicas, env_workers(), [&](int rep) {
    Rng rng(cfg.sim.seed, static_cast<uint64_t>(rep));
    SpectralState s = make_spectral_state(ens, cfg.sim.c, cfg.spde_modes, cfg.spde_dt);
    sample_white_noise(s, rng);
    Snap& snap = snaps[static_cast<size_t>(rep)];
    for (double t : cfg.sim.record_times) {
      if (quadratic) {
        while (s.time < t - 1e-12)
          burgers_step(s, tensor, eps, std::min(cfg.spde_dt, t - s.time), &rng);
      } else if (t > s.time) {
        ou_exact_step(s, t - s.time, &rng);
      }
      snap.times.push_back(t);
      snap.coeff.push_back(s.coeff);
    }
  });

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;
  CsvWriter csv(dir + "/spde.csv", {"replica", "time", "mode", "species", "re", "im"});
  std::vector<ModeReadout> readouts(static_cast<size_t>(cfg.replicas));
  for (int rep = 0; rep < cfg.replicas; ++rep) {
    const Snap& snap = snaps[static_cast<size_t>(rep)];
    ModeReadout& ro = readouts[static_cast<size_t>(rep)];
    ro.times = snap.times;
    ro.modes = cfg.modes;
    ro.y.assign(cfg.modes.size(),
                std::vector<std::vector<std::complex<double>>>(
                    static_cast<size_t>(ens.n_species()),
                    std::vector<std::complex<double>>(snap.times.size())));
    for (size_t r = 0; r < snap.times.size(); ++r)
      for (size_t m = 0; m < cfg.modes.size(); ++m)
        for (int i = 0; i < ens.n_species(); ++i) {
          const std::complex<double> v = snap.coeff[r](i, cfg.modes[m]);
          ro.y[m][static_cast<size_t>(i)][r] = v;
          csv.row({CsvWriter::num(static_cast<long>(rep)), CsvWriter::num(snap.times[r]),
                   CsvWriter::num(static_cast<long>(cfg.modes[m])),
                   CsvWriter::num(static_cast<long>(i)), CsvWriter::num(v.real()),
                   CsvWriter::num(v.imag())});
        }
  }
  csv.close();
  artifacts.push_back(artifact_of(csv));
  artifacts.push_back(write_summary(dir, summarize(readouts)));

  write_manifest(dir, "spde run", cfg, artifacts);
  std::cout << "spde: " << (quadratic ? "quadratic" : "linear") << " reference, " << cfg.replicas
            << " replicas -> " << dir << "\n";
  return 0;
}

int cmd_fields(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  std::vector<std::string> errors;
  require(errors, cfg.sim.N >= 4, "sim.N: lattice too small for the mode tables");
  for (int k : cfg.modes)
    require(errors, 2 * k < cfg.sim.N, "fields.modes: need 0 < 2k < N for wavenumber " +
                                           std::to_string(k));
  for (double e : cfg.eps)
    require(errors, e * cfg.sim.N >= 2.0, "fields.eps: width below the lattice floor 2/N");
  finish(errors);

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;
  json j;

  CsvWriter csv(dir + "/functions.csv", {"mode", "kind", "x", "value", "grad_n", "lap_n"});
  for (int k : cfg.modes)
    for (int sine = 0; sine < 2; ++sine) {
      const TestFunction H = TestFunction::fourier(cfg.sim.N, k, sine == 1);
      for (int x = 0; x < cfg.sim.N; ++x)
        csv.row({CsvWriter::num(static_cast<long>(k)), sine ? "sin" : "cos",
                 CsvWriter::num(static_cast<long>(x)), CsvWriter::num(H(x)),
                 CsvWriter::num(H.grad_n[static_cast<size_t>(x)]),
                 CsvWriter::num(H.lap_n[static_cast<size_t>(x)])});
      j["fourier"][std::to_string(k)][sine ? "sin" : "cos"] = {{"l2", H.l2()},
                                                               {"grad_l2", H.grad_l2()}};
    }
  csv.close();
  artifacts.push_back(artifact_of(csv));

  if (!cfg.eps.empty()) {
    CsvWriter moll(dir + "/mollifier.csv", {"eps", "x", "value", "grad_n", "lap_n"});
    for (double eps : cfg.eps) {
      const TestFunction G = TestFunction::mollifier(cfg.sim.N, eps);
      double mass = 0;
      for (int x = 0; x < cfg.sim.N; ++x) {
        mass += G(x) / cfg.sim.N;
        moll.row({CsvWriter::num(eps), CsvWriter::num(static_cast<long>(x)),
                  CsvWriter::num(G(x)), CsvWriter::num(G.grad_n[static_cast<size_t>(x)]),
                  CsvWriter::num(G.lap_n[static_cast<size_t>(x)])});
      }
      j["mollifier"][CsvWriter::num(eps)] = {{"l2", G.l2()}, {"mass", mass}};
    }
    moll.close();
    artifacts.push_back(artifact_of(moll));
  }

  artifacts.push_back(write_json(dir, "fields.json", j));
  write_manifest(dir, "fields", cfg, artifacts);
  std::cout << "fields: " << cfg.modes.size() << " modes -> " << dir << "\n";
  return 0;
}

SiteObservable diag_observable(const RateFamily& fam, const Ensemble& ens, int species,
                               bool linearized) {
  const double gbar = ens.mean_rate()[species];
  const Vec grad = ens.grad_mean_rate().row(species);
  const Vec a0 = ens.density();
  return SiteObservable{[fam, species, gbar, grad, a0, linearized](const int32_t* k) {
    double v = (k[species] > 0 ? fam.rate(species, k) : 0.0) - gbar;
    if (linearized)
      for (int j = 0; j < a0.size(); ++j) v -= grad[j] * (k[j] - a0[j]);
    return v;
  }};
}

int cmd_eoe(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  const RateFamily fam = cfg.family.build();
  const Ensemble ens = make_ensemble(cfg);
  Rng rng(cfg.sim.seed, 0);
  const auto out = eoe_check(fam, ens.density(), diag_observable(fam, ens, cfg.diag_species, false),
                             cfg.eoe_ells, cfg.eoe_samples, rng);

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;
  CsvWriter csv(dir + "/eoe.csv",
                {"ell", "m", "exact", "bins", "low_bins", "covered", "l4_first", "l4_second"});
  std::vector<double> ells, first, second;
  for (const EnsembleComparison& cmp : out) {
    csv.row({CsvWriter::num(static_cast<long>(cmp.ell)), CsvWriter::num(static_cast<long>(cmp.m)),
             cmp.exact ? "1" : "0", CsvWriter::num(cmp.bins), CsvWriter::num(cmp.low_bins),
             CsvWriter::num(cmp.covered), CsvWriter::num(cmp.l4_first),
             CsvWriter::num(cmp.l4_second)});
    ells.push_back(cmp.ell);
    first.push_back(cmp.l4_first);
    second.push_back(cmp.l4_second);
  }
  csv.close();
  artifacts.push_back(artifact_of(csv));

  json j;
  if (ells.size() >= 2) {
    j["slope_first"] = fit_loglog_slope(ells, first);
    j["slope_second"] = fit_loglog_slope(ells, second);
  }
  artifacts.push_back(write_json(dir, "eoe.json", j));
  write_manifest(dir, "diagnose eoe", cfg, artifacts);
  if (ells.size() >= 2)
    std::cout << "eoe: slopes " << CsvWriter::num(fit_loglog_slope(ells, first)) << " / "
              << CsvWriter::num(fit_loglog_slope(ells, second)) << " -> " << dir << "\n";
  return 0;
}

int cmd_bg(const Options& opt) {
  const ExperimentConfig cfg = load(opt);
  std::vector<std::string> errors;
  check_sim(cfg, errors);
  require(errors, cfg.bg_mode * 2 < cfg.sim.N, "bg.mode: need 0 < 2k < N");
  finish(errors);

  const RateFamily fam = cfg.family.build();
  const Ensemble ens = make_ensemble(cfg);
  const TestFunction H = TestFunction::fourier(cfg.sim.N, cfg.bg_mode, false);
  const auto out = bg_diagnostic(fam, ens.density(),
                                 diag_observable(fam, ens, cfg.diag_species, true), H.grad_n,
                                 cfg.sim, cfg.bg_ells, cfg.bg_replicas, cfg.sim.seed);

  const std::string dir = run_dir(cfg, opt);
  std::vector<ArtifactInfo> artifacts;
  CsvWriter csv(dir + "/bg.csv", {"ell", "estimate", "se", "term_grad", "term_block"});
  int best = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    const BgEstimate& e = out[i];
    csv.row({CsvWriter::num(static_cast<long>(e.ell)), CsvWriter::num(e.estimate),
             CsvWriter::num(e.se), CsvWriter::num(e.term_grad), CsvWriter::num(e.term_block)});
    if (e.estimate < out[static_cast<size_t>(best)].estimate) best = static_cast<int>(i);
  }
  csv.close();
  artifacts.push_back(artifact_of(csv));

  json j;
  j["best_ell"] = out[static_cast<size_t>(best)].ell;
  j["best_estimate"] = out[static_cast<size_t>(best)].estimate;
  artifacts.push_back(write_json(dir, "bg.json", j));
  write_manifest(dir, "diagnose bg", cfg, artifacts);
  std::cout << "bg: best ell " << out[static_cast<size_t>(best)].ell << " -> " << dir << "\n";
  return 0;
}

int cmd_compare(const Options& opt) {
  const CompareReport report = compare_runs(opt.dir_a, opt.dir_b, opt.estimators, opt.tol_se);
  for (const CompareLine& line : report.lines)
    std::cout << (line.pass ? "[PASS] " : "[FAIL] ") << line.key << " a="
              << CsvWriter::num(line.a) << " b=" << CsvWriter::num(line.b)
              << " dev=" << CsvWriter::num(line.dev) << " se=" << CsvWriter::num(line.se) << "\n";
  std::cout << "compare: " << report.checked - report.failed << "/" << report.checked
            << " within tolerance\n";
  return report.failed == 0 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-species zero-range simulator and SPDE reference toolkit"};
  app.require_subcommand(1);
  Options opt;

  const auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "experiment config (key=value or JSON)");
    sub->add_option("-o,--out", opt.out_flag, "output directory (overrides out.dir and ZRP_OUT)");
  };

  int (*runner)(const Options&) = nullptr;
  const auto bind = [&](CLI::App* sub, int (*fn)(const Options&)) {
    sub->callback([&runner, fn] { runner = fn; });
  };

  bind(app.add_subcommand("simulate", "particle replicas with field decomposition"), cmd_simulate);
  with_config(app.get_subcommand("simulate"));

  CLI::App* ensemble = app.add_subcommand("ensemble", "invariant-measure tables");
  ensemble->require_subcommand(1);
  bind(ensemble->add_subcommand("dump", "site marginal, moments, derivatives"), cmd_ensemble);
  with_config(ensemble->get_subcommand("dump"));

  CLI::App* frame = app.add_subcommand("frame", "common-speed condition");
  frame->require_subcommand(1);
  bind(frame->add_subcommand("solve", "solve for a common-speed density"), cmd_frame);
  with_config(frame->get_subcommand("solve"));

  CLI::App* coupling = app.add_subcommand("coupling", "quadratic coupling tensor");
  coupling->require_subcommand(1);
  bind(coupling->add_subcommand("build", "tensor and trilinear residual"), cmd_coupling);
  with_config(coupling->get_subcommand("build"));

  CLI::App* decouple = app.add_subcommand("decouple", "component-rotation obstructions");
  decouple->require_subcommand(1);
  bind(decouple->add_subcommand("scan", "scan rotation angles for decoupling"), cmd_decouple);
  with_config(decouple->get_subcommand("scan"));

  CLI::App* spde = app.add_subcommand("spde", "reference SPDE integrators");
  spde->require_subcommand(1);
  bind(spde->add_subcommand("run", "spectral replicas at gamma 1 or 1/2"), cmd_spde);
  with_config(spde->get_subcommand("run"));

  bind(app.add_subcommand("fields", "test-function and mollifier tables"), cmd_fields);
  with_config(app.get_subcommand("fields"));

  CLI::App* diagnose = app.add_subcommand("diagnose", "ensemble and replacement diagnostics");
  diagnose->require_subcommand(1);
  bind(diagnose->add_subcommand("eoe", "conditional-expectation error decay"), cmd_eoe);
  with_config(diagnose->get_subcommand("eoe"));
  bind(diagnose->add_subcommand("bg", "block-replacement integral estimates"), cmd_bg);
  with_config(diagnose->get_subcommand("bg"));

  CLI::App* compare = app.add_subcommand("compare", "align two runs' estimators");
  compare->add_option("dir_a", opt.dir_a, "first run directory")->required();
  compare->add_option("dir_b", opt.dir_b, "second run directory")->required();
  compare->add_option("-e,--estimator", opt.estimators, "stat names to compare (default: shared)");
  compare->add_option("--tol-se", opt.tol_se, "allowed deviation in combined standard errors");
  bind(compare, cmd_compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return runner ? runner(opt) : 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}
