#pragma once

#include "zrp/ensemble.hpp"
#include "zrp/fields.hpp"
#include "zrp/kmc.hpp"

#include <complex>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace zrp {

// ---- configuration ----

// Flat key=value text with dotted section names ("sim.N = 256", '#' comments)
// or the JSON mirror (nested objects flatten to dotted keys, arrays to comma
// lists). Values stay strings until typed by config_from.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_flat(const std::string& text);
KeyValues parse_json_config(const std::string& text);
KeyValues read_config_file(const std::string& path);  // dispatches on content

// Which jump-rate family to build and with which parameters.
struct FamilySpec {
  std::string kind = "independent";  // independent | factorial | multicolor | bump | tilted
  int n = 1;
  int cap = 170;              // occupancy cap for capped kinds
  double x = 3.0, y = -0.96;  // tilted-walk perturbation strengths
  double c = 0.1;             // bump height parameter
  std::vector<double> g;      // multicolor: scalar rate table g(1), g(2), ...

  RateFamily build() const;  // DomainError on unknown kind
};

struct ExperimentConfig {
  FamilySpec family;
  std::vector<double> density, fugacity;  // exactly one nonempty
  SimParams sim;
  int replicas = 1;

  std::vector<int> modes{1};  // tracked Fourier wavenumbers
  bool traveling = false;     // observe in the common-speed moving frame
  std::vector<double> eps;    // mollifier ladder for the quadratic functional

  int spde_modes = 16;   // spectral cutoff K
  double spde_dt = 1e-4; // quadratic-stepper substep
  double spde_eps = 0;   // SPDE mollifier width (0: pick 8/K)

  int decouple_grid = 10000;  // rotation-angle scan resolution

  std::vector<int> eoe_ells{2, 4, 8, 16};
  long eoe_samples = 0;  // Monte Carlo budget when the exact table overflows
  std::vector<int> bg_ells{2, 4, 8};
  int bg_replicas = 4;
  int bg_mode = 1;       // weight vector = scaled gradient of this mode
  int diag_species = 0;  // observable species for the diagnostics

  std::string out_dir;

  KeyValues resolved;  // every knob above, normalized back to strings
};

// Types and cross-checks every key; throws DomainError whose message lists
// every violated constraint, one per line.
ExperimentConfig config_from(const KeyValues& kv);
ExperimentConfig load_config(const std::string& path);

// Sorted key=value lines of the resolved configuration; the run hash is the
// FNV-1a fingerprint of these bytes, so text and JSON spellings of the same
// experiment hash identically.
std::string canonical_dump(const ExperimentConfig& cfg);
uint64_t fnv64(std::string_view bytes);
std::string config_hash(const ExperimentConfig& cfg);  // 16 hex digits

Ensemble make_ensemble(const ExperimentConfig& cfg);

// ---- artifact emission ----

// Comma-separated, '.' decimal, header row, LF endings; floats carry 17
// significant digits so a rewrite round-trips bit for bit.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  long rows() const { return rows_; }
  uint64_t checksum() const { return hash_; }  // FNV-1a over written bytes
  const std::string& file() const { return file_; }
  void close();

  static std::string num(double v);
  static std::string num(long v);

 private:
  void put(const std::string& line);
  std::ofstream out_;
  std::string file_;
  long rows_ = 0;
  uint64_t hash_;
};

struct ArtifactInfo {
  std::string file;
  long rows = 0;
  uint64_t fnv = 0;
};
ArtifactInfo artifact_of(const CsvWriter& w);

// manifest.json: resolved config, its hash, and every artifact with row
// count and checksum. (config hash, seed) determine each output byte.
void write_manifest(const std::string& dir, const std::string& subcommand,
                    const ExperimentConfig& cfg, const std::vector<ArtifactInfo>& artifacts);

// ---- replica statistics ----

// Neutral per-replica view of tracked modes: y[mode][species][record] packs
// the cosine readout in the real part and the sine readout in the imaginary
// part; qv_* optionally carry the predictable brackets with the same shape.
struct ModeReadout {
  std::vector<double> times;
  std::vector<int> modes;
  std::vector<std::vector<std::vector<std::complex<double>>>> y;
  std::vector<std::vector<std::vector<double>>> qv_cos, qv_sin;
};

ModeReadout readout_of(const FieldSeries& fs);

// One summary estimator: replicate mean `value` with leave-one-out error
// `se`. stat is "cov" (single-time second moment, cos/sin pooled), "lag"
// (symmetrized product of the first record and record at `time`), or
// "qv_slope" (bracket at the last record over elapsed time).
struct StatRow {
  std::string stat;
  double time = 0;
  int mode = 0, i = 0, j = 0;
  double value = 0, se = 0;
  long reps = 0;
};

std::vector<StatRow> summarize(const std::vector<ModeReadout>& replicas);

ArtifactInfo write_summary(const std::string& dir, const std::vector<StatRow>& rows);
std::vector<StatRow> read_summary(const std::string& dir);  // DomainError on bad schema

// ---- run comparison ----

struct CompareLine {
  std::string key;  // stat@time/mode/i/j
  double a = 0, b = 0, se = 0, dev = 0;
  bool pass = false;
};

struct CompareReport {
  long checked = 0, failed = 0;
  std::vector<CompareLine> lines;
};

// Aligns the two runs' summary tables on (stat, time, mode, i, j) and flags
// |a - b| > tol_se * sqrt(se_a^2 + se_b^2) (exact equality required where
// both errors vanish). estimators filters by stat name; empty means every
// stat the runs share. DomainError when the schemas do not overlap.
CompareReport compare_runs(const std::string& dir_a, const std::string& dir_b,
                           const std::vector<std::string>& estimators, double tol_se);

// ---- replica scheduling ----

// Runs body(0..replicas-1) on `workers` threads. Replica indexing, not
// completion order, owns every output slot, so results are identical for
// any worker count; the first exception (by replica index) is rethrown.
void run_replicas(int replicas, int workers, const std::function<void(int)>& body);

int env_workers();                        // ZRP_WORKERS, default 1
std::string env_out(const std::string&);  // ZRP_OUT fallback for empty out.dir

}  // namespace zrp
