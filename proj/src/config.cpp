#include "zrp/config.hpp"

#include "zrp/families.hpp"

#include <json.hpp>

#include <atomic>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

namespace zrp {

namespace {

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(cur), cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void flatten_json(const nlohmann::json& j, const std::string& prefix, KeyValues& kv) {
  if (j.is_object()) {
    for (const auto& [key, val] : j.items())
      flatten_json(val, prefix.empty() ? key : prefix + "." + key, kv);
    return;
  }
  if (prefix.empty()) throw DomainError("config JSON must be an object");
  if (j.is_array()) {
    std::string joined;
    for (const auto& el : j) {
      if (el.is_structured()) throw DomainError("config key '" + prefix + "': nested arrays/objects are not a value");
      if (!joined.empty()) joined += ",";
      joined += el.is_string() ? el.get<std::string>() : el.dump();
    }
    kv[prefix] = joined;
    return;
  }
  kv[prefix] = j.is_string() ? j.get<std::string>() : j.dump();
}

// Collects every violation before failing, so a bad config reports all of
// its problems at once.
struct Reader {
  const KeyValues& kv;
  std::set<std::string> used;
  std::vector<std::string> errors;

  const std::string* find(const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    used.insert(key);
    return &it->second;
  }
  void fail(const std::string& key, const std::string& why) { errors.push_back(key + ": " + why); }

  long integer(const std::string& key, long fallback) {
    const std::string* s = find(key);
    if (!s) return fallback;
    try {
      size_t pos = 0;
      const long v = std::stol(*s, &pos);
      if (pos != s->size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail(key, "not an integer: '" + *s + "'");
      return fallback;
    }
  }
  double real(const std::string& key, double fallback) {
    const std::string* s = find(key);
    if (!s) return fallback;
    try {
      size_t pos = 0;
      const double v = std::stod(*s, &pos);
      if (pos != s->size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail(key, "not a number: '" + *s + "'");
      return fallback;
    }
  }
  bool boolean(const std::string& key, bool fallback) {
    const std::string* s = find(key);
    if (!s) return fallback;
    if (*s == "true" || *s == "1") return true;
    if (*s == "false" || *s == "0") return false;
    fail(key, "not a boolean: '" + *s + "'");
    return fallback;
  }
  std::string text(const std::string& key, const std::string& fallback) {
    const std::string* s = find(key);
    return s ? *s : fallback;
  }
  std::vector<double> reals(const std::string& key, std::vector<double> fallback) {
    const std::string* s = find(key);
    if (!s) return fallback;
    std::vector<double> out;
    for (const std::string& tok : split_list(*s)) {
      try {
        size_t pos = 0;
        out.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail(key, "not a number: '" + tok + "'");
      }
    }
    return out;
  }
  std::vector<int> integers(const std::string& key, std::vector<int> fallback) {
    const std::string* s = find(key);
    if (!s) return fallback;
    std::vector<int> out;
    for (const std::string& tok : split_list(*s)) {
      try {
        size_t pos = 0;
        out.push_back(static_cast<int>(std::stol(tok, &pos)));
        if (pos != tok.size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        fail(key, "not an integer: '" + tok + "'");
      }
    }
    return out;
  }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (double x : v) {
    if (!out.empty()) out += ",";
    out += fmt(x);
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (int x : v) {
    if (!out.empty()) out += ",";
    out += std::to_string(x);
  }
  return out;
}

}  // namespace

// ---- parsing ----

KeyValues parse_flat(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw DomainError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty()) throw DomainError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw DomainError("config: duplicate key '" + key + "'");
    kv[key] = trim(stripped.substr(eq + 1));
  }
  return kv;
}

KeyValues parse_json_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("config JSON: ") + e.what());
  }
  KeyValues kv;
  flatten_json(j, "", kv);
  return kv;
}

KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot read config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) continue;
    return ch == '{' ? parse_json_config(text) : parse_flat(text);
  }
  return {};
}

// ---- typed configuration ----

RateFamily FamilySpec::build() const {
  if (kind == "independent") return RateFamily::independent(n);
  if (kind == "factorial") return RateFamily::independent_factorial(n);
  if (kind == "multicolor") return RateFamily::multi_color(n, g);
  if (kind == "bump") return multi_color_bump(n, c, cap);
  if (kind == "tilted") return tilted_walk(x, y);
  throw DomainError("unknown family kind '" + kind + "'");
}

ExperimentConfig config_from(const KeyValues& kv) {
  Reader r{kv, {}, {}};
  ExperimentConfig cfg;

  cfg.family.kind = r.text("family.kind", cfg.family.kind);
  const bool tilted = cfg.family.kind == "tilted";
  cfg.family.n = static_cast<int>(r.integer("family.n", tilted ? 2 : 1));
  cfg.family.cap = static_cast<int>(r.integer("family.cap", cfg.family.cap));
  cfg.family.x = r.real("family.x", cfg.family.x);
  cfg.family.y = r.real("family.y", cfg.family.y);
  cfg.family.c = r.real("family.c", cfg.family.c);
  cfg.family.g = r.reals("family.g", {});

  static const std::set<std::string> kinds = {"independent", "factorial", "multicolor", "bump",
                                              "tilted"};
  if (!kinds.count(cfg.family.kind)) r.fail("family.kind", "unknown kind '" + cfg.family.kind + "'");
  if (cfg.family.n < 1) r.fail("family.n", "need at least one species");
  if (cfg.family.cap < 1) r.fail("family.cap", "need a positive occupancy cap");
  if (tilted && cfg.family.n != 2) r.fail("family.n", "the tilted family has exactly two species");
  if (cfg.family.kind == "multicolor" && cfg.family.g.empty())
    r.fail("family.g", "multicolor needs the scalar rate table");

  cfg.density = r.reals("ensemble.density", {});
  cfg.fugacity = r.reals("ensemble.fugacity", {});
  if (cfg.density.empty() == cfg.fugacity.empty())
    r.errors.push_back("ensemble: exactly one of ensemble.density / ensemble.fugacity is required");
  const auto check_len = [&](const char* key, const std::vector<double>& v) {
    if (v.empty()) return;
    if (static_cast<int>(v.size()) != cfg.family.n)
      r.fail(key, "expected " + std::to_string(cfg.family.n) + " entries");
    for (double x : v)
      if (!(x > 0) || !std::isfinite(x)) r.fail(key, "entries must be positive and finite");
  };
  check_len("ensemble.density", cfg.density);
  check_len("ensemble.fugacity", cfg.fugacity);

  cfg.sim.N = static_cast<int>(r.integer("sim.N", 0));
  cfg.sim.gamma = r.real("sim.gamma", 1.0);
  cfg.sim.c = r.real("sim.c", 0.0);
  cfg.sim.T = r.real("sim.T", 0.0);
  cfg.sim.seed = static_cast<uint64_t>(r.integer("sim.seed", 1));
  cfg.replicas = static_cast<int>(r.integer("sim.replicas", 1));
  if (cfg.replicas < 1) r.fail("sim.replicas", "need at least one replica");

  const std::vector<double> records = r.reals("sim.records", {});
  const long record_count = r.integer("sim.record_count", 10);
  if (!records.empty() && kv.count("sim.record_count"))
    r.errors.push_back("sim: give sim.records or sim.record_count, not both");
  if (record_count < 1) r.fail("sim.record_count", "need at least one record");
  if (!records.empty()) {
    cfg.sim.record_times = records;
  } else if (cfg.sim.T > 0 && record_count >= 1) {
    for (long i = 1; i <= record_count; ++i)
      cfg.sim.record_times.push_back(cfg.sim.T * static_cast<double>(i) /
                                     static_cast<double>(record_count));
  }

  cfg.modes = r.integers("fields.modes", cfg.modes);
  cfg.traveling = r.boolean("fields.traveling", cfg.traveling);
  cfg.eps = r.reals("fields.eps", {});
  if (cfg.modes.empty()) r.fail("fields.modes", "need at least one mode");
  for (int k : cfg.modes)
    if (k < 1) r.fail("fields.modes", "wavenumbers must be positive");

  cfg.spde_modes = static_cast<int>(r.integer("spde.modes", cfg.spde_modes));
  cfg.spde_dt = r.real("spde.dt", cfg.spde_dt);
  cfg.spde_eps = r.real("spde.eps", cfg.spde_eps);
  if (cfg.spde_modes < 1) r.fail("spde.modes", "need at least one mode");
  if (!(cfg.spde_dt > 0)) r.fail("spde.dt", "substep must be positive");

  cfg.decouple_grid = static_cast<int>(r.integer("decouple.grid", cfg.decouple_grid));
  if (cfg.decouple_grid < 16) r.fail("decouple.grid", "need at least 16 scan points");

  cfg.eoe_ells = r.integers("eoe.ells", cfg.eoe_ells);
  cfg.eoe_samples = r.integer("eoe.samples", cfg.eoe_samples);
  for (int ell : cfg.eoe_ells)
    if (ell < 1) r.fail("eoe.ells", "block radii must be positive");
  cfg.bg_ells = r.integers("bg.ells", cfg.bg_ells);
  cfg.bg_replicas = static_cast<int>(r.integer("bg.replicas", cfg.bg_replicas));
  cfg.bg_mode = static_cast<int>(r.integer("bg.mode", cfg.bg_mode));
  if (cfg.bg_mode < 1) r.fail("bg.mode", "weight mode must be positive");
  cfg.diag_species = static_cast<int>(r.integer("diag.species", cfg.diag_species));
  if (cfg.diag_species < 0 || cfg.diag_species >= cfg.family.n)
    r.fail("diag.species", "species index out of range");

  cfg.out_dir = r.text("out.dir", "");

  for (const auto& [key, val] : kv)
    if (!r.used.count(key)) r.errors.push_back(key + ": unknown key");

  if (!r.errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const std::string& e : r.errors) msg += "\n  " + e;
    throw DomainError(msg);
  }

  KeyValues& res = cfg.resolved;
  res["family.kind"] = cfg.family.kind;
  res["family.n"] = std::to_string(cfg.family.n);
  res["family.cap"] = std::to_string(cfg.family.cap);
  res["family.x"] = fmt(cfg.family.x);
  res["family.y"] = fmt(cfg.family.y);
  res["family.c"] = fmt(cfg.family.c);
  if (!cfg.family.g.empty()) res["family.g"] = join_reals(cfg.family.g);
  if (!cfg.density.empty()) res["ensemble.density"] = join_reals(cfg.density);
  if (!cfg.fugacity.empty()) res["ensemble.fugacity"] = join_reals(cfg.fugacity);
  res["sim.N"] = std::to_string(cfg.sim.N);
  res["sim.gamma"] = fmt(cfg.sim.gamma);
  res["sim.c"] = fmt(cfg.sim.c);
  res["sim.T"] = fmt(cfg.sim.T);
  res["sim.seed"] = std::to_string(cfg.sim.seed);
  res["sim.replicas"] = std::to_string(cfg.replicas);
  res["sim.records"] = join_reals(cfg.sim.record_times);
  res["fields.modes"] = join_ints(cfg.modes);
  res["fields.traveling"] = cfg.traveling ? "true" : "false";
  if (!cfg.eps.empty()) res["fields.eps"] = join_reals(cfg.eps);
  res["spde.modes"] = std::to_string(cfg.spde_modes);
  res["spde.dt"] = fmt(cfg.spde_dt);
  res["spde.eps"] = fmt(cfg.spde_eps);
  res["decouple.grid"] = std::to_string(cfg.decouple_grid);
  res["eoe.ells"] = join_ints(cfg.eoe_ells);
  res["eoe.samples"] = std::to_string(cfg.eoe_samples);
  res["bg.ells"] = join_ints(cfg.bg_ells);
  res["bg.replicas"] = std::to_string(cfg.bg_replicas);
  res["bg.mode"] = std::to_string(cfg.bg_mode);
  res["diag.species"] = std::to_string(cfg.diag_species);
  if (!cfg.out_dir.empty()) res["out.dir"] = cfg.out_dir;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) { return config_from(read_config_file(path)); }

std::string canonical_dump(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, val] : cfg.resolved) out += key + "=" + val + "\n";
  return out;
}

uint64_t fnv64(std::string_view bytes) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv64(canonical_dump(cfg))));
  return buf;
}

Ensemble make_ensemble(const ExperimentConfig& cfg) {
  RateFamily fam = cfg.family.build();
  if (!cfg.density.empty()) {
    Vec a = Eigen::Map<const Vec>(cfg.density.data(), static_cast<long>(cfg.density.size()));
    return Ensemble(fam, Ensemble::fugacity_of_density(fam, a));
  }
  Vec phi = Eigen::Map<const Vec>(cfg.fugacity.data(), static_cast<long>(cfg.fugacity.size()));
  return Ensemble(fam, phi);
}

// ---- artifact emission ----

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary), file_(path), hash_(14695981039346656037ull) {
  if (!out_) throw DomainError("cannot open '" + path + "' for writing");
  std::string line;
  for (size_t i = 0; i < header.size(); ++i) line += (i ? "," : "") + header[i];
  put(line);
}

void CsvWriter::put(const std::string& line) {
  for (unsigned char ch : line) {
    hash_ ^= ch;
    hash_ *= 1099511628211ull;
  }
  hash_ ^= '\n';
  hash_ *= 1099511628211ull;
  out_ << line << '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  std::string line;
  for (size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
  put(line);
  ++rows_;
}

void CsvWriter::close() {
  if (out_.is_open()) {
    out_.close();
    if (!out_) throw NumericalError("write to '" + file_ + "' failed");
  }
}

std::string CsvWriter::num(double v) { return fmt(v); }
std::string CsvWriter::num(long v) { return std::to_string(v); }

ArtifactInfo artifact_of(const CsvWriter& w) {
  std::string name = w.file();
  if (const size_t slash = name.find_last_of('/'); slash != std::string::npos)
    name = name.substr(slash + 1);
  return {name, w.rows(), w.checksum()};
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const ExperimentConfig& cfg, const std::vector<ArtifactInfo>& artifacts) {
  nlohmann::json j;
  j["tool"] = "zrp";
  j["subcommand"] = subcommand;
  j["config"] = cfg.resolved;
  j["config_hash"] = config_hash(cfg);
  j["artifacts"] = nlohmann::json::array();
  for (const ArtifactInfo& a : artifacts) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(a.fnv));
    j["artifacts"].push_back({{"file", a.file}, {"rows", a.rows}, {"fnv64", buf}});
  }
  std::ofstream out(dir + "/manifest.json", std::ios::binary);
  if (!out) throw DomainError("cannot write manifest in '" + dir + "'");
  out << j.dump(2) << '\n';
}

// ---- replica statistics ----

ModeReadout readout_of(const FieldSeries& fs) {
  ModeReadout out;
  out.times = fs.times;
  out.modes = fs.modes;
  out.y = fs.y;
  out.qv_cos = fs.qv_cos;
  out.qv_sin = fs.qv_sin;
  return out;
}

namespace {

void mean_se(const std::vector<double>& v, double* mean, double* se) {
  const double m = static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += x;
  *mean = s / m;
  double ss = 0;
  for (double x : v) ss += (x - *mean) * (x - *mean);
  *se = v.size() > 1 ? std::sqrt(ss / (m * (m - 1.0))) : 0.0;
}

}  // namespace

std::vector<StatRow> summarize(const std::vector<ModeReadout>& replicas) {
  if (replicas.empty()) throw DomainError("summary needs at least one replica");
  const ModeReadout& first = replicas.front();
  for (const ModeReadout& rep : replicas)
    if (rep.times != first.times || rep.modes != first.modes)
      throw DomainError("replicas disagree on record times or tracked modes");
  const long M = static_cast<long>(replicas.size());
  const size_t nm = first.modes.size();
  const size_t R = first.times.size();
  const size_t n = first.y.empty() || first.y[0].empty() ? 0 : first.y[0].size();

  std::vector<StatRow> rows;
  std::vector<double> vals(static_cast<size_t>(M));
  const auto push = [&](const std::string& stat, double time, int mode, int i, int j) {
    StatRow row{stat, time, mode, i, j, 0, 0, M};
    mean_se(vals, &row.value, &row.se);
    rows.push_back(std::move(row));
  };

  for (size_t m = 0; m < nm; ++m)
    for (size_t r = 0; r < R; ++r)
      for (size_t i = 0; i < n; ++i)
        for (size_t j = i; j < n; ++j) {
          for (long rep = 0; rep < M; ++rep) {
            const auto& y = replicas[static_cast<size_t>(rep)].y[m];
            vals[static_cast<size_t>(rep)] =
                0.5 * (y[i][r].real() * y[j][r].real() + y[i][r].imag() * y[j][r].imag());
          }
          push("cov", first.times[r], first.modes[m], static_cast<int>(i), static_cast<int>(j));
        }

  for (size_t m = 0; m < nm; ++m)
    for (size_t r = 1; r < R; ++r)
      for (size_t i = 0; i < n; ++i)
        for (size_t j = i; j < n; ++j) {
          for (long rep = 0; rep < M; ++rep) {
            const auto& y = replicas[static_cast<size_t>(rep)].y[m];
            vals[static_cast<size_t>(rep)] =
                0.25 * (y[i][0].real() * y[j][r].real() + y[j][0].real() * y[i][r].real() +
                        y[i][0].imag() * y[j][r].imag() + y[j][0].imag() * y[i][r].imag());
          }
          push("lag", first.times[r] - first.times[0], first.modes[m], static_cast<int>(i),
               static_cast<int>(j));
        }

  if (!first.qv_cos.empty() && R > 0 && first.times.back() > 0)
    for (size_t m = 0; m < nm; ++m)
      for (size_t i = 0; i < n; ++i) {
        for (long rep = 0; rep < M; ++rep) {
          const ModeReadout& rr = replicas[static_cast<size_t>(rep)];
          vals[static_cast<size_t>(rep)] = (rr.qv_cos[m][i].back() + rr.qv_sin[m][i].back()) /
                                           (2.0 * first.times.back());
        }
        push("qv_slope", first.times.back(), first.modes[m], static_cast<int>(i),
             static_cast<int>(i));
      }

  return rows;
}

static const std::vector<std::string> kSummaryHeader = {"stat", "time",  "mode", "i",
                                                        "j",    "value", "se",   "replicas"};

ArtifactInfo write_summary(const std::string& dir, const std::vector<StatRow>& rows) {
  CsvWriter w(dir + "/summary.csv", kSummaryHeader);
  for (const StatRow& row : rows)
    w.row({row.stat, CsvWriter::num(row.time), CsvWriter::num(static_cast<long>(row.mode)),
           CsvWriter::num(static_cast<long>(row.i)), CsvWriter::num(static_cast<long>(row.j)),
           CsvWriter::num(row.value), CsvWriter::num(row.se), CsvWriter::num(row.reps)});
  w.close();
  return artifact_of(w);
}

std::vector<StatRow> read_summary(const std::string& dir) {
  const std::string path = dir + "/summary.csv";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("no summary table in '" + dir + "'");
  std::string line;
  if (!std::getline(in, line)) throw DomainError("'" + path + "' is empty");
  std::string want;
  for (size_t i = 0; i < kSummaryHeader.size(); ++i) want += (i ? "," : "") + kSummaryHeader[i];
  if (line != want) throw DomainError("'" + path + "' has an unexpected schema");

  std::vector<StatRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line)
      if (ch == ',') cells.push_back(cur), cur.clear();
      else cur.push_back(ch);
    cells.push_back(cur);
    if (cells.size() != kSummaryHeader.size())
      throw DomainError("'" + path + "' has a malformed row");
    try {
      StatRow row;
      row.stat = cells[0];
      row.time = std::stod(cells[1]);
      row.mode = std::stoi(cells[2]);
      row.i = std::stoi(cells[3]);
      row.j = std::stoi(cells[4]);
      row.value = std::stod(cells[5]);
      row.se = std::stod(cells[6]);
      row.reps = std::stol(cells[7]);
      rows.push_back(std::move(row));
    } catch (const std::exception&) {
      throw DomainError("'" + path + "' has a malformed row");
    }
  }
  return rows;
}

// ---- run comparison ----

CompareReport compare_runs(const std::string& dir_a, const std::string& dir_b,
                           const std::vector<std::string>& estimators, double tol_se) {
  const std::vector<StatRow> rows_a = read_summary(dir_a);
  const std::vector<StatRow> rows_b = read_summary(dir_b);

  std::set<std::string> stats;
  if (estimators.empty()) {
    std::set<std::string> sa, sb;
    for (const StatRow& row : rows_a) sa.insert(row.stat);
    for (const StatRow& row : rows_b) sb.insert(row.stat);
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                          std::inserter(stats, stats.begin()));
  } else {
    stats.insert(estimators.begin(), estimators.end());
  }
  if (stats.empty()) throw DomainError("the runs share no estimators");

  const auto key_of = [](const StatRow& row) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s@%.12g/%d/%d/%d", row.stat.c_str(), row.time, row.mode,
                  row.i, row.j);
    return std::string(buf);
  };
  std::map<std::string, const StatRow*> table_b;
  long selected_b = 0;
  for (const StatRow& row : rows_b)
    if (stats.count(row.stat)) {
      table_b[key_of(row)] = &row;
      ++selected_b;
    }

  CompareReport report;
  for (const StatRow& row : rows_a) {
    if (!stats.count(row.stat)) continue;
    const auto hit = table_b.find(key_of(row));
    if (hit == table_b.end())
      throw DomainError("schema mismatch: '" + key_of(row) + "' is missing from the second run");
    const StatRow& other = *hit->second;
    CompareLine line;
    line.key = key_of(row);
    line.a = row.value;
    line.b = other.value;
    line.se = std::sqrt(row.se * row.se + other.se * other.se);
    line.dev = std::abs(row.value - other.value);
    line.pass = line.se > 0 ? line.dev <= tol_se * line.se : line.dev == 0;
    ++report.checked;
    if (!line.pass) ++report.failed;
    report.lines.push_back(std::move(line));
  }
  if (report.checked != selected_b)
    throw DomainError("schema mismatch: the second run carries extra estimator rows");
  if (report.checked == 0) throw DomainError("the runs share no estimators");
  return report;
}

// ---- replica scheduling ----

void run_replicas(int replicas, int workers, const std::function<void(int)>& body) {
  if (replicas < 1) throw DomainError("need at least one replica");
  workers = std::max(1, std::min(workers, replicas));
  if (workers == 1) {
    for (int r = 0; r < replicas; ++r) body(r);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(replicas));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int r = next.fetch_add(1); r < replicas; r = next.fetch_add(1)) {
        try {
          body(r);
        } catch (...) {
          errors[static_cast<size_t>(r)] = std::current_exception();
        }
      }
    });
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

int env_workers() {
  const char* env = std::getenv("ZRP_WORKERS");
  if (!env || !*env) return 1;
  try {
    size_t pos = 0;
    const int w = std::stoi(env, &pos);
    if (pos != std::string(env).size() || w < 1) throw std::invalid_argument("");
    return w;
  } catch (const std::exception&) {
    throw DomainError(std::string("ZRP_WORKERS is not a positive integer: '") + env + "'");
  }
}

std::string env_out(const std::string& configured) {
  if (!configured.empty()) return configured;
  const char* env = std::getenv("ZRP_OUT");
  if (env && *env) return env;
  return "zrp_run";
}

}  // namespace zrp
