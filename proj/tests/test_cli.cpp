#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "zrp/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

using namespace zrp;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::path("cli_test_tmp");

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path log = kRoot / "last_output";
  const std::string cmd = "./zrp " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = slurp(log);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

const char* kLinearCfg =
    "family.kind = tilted\n"
    "family.x = 3.0\n"
    "family.y = -0.96\n"
    "ensemble.fugacity = 0.8, 0.55\n"
    "sim.N = 32\n"
    "sim.gamma = 1\n"
    "sim.c = 0.3\n"
    "sim.T = 0.2\n"
    "sim.seed = 7\n"
    "sim.replicas = 30\n"
    "sim.record_count = 2\n"
    "fields.modes = 1,2\n";

struct Workspace {
  Workspace() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("config text: parsing, comments, and hard errors") {
  workspace();
  const KeyValues kv = parse_flat("# header\n sim.N = 256 # trailing\n\nfamily.kind=tilted\n");
  CHECK(kv.at("sim.N") == "256");
  CHECK(kv.at("family.kind") == "tilted");
  CHECK(kv.size() == 2);

  CHECK_THROWS_AS(parse_flat("sim.N 256\n"), DomainError);
  CHECK_THROWS_AS(parse_flat("= 3\n"), DomainError);
  CHECK_THROWS_AS(parse_flat("a.b = 1\na.b = 2\n"), DomainError);
}

TEST_CASE("config: JSON mirror resolves to the same hash as the flat form") {
  const ExperimentConfig flat = config_from(parse_flat(kLinearCfg));
  const char* mirror = R"({
    "family": {"kind": "tilted", "x": 3.0, "y": -0.96},
    "ensemble": {"fugacity": [0.8, 0.55]},
    "sim": {"N": 32, "gamma": 1, "c": 0.3, "T": 0.2, "seed": 7,
            "replicas": 30, "record_count": 2},
    "fields": {"modes": [1, 2]}
  })";
  const ExperimentConfig js = config_from(parse_json_config(mirror));
  CHECK(config_hash(flat) == config_hash(js));
  CHECK(canonical_dump(flat) == canonical_dump(js));
  CHECK(flat.sim.record_times == std::vector<double>{0.1, 0.2});

  // different seed -> different fingerprint
  KeyValues kv = parse_flat(kLinearCfg);
  kv["sim.seed"] = "8";
  CHECK(config_hash(config_from(kv)) != config_hash(flat));
}

TEST_CASE("config: every violation is reported at once") {
  KeyValues kv;
  kv["family.kind"] = "nosuch";
  kv["ensemble.density"] = "0.5";
  kv["ensemble.fugacity"] = "0.5";
  kv["sim.replicas"] = "0";
  kv["fields.modes"] = "0";
  kv["mystery.key"] = "1";
  try {
    config_from(kv);
    FAIL("expected a validation error");
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    for (const char* needle :
         {"family.kind", "exactly one of", "sim.replicas", "fields.modes", "mystery.key"})
      CHECK(msg.find(needle) != std::string::npos);
  }

  // records grid and record list are mutually exclusive
  KeyValues both = parse_flat(kLinearCfg);
  both["sim.records"] = "0.1,0.2";
  CHECK_THROWS_AS(config_from(both), DomainError);
}

TEST_CASE("csv writer: digits, line endings, and checksums") {
  workspace();
  const fs::path path = kRoot / "fmt.csv";
  CsvWriter w(path.string(), {"a", "b"});
  w.row({CsvWriter::num(3.141592653589793), CsvWriter::num(static_cast<long>(-7))});
  w.row({CsvWriter::num(1.0 / 3.0), CsvWriter::num(2.5e-300)});
  w.close();

  const std::string text = slurp(path);
  CHECK(text == "a,b\n3.1415926535897931,-7\n0.33333333333333331,2.5e-300\n");
  CHECK(text.find('\r') == std::string::npos);
  CHECK(std::stod("3.1415926535897931") == 3.141592653589793);
  CHECK(std::stod("2.5e-300") == 2.5e-300);

  const ArtifactInfo info = artifact_of(w);
  CHECK(info.file == "fmt.csv");
  CHECK(info.rows == 2);
  CHECK(info.fnv == fnv64(text));
}

TEST_CASE("summary statistics: exact values on a synthetic ensemble of replicas") {
  // Three replicas, one mode, one species, two records.
  std::vector<ModeReadout> reps(3);
  const double re0[3] = {1.0, 2.0, 3.0}, im0[3] = {0.5, -0.5, 1.5};
  const double re1[3] = {2.0, 1.0, -1.0}, im1[3] = {0.0, 1.0, 2.0};
  for (int r = 0; r < 3; ++r) {
    reps[r].times = {0.5, 1.0};
    reps[r].modes = {2};
    reps[r].y = {{{{re0[r], im0[r]}, {re1[r], im1[r]}}}};
    reps[r].qv_cos = {{{0.3, 0.8 + r}}};
    reps[r].qv_sin = {{{0.1, 0.4}}};
  }
  const std::vector<StatRow> rows = summarize(reps);
  REQUIRE(rows.size() == 4);  // cov at two times, lag at one, qv slope

  const auto find = [&](const std::string& stat, double time) -> const StatRow& {
    for (const StatRow& row : rows)
      if (row.stat == stat && row.time == doctest::Approx(time).epsilon(1e-15)) return row;
    FAIL("missing row");
    return rows.front();
  };

  const StatRow& cov0 = find("cov", 0.5);
  double vals[3], mean = 0;
  for (int r = 0; r < 3; ++r) mean += vals[r] = 0.5 * (re0[r] * re0[r] + im0[r] * im0[r]);
  mean /= 3;
  CHECK(cov0.value == doctest::Approx(mean).epsilon(1e-15));
  double ss = 0;
  for (double v : vals) ss += (v - mean) * (v - mean);
  CHECK(cov0.se == doctest::Approx(std::sqrt(ss / 6.0)).epsilon(1e-12));

  const StatRow& lag = find("lag", 0.5);
  mean = 0;
  for (int r = 0; r < 3; ++r) mean += 0.25 * (2 * re0[r] * re1[r] + 2 * im0[r] * im1[r]);
  mean /= 3;
  CHECK(lag.value == doctest::Approx(mean).epsilon(1e-15));

  const StatRow& qv = find("qv_slope", 1.0);
  CHECK(qv.value == doctest::Approx(((0.8 + 0.4) + (1.8 + 0.4) + (2.8 + 0.4)) / 3 / 2.0)
                        .epsilon(1e-15));

  CHECK_THROWS_AS(summarize({}), DomainError);
  std::vector<ModeReadout> skew = reps;
  skew[1].times = {0.5, 2.0};
  CHECK_THROWS_AS(summarize(skew), DomainError);
}

TEST_CASE("summary table: write/read round trip and compare semantics") {
  workspace();
  const fs::path da = kRoot / "cmp_a", db = kRoot / "cmp_b";
  fs::create_directories(da);
  fs::create_directories(db);

  std::vector<StatRow> rows = {{"cov", 0.5, 1, 0, 0, 0.123456789012345678, 0.01, 30},
                               {"cov", 0.5, 1, 0, 1, -3.4e-5, 0.002, 30},
                               {"qv_slope", 1.0, 1, 0, 0, 7.5, 0.25, 30}};
  write_summary(da.string(), rows);
  const std::vector<StatRow> back = read_summary(da.string());
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].stat == rows[i].stat);
    CHECK(back[i].value == rows[i].value);  // 17 digits: bit-exact round trip
    CHECK(back[i].se == rows[i].se);
  }

  // identical tables: every deviation is exactly zero
  write_summary(db.string(), rows);
  const CompareReport same = compare_runs(da.string(), db.string(), {}, 4.0);
  CHECK(same.checked == 3);
  CHECK(same.failed == 0);
  for (const CompareLine& line : same.lines) CHECK(line.dev == 0.0);

  // a 100-sigma bump on one estimator fails exactly that line
  rows[0].value += 100 * rows[0].se;
  write_summary(db.string(), rows);
  const CompareReport bumped = compare_runs(da.string(), db.string(), {}, 4.0);
  CHECK(bumped.failed == 1);

  // estimator filter narrows the check
  const CompareReport only_qv = compare_runs(da.string(), db.string(), {"qv_slope"}, 4.0);
  CHECK(only_qv.checked == 1);
  CHECK(only_qv.failed == 0);

  // schema mismatch: a missing row within a shared stat is an error, not a pass
  rows.erase(rows.begin() + 1);
  write_summary(db.string(), rows);
  CHECK_THROWS_AS(compare_runs(da.string(), db.string(), {}, 4.0), DomainError);
  // an estimator neither run carries is also an error
  CHECK_THROWS_AS(compare_runs(da.string(), da.string(), {"lag"}, 4.0), DomainError);
  CHECK_THROWS_AS(read_summary((kRoot / "nowhere").string()), DomainError);
}

TEST_CASE("replica scheduling: worker count changes nothing, errors keep replica order") {
  std::vector<double> one(64), four(64);
  run_replicas(64, 1, [&](int r) { one[static_cast<size_t>(r)] = r * r; });
  run_replicas(64, 4, [&](int r) { four[static_cast<size_t>(r)] = r * r; });
  CHECK(one == four);

  try {
    run_replicas(16, 4, [&](int r) {
      if (r == 3 || r == 11) throw NumericalError("replica " + std::to_string(r));
    });
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()) == "replica 3");
  }

  setenv("ZRP_WORKERS", "3", 1);
  CHECK(env_workers() == 3);
  setenv("ZRP_WORKERS", "zero", 1);
  CHECK_THROWS_AS(env_workers(), DomainError);
  unsetenv("ZRP_WORKERS");
  CHECK(env_workers() == 1);

  setenv("ZRP_OUT", "/tmp/somewhere", 1);
  CHECK(env_out("") == "/tmp/somewhere");
  CHECK(env_out("explicit") == "explicit");
  unsetenv("ZRP_OUT");
  CHECK(env_out("") == "zrp_run");
}

TEST_CASE("cli: simulate emits a complete, reproducible artifact set") {
  workspace();
  spit(kRoot / "lin.cfg", kLinearCfg);
  std::string out;
  REQUIRE(run_cli("simulate -c " + (kRoot / "lin.cfg").string() + " -o " +
                      (kRoot / "run1").string(),
                  &out) == 0);
  CHECK(out.find("simulate: 30 replicas") != std::string::npos);

  // manifest: config hash present, every artifact checksum matches the bytes
  const auto manifest = nlohmann::json::parse(slurp(kRoot / "run1" / "manifest.json"));
  CHECK(manifest.at("tool") == "zrp");
  const ExperimentConfig cfg = config_from(parse_flat(kLinearCfg));
  CHECK(manifest.at("config_hash") == config_hash(cfg));
  CHECK(manifest.at("config").at("sim.N") == "32");
  REQUIRE(manifest.at("artifacts").size() >= 2);
  for (const auto& art : manifest.at("artifacts")) {
    const std::string text = slurp(kRoot / "run1" / art.at("file").get<std::string>());
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv64(text)));
    CHECK(art.at("fnv64") == buf);
    long lines = 0;
    for (char ch : text)
      if (ch == '\n') ++lines;
    const std::string name = art.at("file").get<std::string>();
    const long expect = name.size() > 4 && name.substr(name.size() - 4) == ".csv" ? lines - 1
                                                                                  : lines;
    CHECK(art.at("rows") == expect);
  }

  // reruns are byte-identical
  REQUIRE(run_cli("simulate -c " + (kRoot / "lin.cfg").string() + " -o " +
                  (kRoot / "run2").string()) == 0);
  CHECK(slurp(kRoot / "run1" / "fields.csv") == slurp(kRoot / "run2" / "fields.csv"));
  CHECK(slurp(kRoot / "run1" / "summary.csv") == slurp(kRoot / "run2" / "summary.csv"));
  CHECK(slurp(kRoot / "run1" / "manifest.json") == slurp(kRoot / "run2" / "manifest.json"));
}

TEST_CASE("cli: validation failures exit 2 and enumerate the problems") {
  workspace();
  spit(kRoot / "bad.cfg",
       "family.kind = nosuch\nensemble.density = 0.5\nensemble.fugacity = 0.5\nbogus = 1\n");
  std::string out;
  CHECK(run_cli("simulate -c " + (kRoot / "bad.cfg").string(), &out) == 2);
  CHECK(out.find("family.kind") != std::string::npos);
  CHECK(out.find("exactly one of") != std::string::npos);
  CHECK(out.find("bogus") != std::string::npos);

  // moving-frame run at a density without the common-speed certificate
  spit(kRoot / "fc.cfg",
       "family.kind = tilted\nensemble.fugacity = 0.8, 0.55\nsim.N = 32\nsim.gamma = 0.5\n"
       "sim.c = 0.3\nsim.T = 0.05\nsim.record_count = 2\nfields.modes = 1\n"
       "fields.traveling = true\n");
  CHECK(run_cli("simulate -c " + (kRoot / "fc.cfg").string(), &out) == 2);
  CHECK(out.find("common-speed") != std::string::npos);
  CHECK(out.find("residual") != std::string::npos);

  CHECK(run_cli("simulate -c " + (kRoot / "missing.cfg").string(), &out) == 2);
  CHECK(run_cli("nosuchcommand", &out) == 2);
  CHECK(run_cli("--help", &out) == 0);
}

TEST_CASE("cli: particle run and exact reference agree within four standard errors") {
  workspace();
  spit(kRoot / "lin.cfg", kLinearCfg);
  const std::string cfg = (kRoot / "lin.cfg").string();
  REQUIRE(run_cli("simulate -c " + cfg + " -o " + (kRoot / "part").string()) == 0);
  REQUIRE(run_cli("spde run -c " + cfg + " -o " + (kRoot / "ref").string()) == 0);

  std::string out;
  CHECK(run_cli("compare " + (kRoot / "part").string() + " " + (kRoot / "ref").string(), &out) ==
        0);
  CHECK(out.find("within tolerance") != std::string::npos);
  CHECK(out.find("[FAIL]") == std::string::npos);

  // self-comparison: all deviations vanish
  CHECK(run_cli("compare " + (kRoot / "part").string() + " " + (kRoot / "part").string(), &out) ==
        0);

  // an impossible tolerance flips the exit code to 4
  const std::vector<StatRow> rows = read_summary((kRoot / "part").string());
  std::vector<StatRow> doctored = rows;
  bool bumped = false;
  for (StatRow& row : doctored)
    if (row.stat == "cov" && row.se > 0 && !bumped) {
      row.value += 50 * row.se;
      bumped = true;
    }
  REQUIRE(bumped);
  fs::create_directories(kRoot / "doctored");
  write_summary((kRoot / "doctored").string(), doctored);
  CHECK(run_cli("compare " + (kRoot / "part").string() + " " + (kRoot / "doctored").string(),
                &out) == 4);
  CHECK(out.find("[FAIL]") != std::string::npos);
}

TEST_CASE("cli: structural subcommands round-trip their headline numbers") {
  workspace();
  // frame point of the tilted walk: y = x (phi1 - 1) / (phi1 + x/e) at phi1 = 0.49
  spit(kRoot / "kpz.cfg",
       "family.kind = tilted\nfamily.x = 3.0\nfamily.y = -0.960067273373553\n"
       "ensemble.fugacity = 0.49, 0.51\nsim.N = 64\nsim.gamma = 0.5\nsim.c = 0.25\n"
       "sim.T = 0.02\nsim.seed = 11\nsim.replicas = 2\nsim.record_count = 2\n"
       "fields.modes = 1\nfields.traveling = true\nspde.modes = 8\nspde.dt = 0.001\n"
       "decouple.grid = 4096\n");
  const std::string cfg = (kRoot / "kpz.cfg").string();

  REQUIRE(run_cli("frame solve -c " + cfg + " -o " + (kRoot / "fr").string()) == 0);
  const auto fr = nlohmann::json::parse(slurp(kRoot / "fr" / "frame.json"));
  CHECK(fr.at("holds") == true);
  // lambda = Z / e with Z = e + x phi1 + y phi2
  const double Z = std::exp(1.0) + 3.0 * 0.49 - 0.960067273373553 * 0.51;
  CHECK(fr.at("lambda").get<double>() == doctest::Approx(Z / std::exp(1.0)).epsilon(1e-9));

  REQUIRE(run_cli("coupling build -c " + cfg + " -o " + (kRoot / "cp").string()) == 0);
  const auto cp = nlohmann::json::parse(slurp(kRoot / "cp" / "coupling.json"));
  CHECK(cp.at("trilinear_residual").get<double>() < 1e-8);

  REQUIRE(run_cli("decouple scan -c " + cfg + " -o " + (kRoot / "dc").string()) == 0);
  const auto dc = nlohmann::json::parse(slurp(kRoot / "dc" / "decouple.json"));
  CHECK(dc.at("classification") == "not fully decoupleable");
  CHECK(dc.at("min_max_margin").get<double>() > 0);
  CHECK(dc.at("partially_decoupleable") == true);

  REQUIRE(run_cli("ensemble dump -c " + cfg + " -o " + (kRoot / "en").string()) == 0);
  const auto en = nlohmann::json::parse(slurp(kRoot / "en" / "ensemble.json"));
  CHECK(en.at("partition").get<double>() == doctest::Approx(Z).epsilon(1e-10));

  REQUIRE(run_cli("fields -c " + cfg + " -o " + (kRoot / "ft").string()) == 0);
  const auto ft = nlohmann::json::parse(slurp(kRoot / "ft" / "fields.json"));
  CHECK(ft.at("fourier").at("1").at("cos").at("l2").get<double>() == doctest::Approx(0.5));

  // gamma = 1/2 particle + reference smoke, sharing the frame certificate
  REQUIRE(run_cli("simulate -c " + cfg + " -o " + (kRoot / "kpart").string()) == 0);
  REQUIRE(run_cli("spde run -c " + cfg + " -o " + (kRoot / "kref").string()) == 0);
  CHECK(fs::exists(kRoot / "kpart" / "summary.csv"));
  CHECK(fs::exists(kRoot / "kref" / "summary.csv"));
}

TEST_CASE("cli: diagnostics emit decay tables with in-window slopes") {
  workspace();
  spit(kRoot / "diag.cfg",
       "family.kind = bump\nfamily.c = 0.1\nensemble.density = 0.9\nsim.N = 48\n"
       "sim.gamma = 1\nsim.c = 0.35\nsim.T = 0.15\nsim.seed = 3\neoe.ells = 2,4,8\n"
       "bg.ells = 2,4\nbg.replicas = 3\nbg.mode = 1\n");
  const std::string cfg = (kRoot / "diag.cfg").string();

  REQUIRE(run_cli("diagnose eoe -c " + cfg + " -o " + (kRoot / "eoe").string()) == 0);
  const auto eoe = nlohmann::json::parse(slurp(kRoot / "eoe" / "eoe.json"));
  const double s1 = eoe.at("slope_first").get<double>();
  const double s2 = eoe.at("slope_second").get<double>();
  CHECK(s1 < -0.5);
  CHECK(s1 > -1.5);
  CHECK(s2 < -1.0);
  CHECK(s2 > -2.0);

  REQUIRE(run_cli("diagnose bg -c " + cfg + " -o " + (kRoot / "bg").string()) == 0);
  const auto bg = nlohmann::json::parse(slurp(kRoot / "bg" / "bg.json"));
  CHECK(bg.at("best_estimate").get<double>() >= 0);
  CHECK(fs::exists(kRoot / "bg" / "bg.csv"));
}
