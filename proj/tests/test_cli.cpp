#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hydrolab/cli.hpp"

namespace fs = std::filesystem;
using namespace hydrolab;
using namespace hydrolab::cli;

namespace {

std::string binary() {
  const char* b = std::getenv("HYDROLAB_BIN");
  return b ? b : "./hydrolab";
}

/// Fresh scratch directory per test.
fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hydrolab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result run(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + binary() + "' " + args + " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "stdout.txt");
  r.err = slurp(dir / "stderr.txt");
  return r;
}

fs::path run_dir(const fs::path& dir, const Result& r) {
  std::string line = r.out.substr(0, r.out.find('\n'));
  return fs::path(line).is_absolute() ? fs::path(line) : dir / line;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, std::string> files_of(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(fmt(0.1), "0.1");
  EXPECT_EQ(fmt(2.0), "2");
  EXPECT_EQ(fmt(1e-300), "1e-300");
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(fmt(std::int64_t{-42}), "-42");
  EXPECT_EQ(hex64(fnv1a64("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
}

TEST(Params, ParsingAndDefaults) {
  const std::vector<KeySpec> keys{{"x", "", "1.5"}, {"grid", "", "", true}, {"n", "", "3"}, {"flag", "", "false"}};
  Params p({{"grid", "0:1:0.25"}}, keys);
  EXPECT_EQ(p.real("x"), 1.5);
  EXPECT_EQ(p.integer("n"), 3);
  EXPECT_FALSE(p.flag("flag"));
  const auto g = p.reals("grid");
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_EQ(p.echo()["x"], 1.5);

  Params bad({{"grid", "1,2,x"}, {"n", "2.5"}, {"x", "1e400"}}, keys);
  EXPECT_THROW(bad.reals("grid"), ValidationError);
  EXPECT_THROW(bad.integer("n"), ValidationError);
  EXPECT_THROW(bad.real("x"), ValidationError);
  Params missing({}, keys);
  try {
    missing.reals("grid");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.key(), "grid");
  }
  Params range({{"grid", "2:1:0.5"}}, keys);
  EXPECT_THROW(range.reals("grid"), ValidationError);
}

TEST(Cli, ThermoLinearSigmaEqualsDensity) {
  const auto dir = scratch("thermo");
  const auto r = run(dir, "thermo --rate linear --lambda 0:2:0.1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = run_dir(dir, r);
  const auto rows = read_csv(out / "thermo.csv");
  ASSERT_EQ(rows[0], (std::vector<std::string>{"lambda", "Z", "R", "sigma"}));
  ASSERT_EQ(rows.size(), 22u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double lambda = std::stod(rows[i][0]);
    EXPECT_NEAR(std::stod(rows[i][3]), lambda, 1e-10);
    EXPECT_NEAR(std::stod(rows[i][1]), std::exp(lambda), 1e-12 * std::exp(lambda));
    EXPECT_NEAR(std::stod(rows[i][2]), lambda, 1e-12);
  }
  const auto manifest = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["subcommand"], "thermo");
  EXPECT_EQ(manifest["config"]["rate"], "linear");
  EXPECT_EQ(out.filename().string(), "thermo-" + manifest["manifest_hash"].get<std::string>());
  for (const auto& [name, sum] : manifest["checksums"].items()) EXPECT_EQ(hex64(fnv1a64(slurp(out / name))), sum);
  const auto meta = json::parse(slurp(out / "thermo.json"));
  EXPECT_NEAR(meta["lambda_est"].get<double>(), 1.0, 1e-6);
}

TEST(Cli, EnsemblesIndicatorClosedForm) {
  const auto dir = scratch("ensembles");
  const auto r = run(dir, "ensembles --rate indicator --ell 2,4,8,16,32 --m 1 --dim 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = run_dir(dir, r);
  const auto rows = read_csv(out / "ensembles.csv");
  ASSERT_EQ(rows[0], (std::vector<std::string>{"ell", "n_sites", "S", "canonical_E", "sigma_at_density", "abs_error"}));
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double n = std::stod(rows[i][1]), S = std::stod(rows[i][2]);
    EXPECT_NEAR(std::stod(rows[i][5]), S / ((S + n - 1) * (S + n)), 1e-12);
  }
  EXPECT_EQ(read_csv(out / "llt.csv").size(), 6u);
}

TEST(Cli, MissingRequiredKeyWritesNothing) {
  const auto dir = scratch("missing");
  const auto r = run(dir, "hydro --rate linear --replicas 4");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("N"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out"));

  const auto r2 = run(dir, "ensembles --ell 2,4 --m 1");
  EXPECT_EQ(r2.code, 1);
  EXPECT_NE(r2.err.find("rate"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, ValidationAndNumericalExitCodes) {
  const auto dir = scratch("codes");
  auto r = run(dir, "pde --rate linear --M 64 --times 0.1 --amplitude 1.2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("amplitude"), std::string::npos);
  r = run(dir, "simulate --rate nosuchrate --N 8 --times 0.1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("rate"), std::string::npos);
  r = run(dir, "rwreturn --dim 3");
  EXPECT_EQ(r.code, 1);
  r = run(dir, "thermo --rate linear --lambda 0,1 --bogus 3");
  EXPECT_EQ(r.code, 1);
  r = run(dir, "");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(dir / "out"));

  // density 60 needs far more than 16 series terms
  r = run(dir, "thermo --rate linear --lambda 60 --k_max 16");
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, ConfigFileAndOverrides) {
  const auto dir = scratch("config");
  std::ofstream(dir / "cfg.json") << R"({"rate": "linear", "lambda": [0, 0.5, 1.0], "k_max": 256})";
  auto r = run(dir, "thermo --config cfg.json");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_csv(run_dir(dir, r) / "thermo.csv").size(), 4u);

  r = run(dir, "thermo --config cfg.json --lambda 0.25,0.75");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(run_dir(dir, r) / "thermo.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "0.25");

  // flags and file yield the same manifest, hence the same directory
  r = run(dir, "thermo --rate linear --lambda 0,0.5,1 --k_max 256");
  auto r_file = run(dir, "thermo --config cfg.json");
  EXPECT_EQ(r.out, r_file.out);

  std::ofstream(dir / "bad.json") << R"({"rate": "linear", "lambda": [0, 1], "unknown": 1})";
  r = run(dir, "thermo --config bad.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown"), std::string::npos);
  std::ofstream(dir / "broken.json") << R"({"rate": )";
  EXPECT_EQ(run(dir, "thermo --config broken.json").code, 1);
}

TEST(Cli, HelpDocumentsEveryKey) {
  const auto dir = scratch("help");
  const auto top = run(dir, "--help");
  EXPECT_EQ(top.code, 0);
  EXPECT_NE(top.out.find("HYDROLAB_THREADS"), std::string::npos);
  for (const auto& sub : subcommands()) {
    const auto r = run(dir, sub.name + " --help");
    EXPECT_EQ(r.code, 0);
    for (const auto& k : sub.keys) EXPECT_NE(r.out.find("--" + k.name), std::string::npos) << sub.name << " " << k.name;
    EXPECT_NE(r.out.find("--config"), std::string::npos);
    EXPECT_NE(r.out.find("--threads"), std::string::npos);
  }
}

TEST(Cli, EverySubcommandWritesItsSchema) {
  const auto dir = scratch("schemas");
  struct Case {
    std::string args;
    std::string file;
    std::string header;
  };
  const std::vector<Case> cases{
      {"simulate --rate piecewise --N 16 --times 0,0.01 --events true", "snapshot_1.csv", "site_index,eta"},
      {"simulate --rate linear --N 8 --times 0.01 --events true", "events.csv", "t,site_from,site_to,tag"},
      {"couple --rate linear --N 16 --replicas 4 --times 0.01,0.02", "coupling.csv", "replica,t,l1,jump_distance"},
      {"pde --rate piecewise --M 32 --times 0.01,0.02", "profiles.csv", "# t=0.01"},
      {"hydro --rate linear --N 8,16 --replicas 4 --bootstrap 10 --pde_min_points 32", "hydro.csv",
       "N,t,w1_mean,w1_stderr,fourier_gap_mean,fourier_gap_stderr"},
      {"hydro --rate linear --N 8,16 --replicas 4 --bootstrap 10 --pde_min_points 32", "profiles.csv", "N,t,u,empirical,pde"},
      {"rwreturn --dim 2 --max_exp 6 --replicas 100", "survival.csv", "n,survival"},
      {"jumps --beta 0.25 --tN2 100,400 --replicas 200", "jumps.csv", "tN2,beta,threshold,replicas,hits,tail,chernoff_bound"},
  };
  for (const auto& c : cases) {
    const auto r = run(dir, c.args);
    ASSERT_EQ(r.code, 0) << c.args << "\n" << r.err;
    const std::string body = slurp(run_dir(dir, r) / c.file);
    EXPECT_EQ(body.substr(0, body.find('\n')), c.header) << c.args;
    EXPECT_EQ(body.find('\r'), std::string::npos);
    EXPECT_TRUE(fs::exists(run_dir(dir, r) / "manifest.json"));
  }
}

TEST(Cli, CoupledOneJumpStartKeepsDistanceTwo) {
  const auto dir = scratch("couple");
  const auto r = run(dir, "couple --rate indicator --N 16 --replicas 20 --times 0.005,0.01,0.02");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(run_dir(dir, r) / "coupling.csv");
  ASSERT_EQ(rows.size(), 1u + 20u * 4u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const int l1 = std::stoi(rows[i][2]);
    EXPECT_TRUE(l1 == 0 || l1 == 2);
    EXPECT_EQ(l1 == 0, std::stoi(rows[i][3]) == 0);
  }
  EXPECT_EQ(json::parse(slurp(run_dir(dir, r) / "couple.json"))["l1_increases"], 0);
}

TEST(Cli, DeterministicAcrossRunsAndWorkerCounts) {
  const auto dir = scratch("determinism");
  const std::vector<std::string> commands{
      "hydro --rate piecewise --N 8,16 --replicas 6 --bootstrap 20 --pde_min_points 32",
      "couple --rate linear --N 16 --replicas 9 --times 0.01",
      "rwreturn --dim 1 --max_exp 8 --replicas 3000",
      "jumps --beta 0.9 --tN2 20 --replicas 3000 --mode uniform --g2 2",
      "simulate --rate indicator --N 12 --times 0.02 --events true",
  };
  for (const auto& cmd : commands) {
    const auto a = run(dir, cmd + " --threads 1");
    ASSERT_EQ(a.code, 0) << a.err;
    const auto first = files_of(run_dir(dir, a));
    const auto b = run(dir, cmd, "HYDROLAB_THREADS=3");
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(a.out, b.out) << cmd;
    EXPECT_EQ(files_of(run_dir(dir, b)), first) << cmd;
    const auto c = run(dir, cmd + " --seed 99 --threads 2");
    EXPECT_NE(c.out, a.out);
  }
}

TEST(Cli, LocaleDoesNotChangeOutput) {
  const auto dir = scratch("locale");
  const auto a = run(dir, "thermo --rate piecewise --lambda 0.5,1.5");
  const auto first = files_of(run_dir(dir, a));
  const auto b = run(dir, "thermo --rate piecewise --lambda 0.5,1.5", "LC_ALL=de_DE.UTF-8 LANG=de_DE.UTF-8");
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(files_of(run_dir(dir, b)), first);
  EXPECT_NE(first.at("thermo.csv").find("0.5,"), std::string::npos);
}
