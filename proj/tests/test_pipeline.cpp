#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "asca/pipeline.hpp"

namespace asca {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("asca_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Runs the CLI from the source tree and returns its exit status.
int run_cli(const std::string& args, const fs::path& stderr_file) {
  const std::string cmd = std::string("cd '") + ASCA_SOURCE_DIR + "' && '" + ASCA_CLI + "' " + args + " > /dev/null 2> '" +
                          stderr_file.string() + "'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run_fixture(const fs::path& out, const std::string& extra = "") {
  return run_cli("fit --config data/fixture/fit.conf --perms 99 --out '" + out.string() + "' " + extra,
                 out.parent_path() / (out.filename().string() + ".err"));
}

TEST(Cli, FixtureRunWritesEveryArtifact) {
  const fs::path dir = scratch("artifacts");
  ASSERT_EQ(run_fixture(dir / "out"), 0);
  for (const char* f : {"asca_table.csv", "asca_table.txt", "residual_diagnostics.csv", "check_qq.csv",
                        "check_boxplots.csv", "check_order.csv", "check_summary.csv", "prep_report.csv",
                        "scores_Responder.csv", "loadings_Responder.csv", "dq_Responder.csv", "scree_Responder.csv",
                        "scores_Patient_Responder.csv", "run_manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "out" / "run_manifest.json"));
  EXPECT_EQ(manifest["seed"], 42);
  EXPECT_EQ(manifest["command"], "fit");
  EXPECT_EQ(manifest["n_samples"], 54);
  EXPECT_EQ(manifest["n_variables"], 112);
  EXPECT_EQ(manifest["permutations"]["count"], 99);
  EXPECT_EQ(manifest["config"]["perms"], "99");
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
  EXPECT_FALSE(fs::exists(dir / "out" / "error.json"));

  const std::string table = slurp(dir / "out" / "asca_table.csv");
  EXPECT_EQ(table.rfind("term,SS,%SS,DoFs,MS,F,p-value\n", 0), 0u) << table;
  EXPECT_NE(table.find("\nPatient(Responder),"), std::string::npos);
  EXPECT_NE(table.find("\nResiduals,"), std::string::npos);
}

TEST(Cli, SameSeedGivesByteIdenticalCsvs) {
  const fs::path dir = scratch("determinism");
  ASSERT_EQ(run_fixture(dir / "a"), 0);
  ASSERT_EQ(run_fixture(dir / "b", "--threads 3"), 0);
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    if (entry.path().extension() != ".csv") continue;
    EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / entry.path().filename())) << entry.path().filename();
    ++compared;
  }
  EXPECT_GE(compared, 10u);
}

TEST(Cli, DifferentSeedChangesOnlyPermutationOutputs) {
  const fs::path dir = scratch("seed");
  ASSERT_EQ(run_fixture(dir / "a"), 0);
  ASSERT_EQ(run_fixture(dir / "b", "--seed 7"), 0);
  EXPECT_EQ(slurp(dir / "a" / "loadings_Responder.csv"), slurp(dir / "b" / "loadings_Responder.csv"));
  EXPECT_EQ(slurp(dir / "a" / "residual_diagnostics.csv"), slurp(dir / "b" / "residual_diagnostics.csv"));
}

TEST(Cli, RaggedCsvExitsWithTwoAndNamesTheLine) {
  const fs::path dir = scratch("ragged");
  std::ofstream(dir / "data.csv") << "sample,v1,v2\ns1,1,2\ns2,3\ns3,4,5\n";
  std::ofstream(dir / "design.csv") << "sample,A\ns1,a\ns2,b\ns3,a\n";
  const fs::path err = dir / "stderr.txt";
  const int code = run_cli("fit --data '" + (dir / "data.csv").string() + "' --design '" + (dir / "design.csv").string() +
                               "' --model A --perms 19 --out '" + (dir / "out").string() + "'",
                           err);
  EXPECT_EQ(code, 2);
  const auto record = nlohmann::json::parse(slurp(dir / "out" / "error.json"));
  EXPECT_EQ(record["error"], "io");
  EXPECT_NE(record["message"].get<std::string>().find("line 3"), std::string::npos) << record.dump();
  EXPECT_NE(slurp(err).find("line 3"), std::string::npos);
}

TEST(Cli, ModelErrorsAreMachineReadable) {
  const fs::path dir = scratch("bad_model");
  const int code = run_cli("fit --config data/fixture/fit.conf --model 'Responder + Nope' --out '" +
                               (dir / "out").string() + "'",
                           dir / "stderr.txt");
  EXPECT_NE(code, 0);
  const auto record = nlohmann::json::parse(slurp(dir / "out" / "error.json"));
  EXPECT_TRUE(record.contains("error"));
  EXPECT_NE(record["message"].get<std::string>().find("Nope"), std::string::npos);
}

TEST(Cli, CheckWritesDiagnosticsOnly) {
  const fs::path dir = scratch("check");
  ASSERT_EQ(run_cli("check --config data/fixture/fit.conf --perms 19 --out '" + (dir / "out").string() + "'",
                    dir / "stderr.txt"),
            0);
  EXPECT_TRUE(fs::exists(dir / "out" / "check_summary.csv"));
  EXPECT_FALSE(fs::exists(dir / "out" / "asca_table.csv"));
  EXPECT_FALSE(fs::exists(dir / "out" / "scores_Responder.csv"));
}

TEST(Cli, PowerSubcommandWritesCurve) {
  const fs::path dir = scratch("power");
  std::ofstream(dir / "power.conf") << "model = A + B\n"
                                       "power.factors = A:3, B:2\n"
                                       "power.effects = A:3\n"
                                       "power.grid = 0, 1\n"
                                       "power.datasets = 4\n"
                                       "power.vars = 3\n"
                                       "perms = 19\n";
  ASSERT_EQ(run_cli("power --config '" + (dir / "power.conf").string() + "' --out '" + (dir / "out").string() + "'",
                    dir / "stderr.txt"),
            0)
      << slurp(dir / "stderr.txt");
  const std::string csv = slurp(dir / "out" / "power_curve.csv");
  EXPECT_EQ(csv.rfind("effect_size,term,power,stderr,completed\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Cli, DumpXMatchesTheCodedModelMatrix) {
  const fs::path dir = scratch("dump_x");
  std::ofstream(dir / "data.csv") << "sample,v1\ns1,1\ns2,2\ns3,3\ns4,4\ns5,5\ns6,6\n";
  std::ofstream(dir / "design.csv") << "sample,A\ns1,a\ns2,b\ns3,c\ns4,a\ns5,b\ns6,c\n";
  ASSERT_EQ(run_cli("fit --dump-x --data '" + (dir / "data.csv").string() + "' --design '" +
                        (dir / "design.csv").string() + "' --model A --perms 19 --scale none --out '" +
                        (dir / "out").string() + "'",
                    dir / "stderr.txt"),
            0)
      << slurp(dir / "stderr.txt");
  EXPECT_EQ(slurp(dir / "out" / "model_matrix.csv"),
            "sample,Intercept,A[1],A[2]\n"
            "s1,1,-1,-1\n"
            "s2,1,1,0\n"
            "s3,1,0,1\n"
            "s4,1,-1,-1\n"
            "s5,1,1,0\n"
            "s6,1,0,1\n");
}

TEST(Config, ParsesKeyValueLinesAndComments) {
  std::istringstream in("# comment\n  perms = 49  \n\nmodel = A + B # trailing\n");
  const ConfigMap map = parse_config(in);
  EXPECT_EQ(map.at("perms"), "49");
  EXPECT_EQ(map.at("model"), "A + B");
  std::istringstream bad("perms 49\n");
  try {
    parse_config(bad, "x.conf");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("x.conf: line 1"), std::string::npos);
  }
}

TEST(Config, BuildsRunConfig) {
  const RunConfig c = make_run_config({{"model", "A"},
                                       {"perms", "49"},
                                       {"strategy", "residual"},
                                       {"coding", "reference"},
                                       {"ss", "type2"},
                                       {"random", "B, C"},
                                       {"sca", "A:1, B"},
                                       {"exclude", "s1, A=a"}});
  EXPECT_EQ(c.plan.n_permutations, 49u);
  EXPECT_EQ(c.plan.strategy, PermutationStrategy::residual_reduced_model);
  EXPECT_EQ(c.coding, CodingScheme::reference);
  EXPECT_EQ(c.ss, SsType::type2);
  EXPECT_EQ(c.design.random_factors, (std::set<std::string>{"B", "C"}));
  ASSERT_EQ(c.sca.size(), 2u);
  EXPECT_EQ(c.sca[0].term, "A");
  EXPECT_EQ(c.sca[0].components, 1u);
  EXPECT_EQ(c.sca[1].components, 2u);
  EXPECT_EQ(c.exclude, (std::vector<std::string>{"s1", "A=a"}));
  EXPECT_FALSE(c.power.has_value());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(make_run_config({{"permutations", "10"}}), Error);
  EXPECT_THROW(make_run_config({{"perms", "10"}}), Error);
  EXPECT_THROW(make_run_config({{"perms", "many"}}), Error);
  EXPECT_THROW(make_run_config({{"coding", "helmert"}}), Error);
  EXPECT_THROW(make_run_config({{"strategy", "constrained"}}), Error);
}

TEST(Config, HashDependsOnContent) {
  EXPECT_EQ(config_hash({{"a", "1"}}), config_hash({{"a", "1"}}));
  EXPECT_NE(config_hash({{"a", "1"}}), config_hash({{"a", "2"}}));
}

TEST(ExitCodes, UsageErrorsAreTwo) {
  EXPECT_EQ(exit_code(ErrorKind::io), 2);
  EXPECT_EQ(exit_code(ErrorKind::invalid_argument), 2);
  EXPECT_EQ(exit_code(ErrorKind::degenerate_data), 3);
}

}  // namespace
}  // namespace asca
