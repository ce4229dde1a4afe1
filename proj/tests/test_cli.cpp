#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kt/cli.hpp"
#include "kt/errors.hpp"

using namespace kt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kt_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "kt");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string write_config(const fs::path& dir, const std::string& name, const Json& j) {
  const fs::path p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig config_of(const Json& j) { return parse_config(j); }

const Json kExample = {{"model", {{"name", "word_tree"}, {"m", 2}, {"r", 0.5}, {"c", 0.5}, {"eta", 1.0}}},
                       {"horizon", 8}};

}  // namespace

TEST_CASE("config round trip") {
  const auto dir = scratch("roundtrip");
  std::ofstream(dir / "k.csv") << "1.5,1,0,0\n1,1,0,0\n0,0,1,0\n0,0,0,0\n";
  const Json j = {{"models",
                   {{{"name", "word_tree"}, {"m", 3}, {"r", 0.2}, {"base", {"∅", "12"}}, {"base_depth", 1}},
                    {{"name", "finite_state"},
                     {"maps", {{1, 1, 2, 3}, {2, 3, 3, 3}}},
                     {"kernel_csv", "k.csv"},
                     {"certificate", {{"r", {1, 0.5, 0.5, 0}}, {"C", 0.5}, {"beta", 0.5}}}},
                    {{"name", "delta"}, {"m", 3}, {"certificate", false}}}},
                  {"seed", 42},
                  {"tol", 1e-8},
                  {"diagonal", {{"witness", {{"epsilon", 0.5}}}}},
                  {"boundary", {{"nu", {{0.2, 0.3, 0.5}}}}}};
  const auto c = parse_config(j, dir.string());
  CHECK(c.models.size() == 3);
  CHECK(c.models[1].kernel[0][0] == 1.5);
  const Json echo = config_to_json(c);
  const Json again = config_to_json(parse_config(echo));
  CHECK(echo == again);
  CHECK(echo.dump() == again.dump());
  CHECK(echo["models"][1].contains("kernel"));
  CHECK_FALSE(echo["models"][1].contains("kernel_csv"));
  CHECK(config_to_json(parse_config(config_to_json(ExperimentConfig{}))) == config_to_json(ExperimentConfig{}));
}

TEST_CASE("config schema errors are path-qualified") {
  auto message = [](const Json& j) -> std::string {
    try {
      parse_config(j);
    } catch (const InputError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message({{"models", {{{"name", "word_tree"}, {"m", "two"}}}}}).find("models[0].m") != std::string::npos);
  CHECK(message({{"models", {{{"name", "word_tree"}, {"foo", 1}}}}}).find("models[0].foo: unknown key") !=
        std::string::npos);
  CHECK(message({{"model", {{"name", "nope"}}}}).find("model.name") != std::string::npos);
  CHECK(message({{"models", Json::array()}}).find("empty model list") != std::string::npos);
  CHECK(message({{"tol", -1}}).find("tol") != std::string::npos);
  CHECK(message({{"model", {{"name", "finite_state"}, {"maps", {{0}}}}}}).find("kernel") != std::string::npos);
  CHECK(message({{"boundary", {{"nu", {{"x"}}}}}}).find("boundary.nu[0][0]") != std::string::npos);
  ExperimentConfig empty;
  empty.models.clear();
  CHECK_THROWS_AS(cmd_verify(empty), InputError);

  ModelConfig bad;
  bad.base = {"13x"};
  CHECK_THROWS_AS(resolve_model(bad, 1e-9), InputError);
  ModelConfig fs_bad;
  fs_bad.name = "sink_chain";
  fs_bad.base = {"7"};
  CHECK_THROWS_AS(resolve_model(fs_bad, 1e-9), InputError);
}

TEST_CASE("tower command") {
  const auto r = cmd_tower(config_of(kExample));
  CHECK(r.pass());
  const Json& e = r.summary["models"][0]["K_infinity"];
  CHECK(e["certified"] == true);
  const double est = e["estimate"][0][0].get<double>();
  const double bound = e["error_bound"][0][0].get<double>();
  CHECK(bound == doctest::Approx(std::pow(0.5, 9)).epsilon(1e-14));
  CHECK(std::abs(est - 2.0) <= bound * (1 + 1e-12));
  CHECK(r.csv.at("tower.csv").rfind("model_index,model,level,kind,row_label,col_label,value\n", 0) == 0);

  Json inv = kExample;
  inv["model"]["name"] = "word_tree_invariant";
  const auto ri = cmd_tower(config_of(inv));
  CHECK(ri.pass());
  CHECK(ri.summary["models"][0]["K_infinity"]["stop"] == "converged");
  CHECK(ri.summary["models"][0]["K_infinity"]["level"] == 0);

  const Json delta = {{"model", {{"name", "delta"}, {"m", 2}}}, {"horizon", 8}, {"ceiling", 100}};
  CHECK_THROWS_AS(cmd_tower(config_of(delta)), ModelError);
}

TEST_CASE("diagonal command") {
  Json j = kExample;
  j["diagonal"] = {{"witness", {{"epsilon", 1.0}}}};
  const auto r = cmd_diagonal(config_of(j));
  CHECK(r.pass());
  CHECK(r.summary["models"][0]["points"][0]["verdict"] == "converging");
  CHECK(r.csv.at("diagonal.csv").rfind("model_index,model,point_label,level,u_n\n", 0) == 0);

  j["model"] = {{"name", "delta"}, {"m", 2}};
  const auto d = cmd_diagonal(config_of(j));
  const Json& p = d.summary["models"][0]["points"][0];
  CHECK(p["verdict"] == "diverging");
  CHECK(p["witness"]["found"] == true);
  CHECK(p["u"][8] == 256.0);

  j["model"] = {{"name", "word_tree_invariant"}};
  CHECK(cmd_diagonal(config_of(j)).summary["models"][0]["points"][0]["verdict"] == "converging");
}

TEST_CASE("gaussian command") {
  Json j = kExample;
  j["horizon"] = 3;
  j["model"]["base"] = {"∅", "1", "2"};
  CHECK_THROWS_AS(cmd_gaussian(config_of(j)), InputError);
  j["seed"] = 5;
  j["nsamples"] = 20000;
  j["write_samples"] = true;
  const auto r = cmd_gaussian(config_of(j));
  CHECK(r.pass());
  CHECK(r.csv.count("samples.csv") == 1);
  j["threads"] = 3;
  const auto r3 = cmd_gaussian(config_of(j));
  CHECK(r3.csv.at("samples.csv") == r.csv.at("samples.csv"));
  CHECK(r3.csv.at("covariance.csv") == r.csv.at("covariance.csv"));
}

TEST_CASE("boundary command") {
  const auto r = cmd_boundary(config_of(kExample));
  CHECK(r.pass());
  const auto& cyl = r.csv.at("cylinders_0_word_tree.csv");
  CHECK(cyl.rfind("anchor_label,word,probability\n∅,∅,1\n∅,1,0.5\n", 0) == 0);
  const Json& g = r.summary["models"][0]["feature_gram"];
  CHECK(g["choices"].size() == 2);
  CHECK(g["nu_spread"].get<double>() <= 1e-12);

  const Json sink = {{"model", {{"name", "sink_chain"}, {"base", {"0", "1", "2", "3"}}}}, {"horizon", 8}};
  const auto rs = cmd_boundary(config_of(sink));
  CHECK(rs.pass());
  CHECK(rs.summary["models"][0]["gauge"] == "computed");
  CHECK(rs.summary["models"][0]["anchors"].size() == 3);

  const Json delta = {{"model", {{"name", "delta"}, {"m", 2}}}, {"horizon", 4}};
  CHECK_THROWS_AS(cmd_boundary(config_of(delta)), ModelError);
}

TEST_CASE("verify with an injected fault names the telescoping check") {
  ExperimentConfig c = config_of(kExample);
  c.seed = 3;
  CHECK(cmd_verify(c).pass());
  c.inject_fault = true;
  const auto r = cmd_verify(c);
  CHECK_FALSE(r.pass());
  REQUIRE(r.first_failure() != nullptr);
  CHECK(r.first_failure()->identity == "telescoping");
  CHECK(r.first_failure()->residual >= 1e-4);
}

TEST_CASE("command line exit codes and bundles") {
  const auto dir = scratch("exit");
  CHECK(run({"verify", "--out", (dir / "a").string()}) == 0);
  for (const char* f : {"summary.json", "config.json", "tower.csv", "diagonal.csv", "covariance.csv"})
    CHECK(fs::exists(dir / "a" / f));

  // identical config and seed: rerun into the same directory and compare
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(dir / "a")) first[e.path().filename().string()] = slurp(e.path());
  CHECK(run({"verify", "--out", (dir / "a").string(), "--threads", "2"}) == 0);
  for (const auto& [name, contents] : first) {
    INFO(name);
    if (name.ends_with(".json")) continue;  // both echo the thread count
    CHECK(slurp(dir / "a" / name) == contents);
  }
  CHECK(run({"verify", "--out", (dir / "a").string()}) == 0);
  for (const auto& [name, contents] : first) {
    INFO(name);
    CHECK(slurp(dir / "a" / name) == contents);
  }

  Json fault = kExample;
  fault["verify"] = {{"inject_fault", true}};
  fault["seed"] = 1;
  CHECK(run({"verify", "--config", write_config(dir, "fault.json", fault), "--out", (dir / "f").string()}) ==
        kExitCheckFailed);
  const Json summary = Json::parse(slurp(dir / "f" / "summary.json"));
  CHECK(summary["first_failure"]["identity"] == "telescoping");

  const Json delta = {{"model", {{"name", "delta"}, {"m", 2}}}, {"ceiling", 100}};
  CHECK(run({"tower", "--config", write_config(dir, "delta.json", delta), "--out", (dir / "d").string()}) == 3);
  CHECK(run({"gaussian", "--config", write_config(dir, "noseed.json", kExample), "--out", (dir / "g").string()}) ==
        2);
  CHECK(run({"gaussian", "--config", (dir / "noseed.json").string(), "--seed", "4", "--max-level", "3", "--format",
             "csv", "--out", (dir / "g").string()}) == 0);
  CHECK(fs::exists(dir / "g" / "covariance.csv"));
  CHECK_FALSE(fs::exists(dir / "g" / "summary.json"));
  CHECK(run({"tower", "--max-level", "40", "--out", (dir / "r").string()}) == 5);
  CHECK(run({"tower", "--bogus"}) == 2);
  CHECK(run({"tower", "--config", (dir / "missing.json").string()}) == 2);
  CHECK(run({"tower", "--format", "xml"}) == 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run({"tower", "--config", (dir / "broken.json").string()}) == 2);
  Json empty = {{"models", Json::array()}};
  CHECK(run({"verify", "--config", write_config(dir, "empty.json", empty)}) == 2);

  std::set<int> codes;
  for (auto c : {ErrorCategory::input, ErrorCategory::model, ErrorCategory::numerical, ErrorCategory::resource})
    codes.insert(exit_code(c));
  codes.insert(0);
  codes.insert(kExitCheckFailed);
  CHECK(codes.size() == 6);
}
