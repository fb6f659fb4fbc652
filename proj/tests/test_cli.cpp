#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MSMIV_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string write_config(const std::string& name, json cfg) {
  if (cfg.contains("dgp") && cfg["dgp"].is_string()) cfg["dgp"] = testutil::data(cfg["dgp"].get<std::string>());
  const std::string path = testutil::scratch(name + ".json");
  std::ofstream(path) << cfg.dump(2);
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  for (std::string s; std::getline(in, s);) out.push_back(s);
  return out;
}

std::string out_dir(const std::string& name) {
  const std::string d = testutil::scratch(name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("simulate: deterministic across runs and thread counts; n*J rows plus header") {
  const auto cfg = write_config("sim", {{"dgp", "desk_dgp.json"}, {"n", 700}, {"seed", 4}});
  const auto a = out_dir("sim_a"), b = out_dir("sim_b");
  REQUIRE(run("simulate --config " + cfg + " --out " + a + " --threads 1") == 0);
  REQUIRE(run("simulate --config " + cfg + " --out " + b + " --threads 3") == 0);
  CHECK(slurp(a + "/panel.csv") == slurp(b + "/panel.csv"));
  CHECK(slurp(a + "/provenance.json") == slurp(b + "/provenance.json"));
  CHECK(lines(a + "/panel.csv").size() == 700 * 2 + 1);
  const json prov = json::parse(slurp(a + "/provenance.json"));
  CHECK(prov.contains("config_hash"));
  CHECK(prov.at("seed") == 4);
}

TEST_CASE("simulate: MSM_IV_THREADS fallback gives the same bytes") {
  const auto cfg = write_config("sim_env", {{"dgp", "desk_dgp.json"}, {"n", 300}, {"seed", 8}});
  const auto a = out_dir("sim_env_a"), b = out_dir("sim_env_b");
  REQUIRE(run("simulate --config " + cfg + " --out " + a) == 0);
  const std::string env = "MSM_IV_THREADS=2 " + std::string(MSMIV_CLI) + " simulate --config " + cfg + " --out " + b;
  REQUIRE(std::system((env + " > /dev/null 2>&1").c_str()) == 0);
  CHECK(slurp(a + "/panel.csv") == slurp(b + "/panel.csv"));
}

TEST_CASE("simulate: n = 0 writes the header only") {
  const auto cfg = write_config("sim0", {{"dgp", "desk_dgp.json"}, {"n", 0}, {"seed", 1}});
  const auto d = out_dir("sim0");
  REQUIRE(run("simulate --config " + cfg + " --out " + d) == 0);
  CHECK(lines(d + "/panel.csv").size() == 1);
}

TEST_CASE("config errors exit 2 before any work") {
  const auto d = out_dir("bad");
  const auto unknown = write_config("bad_est", {{"dgp", "desk_dgp.json"}, {"n", 100}, {"seed", 1}, {"estimators", {"iv_magic"}}});
  CHECK(run("fit --config " + unknown + " --out " + d) == 2);
  CHECK_FALSE(fs::exists(d + "/estimates.csv"));
  const auto noseed = write_config("bad_seed", {{"dgp", "desk_dgp.json"}, {"n", 100}});
  CHECK(run("simulate --config " + noseed + " --out " + d) == 2);
  const auto typo = write_config("bad_key", {{"dgp", "desk_dgp.json"}, {"n", 100}, {"seed", 1}, {"replicatons", 3}});
  CHECK(run("simulate --config " + typo + " --out " + d) == 2);
  const auto zero_r = write_config("bad_r", {{"dgp", "desk_dgp.json"}, {"n", 100}, {"seed", 1}, {"replications", 0}});
  CHECK(run("robustness --config " + zero_r + " --out " + d) == 2);
  CHECK(run("simulate --config " + testutil::scratch("missing.json")) == 2);
  CHECK(run("simulate") == 2);
  CHECK(run("simulate --config " + unknown + " --threads 0") == 2);
}

TEST_CASE("--validate checks the config without writing output") {
  const auto good = write_config("val", {{"dgp", "desk_dgp.json"}, {"n", 100}, {"seed", 1}});
  const auto d = out_dir("val");
  CHECK(run("fit --config " + good + " --out " + d + " --validate") == 0);
  CHECK_FALSE(fs::exists(d + "/estimates.csv"));
  const auto bad = write_config("val_bad", {{"dgp", "desk_dgp.json"}, {"n", 100}, {"seed", 1}, {"estimators", {"nope"}}});
  CHECK(run("fit --config " + bad + " --validate") == 2);
}

TEST_CASE("oracle: desk and perfect compliance pass; the U-dependent delta spec exits 4 naming the contrast check") {
  const auto d = out_dir("oracle_desk");
  REQUIRE(run("oracle --config " + write_config("o1", {{"dgp", "desk_dgp.json"}, {"seed", 1}}) + " --out " + d) == 0);
  const json desk = json::parse(slurp(d + "/oracle.json"));
  CHECK(desk.at("pass") == true);
  CHECK(desk.contains("config_hash"));

  const auto p = out_dir("oracle_pc");
  REQUIRE(run("oracle --config " + write_config("o2", {{"dgp", "perfect_compliance.json"}, {"seed", 1}}) + " --out " + p) == 0);
  const json pc = json::parse(slurp(p + "/oracle.json"));
  CHECK(pc.at("pass") == true);
  CHECK(pc.at("collapse").at("iv_weights_equal_sra_weights") == true);
  CHECK(pc.at("collapse").at("iv_ipw_equals_sra_ipw") == true);

  const auto v = out_dir("oracle_udelta");
  CHECK(run("oracle --config " + write_config("o3", {{"dgp", "delta_depends_on_u.json"}, {"seed", 1}}) + " --out " + v) == 4);
  const json ud = json::parse(slurp(v + "/oracle.json"));
  CHECK(ud.at("pass") == false);
  CHECK(ud.at("lemma1").at("pass") == false);
  CHECK_FALSE(ud.at("lemma1").at("failing_cells").empty());
}

TEST_CASE("fit: one row per requested estimator with a shared fingerprint") {
  const auto one = out_dir("fit1");
  REQUIRE(run("fit --config " +
              write_config("fit1", {{"dgp", "desk_dgp.json"}, {"n", 3000}, {"seed", 2}, {"estimators", {"iv_ipw"}}}) +
              " --out " + one) == 0);
  CHECK(lines(one + "/estimates.csv").size() == 2);

  const auto all = out_dir("fit5");
  REQUIRE(run("fit --config " + write_config("fit5", {{"dgp", "desk_dgp.json"}, {"n", 3000}, {"seed", 2}}) + " --out " +
              all) == 0);
  const json est = json::parse(slurp(all + "/estimates.json"));
  REQUIRE(est.at("estimates").size() == 5);
  const auto fp = est["estimates"][0].at("nuisance_fingerprint");
  for (const auto& e : est["estimates"]) CHECK(e.at("nuisance_fingerprint") == fp);
  CHECK(lines(all + "/estimates.csv").size() == 6);
}

TEST_CASE("fit: reads a panel written by simulate") {
  const auto sim = out_dir("fit_panel_sim");
  REQUIRE(run("simulate --config " + write_config("fps", {{"dgp", "desk_dgp.json"}, {"n", 2000}, {"seed", 6}}) +
              " --out " + sim) == 0);
  const auto d = out_dir("fit_panel");
  json cfg = {{"panel", sim + "/panel.csv"}, {"schema", {{"l_cols", {"L"}}, {"v_cols", {"L"}}}}, {"seed", 6}, {"estimators", {"sra_ipw"}}};
  const int rc = run("fit --config " + write_config("fp", cfg) + " --out " + d);
  CHECK(rc == 0);
  CHECK(lines(d + "/estimates.csv").size() == 2);
}

TEST_CASE("robustness: iv_ipw is unbiased only where the IV weights are correct") {
  const auto d = out_dir("rob");
  REQUIRE(run("robustness --config " +
              write_config("rob", {{"dgp", "desk_dgp.json"}, {"n", 400}, {"replications", 2}, {"seed", 3},
                                   {"estimators", {"iv_ipw", "iv_mr", "sra_ipw"}}}) +
              " --out " + d) == 0);
  const auto rows = lines(d + "/robustness.csv");
  REQUIRE(rows.size() > 1);
  std::map<std::pair<std::string, std::string>, double> worst;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::stringstream ss(rows[r]);
    std::string pattern, est, coord, feat, bias;
    std::getline(ss, pattern, ',');
    std::getline(ss, est, ',');
    std::getline(ss, coord, ',');
    std::getline(ss, feat, ',');
    std::getline(ss, bias, ',');
    auto& w = worst[{pattern, est}];
    w = std::max(w, std::abs(std::stod(bias)));
  }
  for (const std::string p : {"all_correct", "i_only"}) CHECK(worst.at({p, "iv_ipw"}) < 1e-6);
  for (const std::string p : {"ii_only", "iii_only", "all_wrong"}) CHECK(worst.at({p, "iv_ipw"}) > 1e-3);
  for (const std::string p : {"all_correct", "i_only", "ii_only", "iii_only"}) CHECK(worst.at({p, "iv_mr"}) < 1e-6);
  CHECK(worst.at({"all_wrong", "iv_mr"}) > 1e-2);
  for (const std::string p : {"all_correct", "i_only", "ii_only", "iii_only", "all_wrong"})
    CHECK(worst.at({p, "sra_ipw"}) > 0.05);
}
