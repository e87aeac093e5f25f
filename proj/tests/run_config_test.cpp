#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include <regdrop/errors.hpp>

#include "commands.hpp"
#include "run_config.hpp"

using namespace regdrop;
using namespace regdrop::cli;
using nlohmann::json;

namespace {

const std::string kTiny = std::string(REGDROP_TEST_DATA) + "/tiny.json";

json tiny_json() {
  std::ifstream in(kTiny);
  return json::parse(in);
}

std::string config_error(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfigTest, LoadsAndRoundTrips) {
  const RunConfig c = load_run_config(kTiny);
  EXPECT_EQ(c.model.strategy.tag, StrategyTag::victor);
  ASSERT_EQ(c.stages.size(), 2u);
  EXPECT_EQ(c.stages[1].stage, Stage::finetune);
  EXPECT_EQ(c.data.train_count, 200u);
  EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
  EXPECT_NE(c.train_seed(), c.eval_seed());
}

TEST(RunConfigTest, SchemaVersionIsRequired) {
  json j = tiny_json();
  j.erase("schema_version");
  EXPECT_NE(config_error(j).find("schema_version"), std::string::npos);
  j["schema_version"] = 7;
  EXPECT_NE(config_error(j).find("unsupported"), std::string::npos);
}

TEST(RunConfigTest, UnknownKeysAreNamedWithTheirPath) {
  json j = tiny_json();
  j["colour"] = 1;
  EXPECT_NE(config_error(j).find("config.colour"), std::string::npos);
  j = tiny_json();
  j["model"]["strategy"]["budget"] = 8;
  EXPECT_NE(config_error(j).find("model.strategy.budget"), std::string::npos);
  j = tiny_json();
  j["stages"][1]["momentum"] = 0.9;
  EXPECT_NE(config_error(j).find("stages[1].momentum"), std::string::npos);
  j = tiny_json();
  j["sweep"]["strategies"] = {"victor", "sparse"};
  EXPECT_NE(config_error(j).find("sweep.strategies"), std::string::npos);
}

TEST(RunConfigTest, SectionsMustAgree) {
  json j = tiny_json();
  j["data"]["grid"] = 4;
  EXPECT_NE(config_error(j).find("model.grid"), std::string::npos);
  j = tiny_json();
  j["model"]["vocab_size"] = 10;
  EXPECT_NE(config_error(j).find("model.vocab_size"), std::string::npos);
  j = tiny_json();
  j["model"]["strategy"]["drop_layer"] = 9;
  EXPECT_NE(config_error(j).find("drop_layer"), std::string::npos);
}

TEST(RunConfigTest, MissingFileNamesThePath) {
  try {
    load_run_config("/nonexistent/run.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.json"), std::string::npos);
  }
}

TEST(SweepTest, CsvColumns) {
  SweepRow row{"victor", 8, 3, 0.5, 0.625, std::nullopt, 0.2, 512};
  std::istringstream csv(sweep_csv({row}));
  std::string header, line;
  std::getline(csv, header);
  std::getline(csv, line);
  EXPECT_EQ(header, "strategy,M,k,accuracy,normalized_score,tps_ratio,flops_ratio,extra_params");
  EXPECT_EQ(line, "victor,8,3,0.500000,0.625000,,0.200000,512");
}

TEST(SweepTest, SingleCellMatchesAnIndividualRun) {
  RunConfig c = load_run_config(kTiny);
  const auto dir = std::filesystem::temp_directory_path() / "regdrop_sweep_test";
  std::filesystem::remove_all(dir);
  c.output_dir = dir.string();
  c.sweep.tokens = {2};
  c.sweep.drop_layers = {2};
  ASSERT_EQ(cmd_sweep(c, SweepOptions{false}), kExitOk);

  const TrainedRun single = train_and_evaluate(c, c.model);
  std::ifstream in(dir / "sweep" / "victor_M2_k2" / "eval.json");
  EXPECT_EQ(json::parse(in).at("accuracy").get<double>(), single.eval.accuracy);
  std::ifstream csv(dir / "sweep.csv");
  std::string header, base, cell;
  std::getline(csv, header);
  std::getline(csv, base);
  std::getline(csv, cell);
  EXPECT_EQ(base.rfind("baseline,9,3,", 0), 0u);
  EXPECT_EQ(cell.rfind("victor,2,2,", 0), 0u);
  std::filesystem::remove_all(dir);
}

TEST(SweepTest, EmptyListsAreConfigErrors) {
  RunConfig c = load_run_config(kTiny);
  c.sweep.tokens.clear();
  EXPECT_THROW(cmd_sweep(c, SweepOptions{false}), ConfigError);
}
