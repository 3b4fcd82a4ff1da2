#include <gtest/gtest.h>

#include <anerf/image.hpp>
#include <cstdlib>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "anerf_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(ANERF_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kTiny =
    "--preset ci --set data.frames=8 --set data.eval_views=3 --set data.train_actors=2 --set data.test_actors=1 ";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    ASSERT_EQ(run("gen-data " + kTiny + "--out " + (kRoot / "ds").string()), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
  static std::string data() { return "--data " + (kRoot / "ds").string() + " "; }
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("pretrain --no-such-flag"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("pretrain --set model.nope=1 " + data()), 2);
  EXPECT_EQ(run("pretrain --ablation no-wings " + data()), 2);
  EXPECT_EQ(run("finetune " + data()), 2);
}

TEST_F(Cli, NumericFailureExitsThreeWithStep) {
  const auto out = kRoot / "nan";
  const std::string cmd = std::string(ANERF_CLI) + " pretrain " + kTiny + data() + "--steps 4 --set train.lr=1e300 --out " +
                          out.string() + " 2>&1 >/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  std::string err;
  char buf[256];
  while (fgets(buf, sizeof buf, p)) err += buf;
  const int status = pclose(p);
  EXPECT_EQ(WEXITSTATUS(status), 3) << err;
  EXPECT_NE(err.find("step 1"), std::string::npos) << err;
}

TEST_F(Cli, PretrainIsReproducibleAndWritesConfigHash) {
  for (const char* name : {"a", "b"}) {
    ASSERT_EQ(run("pretrain " + kTiny + data() + "--steps 3 --seed 0 --out " + (kRoot / name).string()), 0);
  }
  EXPECT_EQ(anerf::read_file(kRoot / "a" / "pretrain.ckpt"), anerf::read_file(kRoot / "b" / "pretrain.ckpt"));
  const json run_record = json::parse(anerf::read_file(kRoot / "a" / "pretrain.run.json"));
  EXPECT_EQ(run_record["config_hash"].get<std::string>().size(), 16u);
  int steps = 0;
  std::istringstream log(anerf::read_file(kRoot / "a" / "pretrain.log.jsonl"));
  for (std::string line; std::getline(log, line);) {
    const json r = json::parse(line);
    EXPECT_TRUE(r.contains("time"));
    steps += r["event"] == "step";
  }
  EXPECT_EQ(steps, 3);
}

TEST_F(Cli, FinetuneEvalReportsEveryHoldoutView) {
  const auto out = kRoot / "ft";
  ASSERT_EQ(run("pretrain " + kTiny + data() + "--steps 2 --out " + out.string()), 0);
  ASSERT_EQ(run("finetune " + kTiny + data() + "--steps 2 --shots 5 --actor actor_02 --checkpoint " +
                (out / "pretrain.ckpt").string() + " --out " + out.string()),
            0);
  ASSERT_EQ(run("eval " + data() + "--checkpoint " + (out / "finetune_actor_02.ckpt").string() + " --out " + out.string()), 0);
  const json report = json::parse(anerf::read_file(out / "eval_actor_02.json"));
  EXPECT_EQ(report["views"].size(), 3u);
  EXPECT_EQ(report["shots"], 5);
  EXPECT_EQ(report["config_hash"].get<std::string>().size(), 16u);
  ASSERT_EQ(run("render " + data() + "--checkpoint " + (out / "finetune_actor_02.ckpt").string() + " --out " +
                (out / "render").string()),
            0);
  EXPECT_EQ(std::distance(fs::directory_iterator(out / "render" / "actor_02"), fs::directory_iterator{}), 3);
}

TEST_F(Cli, EvalOfGroundTruthAgainstItselfHitsCap) {
  const auto out = kRoot / "gt";
  ASSERT_EQ(run("eval " + data() + "--actor actor_02 --pred " + (kRoot / "ds" / "actor_02" / "frames").string() +
                " --out " + out.string()),
            0);
  const json report = json::parse(anerf::read_file(out / "eval_actor_02.json"));
  EXPECT_EQ(report["mean_psnr"].get<double>(), 99.0);
  EXPECT_NEAR(report["mean_ssim"].get<double>(), 1.0, 1e-12);
}
