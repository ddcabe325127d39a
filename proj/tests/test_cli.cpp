#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "gasnext/image.hpp"
#include "support.hpp"

using gasnext::testing::read_file;
using gasnext::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int status = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(GASNEXT_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

const char* kTiny =
    "--set generator.resolution=16 --set generator.base_width=4 --set generator.style_vector_dim=8 "
    "--set generator.max_width=16 --set generator.m_default=2 --set discriminator.patch_size=8 "
    "--set discriminator.base_width=4 --set train.batch_size=4";

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    auto r = run("prepare -o " + (dir_->path() / "corpus").string() + " --styles 2 --glyphs 6 --resolution 16");
    ASSERT_EQ(r.status, 0) << r.output;
    r = run("train --corpus " + (dir_->path() / "corpus").string() + " -o " + (dir_->path() / "run").string() +
            " --steps 20 " + kTiny);
    ASSERT_EQ(r.status, 0) << r.output;
  }
  static void TearDownTestSuite() { delete dir_; }

  static fs::path root() { return dir_->path(); }
  static fs::path checkpoint() { return root() / "run" / "checkpoints" / "last.ckpt"; }
  static fs::path style_dir() { return root() / "corpus" / "styles" / "style_00"; }

  static inline TempDir* dir_ = nullptr;
};

}  // namespace

TEST_F(CliTest, TrainWritesOneRecordPerStep) {
  const auto log = read_file(root() / "run" / "log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 20);
  EXPECT_NE(log.find("\"step\":20"), std::string::npos);
  EXPECT_TRUE(fs::exists(checkpoint()));
  EXPECT_TRUE(fs::exists(root() / "run" / "config.json"));
}

TEST_F(CliTest, UnknownConfigKeyExitsWithOne) {
  auto r = run("train --corpus " + (root() / "corpus").string() + " -o " + (root() / "bad").string() +
               " --set loss_weights.l1_grey=1");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("l1_grey"), std::string::npos) << r.output;
}

TEST_F(CliTest, MissingCorpusExitsWithTwo) {
  auto r = run("train --corpus " + (root() / "nowhere").string() + " -o " + (root() / "bad2").string() + " " + kTiny);
  EXPECT_EQ(r.status, 2) << r.output;
}

TEST_F(CliTest, GenerateIsReproducible) {
  std::string content;
  int count = 0;
  for (const auto& e : fs::directory_iterator(root() / "corpus" / "content")) {
    if (count++ < 3) content += " " + e.path().string();
  }
  auto gen = [&](const std::string& out) {
    return run("generate --checkpoint " + checkpoint().string() + " --content" + content + " --style-dir " +
               style_dir().string() + " --seed 4 -o " + (root() / out).string());
  };
  auto a = gen("gen_a");
  ASSERT_EQ(a.status, 0) << a.output;
  auto b = gen("gen_b");
  ASSERT_EQ(b.status, 0) << b.output;
  int files = 0;
  for (const auto& e : fs::directory_iterator(root() / "gen_a" / "glyphs")) {
    ++files;
    const auto other = root() / "gen_b" / "glyphs" / e.path().filename();
    EXPECT_EQ(read_file(e.path()), read_file(other)) << e.path();
    auto img = gasnext::read_png(e.path());
    EXPECT_EQ(img.width, 16);
    EXPECT_EQ(img.height, 16);
  }
  EXPECT_EQ(files, 3);
  EXPECT_TRUE(fs::exists(root() / "gen_a" / "grid.png"));
  EXPECT_EQ(read_file(root() / "gen_a" / "grid.png"), read_file(root() / "gen_b" / "grid.png"));
}

TEST_F(CliTest, GenerateRejectsTooManyReferences) {
  auto r = run("generate --checkpoint " + checkpoint().string() + " --content " + (root() / "corpus" / "content").string() +
               " --style-dir " + style_dir().string() + " -m 50 -o " + (root() / "gen_bad").string());
  EXPECT_EQ(r.status, 1) << r.output;
}

TEST_F(CliTest, EvalOnIdenticalDirectories) {
  auto r = run("eval --generated " + style_dir().string() + " --truth " + style_dir().string() + " -o " +
               (root() / "eval").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto json = read_file(root() / "eval" / "report.json");
  EXPECT_NE(json.find("\"ssim_mean\": 1"), std::string::npos) << json;
  EXPECT_NE(json.find("\"pix_acc_mean\": 1"), std::string::npos) << json;
}

TEST_F(CliTest, EvalWithoutPairsFails) {
  auto r = run("eval --generated " + style_dir().string() + " --truth " + (root() / "run").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("no matching image pairs"), std::string::npos) << r.output;
}

TEST_F(CliTest, HelpListsConfigKeys) {
  auto r = run("train --help");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.output.find("loss_weights.l1_gray"), std::string::npos);
}

TEST_F(CliTest, FinetuneStartsFromCheckpointSettings) {
  // No --set flags: the architecture comes from the checkpoint.
  auto r = run("finetune --checkpoint " + checkpoint().string() + " --style-dir " +
               (root() / "corpus" / "styles" / "style_01").string() + " --corpus " + (root() / "corpus").string() +
               " --steps 2 -o " + (root() / "ft").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("reference l1"), std::string::npos);
  EXPECT_TRUE(fs::exists(root() / "ft" / "checkpoints" / "last.ckpt"));
}

TEST_F(CliTest, ResumeRunsRemainingSteps) {
  auto r = run("train --resume " + checkpoint().string() + " --corpus " + (root() / "corpus").string() +
               " --steps 23 -o " + (root() / "resumed").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto log = read_file(root() / "resumed" / "log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_NE(log.find("\"step\":23"), std::string::npos);
}
