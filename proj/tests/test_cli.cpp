#include <gtest/gtest.h>

#include <charcnn/cli.hpp>

#include <cstdlib>

#include "support.hpp"

using namespace charcnn;
namespace fx = charcnn::fixtures;

namespace {

struct Outcome {
  int status;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "charcnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::vector<std::string> small_model_flags() {
  return {"--max-len", "40", "--embed-dim", "16", "--filters", "2:8,3:8", "--fc-dim", "32", "--batch-size", "8"};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    ::unsetenv("CHARLID_SEED");
    fx::write_dsl(dir.file("train.tsv"), fx::separable_corpus(45, 1));
  }

  Outcome train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--data", dir.file("train.tsv"), "--out", dir.file(out)};
    for (const auto& f : small_model_flags()) args.push_back(f);
    for (auto& e : extra) args.push_back(std::move(e));
    return invoke(args);
  }

  fx::TempDir dir;
};

} // namespace

TEST(Cli, GradcheckPasses) {
  const auto r = invoke({"gradcheck"});
  ASSERT_EQ(r.status, 0) << r.out << r.err;
  const auto pos = r.out.find("max_relative_error\t");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(r.out.substr(pos + 19)), 1e-6);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(invoke({}).status, 1);
  EXPECT_EQ(invoke({"train", "--bogus"}).status, 1);
  EXPECT_EQ(invoke({"frobnicate"}).status, 1);
  EXPECT_EQ(invoke({"baseline", "--kind", "oracle", "--test", "x"}).status, 1);
  EXPECT_EQ(invoke({"--help"}).status, 0);
}

TEST_F(CliTest, MissingFilesExitTwo) {
  EXPECT_EQ(invoke({"train", "--data", dir.file("nope.tsv"), "--out", dir.file("m.ccnn")}).status, 2);
  EXPECT_EQ(invoke({"predict", "--model", dir.file("nope.ccnn"), "--input", dir.file("train.tsv"), "--out",
                    dir.file("p.txt")})
                .status,
            2);
}

TEST_F(CliTest, BadConfigValuesExitOne) {
  EXPECT_EQ(train("m.ccnn", {"--filters", "2-8"}).status, 1);
  EXPECT_EQ(train("m.ccnn", {"--dropout-fc", "1.5"}).status, 1);
  std::ofstream(dir.file("c.json")) << R"({"max_len": 40, "colour": "blue"})";
  EXPECT_EQ(train("m.ccnn", {"--config", dir.file("c.json")}).status, 1);
}

TEST_F(CliTest, TrainIsDeterministic) {
  const auto a = train("a.ccnn", {"--max-epochs", "4", "--seed", "7", "--log", dir.file("a.log")});
  const auto b = train("b.ccnn", {"--max-epochs", "4", "--seed", "7", "--log", dir.file("b.log")});
  ASSERT_EQ(a.status, 0) << a.err;
  ASSERT_EQ(b.status, 0) << b.err;
  EXPECT_EQ(fx::slurp(dir.file("a.ccnn")), fx::slurp(dir.file("b.ccnn")));
  EXPECT_EQ(fx::slurp(dir.file("a.log")), fx::slurp(dir.file("b.log")));
  EXPECT_EQ(lines_of(fx::slurp(dir.file("a.log"))).size(), 4u);
  EXPECT_EQ(lines_of(a.out).front(), "seed\t7");
  const auto c = train("c.ccnn", {"--max-epochs", "4", "--seed", "8"});
  EXPECT_NE(fx::slurp(dir.file("a.ccnn")), fx::slurp(dir.file("c.ccnn")));
}

TEST_F(CliTest, SeedPrecedence) {
  EXPECT_EQ(lines_of(train("m.ccnn", {"--max-epochs", "1"}).out).front(), "seed\t42");
  ::setenv("CHARLID_SEED", "99", 1);
  EXPECT_EQ(lines_of(train("m.ccnn", {"--max-epochs", "1"}).out).front(), "seed\t99");
  std::ofstream(dir.file("c.json")) << R"({"seed": 5, "max_epochs": 1})";
  EXPECT_EQ(lines_of(train("m.ccnn", {"--config", dir.file("c.json")}).out).front(), "seed\t5");
  EXPECT_EQ(lines_of(train("m.ccnn", {"--config", dir.file("c.json"), "--seed", "3"}).out).front(), "seed\t3");
  ::unsetenv("CHARLID_SEED");
}

TEST_F(CliTest, DefaultsFollowDialectPreset) {
  // Only the data-dependent sizes differ from the preset; check what was saved.
  const auto r = invoke({"train", "--data", dir.file("train.tsv"), "--out", dir.file("m.ccnn"), "--max-epochs", "1"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto m = load_model(dir.file("m.ccnn"));
  EXPECT_EQ(m.config.max_len, 400u);
  EXPECT_EQ(m.config.embed_dim, 50u);
  EXPECT_EQ(format_filter_spec(m.config.filters), "1:50,2:50,3:100,4:100,5:100,6:100,7:100");
  EXPECT_EQ(m.config.fc_dim, 250u);
  EXPECT_DOUBLE_EQ(m.config.dropout_embed, 0.2);
  EXPECT_DOUBLE_EQ(m.config.dropout_fc, 0.5);
  EXPECT_EQ(preset("dialect").train.batch_size, 16u);
  EXPECT_EQ(preset("dialect").train.patience, 10u);
}

TEST_F(CliTest, PresetsSelectable) {
  const auto r = invoke({"train-fixed", "--data", dir.file("train.tsv"), "--out", dir.file("m.ccnn"), "--epochs", "1",
                         "--preset", "languages-run3", "--max-len", "40"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto m = load_model(dir.file("m.ccnn"));
  EXPECT_EQ(m.config.fc_dim, 500u);
  EXPECT_DOUBLE_EQ(m.config.dropout_fc, 0.7);
  EXPECT_EQ(format_filter_spec(m.config.filters), "1:50,2:100,3:150,4:200,5:200,6:200,7:200");
  EXPECT_EQ(invoke({"train-fixed", "--data", dir.file("train.tsv"), "--out", dir.file("m.ccnn"), "--epochs", "1",
                    "--preset", "nonsense"})
                .status,
            1);
}

TEST_F(CliTest, PredictOneLinePerInput) {
  ASSERT_EQ(invoke({"train-fixed", "--data", dir.file("train.tsv"), "--out", dir.file("m.ccnn"), "--epochs", "2",
                    "--max-len", "40", "--embed-dim", "8", "--filters", "2:4", "--fc-dim", "0"})
                .status,
            0);
  std::ofstream(dir.file("in.txt")) << "abcabc\nijkl\nqrstuv\n";
  const auto r = invoke({"predict", "--model", dir.file("m.ccnn"), "--input", dir.file("in.txt"), "--out",
                         dir.file("p.txt"), "--probs"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto out = lines_of(fx::slurp(dir.file("p.txt")));
  ASSERT_EQ(out.size(), 3u);
  for (const auto& line : out) EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
}

TEST_F(CliTest, EvaluateOverfitModelScoresPerfectly) {
  const auto r = invoke({"train-fixed", "--data", dir.file("train.tsv"), "--out", dir.file("m.ccnn"), "--epochs", "15",
                         "--max-len", "40", "--embed-dim", "16", "--filters", "2:8,3:8", "--fc-dim", "32",
                         "--batch-size", "8", "--lr", "0.005"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto e = invoke({"evaluate", "--model", dir.file("m.ccnn"), "--test", dir.file("train.tsv"), "--confusion-out",
                         dir.file("cm.csv")});
  ASSERT_EQ(e.status, 0) << e.err;
  EXPECT_NE(e.out.find("accuracy\t1.000000"), std::string::npos) << e.out;
  const auto cm = parse_confusion_csv(fx::slurp(dir.file("cm.csv")));
  EXPECT_EQ(cm.trace(), 45u);
  EXPECT_EQ(cm.labels, (std::vector<std::string>{"alpha", "beta", "gamma"}));
}

TEST_F(CliTest, EvaluateUnknownLabelFails) {
  ASSERT_EQ(invoke({"train-fixed", "--data", dir.file("train.tsv"), "--out", dir.file("m.ccnn"), "--epochs", "1",
                    "--max-len", "40", "--embed-dim", "4", "--filters", "2:2", "--fc-dim", "0"})
                .status,
            0);
  std::ofstream(dir.file("test.tsv")) << "abc\tdelta\n";
  EXPECT_EQ(invoke({"evaluate", "--model", dir.file("m.ccnn"), "--test", dir.file("test.tsv")}).status, 2);
}

TEST_F(CliTest, EnsembleDirectoryPredicts) {
  std::vector<std::string> args{"ensemble", "--data", dir.file("train.tsv"), "--out", dir.file("ens"), "--k", "2",
                                "--max-epochs", "2"};
  for (const auto& f : small_model_flags()) args.push_back(f);
  const auto r = invoke(args);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir.file("ens/manifest.json")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("ens/member_001.ccnn")));
  const auto p = invoke({"predict", "--model", dir.file("ens"), "--input", dir.file("train.tsv"), "--labeled", "--out",
                         dir.file("p.txt")});
  ASSERT_EQ(p.status, 0) << p.err;
  EXPECT_EQ(lines_of(fx::slurp(dir.file("p.txt"))).size(), 45u);
}

TEST_F(CliTest, Baselines) {
  std::ofstream(dir.file("tr.tsv")) << "a\tA\nb\tA\nc\tA\nd\tB\n";
  std::ofstream(dir.file("te.tsv")) << "a\tA\nb\tA\nc\tB\nd\tB\n";
  const auto m = invoke({"baseline", "--kind", "majority", "--train", dir.file("tr.tsv"), "--test", dir.file("te.tsv")});
  ASSERT_EQ(m.status, 0) << m.err;
  EXPECT_NE(m.out.find("accuracy\t0.500000"), std::string::npos);
  EXPECT_EQ(invoke({"baseline", "--kind", "majority", "--test", dir.file("te.tsv")}).status, 1);
  const auto r = invoke({"baseline", "--kind", "random", "--test", dir.file("te.tsv"), "--seed", "3"});
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(lines_of(r.out).front(), "seed\t3");
  EXPECT_EQ(r.out, invoke({"baseline", "--kind", "random", "--test", dir.file("te.tsv"), "--seed", "3"}).out);
}
