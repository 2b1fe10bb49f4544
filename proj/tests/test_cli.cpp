#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "pfsa/checkpoint.hpp"
#include "pfsa/cli.hpp"
#include "pfsa/dataset.hpp"
#include "pfsa/model.hpp"
#include "support/oracles.hpp"

using namespace pfsa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pfsa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> parse_report(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = oracle::read_file(e.path());
  return files;
}

const char* kSmallToy = R"(num_identities = 6
num_train_identities = 3
images_per_identity_per_camera = 2
image_height = 16
image_width = 8
stage_channels = 4, 8, 8
reduced_dim = 8
epochs = 2
gradcheck_trials = 10
seed = 3
)";

class CliTest : public ::testing::Test {
 protected:
  oracle::TempDir dir{"cli"};

  std::string config(const std::string& name, const std::string& text) {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_F(CliTest, GenPopulatesSplitsAndPrintsCounts) {
  const auto cfg = config("toy.cfg", kSmallToy);
  const auto r = run_cli({"gen", "--config", cfg, "--out", path("data")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = parse_report(r.out);
  EXPECT_EQ(kv.at("train"), "12");
  EXPECT_EQ(kv.at("query"), "6");
  EXPECT_EQ(kv.at("gallery"), "6");
  const auto samples = load_dir(path("data"));
  EXPECT_EQ(samples.size(), 24u);
}

TEST_F(CliTest, GenIsByteIdenticalAcrossRuns) {
  const auto cfg = config("toy.cfg", kSmallToy);
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", path("a")}).code, 0);
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", path("b")}).code, 0);
  EXPECT_EQ(snapshot(path("a")), snapshot(path("b")));
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", path("c"), "--seed", "4"}).code, 0);
  EXPECT_NE(snapshot(path("a")), snapshot(path("c")));
}

TEST_F(CliTest, GenUnwritableOutputNamesPath) {
  const auto cfg = config("toy.cfg", kSmallToy);
  std::ofstream(dir / "blocker") << "file";
  const std::string target = path("blocker") + "/data";
  const auto r = run_cli({"gen", "--config", cfg, "--out", target});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(target), std::string::npos) << r.err;
}

TEST_F(CliTest, ArgumentErrors) {
  EXPECT_NE(run_cli({"gen"}).code, 0);
  EXPECT_NE(run_cli({}).code, 0);
  EXPECT_NE(run_cli({"fly", "--config", "x"}).code, 0);
  const auto missing = run_cli({"train", "--config", path("nope.cfg")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("nope.cfg"), std::string::npos);
  const auto bad = run_cli({"train", "--config", config("bad.cfg", "lambda = 3\n")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("lambda"), std::string::npos);
}

TEST_F(CliTest, TrainWithZeroEpochsWritesInitialParams) {
  const auto cfg = config("toy.cfg", std::string(kSmallToy) + "out_dir = " + path("run") + "\n");
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("run/m.ckpt")}).code, 0);
  const auto zero = config("zero.cfg", std::string(kSmallToy) + "out_dir = " + path("zero") + "\n");
  std::string text = oracle::read_file(zero);
  text.replace(text.find("epochs = 2"), 10, "epochs = 0");
  std::ofstream(zero, std::ios::trunc) << text;
  const auto r = run_cli({"train", "--config", zero, "--checkpoint", path("zero/m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const RunConfig rc = load_run_config(zero);
  ModelConfig model = rc.model;
  model.num_classes = 3;
  EXPECT_EQ(read_checkpoint(path("zero/m.ckpt")), init_params(model));
  EXPECT_EQ(oracle::read_file(path("zero/loss_log.csv")), "epoch,total_loss,part_loss,ds_loss\n");
}

TEST_F(CliTest, TrainIsDeterministic) {
  const auto cfg = config("toy.cfg", kSmallToy);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("a/m.ckpt")}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("b/m.ckpt")}).code, 0);
  EXPECT_EQ(oracle::read_file(path("a/m.ckpt")), oracle::read_file(path("b/m.ckpt")));
  const std::string log = oracle::read_file(path("a/loss_log.csv"));
  EXPECT_EQ(log, oracle::read_file(path("b/loss_log.csv")));
  EXPECT_EQ(log.substr(0, log.find('\n')), "epoch,total_loss,part_loss,ds_loss");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
}

TEST_F(CliTest, TrainReportsFullAccuracyOnSeparableIdentities) {
  const auto cfg = config("sep.cfg", R"(num_identities = 4
num_train_identities = 2
images_per_identity_per_camera = 4
image_height = 16
image_width = 8
stage_channels = 4, 8, 8
reduced_dim = 8
epochs = 30
batch_size = 2
augment = off
)");
  const auto r = run_cli({"train", "--config", cfg, "--checkpoint", path("sep/m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(parse_report(r.out).at("train_accuracy"), "1.000000") << r.out;
}

TEST_F(CliTest, EvalReportsExactKeys) {
  const auto cfg = config("toy.cfg", kSmallToy);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("m.ckpt")}).code, 0);
  const auto r = run_cli({"eval", "--config", cfg, "--checkpoint", path("m.ckpt"), "--out", path("eval")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> keys;
  std::istringstream in(r.out);
  std::string line;
  while (std::getline(in, line)) keys.push_back(line.substr(0, line.find(" = ")));
  EXPECT_EQ(keys, (std::vector<std::string>{"cmc_1", "cmc_5", "cmc_10", "map", "skipped"}));
  const std::string csv = oracle::read_file(path("eval/per_query_ap.csv"));
  EXPECT_EQ(csv.substr(0, 9), "query,ap\n");
  EXPECT_EQ(run_cli({"eval", "--config", cfg, "--checkpoint", path("m.ckpt")}).out, r.out);
}

TEST_F(CliTest, EvalOnMemorizedIdentities) {
  const auto cfg = config("mem.cfg", R"(num_identities = 4
num_train_identities = 2
images_per_identity_per_camera = 4
image_height = 16
image_width = 8
stage_channels = 4, 8, 8
reduced_dim = 8
epochs = 60
batch_size = 2
augment = off
lr = 0.05
lr_decay = 1
seed = 1
)");
  const auto trained = run_cli({"train", "--config", cfg, "--checkpoint", path("mem/m.ckpt")});
  ASSERT_EQ(trained.code, 0) << trained.err;
  ASSERT_LT(std::stod(parse_report(trained.out).at("final_loss")), 0.05) << "checkpoint has not memorized";
  // Probe with the training identities: one query per camera, the rest as gallery.
  const RunConfig rc = load_run_config(cfg);
  std::vector<Sample> probe;
  for (Sample s : generate_toy(rc.toy)) {
    if (s.split != Split::train) continue;
    s.split = s.index == 0 ? Split::query : Split::gallery;
    probe.push_back(s);
  }
  export_dir(probe, path("probe"));
  fs::create_directories(path("probe/train"));
  write_ppm(probe.front().image, path("probe/train/id_0_cam_0_0.ppm"));
  const auto eval_cfg = config("probe.cfg", oracle::read_file(cfg) + "data_dir = " + path("probe") + "\n");
  const auto r = run_cli({"eval", "--config", eval_cfg, "--checkpoint", path("mem/m.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(parse_report(r.out).at("cmc_1"), "1.000000") << r.out;
}

TEST_F(CliTest, EvalRejectsBadCheckpoints) {
  const auto cfg = config("toy.cfg", kSmallToy);
  const auto missing = run_cli({"eval", "--config", cfg, "--checkpoint", path("none.ckpt")});
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.err.find("none.ckpt"), std::string::npos);
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << "NOPE-not-a-checkpoint";
  const auto bad = run_cli({"eval", "--config", cfg, "--checkpoint", path("bad.ckpt")});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("bad magic"), std::string::npos) << bad.err;
  const auto unset = run_cli({"eval", "--config", cfg});
  EXPECT_NE(unset.code, 0);
}

TEST_F(CliTest, CamExportsMatchingMaps) {
  const auto cfg = config("toy.cfg", kSmallToy);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("m.ckpt")}).code, 0);
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", path("data")}).code, 0);
  const std::string image = path("data/query/id_3_cam_1_0.ppm");
  const auto gap = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--out", path("cam"), "--image",
                            image, "--stage", "2", "--class", "1", "--mode", "gap"});
  ASSERT_EQ(gap.code, 0) << gap.err;
  const auto sa = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--out", path("cam"), "--image",
                           image, "--stage", "2", "--class", "1", "--mode", "sa"});
  ASSERT_EQ(sa.code, 0) << sa.err;
  const Tensor m_gap = read_matrix_csv(path("cam/cam_stage2_class1_gap.csv"));
  const Tensor m_sa = read_matrix_csv(path("cam/cam_stage2_class1_sa.csv"));
  const Tensor p = read_matrix_csv(path("cam/attention_stage2.csv"));
  ASSERT_EQ(m_gap.shape(), (Shape{4, 2}));
  for (std::size_t n = 0; n < m_gap.size(); ++n) EXPECT_NEAR(m_sa[n], m_gap[n] * p[n], 1e-9);
  const std::string pgm = oracle::read_file(path("cam/cam_stage2_class1_sa.pgm"));
  ASSERT_EQ(pgm.size(), std::string("P5\n2 4\n255\n").size() + 8);
  EXPECT_EQ(pgm.substr(0, 11), "P5\n2 4\n255\n");
}

TEST_F(CliTest, CamOnSinglePositionStageIgnoresAttention) {
  const auto cfg = config("tiny.cfg", R"(num_identities = 4
num_train_identities = 2
images_per_identity_per_camera = 2
image_height = 4
image_width = 4
stage_channels = 3, 4, 4
stage_downsample = 1, 1, 0
parts = 1
reduced_dim = 4
epochs = 1
)");
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("m.ckpt")}).code, 0);
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", path("data")}).code, 0);
  const std::string image = path("data/train/id_0_cam_0_0.ppm");
  for (const char* mode : {"gap", "sa"}) {
    const auto r = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--out", path("cam"), "--image",
                            image, "--stage", "2", "--class", "0", "--mode", mode});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(oracle::read_file(path("cam/cam_stage2_class0_sa.csv")),
            oracle::read_file(path("cam/cam_stage2_class0_gap.csv")));
}

TEST_F(CliTest, CamRejectsBadStageAndClass) {
  const auto cfg = config("toy.cfg", kSmallToy);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--checkpoint", path("m.ckpt")}).code, 0);
  ASSERT_EQ(run_cli({"gen", "--config", cfg, "--out", path("data")}).code, 0);
  const std::string image = path("data/query/id_3_cam_0_0.ppm");
  const auto stage = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--image", image, "--stage", "3",
                              "--class", "0"});
  EXPECT_NE(stage.code, 0);
  EXPECT_NE(stage.err.find("stage 3"), std::string::npos);
  const auto zero = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--image", image, "--stage", "0",
                             "--class", "0"});
  EXPECT_NE(zero.code, 0);
  const auto cls = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--image", image, "--stage", "1",
                            "--class", "3"});
  EXPECT_NE(cls.code, 0);
  EXPECT_NE(cls.err.find("class 3"), std::string::npos);
  const auto mode = run_cli({"cam", "--config", cfg, "--checkpoint", path("m.ckpt"), "--image", image, "--stage", "1",
                             "--class", "0", "--mode", "full_fc"});
  EXPECT_NE(mode.code, 0);
}

TEST_F(CliTest, GradcheckPassesAndCoversEveryLayerOnce) {
  const auto r = run_cli({"gradcheck", "--config", config("g.cfg", "")});
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  std::map<std::string, int> seen;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    ++seen[line.substr(0, line.find(' '))];
    EXPECT_NE(line.find(" ok"), std::string::npos) << line;
  }
  for (const char* layer : {"conv2d", "relu", "fc", "softmax_ce", "avg_pool2", "sa", "gap", "stripe_pool", "model"})
    EXPECT_EQ(seen[layer], 1) << layer;
  EXPECT_EQ(seen.size(), 9u);
}

TEST_F(CliTest, GradcheckNegativeControlNamesSa) {
  const auto r = run_cli({"gradcheck", "--config", config("g.cfg", "gradcheck_trials = 5\n"), "--inject-fault", "sa"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("sa"), std::string::npos);
  EXPECT_EQ(r.err.find("conv2d"), std::string::npos);
}
