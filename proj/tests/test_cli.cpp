#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "avfusion/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "avfusion");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = avf::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("avf_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Result synth(const std::string& name, std::size_t n = 8, std::uint64_t seed = 5) {
    return run({"synth", "--out", path(name), "--n", std::to_string(n), "--seed", std::to_string(seed), "--frames",
                "4", "--height", "48", "--width", "48", "--audio-seconds", "0.1"});
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SynthIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(synth("a").code, 0);
  ASSERT_EQ(synth("b").code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), path("a"));
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(path("b")) / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 2u + 2u * 8u);
  const json meta = read_json(fs::path(path("a")) / "meta.json");
  EXPECT_EQ(meta.at("reproducibility").at("seed"), 5);
  EXPECT_EQ(meta.at("reproducibility").at("version"), avf::kVersion);
  EXPECT_EQ(meta.at("reproducibility").at("config_hash").get<std::string>().size(), 16u);
}

TEST_F(CliTest, EvalOfGroundTruthScoresOne) {
  ASSERT_EQ(synth("ds", 6).code, 0);
  const auto ds = avf::load_manifest(path("ds/manifest.jsonl"));
  std::string lines;
  for (const auto& r : ds.records) {
    json rec = {{"id", r.id}, {"detections", json::array()}};
    for (const auto& b : r.boxes) {
      avf::Detection d;
      d.box = b;
      d.confidence = 1.0;
      d.class_scores = {};
      d.class_scores[avf::class_index(b.cls)] = 1.0;
      rec["detections"].push_back(avf::cli::detection_json(d));
    }
    lines += rec.dump() + "\n";
  }
  std::ofstream(path("truth.jsonl")) << lines;
  const auto r = run({"eval", "--detections", path("truth.jsonl"), "--manifest", path("ds/manifest.jsonl"), "--out",
                      path("report.json"), "--pr-csv", path("pr.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(path("report.json"));
  EXPECT_DOUBLE_EQ(report.at("map").get<double>(), 1.0);
  EXPECT_EQ(report.at("fp"), 0);
  EXPECT_EQ(report.at("fn"), 0);
  EXPECT_TRUE(report.contains("reproducibility"));
  EXPECT_EQ(slurp(path("pr.csv")).rfind("class,score,recall,precision\n", 0), 0u);
}

TEST_F(CliTest, PipelineRunsAndIsDeterministic) {
  ASSERT_EQ(synth("ds", 12).code, 0);
  const std::string manifest = path("ds/manifest.jsonl");
  ASSERT_EQ(run({"anchors", "--manifest", manifest, "--k", "3", "--out", path("anchors.json")}).code, 0);
  EXPECT_EQ(read_json(path("anchors.json")).at("anchors").size(), 3u);

  for (const char* tag : {"1", "2"}) {
    const std::string ckpt = path(std::string("m") + tag + ".ckpt");
    const auto t = run({"train", "--manifest", manifest, "--checkpoint", ckpt, "--anchors", path("anchors.json"),
                        "--grid", "3", "--feat-dim", "8", "--epochs", "2", "--batch-size", "4", "--lr", "1e-3",
                        "--seed", "7"});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto d = run({"detect", "--checkpoint", ckpt, "--manifest", manifest, "--out",
                        path(std::string("det") + tag + ".jsonl"), "--conf-thresh", "0.01"});
    ASSERT_EQ(d.code, 0) << d.err;
  }
  EXPECT_EQ(slurp(path("m1.ckpt")), slurp(path("m2.ckpt")));
  EXPECT_EQ(slurp(path("m1.ckpt.loss.csv")), slurp(path("m2.ckpt.loss.csv")));
  EXPECT_EQ(slurp(path("det1.jsonl")), slurp(path("det2.jsonl")));

  // 12 samples -> 9 train (ceil 0.75), 3 val; 3 batches x 2 epochs.
  const std::string csv = slurp(path("m1.ckpt.loss.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 6);
  EXPECT_EQ(avf::cli::read_detections(path("det1.jsonl")).size(), 3u);
  const json meta = read_json(path("det1.jsonl.meta.json"));
  EXPECT_EQ(meta.at("reproducibility").at("seed"), 7);

  const auto e = run({"eval", "--detections", path("det1.jsonl"), "--manifest", manifest, "--out", path("r.json")});
  ASSERT_EQ(e.code, 0) << e.err;
  const double map = read_json(path("r.json")).at("map").get<double>();
  EXPECT_GE(map, 0.0);
  EXPECT_LE(map, 1.0);

  const auto x = run({"export-traj", "--detections", path("det1.jsonl"), "--fps", "10", "--out", path("t.csv")});
  ASSERT_EQ(x.code, 0) << x.err;
  EXPECT_EQ(slurp(path("t.csv")).rfind("t_seconds,x_center,y_center,class,confidence\n", 0), 0u);

  const auto z = run({"detect", "--checkpoint", path("m1.ckpt"), "--manifest", manifest, "--out", path("z.jsonl"),
                      "--zero-audio", "--dump-attention", path("att")});
  ASSERT_EQ(z.code, 0) << z.err;
  EXPECT_TRUE(fs::exists(path("att/s000009.w_av.tnsr")));
  EXPECT_TRUE(fs::exists(path("att/s000009.w_va.tnsr")));
}

TEST_F(CliTest, MelspecWritesExpectedShape) {
  ASSERT_EQ(synth("ds", 1).code, 0);
  const auto r = run({"melspec", "--wav", path("ds/samples/s000000.wav"), "--out", path("mel.tnsr"), "--csv",
                      path("mel.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto mel = avf::tnsr::load<double>(path("mel.tnsr"));
  // 0.1 s at 48 kHz = 4800 samples -> 1 + 4800 / 512 frames.
  EXPECT_EQ(mel.shape(), (avf::Shape{6, 128, 10}));
  const std::string csv = slurp(path("mel.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 128);
  EXPECT_TRUE(fs::exists(path("mel.tnsr.meta.json")));
}

TEST_F(CliTest, ValidationErrorsExitWithOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"bogus"}).code, 1);
  EXPECT_EQ(run({"train"}).code, 1);
  EXPECT_EQ(run({"train", "--manifest", path("missing.jsonl"), "--epochs", "0"}).code, 1);

  const auto missing = run({"train", "--manifest", path("missing.jsonl")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("missing.jsonl"), std::string::npos) << missing.err;

  ASSERT_EQ(synth("ds", 4).code, 0);
  EXPECT_EQ(run({"detect", "--checkpoint", path("none.ckpt"), "--manifest", path("ds/manifest.jsonl")}).code, 1);

  std::ofstream(path("bad.jsonl")) << "{\"id\": \"s000000\", \"detections\": [{\"cx\": 0.5}]}\n";
  const auto bad = run({"eval", "--detections", path("bad.jsonl"), "--manifest", path("ds/manifest.jsonl")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("bad.jsonl:1"), std::string::npos) << bad.err;

  std::ofstream(path("unknown.jsonl")) << "{\"id\": \"zzz\", \"detections\": []}\n";
  EXPECT_EQ(run({"eval", "--detections", path("unknown.jsonl"), "--manifest", path("ds/manifest.jsonl")}).code, 1);

  EXPECT_EQ(run({"export-traj", "--detections", path("unknown.jsonl"), "--fps", "0"}).code, 1);
  std::ofstream(path("junk.wav")) << "not a wav";
  EXPECT_EQ(run({"melspec", "--wav", path("junk.wav"), "--out", path("m.tnsr")}).code, 1);
}

TEST_F(CliTest, VersionAndHelpExitZero) {
  const auto v = run({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(avf::kVersion), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, 0);
}
