#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "avfusion/gradcheck_suite.hpp"
#include "avfusion/pipeline.hpp"
#include "avfusion/version.hpp"

namespace avf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Input that failed validation; maps to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

inline json detection_json(const Detection& d) {
  return {{"cx", d.box.cx},           {"cy", d.box.cy},
          {"w", d.box.w},             {"h", d.box.h},
          {"class", class_name(d.box.cls)}, {"confidence", d.confidence},
          {"class_scores", d.class_scores}};
}

inline Detection parse_detection(const json& j) {
  Detection d;
  d.box = parse_box(j);
  j.at("confidence").get_to(d.confidence);
  if (j.contains("class_scores")) {
    j.at("class_scores").get_to(d.class_scores);
  } else {
    d.class_scores = {};
    d.class_scores[class_index(d.box.cls)] = 1.0;
  }
  if (!std::isfinite(d.confidence) || d.confidence < 0.0 || d.confidence > 1.0)
    throw std::invalid_argument("confidence out of [0, 1]");
  return d;
}

/// Detections file: JSON Lines of {id, detections: [...]}.
inline std::vector<ImageDetections> read_detections(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open detections file " + path.string());
  std::vector<ImageDetections> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      ImageDetections img;
      img.sample_id = j.at("id").get<std::string>();
      for (const auto& d : j.at("detections")) img.detections.push_back(parse_detection(d));
      out.push_back(std::move(img));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": malformed detection record: " + e.what());
    }
  }
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

/// Sidecar metadata for outputs whose own format has no header.
inline void write_meta(const fs::path& output, const std::string& command, std::uint64_t seed, const json& config) {
  const json meta = {{"command", command}, {"config", config}, {"reproducibility", reproducibility(seed, config)}};
  write_text(output.string() + ".meta.json", meta.dump(2) + "\n");
}

inline Dataset open_manifest(const std::string& path) {
  if (path.empty()) throw ValidationError("--manifest is required");
  return load_manifest(path);
}

inline std::vector<std::size_t> pick_split(const Dataset& ds, const std::string& which) {
  const Split s = split_leading(ds.size());
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

// ---- subcommands ----------------------------------------------------------

struct SynthArgs {
  std::string out, config;
  std::size_t n = 200;
  std::uint64_t seed = 0;
  std::size_t frames = 0, height = 0, width = 0;
  double audio_seconds = 0.0;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& log) {
  SynthConfig c;
  if (!a.config.empty()) {
    std::ifstream is(a.config);
    if (!is) throw ValidationError("cannot open synth config " + a.config);
    try {
      c = json::parse(is).get<SynthConfig>();
    } catch (const json::exception& e) {
      throw ValidationError(a.config + ": " + e.what());
    }
  }
  c.n_samples = a.n, c.seed = a.seed;
  if (a.frames) c.frames = a.frames;
  if (a.height) c.height = a.height;
  if (a.width) c.width = a.width;
  if (a.audio_seconds > 0.0) c.audio_seconds = a.audio_seconds;
  const SceneGenerator gen(c);
  write_dataset(gen, a.out);
  log << "wrote " << c.n_samples << " samples to " << a.out << "\n";
  return kOk;
}

struct AnchorsArgs {
  std::string manifest, out, split = "train";
  std::size_t k = 5;
  std::uint64_t seed = 0;
};

inline int cmd_anchors(const AnchorsArgs& a, std::ostream& log) {
  const Dataset ds = open_manifest(a.manifest);
  std::vector<std::pair<double, double>> sizes;
  for (std::size_t i : pick_split(ds, a.split))
    for (const auto& b : ds.records[i].boxes) sizes.emplace_back(b.w, b.h);
  const auto r = kmeans_anchors(sizes, a.k, a.seed);
  const json config = {{"manifest", fs::path(a.manifest).filename().string()}, {"k", a.k}, {"split", a.split}};
  json out = {{"anchors", json::array()}, {"objective", r.objective}, {"iterations", r.iterations},
              {"boxes", sizes.size()}, {"reproducibility", reproducibility(a.seed, config)}};
  for (const auto& [w, h] : r.anchors.priors) out["anchors"].push_back({w, h});
  if (a.out.empty()) {
    log << out.dump(2) << "\n";
  } else {
    write_text(a.out, out.dump(2) + "\n");
  }
  return kOk;
}

inline AnchorSet read_anchors(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open anchors file " + path);
  AnchorSet s;
  try {
    const json j = json::parse(is);
    for (const auto& a : j.at("anchors")) s.priors.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
    s.validate();
  } catch (const std::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return s;
}

struct MelspecArgs {
  std::string wav, out, csv;
};

inline int cmd_melspec(const MelspecArgs& a, std::ostream& log) {
  audio::AudioChunk chunk;
  try {
    chunk = wav::load(a.wav);
  } catch (const wav::FormatError& e) {
    throw ValidationError(e.what());
  }
  const auto mel = audio::mel_spectrogram(chunk);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  tnsr::save(a.out, mel);
  const json config = {{"wav", fs::path(a.wav).filename().string()}, {"n_fft", 1024}, {"hop", 512}, {"n_mels", 128}};
  write_meta(a.out, "melspec", 0, config);
  if (!a.csv.empty()) {
    // Channel 0 as a bins x frames grid, lowest bin first.
    std::string text;
    char buf[32];
    const std::size_t bins = mel.dim(1), frames = mel.dim(2);
    for (std::size_t b = 0; b < bins; ++b) {
      for (std::size_t f = 0; f < frames; ++f) {
        std::snprintf(buf, sizeof buf, f ? ",%.6g" : "%.6g", mel.at(0, b, f));
        text += buf;
      }
      text += "\n";
    }
    write_text(a.csv, text);
  }
  log << "mel " << to_string(mel.shape()) << " -> " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest, checkpoint = "model.ckpt", loss_csv, anchors;
  std::uint64_t seed = 0;
  std::size_t grid = 7, feat_dim = 64, epochs = 20, batch_size = 16, num_anchors = 5, max_steps = 0;
  std::size_t checkpoint_every = 0;
  double lr = 1e-4;
};

inline int cmd_train(const TrainArgs& a, std::ostream& log) {
  const Dataset ds = open_manifest(a.manifest);
  const auto train_idx = split_leading(ds.size()).train;
  Model m;
  m.config.encoder = make_encoder_config(ds.geometry.input(), a.grid, a.grid, a.feat_dim);
  if (a.anchors.empty()) {
    std::vector<BoundingBox> boxes;
    for (std::size_t i : train_idx) boxes.insert(boxes.end(), ds.records[i].boxes.begin(), ds.records[i].boxes.end());
    m.anchors = anchors_from_boxes(boxes, a.num_anchors, a.seed);
  } else {
    m.anchors = read_anchors(a.anchors);
  }
  m.config.num_anchors = m.anchors.size();
  m.params = init_params<float>(m.config, a.seed);

  TrainConfig tc;
  tc.seed = a.seed, tc.learning_rate = a.lr, tc.epochs = a.epochs, tc.batch_size = a.batch_size;
  tc.max_steps = a.max_steps;
  const json config = {{"model", m.config},
                       {"train", tc},
                       {"manifest", fs::path(a.manifest).filename().string()},
                       {"train_samples", train_idx.size()}};
  m.state["train_config"] = tc;
  m.state["reproducibility"] = reproducibility(a.seed, config);

  const std::string loss_csv = a.loss_csv.empty() ? a.checkpoint + ".loss.csv" : a.loss_csv;
  TrainHooks hooks;
  hooks.on_epoch = [&](std::size_t epoch, const Model& cur) {
    log << "epoch " << epoch << "/" << a.epochs << " done" << std::endl;
    if (a.checkpoint_every && epoch % a.checkpoint_every == 0 && epoch != a.epochs)
      save_checkpoint(a.checkpoint + ".epoch" + std::to_string(epoch), cur);
  };
  const auto result = train(m, dataset_source(ds, train_idx), tc, hooks);
  if (fs::path(a.checkpoint).has_parent_path()) fs::create_directories(fs::path(a.checkpoint).parent_path());
  save_checkpoint(a.checkpoint, m);
  std::ostringstream csv;
  write_loss_csv(csv, result.steps);
  write_text(loss_csv, csv.str());
  for (std::size_t e = 0; e < result.epoch_mean.size(); ++e)
    log << "epoch " << e + 1 << " mean l_total " << result.epoch_mean[e] << "\n";
  return kOk;
}

struct DetectArgs {
  std::string checkpoint, manifest, out = "detections.jsonl", split = "val", dump_attention;
  double conf_thresh = 0.25, nms_iou = 0.5;
  bool zero_audio = false;
};

inline int cmd_detect(const DetectArgs& a, std::ostream& log) {
  if (a.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  const Model m = load_checkpoint(a.checkpoint);
  const Dataset ds = open_manifest(a.manifest);
  if (!(ds.geometry.input() == m.config.encoder.input))
    throw ValidationError("dataset geometry " + json(ds.geometry).dump() + " does not match the checkpoint's input");
  const auto idx = pick_split(ds, a.split);
  if (!a.dump_attention.empty()) fs::create_directories(a.dump_attention);
  const Tensor<float> silence = a.zero_audio ? silence_features(m.config.encoder.input, ds.geometry.sample_rate)
                                             : Tensor<float>();
  std::vector<std::string> lines(idx.size());
  parallel_for(idx.size(), [&](std::size_t n) {
    const std::size_t i = idx[n];
    const Tensor<float> clip = ds.load_video(i);
    const Tensor<float> mel = a.zero_audio ? silence : audio_features(ds.load_audio(i));
    Graph<float> g;
    const auto b = bind(g, m.params, false);
    const auto f = forward(g, g.leaf(clip), g.leaf(mel), b, m.config);
    const auto dets = nms(decode_boxes(g.value(f.raw), m.anchors), a.nms_iou, a.conf_thresh);
    if (!a.dump_attention.empty()) {
      const fs::path base = fs::path(a.dump_attention) / ds.records[i].id;
      tnsr::save(base.string() + ".w_av.tnsr", g.value(f.attention.w_av));
      tnsr::save(base.string() + ".w_va.tnsr", g.value(f.attention.w_va));
    }
    json rec = {{"id", ds.records[i].id}, {"detections", json::array()}};
    for (const auto& d : dets) rec["detections"].push_back(detection_json(d));
    lines[n] = rec.dump();
  });
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text(a.out, text);
  const json config = {{"checkpoint", m.state.value("reproducibility", json::object()).value("config_hash", "")},
                       {"manifest", fs::path(a.manifest).filename().string()},
                       {"split", a.split},
                       {"conf_thresh", a.conf_thresh},
                       {"nms_iou", a.nms_iou},
                       {"zero_audio", a.zero_audio}};
  const std::uint64_t seed = m.state.value("reproducibility", json::object()).value("seed", std::uint64_t{0});
  write_meta(a.out, "detect", seed, config);
  log << "wrote detections for " << idx.size() << " samples to " << a.out << "\n";
  return kOk;
}

struct EvalArgs {
  std::string detections, manifest, out = "report.json", pr_csv;
  double iou = 0.5;
  std::uint64_t seed = 0;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& log) {
  const auto dets = read_detections(a.detections);
  const Dataset ds = open_manifest(a.manifest);
  std::vector<ImageTruth> truths;
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.size(); ++i) by_id[ds.records[i].id] = i;
  for (const auto& d : dets) {
    const auto it = by_id.find(d.sample_id);
    if (it == by_id.end()) throw ValidationError("detections reference unknown sample " + d.sample_id);
    truths.push_back({d.sample_id, ds.records[it->second].boxes});
  }
  EvalReport r;
  try {
    r = evaluate(dets, truths, a.iou);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  const json config = {{"detections", fs::path(a.detections).filename().string()},
                       {"manifest", fs::path(a.manifest).filename().string()},
                       {"iou", a.iou}};
  json report = {{"map", r.map}, {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"samples", dets.size()},
                 {"warnings", r.warnings}, {"classes", json::object()},
                 {"reproducibility", reproducibility(a.seed, config)}};
  std::string pr = "class,score,recall,precision\n";
  char buf[160];
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const auto& c = r.classes[k];
    const char* name = class_name(static_cast<VehicleClass>(k));
    report["classes"][name] = {{"ap", c.ap ? json(*c.ap) : json(nullptr)}, {"tp", c.tp}, {"fp", c.fp},
                               {"fn", c.fn}, {"n_gt", c.n_gt}};
    for (const auto& p : c.curve) {
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g\n", name, p.score, p.recall, p.precision);
      pr += buf;
    }
  }
  write_text(a.out, report.dump(2) + "\n");
  if (!a.pr_csv.empty()) write_text(a.pr_csv, pr);
  log << "mAP " << r.map << "\n";
  for (const auto& w : r.warnings) log << "warning: " << w << "\n";
  return kOk;
}

struct TrajArgs {
  std::string detections, out = "trajectory.csv";
  double fps = 0.0;
};

inline int cmd_export_traj(const TrajArgs& a, std::ostream& log) {
  if (!(a.fps > 0.0)) throw ValidationError("--fps must be positive");
  std::vector<std::vector<Detection>> frames;
  for (auto& d : read_detections(a.detections)) frames.push_back(std::move(d.detections));
  write_text(a.out, export_trajectory(frames, a.fps));
  write_meta(a.out, "export-traj", 0, {{"detections", fs::path(a.detections).filename().string()}, {"fps", a.fps}});
  log << "wrote " << frames.size() << " frames to " << a.out << "\n";
  return kOk;
}

struct GradcheckArgs {
  std::string out;
  double tolerance = 1e-4;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& log) {
  const auto rows = gradient_suite();
  std::string table = "op,coordinates,max_rel_error,status\n";
  bool ok = true;
  char buf[160];
  for (const auto& r : rows) {
    const bool pass = r.result.max_rel_error < a.tolerance;
    ok = ok && pass;
    std::snprintf(buf, sizeof buf, "%s,%zu,%.3e,%s\n", r.op.c_str(), r.result.coordinates, r.result.max_rel_error,
                  pass ? "ok" : "FAIL");
    table += buf;
  }
  log << table;
  if (!a.out.empty()) {
    write_text(a.out, table);
    write_meta(a.out, "gradcheck", 0, {{"tolerance", a.tolerance}});
  }
  return ok ? kOk : kRuntime;
}

/// Parses argv and dispatches. Exit codes: 0 success, 1 invalid input or
/// usage, 2 runtime failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Audio-visual vehicle detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--n", sa.n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sa.seed, "Master seed");
  synth->add_option("--config", sa.config, "Synth config JSON (fields default when absent)");
  synth->add_option("--frames", sa.frames, "Override frames per clip");
  synth->add_option("--height", sa.height, "Override frame height");
  synth->add_option("--width", sa.width, "Override frame width");
  synth->add_option("--audio-seconds", sa.audio_seconds, "Override audio duration");

  AnchorsArgs aa;
  auto* anchors = app.add_subcommand("anchors", "Cluster box shapes into anchors");
  anchors->add_option("--manifest", aa.manifest, "Dataset manifest")->required();
  anchors->add_option("--k", aa.k, "Number of anchors")->check(CLI::PositiveNumber);
  anchors->add_option("--seed", aa.seed, "Clustering seed");
  anchors->add_option("--split", aa.split, "Records to use")->check(CLI::IsMember({"train", "val", "all"}));
  anchors->add_option("--out", aa.out, "Output JSON (stdout when omitted)");

  MelspecArgs ma;
  auto* melspec = app.add_subcommand("melspec", "Log-mel spectrogram of a WAV file");
  melspec->add_option("--wav", ma.wav, "Input WAV")->required();
  melspec->add_option("--out", ma.out, "Output TNSR")->required();
  melspec->add_option("--csv", ma.csv, "Optional CSV rendering of channel 0");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a model");
  trainc->add_option("--manifest", ta.manifest, "Dataset manifest")->required();
  trainc->add_option("--checkpoint", ta.checkpoint, "Output checkpoint path");
  trainc->add_option("--loss-csv", ta.loss_csv, "Loss trace (default <checkpoint>.loss.csv)");
  trainc->add_option("--anchors", ta.anchors, "Anchor JSON from the anchors command");
  trainc->add_option("--num-anchors", ta.num_anchors, "Anchors to cluster when --anchors is absent")
      ->check(CLI::PositiveNumber);
  trainc->add_option("--seed", ta.seed, "Seed for init, anchors and shuffling");
  trainc->add_option("--grid", ta.grid, "Grid size (square)")->check(CLI::Range(3, 64));
  trainc->add_option("--feat-dim", ta.feat_dim, "Feature channels per branch")->check(CLI::PositiveNumber);
  trainc->add_option("--epochs", ta.epochs, "Epochs")->check(CLI::PositiveNumber);
  trainc->add_option("--lr", ta.lr, "Learning rate")->check(CLI::NonNegativeNumber);
  trainc->add_option("--batch-size", ta.batch_size, "Batch size")->check(CLI::PositiveNumber);
  trainc->add_option("--max-steps", ta.max_steps, "Stop after this many updates (0 = no cap)");
  trainc->add_option("--checkpoint-every", ta.checkpoint_every, "Also save every N epochs (0 = off)");

  DetectArgs da;
  auto* detectc = app.add_subcommand("detect", "Run a trained model over a dataset");
  detectc->add_option("--checkpoint", da.checkpoint, "Checkpoint")->required();
  detectc->add_option("--manifest", da.manifest, "Dataset manifest")->required();
  detectc->add_option("--out", da.out, "Detections JSONL");
  detectc->add_option("--split", da.split, "Records to process")->check(CLI::IsMember({"train", "val", "all"}));
  detectc->add_option("--conf-thresh", da.conf_thresh, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
  detectc->add_option("--nms-iou", da.nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  detectc->add_flag("--zero-audio", da.zero_audio, "Replace audio with silence");
  detectc->add_option("--dump-attention", da.dump_attention, "Directory for W_av / W_va TNSR files");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Score detections against ground truth");
  evalc->add_option("--detections", ea.detections, "Detections JSONL")->required();
  evalc->add_option("--manifest", ea.manifest, "Dataset manifest")->required();
  evalc->add_option("--out", ea.out, "Report JSON");
  evalc->add_option("--pr-csv", ea.pr_csv, "Precision-recall curve CSV");
  evalc->add_option("--iou", ea.iou, "Match IoU threshold")->check(CLI::Range(0.0, 1.0));
  evalc->add_option("--seed", ea.seed, "Seed recorded in the report");

  TrajArgs xa;
  auto* traj = app.add_subcommand("export-traj", "Detection centres over time as CSV");
  traj->add_option("--detections", xa.detections, "Detections JSONL, one line per frame")->required();
  traj->add_option("--fps", xa.fps, "Frames per second")->required();
  traj->add_option("--out", xa.out, "Output CSV");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  grad->add_option("--out", ga.out, "Also write the table here");
  grad->add_option("--tolerance", ga.tolerance, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kValidation;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*anchors) return cmd_anchors(aa, out);
    if (*melspec) return cmd_melspec(ma, out);
    if (*trainc) return cmd_train(ta, out);
    if (*detectc) return cmd_detect(da, out);
    if (*evalc) return cmd_eval(ea, out);
    if (*traj) return cmd_export_traj(xa, out);
    if (*grad) return cmd_gradcheck(ga, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const ManifestError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const tnsr::FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}

}  // namespace avf::cli
