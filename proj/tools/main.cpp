// Command-line front end: dataset synthesis, flow precomputation,
// training, evaluation, and inference with overlay rendering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "affseg/data.hpp"
#include "affseg/errors.hpp"
#include "affseg/metrics.hpp"
#include "affseg/trainer.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace affseg;

namespace {

constexpr const char* kRunRootEnv = "AFFSEG_RUN_ROOT";

std::string sequence_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

fs::path resolve_run_dir(const std::string& run_dir) {
  fs::path p(run_dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kRunRootEnv)) {
    return fs::path(root) / p;
  }
  return p;
}

std::vector<SequenceBatch> load_split_batches(const cli::DataConfig& data,
                                              const ModelConfig& model_cfg,
                                              const std::string& split) {
  std::vector<fs::path> dirs = list_split(data.root, split);
  if (dirs.empty()) throw DataError("dataset split " + split + " is empty");
  std::vector<SequenceBatch> batches;
  batches.reserve(dirs.size());
  for (const auto& dir : dirs) {
    InteractionSequence seq = load_sequence(dir, data.max_depth_units);
    FlowCache cache = load_flow_cache(dir);
    PreprocessOptions opts;
    opts.use_depth = model_cfg.use_depth;
    opts.flow_dim = model_cfg.flow_dim;
    opts.flow_cache = &cache;
    batches.push_back(preprocess(seq, model_cfg.input_h, model_cfg.input_w, seq.fps,
                                 data.target_fps, opts));
  }
  return batches;
}

AffordanceModel model_from_checkpoint(const Checkpoint& ckpt) {
  AffordanceModel model(ckpt.config, /*seed=*/0);
  apply_checkpoint(ckpt, model);
  return model;
}

ImageU8 render_overlay(const ImageU8& base, const LabelMap& labels) {
  ImageU8 out = base;
  const auto& palette = taxonomy::palette();
  for (int y = 0; y < labels.h; ++y) {
    for (int x = 0; x < labels.w; ++x) {
      const int cls = labels.at(y, x);
      if (cls <= 0) continue;
      const PaletteColor& c = palette[static_cast<size_t>(cls)];
      const uint8_t rgb[3] = {c.r, c.g, c.b};
      for (int ch = 0; ch < 3; ++ch) {
        out.at(ch, y, x) = static_cast<uint8_t>((out.at(ch, y, x) + rgb[ch]) / 2);
      }
    }
  }
  return out;
}

ImageU8 tensor_rgb_to_image(const TensorPtr& t) {
  ImageU8 img(3, t->dim(1), t->dim(2));
  const long hw = static_cast<long>(img.h) * img.w;
  std::vector<double> plane(static_cast<size_t>(hw));
  for (int c = 0; c < 3; ++c) {
    std::copy(t->data().begin() + c * hw, t->data().begin() + (c + 1) * hw, plane.begin());
    std::vector<uint8_t> q = quantize_u8(plane);
    std::copy(q.begin(), q.end(), img.data.begin() + c * hw);
  }
  return img;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, int count, uint64_t seed, double split_ratio, int size,
              int frames, int fps) {
  if (count < 1) throw ConfigError("synth: count must be positive");
  if (split_ratio <= 0.0 || split_ratio > 1.0) {
    throw ConfigError("synth: split ratio must lie in (0, 1]");
  }
  const int n_val = static_cast<int>(std::floor(count * (1.0 - split_ratio)));
  const int n_train = count - n_val;

  SynthOptions opts;
  opts.size = size;
  opts.frames = frames;
  opts.fps = fps;

  std::error_code ec;
  fs::create_directories(fs::path(out_dir), ec);
  if (ec || !fs::exists(out_dir)) {
    throw DataError("synth: cannot create output directory " + out_dir);
  }

  std::mt19937_64 rng(seed);
  int train_idx = 0, val_idx = 0;
  for (int i = 0; i < count; ++i) {
    SynthSpec spec = random_spec(rng);
    const uint64_t seq_seed = rng();
    InteractionSequence seq = generate_synthetic_sequence(spec, seq_seed, opts);
    const bool is_train = i < n_train;
    const fs::path dir = fs::path(out_dir) / (is_train ? "train" : "val") /
                         sequence_id(is_train ? train_idx++ : val_idx++);
    save_sequence(seq, dir);
  }
  std::printf("wrote %d train / %d val sequences to %s\n", n_train, n_val, out_dir.c_str());
  return 0;
}

int cmd_flow(const std::string& data_root, bool force, int target_fps, double max_depth) {
  int failures = 0;
  int written = 0;
  for (const std::string split : {"train", "val"}) {
    if (!fs::exists(fs::path(data_root) / split)) continue;
    for (const auto& dir : list_split(data_root, split)) {
      try {
        InteractionSequence seq = load_sequence(dir, max_depth);
        const std::vector<int> kept =
            subsample_indices(static_cast<int>(seq.frames.size()), seq.fps, target_fps);
        fs::create_directories(dir / "flow");
        const CameraIntrinsics intr =
            CameraIntrinsics::defaults_for(seq.frames.front().h, seq.frames.front().w);
        for (size_t k = 1; k < kept.size(); ++k) {
          char name[16];
          std::snprintf(name, sizeof(name), "%04d.png", kept[k]);
          const fs::path out = dir / "flow" / name;
          if (!force && fs::exists(out)) continue;
          FlowField field =
              estimate_scene_flow(seq.frames[static_cast<size_t>(kept[k - 1])],
                                  seq.frames[static_cast<size_t>(kept[k])], intr);
          write_png_rgb8(out, colorize_flow(field));
          ++written;
        }
      } catch (const std::exception& e) {
        std::fprintf(stderr, "flow: %s failed: %s\n", dir.string().c_str(), e.what());
        ++failures;
      }
    }
  }
  std::printf("flow: wrote %d images, %d sequences failed\n", written, failures);
  return failures > 0 ? 2 : 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& variant, const std::string& data_root,
              const std::string& run_dir, const std::string& resume) {
  nlohmann::json merged = cli::default_config_json();
  if (!config_path.empty()) {
    merged.merge_patch(cli::load_config_file(config_path));
  }
  for (const auto& o : overrides) cli::apply_override(merged, o);
  if (!data_root.empty()) merged["data"]["root"] = data_root;
  cli::RunConfig run = cli::parse_run_config(merged);
  if (!variant.empty()) {
    run.model = ModelConfig::with_variant(run.model, variant);
    run.model.validate();
  }

  // Dataset problems surface before the run directory is created.
  std::vector<SequenceBatch> batches = load_split_batches(run.data, run.model, "train");
  std::printf("loaded %zu training sequences from %s\n", batches.size(), run.data.root.c_str());

  const fs::path out_dir = resolve_run_dir(run_dir);
  fs::create_directories(out_dir);
  run.train.checkpoint_path = out_dir / "checkpoint.bin";
  const fs::path history_path = out_dir / "history.csv";

  AffordanceModel model(run.model, run.train.seed);
  TrainState state;
  bool resumed = false;
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    if (!(ckpt.config == run.model)) {
      throw ConfigError("resume checkpoint was trained with a different model config");
    }
    apply_checkpoint(ckpt, model, &state);
    resumed = true;
    std::printf("resuming from %s at epoch %d\n", resume.c_str(), state.next_epoch);
  }

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& s) {
    std::printf("epoch %d/%d lambda=(%.2f,%.2f) l_total=%.6f l_seg=%.6f l_action=%.6f\n",
                s.epoch + 1, run.train.epochs, s.lambda1, s.lambda2, s.l_total, s.l_seg,
                s.l_action);
    std::fflush(stdout);
  };

  std::vector<EpochStats> history = train(model, batches, run.train, &state, hooks);
  write_history_csv(history_path, history, /*append=*/resumed);
  std::printf("checkpoint: %s\nhistory: %s\n", run.train.checkpoint_path.string().c_str(),
              history_path.string().c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_root,
             const std::string& split, const std::string& mode_name, const std::string& out_json,
             int threads, int target_fps, double max_depth) {
  if (mode_name != "video" && mode_name != "static") {
    throw ConfigError("eval: mode must be 'video' or 'static'");
  }
  const EvalMode mode = mode_name == "video" ? EvalMode::kVideo : EvalMode::kStatic;

  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.config.affordance_classes != taxonomy::kAffordanceClasses) {
    throw ConfigError("eval: checkpoint has " + std::to_string(ckpt.config.affordance_classes) +
                      " affordance classes, dataset taxonomy has " +
                      std::to_string(taxonomy::kAffordanceClasses));
  }
  AffordanceModel model = model_from_checkpoint(ckpt);

  cli::DataConfig data;
  data.root = data_root;
  data.target_fps = target_fps;
  data.max_depth_units = max_depth;
  std::vector<SequenceBatch> batches = load_split_batches(data, model.config(), split);

  MetricsReport report = evaluate(model, batches, mode, threads);
  std::printf("%s", report.table().c_str());
  if (!out_json.empty()) {
    nlohmann::json j = report.to_json();
    j["mode"] = mode_name;
    const fs::path out(out_json);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    f << j.dump(2) << "\n";
    std::printf("report: %s\n", out_json.c_str());
  }
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& input, double threshold,
              const std::string& out_dir, int target_fps, double max_depth) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  AffordanceModel model = model_from_checkpoint(ckpt);
  const ModelConfig& cfg = model.config();

  if (!fs::exists(input)) throw DataError("infer: input not readable: " + input);
  fs::create_directories(fs::path(out_dir));

  Segmentation seg;
  ImageU8 display;  // what the overlay is drawn onto

  if (fs::is_directory(input)) {
    InteractionSequence seq = load_sequence(input, max_depth);
    FlowCache cache = load_flow_cache(input);
    PreprocessOptions opts;
    opts.use_depth = cfg.use_depth;
    opts.flow_dim = cfg.flow_dim;
    opts.flow_cache = &cache;
    SequenceBatch batch =
        preprocess(seq, cfg.input_h, cfg.input_w, seq.fps, target_fps, opts);
    NoGradGuard no_grad;
    AffordanceModel::Output out = model.forward_sequence(batch);
    seg = segmentation_from_logits(out.seg_logits, threshold);

    ImageU8 rgb(3, cfg.input_h, cfg.input_w);
    const long hw = static_cast<long>(cfg.input_h) * cfg.input_w;
    const TensorPtr& last = batch.appearance.back();
    std::vector<double> plane(static_cast<size_t>(hw));
    for (int c = 0; c < 3; ++c) {
      std::copy(last->data().begin() + c * hw, last->data().begin() + (c + 1) * hw,
                plane.begin());
      std::vector<uint8_t> q = quantize_u8(plane);
      std::copy(q.begin(), q.end(), rgb.data.begin() + c * hw);
    }
    display = rgb;
  } else {
    // Static image: centre-crop the largest square, resize to the model
    // input, run the single-frame path.
    ImageU8 img = read_png_rgb8(input);
    const int side = std::min(img.h, img.w);
    const int y0 = (img.h - side) / 2;
    const int x0 = (img.w - side) / 2;
    TensorPtr appearance = Tensor::zeros({cfg.appearance_channels(), cfg.input_h, cfg.input_w});
    const long hw = static_cast<long>(cfg.input_h) * cfg.input_w;
    for (int c = 0; c < 3; ++c) {
      std::vector<double> plane(static_cast<size_t>(side) * side);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          plane[static_cast<size_t>(y) * side + x] = img.at(c, y0 + y, x0 + x) / 255.0;
        }
      }
      std::vector<double> resized = resize_bilinear(plane, side, side, cfg.input_h, cfg.input_w);
      std::copy(resized.begin(), resized.end(), appearance->data().begin() + c * hw);
    }
    if (cfg.use_depth) {
      // No depth available for plain images; a mid-range constant keeps
      // the input in distribution.
      std::fill(appearance->data().begin() + 3 * hw, appearance->data().end(), 0.5);
    }
    seg = model.infer_static(appearance, threshold);
    display = tensor_rgb_to_image(appearance);
  }

  write_png_indexed(fs::path(out_dir) / "labels.png", seg.labels, taxonomy::palette());
  write_png_rgb8(fs::path(out_dir) / "overlay.png", render_overlay(display, seg.labels));
  std::printf("wrote %s/labels.png and %s/overlay.png\n", out_dir.c_str(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal affordance segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic interaction dataset");
  std::string synth_out = "data";
  int synth_count = 100;
  uint64_t synth_seed = 1;
  double synth_ratio = 962.0 / 1201.0;
  int synth_size = 48, synth_frames = 12, synth_fps = 30;
  synth->add_option("--out", synth_out, "Output dataset root");
  synth->add_option("--count", synth_count, "Number of sequences");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--split-ratio", synth_ratio, "Train share (default 962:1201)");
  synth->add_option("--size", synth_size, "Canvas edge length (divisible by 8)");
  synth->add_option("--frames", synth_frames, "Frames per sequence");
  synth->add_option("--fps", synth_fps, "Metadata frame rate");

  // flow
  auto* flow = app.add_subcommand("flow", "Precompute colorized flow images");
  std::string flow_data = "data";
  bool flow_force = false;
  int flow_fps = 10;
  double flow_depth = 4.5;
  flow->add_option("--data", flow_data, "Dataset root");
  flow->add_flag("--force", flow_force, "Rewrite existing flow images");
  flow->add_option("--target-fps", flow_fps, "Subsampling rate the cache is built for");
  flow->add_option("--max-depth", flow_depth, "Depth normalisation range (units)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_config, train_variant, train_data, train_resume;
  std::string train_run_dir = "run";
  std::vector<std::string> train_sets;
  train_cmd->add_option("--config", train_config, "JSON config file");
  train_cmd->add_option("--set", train_sets, "Override config values (section.key=value)");
  train_cmd->add_option("--variant", train_variant, "Model variant name");
  train_cmd->add_option("--data", train_data, "Dataset root (overrides config)");
  train_cmd->add_option("--run-dir", train_run_dir,
                        "Run directory (relative to $AFFSEG_RUN_ROOT when set)");
  train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_data = "data", eval_split = "val", eval_mode = "video",
              eval_out;
  int eval_threads = 2, eval_fps = 10;
  double eval_depth = 4.5;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset root");
  eval_cmd->add_option("--split", eval_split, "Dataset split");
  eval_cmd->add_option("--mode", eval_mode, "Inference mode: video or static");
  eval_cmd->add_option("--out", eval_out, "Write the report as JSON");
  eval_cmd->add_option("--threads", eval_threads, "Evaluation workers");
  eval_cmd->add_option("--target-fps", eval_fps, "Subsampling rate");
  eval_cmd->add_option("--max-depth", eval_depth, "Depth normalisation range (units)");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Segment an image or sequence directory");
  std::string infer_ckpt, infer_input, infer_out = ".";
  double infer_threshold = 0.75;
  int infer_fps = 10;
  double infer_depth = 4.5;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--input", infer_input, "PNG image or sequence directory")->required();
  infer_cmd->add_option("--threshold", infer_threshold, "Confidence threshold");
  infer_cmd->add_option("--out", infer_out, "Output directory");
  infer_cmd->add_option("--target-fps", infer_fps, "Subsampling rate (sequence input)");
  infer_cmd->add_option("--max-depth", infer_depth, "Depth normalisation range (units)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_count, synth_seed, synth_ratio, synth_size, synth_frames,
                       synth_fps);
    }
    if (flow->parsed()) {
      return cmd_flow(flow_data, flow_force, flow_fps, flow_depth);
    }
    if (train_cmd->parsed()) {
      return cmd_train(train_config, train_sets, train_variant, train_data, train_run_dir,
                       train_resume);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(eval_ckpt, eval_data, eval_split, eval_mode, eval_out, eval_threads,
                      eval_fps, eval_depth);
    }
    if (infer_cmd->parsed()) {
      return cmd_infer(infer_ckpt, infer_input, infer_threshold, infer_out, infer_fps,
                       infer_depth);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
