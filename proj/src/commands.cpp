#include "blursplat/commands.hpp"

#include "blursplat/image_io.hpp"
#include "blursplat/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace blursplat {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void require_parent(const fs::path& dir) {
  const fs::path parent = fs::absolute(dir).parent_path();
  if (!fs::is_directory(parent)) throw std::runtime_error(parent.string() + ": parent directory does not exist");
}

RenderSettings dataset_settings(const Dataset& data) {
  RenderSettings s;
  s.background = data.spec.background;
  return s;
}

}  // namespace

Dataset cmd_synth(const SynthOptions& o, std::ostream& log) {
  SyntheticSpec spec;
  if (o.spec_file) {
    spec = spec_from_json_text(read_file(*o.spec_file));
  } else if (o.preset) {
    spec = preset(*o.preset);
  } else {
    throw std::invalid_argument("synth: give --preset or --config");
  }
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  require_parent(o.out_dir);
  const Dataset d = generate(spec);
  export_dataset(d, o.out_dir);
  log << "synth: " << spec.name << " seed " << spec.seed << ", " << d.frames.size() << " frames " << spec.width << "x"
      << spec.height << ", " << d.gt_scene.static_set.size() << " static + " << d.gt_scene.dynamic_set.size()
      << " dynamic Gaussians -> " << o.out_dir.string() << "\n";
  return d;
}

TrainConfig load_train_config(const std::optional<fs::path>& file, const Dataset& data,
                              std::optional<std::uint64_t> seed, std::optional<int> threads) {
  TrainConfig c;
  bool has_background = false;
  if (file) {
    const std::string text = read_file(*file);
    try {
      c = train_config_from_json_text(text);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(file->string() + ": " + e.what());
    }
    has_background = nlohmann::json::parse(text).contains("background");
  }
  if (!has_background) c.background = data.spec.background;
  if (seed) c.seed = *seed;
  if (threads) c.threads = *threads;
  c.validate();
  return c;
}

TrainState cmd_train(const TrainOptions& o, std::ostream& log) {
  const Dataset data = import_dataset(o.dataset_dir);
  const TrainConfig config = load_train_config(o.config_file, data, o.seed, o.threads);
  require_parent(o.out_dir);
  fs::create_directories(o.out_dir);
  write_file(o.out_dir / "config.json", train_config_to_json_text(config) + "\n");

  TrainState state;
  if (o.resume) {
    const Checkpoint ck = read_checkpoint(*o.resume);
    if (ck.exposure.subframes != config.exposure.subframes || ck.exposure.reference != config.exposure.reference) {
      throw std::invalid_argument(o.resume->string() + ": checkpoint exposure does not match the config");
    }
    state = to_train_state(ck, config.adam);
    state.optimizer.check_matches(state.scene);
    log << "train: resuming at epoch " << state.next_epoch << "\n";
  } else {
    state = initial_state(data, config);
  }

  const StageSchedule& sch = config.schedule;
  auto save_boundaries = [&](const TrainState& s) {
    const Checkpoint ck = to_checkpoint(s, config.exposure);
    if (s.next_epoch == sch.e1) write_checkpoint(o.out_dir / "stage_e1.ckpt", ck);
    if (s.next_epoch == sch.e2) write_checkpoint(o.out_dir / "stage_e2.ckpt", ck);
  };
  save_boundaries(state);
  write_checkpoint(o.out_dir / "last_good.ckpt", to_checkpoint(state, config.exposure));

  try {
    train(state, data, config, [&](const TrainState& s) {
      write_checkpoint(o.out_dir / "last_good.ckpt", to_checkpoint(s, config.exposure));
      save_boundaries(s);
      write_file(o.out_dir / "history.csv", history_csv(s.history));
      const EpochRecord& r = s.history.back();
      log << "epoch " << r.epoch << " [" << to_string(sch.stage(r.epoch)) << "] L_total " << r.l_total << " rot "
          << r.rot_err_deg << " deg\n";
    });
  } catch (const NonFiniteLoss& e) {
    log << "train: " << e.what() << "; last good checkpoint: " << (o.out_dir / "last_good.ckpt").string() << "\n";
    throw;
  }
  write_file(o.out_dir / "history.csv", history_csv(state.history));
  write_checkpoint(o.out_dir / "final.ckpt", to_checkpoint(state, config.exposure));
  log << "train: done, " << state.history.size() << " epochs -> " << (o.out_dir / "final.ckpt").string() << "\n";
  return state;
}

RenderOutputs cmd_render(const RenderOptions& o, std::ostream& log) {
  const Checkpoint ck = read_checkpoint(o.checkpoint);
  const Dataset data = import_dataset(o.dataset_dir);
  const SubframeChoice choice = parse_subframe_choice(o.choice);
  const FrameObservation& obs = data.frame(o.t);
  (void)ck.scene.at(o.t);  // unknown timestamp -> out_of_range
  const RenderSettings settings = dataset_settings(data);

  RenderOutputs out;
  out.sharp = render_sharp(ck.scene, data.camera, o.t, choice, ck.exposure, settings);
  out.blur = synthesize_blur(ck.scene, data.camera, o.t, ck.exposure, settings);
  out.abs_diff = Image(out.blur.width, out.blur.height);
  for (std::size_t i = 0; i < out.blur.size(); ++i) out.abs_diff.data[i] = std::abs(out.blur.data[i] - obs.blurry.data[i]);

  require_parent(o.out_dir);
  fs::create_directories(o.out_dir);
  const std::string sharp_name = "sharp_" + std::string(to_string(choice));
  for (const auto& [name, img] : {std::pair{sharp_name, &out.sharp}, std::pair{std::string("blur"), &out.blur},
                                  std::pair{std::string("absdiff"), &out.abs_diff}}) {
    write_pfm(o.out_dir / (name + ".pfm"), *img);
    write_png(o.out_dir / (name + ".png"), *img);
  }
  log << "render: t = " << o.t << ", " << to_string(choice) << " subframe of " << ck.exposure.subframes << " -> "
      << o.out_dir.string() << "\n";
  return out;
}

std::vector<EvalRow> evaluate(const SceneModel& scene, const ExposureSpec& exposure, const Dataset& data) {
  const RenderSettings settings = dataset_settings(data);
  std::vector<EvalRow> rows;
  EvalRow mean;
  mean.label = "mean";
  for (const FrameObservation& f : data.frames) {
    EvalRow r;
    r.label = std::to_string(f.t);
    const Image sharp = render_sharp(scene, data.camera, f.t, SubframeChoice::middle, exposure, settings);
    const Image blur = synthesize_blur(scene, data.camera, f.t, exposure, settings);
    r.psnr_sharp = psnr(sharp, f.sharp);
    r.ssim_sharp = ssim(sharp, f.sharp);
    r.psnr_blur = psnr(blur, f.blurry);
    r.ssim_blur = ssim(blur, f.blurry);
    const Pose est = subframe_poses(scene, f.t, exposure)[static_cast<std::size_t>(exposure.reference - 1)];
    const PoseError pe = pose_error(est, f.gt_pose);
    r.rot_err_deg = pe.rotation_deg;
    r.trans_err = pe.translation;
    r.sharpness = laplacian_sharpness(sharp);
    rows.push_back(r);
  }
  const double n = static_cast<double>(rows.size());
  for (const EvalRow& r : rows) {
    mean.psnr_sharp += r.psnr_sharp / n;
    mean.ssim_sharp += r.ssim_sharp / n;
    mean.psnr_blur += r.psnr_blur / n;
    mean.ssim_blur += r.ssim_blur / n;
    mean.rot_err_deg += r.rot_err_deg / n;
    mean.trans_err += r.trans_err / n;
    mean.sharpness += r.sharpness / n;
  }
  rows.push_back(mean);
  return rows;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "t,psnr_sharp,ssim_sharp,psnr_blur,ssim_blur,rot_err_deg,trans_err,sharpness\n";
  char buf[512];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.label.c_str(), r.psnr_sharp,
                  r.ssim_sharp, r.psnr_blur, r.ssim_blur, r.rot_err_deg, r.trans_err, r.sharpness);
    out += buf;
  }
  return out;
}

std::vector<EvalRow> cmd_eval(const EvalOptions& o, std::ostream& log) {
  const Checkpoint ck = read_checkpoint(o.checkpoint);
  const Dataset data = import_dataset(o.dataset_dir);
  if (ck.scene.timestamp_count() != static_cast<int>(data.frames.size())) {
    throw std::invalid_argument(o.checkpoint.string() + ": checkpoint and dataset disagree on the frame count");
  }
  const std::vector<EvalRow> rows = evaluate(ck.scene, ck.exposure, data);
  require_parent(o.out_csv);
  write_file(o.out_csv, eval_csv(rows));
  const EvalRow& m = rows.back();
  log << "eval: sharp PSNR " << m.psnr_sharp << " dB, SSIM " << m.ssim_sharp << ", rotation error " << m.rot_err_deg
      << " deg -> " << o.out_csv.string() << "\n";
  return rows;
}

ParamClass parse_param_class(std::string_view name) {
  for (int i = 0; i < kParamClassCount; ++i) {
    if (to_string(static_cast<ParamClass>(i)) == name) return static_cast<ParamClass>(i);
  }
  throw std::invalid_argument("unknown parameter class '" + std::string(name) + "'");
}

bool cmd_gradcheck(const GradcheckOptions& o, std::ostream& log) {
  GradCheckOptions g;
  g.gaussians = o.gaussians;
  g.size = o.size;
  g.seed = o.seed;
  if (o.corrupt) g.corrupt = parse_param_class(*o.corrupt);
  const auto rows = gradient_check(g);
  bool ok = true;
  char buf[256];
  log << "class            scalars  rel_error    result\n";
  for (const GradCheckRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %7d  %.3e  %s\n", std::string(to_string(r.param)).c_str(), r.count,
                  r.rel_error, r.passed ? "PASS" : "FAIL");
    log << buf;
    ok = ok && r.passed;
  }
  return ok;
}

}  // namespace blursplat
