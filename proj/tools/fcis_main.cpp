// Batch front end: synth | train | infer | eval. Each command is a single
// process run to completion; all knobs come from --config / --set / --seed,
// so a run is reproducible from its command line alone.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "fcis/dataset.hpp"
#include "fcis/errors.hpp"
#include "fcis/eval.hpp"
#include "fcis/infer.hpp"
#include "fcis/kv.hpp"
#include "fcis/model.hpp"
#include "fcis/png_io.hpp"
#include "fcis/runconfig.hpp"
#include "fcis/train.hpp"

namespace fs = std::filesystem;

namespace {

// Flags shared by every subcommand. --seed is sugar for a trailing
// `--set seed=N`, so it wins over both the file and earlier --set entries.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key = value config file");
  cmd->add_option("--set", opts.sets, "override, key=value (repeatable)")
      ->type_name("KEY=VALUE");
  cmd->add_option("--seed", opts.seed, "dataset and training seed");
}

fcis::RunConfig resolve_config(const CommonOpts& opts) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const std::string& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw fcis::ConfigError("--set expects key=value, got '" + kv + "'");
    overrides.emplace_back(fcis::trim(kv.substr(0, eq)), fcis::trim(kv.substr(eq + 1)));
  }
  if (!opts.seed.empty()) overrides.emplace_back("seed", opts.seed);
  return fcis::load_run_config(opts.config_path, overrides);
}

int cmd_synth(const CommonOpts& common, const std::string& out_dir) {
  const fcis::RunConfig cfg = resolve_config(common);
  const std::vector<fcis::Sample> samples = fcis::generate_dataset(cfg.dataset);
  fcis::write_dataset(out_dir, samples);
  std::size_t instances = 0;
  for (const auto& s : samples) instances += s.instances.size();
  std::cout << "wrote " << samples.size() << " samples, " << instances << " instances to "
            << out_dir << "\n";
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& out_ckpt,
              const std::string& resume_path, const std::string& log_path) {
  fcis::RunConfig cfg = resolve_config(common);
  const std::vector<fcis::Sample> data = fcis::read_dataset(data_dir);

  fcis::Checkpoint resume;
  const fcis::Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = fcis::load_checkpoint(resume_path);
    // the checkpoint's parameters define the architecture; config-file model
    // keys cannot disagree with them, so the stored block wins
    cfg.model = resume.config;
    resume_ptr = &resume;
  }

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw fcis::DataError("cannot open loss log for writing: " + log_path);
  }

  const fcis::TrainResult result =
      fcis::train(cfg.model, cfg.train, data, resume_ptr, log.is_open() ? &log : nullptr);
  fcis::save_checkpoint(out_ckpt, result.checkpoint);

  std::cout << "trained to iteration " << result.checkpoint.iteration << " ("
            << result.log.size() << " this run, " << fcis::format_double(result.mean_iter_ms)
            << " ms/iter), wrote " << out_ckpt << "\n";
  if (!result.log.empty()) {
    const fcis::LossRow& last = result.log.back();
    std::cout << "final losses det=" << fcis::format_double(last.l_det)
              << " seg=" << fcis::format_double(last.l_seg)
              << " bbox=" << fcis::format_double(last.l_bbox)
              << " rpn=" << fcis::format_double(last.l_rpn)
              << " total=" << fcis::format_double(last.l_total) << "\n";
  }
  return 0;
}

int cmd_infer(const CommonOpts& common, const std::string& ckpt_path, const std::string& input,
              const std::string& out_path, const std::string& overlay_dir) {
  const fcis::RunConfig cfg = resolve_config(common);
  const fcis::Checkpoint ckpt = fcis::load_checkpoint(ckpt_path);

  // a dataset directory maps image ids to its index order; a single PNG is id 0
  std::vector<fcis::Tensor<float>> images;
  if (fs::is_directory(input)) {
    for (auto& s : fcis::read_dataset(input)) images.push_back(std::move(s.image));
  } else {
    images.push_back(fcis::read_png_rgb8(input));
  }

  std::ofstream out(out_path);
  if (!out) throw fcis::DataError("cannot open detections file for writing: " + out_path);
  if (!overlay_dir.empty()) fs::create_directories(overlay_dir);

  std::size_t total = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::vector<fcis::Detection> dets =
        fcis::run_inference(ckpt.params, ckpt.config, images[i], cfg.infer);
    fcis::write_detection_lines(out, static_cast<int>(i), dets);
    total += dets.size();
    if (!overlay_dir.empty()) {
      const fs::path path = fs::path(overlay_dir) / (fcis::sample_id(static_cast<int>(i)) + ".png");
      fcis::write_png_rgb8(path.string(), fcis::render_overlay(images[i], dets));
    }
  }
  std::cout << "wrote " << total << " detections over " << images.size() << " images to "
            << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& det_path, const std::string& data_dir,
             const std::string& out_csv) {
  resolve_config(common);  // surfaces bad keys even though eval has no knobs
  const std::vector<fcis::Sample> data = fcis::read_dataset(data_dir);

  std::ifstream in(det_path);
  if (!in) throw fcis::DataError("cannot open detections file: " + det_path);
  std::vector<fcis::DetectionRecord> records = fcis::read_detection_lines(in);

  std::vector<fcis::EvalImage> images(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) images[i].gt = data[i].instances;
  for (auto& rec : records) {
    if (rec.image_id < 0 || rec.image_id >= static_cast<int>(images.size()))
      throw fcis::DataError("detection references image " + std::to_string(rec.image_id) +
                            " but the dataset has " + std::to_string(images.size()) + " images");
    images[rec.image_id].dets.push_back(std::move(rec.det));
  }

  const fcis::EvalResult result = fcis::evaluate(images, fcis::default_thresholds());
  std::cout << fcis::format_ap_table(result);
  if (!out_csv.empty()) {
    std::ofstream csv(out_csv);
    if (!csv) throw fcis::DataError("cannot open csv for writing: " + out_csv);
    fcis::write_ap_csv(csv, result);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"position-sensitive instance segmentation on synthetic shape scenes"};
  app.require_subcommand(1);

  CommonOpts synth_common, train_common, infer_common, eval_common;
  std::string synth_out;
  std::string train_data, train_out, train_resume, train_log;
  std::string infer_ckpt, infer_input, infer_out, infer_overlay;
  std::string eval_dets, eval_data, eval_out;

  CLI::App* synth = app.add_subcommand("synth", "generate a shape dataset");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  add_common(synth, synth_common);

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset directory");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint to write")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train->add_option("--log", train_log, "per-iteration loss csv");
  add_common(train, train_common);

  CLI::App* infer = app.add_subcommand("infer", "run a checkpoint over images");
  infer->add_option("--ckpt", infer_ckpt, "checkpoint to load")->required();
  infer->add_option("--input", infer_input, "dataset directory or a single png")->required();
  infer->add_option("--out", infer_out, "detections file to write")->required();
  infer->add_option("--overlay", infer_overlay, "directory for overlay pngs");
  add_common(infer, infer_common);

  CLI::App* eval = app.add_subcommand("eval", "score a detections file against a dataset");
  eval->add_option("--detections", eval_dets, "detections file")->required();
  eval->add_option("--data", eval_data, "dataset directory with ground truth")->required();
  eval->add_option("--out", eval_out, "per-category ap csv");
  add_common(eval, eval_common);

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_common, synth_out);
    if (train->parsed())
      return cmd_train(train_common, train_data, train_out, train_resume, train_log);
    if (infer->parsed())
      return cmd_infer(infer_common, infer_ckpt, infer_input, infer_out, infer_overlay);
    if (eval->parsed()) return cmd_eval(eval_common, eval_dets, eval_data, eval_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help is a success, anything else is usage
  } catch (const fcis::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const fcis::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const fcis::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
