#include "pfsa/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include "pfsa/attention.hpp"
#include "pfsa/checkpoint.hpp"
#include "pfsa/dataset.hpp"
#include "pfsa/errors.hpp"
#include "pfsa/gradcheck.hpp"
#include "pfsa/retrieval.hpp"

namespace pfsa::cli {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
  }
}

std::vector<Sample> load_or_generate(const RunConfig& config) {
  if (!config.data_dir.empty()) return load_dir(config.data_dir);
  return generate_toy(config.toy);
}

/// Training identities mapped to contiguous class indices, in ascending identity order.
std::map<int, int> class_index(std::span<const Sample> samples) {
  std::set<int> ids;
  for (const auto& s : samples) {
    if (s.split == Split::train) ids.insert(s.identity);
  }
  std::map<int, int> index;
  for (int id : ids) index.emplace(id, static_cast<int>(index.size()));
  return index;
}

std::vector<Sample> relabelled_train(std::span<const Sample> samples, const std::map<int, int>& index) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.split != Split::train) continue;
    Sample copy = s;
    copy.identity = index.at(s.identity);
    out.push_back(std::move(copy));
  }
  return out;
}

ModelConfig resolve_model(const RunConfig& config, std::size_t train_classes) {
  ModelConfig model = config.model;
  if (config.infer_num_classes) {
    model.num_classes = train_classes;
  } else if (train_classes > model.num_classes) {
    throw ConfigError("training data has " + std::to_string(train_classes) + " identities but num_classes = " +
                      std::to_string(model.num_classes));
  }
  model.validate();
  return model;
}

/// Model config for commands that start from a checkpoint: class count comes from the main head.
ModelConfig model_for_checkpoint(const RunConfig& config, const Params& params) {
  ModelConfig model = config.model;
  if (config.infer_num_classes) {
    auto it = params.find(param_names::main_bias);
    if (it == params.end()) throw ParseError("checkpoint has no '" + param_names::main_bias + "' entry");
    model.num_classes = it->second.size();
  }
  model.validate();
  check_params(params, model);
  return model;
}

const std::filesystem::path& require_path(const std::filesystem::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("no ") + what + " given (set it in the config or on the command line)");
  return p;
}

std::filesystem::path output_dir(const RunConfig& config) {
  if (!config.out_dir.empty()) return config.out_dir;
  if (!config.checkpoint.empty() && config.checkpoint.has_parent_path()) return config.checkpoint.parent_path();
  return ".";
}

}  // namespace

int cmd_gen(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out) {
  require_path(out_dir, "output directory");
  const auto samples = generate_toy(config.toy);
  ensure_dir(out_dir);
  export_dir(samples, out_dir);
  for (Split split : {Split::train, Split::query, Split::gallery}) {
    const auto n = std::count_if(samples.begin(), samples.end(), [split](const Sample& s) { return s.split == split; });
    out << split_name(split) << " = " << n << '\n';
  }
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  const auto& ckpt = require_path(config.checkpoint, "checkpoint path");
  const auto samples = load_or_generate(config);
  const auto index = class_index(samples);
  const auto train_set = relabelled_train(samples, index);
  const ModelConfig model = resolve_model(config, index.size());

  const TrainResult result = train(model, train_set, config.training);

  const auto dir = output_dir(config);
  ensure_dir(dir);
  if (ckpt.has_parent_path()) ensure_dir(ckpt.parent_path());
  write_checkpoint(result.params, ckpt);

  const auto log_path = dir / "loss_log.csv";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open '" + log_path.string() + "' for writing");
  log << std::setprecision(17);
  log << "epoch,total_loss,part_loss,ds_loss\n";
  for (const auto& e : result.log) log << e.epoch << ',' << e.total << ',' << e.parts << ',' << e.ds << '\n';
  if (!log) throw IoError("failed writing '" + log_path.string() + "'");

  out << std::fixed << std::setprecision(6);
  out << "epochs = " << result.log.size() << '\n';
  if (!result.log.empty()) out << "final_loss = " << result.log.back().total << '\n';
  out << "train_accuracy = " << classification_accuracy(result.params, model, train_set) << '\n';
  out << "checkpoint = " << ckpt.string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  const Params params = read_checkpoint(require_path(config.checkpoint, "checkpoint path"));
  const ModelConfig model = model_for_checkpoint(config, params);
  const auto samples = load_or_generate(config);
  const RankingResult result = evaluate_model(params, model, samples, config.max_rank);
  out << format_report(result);
  if (!config.out_dir.empty()) {
    ensure_dir(config.out_dir);
    write_per_query_csv(result, config.out_dir / "per_query_ap.csv");
  }
  return 0;
}

int cmd_cam(const RunConfig& config, const CamRequest& request, std::ostream& out) {
  const Params params = read_checkpoint(require_path(config.checkpoint, "checkpoint path"));
  const ModelConfig model = model_for_checkpoint(config, params);
  if (request.stage < 1 || request.stage > model.num_ds_branches()) {
    throw ConfigError("stage " + std::to_string(request.stage) + " has no deep-supervision head (valid: 1.." +
                      std::to_string(model.num_ds_branches()) + ")");
  }
  if (request.class_id >= model.num_classes) {
    throw ConfigError("class " + std::to_string(request.class_id) + " out of range for " +
                      std::to_string(model.num_classes) + " classes");
  }
  if (request.mode == CamSource::full_fc) throw ConfigError("cam mode must be 'gap' or 'sa'");
  const Tensor image = read_ppm(require_path(request.image, "image path"));
  const auto maps = stage_features(params, model, image);
  const std::size_t branch = request.stage - 1;
  const Tensor& f = maps[branch];
  const Tensor& w = params.at(param_names::ds_weight(branch));
  const std::span<const double> row = w.data().subspan(request.class_id * w.dim(1), w.dim(1));
  const int class_id = static_cast<int>(request.class_id);
  const Cam cam = request.mode == CamSource::sa ? cam_sa(f, row, class_id) : cam_gap(f, row, class_id);

  const auto dir = output_dir(config);
  ensure_dir(dir);
  const std::string stem = "cam_stage" + std::to_string(request.stage) + "_class" + std::to_string(request.class_id) +
                           "_" + std::string(cam_source_name(request.mode));
  heatmap_export(cam, dir / (stem + ".csv"), HeatmapFormat::csv);
  heatmap_export(cam, dir / (stem + ".pgm"), HeatmapFormat::pgm);
  const auto att_path = dir / ("attention_stage" + std::to_string(request.stage) + ".csv");
  write_matrix_csv(attention_map(f).weights, att_path);
  out << "csv = " << (dir / (stem + ".csv")).string() << '\n';
  out << "pgm = " << (dir / (stem + ".pgm")).string() << '\n';
  out << "attention = " << att_path.string() << '\n';
  out << "size = " << cam.values.dim(0) << "x" << cam.values.dim(1) << '\n';
  return 0;
}

int cmd_gradcheck(const RunConfig& config, const std::string& inject_fault, std::ostream& out, std::ostream& err) {
  GradcheckOptions options;
  options.trials = config.gradcheck_trials;
  options.seed = config.seed + 1;
  options.inject_fault = inject_fault;
  const auto report = run_gradcheck(options);
  std::vector<std::string> failed;
  out << std::left << std::setw(12) << "layer" << std::setw(14) << "max_error" << std::setw(12) << "threshold"
      << "status\n";
  for (const auto& e : report) {
    out << std::left << std::setw(12) << e.layer << std::setw(14) << std::scientific << std::setprecision(3)
        << e.max_error << std::setw(12) << e.threshold << (e.passed ? "ok" : "FAIL") << '\n';
    if (!e.passed) failed.push_back(e.layer);
  }
  out << std::defaultfloat;
  if (failed.empty()) return 0;
  err << "gradcheck failed for:";
  for (const auto& name : failed) err << ' ' << name;
  err << '\n';
  return 2;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parameter-free spatial attention toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file")->required();
    sub->add_option("--checkpoint", checkpoint, "checkpoint path (overrides config)");
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    sub->add_option("--seed", seed, "seed (overrides config)");
  };

  auto* gen = app.add_subcommand("gen", "write the synthetic dataset as PPM images");
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint and loss log");
  auto* eval = app.add_subcommand("eval", "cross-camera retrieval evaluation of a checkpoint");
  auto* cam = app.add_subcommand("cam", "export a class activation map");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  for (auto* sub : {gen, train_cmd, eval, cam, grad}) common(sub);

  CamRequest request;
  std::string image_path;
  std::string mode = "gap";
  cam->add_option("--image", image_path, "input PPM image")->required();
  cam->add_option("--stage", request.stage, "1-based stage with a deep-supervision head")->required();
  cam->add_option("--class", request.class_id, "class index")->required();
  cam->add_option("--mode", mode, "gap or sa")->check(CLI::IsMember({"gap", "sa"}));

  std::string inject_fault;
  grad->add_option("--inject-fault", inject_fault, "negate one layer's analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    RunConfig config = load_run_config(config_path);
    if (seed) config.apply_seed(*seed);
    if (!checkpoint.empty()) config.checkpoint = checkpoint;
    if (!out_dir.empty()) config.out_dir = out_dir;

    if (*gen) return cmd_gen(config, config.out_dir.empty() ? config.data_dir : config.out_dir, out);
    if (*train_cmd) return cmd_train(config, out);
    if (*eval) return cmd_eval(config, out);
    if (*cam) {
      request.image = image_path;
      request.mode = mode == "sa" ? CamSource::sa : CamSource::gap;
      return cmd_cam(config, request, out);
    }
    return cmd_gradcheck(config, inject_fault, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace pfsa::cli
