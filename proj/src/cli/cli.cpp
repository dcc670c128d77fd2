/* Copyright 2026 The FuseMOD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include "fusemod/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "json.hpp"

#include "fusemod/annotation.hpp"
#include "fusemod/error.hpp"
#include "fusemod/evalbench.hpp"
#include "fusemod/kernels.hpp"
#include "fusemod/kitti_ingest.hpp"
#include "fusemod/models.hpp"
#include "fusemod/synth.hpp"

namespace fusemod::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct KeySpec {
  const char* key;   // section.name
  const char* flag;  // long flag without dashes
  const char* value;
  const char* help;
};

// Every key the tool honors, with its default.
constexpr KeySpec kKeys[] = {
    {"paths.dataset_root", "data", ".", "dataset root holding manifest.txt"},
    {"paths.output_dir", "output", "out", "output directory"},
    {"run.workers", "workers", "0", "worker threads for parallel kernels (0: all cores)"},

    {"annotate.threshold", "threshold", "1.0", "Moving if world speed exceeds this (m/s)"},
    {"annotate.split_seed", "split-seed", "0", "seed of the whole-drive train/test split"},
    {"annotate.train_fraction", "train-fraction", "0.8", "target share of training frames"},
    {"annotate.ego_velocity", "ego-velocity", "posediff", "posediff or oxts"},
    {"annotate.rgbflow_dir", "rgbflow-dir", "flow_rgb", "rgbFlow folder inside each drive"},
    {"annotate.lidarflow_dir", "lidarflow-dir", "flow_lidar", "lidarFlow folder inside each drive"},
    {"annotate.flow_extension", "flow-extension", ".png", ".png (KITTI 16-bit) or .flo"},
    {"annotate.instance_dir", "instance-dir", "instances", "instance mask folder inside each drive"},
    {"annotate.write_depth", "write-depth", "true", "project velodyne scans to sparse depth maps"},

    {"model.plan", "plan", "rgb + rgbflow + lidarflow", "fusion plan, e.g. 'rgb + (rgbflow x lidarflow)'"},
    {"model.encoder", "encoder", "tiny", "encoder profile: tiny or full"},
    {"model.pretrained", "pretrained", "", "checkpoint whose first encoder initializes every encoder"},

    {"data.crop", "crop", "none", "none, standard (256x1224) or HxW"},

    {"train.epochs", "epochs", "200", "training epochs"},
    {"train.batch_size", "batch-size", "6", "frames per batch"},
    {"train.lr", "lr", "1e-4", "Adam learning rate"},
    {"train.beta1", "beta1", "0.9", "Adam beta1"},
    {"train.beta2", "beta2", "0.999", "Adam beta2"},
    {"train.eps", "eps", "1e-8", "Adam epsilon"},
    {"train.l2_decay", "l2-decay", "5e-4", "L2 weight decay on conv and deconv weights"},
    {"train.seed", "seed", "0", "initialization and shuffling seed"},
    {"train.checkpoint_every", "checkpoint-every", "0", "save a checkpoint every N epochs (0: final only)"},
    {"train.horizontal_flip", "flip", "false", "random horizontal flips"},
    {"train.class_weight_constant", "class-weight-constant", "1.02", "c in w = 1 / ln(c + p)"},

    {"infer.checkpoint", "checkpoint", "", "checkpoint written by train"},
    {"infer.split", "split", "test", "test, train or all"},

    {"eval.pred_dir", "pred-dir", "", "folder of predicted mask PNGs"},
    {"eval.gt_dir", "gt-dir", "", "folder of ground-truth masks (same relative paths)"},
    {"eval.label", "label", "model", "row label in the report"},

    {"bench.plans", "plans", "baseline,two,three", "comma-separated fusion plans"},
    {"bench.height", "height", "256", "input height"},
    {"bench.width", "width", "1224", "input width"},
    {"bench.warmup", "warmup", "10", "untimed iterations"},
    {"bench.iterations", "iterations", "100", "timed iterations"},

    {"synth.format", "format", "dataset", "dataset (frames + manifest) or drive (KITTI raw folder)"},
    {"synth.frames", "frames", "20", "frames to generate"},
    {"synth.seed", "seed", "0", "generator seed"},
    {"synth.height", "height", "64", "image height"},
    {"synth.width", "width", "128", "image width"},
    {"synth.moving_objects", "moving-objects", "2", "moving objects per frame"},
    {"synth.static_objects", "static-objects", "2", "static objects per frame"},
    {"synth.min_size", "min-size", "8", "smallest object side (px)"},
    {"synth.max_size", "max-size", "16", "largest object side (px)"},
    {"synth.min_speed", "min-speed", "1", "smallest per-axis speed of moving objects (px/frame)"},
    {"synth.max_speed", "max-speed", "3", "largest per-axis speed of moving objects (px/frame)"},
    {"synth.lidar_fraction", "lidar-fraction", "0.15", "share of pixels with lidarFlow and depth"},
    {"synth.test_fraction", "test-fraction", "0.2", "share of frames in the test split"},
    {"synth.low_light", "low-light", "false", "degrade rgb and rgbFlow"},
    {"synth.gain", "gain", "0.2", "low-light gain"},
    {"synth.gamma", "gamma", "1.0", "low-light gamma"},
    {"synth.noise_sigma", "noise-sigma", "0.02", "low-light pixel noise"},
    {"synth.flow_noise_sigma", "flow-noise-sigma", "1.5", "rgbFlow noise (px)"},
    {"synth.flow_dropout", "flow-dropout", "0.3", "share of rgbFlow pixels zeroed"},
};

const KeySpec* find_key(std::string_view key)
{
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

class Config {
 public:
  Config()
  {
    for (const auto& k : kKeys) values_[k.key] = k.value;
  }

  void load_file(const fs::path& path)
  {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
      pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
      throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw Error(ErrorCode::InvalidConfig, path.string() + ": key '" + section + "' outside a section");
      for (const auto& [name, value] : body) {
        const std::string key = section + "." + name;
        if (!find_key(key)) throw Error(ErrorCode::InvalidConfig, path.string() + ": unknown key '" + key + "'");
        values_[key] = value.get_value<std::string>();
      }
    }
  }

  void set(const std::string& key, std::string value) { values_.at(key) = std::move(value); }
  const std::string& str(const std::string& key) const { return values_.at(key); }

  double number(const std::string& key) const
  {
    const auto& s = str(key);
    double v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw bad(key);
    return v;
  }

  long integer(const std::string& key) const
  {
    const auto& s = str(key);
    long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw bad(key);
    return v;
  }

  std::uint64_t seed(const std::string& key) const
  {
    const auto& s = str(key);
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw bad(key);
    return v;
  }

  bool boolean(const std::string& key) const
  {
    std::string s = str(key);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw bad(key);
  }

 private:
  Error bad(const std::string& key) const
  {
    return Error(ErrorCode::InvalidConfig, key + ": invalid value '" + values_.at(key) + "'");
  }

  std::map<std::string, std::string> values_;
};

/// Binds a config file option and one flag per honored key to a subcommand.
class Binding {
 public:
  Binding(CLI::App* app, std::vector<std::string> sections, std::vector<std::string> extra_keys = {})
  {
    app->add_option("--config", config_file_, "INI config file ([section] key = value)");
    std::string footer = "Config keys ([section] key = default):\n";
    for (const auto& k : kKeys) {
      const std::string key = k.key;
      const std::string section = key.substr(0, key.find('.'));
      const bool honored = std::find(sections.begin(), sections.end(), section) != sections.end() ||
                           std::find(extra_keys.begin(), extra_keys.end(), key) != extra_keys.end();
      if (!honored) continue;
      auto& slot = flags_[key];
      app->add_option(std::string("--") + k.flag, slot, std::string(k.help) + " [" + key + "]");
      footer += "  " + key + " = " + (std::string(k.value).empty() ? "\"\"" : std::string(k.value)) + "\n";
    }
    app->footer(footer);
  }

  Config resolve() const
  {
    Config c;
    if (!config_file_.empty()) c.load_file(config_file_);
    if (const char* env = std::getenv("FUSEMOD_SEED"); env && *env) {
      for (const char* key : {"train.seed", "synth.seed", "annotate.split_seed"}) c.set(key, env);
    }
    for (const auto& [key, value] : flags_)
      if (value) c.set(key, *value);
    return c;
  }

 private:
  std::string config_file_;
  std::map<std::string, std::optional<std::string>> flags_;
};

void apply_workers(const Config& c)
{
  const long n = c.integer("run.workers");
  if (n < 0) throw Error(ErrorCode::InvalidConfig, "run.workers must be non-negative");
  if (n > 0) nn::kernels::set_threads(static_cast<int>(n));
}

std::optional<std::array<int, 2>> crop_of(const Config& c)
{
  const auto& s = c.str("data.crop");
  if (s == "none") return std::nullopt;
  if (s == "standard") return std::array<int, 2>{kitti::kStandardHeight, kitti::kStandardWidth};
  int h = 0, w = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%dx%d%c", &h, &w, &tail) == 2 && h > 0 && w > 0) return std::array<int, 2>{h, w};
  throw Error(ErrorCode::InvalidConfig, "data.crop: invalid value '" + s + "'");
}

std::string pad(std::string s, std::size_t w)
{
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

// Subcommands

int do_annotate(const Config& c, const std::vector<std::string>& drives, std::ostream& out)
{
  annotation::ExportOptions o;
  o.output_dir = c.str("paths.output_dir");
  o.labels.threshold = c.number("annotate.threshold");
  if (!(o.labels.threshold > 0)) throw Error(ErrorCode::InvalidConfig, "annotate.threshold must be positive");
  const auto& mode = c.str("annotate.ego_velocity");
  if (mode == "posediff") o.labels.mode = annotation::EgoVelocityMode::PoseDiff;
  else if (mode == "oxts") o.labels.mode = annotation::EgoVelocityMode::OxtsChannels;
  else throw Error(ErrorCode::InvalidConfig, "annotate.ego_velocity: invalid value '" + mode + "'");
  o.split_seed = c.seed("annotate.split_seed");
  o.train_fraction = c.number("annotate.train_fraction");
  o.rgbflow_dir = c.str("annotate.rgbflow_dir");
  o.lidarflow_dir = c.str("annotate.lidarflow_dir");
  o.flow_extension = c.str("annotate.flow_extension");
  o.instance_dir = c.str("annotate.instance_dir");
  o.write_depth = c.boolean("annotate.write_depth");

  std::vector<fs::path> paths(drives.begin(), drives.end());
  const auto result = annotation::export_dataset(paths, o);
  std::string table = pad("Drive", 32) + " | Split | Frames | Moving | Static\n";
  for (const auto& d : result.drives) {
    const char* split = d.split == annotation::Split::Train ? "train" : "test";
    out << json{{"drive", d.name}, {"split", split}, {"frames", d.frames}, {"moving", d.moving}, {"static", d.statics}}.dump()
        << "\n";
    table += pad(d.name, 32) + " | " + pad(split, 5) + " | " + pad(std::to_string(d.frames), 6) + " | " +
             pad(std::to_string(d.moving), 6) + " | " + std::to_string(d.statics) + "\n";
  }
  out << json{{"manifest", (o.output_dir / "manifest.txt").string()},
              {"train", result.manifest.count(annotation::Split::Train)},
              {"test", result.manifest.count(annotation::Split::Test)}}
             .dump()
      << "\n"
      << table;
  return kOk;
}

int do_synth(const Config& c, std::ostream& out)
{
  const fs::path dir = c.str("paths.output_dir");
  const int frames = static_cast<int>(c.integer("synth.frames"));
  if (frames < 1) throw Error(ErrorCode::InvalidConfig, "synth.frames must be positive");
  const auto& format = c.str("synth.format");
  if (format == "drive") {
    synth::DriveSpec d;
    d.frames = frames;
    synth::DriveObject mover;
    mover.position = {20.0, 3.0, -1.73};
    mover.velocity = {8.0, 0.0, 0.0};
    synth::DriveObject parked;
    parked.position = {15.0, -3.0, -1.73};
    d.objects = {mover, parked};
    synth::write_kitti_drive(dir, d);
    out << json{{"drive", dir.string()}, {"frames", frames}, {"objects", d.objects.size()}}.dump() << "\n";
    return kOk;
  }
  if (format != "dataset") throw Error(ErrorCode::InvalidConfig, "synth.format: invalid value '" + format + "'");

  synth::DatasetOptions o;
  o.height = static_cast<int>(c.integer("synth.height"));
  o.width = static_cast<int>(c.integer("synth.width"));
  o.moving_objects = static_cast<int>(c.integer("synth.moving_objects"));
  o.static_objects = static_cast<int>(c.integer("synth.static_objects"));
  o.min_size = static_cast<int>(c.integer("synth.min_size"));
  o.max_size = static_cast<int>(c.integer("synth.max_size"));
  o.min_speed = static_cast<int>(c.integer("synth.min_speed"));
  o.max_speed = static_cast<int>(c.integer("synth.max_speed"));
  o.lidar_fraction = c.number("synth.lidar_fraction");
  if (c.boolean("synth.low_light")) {
    synth::DegradeSpec d;
    d.gain = c.number("synth.gain");
    d.gamma = c.number("synth.gamma");
    d.noise_sigma = c.number("synth.noise_sigma");
    d.flow_noise_sigma = c.number("synth.flow_noise_sigma");
    d.flow_dropout = c.number("synth.flow_dropout");
    d.validate();
    o.degrade = d;
  }
  const double test_fraction = c.number("synth.test_fraction");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw Error(ErrorCode::InvalidConfig, "synth.test_fraction must lie in [0, 1)");
  const auto samples = synth::make_dataset(o, frames, c.seed("synth.seed"));
  const int test = static_cast<int>(std::lround(frames * test_fraction));
  std::vector<annotation::Split> splits(static_cast<std::size_t>(frames), annotation::Split::Train);
  std::fill(splits.end() - test, splits.end(), annotation::Split::Test);
  const auto manifest = synth::write_dataset(samples, dir, splits);
  out << json{{"manifest", (dir / "manifest.txt").string()},
              {"train", manifest.count(annotation::Split::Train)},
              {"test", manifest.count(annotation::Split::Test)}}
             .dump()
      << "\n";
  return kOk;
}

annotation::DatasetManifest read_manifest(const fs::path& root)
{
  return annotation::DatasetManifest::parse(kitti::read_text_file(root / "manifest.txt"));
}

json ledger_json(const models::Model& m)
{
  json ledger = json::array();
  for (const auto& e : m.ledger()) ledger.push_back({{"component", e.component}, {"parameters", e.parameters}});
  return {{"plan", m.plan().to_string()},
          {"encoder", m.spec().to_string()},
          {"encoders", m.plan().streams.size()},
          {"parameters", m.parameter_count()},
          {"ledger", ledger}};
}

int do_train(const Config& c, std::ostream& out)
{
  const fs::path root = c.str("paths.dataset_root");
  const fs::path dir = c.str("paths.output_dir");
  const auto plan = models::FusionPlan::parse(c.str("model.plan"));
  const auto spec = models::EncoderSpec::from_name(c.str("model.encoder"));

  models::TrainConfig t;
  t.epochs = static_cast<int>(c.integer("train.epochs"));
  t.batch_size = static_cast<int>(c.integer("train.batch_size"));
  t.adam.lr = c.number("train.lr");
  t.adam.beta1 = c.number("train.beta1");
  t.adam.beta2 = c.number("train.beta2");
  t.adam.eps = c.number("train.eps");
  t.adam.l2_decay = c.number("train.l2_decay");
  t.seed = c.seed("train.seed");
  t.checkpoint_every = static_cast<int>(c.integer("train.checkpoint_every"));
  t.checkpoint_dir = dir;
  t.horizontal_flip = c.boolean("train.horizontal_flip");
  t.class_weight_constant = c.number("train.class_weight_constant");
  if (t.epochs < 0 || t.batch_size < 1 || t.checkpoint_every < 0 || t.adam.lr < 0) {
    throw Error(ErrorCode::InvalidConfig, "train: epochs, batch_size, checkpoint_every and lr out of range");
  }
  const auto crop = crop_of(c);

  const auto manifest = read_manifest(root);
  const auto signals = plan.signals();
  std::vector<models::FrameSample> samples;
  for (const auto& r : manifest.records)
    if (r.split == annotation::Split::Train) samples.push_back(models::load_sample(r, root, signals, true, crop));
  if (samples.empty()) throw Error(ErrorCode::EmptySplit, "manifest has no training frames");

  models::Model model(plan, spec, {t.seed});
  if (const auto& pre = c.str("model.pretrained"); !pre.empty()) {
    model.load_pretrained_encoder(nn::Checkpoint::load(pre), t.seed);
  }
  out << ledger_json(model).dump() << "\n";

  fs::create_directories(dir);
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "train_log.jsonl").string());
  t.on_epoch = [&](const models::EpochLog& e) {
    const std::string line =
        json{{"epoch", e.epoch}, {"loss", e.mean_loss}, {"moving_iou", e.moving_iou}, {"miou", e.miou}}.dump();
    out << line << "\n";
    log << line << "\n";
  };
  auto adam = models::make_optimizer(model, t.adam);
  const auto result = models::train(model, adam, samples, t);
  models::training_state(model, adam).save(dir / "model.fmck");
  out << json{{"class_weights", result.class_weights}, {"frames", samples.size()},
              {"checkpoint", (dir / "model.fmck").string()}}
             .dump()
      << "\n";
  return kOk;
}

int do_infer(const Config& c, std::ostream& out)
{
  const fs::path root = c.str("paths.dataset_root");
  const fs::path dir = c.str("paths.output_dir");
  const auto& ck_path = c.str("infer.checkpoint");
  if (ck_path.empty()) throw Error(ErrorCode::InvalidConfig, "infer.checkpoint is required");
  const auto& split = c.str("infer.split");
  if (split != "test" && split != "train" && split != "all") {
    throw Error(ErrorCode::InvalidConfig, "infer.split: invalid value '" + split + "'");
  }
  auto model = models::load_model(nn::Checkpoint::load(ck_path));
  const auto crop = crop_of(c);
  const auto signals = model.plan().signals();
  int frames = 0;
  for (const auto& r : read_manifest(root).records) {
    const bool take = split == "all" || (split == "train") == (r.split == annotation::Split::Train);
    if (!take) continue;
    const auto sample = models::load_sample(r, root, signals, false, crop);
    const auto mask = models::predict_mask(model, sample);
    const std::string rel = (r.mask.empty() || r.mask == "-") ? "masks/" + annotation::frame_name(frames) + ".png" : r.mask;
    kitti::write_file(dir / rel, kitti::write_mask_png(mask));
    ++frames;
  }
  out << json{{"frames", frames}, {"output", dir.string()}, {"plan", model.plan().to_string()}}.dump() << "\n";
  return kOk;
}

int do_eval(const Config& c, std::ostream& out)
{
  const fs::path pred_dir = c.str("eval.pred_dir");
  const fs::path gt_dir = c.str("eval.gt_dir");
  if (pred_dir.empty() || gt_dir.empty()) throw Error(ErrorCode::InvalidConfig, "eval.pred_dir and eval.gt_dir are required");
  if (!fs::is_directory(pred_dir)) throw Error(ErrorCode::IoFailure, "not a directory: " + pred_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(pred_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(fs::relative(e.path(), pred_dir));
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::EmptySplit, "no predictions in " + pred_dir.string());

  eval::MetricsRow row{c.str("eval.label"), {}};
  for (const auto& rel : files) {
    const auto pred = kitti::read_mask_png(kitti::read_file(pred_dir / rel));
    auto gt = kitti::read_mask_png(kitti::read_file(gt_dir / rel));
    if (gt.height != pred.height || gt.width != pred.width) gt = kitti::crop_bottom_center(gt, pred.height, pred.width);
    row.cm.update(pred, gt);
  }
  out << eval::metrics_json(row) << "\n" << eval::metrics_table(std::span(&row, 1));
  return kOk;
}

int do_bench(const Config& c, std::ostream& out)
{
  const auto spec = models::EncoderSpec::from_name(c.str("model.encoder"));
  const int h = static_cast<int>(c.integer("bench.height"));
  const int w = static_cast<int>(c.integer("bench.width"));
  const int warmup = static_cast<int>(c.integer("bench.warmup"));
  const int iters = static_cast<int>(c.integer("bench.iterations"));
  if (h < 1 || w < 1 || warmup < 0 || iters < 1) throw Error(ErrorCode::InvalidConfig, "bench sizes out of range");
  std::vector<eval::BenchReport> reports;
  std::stringstream list(c.str("bench.plans"));
  for (std::string item; std::getline(list, item, ',');) {
    const auto plan = models::FusionPlan::parse(item);
    models::Model model(plan, spec);
    reports.push_back(models::bench_model(model, plan.to_string(), h, w, warmup, iters));
    out << eval::bench_json(reports.back()) << "\n";
  }
  out << eval::bench_table(reports);
  return kOk;
}

int exit_code(const Error& e)
{
  switch (category_of(e.code())) {
    case ErrorCategory::Config: return kConfigError;
    case ErrorCategory::Data: return kDataError;
    case ErrorCategory::Runtime: return kRuntimeError;
  }
  return kRuntimeError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Moving-object detection toolkit: annotation, synthetic data, fusion models, evaluation.", "fusemod"};
  app.require_subcommand(1);

  auto* annotate = app.add_subcommand("annotate", "Generate motion masks and a manifest from KITTI raw drives");
  std::vector<std::string> drives;
  annotate->add_option("drives", drives, "drive folders")->required();
  Binding annotate_keys(annotate, {"annotate", "run"}, {"paths.output_dir"});

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset or KITTI raw drive");
  Binding synth_keys(synth_cmd, {"synth", "run"}, {"paths.output_dir"});

  auto* train_cmd = app.add_subcommand("train", "Train a fusion model on the manifest's training split");
  Binding train_keys(train_cmd, {"paths", "run", "model", "data", "train"});

  auto* infer_cmd = app.add_subcommand("infer", "Predict motion masks with a trained checkpoint");
  Binding infer_keys(infer_cmd, {"paths", "run", "data", "infer"});

  auto* eval_cmd = app.add_subcommand("eval", "Score predicted masks against ground truth");
  Binding eval_keys(eval_cmd, {"eval"});

  auto* bench_cmd = app.add_subcommand("bench", "Time forward passes of several fusion plans");
  Binding bench_keys(bench_cmd, {"bench", "run"}, {"model.encoder"});

  std::vector<std::string> argv_storage{"fusemod"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*annotate) {
      const auto c = annotate_keys.resolve();
      apply_workers(c);
      return do_annotate(c, drives, out);
    }
    if (*synth_cmd) {
      const auto c = synth_keys.resolve();
      apply_workers(c);
      return do_synth(c, out);
    }
    if (*train_cmd) {
      const auto c = train_keys.resolve();
      apply_workers(c);
      return do_train(c, out);
    }
    if (*infer_cmd) {
      const auto c = infer_keys.resolve();
      apply_workers(c);
      return do_infer(c, out);
    }
    if (*eval_cmd) return do_eval(eval_keys.resolve(), out);
    if (*bench_cmd) {
      const auto c = bench_keys.resolve();
      apply_workers(c);
      return do_bench(c, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace fusemod::cli
