#include "vitcap/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vitcap/checkpoint.hpp"
#include "vitcap/config_json.hpp"
#include "vitcap/linear_oracle.hpp"
#include "vitcap/sweep.hpp"
#include "vitcap/table.hpp"
#include "vitcap/version.hpp"

namespace vitcap {

namespace {

namespace fs = std::filesystem;

// per-dataset geometries reported in the experiments
const std::vector<std::pair<std::string, ModelConfig>>& presets() {
  static const std::vector<std::pair<std::string, ModelConfig>> table = [] {
    auto mk = [](size_t s, size_t p, size_t c, size_t d, size_t m) {
      ModelConfig cfg;
      cfg.image_size = s;
      cfg.patch_size = p;
      cfg.channels = c;
      cfg.d_model = cfg.d_key = cfg.d_value = cfg.d_ff = d;
      cfg.classes = m;
      return cfg;
    };
    std::vector<std::pair<std::string, ModelConfig>> t;
    t.emplace_back("mnist-32-64", mk(32, 2, 1, 64, 10));
    t.emplace_back("cifar100-64-128", mk(64, 8, 3, 128, 100));
    t.emplace_back("birds-128-32", mk(128, 8, 3, 32, 200));
    t.emplace_back("places365-128-32", mk(128, 16, 3, 32, 365));
    t.emplace_back("imagenet-128-64", mk(128, 16, 3, 64, 1000));
    return t;
  }();
  return table;
}

ModelConfig preset_config(const std::string& name) {
  for (const auto& [n, cfg] : presets())
    if (n == name) return cfg;
  std::string names;
  for (const auto& [n, cfg] : presets()) names += (names.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
}

struct DatasetOptions {
  std::string kind = "synth";  // "mnist" or "synth"
  std::string mnist_dir;
  std::string train_images, train_labels, test_images, test_labels;
  size_t train_count = 0;  // 0 = all
  size_t test_count = 0;
  size_t resize = 0;  // 0 = keep native size
  SyntheticContextConfig synth;
};

void add_model_options(CLI::App* cmd, ModelConfig& model, std::string& preset) {
  cmd->add_option("--preset", preset, "named model geometry (e.g. mnist-32-64)");
  cmd->add_option("--image-size", model.image_size, "square image side in pixels");
  cmd->add_option("--patch-size", model.patch_size, "square patch side in pixels");
  cmd->add_option("--channels", model.channels, "image channels");
  cmd->add_option("--d-model", model.d_model, "token width");
  cmd->add_option("--d-key", model.d_key, "per-head key/query width");
  cmd->add_option("--d-value", model.d_value, "per-head value width");
  cmd->add_option("--d-ff", model.d_ff, "feedforward hidden width");
  cmd->add_option("--heads", model.heads, "attention heads per encoder");
  cmd->add_option("--encoders", model.encoders, "stacked encoders");
  cmd->add_option("--classes", model.classes, "output classes");
  cmd->add_flag("--no-bias,!--bias", [&model](int64_t count) { model.use_bias = count <= 0; },
                "disable bias terms")
      ->default_val(false);
}

void add_train_options(CLI::App* cmd, TrainConfig& train) {
  cmd->add_option("--epochs", train.epochs, "training epochs");
  cmd->add_option("--batch-size", train.batch_size, "batch size");
  cmd->add_option("--lr", train.learning_rate, "learning rate");
  cmd->add_option("--weight-decay", train.weight_decay, "decoupled weight decay");
  cmd->add_option("--seed", train.seed, "run seed");
  cmd->add_option("--precision", train.precision, "f32 or f64");
  cmd->add_flag("--no-augment", [&train](int64_t) { train.augmentation.enabled = false; },
                "disable training-time augmentation");
  cmd->add_option("--no-decay", train.no_decay_patterns,
                  "parameter-name substrings excluded from weight decay");
}

void add_dataset_options(CLI::App* cmd, DatasetOptions& data) {
  cmd->add_option("--dataset", data.kind, "dataset kind: mnist or synth")
      ->check(CLI::IsMember({"mnist", "synth"}));
  cmd->add_option("--mnist-dir", data.mnist_dir,
                  "directory holding the canonical *-ubyte IDX files");
  cmd->add_option("--train-images", data.train_images, "IDX image file, training split");
  cmd->add_option("--train-labels", data.train_labels, "IDX label file, training split");
  cmd->add_option("--test-images", data.test_images, "IDX image file, test split");
  cmd->add_option("--test-labels", data.test_labels, "IDX label file, test split");
  cmd->add_option("--train-count", data.train_count, "subset size of the training split (0 = all)");
  cmd->add_option("--test-count", data.test_count, "subset size of the test split (0 = all)");
  cmd->add_option("--resize", data.resize, "resize images to this side (0 = native)");
  cmd->add_option("--synth-image-size", data.synth.image_size, "synthetic image side");
  cmd->add_option("--synth-glyph-size", data.synth.glyph_size, "synthetic glyph side");
  cmd->add_option("--synth-classes", data.synth.class_count, "synthetic class count");
  cmd->add_flag("--synth-contextual", data.synth.contextual,
                "two glyphs per image, label depends on the pair");
  cmd->add_option("--synth-train", data.synth.train_samples, "synthetic training samples");
  cmd->add_option("--synth-test", data.synth.test_samples, "synthetic test samples");
  cmd->add_option("--synth-seed", data.synth.seed, "synthetic dataset seed");
}

std::pair<ImageDataset, ImageDataset> load_datasets(const DatasetOptions& opt) {
  ImageDataset train_set, test_set;
  if (opt.kind == "mnist") {
    std::string ti = opt.train_images, tl = opt.train_labels;
    std::string vi = opt.test_images, vl = opt.test_labels;
    if (!opt.mnist_dir.empty()) {
      const fs::path dir(opt.mnist_dir);
      if (ti.empty()) ti = (dir / "train-images-idx3-ubyte").string();
      if (tl.empty()) tl = (dir / "train-labels-idx1-ubyte").string();
      if (vi.empty()) vi = (dir / "t10k-images-idx3-ubyte").string();
      if (vl.empty()) vl = (dir / "t10k-labels-idx1-ubyte").string();
    }
    if (ti.empty() || tl.empty() || vi.empty() || vl.empty())
      throw ConfigError("mnist dataset: give --mnist-dir or all four IDX paths");
    train_set = load_mnist_idx(ti, tl);
    train_set.split = "train";
    test_set = load_mnist_idx(vi, vl);
    test_set.split = "test";
  } else {
    std::tie(train_set, test_set) = synth_context_dataset(opt.synth);
  }
  if (opt.train_count > 0) train_set = subset(train_set, opt.train_count);
  if (opt.test_count > 0) test_set = subset(test_set, opt.test_count);
  if (opt.resize > 0) {
    train_set = resize_dataset(train_set, opt.resize);
    test_set = resize_dataset(test_set, opt.resize);
  }
  return {std::move(train_set), std::move(test_set)};
}

std::vector<double> parse_q_grid(const std::string& qlist, double qmin, double qmax,
                                 size_t points) {
  std::vector<double> grid;
  if (!qlist.empty()) {
    std::stringstream ss(qlist);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(std::stod(item));
    return grid;
  }
  if (points < 2) throw ConfigError("theory: need at least 2 grid points");
  if (!(qmin > 0.0 && qmax > qmin)) throw ConfigError("theory: need 0 < q-min < q-max");
  const double ratio = qmax / qmin;
  for (size_t i = 0; i < points; ++i)
    grid.push_back(qmin * std::pow(ratio, double(i) / double(points - 1)));
  return grid;
}

// two-phase --config handling: the JSON file seeds the defaults, explicit
// flags then override
nlohmann::json load_config_file(const std::vector<std::string>& args) {
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file path");
      std::ifstream in(args[i + 1]);
      if (!in) throw IoError("cannot read config file " + args[i + 1]);
      try {
        nlohmann::json j;
        in >> j;
        return j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config file: ") + e.what());
      }
    }
    if (args[i].rfind("--config=", 0) == 0) {
      std::ifstream in(args[i].substr(9));
      if (!in) throw IoError("cannot read config file " + args[i].substr(9));
      try {
        nlohmann::json j;
        in >> j;
        return j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config file: ") + e.what());
      }
    }
  }
  return nlohmann::json::object();
}

void apply_config_json(const nlohmann::json& j, ModelConfig* model, TrainConfig* train,
                       DatasetOptions* data) {
  detail_json::check_keys(j, {"model", "train", "dataset"}, "config file");
  if (model && j.contains("model")) *model = j.at("model").get<ModelConfig>();
  if (train && j.contains("train")) *train = j.at("train").get<TrainConfig>();
  if (data && j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail_json::check_keys(d,
                            {"kind", "mnist_dir", "train_images", "train_labels", "test_images",
                             "test_labels", "train_count", "test_count", "resize", "synth"},
                            "dataset config");
    detail_json::get_if(d, "kind", data->kind);
    detail_json::get_if(d, "mnist_dir", data->mnist_dir);
    detail_json::get_if(d, "train_images", data->train_images);
    detail_json::get_if(d, "train_labels", data->train_labels);
    detail_json::get_if(d, "test_images", data->test_images);
    detail_json::get_if(d, "test_labels", data->test_labels);
    detail_json::get_if(d, "train_count", data->train_count);
    detail_json::get_if(d, "test_count", data->test_count);
    detail_json::get_if(d, "resize", data->resize);
    if (d.contains("synth")) data->synth = d.at("synth").get<SyntheticContextConfig>();
  }
}

void print_breakdown(std::ostream& out, const ModelConfig& cfg, const ParamCountBreakdown& b) {
  out << "embedding          " << b.embedding << '\n';
  out << "positional         " << b.positional << '\n';
  out << "attention/encoder  " << b.attention_per_encoder << '\n';
  out << "ffn/encoder        " << b.ffn_per_encoder << '\n';
  out << "norm/encoder       " << b.norm_per_encoder << '\n';
  out << "classifier         " << b.classifier << '\n';
  out << "encoders           " << cfg.encoders << '\n';
  out << "total              " << b.total << '\n';
}

template <typename T>
int run_train_typed(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                    const DatasetOptions& data_opt, const std::string& metrics_path,
                    const std::string& checkpoint_path, std::ostream& out) {
  auto [train_set, test_set] = load_datasets(data_opt);
  auto model = VisionTransformer<T>::build(model_cfg, train_cfg.seed);
  out << "model parameters: " << model.enumerated_param_count() << '\n';
  out << "Q = " << format_float(determination_ratio({train_set.class_count,
                                                     long(train_set.count),
                                                     count_params(model_cfg).total})
                                    .value())
      << '\n';

  std::ofstream metrics_file;
  std::ostream* log = &out;
  if (!metrics_path.empty()) {
    metrics_file.open(metrics_path, std::ios::binary);
    if (!metrics_file) throw IoError("cannot write " + metrics_path);
    log = &metrics_file;
  }
  const auto metrics = train(model, train_set, test_set, train_cfg, log);
  if (!metrics.empty())
    out << "final: loss " << format_float(metrics.back().train_loss) << " val_loss "
        << format_float(metrics.back().test_loss) << '\n';
  if (!checkpoint_path.empty()) {
    save_checkpoint(model, checkpoint_path);
    out << "checkpoint written to " << checkpoint_path << '\n';
  }
  return 0;
}

int run_sweep_cmd(const SweepGrid& grid, const DatasetOptions& data_opt,
                  const std::string& out_dir, const std::string& stem, size_t section_value,
                  std::ostream& out) {
  auto [train_set, test_set] = load_datasets(data_opt);
  fs::create_directories(out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  const auto records = grid.train.precision == "f64"
                           ? run_sweep<double>(grid, train_set, test_set, &out)
                           : run_sweep<float>(grid, train_set, test_set, &out);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path dir(out_dir);
  write_records_json(records, (dir / (stem + "_records.json")).string());
  write_manifest(grid, records, train_set, test_set, wall, (dir / (stem + "_manifest.json")).string());

  std::string failures;
  for (const auto& rec : records)
    if (rec.failed)
      failures += "h=" + std::to_string(rec.heads) + " t=" + std::to_string(rec.encoders) + ": " +
                  rec.error + "\n";
  if (!failures.empty()) {
    std::ofstream flog(dir / (stem + "_errors.log"), std::ios::binary);
    flog << failures;
    out << "some configurations failed; see " << (dir / (stem + "_errors.log")).string() << '\n';
  }

  for (const char axis : {'t', 'h'}) {
    const auto fixed_list = axis == 'h' ? grid.heads : grid.encoders;
    if (std::find(fixed_list.begin(), fixed_list.end(), section_value) == fixed_list.end()) {
      out << "note: " << axis << " = " << section_value
          << " not in the grid, skipping that cross-section\n";
      continue;
    }
    const auto section = cross_section(records, axis, section_value);
    const std::string path =
        (dir / (stem + "_" + std::string(1, axis) + std::to_string(section_value) + ".data"))
            .string();
    emit_data_file(section, path);
    out << "wrote " << path << '\n';
  }
  out << "sweep finished in " << format_float(wall) << " s\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"capacity analysis toolkit for vision transformers"};
  app.set_version_flag("--version", VITCAP_VERSION);
  app.require_subcommand(1);

  ModelConfig model_cfg;
  TrainConfig train_cfg;
  DatasetOptions data_opt;
  std::string preset;
  std::string config_path;  // consumed in the pre-scan; registered so CLI11 accepts it

  try {
    const auto file_cfg = load_config_file(args);
    apply_config_json(file_cfg, &model_cfg, &train_cfg, &data_opt);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  // ---- count ----
  auto* count_cmd = app.add_subcommand("count", "closed-form parameter accounting");
  add_model_options(count_cmd, model_cfg, preset);
  count_cmd->add_option("--config", config_path, "JSON config file");

  // ---- qratio ----
  auto* q_cmd = app.add_subcommand("qratio", "determination ratio Q = M*K/P");
  long long q_m = 0, q_k = 0, q_p = 0;
  bool q_exact = false;
  q_cmd->add_option("--M", q_m, "output count (classes)")->required();
  q_cmd->add_option("--K", q_k, "training samples")->required();
  q_cmd->add_option("--P", q_p, "parameter count (omit to count from model flags)");
  q_cmd->add_flag("--exact", q_exact, "also print the exact fraction");
  add_model_options(q_cmd, model_cfg, preset);
  q_cmd->add_option("--config", config_path, "JSON config file");

  // ---- theory ----
  auto* theory_cmd = app.add_subcommand("theory", "analytic train/test error curves");
  double sigma2 = 1.0, c_const = 1.0, qmin = 1.0, qmax = 1024.0;
  size_t qpoints = 11;
  std::string qlist, theory_out;
  theory_cmd->add_option("--sigma2", sigma2, "noise variance");
  theory_cmd->add_option("--c", c_const, "lumped curve constant");
  theory_cmd->add_option("--q", qlist, "comma-separated Q grid (overrides the range)");
  theory_cmd->add_option("--q-min", qmin, "range start");
  theory_cmd->add_option("--q-max", qmax, "range end");
  theory_cmd->add_option("--points", qpoints, "log-spaced point count");
  theory_cmd->add_option("--out", theory_out, "write the table to a file instead of stdout");

  // ---- linsim ----
  auto* lin_cmd = app.add_subcommand("linsim", "linear-regression Monte Carlo verification");
  LinearExperimentConfig lin_cfg;
  std::string k_list_str, lin_out;
  lin_cmd->add_option("--P", lin_cfg.features, "input features per output");
  lin_cmd->add_option("--M", lin_cfg.outputs, "outputs");
  lin_cmd->add_option("--K", k_list_str, "training samples (comma-separated for a sweep)");
  lin_cmd->add_option("--K-test", lin_cfg.test_samples, "test samples");
  lin_cmd->add_option("--sigma", lin_cfg.sigma, "noise standard deviation");
  lin_cmd->add_option("--trials", lin_cfg.trials, "Monte Carlo trials");
  lin_cmd->add_option("--seed", lin_cfg.seed, "base seed");
  lin_cmd->add_option("--out", lin_out, "write the table to a file instead of stdout");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a single configuration");
  std::string metrics_path, checkpoint_path;
  add_model_options(train_cmd, model_cfg, preset);
  add_train_options(train_cmd, train_cfg);
  add_dataset_options(train_cmd, data_opt);
  train_cmd->add_option("--metrics-log", metrics_path, "append per-epoch rows to this file");
  train_cmd->add_option("--checkpoint", checkpoint_path, "write the trained model here");
  train_cmd->add_option("--config", config_path, "JSON config file");

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "grid sweep over (heads, encoders)");
  SweepGrid grid;
  std::string out_dir = "sweep-out", stem = "sweep";
  size_t section_value = 4;
  sweep_cmd->add_option("--grid-heads", grid.heads, "heads grid")->delimiter(',');
  sweep_cmd->add_option("--grid-encoders", grid.encoders, "encoders grid")->delimiter(',');
  sweep_cmd->add_option("--sweep-seed", grid.seed, "grid seed (per-config seeds derived)");
  sweep_cmd->add_option("--workers", grid.workers, "concurrent configurations");
  sweep_cmd->add_option("--out-dir", out_dir, "output directory");
  sweep_cmd->add_option("--stem", stem, "output file stem");
  sweep_cmd->add_option("--section-value", section_value, "fixed axis value for cross-sections");
  add_model_options(sweep_cmd, model_cfg, preset);
  add_train_options(sweep_cmd, train_cfg);
  add_dataset_options(sweep_cmd, data_opt);
  sweep_cmd->add_option("--config", config_path, "JSON config file");

  // ---- emit ----
  auto* emit_cmd = app.add_subcommand("emit", "cross-section data file from stored records");
  std::string records_path, emit_out;
  char emit_axis = 'h';
  size_t emit_value = 4;
  emit_cmd->add_option("--records", records_path, "records JSON written by sweep")->required();
  emit_cmd->add_option("--axis", emit_axis, "'h' (fixed heads) or 't' (fixed encoders)");
  emit_cmd->add_option("--value", emit_value, "fixed axis value");
  emit_cmd->add_option("--out", emit_out, "output data file")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 wants reversed
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (!preset.empty()) {
      // preset fixes geometry/dims; explicit flags already parsed win
      ModelConfig base = preset_config(preset);
      auto keep = [](CLI::App* cmd, const char* name) {
        const auto* opt = cmd->get_option_no_throw(name);
        return opt && opt->count() > 0;
      };
      CLI::App* active = count_cmd->parsed() ? count_cmd
                         : q_cmd->parsed()   ? q_cmd
                         : train_cmd->parsed() ? train_cmd
                                               : sweep_cmd;
      ModelConfig merged = base;
      if (keep(active, "--image-size")) merged.image_size = model_cfg.image_size;
      if (keep(active, "--patch-size")) merged.patch_size = model_cfg.patch_size;
      if (keep(active, "--channels")) merged.channels = model_cfg.channels;
      if (keep(active, "--d-model")) merged.d_model = model_cfg.d_model;
      if (keep(active, "--d-key")) merged.d_key = model_cfg.d_key;
      if (keep(active, "--d-value")) merged.d_value = model_cfg.d_value;
      if (keep(active, "--d-ff")) merged.d_ff = model_cfg.d_ff;
      if (keep(active, "--heads")) merged.heads = model_cfg.heads;
      if (keep(active, "--encoders")) merged.encoders = model_cfg.encoders;
      if (keep(active, "--classes")) merged.classes = model_cfg.classes;
      merged.use_bias = model_cfg.use_bias;
      model_cfg = merged;
    }

    if (count_cmd->parsed()) {
      print_breakdown(out, model_cfg, count_params(model_cfg));
      return 0;
    }

    if (q_cmd->parsed()) {
      const long long p = q_p > 0 ? q_p : count_params(model_cfg).total;
      const Rational q = determination_ratio({q_m, q_k, p});
      out << format_float(q.value()) << '\n';
      if (q_exact) out << q.num << "/" << q.den << '\n';
      return 0;
    }

    if (theory_cmd->parsed()) {
      const auto grid_q = parse_q_grid(qlist, qmin, qmax, qpoints);
      const auto points = curve_sweep(grid_q, {sigma2, c_const});
      std::ostringstream table;
      table << data_header() << '\n';
      for (const auto& pt : points)
        table << format_float(pt.q) << ' ' << format_float(pt.train_mse) << ' '
              << format_float(pt.test_mse) << '\n';
      if (theory_out.empty()) {
        out << table.str();
      } else {
        std::ofstream f(theory_out, std::ios::binary);
        if (!f) throw IoError("cannot write " + theory_out);
        f << table.str();
      }
      return 0;
    }

    if (lin_cmd->parsed()) {
      std::vector<long long> k_values;
      if (k_list_str.empty()) {
        k_values.push_back(lin_cfg.train_samples);
      } else {
        std::stringstream ss(k_list_str);
        std::string item;
        while (std::getline(ss, item, ',')) k_values.push_back(std::stoll(item));
      }
      const auto points = sweep_over_K(lin_cfg, k_values);
      std::ostringstream table;
      write_k_sweep_table(table, points);
      if (lin_out.empty()) {
        out << table.str();
      } else {
        std::ofstream f(lin_out, std::ios::binary);
        if (!f) throw IoError("cannot write " + lin_out);
        f << table.str();
      }
      for (const auto& pt : points) {
        out << "K=" << pt.train_samples << " Q=" << format_float(pt.q.value()) << " train "
            << format_float(pt.result.mean_train_mse) << " +/- "
            << format_float(pt.result.se_train_mse) << " (predicted "
            << format_float(pt.result.predicted_train_mse) << "), test "
            << format_float(pt.result.mean_test_mse) << " (floor "
            << format_float(pt.result.noise_floor) << ")"
            << (pt.result.any_rank_deficient ? " [rank-deficient]" : "")
            << (pt.result.config.underdetermined() ? " [underdetermined]" : "") << '\n';
      }
      return 0;
    }

    if (train_cmd->parsed()) {
      if (train_cfg.precision == "f64")
        return run_train_typed<double>(model_cfg, train_cfg, data_opt, metrics_path,
                                       checkpoint_path, out);
      return run_train_typed<float>(model_cfg, train_cfg, data_opt, metrics_path, checkpoint_path,
                                    out);
    }

    if (sweep_cmd->parsed()) {
      grid.base = model_cfg;
      grid.train = train_cfg;
      return run_sweep_cmd(grid, data_opt, out_dir, stem, section_value, out);
    }

    if (emit_cmd->parsed()) {
      const auto records = read_records_json(records_path);
      emit_data_file(cross_section(records, emit_axis, emit_value), emit_out);
      out << "wrote " << emit_out << '\n';
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace vitcap
