// beamsel: channel synthesis, subarray selection, hybrid beamformer design,
// dataset generation, CNN training and experiment sweeps from one binary.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "beamsel/cnn.hpp"
#include "beamsel/dataset.hpp"
#include "beamsel/errors.hpp"
#include "beamsel/io.hpp"
#include "beamsel/rng.hpp"
#include "beamsel/sweeps.hpp"

using namespace beamsel;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 1;
  json config = json::object();

  void load() {
    if (config_path.empty()) return;
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config file " + config_path);
    config = json::parse(is, nullptr, false);
    if (config.is_discarded())
      throw ConfigError("config file is not valid JSON: " + config_path);
  }

  SystemDims dims() const {
    return config.contains("dims") ? dims_from_json(config.at("dims"))
                                   : SystemDims{};
  }

  ChannelParams channel_params() const {
    ChannelParams p;
    if (config.contains("channel_params"))
      p = params_from_json(config.at("channel_params"));
    const SystemDims d = dims();
    if (p.tx_geometry.count() == 0) p.tx_geometry = ArrayGeometry::ula(d.n_t);
    if (p.rx_geometry.count() == 0) p.rx_geometry = ArrayGeometry::ula(d.n_r);
    return p;
  }

  MoSettings mo() const {
    MoSettings m;
    if (config.contains("mo")) m = mo_from_json(config.at("mo"));
    return m;
  }

  DatasetSpec dataset_spec() const {
    DatasetSpec s;
    s.dims = dims();
    s.channel_params = channel_params();
    s.mo = mo();
    s.seed = seed;
    if (config.contains("dataset")) {
      const json& j = config.at("dataset");
      s.n_channels = j.value("n_channels", s.n_channels);
      if (j.contains("cluster_counts"))
        s.cluster_counts = j.at("cluster_counts").get<std::vector<int>>();
      s.n_noise = j.value("n_noise", s.n_noise);
      if (j.contains("snr_train_db"))
        s.snr_train_db = j.at("snr_train_db").get<std::vector<double>>();
      s.label_from_noisy = j.value("label_from_noisy", s.label_from_noisy);
    }
    return s;
  }

  ExperimentConfig experiment() const {
    ExperimentConfig cfg;
    if (config.contains("experiment"))
      cfg = experiment_config_from_json(config.at("experiment"));
    if (!config.contains("experiment") ||
        !config.at("experiment").contains("dims"))
      cfg.dims = dims();
    if (!config.contains("experiment") ||
        !config.at("experiment").contains("channel_params"))
      cfg.channel_params = channel_params();
    if (!config.contains("experiment") || !config.at("experiment").contains("mo"))
      cfg.mo = mo();
    cfg.seed = seed;
    if (cfg.channel_params.tx_geometry.count() == 0)
      cfg.channel_params.tx_geometry = ArrayGeometry::ula(cfg.dims.n_t);
    if (cfg.channel_params.rx_geometry.count() == 0)
      cfg.channel_params.rx_geometry = ArrayGeometry::ula(cfg.dims.n_r);
    return cfg;
  }

  TrainConfig train_config() const {
    TrainConfig cfg;
    cfg.seed = seed;
    if (config.contains("train")) {
      const json& j = config.at("train");
      cfg.lr = j.value("lr", cfg.lr);
      cfg.momentum = j.value("momentum", cfg.momentum);
      cfg.batch = j.value("batch", cfg.batch);
      cfg.epochs = j.value("epochs", cfg.epochs);
      cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
      if (j.contains("early_stop_train_accuracy"))
        cfg.early_stop_train_accuracy =
            j.at("early_stop_train_accuracy").get<double>();
    }
    return cfg;
  }
};

int cmd_channel(const GlobalOptions& opt, int count) {
  const ChannelParams params = opt.channel_params();
  std::filesystem::create_directories(opt.out_dir);
  for (int i = 0; i < count; ++i) {
    const auto ch = generate_channel(params, derive_seed(opt.seed, i));
    const auto stem =
        std::filesystem::path(opt.out_dir) / ("channel_" + std::to_string(i));
    dump_channel(ch, stem);
    std::cout << stem.string() << ".bin\n";
  }
  return 0;
}

int cmd_select(const GlobalOptions& opt, const std::string& load_stem) {
  const SystemDims dims = opt.dims();
  const CMat h = load_stem.empty()
                     ? generate_channel(opt.channel_params(),
                                        derive_seed(opt.seed, 0))
                           .h
                     : load_channel(load_stem).h;
  std::filesystem::create_directories(opt.out_dir);
  const auto csv_path = std::filesystem::path(opt.out_dir) / "selection.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw ConfigError("cannot write " + csv_path.string());
  csv << "scheme,n_r,n_rs,best_id,indices,rate_bits\n";

  const auto best = select_best_subarray(
      h, dims, SelectionObjective::unconstrained(),
      binomial_checked(dims.n_r, dims.n_rs));
  csv << selection_csv_row("best", dims, best.best, best.rate) << "\n";

  const std::pair<const char*, SelectionScheme> schemes[] = {
      {"greedy", SelectionScheme::Greedy},
      {"random", SelectionScheme::Random},
      {"magnitude", SelectionScheme::Magnitude}};
  for (const auto& [name, scheme] : schemes) {
    const auto cfg = baseline_select(h, dims, scheme, derive_seed(opt.seed, 1));
    const double rate =
        rate_with_unconstrained(select_rows(h, cfg.indices), dims);
    csv << selection_csv_row(name, dims, cfg, rate) << "\n";
  }
  std::cout << csv_path.string() << "\n";
  return 0;
}

int cmd_beamform(const GlobalOptions& opt, const std::string& load_stem) {
  const SystemDims dims = opt.dims();
  MoSettings mo = opt.mo();
  mo.seed = derive_seed(opt.seed, 2);
  const CMat h = load_stem.empty()
                     ? generate_channel(opt.channel_params(),
                                        derive_seed(opt.seed, 0))
                           .h
                     : load_channel(load_stem).h;

  const auto sel = select_best_subarray(
      h, dims, SelectionObjective::unconstrained(),
      binomial_checked(dims.n_r, dims.n_rs));
  const CMat sub = select_rows(h, sel.best.indices);
  const auto bf = design_hybrid(sub, dims, mo);
  const auto unc = unconstrained_beamformers(sub, dims);
  const auto gm = gamma_metrics(unc.f_opt, unc.w_opt, bf, dims);
  const double rate = spectral_efficiency(sub, bf, dims);

  std::filesystem::create_directories(opt.out_dir);
  const auto path = std::filesystem::path(opt.out_dir) / "beamform.json";
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << json{{"subarray", sel.best.indices},
             {"subarray_id", sel.best.id},
             {"rate_bits", rate},
             {"unconstrained_rate_bits", rate_with_unconstrained(sub, dims)},
             {"gamma_f", gm.gamma_f},
             {"gamma_w", gm.gamma_w},
             {"label_vector", build_label_vector(bf)}}
            .dump(2)
     << "\n";
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_dataset(const GlobalOptions& opt) {
  const DatasetSpec spec = opt.dataset_spec();
  const auto ds = build_dataset(spec, [](std::uint64_t done, std::uint64_t total) {
    if (done % 100 == 0 || done == total)
      std::cerr << "\r" << done << "/" << total << std::flush;
  });
  std::cerr << "\n";
  const auto dir = std::filesystem::path(opt.out_dir) / "dataset";
  save_dataset(ds, dir);
  std::cout << dir.string() << " (" << ds.as_inputs.size() << " samples, "
            << ds.class_table.size() << " classes)\n";
  return 0;
}

int cmd_train(const GlobalOptions& opt, const std::string& data_dir) {
  const auto dir = data_dir.empty()
                       ? std::filesystem::path(opt.out_dir) / "dataset"
                       : std::filesystem::path(data_dir);
  const Dataset ds = load_dataset(dir);
  const SystemDims& dims = ds.spec.dims;
  const TrainConfig cfg = opt.train_config();

  const auto models_dir = std::filesystem::path(opt.out_dir) / "models";
  std::filesystem::create_directories(models_dir);
  std::ofstream metrics(models_dir / "train_metrics.csv");
  metrics << "model,epoch,train_loss,val_loss,train_accuracy,val_accuracy\n";
  auto sink_for = [&metrics](const std::string& name) {
    return [&metrics, name](const EpochMetrics& m) {
      metrics << name << ',' << m.epoch << ',' << m.train_loss << ','
              << m.val_loss << ',' << m.train_accuracy << ',' << m.val_accuracy
              << "\n";
      std::cerr << name << " epoch " << m.epoch << ": train_loss "
                << m.train_loss << " val_loss " << m.val_loss << " train_acc "
                << m.train_accuracy << "\n";
    };
  };

  auto cnn_as = make_model(
      canonical_stack(dims.n_r, dims.n_t, static_cast<int>(ds.class_table.size())),
      Head::Class, derive_seed(opt.seed, 10));
  train_classifier(cnn_as, ds.as_inputs, ds.as_labels, cfg, sink_for("cnn_as"));
  save_model(cnn_as, models_dir / "cnn_as");

  TrainConfig rf_cfg = cfg;
  rf_cfg.early_stop_train_accuracy.reset();  // accuracy is a class-head notion
  auto cnn_rf =
      make_model(canonical_stack(dims.n_rs, dims.n_t, dims.label_length()),
                 Head::Regress, derive_seed(opt.seed, 11));
  train_regressor(cnn_rf, ds.rf_inputs, ds.rf_labels, rf_cfg, sink_for("cnn_rf"));
  save_model(cnn_rf, models_dir / "cnn_rf");

  json table = json::array();
  for (const auto& c : ds.class_table)
    table.push_back(json{{"indices", c.indices}, {"id", c.id}});
  std::ofstream ct(models_dir / "class_table.json");
  ct << json{{"class_table", table}}.dump(2) << "\n";

  std::cout << models_dir.string() << "\n";
  return 0;
}

std::optional<SweepModels> try_load_models(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "class_table.json")) return std::nullopt;
  SweepModels models;
  models.cnn_as = load_model(dir / "cnn_as");
  models.cnn_rf = load_model(dir / "cnn_rf");
  std::ifstream is(dir / "class_table.json");
  const json j = json::parse(is);
  for (const auto& entry : j.at("class_table")) {
    SubarrayConfig cfg;
    cfg.indices = entry.at("indices").get<std::vector<int>>();
    cfg.id = entry.at("id").get<std::uint64_t>();
    models.class_table.push_back(cfg);
  }
  return models;
}

int cmd_eval(const GlobalOptions& opt, const std::string& kind,
             const std::string& models_dir) {
  const ExperimentConfig cfg = opt.experiment();
  const auto out = std::filesystem::path(opt.out_dir);
  const auto dir = models_dir.empty()
                       ? std::filesystem::path(opt.out_dir) / "models"
                       : std::filesystem::path(models_dir);
  const auto models = try_load_models(dir);

  SweepOutput result;
  if (kind == "snr") {
    result = run_snr_sweep(cfg, models ? &*models : nullptr, out);
  } else if (kind == "nrs") {
    result = run_nrs_sweep(cfg, models ? &*models : nullptr, out);
  } else if (kind == "corruption") {
    if (!models)
      throw ConfigError("corruption sweep needs trained models in " +
                        dir.string());
    result = run_corruption_sweep(cfg, *models, out);
  } else if (kind == "bits") {
    if (!models)
      throw ConfigError("bits sweep needs trained models in " + dir.string());
    result = run_bits_sweep(cfg, *models, out);
  } else if (kind == "timing") {
    result = run_timing_sweep(cfg, out);
  } else {
    throw ConfigError("unknown eval kind: " + kind);
  }
  std::cout << result.csv_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"antenna selection and hybrid beamforming workbench"};
  app.require_subcommand(1);

  GlobalOptions opt;
  app.add_option("--config", opt.config_path, "JSON configuration file");
  app.add_option("--seed", opt.seed, "master random seed");
  app.add_option("--out", opt.out_dir, "output directory");
  app.add_option("--threads", opt.threads, "worker thread count");

  int channel_count = 1;
  auto* channel = app.add_subcommand("channel", "synthesize channel matrices");
  channel->fallthrough();
  channel->add_option("--count", channel_count, "number of realizations");

  std::string select_load;
  auto* select = app.add_subcommand("select", "search the best subarray");
  select->fallthrough();
  select->add_option("--load", select_load, "channel file stem to reuse");

  std::string beamform_load;
  auto* beamform = app.add_subcommand("beamform", "design hybrid beamformers");
  beamform->fallthrough();
  beamform->add_option("--load", beamform_load, "channel file stem to reuse");

  app.add_subcommand("dataset", "generate labeled training data")->fallthrough();

  std::string train_data;
  auto* train = app.add_subcommand("train", "train the selection and beamformer networks");
  train->fallthrough();
  train->add_option("--data", train_data, "dataset directory");

  std::string eval_models;
  auto* eval = app.add_subcommand("eval", "run an experiment sweep");
  eval->fallthrough();
  eval->require_subcommand(1);
  eval->add_option("--models", eval_models, "trained model directory");
  for (const char* kind : {"snr", "nrs", "corruption", "bits", "timing"})
    eval->add_subcommand(kind)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    opt.load();
    Eigen::setNbThreads(opt.threads);
    if (app.got_subcommand(channel)) return cmd_channel(opt, channel_count);
    if (app.got_subcommand(select)) return cmd_select(opt, select_load);
    if (app.got_subcommand(beamform)) return cmd_beamform(opt, beamform_load);
    if (app.got_subcommand("dataset")) return cmd_dataset(opt);
    if (app.got_subcommand(train)) return cmd_train(opt, train_data);
    if (app.got_subcommand(eval)) {
      for (const char* kind : {"snr", "nrs", "corruption", "bits", "timing"})
        if (eval->got_subcommand(kind)) return cmd_eval(opt, kind, eval_models);
    }
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
