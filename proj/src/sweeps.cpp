#include "beamsel/sweeps.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>

#include "beamsel/errors.hpp"
#include "beamsel/rng.hpp"

namespace beamsel {

using nlohmann::json;

void ExperimentConfig::validate() const {
  dims.validate();
  channel_params.validate();
  mo.validate();
  if (trials < 1) throw ConfigError("trials must be positive");
  if (snr_db.empty() || nrs_values.empty() || corruption_snr_db.empty() ||
      bits_values.empty() || nt_values.empty())
    throw ConfigError("sweep lists must be nonempty");
  for (int n : nrs_values)
    if (n < dims.n_s || n > dims.n_r)
      throw ConfigError("n_rs sweep value out of range");
  for (int b : bits_values)
    if (b < 1 || b > 32) throw ConfigError("bits sweep value out of range");
  for (int n : nt_values)
    if (n < dims.n_rf_t) throw ConfigError("n_t sweep value out of range");
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  return json{{"dims", dims_to_json(cfg.dims)},
              {"channel_params", params_to_json(cfg.channel_params)},
              {"mo", mo_to_json(cfg.mo)},
              {"trials", cfg.trials},
              {"seed", cfg.seed},
              {"snr_db", cfg.snr_db},
              {"fixed_snr_db", cfg.fixed_snr_db},
              {"nrs_values", cfg.nrs_values},
              {"corruption_snr_db", cfg.corruption_snr_db},
              {"bits_values", cfg.bits_values},
              {"nt_values", cfg.nt_values}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("dims")) cfg.dims = dims_from_json(j.at("dims"));
  if (j.contains("channel_params"))
    cfg.channel_params = params_from_json(j.at("channel_params"));
  if (j.contains("mo")) cfg.mo = mo_from_json(j.at("mo"));
  cfg.trials = j.value("trials", cfg.trials);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("snr_db")) cfg.snr_db = j.at("snr_db").get<std::vector<double>>();
  cfg.fixed_snr_db = j.value("fixed_snr_db", cfg.fixed_snr_db);
  if (j.contains("nrs_values"))
    cfg.nrs_values = j.at("nrs_values").get<std::vector<int>>();
  if (j.contains("corruption_snr_db"))
    cfg.corruption_snr_db = j.at("corruption_snr_db").get<std::vector<double>>();
  if (j.contains("bits_values"))
    cfg.bits_values = j.at("bits_values").get<std::vector<int>>();
  if (j.contains("nt_values"))
    cfg.nt_values = j.at("nt_values").get<std::vector<int>>();
  return cfg;
}

namespace {

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json row_to_json(const ResultRow& r) {
  return json{{"sweep_value", r.sweep_value},
              {"method", r.method},
              {"mean_rate_bits", r.mean_rate_bits},
              {"std_rate", r.std_rate},
              {"mean_gamma_f", r.mean_gamma_f},
              {"mean_gamma_w", r.mean_gamma_w},
              {"mean_runtime_s", r.mean_runtime_s},
              {"failed_trials", r.failed_trials}};
}

ResultRow row_from_json(const json& j) {
  ResultRow r;
  r.sweep_value = j.at("sweep_value").get<double>();
  r.method = j.at("method").get<std::string>();
  r.mean_rate_bits = j.at("mean_rate_bits").get<double>();
  r.std_rate = j.at("std_rate").get<double>();
  r.mean_gamma_f = j.at("mean_gamma_f").get<double>();
  r.mean_gamma_w = j.at("mean_gamma_w").get<double>();
  r.mean_runtime_s = j.at("mean_runtime_s").get<double>();
  r.failed_trials = j.at("failed_trials").get<int>();
  return r;
}

// Finished sweep points keyed by their formatted sweep value; reused across
// runs whenever the config hash matches.
class SweepJournal {
 public:
  SweepJournal(const std::filesystem::path& path, const std::string& hash)
      : path_(path), hash_(hash) {
    std::ifstream is(path_);
    if (!is) return;
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded() || j.value("config_hash", "") != hash_) return;
    points_ = j.value("points", json::object());
  }

  std::optional<std::vector<ResultRow>> get(const std::string& key) const {
    if (!points_.contains(key)) return std::nullopt;
    std::vector<ResultRow> rows;
    for (const auto& r : points_.at(key)) rows.push_back(row_from_json(r));
    return rows;
  }

  void put(const std::string& key, const std::vector<ResultRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(row_to_json(r));
    points_[key] = arr;
    std::ofstream os(path_);
    if (!os) throw ConfigError("cannot write " + path_.string());
    os << json{{"config_hash", hash_}, {"points", points_}}.dump() << "\n";
  }

 private:
  std::filesystem::path path_;
  std::string hash_;
  json points_ = json::object();
};

SweepOutput write_sweep_csv(const std::filesystem::path& out_dir,
                            const std::string& name, const std::string& hash,
                            const std::vector<ResultRow>& rows) {
  std::filesystem::create_directories(out_dir);
  SweepOutput out;
  out.rows = rows;
  out.csv_path = out_dir / (name + ".csv");
  out.runtime_csv_path = out_dir / (name + "_runtime.csv");

  std::ofstream csv(out.csv_path);
  if (!csv) throw ConfigError("cannot write " + out.csv_path.string());
  csv << "# config_hash=" << hash << "\n";
  csv << "sweep_value,method,mean_rate_bits,std_rate,mean_gamma_f,"
         "mean_gamma_w,failed_trials\n";
  for (const auto& r : rows)
    csv << fmt_num(r.sweep_value) << ',' << r.method << ','
        << fmt_num(r.mean_rate_bits) << ',' << fmt_num(r.std_rate) << ','
        << fmt_num(r.mean_gamma_f) << ',' << fmt_num(r.mean_gamma_w) << ','
        << r.failed_trials << "\n";

  std::ofstream rt(out.runtime_csv_path);
  if (!rt) throw ConfigError("cannot write " + out.runtime_csv_path.string());
  rt << "# config_hash=" << hash << "\n";
  rt << "sweep_value,method,mean_runtime_s\n";
  for (const auto& r : rows)
    rt << fmt_num(r.sweep_value) << ',' << r.method << ','
       << fmt_num(r.mean_runtime_s) << "\n";
  return out;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct MethodAccum {
  std::string name;
  std::vector<double> rates;
  double gamma_f_sum = 0.0;
  double gamma_w_sum = 0.0;
  double runtime_sum = 0.0;
  int failed = 0;

  ResultRow finish(double sweep_value, int trials) const {
    ResultRow r;
    r.sweep_value = sweep_value;
    r.method = name;
    r.failed_trials = failed;
    const int ok = static_cast<int>(rates.size());
    if (ok > 0) {
      double mean = 0.0;
      for (double v : rates) mean += v;
      mean /= ok;
      double var = 0.0;
      for (double v : rates) var += (v - mean) * (v - mean);
      r.mean_rate_bits = mean;
      r.std_rate = std::sqrt(var / ok);
      r.mean_gamma_f = gamma_f_sum / ok;
      r.mean_gamma_w = gamma_w_sum / ok;
      r.mean_runtime_s = runtime_sum / trials;
    }
    return r;
  }
};

struct TrialOutcome {
  double rate = 0.0;
  double gamma_f = 0.0;
  double gamma_w = 0.0;
};

// Runs `work` under wall-clock timing and folds the outcome or the failure
// into the accumulator.
void run_method(MethodAccum& acc, const std::function<TrialOutcome()>& work) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const TrialOutcome out = work();
    acc.rates.push_back(out.rate);
    acc.gamma_f_sum += out.gamma_f;
    acc.gamma_w_sum += out.gamma_w;
  } catch (const NumericalError&) {
    ++acc.failed;
  }
  acc.runtime_sum +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
}

SystemDims full_array_dims(const SystemDims& dims) {
  SystemDims full = dims;
  full.n_rs = dims.n_r;
  return full;
}

// One sweep point of the rate sweeps: every scheme evaluated on the same
// trial channels. Selection and design see `h_design` (possibly corrupted);
// rates are always measured on the clean channel.
std::vector<ResultRow> evaluate_rate_point(const ExperimentConfig& cfg,
                                           const SweepModels* models,
                                           double sweep_value, double rho,
                                           const SystemDims& dims_point,
                                           std::optional<double> corrupt_snr_db,
                                           std::uint64_t point_index) {
  const SystemDims dims_full = full_array_dims(dims_point);
  const std::uint64_t block =
      binomial_checked(dims_point.n_r, dims_point.n_rs);
  const std::uint64_t point_seed = derive_seed(cfg.seed, point_index);

  std::vector<MethodAccum> accums;
  accums.push_back({"FullDigital"});
  accums.push_back({"FullHybrid"});
  accums.push_back({"Best+MO"});
  if (models) accums.push_back({"CNN+CNN"});
  accums.push_back({"Greedy+MO"});
  accums.push_back({"Random+MO"});
  accums.push_back({"Magnitude+MO"});

  for (int t = 0; t < cfg.trials; ++t) {
    const CMat h =
        generate_channel(cfg.channel_params, derive_seed(point_seed, t)).h;
    const CMat h_design =
        corrupt_snr_db
            ? corrupt_channel(h, *corrupt_snr_db,
                              derive_seed(point_seed, (1ULL << 32) + t))
            : h;
    MoSettings mo = cfg.mo;
    mo.seed = derive_seed(point_seed, (2ULL << 32) + t);

    auto subarray_outcome = [&](const std::vector<int>& indices) {
      const CMat sub_design = select_rows(h_design, indices);
      const auto bf = design_hybrid(sub_design, dims_point, mo);
      const auto unc = unconstrained_beamformers(sub_design, dims_point);
      const auto gm = gamma_metrics(unc.f_opt, unc.w_opt, bf, dims_point);
      return TrialOutcome{
          spectral_efficiency(select_rows(h, indices), bf, dims_point),
          gm.gamma_f, gm.gamma_w};
    };

    std::size_t a = 0;
    run_method(accums[a++], [&] {
      const auto unc = unconstrained_beamformers(h_design, dims_full);
      return TrialOutcome{rate_for(h, unc.f_opt, unc.w_opt, dims_full), 0.0,
                          0.0};
    });
    run_method(accums[a++], [&] {
      const auto bf = design_hybrid(h_design, dims_full, mo);
      const auto unc = unconstrained_beamformers(h_design, dims_full);
      const auto gm = gamma_metrics(unc.f_opt, unc.w_opt, bf, dims_full);
      return TrialOutcome{spectral_efficiency(h, bf, dims_full), gm.gamma_f,
                          gm.gamma_w};
    });
    run_method(accums[a++], [&] {
      const auto sel = select_best_subarray(
          h_design, dims_point, SelectionObjective::unconstrained(), block);
      return subarray_outcome(sel.best.indices);
    });
    if (models)
      run_method(accums[a++], [&] {
        const auto [sub, bf] = predict_pipeline(models->cnn_as, models->cnn_rf,
                                                h_design, dims_point,
                                                models->class_table);
        const CMat sub_design = select_rows(h_design, sub.indices);
        const auto unc = unconstrained_beamformers(sub_design, dims_point);
        const auto gm = gamma_metrics(unc.f_opt, unc.w_opt, bf, dims_point);
        return TrialOutcome{
            spectral_efficiency(select_rows(h, sub.indices), bf, dims_point),
            gm.gamma_f, gm.gamma_w};
      });
    run_method(accums[a++], [&] {
      return subarray_outcome(
          baseline_select(h_design, dims_point, SelectionScheme::Greedy).indices);
    });
    run_method(accums[a++], [&] {
      return subarray_outcome(
          baseline_select(h_design, dims_point, SelectionScheme::Random,
                          derive_seed(point_seed, (3ULL << 32) + t))
              .indices);
    });
    run_method(accums[a++], [&] {
      return subarray_outcome(
          baseline_select(h_design, dims_point, SelectionScheme::Magnitude)
              .indices);
    });
    (void)rho;
  }

  std::vector<ResultRow> rows;
  for (const auto& acc : accums) rows.push_back(acc.finish(sweep_value, cfg.trials));
  return rows;
}

using PointFn =
    std::function<std::vector<ResultRow>(double value, std::uint64_t index)>;

SweepOutput run_points(const ExperimentConfig& cfg, const std::string& name,
                       const std::vector<double>& values, const PointFn& fn,
                       const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::string hash =
      hash_hex(fnv1a(experiment_config_to_json(cfg).dump() + ":" + name));
  SweepJournal journal(out_dir / (name + ".journal.json"), hash);

  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string key = fmt_num(values[i]);
    auto cached = journal.get(key);
    if (!cached) {
      cached = fn(values[i], i);
      journal.put(key, *cached);
    }
    rows.insert(rows.end(), cached->begin(), cached->end());
  }
  return write_sweep_csv(out_dir, name, hash, rows);
}

}  // namespace

SweepOutput run_snr_sweep(const ExperimentConfig& cfg, const SweepModels* models,
                          const std::filesystem::path& out_dir) {
  return run_points(
      cfg, "snr", cfg.snr_db,
      [&](double snr, std::uint64_t i) {
        SystemDims dims = cfg.dims;
        dims.rho = db_to_linear(snr);
        dims.sigma_n2 = 1.0;
        return evaluate_rate_point(cfg, models, snr, dims.rho, dims,
                                   std::nullopt, i);
      },
      out_dir);
}

SweepOutput run_nrs_sweep(const ExperimentConfig& cfg, const SweepModels* models,
                          const std::filesystem::path& out_dir) {
  std::vector<double> values(cfg.nrs_values.begin(), cfg.nrs_values.end());
  return run_points(
      cfg, "nrs", values,
      [&](double value, std::uint64_t i) {
        SystemDims dims = cfg.dims;
        dims.n_rs = static_cast<int>(value);
        // Receive chains cannot outnumber the selected antennas.
        dims.n_rf_r = std::min(dims.n_rf_r, dims.n_rs);
        dims.rho = db_to_linear(cfg.fixed_snr_db);
        dims.sigma_n2 = 1.0;
        // The CNN models are shaped for the configured n_rs only.
        const SweepModels* usable =
            (models && dims.n_rs == cfg.dims.n_rs) ? models : nullptr;
        return evaluate_rate_point(cfg, usable, value, dims.rho, dims,
                                   std::nullopt, i);
      },
      out_dir);
}

SweepOutput run_corruption_sweep(const ExperimentConfig& cfg,
                                 const SweepModels& models,
                                 const std::filesystem::path& out_dir) {
  return run_points(
      cfg, "corruption", cfg.corruption_snr_db,
      [&](double snr_test, std::uint64_t i) {
        SystemDims dims = cfg.dims;
        dims.rho = db_to_linear(cfg.fixed_snr_db);
        dims.sigma_n2 = 1.0;
        return evaluate_rate_point(cfg, &models, snr_test, dims.rho, dims,
                                   snr_test, i);
      },
      out_dir);
}

SweepOutput run_bits_sweep(const ExperimentConfig& cfg, const SweepModels& models,
                           const std::filesystem::path& out_dir) {
  // Value 0 reports the unquantized pipeline for reference.
  std::vector<double> values{0.0};
  for (int b : cfg.bits_values) values.push_back(b);

  return run_points(
      cfg, "bits", values,
      [&](double value, std::uint64_t) {
        SystemDims dims = cfg.dims;
        dims.rho = db_to_linear(cfg.fixed_snr_db);
        dims.sigma_n2 = 1.0;
        const int bits = static_cast<int>(value);
        SweepModels active = models;
        if (bits > 0) {
          active.cnn_as = quantize(models.cnn_as, bits);
          active.cnn_rf = quantize(models.cnn_rf, bits);
        }

        MethodAccum acc{"CNN+CNN"};
        // Same channel stream at every bit width so rows differ only by
        // quantization.
        const std::uint64_t point_seed = derive_seed(cfg.seed, 0);
        for (int t = 0; t < cfg.trials; ++t) {
          const CMat h =
              generate_channel(cfg.channel_params, derive_seed(point_seed, t)).h;
          run_method(acc, [&] {
            const auto [sub, bf] = predict_pipeline(
                active.cnn_as, active.cnn_rf, h, dims, active.class_table);
            return TrialOutcome{
                spectral_efficiency(select_rows(h, sub.indices), bf, dims), 0.0,
                0.0};
          });
        }
        return std::vector<ResultRow>{acc.finish(value, cfg.trials)};
      },
      out_dir);
}

SweepOutput run_timing_sweep(const ExperimentConfig& cfg,
                             const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::string hash =
      hash_hex(fnv1a(experiment_config_to_json(cfg).dump() + ":timing"));
  SweepJournal journal(out_dir / "timing.journal.json", hash);

  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < cfg.nt_values.size(); ++i) {
    const int n_t = cfg.nt_values[i];
    if (auto cached = journal.get(fmt_num(n_t))) {
      rows.insert(rows.end(), cached->begin(), cached->end());
      continue;
    }
    SystemDims dims = cfg.dims;
    dims.n_t = n_t;
    ChannelParams params = cfg.channel_params;
    params.tx_geometry = ArrayGeometry::ula(n_t);

    // Timing does not depend on the weight values, so fresh models with the
    // right shapes stand in for trained ones.
    const auto class_table = enumerate_subarrays(dims.n_r, dims.n_rs);
    const auto cnn_as = make_model(
        canonical_stack(dims.n_r, n_t, static_cast<int>(class_table.size())),
        Head::Class, derive_seed(cfg.seed, 50 + i));
    const auto cnn_rf =
        make_model(canonical_stack(dims.n_rs, n_t, dims.label_length()),
                   Head::Regress, derive_seed(cfg.seed, 60 + i));

    std::vector<double> mo_times, cnn_times;
    const std::uint64_t point_seed = derive_seed(cfg.seed, 70 + i);
    for (int t = 0; t < cfg.trials; ++t) {
      const CMat h = generate_channel(params, derive_seed(point_seed, t)).h;
      const auto sel = select_best_subarray(
          h, dims, SelectionObjective::unconstrained(),
          binomial_checked(dims.n_r, dims.n_rs));
      const CMat sub = select_rows(h, sel.best.indices);
      MoSettings mo = cfg.mo;
      mo.seed = derive_seed(point_seed, (1ULL << 32) + t);

      auto t0 = std::chrono::steady_clock::now();
      (void)design_hybrid(sub, dims, mo);
      auto t1 = std::chrono::steady_clock::now();
      (void)predict_pipeline(cnn_as, cnn_rf, h, dims, class_table);
      auto t2 = std::chrono::steady_clock::now();
      mo_times.push_back(std::chrono::duration<double>(t1 - t0).count());
      cnn_times.push_back(std::chrono::duration<double>(t2 - t1).count());
    }

    auto stats = [&](const std::string& method, const std::vector<double>& ts) {
      double mean = 0.0;
      for (double v : ts) mean += v;
      mean /= static_cast<double>(ts.size());
      double var = 0.0;
      for (double v : ts) var += (v - mean) * (v - mean);
      ResultRow r;
      r.sweep_value = n_t;
      r.method = method;
      r.mean_runtime_s = mean;
      r.std_rate = std::sqrt(var / static_cast<double>(ts.size()));
      return r;
    };
    const std::vector<ResultRow> point{stats("MO", mo_times),
                                       stats("CNN", cnn_times)};
    journal.put(fmt_num(n_t), point);
    rows.insert(rows.end(), point.begin(), point.end());
  }

  SweepOutput out;
  out.rows = rows;
  out.csv_path = out_dir / "timing.csv";
  out.runtime_csv_path = out.csv_path;
  std::ofstream csv(out.csv_path);
  if (!csv) throw ConfigError("cannot write " + out.csv_path.string());
  csv << "# config_hash=" << hash << "\n";
  csv << "n_t,method,mean_s,std_s\n";
  for (const auto& r : rows)
    csv << static_cast<int>(r.sweep_value) << ',' << r.method << ','
        << fmt_num(r.mean_runtime_s) << ',' << fmt_num(r.std_rate) << "\n";
  return out;
}

}  // namespace beamsel
