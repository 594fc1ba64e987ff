#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "beamsel/errors.hpp"
#include "beamsel/sweeps.hpp"

using namespace beamsel;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed = 1) {
  ExperimentConfig cfg;
  cfg.trials = 5;
  cfg.seed = seed;
  cfg.channel_params.tx_geometry = ArrayGeometry::ula(cfg.dims.n_t);
  cfg.channel_params.rx_geometry = ArrayGeometry::ula(cfg.dims.n_r);
  cfg.mo.max_alternations = 8;
  cfg.mo.max_manifold_iters = 25;
  cfg.mo.rel_obj_tol = 1e-4;
  return cfg;
}

SweepModels untrained_models(const ExperimentConfig& cfg) {
  SweepModels models;
  for (const auto& c : enumerate_subarrays(cfg.dims.n_r, cfg.dims.n_rs))
    models.class_table.push_back(c);
  models.cnn_as = make_model(
      canonical_stack(cfg.dims.n_r, cfg.dims.n_t,
                      static_cast<int>(models.class_table.size())),
      Head::Class, 100);
  models.cnn_rf = make_model(
      canonical_stack(cfg.dims.n_rs, cfg.dims.n_t, cfg.dims.label_length()),
      Head::Regress, 101);
  return models;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::map<std::string, ResultRow> rows_by_method(const SweepOutput& out,
                                                double sweep_value) {
  std::map<std::string, ResultRow> m;
  for (const auto& r : out.rows)
    if (r.sweep_value == sweep_value) m[r.method] = r;
  return m;
}

}  // namespace

TEST_CASE("fnv1a: reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("experiment config: validation and json round-trip") {
  ExperimentConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.trials = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.snr_db.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config(9);
  cfg.bits_values = {2, 7};
  const auto back = experiment_config_from_json(experiment_config_to_json(cfg));
  CHECK(back.seed == 9);
  CHECK(back.bits_values == cfg.bits_values);
  CHECK(back.dims.n_t == cfg.dims.n_t);
  CHECK(back.trials == cfg.trials);
}

TEST_CASE("snr sweep: structure, limits and ordering") {
  ExperimentConfig cfg = tiny_config(2);
  cfg.trials = 10;
  cfg.snr_db = {-60.0, 10.0};
  const auto dir = fresh_dir("beamsel_sweep_snr");
  const auto out = run_snr_sweep(cfg, nullptr, dir);

  CHECK(out.rows.size() == 2 * 6);  // no CNN method without models
  std::ifstream csv(out.csv_path);
  std::string line;
  std::getline(csv, line);
  CHECK(line.rfind("# config_hash=", 0) == 0);
  std::getline(csv, line);
  CHECK(line ==
        "sweep_value,method,mean_rate_bits,std_rate,mean_gamma_f,"
        "mean_gamma_w,failed_trials");

  const auto low = rows_by_method(out, -60.0);
  for (const auto& [method, row] : low) CHECK(row.mean_rate_bits < 0.01);

  const auto high = rows_by_method(out, 10.0);
  CHECK(high.at("FullDigital").mean_rate_bits >=
        high.at("FullHybrid").mean_rate_bits - 0.05);
  CHECK(high.at("Best+MO").mean_rate_bits >=
        high.at("Greedy+MO").mean_rate_bits - 0.05);
  CHECK(high.at("Greedy+MO").mean_rate_bits >=
        high.at("Random+MO").mean_rate_bits - 0.05);
  for (const auto& [method, row] : high) {
    CHECK(row.failed_trials == 0);
    CHECK(row.std_rate >= 0.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("snr sweep: byte-identical across fresh runs with equal seeds") {
  ExperimentConfig cfg = tiny_config(3);
  cfg.snr_db = {0.0};
  const auto a = fresh_dir("beamsel_sweep_det_a");
  const auto b = fresh_dir("beamsel_sweep_det_b");
  const auto out_a = run_snr_sweep(cfg, nullptr, a);
  const auto out_b = run_snr_sweep(cfg, nullptr, b);
  CHECK(file_bytes(out_a.csv_path) == file_bytes(out_b.csv_path));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("snr sweep: journal resumes finished points") {
  ExperimentConfig cfg = tiny_config(4);
  cfg.snr_db = {5.0};
  const auto dir = fresh_dir("beamsel_sweep_resume");
  const auto first = run_snr_sweep(cfg, nullptr, dir);
  const std::string bytes = file_bytes(first.csv_path);

  // Remove the CSV but keep the journal: the rerun must reproduce it without
  // recomputation changing any value.
  std::filesystem::remove(first.csv_path);
  const auto second = run_snr_sweep(cfg, nullptr, dir);
  CHECK(file_bytes(second.csv_path) == bytes);

  // A different seed invalidates the journal and yields different numbers.
  ExperimentConfig other = tiny_config(5);
  other.snr_db = {5.0};
  const auto third = run_snr_sweep(other, nullptr, dir);
  CHECK(file_bytes(third.csv_path) != bytes);
  std::filesystem::remove_all(dir);
}

TEST_CASE("nrs sweep: full selection matches the full-array hybrid") {
  ExperimentConfig cfg = tiny_config(6);
  cfg.nrs_values = {2, 8};
  cfg.trials = 6;
  const auto dir = fresh_dir("beamsel_sweep_nrs");
  const auto out = run_nrs_sweep(cfg, nullptr, dir);
  CHECK(out.rows.size() == 2 * 6);

  const auto full = rows_by_method(out, 8.0);
  CHECK(full.at("Best+MO").mean_rate_bits ==
        doctest::Approx(full.at("FullHybrid").mean_rate_bits).epsilon(1e-9));

  const auto small = rows_by_method(out, 2.0);
  CHECK(full.at("Best+MO").mean_rate_bits >=
        small.at("Best+MO").mean_rate_bits - 0.05);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corruption sweep: vanishing corruption matches the clean run") {
  ExperimentConfig cfg = tiny_config(7);
  cfg.trials = 4;
  cfg.snr_db = {cfg.fixed_snr_db};
  cfg.corruption_snr_db = {300.0};
  const auto models = untrained_models(cfg);

  const auto dir_clean = fresh_dir("beamsel_sweep_corr_clean");
  const auto dir_corr = fresh_dir("beamsel_sweep_corr");
  const auto clean = run_snr_sweep(cfg, &models, dir_clean);
  const auto corr = run_corruption_sweep(cfg, models, dir_corr);
  CHECK(corr.rows.size() == 7);

  const auto clean_rows = rows_by_method(clean, cfg.fixed_snr_db);
  const auto corr_rows = rows_by_method(corr, 300.0);
  for (const auto& [method, row] : corr_rows) {
    REQUIRE(clean_rows.count(method) == 1);
    CHECK(row.mean_rate_bits ==
          doctest::Approx(clean_rows.at(method).mean_rate_bits).epsilon(0.01));
  }
  std::filesystem::remove_all(dir_clean);
  std::filesystem::remove_all(dir_corr);
}

TEST_CASE("bits sweep: 32 bits matches the unquantized pipeline") {
  ExperimentConfig cfg = tiny_config(8);
  cfg.trials = 4;
  cfg.bits_values = {1, 32};
  const auto models = untrained_models(cfg);
  const auto dir = fresh_dir("beamsel_sweep_bits");
  const auto out = run_bits_sweep(cfg, models, dir);
  REQUIRE(out.rows.size() == 3);  // unquantized + 2 bit widths

  const double unq = rows_by_method(out, 0.0).at("CNN+CNN").mean_rate_bits;
  const double b32 = rows_by_method(out, 32.0).at("CNN+CNN").mean_rate_bits;
  CHECK(b32 == doctest::Approx(unq).epsilon(1e-3));
  std::filesystem::remove_all(dir);
}

TEST_CASE("timing sweep: schema and nonnegative measurements") {
  ExperimentConfig cfg = tiny_config(9);
  cfg.trials = 3;
  cfg.nt_values = {8};
  const auto dir = fresh_dir("beamsel_sweep_timing");
  const auto out = run_timing_sweep(cfg, dir);
  REQUIRE(out.rows.size() == 2);
  for (const auto& r : out.rows) {
    CHECK(r.mean_runtime_s >= 0.0);
    CHECK(r.std_rate >= 0.0);
  }

  std::ifstream csv(out.csv_path);
  std::string line;
  std::getline(csv, line);
  CHECK(line.rfind("# config_hash=", 0) == 0);
  std::getline(csv, line);
  CHECK(line == "n_t,method,mean_s,std_s");
  int data_lines = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++data_lines;
  CHECK(data_lines == 2);
  std::filesystem::remove_all(dir);
}
