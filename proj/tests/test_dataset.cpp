#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "beamsel/dataset.hpp"
#include "beamsel/errors.hpp"
#include "beamsel/rng.hpp"

using namespace beamsel;

namespace {

DatasetSpec small_spec(std::uint64_t seed = 1) {
  DatasetSpec s;
  s.n_channels = 3;
  s.cluster_counts = {3, 4};
  s.n_noise = 2;
  s.seed = seed;
  s.channel_params.tx_geometry = ArrayGeometry::ula(s.dims.n_t);
  s.channel_params.rx_geometry = ArrayGeometry::ula(s.dims.n_r);
  s.mo.max_alternations = 10;
  s.mo.max_manifold_iters = 30;
  s.mo.rel_obj_tol = 1e-5;
  return s;
}

HybridBeamformers random_design(const SystemDims& dims, std::uint64_t seed) {
  ChannelParams p;
  p.tx_geometry = ArrayGeometry::ula(dims.n_t);
  p.rx_geometry = ArrayGeometry::ula(dims.n_rs);
  MoSettings mo;
  mo.max_alternations = 5;
  mo.max_manifold_iters = 20;
  mo.seed = seed;
  return design_hybrid(generate_channel(p, seed).h, dims, mo);
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("label vector: length formula") {
  SystemDims d;
  d.n_t = 8;
  CHECK(d.label_length() == 32);  // 16 + 4 + 8 + 4
  SystemDims desk;
  CHECK(desk.label_length() == 48);
  const auto bf = random_design(d, 3);
  CHECK(build_label_vector(bf).size() == 32);
}

TEST_CASE("label vector: zero-phase analog precoder maps to zero entries") {
  SystemDims d;
  HybridBeamformers bf = random_design(d, 4);
  bf.f_rf = CMat::Constant(d.n_t, d.n_rf_t, Complex(1.0 / std::sqrt(d.n_t), 0.0));
  const auto z = build_label_vector(bf);
  for (int i = 0; i < d.n_t * d.n_rf_t; ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("label vector: round-trip reproduces the design") {
  const SystemDims d;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto bf = random_design(d, 100 + seed);
    const auto back = reconstruct_beamformers(build_label_vector(bf), d);
    CHECK((back.f_rf - bf.f_rf).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.f_bb - bf.f_bb).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.w_rf - bf.w_rf).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.w_bb - bf.w_bb).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("reconstruct: all-zero label vector has no precoder power") {
  const SystemDims d;
  const std::vector<double> z(static_cast<std::size_t>(d.label_length()), 0.0);
  CHECK_THROWS_AS(reconstruct_beamformers(z, d), ZeroProduct);
}

TEST_CASE("reconstruct: angles are 2-pi periodic") {
  const SystemDims d;
  const auto bf = random_design(d, 9);
  auto z = build_label_vector(bf);
  auto z2 = z;
  z2[3] += 2.0 * kPi;
  const auto a = reconstruct_beamformers(z, d);
  const auto b = reconstruct_beamformers(z2, d);
  CHECK((a.f_rf - b.f_rf).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.f_bb - b.f_bb).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reconstruct: wrong length rejected") {
  const SystemDims d;
  CHECK_THROWS_AS(reconstruct_beamformers(std::vector<double>(5, 0.0), d),
                  ShapeMismatch);
}

TEST_CASE("input tensor: planes consistent by construction") {
  ChannelParams p;
  p.tx_geometry = ArrayGeometry::ula(16);
  p.rx_geometry = ArrayGeometry::ula(8);
  const auto t = InputTensor::from_channel(generate_channel(p, 2).h);
  CHECK(t.rows == 8);
  CHECK(t.cols == 16);
  CHECK_NOTHROW(t.validate());

  auto broken = t;
  broken.at(1, 1, 0) += 0.5;
  CHECK_THROWS_AS(broken.validate(), ShapeMismatch);
}

TEST_CASE("build_dataset: sample counting contract") {
  DatasetSpec s = small_spec();
  s.n_channels = 2;
  s.cluster_counts = {4};
  s.n_noise = 3;
  const auto ds = build_dataset(s);
  CHECK(ds.as_inputs.size() == 6);
  CHECK(ds.as_labels.size() == 6);
  CHECK(ds.rf_inputs.size() == 6);
  CHECK(ds.rf_labels.size() == 6);
}

TEST_CASE("build_dataset: invariants of every sample") {
  const DatasetSpec s = small_spec(7);
  const auto ds = build_dataset(s);
  REQUIRE(ds.as_inputs.size() == s.total_samples());
  REQUIRE(!ds.class_table.empty());

  std::vector<int> histogram(ds.class_table.size(), 0);
  for (std::size_t i = 0; i < ds.as_inputs.size(); ++i) {
    CHECK_NOTHROW(ds.as_inputs[i].validate());
    CHECK_NOTHROW(ds.rf_inputs[i].validate());
    REQUIRE(ds.as_labels[i] < ds.class_table.size());
    ++histogram[ds.as_labels[i]];

    const auto bf = reconstruct_beamformers(ds.rf_labels[i], s.dims);
    for (Eigen::Index k = 0; k < bf.f_rf.size(); ++k)
      CHECK(std::abs(std::abs(bf.f_rf(k)) - 1.0 / std::sqrt(s.dims.n_t)) < 1e-8);
    for (Eigen::Index k = 0; k < bf.w_rf.size(); ++k)
      CHECK(std::abs(std::abs(bf.w_rf(k)) - 1.0 / std::sqrt(s.dims.n_rs)) < 1e-8);
    CHECK(bf.precoder().squaredNorm() ==
          doctest::Approx(static_cast<double>(s.dims.n_s)).epsilon(1e-8));
  }
  for (int count : histogram) CHECK(count > 0);
}

TEST_CASE("build_dataset: stored rates match an independent re-selection") {
  const DatasetSpec s = small_spec(11);
  const auto ds = build_dataset(s);
  const std::uint64_t l_c = s.cluster_counts.size();
  for (std::uint64_t pair = 0; pair < static_cast<std::uint64_t>(s.n_channels) * l_c;
       ++pair) {
    ChannelParams params = s.channel_params;
    params.n_clusters = s.cluster_counts[pair % l_c];
    const std::uint64_t chan_seed = derive_seed(s.seed, (1ULL << 32) + pair);
    const CMat h = generate_channel(params, chan_seed).h;
    MoSettings mo = s.mo;
    mo.seed = derive_seed(chan_seed, 1);
    const auto sel = select_best_subarray(h, s.dims,
                                          SelectionObjective::hybrid(mo), 70);
    for (int l = 0; l < s.n_noise; ++l) {
      const std::size_t i = pair * s.n_noise + l;
      CHECK(ds.class_table[ds.as_labels[i]].indices == sel.best.indices);
      CHECK(ds.selection_rates[i] == doctest::Approx(sel.rate).epsilon(1e-9));
    }
  }
}

TEST_CASE("build_dataset: label_from_noisy variant stays well formed") {
  DatasetSpec s = small_spec(13);
  s.n_channels = 2;
  s.cluster_counts = {4};
  s.label_from_noisy = true;
  const auto ds = build_dataset(s);
  CHECK(ds.as_inputs.size() == s.total_samples());
  for (std::size_t i = 0; i < ds.rf_labels.size(); ++i)
    CHECK_NOTHROW(reconstruct_beamformers(ds.rf_labels[i], s.dims));
}

TEST_CASE("dataset serialization: byte-identical across equal-seed builds") {
  const auto base = std::filesystem::temp_directory_path() / "beamsel_ds_test";
  std::filesystem::remove_all(base);
  DatasetSpec s = small_spec(21);
  s.n_channels = 2;
  save_dataset(build_dataset(s), base / "a");
  save_dataset(build_dataset(s), base / "b");
  for (const char* name :
       {"meta.json", "as_inputs.bin", "rf_inputs.bin", "as_labels.bin",
        "rf_labels.bin"}) {
    CHECK(file_bytes(base / "a" / name) == file_bytes(base / "b" / name));
  }
  std::filesystem::remove_all(base);
}

TEST_CASE("dataset serialization: load round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "beamsel_ds_rt";
  std::filesystem::remove_all(dir);
  DatasetSpec s = small_spec(22);
  s.n_channels = 2;
  const auto ds = build_dataset(s);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);

  REQUIRE(back.as_inputs.size() == ds.as_inputs.size());
  CHECK(back.as_labels == ds.as_labels);
  REQUIRE(back.class_table.size() == ds.class_table.size());
  for (std::size_t i = 0; i < back.class_table.size(); ++i)
    CHECK(back.class_table[i].indices == ds.class_table[i].indices);
  for (std::size_t i = 0; i < back.as_inputs.size(); ++i) {
    for (std::size_t k = 0; k < back.as_inputs[i].data.size(); ++k)
      CHECK(std::abs(back.as_inputs[i].data[k] - ds.as_inputs[i].data[k]) < 1e-6);
    for (std::size_t k = 0; k < back.rf_labels[i].size(); ++k)
      CHECK(std::abs(back.rf_labels[i][k] - ds.rf_labels[i][k]) < 1e-6);
  }
  CHECK(back.spec.n_channels == s.n_channels);
  CHECK(back.spec.dims.n_t == s.dims.n_t);
  std::filesystem::remove_all(dir);
}
